//! Server side of one accepted connection.
//!
//! The worker owns the connection handed over by the server (`conn`,
//! `link`), switches it to non-blocking mode and registers it with its own
//! selector. From `connected` it can half-close either direction, both in
//! turn, or close outright. In every state it may read, write or poll its
//! selector; the operations a half-closed or closed channel rejects are
//! red self-transitions expecting the matching error. A reset from the
//! client leads to `reset`, from where the worker can only close.
//!
//! Launched without a connection, the worker sets up its own listener and
//! client, so the model can also run alone.

use crate::efsm::{ActionError, ActionResult, Value, Vars};
use crate::sut::{ErrorKind, Interest, ReadResult};

use super::{
    close_checked, count_probe, expect_raised, probes_left, read_capacity, read_checked,
    shutdown_input_checked, shutdown_output_checked, violation, write_checked, Ctx, Side, Spec, T,
};

fn setup(ctx: &mut Ctx<'_>, client: &Spec) -> ActionResult {
    if ctx.vars.get("conn").is_none() {
        standalone(ctx, client)?;
    }
    let conn = ctx.vars.conn("conn")?;
    let sut = &mut ctx.env.sut;
    sut.configure_blocking(conn, false)?;
    let sel = sut.open_selector();
    let key = sut.register(sel, conn, Interest::READ.union(Interest::WRITE))?;
    ctx.vars.set("sel", Value::Selector(sel));
    ctx.vars.set("key", Value::Key(key));
    Ok(())
}

fn standalone(ctx: &mut Ctx<'_>, client: &Spec) -> ActionResult {
    let server = ctx.env.sut.open_server()?;
    let port = ctx.env.sut.bind(server, ctx.env.listen_port())?;
    ctx.launch(client, Vars::new().with("port", Value::Port(port)))?;
    let Some(conn) = ctx.env.sut.accept(server)? else {
        return Err(violation(
            "standalone worker: blocking accept returned nothing",
        ));
    };
    let peer = ctx.env.sut.peer_endpoint(conn)?;
    let link = ctx.env.ledger.accept(peer).map_err(violation)?;
    ctx.vars.set("conn", Value::Conn(conn));
    ctx.vars.set("link", Value::Int(link.0 as i64));
    Ok(())
}

/// Polls the selector. A key reported readable must yield data,
/// end-of-stream or an error on an immediate read.
fn check_selector(ctx: &mut Ctx<'_>) -> ActionResult {
    let sel = ctx.vars.selector("sel")?;
    let key = ctx.vars.key("key")?;
    let conn = ctx.vars.conn("conn")?;
    let ready = ctx.env.sut.select_now(sel)?;
    let state = ctx.env.sut.conn_state(conn)?;
    for (k, interest) in &ready.ready {
        if *k != key {
            return Err(violation(format!("selector reported unknown key {k}")));
        }
        if state.closed || (interest.read && state.input_shutdown) {
            return Err(violation(format!(
                "selector reported {interest} on a closed direction"
            )));
        }
    }
    if ready.get(key).is_some_and(|i| i.read) {
        let cap = read_capacity(ctx);
        if read_checked(ctx, Side::Server, cap)? == ReadResult::Bytes(0) {
            return Err(violation(format!(
                "oracle: selector reported {conn} readable but a read returned no data"
            )));
        }
    }
    Ok(())
}

fn closed_probe(ctx: &mut Ctx<'_>, op: &str) -> ActionResult {
    count_probe(ctx.vars);
    let conn = ctx.vars.conn("conn")?;
    match op {
        "read" => expect_raised(ctx.env.sut.read(conn, 16), ErrorKind::ClosedChannel, "read"),
        _ => expect_raised(
            ctx.env.sut.write(conn, b"x"),
            ErrorKind::ClosedChannel,
            "write",
        ),
    }
}

struct Live {
    name: &'static str,
    input_shut: bool,
    output_shut: bool,
}

impl Live {
    fn after_input_shutdown(&self) -> &'static str {
        if self.output_shut {
            "bothShut"
        } else {
            "inShut"
        }
    }

    fn after_output_shutdown(&self) -> &'static str {
        if self.input_shut {
            "bothShut"
        } else {
            "outShut"
        }
    }
}

const LIVE: [Live; 4] = [
    Live {
        name: "connected",
        input_shut: false,
        output_shut: false,
    },
    Live {
        name: "inShut",
        input_shut: true,
        output_shut: false,
    },
    Live {
        name: "outShut",
        input_shut: false,
        output_shut: true,
    },
    Live {
        name: "bothShut",
        input_shut: true,
        output_shut: true,
    },
];

fn live_transitions(s: &Live) -> Vec<T> {
    let reset = |t: T| t.on_error(ErrorKind::ConnectionReset, "reset");
    let mut ts = Vec::new();
    ts.push(if s.input_shut {
        T::new(s.name, "read", s.name)
            .on_error(ErrorKind::InputShutdown, s.name)
            .action(|ctx| {
                let conn = ctx.vars.conn("conn")?;
                expect_raised(ctx.env.sut.read(conn, 16), ErrorKind::InputShutdown, "read")
            })
    } else {
        reset(T::new(s.name, "read", s.name)).action(|ctx| {
            let cap = read_capacity(ctx);
            read_checked(ctx, Side::Server, cap).map(drop)
        })
    });
    ts.push(if s.output_shut {
        T::new(s.name, "write", s.name)
            .on_error(ErrorKind::OutputShutdown, s.name)
            .action(|ctx| {
                let conn = ctx.vars.conn("conn")?;
                expect_raised(
                    ctx.env.sut.write(conn, b"x"),
                    ErrorKind::OutputShutdown,
                    "write",
                )
            })
    } else {
        reset(T::new(s.name, "write", s.name)).action(|ctx| write_checked(ctx, Side::Server))
    });
    ts.push(reset(T::new(s.name, "checkSelector", s.name)).action(check_selector));
    if !s.input_shut {
        ts.push(
            reset(T::new(s.name, "shutdownInput", s.after_input_shutdown()))
                .weight(0.5)
                .action(|ctx| shutdown_input_checked(ctx, Side::Server)),
        );
    }
    if !s.output_shut {
        ts.push(
            reset(T::new(s.name, "shutdownOutput", s.after_output_shutdown()))
                .weight(0.5)
                .action(|ctx| shutdown_output_checked(ctx, Side::Server)),
        );
    }
    ts.push(
        T::new(s.name, "close", "closed")
            .weight(0.3)
            .action(|ctx| close_checked(ctx, Side::Server)),
    );
    ts
}

pub fn worker_model(client: &Spec) -> Spec {
    let client = client.clone();
    let mut b = Spec::builder("worker")
        .states([
            "connected",
            "inShut",
            "outShut",
            "bothShut",
            "reset",
            "closed",
        ])
        .constructor(move |ctx| setup(ctx, &client));
    for s in &LIVE {
        for t in live_transitions(s) {
            b = b.transition(t);
        }
    }
    b.transition(T::new("reset", "close", "closed").action(|ctx| close_checked(ctx, Side::Server)))
        .transition(
            T::new("closed", "read", "closed")
                .guard(probes_left)
                .on_error(ErrorKind::ClosedChannel, "closed")
                .action(|ctx| closed_probe(ctx, "read")),
        )
        .transition(
            T::new("closed", "write", "closed")
                .guard(probes_left)
                .on_error(ErrorKind::ClosedChannel, "closed")
                .action(|ctx| closed_probe(ctx, "write")),
        )
        .transition(
            T::new("closed", "checkSelector", "closed")
                .guard(probes_left)
                .action(|ctx| {
                    count_probe(ctx.vars);
                    let sel = ctx.vars.selector("sel")?;
                    let ready = ctx.env.sut.select_now(sel)?;
                    if ready.is_empty() {
                        Ok(())
                    } else {
                        Err(ActionError::Violation(
                            "selector still reports a closed channel".into(),
                        ))
                    }
                }),
        )
        .build()
        .expect("worker model is well formed")
}
