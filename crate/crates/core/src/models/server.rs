//! Server main models.
//!
//! Both servers open and bind their listener in the constructor, so they
//! start in `bound`. Each accepted connection is paired with a client
//! launched beforehand and handed to a new worker.

use crate::efsm::{ActionError, ActionResult, Value, Vars};
use crate::sut::{ErrorKind, Interest};

use super::{count_probe, expect_raised, probes_left, violation, Ctx, Spec, T};

fn open_and_bind(ctx: &mut Ctx<'_>) -> ActionResult {
    let listen = ctx.env.listen_port();
    let server = ctx.env.sut.open_server()?;
    let port = ctx.env.sut.bind(server, listen)?;
    ctx.vars.set("server", Value::Server(server));
    ctx.vars.set("port", Value::Port(port));
    ctx.vars.set("blocking", Value::Bool(true));
    ctx.vars.set("clients", Value::Int(0));
    Ok(())
}

fn launch_client(ctx: &mut Ctx<'_>, client: &Spec) -> ActionResult {
    let port = ctx.vars.port("port")?;
    ctx.launch(client, Vars::new().with("port", Value::Port(port)))?;
    let n = ctx.vars.int_or_zero("clients") + 1;
    ctx.vars.set("clients", Value::Int(n));
    Ok(())
}

fn clients_left(vars: &Vars, env: &super::SocketEnv) -> bool {
    vars.int_or_zero("clients") < env.settings.max_clients
}

/// Accepts once. A connection is paired with its client in the ledger
/// and handed to a new worker.
fn accept_and_hand_off(ctx: &mut Ctx<'_>, worker: &Spec) -> Result<bool, ActionError> {
    let server = ctx.vars.server("server")?;
    let Some(conn) = ctx.env.sut.accept(server)? else {
        return Ok(false);
    };
    let peer = ctx.env.sut.peer_endpoint(conn)?;
    let link = ctx.env.ledger.accept(peer).map_err(violation)?;
    ctx.launch(
        worker,
        Vars::new()
            .with("conn", Value::Conn(conn))
            .with("link", Value::Int(link.0 as i64)),
    )?;
    Ok(true)
}

fn close_server(ctx: &mut Ctx<'_>) -> ActionResult {
    let server = ctx.vars.server("server")?;
    ctx.env.sut.close_server(server)?;
    ctx.env.ledger.orphan_pending();
    Ok(())
}

/// The minimalist server: each `session` launches a client, accepts its
/// connection (blocking) and launches a worker for it, in that order.
///
/// With `reordered` the accept comes first. It then waits for a
/// connection nobody will make.
pub fn minimalist_model(client: &Spec, worker: &Spec, reordered: bool) -> Spec {
    let (client, worker) = (client.clone(), worker.clone());
    let name = if reordered {
        "minimalist-reordered"
    } else {
        "minimalist"
    };
    Spec::builder(name)
        .states(["bound", "closed"])
        .constructor(open_and_bind)
        .transition(
            T::new("bound", "session", "bound")
                .guard(clients_left)
                .action(move |ctx| {
                    if reordered {
                        let server = ctx.vars.server("server")?;
                        ctx.env.sut.accept(server)?;
                        return launch_client(ctx, &client);
                    }
                    launch_client(ctx, &client)?;
                    if accept_and_hand_off(ctx, &worker)? {
                        Ok(())
                    } else {
                        Err(violation("blocking accept returned no connection"))
                    }
                }),
        )
        .transition(
            T::new("bound", "close", "closed")
                .weight(0.3)
                .action(close_server),
        )
        .build()
        .expect("minimalist model is well formed")
}

fn toggle_blocking(ctx: &mut Ctx<'_>) -> ActionResult {
    let server = ctx.vars.server("server")?;
    let blocking = !ctx.vars.boolean("blocking")?;
    ctx.env.sut.configure_blocking(server, blocking)?;
    ctx.vars.set("blocking", Value::Bool(blocking));
    Ok(())
}

fn get_local_port(ctx: &mut Ctx<'_>) -> ActionResult {
    let server = ctx.vars.server("server")?;
    let expected = ctx.vars.port("port")?;
    let port = ctx.env.sut.local_port(server)?;
    if port == expected {
        Ok(())
    } else {
        Err(violation(format!(
            "local port is {port}, bound to {expected}"
        )))
    }
}

fn bind_again(ctx: &mut Ctx<'_>) -> ActionResult {
    let server = ctx.vars.server("server")?;
    let port = ctx.vars.port("port")?;
    let kind = if ctx.env.sut.server_state(server)? == crate::sut::ServerState::Closed {
        ErrorKind::ClosedChannel
    } else {
        ErrorKind::AlreadyBound
    };
    expect_raised(ctx.env.sut.bind(server, port), kind, "second bind")
}

/// Before the selector is configured nothing is registered; afterwards an
/// acceptable key needs a client waiting to be accepted.
fn check_selector(ctx: &mut Ctx<'_>) -> ActionResult {
    let Some(Value::Selector(sel)) = ctx.vars.get("sel").cloned() else {
        return Ok(());
    };
    let ready = ctx.env.sut.select_now(sel)?;
    let registered = matches!(ctx.vars.get("key"), Some(Value::Key(_)));
    let server = ctx.vars.server("server")?;
    let open = ctx.env.sut.server_state(server)? != crate::sut::ServerState::Closed;
    if !ready.is_empty() && !(registered && open) {
        return Err(violation("selector reports a key that is not registered"));
    }
    if !ready.is_empty() && ctx.env.ledger.pending() == 0 {
        return Err(violation(
            "oracle: selector reports the listener acceptable but no client is waiting",
        ));
    }
    Ok(())
}

/// The selector-based server main model.
///
/// `bound` may toggle blocking mode, probe the port and selector, launch
/// clients and, while blocking with a client waiting, accept directly.
/// Registering a blocking channel or binding again are red self-loops.
/// Once non-blocking, `configureSelector` registers the listener, after
/// which the channel can no longer become blocking (`toggleBlocking`
/// turns into a red self-loop) and accepts are non-blocking: an empty
/// result leads to `accepting`, a connection to `connected`. After
/// `close`, every operation but polling the selector raises
/// `ClosedChannel` and ends in `err`.
pub fn server_main_model(client: &Spec, worker: &Spec) -> Spec {
    let mut b = Spec::builder("server-main")
        .states([
            "bound",
            "selectorConfigured",
            "accepting",
            "connected",
            "closed",
            "err",
        ])
        .constructor(|ctx| {
            open_and_bind(ctx)?;
            let sel = ctx.env.sut.open_selector();
            ctx.vars.set("sel", Value::Selector(sel));
            Ok(())
        });

    // bound
    let (c, w) = (client.clone(), worker.clone());
    b = b
        .transition(T::new("bound", "toggleBlocking", "bound").action(toggle_blocking))
        .transition(T::new("bound", "getLocalPort", "bound").action(get_local_port))
        .transition(T::new("bound", "checkSelector", "bound").action(check_selector))
        .transition(
            T::new("bound", "bindAgain", "bound")
                .on_error(ErrorKind::AlreadyBound, "bound")
                .action(bind_again),
        )
        .transition(
            T::new("bound", "registerBlocking", "bound")
                .guard(|v, _| v.flag("blocking"))
                .on_error(ErrorKind::IllegalBlockingMode, "bound")
                .action(|ctx| {
                    let server = ctx.vars.server("server")?;
                    let sel = ctx.vars.selector("sel")?;
                    expect_raised(
                        ctx.env.sut.register(sel, server, Interest::ACCEPT),
                        ErrorKind::IllegalBlockingMode,
                        "registering a blocking channel",
                    )
                }),
        )
        .transition(
            T::new("bound", "configureSelector", "selectorConfigured")
                .guard(|v, _| !v.flag("blocking"))
                .action(|ctx| {
                    let server = ctx.vars.server("server")?;
                    let sel = ctx.vars.selector("sel")?;
                    let key = ctx.env.sut.register(sel, server, Interest::ACCEPT)?;
                    ctx.vars.set("key", Value::Key(key));
                    Ok(())
                }),
        )
        .transition(
            T::new("bound", "launchClient", "bound")
                .guard(clients_left)
                .action(move |ctx| launch_client(ctx, &c)),
        )
        .transition(
            T::new("bound", "acceptBlocking", "bound")
                .guard(|v, env| v.flag("blocking") && env.ledger.pending() > 0)
                .action(move |ctx| {
                    if accept_and_hand_off(ctx, &w)? {
                        Ok(())
                    } else {
                        Err(violation(
                            "blocking accept with a client waiting returned no connection",
                        ))
                    }
                }),
        )
        .transition(
            T::new("bound", "close", "closed")
                .weight(0.3)
                .action(close_server),
        );

    // selectorConfigured, accepting, connected
    for s in ["selectorConfigured", "accepting", "connected"] {
        let (c, w) = (client.clone(), worker.clone());
        b = b
            .transition(
                T::new(s, "toggleBlocking", s)
                    .on_error(ErrorKind::IllegalBlockingMode, s)
                    .action(|ctx| {
                        let server = ctx.vars.server("server")?;
                        expect_raised(
                            ctx.env.sut.configure_blocking(server, true),
                            ErrorKind::IllegalBlockingMode,
                            "making a registered channel blocking",
                        )
                    }),
            )
            .transition(T::new(s, "getLocalPort", s).action(get_local_port))
            .transition(T::new(s, "checkSelector", s).action(check_selector))
            .transition(
                T::new(s, "bindAgain", s)
                    .on_error(ErrorKind::AlreadyBound, s)
                    .action(bind_again),
            )
            .transition(
                T::new(s, "launchClient", s)
                    .guard(clients_left)
                    .action(move |ctx| launch_client(ctx, &c)),
            )
            .transition(
                T::new(s, "accept", s)
                    .weight(1.5)
                    .branch("nullResult", "accepting")
                    .branch("connected", "connected")
                    .action(move |ctx| {
                        if accept_and_hand_off(ctx, &w)? {
                            ctx.emit("connected");
                        } else {
                            ctx.emit("nullResult");
                        }
                        Ok(())
                    }),
            )
            .transition(
                T::new(s, "close", "closed")
                    .weight(0.3)
                    .action(close_server),
            );
    }

    // closed
    b.transition(
        T::new("closed", "accept", "closed")
            .on_error(ErrorKind::ClosedChannel, "err")
            .action(|ctx| {
                let server = ctx.vars.server("server")?;
                expect_raised(
                    ctx.env.sut.accept(server),
                    ErrorKind::ClosedChannel,
                    "accept",
                )
            }),
    )
    .transition(
        T::new("closed", "bindAgain", "closed")
            .on_error(ErrorKind::ClosedChannel, "err")
            .action(bind_again),
    )
    .transition(
        T::new("closed", "toggleBlocking", "closed")
            .on_error(ErrorKind::ClosedChannel, "err")
            .action(|ctx| {
                let server = ctx.vars.server("server")?;
                let blocking = !ctx.vars.boolean("blocking")?;
                expect_raised(
                    ctx.env.sut.configure_blocking(server, blocking),
                    ErrorKind::ClosedChannel,
                    "toggling blocking mode",
                )
            }),
    )
    .transition(
        T::new("closed", "getLocalPort", "closed")
            .on_error(ErrorKind::ClosedChannel, "err")
            .action(|ctx| {
                let server = ctx.vars.server("server")?;
                expect_raised(
                    ctx.env.sut.local_port(server),
                    ErrorKind::ClosedChannel,
                    "getLocalPort",
                )
            }),
    )
    .transition(
        T::new("closed", "checkSelector", "closed")
            .guard(probes_left)
            .action(|ctx| {
                count_probe(ctx.vars);
                check_selector(ctx)
            }),
    )
    .build()
    .expect("server-main model is well formed")
}
