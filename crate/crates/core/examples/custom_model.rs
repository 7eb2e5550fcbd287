//! A model of your own: an echo exchange over one loopback connection,
//! written against the same environment the bundled models use.
//!
//! The client sends, the server side echoes whatever arrived, and the
//! client checks it never receives more than was echoed. Once the client
//! half-closes, further sends must raise OutputShutdown.
//!
//! ```text
//! cargo run --example custom_model -- [tests]
//! ```

use netmbt::efsm::{check, ActionCtx, ActionResult, ModelSpec, Transition, Value};
use netmbt::explorer::{export_dot, run_suite, run_test, SuiteConfig};
use netmbt::models::{SocketEnv, SocketFactory, SocketOptions};
use netmbt::sut::{ErrorKind, ReadResult, LOOPBACK};

type Ctx<'a> = ActionCtx<'a, SocketEnv>;
type T = Transition<SocketEnv>;

fn add(ctx: &mut Ctx<'_>, var: &str, n: usize) {
    let total = ctx.vars.int_or_zero(var) + n as i64;
    ctx.vars.set(var, Value::Int(total));
}

fn connect(ctx: &mut Ctx<'_>) -> ActionResult {
    let port = ctx.env.listen_port();
    let sut = &mut ctx.env.sut;
    let server = sut.open_server()?;
    let port = sut.bind(server, port)?;
    let client = sut.connect(LOOPBACK, port)?;
    let Some(echo) = sut.accept(server)? else {
        return check(false, || "queued connection was not accepted".into());
    };
    sut.configure_blocking(client, false)?;
    sut.configure_blocking(echo, false)?;
    ctx.vars.set("client", Value::Conn(client));
    ctx.vars.set("echo", Value::Conn(echo));
    Ok(())
}

fn send(ctx: &mut Ctx<'_>) -> ActionResult {
    let mut payload = vec![0u8; ctx.rng.range_inclusive(1, 16) as usize];
    ctx.rng.fill_bytes(&mut payload);
    let n = ctx.env.sut.write(ctx.vars.conn("client")?, &payload)?;
    add(ctx, "sent", n);
    Ok(())
}

fn echo(ctx: &mut Ctx<'_>) -> ActionResult {
    let conn = ctx.vars.conn("echo")?;
    match ctx.env.sut.read(conn, 32)? {
        ReadResult::Bytes(0) => ctx.emit("idle"),
        ReadResult::Bytes(n) => {
            let back = ctx.env.sut.write(conn, &vec![b'e'; n])?;
            add(ctx, "echoed", back);
            ctx.emit("data");
        }
        ReadResult::EndOfStream => {
            ctx.env.sut.close_conn(conn)?;
            ctx.emit("eof");
        }
    }
    check(
        ctx.vars.int_or_zero("echoed") <= ctx.vars.int_or_zero("sent"),
        || "echoed more than was sent".into(),
    )
}

fn receive(ctx: &mut Ctx<'_>) -> ActionResult {
    if let ReadResult::Bytes(n) = ctx.env.sut.read(ctx.vars.conn("client")?, 64)? {
        add(ctx, "received", n);
    }
    let (got, echoed) = (
        ctx.vars.int_or_zero("received"),
        ctx.vars.int_or_zero("echoed"),
    );
    check(got <= echoed, || {
        format!("received {got} but only {echoed} echoed")
    })
}

fn hang_up(ctx: &mut Ctx<'_>) -> ActionResult {
    Ok(ctx.env.sut.shutdown_output(ctx.vars.conn("client")?)?)
}

fn echo_model() -> ModelSpec<SocketEnv> {
    ModelSpec::builder("echo")
        .states(["open", "halfClosed", "done"])
        .constructor(connect)
        .transition(T::new("open", "send", "open").action(send))
        .transition(
            T::new("open", "echo", "open")
                .action(echo)
                .branch("idle", "open")
                .branch("data", "open"),
        )
        .transition(T::new("open", "receive", "open").action(receive))
        .transition(
            T::new("open", "hangUp", "halfClosed")
                .action(hang_up)
                .weight(0.2),
        )
        .transition(
            T::new("halfClosed", "send", "halfClosed")
                .action(send)
                .on_error(ErrorKind::OutputShutdown, "halfClosed"),
        )
        .transition(
            T::new("halfClosed", "echo", "halfClosed")
                .action(echo)
                .branch("idle", "halfClosed")
                .branch("data", "halfClosed")
                .branch("eof", "done"),
        )
        .transition(T::new("halfClosed", "receive", "halfClosed").action(receive))
        .build()
        .expect("well-formed model")
}

fn main() {
    let tests = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(500);
    let model = echo_model();
    print!("{}", export_dot(&model));

    let config = SuiteConfig::new(1).tests(tests).max_steps(40);
    let mut factory = SocketFactory::sim(SocketOptions::default());
    print!(
        "{}",
        run_test(&model, &config, &mut factory, 0).unwrap().trace
    );
    let report = run_suite(&model, &config, &mut factory).unwrap();
    print!("{report}");
    std::process::exit(if report.all_passed() { 0 } else { 1 });
}
