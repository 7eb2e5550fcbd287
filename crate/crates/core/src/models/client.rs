//! Client side of one connection.
//!
//! The constructor connects to the `port` argument, so by the time the
//! launching action continues the connection is queued at the server.
//! The client then reads and writes until the server goes away or a coin
//! flip closes it.
//!
//! ```text
//!   connected --read [eof] / ConnectionReset--> peerClosed --close--> closed
//!   connected --read [data], write, maybeClose [stay]--> connected
//!   connected --maybeClose [closed]-----------------------------------^
//! ```
//!
//! Launched without a `port`, the client opens its own listener and
//! accepts itself, so the model can also run alone.

use crate::efsm::Value;
use crate::sut::{ErrorKind, ReadResult, LOOPBACK};

use super::{
    close_checked, read_capacity, read_checked, violation, write_checked, Ctx, Side, Spec, T,
};

fn connect(ctx: &mut Ctx<'_>) -> crate::efsm::ActionResult {
    let port = match ctx.vars.get("port") {
        Some(_) => ctx.vars.port("port")?,
        None => standalone_listener(ctx)?,
    };
    let sut = &mut ctx.env.sut;
    let conn = sut.connect(LOOPBACK, port)?;
    sut.configure_blocking(conn, false)?;
    let local = sut.local_endpoint(conn)?;
    let link = ctx.env.ledger.open_link(local).map_err(violation)?;
    ctx.vars.set("conn", Value::Conn(conn));
    ctx.vars.set("link", Value::Int(link.0 as i64));
    if let Some(Value::Server(server)) = ctx.vars.get("fixture").cloned() {
        let Some(accepted) = ctx.env.sut.accept(server)? else {
            return Err(violation(
                "standalone client: blocking accept returned nothing",
            ));
        };
        let peer = ctx.env.sut.peer_endpoint(accepted)?;
        ctx.env.ledger.accept(peer).map_err(violation)?;
    }
    Ok(())
}

fn standalone_listener(ctx: &mut Ctx<'_>) -> Result<u16, crate::efsm::ActionError> {
    let server = ctx.env.sut.open_server()?;
    let port = ctx.env.sut.bind(server, ctx.env.listen_port())?;
    ctx.vars.set("fixture", Value::Server(server));
    Ok(port)
}

pub fn client_model() -> Spec {
    Spec::builder("client")
        .states(["connected", "peerClosed", "closed"])
        .constructor(connect)
        .transition(
            T::new("connected", "read", "connected")
                .branch("data", "connected")
                .branch("eof", "peerClosed")
                .on_error(ErrorKind::ConnectionReset, "peerClosed")
                .action(|ctx| {
                    let cap = read_capacity(ctx);
                    match read_checked(ctx, Side::Client, cap)? {
                        ReadResult::EndOfStream => ctx.emit("eof"),
                        ReadResult::Bytes(_) => ctx.emit("data"),
                    }
                    Ok(())
                }),
        )
        .transition(
            T::new("connected", "write", "connected")
                .weight(0.5)
                .on_error(ErrorKind::ConnectionReset, "peerClosed")
                .action(|ctx| write_checked(ctx, Side::Client)),
        )
        .transition(
            T::new("connected", "maybeClose", "connected")
                .branch("closed", "closed")
                .branch("stay", "connected")
                .action(|ctx| {
                    if ctx.maybe(ctx.env.settings.p_close) {
                        close_checked(ctx, Side::Client)?;
                        ctx.emit("closed");
                    } else {
                        ctx.emit("stay");
                    }
                    Ok(())
                }),
        )
        .transition(
            T::new("peerClosed", "close", "closed").action(|ctx| close_checked(ctx, Side::Client)),
        )
        .build()
        .expect("client model is well formed")
}
