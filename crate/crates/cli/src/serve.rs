//! WebSocket session server.
//!
//! The simulation thread owns the session. Each client gets its own
//! connection thread; the two sides talk only through channels.

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use srl_core::observer::Calibration;
use srl_core::session::{Reply, Session};
use srl_core::SimConfig;
use tungstenite::{Message, WebSocket};

use crate::Failure;

enum Inbound {
    Connect(u64, Sender<String>),
    Command(u64, String),
    Disconnect(u64),
}

pub fn serve(cfg: SimConfig, threshold: Calibration, host: &str, port: u16) -> Result<(), Failure> {
    let listener = TcpListener::bind((host, port))?;
    // Tests and scripts read this line to learn an ephemeral port.
    println!("listening on ws://{}", listener.local_addr()?);
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || accept_loop(listener, tx));
    simulate(Session::new(cfg, threshold), rx);
    Ok(())
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>) {
    for (id, stream) in (0u64..).zip(listener.incoming()) {
        let Ok(stream) = stream else { continue };
        let tx = tx.clone();
        thread::spawn(move || {
            if let Err(e) = client(id, stream, tx.clone()) {
                log::info!("client {id}: {e}");
            }
            let _ = tx.send(Inbound::Disconnect(id));
        });
    }
}

fn client(id: u64, stream: TcpStream, tx: Sender<Inbound>) -> Result<(), tungstenite::Error> {
    let mut ws: WebSocket<TcpStream> =
        tungstenite::accept(stream).map_err(|e| tungstenite::Error::Io(std::io::Error::other(e.to_string())))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)))?;
    let (out_tx, out_rx) = mpsc::channel::<String>();
    if tx.send(Inbound::Connect(id, out_tx)).is_err() {
        return Ok(());
    }
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => {
                if tx.send(Inbound::Command(id, t.to_string())).is_err() {
                    return Ok(());
                }
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
        for msg in out_rx.try_iter() {
            ws.send(Message::text(msg))?;
        }
    }
}

/// Wall-clock paced loop: runs however many ticks are due since the
/// anchor, so sleep jitter never accumulates into drift.
fn simulate(mut session: Session, rx: Receiver<Inbound>) {
    let dt = session.config().observer.dt;
    let every = ((1.0 / session.config().session.stream_hz) / dt).round().max(1.0) as u64;
    let mut clients: Vec<(u64, Sender<String>)> = Vec::new();
    let mut anchor = Instant::now();
    let mut done: u64 = 0;
    let mut ticks: u64 = 0;
    loop {
        let next_due = anchor + Duration::from_secs_f64((done + 1) as f64 * dt);
        let wait = next_due.saturating_duration_since(Instant::now());
        match rx.recv_timeout(wait) {
            Ok(msg) => {
                handle(&mut session, &mut clients, msg);
                for msg in rx.try_iter() {
                    handle(&mut session, &mut clients, msg);
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => return,
        }
        if session.paused() {
            anchor = Instant::now();
            done = 0;
            continue;
        }
        let due = (anchor.elapsed().as_secs_f64() / dt) as u64;
        if due.saturating_sub(done) > 1000 {
            // Fell more than a second behind; resynchronise instead of bursting.
            log::warn!("simulation fell behind wall clock by {} ticks", due - done);
            done = due - 1;
        }
        while done < due {
            match session.tick() {
                Ok(_) => {}
                Err(e) => {
                    log::error!("simulation error: {e}");
                    return;
                }
            }
            done += 1;
            ticks += 1;
            if ticks.is_multiple_of(every) {
                let text = serde_json::to_string(&session.state_message()).expect("state serializes");
                // Nobody listening is fine: the message is dropped.
                clients.retain(|(_, tx)| tx.send(text.clone()).is_ok());
            }
        }
    }
}

fn handle(session: &mut Session, clients: &mut Vec<(u64, Sender<String>)>, msg: Inbound) {
    match msg {
        Inbound::Connect(id, tx) => clients.push((id, tx)),
        Inbound::Disconnect(id) => clients.retain(|(c, _)| *c != id),
        Inbound::Command(id, text) => {
            let reply: Reply = session.handle_text(&text);
            let text = serde_json::to_string(&reply).expect("reply serializes");
            if let Some((_, tx)) = clients.iter().find(|(c, _)| *c == id) {
                let _ = tx.send(text);
            }
        }
    }
}
