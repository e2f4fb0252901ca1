//! TCP daemon. Connection threads decode frames and forward messages to one
//! engine thread, which owns all ORAM state and answers strictly in order.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use obge::trace::{write_trace_csv, AccessTrace};
use obge::{Error, Result};

use crate::client::Transport;
use crate::config::ServerConfig;
use crate::engine::{Engine, EngineState};
use crate::files::write_atomic;
use crate::frame::{read_frame, write_frame};
use crate::message::{code, Message};

const POLL: Duration = Duration::from_millis(25);

enum Command {
    Request(Message, Sender<Message>),
    Shutdown(Sender<Result<()>>),
}

pub struct ServerHandle {
    addr: SocketAddr,
    tx: Sender<Command>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    engine: Option<JoinHandle<()>>,
    trace: AccessTrace,
}

/// Loads the state named by `config` and starts serving it. State is
/// written back on shutdown.
pub fn start(config: ServerConfig) -> Result<ServerHandle> {
    let state = EngineState::load(&config)?;
    start_with(config, state, true)
}

/// Serves `state` directly. With `persist` false nothing touches the disk.
pub fn start_with(config: ServerConfig, state: EngineState, persist: bool) -> Result<ServerHandle> {
    let listener = TcpListener::bind(&config.listen_addr)
        .map_err(|e| Error::Transport(format!("bind {}: {e}", config.listen_addr)))?;
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let trace = AccessTrace::new();
    let (tx, rx) = mpsc::channel();
    let (ready_tx, ready_rx) = mpsc::channel();
    let engine_trace = trace.clone();
    let engine = thread::Builder::new().name("obge-engine".into()).spawn(move || {
        match Engine::new(state, engine_trace.clone(), config.budget_bytes) {
            Ok(engine) => {
                let _ = ready_tx.send(Ok(()));
                engine_loop(engine, rx, &config, persist, &engine_trace);
            }
            Err(e) => {
                let _ = ready_tx.send(Err(e));
            }
        }
    })?;
    ready_rx.recv().map_err(|_| Error::Transport("engine thread died during startup".into()))??;

    let stop = Arc::new(AtomicBool::new(false));
    let accept_stop = stop.clone();
    let accept_tx = tx.clone();
    let accept = thread::Builder::new()
        .name("obge-accept".into())
        .spawn(move || accept_loop(listener, accept_tx, accept_stop))?;
    Ok(ServerHandle { addr, tx, stop, accept: Some(accept), engine: Some(engine), trace })
}

fn engine_loop(mut engine: Engine, rx: Receiver<Command>, cfg: &ServerConfig, persist: bool, trace: &AccessTrace) {
    while let Ok(cmd) = rx.recv() {
        match cmd {
            Command::Request(msg, reply) => {
                let _ = reply.send(engine.handle(msg));
            }
            Command::Shutdown(done) => {
                let state = engine.into_state();
                let mut result = if persist { state.save(cfg) } else { Ok(()) };
                if let (Ok(()), Some(path)) = (&result, &cfg.trace_path) {
                    let mut buf = Vec::new();
                    result = write_trace_csv(&trace.snapshot(), &mut buf).and_then(|_| write_atomic(path, &buf));
                }
                let _ = done.send(result);
                return;
            }
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Command>, stop: Arc<AtomicBool>) {
    let mut workers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let (tx, stop) = (tx.clone(), stop.clone());
                workers.push(thread::spawn(move || {
                    let _ = serve_connection(stream, tx, stop);
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
        workers.retain(|w| !w.is_finished());
    }
    for w in workers {
        let _ = w.join();
    }
}

/// Waits for the next byte without consuming it, giving up when `stop` is set.
fn wait_readable(stream: &TcpStream, stop: &AtomicBool) -> std::io::Result<bool> {
    stream.set_read_timeout(Some(POLL * 4))?;
    let mut b = [0u8; 1];
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(false);
        }
        match stream.peek(&mut b) {
            Ok(0) => return Ok(false),
            Ok(_) => break,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
    stream.set_read_timeout(None)?;
    Ok(true)
}

fn serve_connection(stream: TcpStream, tx: Sender<Command>, stop: Arc<AtomicBool>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    while wait_readable(&reader, &stop)? {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => {
                // the stream is out of sync after a bad header; report and hang up
                let _ = write_frame(&mut writer, &Message::from_error(&e).to_frame());
                break;
            }
        };
        let reply = match Message::from_frame(&frame) {
            Ok(msg) => dispatch(&tx, msg),
            Err(e) => Message::error(code::MALFORMED, e.to_string()),
        };
        write_frame(&mut writer, &reply.to_frame())?;
    }
    Ok(())
}

fn dispatch(tx: &Sender<Command>, msg: Message) -> Message {
    let (reply_tx, reply_rx) = mpsc::channel();
    if tx.send(Command::Request(msg, reply_tx)).is_err() {
        return Message::error(code::UNAVAILABLE, "server is shutting down");
    }
    reply_rx.recv().unwrap_or_else(|_| Message::error(code::UNAVAILABLE, "server is shutting down"))
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn trace(&self) -> &AccessTrace {
        &self.trace
    }

    /// In-process transport to the same engine; frames are still encoded
    /// and decoded on both legs.
    pub fn loopback(&self) -> Loopback {
        Loopback { tx: self.tx.clone() }
    }

    /// Stops accepting, lets the engine finish the request in hand, then
    /// persists state and the trace.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        let (done_tx, done_rx) = mpsc::channel();
        let sent = self.tx.send(Command::Shutdown(done_tx)).is_ok();
        let result = if sent {
            done_rx.recv().map_err(|_| Error::Transport("engine thread died".into()))?
        } else {
            Err(Error::Transport("engine thread already stopped".into()))
        };
        if let Some(h) = self.engine.take() {
            let _ = h.join();
        }
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        result
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

#[derive(Clone)]
pub struct Loopback {
    tx: Sender<Command>,
}

impl Transport for Loopback {
    fn call(&mut self, msg: &Message) -> Result<Message> {
        let msg = Message::decode(&msg.encode())?;
        let reply = dispatch(&self.tx, msg);
        Message::decode(&reply.encode())
    }
}

/// Runs until SIGTERM or SIGINT, then shuts down cleanly. `on_ready` sees
/// the bound address once the server accepts connections.
pub fn serve_until_signal(config: ServerConfig, on_ready: impl FnOnce(SocketAddr)) -> Result<()> {
    let flag = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, flag.clone())?;
    }
    let handle = start(config)?;
    on_ready(handle.local_addr());
    while !flag.load(Ordering::SeqCst) {
        thread::sleep(POLL);
    }
    handle.shutdown()
}
