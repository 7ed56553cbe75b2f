//! Local WebSocket endpoint for live sessions.
//!
//! Every message of a session is sent to each subscriber as one JSON text
//! frame. A client may send `{"type":"history"}` at any time and receives a
//! `{"type":"history","events":[...]}` frame holding every event so far.
//! Anything else from a client is logged and ignored.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};
use vocemo_core::audio::CaptureSource;
use vocemo_core::service::{run_realtime, Analyzer, Broadcaster, RealtimeConfig, Received, SessionLog, StreamMessage};

use crate::CliError;

const POLL: Duration = Duration::from_millis(20);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub realtime: RealtimeConfig,
    /// Per-subscriber queue length before the oldest events are dropped.
    pub queue_capacity: usize,
    /// Hold the session until this many clients are connected.
    pub wait_for_subscribers: usize,
    /// Give up waiting for subscribers after this long and start anyway.
    pub wait_timeout: Option<Duration>,
    /// Keep answering clients this long after the session ends.
    pub linger: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            realtime: RealtimeConfig::default(),
            queue_capacity: 256,
            wait_for_subscribers: 0,
            wait_timeout: None,
            linger: Duration::from_secs(2),
        }
    }
}

pub struct Server {
    listener: TcpListener,
    broadcaster: Broadcaster,
}

impl Server {
    pub fn bind(host: &str, port: u16, queue_capacity: usize) -> Result<Self, CliError> {
        let listener = TcpListener::bind((host, port)).map_err(|e| match e.kind() {
            ErrorKind::AddrInUse => CliError::Usage(format!("port {port} is already in use")),
            _ => CliError::Io { context: format!("cannot listen on {host}:{port}"), source: e },
        })?;
        listener.set_nonblocking(true).map_err(CliError::io("cannot configure listener"))?;
        Ok(Self { listener, broadcaster: Broadcaster::new(queue_capacity) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn broadcaster(&self) -> &Broadcaster {
        &self.broadcaster
    }

    /// Runs one live session from `source`, broadcasting every message, then
    /// lingers for late history requests and shuts down.
    pub fn run(self, analyzer: &Analyzer, source: &CaptureSource, opts: &ServeOptions) -> Result<SessionLog, CliError> {
        let stop = AtomicBool::new(false);
        let hub = &self.broadcaster;
        thread::scope(|scope| {
            let stop = &stop;
            let listener = &self.listener;
            scope.spawn(move || {
                while !stop.load(Ordering::Acquire) {
                    match listener.accept() {
                        Ok((stream, peer)) => {
                            log::info!("subscriber connected from {peer}");
                            let hub = hub.clone();
                            scope.spawn(move || serve_client(stream, &hub, stop));
                        }
                        Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
                        Err(e) => log::warn!("accept failed: {e}"),
                    }
                }
            });

            let started = Instant::now();
            while hub.subscriber_count() < opts.wait_for_subscribers {
                if opts.wait_timeout.is_some_and(|t| started.elapsed() >= t) {
                    log::warn!("starting without all {} subscribers", opts.wait_for_subscribers);
                    break;
                }
                thread::sleep(POLL);
            }

            let result = run_realtime(analyzer, source, &opts.realtime, &mut |m| hub.publish(m.clone()));
            thread::sleep(opts.linger);
            stop.store(true, Ordering::Release);
            result.map_err(CliError::from)
        })
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn serve_client(stream: TcpStream, hub: &Broadcaster, stop: &AtomicBool) {
    if stream.set_nonblocking(false).and_then(|_| stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))).is_err() {
        return;
    }
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake failed: {e}");
            return;
        }
    };
    if ws.get_mut().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let sub = hub.subscribe();
    let mut ended = false;
    loop {
        loop {
            match sub.try_recv() {
                Received::Message(m) => {
                    if ws.send(Message::Text(m.to_json())).is_err() {
                        return;
                    }
                }
                Received::Closed => {
                    ended = true;
                    break;
                }
                Received::Timeout => break,
            }
        }
        if ended && stop.load(Ordering::Acquire) {
            close(ws);
            return;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if !answer(&text, hub, &mut ws) {
                    return;
                }
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return,
            Err(e) => {
                log::warn!("subscriber dropped: {e}");
                return;
            }
        }
    }
}

/// Handles one client request; returns false once the connection is unusable.
fn answer(text: &str, hub: &Broadcaster, ws: &mut WebSocket<TcpStream>) -> bool {
    let kind = serde_json::from_str::<serde_json::Value>(text)
        .ok()
        .and_then(|v| v.get("type").and_then(|t| t.as_str()).map(str::to_owned));
    match kind.as_deref() {
        Some("history") => {
            let reply = StreamMessage::History { events: hub.history() };
            ws.send(Message::Text(reply.to_json())).is_ok()
        }
        _ => {
            log::warn!("ignoring malformed client message: {}", text.chars().take(80).collect::<String>());
            true
        }
    }
}

fn close(mut ws: WebSocket<TcpStream>) {
    if ws.close(None).is_err() {
        return;
    }
    // Wait briefly for the client's close acknowledgement.
    let deadline = Instant::now() + Duration::from_millis(500);
    while Instant::now() < deadline {
        match ws.read() {
            Err(e) if is_timeout(&e) => {}
            Err(_) => return,
            Ok(_) => {}
        }
    }
}
