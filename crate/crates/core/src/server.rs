//! TCP service: one session per connection, driven by the line protocol.
//!
//! A reader thread queues incoming lines; the handler owns the session and
//! alternates between draining the queue and ticking. Frames are only sent at
//! tick boundaries. Once the labels have been quiet for `QUIET_TICKS` ticks
//! (or the tick cap is hit) the handler idles until the next stroke.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::time::Duration;

use crate::error::Result;
use crate::grid::{ImageVolume, LabelMap};
use crate::io::rle_encode;
use crate::protocol::{label_contours, ApiMessage, HelloInfo};
use crate::scalar::Real;
use crate::session::{Session, SessionConfig, SessionInit};

const QUIET_TICKS: usize = 10;

#[derive(Clone, Debug)]
pub struct ServeOptions<T> {
    pub image: ImageVolume<T>,
    pub init: SessionInit,
    pub cfg: SessionConfig<T>,
    pub reference: Option<LabelMap>,
    /// Send `tickstats` and a frame every this many ticks.
    pub frame_every: u64,
    /// Upper bound on ticks per session.
    pub max_ticks: u64,
    /// Where finished sessions write `<id>.seglog`.
    pub log_dir: Option<PathBuf>,
}

/// Accept connections until `max_connections` have been served (forever when
/// `None`). Each connection runs on its own thread.
pub fn serve<T: Real + Send + Sync + 'static>(
    listener: TcpListener,
    opts: Arc<ServeOptions<T>>,
    max_connections: Option<usize>,
) -> Result<()> {
    let counter = Arc::new(AtomicU64::new(0));
    let mut handles = Vec::new();
    for stream in listener.incoming() {
        let stream = stream?;
        let opts = Arc::clone(&opts);
        let n = counter.fetch_add(1, Ordering::SeqCst);
        handles.push(std::thread::spawn(move || {
            let id = format!("s{}-{}", opts.cfg.seed, n);
            if let Err(e) = handle_connection(stream, &opts, &id) {
                eprintln!("session {id}: {e}");
            }
        }));
        if max_connections.is_some_and(|m| handles.len() >= m) {
            break;
        }
    }
    for h in handles {
        let _ = h.join();
    }
    Ok(())
}

fn send(out: &mut TcpStream, msg: &ApiMessage) -> std::io::Result<()> {
    writeln!(out, "{msg}")
}

fn frame<T: Real>(s: &Session<T>) -> ApiMessage {
    ApiMessage::Frame {
        tick: s.ticks(),
        rle: rle_encode(s.labels()),
        contours: label_contours(&s.state().phi),
    }
}

/// Serve one client until it disconnects, then write its session log.
pub fn handle_connection<T: Real>(stream: TcpStream, opts: &ServeOptions<T>, id: &str) -> Result<()> {
    let mut out = stream.try_clone()?;
    let mut session = match Session::start(
        id,
        opts.image.clone(),
        opts.init.clone(),
        opts.cfg.clone(),
        opts.reference.clone(),
    ) {
        Ok(s) => s,
        Err(e) => {
            send(&mut out, &ApiMessage::Error(e.to_string()))?;
            return Err(e);
        }
    };
    let dims = *session.image().dims();

    let (tx, rx) = mpsc::channel::<String>();
    let reader = std::thread::spawn(move || {
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });

    let mut quiet = 0usize;
    let mut closed = false;
    while !closed {
        let active = quiet < QUIET_TICKS && session.ticks() < opts.max_ticks;
        let first = if active {
            match rx.try_recv() {
                Ok(l) => Some(l),
                Err(mpsc::TryRecvError::Empty) => None,
                Err(mpsc::TryRecvError::Disconnected) => break,
            }
        } else {
            match rx.recv_timeout(Duration::from_millis(200)) {
                Ok(l) => Some(l),
                Err(RecvTimeoutError::Timeout) => continue,
                Err(RecvTimeoutError::Disconnected) => break,
            }
        };
        let mut pending: Vec<String> = first.into_iter().collect();
        pending.extend(rx.try_iter());
        for line in pending {
            if line.trim().is_empty() {
                continue;
            }
            let reply = match ApiMessage::parse(&line) {
                Ok(ApiMessage::Hello(None)) => {
                    send(
                        &mut out,
                        &ApiMessage::Hello(Some(HelloInfo {
                            session: id.to_string(),
                            mode: session.config().dynamics.as_str().into(),
                            labels: session.config().n_labels,
                            extents: dims.extents(),
                        })),
                    )?;
                    frame(&session)
                }
                Ok(ApiMessage::Stroke(msg)) if msg.session == id => {
                    match msg.to_stroke(&dims).and_then(|s| session.ingest_stroke(s)) {
                        Ok(ack) => {
                            quiet = 0;
                            ApiMessage::ImpulseAck {
                                label: ack.label,
                                k: ack.k,
                                actuated: ack.actuated,
                                contested: ack.contested,
                                checksum: ack.checksum,
                            }
                        }
                        Err(e) => ApiMessage::Error(e.to_string()),
                    }
                }
                Ok(ApiMessage::Stroke(msg)) => ApiMessage::Error(format!("stroke for session {}", msg.session)),
                // a bad stroke line is a payload error, not a protocol violation
                Err(e) if line.starts_with("stroke") => ApiMessage::Error(e.to_string()),
                Ok(other) => {
                    closed = true;
                    ApiMessage::Error(format!("unexpected {:?} from client", other.kind()))
                }
                Err(e) => {
                    closed = true;
                    ApiMessage::Error(e.to_string())
                }
            };
            send(&mut out, &reply)?;
            if closed {
                break;
            }
        }
        if !closed && quiet < QUIET_TICKS && session.ticks() < opts.max_ticks {
            let m = session.tick()?;
            quiet = if m.reclassified == 0 { quiet + 1 } else { 0 };
            let idle = quiet >= QUIET_TICKS || session.ticks() >= opts.max_ticks;
            if session.ticks() % opts.frame_every.max(1) == 0 || idle {
                send(&mut out, &ApiMessage::TickStats(m))?;
                send(&mut out, &frame(&session))?;
            }
        }
    }
    let _ = out.shutdown(std::net::Shutdown::Both);
    let _ = reader.join();
    if let Some(dir) = &opts.log_dir {
        session.snapshot();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{id}.seglog")), session.log_text())?;
    }
    Ok(())
}
