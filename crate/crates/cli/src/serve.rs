//! Live session over WebSocket: one tick loop, any number of viewers.
//!
//! Every connection gets `hello` first, then one snapshot per tick with its
//! own gap-free sequence numbers. Commands from any viewer go into a single
//! queue that the tick loop drains at the start of each tick.

use std::fs::File;
use std::io::{BufWriter, ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::Context;
use deniro_core::orchestrator::session::Session;
use deniro_core::orchestrator::trace::TraceWriter;
use deniro_core::protocol::{decode_command, ClientCommand, ServerMessage, Snapshot};
use deniro_core::scenario::Scenario;
use tungstenite::{Message, WebSocket};

/// How long a connection waits for client input before flushing snapshots.
const POLL: Duration = Duration::from_millis(5);

pub struct Options {
    pub bind: String,
    pub port: u16,
    pub seed: Option<u64>,
    pub trace: Option<PathBuf>,
    pub rate: f64,
    pub max_ticks: Option<u64>,
}

type Viewers = Arc<Mutex<Vec<Sender<Arc<Snapshot>>>>>;

impl Options {
    pub fn serve(self, path: &Path) -> anyhow::Result<()> {
        anyhow::ensure!(self.rate > 0.0 && self.rate.is_finite(), "rate must be positive");
        let mut scenario = Scenario::load(path)?;
        if let Some(seed) = self.seed {
            scenario.seed = seed;
        }
        let mut session = Session::new(scenario, false)?;
        let hello = Arc::new(serde_json::to_string(&session.hello())?);
        let mut trace = match &self.trace {
            Some(p) => Some(TraceWriter::new(BufWriter::new(
                File::create(p).with_context(|| p.display().to_string())?,
            ))),
            None => None,
        };

        let listener = TcpListener::bind((self.bind.as_str(), self.port))
            .with_context(|| format!("binding {}:{}", self.bind, self.port))?;
        println!("listening on ws://{}", listener.local_addr()?);
        std::io::stdout().flush()?;

        let (cmd_tx, cmd_rx) = mpsc::channel();
        let viewers: Viewers = Arc::default();
        {
            let viewers = viewers.clone();
            thread::spawn(move || accept_loop(listener, hello, cmd_tx, viewers));
        }

        let period = Duration::from_secs_f64(1.0 / self.rate);
        let mut next = Instant::now();
        while self.max_ticks.is_none_or(|m| session.tick_count() < m) {
            while let Ok(cmd) = cmd_rx.try_recv() {
                session.enqueue(cmd);
            }
            let record = session.step();
            if let Some(w) = trace.as_mut() {
                w.write(&record)?;
            }
            let snap = Arc::new(session.snapshot(0));
            viewers.lock().expect("viewer list").retain(|tx| tx.send(snap.clone()).is_ok());
            next += period;
            if let Some(wait) = next.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
        }
        // dropping the senders tells every connection to close
        viewers.lock().expect("viewer list").clear();
        thread::sleep(Duration::from_millis(50));
        Ok(())
    }
}

fn accept_loop(listener: TcpListener, hello: Arc<String>, commands: Sender<ClientCommand>, viewers: Viewers) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let (tx, rx) = mpsc::channel();
        viewers.lock().expect("viewer list").push(tx);
        let (hello, commands) = (hello.clone(), commands.clone());
        thread::spawn(move || {
            if let Ok(ws) = tungstenite::accept(stream) {
                connection(ws, &hello, &commands, &rx);
            }
        });
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("server messages serialize");
    ws.send(Message::text(text)).is_ok()
}

fn connection(mut ws: WebSocket<TcpStream>, hello: &str, commands: &Sender<ClientCommand>, snapshots: &Receiver<Arc<Snapshot>>) {
    if ws.send(Message::text(hello)).is_err() || ws.get_ref().set_read_timeout(Some(POLL)).is_err() {
        return;
    }
    let mut seq = 0u64;
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => match decode_command(text.as_str()) {
                Ok(cmd) => {
                    if commands.send(cmd).is_err() {
                        break;
                    }
                }
                Err(message) => {
                    if !send(&mut ws, &ServerMessage::Error { message }) {
                        break;
                    }
                }
            },
            Ok(Message::Binary(_)) => {
                let message = "binary frames are not supported".to_string();
                if !send(&mut ws, &ServerMessage::Error { message }) {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match snapshots.try_recv() {
                Ok(snap) => {
                    seq += 1;
                    let snap = Snapshot { seq, ..(*snap).clone() };
                    if !send(&mut ws, &ServerMessage::Snapshot(snap)) {
                        return;
                    }
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return;
                }
            }
        }
    }
}
