//! One thread per session. It owns the [`Session`]; everything else talks
//! to it through a command queue, so state changes are serialized. Between
//! commands it collects finished sandboxes and pushes them to subscribers.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender};

use super::fanout::Subscriber;
use super::provenance::to_jsonl;
use super::session::{Session, Snapshot};

const IDLE_POLL: Duration = Duration::from_millis(20);

enum Command {
    Message(String, Sender<Vec<String>>),
    Subscribe(usize, Sender<Arc<Subscriber>>),
    Snapshot(Sender<Snapshot>),
    Provenance(Sender<String>),
    With(Box<dyn FnOnce(&mut Session) + Send>),
    Shutdown,
}

/// Cloneable handle to a running session loop.
#[derive(Clone)]
pub struct SessionHandle {
    id: String,
    commands: Sender<Command>,
}

impl std::fmt::Debug for SessionHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SessionHandle").field("id", &self.id).finish()
    }
}

/// The loop thread; dropping it shuts the loop down.
pub struct SessionLoop {
    handle: SessionHandle,
    thread: Option<JoinHandle<()>>,
}

impl SessionLoop {
    pub fn spawn(session: Session) -> Self {
        let (tx, rx) = unbounded();
        let id = session.session_id().to_string();
        let thread = std::thread::Builder::new()
            .name(format!("session-{id}"))
            .spawn(move || run(session, rx))
            .expect("spawn session loop");
        Self {
            handle: SessionHandle { id, commands: tx },
            thread: Some(thread),
        }
    }

    pub fn handle(&self) -> SessionHandle {
        self.handle.clone()
    }
}

impl Drop for SessionLoop {
    fn drop(&mut self) {
        let _ = self.handle.commands.send(Command::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn run(mut session: Session, commands: Receiver<Command>) {
    loop {
        match commands.recv_timeout(IDLE_POLL) {
            Ok(Command::Message(text, reply)) => {
                let out = session
                    .handle_message(&text)
                    .into_iter()
                    .map(|e| serde_json::to_string(&e).expect("server messages serialize"))
                    .collect();
                let _ = reply.send(out);
            }
            Ok(Command::Subscribe(cap, reply)) => {
                let _ = reply.send(session.fanout().subscribe(cap));
            }
            Ok(Command::Snapshot(reply)) => {
                let _ = session.sync();
                let _ = reply.send(session.snapshot());
            }
            Ok(Command::Provenance(reply)) => {
                let _ = reply.send(to_jsonl(session.provenance().entries()));
            }
            Ok(Command::With(f)) => f(&mut session),
            Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {
                if let Err(e) = session.sync() {
                    log::warn!("session {}: {e}", session.session_id());
                }
            }
        }
    }
}

impl SessionHandle {
    pub fn id(&self) -> &str {
        &self.id
    }

    fn ask<T>(&self, make: impl FnOnce(Sender<T>) -> Command) -> Option<T> {
        let (tx, rx) = bounded(1);
        self.commands.send(make(tx)).ok()?;
        rx.recv().ok()
    }

    /// Send a protocol message; returns the serialized responses, or `None`
    /// if the loop has stopped.
    pub fn request(&self, text: &str) -> Option<Vec<String>> {
        self.ask(|tx| Command::Message(text.to_string(), tx))
    }

    pub fn subscribe(&self, capacity: usize) -> Option<Arc<Subscriber>> {
        self.ask(|tx| Command::Subscribe(capacity, tx))
    }

    pub fn snapshot(&self) -> Option<Snapshot> {
        self.ask(Command::Snapshot)
    }

    /// The provenance log as JSONL.
    pub fn provenance(&self) -> Option<String> {
        self.ask(Command::Provenance)
    }

    /// Run `f` on the loop thread with the session.
    pub fn with<T: Send + 'static>(&self, f: impl FnOnce(&mut Session) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = bounded(1);
        let job = Box::new(move |s: &mut Session| {
            let _ = tx.send(f(s));
        });
        self.commands.send(Command::With(job)).ok()?;
        rx.recv().ok()
    }
}
