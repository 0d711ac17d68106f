//! Copies of server pushes for each subscriber.
//!
//! Queues are bounded so a slow client never holds up the session. When a
//! queue is full the oldest snapshot-class message goes first, since a newer
//! snapshot supersedes it; only if there is none does the oldest event go.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::protocol::{Envelope, ServerMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageClass {
    /// Superseded by the next one of its kind.
    Snapshot,
    Event,
}

type Waker = Box<dyn Fn() + Send + Sync>;

pub struct Subscriber {
    capacity: usize,
    queue: Mutex<VecDeque<(MessageClass, String)>>,
    dropped: AtomicU64,
    closed: AtomicBool,
    waker: Mutex<Option<Waker>>,
}

impl std::fmt::Debug for Subscriber {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscriber")
            .field("capacity", &self.capacity)
            .field("queued", &self.len())
            .field("dropped", &self.dropped())
            .finish()
    }
}

impl Subscriber {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            queue: Mutex::new(VecDeque::new()),
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            waker: Mutex::new(None),
        }
    }

    /// Called after every push, e.g. to wake an async writer.
    pub fn set_waker(&self, waker: impl Fn() + Send + Sync + 'static) {
        *self.waker.lock().expect("waker lock") = Some(Box::new(waker));
    }

    fn push(&self, class: MessageClass, text: String) {
        {
            let mut q = self.queue.lock().expect("queue lock");
            if q.len() >= self.capacity {
                let victim = q
                    .iter()
                    .position(|(c, _)| *c == MessageClass::Snapshot)
                    .unwrap_or(0);
                q.remove(victim);
                self.dropped.fetch_add(1, Ordering::Relaxed);
            }
            q.push_back((class, text));
        }
        if let Some(w) = self.waker.lock().expect("waker lock").as_ref() {
            w();
        }
    }

    pub fn pop(&self) -> Option<String> {
        self.queue.lock().expect("queue lock").pop_front().map(|(_, t)| t)
    }

    pub fn drain(&self) -> Vec<String> {
        self.queue.lock().expect("queue lock").drain(..).map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("queue lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    /// Stop receiving; the fan-out forgets closed subscribers.
    pub fn close(&self) {
        self.closed.store(true, Ordering::Relaxed);
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Default)]
pub struct Fanout {
    subscribers: Mutex<Vec<Arc<Subscriber>>>,
}

impl Fanout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn subscribe(&self, capacity: usize) -> Arc<Subscriber> {
        let sub = Arc::new(Subscriber::new(capacity));
        self.subscribers.lock().expect("subscribers lock").push(Arc::clone(&sub));
        sub
    }

    pub fn has_subscribers(&self) -> bool {
        let mut subs = self.subscribers.lock().expect("subscribers lock");
        subs.retain(|s| !s.is_closed());
        !subs.is_empty()
    }

    pub fn publish(&self, seq: u64, msg: &ServerMessage, class: MessageClass) {
        let mut subs = self.subscribers.lock().expect("subscribers lock");
        subs.retain(|s| !s.is_closed());
        if subs.is_empty() {
            return;
        }
        let text = serde_json::to_string(&Envelope {
            seq,
            body: msg.clone(),
        })
        .expect("server messages serialize");
        for s in subs.iter() {
            s.push(class, text.clone());
        }
    }
}
