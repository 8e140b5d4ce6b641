use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, Weak};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

/// Message kinds on the session stream.
pub mod kind {
    pub const QUAD_BATCH: &str = "quad-batch";
    pub const ETA_UPDATE: &str = "eta-update";
    pub const RECON_UPDATE: &str = "recon-update";
    pub const RATE_UPDATE: &str = "rate-update";
    pub const KNOB_ACK: &str = "knob-ack";
    pub const SNAPSHOT: &str = "snapshot";
    pub const ERROR: &str = "error";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: String,
    /// Strictly increasing per subscriber; gaps mark dropped messages.
    pub seq: u64,
    /// Milliseconds since session start.
    pub t_ms: u64,
    pub payload: serde_json::Value,
}

impl Envelope {
    /// Messages that may be discarded when a subscriber falls behind.
    pub fn is_droppable(&self) -> bool {
        self.kind == kind::QUAD_BATCH
    }
}

pub const DEFAULT_QUEUE_CAPACITY: usize = 256;
/// Multiple of the capacity at which a subscriber holding only undroppable messages is cut off.
const HARD_CAP_FACTOR: usize = 4;

#[derive(Debug)]
struct Queue {
    messages: VecDeque<Envelope>,
    next_seq: u64,
    dropped: u64,
}

#[derive(Debug)]
pub(crate) struct SubscriberQueue {
    queue: Mutex<Queue>,
    ready: Condvar,
    notify: Notify,
    closed: AtomicBool,
    capacity: usize,
}

impl SubscriberQueue {
    fn push(&self, kind: &str, t_ms: u64, payload: &serde_json::Value) {
        if self.closed.load(Ordering::Acquire) {
            return;
        }
        let mut q = self.queue.lock().unwrap();
        let seq = q.next_seq;
        q.next_seq += 1;
        q.messages.push_back(Envelope {
            kind: kind.to_string(),
            seq,
            t_ms,
            payload: payload.clone(),
        });
        while q.messages.len() > self.capacity {
            match q.messages.iter().position(Envelope::is_droppable) {
                Some(i) => {
                    q.messages.remove(i);
                    q.dropped += 1;
                }
                None => break,
            }
        }
        if q.messages.len() > self.capacity * HARD_CAP_FACTOR {
            q.messages.clear();
            self.closed.store(true, Ordering::Release);
        }
        drop(q);
        self.ready.notify_all();
        self.notify.notify_one();
    }

    fn close(&self) {
        self.closed.store(true, Ordering::Release);
        self.ready.notify_all();
        self.notify.notify_one();
    }
}

/// Fan-out of session messages to independent bounded queues.
#[derive(Debug)]
pub struct Telemetry {
    start: Instant,
    subscribers: Mutex<Vec<Weak<SubscriberQueue>>>,
    published: AtomicU64,
}

impl Telemetry {
    pub fn new(start: Instant) -> Self {
        Self {
            start,
            subscribers: Mutex::new(Vec::new()),
            published: AtomicU64::new(0),
        }
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }

    pub fn subscribe(&self, capacity: usize) -> Subscription {
        let queue = Arc::new(SubscriberQueue {
            queue: Mutex::new(Queue {
                messages: VecDeque::new(),
                next_seq: 0,
                dropped: 0,
            }),
            ready: Condvar::new(),
            notify: Notify::new(),
            closed: AtomicBool::new(false),
            capacity: capacity.max(1),
        });
        self.subscribers.lock().unwrap().push(Arc::downgrade(&queue));
        Subscription { queue }
    }

    /// Delivers to every live subscriber; never blocks on slow readers.
    pub fn publish(&self, kind: &str, payload: serde_json::Value) {
        let t_ms = self.elapsed_ms();
        self.published.fetch_add(1, Ordering::Relaxed);
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|w| match w.upgrade() {
            Some(q) if !q.closed.load(Ordering::Acquire) => {
                q.push(kind, t_ms, &payload);
                true
            }
            _ => false,
        });
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers
            .lock()
            .unwrap()
            .iter()
            .filter(|w| w.strong_count() > 0)
            .count()
    }

    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    pub fn close_all(&self) {
        for q in self.subscribers.lock().unwrap().drain(..).filter_map(|w| w.upgrade()) {
            q.close();
        }
    }
}

/// Receiving end of one subscriber queue.
#[derive(Debug)]
pub struct Subscription {
    queue: Arc<SubscriberQueue>,
}

impl Subscription {
    /// Queues a message for this subscriber only.
    pub fn send_direct(&self, kind: &str, payload: serde_json::Value, t_ms: u64) {
        self.queue.push(kind, t_ms, &payload);
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.queue.queue.lock().unwrap().messages.pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queue.queue.lock().unwrap();
        loop {
            if let Some(m) = q.messages.pop_front() {
                return Some(m);
            }
            if self.is_closed() {
                return None;
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            q = self.queue.ready.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    /// Waits for the next message; `None` once the subscriber is closed.
    pub async fn recv(&self) -> Option<Envelope> {
        loop {
            if let Some(m) = self.try_recv() {
                return Some(m);
            }
            if self.is_closed() {
                return None;
            }
            self.queue.notify.notified().await;
        }
    }

    pub fn is_closed(&self) -> bool {
        self.queue.closed.load(Ordering::Acquire)
    }

    pub fn dropped(&self) -> u64 {
        self.queue.queue.lock().unwrap().dropped
    }

    pub fn pending(&self) -> usize {
        self.queue.queue.lock().unwrap().messages.len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.close();
    }
}
