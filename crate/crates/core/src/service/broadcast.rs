use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::Duration;

use super::event::{PredictionEvent, StreamMessage};

struct QueueState {
    buf: VecDeque<StreamMessage>,
    /// Events evicted since the subscriber last read; reported as one gap.
    missed: u64,
    closed: bool,
}

struct Queue {
    state: Mutex<QueueState>,
    ready: Condvar,
    capacity: usize,
}

impl Queue {
    fn lock(&self) -> MutexGuard<'_, QueueState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn push(&self, msg: StreamMessage) {
        let mut st = self.lock();
        if st.buf.len() >= self.capacity {
            // Terminal messages are never evicted; they are always last.
            if let Some(StreamMessage::Event(_)) = st.buf.pop_front() {
                st.missed += 1;
            }
        }
        if msg.is_terminal() {
            st.closed = true;
        }
        st.buf.push_back(msg);
        self.ready.notify_all();
    }
}

struct Hub {
    history: Vec<PredictionEvent>,
    subscribers: Vec<Weak<Queue>>,
    terminal: Option<StreamMessage>,
}

/// Fans messages out to any number of subscribers without ever blocking the
/// publisher. Each subscriber has its own bounded queue; when it falls
/// behind, its oldest events are dropped and a gap marker takes their place.
#[derive(Clone)]
pub struct Broadcaster {
    hub: Arc<Mutex<Hub>>,
    capacity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Received {
    Message(StreamMessage),
    Timeout,
    /// The session ended and every message has been delivered.
    Closed,
}

pub struct Subscription {
    queue: Arc<Queue>,
}

impl Broadcaster {
    pub fn new(queue_capacity: usize) -> Self {
        Self {
            hub: Arc::new(Mutex::new(Hub { history: Vec::new(), subscribers: Vec::new(), terminal: None })),
            capacity: queue_capacity.max(1),
        }
    }

    fn lock(&self) -> MutexGuard<'_, Hub> {
        self.hub.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn publish(&self, msg: StreamMessage) {
        let mut hub = self.lock();
        if hub.terminal.is_some() {
            return;
        }
        match &msg {
            StreamMessage::Event(ev) => hub.history.push(ev.clone()),
            m if m.is_terminal() => hub.terminal = Some(m.clone()),
            _ => {}
        }
        hub.subscribers.retain(|w| match w.upgrade() {
            Some(q) => {
                q.push(msg.clone());
                true
            }
            None => false,
        });
    }

    /// Receives everything published from now on.
    pub fn subscribe(&self) -> Subscription {
        self.subscribe_with_history().1
    }

    /// Snapshot of past events plus a subscription that continues exactly
    /// where the snapshot ends.
    pub fn subscribe_with_history(&self) -> (Vec<PredictionEvent>, Subscription) {
        let mut hub = self.lock();
        let queue = Arc::new(Queue {
            state: Mutex::new(QueueState { buf: VecDeque::new(), missed: 0, closed: false }),
            ready: Condvar::new(),
            capacity: self.capacity,
        });
        if let Some(t) = &hub.terminal {
            queue.push(t.clone());
        } else {
            hub.subscribers.push(Arc::downgrade(&queue));
        }
        (hub.history.clone(), Subscription { queue })
    }

    pub fn history(&self) -> Vec<PredictionEvent> {
        self.lock().history.clone()
    }

    pub fn subscriber_count(&self) -> usize {
        let mut hub = self.lock();
        hub.subscribers.retain(|w| w.strong_count() > 0);
        hub.subscribers.len()
    }

    pub fn is_finished(&self) -> bool {
        self.lock().terminal.is_some()
    }
}

impl Subscription {
    /// Next message, waiting at most `timeout`.
    pub fn recv_timeout(&self, timeout: Duration) -> Received {
        let q = &self.queue;
        let mut st = q.lock();
        if st.buf.is_empty() && st.missed == 0 && !st.closed {
            st = q.ready.wait_timeout_while(st, timeout, |s| s.buf.is_empty() && s.missed == 0).unwrap_or_else(|e| e.into_inner()).0;
        }
        if st.missed > 0 {
            let missed_events = std::mem::take(&mut st.missed);
            return Received::Message(StreamMessage::Gap { missed_events, dropped_audio_s: 0.0 });
        }
        match st.buf.pop_front() {
            Some(m) => Received::Message(m),
            None if st.closed => Received::Closed,
            None => Received::Timeout,
        }
    }

    pub fn try_recv(&self) -> Received {
        self.recv_timeout(Duration::ZERO)
    }
}
