//! Per-recipient delivery queues and delivery bookkeeping.

use std::collections::HashMap;
use std::sync::Mutex;

use rpm_core::notify::{route, Notification, Subscription};
use rpm_core::wire::TopicEvent;
use serde::Serialize;
use tokio::sync::mpsc;

/// Upper bound on kept delivery records; older ones are dropped first.
const DELIVERY_LOG_CAP: usize = 1_000_000;

struct Queue {
    tx: mpsc::UnboundedSender<Notification>,
    rx: Mutex<Option<mpsc::UnboundedReceiver<Notification>>>,
}

/// One acknowledged notification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Delivery {
    pub nid: String,
    pub recipient_id: String,
    pub created_ms: i64,
    pub dispatched_ms: i64,
    pub delivered_ms: i64,
    pub latency_ms: i64,
}

/// Routes topic events to one queue per configured recipient. Queues exist
/// from startup, so notifications wait for a recipient that is offline.
pub struct Router {
    subscriptions: Vec<Subscription>,
    next_id: Mutex<u64>,
    queues: HashMap<String, Queue>,
    deliveries: Mutex<Vec<Delivery>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimError {
    UnknownRecipient,
    Busy,
}

impl ClaimError {
    pub fn code(self) -> &'static str {
        match self {
            ClaimError::UnknownRecipient => "unknown_recipient",
            ClaimError::Busy => "recipient_busy",
        }
    }
}

impl Router {
    pub fn new(subscriptions: Vec<Subscription>) -> Self {
        let mut queues = HashMap::new();
        for s in &subscriptions {
            queues.entry(s.recipient_id.clone()).or_insert_with(|| {
                let (tx, rx) = mpsc::unbounded_channel();
                Queue {
                    tx,
                    rx: Mutex::new(Some(rx)),
                }
            });
        }
        Self {
            subscriptions,
            next_id: Mutex::new(1),
            queues,
            deliveries: Mutex::new(Vec::new()),
        }
    }

    pub fn subscriptions(&self) -> &[Subscription] {
        &self.subscriptions
    }

    /// Queues one notification per matching subscription. Callers serialize
    /// per patient, so each recipient sees a patient's events in order.
    pub fn dispatch(&self, event: &TopicEvent, created_ms: i64) -> usize {
        let mut next_id = self.next_id.lock().unwrap();
        let notes = route(event, created_ms, &self.subscriptions, &mut next_id);
        let n = notes.len();
        for note in notes {
            if let Some(q) = self.queues.get(&note.recipient_id) {
                // the receiver lives in the router while nobody holds it
                let _ = q.tx.send(note);
            }
        }
        n
    }

    /// Takes the recipient's queue for one consumer connection.
    pub fn claim(&self, recipient: &str) -> Result<mpsc::UnboundedReceiver<Notification>, ClaimError> {
        let q = self.queues.get(recipient).ok_or(ClaimError::UnknownRecipient)?;
        q.rx.lock().unwrap().take().ok_or(ClaimError::Busy)
    }

    /// Returns a queue taken by [`claim`](Self::claim).
    pub fn release(&self, recipient: &str, rx: mpsc::UnboundedReceiver<Notification>) {
        if let Some(q) = self.queues.get(recipient) {
            *q.rx.lock().unwrap() = Some(rx);
        }
    }

    pub fn record_delivery(&self, n: &Notification) {
        let (Some(dispatched_ms), Some(delivered_ms), Some(latency_ms)) = (n.dispatched_ms, n.delivered_ms, n.latency_ms()) else {
            return;
        };
        let mut log = self.deliveries.lock().unwrap();
        if log.len() >= DELIVERY_LOG_CAP {
            log.drain(..DELIVERY_LOG_CAP / 2);
        }
        log.push(Delivery {
            nid: n.notification_id.clone(),
            recipient_id: n.recipient_id.clone(),
            created_ms: n.created_ms,
            dispatched_ms,
            delivered_ms,
            latency_ms,
        });
    }

    pub fn deliveries(&self, recipient: Option<&str>) -> Vec<Delivery> {
        self.deliveries
            .lock()
            .unwrap()
            .iter()
            .filter(|d| recipient.is_none_or(|r| d.recipient_id == r))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rpm_core::notify::{PatientFilter, Role};
    use rpm_core::wire::FlagRecord;
    use rpm_core::{FlagKind, Severity};

    fn flag(pid: &str, from: i64) -> TopicEvent {
        TopicEvent::Flag(FlagRecord {
            flag: FlagKind::Gap,
            pid: pid.into(),
            did: "d".into(),
            from,
            to: None,
            ch: vec![],
        })
    }

    #[test]
    fn queues_per_recipient_preserve_order() {
        let subs = vec![
            Subscription::new("a", Role::Admin, PatientFilter::All, Severity::Advisory).unwrap(),
            Subscription::new("b", Role::PCP, PatientFilter::All, Severity::HighSeverity).unwrap(),
        ];
        let r = Router::new(subs);
        assert_eq!(r.dispatch(&flag("p", 1), 10), 1);
        assert_eq!(r.dispatch(&flag("p", 2), 11), 1);
        let mut rx = r.claim("a").unwrap();
        assert_eq!(r.claim("a").unwrap_err(), ClaimError::Busy);
        assert_eq!(r.claim("zz").unwrap_err(), ClaimError::UnknownRecipient);
        let first = rx.try_recv().unwrap();
        let second = rx.try_recv().unwrap();
        assert_eq!((first.created_ms, second.created_ms), (10, 11));
        assert!(rx.try_recv().is_err());
        r.release("a", rx);
        assert!(r.claim("a").is_ok());
        assert!(r.claim("b").unwrap().try_recv().is_err());
    }
}
