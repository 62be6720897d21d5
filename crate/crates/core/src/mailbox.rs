//! Per-participant mailboxes with at-least-once delivery.
//!
//! A mailbox is an append-only, seq-ordered list of deliveries plus one
//! acknowledgement cursor. Reading never consumes: `poll` returns the same
//! deliveries until the client moves on by passing a later `after_seq`.
//! Live subscribers get each delivery pushed after it is durable; a
//! subscriber that falls more than its buffer behind is disconnected and
//! resumes from `poll`. Consumers deduplicate by `delivery_id`.

use std::collections::{BTreeMap, HashMap};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;

use crate::approval::SessionOutcome;
use crate::model::{Attachment, CircleId, DeliveryId, NotificationId, ParticipantId};

/// Largest batch `poll` returns when the caller does not ask for less.
pub const DEFAULT_MAX_BATCH: usize = 100;

/// Per-subscriber buffer before the subscriber is cut off.
pub const DEFAULT_STREAM_BUFFER: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeliveryKind {
    Direct,
    ApprovalRequest,
    ApprovalResult,
    RejectionNotice,
}

/// What the recipient sees.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryBody {
    pub type_code: String,
    pub sender: ParticipantId,
    pub circle: CircleId,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attachment: Option<Attachment>,
    /// Set on approval results and rejection notices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<SessionOutcome>,
    /// The approver whose Reject closed the session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_by: Option<ParticipantId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub delivery_id: DeliveryId,
    pub mailbox: ParticipantId,
    pub seq: u64,
    pub notification_id: NotificationId,
    pub kind: DeliveryKind,
    pub body: DeliveryBody,
    pub acked: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub last_acked_seq: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mailbox {
    deliveries: Vec<Delivery>,
    last_acked_seq: u64,
}

impl Mailbox {
    /// Highest seq assigned so far; 0 when empty.
    pub fn head(&self) -> u64 {
        self.deliveries.len() as u64
    }

    pub fn cursor(&self) -> Cursor {
        Cursor {
            last_acked_seq: self.last_acked_seq,
        }
    }

    /// Deliveries with `seq > after_seq`, ascending, at most `max_batch`.
    pub fn poll(&self, after_seq: u64, max_batch: usize) -> &[Delivery] {
        let start = (after_seq as usize).min(self.deliveries.len());
        let end = start.saturating_add(max_batch).min(self.deliveries.len());
        &self.deliveries[start..end]
    }

    pub fn all(&self) -> &[Delivery] {
        &self.deliveries
    }

    pub fn get(&self, seq: u64) -> Option<&Delivery> {
        seq.checked_sub(1)
            .and_then(|i| self.deliveries.get(i as usize))
    }

    /// Appends a delivery whose seq must be `head() + 1`.
    pub(crate) fn push(&mut self, delivery: Delivery) -> Result<(), String> {
        if delivery.seq != self.head() + 1 {
            return Err(format!(
                "delivery seq {} does not follow mailbox head {}",
                delivery.seq,
                self.head()
            ));
        }
        self.deliveries.push(delivery);
        Ok(())
    }

    /// Moves the cursor forward and marks everything up to it acked. Returns
    /// the deliveries that became acked by this call.
    pub(crate) fn ack(&mut self, up_to_seq: u64) -> Vec<Delivery> {
        let up_to = up_to_seq.min(self.head());
        if up_to <= self.last_acked_seq {
            return Vec::new();
        }
        let newly = &mut self.deliveries[self.last_acked_seq as usize..up_to as usize];
        for d in newly.iter_mut() {
            d.acked = true;
        }
        let newly = newly.to_vec();
        self.last_acked_seq = up_to;
        newly
    }
}

/// All mailboxes, keyed by owner.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mailboxes {
    boxes: BTreeMap<ParticipantId, Mailbox>,
}

impl Mailboxes {
    pub fn get(&self, owner: &ParticipantId) -> Option<&Mailbox> {
        self.boxes.get(owner)
    }

    pub(crate) fn get_mut(&mut self, owner: &ParticipantId) -> Option<&mut Mailbox> {
        self.boxes.get_mut(owner)
    }

    pub(crate) fn create(&mut self, owner: ParticipantId) {
        self.boxes.entry(owner).or_default();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParticipantId, &Mailbox)> {
        self.boxes.iter()
    }

    pub fn total_deliveries(&self) -> u64 {
        self.boxes.values().map(Mailbox::head).sum()
    }
}

/// A live feed of new deliveries for one mailbox.
///
/// The feed ends (yields `None`) when the subscriber lagged past its buffer
/// or the hub was dropped; the client then resumes with
/// `poll(after_seq = last seen seq)`.
#[derive(Debug)]
pub struct Subscription {
    mailbox: ParticipantId,
    rx: mpsc::Receiver<Delivery>,
}

impl Subscription {
    pub fn mailbox(&self) -> &ParticipantId {
        &self.mailbox
    }

    pub async fn recv(&mut self) -> Option<Delivery> {
        self.rx.recv().await
    }

    /// Blocking receive for use outside an async runtime.
    pub fn blocking_recv(&mut self) -> Option<Delivery> {
        self.rx.blocking_recv()
    }

    /// Non-blocking receive. `Err(true)` means the stream is closed,
    /// `Err(false)` that nothing is queued right now.
    pub fn try_recv(&mut self) -> Result<Delivery, bool> {
        match self.rx.try_recv() {
            Ok(d) => Ok(d),
            Err(mpsc::error::TryRecvError::Empty) => Err(false),
            Err(mpsc::error::TryRecvError::Disconnected) => Err(true),
        }
    }
}

/// Fan-out of freshly enqueued deliveries to live subscribers. A mailbox may
/// have any number of subscribers (one per device); each gets every delivery.
#[derive(Debug)]
pub struct Hub {
    buffer: usize,
    subscribers: Mutex<HashMap<ParticipantId, Vec<mpsc::Sender<Delivery>>>>,
}

impl Default for Hub {
    fn default() -> Self {
        Self::new(DEFAULT_STREAM_BUFFER)
    }
}

impl Hub {
    pub fn new(buffer: usize) -> Self {
        Self {
            buffer: buffer.max(1),
            subscribers: Mutex::new(HashMap::new()),
        }
    }

    pub fn subscribe(&self, mailbox: &ParticipantId) -> Subscription {
        let (tx, rx) = mpsc::channel(self.buffer);
        self.subscribers
            .lock()
            .entry(mailbox.clone())
            .or_default()
            .push(tx);
        Subscription {
            mailbox: mailbox.clone(),
            rx,
        }
    }

    /// Pushes to every live subscriber of the delivery's mailbox. Never
    /// blocks: a full subscriber is dropped.
    pub fn publish(&self, delivery: &Delivery) {
        let mut subs = self.subscribers.lock();
        let Some(list) = subs.get_mut(&delivery.mailbox) else {
            return;
        };
        list.retain(|tx| match tx.try_send(delivery.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                tracing::debug!(mailbox = %delivery.mailbox, "subscriber lagged, closing its stream");
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
        if list.is_empty() {
            subs.remove(&delivery.mailbox);
        }
    }

    pub fn subscriber_count(&self, mailbox: &ParticipantId) -> usize {
        self.subscribers
            .lock()
            .get(mailbox)
            .map_or(0, |l| l.iter().filter(|tx| !tx.is_closed()).count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn delivery(mailbox: &ParticipantId, seq: u64) -> Delivery {
        Delivery {
            delivery_id: DeliveryId::nth(seq),
            mailbox: mailbox.clone(),
            seq,
            notification_id: NotificationId::nth(seq),
            kind: DeliveryKind::Direct,
            body: DeliveryBody {
                type_code: "T1".into(),
                sender: ParticipantId::nth(99),
                circle: CircleId::nth(1),
                text: format!("#{seq}"),
                attachment: None,
                outcome: None,
                rejected_by: None,
            },
            acked: false,
        }
    }

    fn filled(n: u64) -> (ParticipantId, Mailbox) {
        let owner = ParticipantId::nth(1);
        let mut m = Mailbox::default();
        for s in 1..=n {
            m.push(delivery(&owner, s)).unwrap();
        }
        (owner, m)
    }

    #[test]
    fn seqs_start_at_one_and_must_be_contiguous() {
        let owner = ParticipantId::nth(1);
        let mut m = Mailbox::default();
        assert!(m.push(delivery(&owner, 2)).is_err());
        m.push(delivery(&owner, 1)).unwrap();
        m.push(delivery(&owner, 2)).unwrap();
        assert_eq!(m.head(), 2);
    }

    #[test]
    fn poll_scans_from_after_seq() {
        let (_, m) = filled(3);
        let seqs = |s: &[Delivery]| s.iter().map(|d| d.seq).collect::<Vec<_>>();
        assert_eq!(seqs(m.poll(0, DEFAULT_MAX_BATCH)), vec![1, 2, 3]);
        assert!(m.poll(3, DEFAULT_MAX_BATCH).is_empty());
        assert!(m.poll(40, DEFAULT_MAX_BATCH).is_empty());
        assert_eq!(seqs(m.poll(1, 1)), vec![2]);
        // reading does not consume
        assert_eq!(m.poll(0, 10), m.poll(0, 10));
    }

    #[test]
    fn cursor_is_monotone_and_idempotent() {
        let (_, mut m) = filled(6);
        assert_eq!(m.ack(5).len(), 5);
        assert!(m.ack(3).is_empty());
        assert_eq!(m.cursor().last_acked_seq, 5);
        let snapshot = m.clone();
        assert!(m.ack(5).is_empty());
        assert_eq!(m, snapshot);
        assert!(m.get(5).unwrap().acked);
        assert!(!m.get(6).unwrap().acked);
    }

    #[test]
    fn live_push_only_after_subscribe() {
        let hub = Hub::new(8);
        let owner = ParticipantId::nth(1);
        hub.publish(&delivery(&owner, 1));
        let mut sub = hub.subscribe(&owner);
        hub.publish(&delivery(&owner, 2));
        assert_eq!(sub.try_recv().unwrap().seq, 2);
        assert_eq!(sub.try_recv(), Err(false));
    }

    #[test]
    fn every_device_gets_every_delivery() {
        let hub = Hub::new(8);
        let owner = ParticipantId::nth(1);
        let mut phone = hub.subscribe(&owner);
        let mut laptop = hub.subscribe(&owner);
        hub.publish(&delivery(&owner, 1));
        assert_eq!(phone.try_recv().unwrap().seq, 1);
        assert_eq!(laptop.try_recv().unwrap().seq, 1);
    }

    #[test]
    fn lagging_subscriber_is_cut_off() {
        let hub = Hub::new(2);
        let owner = ParticipantId::nth(1);
        let mut sub = hub.subscribe(&owner);
        for s in 1..=3 {
            hub.publish(&delivery(&owner, s));
        }
        assert_eq!(sub.try_recv().unwrap().seq, 1);
        assert_eq!(sub.try_recv().unwrap().seq, 2);
        assert_eq!(sub.try_recv(), Err(true));
        assert_eq!(hub.subscriber_count(&owner), 0);
    }
}
