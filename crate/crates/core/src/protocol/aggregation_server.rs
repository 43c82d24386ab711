//! The aggregation server: buffers encrypted updates per tag and, once a
//! tag's update count reaches the epoch threshold, folds every buffered
//! update into one homomorphic sum. It only ever touches ciphertexts.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use num_traits::One;

use crate::paillier::PaillierPublicKey;

use super::{AggregationRequest, Notification, NotificationKind, Tag, Update};

/// What happened to an inbound update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Buffered,
    /// Tag already decided; discarded and counted.
    DroppedStale,
    Rejected(MalformedReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MalformedReason {
    WrongLength { expected: usize, got: usize },
    /// Ciphertexts within one update disagree on their key.
    MixedFingerprints,
    /// Update key does not match the epoch key announced for its tag.
    ForeignKey,
    /// Share tagged for a different epoch than the update.
    ShareTagMismatch,
    /// Share index already seen under this tag: a replay or a forgery.
    DuplicateShareIndex(u64),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::WrongLength { expected, got } => {
                write!(f, "expected {expected} ciphertexts, got {got}")
            }
            Self::MixedFingerprints => write!(f, "ciphertexts from mixed key pairs"),
            Self::ForeignKey => write!(f, "update encrypted under a foreign key"),
            Self::ShareTagMismatch => write!(f, "share tag differs from update tag"),
            Self::DuplicateShareIndex(i) => write!(f, "share index {i} already submitted"),
        }
    }
}

/// Counters the runners expose; `dropped_stale` is the discard metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub buffered_total: u64,
    pub dropped_stale: u64,
    pub rejected_malformed: u64,
    pub aggregations_started: u64,
}

#[derive(Debug, Default)]
struct TagBuffer {
    updates: Vec<Update>,
    in_flight: bool,
    /// Every share index ever accepted under this tag, including ones
    /// already consumed by an in-flight request.
    seen_indices: BTreeSet<u64>,
}

/// Per-tag facts learned from encryption-server notifications.
#[derive(Debug, Clone)]
struct EpochInfo {
    threshold: usize,
    public_key: Option<PaillierPublicKey>,
}

#[derive(Debug)]
pub struct AggregationServer {
    model_len: usize,
    /// Tags strictly below this are decided; their updates are discarded.
    decided_below: Tag,
    live_tag: Option<Tag>,
    epochs: BTreeMap<Tag, EpochInfo>,
    buffers: BTreeMap<Tag, TagBuffer>,
    stats: BufferStats,
}

impl AggregationServer {
    pub fn new(model_len: usize) -> Self {
        Self {
            model_len,
            decided_below: 0,
            live_tag: None,
            epochs: BTreeMap::new(),
            buffers: BTreeMap::new(),
            stats: BufferStats::default(),
        }
    }

    pub fn stats(&self) -> BufferStats {
        self.stats
    }

    pub fn live_tag(&self) -> Option<Tag> {
        self.live_tag
    }

    pub fn buffered_count(&self, tag: Tag) -> usize {
        self.buffers.get(&tag).map(|b| b.updates.len()).unwrap_or(0)
    }

    pub fn is_in_flight(&self, tag: Tag) -> bool {
        self.buffers.get(&tag).map(|b| b.in_flight).unwrap_or(false)
    }

    /// Digests a notification from the encryption server. A success
    /// decides every older tag: their leftover updates are discarded.
    pub fn observe_notification(&mut self, n: &Notification, public_key: PaillierPublicKey) {
        self.epochs
            .insert(n.tag, EpochInfo { threshold: n.threshold, public_key: Some(public_key) });
        self.live_tag = Some(n.tag);
        match n.kind {
            NotificationKind::EpochOpen => {}
            NotificationKind::AggregationSucceeded => {
                self.decided_below = self.decided_below.max(n.tag);
                let dead: Vec<Tag> =
                    self.buffers.range(..n.tag).map(|(tag, _)| *tag).collect();
                for tag in dead {
                    if let Some(buffer) = self.buffers.remove(&tag) {
                        self.stats.dropped_stale += buffer.updates.len() as u64;
                    }
                    self.epochs.remove(&tag);
                }
            }
            NotificationKind::AggregationFailed(_) => {
                // consumed updates stay consumed; the tag itself remains live
                if let Some(buffer) = self.buffers.get_mut(&n.tag) {
                    buffer.in_flight = false;
                }
            }
        }
    }

    /// Buffers an update unless its tag is already decided or its shape
    /// is wrong. Open ingestion otherwise: anyone may submit.
    pub fn receive_update(&mut self, update: Update) -> ReceiveOutcome {
        if update.tag < self.decided_below {
            self.stats.dropped_stale += 1;
            return ReceiveOutcome::DroppedStale;
        }
        if update.ciphertexts.len() != self.model_len {
            self.stats.rejected_malformed += 1;
            return ReceiveOutcome::Rejected(MalformedReason::WrongLength {
                expected: self.model_len,
                got: update.ciphertexts.len(),
            });
        }
        let mut fingerprints = update.ciphertexts.iter().map(|c| c.key_fingerprint());
        if let Some(first) = fingerprints.next() {
            if fingerprints.any(|fp| fp != first) {
                self.stats.rejected_malformed += 1;
                return ReceiveOutcome::Rejected(MalformedReason::MixedFingerprints);
            }
            if let Some(expected) = self
                .epochs
                .get(&update.tag)
                .and_then(|info| info.public_key.as_ref())
            {
                if first != expected.fingerprint() {
                    self.stats.rejected_malformed += 1;
                    return ReceiveOutcome::Rejected(MalformedReason::ForeignKey);
                }
            }
        }
        if update.share.tag != update.tag {
            self.stats.rejected_malformed += 1;
            return ReceiveOutcome::Rejected(MalformedReason::ShareTagMismatch);
        }
        let buffer = self.buffers.entry(update.tag).or_default();
        if !buffer.seen_indices.insert(update.share.index) {
            self.stats.rejected_malformed += 1;
            return ReceiveOutcome::Rejected(MalformedReason::DuplicateShareIndex(
                update.share.index,
            ));
        }
        buffer.updates.push(update);
        self.stats.buffered_total += 1;
        ReceiveOutcome::Buffered
    }

    /// Triggers once the buffered count for `tag` reaches its threshold:
    /// every currently buffered update is folded in (t′ may exceed t) and
    /// the tag is marked in flight until the encryption server answers.
    pub fn try_aggregate(&mut self, tag: Tag) -> Option<AggregationRequest> {
        let info = self.epochs.get(&tag)?;
        let public_key = info.public_key.clone()?;
        let threshold = info.threshold;
        let buffer = self.buffers.get_mut(&tag)?;
        if buffer.in_flight {
            return None;
        }
        // Updates buffered before this epoch's key was announced could not
        // be checked against it at ingestion; weed them out now, together
        // with any ciphertext value outside the unit group.
        let before = buffer.updates.len();
        buffer.updates.retain(|u| {
            u.ciphertexts
                .iter()
                .all(|c| public_key.validate_ciphertext(c).is_ok())
        });
        self.stats.rejected_malformed += (before - buffer.updates.len()) as u64;
        if buffer.updates.len() < threshold {
            return None;
        }
        let updates = core::mem::take(&mut buffer.updates);
        buffer.in_flight = true;

        let model_len = self.model_len;
        let ones = alloc::vec![BigUint::one(); updates.len()];
        let aggregate: Vec<_> = (0..model_len)
            .map(|j| {
                let column: Vec<_> = updates.iter().map(|u| u.ciphertexts[j].clone()).collect();
                public_key
                    .eval(&column, &ones)
                    .expect("every folded ciphertext was validated above")
            })
            .collect();
        let shares = updates.into_iter().map(|u| u.share).collect();
        self.stats.aggregations_started += 1;
        Some(AggregationRequest { tag, aggregate, shares })
    }

    /// Convenience: trigger on the live tag, if any.
    pub fn try_aggregate_live(&mut self) -> Option<AggregationRequest> {
        self.try_aggregate(self.live_tag?)
    }
}
