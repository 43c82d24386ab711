//! The three role state machines and the messages they exchange.
//!
//! Everything here is transport-agnostic: each state machine consumes one
//! event at a time (callers serialize delivery), timestamps come in as
//! plain milliseconds, and randomness is injected. Running the roles over
//! sockets or inside a deterministic in-process simulation is purely a
//! matter of who calls these methods.

mod aggregation_server;
mod client;
mod encryption_server;

pub use aggregation_server::{AggregationServer, BufferStats, MalformedReason, ReceiveOutcome};
pub use client::ClientState;
pub use encryption_server::{EncryptionServer, EncryptionServerConfig, RequestError};

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::encoding::ModelVector;
use crate::paillier::{Ciphertext, PaillierPublicKey};
use crate::shamir::Share;

/// Version counter for the global model. Starts at 0 and advances by
/// exactly one per successful aggregation.
pub type Tag = u64;

/// The encryption server's answer to a client request: everything a
/// client needs to train and submit one update for the current epoch.
#[derive(Debug, Clone)]
pub struct ClientResponse {
    pub tag: Tag,
    pub public_key: PaillierPublicKey,
    pub share: Share,
    pub global_model: ModelVector,
    pub threshold: usize,
}

/// A client's message to the aggregation server: one encrypted local
/// model plus the share that proves an epoch key was handed out for it.
#[derive(Debug, Clone)]
pub struct Update {
    pub tag: Tag,
    pub client_id: String,
    /// Per-(client, tag) update counter.
    pub count: u64,
    pub ciphertexts: Vec<Ciphertext>,
    pub share: Share,
}

/// The aggregation server's message to the encryption server: the
/// homomorphically summed model and the shares of every folded update.
#[derive(Debug, Clone)]
pub struct AggregationRequest {
    pub tag: Tag,
    pub aggregate: Vec<Ciphertext>,
    pub shares: Vec<Share>,
}

/// Why an aggregation request was turned down. Each class is distinct so
/// callers can tell a stale request from an attack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    /// Request tag does not match the live epoch.
    TagMismatch,
    /// Fewer shares than the epoch threshold.
    InsufficientShares,
    /// Shares do not recombine to the epoch secret.
    CombineMismatch,
    /// The summed ciphertext failed to decrypt under the epoch key.
    DecryptionFailed,
}

impl RejectionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::TagMismatch => "tag_mismatch",
            Self::InsufficientShares => "insufficient_shares",
            Self::CombineMismatch => "combine_mismatch",
            Self::DecryptionFailed => "decryption_failed",
        }
    }

    pub fn from_str(s: &str) -> Option<Self> {
        match s {
            "tag_mismatch" => Some(Self::TagMismatch),
            "insufficient_shares" => Some(Self::InsufficientShares),
            "combine_mismatch" => Some(Self::CombineMismatch),
            "decryption_failed" => Some(Self::DecryptionFailed),
            _ => None,
        }
    }
}

impl fmt::Display for RejectionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of handing an [`AggregationRequest`] to the encryption server.
#[derive(Debug, Clone)]
pub enum AggregationOutcome {
    /// The epoch closed: the model advanced and a fresh epoch opened.
    Accepted {
        /// Tag of the epoch that just closed.
        closed_tag: Tag,
        /// The new live tag (`closed_tag + 1`).
        new_tag: Tag,
        /// Number of updates folded into the new model (the divisor).
        update_count: u64,
    },
    /// The request was refused; tag, model, and keys are unchanged.
    Rejected { tag: Tag, reason: RejectionReason },
}

/// Broadcast to every party after each epoch event, and to a newly
/// connected party as a greeting. Carries the live tag and its threshold
/// so the aggregation server knows when to trigger; keys and the model
/// are deliberately absent — parties re-request those.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub tag: Tag,
    pub threshold: usize,
    pub kind: NotificationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NotificationKind {
    /// Initial greeting: the epoch named by `tag` is live.
    EpochOpen,
    /// An aggregation succeeded; `tag` is the new live epoch.
    AggregationSucceeded,
    /// An aggregation was rejected; `tag` stays live.
    AggregationFailed(RejectionReason),
}
