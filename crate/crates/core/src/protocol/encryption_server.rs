//! The encryption server: owns the tag, the per-epoch key pair and share
//! polynomial, and the only copy of the decryption key. It hands out
//! shares to requesting clients and decrypts an aggregate only after the
//! submitted shares recombine to the epoch secret.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::string::{String, ToString};
use core::fmt;

use num_bigint::{BigRng09, BigUint};
use rand::Rng;

use crate::encoding::{decrypt_vector, EncodingConfig, ModelVector};
use crate::paillier::{self, PaillierError, PaillierParams, PaillierPublicKey, PaillierSecretKey};
use crate::shamir::{self, FieldParams, SharePolynomial};

use super::{
    AggregationOutcome, AggregationRequest, ClientResponse, Notification, NotificationKind,
    RejectionReason, Tag,
};

#[derive(Debug, Clone)]
pub struct EncryptionServerConfig {
    pub params: PaillierParams,
    pub field: FieldParams,
    pub encoding: EncodingConfig,
    /// Recovery threshold t: the minimum update count per aggregation.
    pub threshold: usize,
    /// Share budget n: must stay ahead of every request the epoch will see.
    pub share_budget: u64,
    pub model_len: usize,
    /// Requests allowed per client within one window.
    pub rate_limit_count: u32,
    pub rate_limit_window_ms: u64,
}

impl EncryptionServerConfig {
    pub const DEFAULT_SHARE_BUDGET: u64 = 1 << 20;
    pub const DEFAULT_RATE_LIMIT_COUNT: u32 = 10;
    pub const DEFAULT_RATE_LIMIT_WINDOW_MS: u64 = 60_000;
}

/// Why a client request was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RequestError {
    /// Too many requests from this client inside the window; the client
    /// is suspended until its window drains.
    RateLimited { client_id: String },
    /// The epoch's share budget is spent.
    ShareBudgetExhausted,
    /// Share issuance failed (index outgrew the field).
    Shamir(shamir::ShamirError),
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RateLimited { client_id } => {
                write!(f, "client {client_id} exceeded the request rate limit")
            }
            Self::ShareBudgetExhausted => write!(f, "share budget exhausted for this epoch"),
            Self::Shamir(e) => write!(f, "share issuance failed: {e}"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for RequestError {}

/// Everything that lives and dies with one tag. Replaced wholesale on
/// every successful aggregation; the old secret key goes with it.
#[derive(Debug)]
struct EpochState {
    tag: Tag,
    secret: BigUint,
    poly: SharePolynomial,
    threshold: usize,
    share_budget: u64,
    issued_count: u64,
    public_key: PaillierPublicKey,
    secret_key: PaillierSecretKey,
    global_model: ModelVector,
}

/// Per-client request history for the abnormal-client defense.
#[derive(Debug, Default)]
struct RequestRecord {
    /// Timestamps (ms) of recent attempts, pruned to the window.
    attempts: VecDeque<u64>,
    refusals: u64,
}

#[derive(Debug)]
pub struct EncryptionServer {
    config: EncryptionServerConfig,
    epoch: EpochState,
    request_log: BTreeMap<String, RequestRecord>,
    rate_limit_refusals: u64,
}

impl EncryptionServer {
    /// Opens epoch 0 with a zero global model.
    pub fn new<R: Rng + ?Sized>(
        config: EncryptionServerConfig,
        rng: &mut R,
    ) -> Result<Self, PaillierError> {
        let model = ModelVector::zeros(config.model_len);
        let epoch = Self::open_epoch(&config, 0, model, rng)?;
        Ok(Self {
            config,
            epoch,
            request_log: BTreeMap::new(),
            rate_limit_refusals: 0,
        })
    }

    fn open_epoch<R: Rng + ?Sized>(
        config: &EncryptionServerConfig,
        tag: Tag,
        global_model: ModelVector,
        rng: &mut R,
    ) -> Result<EpochState, PaillierError> {
        let secret = rng.random_biguint_below(config.field.prime());
        let poly = SharePolynomial::sample(config.threshold, secret.clone(), &config.field, rng)
            .expect("threshold >= 1 and secret is reduced");
        let (public_key, secret_key) = paillier::keygen(config.params, rng)?;
        Ok(EpochState {
            tag,
            secret,
            poly,
            threshold: config.threshold,
            share_budget: config.share_budget,
            issued_count: 0,
            public_key,
            secret_key,
            global_model,
        })
    }

    pub fn current_tag(&self) -> Tag {
        self.epoch.tag
    }

    pub fn threshold(&self) -> usize {
        self.epoch.threshold
    }

    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.epoch.public_key
    }

    pub fn global_model(&self) -> &ModelVector {
        &self.epoch.global_model
    }

    pub fn issued_count(&self) -> u64 {
        self.epoch.issued_count
    }

    pub fn rate_limit_refusals(&self) -> u64 {
        self.rate_limit_refusals
    }

    /// Number of logged request attempts for a client (inside and outside
    /// the current window).
    pub fn logged_attempts(&self, client_id: &str) -> u64 {
        self.request_log
            .get(client_id)
            .map(|r| r.attempts.len() as u64 + r.refusals)
            .unwrap_or(0)
    }

    pub fn logged_refusals(&self, client_id: &str) -> u64 {
        self.request_log.get(client_id).map(|r| r.refusals).unwrap_or(0)
    }

    /// The greeting / broadcast body for the current epoch.
    pub fn notification(&self, kind: NotificationKind) -> Notification {
        Notification {
            tag: self.epoch.tag,
            threshold: self.epoch.threshold,
            kind,
        }
    }

    /// Serves one client request: the live tag, the epoch public key, the
    /// next unissued share, the current global model, and the threshold.
    pub fn handle_request(
        &mut self,
        client_id: &str,
        now_ms: u64,
    ) -> Result<ClientResponse, RequestError> {
        let record = self.request_log.entry(client_id.to_string()).or_default();
        let window_start = now_ms.saturating_sub(self.config.rate_limit_window_ms);
        while let Some(&oldest) = record.attempts.front() {
            if oldest < window_start {
                record.attempts.pop_front();
            } else {
                break;
            }
        }
        if record.attempts.len() >= self.config.rate_limit_count as usize {
            record.refusals += 1;
            self.rate_limit_refusals += 1;
            return Err(RequestError::RateLimited { client_id: client_id.to_string() });
        }
        record.attempts.push_back(now_ms);

        if self.epoch.issued_count >= self.epoch.share_budget {
            return Err(RequestError::ShareBudgetExhausted);
        }
        let index = self.epoch.issued_count + 1;
        let share = self
            .epoch
            .poly
            .share_at(index, self.epoch.tag)
            .map_err(RequestError::Shamir)?;
        self.epoch.issued_count = index;

        Ok(ClientResponse {
            tag: self.epoch.tag,
            public_key: self.epoch.public_key.clone(),
            share,
            global_model: self.epoch.global_model.clone(),
            threshold: self.epoch.threshold,
        })
    }

    /// Verifies and, if the shares check out, decrypts an aggregate:
    /// the epoch then closes and a fresh one opens. Every rejection
    /// leaves tag, model, and keys untouched.
    pub fn handle_aggregation<R: Rng + ?Sized>(
        &mut self,
        request: &AggregationRequest,
        rng: &mut R,
    ) -> Result<AggregationOutcome, PaillierError> {
        let tag = self.epoch.tag;
        if request.tag != tag {
            return Ok(self.reject(RejectionReason::TagMismatch));
        }
        if request.shares.len() < self.epoch.threshold {
            return Ok(self.reject(RejectionReason::InsufficientShares));
        }
        if request.shares.iter().any(|s| s.tag != tag) {
            return Ok(self.reject(RejectionReason::CombineMismatch));
        }
        match shamir::combine(self.epoch.threshold, &request.shares, &self.config.field) {
            Ok(secret) if secret == self.epoch.secret => {}
            _ => return Ok(self.reject(RejectionReason::CombineMismatch)),
        }
        if request.aggregate.len() != self.config.model_len {
            return Ok(self.reject(RejectionReason::DecryptionFailed));
        }
        let update_count = request.shares.len() as u64;
        let new_model = match decrypt_vector(
            &request.aggregate,
            &self.epoch.secret_key,
            update_count,
            &self.config.encoding,
        ) {
            Ok(model) => model,
            Err(_) => return Ok(self.reject(RejectionReason::DecryptionFailed)),
        };

        let new_tag = tag + 1;
        self.epoch = Self::open_epoch(&self.config, new_tag, new_model, rng)?;
        Ok(AggregationOutcome::Accepted { closed_tag: tag, new_tag, update_count })
    }

    fn reject(&self, reason: RejectionReason) -> AggregationOutcome {
        AggregationOutcome::Rejected { tag: self.epoch.tag, reason }
    }

    /// The decrypted model for external observation (simulation reports);
    /// the aggregation server never sees this.
    pub fn secret_key(&self) -> &PaillierSecretKey {
        &self.epoch.secret_key
    }

    /// The stored epoch secret; test-only seam for forgery checks.
    #[cfg(test)]
    pub(crate) fn epoch_secret(&self) -> &BigUint {
        &self.epoch.secret
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shamir::Share;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_config() -> EncryptionServerConfig {
        EncryptionServerConfig {
            params: PaillierParams::new(64).unwrap(),
            field: FieldParams::default(),
            encoding: EncodingConfig::default(),
            threshold: 3,
            share_budget: 16,
            model_len: 2,
            rate_limit_count: 5,
            rate_limit_window_ms: 1_000,
        }
    }

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn server(seed: u64) -> EncryptionServer {
        EncryptionServer::new(test_config(), &mut rng(seed)).unwrap()
    }

    #[test]
    fn startup_opens_epoch_zero() {
        let es = server(1);
        assert_eq!(es.current_tag(), 0);
        assert_eq!(es.issued_count(), 0);
        assert_eq!(es.global_model().values(), &[0.0, 0.0]);
        let n = es.notification(NotificationKind::EpochOpen);
        assert_eq!(n.tag, 0);
        assert_eq!(n.threshold, 3);
    }

    #[test]
    fn requests_issue_sequential_distinct_shares() {
        let mut es = server(2);
        let a = es.handle_request("alice", 0).unwrap();
        let b = es.handle_request("bob", 1).unwrap();
        assert_eq!(a.share.index, 1);
        assert_eq!(b.share.index, 2);
        assert_eq!(a.tag, 0);
        assert_eq!(a.threshold, 3);
        // same client asking again gets a fresh share, both logged
        let a2 = es.handle_request("alice", 2).unwrap();
        assert_eq!(a2.share.index, 3);
        assert_ne!(a.share, a2.share);
        assert_eq!(es.logged_attempts("alice"), 2);
        assert_eq!(es.issued_count(), 3);
    }

    #[test]
    fn rate_limit_suspends_the_spammer() {
        let mut es = server(3);
        for i in 0..5u64 {
            es.handle_request("mallory", i).unwrap();
        }
        let err = es.handle_request("mallory", 5).unwrap_err();
        assert_eq!(err, RequestError::RateLimited { client_id: "mallory".into() });
        assert_eq!(es.logged_refusals("mallory"), 1);
        assert_eq!(es.rate_limit_refusals(), 1);
        // other clients are unaffected
        assert!(es.handle_request("honest", 5).is_ok());
        // …and the spammer recovers once its window drains
        assert!(es.handle_request("mallory", 5_000).is_ok());
    }

    #[test]
    fn share_budget_is_enforced() {
        let mut es = server(4);
        for i in 0..16u64 {
            es.handle_request(&format!("c{i}"), i).unwrap();
        }
        assert_eq!(
            es.handle_request("late", 100).unwrap_err(),
            RequestError::ShareBudgetExhausted
        );
    }

    fn collect_shares(es: &mut EncryptionServer, count: usize) -> Vec<Share> {
        (0..count)
            .map(|i| es.handle_request(&format!("c{i}"), i as u64).unwrap().share)
            .collect()
    }

    fn dummy_aggregate(es: &EncryptionServer, rng: &mut ChaCha20Rng) -> Vec<crate::paillier::Ciphertext> {
        let zero = crate::encoding::encode(0.0, &test_config().encoding, es.public_key().n()).unwrap();
        (0..test_config().model_len)
            .map(|_| es.public_key().encrypt(&zero, rng).unwrap())
            .collect()
    }

    #[test]
    fn aggregation_rejects_stale_tag() {
        let mut es = server(5);
        let mut r = rng(50);
        let req = AggregationRequest { tag: 7, aggregate: vec![], shares: vec![] };
        match es.handle_aggregation(&req, &mut r).unwrap() {
            AggregationOutcome::Rejected { tag, reason } => {
                assert_eq!(tag, 0);
                assert_eq!(reason, RejectionReason::TagMismatch);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn aggregation_rejects_insufficient_shares() {
        let mut es = server(6);
        let mut r = rng(60);
        let shares = collect_shares(&mut es, 2);
        let aggregate = dummy_aggregate(&es, &mut r);
        let req = AggregationRequest { tag: 0, aggregate, shares };
        match es.handle_aggregation(&req, &mut r).unwrap() {
            AggregationOutcome::Rejected { reason, .. } => {
                assert_eq!(reason, RejectionReason::InsufficientShares);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(es.current_tag(), 0);
    }

    #[test]
    fn aggregation_rejects_forged_share() {
        let mut es = server(7);
        let mut r = rng(70);
        let mut shares = collect_shares(&mut es, 3);
        // sanity: the genuine shares do recombine to the epoch secret
        let combined = crate::shamir::combine(3, &shares, &FieldParams::default()).unwrap();
        assert_eq!(&combined, es.epoch_secret());
        // perturb one value
        shares[1].value = (&shares[1].value + 1u32) % FieldParams::default().prime();
        let aggregate = dummy_aggregate(&es, &mut r);
        let req = AggregationRequest { tag: 0, aggregate, shares };
        match es.handle_aggregation(&req, &mut r).unwrap() {
            AggregationOutcome::Rejected { reason, .. } => {
                assert_eq!(reason, RejectionReason::CombineMismatch);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejection_leaves_state_untouched() {
        let mut es = server(8);
        let mut r = rng(80);
        let shares = collect_shares(&mut es, 3);
        let pk_before = es.public_key().clone();
        let model_before = es.global_model().clone();
        let issued_before = es.issued_count();
        // wrong-length aggregate fails at the decryption stage
        let req = AggregationRequest { tag: 0, aggregate: vec![], shares };
        match es.handle_aggregation(&req, &mut r).unwrap() {
            AggregationOutcome::Rejected { reason, .. } => {
                assert_eq!(reason, RejectionReason::DecryptionFailed);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(es.current_tag(), 0);
        assert_eq!(es.public_key(), &pk_before);
        assert_eq!(es.global_model(), &model_before);
        assert_eq!(es.issued_count(), issued_before);
    }

    #[test]
    fn acceptance_advances_tag_and_rotates_keys() {
        let mut es = server(9);
        let mut r = rng(90);
        let shares = collect_shares(&mut es, 3);
        let pk_before = es.public_key().clone();
        let aggregate = dummy_aggregate(&es, &mut r);
        let req = AggregationRequest { tag: 0, aggregate, shares };
        match es.handle_aggregation(&req, &mut r).unwrap() {
            AggregationOutcome::Accepted { closed_tag, new_tag, update_count } => {
                assert_eq!(closed_tag, 0);
                assert_eq!(new_tag, 1);
                assert_eq!(update_count, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(es.current_tag(), 1);
        assert_ne!(es.public_key(), &pk_before);
        assert_eq!(es.issued_count(), 0);
    }
}
