//! Full-stack protocol runs over the in-process state machines: clients
//! request, train, and submit; the aggregation server folds; the
//! encryption server verifies and decrypts. Checks the end-to-end
//! invariants the roles promise each other.

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ppa_afl_core::encoding::{EncodingConfig, ModelVector};
use ppa_afl_core::paillier::PaillierParams;
use ppa_afl_core::protocol::{
    AggregationOutcome, AggregationServer, ClientState, EncryptionServer,
    EncryptionServerConfig, NotificationKind, ReceiveOutcome, RejectionReason, Update,
};
use ppa_afl_core::shamir::FieldParams;

const MODEL_LEN: usize = 4;

fn config(threshold: usize) -> EncryptionServerConfig {
    EncryptionServerConfig {
        params: PaillierParams::new(64).unwrap(),
        field: FieldParams::default(),
        encoding: EncodingConfig::default(),
        threshold,
        share_budget: EncryptionServerConfig::DEFAULT_SHARE_BUDGET,
        model_len: MODEL_LEN,
        rate_limit_count: 100,
        rate_limit_window_ms: 60_000,
    }
}

struct Harness {
    es: EncryptionServer,
    asrv: AggregationServer,
    rng: ChaCha20Rng,
    now_ms: u64,
}

impl Harness {
    fn new(threshold: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let es = EncryptionServer::new(config(threshold), &mut rng).unwrap();
        let mut asrv = AggregationServer::new(MODEL_LEN);
        asrv.observe_notification(
            &es.notification(NotificationKind::EpochOpen),
            es.public_key().clone(),
        );
        Self { es, asrv, rng, now_ms: 0 }
    }

    /// One client request + train + submit; returns the submitted update.
    fn submit(&mut self, client: &mut ClientState, local: Vec<f64>) -> Update {
        self.now_ms += 1;
        let response = self
            .es
            .handle_request(client.client_id(), self.now_ms)
            .unwrap();
        let (update, _) = client
            .build_update(&response, ModelVector::new(local), &mut self.rng)
            .unwrap();
        assert_eq!(
            self.asrv.receive_update(update.clone()),
            ReceiveOutcome::Buffered
        );
        update
    }

    /// Drives buffered updates through aggregation and decryption.
    fn pump(&mut self) -> Option<AggregationOutcome> {
        let request = self.asrv.try_aggregate_live()?;
        let outcome = self.es.handle_aggregation(&request, &mut self.rng).unwrap();
        let kind = match outcome {
            AggregationOutcome::Accepted { .. } => NotificationKind::AggregationSucceeded,
            AggregationOutcome::Rejected { reason, .. } => {
                NotificationKind::AggregationFailed(reason)
            }
        };
        self.asrv
            .observe_notification(&self.es.notification(kind), self.es.public_key().clone());
        Some(outcome)
    }
}

fn clients(n: usize) -> Vec<ClientState> {
    (0..n)
        .map(|i| ClientState::new(format!("client-{i}"), EncodingConfig::default()))
        .collect()
}

#[test]
fn epoch_aggregate_matches_plaintext_mean() {
    let mut h = Harness::new(3, 1);
    let mut cs = clients(3);
    let locals = [
        vec![1.0, -2.0, 0.5, 0.0],
        vec![2.0, 1.0, -0.5, 3.0],
        vec![3.0, 4.0, 0.0, -3.0],
    ];
    for (c, l) in cs.iter_mut().zip(&locals) {
        h.submit(c, l.clone());
    }
    match h.pump().unwrap() {
        AggregationOutcome::Accepted { closed_tag, new_tag, update_count } => {
            assert_eq!((closed_tag, new_tag, update_count), (0, 1, 3));
        }
        other => panic!("unexpected {other:?}"),
    }
    // plaintext FedAvg oracle
    let mean: Vec<f64> = (0..MODEL_LEN)
        .map(|j| locals.iter().map(|l| l[j]).sum::<f64>() / 3.0)
        .collect();
    let got = h.es.global_model().values();
    for (g, w) in got.iter().zip(&mean) {
        assert!((g - w).abs() <= 0.5e-6, "{g} vs {w}");
    }
}

#[test]
fn threshold_gate_holds_end_to_end() {
    let mut h = Harness::new(5, 2);
    let mut cs = clients(5);
    let before = h.es.global_model().clone();
    for c in cs.iter_mut().take(4) {
        h.submit(c, vec![1.0; MODEL_LEN]);
    }
    // four updates: aggregation must not even trigger
    assert!(h.pump().is_none());
    assert_eq!(h.es.current_tag(), 0);
    assert_eq!(h.es.global_model(), &before);

    // the fifth update completes the epoch
    h.submit(&mut cs[4], vec![1.0; MODEL_LEN]);
    match h.pump().unwrap() {
        AggregationOutcome::Accepted { new_tag, update_count, .. } => {
            assert_eq!(new_tag, 1);
            assert_eq!(update_count, 5);
        }
        other => panic!("unexpected {other:?}"),
    }
    for v in h.es.global_model().values() {
        assert!((v - 1.0).abs() <= 0.5e-6);
    }
}

#[test]
fn tags_advance_without_gaps_and_keys_rotate() {
    let mut h = Harness::new(2, 3);
    let mut cs = clients(2);
    let mut seen_tags = vec![h.es.current_tag()];
    let mut seen_keys = vec![h.es.public_key().clone()];
    for _ in 0..4 {
        for c in cs.iter_mut() {
            h.submit(c, vec![0.25; MODEL_LEN]);
        }
        match h.pump().unwrap() {
            AggregationOutcome::Accepted { .. } => {}
            other => panic!("unexpected {other:?}"),
        }
        seen_tags.push(h.es.current_tag());
        seen_keys.push(h.es.public_key().clone());
    }
    assert_eq!(seen_tags, vec![0, 1, 2, 3, 4]);
    for pair in seen_keys.windows(2) {
        assert_ne!(pair[0], pair[1], "epoch keys must be fresh");
    }
}

#[test]
fn share_indices_are_unique_within_an_epoch() {
    let mut h = Harness::new(4, 4);
    let mut indices = std::collections::BTreeSet::new();
    for i in 0..10 {
        let resp = h
            .es
            .handle_request(&format!("c{}", i % 3), i as u64)
            .unwrap();
        assert_eq!(resp.share.tag, 0);
        assert!(indices.insert(resp.share.index), "duplicate share index");
    }
}

#[test]
fn replayed_stale_update_never_changes_the_model() {
    let mut h = Harness::new(2, 5);
    let mut cs = clients(2);
    h.submit(&mut cs[0], vec![1.0; MODEL_LEN]);
    let replay = h.submit(&mut cs[1], vec![3.0; MODEL_LEN]);
    assert!(matches!(
        h.pump().unwrap(),
        AggregationOutcome::Accepted { .. }
    ));
    let model_after = h.es.global_model().clone();
    let drops_before = h.asrv.stats().dropped_stale;

    // the tag-0 update comes back after the epoch advanced
    assert_eq!(h.asrv.receive_update(replay), ReceiveOutcome::DroppedStale);
    assert_eq!(h.asrv.stats().dropped_stale, drops_before + 1);
    assert!(h.pump().is_none());
    assert_eq!(h.es.current_tag(), 1);
    // bit-identical model
    assert_eq!(h.es.global_model(), &model_after);
}

#[test]
fn forged_share_is_rejected_and_the_epoch_recovers() {
    let mut h = Harness::new(2, 6);
    let mut cs = clients(2);
    for c in cs.iter_mut() {
        h.submit(c, vec![2.0; MODEL_LEN]);
    }
    let mut request = h.asrv.try_aggregate_live().unwrap();
    request.shares[0].value =
        (&request.shares[0].value + BigUint::from(1u32)) % FieldParams::default().prime();

    let pk_before = h.es.public_key().clone();
    let model_before = h.es.global_model().clone();
    let outcome = h.es.handle_aggregation(&request, &mut h.rng).unwrap();
    match outcome {
        AggregationOutcome::Rejected { tag, reason } => {
            assert_eq!(tag, 0);
            assert_eq!(reason, RejectionReason::CombineMismatch);
        }
        other => panic!("unexpected {other:?}"),
    }
    // atomicity: nothing moved
    assert_eq!(h.es.current_tag(), 0);
    assert_eq!(h.es.public_key(), &pk_before);
    assert_eq!(h.es.global_model(), &model_before);

    // inform the aggregation server and run a clean round on the same tag
    h.asrv.observe_notification(
        &h.es
            .notification(NotificationKind::AggregationFailed(RejectionReason::CombineMismatch)),
        h.es.public_key().clone(),
    );
    for c in cs.iter_mut() {
        h.submit(c, vec![2.0; MODEL_LEN]);
    }
    assert!(matches!(
        h.pump().unwrap(),
        AggregationOutcome::Accepted { update_count: 2, .. }
    ));
    for v in h.es.global_model().values() {
        assert!((v - 2.0).abs() <= 0.5e-6);
    }
}

#[test]
fn surplus_updates_are_all_folded_in() {
    let mut h = Harness::new(3, 7);
    let mut cs = clients(5);
    for c in cs.iter_mut() {
        h.submit(c, vec![1.0, 2.0, 3.0, 4.0]);
    }
    match h.pump().unwrap() {
        AggregationOutcome::Accepted { update_count, .. } => assert_eq!(update_count, 5),
        other => panic!("unexpected {other:?}"),
    }
    let got = h.es.global_model().values();
    for (g, w) in got.iter().zip(&[1.0, 2.0, 3.0, 4.0]) {
        assert!((g - w).abs() <= 0.5e-6);
    }
}
