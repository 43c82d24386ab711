//! Deterministic in-process simulation: the exact role state machines
//! from the protocol core, driven by a seeded scheduler instead of
//! sockets. Same (config, seed) in, byte-identical report out.

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use ppa_afl_core::encoding::{EncodingConfig, ModelVector};
use ppa_afl_core::paillier::PaillierParams;
use ppa_afl_core::protocol::{
    AggregationOutcome, AggregationServer, ClientState, EncryptionServer,
    EncryptionServerConfig, NotificationKind, ReceiveOutcome, Tag, Update,
};
use ppa_afl_core::shamir::FieldParams;

use crate::config::Config;
use crate::training::{fedavg_oracle, local_train, Hyperparams, SyntheticTask, TaskKind};

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub num_clients: usize,
    pub threshold: usize,
    pub model_len: usize,
    pub key_bits: u64,
    pub encoding: EncodingConfig,
    /// Target number of successful aggregations.
    pub epochs: u64,
    pub task_kind: TaskKind,
    pub noise_std: f64,
    pub samples_per_client: usize,
    pub hyperparams: Hyperparams,
    pub share_budget: u64,
    pub rate_limit_count: u32,
    pub rate_limit_window_ms: u64,
    /// After the first epoch closes, re-inject one consumed update to
    /// exercise the stale-discard rule.
    pub replay_stale_update: bool,
    /// Bound on request/submit waves, so an unreachable threshold
    /// terminates instead of spinning.
    pub max_waves: u64,
}

impl SimConfig {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        Ok(Self {
            num_clients: cfg.num_clients,
            threshold: cfg.threshold,
            model_len: cfg.model_len,
            key_bits: cfg.key_bits,
            encoding: cfg.encoding()?,
            epochs: cfg.epochs,
            task_kind: cfg.task,
            noise_std: cfg.noise_std,
            samples_per_client: cfg.samples_per_client,
            hyperparams: Hyperparams { epochs: cfg.train_epochs, learning_rate: cfg.learning_rate },
            share_budget: cfg.share_budget,
            rate_limit_count: cfg.rate_limit_count,
            rate_limit_window_ms: cfg.rate_limit_window_secs * 1000,
            replay_stale_update: false,
            max_waves: cfg.epochs.saturating_mul(4).max(8),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EpochReport {
    pub tag: Tag,
    pub update_count: u64,
    pub model: Vec<f64>,
    pub oracle: Vec<f64>,
    pub max_error: f64,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub seed: u64,
    pub epochs: Vec<EpochReport>,
    pub final_tag: Tag,
    pub waves: u64,
    pub dropped_stale: u64,
    pub rejected_malformed: u64,
    pub rate_limit_refusals: u64,
    pub buffered_leftover: usize,
}

impl SimulationReport {
    /// Canonical text form; identical runs must render identical bytes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "simulation seed={}", self.seed);
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "epoch tag={} updates={} max_error={:e}",
                e.tag, e.update_count, e.max_error
            );
            let _ = writeln!(out, "  model={}", join_floats(&e.model));
            let _ = writeln!(out, "  oracle={}", join_floats(&e.oracle));
        }
        let _ = writeln!(
            out,
            "drops stale={} malformed={} rate_limited={} leftover={}",
            self.dropped_stale,
            self.rejected_malformed,
            self.rate_limit_refusals,
            self.buffered_leftover
        );
        let _ = writeln!(out, "final tag={} waves={}", self.final_tag, self.waves);
        out
    }

    pub fn max_error(&self) -> f64 {
        self.epochs.iter().map(|e| e.max_error).fold(0.0, f64::max)
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn run_simulation(cfg: &SimConfig, seed: u64) -> Result<SimulationReport> {
    if cfg.threshold == 0 {
        bail!("threshold must be at least 1");
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let es_config = EncryptionServerConfig {
        params: PaillierParams::new(cfg.key_bits).map_err(|e| anyhow::anyhow!("{e}"))?,
        field: FieldParams::default(),
        encoding: cfg.encoding,
        threshold: cfg.threshold,
        share_budget: cfg.share_budget,
        model_len: cfg.model_len,
        rate_limit_count: cfg.rate_limit_count,
        rate_limit_window_ms: cfg.rate_limit_window_ms,
    };
    let mut es = EncryptionServer::new(es_config, &mut rng)?;
    let mut asrv = AggregationServer::new(cfg.model_len);
    asrv.observe_notification(
        &es.notification(NotificationKind::EpochOpen),
        es.public_key().clone(),
    );

    let task = SyntheticTask {
        kind: cfg.task_kind,
        model_len: cfg.model_len,
        num_clients: cfg.num_clients,
        samples_per_client: cfg.samples_per_client,
        noise_std: cfg.noise_std,
        seed,
    };
    let mut clients: Vec<ClientState> = (0..cfg.num_clients)
        .map(|i| ClientState::new(format!("client-{i}"), cfg.encoding))
        .collect();

    // local models per issued share index, for the per-epoch oracle
    let mut pending_locals: BTreeMap<u64, ModelVector> = BTreeMap::new();
    let mut epochs: Vec<EpochReport> = Vec::new();
    let mut replay_candidate: Option<Update> = None;
    let mut now_ms: u64 = 0;
    let mut waves: u64 = 0;

    'waves: while (epochs.len() as u64) < cfg.epochs && waves < cfg.max_waves {
        waves += 1;
        now_ms += 1000;
        let mut order: Vec<usize> = (0..cfg.num_clients).collect();
        order.shuffle(&mut rng);

        for idx in order {
            now_ms += 1;
            let client = &mut clients[idx];
            let response = match es.handle_request(client.client_id(), now_ms) {
                Ok(r) => r,
                Err(_) => continue, // rate-limited or budget-exhausted: skip this wave
            };
            let mut local = local_train(
                &response.global_model,
                &task.client_data(idx as u64),
                &cfg.hyperparams,
            );
            local.clamp(&cfg.encoding);
            let share_index = response.share.index;
            let share_tag = response.share.tag;
            let (update, _) = client
                .build_update(&response, local.clone(), &mut rng)
                .map_err(|e| anyhow::anyhow!("client update failed: {e}"))?;
            if replay_candidate.is_none() && share_tag == 0 {
                replay_candidate = Some(update.clone());
            }
            if asrv.receive_update(update) == ReceiveOutcome::Buffered {
                pending_locals.insert(share_index, local);
            }

            if let Some(request) = asrv.try_aggregate_live() {
                let folded: Vec<ModelVector> = request
                    .shares
                    .iter()
                    .filter_map(|s| pending_locals.remove(&s.index))
                    .collect();
                let outcome = es.handle_aggregation(&request, &mut rng)?;
                match outcome {
                    AggregationOutcome::Accepted { closed_tag, update_count, .. } => {
                        asrv.observe_notification(
                            &es.notification(NotificationKind::AggregationSucceeded),
                            es.public_key().clone(),
                        );
                        pending_locals.clear();
                        let oracle = fedavg_oracle(&folded)
                            .map_err(|e| anyhow::anyhow!("oracle: {e}"))?;
                        let model = es.global_model().clone();
                        let max_error = model.max_abs_diff(&oracle);
                        epochs.push(EpochReport {
                            tag: closed_tag,
                            update_count,
                            model: model.into_values(),
                            oracle: oracle.into_values(),
                            max_error,
                        });
                        if cfg.replay_stale_update {
                            if let Some(stale) = replay_candidate.take() {
                                asrv.receive_update(stale);
                            }
                        }
                        if epochs.len() as u64 >= cfg.epochs {
                            break 'waves;
                        }
                    }
                    AggregationOutcome::Rejected { reason, .. } => {
                        asrv.observe_notification(
                            &es.notification(NotificationKind::AggregationFailed(reason)),
                            es.public_key().clone(),
                        );
                    }
                }
            }
        }
    }

    let buffered_leftover = asrv
        .live_tag()
        .map(|t| asrv.buffered_count(t))
        .unwrap_or(0);
    let stats = asrv.stats();
    Ok(SimulationReport {
        seed,
        epochs,
        final_tag: es.current_tag(),
        waves,
        dropped_stale: stats.dropped_stale,
        rejected_malformed: stats.rejected_malformed,
        rate_limit_refusals: es.rate_limit_refusals(),
        buffered_leftover,
    })
}
