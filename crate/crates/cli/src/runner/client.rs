//! Client runner: request, train, submit, disconnect. Each round opens
//! fresh connections and closes them as soon as the update is written;
//! staying online until aggregation is exactly what the protocol does
//! not require.

use std::io::Write as _;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;

use ppa_afl_core::protocol::{ClientResponse, ClientState};

use crate::config::Config;
use crate::training::{client_index_of_id, local_train, Hyperparams, SyntheticTask};
use crate::wire::{read_frame, write_frame, Envelope, DEFAULT_MAX_FRAME};

use super::connect_with_backoff;

/// Runs `pool` independent client loops in one process; each has its own
/// identity, dataset, and connections.
pub fn run_client_pool(cfg: &Config, pool: u32, round_delay: Duration) -> Result<()> {
    if pool <= 1 {
        return run_client(cfg, round_delay);
    }
    let base = cfg
        .client_id
        .clone()
        .unwrap_or_else(|| format!("client-{}", std::process::id()));
    let handles: Vec<_> = (0..pool)
        .map(|k| {
            let mut member_cfg = cfg.clone();
            member_cfg.client_id = Some(format!("{base}-p{k}"));
            std::thread::spawn(move || run_client(&member_cfg, round_delay))
        })
        .collect();
    for handle in handles {
        handle
            .join()
            .map_err(|_| anyhow::anyhow!("client thread panicked"))??;
    }
    Ok(())
}

pub fn run_client(cfg: &Config, round_delay: Duration) -> Result<()> {
    let es_addr = cfg.es_addr.as_deref().context("client needs es_addr")?;
    let as_addr = cfg.as_addr.as_deref().context("client needs as_addr")?;
    let client_id = cfg
        .client_id
        .clone()
        .unwrap_or_else(|| format!("client-{}", std::process::id()));
    let encoding = cfg.encoding()?;
    let task = SyntheticTask {
        kind: cfg.task,
        model_len: cfg.model_len,
        num_clients: cfg.num_clients,
        samples_per_client: cfg.samples_per_client,
        noise_std: cfg.noise_std,
        seed: cfg.seed,
    };
    let dataset = task.client_data(client_index_of_id(&client_id));
    let hyperparams = Hyperparams { epochs: cfg.train_epochs, learning_rate: cfg.learning_rate };
    let mut state = ClientState::new(client_id.clone(), encoding);
    let mut rng = StdRng::from_os_rng();

    let mut round: u64 = 0;
    loop {
        if cfg.rounds != 0 && round >= cfg.rounds {
            break;
        }
        round += 1;

        let response = match request_epoch(es_addr, &client_id) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{client_id}: request failed: {e}; backing off");
                std::thread::sleep(Duration::from_millis(500));
                continue;
            }
        };
        log::info!(
            "{client_id}: joined tag {} (share {}, threshold {})",
            response.tag,
            response.share.index,
            response.threshold
        );

        let trained = local_train(&response.global_model, &dataset, &hyperparams);
        let tag = response.tag;
        let (update, clamped) = state
            .build_update(&response, trained, &mut rng)
            .map_err(|e| anyhow::anyhow!("building update: {e}"))?;
        if clamped > 0 {
            log::warn!("{client_id}: clamped {clamped} divergent parameters");
        }

        // one-way submission; disconnect immediately after the frame
        let mut as_stream = connect_with_backoff(as_addr, 20)?;
        write_frame(&mut as_stream, &Envelope::Update(update))?;
        drop(as_stream);

        println!("round={round} tag={tag} client={client_id}");
        std::io::stdout().flush().ok();
        if !round_delay.is_zero() {
            std::thread::sleep(round_delay);
        }
    }
    Ok(())
}

/// One request round trip. The encryption server greets every connection
/// with a notification frame; skip those until the response arrives.
fn request_epoch(es_addr: &str, client_id: &str) -> Result<ClientResponse> {
    let mut stream = connect_with_backoff(es_addr, 20)?;
    write_frame(&mut stream, &Envelope::ClientRequest { client_id: client_id.to_string() })?;
    loop {
        match read_frame(&mut stream, DEFAULT_MAX_FRAME)? {
            Envelope::ClientResponse(response) => return Ok(response),
            Envelope::Notification { .. } => continue,
            Envelope::Error { message } => bail!("server refused: {message}"),
            other => bail!("unexpected {} frame", other.msg_type()),
        }
    }
}
