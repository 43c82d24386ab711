use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use num_bigint::BigRng09;
use rand::rngs::StdRng;
use rand::SeedableRng;

use ppa_afl::bench::{run_bench, BenchSpec, Primitive};
use ppa_afl::config::Config;
use ppa_afl::runner;
use ppa_afl::sim::{run_simulation, SimConfig};

#[derive(Parser)]
#[command(
    name = "ppa-afl",
    version,
    about = "Dual-server privacy-preserving aggregation for asynchronous federated learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the encryption server (key/share issuance, verified decryption)
    EncryptionServer {
        #[arg(long)]
        config: PathBuf,
        /// Override listen_addr from the config file
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run the aggregation server (update buffering, homomorphic sums)
    AggregationServer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        listen: Option<String>,
        /// Override es_addr from the config file
        #[arg(long)]
        es_addr: Option<String>,
    },
    /// Run a client: request, train, submit, repeat
    Client {
        #[arg(long)]
        config: PathBuf,
        /// Client identity (defaults to client-<pid>)
        #[arg(long)]
        id: Option<String>,
        /// Number of rounds; 0 keeps going until killed
        #[arg(long)]
        rounds: Option<u64>,
        #[arg(long)]
        es_addr: Option<String>,
        #[arg(long)]
        as_addr: Option<String>,
        /// Run this many independent clients inside one process
        #[arg(long, default_value_t = 1)]
        pool: u32,
        /// Pause between rounds, in milliseconds
        #[arg(long, default_value_t = 0)]
        round_delay_ms: u64,
    },
    /// Deterministic in-process run of the whole protocol
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed
        #[arg(long)]
        seed: Option<u64>,
        /// Re-inject a consumed update after the first epoch closes
        #[arg(long, default_value_t = false)]
        replay_stale: bool,
    },
    /// Time a cryptographic primitive across a parameter sweep (CSV out)
    Bench {
        /// enc | dec | eval_by_u | eval_by_m | share_gen | share_recover
        #[arg(long)]
        primitive: String,
        /// Model sizes, comma-separated (eval_by_u pins m to the first)
        #[arg(long, value_delimiter = ',')]
        m: Option<Vec<usize>>,
        /// Update counts, comma-separated (eval_by_m pins u to the first)
        #[arg(long, value_delimiter = ',')]
        u: Option<Vec<usize>>,
        /// Share counts, zipped with --t
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<u64>>,
        /// Recovery thresholds, zipped with --n
        #[arg(long, value_delimiter = ',')]
        t: Option<Vec<usize>>,
        #[arg(long, default_value_t = 5)]
        reps: u32,
        #[arg(long, default_value_t = 2048)]
        key_bits: u64,
    },
    /// Print a small serialized key pair (documentation aid)
    KeygenDemo {
        #[arg(long, default_value_t = 64)]
        bits: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_millis()
        .init();
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::EncryptionServer { config, listen } => {
            let mut cfg = Config::from_file(&config)?;
            if listen.is_some() {
                cfg.listen_addr = listen;
            }
            runner::run_encryption_server(&cfg)
        }
        Command::AggregationServer { config, listen, es_addr } => {
            let mut cfg = Config::from_file(&config)?;
            if listen.is_some() {
                cfg.listen_addr = listen;
            }
            if es_addr.is_some() {
                cfg.es_addr = es_addr;
            }
            runner::run_aggregation_server(&cfg)
        }
        Command::Client { config, id, rounds, es_addr, as_addr, pool, round_delay_ms } => {
            let mut cfg = Config::from_file(&config)?;
            if id.is_some() {
                cfg.client_id = id;
            }
            if let Some(rounds) = rounds {
                cfg.rounds = rounds;
            }
            if es_addr.is_some() {
                cfg.es_addr = es_addr;
            }
            if as_addr.is_some() {
                cfg.as_addr = as_addr;
            }
            runner::run_client_pool(&cfg, pool, std::time::Duration::from_millis(round_delay_ms))
        }
        Command::Simulate { config, seed, replay_stale } => {
            let cfg = match config {
                Some(path) => Config::from_file(&path)?,
                None => Config::default(),
            };
            let mut sim_cfg = SimConfig::from_config(&cfg)?;
            sim_cfg.replay_stale_update = replay_stale;
            let seed = seed.unwrap_or(cfg.seed);
            let report = run_simulation(&sim_cfg, seed)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::Bench { primitive, m, u, n, t, reps, key_bits } => {
            let primitive: Primitive = primitive
                .parse()
                .map_err(|e: String| anyhow::anyhow!("{e}"))?;
            let defaults = BenchSpec::default();
            let spec = BenchSpec {
                primitive,
                m: m.unwrap_or(defaults.m),
                u: u.unwrap_or(defaults.u),
                n: n.unwrap_or(defaults.n),
                t: t.unwrap_or(defaults.t),
                repetitions: reps,
                key_bits,
            };
            let mut stdout = std::io::stdout().lock();
            run_bench(&spec, &mut stdout)?;
            Ok(())
        }
        Command::KeygenDemo { bits, seed } => {
            let mut rng = match seed {
                Some(s) => StdRng::seed_from_u64(s),
                None => StdRng::from_os_rng(),
            };
            let params = ppa_afl_core::paillier::PaillierParams::new(bits)
                .map_err(|e| anyhow::anyhow!("{e}"))?;
            let (pk, sk) = ppa_afl_core::paillier::keygen(params, &mut rng)
                .context("key generation failed")?;
            let (p, q) = sk.primes();
            println!("fingerprint={}", pk.fingerprint());
            println!("pk_n={}", pk.n().to_str_radix(16));
            println!("pk_g={}", pk.g().to_str_radix(16));
            println!("sk_lambda={}", sk.lambda().to_str_radix(16));
            println!("sk_mu={}", sk.mu().to_str_radix(16));
            println!("sk_p={}", p.to_str_radix(16));
            println!("sk_q={}", q.to_str_radix(16));
            // show one roundtrip so the demo is self-checking
            let m = rng.random_biguint_below(pk.n());
            let ct = pk.encrypt(&m, &mut rng).map_err(|e| anyhow::anyhow!("{e}"))?;
            let back = sk.decrypt(&ct).map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("demo_plaintext={}", m.to_str_radix(16));
            println!("demo_ciphertext={}", ct.value().to_str_radix(16));
            println!("demo_roundtrip_ok={}", back == m);
            Ok(())
        }
    }
}
