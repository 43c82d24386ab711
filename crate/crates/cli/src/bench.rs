//! Microbenchmark harness for the cryptographic primitives, emitting CSV.
//! Key generation happens once per sweep and is never timed; every point
//! reports the median of its repetitions after one small warmup.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use num_bigint::{BigRng09, BigUint};
use num_traits::One;
use rand::rngs::StdRng;
use rand::SeedableRng;

use ppa_afl_core::paillier::{self, Ciphertext, PaillierParams};
use ppa_afl_core::shamir::{self, FieldParams};

pub const CSV_HEADER: &str = "primitive,m,u,n,t,median_ms,min_ms,max_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    /// Element-wise encryption of an m-vector.
    Enc,
    /// Element-wise decryption of an m-vector.
    Dec,
    /// Homomorphic sum of u updates at fixed model size.
    EvalByU,
    /// Homomorphic sum over the model size at fixed update count.
    EvalByM,
    /// Generating n shares with threshold t.
    ShareGen,
    /// Recovering the secret from t shares.
    ShareRecover,
}

impl Primitive {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Enc => "enc",
            Self::Dec => "dec",
            Self::EvalByU => "eval_by_u",
            Self::EvalByM => "eval_by_m",
            Self::ShareGen => "share_gen",
            Self::ShareRecover => "share_recover",
        }
    }
}

impl FromStr for Primitive {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "enc" => Ok(Self::Enc),
            "dec" => Ok(Self::Dec),
            "eval_by_u" => Ok(Self::EvalByU),
            "eval_by_m" => Ok(Self::EvalByM),
            "share_gen" => Ok(Self::ShareGen),
            "share_recover" => Ok(Self::ShareRecover),
            other => Err(format!("unknown primitive {other:?}")),
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub primitive: Primitive,
    /// Model sizes. `eval_by_u` uses the first entry as its fixed m.
    pub m: Vec<usize>,
    /// Update counts. `eval_by_m` uses the first entry as its fixed u.
    pub u: Vec<usize>,
    /// Share counts, zipped with `t` into (n, t) points.
    pub n: Vec<u64>,
    pub t: Vec<usize>,
    pub repetitions: u32,
    pub key_bits: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            primitive: Primitive::Enc,
            m: vec![250, 500, 1000, 2000],
            u: vec![5, 10, 20, 40],
            n: vec![100, 200, 400],
            t: vec![50, 100, 200],
            repetitions: 5,
            key_bits: 2048,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub primitive: Primitive,
    pub m: Option<usize>,
    pub u: Option<usize>,
    pub n: Option<u64>,
    pub t: Option<usize>,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        fn opt<T: fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        format!(
            "{},{},{},{},{},{:.3},{:.3},{:.3}",
            self.primitive,
            opt(&self.m),
            opt(&self.u),
            opt(&self.n),
            opt(&self.t),
            self.median_ms,
            self.min_ms,
            self.max_ms
        )
    }
}

/// Times `work` over the configured repetitions. Callers run a small
/// untimed warmup beforehand. Returns (median, min, max) in milliseconds.
fn measure(repetitions: u32, mut work: impl FnMut()) -> (f64, f64, f64) {
    let mut samples: Vec<f64> = (0..repetitions)
        .map(|_| {
            let start = Instant::now();
            work();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    samples.sort_by(|a, b| a.total_cmp(b));
    let median = samples[samples.len() / 2];
    (median, samples[0], samples[samples.len() - 1])
}

pub fn run_bench<W: Write>(spec: &BenchSpec, out: &mut W) -> Result<Vec<BenchRow>> {
    if spec.repetitions < 3 {
        bail!("repetitions must be at least 3 (median is reported)");
    }
    writeln!(out, "{CSV_HEADER}")?;
    let mut rng = StdRng::from_os_rng();
    let rows = match spec.primitive {
        Primitive::Enc => bench_enc(spec, &mut rng)?,
        Primitive::Dec => bench_dec(spec, &mut rng)?,
        Primitive::EvalByU | Primitive::EvalByM => bench_eval(spec, &mut rng)?,
        Primitive::ShareGen | Primitive::ShareRecover => bench_shamir(spec, &mut rng)?,
    };
    for row in &rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(rows)
}

fn row(spec: &BenchSpec, stats: (f64, f64, f64)) -> BenchRow {
    BenchRow {
        primitive: spec.primitive,
        m: None,
        u: None,
        n: None,
        t: None,
        median_ms: stats.0,
        min_ms: stats.1,
        max_ms: stats.2,
    }
}

fn bench_enc(spec: &BenchSpec, rng: &mut StdRng) -> Result<Vec<BenchRow>> {
    if spec.m.is_empty() {
        bail!("enc sweep needs at least one m");
    }
    let (pk, _) = paillier::keygen(PaillierParams::new(spec.key_bits)?, rng)?;
    let max_m = *spec.m.iter().max().unwrap();
    let plaintexts: Vec<BigUint> =
        (0..max_m).map(|_| rng.random_biguint_below(pk.n())).collect();
    let mut rows = Vec::new();
    for &m in &spec.m {
        let warm = m.div_ceil(20).max(1);
        for p in &plaintexts[..warm] {
            let _ = pk.encrypt(p, rng).unwrap();
        }
        let stats = measure(spec.repetitions, || {
            for p in &plaintexts[..m] {
                let _ = pk.encrypt(p, rng).unwrap();
            }
        });
        rows.push(BenchRow { m: Some(m), ..row(spec, stats) });
    }
    Ok(rows)
}

/// Setup ciphertexts share one precomputed randomizer: decryption cost
/// does not depend on the blinding, and full-entropy setup would dwarf
/// the measurement itself.
fn setup_ciphertexts(
    pk: &ppa_afl_core::paillier::PaillierPublicKey,
    count: usize,
    rng: &mut StdRng,
) -> Vec<Ciphertext> {
    let randomizer = pk.randomizer(rng);
    (0..count)
        .map(|_| {
            let m = rng.random_biguint_below(pk.n());
            pk.encrypt_with_randomizer(&m, &randomizer).unwrap()
        })
        .collect()
}

fn bench_dec(spec: &BenchSpec, rng: &mut StdRng) -> Result<Vec<BenchRow>> {
    if spec.m.is_empty() {
        bail!("dec sweep needs at least one m");
    }
    let (pk, sk) = paillier::keygen(PaillierParams::new(spec.key_bits)?, rng)?;
    let max_m = *spec.m.iter().max().unwrap();
    let ciphertexts = setup_ciphertexts(&pk, max_m, rng);
    let mut rows = Vec::new();
    for &m in &spec.m {
        let warm = m.div_ceil(20).max(1);
        for c in &ciphertexts[..warm] {
            let _ = sk.decrypt(c).unwrap();
        }
        let stats = measure(spec.repetitions, || {
            for c in &ciphertexts[..m] {
                let _ = sk.decrypt(c).unwrap();
            }
        });
        rows.push(BenchRow { m: Some(m), ..row(spec, stats) });
    }
    Ok(rows)
}

fn bench_eval(spec: &BenchSpec, rng: &mut StdRng) -> Result<Vec<BenchRow>> {
    let (pk, _) = paillier::keygen(PaillierParams::new(spec.key_bits)?, rng)?;
    // (m, u) points: one axis sweeps, the other is pinned to its first entry
    let points: Vec<(usize, usize)> = match spec.primitive {
        Primitive::EvalByU => {
            let m = *spec.m.first().context("eval_by_u needs a fixed m")?;
            spec.u.iter().map(|&u| (m, u)).collect()
        }
        Primitive::EvalByM => {
            let u = *spec.u.first().context("eval_by_m needs a fixed u")?;
            spec.m.iter().map(|&m| (m, u)).collect()
        }
        _ => unreachable!(),
    };
    if points.is_empty() {
        bail!("eval sweep is empty");
    }
    let max_m = points.iter().map(|p| p.0).max().unwrap();
    let base = setup_ciphertexts(&pk, max_m, rng);
    let mut rows = Vec::new();
    for (m, u) in points {
        if u == 0 || m == 0 {
            eprintln!("skipping infeasible eval point m={m} u={u}");
            continue;
        }
        // one column of u ciphertexts per model coordinate, prebuilt so
        // only the homomorphic evaluation is timed
        let columns: Vec<Vec<Ciphertext>> =
            (0..m).map(|j| vec![base[j].clone(); u]).collect();
        let ones = vec![BigUint::one(); u];
        let warm = m.div_ceil(20).max(1);
        for column in &columns[..warm] {
            let _ = pk.eval(column, &ones).unwrap();
        }
        let stats = measure(spec.repetitions, || {
            for column in &columns {
                let _ = pk.eval(column, &ones).unwrap();
            }
        });
        rows.push(BenchRow { m: Some(m), u: Some(u), ..row(spec, stats) });
    }
    Ok(rows)
}

fn bench_shamir(spec: &BenchSpec, rng: &mut StdRng) -> Result<Vec<BenchRow>> {
    if spec.n.len() != spec.t.len() || spec.n.is_empty() {
        bail!("share sweeps need matching non-empty n and t lists");
    }
    let field = FieldParams::default();
    let mut rows = Vec::new();
    for (&n, &t) in spec.n.iter().zip(&spec.t) {
        if t == 0 || t as u64 > n {
            eprintln!("skipping infeasible share point n={n} t={t}");
            continue;
        }
        let secret = rng.random_biguint_below(field.prime());
        match spec.primitive {
            Primitive::ShareGen => {
                let warm_n = (n / 10).max(1);
                let warm_t = (t / 10).max(1).min(warm_n as usize);
                let _ = shamir::share(warm_n, warm_t, secret.clone(), &field, 0, rng).unwrap();
                let stats = measure(spec.repetitions, || {
                    let _ = shamir::share(n, t, secret.clone(), &field, 0, rng).unwrap();
                });
                rows.push(BenchRow { n: Some(n), t: Some(t), ..row(spec, stats) });
            }
            Primitive::ShareRecover => {
                let shares = shamir::share(n, t, secret.clone(), &field, 0, rng)
                    .map_err(|e| anyhow::anyhow!("{e}"))?;
                let warm_t = (t / 10).max(1);
                let _ = shamir::combine(warm_t, &shares[..warm_t], &field).unwrap();
                let stats = measure(spec.repetitions, || {
                    let _ = shamir::combine(t, &shares[..t], &field).unwrap();
                });
                rows.push(BenchRow { n: Some(n), t: Some(t), ..row(spec, stats) });
            }
            _ => unreachable!(),
        }
    }
    Ok(rows)
}
