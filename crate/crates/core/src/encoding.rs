//! Fixed-point encoding between real-valued model parameters and Paillier
//! plaintexts.
//!
//! A parameter x becomes `round(x · scale)` in `Z_n`, with negative values
//! mapped to the upper half as `n − |round(x · scale)|`. Summing encoded
//! values modulo n then matches real addition exactly, up to quantization,
//! as long as the configured magnitude budget keeps every possible sum
//! away from the n/2 midpoint.

use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;

use crate::paillier::{Ciphertext, PaillierError, PaillierPublicKey, PaillierSecretKey};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodingError {
    /// scale and max_summands must be positive, max_abs_value positive and finite.
    InvalidConfig,
    /// Parameter is NaN or infinite.
    NonFinite,
    /// Parameter magnitude exceeds `max_abs_value`.
    OutOfRange,
    /// The wraparound budget `2 · max_summands · max_abs_value · scale < n`
    /// does not hold for this modulus.
    ModulusTooSmall,
    /// Decode divisor must be at least 1.
    ZeroDivisor,
    /// Decode input not reduced modulo n.
    ValueOutsideModulus,
}

impl fmt::Display for EncodingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidConfig => write!(f, "invalid encoding configuration"),
            Self::NonFinite => write!(f, "parameter is not a finite number"),
            Self::OutOfRange => write!(f, "parameter magnitude exceeds the clamp bound"),
            Self::ModulusTooSmall => {
                write!(f, "modulus too small for the configured magnitude budget")
            }
            Self::ZeroDivisor => write!(f, "divisor must be at least 1"),
            Self::ValueOutsideModulus => write!(f, "plaintext not reduced modulo n"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for EncodingError {}

/// Element-wise vector operations report which coordinate failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VectorError {
    Encoding { index: usize, source: EncodingError },
    Crypto { index: usize, source: PaillierError },
    Config(EncodingError),
}

impl fmt::Display for VectorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Encoding { index, source } => write!(f, "element {index}: {source}"),
            Self::Crypto { index, source } => write!(f, "element {index}: {source}"),
            Self::Config(source) => write!(f, "{source}"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for VectorError {}

/// Fixed-point parameters shared by every party of a deployment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    /// Fixed-point multiplier; quantization error is 1/(2·scale).
    pub scale: u64,
    /// Most updates ever aggregated under one key.
    pub max_summands: u64,
    /// Clamp bound on individual parameters.
    pub max_abs_value: f64,
}

impl EncodingConfig {
    pub const DEFAULT_SCALE: u64 = 1_000_000;
    pub const DEFAULT_MAX_SUMMANDS: u64 = 1024;
    pub const DEFAULT_MAX_ABS_VALUE: f64 = 1000.0;

    pub fn new(scale: u64, max_summands: u64, max_abs_value: f64) -> Result<Self, EncodingError> {
        if scale == 0 || max_summands == 0 || !(max_abs_value > 0.0) || !max_abs_value.is_finite()
        {
            return Err(EncodingError::InvalidConfig);
        }
        Ok(Self { scale, max_summands, max_abs_value })
    }

    /// Largest integer magnitude a single encoded parameter can take.
    fn magnitude_bound(&self) -> BigUint {
        BigUint::from(libm::round(self.max_abs_value * self.scale as f64) as u128 + 1)
    }

    /// Checks `2 · max_summands · max_abs_value · scale < n`: no sum of
    /// in-range encodings may cross the negative-number midpoint.
    pub fn validate_for_modulus(&self, n: &BigUint) -> Result<(), EncodingError> {
        let budget = 2u32 * BigUint::from(self.max_summands) * self.magnitude_bound();
        if budget >= *n {
            return Err(EncodingError::ModulusTooSmall);
        }
        Ok(())
    }
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            scale: Self::DEFAULT_SCALE,
            max_summands: Self::DEFAULT_MAX_SUMMANDS,
            max_abs_value: Self::DEFAULT_MAX_ABS_VALUE,
        }
    }
}

/// A length-m vector of real-valued model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelVector {
    values: Vec<f64>,
}

impl ModelVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: alloc::vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Clamps every parameter into `[-max_abs_value, max_abs_value]`
    /// (non-finite values become 0) and returns how many were touched.
    /// A divergent client is tamed here rather than allowed to stall
    /// the epoch with a rejection.
    pub fn clamp(&mut self, cfg: &EncodingConfig) -> usize {
        let bound = cfg.max_abs_value;
        let mut clamped = 0;
        for v in &mut self.values {
            if !v.is_finite() {
                *v = 0.0;
                clamped += 1;
            } else if *v > bound {
                *v = bound;
                clamped += 1;
            } else if *v < -bound {
                *v = -bound;
                clamped += 1;
            }
        }
        clamped
    }

    /// Largest coordinate-wise absolute difference to `other`.
    pub fn max_abs_diff(&self, other: &ModelVector) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| libm::fabs(a - b))
            .fold(0.0, f64::max)
    }
}

/// Encodes one in-range parameter into `Z_n`.
pub fn encode(x: f64, cfg: &EncodingConfig, n: &BigUint) -> Result<BigUint, EncodingError> {
    if !x.is_finite() {
        return Err(EncodingError::NonFinite);
    }
    if libm::fabs(x) > cfg.max_abs_value {
        return Err(EncodingError::OutOfRange);
    }
    let magnitude = libm::round(libm::fabs(x) * cfg.scale as f64) as u128;
    let magnitude = BigUint::from(magnitude);
    // the single-value wraparound requirement; the full budget is checked
    // by validate_for_modulus
    if 2u32 * &magnitude >= *n {
        return Err(EncodingError::ModulusTooSmall);
    }
    if x < 0.0 && !magnitude.is_zero() {
        Ok(n - magnitude)
    } else {
        Ok(magnitude)
    }
}

/// Decodes a plaintext back to a real, dividing by `divisor` to realize
/// averaging after a homomorphic sum. Values at or above n/2 are negative.
pub fn decode(
    p: &BigUint,
    divisor: u64,
    cfg: &EncodingConfig,
    n: &BigUint,
) -> Result<f64, EncodingError> {
    if divisor == 0 {
        return Err(EncodingError::ZeroDivisor);
    }
    if p >= n {
        return Err(EncodingError::ValueOutsideModulus);
    }
    let negative = 2u32 * p >= *n;
    let magnitude = if negative { n - p } else { p.clone() };
    let magnitude = magnitude.to_f64().ok_or(EncodingError::ValueOutsideModulus)?;
    let signed = if negative { -magnitude } else { magnitude };
    Ok(signed / (cfg.scale as f64 * divisor as f64))
}

/// Encrypts a model vector element-wise: encode then encrypt, under one key.
pub fn encrypt_vector<R: Rng + ?Sized>(
    mv: &ModelVector,
    pk: &PaillierPublicKey,
    cfg: &EncodingConfig,
    rng: &mut R,
) -> Result<Vec<Ciphertext>, VectorError> {
    cfg.validate_for_modulus(pk.n()).map_err(VectorError::Config)?;
    mv.values
        .iter()
        .enumerate()
        .map(|(index, &x)| {
            let plaintext =
                encode(x, cfg, pk.n()).map_err(|source| VectorError::Encoding { index, source })?;
            pk.encrypt(&plaintext, rng)
                .map_err(|source| VectorError::Crypto { index, source })
        })
        .collect()
}

/// Decrypts an aggregated ciphertext vector and rescales by `divisor`
/// (the number of updates folded into it).
pub fn decrypt_vector(
    cts: &[Ciphertext],
    sk: &PaillierSecretKey,
    divisor: u64,
    cfg: &EncodingConfig,
) -> Result<ModelVector, VectorError> {
    let values = cts
        .iter()
        .enumerate()
        .map(|(index, ct)| {
            let plaintext = sk
                .decrypt(ct)
                .map_err(|source| VectorError::Crypto { index, source })?;
            decode(&plaintext, divisor, cfg, sk.n())
                .map_err(|source| VectorError::Encoding { index, source })
        })
        .collect::<Result<Vec<f64>, VectorError>>()?;
    Ok(ModelVector::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::{keygen, PaillierParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn test_modulus() -> BigUint {
        // comfortably above the default budget of ~2^41
        BigUint::from(1u8) << 80
    }

    fn cfg() -> EncodingConfig {
        EncodingConfig::default()
    }

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn encode_zero_and_positive() {
        let n = test_modulus();
        assert_eq!(encode(0.0, &cfg(), &n).unwrap(), BigUint::ZERO);
        assert_eq!(
            encode(1.5, &cfg(), &n).unwrap(),
            BigUint::from(1_500_000u32)
        );
    }

    #[test]
    fn encode_negative_maps_to_upper_half() {
        let n = test_modulus();
        assert_eq!(
            encode(-0.25, &cfg(), &n).unwrap(),
            &n - BigUint::from(250_000u32)
        );
        // negative zero must not wrap to n
        assert_eq!(encode(-0.0, &cfg(), &n).unwrap(), BigUint::ZERO);
        assert_eq!(encode(-1e-9, &cfg(), &n).unwrap(), BigUint::ZERO);
    }

    #[test]
    fn encode_rejects_bad_input() {
        let n = test_modulus();
        assert_eq!(
            encode(1000.5, &cfg(), &n).unwrap_err(),
            EncodingError::OutOfRange
        );
        assert_eq!(
            encode(f64::NAN, &cfg(), &n).unwrap_err(),
            EncodingError::NonFinite
        );
        assert_eq!(
            encode(f64::INFINITY, &cfg(), &n).unwrap_err(),
            EncodingError::NonFinite
        );
        // the tiny-key modulus cannot host scale 10^6 encodings
        assert_eq!(
            encode(1.5, &cfg(), &BigUint::from(143u32)).unwrap_err(),
            EncodingError::ModulusTooSmall
        );
    }

    #[test]
    fn decode_inverts_encode() {
        let n = test_modulus();
        assert_eq!(
            decode(&BigUint::from(1_500_000u32), 1, &cfg(), &n).unwrap(),
            1.5
        );
        assert_eq!(
            decode(&(&n - BigUint::from(250_000u32)), 1, &cfg(), &n).unwrap(),
            -0.25
        );
    }

    #[test]
    fn sum_then_average_is_exact_for_exact_inputs() {
        let n = test_modulus();
        let one = encode(1.0, &cfg(), &n).unwrap();
        let sum = (&one + &one + &one) % &n;
        assert_eq!(decode(&sum, 3, &cfg(), &n).unwrap(), 1.0);
    }

    #[test]
    fn decode_validates_input() {
        let n = test_modulus();
        assert_eq!(
            decode(&n, 1, &cfg(), &n).unwrap_err(),
            EncodingError::ValueOutsideModulus
        );
        assert_eq!(
            decode(&BigUint::ZERO, 0, &cfg(), &n).unwrap_err(),
            EncodingError::ZeroDivisor
        );
    }

    #[test]
    fn quantization_bound_holds() {
        let n = test_modulus();
        let c = cfg();
        let mut rng = rng(1);
        let tolerance = 1.0 / (2.0 * c.scale as f64);
        for _ in 0..1000 {
            let x = rand::Rng::random_range(&mut rng, -1000.0..1000.0);
            let decoded = decode(&encode(x, &c, &n).unwrap(), 1, &c, &n).unwrap();
            assert!(
                (decoded - x).abs() <= tolerance,
                "|{decoded} - {x}| > {tolerance}"
            );
        }
    }

    #[test]
    fn signed_sums_decode_to_the_mean() {
        let n = test_modulus();
        let c = cfg();
        let mut rng = rng(2);
        let tolerance = 1.0 / (2.0 * c.scale as f64);
        for _ in 0..200 {
            let u = rand::Rng::random_range(&mut rng, 1..20u64);
            let xs: Vec<f64> = (0..u)
                .map(|_| rand::Rng::random_range(&mut rng, -1000.0..1000.0))
                .collect();
            let sum = xs
                .iter()
                .map(|&x| encode(x, &c, &n).unwrap())
                .fold(BigUint::ZERO, |acc, p| (acc + p) % &n);
            let mean = xs.iter().sum::<f64>() / u as f64;
            let decoded = decode(&sum, u, &c, &n).unwrap();
            assert!((decoded - mean).abs() <= tolerance);
        }
    }

    #[test]
    fn budget_stays_below_the_midpoint() {
        // max_summands encodings of the extreme magnitude must not reach n/2
        let c = cfg();
        let n = test_modulus();
        c.validate_for_modulus(&n).unwrap();
        let extreme = encode(c.max_abs_value, &c, &n).unwrap();
        let total = extreme * c.max_summands;
        assert!(2u32 * total < n);
        // and a modulus sized exactly at the budget is rejected
        let budget = 2u32 * BigUint::from(c.max_summands) * c.magnitude_bound();
        assert_eq!(
            c.validate_for_modulus(&budget).unwrap_err(),
            EncodingError::ModulusTooSmall
        );
    }

    #[test]
    fn clamp_counts_and_bounds() {
        let c = cfg();
        let mut mv = ModelVector::new(vec![0.5, 2000.0, -1500.0, f64::NAN, 999.9]);
        let clamped = mv.clamp(&c);
        assert_eq!(clamped, 3);
        assert_eq!(mv.values(), &[0.5, 1000.0, -1000.0, 0.0, 999.9]);
        assert_eq!(mv.clamp(&c), 0);
    }

    #[test]
    fn config_validation() {
        assert!(EncodingConfig::new(1_000_000, 1024, 1000.0).is_ok());
        assert_eq!(
            EncodingConfig::new(0, 1024, 1000.0).unwrap_err(),
            EncodingError::InvalidConfig
        );
        assert_eq!(
            EncodingConfig::new(10, 0, 1000.0).unwrap_err(),
            EncodingError::InvalidConfig
        );
        assert_eq!(
            EncodingConfig::new(10, 10, f64::NAN).unwrap_err(),
            EncodingError::InvalidConfig
        );
    }

    #[test]
    fn vector_roundtrip_within_quantization() {
        let mut rng = rng(3);
        let (pk, sk) = keygen(PaillierParams::new(128).unwrap(), &mut rng).unwrap();
        let c = cfg();
        let mv = ModelVector::new(vec![0.0, 1.5, -0.25, 999.999999, -1000.0]);
        let cts = encrypt_vector(&mv, &pk, &c, &mut rng).unwrap();
        assert_eq!(cts.len(), mv.len());
        let back = decrypt_vector(&cts, &sk, 1, &c).unwrap();
        assert!(back.max_abs_diff(&mv) <= 1.0 / (2.0 * c.scale as f64));
    }

    #[test]
    fn empty_vector_roundtrips_empty() {
        let mut rng = rng(4);
        let (pk, sk) = keygen(PaillierParams::new(128).unwrap(), &mut rng).unwrap();
        let c = cfg();
        let cts = encrypt_vector(&ModelVector::zeros(0), &pk, &c, &mut rng).unwrap();
        assert!(cts.is_empty());
        assert!(decrypt_vector(&cts, &sk, 1, &c).unwrap().is_empty());
    }

    #[test]
    fn encrypted_sum_matches_plaintext_mean() {
        // FedAvg oracle: the mean computed directly on the reals
        let mut rng = rng(5);
        let (pk, sk) = keygen(PaillierParams::new(128).unwrap(), &mut rng).unwrap();
        let c = cfg();
        let m = 8;
        let u = 5u64;
        let vectors: Vec<ModelVector> = (0..u)
            .map(|_| {
                ModelVector::new(
                    (0..m)
                        .map(|_| rand::Rng::random_range(&mut rng, -10.0..10.0))
                        .collect(),
                )
            })
            .collect();
        let oracle: Vec<f64> = (0..m)
            .map(|j| vectors.iter().map(|v| v.values()[j]).sum::<f64>() / u as f64)
            .collect();

        let encrypted: Vec<Vec<_>> = vectors
            .iter()
            .map(|v| encrypt_vector(v, &pk, &c, &mut rng).unwrap())
            .collect();
        let ones = vec![num_traits::One::one(); u as usize];
        let aggregate: Vec<_> = (0..m)
            .map(|j| {
                let column: Vec<_> = encrypted.iter().map(|cts| cts[j].clone()).collect();
                pk.eval(&column, &ones).unwrap()
            })
            .collect();
        let decoded = decrypt_vector(&aggregate, &sk, u, &c).unwrap();
        let tolerance = 1.0 / (2.0 * c.scale as f64);
        for (got, want) in decoded.values().iter().zip(&oracle) {
            assert!((got - want).abs() <= tolerance, "{got} vs {want}");
        }
    }

    #[test]
    fn element_errors_carry_the_index() {
        let mut rng = rng(6);
        let (pk, _) = keygen(PaillierParams::new(128).unwrap(), &mut rng).unwrap();
        let c = cfg();
        let mv = ModelVector::new(vec![0.0, f64::NAN]);
        match encrypt_vector(&mv, &pk, &c, &mut rng).unwrap_err() {
            VectorError::Encoding { index, source } => {
                assert_eq!(index, 1);
                assert_eq!(source, EncodingError::NonFinite);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn undersized_modulus_is_rejected_up_front() {
        let mut rng = rng(7);
        let (pk, _) = keygen(PaillierParams::new(32).unwrap(), &mut rng).unwrap();
        let c = cfg();
        let mv = ModelVector::zeros(2);
        assert_eq!(
            encrypt_vector(&mv, &pk, &c, &mut rng).unwrap_err(),
            VectorError::Config(EncodingError::ModulusTooSmall)
        );
    }
}
