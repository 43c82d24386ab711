//! Shamir threshold secret sharing over a prime field.
//!
//! A secret `s` is hidden as the constant term of a random polynomial of
//! degree `t − 1`; shares are evaluations at x = 1, 2, 3, … and any `t`
//! of them recover `s` by Lagrange interpolation at zero. Fewer than `t`
//! distinct shares are refused outright — that refusal is the security
//! gate the aggregation protocol leans on.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::fmt;

use num_bigint::{BigRng09, BigUint};
use num_traits::{One, Zero};
use rand::Rng;

use crate::arith;

/// The default field modulus: the 256-bit prime 2²⁵⁶ − 2³² − 977.
const DEFAULT_PRIME_HEX: &[u8] =
    b"fffffffffffffffffffffffffffffffffffffffffffffffffffffffefffffc2f";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShamirError {
    /// Injected field modulus failed the primality check.
    NotPrime,
    /// Threshold of zero can recover nothing.
    ThresholdZero,
    /// Recovery threshold larger than the number of shares requested.
    ThresholdExceedsShareCount { threshold: usize, share_count: u64 },
    /// Secret not reduced modulo the field prime.
    SecretOutOfField,
    /// Coefficient not reduced modulo the field prime.
    CoefficientOutOfField,
    /// Share index 0, or one that collides modulo the field prime.
    IndexOutOfField(u64),
    /// Share value not reduced modulo the field prime.
    ValueOutOfField(u64),
    /// Fewer distinct shares than the recovery threshold: refused.
    InsufficientShares { have: usize, need: usize },
    /// Two shares claim the same evaluation point.
    DuplicateIndex(u64),
}

impl fmt::Display for ShamirError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotPrime => write!(f, "field modulus is not prime"),
            Self::ThresholdZero => write!(f, "threshold must be at least 1"),
            Self::ThresholdExceedsShareCount { threshold, share_count } => {
                write!(f, "threshold {threshold} exceeds share count {share_count}")
            }
            Self::SecretOutOfField => write!(f, "secret not in the field"),
            Self::CoefficientOutOfField => write!(f, "coefficient not in the field"),
            Self::IndexOutOfField(i) => write!(f, "share index {i} invalid for this field"),
            Self::ValueOutOfField(i) => write!(f, "share {i} has a value outside the field"),
            Self::InsufficientShares { have, need } => {
                write!(f, "insufficient shares: {have} distinct, {need} required")
            }
            Self::DuplicateIndex(i) => write!(f, "duplicate share index {i}"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for ShamirError {}

/// The prime field all shares of one deployment live in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldParams {
    prime: BigUint,
}

impl FieldParams {
    /// Accepts any prime modulus; small primes are the test seam.
    pub fn new(prime: BigUint) -> Result<Self, ShamirError> {
        if !arith::is_probable_prime(&prime) {
            return Err(ShamirError::NotPrime);
        }
        Ok(Self { prime })
    }

    pub fn prime(&self) -> &BigUint {
        &self.prime
    }
}

impl Default for FieldParams {
    fn default() -> Self {
        let prime = BigUint::parse_bytes(DEFAULT_PRIME_HEX, 16).expect("valid hex constant");
        Self { prime }
    }
}

/// One evaluation point of a share polynomial, bound to the epoch it was
/// issued for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub index: u64,
    pub value: BigUint,
    pub tag: u64,
}

/// A sampled share polynomial. The issuer keeps this and evaluates points
/// on demand, so a large share budget costs nothing up front.
#[derive(Debug, Clone)]
pub struct SharePolynomial {
    /// `coeffs[0]` is the secret; degree is `threshold − 1`.
    coeffs: Vec<BigUint>,
    prime: BigUint,
}

impl SharePolynomial {
    /// Samples coefficients `a_1 … a_{t−1}` uniformly from the field.
    pub fn sample<R: Rng + ?Sized>(
        threshold: usize,
        secret: BigUint,
        field: &FieldParams,
        rng: &mut R,
    ) -> Result<Self, ShamirError> {
        if threshold == 0 {
            return Err(ShamirError::ThresholdZero);
        }
        if secret >= field.prime {
            return Err(ShamirError::SecretOutOfField);
        }
        let mut coeffs = Vec::with_capacity(threshold);
        coeffs.push(secret);
        for _ in 1..threshold {
            coeffs.push(rng.random_biguint_below(&field.prime));
        }
        Ok(Self { coeffs, prime: field.prime.clone() })
    }

    /// Builds the polynomial from fixed coefficients — the deterministic
    /// seam behind the hand-derived test vectors.
    pub fn from_coefficients(
        coeffs: Vec<BigUint>,
        field: &FieldParams,
    ) -> Result<Self, ShamirError> {
        if coeffs.is_empty() {
            return Err(ShamirError::ThresholdZero);
        }
        if coeffs[0] >= field.prime {
            return Err(ShamirError::SecretOutOfField);
        }
        if coeffs[1..].iter().any(|c| c >= &field.prime) {
            return Err(ShamirError::CoefficientOutOfField);
        }
        Ok(Self { coeffs, prime: field.prime.clone() })
    }

    pub fn threshold(&self) -> usize {
        self.coeffs.len()
    }

    pub fn secret(&self) -> &BigUint {
        &self.coeffs[0]
    }

    /// Evaluates at `x = index` (1-based; indices must stay below the
    /// field prime so evaluation points cannot collide).
    pub fn share_at(&self, index: u64, tag: u64) -> Result<Share, ShamirError> {
        let x = BigUint::from(index);
        if index == 0 || x >= self.prime {
            return Err(ShamirError::IndexOutOfField(index));
        }
        let mut acc = BigUint::zero();
        for c in self.coeffs.iter().rev() {
            acc = (acc * &x + c) % &self.prime;
        }
        Ok(Share { index, value: acc, tag })
    }
}

/// Splits `secret` into `share_count` shares with recovery threshold
/// `threshold`, at evaluation points 1 ‥ share_count.
pub fn share<R: Rng + ?Sized>(
    share_count: u64,
    threshold: usize,
    secret: BigUint,
    field: &FieldParams,
    tag: u64,
    rng: &mut R,
) -> Result<Vec<Share>, ShamirError> {
    if threshold as u64 > share_count {
        return Err(ShamirError::ThresholdExceedsShareCount { threshold, share_count });
    }
    let poly = SharePolynomial::sample(threshold, secret, field, rng)?;
    (1..=share_count).map(|i| poly.share_at(i, tag)).collect()
}

/// Recovers the secret from at least `threshold` distinct shares by
/// Lagrange interpolation at zero over the first `threshold` of them.
/// Fewer than `threshold` distinct shares — or any duplicated index — is
/// an error, never a guess.
pub fn combine(
    threshold: usize,
    shares: &[Share],
    field: &FieldParams,
) -> Result<BigUint, ShamirError> {
    if threshold == 0 {
        return Err(ShamirError::ThresholdZero);
    }
    let prime = &field.prime;
    let mut seen = BTreeSet::new();
    for s in shares {
        if s.index == 0 || BigUint::from(s.index) >= *prime {
            return Err(ShamirError::IndexOutOfField(s.index));
        }
        if s.value >= *prime {
            return Err(ShamirError::ValueOutOfField(s.index));
        }
        if !seen.insert(s.index) {
            return Err(ShamirError::DuplicateIndex(s.index));
        }
    }
    if shares.len() < threshold {
        return Err(ShamirError::InsufficientShares { have: shares.len(), need: threshold });
    }
    let subset = &shares[..threshold];

    let mut secret = BigUint::zero();
    for (i, si) in subset.iter().enumerate() {
        let xi = BigUint::from(si.index);
        let mut numerator = BigUint::one();
        let mut denominator = BigUint::one();
        for (j, sj) in subset.iter().enumerate() {
            if i == j {
                continue;
            }
            let xj = BigUint::from(sj.index);
            numerator = numerator * &xj % prime;
            let diff = if xj >= xi {
                (&xj - &xi) % prime
            } else {
                prime - (&xi - &xj) % prime
            };
            denominator = denominator * diff % prime;
        }
        let inv = arith::mod_inverse(&denominator, prime)
            .expect("distinct points give a unit denominator");
        secret = (secret + &si.value * numerator % prime * inv) % prime;
    }
    Ok(secret)
}
