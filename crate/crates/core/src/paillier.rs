//! Paillier additively homomorphic cryptosystem over big integers.
//!
//! Uses the efficient `g = n + 1` instantiation: encryption is
//! `c = (1 + m·n) · r^n mod n²` and the product of ciphertexts decrypts to
//! the sum of plaintexts. Decryption runs through the CRT over the key
//! primes, which computes exactly `L(c^λ mod n²) · µ mod n` but roughly
//! four times faster.

use alloc::vec::Vec;
use core::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::arith;

/// Smallest accepted modulus size. Anything below this has no plaintext
/// space worth speaking of.
pub const MIN_MODULUS_BITS: u64 = 16;

/// Default modulus size for production keys.
pub const DEFAULT_MODULUS_BITS: u64 = 2048;

/// Candidates tried per prime before keygen gives up.
const KEYGEN_MAX_ATTEMPTS: u32 = 100_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PaillierError {
    /// Security parameter below [`MIN_MODULUS_BITS`].
    ModulusTooSmall(u64),
    /// No prime found within the retry bound.
    PrimeGeneration,
    /// Injected key material is not prime.
    NotPrime,
    /// The two key primes must differ.
    EqualPrimes,
    /// Reconstructed public key is not the `g = n + 1` instantiation.
    InvalidPublicKey,
    /// Plaintext or evaluation coefficient outside `[0, n)`.
    PlaintextOutOfRange,
    /// Ciphertext value outside `(0, n²)` or sharing a factor with `n`.
    InvalidCiphertext,
    /// Operand belongs to a different key pair.
    KeyMismatch,
    /// Evaluation over no ciphertexts.
    EmptyInput,
    /// Ciphertext and coefficient sequences differ in length.
    LengthMismatch { ciphertexts: usize, coefficients: usize },
}

impl fmt::Display for PaillierError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ModulusTooSmall(bits) => {
                write!(f, "modulus too small: {bits} bits < {MIN_MODULUS_BITS}")
            }
            Self::PrimeGeneration => write!(f, "prime generation failed within retry bound"),
            Self::NotPrime => write!(f, "injected factor is not prime"),
            Self::EqualPrimes => write!(f, "key primes must be distinct"),
            Self::InvalidPublicKey => write!(f, "public key is not of the g = n + 1 form"),
            Self::PlaintextOutOfRange => write!(f, "plaintext outside [0, n)"),
            Self::InvalidCiphertext => write!(f, "ciphertext outside unit group of Z_(n^2)"),
            Self::KeyMismatch => write!(f, "operand belongs to a different key pair"),
            Self::EmptyInput => write!(f, "evaluation needs at least one ciphertext"),
            Self::LengthMismatch { ciphertexts, coefficients } => write!(
                f,
                "{ciphertexts} ciphertexts but {coefficients} coefficients"
            ),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for PaillierError {}

/// Security parameter for key generation: the bit length of `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PaillierParams {
    modulus_bits: u64,
}

impl PaillierParams {
    pub fn new(modulus_bits: u64) -> Result<Self, PaillierError> {
        if modulus_bits < MIN_MODULUS_BITS {
            return Err(PaillierError::ModulusTooSmall(modulus_bits));
        }
        Ok(Self { modulus_bits })
    }

    pub fn modulus_bits(&self) -> u64 {
        self.modulus_bits
    }
}

impl Default for PaillierParams {
    fn default() -> Self {
        Self { modulus_bits: DEFAULT_MODULUS_BITS }
    }
}

/// Identifies the key pair a ciphertext was produced under: the leading
/// 128 bits of SHA-256 over the big-endian bytes of `n`. Operands are
/// checked for matching fingerprints before any homomorphic operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyFingerprint([u8; 16]);

impl KeyFingerprint {
    fn of_modulus(n: &BigUint) -> Self {
        let digest = Sha256::digest(arith::canonical_bytes(n));
        let mut bytes = [0u8; 16];
        bytes.copy_from_slice(&digest[..16]);
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 16] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Self {
        Self(bytes)
    }
}

impl fmt::Display for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    g: BigUint,
    n_squared: BigUint,
    fingerprint: KeyFingerprint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierSecretKey {
    lambda: BigUint,
    mu: BigUint,
    n: BigUint,
    n_squared: BigUint,
    fingerprint: KeyFingerprint,
    crt: CrtContext,
}

/// Precomputed per-prime values for CRT decryption.
#[derive(Debug, Clone, PartialEq, Eq)]
struct CrtContext {
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    /// `(L_p(g^{p-1} mod p²))^{-1} mod p`
    hp: BigUint,
    /// `(L_q(g^{q-1} mod q²))^{-1} mod q`
    hq: BigUint,
    /// `q^{-1} mod p`
    q_inv_p: BigUint,
}

/// A Paillier ciphertext: an element of the unit group of `Z_(n²)` tagged
/// with the key it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_fingerprint: KeyFingerprint,
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_fingerprint(&self) -> KeyFingerprint {
        self.key_fingerprint
    }

    /// Reassembles a ciphertext from its wire fields. Range membership is
    /// rechecked by whichever key consumes it.
    pub fn from_parts(value: BigUint, key_fingerprint: KeyFingerprint) -> Self {
        Self { value, key_fingerprint }
    }
}

/// Generates a fresh key pair: `n = p·q` for distinct random primes of
/// half the modulus size each, `g = n + 1`, `λ = lcm(p−1, q−1)`, and
/// `µ = L(g^λ mod n²)^{-1} mod n`.
pub fn keygen<R: Rng + ?Sized>(
    params: PaillierParams,
    rng: &mut R,
) -> Result<(PaillierPublicKey, PaillierSecretKey), PaillierError> {
    let p_bits = params.modulus_bits.div_ceil(2);
    let q_bits = params.modulus_bits / 2;
    let p = arith::generate_prime(p_bits, KEYGEN_MAX_ATTEMPTS, rng)
        .ok_or(PaillierError::PrimeGeneration)?;
    let q = loop {
        let candidate = arith::generate_prime(q_bits, KEYGEN_MAX_ATTEMPTS, rng)
            .ok_or(PaillierError::PrimeGeneration)?;
        if candidate != p {
            break candidate;
        }
    };
    keypair_from_primes(p, q)
}

/// Builds a key pair from caller-supplied primes. This is the
/// deterministic seam used by tests and small fixed-key vectors; `keygen`
/// is the production path.
pub fn keypair_from_primes(
    p: BigUint,
    q: BigUint,
) -> Result<(PaillierPublicKey, PaillierSecretKey), PaillierError> {
    if p == q {
        return Err(PaillierError::EqualPrimes);
    }
    if !arith::is_probable_prime(&p) || !arith::is_probable_prime(&q) {
        return Err(PaillierError::NotPrime);
    }
    let n = &p * &q;
    let g = &n + 1u32;
    let n_squared = &n * &n;
    let fingerprint = KeyFingerprint::of_modulus(&n);

    let p_minus_1 = &p - 1u32;
    let q_minus_1 = &q - 1u32;
    let lambda = p_minus_1.lcm(&q_minus_1);
    let mu = arith::mod_inverse(&l_function(&g.modpow(&lambda, &n_squared), &n), &n)
        .expect("L(g^lambda) is invertible for valid primes");

    let p_squared = &p * &p;
    let q_squared = &q * &q;
    let hp = arith::mod_inverse(&l_function(&g.modpow(&p_minus_1, &p_squared), &p), &p)
        .expect("invertible by construction");
    let hq = arith::mod_inverse(&l_function(&g.modpow(&q_minus_1, &q_squared), &q), &q)
        .expect("invertible by construction");
    let q_inv_p = arith::mod_inverse(&q, &p).expect("p, q coprime");

    let public = PaillierPublicKey {
        n: n.clone(),
        g,
        n_squared: n_squared.clone(),
        fingerprint,
    };
    let secret = PaillierSecretKey {
        lambda,
        mu,
        n,
        n_squared,
        fingerprint,
        crt: CrtContext { p, q, p_squared, q_squared, hp, hq, q_inv_p },
    };
    Ok((public, secret))
}

/// `L(x) = (x − 1) / n`, defined on x ≡ 1 (mod n).
fn l_function(x: &BigUint, n: &BigUint) -> BigUint {
    (x - 1u32) / n
}

impl PaillierPublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// Rebuilds a public key received over the wire. Only the standard
    /// `g = n + 1` form is accepted.
    pub fn from_parts(n: BigUint, g: BigUint) -> Result<Self, PaillierError> {
        if g != &n + 1u32 {
            return Err(PaillierError::InvalidPublicKey);
        }
        let n_squared = &n * &n;
        let fingerprint = KeyFingerprint::of_modulus(&n);
        Ok(Self { n, g, n_squared, fingerprint })
    }

    /// Encrypts `m ∈ [0, n)` with fresh randomness: `c = g^m · r^n mod n²`.
    pub fn encrypt<R: Rng + ?Sized>(
        &self,
        m: &BigUint,
        rng: &mut R,
    ) -> Result<Ciphertext, PaillierError> {
        let randomizer = self.randomizer(rng);
        self.encrypt_with_randomizer(m, &randomizer)
    }

    /// Precomputes the blinding factor `r^n mod n²` for a fresh uniform
    /// `r` coprime to `n`. Randomizers carry the entire
    /// modular-exponentiation cost of encryption, so callers may prepare
    /// them ahead of time.
    pub fn randomizer<R: Rng + ?Sized>(&self, rng: &mut R) -> BigUint {
        let r = arith::random_coprime_below(&self.n, rng);
        r.modpow(&self.n, &self.n_squared)
    }

    /// Encrypts with a caller-supplied blinding factor from [`Self::randomizer`].
    /// Reusing one randomizer forfeits semantic security between the
    /// ciphertexts that share it; the protocol path never does.
    pub fn encrypt_with_randomizer(
        &self,
        m: &BigUint,
        randomizer: &BigUint,
    ) -> Result<Ciphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        // g = n + 1, so g^m = 1 + m·n (mod n²); one multiplication instead
        // of an exponentiation.
        let g_to_m = (1u32 + m * &self.n) % &self.n_squared;
        let value = g_to_m * randomizer % &self.n_squared;
        Ok(Ciphertext { value, key_fingerprint: self.fingerprint })
    }

    /// Applies the linear function given by `coefficients` homomorphically:
    /// the result is `∏ cᵢ^{kᵢ} mod n²`, whose decryption equals
    /// `Σ kᵢ·mᵢ mod n`.
    pub fn eval(
        &self,
        ciphertexts: &[Ciphertext],
        coefficients: &[BigUint],
    ) -> Result<Ciphertext, PaillierError> {
        if ciphertexts.is_empty() {
            return Err(PaillierError::EmptyInput);
        }
        if ciphertexts.len() != coefficients.len() {
            return Err(PaillierError::LengthMismatch {
                ciphertexts: ciphertexts.len(),
                coefficients: coefficients.len(),
            });
        }
        let mut acc = BigUint::one();
        for (ct, k) in ciphertexts.iter().zip(coefficients) {
            self.check_ciphertext(ct)?;
            if k >= &self.n {
                return Err(PaillierError::PlaintextOutOfRange);
            }
            let term = if k.is_one() {
                ct.value.clone()
            } else {
                ct.value.modpow(k, &self.n_squared)
            };
            acc = acc * term % &self.n_squared;
        }
        Ok(Ciphertext { value: acc, key_fingerprint: self.fingerprint })
    }

    /// Checks that a ciphertext belongs to this key and lies in the unit
    /// group of `Z_(n²)`.
    pub fn validate_ciphertext(&self, ct: &Ciphertext) -> Result<(), PaillierError> {
        self.check_ciphertext(ct)
    }

    fn check_ciphertext(&self, ct: &Ciphertext) -> Result<(), PaillierError> {
        if ct.key_fingerprint != self.fingerprint {
            return Err(PaillierError::KeyMismatch);
        }
        if ct.value == BigUint::ZERO
            || ct.value >= self.n_squared
            || !ct.value.gcd(&self.n).is_one()
        {
            return Err(PaillierError::InvalidCiphertext);
        }
        Ok(())
    }
}

impl PaillierSecretKey {
    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }

    pub fn mu(&self) -> &BigUint {
        &self.mu
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.crt.p, &self.crt.q)
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// Decrypts to `m = L(c^λ mod n²) · µ mod n`, computed per prime and
    /// recombined.
    pub fn decrypt(&self, ct: &Ciphertext) -> Result<BigUint, PaillierError> {
        if ct.key_fingerprint != self.fingerprint {
            return Err(PaillierError::KeyMismatch);
        }
        if ct.value == BigUint::ZERO
            || ct.value >= self.n_squared
            || !ct.value.gcd(&self.n).is_one()
        {
            return Err(PaillierError::InvalidCiphertext);
        }
        let crt = &self.crt;
        let m_p =
            l_function(&ct.value.modpow(&(&crt.p - 1u32), &crt.p_squared), &crt.p) * &crt.hp
                % &crt.p;
        let m_q =
            l_function(&ct.value.modpow(&(&crt.q - 1u32), &crt.q_squared), &crt.q) * &crt.hq
                % &crt.q;
        // Garner recombination: m = m_q + q · ((m_p − m_q) · q⁻¹ mod p)
        let diff = if m_p >= m_q {
            (&m_p - &m_q) % &crt.p
        } else {
            (&crt.p - (&m_q - &m_p) % &crt.p) % &crt.p
        };
        let h = diff * &crt.q_inv_p % &crt.p;
        Ok(m_q + h * &crt.q)
    }
}

/// Element-wise encryption of a plaintext slice under one key.
pub fn encrypt_slice<R: Rng + ?Sized>(
    pk: &PaillierPublicKey,
    plaintexts: &[BigUint],
    rng: &mut R,
) -> Result<Vec<Ciphertext>, PaillierError> {
    plaintexts.iter().map(|m| pk.encrypt(m, rng)).collect()
}
