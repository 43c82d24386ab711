//! Big-integer number theory shared by the cryptographic modules:
//! modular inverse, Miller-Rabin primality testing, and prime generation.

use alloc::vec::Vec;

use num_bigint::{BigInt, BigRng09, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rand::Rng;

/// Witness rounds for random-base Miller-Rabin during prime generation.
/// Error probability is at most 4^-64 per accepted candidate.
const MR_ROUNDS: usize = 64;

/// Fixed witness set. Deterministically correct for all n < 3.3·10^24 and a
/// strong heuristic above that; used where no randomness source is available
/// (validating injected field moduli).
const FIXED_WITNESSES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

const SMALL_PRIMES: [u32; 54] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251,
];

/// Modular inverse of `a` modulo `modulus`, if it exists.
pub fn mod_inverse(a: &BigUint, modulus: &BigUint) -> Option<BigUint> {
    if modulus.is_zero() {
        return None;
    }
    let a = BigInt::from(a.clone());
    let m = BigInt::from(modulus.clone());
    let ext = a.extended_gcd(&m);
    if !ext.gcd.is_one() {
        return None;
    }
    let mut inv = ext.x % &m;
    if inv.is_negative() {
        inv += &m;
    }
    Some(inv.to_biguint().expect("non-negative after reduction"))
}

fn miller_rabin_witness(n: &BigUint, a: &BigUint, d: &BigUint, r: u32) -> bool {
    // Returns true if `a` proves n composite.
    let n_minus_1 = n - 1u32;
    let mut x = a.modpow(d, n);
    if x.is_one() || x == n_minus_1 {
        return false;
    }
    for _ in 1..r {
        x = (&x * &x) % n;
        if x == n_minus_1 {
            return false;
        }
    }
    true
}

fn decompose(n: &BigUint) -> (BigUint, u32) {
    // n - 1 = d * 2^r with d odd
    let n_minus_1 = n - 1u32;
    let r = n_minus_1.trailing_zeros().unwrap_or(0) as u32;
    let d = &n_minus_1 >> r;
    (d, r)
}

fn trial_division(n: &BigUint) -> Option<bool> {
    for p in SMALL_PRIMES {
        let p = BigUint::from(p);
        if &p * &p > *n {
            return Some(true);
        }
        if (n % &p).is_zero() {
            return Some(*n == p);
        }
    }
    None
}

/// Primality test with the fixed witness set.
pub fn is_probable_prime(n: &BigUint) -> bool {
    if n < &BigUint::from(2u32) {
        return false;
    }
    if let Some(verdict) = trial_division(n) {
        return verdict;
    }
    let (d, r) = decompose(n);
    for a in FIXED_WITNESSES {
        let a = BigUint::from(a);
        if a >= n - 1u32 {
            continue;
        }
        if miller_rabin_witness(n, &a, &d, r) {
            return false;
        }
    }
    true
}

/// Primality test strengthened with random witnesses.
pub fn is_probable_prime_rng<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    if !is_probable_prime(n) {
        return false;
    }
    let two = BigUint::from(2u32);
    if n < &BigUint::from(7u32) {
        return true;
    }
    let (d, r) = decompose(n);
    let upper = n - 2u32;
    for _ in 0..MR_ROUNDS {
        let a = rng.random_biguint_range(&two, &upper);
        if miller_rabin_witness(n, &a, &d, r) {
            return false;
        }
    }
    true
}

/// Generates a random probable prime of exactly `bits` bits with the two
/// most significant bits set, so the product of two such primes always has
/// the full 2·`bits` length. Returns `None` after `max_attempts` candidates.
pub fn generate_prime<R: Rng + ?Sized>(
    bits: u64,
    max_attempts: u32,
    rng: &mut R,
) -> Option<BigUint> {
    assert!(bits >= 4, "prime size too small");
    for _ in 0..max_attempts {
        let mut candidate = rng.random_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime_rng(&candidate, rng) {
            return Some(candidate);
        }
    }
    None
}

/// Uniform element of [1, bound) coprime to `bound`.
pub fn random_coprime_below<R: Rng + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    loop {
        let r = rng.random_biguint_range(&BigUint::one(), bound);
        if r.gcd(bound).is_one() {
            return r;
        }
    }
}

/// Big-endian bytes without leading zeros; `[0]` for zero. Shared by the
/// key fingerprint and the hex wire form.
pub fn canonical_bytes(n: &BigUint) -> Vec<u8> {
    n.to_bytes_be()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn mod_inverse_small() {
        // 3 * 5 = 15 ≡ 1 (mod 7)
        let inv = mod_inverse(&BigUint::from(3u32), &BigUint::from(7u32)).unwrap();
        assert_eq!(inv, BigUint::from(5u32));
        // gcd(6, 9) != 1, no inverse
        assert!(mod_inverse(&BigUint::from(6u32), &BigUint::from(9u32)).is_none());
    }

    #[test]
    fn mod_inverse_agrees_with_fermat() {
        // For prime p, a^-1 = a^(p-2) mod p.
        let p = BigUint::from(2147483647u64); // 2^31 - 1
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let a = rng.random_biguint_range(&BigUint::one(), &p);
            let inv = mod_inverse(&a, &p).unwrap();
            let fermat = a.modpow(&(&p - 2u32), &p);
            assert_eq!(inv, fermat);
        }
    }

    #[test]
    fn primality_known_values() {
        for p in [2u64, 3, 17, 257, 65537, 2147483647, 2305843009213693951] {
            assert!(is_probable_prime(&BigUint::from(p)), "{p} is prime");
        }
        for c in [0u64, 1, 4, 15, 143, 65535, 3215031751] {
            assert!(!is_probable_prime(&BigUint::from(c)), "{c} is composite");
        }
        // Carmichael numbers must not slip through.
        for c in [561u64, 1105, 1729, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(c)), "{c} is Carmichael");
        }
    }

    #[test]
    fn generated_primes_have_exact_bit_length() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for bits in [8u64, 16, 32, 128] {
            let p = generate_prime(bits, 10_000, &mut rng).unwrap();
            assert_eq!(p.bits(), bits);
            assert!(is_probable_prime(&p));
            // top two bits set
            assert!(p.bit(bits - 1) && p.bit(bits - 2));
        }
    }

    #[test]
    fn random_coprime_is_coprime() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let bound = BigUint::from(143u32); // 11 * 13
        for _ in 0..100 {
            let r = random_coprime_below(&bound, &mut rng);
            assert!(r >= BigUint::one() && r < bound);
            assert!(r.gcd(&bound).is_one());
        }
    }
}
