//! Primality testing and random prime generation.
//!
//! Below 2^64 the Miller-Rabin witness set {2, 3, ..., 37} is deterministic.
//! Above it, 32 rounds with bases drawn from the caller's seeded generator.

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;

use super::arith::{mod_pow, mod_pow_u64};

const SMALL_PRIMES: [u32; 24] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
];

const U64_WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller-Rabin rounds used above the deterministic 64-bit range.
pub const RANDOM_ROUNDS: usize = 32;

fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for &p in &U64_WITNESSES {
        if n == p {
            return true;
        }
        if n.is_multiple_of(p) {
            return false;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &U64_WITNESSES {
        let mut x = mod_pow_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = ((x as u128 * x as u128) % n as u128) as u64;
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Returns true when `n` is (probably, above 2^64) prime.
pub fn is_probable_prime<R: Rng + ?Sized>(n: &BigUint, rng: &mut R) -> bool {
    if let Some(small) = n.to_u64() {
        return is_prime_u64(small);
    }
    if !n.bit(0) {
        return false;
    }
    for &p in &SMALL_PRIMES {
        if (n % p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let two = BigUint::from(2u8);
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'round: for _ in 0..RANDOM_ROUNDS {
        let a = rng.gen_biguint_range(&two, &n_minus_one);
        let mut x = mod_pow(&a, &d, n).expect("n > 1");
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = &x * &x % n;
            if x == n_minus_one {
                continue 'round;
            }
        }
        return false;
    }
    true
}

/// Draws a prime of exactly `bits` bits (top bit set).
pub fn random_prime<R: Rng + ?Sized>(bits: u64, rng: &mut R) -> BigUint {
    assert!(bits >= 2, "no primes below 2 bits");
    if bits == 2 {
        return BigUint::from(3u8);
    }
    loop {
        let mut candidate = rng.gen_biguint(bits);
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, rng) {
            return candidate;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sieve(limit: usize) -> Vec<bool> {
        let mut is = vec![true; limit + 1];
        is[0] = false;
        is[1] = false;
        let mut i = 2;
        while i * i <= limit {
            if is[i] {
                for j in (i * i..=limit).step_by(i) {
                    is[j] = false;
                }
            }
            i += 1;
        }
        is
    }

    #[test]
    fn agrees_with_sieve() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = sieve(20_000);
        for (n, &want) in table.iter().enumerate() {
            assert_eq!(
                is_probable_prime(&BigUint::from(n), &mut rng),
                want,
                "n = {n}"
            );
        }
    }

    #[test]
    fn known_large_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // 2^61 - 1 and 2^127 - 1 are Mersenne primes; 2^64 + 1 = 274177 * 67280421310721
        let m61 = (BigUint::one() << 61u32) - 1u32;
        let m127 = (BigUint::one() << 127u32) - 1u32;
        let f = (BigUint::one() << 64u32) + 1u32;
        assert!(is_probable_prime(&m61, &mut rng));
        assert!(is_probable_prime(&m127, &mut rng));
        assert!(!is_probable_prime(&f, &mut rng));
        // strong pseudoprime to bases 2, 3, 5, 7; and a Carmichael number
        assert!(!is_probable_prime(
            &BigUint::from(3_215_031_751u64),
            &mut rng
        ));
        assert!(!is_probable_prime(&BigUint::from(561u32), &mut rng));
    }

    #[test]
    fn random_prime_has_requested_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bits in [2u64, 3, 4, 8, 17, 64, 65, 128] {
            let p = random_prime(bits, &mut rng);
            assert_eq!(p.bits(), bits);
            assert!(is_probable_prime(&p, &mut rng));
        }
    }
}
