//! Modular arithmetic over arbitrary-precision unsigned integers.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use super::CryptoError;

/// Computes `base^exponent mod modulus` by left-to-right square-and-multiply.
///
/// One squaring per exponent bit plus one multiplication per set bit, so the
/// cost is `O(log exponent)` multiplications.
pub fn mod_pow(
    base: &BigUint,
    exponent: &BigUint,
    modulus: &BigUint,
) -> Result<BigUint, CryptoError> {
    if modulus.is_zero() {
        return Err(CryptoError::ZeroModulus);
    }
    if modulus.is_one() {
        return Ok(BigUint::zero());
    }
    let base = base % modulus;
    let mut acc = BigUint::one();
    for i in (0..exponent.bits()).rev() {
        acc = &acc * &acc % modulus;
        if exponent.bit(i) {
            acc = acc * &base % modulus;
        }
    }
    Ok(acc)
}

/// `mod_pow` for machine words, used by the small-prime Miller-Rabin path.
pub(crate) fn mod_pow_u64(base: u64, mut exponent: u64, modulus: u64) -> u64 {
    debug_assert!(modulus > 0);
    let m = modulus as u128;
    let mut base = base as u128 % m;
    let mut acc = 1u128 % m;
    while exponent > 0 {
        if exponent & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exponent >>= 1;
    }
    acc as u64
}

/// Extended Euclid: returns `(g, x, y)` with `a·x + b·y = g = gcd(a, b)`.
pub fn extended_gcd(a: &BigInt, b: &BigInt) -> (BigInt, BigInt, BigInt) {
    let (mut old_r, mut r) = (a.clone(), b.clone());
    let (mut old_s, mut s) = (BigInt::one(), BigInt::zero());
    let (mut old_t, mut t) = (BigInt::zero(), BigInt::one());
    while !r.is_zero() {
        let (quot, rem) = old_r.div_rem(&r);
        old_r = std::mem::replace(&mut r, rem);
        let next_s = &old_s - &quot * &s;
        old_s = std::mem::replace(&mut s, next_s);
        let next_t = &old_t - &quot * &t;
        old_t = std::mem::replace(&mut t, next_t);
    }
    if old_r.is_negative() {
        (-old_r, -old_s, -old_t)
    } else {
        (old_r, old_s, old_t)
    }
}

/// Multiplicative inverse of `a` modulo `m`, in `[1, m)`.
pub fn mod_inverse(a: &BigUint, m: &BigUint) -> Result<BigUint, CryptoError> {
    if *m < BigUint::from(2u8) {
        return Err(CryptoError::ModulusTooSmall);
    }
    let m_signed = BigInt::from(m.clone());
    let (g, x, _) = extended_gcd(&BigInt::from(a % m), &m_signed);
    if !g.is_one() {
        return Err(CryptoError::NoInverse);
    }
    let x = x.mod_floor(&m_signed);
    Ok(x.to_biguint().expect("mod_floor result is non-negative"))
}

/// Minimal big-endian encoding; zero encodes as the empty string.
pub fn to_be_minimal(x: &BigUint) -> Vec<u8> {
    if x.is_zero() {
        Vec::new()
    } else {
        x.to_bytes_be()
    }
}

/// Big-endian encoding left-padded with zeros to exactly `width` bytes.
///
/// Returns `None` if `x` needs more than `width` bytes.
pub fn to_be_fixed(x: &BigUint, width: usize) -> Option<Vec<u8>> {
    let raw = to_be_minimal(x);
    if raw.len() > width {
        return None;
    }
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    Some(out)
}
