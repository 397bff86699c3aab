//! Textbook RSA: key generation, block encryption and a length-prefixed
//! byte-string framing on top of it.
//!
//! Nothing here is semantically secure. There is no randomized padding and
//! no blinding; the framing only exists so arbitrary byte strings map
//! reversibly onto integers below the modulus.
//!
//! Byte framing: each plaintext block is `len:u16be ‖ data ‖ 0x00…`, exactly
//! `B = ⌊(bitlen(n) − 1) / 8⌋` bytes long, read as a big-endian integer.
//! Since `8B < bitlen(n)` every such integer is below `n`.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arith::{mod_inverse, mod_pow, to_be_fixed};
use super::prime::{is_probable_prime, random_prime};
use super::CryptoError;

/// Smallest accepted `rsa_keygen` modulus size.
pub const MIN_KEY_BITS: u64 = 8;

/// Preferred public exponent.
pub const DEFAULT_E: u32 = 65_537;

/// Bytes of length prefix in each framed block.
const LEN_PREFIX: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RsaPublicKey {
    n: BigUint,
    e: BigUint,
}

impl RsaPublicKey {
    pub fn new(n: BigUint, e: BigUint) -> Result<Self, CryptoError> {
        if e <= BigUint::one() || e >= n {
            return Err(CryptoError::InvalidKey(
                "public exponent must satisfy 1 < e < n",
            ));
        }
        Ok(Self { n, e })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn e(&self) -> &BigUint {
        &self.e
    }

    /// Bytes needed to hold any value below `n`; the width of a serialized
    /// ciphertext block.
    pub fn modulus_len(&self) -> usize {
        self.n.bits().div_ceil(8) as usize
    }

    /// Plaintext bytes per framed block, including the length prefix.
    pub fn block_capacity(&self) -> usize {
        block_capacity(&self.n)
    }
}

fn block_capacity(n: &BigUint) -> usize {
    (n.bits().saturating_sub(1) / 8) as usize
}

/// A full RSA key: both primes, the modulus, the totient and both exponents.
#[derive(Clone, PartialEq, Eq)]
pub struct RsaKeyPair {
    p: BigUint,
    q: BigUint,
    n: BigUint,
    phi: BigUint,
    e: BigUint,
    d: BigUint,
}

impl std::fmt::Debug for RsaKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RsaKeyPair")
            .field("n", &self.n)
            .field("e", &self.e)
            .finish_non_exhaustive()
    }
}

impl RsaKeyPair {
    /// Builds a key pair from chosen primes and exponent.
    ///
    /// Fails unless `p ≠ q` are both prime and `e` is coprime with and below
    /// `φ(n)`.
    pub fn from_primes(p: BigUint, q: BigUint, e: BigUint) -> Result<Self, CryptoError> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        if p == q {
            return Err(CryptoError::InvalidKey("p and q must be distinct"));
        }
        if !is_probable_prime(&p, &mut rng) || !is_probable_prime(&q, &mut rng) {
            return Err(CryptoError::InvalidKey("p and q must be prime"));
        }
        let phi = (&p - 1u32) * (&q - 1u32);
        if e <= BigUint::one() || e >= phi {
            return Err(CryptoError::InvalidKey(
                "public exponent must satisfy 1 < e < phi",
            ));
        }
        let d = mod_inverse(&e, &phi)?;
        let n = &p * &q;
        Ok(Self { p, q, n, phi, e, d })
    }

    /// Deterministic key generation from a 64-bit seed.
    ///
    /// Each prime is `⌈bit_length / 2⌉` bits. `e` is 65537 when it is below
    /// and coprime with `φ(n)`, otherwise the smallest odd coprime `e ≥ 3`.
    pub fn generate(bit_length: u64, seed: u64) -> Result<Self, CryptoError> {
        if bit_length < MIN_KEY_BITS {
            return Err(CryptoError::BitLengthTooSmall {
                bits: bit_length,
                min: MIN_KEY_BITS,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prime_bits = bit_length.div_ceil(2);
        loop {
            let p = random_prime(prime_bits, &mut rng);
            let q = random_prime(prime_bits, &mut rng);
            if p == q {
                continue;
            }
            let phi = (&p - 1u32) * (&q - 1u32);
            let e = choose_public_exponent(&phi);
            let d = mod_inverse(&e, &phi).expect("e chosen coprime with phi");
            let n = &p * &q;
            return Ok(Self { p, q, n, phi, e, d });
        }
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn phi(&self) -> &BigUint {
        &self.phi
    }

    pub fn e(&self) -> &BigUint {
        &self.e
    }

    pub fn d(&self) -> &BigUint {
        &self.d
    }

    pub fn public_key(&self) -> RsaPublicKey {
        RsaPublicKey {
            n: self.n.clone(),
            e: self.e.clone(),
        }
    }
}

fn choose_public_exponent(phi: &BigUint) -> BigUint {
    let preferred = BigUint::from(DEFAULT_E);
    if &preferred < phi && preferred.gcd(phi).is_one() {
        return preferred;
    }
    // phi is even, so phi - 1 is odd and coprime with it; the scan terminates
    let mut e = BigUint::from(3u32);
    while !e.gcd(phi).is_one() {
        e += 2u32;
    }
    e
}

/// `c = m^e mod n`.
pub fn encrypt_block(m: &BigUint, key: &RsaPublicKey) -> Result<BigUint, CryptoError> {
    if m >= &key.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    mod_pow(m, &key.e, &key.n)
}

/// `m = c^d mod n`.
pub fn decrypt_block(c: &BigUint, pair: &RsaKeyPair) -> Result<BigUint, CryptoError> {
    if c >= &pair.n {
        return Err(CryptoError::MessageOutOfRange);
    }
    mod_pow(c, &pair.d, &pair.n)
}

/// Frames `data` into length-prefixed blocks and encrypts each one.
///
/// Always yields at least one block; the empty string is a single block
/// carrying length 0.
pub fn encrypt_bytes(data: &[u8], key: &RsaPublicKey) -> Result<Vec<BigUint>, CryptoError> {
    let capacity = key.block_capacity();
    if capacity < LEN_PREFIX + 1 {
        return Err(CryptoError::KeyTooSmall { capacity });
    }
    let per_block = (capacity - LEN_PREFIX).min(u16::MAX as usize);
    let mut pieces: Vec<&[u8]> = data.chunks(per_block).collect();
    if pieces.is_empty() {
        pieces.push(&[]);
    }
    pieces
        .into_iter()
        .map(|piece| {
            let mut block = Vec::with_capacity(capacity);
            block.extend_from_slice(&(piece.len() as u16).to_be_bytes());
            block.extend_from_slice(piece);
            block.resize(capacity, 0);
            encrypt_block(&BigUint::from_bytes_be(&block), key)
        })
        .collect()
}

/// Inverse of [`encrypt_bytes`].
pub fn decrypt_bytes(blocks: &[BigUint], pair: &RsaKeyPair) -> Result<Vec<u8>, CryptoError> {
    let capacity = block_capacity(&pair.n);
    if capacity < LEN_PREFIX + 1 {
        return Err(CryptoError::KeyTooSmall { capacity });
    }
    if blocks.is_empty() {
        return Err(CryptoError::MalformedPadding);
    }
    let mut out = Vec::new();
    for c in blocks {
        let m = decrypt_block(c, pair)?;
        let block = to_be_fixed(&m, capacity).ok_or(CryptoError::MalformedPadding)?;
        let len = u16::from_be_bytes([block[0], block[1]]) as usize;
        if len > capacity - LEN_PREFIX {
            return Err(CryptoError::MalformedPadding);
        }
        let (data, fill) = block[LEN_PREFIX..].split_at(len);
        if fill.iter().any(|&b| b != 0) {
            return Err(CryptoError::MalformedPadding);
        }
        out.extend_from_slice(data);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;
    use rand::{Rng, RngCore};
    use std::collections::HashSet;

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    fn toy() -> RsaKeyPair {
        RsaKeyPair::from_primes(big(3), big(11), big(3)).unwrap()
    }

    #[test]
    fn forced_toy_key() {
        let k = toy();
        assert_eq!(k.n(), &big(33));
        assert_eq!(k.phi(), &big(20));
        assert_eq!(k.d(), &big(7));
        assert_eq!((k.d() * k.e()) % k.phi(), big(1));
    }

    #[test]
    fn from_primes_rejects_bad_inputs() {
        assert!(RsaKeyPair::from_primes(big(11), big(11), big(3)).is_err());
        assert!(RsaKeyPair::from_primes(big(9), big(11), big(3)).is_err());
        // gcd(5, 20) = 5
        assert_eq!(
            RsaKeyPair::from_primes(big(3), big(11), big(5)),
            Err(CryptoError::NoInverse)
        );
        assert!(RsaKeyPair::from_primes(big(3), big(11), big(21)).is_err());
    }

    #[test]
    fn toy_block_examples() {
        let k = toy();
        let pk = k.public_key();
        assert_eq!(encrypt_block(&big(2), &pk).unwrap(), big(8));
        assert_eq!(encrypt_block(&big(0), &pk).unwrap(), big(0));
        // 4^3 = 64 = 33 + 31
        assert_eq!(encrypt_block(&big(4), &pk).unwrap(), big(64 % 33));
        assert_eq!(decrypt_block(&big(8), &k).unwrap(), big(2));
        assert_eq!(decrypt_block(&big(31), &k).unwrap(), big(4));
        assert_eq!(decrypt_block(&big(1), &k).unwrap(), big(1));
        assert_eq!(
            encrypt_block(&big(33), &pk),
            Err(CryptoError::MessageOutOfRange)
        );
        assert_eq!(
            decrypt_block(&big(40), &k),
            Err(CryptoError::MessageOutOfRange)
        );
    }

    #[test]
    fn toy_exhaustive_round_trip() {
        let k = toy();
        let pk = k.public_key();
        for m in 0..33u64 {
            let c = encrypt_block(&big(m), &pk).unwrap();
            assert_eq!(decrypt_block(&c, &k).unwrap(), big(m));
        }
    }

    #[test]
    fn generated_keys_hold_invariants() {
        for seed in 0..200u64 {
            let bits = 8 + seed % 120;
            let k = RsaKeyPair::generate(bits, seed).unwrap();
            assert_ne!(k.p(), k.q());
            assert_eq!(k.n(), &(k.p() * k.q()));
            assert_eq!(k.phi(), &((k.p() - 1u32) * (k.q() - 1u32)));
            assert!(k.e() > &big(1) && k.e() < k.phi());
            assert_eq!((k.d() * k.e()) % k.phi(), big(1));
            assert_eq!(k.p().bits(), bits.div_ceil(2));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            RsaKeyPair::generate(96, 5).unwrap(),
            RsaKeyPair::generate(96, 5).unwrap()
        );
    }

    #[test]
    fn prefers_65537() {
        let k = RsaKeyPair::generate(128, 3).unwrap();
        if (k.phi() % big(65537)).is_zero() {
            assert_ne!(k.e(), &big(65537));
        } else {
            assert_eq!(k.e(), &big(65537));
        }
        // phi = 120 at 8 bits is below 65537, so the fallback scan runs
        let tiny = RsaKeyPair::generate(8, 0).unwrap();
        assert!(tiny.e() < tiny.phi());
    }

    #[test]
    fn distinct_seeds_distinct_primes() {
        let mut seen = HashSet::new();
        for seed in 0..100u64 {
            let k = RsaKeyPair::generate(64, seed).unwrap();
            assert!(
                seen.insert((k.p().clone(), k.q().clone())),
                "duplicate primes at seed {seed}"
            );
        }
    }

    #[test]
    fn below_minimum_bits() {
        assert_eq!(
            RsaKeyPair::generate(4, 1),
            Err(CryptoError::BitLengthTooSmall { bits: 4, min: 8 })
        );
    }

    #[test]
    fn empty_string_is_one_block() {
        let k = RsaKeyPair::generate(64, 11).unwrap();
        let blocks = encrypt_bytes(&[], &k.public_key()).unwrap();
        assert_eq!(blocks.len(), 1);
        let m = decrypt_block(&blocks[0], &k).unwrap();
        // length prefix 0 followed by zero fill is the integer 0, a fixed point
        assert!(m.is_zero());
        assert_eq!(decrypt_bytes(&blocks, &k).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn block_count_for_256_bit_modulus() {
        let k = RsaKeyPair::generate(256, 2).unwrap();
        let pk = k.public_key();
        let b = pk.block_capacity();
        assert_eq!(b, ((k.n().bits() - 1) / 8) as usize);
        let data = vec![0xabu8; 100];
        let blocks = encrypt_bytes(&data, &pk).unwrap();
        assert_eq!(blocks.len(), 100usize.div_ceil(b - 2));
        assert_eq!(decrypt_bytes(&blocks, &k).unwrap(), data);
    }

    #[test]
    fn key_too_small_for_framing() {
        // n = 33 has 6 bits, capacity 0
        let k = toy();
        assert!(matches!(
            encrypt_bytes(b"x", &k.public_key()),
            Err(CryptoError::KeyTooSmall { .. })
        ));
    }

    #[test]
    fn malformed_length_prefix() {
        let k = RsaKeyPair::generate(64, 4).unwrap();
        let pk = k.public_key();
        let cap = pk.block_capacity();
        let mut block = vec![0u8; cap];
        block[..2].copy_from_slice(&((cap - 1) as u16).to_be_bytes());
        let c = encrypt_block(&BigUint::from_bytes_be(&block), &pk).unwrap();
        assert_eq!(decrypt_bytes(&[c], &k), Err(CryptoError::MalformedPadding));
        assert_eq!(decrypt_bytes(&[], &k), Err(CryptoError::MalformedPadding));
    }

    #[test]
    fn random_kib_round_trip() {
        let k = RsaKeyPair::generate(256, 77).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1024);
        for _ in 0..8 {
            let mut data = vec![0u8; 1024];
            rng.fill_bytes(&mut data);
            let blocks = encrypt_bytes(&data, &k.public_key()).unwrap();
            assert_eq!(decrypt_bytes(&blocks, &k).unwrap(), data);
        }
        let len = rng.gen_range(0..50);
        let short: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let blocks = encrypt_bytes(&short, &k.public_key()).unwrap();
        assert_eq!(decrypt_bytes(&blocks, &k).unwrap(), short);
    }
}
