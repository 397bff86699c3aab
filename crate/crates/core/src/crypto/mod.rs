//! Big-integer arithmetic, textbook RSA and Diffie-Hellman.
//!
//! Integers serialize as big-endian bytes everywhere in this crate.

mod arith;
mod dh;
mod prime;
mod rsa;

pub use arith::{extended_gcd, mod_inverse, mod_pow, to_be_fixed, to_be_minimal};
pub use dh::{
    dh_agree, dh_keygen, dh_shared, DhKeyPair, DhParams, SharedSecret, DEFAULT_GENERATOR,
    DEFAULT_PRIME_HEX,
};
pub use prime::{is_probable_prime, random_prime, RANDOM_ROUNDS};
pub use rsa::{
    decrypt_block, decrypt_bytes, encrypt_block, encrypt_bytes, RsaKeyPair, RsaPublicKey,
    DEFAULT_E, MIN_KEY_BITS,
};

pub use num_bigint::BigUint;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("modulus must be non-zero")]
    ZeroModulus,
    #[error("modulus must be at least 2")]
    ModulusTooSmall,
    #[error("no modular inverse exists")]
    NoInverse,
    #[error("key size {bits} bits is below the minimum of {min}")]
    BitLengthTooSmall { bits: u64, min: u64 },
    #[error("block value must be below the modulus")]
    MessageOutOfRange,
    #[error("modulus too small for byte framing (block capacity {capacity} bytes)")]
    KeyTooSmall { capacity: usize },
    #[error("malformed block padding")]
    MalformedPadding,
    #[error("peer public value outside [2, prime - 2]")]
    InvalidPublicValue,
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("invalid group parameters: {0}")]
    InvalidParams(&'static str),
}
