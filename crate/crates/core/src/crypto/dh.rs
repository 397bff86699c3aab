//! Finite-field Diffie-Hellman over a fixed safe-prime group.

use num_bigint::{BigUint, RandBigInt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::arith::{mod_pow, to_be_fixed};
use super::CryptoError;

/// Default group modulus: the safe prime `2^256 − 36113`.
///
/// `(p − 1) / 2` is also prime and `p ≡ 7 (mod 8)`, so 2 is a quadratic
/// residue and generates the subgroup of prime order `(p − 1) / 2`.
pub const DEFAULT_PRIME_HEX: &str =
    "ffffffffffffffffffffffffffffffffffffffffffffffffffffffffffff72ef";

/// Default group generator.
pub const DEFAULT_GENERATOR: u32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DhParams {
    prime: BigUint,
    generator: BigUint,
}

impl DhParams {
    pub fn new(prime: BigUint, generator: BigUint) -> Result<Self, CryptoError> {
        if prime < BigUint::from(5u8) || !prime.bit(0) {
            return Err(CryptoError::InvalidParams(
                "prime must be odd and at least 5",
            ));
        }
        if generator < BigUint::from(2u8) || generator > &prime - 2u32 {
            return Err(CryptoError::InvalidParams(
                "generator must lie in [2, prime - 2]",
            ));
        }
        Ok(Self { prime, generator })
    }

    pub fn prime(&self) -> &BigUint {
        &self.prime
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    /// Width of a group element in bytes.
    pub fn element_len(&self) -> usize {
        self.prime.bits().div_ceil(8) as usize
    }

    /// Whether `value` lies in `[2, prime − 2]`.
    pub fn is_valid_public(&self, value: &BigUint) -> bool {
        *value >= BigUint::from(2u8) && *value <= &self.prime - 2u32
    }
}

impl Default for DhParams {
    fn default() -> Self {
        let prime =
            BigUint::parse_bytes(DEFAULT_PRIME_HEX.as_bytes(), 16).expect("valid hex constant");
        Self {
            prime,
            generator: BigUint::from(DEFAULT_GENERATOR),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct DhKeyPair {
    private: BigUint,
    public: BigUint,
}

impl std::fmt::Debug for DhKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DhKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl DhKeyPair {
    /// Uses a caller-chosen private exponent, which must lie in `[2, prime − 2]`.
    pub fn from_private(params: &DhParams, private: BigUint) -> Result<Self, CryptoError> {
        if !params.is_valid_public(&private) {
            return Err(CryptoError::InvalidParams(
                "private exponent must lie in [2, prime - 2]",
            ));
        }
        let public = mod_pow(&params.generator, &private, &params.prime)?;
        Ok(Self { private, public })
    }

    pub fn private(&self) -> &BigUint {
        &self.private
    }

    pub fn public(&self) -> &BigUint {
        &self.public
    }
}

/// Draws a private exponent uniformly from `[2, prime − 2]`.
pub fn dh_keygen(params: &DhParams, seed: u64) -> DhKeyPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = BigUint::from(2u8);
    let high = &params.prime - 1u32;
    let private = rng.gen_biguint_range(&low, &high);
    DhKeyPair::from_private(params, private).expect("private drawn in range")
}

/// 32-byte session secret agreed by both parties.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SharedSecret([u8; 32]);

impl SharedSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl std::fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

/// Raw agreed group element `peer_public^own_private mod prime`.
pub fn dh_agree(
    own: &DhKeyPair,
    peer_public: &BigUint,
    params: &DhParams,
) -> Result<BigUint, CryptoError> {
    if !params.is_valid_public(peer_public) {
        return Err(CryptoError::InvalidPublicValue);
    }
    mod_pow(peer_public, &own.private, &params.prime)
}

/// SHA-256 of the agreed element, big-endian and left-padded to the group width.
pub fn dh_shared(
    own: &DhKeyPair,
    peer_public: &BigUint,
    params: &DhParams,
) -> Result<SharedSecret, CryptoError> {
    let element = dh_agree(own, peer_public, params)?;
    let encoded = to_be_fixed(&element, params.element_len()).expect("element below prime");
    Ok(SharedSecret(Sha256::digest(&encoded).into()))
}
