//! Diffie-Hellman domain, blinding, and the symmetric envelope keyed from
//! agreed group keys.

use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{Key, XChaCha20Poly1305, XNonce};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::arith::{self, Residue};
use crate::error::{Error, Result};

/// Public Diffie-Hellman domain: generator `g` and prime modulus `p`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroupParams<T> {
    g: T,
    p: T,
}

impl<T: Residue> GroupParams<T> {
    /// Validates `p` with Miller–Rabin and requires `1 < g < p`.
    pub fn new(g: T, p: T) -> Result<Self> {
        if !T::fits_modulus(&p) {
            return Err(Error::InvalidParams(format!("modulus {p} too large for this residue type")));
        }
        // fixed seed: validation must not depend on ambient randomness
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
        if !arith::is_probable_prime(&p, 32, &mut rng) {
            return Err(Error::InvalidParams(format!("{p} is not prime")));
        }
        if g <= T::one() || g >= p {
            return Err(Error::InvalidParams(format!("generator {g} outside (1, {p})")));
        }
        Ok(Self { g, p })
    }

    /// The 15-bit demonstration domain `g = 5, p = 32713`.
    pub fn demo() -> Self {
        Self::new(T::of_u64(5), T::of_u64(32713)).expect("32713 is prime")
    }

    /// A 62-bit safe-prime domain (`p = 2q + 1`, `g = 4` generates the order-`q` subgroup).
    pub fn safe_prime_62() -> Self {
        Self::new(T::of_u64(4), T::of_u64(4611686018427377339)).expect("safe prime")
    }

    pub fn generator(&self) -> &T {
        &self.g
    }

    pub fn modulus(&self) -> &T {
        &self.p
    }

    /// `p - 1`, the modulus exponents reduce by.
    pub fn exponent_modulus(&self) -> T {
        self.p.clone() - T::one()
    }

    pub fn generator_value(&self) -> KeyValue<T> {
        KeyValue(self.g.clone())
    }
}

/// A group element in `[1, p-1]`: public values, blinded keys, and the
/// agreed keys themselves.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyValue<T>(T);

impl<T: Residue> KeyValue<T> {
    pub fn new(value: T, params: &GroupParams<T>) -> Result<Self> {
        if value.is_zero() || value >= params.p {
            return Err(Error::InvalidKeyValue(value.to_string()));
        }
        Ok(Self(value))
    }

    /// For values produced by exponentiation, which are always in range.
    pub(crate) fn from_trusted(value: T) -> Self {
        Self(value)
    }

    pub fn value(&self) -> &T {
        &self.0
    }

    pub fn into_inner(self) -> T {
        self.0
    }

    /// Canonical wire form: minimal big-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_be_bytes_minimal()
    }

    pub fn from_bytes(bytes: &[u8], params: &GroupParams<T>) -> Result<Self> {
        if bytes.first() == Some(&0) {
            return Err(Error::Decode("non-minimal integer encoding".into()));
        }
        let v = T::from_be_bytes(bytes).ok_or_else(|| Error::Decode("integer too wide".into()))?;
        Self::new(v, params)
    }
}

impl<T: fmt::Display> fmt::Display for KeyValue<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl<T: fmt::Display> Serialize for KeyValue<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

/// A secret exponent in `[2, p-2]`.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateShare<T>(T);

impl<T: Residue> PrivateShare<T> {
    /// Accepts any exponent and reduces it modulo `p - 1`; exponents act
    /// identically on every element of `Z_p*` after the reduction.
    pub fn from_exponent(exponent: T, params: &GroupParams<T>) -> Result<Self> {
        let reduced = exponent.mod_floor(&params.exponent_modulus());
        if reduced < T::two() {
            return Err(Error::InvalidShare(exponent.to_string()));
        }
        Ok(Self(reduced))
    }

    /// Uniform over `[2, p-2]`.
    pub fn sample<R: RngCore + ?Sized>(params: &GroupParams<T>, rng: &mut R) -> Self {
        let span = params.p.clone() - T::of_u64(3);
        Self(T::random_below(&span, rng) + T::two())
    }

    pub fn value(&self) -> &T {
        &self.0
    }
}

impl<T> fmt::Debug for PrivateShare<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("PrivateShare(..)")
    }
}

/// `base^exp mod p`.
pub fn mod_exp<T: Residue>(base: &KeyValue<T>, exp: &T, params: &GroupParams<T>) -> KeyValue<T> {
    KeyValue(arith::pow_mod(&base.0, exp, &params.p))
}

/// `g^k mod p`.
pub fn blind<T: Residue>(share: &PrivateShare<T>, params: &GroupParams<T>) -> KeyValue<T> {
    KeyValue(arith::pow_mod(&params.g, &share.0, &params.p))
}

/// 256-bit symmetric key derived from a group element.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SymmetricKey([u8; 32]);

impl SymmetricKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Short fingerprint used in traces; never the key itself.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.0);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({})", self.fingerprint())
    }
}

/// SHA-256 of the minimal big-endian encoding of `k`.
pub fn derive_symmetric_key<T: Residue>(k: &KeyValue<T>) -> SymmetricKey {
    SymmetricKey(Sha256::digest(k.to_bytes()).into())
}

pub const NONCE_LEN: usize = 24;

/// XChaCha20-Poly1305 ciphertext with its nonce; the body ends in a 16-byte tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
}

pub fn seal<R: RngCore + ?Sized>(key: &SymmetricKey, plaintext: &[u8], rng: &mut R) -> Ciphertext {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = XChaCha20Poly1305::new(Key::from_slice(&key.0));
    let body = cipher
        .encrypt(XNonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption cannot fail");
    Ciphertext { nonce, body }
}

pub fn open(key: &SymmetricKey, ciphertext: &Ciphertext) -> Result<Vec<u8>> {
    let cipher = XChaCha20Poly1305::new(Key::from_slice(&key.0));
    cipher
        .decrypt(XNonce::from_slice(&ciphertext.nonce), ciphertext.body.as_slice())
        .map_err(|_| Error::AuthenticationFailed)
}
