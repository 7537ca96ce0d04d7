//! Integer residue arithmetic shared by every protocol layer.
//!
//! Protocol code is written against [`Residue`] so the same engine runs on
//! machine words (fast fuzzing with moduli below 2^63) and on arbitrary
//! precision integers.

use std::fmt::{Debug, Display};
use std::hash::Hash;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{FromPrimitive, ToPrimitive, Zero};
use rand::RngCore;

/// An unsigned integer type usable as a residue modulo a prime.
pub trait Residue:
    Clone + Ord + Hash + Debug + Display + Integer + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// `(self * rhs) mod m`. Operands must already be reduced.
    fn mul_mod(&self, rhs: &Self, m: &Self) -> Self;

    /// Uniform sample from `[0, bound)`. `bound` must be non-zero.
    fn random_below<R: RngCore + ?Sized>(bound: &Self, rng: &mut R) -> Self;

    /// Minimal big-endian encoding; zero encodes as the empty string.
    fn to_be_bytes_minimal(&self) -> Vec<u8>;

    fn from_be_bytes(bytes: &[u8]) -> Option<Self>;

    fn bit_length(&self) -> u64;

    fn bit(&self, i: u64) -> bool;

    /// Largest modulus this representation supports.
    fn fits_modulus(m: &Self) -> bool;

    fn of_u64(v: u64) -> Self {
        <Self as FromPrimitive>::from_u64(v).expect("every residue type holds a u64")
    }

    fn two() -> Self {
        Self::of_u64(2)
    }
}

impl Residue for u64 {
    fn mul_mod(&self, rhs: &Self, m: &Self) -> Self {
        ((*self as u128 * *rhs as u128) % *m as u128) as u64
    }

    fn random_below<R: RngCore + ?Sized>(bound: &Self, rng: &mut R) -> Self {
        assert!(*bound > 0, "empty sampling range");
        // rejection sampling over the largest multiple of `bound`
        let zone = u64::MAX - (u64::MAX % bound);
        loop {
            let v = rng.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    fn to_be_bytes_minimal(&self) -> Vec<u8> {
        let bytes = self.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        bytes[skip..].to_vec()
    }

    fn from_be_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() > 8 {
            return None;
        }
        Some(bytes.iter().fold(0u64, |acc, b| (acc << 8) | *b as u64))
    }

    fn bit_length(&self) -> u64 {
        (64 - self.leading_zeros()) as u64
    }

    fn bit(&self, i: u64) -> bool {
        i < 64 && (self >> i) & 1 == 1
    }

    fn fits_modulus(m: &Self) -> bool {
        *m < (1u64 << 63)
    }
}

impl Residue for BigUint {
    fn mul_mod(&self, rhs: &Self, m: &Self) -> Self {
        (self * rhs) % m
    }

    fn random_below<R: RngCore + ?Sized>(bound: &Self, rng: &mut R) -> Self {
        assert!(!bound.is_zero(), "empty sampling range");
        let mut adapter = DynRng(rng);
        adapter.gen_biguint_below(bound)
    }

    fn to_be_bytes_minimal(&self) -> Vec<u8> {
        if self.is_zero() {
            Vec::new()
        } else {
            self.to_bytes_be()
        }
    }

    fn from_be_bytes(bytes: &[u8]) -> Option<Self> {
        Some(BigUint::from_bytes_be(bytes))
    }

    fn bit_length(&self) -> u64 {
        self.bits()
    }

    fn bit(&self, i: u64) -> bool {
        BigUint::bit(self, i)
    }

    fn fits_modulus(_: &Self) -> bool {
        true
    }
}

// `RandBigInt` is implemented for sized `Rng`s only.
struct DynRng<'a, R: RngCore + ?Sized>(&'a mut R);

impl<R: RngCore + ?Sized> RngCore for DynRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.0.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.0.try_fill_bytes(dest)
    }
}

/// Left-to-right square-and-multiply: `base^exp mod m`.
///
/// Runs in `O(log exp)` multiplications. `m` must be at least 2.
pub fn pow_mod<T: Residue>(base: &T, exp: &T, m: &T) -> T {
    let base = base.mod_floor(m);
    let mut acc = T::one();
    for i in (0..exp.bit_length()).rev() {
        acc = acc.mul_mod(&acc, m);
        if exp.bit(i) {
            acc = acc.mul_mod(&base, m);
        }
    }
    acc
}

const SMALL_PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller–Rabin primality test.
///
/// Deterministic for `n < 3.3 * 10^24` (the first twelve prime bases);
/// larger inputs additionally get `extra_rounds` random bases drawn from `rng`.
pub fn is_probable_prime<T: Residue, R: RngCore + ?Sized>(n: &T, extra_rounds: usize, rng: &mut R) -> bool {
    let two = T::two();
    if *n < two {
        return false;
    }
    for p in SMALL_PRIMES {
        let p = T::of_u64(p);
        if *n == p {
            return true;
        }
        if n.is_multiple_of(&p) {
            return false;
        }
    }

    let n_minus_one = n.clone() - T::one();
    let mut d = n_minus_one.clone();
    let mut s = 0u32;
    while d.is_even() {
        d = d / two.clone();
        s += 1;
    }

    let witness = |a: &T| -> bool {
        let mut x = pow_mod(a, &d, n);
        if x.is_one() || x == n_minus_one {
            return false;
        }
        for _ in 1..s {
            x = x.mul_mod(&x, n);
            if x == n_minus_one {
                return false;
            }
        }
        true
    };

    if SMALL_PRIMES.iter().any(|&a| witness(&T::of_u64(a))) {
        return false;
    }
    // deterministic base set covers everything below 2^81
    if n.bit_length() <= 81 {
        return true;
    }
    let span = n.clone() - T::of_u64(3);
    for _ in 0..extra_rounds {
        let a = T::random_below(&span, rng) + two.clone();
        if witness(&a) {
            return false;
        }
    }
    true
}
