//! Paillier cryptosystem with signed-value encoding and base-packed
//! batching for encrypted gradient aggregation.
//!
//! Keys use the g = n + 1 convention, so encryption reduces to
//! (1 + m*n) * r^n mod n^2. Arithmetic is not constant-time; this is a
//! research simulator, not a hardened library.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("modulus must be at least 64 bits, got {0}")]
    ModulusTooSmall(u32),
    #[error("prime generation failed after {0} attempts")]
    PrimeGenerationFailed(usize),
    #[error("p and q must be distinct primes")]
    PrimesEqual,
    #[error("{0} is not prime")]
    NotPrime(BigUint),
    #[error("plaintext out of range [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertext belongs to a different key")]
    KeyMismatch,
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(String),
    #[error("value {0} exceeds the signed bound {1}")]
    SignedOutOfRange(i64, u64),
    #[error("packing overflow: {0}")]
    PackingOverflow(String),
    #[error("wire frame malformed: {0}")]
    BadWire(String),
}

/// Public half of a Paillier keypair: n = p*q and g = n + 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    g: BigUint,
    nn: BigUint,
    bits: u32,
    fingerprint: u64,
}

/// Secret half: lambda = lcm(p-1, q-1) and mu = L(g^lambda mod n^2)^-1 mod n.
#[derive(Debug, Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    n: BigUint,
    nn: BigUint,
    fingerprint: u64,
}

#[derive(Debug, Clone)]
pub struct PaillierKeypair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// A mod-n^2 ciphertext tagged with its key's fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    fingerprint: u64,
}

impl Ciphertext {
    /// Wire form: 4-byte little-endian byte count, then big-endian
    /// magnitude bytes.
    pub fn to_wire(&self) -> Vec<u8> {
        let bytes = self.value.to_bytes_be();
        let mut out = Vec::with_capacity(4 + bytes.len());
        out.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        out.extend_from_slice(&bytes);
        out
    }

    /// Parses one ciphertext from the front of `buf`, returning it with the
    /// number of consumed bytes.
    pub fn from_wire(buf: &[u8], pk: &PublicKey) -> Result<(Self, usize), CryptoError> {
        if buf.len() < 4 {
            return Err(CryptoError::BadWire("missing length prefix".into()));
        }
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        let end = 4 + len;
        if buf.len() < end {
            return Err(CryptoError::BadWire(format!(
                "need {end} bytes, have {}",
                buf.len()
            )));
        }
        let value = BigUint::from_bytes_be(&buf[4..end]);
        if value >= pk.nn {
            return Err(CryptoError::MalformedCiphertext(
                "value not below n^2".into(),
            ));
        }
        Ok((
            Self {
                value,
                fingerprint: pk.fingerprint,
            },
            end,
        ))
    }

    pub fn wire_len(&self) -> usize {
        4 + self.value.to_bytes_be().len()
    }
}

fn fingerprint_of(n: &BigUint) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in n.to_bytes_be() {
        h = (h ^ b as u64).wrapping_mul(0x1000_0000_01b3);
    }
    h
}

fn random_biguint_below(limit: &BigUint, rng: &mut impl RngCore) -> BigUint {
    let bits = limit.bits();
    let limbs = bits.div_ceil(32) as usize;
    loop {
        let mut digits = vec![0u32; limbs];
        for d in digits.iter_mut() {
            *d = rng.next_u32();
        }
        let candidate = BigUint::from_slice(&digits) % limit;
        if !candidate.is_zero() {
            return candidate;
        }
    }
}

const SMALL_PRIMES: [u32; 46] = [
    3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97,
    101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211,
];

/// Miller-Rabin with `rounds` random bases.
pub fn is_probable_prime(n: &BigUint, rounds: usize, rng: &mut impl RngCore) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    if n == &two {
        return true;
    }
    if n.is_even() {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if n == &p {
            return true;
        }
        if (n % &p).is_zero() {
            return false;
        }
    }
    // write n - 1 = d * 2^s
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    'witness: for _ in 0..rounds {
        let a = loop {
            let a = random_biguint_below(&(n - 3u32), rng) + 2u32;
            if a < n - 1u32 {
                break a;
            }
        };
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 0..s.saturating_sub(1) {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits (top two bits set so products of
/// two such primes reach the full modulus width).
fn generate_prime(bits: u64, rounds: usize, rng: &mut impl RngCore) -> Result<BigUint, CryptoError> {
    let max_attempts = 64 * bits as usize;
    for _ in 0..max_attempts {
        let limbs = bits.div_ceil(32) as usize;
        let mut digits = vec![0u32; limbs];
        for d in digits.iter_mut() {
            *d = rng.next_u32();
        }
        let mut candidate = BigUint::from_slice(&digits);
        // trim to width, set the two top bits and force odd
        candidate &= (BigUint::one() << bits) - 1u32;
        candidate |= BigUint::one() << (bits - 1);
        candidate |= BigUint::one() << (bits - 2);
        candidate |= BigUint::one();
        if is_probable_prime(&candidate, rounds, rng) {
            return Ok(candidate);
        }
    }
    Err(CryptoError::PrimeGenerationFailed(max_attempts))
}

fn mod_inverse(a: &BigUint, m: &BigUint) -> Option<BigUint> {
    let a = BigInt::from(a.clone());
    let m_int = BigInt::from(m.clone());
    let e = a.extended_gcd(&m_int);
    if !e.gcd.is_one() {
        return None;
    }
    let mut x = e.x % &m_int;
    if x.is_negative() {
        x += &m_int;
    }
    x.to_biguint()
}

/// L(x) = (x - 1) / n; errors when n does not divide x - 1.
fn l_function(x: &BigUint, n: &BigUint) -> Result<BigUint, CryptoError> {
    let x_minus_1 = x - 1u32;
    let (q, r) = x_minus_1.div_rem(n);
    if !r.is_zero() {
        return Err(CryptoError::MalformedCiphertext(
            "L(x) is not an integer".into(),
        ));
    }
    Ok(q)
}

/// Generates a keypair with an n of roughly `bits` bits. Prime candidates
/// run 64 Miller-Rabin rounds. Deterministic given the RNG, so tests seed
/// it; production callers should pass an entropy-backed RNG.
pub fn keygen(bits: u32, rng: &mut impl RngCore) -> Result<PaillierKeypair, CryptoError> {
    if bits < 64 {
        return Err(CryptoError::ModulusTooSmall(bits));
    }
    let half = (bits / 2) as u64;
    loop {
        let p = generate_prime(half, 64, rng)?;
        let q = generate_prime(half, 64, rng)?;
        if p == q {
            continue;
        }
        return keypair_from_primes(&p, &q);
    }
}

/// Builds a keypair from explicit primes (test injection path). Primality
/// is checked deterministically at small sizes via trial division plus
/// Miller-Rabin with fixed bases.
pub fn keypair_from_primes(p: &BigUint, q: &BigUint) -> Result<PaillierKeypair, CryptoError> {
    if p == q {
        return Err(CryptoError::PrimesEqual);
    }
    let mut check_rng = crate::util::rng_from_seed(0x70726d65);
    for prime in [p, q] {
        if !is_probable_prime(prime, 32, &mut check_rng) {
            return Err(CryptoError::NotPrime(prime.clone()));
        }
    }
    let n = p * q;
    let nn = &n * &n;
    let g = &n + 1u32;
    let lambda = (p - 1u32).lcm(&(q - 1u32));
    // mu = L(g^lambda mod n^2)^-1 mod n; with g = n + 1 this is lambda^-1,
    // but evaluate the general form to validate the key.
    let u = g.modpow(&lambda, &nn);
    let l = l_function(&u, &n)?;
    let mu = mod_inverse(&l, &n).ok_or_else(|| {
        CryptoError::MalformedCiphertext("L(g^lambda) has no inverse mod n".into())
    })?;
    let bits = n.bits() as u32;
    let fingerprint = fingerprint_of(&n);
    Ok(PaillierKeypair {
        public: PublicKey {
            n: n.clone(),
            g,
            nn: nn.clone(),
            bits,
            fingerprint,
        },
        secret: SecretKey {
            lambda,
            mu,
            n,
            nn,
            fingerprint,
        },
    })
}

impl PublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Encrypts m in [0, n) with a fresh random nonce r from Z_n^*.
    pub fn encrypt(&self, m: &BigUint, rng: &mut impl RngCore) -> Result<Ciphertext, CryptoError> {
        if m >= &self.n {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        let r = loop {
            let r = random_biguint_below(&self.n, rng);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        // g^m * r^n = (1 + m*n) * r^n mod n^2 for g = n + 1
        let gm = (1u32 + m * &self.n) % &self.nn;
        let rn = r.modpow(&self.n, &self.nn);
        Ok(Ciphertext {
            value: (gm * rn) % &self.nn,
            fingerprint: self.fingerprint,
        })
    }

    /// Homomorphic addition: the ciphertext product decrypts to the
    /// plaintext sum mod n.
    pub fn he_add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, CryptoError> {
        if a.fingerprint != self.fingerprint || b.fingerprint != self.fingerprint {
            return Err(CryptoError::KeyMismatch);
        }
        Ok(Ciphertext {
            value: (&a.value * &b.value) % &self.nn,
            fingerprint: self.fingerprint,
        })
    }

    /// Public-key exchange message: 4-byte little-endian bit length, then
    /// big-endian n bytes.
    pub fn to_wire(&self) -> Vec<u8> {
        let bytes = self.n.to_bytes_be();
        let mut out = Vec::with_capacity(4 + bytes.len());
        out.extend_from_slice(&self.bits.to_le_bytes());
        out.extend_from_slice(&bytes);
        out
    }

    pub fn from_wire(buf: &[u8]) -> Result<Self, CryptoError> {
        if buf.len() < 5 {
            return Err(CryptoError::BadWire("public key frame too short".into()));
        }
        let bits = u32::from_le_bytes(buf[..4].try_into().unwrap());
        let n = BigUint::from_bytes_be(&buf[4..]);
        if n.bits() as u32 != bits {
            return Err(CryptoError::BadWire(format!(
                "declared {bits} bits but n has {}",
                n.bits()
            )));
        }
        let nn = &n * &n;
        let g = &n + 1u32;
        let fingerprint = fingerprint_of(&n);
        Ok(Self {
            n,
            g,
            nn,
            bits,
            fingerprint,
        })
    }
}

impl SecretKey {
    /// Exact decryption: L(c^lambda mod n^2) * mu mod n.
    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, CryptoError> {
        if c.fingerprint != self.fingerprint {
            return Err(CryptoError::KeyMismatch);
        }
        if c.value >= self.nn {
            return Err(CryptoError::MalformedCiphertext(
                "value not below n^2".into(),
            ));
        }
        let u = c.value.modpow(&self.lambda, &self.nn);
        let l = l_function(&u, &self.n)?;
        Ok((l * &self.mu) % &self.n)
    }

    pub fn lambda(&self) -> &BigUint {
        &self.lambda
    }
}

/// Parameters for mapping signed values into Z_n and packing several values
/// into one plaintext.
///
/// `k_max` bounds the absolute per-slot aggregate; the packing base is
/// 2*k_max + 1. Each client shifts a slot value v (|v| <= value_bound) to
/// v + value_bound, so the K-client digit sum stays below the base whenever
/// K * value_bound <= k_max and no carries occur.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedEncoding {
    pub k_max: u64,
    pub value_bound: u64,
    pub slots_per_ciphertext: usize,
}

impl SignedEncoding {
    pub fn new(k_max: u64, value_bound: u64, slots_per_ciphertext: usize) -> Self {
        assert!(k_max >= 1 && value_bound >= 1 && slots_per_ciphertext >= 1);
        Self {
            k_max,
            value_bound,
            slots_per_ciphertext,
        }
    }

    /// Largest slot count whose packed range stays below 2^(bits(n) - 1),
    /// keeping the homomorphic digit sums inside [0, n).
    pub fn for_key(pk: &PublicKey, k_max: u64, value_bound: u64) -> Result<Self, CryptoError> {
        let base = BigUint::from(2 * k_max + 1);
        let limit = BigUint::one() << (pk.n.bits() - 1);
        let mut acc = base.clone();
        let mut slots = 0usize;
        while acc < limit {
            slots += 1;
            acc *= &base;
        }
        if slots == 0 {
            return Err(CryptoError::PackingOverflow(format!(
                "base {} does not fit below 2^{}",
                2 * k_max + 1,
                pk.n.bits() - 1
            )));
        }
        Ok(Self {
            k_max,
            value_bound,
            slots_per_ciphertext: slots,
        })
    }

    pub fn base(&self) -> u64 {
        2 * self.k_max + 1
    }

    /// Rejects cohorts whose aggregate could overflow a slot.
    pub fn check_cohort(&self, num_clients: u64) -> Result<(), CryptoError> {
        if num_clients * self.value_bound > self.k_max {
            return Err(CryptoError::PackingOverflow(format!(
                "{num_clients} clients with |v| <= {} exceed k_max {}",
                self.value_bound, self.k_max
            )));
        }
        Ok(())
    }
}

/// Maps v in [-k_max, k_max] to Z_n by wraparound (-1 becomes n - 1).
pub fn encode_signed(v: i64, enc: &SignedEncoding, pk: &PublicKey) -> Result<BigUint, CryptoError> {
    if v.unsigned_abs() > enc.k_max {
        return Err(CryptoError::SignedOutOfRange(v, enc.k_max));
    }
    if v >= 0 {
        Ok(BigUint::from(v as u64))
    } else {
        Ok(&pk.n - BigUint::from(v.unsigned_abs()))
    }
}

/// Inverse of `encode_signed` after aggregation: values above n/2 are
/// negative.
pub fn decode_signed(d: &BigUint, n: &BigUint) -> i64 {
    let half = n >> 1;
    if d > &half {
        let mag = n - d;
        -(mag.to_i64().expect("aggregate fits i64"))
    } else {
        d.to_i64().expect("aggregate fits i64")
    }
}

/// Packs signed slot values into plaintext integers, `slots_per_ciphertext`
/// per plaintext: plaintext = sum_j (v_j + value_bound) * base^j. The
/// per-client shift is `value_bound` (not k_max), so K-client homomorphic
/// sums keep every digit below the base.
pub fn pack_batch(values: &[i64], enc: &SignedEncoding) -> Result<Vec<BigUint>, CryptoError> {
    let base = BigUint::from(enc.base());
    let mut out = Vec::with_capacity(values.len().div_ceil(enc.slots_per_ciphertext));
    for chunk in values.chunks(enc.slots_per_ciphertext) {
        let mut acc = BigUint::zero();
        for &v in chunk.iter().rev() {
            if v.unsigned_abs() > enc.value_bound {
                return Err(CryptoError::SignedOutOfRange(v, enc.value_bound));
            }
            let shifted = BigUint::from((v + enc.value_bound as i64) as u64);
            acc = acc * &base + shifted;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Recovers per-slot signed sums from a decrypted aggregate of
/// `num_clients` packed plaintexts: digit_j - K * value_bound.
pub fn unpack_sums(
    decrypted: &BigUint,
    enc: &SignedEncoding,
    num_clients: u64,
    n_slots: usize,
) -> Result<Vec<i64>, CryptoError> {
    enc.check_cohort(num_clients)?;
    if n_slots > enc.slots_per_ciphertext {
        return Err(CryptoError::PackingOverflow(format!(
            "{n_slots} slots requested but ciphertexts carry {}",
            enc.slots_per_ciphertext
        )));
    }
    let base = BigUint::from(enc.base());
    let shift = (num_clients * enc.value_bound) as i64;
    let mut rest = decrypted.clone();
    let mut sums = Vec::with_capacity(n_slots);
    for _ in 0..n_slots {
        let (q, r) = rest.div_rem(&base);
        let digit = r.to_i64().expect("digit below base fits i64");
        sums.push(digit - shift);
        rest = q;
    }
    if !rest.is_zero() {
        return Err(CryptoError::PackingOverflow(
            "aggregate has more digits than slots".into(),
        ));
    }
    Ok(sums)
}
