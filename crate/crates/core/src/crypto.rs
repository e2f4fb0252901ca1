//! Keyed PRF, padded authenticated encryption and key generation.
//!
//! The PRF is HMAC-SHA256 truncated to 16 bytes. Symmetric encryption is
//! AES-GCM with a random 96-bit nonce; plaintexts are length-prefixed and
//! zero padded to a caller-chosen width before sealing, so the ciphertext
//! width is `pad_to + CIPHERTEXT_OVERHEAD` whatever the plaintext.

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Aes256Gcm, Nonce, Tag};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::graph::Vertex;

pub const TOKEN_LEN: usize = 16;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
const LEN_PREFIX: usize = 2;
/// Bytes a ciphertext adds on top of its padded width.
pub const CIPHERTEXT_OVERHEAD: usize = NONCE_LEN + LEN_PREFIX + TAG_LEN;

pub const fn ciphertext_width(pad_to: usize) -> usize {
    pad_to + CIPHERTEXT_OVERHEAD
}

/// PRF output identifying an SPDX entry.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub [u8; TOKEN_LEN]);

impl std::fmt::Debug for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Token(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

impl Token {
    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 2 * TOKEN_LEN || !s.is_ascii() {
            return Err(Error::Format(format!("token must be {} hex digits", 2 * TOKEN_LEN)));
        }
        let mut out = [0u8; TOKEN_LEN];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| Error::Format(format!("bad hex in token {s:?}")))?;
        }
        Ok(Token(out))
    }
}

/// Fixed-width big-endian encoding `u || v` of an ordered vertex pair.
pub fn encode_pair(u: Vertex, v: Vertex) -> [u8; 8] {
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&u.to_be_bytes());
    out[4..].copy_from_slice(&v.to_be_bytes());
    out
}

pub fn decode_pair(bytes: &[u8]) -> Result<(Vertex, Vertex)> {
    let b: [u8; 8] = bytes
        .try_into()
        .map_err(|_| Error::Format(format!("vertex pair must be 8 bytes, got {}", bytes.len())))?;
    Ok((
        Vertex::from_be_bytes(b[..4].try_into().unwrap()),
        Vertex::from_be_bytes(b[4..].try_into().unwrap()),
    ))
}

/// Raw symmetric key material.
#[derive(Clone, PartialEq, Eq)]
pub struct SymKey(Vec<u8>);

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymKey({} bytes)", self.0.len())
    }
}

impl SymKey {
    pub fn random<R: RngCore + CryptoRng>(len: usize, rng: &mut R) -> Self {
        let mut k = vec![0u8; len];
        rng.fill_bytes(&mut k);
        SymKey(k)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.len() {
            16 | 32 => Ok(SymKey(bytes.to_vec())),
            n => Err(Error::Format(format!("key length {n} is neither 16 nor 32"))),
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Client key material: `k1` seals path payloads, `k2` seals ORAM blocks and
/// `kprf` keys the token PRF.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySet {
    pub k1: SymKey,
    pub k2: SymKey,
    pub kprf: SymKey,
}

impl KeySet {
    pub fn lambda(&self) -> u32 {
        (self.k1.len() * 8) as u32
    }

    pub fn byte_len(&self) -> usize {
        self.k1.len() + self.k2.len() + self.kprf.len()
    }
}

pub fn keygen<R: RngCore + CryptoRng>(lambda: u32, rng: &mut R) -> Result<KeySet> {
    if lambda != 128 && lambda != 256 {
        return Err(Error::UnsupportedLambda(lambda));
    }
    let len = lambda as usize / 8;
    Ok(KeySet {
        k1: SymKey::random(len, rng),
        k2: SymKey::random(len, rng),
        kprf: SymKey::random(len, rng),
    })
}

/// Keyed pseudorandom function producing [`Token`]s.
#[derive(Clone)]
pub struct Prf {
    mac: Hmac<Sha256>,
}

impl Prf {
    pub fn new(key: &SymKey) -> Self {
        Self { mac: <Hmac<Sha256> as Mac>::new_from_slice(key.as_bytes()).expect("hmac accepts any key length") }
    }

    pub fn eval(&self, message: &[u8]) -> Token {
        debug_assert!(!message.is_empty());
        let mut mac = self.mac.clone();
        mac.update(message);
        let digest = mac.finalize().into_bytes();
        let mut t = [0u8; TOKEN_LEN];
        t.copy_from_slice(&digest[..TOKEN_LEN]);
        Token(t)
    }

    pub fn pair(&self, u: Vertex, v: Vertex) -> Token {
        self.eval(&encode_pair(u, v))
    }
}

pub fn prf_eval(kprf: &SymKey, message: &[u8]) -> Token {
    Prf::new(kprf).eval(message)
}

#[derive(Clone)]
enum Cipher {
    Aes128(Box<Aes128Gcm>),
    Aes256(Box<Aes256Gcm>),
}

/// Randomized authenticated encryption with fixed-width padding.
#[derive(Clone)]
pub struct Ske {
    cipher: Cipher,
}

impl Ske {
    pub fn new(key: &SymKey) -> Self {
        let cipher = match key.len() {
            16 => Cipher::Aes128(Box::new(Aes128Gcm::new_from_slice(key.as_bytes()).unwrap())),
            32 => Cipher::Aes256(Box::new(Aes256Gcm::new_from_slice(key.as_bytes()).unwrap())),
            n => panic!("unsupported key length {n}"),
        };
        Self { cipher }
    }

    /// Seals `plaintext` padded to `pad_to` bytes. Output layout is
    /// `nonce || AES-GCM(len_be16 || plaintext || zeros)`.
    pub fn encrypt<R: RngCore + CryptoRng>(
        &self,
        plaintext: &[u8],
        pad_to: usize,
        rng: &mut R,
    ) -> Result<Vec<u8>> {
        if plaintext.len() > pad_to || pad_to > u16::MAX as usize {
            return Err(Error::PlaintextTooLong { len: plaintext.len(), pad_to });
        }
        let mut out = vec![0u8; NONCE_LEN + LEN_PREFIX + pad_to];
        rng.fill_bytes(&mut out[..NONCE_LEN]);
        let (nonce, body) = out.split_at_mut(NONCE_LEN);
        body[..LEN_PREFIX].copy_from_slice(&(plaintext.len() as u16).to_be_bytes());
        body[LEN_PREFIX..LEN_PREFIX + plaintext.len()].copy_from_slice(plaintext);
        let nonce = Nonce::from_slice(nonce);
        let tag = match &self.cipher {
            Cipher::Aes128(c) => c.encrypt_in_place_detached(nonce, b"", body),
            Cipher::Aes256(c) => c.encrypt_in_place_detached(nonce, b"", body),
        }
        .map_err(|_| Error::Integrity("encryption failed".into()))?;
        out.extend_from_slice(&tag);
        Ok(out)
    }

    pub fn decrypt(&self, ct: &[u8]) -> Result<Vec<u8>> {
        if ct.len() < CIPHERTEXT_OVERHEAD {
            return Err(Error::Authentication);
        }
        let (nonce, rest) = ct.split_at(NONCE_LEN);
        let (body, tag) = rest.split_at(rest.len() - TAG_LEN);
        let nonce = Nonce::from_slice(nonce);
        let tag = Tag::from_slice(tag);
        let mut padded = body.to_vec();
        match &self.cipher {
            Cipher::Aes128(c) => c.decrypt_in_place_detached(nonce, b"", &mut padded, tag),
            Cipher::Aes256(c) => c.decrypt_in_place_detached(nonce, b"", &mut padded, tag),
        }
        .map_err(|_| Error::Authentication)?;
        let len = u16::from_be_bytes([padded[0], padded[1]]) as usize;
        if LEN_PREFIX + len > padded.len() {
            return Err(Error::Integrity("padding length exceeds body".into()));
        }
        padded.truncate(LEN_PREFIX + len);
        padded.drain(..LEN_PREFIX);
        Ok(padded)
    }
}

pub fn ske_encrypt<R: RngCore + CryptoRng>(
    key: &SymKey,
    plaintext: &[u8],
    pad_to: usize,
    rng: &mut R,
) -> Result<Vec<u8>> {
    Ske::new(key).encrypt(plaintext, pad_to, rng)
}

pub fn ske_decrypt(key: &SymKey, ct: &[u8]) -> Result<Vec<u8>> {
    Ske::new(key).decrypt(ct)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn keygen_widths_and_freshness() {
        let mut r = rng();
        let a = keygen(128, &mut r).unwrap();
        assert_eq!((a.k1.len(), a.k2.len(), a.kprf.len()), (16, 16, 16));
        let b = keygen(128, &mut r).unwrap();
        assert_ne!(a.k1, b.k1);
        assert_ne!(a.k2, b.k2);
        assert_ne!(a.kprf, b.kprf);
        assert_ne!(a.k1, a.k2);
        assert_eq!(keygen(256, &mut r).unwrap().kprf.len(), 32);
        assert!(matches!(keygen(96, &mut r), Err(Error::UnsupportedLambda(96))));
    }

    #[test]
    fn prf_is_deterministic_and_order_sensitive() {
        let k = keygen(128, &mut rng()).unwrap().kprf;
        assert_eq!(prf_eval(&k, &encode_pair(0, 3)), prf_eval(&k, &encode_pair(0, 3)));
        assert_ne!(prf_eval(&k, &encode_pair(0, 3)), prf_eval(&k, &encode_pair(3, 0)));
    }

    #[test]
    fn prf_has_no_collisions_over_a_million_pairs() {
        let prf = Prf::new(&keygen(128, &mut rng()).unwrap().kprf);
        let mut seen = HashSet::with_capacity(1_000_000);
        for u in 0..1000u32 {
            for v in 0..1000u32 {
                assert!(seen.insert(prf.pair(u, v)), "collision at ({u},{v})");
            }
        }
        assert_eq!(seen.len(), 1_000_000);
    }

    #[test]
    fn pair_encoding_is_big_endian() {
        assert_eq!(encode_pair(1, 0x0203_0405), [0, 0, 0, 1, 2, 3, 4, 5]);
        assert_eq!(decode_pair(&encode_pair(17, 99)).unwrap(), (17, 99));
    }

    #[test]
    fn round_trip_and_randomization() {
        let mut r = rng();
        let k = keygen(128, &mut r).unwrap().k1;
        for len in 0..=64 {
            let mut m = vec![0u8; len];
            r.fill_bytes(&mut m);
            let ct = ske_encrypt(&k, &m, 64, &mut r).unwrap();
            assert_eq!(ske_decrypt(&k, &ct).unwrap(), m);
        }
        let a = ske_encrypt(&k, b"same", 64, &mut r).unwrap();
        let b = ske_encrypt(&k, b"same", 64, &mut r).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), b.len());
    }

    #[test]
    fn width_depends_only_on_pad_to() {
        let mut r = rng();
        let k = keygen(256, &mut r).unwrap().k2;
        let pad_to = 40;
        for len in 0..=pad_to {
            let ct = ske_encrypt(&k, &vec![0xab; len], pad_to, &mut r).unwrap();
            assert_eq!(ct.len(), ciphertext_width(pad_to));
        }
        assert!(matches!(
            ske_encrypt(&k, &[0; 41], pad_to, &mut r),
            Err(Error::PlaintextTooLong { len: 41, pad_to: 40 })
        ));
    }

    #[test]
    fn wrong_key_or_tamper_fails_authentication() {
        let mut r = rng();
        let k = keygen(128, &mut r).unwrap();
        let ct = ske_encrypt(&k.k1, b"(2,3)", 64, &mut r).unwrap();
        assert!(matches!(ske_decrypt(&k.k2, &ct), Err(Error::Authentication)));
        for bit in [0, 8 * NONCE_LEN + 3, ct.len() * 8 - 1] {
            let mut bad = ct.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            assert!(matches!(ske_decrypt(&k.k1, &bad), Err(Error::Authentication)));
        }
    }

    #[test]
    fn token_hex_round_trip() {
        let t = prf_eval(&keygen(128, &mut rng()).unwrap().kprf, b"x");
        assert_eq!(Token::from_hex(&t.to_hex()).unwrap(), t);
        assert!(Token::from_hex("zz").is_err());
    }
}
