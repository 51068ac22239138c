//! Content addressing, convergent encryption and signed ledger calls.
//!
//! One hash function (SHA-256) stands behind every `H(.)`: URIs, convergent
//! keys and the hash list. Chunks are sealed with ChaCha20-Poly1305 under
//! `key = H(serialized plain chunk)` and a fixed all-zero nonce. The key is
//! unique per plaintext, so the fixed nonce is never reused with a different
//! message under the same key.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, PlainChunk};

/// Authentication tag bytes added by the AEAD.
pub const AEAD_OVERHEAD: usize = 16;
pub const ENCRYPTED_FORMAT_VERSION: u8 = 0x01;
/// version (1) + ciphertext hash (32) + ciphertext length (8)
pub const ENCRYPTED_HEADER_LEN: usize = 1 + 32 + 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("file is empty")]
    EmptyFile,
    #[error("decryption failed: wrong key or tampered ciphertext")]
    DecryptionFailure,
    #[error("unknown caller {0}")]
    UnknownCaller(PartyId),
    #[error("invalid signature from {0}")]
    InvalidSignature(PartyId),
    #[error("malformed encrypted chunk: {0}")]
    MalformedChunk(String),
    #[error("invalid hex value: {0}")]
    InvalidHex(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

fn decode_hex_array<const N: usize>(s: &str) -> Result<[u8; N], CryptoError> {
    // Lowercase only, so every value has exactly one textual form.
    if s.len() != 2 * N || s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(CryptoError::InvalidHex(s.to_string()));
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(s, &mut out).map_err(|_| CryptoError::InvalidHex(s.to_string()))?;
    Ok(out)
}

macro_rules! hex_newtype {
    ($name:ident, $len:expr) => {
        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self)
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                decode_hex_array::<$len>(s).map(Self)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// A 32-byte SHA-256 value.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);
hex_newtype!(Digest, 32);

impl Digest {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

pub fn hash(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Hash of several byte strings, each length-prefixed so boundaries are unambiguous.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for part in parts {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    Digest(h.finalize().into())
}

/// Content identifier: the hash of the file bytes.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Uri(pub Digest);

impl fmt::Display for Uri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for Uri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Uri({})", self.0)
    }
}

impl FromStr for Uri {
    type Err = CryptoError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(Uri)
    }
}

impl Serialize for Uri {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Uri {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Digest::deserialize(deserializer).map(Uri)
    }
}

pub fn generate_uri(file: &[u8]) -> Result<Uri, CryptoError> {
    if file.is_empty() {
        return Err(CryptoError::EmptyFile);
    }
    Ok(Uri(hash(file)))
}

/// Symmetric key for one chunk, equal to the hash of the serialized plain chunk.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConvergentKey(pub [u8; 32]);
hex_newtype!(ConvergentKey, 32);

/// Facilitator id to the convergent key of the chunk it hosts.
pub type KeyMap = BTreeMap<PartyId, ConvergentKey>;
/// `H(E_i)` for each encrypted chunk, in facilitator order.
pub type HashList = Vec<Digest>;

#[derive(Clone, PartialEq, Eq)]
pub struct EncryptedChunk {
    pub ciphertext: Vec<u8>,
}

impl fmt::Debug for EncryptedChunk {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EncryptedChunk")
            .field("len", &self.ciphertext.len())
            .field("digest", &self.digest())
            .finish()
    }
}

impl EncryptedChunk {
    /// `H(E)`, the value listed in the hash list.
    pub fn digest(&self) -> Digest {
        hash(&self.ciphertext)
    }

    /// Serialized length in the encrypted chunk file format.
    pub fn encoded_len(&self) -> usize {
        ENCRYPTED_HEADER_LEN + self.ciphertext.len()
    }

    /// `version | H(ciphertext) | len (u64 BE) | ciphertext`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(ENCRYPTED_FORMAT_VERSION);
        out.extend_from_slice(self.digest().as_bytes());
        out.extend_from_slice(&(self.ciphertext.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < ENCRYPTED_HEADER_LEN {
            return Err(CryptoError::MalformedChunk("truncated header".to_string()));
        }
        if bytes[0] != ENCRYPTED_FORMAT_VERSION {
            return Err(CryptoError::MalformedChunk(format!(
                "unsupported format version {:#04x}",
                bytes[0]
            )));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[33..41]);
        let len = u64::from_be_bytes(len) as usize;
        let body = &bytes[ENCRYPTED_HEADER_LEN..];
        if body.len() != len {
            return Err(CryptoError::MalformedChunk(format!(
                "declared {len} ciphertext bytes, found {}",
                body.len()
            )));
        }
        let chunk = Self {
            ciphertext: body.to_vec(),
        };
        if chunk.digest().as_bytes()[..] != bytes[1..33] {
            return Err(CryptoError::MalformedChunk(
                "ciphertext hash mismatch".to_string(),
            ));
        }
        Ok(chunk)
    }
}

fn cipher(key: &ConvergentKey) -> ChaCha20Poly1305 {
    ChaCha20Poly1305::new(Key::from_slice(&key.0))
}

const ZERO_NONCE: [u8; 12] = [0u8; 12];

/// Seal arbitrary bytes under an explicit key. Honest publishers only ever
/// pass the convergent key; tests use this to build mismatched key maps.
pub fn encrypt_with_key(plaintext: &[u8], key: &ConvergentKey) -> EncryptedChunk {
    let ciphertext = cipher(key)
        .encrypt(Nonce::from_slice(&ZERO_NONCE), plaintext)
        .expect("in-memory ChaCha20-Poly1305 encryption is infallible");
    EncryptedChunk { ciphertext }
}

pub fn convergent_encrypt(chunk: &PlainChunk) -> (EncryptedChunk, ConvergentKey) {
    let plaintext = chunk.to_bytes();
    let key = ConvergentKey(hash(&plaintext).0);
    (encrypt_with_key(&plaintext, &key), key)
}

fn open(enc: &EncryptedChunk, key: &ConvergentKey) -> Result<Vec<u8>, CryptoError> {
    cipher(key)
        .decrypt(Nonce::from_slice(&ZERO_NONCE), enc.ciphertext.as_slice())
        .map_err(|_| CryptoError::DecryptionFailure)
}

pub fn convergent_decrypt(
    enc: &EncryptedChunk,
    key: &ConvergentKey,
) -> Result<PlainChunk, CryptoError> {
    let plaintext = open(enc, key)?;
    Ok(PlainChunk::from_bytes(&plaintext)?)
}

/// The facilitator's upload check: the ciphertext hash is listed, and the
/// plaintext under `key` hashes back to `key`.
pub fn verify_chunk_integrity(
    enc: &EncryptedChunk,
    key: &ConvergentKey,
    hash_list: &[Digest],
) -> bool {
    if !hash_list.contains(&enc.digest()) {
        return false;
    }
    match open(enc, key) {
        Ok(plaintext) => hash(&plaintext).0 == key.0,
        Err(_) => false,
    }
}

/// Registered identity of a protocol participant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PartyId(pub String);

impl PartyId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for PartyId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(pub [u8; 32]);
hex_newtype!(PublicKey, 32);

#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SignatureBytes(pub [u8; 64]);
hex_newtype!(SignatureBytes, 64);

/// Ed25519 signing identity.
#[derive(Clone)]
pub struct Keypair {
    signing: SigningKey,
}

impl fmt::Debug for Keypair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Keypair(public={})", self.public())
    }
}

impl Keypair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        Self {
            signing: SigningKey::from_bytes(&seed),
        }
    }

    /// Deterministic per-party key derived from a run seed.
    pub fn derive(run_seed: u64, party: &PartyId) -> Self {
        let seed = hash_parts(&[
            b"fairmarket-party-key",
            &run_seed.to_be_bytes(),
            party.0.as_bytes(),
        ]);
        Self::from_seed(seed.0)
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    fn sign(&self, message: &[u8]) -> SignatureBytes {
        SignatureBytes(self.signing.sign(message).to_bytes())
    }
}

/// A ledger invocation signed by its caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignedCall {
    pub caller: PartyId,
    pub operation: String,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub signature: SignatureBytes,
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(deserializer)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("hex must be lowercase"));
        }
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

fn call_message(caller: &PartyId, operation: &str, payload: &[u8]) -> Vec<u8> {
    let mut msg = Vec::new();
    for part in [caller.0.as_bytes(), operation.as_bytes(), payload] {
        msg.extend_from_slice(&(part.len() as u64).to_be_bytes());
        msg.extend_from_slice(part);
    }
    msg
}

impl SignedCall {
    pub fn sign(
        caller: PartyId,
        operation: impl Into<String>,
        payload: Vec<u8>,
        keypair: &Keypair,
    ) -> Self {
        let operation = operation.into();
        let signature = keypair.sign(&call_message(&caller, &operation, &payload));
        Self {
            caller,
            operation,
            payload,
            signature,
        }
    }
}

/// Public keys registered at genesis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyRegistry {
    keys: BTreeMap<PartyId, PublicKey>,
}

impl KeyRegistry {
    pub fn register(&mut self, party: PartyId, key: PublicKey) {
        self.keys.insert(party, key);
    }

    pub fn get(&self, party: &PartyId) -> Option<&PublicKey> {
        self.keys.get(party)
    }

    pub fn verify_call(&self, call: &SignedCall) -> Result<(), CryptoError> {
        let key = self
            .keys
            .get(&call.caller)
            .ok_or_else(|| CryptoError::UnknownCaller(call.caller.clone()))?;
        let invalid = || CryptoError::InvalidSignature(call.caller.clone());
        let verifying = VerifyingKey::from_bytes(&key.0).map_err(|_| invalid())?;
        let signature = Signature::from_bytes(&call.signature.0);
        verifying
            .verify(
                &call_message(&call.caller, &call.operation, &call.payload),
                &signature,
            )
            .map_err(|_| invalid())
    }
}
