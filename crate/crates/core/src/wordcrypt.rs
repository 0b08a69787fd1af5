//! Deterministic word-level encryption.
//!
//! Every token is encrypted on its own with AES-256-CBC and PKCS7 padding
//! under a key and IV that are fixed for a passphrase, then hex-encoded. Equal
//! tokens therefore map to equal ciphertokens and the map is injective on any
//! vocabulary, which is what lets a model trained on ciphertokens behave
//! exactly like one trained on plaintext.
//!
//! This is deterministic encryption: it hides token spelling but leaks token
//! equality and frequency, so it is open to frequency analysis by anyone who
//! sees enough ciphertext. Keys come from a single unsalted SHA-256 of the
//! passphrase.

use std::collections::HashMap;
use std::fmt;

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::textprep::TokenizedDoc;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

pub const BLOCK_SIZE: usize = 16;
const IV_LABEL: &[u8] = b"cryptext-iv-v1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("passphrase must not be empty")]
    EmptyPassphrase,
    #[error("token must be non-empty and contain no whitespace: {0:?}")]
    InvalidToken(String),
    #[error("ciphertoken is not lowercase hex: {0:?}")]
    BadHex(String),
    #[error("ciphertoken length {0} is not a positive multiple of 32 hex chars")]
    NotBlockAligned(usize),
    #[error("integrity error: bad padding (wrong key or corrupted ciphertoken)")]
    BadPadding,
    #[error("integrity error: decrypted bytes are not UTF-8")]
    BadUtf8,
}

#[derive(Clone, PartialEq, Eq)]
pub struct CipherContext {
    key: [u8; 32],
    iv: [u8; 16],
    pub passphrase_hint: Option<String>,
}

impl fmt::Debug for CipherContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CipherContext")
            .field("key", &"<redacted>")
            .field("passphrase_hint", &self.passphrase_hint)
            .finish()
    }
}

/// key = SHA-256(passphrase); iv = SHA-256(key || "cryptext-iv-v1")[..16].
pub fn derive_context(passphrase: &str) -> Result<CipherContext, CryptoError> {
    if passphrase.is_empty() {
        return Err(CryptoError::EmptyPassphrase);
    }
    Ok(CipherContext::from_key(
        Sha256::digest(passphrase.as_bytes()).into(),
    ))
}

impl CipherContext {
    pub fn from_key(key: [u8; 32]) -> Self {
        let mut h = Sha256::new();
        h.update(key);
        h.update(IV_LABEL);
        let digest = h.finalize();
        let mut iv = [0u8; 16];
        iv.copy_from_slice(&digest[..16]);
        Self {
            key,
            iv,
            passphrase_hint: None,
        }
    }

    /// Explicit key and IV, for known-answer testing.
    pub fn with_key_iv(key: [u8; 32], iv: [u8; 16]) -> Self {
        Self {
            key,
            iv,
            passphrase_hint: None,
        }
    }

    pub fn key(&self) -> &[u8; 32] {
        &self.key
    }

    pub fn iv(&self) -> &[u8; 16] {
        &self.iv
    }

    /// Short non-secret fingerprint of the key, safe to put in reports.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"cryptext-key-fingerprint");
        h.update(self.key);
        hex::encode(&h.finalize()[..8])
    }

    /// PKCS7-pads and encrypts raw bytes.
    pub fn encrypt_bytes(&self, plain: &[u8]) -> Vec<u8> {
        Aes256CbcEnc::new(&self.key.into(), &self.iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plain)
    }

    pub fn decrypt_bytes(&self, cipher: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if cipher.is_empty() || !cipher.len().is_multiple_of(BLOCK_SIZE) {
            return Err(CryptoError::NotBlockAligned(cipher.len() * 2));
        }
        Aes256CbcDec::new(&self.key.into(), &self.iv.into())
            .decrypt_padded_vec_mut::<Pkcs7>(cipher)
            .map_err(|_| CryptoError::BadPadding)
    }
}

/// Lowercase hex ciphertext of a single token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CipherToken(String);

impl CipherToken {
    pub fn parse(s: &str) -> Result<Self, CryptoError> {
        if s.is_empty() || !s.len().is_multiple_of(2 * BLOCK_SIZE) {
            return Err(CryptoError::NotBlockAligned(s.len()));
        }
        if !s
            .bytes()
            .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(CryptoError::BadHex(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }
}

impl fmt::Display for CipherToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Hex length of the ciphertoken for a token of `byte_len` UTF-8 bytes.
pub fn ciphertoken_hex_len(byte_len: usize) -> usize {
    2 * BLOCK_SIZE * (byte_len / BLOCK_SIZE + 1)
}

pub fn encrypt_token(ctx: &CipherContext, token: &str) -> Result<CipherToken, CryptoError> {
    if token.is_empty() || token.chars().any(char::is_whitespace) {
        return Err(CryptoError::InvalidToken(token.to_string()));
    }
    Ok(CipherToken(hex::encode(
        ctx.encrypt_bytes(token.as_bytes()),
    )))
}

pub fn decrypt_token(ctx: &CipherContext, ct: &CipherToken) -> Result<String, CryptoError> {
    let bytes = hex::decode(ct.as_str()).map_err(|_| CryptoError::BadHex(ct.0.clone()))?;
    let plain = ctx.decrypt_bytes(&bytes)?;
    String::from_utf8(plain).map_err(|_| CryptoError::BadUtf8)
}

/// Replaces every token by its ciphertoken. Ids, labels, order and
/// multiplicities are untouched.
pub fn encrypt_corpus(
    ctx: &CipherContext,
    docs: &[TokenizedDoc],
) -> Result<Vec<TokenizedDoc>, CryptoError> {
    let mut cache: HashMap<&str, String> = HashMap::new();
    docs.iter()
        .map(|doc| {
            let tokens = doc
                .tokens
                .iter()
                .map(|t| match cache.get(t.as_str()) {
                    Some(c) => Ok(c.clone()),
                    None => {
                        let c = encrypt_token(ctx, t)?.into_string();
                        cache.insert(t, c.clone());
                        Ok(c)
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TokenizedDoc {
                tokens,
                ..doc.clone()
            })
        })
        .collect()
}

pub fn decrypt_corpus(
    ctx: &CipherContext,
    docs: &[TokenizedDoc],
) -> Result<Vec<TokenizedDoc>, CryptoError> {
    docs.iter()
        .map(|doc| {
            let tokens = doc
                .tokens
                .iter()
                .map(|t| decrypt_token(ctx, &CipherToken::parse(t)?))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TokenizedDoc {
                tokens,
                ..doc.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RoundTripReport {
    pub documents: usize,
    pub tokens: usize,
    pub matched: usize,
    pub failures: usize,
}

impl RoundTripReport {
    pub fn success_rate(&self) -> f64 {
        if self.tokens == 0 {
            1.0
        } else {
            self.matched as f64 / self.tokens as f64
        }
    }
}

/// Decrypts `encrypted` and compares token by token against `plain`.
pub fn verify_round_trip(
    ctx: &CipherContext,
    plain: &[TokenizedDoc],
    encrypted: &[TokenizedDoc],
) -> RoundTripReport {
    let mut report = RoundTripReport {
        documents: plain.len(),
        tokens: 0,
        matched: 0,
        failures: 0,
    };
    for (p, e) in plain.iter().zip(encrypted) {
        report.tokens += p.tokens.len().max(e.tokens.len());
        if p.doc_id != e.doc_id || p.label_id != e.label_id || p.tokens.len() != e.tokens.len() {
            report.failures += 1;
            continue;
        }
        for (pt, et) in p.tokens.iter().zip(&e.tokens) {
            match CipherToken::parse(et).and_then(|c| decrypt_token(ctx, &c)) {
                Ok(w) if &w == pt => report.matched += 1,
                _ => report.failures += 1,
            }
        }
    }
    if plain.len() != encrypted.len() {
        report.failures += plain.len().abs_diff(encrypted.len());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn ctx() -> CipherContext {
        derive_context("k").unwrap()
    }

    #[test]
    fn derive_is_deterministic() {
        assert_eq!(derive_context("k").unwrap(), derive_context("k").unwrap());
        assert_ne!(
            derive_context("k").unwrap().key(),
            derive_context("k2").unwrap().key()
        );
        assert_eq!(derive_context(""), Err(CryptoError::EmptyPassphrase));
    }

    #[test]
    fn debug_redacts_key() {
        let s = format!("{:?}", ctx());
        assert!(!s.contains("8254c3") && s.contains("redacted"));
    }

    #[test]
    fn pkcs7_length_law_small_cases() {
        let c = ctx();
        assert_eq!(encrypt_token(&c, "apple").unwrap().as_str().len(), 32);
        assert_eq!(
            encrypt_token(&c, "abcdefghijklmnop")
                .unwrap()
                .as_str()
                .len(),
            64
        );
    }

    #[test]
    fn rejects_bad_tokens() {
        assert!(encrypt_token(&ctx(), "").is_err());
        assert!(encrypt_token(&ctx(), "a b").is_err());
    }

    #[test]
    fn decrypt_errors() {
        let c = ctx();
        assert!(matches!(
            CipherToken::parse("xyz"),
            Err(CryptoError::NotBlockAligned(3))
        ));
        assert!(matches!(
            CipherToken::parse(&"G".repeat(32)),
            Err(CryptoError::BadHex(_))
        ));
        let ct = encrypt_token(&c, "apple").unwrap();
        let other = derive_context("another passphrase").unwrap();
        assert!(decrypt_token(&other, &ct).is_err());
    }

    #[test]
    fn corpus_encryption_preserves_structure() {
        let docs = vec![
            TokenizedDoc {
                doc_id: "a".into(),
                label_id: 1,
                tokens: vec!["a".into(), "b".into(), "a".into()],
            },
            TokenizedDoc {
                doc_id: "b".into(),
                label_id: 0,
                tokens: vec![],
            },
        ];
        let c = ctx();
        let enc = encrypt_corpus(&c, &docs).unwrap();
        assert_eq!(enc[0].tokens[0], enc[0].tokens[2]);
        assert_ne!(enc[0].tokens[0], enc[0].tokens[1]);
        assert!(enc[1].tokens.is_empty());
        assert_eq!((enc[0].doc_id.as_str(), enc[0].label_id), ("a", 1));
        assert_eq!(decrypt_corpus(&c, &enc).unwrap(), docs);
        let r = verify_round_trip(&c, &docs, &enc);
        assert_eq!((r.tokens, r.matched, r.failures), (3, 3, 0));
    }

    #[test]
    fn vocabulary_sizes_match_on_fixture() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/small");
        let corpus = crate::corpus::load_corpus(root).unwrap();
        let (train, _) =
            crate::textprep::preprocess_corpus(&corpus, &crate::textprep::StopwordList::english());
        let enc = encrypt_corpus(&ctx(), &train).unwrap();
        let plain: HashSet<_> = train.iter().flat_map(|d| &d.tokens).collect();
        let cipher: HashSet<_> = enc.iter().flat_map(|d| &d.tokens).collect();
        assert_eq!(plain.len(), cipher.len());
    }
}
