//! Password verifiers and signed session tokens.
//!
//! Tokens have the form `v1.<user>.<expiry>.<nonce>.<mac>` where `mac` is
//! HMAC-SHA256 over everything before it. They are revoked by nonce.

use basinfo_core::model::UserId;
use hmac::{Hmac, Mac};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const DEFAULT_ITERATIONS: u32 = 600_000;
pub const TOKEN_TTL_SECS: i64 = 24 * 3600;
const SALT_LEN: usize = 16;
const HASH_LEN: usize = 32;

/// Salted PBKDF2-HMAC-SHA256 verifier; parameters are stored with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PasswordVerifier {
    pub algorithm: String,
    pub iterations: u32,
    pub salt: String,
    pub hash: String,
}

fn derive(password: &str, salt: &[u8], iterations: u32) -> [u8; HASH_LEN] {
    let mut out = [0u8; HASH_LEN];
    pbkdf2::pbkdf2_hmac::<Sha256>(password.as_bytes(), salt, iterations, &mut out);
    out
}

impl PasswordVerifier {
    pub fn new(password: &str, iterations: u32) -> Self {
        let mut salt = [0u8; SALT_LEN];
        rand::rngs::OsRng.fill_bytes(&mut salt);
        Self {
            algorithm: "pbkdf2-sha256".into(),
            iterations,
            salt: hex::encode(salt),
            hash: hex::encode(derive(password, &salt, iterations)),
        }
    }

    pub fn verify(&self, password: &str) -> bool {
        let (Ok(salt), Ok(expected)) = (hex::decode(&self.salt), hex::decode(&self.hash)) else {
            return false;
        };
        let got = derive(password, &salt, self.iterations);
        got.ct_eq(expected.as_slice()).into()
    }
}

/// Burn the same work as a real verification, for unknown usernames.
pub fn dummy_verify(password: &str, iterations: u32) {
    let _ = derive(password, &[0u8; SALT_LEN], iterations);
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenError {
    #[error("malformed token")]
    Malformed,
    #[error("bad token signature")]
    BadSignature,
    #[error("token expired")]
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claims {
    pub user: UserId,
    pub expires_at: i64,
    pub nonce: String,
}

/// HMAC key for session tokens.
#[derive(Clone)]
pub struct TokenKey(Vec<u8>);

impl TokenKey {
    pub fn new(secret: &[u8]) -> Self {
        Self(secret.to_vec())
    }

    pub fn random() -> Self {
        let mut k = vec![0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut k);
        Self(k)
    }

    fn mac(&self, body: &str) -> Hmac<Sha256> {
        let mut m = <Hmac<Sha256> as Mac>::new_from_slice(&self.0).expect("hmac takes any key length");
        m.update(body.as_bytes());
        m
    }

    pub fn issue(&self, user: &UserId, now: i64) -> (String, Claims) {
        let mut nonce = [0u8; 12];
        rand::rngs::OsRng.fill_bytes(&mut nonce);
        let claims = Claims {
            user: user.clone(),
            expires_at: now + TOKEN_TTL_SECS,
            nonce: hex::encode(nonce),
        };
        let body = format!("v1.{}.{}.{}", claims.user, claims.expires_at, claims.nonce);
        let tag = hex::encode(self.mac(&body).finalize().into_bytes());
        (format!("{body}.{tag}"), claims)
    }

    pub fn verify(&self, token: &str, now: i64) -> Result<Claims, TokenError> {
        let (body, tag) = token.rsplit_once('.').ok_or(TokenError::Malformed)?;
        let tag = hex::decode(tag).map_err(|_| TokenError::Malformed)?;
        self.mac(body).verify_slice(&tag).map_err(|_| TokenError::BadSignature)?;
        let parts: Vec<&str> = body.split('.').collect();
        let [version, user, expiry, nonce] = parts.as_slice() else {
            return Err(TokenError::Malformed);
        };
        if *version != "v1" {
            return Err(TokenError::Malformed);
        }
        let expires_at: i64 = expiry.parse().map_err(|_| TokenError::Malformed)?;
        if now >= expires_at {
            return Err(TokenError::Expired);
        }
        Ok(Claims {
            user: UserId::new(*user),
            expires_at,
            nonce: nonce.to_string(),
        })
    }
}

/// Usernames double as user ids and token fields.
pub fn valid_username(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-'))
}
