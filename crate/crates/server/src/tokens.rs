//! Static bearer-token table, loaded once at boot.
//!
//! ```json
//! {"admin": "root-secret", "participants": {"p-1": "tok-ana", "p-2": "tok-pat"}}
//! ```
//!
//! Keying by participant keeps one token per participant. The admin token
//! may register participants, circles, members and notification types; it
//! has no mailbox.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use caremesh_core::ParticipantId;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TokenError {
    #[error("cannot read token file: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid token file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("token is shared by {0} and {1}")]
    Shared(String, String),
    #[error("empty token for {0}")]
    Empty(String),
}

/// On-disk form of the token table.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admin: Option<String>,
    #[serde(default)]
    pub participants: BTreeMap<ParticipantId, String>,
}

/// Who a request speaks for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Admin,
    Participant(ParticipantId),
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    by_token: HashMap<String, Principal>,
}

impl TokenTable {
    pub fn load(path: &Path) -> Result<Self, TokenError> {
        let file: TokenFile = serde_json::from_slice(&std::fs::read(path)?)?;
        Self::from_file(file)
    }

    pub fn from_file(file: TokenFile) -> Result<Self, TokenError> {
        let mut by_token = HashMap::new();
        let entries = file
            .admin
            .map(|t| ("admin".to_string(), t, Principal::Admin))
            .into_iter()
            .chain(file.participants.into_iter().map(|(p, t)| {
                (p.to_string(), t, Principal::Participant(p))
            }));
        for (owner, token, principal) in entries {
            if token.is_empty() {
                return Err(TokenError::Empty(owner));
            }
            if let Some(prev) = by_token.insert(token, principal) {
                let prev = match prev {
                    Principal::Admin => "admin".to_string(),
                    Principal::Participant(p) => p.to_string(),
                };
                return Err(TokenError::Shared(prev, owner));
            }
        }
        Ok(Self { by_token })
    }

    pub fn resolve(&self, token: &str) -> Option<&Principal> {
        self.by_token.get(token)
    }

    pub fn len(&self) -> usize {
        self.by_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_token.is_empty()
    }
}
