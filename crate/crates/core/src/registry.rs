//! Notification types: the six built-in interaction kinds and any custom
//! kinds registered at runtime.
//!
//! | code | origin  | audience     | approval | patient sees it |
//! |------|---------|--------------|----------|-----------------|
//! | T1   | Expert  | OtherExperts | no       | no              |
//! | T2   | Expert  | Patient      | yes      | yes, once approved |
//! | T3   | Expert  | Patient      | no       | yes             |
//! | T4   | Expert  | Patient      | no       | no (silent)     |
//! | T5   | EndUser | AllExperts   | no       | n/a             |
//! | T6   | EndUser | AllExperts   | no       | n/a             |

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::CoordError;
use crate::model::Role;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Audience {
    /// Every expert of the circle except the sender.
    OtherExperts,
    /// The circle's patient(s).
    Patient,
    /// Every expert of the circle (the sender excluded, should it be one).
    AllExperts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NotificationTypeSpec {
    pub code: String,
    pub origin_role: Role,
    pub audience: Audience,
    pub requires_approval: bool,
    pub patient_visible: bool,
}

pub const BUILTIN_CODES: [&str; 6] = ["T1", "T2", "T3", "T4", "T5", "T6"];

/// Longest accepted type code, in bytes.
pub const MAX_CODE_LEN: usize = 32;

impl NotificationTypeSpec {
    fn builtin(
        code: &str,
        origin_role: Role,
        audience: Audience,
        requires_approval: bool,
        patient_visible: bool,
    ) -> Self {
        Self {
            code: code.to_owned(),
            origin_role,
            audience,
            requires_approval,
            patient_visible,
        }
    }

    /// The fixed interaction map.
    pub fn builtins() -> Vec<NotificationTypeSpec> {
        use Audience::*;
        use Role::*;
        vec![
            Self::builtin("T1", Expert, OtherExperts, false, false),
            Self::builtin("T2", Expert, Patient, true, true),
            Self::builtin("T3", Expert, Patient, false, true),
            Self::builtin("T4", Expert, Patient, false, false),
            Self::builtin("T5", EndUser, AllExperts, false, false),
            Self::builtin("T6", EndUser, AllExperts, false, false),
        ]
    }

    /// Structural checks every spec, built-in or custom, must pass.
    pub fn validate(&self) -> Result<(), CoordError> {
        let invalid = |reason: &str| {
            Err(CoordError::InvalidSpec {
                reason: reason.to_owned(),
            })
        };
        if self.code.is_empty() || self.code.len() > MAX_CODE_LEN {
            return invalid("code must be 1 to 32 bytes");
        }
        if !self
            .code
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
        {
            return invalid("code must be ASCII letters, digits, '-' or '_'");
        }
        if self.requires_approval && self.origin_role != Role::Expert {
            return invalid("approval can only be required for expert-originated types");
        }
        if self.requires_approval && self.audience != Audience::Patient {
            return invalid("approval-gated types are forwarded to the patient");
        }
        if self.requires_approval && !self.patient_visible {
            return invalid("an approval-gated type must be patient visible");
        }
        if self.origin_role == Role::EndUser && self.audience != Audience::AllExperts {
            return invalid("end-user types are addressed to all experts");
        }
        Ok(())
    }
}

/// Built-in specs plus runtime registrations. Only the custom part is
/// serialized; built-ins are constant.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TypeRegistry {
    custom: BTreeMap<String, NotificationTypeSpec>,
}

impl TypeRegistry {
    pub fn get(&self, code: &str) -> Option<NotificationTypeSpec> {
        builtin(code).or_else(|| self.custom.get(code).cloned())
    }

    pub fn is_builtin(code: &str) -> bool {
        BUILTIN_CODES.contains(&code)
    }

    /// Checks a registration without applying it.
    pub fn check_new(&self, spec: &NotificationTypeSpec) -> Result<(), CoordError> {
        if Self::is_builtin(&spec.code) || self.custom.contains_key(&spec.code) {
            return Err(CoordError::CodeCollision {
                code: spec.code.clone(),
            });
        }
        spec.validate()
    }

    pub(crate) fn insert(&mut self, spec: NotificationTypeSpec) {
        self.custom.insert(spec.code.clone(), spec);
    }

    pub fn custom(&self) -> impl Iterator<Item = &NotificationTypeSpec> {
        self.custom.values()
    }

    /// Built-ins first, then custom types by code.
    pub fn all(&self) -> Vec<NotificationTypeSpec> {
        let mut all = NotificationTypeSpec::builtins();
        all.extend(self.custom.values().cloned());
        all
    }
}

fn builtin(code: &str) -> Option<NotificationTypeSpec> {
    if !TypeRegistry::is_builtin(code) {
        return None;
    }
    NotificationTypeSpec::builtins()
        .into_iter()
        .find(|s| s.code == code)
}
