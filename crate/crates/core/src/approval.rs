//! Approval sessions for notifications that need every other expert's consent
//! before they reach the patient.
//!
//! Consent is unanimous and fail-fast: the session closes `AllApproved` on the
//! last OK, or `Rejected` on the first Reject. Verdicts are binary and final.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::CoordError;
use crate::model::{NotificationId, ParticipantId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Pending,
    #[serde(rename = "OK")]
    Ok,
    Reject,
}

/// What an approver can answer; `Pending` is only an initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    #[serde(rename = "OK")]
    Ok,
    Reject,
}

impl From<Response> for Verdict {
    fn from(r: Response) -> Self {
        match r {
            Response::Ok => Verdict::Ok,
            Response::Reject => Verdict::Reject,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionOutcome {
    Open,
    AllApproved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalSession {
    pub notification_id: NotificationId,
    pub required_approvers: BTreeSet<ParticipantId>,
    pub verdicts: BTreeMap<ParticipantId, Verdict>,
    pub outcome: SessionOutcome,
}

impl ApprovalSession {
    pub fn open(
        notification_id: NotificationId,
        approvers: impl IntoIterator<Item = ParticipantId>,
    ) -> Self {
        let required_approvers: BTreeSet<_> = approvers.into_iter().collect();
        let verdicts = required_approvers
            .iter()
            .map(|a| (a.clone(), Verdict::Pending))
            .collect();
        Self {
            notification_id,
            required_approvers,
            verdicts,
            outcome: SessionOutcome::Open,
        }
    }

    /// Checks that `expert` may answer now.
    pub fn check_response(&self, expert: &ParticipantId) -> Result<(), CoordError> {
        let verdict = self
            .verdicts
            .get(expert)
            .ok_or_else(|| CoordError::NotAnApprover {
                expert: expert.to_string(),
                notification: self.notification_id.to_string(),
            })?;
        if *verdict != Verdict::Pending {
            return Err(CoordError::DuplicateResponse {
                expert: expert.to_string(),
                notification: self.notification_id.to_string(),
            });
        }
        if self.outcome != SessionOutcome::Open {
            return Err(CoordError::SessionClosed(self.notification_id.to_string()));
        }
        Ok(())
    }

    /// Outcome the session would have after `expert` answers `response`.
    pub fn outcome_after(&self, expert: &ParticipantId, response: Response) -> SessionOutcome {
        match response {
            Response::Reject => SessionOutcome::Rejected,
            Response::Ok => {
                let all_ok = self
                    .verdicts
                    .iter()
                    .all(|(who, v)| who == expert || *v == Verdict::Ok);
                if all_ok {
                    SessionOutcome::AllApproved
                } else {
                    SessionOutcome::Open
                }
            }
        }
    }

    pub(crate) fn record(&mut self, expert: &ParticipantId, response: Response) {
        if let Some(v) = self.verdicts.get_mut(expert) {
            if *v == Verdict::Pending {
                *v = response.into();
            }
        }
    }

    pub(crate) fn close(&mut self, outcome: SessionOutcome) {
        self.outcome = outcome;
    }

    pub fn pending(&self) -> impl Iterator<Item = &ParticipantId> {
        self.verdicts
            .iter()
            .filter(|(_, v)| **v == Verdict::Pending)
            .map(|(k, _)| k)
    }
}
