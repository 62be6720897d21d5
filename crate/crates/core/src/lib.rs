//! Coordination core for care teams: experts and patients exchange typed
//! notifications, some of which must be approved by every other expert
//! before they reach the patient.
//!
//! The [`Coordinator`] is the single writer. Every accepted command becomes a
//! batch of [`DomainEvent`]s in an append-only [`EventLog`]; the materialized
//! [`State`] is a pure fold over that log, so a replayed log reproduces the
//! live state byte for byte.
//!
//! ```
//! use caremesh_core::{Coordinator, Payload, Response, Role};
//!
//! let mut c = Coordinator::in_memory();
//! let ana = c.register_participant(Role::Expert, Some("nutrition"), "Ana").unwrap();
//! let bo = c.register_participant(Role::Expert, Some("coach"), "Bo").unwrap();
//! let pat = c.register_participant(Role::EndUser, None, "Pat").unwrap();
//! let circle = c.create_circle(&[ana.id.clone(), bo.id.clone()], &[pat.id.clone()]).unwrap();
//!
//! let sent = c
//!     .submit_notification(&ana.id, &circle.id, "T2", Payload::text("new diet"))
//!     .unwrap();
//! assert!(c.poll(&pat.id, 0, 10).unwrap().is_empty());
//!
//! c.respond_approval(&bo.id, &sent.notification, Response::Ok).unwrap();
//! assert_eq!(c.poll(&pat.id, 0, 10).unwrap().len(), 1);
//! ```

pub mod approval;
pub mod canonical;
pub mod command;
pub mod coordinator;
pub mod error;
pub mod event;
pub mod mailbox;
pub mod model;
pub mod registry;
pub mod state;
pub mod store;

pub use approval::{ApprovalSession, Response, SessionOutcome, Verdict};
pub use command::{Command, Reply, RoutingOutcome, TaskChange};
pub use coordinator::{replay, Coordinator, MAX_PAYLOAD_BYTES};
pub use error::{CoordError, StoreError};
pub use event::{DomainEvent, EventBody};
pub use mailbox::{
    Cursor, Delivery, DeliveryBody, DeliveryKind, Hub, Mailbox, Subscription, DEFAULT_MAX_BATCH,
};
pub use model::{
    Attachment, CareCircle, CircleId, DeliveryId, Goal, GoalSpec, Metric, Notification,
    NotificationId, NotificationState, Participant, ParticipantId, Payload, ProgressReport,
    ReportId, Role, Schedule, Task, TaskDiff, TaskId, TaskStatus,
};
pub use registry::{Audience, NotificationTypeSpec, TypeRegistry};
pub use state::State;
pub use store::{Clock, Durability, EventLog, LogOptions};
