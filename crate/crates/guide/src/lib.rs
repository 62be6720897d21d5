//! The chapters of the guide under `book/src`, one module each, so that
//! `cargo test --doc -p caremesh-guide` runs every code block in the book.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/notifications.md")]
pub mod notifications {}
#[doc = include_str!("../../../book/src/approval.md")]
pub mod approval {}
#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}
#[doc = include_str!("../../../book/src/mailbox.md")]
pub mod mailbox {}
#[doc = include_str!("../../../book/src/event-log.md")]
pub mod event_log {}
#[doc = include_str!("../../../book/src/server.md")]
pub mod server {}
#[doc = include_str!("../../../book/src/harness.md")]
pub mod harness {}
