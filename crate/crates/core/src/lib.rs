//! Coordination core for short-lived, co-located communities.
//!
//! The crate is organised by concern:
//!
//! - [`model`]: entities, identifiers, time intervals and draft validation
//! - [`access`]: roles, membership boundaries and the permission matrix
//! - [`scheduling`]: conflict detection, rescheduling and schedule/map projections
//! - [`participation`]: RSVP state machine, check-in tokens, tickets and badges
//! - [`analytics`]: deployment statistics and mixed-attendance scoring
//! - [`portability`]: export bundles, import and forks
//! - [`service`]: transactional operations over a [`storage`] backend
//!
//! All timestamps are stored in UTC; a community's IANA timezone is only used
//! when projecting onto local days and opening hours.

pub mod access;
pub mod analytics;
pub mod canonical;
pub mod model;
pub mod participation;
pub mod scheduling;
pub mod service;
pub mod storage;
pub mod fixtures;
pub mod ical;
pub mod portability;

// Guide chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/access.md")]
    mod access {}
    #[doc = include_str!("../../../book/src/participation.md")]
    mod participation {}
    #[doc = include_str!("../../../book/src/portability.md")]
    mod portability {}
    #[doc = include_str!("../../../book/src/analytics.md")]
    mod analytics {}
    #[doc = include_str!("../../../book/src/http-api.md")]
    mod http_api {}
    #[doc = include_str!("../../../book/src/operations.md")]
    mod operations {}
}
