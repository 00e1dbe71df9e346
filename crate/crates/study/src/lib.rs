//! Blinded real/fake user study for colorization results.
//!
//! A study is a set of labeled image directories (ground truth and one
//! directory per model). Each respondent session gets a seeded shuffle of
//! trials balanced across sources and judges one image at a time as real
//! or fake. The service never sends a source label or original file name
//! to a respondent; the report gives, per source, the percentage of judged
//! images called real.
//!
//! State lives in an append-only JSON-lines log (see [`events`]), so a
//! restarted server resumes every session where it stopped.

pub mod error;
pub mod events;
pub mod http;
pub mod protocol;
pub mod service;

pub use error::{Result, StudyError};
pub use protocol::{SourceSpec, StudySpec, Verdict};
pub use service::{StudyReport, StudyService};
