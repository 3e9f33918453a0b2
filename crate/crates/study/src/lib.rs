//! Blinded two-marker preference study.
//!
//! A rater is shown a wind field with two anonymous markers, one at the
//! model's most probable box and one at the track label, and answers
//! `first`, `second` or `neither`. Which slot holds the model is kept
//! server-side and only applied when tallying.

pub mod error;
pub mod items;
pub mod log;
pub mod render;
pub mod server;

pub use error::StudyError;
pub use items::{sample_study_items, ItemPayload, StudyItem};
pub use log::{LogEntry, RecordLog};
pub use render::{render_quiver, Marker, MarkerStyle};
pub use server::{router, Study, StudyConfig};
