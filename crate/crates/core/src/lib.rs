//! Hierarchical multi-agent MQM evaluation of machine translation.
//!
//! Subtype agents propose errors, self-reflection validates them by
//! correcting and re-comparing the translation, and low-confidence findings
//! are settled in a discussion between the subtype agent and the agent that
//! owns its core category. Confirmed findings are weighted into a score.

pub mod calibration;
pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod orchestrator;
pub mod prompts;
pub mod spanmatch;
pub mod typology;

pub use corpus::{Dataset, GoldAnnotation, LengthBucket, Segment, SliceBy};
pub use typology::{load_typology, CoreCategory, Score, Severity, Subtype, Typology, Weight};
