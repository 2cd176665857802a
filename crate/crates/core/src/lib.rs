//! Log anomaly detection over event-ID sequences.
//!
//! Raw log lines are mined into event templates ([`drain`]), grouped into
//! per-block sessions and fixed-length windows ([`session`]), and scored by a
//! tiny causal decoder ([`model`]) trained with focal loss ([`objectives`],
//! [`train`]). [`judge`] runs the same windows past a chat-completion model
//! for comparison, and [`pipeline`] wires the stages together. [`synth`]
//! generates labelled HDFS-style corpora for tests and demos.

pub mod drain;
pub mod judge;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod pipeline;
pub mod session;
pub mod synth;
pub mod train;
