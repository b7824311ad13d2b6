//! Terms-and-conditions mining and unfavorable financial term detection.
//!
//! The crate covers the whole offline pipeline (site harvesting, term
//! extraction, two-pass LLM classification, embedding + DBSCAN topic
//! induction, corpus measurement and classifier evaluation) plus the
//! per-URL analysis used by the alerting service.

pub mod classify;
pub mod clock;
pub mod extract;
pub mod harvest;
pub mod lens;
pub mod llm;
pub mod measure;
pub mod pipeline;
pub mod store;
pub mod taxonomy;
pub mod topics;
