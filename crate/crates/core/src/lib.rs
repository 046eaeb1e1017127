//! Requirements elicitation from crowd-sourced traffic text: corpus
//! ingestion, service registry, preprocessing, pooled LDA, boosted naive
//! Bayes, association rules, and the project pipeline tying them together.

pub mod classify;
pub mod corpus;
pub mod pipeline;
pub mod preprocess;
pub mod registry;
pub mod rules;
pub mod topics;
