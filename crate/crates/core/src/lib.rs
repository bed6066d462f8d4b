//! AI-generated text detection: text cleaning, vectorization, a hybrid
//! BiLSTM / self-attention / Conv1D classifier built on a small
//! reverse-mode autodiff core, Adam training with checkpointing and early
//! stopping, and classification reports.

pub mod autodiff;
pub mod cli;
pub mod corpus;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod textprep;
pub mod training;
pub mod vectorizer;
