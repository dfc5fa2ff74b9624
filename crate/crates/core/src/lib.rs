//! Auditing masked language models for hurtful and toxic completions.
//!
//! The pipeline probes a fill-mask model with gendered templates, scores the
//! completions against an offensive-word lexicon, classifies the filled
//! sentences with an external toxicity service (optionally through a
//! translation bridge), and renders the aggregate tables.

pub mod corpus;
pub mod honest;
pub mod net;
pub mod probe;
pub mod report;
pub mod toxicity;

pub use corpus::{Category, Gender, Level, Lexicon, LexiconEntry, Template};
pub use honest::{CategoryGenderMatrix, HonestScore, NormalizedCompletion};
pub use probe::{Completion, CompletionSet, CompletionStore, Endpoint, ModelSpec};
pub use report::AuditReport;
pub use toxicity::{AgreementReport, ToxicityConfig, ToxicityRecord};
