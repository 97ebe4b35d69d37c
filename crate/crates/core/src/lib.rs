//! Attentive memory network for persona (character trope) classification
//! from dialogue snippets.

pub mod autodiff;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod memory;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod synth;
pub mod trainer;

pub use config::{VariantConfig, VariantName};
pub use corpus::{Dataset, RawQuote, Split, TropeCatalog, TropeDescription, Vocabulary};
pub use error::{AmnError, Result};
pub use model::PersonaModel;
