//! Reference attention: configs, weights, cache state, and forward passes
//! for MHA, MQA, GQA, GTA, MLA, and GLA.
//!
//! The module is organized by lifecycle: [`config`] describes a layer's head
//! geometry, [`weights`] draws its projections, [`state`] holds the
//! append-only decode cache, and [`forward`] runs prefill and decode —
//! including the absorbed latent path and its materialized ground truth.

pub mod config;
pub mod forward;
pub mod state;
pub mod weights;

pub use config::{AttnConfig, ExpectedCell, FamilyVariant, ModelFamily, Variant};
pub use forward::{decode_reference_materialized, decode_step, gta_build_kv, prefill, GtaKv};
pub use state::KvState;
pub use weights::{init_weights, AttnWeights};
