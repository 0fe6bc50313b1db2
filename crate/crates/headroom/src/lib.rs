//! headroom — a desk-scale reference implementation and hardware-efficiency
//! analyzer for decoding attention variants.
//!
//! The crate answers two kinds of question about multi-head attention (MHA),
//! multi-query (MQA), grouped-query (GQA), grouped-tied (GTA), multi-head
//! latent (MLA), and grouped latent (GLA) attention:
//!
//! 1. **Exact numerics** — [`attention`] runs real forward passes in f32 at
//!    desk scale, including prefill, incremental decode against an append-only
//!    cache, decoupled rotary embeddings, and on-the-fly weight absorption for
//!    the latent variants, with materialized references to check every
//!    optimized path.
//! 2. **Hardware accounting** — [`roofline`] and [`sharding`] compute the
//!    byte traffic, FLOP counts, arithmetic intensity, duplication factors,
//!    and straggler step times that determine how each variant behaves at
//!    serving scale, and [`kvcache`] emulates the cooperative page-offset
//!    calculation a fused decode kernel uses to gather a paged KV cache.
//!
//! Numeric work runs in f32; byte accounting assumes 2-byte (BF16-style)
//! cache elements throughout. The two are deliberately decoupled: the math is
//! checked at f32 precision, the capacity analysis reflects production dtypes.
//!
//! Everything is deterministic. Fixed seeds produce bit-identical weights,
//! outputs, and CLI reports on every platform via [`tensor::SeededRng`].

pub mod attention;
pub mod error;
pub mod kvcache;
pub mod roofline;
pub mod rope;
pub mod sharding;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{SeededRng, Tensor};

/// The long-form guide, mirrored verbatim from the `book/` sources so its
/// examples compile and run as documentation tests. Read it rendered with
/// `mdbook serve book`, or chapter by chapter below.
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/variants.md")]
    pub mod variants {}
    #[doc = include_str!("../../../book/src/absorbed-decode.md")]
    pub mod absorbed_decode {}
    #[doc = include_str!("../../../book/src/paged-cache.md")]
    pub mod paged_cache {}
    #[doc = include_str!("../../../book/src/sharding.md")]
    pub mod sharding_and_duplication {}
    #[doc = include_str!("../../../book/src/roofline.md")]
    pub mod roofline_and_intensity {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    pub mod step_time_simulator {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli_walkthrough {}
}
