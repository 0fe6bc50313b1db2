//! Append-only decode cache.
//!
//! A [`KvState`] holds whatever a variant stores per past token, with the
//! sequence axis at position 1:
//!
//! - MHA/MQA/GQA: rotated keys `k` and values `v`, each `[B, L, h_kv, d_h]`;
//! - GTA: the tied state `tied` `[B, L, h_kv, d_h]` (never rotated) and the
//!   shared rotary key `k_rope` `[B, L, 1, d_h/2]` (stored rotated);
//! - MLA/GLA: latents `latent` `[B, L, h_c, d_c]` and, when `d_R > 0`, the
//!   shared decoupled rotary key `k_rope` `[B, L, 1, d_R]` (stored rotated).
//!
//! Growth is pure: appending produces a new state whose leading `L` rows are
//! byte-identical to the old one, which is what makes the append-only
//! invariant trivially checkable (and checked) in tests.

use crate::attention::config::{AttnConfig, Family};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Cached per-token attention state for one batch of sequences.
#[derive(Debug, Clone)]
pub struct KvState {
    batch: usize,
    len: usize,
    /// Rotated keys (standard family).
    pub k: Option<Tensor>,
    /// Values (standard family).
    pub v: Option<Tensor>,
    /// Tied KV state (GTA), never rotated.
    pub tied: Option<Tensor>,
    /// Compressed latents (latent family).
    pub latent: Option<Tensor>,
    /// Shared single-head rotary key, stored rotated (GTA and latent family
    /// with `d_R > 0`).
    pub k_rope: Option<Tensor>,
}

/// Per-step state rows produced by the projection stage, waiting to be
/// appended. Field layout mirrors [`KvState`].
#[derive(Debug, Clone)]
pub(crate) struct NewEntries {
    pub len: usize,
    pub k: Option<Tensor>,
    pub v: Option<Tensor>,
    pub tied: Option<Tensor>,
    pub latent: Option<Tensor>,
    pub k_rope: Option<Tensor>,
}

impl KvState {
    /// Zero-length cache for `batch` sequences under `cfg`'s layout.
    pub fn empty(cfg: &AttnConfig, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::Parameter("cache batch must be positive".into()));
        }
        let mut s = KvState {
            batch,
            len: 0,
            k: None,
            v: None,
            tied: None,
            latent: None,
            k_rope: None,
        };
        match cfg.family() {
            Family::Standard => {
                s.k = Some(Tensor::zeros(&[batch, 0, cfg.h_kv, cfg.d_h]));
                s.v = Some(Tensor::zeros(&[batch, 0, cfg.h_kv, cfg.d_h]));
            }
            Family::Tied => {
                s.tied = Some(Tensor::zeros(&[batch, 0, cfg.h_kv, cfg.d_h]));
                s.k_rope = Some(Tensor::zeros(&[batch, 0, 1, cfg.d_h / 2]));
            }
            Family::Latent => {
                s.latent = Some(Tensor::zeros(&[batch, 0, cfg.h_c, cfg.d_c]));
                if cfg.d_rope > 0 {
                    s.k_rope = Some(Tensor::zeros(&[batch, 0, 1, cfg.d_rope]));
                }
            }
        }
        Ok(s)
    }

    /// Number of cached token positions.
    #[must_use]
    pub fn len(&self) -> usize {
        self.len
    }

    /// True when no positions are cached yet.
    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Batch size the cache was created with.
    #[must_use]
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// New state with `entries` appended along the sequence axis; `self` is
    /// untouched (append-only by construction).
    pub(crate) fn appended(&self, entries: &NewEntries) -> Result<KvState> {
        let join =
            |old: &Option<Tensor>, new: &Option<Tensor>, name: &str| -> Result<Option<Tensor>> {
                match (old, new) {
                    (None, None) => Ok(None),
                    (Some(o), Some(n)) => Ok(Some(o.concat_axis(n, 1)?)),
                    _ => Err(Error::State(format!(
                        "cache and new entries disagree on whether '{name}' is stored"
                    ))),
                }
            };
        Ok(KvState {
            batch: self.batch,
            len: self.len + entries.len,
            k: join(&self.k, &entries.k, "k")?,
            v: join(&self.v, &entries.v, "v")?,
            tied: join(&self.tied, &entries.tied, "tied")?,
            latent: join(&self.latent, &entries.latent, "latent")?,
            k_rope: join(&self.k_rope, &entries.k_rope, "k_rope")?,
        })
    }
}
