//! Projection weights for one attention layer.
//!
//! Matrices are stored as `[d_in × d_out]` tensors multiplied on the right of
//! row vectors, so "fan-in" is always the row count. Which fields are present
//! depends on the variant:
//!
//! - MHA/MQA/GQA: `w_q`, `w_k`, `w_v`, `w_o`
//! - GTA: `w_q`, `w_kv` (tied state), `w_k_rope` (width `d_h/2`), `w_o`
//! - MLA/GLA: `w_q` (or the low-rank pair), `w_q_rope`, `w_dkv`,
//!   `w_uk`/`w_uv` (one `[d_c × g_q·d_h]` matrix per latent head), `w_k_rope`
//!   (width `d_R`), `w_o`
//!
//! The latent up-projections are kept as separately indexed per-head matrices
//! rather than one wide matrix because sharding assigns whole latent heads —
//! and their `g_q·d_h`-wide up-projections — to ranks.

use crate::attention::config::{AttnConfig, Family};
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Weight collection for one attention layer. Field availability is
/// variant-dependent; [`AttnWeights::validate`] checks presence and extents
/// against a config.
#[derive(Debug, Clone)]
pub struct AttnWeights {
    /// Full-rank query projection `[d_model × h_q·d_h]`; absent when the
    /// low-rank query pair is used.
    pub w_q: Option<Tensor>,
    /// Low-rank query down-projection `[d_model × q_rank]`.
    pub w_dq: Option<Tensor>,
    /// Low-rank query up-projection `[q_rank × h_q·d_h]`.
    pub w_uq: Option<Tensor>,
    /// Decoupled per-query-head rotary projection `[d_model × h_q·d_R]`
    /// (latent variants with `d_R > 0`).
    pub w_q_rope: Option<Tensor>,
    /// Key projection `[d_model × h_kv·d_h]` (standard family).
    pub w_k: Option<Tensor>,
    /// Value projection `[d_model × h_kv·d_h]` (standard family).
    pub w_v: Option<Tensor>,
    /// Tied KV projection `[d_model × h_kv·d_h]` (GTA).
    pub w_kv: Option<Tensor>,
    /// Shared single-head rotary key projection: `[d_model × d_h/2]` for
    /// GTA, `[d_model × d_R]` for latent variants with `d_R > 0`.
    pub w_k_rope: Option<Tensor>,
    /// Latent down-projection `[d_model × h_c·d_c]` (latent variants).
    pub w_dkv: Option<Tensor>,
    /// Per-latent-head key up-projections, each `[d_c × g_q·d_h]`.
    pub w_uk: Vec<Tensor>,
    /// Per-latent-head value up-projections, each `[d_c × g_q·d_h]`.
    pub w_uv: Vec<Tensor>,
    /// Output projection `[h_q·d_h × d_model]`.
    pub w_o: Tensor,
}

/// Fills one `[d_in × d_out]` matrix from `uniform(−s, s)` with
/// `s = 1/sqrt(d_in)`; draws consume the stream in row-major order.
fn init_matrix(rng: &mut SeededRng, d_in: usize, d_out: usize) -> Tensor {
    let s = 1.0 / (d_in as f32).sqrt();
    Tensor::from_fn(&[d_in, d_out], |_| rng.uniform(-s, s))
}

/// Draws a full weight set for `cfg`. Deterministic per seed: matrices are
/// generated in a fixed documented order (query path, decoupled query rope,
/// stored-state projections, shared rotary key, output), so equal configs and
/// seeds give bit-identical weights.
pub fn init_weights(cfg: &AttnConfig, rng: &mut SeededRng) -> Result<AttnWeights> {
    cfg.validate()?;
    let qdim = cfg.h_q * cfg.d_h;

    let (w_q, w_dq, w_uq) = match cfg.q_rank {
        None => (Some(init_matrix(rng, cfg.d_model, qdim)), None, None),
        Some(r) => (
            None,
            Some(init_matrix(rng, cfg.d_model, r)),
            Some(init_matrix(rng, r, qdim)),
        ),
    };

    let mut w = AttnWeights {
        w_q,
        w_dq,
        w_uq,
        w_q_rope: None,
        w_k: None,
        w_v: None,
        w_kv: None,
        w_k_rope: None,
        w_dkv: None,
        w_uk: Vec::new(),
        w_uv: Vec::new(),
        w_o: Tensor::zeros(&[0, 0]), // replaced below; placed last in draw order
    };

    match cfg.family() {
        Family::Standard => {
            w.w_k = Some(init_matrix(rng, cfg.d_model, cfg.h_kv * cfg.d_h));
            w.w_v = Some(init_matrix(rng, cfg.d_model, cfg.h_kv * cfg.d_h));
        }
        Family::Tied => {
            w.w_kv = Some(init_matrix(rng, cfg.d_model, cfg.h_kv * cfg.d_h));
            w.w_k_rope = Some(init_matrix(rng, cfg.d_model, cfg.d_h / 2));
        }
        Family::Latent => {
            if cfg.d_rope > 0 {
                w.w_q_rope = Some(init_matrix(rng, cfg.d_model, cfg.h_q * cfg.d_rope));
            }
            w.w_dkv = Some(init_matrix(rng, cfg.d_model, cfg.h_c * cfg.d_c));
            let up = cfg.g_q() * cfg.d_h;
            for _ in 0..cfg.h_c {
                w.w_uk.push(init_matrix(rng, cfg.d_c, up));
            }
            for _ in 0..cfg.h_c {
                w.w_uv.push(init_matrix(rng, cfg.d_c, up));
            }
            if cfg.d_rope > 0 {
                w.w_k_rope = Some(init_matrix(rng, cfg.d_model, cfg.d_rope));
            }
        }
    }

    w.w_o = init_matrix(rng, qdim, cfg.d_model);
    w.validate(cfg)?;
    Ok(w)
}

impl AttnWeights {
    /// Checks that exactly the matrices `cfg` needs are present with the
    /// right extents. Forward passes run this on entry so a mismatched
    /// config/weights pair fails loudly instead of indexing garbage.
    pub fn validate(&self, cfg: &AttnConfig) -> Result<()> {
        let qdim = cfg.h_q * cfg.d_h;
        let expect = |t: &Option<Tensor>, name: &str, shape: [usize; 2]| -> Result<()> {
            match t {
                Some(m) if m.shape() == shape => Ok(()),
                Some(m) => Err(Error::Config(format!(
                    "{name} has shape {:?}, config wants {shape:?}",
                    m.shape()
                ))),
                None => Err(Error::Config(format!(
                    "{name} missing for {}",
                    cfg.variant.name()
                ))),
            }
        };
        let absent = |t: &Option<Tensor>, name: &str| -> Result<()> {
            if t.is_some() {
                return Err(Error::Config(format!(
                    "{name} present but unused by {}",
                    cfg.variant.name()
                )));
            }
            Ok(())
        };

        match cfg.q_rank {
            None => {
                expect(&self.w_q, "w_q", [cfg.d_model, qdim])?;
                absent(&self.w_dq, "w_dq")?;
                absent(&self.w_uq, "w_uq")?;
            }
            Some(r) => {
                absent(&self.w_q, "w_q")?;
                expect(&self.w_dq, "w_dq", [cfg.d_model, r])?;
                expect(&self.w_uq, "w_uq", [r, qdim])?;
            }
        }

        match cfg.family() {
            Family::Standard => {
                expect(&self.w_k, "w_k", [cfg.d_model, cfg.h_kv * cfg.d_h])?;
                expect(&self.w_v, "w_v", [cfg.d_model, cfg.h_kv * cfg.d_h])?;
                absent(&self.w_kv, "w_kv")?;
                absent(&self.w_k_rope, "w_k_rope")?;
                absent(&self.w_q_rope, "w_q_rope")?;
            }
            Family::Tied => {
                expect(&self.w_kv, "w_kv", [cfg.d_model, cfg.h_kv * cfg.d_h])?;
                expect(&self.w_k_rope, "w_k_rope", [cfg.d_model, cfg.d_h / 2])?;
                absent(&self.w_k, "w_k")?;
                absent(&self.w_v, "w_v")?;
                absent(&self.w_q_rope, "w_q_rope")?;
            }
            Family::Latent => {
                expect(&self.w_dkv, "w_dkv", [cfg.d_model, cfg.h_c * cfg.d_c])?;
                absent(&self.w_k, "w_k")?;
                absent(&self.w_v, "w_v")?;
                absent(&self.w_kv, "w_kv")?;
                if cfg.d_rope > 0 {
                    expect(
                        &self.w_q_rope,
                        "w_q_rope",
                        [cfg.d_model, cfg.h_q * cfg.d_rope],
                    )?;
                    expect(&self.w_k_rope, "w_k_rope", [cfg.d_model, cfg.d_rope])?;
                } else {
                    absent(&self.w_q_rope, "w_q_rope")?;
                    absent(&self.w_k_rope, "w_k_rope")?;
                }
                let up = cfg.g_q() * cfg.d_h;
                for (name, mats) in [("w_uk", &self.w_uk), ("w_uv", &self.w_uv)] {
                    if mats.len() != cfg.h_c {
                        return Err(Error::Config(format!(
                            "{name} has {} heads, config wants {}",
                            mats.len(),
                            cfg.h_c
                        )));
                    }
                    for (i, m) in mats.iter().enumerate() {
                        if m.shape() != [cfg.d_c, up] {
                            return Err(Error::Config(format!(
                                "{name}[{i}] has shape {:?}, config wants [{}, {up}]",
                                m.shape(),
                                cfg.d_c
                            )));
                        }
                    }
                }
            }
        }
        if !cfg.variant.is_latent() && (!self.w_uk.is_empty() || !self.w_uv.is_empty()) {
            return Err(Error::Config(format!(
                "up-projections present but unused by {}",
                cfg.variant.name()
            )));
        }
        if self.w_o.shape() != [qdim, cfg.d_model] {
            return Err(Error::Config(format!(
                "w_o has shape {:?}, config wants [{qdim}, {}]",
                self.w_o.shape(),
                cfg.d_model
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::config::AttnConfig;

    #[test]
    fn same_seed_gives_bit_identical_weights() {
        let cfg = AttnConfig::gla(64, 8, 16, 2, 32, 8).unwrap();
        let a = init_weights(&cfg, &mut SeededRng::new(5)).unwrap();
        let b = init_weights(&cfg, &mut SeededRng::new(5)).unwrap();
        assert_eq!(
            a.w_dkv.as_ref().unwrap().data(),
            b.w_dkv.as_ref().unwrap().data()
        );
        assert_eq!(a.w_o.data(), b.w_o.data());
        for (x, y) in a.w_uk.iter().zip(&b.w_uk) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn gla_up_projection_shapes_follow_group_size() {
        // h_q=8 over h_c=2 latent heads: groups of 4, so each up-projection
        // maps d_c=32 to 4*16=64 columns.
        let cfg = AttnConfig::gla(64, 8, 16, 2, 32, 8).unwrap();
        let w = init_weights(&cfg, &mut SeededRng::new(1)).unwrap();
        assert_eq!(w.w_uk.len(), 2);
        for m in w.w_uk.iter().chain(&w.w_uv) {
            assert_eq!(m.shape(), &[32, 64]);
        }
    }

    #[test]
    fn gta_rope_projection_is_half_width() {
        let cfg = AttnConfig::gta(256, 16, 4, 128).unwrap();
        let w = init_weights(&cfg, &mut SeededRng::new(2)).unwrap();
        assert_eq!(w.w_k_rope.as_ref().unwrap().shape(), &[256, 64]);
        assert_eq!(w.w_kv.as_ref().unwrap().shape(), &[256, 4 * 128]);
    }

    #[test]
    fn init_bounds_follow_fan_in() {
        let cfg = AttnConfig::mha(64, 4, 16).unwrap();
        let w = init_weights(&cfg, &mut SeededRng::new(3)).unwrap();
        let s = 1.0 / (64f32).sqrt();
        for v in w.w_q.as_ref().unwrap().data() {
            assert!(v.abs() <= s, "draw {v} outside ±{s}");
        }
        // w_o has fan-in h_q*d_h = 64 here as well.
        for v in w.w_o.data() {
            assert!(v.abs() <= s);
        }
    }

    #[test]
    fn low_rank_query_swaps_in_matrix_pair() {
        let mut cfg = AttnConfig::gla(64, 8, 16, 2, 32, 8).unwrap();
        cfg.q_rank = Some(24);
        let w = init_weights(&cfg, &mut SeededRng::new(4)).unwrap();
        assert!(w.w_q.is_none());
        assert_eq!(w.w_dq.as_ref().unwrap().shape(), &[64, 24]);
        assert_eq!(w.w_uq.as_ref().unwrap().shape(), &[24, 8 * 16]);
    }

    #[test]
    fn validate_catches_mismatched_pairs() {
        let gla = AttnConfig::gla(64, 8, 16, 2, 32, 8).unwrap();
        let w = init_weights(&gla, &mut SeededRng::new(6)).unwrap();
        let mha = AttnConfig::mha(64, 8, 16).unwrap();
        assert!(
            w.validate(&mha).is_err(),
            "latent weights must not validate as MHA"
        );
    }
}
