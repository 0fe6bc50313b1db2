//! Prefill and decode forward passes for all six variants.
//!
//! Two scoring paths exist for the latent variants:
//!
//! - **materialized** (reference): per-head keys and values are reconstructed
//!   from the cached latents through the up-projections, then standard
//!   attention runs on them. This is the plain-reading formulation and the
//!   ground truth for everything else.
//! - **absorbed** (decode): the key up-projection folds into the query (one
//!   `d_c`-wide absorbed query per head) and the value up-projection folds
//!   into the output, so scores and the weighted sum run directly against the
//!   latent cache and per-head keys/values never exist. Absorption is a pure
//!   associativity reorder — same math, different rounding — computed on the
//!   fly each step so the stored weights stay inspectable.
//!
//! Variants without latents have nothing to absorb; their one path serves as
//! both. Scores always use scale `1/sqrt(d_qk_eff)` and, where a decoupled
//! rotary key exists, add its dot product to the state-path score before the
//! softmax.
//!
//! Causality: prefill is lower-triangular over positions `0..L`; a decode
//! step at cache length `L0` gives query slot `s` visibility of cached rows
//! plus new rows `0..=s` (speculative-decoding semantics for `Lq > 1`).

use crate::attention::config::{AttnConfig, Family, Variant};
use crate::attention::state::{KvState, NewEntries};
use crate::attention::weights::AttnWeights;
use crate::error::{Error, Result};
use crate::rope::{apply_rope, RopeParams};
use crate::tensor::{dot, softmax_scaled, Tensor};

/// Which latent scoring path to run. Immaterial for non-latent variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScorePath {
    /// Absorbed queries against raw latents (decode-time path).
    Absorbed,
    /// Keys/values reconstructed through the up-projections (reference).
    Materialized,
}

/// Per-step query tensors, rotation already applied.
#[derive(Debug)]
pub(crate) struct Queries {
    /// `[B, Lq, h_q, d_h]`; for in-place variants the rotary channels are
    /// already rotated, for latent variants this is the unrotated main part.
    pub main: Tensor,
    /// `[B, Lq, h_q, d_R]`, rotated; latent variants with `d_R > 0` only.
    pub rope: Option<Tensor>,
}

/// `x · w` reinterpreted as `h` heads of `width` channels.
fn project_heads(x: &Tensor, w: &Tensor, h: usize, width: usize) -> Result<Tensor> {
    let (b, lq, dm) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let y = x.reshape(&[b * lq, dm])?.matmul(w)?;
    y.reshape(&[b, lq, h, width])
}

/// Rope parameters wide enough for the given positions.
fn step_rope(rotary_dim: usize, positions: &[usize]) -> Result<RopeParams> {
    let max_pos = positions.last().map_or(1, |p| p + 1);
    RopeParams::new(rotary_dim, max_pos)
}

fn check_x(cfg: &AttnConfig, x: &Tensor, what: &str) -> Result<(usize, usize)> {
    if x.rank() != 3 || x.shape()[2] != cfg.d_model {
        return Err(Error::Dimension(format!(
            "{what} expects [B, L, d_model={}], got {:?}",
            cfg.d_model,
            x.shape()
        )));
    }
    if x.shape()[0] == 0 || x.shape()[1] == 0 {
        return Err(Error::Dimension(format!(
            "{what} needs B >= 1 and L >= 1, got {:?}",
            x.shape()
        )));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

/// Builds rotated queries for `x` at `positions`.
pub(crate) fn build_queries(
    cfg: &AttnConfig,
    w: &AttnWeights,
    x: &Tensor,
    positions: &[usize],
) -> Result<Queries> {
    let q_lin = match cfg.q_rank {
        None => project_heads(x, w.w_q.as_ref().expect("validated"), cfg.h_q, cfg.d_h)?,
        Some(r) => {
            let down = project_heads(x, w.w_dq.as_ref().expect("validated"), 1, r)?;
            let down3 = down.reshape(&[x.shape()[0], x.shape()[1], r])?;
            project_heads(
                &down3,
                w.w_uq.as_ref().expect("validated"),
                cfg.h_q,
                cfg.d_h,
            )?
        }
    };
    match cfg.family() {
        Family::Standard => {
            let main = apply_rope(&q_lin, positions, &step_rope(cfg.d_rope, positions)?)?;
            Ok(Queries { main, rope: None })
        }
        Family::Tied => {
            // Queries split like the key view: untouched leading half scores
            // against the tied state, rotated trailing half against the
            // shared rotary key.
            let half = cfg.d_h / 2;
            let lead = q_lin.slice_last(0, half)?;
            let tail = q_lin.slice_last(half, cfg.d_h)?;
            let tail = apply_rope(&tail, positions, &step_rope(half, positions)?)?;
            Ok(Queries {
                main: lead.concat_last(&tail)?,
                rope: None,
            })
        }
        Family::Latent => {
            let rope = match &w.w_q_rope {
                Some(wq) if cfg.d_rope > 0 => {
                    let q = project_heads(x, wq, cfg.h_q, cfg.d_rope)?;
                    Some(apply_rope(
                        &q,
                        positions,
                        &step_rope(cfg.d_rope, positions)?,
                    )?)
                }
                _ => None,
            };
            Ok(Queries { main: q_lin, rope })
        }
    }
}

/// Projects `x` into the per-token state rows a step appends to the cache.
pub(crate) fn build_entries(
    cfg: &AttnConfig,
    w: &AttnWeights,
    x: &Tensor,
    positions: &[usize],
) -> Result<NewEntries> {
    let lq = x.shape()[1];
    let mut e = NewEntries {
        len: lq,
        k: None,
        v: None,
        tied: None,
        latent: None,
        k_rope: None,
    };
    match cfg.family() {
        Family::Standard => {
            let k = project_heads(x, w.w_k.as_ref().expect("validated"), cfg.h_kv, cfg.d_h)?;
            e.k = Some(apply_rope(
                &k,
                positions,
                &step_rope(cfg.d_rope, positions)?,
            )?);
            e.v = Some(project_heads(
                x,
                w.w_v.as_ref().expect("validated"),
                cfg.h_kv,
                cfg.d_h,
            )?);
        }
        Family::Tied => {
            e.tied = Some(project_heads(
                x,
                w.w_kv.as_ref().expect("validated"),
                cfg.h_kv,
                cfg.d_h,
            )?);
            let half = cfg.d_h / 2;
            let kr = project_heads(x, w.w_k_rope.as_ref().expect("validated"), 1, half)?;
            e.k_rope = Some(apply_rope(&kr, positions, &step_rope(half, positions)?)?);
        }
        Family::Latent => {
            e.latent = Some(project_heads(
                x,
                w.w_dkv.as_ref().expect("validated"),
                cfg.h_c,
                cfg.d_c,
            )?);
            if cfg.d_rope > 0 {
                let kr = project_heads(x, w.w_k_rope.as_ref().expect("validated"), 1, cfg.d_rope)?;
                e.k_rope = Some(apply_rope(
                    &kr,
                    positions,
                    &step_rope(cfg.d_rope, positions)?,
                )?);
            }
        }
    }
    Ok(e)
}

/// Runs attention for query heads `heads.start..heads.end` against `state`,
/// returning `[B, Lq, heads.len(), d_h]` head outputs (before the output
/// projection). Query slot `s` sees state rows `0..=positions[s]`.
pub(crate) fn attend_range(
    cfg: &AttnConfig,
    w: &AttnWeights,
    state: &KvState,
    q: &Queries,
    positions: &[usize],
    heads: std::ops::Range<usize>,
    path: ScorePath,
) -> Result<Tensor> {
    let (b, lq) = (q.main.shape()[0], q.main.shape()[1]);
    let g_q = cfg.g_q();
    let n_heads = heads.len();
    let mut out = Tensor::zeros(&[b, lq, n_heads, cfg.d_h]);

    let mut scores: Vec<f32> = Vec::new();
    let mut weights: Vec<f32> = Vec::new();
    let mut q_abs: Vec<f32> = vec![0.0; cfg.d_c.max(1)];
    let mut acc: Vec<f32> = vec![0.0; cfg.d_c.max(cfg.d_h)];
    let mut key_buf: Vec<f32> = vec![0.0; cfg.d_h];

    for bi in 0..b {
        for (s, &pos) in positions.iter().enumerate() {
            let visible = pos + 1;
            if visible > state.len() {
                return Err(Error::State(format!(
                    "query at position {pos} needs {visible} cached rows, cache has {}",
                    state.len()
                )));
            }
            scores.resize(visible, 0.0);
            weights.resize(visible, 0.0);
            for (hi, h) in heads.clone().enumerate() {
                let q_row = q.main.row(&[bi, s, h]);
                match cfg.family() {
                    Family::Standard => {
                        let k = state.k.as_ref().expect("standard cache");
                        let v = state.v.as_ref().expect("standard cache");
                        let kvh = h / g_q;
                        for (j, sc) in scores.iter_mut().enumerate() {
                            *sc = dot(q_row, k.row(&[bi, j, kvh]));
                        }
                        softmax_scaled(&scores, cfg.scale(), &mut weights);
                        let o = out.row_mut(&[bi, s, hi]);
                        for (j, &p) in weights.iter().enumerate() {
                            for (ot, &vt) in o.iter_mut().zip(v.row(&[bi, j, kvh])) {
                                *ot += p * vt;
                            }
                        }
                    }
                    Family::Tied => {
                        let tied = state.tied.as_ref().expect("tied cache");
                        let kr = state.k_rope.as_ref().expect("tied cache");
                        let kvh = h / g_q;
                        let half = cfg.d_h / 2;
                        for (j, sc) in scores.iter_mut().enumerate() {
                            *sc = dot(&q_row[..half], &tied.row(&[bi, j, kvh])[..half])
                                + dot(&q_row[half..], kr.row(&[bi, j, 0]));
                        }
                        softmax_scaled(&scores, cfg.scale(), &mut weights);
                        let o = out.row_mut(&[bi, s, hi]);
                        for (j, &p) in weights.iter().enumerate() {
                            for (ot, &vt) in o.iter_mut().zip(tied.row(&[bi, j, kvh])) {
                                *ot += p * vt;
                            }
                        }
                    }
                    Family::Latent => {
                        let latent = state.latent.as_ref().expect("latent cache");
                        let c = h / g_q;
                        let col0 = (h % g_q) * cfg.d_h;
                        let uk = &w.w_uk[c];
                        let uv = &w.w_uv[c];
                        let rope_score = |j: usize| -> f32 {
                            match (&q.rope, &state.k_rope) {
                                (Some(qr), Some(kr)) => {
                                    dot(qr.row(&[bi, s, h]), kr.row(&[bi, j, 0]))
                                }
                                _ => 0.0,
                            }
                        };
                        match path {
                            ScorePath::Absorbed => {
                                // q̃ = q · W^{UK}ᵀ (this head's d_h-wide slice).
                                for (cd, qa) in q_abs[..cfg.d_c].iter_mut().enumerate() {
                                    *qa = dot(q_row, &uk.row(&[cd])[col0..col0 + cfg.d_h]);
                                }
                                for (j, sc) in scores.iter_mut().enumerate() {
                                    *sc = dot(&q_abs[..cfg.d_c], latent.row(&[bi, j, c]))
                                        + rope_score(j);
                                }
                                softmax_scaled(&scores, cfg.scale(), &mut weights);
                                // Weighted latent sum, then the value
                                // up-projection folds into the output.
                                let a = &mut acc[..cfg.d_c];
                                a.fill(0.0);
                                for (j, &p) in weights.iter().enumerate() {
                                    for (at, &ct) in a.iter_mut().zip(latent.row(&[bi, j, c])) {
                                        *at += p * ct;
                                    }
                                }
                                let o = out.row_mut(&[bi, s, hi]);
                                for (cd, &av) in a.iter().enumerate() {
                                    let uv_row = &uv.row(&[cd])[col0..col0 + cfg.d_h];
                                    for (ot, &ut) in o.iter_mut().zip(uv_row) {
                                        *ot += av * ut;
                                    }
                                }
                            }
                            ScorePath::Materialized => {
                                for (j, sc) in scores.iter_mut().enumerate() {
                                    // k_j = c_j · W^{UK} (this head's slice).
                                    key_buf.fill(0.0);
                                    let c_row = latent.row(&[bi, j, c]);
                                    for (cd, &cv) in c_row.iter().enumerate() {
                                        let uk_row = &uk.row(&[cd])[col0..col0 + cfg.d_h];
                                        for (kt, &ut) in key_buf.iter_mut().zip(uk_row) {
                                            *kt += cv * ut;
                                        }
                                    }
                                    *sc = dot(q_row, &key_buf) + rope_score(j);
                                }
                                softmax_scaled(&scores, cfg.scale(), &mut weights);
                                let o = out.row_mut(&[bi, s, hi]);
                                for (j, &p) in weights.iter().enumerate() {
                                    // v_j = c_j · W^{UV}, consumed immediately.
                                    let c_row = latent.row(&[bi, j, c]);
                                    let v_buf = &mut acc[..cfg.d_h];
                                    v_buf.fill(0.0);
                                    for (cd, &cv) in c_row.iter().enumerate() {
                                        let uv_row = &uv.row(&[cd])[col0..col0 + cfg.d_h];
                                        for (vt, &ut) in v_buf.iter_mut().zip(uv_row) {
                                            *vt += cv * ut;
                                        }
                                    }
                                    for (ot, &vt) in o.iter_mut().zip(v_buf.iter()) {
                                        *ot += p * vt;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Applies the rows of `w_o` belonging to query heads `heads` to per-head
/// outputs `[B, Lq, heads.len(), d_h]`, yielding `[B, Lq, d_model]`.
///
/// Accumulation runs over `(head, channel)` in ascending order, so for the
/// full head range this is bit-identical to one `[B·Lq, h_q·d_h] · w_o`
/// matmul, and rank-partial results sum to exactly that (up to f32 addition
/// rounding across ranks).
pub(crate) fn project_out_range(
    cfg: &AttnConfig,
    w_o: &Tensor,
    head_out: &Tensor,
    heads: std::ops::Range<usize>,
) -> Result<Tensor> {
    let (b, lq, n_heads) = (
        head_out.shape()[0],
        head_out.shape()[1],
        head_out.shape()[2],
    );
    if n_heads != heads.len() {
        return Err(Error::Dimension(format!(
            "head range {heads:?} does not match head outputs {:?}",
            head_out.shape()
        )));
    }
    let mut out = Tensor::zeros(&[b, lq, cfg.d_model]);
    for bi in 0..b {
        for s in 0..lq {
            let o = out.row_mut(&[bi, s]);
            for (hi, h) in heads.clone().enumerate() {
                let hv = head_out.row(&[bi, s, hi]);
                for (t, &x) in hv.iter().enumerate() {
                    let w_row = w_o.row(&[h * cfg.d_h + t]);
                    for (ov, &wv) in o.iter_mut().zip(w_row) {
                        *ov += x * wv;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn check_decode_args(
    cfg: &AttnConfig,
    w: &AttnWeights,
    cache: &KvState,
    x_new: &Tensor,
    positions: &[usize],
) -> Result<()> {
    w.validate(cfg)?;
    let (b, lq) = check_x(cfg, x_new, "decode")?;
    if b != cache.batch() {
        return Err(Error::State(format!(
            "decode batch {b} does not match cache batch {}",
            cache.batch()
        )));
    }
    if positions.len() != lq {
        return Err(Error::Parameter(format!(
            "{} positions given for {lq} new tokens",
            positions.len()
        )));
    }
    for (s, &p) in positions.iter().enumerate() {
        if p != cache.len() + s {
            return Err(Error::State(format!(
                "position {p} at slot {s} conflicts with cache length {} (expected {})",
                cache.len(),
                cache.len() + s
            )));
        }
    }
    Ok(())
}

/// Full causal forward pass over `x: [B, L, d_model]` at positions `0..L`.
/// Returns the attention output and the populated cache. Latent variants run
/// the materialized path here (reference semantics); decode then continues
/// from the returned cache on the absorbed path.
pub fn prefill(cfg: &AttnConfig, w: &AttnWeights, x: &Tensor) -> Result<(Tensor, KvState)> {
    w.validate(cfg)?;
    let (b, l) = check_x(cfg, x, "prefill")?;
    let positions: Vec<usize> = (0..l).collect();
    let entries = build_entries(cfg, w, x, &positions)?;
    let state = KvState::empty(cfg, b)?.appended(&entries)?;
    let q = build_queries(cfg, w, x, &positions)?;
    let heads = attend_range(
        cfg,
        w,
        &state,
        &q,
        &positions,
        0..cfg.h_q,
        ScorePath::Materialized,
    )?;
    let out = project_out_range(cfg, &w.w_o, &heads, 0..cfg.h_q)?;
    Ok((out, state))
}

/// One decode step: projects `x_new: [B, Lq, d_model]`, appends `Lq` rows to
/// the cache, and attends with the decode-time path (absorbed for latent
/// variants). `positions` must be exactly the next `Lq` cache slots;
/// anything else is a state error. Returns the output and the grown cache;
/// the input cache is untouched.
pub fn decode_step(
    cfg: &AttnConfig,
    w: &AttnWeights,
    cache: &KvState,
    x_new: &Tensor,
    positions: &[usize],
) -> Result<(Tensor, KvState)> {
    check_decode_args(cfg, w, cache, x_new, positions)?;
    let entries = build_entries(cfg, w, x_new, positions)?;
    let state = cache.appended(&entries)?;
    let q = build_queries(cfg, w, x_new, positions)?;
    let heads = attend_range(
        cfg,
        w,
        &state,
        &q,
        positions,
        0..cfg.h_q,
        ScorePath::Absorbed,
    )?;
    let out = project_out_range(cfg, &w.w_o, &heads, 0..cfg.h_q)?;
    Ok((out, state))
}

/// Ground truth for [`decode_step`]: identical contract, but latent variants
/// reconstruct per-head keys and values from the latents explicitly instead
/// of absorbing the up-projections. Variants without latents have nothing to
/// absorb, so this returns the standard path's output. Does not grow or
/// return the cache — it exists to be compared against.
pub fn decode_reference_materialized(
    cfg: &AttnConfig,
    w: &AttnWeights,
    cache: &KvState,
    x_new: &Tensor,
    positions: &[usize],
) -> Result<Tensor> {
    check_decode_args(cfg, w, cache, x_new, positions)?;
    let entries = build_entries(cfg, w, x_new, positions)?;
    let state = cache.appended(&entries)?;
    let q = build_queries(cfg, w, x_new, positions)?;
    let heads = attend_range(
        cfg,
        w,
        &state,
        &q,
        positions,
        0..cfg.h_q,
        ScorePath::Materialized,
    )?;
    project_out_range(cfg, &w.w_o, &heads, 0..cfg.h_q)
}

/// The tied-variant state views, as built by [`gta_build_kv`].
#[derive(Debug, Clone)]
pub struct GtaKv {
    /// Tied state `[B, L, h_kv, d_h]`, exactly as projected (never rotated).
    pub kv: Tensor,
    /// Key view `[B, L, h_kv, d_h]`: tied first half, shared rotated rotary
    /// key broadcast across heads as the second half.
    pub k: Tensor,
    /// Value view `[B, L, h_kv, d_h]`; bit-identical to `kv`.
    pub v: Tensor,
    /// Shared rotary key `[B, L, 1, d_h/2]`, stored rotated.
    pub k_rope: Tensor,
}

/// Builds the tied-variant views for `x` at positions `0..L`: the tied state
/// `KV`, the assembled key view `K = [KV[.., :d_h/2] ‖ broadcast(rope(K_R))]`,
/// the value view `V = KV`, and the rotated shared rotary key.
pub fn gta_build_kv(cfg: &AttnConfig, w: &AttnWeights, x: &Tensor) -> Result<GtaKv> {
    if cfg.variant != Variant::GTA {
        return Err(Error::Config(format!(
            "gta_build_kv applies to GTA only, got {}",
            cfg.variant.name()
        )));
    }
    w.validate(cfg)?;
    let (_, l) = check_x(cfg, x, "gta_build_kv")?;
    let positions: Vec<usize> = (0..l).collect();
    let e = build_entries(cfg, w, x, &positions)?;
    let kv = e.tied.expect("tied entries");
    let k_rope = e.k_rope.expect("tied entries");
    let half = cfg.d_h / 2;
    let k = kv
        .slice_last(0, half)?
        .concat_last(&k_rope.broadcast_head(cfg.h_kv)?)?;
    Ok(GtaKv {
        v: kv.clone(),
        k,
        kv,
        k_rope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::config::AttnConfig;
    use crate::attention::weights::init_weights;
    use crate::tensor::{max_rel_err, SeededRng};

    fn rand_x(shape: &[usize], rng: &mut SeededRng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    fn all_variants() -> Vec<AttnConfig> {
        vec![
            AttnConfig::mha(48, 4, 8).unwrap(),
            AttnConfig::mqa(48, 4, 8).unwrap(),
            AttnConfig::gqa(48, 4, 2, 8).unwrap(),
            AttnConfig::gta(48, 4, 2, 8).unwrap(),
            AttnConfig::mla(48, 4, 8, 32, 4).unwrap(),
            AttnConfig::gla(48, 4, 8, 2, 16, 4).unwrap(),
        ]
    }

    #[test]
    fn single_token_prefill_equals_decode_from_empty() {
        for cfg in all_variants() {
            let mut rng = SeededRng::new(11);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x = rand_x(&[1, 1, cfg.d_model], &mut rng);
            let (o_prefill, _) = prefill(&cfg, &w, &x).unwrap();
            let empty = KvState::empty(&cfg, 1).unwrap();
            let (o_decode, state) = decode_step(&cfg, &w, &empty, &x, &[0]).unwrap();
            assert_eq!(state.len(), 1);
            let err = max_rel_err(&o_decode, &o_prefill);
            assert!(
                err <= 1e-6,
                "{}: first-token paths differ by {err}",
                cfg.label()
            );
        }
    }

    #[test]
    fn gqa_with_full_heads_is_mha_bit_exact() {
        let mut rng = SeededRng::new(3);
        let mha = AttnConfig::mha(48, 4, 8).unwrap();
        let gqa = AttnConfig::gqa(48, 4, 4, 8).unwrap();
        let w_mha = init_weights(&mha, &mut SeededRng::new(7)).unwrap();
        let w_gqa = init_weights(&gqa, &mut SeededRng::new(7)).unwrap();
        let x = rand_x(&[2, 5, 48], &mut rng);
        let (a, _) = prefill(&mha, &w_mha, &x).unwrap();
        let (b, _) = prefill(&gqa, &w_gqa, &x).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            assert_eq!(
                p.to_bits(),
                q.to_bits(),
                "grouping with h_kv=h_q must be exactly MHA"
            );
        }
    }

    #[test]
    fn causal_mask_blocks_future_positions_bit_exactly() {
        for cfg in all_variants() {
            let mut rng = SeededRng::new(17);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x = rand_x(&[1, 6, cfg.d_model], &mut rng);
            let (o1, _) = prefill(&cfg, &w, &x).unwrap();
            // Perturb the last position only.
            let mut bumped = x.clone();
            for v in bumped.row_mut(&[0, 5]) {
                *v += 0.5;
            }
            let (o2, _) = prefill(&cfg, &w, &bumped).unwrap();
            for s in 0..5 {
                assert_eq!(
                    o1.row(&[0, s]),
                    o2.row(&[0, s]),
                    "{}: output at position {s} saw a future token",
                    cfg.label()
                );
            }
            assert_ne!(
                o1.row(&[0, 5]),
                o2.row(&[0, 5]),
                "perturbed position must change"
            );
        }
    }

    #[test]
    fn two_token_step_matches_two_single_steps() {
        for cfg in all_variants() {
            let mut rng = SeededRng::new(23);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x0 = rand_x(&[1, 3, cfg.d_model], &mut rng);
            let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
            let x_new = rand_x(&[1, 2, cfg.d_model], &mut rng);

            let (o_pair, _) = decode_step(&cfg, &w, &cache, &x_new, &[3, 4]).unwrap();

            let first = x_new.slice_last(0, cfg.d_model).unwrap(); // clone via full slice
            let first = first.reshape(&[1, 2, cfg.d_model]).unwrap();
            // Split x_new into two single-token tensors.
            let t0 = Tensor::new(&[1, 1, cfg.d_model], first.row(&[0, 0]).to_vec()).unwrap();
            let t1 = Tensor::new(&[1, 1, cfg.d_model], first.row(&[0, 1]).to_vec()).unwrap();
            let (o0, c1) = decode_step(&cfg, &w, &cache, &t0, &[3]).unwrap();
            let (o1, _) = decode_step(&cfg, &w, &c1, &t1, &[4]).unwrap();

            let pair0 = Tensor::new(&[1, 1, cfg.d_model], o_pair.row(&[0, 0]).to_vec()).unwrap();
            let pair1 = Tensor::new(&[1, 1, cfg.d_model], o_pair.row(&[0, 1]).to_vec()).unwrap();
            let e0 = max_rel_err(&pair0, &o0);
            let e1 = max_rel_err(&pair1, &o1);
            assert!(
                e0 <= 1e-5 && e1 <= 1e-5,
                "{}: Lq=2 vs 2×Lq=1 errs {e0} {e1}",
                cfg.label()
            );
        }
    }

    #[test]
    fn prefill_then_decode_matches_longer_prefill() {
        for cfg in all_variants() {
            let mut rng = SeededRng::new(29);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x_full = rand_x(&[1, 7, cfg.d_model], &mut rng);
            let (o_full, _) = prefill(&cfg, &w, &x_full).unwrap();

            let x_head = Tensor::new(
                &[1, 6, cfg.d_model],
                x_full.data()[..6 * cfg.d_model].to_vec(),
            )
            .unwrap();
            let x_last = Tensor::new(&[1, 1, cfg.d_model], x_full.row(&[0, 6]).to_vec()).unwrap();
            let (_, cache) = prefill(&cfg, &w, &x_head).unwrap();
            let (o_step, _) = decode_step(&cfg, &w, &cache, &x_last, &[6]).unwrap();

            let last = Tensor::new(&[1, 1, cfg.d_model], o_full.row(&[0, 6]).to_vec()).unwrap();
            let err = max_rel_err(&o_step, &last);
            assert!(
                err <= 1e-5,
                "{}: sequential consistency err {err}",
                cfg.label()
            );
        }
    }

    #[test]
    fn absorbed_decode_matches_materialized_reference() {
        for cfg in [
            AttnConfig::mla(48, 8, 8, 32, 4).unwrap(),
            AttnConfig::gla(48, 8, 8, 4, 16, 4).unwrap(),
        ] {
            let mut rng = SeededRng::new(41);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x0 = rand_x(&[2, 9, cfg.d_model], &mut rng);
            let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
            let x_new = rand_x(&[2, 2, cfg.d_model], &mut rng);
            let (absorbed, _) = decode_step(&cfg, &w, &cache, &x_new, &[9, 10]).unwrap();
            let reference =
                decode_reference_materialized(&cfg, &w, &cache, &x_new, &[9, 10]).unwrap();
            let err = max_rel_err(&absorbed, &reference);
            assert!(
                err <= 1e-4,
                "{}: absorption reorder drifted {err}",
                cfg.label()
            );
        }
    }

    #[test]
    fn identity_up_projections_reduce_mla_to_mqa() {
        // d_c = d_h with W^{UK} = W^{UV} = per-head identity blocks and no
        // rotary term: the latent IS the single K=V head, so MLA must agree
        // with an MQA whose key and value projections are both the latent
        // down-projection.
        let d_model = 40;
        let (h_q, d_h) = (4, 8);
        let mla = AttnConfig::mla(d_model, h_q, d_h, d_h, 0).unwrap();
        let mut rng = SeededRng::new(53);
        let mut w_mla = init_weights(&mla, &mut rng).unwrap();
        let eye_blocks = Tensor::from_fn(&[d_h, h_q * d_h], |f| {
            let (r, c) = (f / (h_q * d_h), f % (h_q * d_h));
            if c % d_h == r {
                1.0
            } else {
                0.0
            }
        });
        w_mla.w_uk = vec![eye_blocks.clone()];
        w_mla.w_uv = vec![eye_blocks];

        let mqa = AttnConfig::standard(Variant::MQA, d_model, h_q, 1, d_h, 0).unwrap();
        let w_mqa = AttnWeights {
            w_q: w_mla.w_q.clone(),
            w_dq: None,
            w_uq: None,
            w_q_rope: None,
            w_k: w_mla.w_dkv.clone(),
            w_v: w_mla.w_dkv.clone(),
            w_kv: None,
            w_k_rope: None,
            w_dkv: None,
            w_uk: vec![],
            w_uv: vec![],
            w_o: w_mla.w_o.clone(),
        };

        let x0 = rand_x(&[1, 5, d_model], &mut rng);
        let (_, c_mla) = prefill(&mla, &w_mla, &x0).unwrap();
        let (_, c_mqa) = prefill(&mqa, &w_mqa, &x0).unwrap();
        let x1 = rand_x(&[1, 1, d_model], &mut rng);
        let (o_mla, _) = decode_step(&mla, &w_mla, &c_mla, &x1, &[5]).unwrap();
        let (o_mqa, _) = decode_step(&mqa, &w_mqa, &c_mqa, &x1, &[5]).unwrap();
        let err = max_rel_err(&o_mla, &o_mqa);
        assert!(
            err <= 1e-5,
            "identity-up-projection reduction drifted {err}"
        );
    }

    #[test]
    fn zero_query_averages_values() {
        // Zero queries give uniform weights, so each head's output is the
        // mean of its values; with w_o = identity the op output concatenates
        // those means directly.
        let (h_q, d_h) = (2, 8);
        let d_model = h_q * d_h;
        let cfg = AttnConfig::mla(d_model, h_q, d_h, 16, 0).unwrap();
        let mut rng = SeededRng::new(61);
        let mut w = init_weights(&cfg, &mut rng).unwrap();
        w.w_q = Some(Tensor::zeros(&[d_model, h_q * d_h]));
        w.w_o = Tensor::from_fn(&[h_q * d_h, d_model], |f| {
            if f / d_model == f % d_model {
                1.0
            } else {
                0.0
            }
        });

        let x0 = rand_x(&[1, 6, d_model], &mut rng);
        let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
        let x1 = rand_x(&[1, 1, d_model], &mut rng);
        let out = decode_reference_materialized(&cfg, &w, &cache, &x1, &[6]).unwrap();

        // Mean of materialized values over the 7 visible rows, per head.
        let entries = build_entries(&cfg, &w, &x1, &[6]).unwrap();
        let state = cache.appended(&entries).unwrap();
        let latent = state.latent.as_ref().unwrap();
        for h in 0..h_q {
            let col0 = h * d_h;
            let mut mean = vec![0.0f32; d_h];
            for j in 0..7 {
                let c_row = latent.row(&[0, j, 0]);
                for (cd, &cv) in c_row.iter().enumerate() {
                    let uv_row = &w.w_uv[0].row(&[cd])[col0..col0 + d_h];
                    for (m, &u) in mean.iter_mut().zip(uv_row) {
                        *m += cv * u / 7.0;
                    }
                }
            }
            for (t, &m) in mean.iter().enumerate() {
                let got = out.row(&[0, 0])[h * d_h + t];
                assert!(
                    (got - m).abs() <= 1e-6,
                    "head {h} chan {t}: {got} vs mean {m}"
                );
            }
        }
    }

    #[test]
    fn decode_never_mutates_existing_cache_rows() {
        for cfg in all_variants() {
            let mut rng = SeededRng::new(71);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x0 = rand_x(&[1, 4, cfg.d_model], &mut rng);
            let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
            let snapshot = cache.clone();
            let x1 = rand_x(&[1, 1, cfg.d_model], &mut rng);
            let (_, grown) = decode_step(&cfg, &w, &cache, &x1, &[4]).unwrap();

            let bits = |t: &Option<Tensor>| -> Vec<u32> {
                t.as_ref()
                    .map_or_else(Vec::new, |t| t.data().iter().map(|v| v.to_bits()).collect())
            };
            assert_eq!(bits(&cache.k), bits(&snapshot.k));
            assert_eq!(bits(&cache.latent), bits(&snapshot.latent));
            assert_eq!(bits(&cache.tied), bits(&snapshot.tied));
            // The grown cache's prefix is byte-identical to the old cache.
            for (old, new) in [
                (&cache.k, &grown.k),
                (&cache.v, &grown.v),
                (&cache.tied, &grown.tied),
                (&cache.latent, &grown.latent),
                (&cache.k_rope, &grown.k_rope),
            ] {
                if let (Some(o), Some(n)) = (old, new) {
                    // Sequence axis is axis 1; compare row by row.
                    let (b, l, h) = (o.shape()[0], o.shape()[1], o.shape()[2]);
                    for bi in 0..b {
                        for li in 0..l {
                            for hi in 0..h {
                                assert_eq!(
                                    o.row(&[bi, li, hi]),
                                    n.row(&[bi, li, hi]),
                                    "{}: cached row ({bi},{li},{hi}) changed",
                                    cfg.label()
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn decode_rejects_conflicting_positions_and_batch() {
        let cfg = AttnConfig::gqa(48, 4, 2, 8).unwrap();
        let mut rng = SeededRng::new(83);
        let w = init_weights(&cfg, &mut rng).unwrap();
        let x0 = rand_x(&[1, 4, 48], &mut rng);
        let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
        let x1 = rand_x(&[1, 1, 48], &mut rng);
        assert!(matches!(
            decode_step(&cfg, &w, &cache, &x1, &[3]),
            Err(Error::State(_))
        ));
        assert!(matches!(
            decode_step(&cfg, &w, &cache, &x1, &[5]),
            Err(Error::State(_))
        ));
        assert!(matches!(
            decode_step(&cfg, &w, &cache, &x1, &[4, 5]),
            Err(Error::Parameter(_))
        ));
        let x_b2 = rand_x(&[2, 1, 48], &mut rng);
        assert!(matches!(
            decode_step(&cfg, &w, &cache, &x_b2, &[4]),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn gta_views_keep_tied_half_unrotated() {
        let cfg = AttnConfig::gta(48, 8, 2, 16).unwrap();
        let mut rng = SeededRng::new(97);
        let w = init_weights(&cfg, &mut rng).unwrap();
        let x = rand_x(&[2, 6, 48], &mut rng);
        let built = gta_build_kv(&cfg, &w, &x).unwrap();
        let half = cfg.d_h / 2;

        assert_eq!(built.k.shape(), &[2, 6, 2, 16], "K must be d_h wide");
        assert_eq!(built.k_rope.shape(), &[2, 6, 1, half]);
        for (a, b) in built.v.data().iter().zip(built.kv.data()) {
            assert_eq!(
                a.to_bits(),
                b.to_bits(),
                "V must be the tied state bit-exactly"
            );
        }
        for bi in 0..2 {
            for l in 0..6 {
                for h in 0..2 {
                    let k_row = built.k.row(&[bi, l, h]);
                    let kv_row = built.kv.row(&[bi, l, h]);
                    assert_eq!(&k_row[..half], &kv_row[..half], "tied half was rotated");
                    assert_eq!(
                        &k_row[half..],
                        built.k_rope.row(&[bi, l, 0]),
                        "rotary half must be the shared rotated head"
                    );
                }
            }
        }
        // Rotation confined to the separate half: position 0 row equals the
        // raw projection, later rows differ from their unrotated projection
        // only in the k_rope head, which we already pinned above.
        let mla = AttnConfig::mla(48, 8, 16, 32, 8).unwrap();
        let w_mla = init_weights(&mla, &mut SeededRng::new(97)).unwrap();
        assert!(
            gta_build_kv(&mla, &w_mla, &x).is_err(),
            "non-GTA configs rejected"
        );
    }

    #[test]
    fn degeneracy_gla_single_latent_is_mla() {
        let d_h = 8;
        let mla = AttnConfig::mla(48, 4, d_h, 4 * d_h, 4).unwrap();
        let gla = AttnConfig::gla(48, 4, d_h, 1, 4 * d_h, 4).unwrap();
        let mut rng = SeededRng::new(101);
        let w_mla = init_weights(&mla, &mut SeededRng::new(5)).unwrap();
        let w_gla = init_weights(&gla, &mut SeededRng::new(5)).unwrap();
        let x = rand_x(&[1, 6, 48], &mut rng);
        let (a, ca) = prefill(&mla, &w_mla, &x).unwrap();
        let (b, cb) = prefill(&gla, &w_gla, &x).unwrap();
        let err = max_rel_err(&a, &b);
        assert!(err <= 1e-6, "GLA(h_c=1, d_c=4d_h) vs MLA prefill err {err}");
        let x1 = rand_x(&[1, 1, 48], &mut rng);
        let (da, _) = decode_step(&mla, &w_mla, &ca, &x1, &[6]).unwrap();
        let (db, _) = decode_step(&gla, &w_gla, &cb, &x1, &[6]).unwrap();
        let err = max_rel_err(&da, &db);
        assert!(err <= 1e-6, "GLA(h_c=1) vs MLA decode err {err}");
    }
}
