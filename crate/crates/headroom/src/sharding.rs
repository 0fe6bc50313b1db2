//! Tensor-/data-parallel placement: duplication factor, per-device cache
//! bytes, sharded latent-decode recombination, and a straggler step-time
//! model.
//!
//! The placement rule is head-granular: query heads split evenly across the
//! `N` tensor-parallel ranks, and each rank holds a copy of every KV/latent
//! head its queries score against. When a group of `g_q` query heads is too
//! wide to sit on one rank, its state head must be copied to every rank the
//! group spans — the duplication factor `D = ⌈N·g_q/h_q⌉` counts those
//! copies, and `D = 1` (zero redundancy) holds exactly when
//! `g_q ≤ ⌊h_q/N⌋`. A single shared rotary key head cannot shard at all and
//! replicates on every rank.
//!
//! The straggler model prices one decode step: each request costs its ranks
//! `bytes = per_device_bytes_per_token · L` of cache traffic plus the small
//! query/output term, and `flops = 2 · Lq · (h_q/N) · L · (d_qk_eff+d_v_eff)`.
//! A rank's work is the **sum** over the requests its data-parallel group
//! serves, a rank's time is `max(bytes/bw, flops/peak)`, and barrier
//! semantics take the max across ranks and then across groups. Collective
//! communication cost is excluded by default (an optional constant can be
//! added per step). Absolute times are a ruler, not a prediction — tests
//! only ever assert orderings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::config::AttnConfig;
use crate::attention::forward::{
    attend_range, build_entries, build_queries, check_decode_args, project_out_range, ScorePath,
};
use crate::attention::state::KvState;
use crate::attention::weights::AttnWeights;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A tensor-parallel × data-parallel placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    /// Tensor-parallel degree (ranks per replica).
    pub tp: usize,
    /// Data-parallel replica count.
    pub dp: usize,
}

impl ShardPlan {
    /// Plan with `tp` ranks per replica and `dp` replicas.
    pub fn new(tp: usize, dp: usize) -> Result<Self> {
        if tp == 0 || dp == 0 {
            return Err(Error::Config(format!(
                "tp and dp must be positive, got {tp} and {dp}"
            )));
        }
        Ok(Self { tp, dp })
    }

    /// Duplication factor of `cfg` under this plan's TP degree.
    pub fn duplication(&self, cfg: &AttnConfig) -> Result<usize> {
        duplication_factor(self.tp, cfg.g_q(), cfg.h_q)
    }

    /// Rank owning each query head: heads split into `tp` contiguous blocks.
    pub fn query_head_assignment(&self, cfg: &AttnConfig) -> Result<Vec<usize>> {
        if !cfg.h_q.is_multiple_of(self.tp) {
            return Err(Error::Config(format!(
                "tp {} must divide h_q {} for an even head split",
                self.tp, cfg.h_q
            )));
        }
        let per = cfg.h_q / self.tp;
        Ok((0..cfg.h_q).map(|h| h / per).collect())
    }

    /// Ranks holding a copy of each KV/latent head: state head `c` lives
    /// wherever one of its `g_q` query heads lives. List lengths equal the
    /// duplication factor when the geometry divides evenly.
    pub fn state_head_ranks(&self, cfg: &AttnConfig) -> Result<Vec<Vec<usize>>> {
        let q_rank = self.query_head_assignment(cfg)?;
        let g_q = cfg.g_q();
        let mut per_state: Vec<Vec<usize>> = vec![Vec::new(); cfg.state_heads()];
        for (h, &r) in q_rank.iter().enumerate() {
            let c = h / g_q;
            if per_state[c].last() != Some(&r) {
                per_state[c].push(r);
            }
        }
        Ok(per_state)
    }
}

/// `D = ⌈N·g_q/h_q⌉`: copies of each KV/latent head needed when `h_q` query
/// heads split over `N` ranks in groups of `g_q`. The result always lies in
/// `1..=N` for valid geometry (asserted, never clamped).
pub fn duplication_factor(n: usize, g_q: usize, h_q: usize) -> Result<usize> {
    if n == 0 || g_q == 0 || h_q == 0 {
        return Err(Error::Config(
            "duplication_factor needs positive n, g_q, h_q".into(),
        ));
    }
    if g_q > h_q || !h_q.is_multiple_of(g_q) {
        return Err(Error::Config(format!(
            "g_q ({g_q}) must divide h_q ({h_q})"
        )));
    }
    let d = (n * g_q).div_ceil(h_q);
    debug_assert!((1..=n).contains(&d), "D = {d} escaped [1, {n}]");
    Ok(d)
}

/// True when `cfg` shards over `n` ranks without duplicating any state head:
/// `g_q ≤ ⌊h_q/n⌋`.
pub fn zero_redundancy(n: usize, g_q: usize, h_q: usize) -> Result<bool> {
    Ok(duplication_factor(n, g_q, h_q)? == 1)
}

/// Cache bytes per token on one device under `plan`: state heads shard as
/// `⌈h_kv/N⌉` (a head is never split below whole-head granularity, so MLA's
/// single latent fully duplicates), while the shared rotary key head
/// replicates on every rank.
#[must_use]
pub fn kv_bytes_per_device(cfg: &AttnConfig, plan: &ShardPlan) -> u64 {
    let heads_here = cfg.state_heads().div_ceil(plan.tp);
    (cfg.m_kv * heads_here * cfg.state_dim() + cfg.rope_cache_width()) as u64 * 2
}

/// Same quantity in units of `d_h` elements (bytes / (2·d_h)) — the
/// model-agnostic way cross-variant tables are usually printed.
#[must_use]
pub fn kv_dh_units_per_device(cfg: &AttnConfig, plan: &ShardPlan) -> f64 {
    kv_bytes_per_device(cfg, plan) as f64 / (2.0 * cfg.d_h as f64)
}

/// Runs a latent-variant decode step sharded over `n_ranks` ranks and
/// recombines: each rank computes absorbed attention for its query heads
/// against its latent copy, applies its slice of the output projection
/// (partial outputs), and the slices sum — the emulated AllReduce — into the
/// step output, which must match the unsharded [`decode_step`] result.
///
/// Requires a latent config, `n_ranks` dividing `h_q`, and head counts
/// aligning (`n_ranks` divides `h_c` or `h_c` divides `n_ranks`).
///
/// [`decode_step`]: crate::attention::decode_step
pub fn shard_decode_simulate(
    cfg: &AttnConfig,
    w: &AttnWeights,
    cache: &KvState,
    x_new: &Tensor,
    positions: &[usize],
    n_ranks: usize,
) -> Result<Tensor> {
    let order: Vec<usize> = (0..n_ranks).collect();
    shard_decode_simulate_ordered(cfg, w, cache, x_new, positions, &order)
}

/// [`shard_decode_simulate`] with an explicit rank summation order, for
/// checking that recombination commutes.
pub fn shard_decode_simulate_ordered(
    cfg: &AttnConfig,
    w: &AttnWeights,
    cache: &KvState,
    x_new: &Tensor,
    positions: &[usize],
    rank_order: &[usize],
) -> Result<Tensor> {
    if !cfg.variant.is_latent() {
        return Err(Error::Config(format!(
            "sharded-decode recombination applies to latent variants, got {}",
            cfg.variant.name()
        )));
    }
    let n = rank_order.len();
    if n == 0 {
        return Err(Error::Config("need at least one rank".into()));
    }
    {
        let mut seen = vec![false; n];
        for &r in rank_order {
            if r >= n || seen[r] {
                return Err(Error::Config(format!(
                    "rank order {rank_order:?} is not a permutation"
                )));
            }
            seen[r] = true;
        }
    }
    if !cfg.h_q.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "{n} ranks cannot evenly split {} query heads",
            cfg.h_q
        )));
    }
    if !n.is_multiple_of(cfg.h_c) && !cfg.h_c.is_multiple_of(n) {
        return Err(Error::Config(format!(
            "{n} ranks and {} latent heads do not align (need divisibility either way)",
            cfg.h_c
        )));
    }
    check_decode_args(cfg, w, cache, x_new, positions)?;

    // Shared projection work (identical on every rank in a real deployment).
    let entries = build_entries(cfg, w, x_new, positions)?;
    let state = cache.appended(&entries)?;
    let q = build_queries(cfg, w, x_new, positions)?;

    let per_rank = cfg.h_q / n;
    let (b, lq) = (x_new.shape()[0], x_new.shape()[1]);
    let mut total = Tensor::zeros(&[b, lq, cfg.d_model]);
    for &r in rank_order {
        let heads = r * per_rank..(r + 1) * per_rank;
        let head_out = attend_range(
            cfg,
            w,
            &state,
            &q,
            positions,
            heads.clone(),
            ScorePath::Absorbed,
        )?;
        let partial = project_out_range(cfg, &w.w_o, &head_out, heads)?;
        // Emulated AllReduce: element-wise sum of the partial outputs.
        total = Tensor::from_fn(total.shape(), |f| total.data()[f] + partial.data()[f]);
    }
    Ok(total)
}

/// One accelerator's throughput envelope.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawHardwareProfile")]
pub struct HardwareProfile {
    pub name: String,
    /// Peak dense arithmetic throughput, FLOP/s.
    pub peak_flops: f64,
    /// Peak memory bandwidth, bytes/s.
    pub mem_bw: f64,
    /// Ridge point, FLOP/byte; always `peak_flops / mem_bw`.
    pub ridge: f64,
    /// Free-text provenance note carried through from the profile file.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHardwareProfile {
    name: String,
    peak_flops: f64,
    mem_bw: f64,
    #[serde(default)]
    ridge: Option<f64>,
    #[serde(default)]
    note: String,
}

impl TryFrom<RawHardwareProfile> for HardwareProfile {
    type Error = Error;

    fn try_from(raw: RawHardwareProfile) -> Result<Self> {
        let mut hw = HardwareProfile::new(&raw.name, raw.peak_flops, raw.mem_bw)?;
        hw.note = raw.note;
        if let Some(r) = raw.ridge {
            let drift = (r - hw.ridge).abs() / hw.ridge;
            let consistent = drift.is_finite() && drift < 1e-9;
            if !consistent {
                return Err(Error::Config(format!(
                    "profile '{}' states ridge {r} but peak/bw gives {} (relative drift {drift:e})",
                    raw.name, hw.ridge
                )));
            }
        }
        Ok(hw)
    }
}

impl HardwareProfile {
    /// Profile from peak FLOP/s and bytes/s; the ridge point is derived.
    pub fn new(name: &str, peak_flops: f64, mem_bw: f64) -> Result<Self> {
        if !(peak_flops.is_finite() && peak_flops > 0.0 && mem_bw.is_finite() && mem_bw > 0.0) {
            return Err(Error::Config(format!(
                "profile '{name}' needs positive finite peak_flops and mem_bw"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            peak_flops,
            mem_bw,
            ridge: peak_flops / mem_bw,
            note: String::new(),
        })
    }

    /// Loads a profile from a JSON file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("hardware profile: {e}")))
    }
}

/// One request's modeled state at the step being priced.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    /// Prompt tokens already in the cache.
    pub prefill: u64,
    /// Decode tokens generated so far.
    #[serde(default)]
    pub decode: u64,
}

impl RequestSpec {
    /// KV length the next decode step reads.
    #[must_use]
    pub fn kv_len(&self) -> u64 {
        self.prefill + self.decode
    }
}

/// A named plan inside a workload document: variant config plus placement.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSpec {
    pub name: String,
    pub config: AttnConfig,
    pub tp: usize,
    #[serde(default = "one")]
    pub dp: usize,
}

fn one() -> usize {
    1
}

/// A decode-step scenario: concurrent requests plus the plans to price on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub requests: Vec<RequestSpec>,
    /// Requests considered active this step; defaults to all of them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
    /// Explicit request → DP-group assignment; round-robin when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp_assignment: Option<Vec<usize>>,
    /// Plans to price.
    pub plans: Vec<PlanSpec>,
    /// Plan names ordered fastest-first, for CONSISTENT/INCONSISTENT
    /// verdicts against an external reference ordering.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected_order: Vec<String>,
}

impl WorkloadSpec {
    /// Loads a workload from a JSON file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let w: WorkloadSpec =
            serde_json::from_str(&text).map_err(|e| Error::Parse(format!("workload: {e}")))?;
        w.validate()?;
        Ok(w)
    }

    /// Structural checks shared by file loading and tests.
    pub fn validate(&self) -> Result<()> {
        if self.requests.is_empty() {
            return Err(Error::Config(format!(
                "workload '{}' has no requests",
                self.name
            )));
        }
        if self.plans.is_empty() {
            return Err(Error::Config(format!(
                "workload '{}' has no plans",
                self.name
            )));
        }
        if let Some(c) = self.concurrency {
            if c == 0 || c > self.requests.len() {
                return Err(Error::Config(format!(
                    "concurrency {c} outside 1..={}",
                    self.requests.len()
                )));
            }
        }
        if let Some(a) = &self.dp_assignment {
            if a.len() != self.requests.len() {
                return Err(Error::Config(format!(
                    "dp_assignment lists {} entries for {} requests",
                    a.len(),
                    self.requests.len()
                )));
            }
        }
        for name in &self.expected_order {
            if !self.plans.iter().any(|p| &p.name == name) {
                return Err(Error::Config(format!(
                    "expected_order names unknown plan '{name}'"
                )));
            }
        }
        Ok(())
    }

    /// The requests active this step.
    #[must_use]
    pub fn active_requests(&self) -> &[RequestSpec] {
        let n = self.concurrency.unwrap_or(self.requests.len());
        &self.requests[..n]
    }
}

/// Cache-traffic bytes and MAC FLOPs one TP rank spends on one request at
/// one decode step of `lq` query tokens.
#[must_use]
pub fn request_rank_cost(cfg: &AttnConfig, plan: &ShardPlan, kv_len: u64, lq: u64) -> (f64, f64) {
    let heads_here = cfg.h_q.div_ceil(plan.tp) as u64;
    let width = (cfg.d_qk_eff() + cfg.d_v_eff()) as u64;
    let bytes = kv_bytes_per_device(cfg, plan) * kv_len + lq * heads_here * width * 2;
    let flops = 2 * lq * heads_here * kv_len * width;
    (bytes as f64, flops as f64)
}

/// Prices one decode step of a plan on a workload: per-request rank costs
/// sum within each DP group, each rank takes `max(bytes/bw, flops/peak)`,
/// and barriers take the max across ranks and groups. `comm_overhead`
/// seconds are added per step (default 0 — collectives excluded).
pub fn straggler_step_time(
    workload: &WorkloadSpec,
    plan: &PlanSpec,
    hw: &HardwareProfile,
    comm_overhead: f64,
) -> Result<f64> {
    workload.validate()?;
    let shard = ShardPlan::new(plan.tp, plan.dp)?;
    let requests = workload.active_requests();

    let mut group_bytes = vec![0.0f64; plan.dp];
    let mut group_flops = vec![0.0f64; plan.dp];
    for (i, req) in requests.iter().enumerate() {
        let g = match &workload.dp_assignment {
            Some(a) => {
                let g = a[i];
                if g >= plan.dp {
                    return Err(Error::Config(format!(
                        "request {i} assigned to group {g}, plan has {} groups",
                        plan.dp
                    )));
                }
                g
            }
            None => i % plan.dp,
        };
        let (bytes, flops) = request_rank_cost(&plan.config, &shard, req.kv_len(), 1);
        group_bytes[g] += bytes;
        group_flops[g] += flops;
    }

    let mut step = 0.0f64;
    for g in 0..plan.dp {
        // Within a group every rank carries the same per-head share, so the
        // group's time is one rank's time.
        let rank_time = f64::max(group_bytes[g] / hw.mem_bw, group_flops[g] / hw.peak_flops);
        step = step.max(rank_time + comm_overhead);
    }
    Ok(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::forward::{decode_step, prefill};
    use crate::attention::weights::init_weights;
    use crate::tensor::{max_rel_err, SeededRng};

    #[test]
    fn duplication_factor_hand_cases() {
        assert_eq!(
            duplication_factor(8, 16, 16).unwrap(),
            8,
            "one group: full replication"
        );
        assert_eq!(
            duplication_factor(8, 2, 16).unwrap(),
            1,
            "g_q at the zero-redundancy bound"
        );
        assert_eq!(duplication_factor(8, 4, 16).unwrap(), 2);
        assert!(
            duplication_factor(8, 3, 16).is_err(),
            "3 does not divide 16"
        );
    }

    #[test]
    fn duplication_factor_bounds_and_zero_redundancy_exhaustive() {
        for h_q in 1..=64usize {
            for n in [1usize, 2, 4, 8] {
                for g_q in (1..=h_q).filter(|g| h_q % g == 0) {
                    let d = duplication_factor(n, g_q, h_q).unwrap();
                    assert!((1..=n).contains(&d), "D={d} for n={n} g={g_q} h={h_q}");
                    let zero = zero_redundancy(n, g_q, h_q).unwrap();
                    assert_eq!(
                        zero,
                        g_q <= h_q / n,
                        "bound mismatch at n={n} g={g_q} h={h_q}"
                    );
                }
            }
        }
    }

    fn plan(tp: usize) -> ShardPlan {
        ShardPlan::new(tp, 1).unwrap()
    }

    #[test]
    fn per_device_bytes_reproduce_reference_tables() {
        // 16 query heads of width 128 (the XL rows), TP 1/2/4.
        let xl: Vec<(AttnConfig, [u64; 3])> = vec![
            (AttnConfig::mha(2048, 16, 128).unwrap(), [8192, 4096, 2048]),
            (
                AttnConfig::gqa(2048, 16, 4, 128).unwrap(),
                [2048, 1024, 512],
            ),
            (AttnConfig::gta(2048, 16, 4, 128).unwrap(), [1152, 640, 384]),
            (
                AttnConfig::gla(2048, 16, 128, 2, 256, 64).unwrap(),
                [1152, 640, 640],
            ),
            (
                AttnConfig::mla(2048, 16, 128, 512, 64).unwrap(),
                [1152, 1152, 1152],
            ),
        ];
        for (cfg, cells) in &xl {
            for (i, tp) in [1usize, 2, 4].into_iter().enumerate() {
                let got = kv_bytes_per_device(cfg, &plan(tp));
                assert_eq!(got, cells[i], "{} at tp={tp}", cfg.label());
            }
        }

        // 32 query heads of width 128 (the 8B rows), in d_h units, 1/2/4/8 devices.
        let b8: Vec<(AttnConfig, [f64; 4])> = vec![
            (
                AttnConfig::mha(4096, 32, 128).unwrap(),
                [64.0, 32.0, 16.0, 8.0],
            ),
            (
                AttnConfig::gqa(4096, 32, 8, 128).unwrap(),
                [16.0, 8.0, 4.0, 2.0],
            ),
            (
                AttnConfig::mqa(4096, 32, 128).unwrap(),
                [2.0, 2.0, 2.0, 2.0],
            ),
            (
                AttnConfig::mla(4096, 32, 128, 512, 64).unwrap(),
                [4.5, 4.5, 4.5, 4.5],
            ),
            (
                AttnConfig::gla(4096, 32, 128, 2, 256, 64).unwrap(),
                [4.5, 2.5, 2.5, 2.5],
            ),
            (
                AttnConfig::gta(4096, 32, 8, 128).unwrap(),
                [8.5, 4.5, 2.5, 1.5],
            ),
        ];
        for (cfg, cells) in &b8 {
            for (i, tp) in [1usize, 2, 4, 8].into_iter().enumerate() {
                let got = kv_dh_units_per_device(cfg, &plan(tp));
                assert_eq!(got, cells[i], "{} at tp={tp} (d_h units)", cfg.label());
            }
        }
    }

    #[test]
    fn head_assignment_colocates_groups() {
        let cfg = AttnConfig::gla(64, 8, 8, 4, 16, 4).unwrap();
        let p = plan(2);
        assert_eq!(
            p.query_head_assignment(&cfg).unwrap(),
            vec![0, 0, 0, 0, 1, 1, 1, 1]
        );
        assert_eq!(
            p.state_head_ranks(&cfg).unwrap(),
            vec![vec![0], vec![0], vec![1], vec![1]],
            "two latent heads per rank, no duplication"
        );

        let mla = AttnConfig::mla(64, 8, 8, 32, 4).unwrap();
        let ranks = plan(4).state_head_ranks(&mla).unwrap();
        assert_eq!(
            ranks,
            vec![vec![0, 1, 2, 3]],
            "single latent copies to every rank"
        );
        assert_eq!(plan(4).duplication(&mla).unwrap(), 4);
    }

    #[test]
    fn sharded_latent_decode_recombines_to_unsharded() {
        for (h_c, n) in [(2usize, 2usize), (4, 4), (8, 8), (4, 2), (2, 4)] {
            let cfg = AttnConfig::gla(48, 8, 8, h_c, 16, 4).unwrap();
            let mut rng = SeededRng::new(500 + (h_c * 10 + n) as u64);
            let w = init_weights(&cfg, &mut rng).unwrap();
            let x0 = Tensor::from_fn(&[1, 6, 48], |_| rng.uniform(-1.0, 1.0));
            let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
            let x1 = Tensor::from_fn(&[1, 1, 48], |_| rng.uniform(-1.0, 1.0));
            let (want, _) = decode_step(&cfg, &w, &cache, &x1, &[6]).unwrap();
            let got = shard_decode_simulate(&cfg, &w, &cache, &x1, &[6], n).unwrap();
            let err = max_rel_err(&got, &want);
            assert!(err <= 1e-5, "h_c={h_c} n={n}: recombination err {err}");
        }
    }

    #[test]
    fn single_rank_simulation_is_bit_exact() {
        let cfg = AttnConfig::gla(48, 8, 8, 2, 16, 4).unwrap();
        let mut rng = SeededRng::new(600);
        let w = init_weights(&cfg, &mut rng).unwrap();
        let x0 = Tensor::from_fn(&[1, 5, 48], |_| rng.uniform(-1.0, 1.0));
        let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
        let x1 = Tensor::from_fn(&[1, 1, 48], |_| rng.uniform(-1.0, 1.0));
        let (want, _) = decode_step(&cfg, &w, &cache, &x1, &[5]).unwrap();
        let got = shard_decode_simulate(&cfg, &w, &cache, &x1, &[5], 1).unwrap();
        for (a, b) in got.data().iter().zip(want.data()) {
            // A single rank runs the identical full computation, plus one
            // addition of zero from the accumulator initialization.
            assert_eq!(a.to_bits(), b.to_bits(), "n=1 must be the unsharded path");
        }
    }

    #[test]
    fn rank_summation_order_does_not_matter() {
        let cfg = AttnConfig::gla(48, 8, 8, 4, 16, 4).unwrap();
        let mut rng = SeededRng::new(700);
        let w = init_weights(&cfg, &mut rng).unwrap();
        let x0 = Tensor::from_fn(&[1, 4, 48], |_| rng.uniform(-1.0, 1.0));
        let (_, cache) = prefill(&cfg, &w, &x0).unwrap();
        let x1 = Tensor::from_fn(&[1, 1, 48], |_| rng.uniform(-1.0, 1.0));
        let a = shard_decode_simulate_ordered(&cfg, &w, &cache, &x1, &[4], &[0, 1, 2, 3]).unwrap();
        let b = shard_decode_simulate_ordered(&cfg, &w, &cache, &x1, &[4], &[3, 0, 2, 1]).unwrap();
        let err = max_rel_err(&a, &b);
        assert!(err <= 1e-6, "rank order changed the sum by {err}");
    }

    #[test]
    fn shard_simulation_rejects_bad_geometry() {
        let gqa = AttnConfig::gqa(48, 8, 2, 8).unwrap();
        let mut rng = SeededRng::new(800);
        let w = init_weights(&gqa, &mut rng).unwrap();
        let x = Tensor::from_fn(&[1, 1, 48], |_| rng.uniform(-1.0, 1.0));
        let cache = KvState::empty(&gqa, 1).unwrap();
        assert!(matches!(
            shard_decode_simulate(&gqa, &w, &cache, &x, &[0], 2),
            Err(Error::Config(_))
        ));

        let gla = AttnConfig::gla(48, 8, 8, 4, 16, 4).unwrap();
        let w = init_weights(&gla, &mut rng).unwrap();
        let cache = KvState::empty(&gla, 1).unwrap();
        assert!(
            matches!(
                shard_decode_simulate(&gla, &w, &cache, &x, &[0], 3),
                Err(Error::Config(_)),
            ),
            "3 ranks cannot split 8 query heads"
        );
    }

    #[test]
    fn hardware_profile_checks_ridge_consistency() {
        let ok: HardwareProfile = serde_json::from_str(
            r#"{"name":"h100-sxm","peak_flops":989e12,"mem_bw":3.35e12,"ridge":295.2238805970149}"#,
        )
        .unwrap();
        assert!((ok.ridge - 295.2238805970149).abs() < 1e-9);
        let bad: std::result::Result<HardwareProfile, _> = serde_json::from_str(
            r#"{"name":"x","peak_flops":989e12,"mem_bw":3.35e12,"ridge":300.0}"#,
        );
        assert!(bad.is_err(), "stated ridge must match peak/bw");
        let derived: HardwareProfile =
            serde_json::from_str(r#"{"name":"x","peak_flops":2e12,"mem_bw":1e12}"#).unwrap();
        assert_eq!(derived.ridge, 2.0);
    }

    fn h100() -> HardwareProfile {
        HardwareProfile::new("h100-sxm", 989e12, 3.35e12).unwrap()
    }

    #[test]
    fn uniform_workload_ties_tp_and_dp() {
        let cfg = AttnConfig::gqa(4096, 32, 8, 128).unwrap();
        let workload = WorkloadSpec {
            name: "uniform".into(),
            description: String::new(),
            requests: vec![
                RequestSpec {
                    prefill: 4096,
                    decode: 0
                };
                8
            ],
            concurrency: None,
            dp_assignment: None,
            plans: vec![
                PlanSpec {
                    name: "TP8".into(),
                    config: cfg.clone(),
                    tp: 8,
                    dp: 1,
                },
                PlanSpec {
                    name: "DP8".into(),
                    config: cfg,
                    tp: 1,
                    dp: 8,
                },
            ],
            expected_order: vec![],
        };
        let t_tp = straggler_step_time(&workload, &workload.plans[0], &h100(), 0.0).unwrap();
        let t_dp = straggler_step_time(&workload, &workload.plans[1], &h100(), 0.0).unwrap();
        assert!(
            (t_tp - t_dp).abs() <= 1e-9 * t_tp.max(t_dp),
            "symmetric split must tie: {t_tp} vs {t_dp}"
        );
    }

    #[test]
    fn step_time_is_monotone_in_request_length() {
        let cfg = AttnConfig::mla(4096, 128, 128, 512, 64).unwrap();
        let mut requests = vec![
            RequestSpec {
                prefill: 1024,
                decode: 0,
            },
            RequestSpec {
                prefill: 2048,
                decode: 0,
            },
            RequestSpec {
                prefill: 512,
                decode: 0,
            },
        ];
        let mk = |reqs: &[RequestSpec]| WorkloadSpec {
            name: "m".into(),
            description: String::new(),
            requests: reqs.to_vec(),
            concurrency: None,
            dp_assignment: None,
            plans: vec![PlanSpec {
                name: "p".into(),
                config: cfg.clone(),
                tp: 2,
                dp: 1,
            }],
            expected_order: vec![],
        };
        let base =
            straggler_step_time(&mk(&requests), &mk(&requests).plans[0], &h100(), 0.0).unwrap();
        for i in 0..requests.len() {
            let mut longer = requests.clone();
            longer[i].decode += 700;
            let t = straggler_step_time(&mk(&longer), &mk(&longer).plans[0], &h100(), 0.0).unwrap();
            assert!(
                t >= base,
                "lengthening request {i} shrank the step: {t} < {base}"
            );
        }
        requests[0].prefill += 1;
        let t = straggler_step_time(&mk(&requests), &mk(&requests).plans[0], &h100(), 0.0).unwrap();
        assert!(t >= base);
    }

    #[test]
    fn imbalance_scenarios_order_gla_ahead_of_mla() {
        let mla = AttnConfig::mla(4096, 128, 128, 512, 64).unwrap();
        let gla8 = AttnConfig::gla(4096, 128, 128, 8, 256, 64).unwrap();
        let gla2 = AttnConfig::gla(4096, 128, 128, 2, 256, 64).unwrap();
        let hw = h100();

        // One 131K-token request among short ones: pure TP spreads the
        // monster across all ranks, hybrid DP strands it on one replica.
        let mut long_tail = WorkloadSpec {
            name: "imbalance-131k".into(),
            description: String::new(),
            requests: vec![
                RequestSpec {
                    prefill: 131_072,
                    decode: 0,
                },
                RequestSpec {
                    prefill: 1024,
                    decode: 0,
                },
                RequestSpec {
                    prefill: 1024,
                    decode: 0,
                },
                RequestSpec {
                    prefill: 1024,
                    decode: 0,
                },
            ],
            concurrency: None,
            dp_assignment: None,
            plans: vec![
                PlanSpec {
                    name: "GLA-8 TP8".into(),
                    config: gla8,
                    tp: 8,
                    dp: 1,
                },
                PlanSpec {
                    name: "MLA TP2,DP4".into(),
                    config: mla.clone(),
                    tp: 2,
                    dp: 4,
                },
            ],
            expected_order: vec![],
        };
        let t_gla = straggler_step_time(&long_tail, &long_tail.plans[0], &hw, 0.0).unwrap();
        let t_mla = straggler_step_time(&long_tail, &long_tail.plans[1], &hw, 0.0).unwrap();
        assert!(
            t_gla < t_mla,
            "131K scenario: GLA TP {t_gla} should beat MLA hybrid {t_mla}"
        );

        // Fifteen short requests and one 64K request.
        long_tail.requests = std::iter::repeat_n(
            RequestSpec {
                prefill: 1024,
                decode: 0,
            },
            15,
        )
        .chain([RequestSpec {
            prefill: 65_536,
            decode: 0,
        }])
        .collect();
        long_tail.plans = vec![
            PlanSpec {
                name: "GLA-2 TP2".into(),
                config: gla2,
                tp: 2,
                dp: 1,
            },
            PlanSpec {
                name: "MLA DP2".into(),
                config: mla,
                tp: 1,
                dp: 2,
            },
        ];
        let t_gla = straggler_step_time(&long_tail, &long_tail.plans[0], &hw, 0.0).unwrap();
        let t_mla = straggler_step_time(&long_tail, &long_tail.plans[1], &hw, 0.0).unwrap();
        assert!(
            t_gla < t_mla,
            "kernel scenario: GLA TP2 {t_gla} should beat MLA DP {t_mla}"
        );
    }
}
