//! Arithmetic-intensity accounting for decode attention: a closed form for
//! the cache-dominated limit, an exact FLOP/byte count for finite workloads,
//! roofline classification against a hardware profile, and CSV emission.
//!
//! Two accountings are exposed on purpose. [`ai_closed_form`] evaluates
//! `2·L / (2 + (m_kv/g_q)·L)` — intensity per cached element when `L` is
//! large enough that query/output traffic and the rotary side-cache vanish —
//! with asymptote `2·g_q/m_kv`. [`decode_flops_bytes`] counts an actual
//! step: `2·B·Lq·h_q·L·(d_qk_eff+d_v_eff)` MAC FLOPs against the full cache
//! read plus query/output bytes. The two agree within a few percent at long
//! context and are cross-checked in tests rather than silently merged.
//!
//! Only multiply-accumulates are counted (one MAC = 2 FLOPs); softmax and
//! the projection GEMMs outside the cache-bound score/value path are
//! excluded throughout.

use std::fmt;

use crate::attention::config::{AttnConfig, Variant};
use crate::error::{Error, Result};
use crate::kvcache::cache_bytes;
use crate::sharding::HardwareProfile;

/// Which roof a workload point sits under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundedness {
    /// `ai < ridge`: time is dominated by cache traffic.
    Memory,
    /// `ai ≥ ridge`: time is dominated by arithmetic.
    Compute,
}

impl Boundedness {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Boundedness::Memory => "memory",
            Boundedness::Compute => "compute",
        }
    }
}

impl fmt::Display for Boundedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One classified decode workload: the inputs, both sides of the roofline
/// ratio, and the model's verdict.
#[derive(Debug, Clone)]
pub struct WorkloadPoint {
    /// Variant label, e.g. `GQA-8`.
    pub variant: String,
    /// KV length in tokens.
    pub l: u64,
    /// Query tokens per step.
    pub lq: u64,
    /// Batch size.
    pub b: u64,
    /// MAC FLOPs for the step.
    pub flops: f64,
    /// Bytes moved for the step.
    pub bytes: f64,
    /// `flops / bytes`.
    pub ai: f64,
    pub bound: Boundedness,
    /// `max(flops/peak, bytes/bw)` seconds.
    pub predicted_time: f64,
}

/// Evaluates the closed-form arithmetic intensity `2·L / (2 + (m_kv/g_q)·L)`
/// for a variant's geometry, checking that `(g_q, m_kv)` is a combination
/// the variant can actually have. The `L → ∞` asymptote is `2·g_q/m_kv`.
pub fn ai_closed_form(
    variant: Variant,
    l: u64,
    h_q: usize,
    g_q: usize,
    m_kv: usize,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::Parameter("closed-form intensity needs L ≥ 1".into()));
    }
    if h_q == 0 || g_q == 0 || g_q > h_q || !h_q.is_multiple_of(g_q) {
        return Err(Error::Config(format!(
            "group size {g_q} must divide the query head count {h_q}"
        )));
    }
    let consistent = match variant {
        Variant::MHA => g_q == 1 && m_kv == 2,
        Variant::MQA => g_q == h_q && m_kv == 2,
        Variant::GQA => m_kv == 2,
        Variant::GTA => m_kv == 1,
        Variant::MLA => g_q == h_q && m_kv == 1,
        Variant::GLA => m_kv == 1,
    };
    if !consistent {
        return Err(Error::Config(format!(
            "{} cannot have g_q={g_q}, m_kv={m_kv} (h_q={h_q})",
            variant.name()
        )));
    }
    let l = l as f64;
    Ok(2.0 * l / (2.0 + (m_kv as f64 / g_q as f64) * l))
}

/// The widths a decode step actually scores and reduces over: `d_h` each for
/// the standard and tied variants, `(d_c + d_R, d_c)` on the absorbed latent
/// path.
#[must_use]
pub fn effective_dims(cfg: &AttnConfig) -> (usize, usize) {
    (cfg.d_qk_eff(), cfg.d_v_eff())
}

/// Counts one decode step: `flops = 2·B·Lq·h_q·L·(d_qk_eff + d_v_eff)` MACs
/// doubled, `bytes` = the full cache read plus query/output vectors at two
/// bytes per element. `B = 0` is an empty step: `(0, 0)`.
#[must_use]
pub fn decode_flops_bytes(
    cfg: &AttnConfig,
    l: u64,
    lq: u64,
    b: u64,
    d_qk_eff: usize,
    d_v_eff: usize,
) -> (f64, f64) {
    if b == 0 {
        return (0.0, 0.0);
    }
    let width = (d_qk_eff + d_v_eff) as f64;
    let per_step = b as f64 * lq as f64 * cfg.h_q as f64 * width;
    let flops = 2.0 * per_step * l as f64;
    let bytes = cache_bytes(cfg, l as usize, b as usize) as f64 + per_step * 2.0;
    (flops, bytes)
}

/// Classifies a counted workload against `hw`: `ai = flops/bytes`, memory-
/// bound exactly when `ai < hw.ridge`, `predicted_time = max(flops/peak,
/// bytes/bw)`. A zero-work point (`flops = bytes = 0`) classifies as
/// memory-bound with `ai = 0` and zero time.
#[must_use]
pub fn classify(
    variant: &str,
    l: u64,
    lq: u64,
    b: u64,
    flops: f64,
    bytes: f64,
    hw: &HardwareProfile,
) -> WorkloadPoint {
    let ai = if bytes > 0.0 { flops / bytes } else { 0.0 };
    let bound = if ai < hw.ridge {
        Boundedness::Memory
    } else {
        Boundedness::Compute
    };
    let predicted_time = f64::max(flops / hw.peak_flops, bytes / hw.mem_bw);
    WorkloadPoint {
        variant: variant.to_string(),
        l,
        lq,
        b,
        flops,
        bytes,
        ai,
        bound,
        predicted_time,
    }
}

/// Counts and classifies one decode step of `cfg` in a single call.
#[must_use]
pub fn workload_point(
    cfg: &AttnConfig,
    l: u64,
    lq: u64,
    b: u64,
    hw: &HardwareProfile,
) -> WorkloadPoint {
    let (d_qk, d_v) = effective_dims(cfg);
    let (flops, bytes) = decode_flops_bytes(cfg, l, lq, b, d_qk, d_v);
    classify(&cfg.label(), l, lq, b, flops, bytes, hw)
}

/// Formats `x` with six significant digits, fixed-point for moderate
/// magnitudes and scientific otherwise.
fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci
        .split_once('e')
        .expect("scientific format")
        .1
        .parse()
        .expect("exponent");
    if (-3..6).contains(&exp) {
        format!("{x:.*}", (5 - exp).max(0) as usize)
    } else {
        sci
    }
}

/// Renders points as CSV in input order, header
/// `variant,L,Lq,B,flops,bytes,ai,bound,predicted_us,ridge`, reals at six
/// significant digits, time in microseconds. Empty input is a usage error.
pub fn emit_roofline_csv(points: &[WorkloadPoint], hw: &HardwareProfile) -> Result<String> {
    if points.is_empty() {
        return Err(Error::Parameter("no workload points to emit".into()));
    }
    let mut out = String::from("variant,L,Lq,B,flops,bytes,ai,bound,predicted_us,ridge\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            p.variant,
            p.l,
            p.lq,
            p.b,
            sig6(p.flops),
            sig6(p.bytes),
            sig6(p.ai),
            p.bound,
            sig6(p.predicted_time * 1e6),
            sig6(hw.ridge),
        ));
    }
    Ok(out)
}
