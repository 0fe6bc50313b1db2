//! Attention-variant configuration.
//!
//! One [`AttnConfig`] describes the head geometry of a single attention layer
//! in any of the six supported variants. The fields that drive everything
//! downstream (byte accounting, sharding, arithmetic intensity, the forward
//! pass) are:
//!
//! | variant | stored state per token            | `m_kv` | group size `g_q` |
//! |---------|-----------------------------------|--------|------------------|
//! | MHA     | `h_q` K heads + `h_q` V heads     | 2      | 1                |
//! | MQA     | 1 K head + 1 V head               | 2      | `h_q`            |
//! | GQA     | `h_kv` K + `h_kv` V heads         | 2      | `h_q / h_kv`     |
//! | GTA     | `h_kv` tied-KV heads + ½-head K·R | 1      | `h_q / h_kv`     |
//! | MLA     | 1 latent head (`d_c`) + K·R       | 1      | `h_q`            |
//! | GLA     | `h_c` latent heads (`d_c`) + K·R  | 1      | `h_q / h_c`      |
//!
//! where K·R is the shared single-head rotary key slice (width `d_h/2` for
//! GTA, `d_R` for MLA/GLA). For the latent variants `h_kv` is stored equal to
//! `h_c` so `g_q = h_q / h_kv` holds uniformly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six attention variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Multi-head attention: every query head has its own K and V head.
    MHA,
    /// Multi-query attention: one K and one V head shared by all queries.
    MQA,
    /// Grouped-query attention: `h_kv` K/V heads, each serving `g_q` queries.
    GQA,
    /// Grouped-tied attention: one state per group serves as both the value
    /// and (its first half) the key, plus a shared half-width rotary key.
    GTA,
    /// Multi-head latent attention: one compressed latent head of width
    /// `d_c` attended by all queries after weight absorption.
    MLA,
    /// Grouped latent attention: `h_c` latent heads, each serving a group of
    /// `g_q` query heads.
    GLA,
}

impl Variant {
    /// KV multiplicity: 2 when keys and values are stored separately, 1 when
    /// one state serves both roles (tied or latent).
    #[must_use]
    pub fn m_kv(self) -> usize {
        match self {
            Variant::MHA | Variant::MQA | Variant::GQA => 2,
            Variant::GTA | Variant::MLA | Variant::GLA => 1,
        }
    }

    /// True for the compressed-latent variants (MLA/GLA).
    #[must_use]
    pub fn is_latent(self) -> bool {
        matches!(self, Variant::MLA | Variant::GLA)
    }

    /// Display name.
    #[must_use]
    pub fn name(self) -> &'static str {
        match self {
            Variant::MHA => "MHA",
            Variant::MQA => "MQA",
            Variant::GQA => "GQA",
            Variant::GTA => "GTA",
            Variant::MLA => "MLA",
            Variant::GLA => "GLA",
        }
    }
}

/// Which storage/compute family a variant belongs to; drives the forward
/// pass and the cache layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Family {
    /// Separate K and V tensors (MHA, MQA, GQA).
    Standard,
    /// One tied KV tensor plus a half-width rotary key head (GTA).
    Tied,
    /// Compressed latent heads plus a decoupled rotary key head (MLA, GLA).
    Latent,
}

/// Geometry of one attention layer.
///
/// Construct through the per-variant builders ([`AttnConfig::mha`] and
/// friends) or deserialize from JSON; both paths validate the cross-field
/// invariants. `d_R` defaults per variant when absent from JSON: `d_h` for
/// MHA/MQA/GQA (full in-place rotation), `d_h/2` for GTA (fixed by the
/// construction), `d_h/2` for MLA/GLA (the decoupled-key convention used by
/// the per-device byte tables).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawAttnConfig")]
pub struct AttnConfig {
    pub variant: Variant,
    /// Model (hidden) width feeding the projections.
    pub d_model: usize,
    /// Query head count.
    pub h_q: usize,
    /// Distinct KV/latent head count (equals `h_c` for MLA/GLA).
    pub h_kv: usize,
    /// Per-head width of queries, keys, and values.
    pub d_h: usize,
    /// Latent head count; 0 for variants without latents.
    pub h_c: usize,
    /// Latent width per latent head; 0 for variants without latents.
    pub d_c: usize,
    /// Rotary width. In-place rotation width for MHA/MQA/GQA (0 disables
    /// position encoding), `d_h/2` for GTA, decoupled rotary-key width for
    /// MLA/GLA (0 allowed).
    #[serde(rename = "d_R")]
    pub d_rope: usize,
    /// KV multiplicity (2 = separate K and V, 1 = tied/latent).
    pub m_kv: usize,
    /// Optional low-rank query path: when set, queries are produced through
    /// a `d_model × q_rank` down-projection and a `q_rank × h_q·d_h`
    /// up-projection instead of one full-rank matrix.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_rank: Option<usize>,
}

/// Serde-facing form of [`AttnConfig`] with per-variant defaults applied
/// after parsing.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttnConfig {
    variant: Variant,
    d_model: usize,
    h_q: usize,
    #[serde(default)]
    h_kv: Option<usize>,
    d_h: usize,
    #[serde(default)]
    h_c: Option<usize>,
    #[serde(default)]
    d_c: Option<usize>,
    #[serde(default, rename = "d_R")]
    d_rope: Option<usize>,
    #[serde(default)]
    m_kv: Option<usize>,
    #[serde(default)]
    q_rank: Option<usize>,
}

impl TryFrom<RawAttnConfig> for AttnConfig {
    type Error = Error;

    fn try_from(raw: RawAttnConfig) -> Result<Self> {
        let v = raw.variant;
        let d_h = raw.d_h;
        let h_kv = match (v, raw.h_kv) {
            (Variant::MHA, None) => raw.h_q,
            (Variant::MQA, None) => 1,
            (Variant::GQA | Variant::GTA, None) => {
                return Err(Error::Config(format!("{} requires h_kv", v.name())));
            }
            (Variant::MLA, None) => 1,
            (Variant::GLA, None) => raw.h_c.unwrap_or(0),
            (_, Some(h)) => h,
        };
        let h_c = match (v, raw.h_c) {
            (Variant::MLA, None) => 1,
            (Variant::GLA, None) => {
                return Err(Error::Config("GLA requires h_c".into()));
            }
            (Variant::MHA | Variant::MQA | Variant::GQA | Variant::GTA, None) => 0,
            (_, Some(h)) => h,
        };
        let d_c = raw.d_c.unwrap_or(match v {
            Variant::MLA => 4 * d_h,
            Variant::GLA => 2 * d_h,
            _ => 0,
        });
        let d_rope = raw.d_rope.unwrap_or(match v {
            Variant::MHA | Variant::MQA | Variant::GQA => d_h,
            Variant::GTA | Variant::MLA | Variant::GLA => d_h / 2,
        });
        let cfg = AttnConfig {
            variant: v,
            d_model: raw.d_model,
            h_q: raw.h_q,
            h_kv,
            d_h,
            h_c,
            d_c,
            d_rope,
            m_kv: raw.m_kv.unwrap_or_else(|| v.m_kv()),
            q_rank: raw.q_rank,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

macro_rules! ensure_cfg {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(Error::Config(format!($($msg)+)));
        }
    };
}

impl AttnConfig {
    /// Multi-head attention (`h_kv = h_q`), full in-place rotation.
    pub fn mha(d_model: usize, h_q: usize, d_h: usize) -> Result<Self> {
        Self::standard(Variant::MHA, d_model, h_q, h_q, d_h, d_h)
    }

    /// Multi-query attention (one KV head), full in-place rotation.
    pub fn mqa(d_model: usize, h_q: usize, d_h: usize) -> Result<Self> {
        Self::standard(Variant::MQA, d_model, h_q, 1, d_h, d_h)
    }

    /// Grouped-query attention with `h_kv` KV heads.
    pub fn gqa(d_model: usize, h_q: usize, h_kv: usize, d_h: usize) -> Result<Self> {
        Self::standard(Variant::GQA, d_model, h_q, h_kv, d_h, d_h)
    }

    /// A standard-family config with explicit in-place rotary width.
    pub fn standard(
        variant: Variant,
        d_model: usize,
        h_q: usize,
        h_kv: usize,
        d_h: usize,
        d_rope: usize,
    ) -> Result<Self> {
        let cfg = AttnConfig {
            variant,
            d_model,
            h_q,
            h_kv,
            d_h,
            h_c: 0,
            d_c: 0,
            d_rope,
            m_kv: 2,
            q_rank: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grouped-tied attention with `h_kv` tied state heads.
    pub fn gta(d_model: usize, h_q: usize, h_kv: usize, d_h: usize) -> Result<Self> {
        let cfg = AttnConfig {
            variant: Variant::GTA,
            d_model,
            h_q,
            h_kv,
            d_h,
            h_c: 0,
            d_c: 0,
            d_rope: d_h / 2,
            m_kv: 1,
            q_rank: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Multi-head latent attention with latent width `d_c` and decoupled
    /// rotary-key width `d_rope`.
    pub fn mla(d_model: usize, h_q: usize, d_h: usize, d_c: usize, d_rope: usize) -> Result<Self> {
        let cfg = AttnConfig {
            variant: Variant::MLA,
            d_model,
            h_q,
            h_kv: 1,
            d_h,
            h_c: 1,
            d_c,
            d_rope,
            m_kv: 1,
            q_rank: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Grouped latent attention with `h_c` latent heads.
    pub fn gla(
        d_model: usize,
        h_q: usize,
        d_h: usize,
        h_c: usize,
        d_c: usize,
        d_rope: usize,
    ) -> Result<Self> {
        let cfg = AttnConfig {
            variant: Variant::GLA,
            d_model,
            h_q,
            h_kv: h_c,
            d_h,
            h_c,
            d_c,
            d_rope,
            m_kv: 1,
            q_rank: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every cross-field invariant; builders and deserialization run
    /// this, so a constructed config is always internally consistent.
    pub fn validate(&self) -> Result<()> {
        ensure_cfg!(self.d_model >= 1, "d_model must be positive");
        ensure_cfg!(self.h_q >= 1, "h_q must be positive");
        ensure_cfg!(
            self.d_h >= 1 && self.d_h.is_multiple_of(2),
            "d_h must be even and positive, got {}",
            self.d_h
        );
        ensure_cfg!(self.h_kv >= 1, "h_kv must be positive, got {}", self.h_kv);
        ensure_cfg!(
            self.h_q.is_multiple_of(self.h_kv),
            "h_kv ({}) must divide h_q ({})",
            self.h_kv,
            self.h_q
        );
        ensure_cfg!(
            self.m_kv == self.variant.m_kv(),
            "{} stores {} state(s) per token slot, m_kv = {} is inconsistent",
            self.variant.name(),
            self.variant.m_kv(),
            self.m_kv
        );
        ensure_cfg!(
            self.d_rope.is_multiple_of(2),
            "d_R must be even, got {}",
            self.d_rope
        );
        if let Some(r) = self.q_rank {
            ensure_cfg!(r >= 1, "q_rank must be positive when set");
        }

        match self.variant {
            Variant::MHA => {
                ensure_cfg!(self.h_kv == self.h_q, "MHA requires h_kv = h_q");
            }
            Variant::MQA => {
                ensure_cfg!(self.h_kv == 1, "MQA requires h_kv = 1");
            }
            Variant::GQA => {}
            Variant::GTA => {
                ensure_cfg!(
                    self.d_h.is_multiple_of(4),
                    "GTA needs d_h divisible by 4 so the rotary half pairs up, got {}",
                    self.d_h
                );
                ensure_cfg!(
                    self.d_rope == self.d_h / 2,
                    "GTA fixes d_R = d_h/2 = {}, got {}",
                    self.d_h / 2,
                    self.d_rope
                );
            }
            Variant::MLA | Variant::GLA => {
                if self.variant == Variant::MLA {
                    ensure_cfg!(
                        self.h_c == 1,
                        "MLA has exactly one latent head, got h_c = {}",
                        self.h_c
                    );
                }
                ensure_cfg!(self.h_c >= 1, "latent variants need h_c >= 1");
                ensure_cfg!(self.d_c >= 1, "latent variants need d_c >= 1");
                ensure_cfg!(
                    self.h_kv == self.h_c,
                    "latent variants store h_kv = h_c, got h_kv = {} with h_c = {}",
                    self.h_kv,
                    self.h_c
                );
                ensure_cfg!(
                    self.h_q.is_multiple_of(self.h_c),
                    "h_c ({}) must divide h_q ({})",
                    self.h_c,
                    self.h_q
                );
            }
        }
        if !self.variant.is_latent() {
            ensure_cfg!(
                self.h_c == 0 && self.d_c == 0,
                "{} carries no latent dims",
                self.variant.name()
            );
            ensure_cfg!(
                self.d_rope <= self.d_h,
                "in-place rotary width {} exceeds head width {}",
                self.d_rope,
                self.d_h
            );
        }
        Ok(())
    }

    pub(crate) fn family(&self) -> Family {
        match self.variant {
            Variant::MHA | Variant::MQA | Variant::GQA => Family::Standard,
            Variant::GTA => Family::Tied,
            Variant::MLA | Variant::GLA => Family::Latent,
        }
    }

    /// Query heads per distinct KV/latent head.
    #[must_use]
    pub fn g_q(&self) -> usize {
        self.h_q / self.h_kv
    }

    /// Number of stored state heads per token (KV heads, tied heads, or
    /// latent heads; the shared rotary key head is counted separately).
    #[must_use]
    pub fn state_heads(&self) -> usize {
        self.h_kv
    }

    /// Width of one stored state head.
    #[must_use]
    pub fn state_dim(&self) -> usize {
        if self.variant.is_latent() {
            self.d_c
        } else {
            self.d_h
        }
    }

    /// Width of the shared single-head rotary key cached per token, or 0
    /// when rotation happens in place (or is disabled).
    #[must_use]
    pub fn rope_cache_width(&self) -> usize {
        match self.variant {
            Variant::MHA | Variant::MQA | Variant::GQA => 0,
            Variant::GTA => self.d_h / 2,
            Variant::MLA | Variant::GLA => self.d_rope,
        }
    }

    /// Effective per-head dot-product width at decode time: `d_h` where keys
    /// materialize, `d_c + d_R` on the absorbed latent path.
    #[must_use]
    pub fn d_qk_eff(&self) -> usize {
        if self.variant.is_latent() {
            self.d_c + self.d_rope
        } else {
            self.d_h
        }
    }

    /// Effective per-head value width at decode time: `d_h` where values
    /// materialize, `d_c` on the absorbed latent path.
    #[must_use]
    pub fn d_v_eff(&self) -> usize {
        if self.variant.is_latent() {
            self.d_c
        } else {
            self.d_h
        }
    }

    /// Attention score scale, `1/sqrt(d_qk_eff)`, identical on the latent and
    /// rotary score paths so absorbed and materialized attention agree.
    #[must_use]
    pub fn scale(&self) -> f32 {
        1.0 / (self.d_qk_eff() as f32).sqrt()
    }

    /// Cached bytes per token per sequence on one unsharded device, with
    /// 2-byte elements: `m_kv · state_heads · state_dim · 2` plus the shared
    /// rotary head `rope_cache_width · 2`.
    #[must_use]
    pub fn bytes_per_token(&self) -> u64 {
        (self.m_kv * self.state_heads() * self.state_dim() + self.rope_cache_width()) as u64 * 2
    }

    /// Table label: bare variant name, with the distinct-head count appended
    /// for grouped variants ("GQA-4", "GTA-8", "GLA-2").
    #[must_use]
    pub fn label(&self) -> String {
        match self.variant {
            Variant::GQA | Variant::GTA => format!("{}-{}", self.variant.name(), self.h_kv),
            Variant::GLA => format!("GLA-{}", self.h_c),
            v => v.name().to_string(),
        }
    }

    /// Parses a config from a JSON string.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("attention config: {e}")))
    }

    /// Loads a config from a JSON file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}

/// Expected per-device cache size for one variant at one TP degree, used by
/// reports to print MATCH/MISMATCH against published reference tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCell {
    /// Tensor-parallel degree the expectation applies to.
    pub tp: usize,
    /// Expected bytes per token per device, if the reference states bytes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes: Option<u64>,
    /// Expected size in units of `d_h` elements, if the reference uses them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dh_units: Option<f64>,
}

/// One variant row of a model family: a config plus optional expectations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyVariant {
    /// Row label; defaults to [`AttnConfig::label`] when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: AttnConfig,
    /// Reference cells to flag MATCH/MISMATCH against in reports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<ExpectedCell>,
}

impl FamilyVariant {
    /// Effective row label.
    #[must_use]
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.config.label())
    }
}

/// A named set of variant configs sharing one model's dimensions, the input
/// to per-device cache-size tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFamily {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub variants: Vec<FamilyVariant>,
}

impl ModelFamily {
    /// Parses a family from a JSON string.
    pub fn from_json(text: &str) -> Result<Self> {
        let family: ModelFamily =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model family: {e}")))?;
        if family.variants.is_empty() {
            return Err(Error::Config(format!(
                "model family '{}' lists no variants",
                family.name
            )));
        }
        Ok(family)
    }

    /// Loads a family from a JSON file.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }
}
