//! Rotary position embedding over explicit positions.
//!
//! Rotation is applied to the first `rotary_dim` channels of each head vector,
//! as interleaved pairs `(2i, 2i+1)` sharing angle `pos · base^(-2i/rotary_dim)`.
//! Channels past `rotary_dim` pass through untouched, which is how the partial
//! and decoupled schemes are expressed:
//!
//! - full rotation: `rotary_dim = d` (classic MHA-style RoPE),
//! - partial rotation: `rotary_dim < d` rotates a leading slice only,
//! - no rotation: `rotary_dim = 0` (position-free attention),
//! - decoupled rotation: callers slice out a dedicated rope vector (a trailing
//!   half, or a separate narrow head) and rotate exactly that slice.
//!
//! Positions are always passed explicitly rather than inferred from tensor
//! extents: a decode step at cache length `L` rotates its queries at positions
//! `L, L+1, ...`, and correctness of the cache hinges on nobody silently
//! renumbering from zero.

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Parameters of one rotary embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeParams {
    /// Number of leading channels to rotate; must be even. Zero disables
    /// rotation entirely.
    pub rotary_dim: usize,
    /// Frequency base; the conventional default is `10000.0`.
    pub base: f64,
    /// Exclusive upper bound on accepted positions.
    pub max_pos: usize,
}

impl RopeParams {
    /// Parameters with the conventional base of 10000.
    pub fn new(rotary_dim: usize, max_pos: usize) -> Result<Self> {
        Self::with_base(rotary_dim, 10_000.0, max_pos)
    }

    /// Parameters with an explicit frequency base.
    pub fn with_base(rotary_dim: usize, base: f64, max_pos: usize) -> Result<Self> {
        if !rotary_dim.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "rotary_dim must be even (pairs rotate together), got {rotary_dim}"
            )));
        }
        if !(base.is_finite() && base > 1.0) {
            return Err(Error::Parameter(format!(
                "rope base must be finite and > 1, got {base}"
            )));
        }
        if max_pos == 0 {
            return Err(Error::Parameter("max_pos must be positive".into()));
        }
        Ok(Self {
            rotary_dim,
            base,
            max_pos,
        })
    }

    /// Angle of pair `i` at position `pos`, computed in f64 so large positions
    /// keep their low-order phase bits before the final cast to f32.
    fn angle(&self, pos: usize, pair: usize) -> f64 {
        let exponent = -2.0 * pair as f64 / self.rotary_dim as f64;
        pos as f64 * self.base.powf(exponent)
    }

    fn check_positions(&self, positions: &[usize], lq: usize) -> Result<()> {
        if positions.len() != lq {
            return Err(Error::Parameter(format!(
                "got {} positions for {} query slots",
                positions.len(),
                lq
            )));
        }
        for w in positions.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Parameter(format!(
                    "positions must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = positions.last() {
            if last >= self.max_pos {
                return Err(Error::Parameter(format!(
                    "position {last} exceeds max_pos {}",
                    self.max_pos
                )));
            }
        }
        Ok(())
    }
}

/// Rotates the first `params.rotary_dim` channels of every head vector in
/// `x: [B, Lq, h, d]`, where slot `s` of the query axis uses `positions[s]`.
///
/// Returns a new tensor; the input is never modified. Errors if `d` is
/// smaller than `rotary_dim`, if the position list does not match the query
/// axis, is not strictly increasing, or reaches `max_pos`.
pub fn apply_rope(x: &Tensor, positions: &[usize], params: &RopeParams) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Dimension(format!(
            "apply_rope expects [B, Lq, h, d], got {:?}",
            x.shape()
        )));
    }
    let (b, lq, h, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if d < params.rotary_dim {
        return Err(Error::Dimension(format!(
            "head width {d} is narrower than rotary_dim {}",
            params.rotary_dim
        )));
    }
    params.check_positions(positions, lq)?;
    if params.rotary_dim == 0 {
        return Ok(x.clone());
    }

    let pairs = params.rotary_dim / 2;
    let mut out = x.clone();
    for bi in 0..b {
        for (s, &pos) in positions.iter().enumerate() {
            // cos/sin per pair are shared across heads at this position.
            let trig: Vec<(f32, f32)> = (0..pairs)
                .map(|i| {
                    let a = params.angle(pos, i);
                    (a.cos() as f32, a.sin() as f32)
                })
                .collect();
            for hi in 0..h {
                let row = out.row_mut(&[bi, s, hi]);
                for (i, &(c, sn)) in trig.iter().enumerate() {
                    let x0 = row[2 * i];
                    let x1 = row[2 * i + 1];
                    row[2 * i] = x0 * c - x1 * sn;
                    row[2 * i + 1] = x0 * sn + x1 * c;
                }
            }
        }
    }
    debug_assert!(out.is_finite());
    Ok(out)
}

/// Checks the relative-position identity: rotating `q` at `a + delta` and `k`
/// at `b + delta` leaves their dot product where rotating at `a` and `b` put
/// it. Returns `true` when the two dot products agree within `1e-5` relative
/// (floored at an absolute scale of 1).
///
/// `q` and `k` are single head vectors of width `rotary_dim`.
pub fn rope_dot_shift_property(
    q: &Tensor,
    k: &Tensor,
    params: &RopeParams,
    a: usize,
    b: usize,
    delta: usize,
) -> Result<bool> {
    if q.rank() != 1 || k.rank() != 1 || q.shape() != k.shape() {
        return Err(Error::Dimension(format!(
            "shift property wants two equal rank-1 vectors, got {:?} and {:?}",
            q.shape(),
            k.shape()
        )));
    }
    let d = q.shape()[0];
    if d != params.rotary_dim {
        return Err(Error::Dimension(format!(
            "shift property vectors must be fully rotated: width {d} vs rotary_dim {}",
            params.rotary_dim
        )));
    }
    let rotate = |v: &Tensor, pos: usize| -> Result<Tensor> {
        let wrapped = v.reshape(&[1, 1, 1, d])?;
        apply_rope(&wrapped, &[pos], params)?.reshape(&[d])
    };
    let base = dot(rotate(q, a)?.data(), rotate(k, b)?.data());
    let shifted = dot(rotate(q, a + delta)?.data(), rotate(k, b + delta)?.data());
    let tol = 1e-5 * f32::max(1.0, base.abs());
    Ok((shifted - base).abs() <= tol)
}
