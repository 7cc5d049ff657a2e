//! A single decoherence event: one spread packet becomes a set of fresh,
//! lattice-placed offspring.

use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::model::{bin_weights, reflect_center, BinWeight, GaussianPacket, Interval, PhysicalParams};

use super::{apportion_counts, Branch, Mode, OffsetLaw, Share};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitRule {
    /// Count-mode resolution: a parent of multiplicity `m` hands
    /// `m * fanout` units to its offspring.
    pub fanout: u32,
    pub law: OffsetLaw,
}

impl Default for SplitRule {
    fn default() -> Self {
        Self {
            fanout: 8,
            law: OffsetLaw::Calibrated,
        }
    }
}

/// Splits `center` into the nearest lattice index and the residual offset.
pub fn lattice_anchor(center: f64, bin_width: f64) -> (i64, f64) {
    let k = (center / bin_width).round() as i64;
    (k, center - k as f64 * bin_width)
}

#[inline]
pub(crate) fn lattice_point(index: i64, bin_width: f64) -> f64 {
    index as f64 * bin_width
}

/// Second moment about `offset` of the lattice-discretised Gaussian.
fn discrete_second_moment(offset: f64, variance: f64, bin_width: f64) -> Result<f64> {
    Ok(bin_weights(offset, variance, bin_width, Interval::REAL_LINE)?
        .iter()
        .map(|b| b.weight * (b.center - offset).powi(2))
        .sum())
}

/// Variance of the Gaussian whose lattice discretisation, for a parent sitting
/// `offset` from its nearest lattice point, has second moment `excess` about
/// the parent. When the lattice cannot resolve `excess` the narrowest
/// Gaussian is returned.
pub fn calibrated_offset_variance(offset: f64, excess: f64, bin_width: f64) -> Result<f64> {
    if !(excess > 0.0 && excess.is_finite()) {
        return Err(Error::domain(format!("excess variance must be positive, got {excess}")));
    }
    let mut lo = 1e-12 * bin_width * bin_width;
    if discrete_second_moment(offset, lo, bin_width)? >= excess {
        return Ok(lo);
    }
    let f = |v: f64| discrete_second_moment(offset, v, bin_width).map(|m| m - excess);
    let mut f_lo = f(lo)?;
    let mut hi = excess + bin_width * bin_width;
    let mut f_hi = f(hi)?;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = f(hi)?;
    }
    // Illinois regula falsi; the moment is smooth and monotone in the variance.
    let tol = 1e-15 * excess;
    let mut side = 0i8;
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mut mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
        if !(mid > lo && mid < hi) {
            mid = 0.5 * (lo + hi);
        }
        let f_mid = f(mid)?;
        if f_mid.abs() <= tol {
            return Ok(mid);
        }
        if f_mid < 0.0 {
            lo = mid;
            f_lo = f_mid;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            f_hi = f_mid;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Offspring placement for a parent `offset` from its anchor lattice point,
/// with indices relative to that anchor.
pub(crate) fn relative_pattern(offset: f64, excess: f64, bin_width: f64, law: OffsetLaw) -> Result<Vec<BinWeight>> {
    let raw = bin_weights(offset, excess, bin_width, Interval::REAL_LINE)?;
    // A spread that stays inside one cell is unresolvable; calibrating it
    // would only smear vanishing mass onto the neighbours.
    if law == OffsetLaw::Raw || raw.len() == 1 {
        return Ok(raw);
    }
    let variance = memo_calibrated_variance(offset, excess, bin_width)?;
    bin_weights(offset, variance, bin_width, Interval::REAL_LINE)
}

thread_local! {
    static CALIBRATED: RefCell<HashMap<(u64, u64, u64), f64>> = RefCell::new(HashMap::new());
}

/// Memoised [`calibrated_offset_variance`]; lattice dynamics revisits the
/// same few offsets over and over.
fn memo_calibrated_variance(offset: f64, excess: f64, bin_width: f64) -> Result<f64> {
    let key = (offset.to_bits(), excess.to_bits(), bin_width.to_bits());
    if let Some(v) = CALIBRATED.with(|m| m.borrow().get(&key).copied()) {
        return Ok(v);
    }
    let v = calibrated_offset_variance(offset, excess, bin_width)?;
    CALIBRATED.with(|m| {
        let mut m = m.borrow_mut();
        if m.len() >= 1 << 14 {
            m.clear();
        }
        m.insert(key, v);
    });
    Ok(v)
}

/// Lattice cells and Born weights for the offspring of a parent at `center`
/// carrying `excess` variance beyond `w^2`. Centers are not yet reflected.
pub fn offspring_distribution(center: f64, excess: f64, bin_width: f64, law: OffsetLaw) -> Result<Vec<BinWeight>> {
    let (anchor, offset) = lattice_anchor(center, bin_width);
    let mut bins = relative_pattern(offset, excess, bin_width, law)?;
    for b in &mut bins {
        b.index += anchor;
        b.center = lattice_point(b.index, bin_width);
    }
    Ok(bins)
}

/// Shares handed to each offspring; `None` marks an offspring that receives
/// no count units and therefore does not exist.
pub(crate) fn split_shares(bins: &[BinWeight], parent: Share, mode: Mode, fanout: u32) -> Result<Vec<Option<Share>>> {
    match (mode, parent) {
        (Mode::Count, Share::Count(m)) => {
            let units = m.checked_mul(fanout as u64).ok_or_else(|| {
                Error::domain(format!("count overflow splitting multiplicity {m} by fanout {fanout}"))
            })?;
            let weights: Vec<f64> = bins.iter().map(|b| b.weight).collect();
            Ok(apportion_counts(&weights, units)?
                .into_iter()
                .map(|c| (c > 0).then_some(Share::Count(c)))
                .collect())
        }
        (Mode::Weighted | Mode::Collapse, Share::Weight(w)) => {
            Ok(bins.iter().map(|b| Some(Share::Weight(b.weight * w))).collect())
        }
        (mode, share) => Err(Error::Logic(format!("share {share:?} does not belong to {mode} mode"))),
    }
}

/// Splits a spread branch into fresh width-`w` offspring.
///
/// Offspring sit on the lattice of pitch `w`, reflected into the box, each
/// tagged with the parent lineage extended by `(event_time, index)`.
pub fn decohere_branch(
    branch: &Branch,
    p: &PhysicalParams,
    mode: Mode,
    rule: &SplitRule,
    event_time: f64,
) -> Result<Vec<Branch>> {
    let w2 = p.width * p.width;
    let excess = branch.packet.variance - w2;
    if !(excess > 0.0) {
        return Err(Error::domain(format!(
            "branch variance {} has not spread beyond w^2 = {w2}",
            branch.packet.variance
        )));
    }
    let bins = offspring_distribution(branch.packet.center, excess, p.width, rule.law)?;
    let shares = split_shares(&bins, branch.share, mode, rule.fanout)?;
    let mut out = Vec::with_capacity(bins.len());
    for (i, (bin, share)) in bins.iter().zip(shares).enumerate() {
        let Some(share) = share else { continue };
        out.push(Branch {
            packet: GaussianPacket::fresh(reflect_center(bin.center, p.box_length), p),
            tag: branch.tag.extended(event_time, i as u32)?,
            share,
            birth_time: event_time,
        });
    }
    Ok(out)
}
