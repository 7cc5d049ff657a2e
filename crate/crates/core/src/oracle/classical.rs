use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::engine::{decohere_branch, Branch, Ensemble, Mode, OffsetLaw, Share, SplitRule};
use crate::error::{Error, Result};
use crate::model::{reflect_center, GaussianPacket, PhysicalParams};
use crate::tag::TagPath;

pub const MIN_WALKERS: usize = 1000;

/// Final positions of walkers released at `L/2` that take one Gaussian step
/// of variance `delta^2` per period, reflected at the walls.
pub fn classical_random_walk_oracle(
    p: &PhysicalParams,
    n_walkers: usize,
    steps: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    p.validate()?;
    if n_walkers < MIN_WALKERS {
        return Err(Error::domain(format!(
            "need at least {MIN_WALKERS} walkers, got {n_walkers}"
        )));
    }
    let step = Normal::new(0.0, p.step_variance().sqrt()).map_err(|e| Error::Numerical(e.to_string()))?;
    let mut xs = vec![p.box_length / 2.0; n_walkers];
    for _ in 0..steps {
        for x in &mut xs {
            *x = reflect_center(*x + step.sample(rng), p.box_length);
        }
    }
    Ok(xs)
}

/// Bin masses at time `t` of the diffusion equation on `[0, L]` with
/// reflecting walls, started from a Gaussian of variance `var0` at `x0`
/// folded into the box. Uses the exact cosine-series solution.
pub fn reflecting_diffusion_histogram(p: &PhysicalParams, x0: f64, var0: f64, t: f64, k: usize) -> Result<Vec<f64>> {
    if k < 1 || !(t >= 0.0) || !(var0 >= 0.0) {
        return Err(Error::domain("need k >= 1, t >= 0 and var0 >= 0"));
    }
    let length = p.box_length;
    let spread = var0 / 2.0 + p.diffusion_constant() * t;
    let bin = length / k as f64;
    let mut hist = vec![1.0 / k as f64; k];
    for n in 1.. {
        let q = n as f64 * PI / length;
        let decay = (-q * q * spread).exp();
        if decay < 1e-18 || n > 1_000_000 {
            break;
        }
        let coeff = 2.0 / length * (q * x0).cos() * decay / q;
        for (j, h) in hist.iter_mut().enumerate() {
            let a = j as f64 * bin;
            *h += coeff * ((q * (a + bin)).sin() - (q * a).sin());
        }
    }
    Ok(hist)
}

/// Exact weighted ensemble under deterministic timing, with branches on the
/// same site merged.
///
/// After every event all offspring are fresh width-`w` packets on lattice
/// sites, so branches sharing a site evolve identically from then on and
/// only the total weight per site matters. Each surviving site gets a
/// distinct synthetic tag.
pub fn lumped_weighted_reference(p: &PhysicalParams, law: OffsetLaw, start: f64, steps: usize) -> Result<Ensemble> {
    p.validate()?;
    let rule = SplitRule { fanout: 1, law };
    let mut sites: Vec<(f64, f64)> = vec![(start, 1.0)];
    let mut t = 0.0;
    for step in 1..=steps {
        let event = step as f64 * p.period;
        let mut next: HashMap<u64, f64> = HashMap::new();
        for &(center, weight) in &sites {
            let packet = GaussianPacket::fresh(center, p).advanced(event - t, p)?;
            let parent = Branch {
                packet,
                tag: TagPath::root(),
                share: Share::Weight(weight),
                birth_time: t,
            };
            for child in decohere_branch(&parent, p, Mode::Weighted, &rule, event)? {
                *next.entry(child.packet.center.to_bits()).or_default() += child.mass();
            }
        }
        let mut merged: Vec<(f64, f64)> = next.into_iter().map(|(c, w)| (f64::from_bits(c), w)).collect();
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        sites = merged;
        t = event;
    }
    let total: f64 = sites.iter().map(|s| s.1).sum();
    let branches = sites
        .iter()
        .enumerate()
        .map(|(i, &(center, weight))| {
            Ok(Branch {
                packet: GaussianPacket::fresh(center, p),
                tag: TagPath::from_events(&[(t, i as u32)])?,
                share: Share::Weight(weight / total),
                birth_time: t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::from_branches(branches, t, Mode::Weighted)
}
