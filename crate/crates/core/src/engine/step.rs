//! One period of ensemble evolution, collapse pruning and branch capping.

use std::collections::HashMap;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{reflect_center, BinWeight, GaussianPacket, PhysicalParams};
use crate::rng::{substream, Purpose, StreamKey};
use crate::tag::TagPath;

use super::decohere::{lattice_anchor, lattice_point, relative_pattern, split_shares};
use super::{apportion_counts, decohere_branch, Branch, Ensemble, Mode, Share, StepConfig, Timing};

/// Advances the ensemble by one period.
///
/// Every branch spreads for one period and decoheres. Collapse ensembles keep
/// one random offspring; weighted and count ensembles are capped at
/// `cfg.max_branches` by [`cap_resample`].
pub fn evolve_ensemble_step(e: &Ensemble, p: &PhysicalParams, cfg: &StepConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if e.is_empty() {
        return Err(Error::Logic("cannot evolve an empty ensemble".into()));
    }
    let generation = e.generation() + 1;
    let t_end = e.time() + p.period;
    if cfg.timing == Timing::Deterministic && e.mode() != Mode::Collapse {
        return lattice_step(e, p, cfg, generation, t_end);
    }

    let children: Vec<Vec<Branch>> = e
        .branches()
        .par_iter()
        .map(|b| advance_branch(b, e.time(), t_end, p, cfg, e.mode(), generation))
        .collect::<Result<_>>()?;
    let branches: Vec<Branch> = children.into_iter().flatten().collect();
    let next = Ensemble::from_parts(branches, t_end, e.mode(), generation);
    if e.mode() != Mode::Collapse && next.len() > cfg.max_branches {
        cap_resample(&next, cfg)
    } else {
        Ok(next)
    }
}

/// Evolves one branch from `t_start` to `t_end`, branch by branch and event
/// by event, with randomness drawn from lineage-keyed substreams.
fn advance_branch(
    branch: &Branch,
    t_start: f64,
    t_end: f64,
    p: &PhysicalParams,
    cfg: &StepConfig,
    mode: Mode,
    generation: u64,
) -> Result<Vec<Branch>> {
    let rule = cfg.split_rule();
    let event_kids = |b: &Branch, at: f64| -> Result<Vec<Branch>> {
        let kids = decohere_branch(b, p, mode, &rule, at)?;
        if mode == Mode::Collapse {
            let mut rng = substream(cfg.seed, Purpose::Prune, generation, b.tag.structural_hash());
            Ok(vec![prune_to_collapse(kids, &mut rng)?])
        } else {
            Ok(kids)
        }
    };
    let advanced = |b: &Branch, dt: f64| -> Result<Branch> {
        Ok(Branch {
            packet: b.packet.advanced(dt, p)?,
            ..b.clone()
        })
    };

    match cfg.timing {
        Timing::Deterministic => event_kids(&advanced(branch, t_end - t_start)?, t_end),
        Timing::Poisson => {
            let waits = Exp::new(1.0 / p.period).map_err(|e| Error::config(format!("invalid event rate: {e}")))?;
            let mut done = Vec::new();
            let mut pending = vec![(branch.clone(), t_start)];
            while let Some((b, from)) = pending.pop() {
                let mut rng = substream(
                    cfg.seed,
                    Purpose::Timing,
                    generation,
                    b.tag.structural_hash() ^ from.to_bits(),
                );
                let at = from + waits.sample(&mut rng);
                if at >= t_end {
                    done.push(advanced(&b, t_end - from)?);
                } else if at <= from || b.tag.last_event().is_some_and(|(t, _)| at <= t) {
                    // Wait rounded to zero; this draw cannot carry an event.
                    pending.push((advanced(&b, 0.0)?, from + f64::EPSILON * from.abs().max(1.0)));
                } else {
                    let kids = event_kids(&advanced(&b, at - from)?, at)?;
                    // Reverse so the stack yields children in index order.
                    pending.extend(kids.into_iter().rev().map(|k| (k, at)));
                }
            }
            Ok(done)
        }
    }
}

/// An offspring that has not been materialized yet.
struct Candidate {
    parent: u32,
    slot: u32,
    center: f64,
    share: Share,
    priority: f64,
}

/// Offspring patterns shared by parents with the same lattice offset and
/// excess variance.
#[derive(Default)]
struct PatternCache {
    index: HashMap<(u64, u64), usize>,
    patterns: Vec<Vec<BinWeight>>,
    last: Option<((u64, u64), usize)>,
}

impl PatternCache {
    fn get(&mut self, offset: f64, excess: f64, p: &PhysicalParams, cfg: &StepConfig) -> Result<&[BinWeight]> {
        let key = (offset.to_bits(), excess.to_bits());
        let slot = match self.last {
            Some((k, i)) if k == key => i,
            _ => {
                let i = match self.index.get(&key) {
                    Some(&i) => i,
                    None => {
                        self.patterns
                            .push(relative_pattern(offset, excess, p.width, cfg.offset_law)?);
                        self.index.insert(key, self.patterns.len() - 1);
                        self.patterns.len() - 1
                    }
                };
                self.last = Some((key, i));
                i
            }
        };
        Ok(&self.patterns[slot])
    }
}

/// All offspring of one step with priority at least `floor`, plus the number
/// and total count of every offspring.
struct Generated {
    candidates: Vec<Candidate>,
    offspring: usize,
    total_count: u64,
}

/// The previous cut is lowered by this factor before it is used to discard
/// candidates early.
const HINT_SLACK: f64 = 0.5;

/// Deterministic-timing step for weighted and count ensembles. Offspring are
/// generated as light candidates and only survivors of the cap get tags. The
/// result is identical to decohering every branch and then calling
/// [`cap_resample`].
fn lattice_step(e: &Ensemble, p: &PhysicalParams, cfg: &StepConfig, generation: u64, t_end: f64) -> Result<Ensemble> {
    let w2 = p.width * p.width;
    let dt = t_end - e.time();
    let stream = StreamKey::new(cfg.seed, Purpose::Cap, generation);
    let mut cache = PatternCache::default();

    let mut generate = |floor: f64| -> Result<Generated> {
        let expected = if floor > 0.0 {
            4 * cfg.max_branches
        } else {
            e.len() * 13
        };
        let mut out = Generated {
            candidates: Vec::with_capacity(expected),
            offspring: 0,
            total_count: 0,
        };
        for (pi, b) in e.branches().iter().enumerate() {
            let spread = b.packet.advanced(dt, p)?;
            let excess = spread.variance - w2;
            if !(excess > 0.0) {
                return Err(Error::domain(format!(
                    "branch variance {} has not spread beyond w^2 = {w2}",
                    spread.variance
                )));
            }
            let (anchor, offset) = lattice_anchor(spread.center, p.width);
            let pattern = cache.get(offset, excess, p, cfg)?;
            let event_hash = TagPath::event_hash(b.tag.structural_hash(), t_end);
            let mut offer = |slot: usize, bin: &BinWeight, share: Share| {
                out.offspring += 1;
                if let Share::Count(c) = share {
                    out.total_count += c;
                }
                let hash = TagPath::sibling_hash(event_hash, slot as u32);
                let priority = share.mass() / stream.uniform(hash);
                if priority >= floor {
                    out.candidates.push(Candidate {
                        parent: pi as u32,
                        slot: slot as u32,
                        center: reflect_center(lattice_point(bin.index + anchor, p.width), p.box_length),
                        share,
                        priority,
                    });
                }
            };
            match b.share {
                Share::Weight(w) if e.mode() == Mode::Weighted => {
                    for (slot, bin) in pattern.iter().enumerate() {
                        offer(slot, bin, Share::Weight(bin.weight * w));
                    }
                }
                share => {
                    let shares = split_shares(pattern, share, e.mode(), cfg.fanout)?;
                    for (slot, (bin, share)) in pattern.iter().zip(shares).enumerate() {
                        if let Some(share) = share {
                            offer(slot, bin, share);
                        }
                    }
                }
            }
        }
        Ok(out)
    };

    let floor = e.cut_hint * HINT_SLACK;
    let mut gen = generate(floor)?;
    let capped = gen.offspring > cfg.max_branches;
    let complete = gen.candidates.len() == gen.offspring;
    if (capped && gen.candidates.len() <= cfg.max_branches) || (!capped && !complete) {
        // The hint was too high to decide the cut; start over unfiltered.
        gen = generate(0.0)?;
    }

    let materialize = |c: &Candidate, share: Share| Branch {
        packet: GaussianPacket::fresh(c.center, p),
        tag: e.branches()[c.parent as usize].tag.extended_unchecked(t_end, c.slot),
        share,
        birth_time: t_end,
    };

    let candidates = &gen.candidates;
    if !capped {
        let branches = candidates.iter().map(|c| materialize(c, c.share)).collect();
        return Ok(Ensemble::from_parts(branches, t_end, e.mode(), generation));
    }
    let selection = select_top(
        candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (c.priority, i as u32))
            .collect(),
        cfg.max_branches,
    );
    let shares = reshare(
        &selection,
        |i| candidates[i].share.mass(),
        e.mode(),
        gen.total_count,
        cfg,
    )?;
    let branches = selection
        .kept
        .iter()
        .zip(shares)
        .map(|(&i, s)| materialize(&candidates[i], s))
        .collect();
    let mut next = Ensemble::from_parts(branches, t_end, e.mode(), generation);
    next.cut_hint = selection.threshold;
    Ok(next)
}

/// Result of priority sampling: kept indices in ascending order and the
/// first excluded priority.
struct Selection {
    kept: Vec<usize>,
    threshold: f64,
}

/// Descending priority, ties to the lower index.
fn by_priority(a: &(f64, u32), b: &(f64, u32)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Keeps the `cap` largest `(priority, index)` keys.
fn select_top(mut keys: Vec<(f64, u32)>, cap: usize) -> Selection {
    debug_assert!(keys.len() > cap);
    let n = keys.len();
    prefilter(&mut keys, cap);
    keys.select_nth_unstable_by(cap, by_priority);
    let threshold = keys[cap].0;
    let mut chosen = vec![false; n];
    for k in &keys[..cap] {
        chosen[k.1 as usize] = true;
    }
    let kept = (0..n).filter(|&i| chosen[i]).collect();
    Selection { kept, threshold }
}

/// Priority sampling without replacement: item `i` gets priority
/// `mass_i / u_i` with `u_i` keyed on its lineage hash, and the `cap` largest
/// priorities survive.
fn priority_select(
    n: usize,
    mass: impl Fn(usize) -> f64,
    hash: impl Fn(usize) -> u64,
    cap: usize,
    seed: u64,
    generation: u64,
) -> Selection {
    let stream = StreamKey::new(seed, Purpose::Cap, generation);
    select_top(
        (0..n).map(|i| (mass(i) / stream.uniform(hash(i)), i as u32)).collect(),
        cap,
    )
}

/// Drops keys that cannot reach the top `cap + 1`, using a threshold guessed
/// from a subsample. The guess is only accepted when more than `cap` keys
/// clear it, which guarantees it lies at or below the true cut.
fn prefilter(keys: &mut Vec<(f64, u32)>, cap: usize) {
    const SAMPLE: usize = 1 << 14;
    let n = keys.len();
    if n < 4 * SAMPLE || n < 2 * cap {
        return;
    }
    let stride = n / SAMPLE;
    let mut sample: Vec<(f64, u32)> = keys.iter().step_by(stride).copied().collect();
    let expected = (cap + 1) as f64 * sample.len() as f64 / n as f64;
    let rank = (1.1 * expected + 6.0 * expected.sqrt() + 16.0) as usize;
    if rank >= sample.len() {
        return;
    }
    sample.select_nth_unstable_by(rank, by_priority);
    let guess = sample[rank].0;
    let filtered: Vec<(f64, u32)> = keys.iter().filter(|k| k.0 >= guess).copied().collect();
    if filtered.len() > cap {
        *keys = filtered;
    }
}

/// Survivor shares: each mass is raised to at least the threshold, which
/// keeps subset totals unbiased. Weighted shares are renormalized to one;
/// count shares are re-apportioned from `min(total, cap * fanout)` units with
/// at least one unit per survivor.
fn reshare(
    selection: &Selection,
    mass: impl Fn(usize) -> f64,
    mode: Mode,
    total_count: u64,
    cfg: &StepConfig,
) -> Result<Vec<Share>> {
    let adjusted: Vec<f64> = selection
        .kept
        .iter()
        .map(|&i| mass(i).max(selection.threshold))
        .collect();
    let sum: f64 = adjusted.iter().sum();
    let normalized: Vec<f64> = adjusted.iter().map(|a| a / sum).collect();
    match mode {
        Mode::Count => {
            let kept = selection.kept.len() as u64;
            let budget = total_count.min(kept.saturating_mul(cfg.fanout as u64)).max(kept);
            let extra = if budget > kept {
                apportion_counts(&normalized, budget - kept)?
            } else {
                vec![0; normalized.len()]
            };
            Ok(extra.into_iter().map(|c| Share::Count(c + 1)).collect())
        }
        Mode::Weighted | Mode::Collapse => Ok(normalized.into_iter().map(Share::Weight).collect()),
    }
}

/// Bounds the branch count by priority sampling without replacement.
///
/// Ensembles at or below `cfg.max_branches` are returned unchanged.
pub fn cap_resample(e: &Ensemble, cfg: &StepConfig) -> Result<Ensemble> {
    cfg.validate()?;
    if e.len() <= cfg.max_branches {
        return Ok(e.clone());
    }
    let branches = e.branches();
    let selection = priority_select(
        branches.len(),
        |i| branches[i].mass(),
        |i| branches[i].tag.structural_hash(),
        cfg.max_branches,
        cfg.seed,
        e.generation(),
    );
    let shares = reshare(&selection, |i| branches[i].mass(), e.mode(), e.total_count(), cfg)?;
    let kept = selection
        .kept
        .iter()
        .zip(shares)
        .map(|(&i, share)| Branch {
            share,
            ..branches[i].clone()
        })
        .collect();
    Ok(Ensemble::from_parts(kept, e.time(), e.mode(), e.generation()))
}

/// Keeps one offspring, chosen with probability proportional to its share.
/// The survivor's share becomes the whole.
pub fn prune_to_collapse(offspring: Vec<Branch>, rng: &mut impl Rng) -> Result<Branch> {
    if offspring.is_empty() {
        return Err(Error::Logic("nothing to prune: no offspring".into()));
    }
    let total: f64 = offspring.iter().map(Branch::mass).sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut chosen = offspring.len() - 1;
    for (i, b) in offspring.iter().enumerate() {
        acc += b.mass();
        if target < acc {
            chosen = i;
            break;
        }
    }
    let mut survivor = offspring.into_iter().nth(chosen).expect("index in range");
    survivor.share = match survivor.share {
        Share::Weight(_) => Share::Weight(1.0),
        Share::Count(_) => Share::Count(1),
    };
    Ok(survivor)
}

/// Outcome of a lineage uniqueness check.
#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    pub passed: bool,
    pub checked: usize,
    /// Indices of the first two branches found sharing a lineage.
    pub duplicate: Option<(usize, usize, TagPath)>,
}

impl fmt::Display for TagReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.duplicate {
            None => write!(f, "{} lineages, all distinct", self.checked),
            Some((a, b, tag)) => write!(f, "branches {a} and {b} share lineage {tag:?}"),
        }
    }
}

/// Checks that no two branches share a lineage. Distinct tags are orthogonal,
/// so a pass certifies the absence of interference terms between branches.
pub fn verify_tag_uniqueness(branches: &[Branch]) -> TagReport {
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::with_capacity(branches.len());
    for (i, b) in branches.iter().enumerate() {
        let bucket = seen.entry(b.tag.structural_hash()).or_default();
        if let Some(&j) = bucket.iter().find(|&&j| branches[j].tag == b.tag) {
            return TagReport {
                passed: false,
                checked: i + 1,
                duplicate: Some((j, i, b.tag.clone())),
            };
        }
        bucket.push(i);
    }
    TagReport {
        passed: true,
        checked: branches.len(),
        duplicate: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{OffsetLaw, SplitRule};
    use crate::model::step_offset_variance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wide() -> PhysicalParams {
        PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 10_000.0).unwrap()
    }

    fn center_moments(e: &Ensemble) -> (f64, f64) {
        let total = e.total_mass();
        let mean = e.branches().iter().map(|b| b.mass() * b.packet.center).sum::<f64>() / total;
        let var = e
            .branches()
            .iter()
            .map(|b| b.mass() * (b.packet.center - mean).powi(2))
            .sum::<f64>()
            / total;
        (mean, var)
    }

    fn leaf(center: f64, share: Share, tag: TagPath) -> Branch {
        Branch {
            packet: GaussianPacket {
                center,
                variance: 1.0,
                age: 0.0,
            },
            tag,
            share,
            birth_time: 0.0,
        }
    }

    #[test]
    fn first_step_from_midbox() {
        let p = wide();
        let e = Ensemble::midbox(&p, Mode::Weighted);
        let next = evolve_ensemble_step(&e, &p, &StepConfig::default()).unwrap();
        assert_eq!(next.time(), 1.0);
        assert_eq!(next.generation(), 1);
        let (mean, var) = center_moments(&next);
        assert!((mean - 5000.0).abs() < 1e-9);
        assert!((var - step_offset_variance(&p)).abs() < 1e-8);
        next.validate().unwrap();
    }

    #[test]
    fn collapse_keeps_exactly_one_branch() {
        let p = PhysicalParams::default();
        let mut e = Ensemble::midbox(&p, Mode::Collapse);
        for timing in [Timing::Deterministic, Timing::Poisson] {
            let cfg = StepConfig {
                timing,
                ..StepConfig::default()
            };
            for _ in 0..30 {
                e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
                assert_eq!(e.len(), 1);
                assert_eq!(e.branches()[0].share, Share::Weight(1.0));
            }
        }
        e.validate().unwrap();
    }

    #[test]
    fn weights_are_conserved_and_counts_multiply() {
        let p = PhysicalParams::default();
        let cfg = StepConfig {
            max_branches: 1_000_000,
            ..StepConfig::default()
        };
        let mut w = Ensemble::midbox(&p, Mode::Weighted);
        let mut c = Ensemble::midbox(&p, Mode::Count);
        for _ in 0..4 {
            let before = c.total_count();
            w = evolve_ensemble_step(&w, &p, &cfg).unwrap();
            c = evolve_ensemble_step(&c, &p, &cfg).unwrap();
            assert!((w.total_mass() - 1.0).abs() < 1e-9);
            assert_eq!(c.total_count(), before * cfg.fanout as u64);
        }
        w.validate().unwrap();
        c.validate().unwrap();
    }

    #[test]
    fn cap_of_zero_is_a_configuration_error() {
        let p = PhysicalParams::default();
        let e = Ensemble::midbox(&p, Mode::Weighted);
        let cfg = StepConfig {
            max_branches: 0,
            ..StepConfig::default()
        };
        assert!(matches!(evolve_ensemble_step(&e, &p, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lattice_step_matches_decohere_then_cap() {
        let p = PhysicalParams::default();
        for mode in [Mode::Weighted, Mode::Count] {
            let cfg = StepConfig {
                max_branches: 150,
                seed: 9,
                ..StepConfig::default()
            };
            let mut e = Ensemble::midbox(&p, mode);
            for _ in 0..6 {
                let fast = evolve_ensemble_step(&e, &p, &cfg).unwrap();

                let t_end = e.time() + p.period;
                let mut all = Vec::new();
                for b in e.branches() {
                    let spread = Branch {
                        packet: b.packet.advanced(p.period, &p).unwrap(),
                        ..b.clone()
                    };
                    all.extend(decohere_branch(&spread, &p, mode, &cfg.split_rule(), t_end).unwrap());
                }
                let slow = Ensemble::from_parts(all, t_end, mode, e.generation() + 1);
                let slow = cap_resample(&slow, &cfg).unwrap();

                assert_eq!(fast.len(), slow.len());
                for (a, b) in fast.branches().iter().zip(slow.branches()) {
                    assert_eq!(a.packet, b.packet);
                    assert_eq!(a.tag, b.tag);
                    assert_eq!(a.share, b.share);
                }
                e = fast;
            }
        }
    }

    #[test]
    fn identical_seeds_give_identical_ensembles() {
        let p = PhysicalParams::default();
        for timing in [Timing::Deterministic, Timing::Poisson] {
            let cfg = StepConfig {
                max_branches: 300,
                timing,
                seed: 5,
                ..StepConfig::default()
            };
            let run = || {
                let mut e = Ensemble::midbox(&p, Mode::Weighted);
                for _ in 0..10 {
                    e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
                }
                e
            };
            let (a, b) = (run(), run());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.branches().iter().zip(b.branches()) {
                assert_eq!(x.packet.center.to_bits(), y.packet.center.to_bits());
                assert_eq!(x.share, y.share);
                assert_eq!(x.tag, y.tag);
            }
        }
    }

    #[test]
    fn poisson_timing_keeps_lineage_times_increasing() {
        let p = PhysicalParams::default();
        let cfg = StepConfig {
            max_branches: 200,
            timing: Timing::Poisson,
            ..StepConfig::default()
        };
        let mut e = Ensemble::midbox(&p, Mode::Count);
        for _ in 0..20 {
            e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
            e.validate().unwrap();
        }
        for b in e.branches() {
            let ev = b.tag.events();
            assert!(ev.windows(2).all(|w| w[0].0 < w[1].0));
            assert!(b.packet.variance >= 1.0);
            assert!((b.birth_time + b.packet.age - e.time()).abs() < 1e-9);
        }
    }

    #[test]
    fn capping_is_identity_below_the_cap() {
        let p = PhysicalParams::default();
        let mut e = Ensemble::midbox(&p, Mode::Weighted);
        e = evolve_ensemble_step(&e, &p, &StepConfig::default()).unwrap();
        let cfg = StepConfig {
            max_branches: e.len(),
            ..StepConfig::default()
        };
        let same = cap_resample(&e, &cfg).unwrap();
        for (a, b) in e.branches().iter().zip(same.branches()) {
            assert_eq!(a.packet.center.to_bits(), b.packet.center.to_bits());
            assert_eq!(a.share, b.share);
            assert_eq!(a.tag, b.tag);
        }
    }

    #[test]
    fn capping_equal_branches_keeps_a_uniform_subset() {
        let cap = 50;
        let branches: Vec<Branch> = (0..2 * cap)
            .map(|i| {
                leaf(
                    i as f64,
                    Share::Weight(1.0 / (2 * cap) as f64),
                    TagPath::from_events(&[(1.0, i as u32)]).unwrap(),
                )
            })
            .collect();
        let e = Ensemble::from_branches(branches, 1.0, Mode::Weighted).unwrap();
        let trials = 2000;
        let mut hits = vec![0usize; 2 * cap];
        for seed in 0..trials {
            let cfg = StepConfig {
                max_branches: cap,
                seed,
                ..StepConfig::default()
            };
            let kept = cap_resample(&e, &cfg).unwrap();
            assert_eq!(kept.len(), cap);
            for b in kept.branches() {
                assert!((b.mass() - 1.0 / cap as f64).abs() < 1e-12);
                hits[b.packet.center as usize] += 1;
            }
        }
        let sd = (trials as f64 * 0.25).sqrt();
        for h in hits {
            assert!((h as f64 - trials as f64 / 2.0).abs() < 4.5 * sd, "hits {h}");
        }
    }

    #[test]
    fn capping_is_unbiased_for_the_mean() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 10_000.0).unwrap();
        let big = StepConfig {
            max_branches: usize::MAX,
            ..StepConfig::default()
        };
        let mut e = Ensemble::midbox(&p, Mode::Weighted);
        for _ in 0..4 {
            e = evolve_ensemble_step(&e, &p, &big).unwrap();
        }
        assert_eq!(e.len(), 13usize.pow(4));
        let reference = center_moments(&e).0;
        let diffs: Vec<f64> = (0..50u64)
            .map(|seed| {
                let cfg = StepConfig {
                    max_branches: 10_000,
                    seed,
                    ..StepConfig::default()
                };
                center_moments(&cap_resample(&e, &cfg).unwrap()).0 - reference
            })
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            mean.abs() < 3.0 * sd / n.sqrt(),
            "mean diff {mean}, se {}",
            sd / n.sqrt()
        );
    }

    #[test]
    fn count_capping_keeps_a_bounded_budget() {
        let p = PhysicalParams::default();
        let cfg = StepConfig {
            max_branches: 500,
            ..StepConfig::default()
        };
        let mut e = Ensemble::midbox(&p, Mode::Count);
        for _ in 0..40 {
            e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
            assert!(e.len() <= 500);
            assert!(e.total_count() <= 500 * 8 * 8);
        }
        e.validate().unwrap();
    }

    #[test]
    fn pruning_single_offspring_returns_it() {
        let tag = TagPath::from_events(&[(1.0, 4)]).unwrap();
        let only = leaf(3.0, Share::Weight(0.2), tag.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let got = prune_to_collapse(vec![only], &mut rng).unwrap();
        assert_eq!(got.tag, tag);
        assert_eq!(got.share, Share::Weight(1.0));
    }

    #[test]
    fn pruning_frequencies_follow_shares() {
        let trials = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (shares, p_first) in [
            (vec![Share::Count(3), Share::Count(1)], 0.75),
            (vec![Share::Weight(0.5), Share::Weight(0.5)], 0.5),
        ] {
            let mut first = 0usize;
            for _ in 0..trials {
                let kids: Vec<Branch> = shares
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| leaf(i as f64, s, TagPath::from_events(&[(1.0, i as u32)]).unwrap()))
                    .collect();
                if prune_to_collapse(kids, &mut rng).unwrap().packet.center == 0.0 {
                    first += 1;
                }
            }
            let f = first as f64 / trials as f64;
            let bound = 3.0 * (p_first * (1.0 - p_first) / trials as f64).sqrt();
            assert!((f - p_first).abs() < bound, "frequency {f}");
        }
    }

    #[test]
    fn pruning_nothing_is_a_logic_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(prune_to_collapse(Vec::new(), &mut rng), Err(Error::Logic(_))));
    }

    #[test]
    fn tag_uniqueness_reports() {
        let p = PhysicalParams::default();
        assert!(Ensemble::midbox(&p, Mode::Weighted).verify_tags().passed);

        let mut e = Ensemble::midbox(&p, Mode::Weighted);
        let cfg = StepConfig {
            max_branches: 400,
            ..StepConfig::default()
        };
        for _ in 0..25 {
            e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
            assert!(e.verify_tags().passed);
        }

        let shared = TagPath::from_events(&[(1.0, 2), (2.0, 0)]).unwrap();
        let copy = TagPath::from_events(&[(1.0, 2), (2.0, 0)]).unwrap();
        let other = TagPath::from_events(&[(1.0, 2), (2.0, 1)]).unwrap();
        let fixture = vec![
            leaf(1.0, Share::Weight(0.3), shared),
            leaf(2.0, Share::Weight(0.3), other),
            leaf(3.0, Share::Weight(0.4), copy.clone()),
        ];
        let report = verify_tag_uniqueness(&fixture);
        assert!(!report.passed);
        let (a, b, tag) = report.duplicate.unwrap();
        assert_eq!((a, b), (0, 2));
        assert_eq!(tag, copy);
        assert!(Ensemble::from_branches(fixture, 2.0, Mode::Weighted).is_err());
    }

    #[test]
    fn raw_law_variance_ladder_drifts() {
        let p = wide();
        let cfg = StepConfig {
            offset_law: OffsetLaw::Raw,
            max_branches: 1_000_000,
            ..StepConfig::default()
        };
        let mut e = Ensemble::midbox(&p, Mode::Weighted);
        for _ in 0..3 {
            e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
        }
        let (_, var) = center_moments(&e);
        // First event is from a cell edge, later ones from cell centers; both
        // add the same rounding variance.
        assert!((var - 3.0 * (1.0 + 1.0 / 12.0)).abs() < 1e-4, "var {var}");
        let _ = SplitRule::default();
    }
}
