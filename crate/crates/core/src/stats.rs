//! Ensemble observables and the statistical tests used to check them.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::{Branch, Ensemble, Mode};
use crate::error::{Error, Result};
use crate::model::{standard_normal_mass, GaussianPacket, PhysicalParams};

fn check_nonempty(e: &Ensemble) -> Result<()> {
    if e.is_empty() {
        return Err(Error::domain("ensemble has no branches"));
    }
    Ok(())
}

/// Share-weighted expectation of a per-branch observable.
pub fn expectation(e: &Ensemble, observable: impl Fn(&Branch) -> f64) -> Result<f64> {
    check_nonempty(e)?;
    let total = e.total_mass();
    Ok(e.branches().iter().map(|b| b.mass() * observable(b)).sum::<f64>() / total)
}

pub fn ensemble_position_mean(e: &Ensemble) -> Result<f64> {
    expectation(e, |b| b.packet.center)
}

/// Variance of the position distribution of the whole ensemble: dispersion of
/// the branch centers plus each packet's own variance.
pub fn ensemble_position_variance(e: &Ensemble) -> Result<f64> {
    let mean = ensemble_position_mean(e)?;
    expectation(e, |b| (b.packet.center - mean).powi(2) + b.packet.variance)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceSample {
    pub t: f64,
    pub var: f64,
    pub n_effective: f64,
}

/// Position variance against time.
#[derive(Debug, Clone, Default)]
pub struct VarianceSeries {
    samples: Vec<VarianceSample>,
}

impl VarianceSeries {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a sample; times must strictly increase.
    pub fn push(&mut self, t: f64, var: f64, n_effective: f64) -> Result<()> {
        if let Some(last) = self.samples.last() {
            if !(t > last.t) {
                return Err(Error::Logic(format!(
                    "variance sample at t = {t} does not follow t = {}",
                    last.t
                )));
            }
        }
        self.samples.push(VarianceSample { t, var, n_effective });
        Ok(())
    }

    pub fn record(&mut self, e: &Ensemble) -> Result<()> {
        let var = ensemble_position_variance(e)?;
        self.push(e.time(), var, e.effective_size())
    }

    pub fn samples(&self) -> &[VarianceSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Samples with `lo <= t <= hi`.
    pub fn window(&self, lo: f64, hi: f64) -> VarianceSeries {
        VarianceSeries {
            samples: self
                .samples
                .iter()
                .copied()
                .filter(|s| s.t >= lo && s.t <= hi)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionEstimate {
    /// Diffusion constant under `var(t) = 2 D t + c`.
    pub d: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Ordinary least squares fit of `var(t) = 2 D t + c`.
///
/// Meaningful estimates need the series to stay clear of the walls and to
/// span many periods; only degenerate inputs are rejected here.
pub fn fit_diffusion(s: &VarianceSeries) -> Result<DiffusionEstimate> {
    let pts = s.samples();
    if pts.len() < 3 {
        return Err(Error::domain(format!(
            "diffusion fit needs at least 3 samples, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.t).sum::<f64>() / n;
    let vm = pts.iter().map(|p| p.var).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.t - tm).powi(2)).sum();
    if !(stt > 0.0) {
        return Err(Error::domain("diffusion fit over a degenerate time span"));
    }
    let stv: f64 = pts.iter().map(|p| (p.t - tm) * (p.var - vm)).sum();
    let slope = stv / stt;
    let intercept = vm - slope * tm;
    let rss: f64 = pts.iter().map(|p| (p.var - intercept - slope * p.t).powi(2)).sum();
    let slope_se = (rss / (n - 2.0) / stt).sqrt();
    Ok(DiffusionEstimate {
        d: slope / 2.0,
        stderr: slope_se / 2.0,
        intercept,
    })
}

/// Probability mass of the ensemble in `k` equal bins spanning the box.
///
/// Each component's Gaussian is integrated over every bin, with the tails
/// beyond a wall folded back by reflection.
pub fn position_histogram(e: &Ensemble, p: &PhysicalParams, k: usize) -> Result<Vec<f64>> {
    check_nonempty(e)?;
    packet_histogram(e.branches().iter().map(|b| (b.packet, b.mass())), p, k)
}

/// [`position_histogram`] for any collection of `(packet, mass)` pairs.
pub fn packet_histogram(
    packets: impl IntoIterator<Item = (GaussianPacket, f64)>,
    p: &PhysicalParams,
    k: usize,
) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::config(format!("histogram needs at least 2 bins, got {k}")));
    }
    let bin = p.box_length / k as f64;
    if bin < p.width {
        return Err(Error::config(format!(
            "{k} bins of width {bin} are finer than the localization width {}",
            p.width
        )));
    }
    // Packets with the same center and width share one set of integrals.
    let mut groups: HashMap<(u64, u64), f64> = HashMap::new();
    for (packet, mass) in packets {
        *groups
            .entry((packet.center.to_bits(), packet.variance.to_bits()))
            .or_default() += mass;
    }
    if groups.is_empty() {
        return Err(Error::domain("no packets to histogram"));
    }
    let mut keys: Vec<_> = groups.into_iter().collect();
    keys.sort_unstable_by_key(|&(key, _)| key);

    let length = p.box_length;
    let mut hist = vec![0.0; k];
    for ((c, v), mass) in keys {
        let (center, sigma) = (f64::from_bits(c), f64::from_bits(v).sqrt());
        for image in [center, -center, 2.0 * length - center] {
            let lo = image - 8.0 * sigma;
            let hi = image + 8.0 * sigma;
            if hi < 0.0 || lo > length {
                continue;
            }
            let first = ((lo / bin).floor().max(0.0)) as usize;
            let last = ((hi / bin).floor() as usize).min(k - 1);
            for (j, h) in hist.iter_mut().enumerate().take(last + 1).skip(first) {
                let a = j as f64 * bin;
                let b = if j + 1 == k { length } else { a + bin };
                *h += mass * standard_normal_mass((a - image) / sigma, (b - image) / sigma);
            }
        }
    }
    let total: f64 = hist.iter().sum();
    for h in &mut hist {
        *h /= total;
    }
    Ok(hist)
}

/// Total variation distance `(1/2) sum |h_i - 1/k|` to the uniform vector.
pub fn tv_to_uniform(h: &[f64]) -> f64 {
    let u = 1.0 / h.len() as f64;
    0.5 * h.iter().map(|x| (x - u).abs()).sum::<f64>()
}

/// Shannon entropy of a probability vector in nats, with `0 ln 0 = 0`.
pub fn coarse_entropy(h: &[f64]) -> f64 {
    -h.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Largest entropy drop between checkpoints attributable to sampling noise.
pub fn entropy_noise_bound(bins: usize, n_effective: f64) -> f64 {
    3.0 * ((bins as f64 - 1.0) / (2.0 * n_effective)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibrationReport {
    pub tv_distance: f64,
    pub coarse_entropy: f64,
    pub n_bins: usize,
}

impl EquilibrationReport {
    pub fn from_histogram(h: &[f64]) -> Self {
        Self {
            tv_distance: tv_to_uniform(h),
            coarse_entropy: coarse_entropy(h),
            n_bins: h.len(),
        }
    }
}

pub fn equilibration_report(e: &Ensemble, p: &PhysicalParams, k: usize) -> Result<EquilibrationReport> {
    Ok(EquilibrationReport::from_histogram(&position_histogram(e, p, k)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    /// Upper `alpha` quantile of the chi-square law with `dof` degrees of freedom.
    pub threshold: f64,
    pub passed: bool,
}

/// Smallest expected count per cell for the chi-square approximation.
pub const MIN_EXPECTED_COUNT: f64 = 5.0;

/// Pearson goodness of fit of `observed` counts to `expected` probabilities,
/// passing when the statistic is below the upper `alpha` quantile.
pub fn chi_square_frequencies(observed: &[u64], expected: &[f64], alpha: f64) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::domain(format!(
            "need matching observed and expected cells (at least 2), got {} and {}",
            observed.len(),
            expected.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let sum: f64 = expected.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || expected.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::domain("expected probabilities must be positive and sum to 1"));
    }
    let n: u64 = observed.iter().sum();
    let n = n as f64;
    if let Some((i, p)) = expected.iter().enumerate().find(|(_, &p)| n * p < MIN_EXPECTED_COUNT) {
        return Err(Error::domain(format!(
            "cell {i} expects {} counts, below the minimum of {MIN_EXPECTED_COUNT}; pool sparse cells first",
            n * p
        )));
    }
    let statistic = observed
        .iter()
        .zip(expected)
        .map(|(&o, &p)| (o as f64 - n * p).powi(2) / (n * p))
        .sum();
    let dof = observed.len() - 1;
    let threshold = ChiSquared::new(dof as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(1.0 - alpha);
    Ok(ChiSquareResult {
        statistic,
        dof,
        threshold,
        passed: statistic < threshold,
    })
}

/// Merges cells from both ends inwards until every cell expects at least
/// `min_count` of `total` counts.
pub fn pool_sparse_cells(observed: &[u64], expected: &[f64], total: f64, min_count: f64) -> (Vec<u64>, Vec<f64>) {
    let mut cells: Vec<(u64, f64)> = observed.iter().copied().zip(expected.iter().copied()).collect();
    while cells.len() > 2 {
        let first = cells[0].1 * total < min_count;
        let last = cells[cells.len() - 1].1 * total < min_count;
        if first {
            let (o, p) = cells.remove(0);
            cells[0].0 += o;
            cells[0].1 += p;
        } else if last {
            let (o, p) = cells.pop().expect("more than two cells");
            let end = cells.len() - 1;
            cells[end].0 += o;
            cells[end].1 += p;
        } else {
            break;
        }
    }
    cells.into_iter().unzip()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

impl KsResult {
    /// Equality in distribution is not rejected at level `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_tail(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Independent positions drawn from the ensemble's position distribution:
/// a branch is picked by share, then a point from its Gaussian.
pub fn sample_positions(e: &Ensemble, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    check_nonempty(e)?;
    let pick = WeightedIndex::new(e.branches().iter().map(Branch::mass))
        .map_err(|err| Error::domain(format!("cannot sample branches: {err}")))?;
    Ok((0..n)
        .map(|_| {
            let b = &e.branches()[pick.sample(rng)];
            let z: f64 = StandardNormal.sample(rng);
            b.packet.center + b.packet.variance.sqrt() * z
        })
        .collect())
}

/// Z-score of the mean of `observable` over collapse trajectories against its
/// expectation in `reference`.
pub fn expectation_compare(
    collapse_runs: &[Ensemble],
    reference: &Ensemble,
    observable: impl Fn(&Branch) -> f64,
) -> Result<f64> {
    if collapse_runs.len() < 2 {
        return Err(Error::domain("need at least two collapse trajectories"));
    }
    let t = reference.time();
    let tol = 1e-9 * t.abs().max(1.0);
    let mut values = Vec::with_capacity(collapse_runs.len());
    for run in collapse_runs {
        if run.mode() != Mode::Collapse || run.len() != 1 {
            return Err(Error::domain("trajectories must be single-branch collapse ensembles"));
        }
        if (run.time() - t).abs() > tol {
            return Err(Error::domain(format!(
                "trajectory time {} does not match reference time {t}",
                run.time()
            )));
        }
        values.push(observable(&run.branches()[0]));
    }
    let target = expectation(reference, &observable)?;
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let se = (var / m).sqrt();
    let diff = mean - target;
    Ok(if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{evolve_ensemble_step, Share, StepConfig};
    use crate::tag::TagPath;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn branch(center: f64, variance: f64, share: Share, slot: u32) -> Branch {
        Branch {
            packet: GaussianPacket {
                center,
                variance,
                age: 0.0,
            },
            tag: TagPath::from_events(&[(1.0, slot)]).unwrap(),
            share,
            birth_time: 1.0,
        }
    }

    fn weighted(parts: &[(f64, f64, f64)]) -> Ensemble {
        let branches = parts
            .iter()
            .enumerate()
            .map(|(i, &(c, v, w))| branch(c, v, Share::Weight(w), i as u32))
            .collect();
        Ensemble::from_branches(branches, 1.0, Mode::Weighted).unwrap()
    }

    #[test]
    fn single_packet_variance_is_its_own() {
        let e = weighted(&[(3.0, 1.0, 1.0)]);
        assert_eq!(ensemble_position_variance(&e).unwrap(), 1.0);
    }

    #[test]
    fn two_point_mixture_variance() {
        let a = 2.5;
        let e = weighted(&[(10.0 - a, 1.0, 0.5), (10.0 + a, 1.0, 0.5)]);
        assert!((ensemble_position_variance(&e).unwrap() - (a * a + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_exact_lines() {
        let mut s = VarianceSeries::new();
        for k in 0..20 {
            s.push(k as f64, k as f64, 1.0).unwrap();
        }
        let fit = fit_diffusion(&s).unwrap();
        assert!((fit.d - 0.5).abs() < 1e-12);
        assert!(fit.stderr < 1e-12);

        let mut s = VarianceSeries::new();
        for k in 0..20 {
            let t = k as f64 * 0.5;
            s.push(t, 2.0 * 0.3 * t + 1.0, 1.0).unwrap();
        }
        let fit = fit_diffusion(&s).unwrap();
        assert!((fit.d - 0.3).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits_and_unordered_samples_are_rejected() {
        let mut s = VarianceSeries::new();
        s.push(1.0, 1.0, 1.0).unwrap();
        assert!(s.push(1.0, 2.0, 1.0).is_err());
        s.push(2.0, 2.0, 1.0).unwrap();
        assert!(matches!(fit_diffusion(&s), Err(Error::Domain(_))));
    }

    #[test]
    fn fit_on_random_walks_is_calibrated() {
        // Independent walkers: the per-time variance estimates are noisy
        // but the slope estimate should cover the truth most of the time.
        let mut covered = 0;
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = VarianceSeries::new();
            for k in 1..=60 {
                let n = 400;
                let xs: Vec<f64> = (0..n)
                    .map(|_| (k as f64).sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let m = xs.iter().sum::<f64>() / n as f64;
                let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                s.push(k as f64, v, n as f64).unwrap();
            }
            let fit = fit_diffusion(&s).unwrap();
            if (fit.d - 0.5).abs() < 2.0 * fit.stderr {
                covered += 1;
            }
        }
        assert!(covered >= 85, "covered {covered}");
    }

    #[test]
    fn tv_distance_examples() {
        assert_eq!(tv_to_uniform(&[0.25; 4]), 0.0);
        assert!((tv_to_uniform(&[1.0, 0.0, 0.0, 0.0]) - 0.75).abs() < 1e-15);
        assert!((tv_to_uniform(&[0.5, 0.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(coarse_entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((coarse_entropy(&[0.5, 0.5]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((coarse_entropy(&[1.0 / 16.0; 16]) - 2.772589).abs() < 1e-6);
    }

    #[test]
    fn histogram_of_concentrated_and_uniform_ensembles() {
        let p = PhysicalParams::new(1.0, 0.05, 1.0, 1.0, 20.0).unwrap();
        let e = weighted(&[(7.5, 0.0025, 1.0)]);
        let h = position_histogram(&e, &p, 4).unwrap();
        assert!((h[1] - 1.0).abs() < 1e-12);

        // Packets on every lattice point of a fine grid reproduce the
        // uniform density away from nothing: the wall images fill the edges.
        let n = 400;
        let parts: Vec<(f64, f64, f64)> = (0..n)
            .map(|i| ((i as f64 + 0.5) * 20.0 / n as f64, 0.0025, 1.0 / n as f64))
            .collect();
        let h = position_histogram(&weighted(&parts), &p, 20).unwrap();
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for x in &h {
            assert!((x - 0.05).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn histogram_rejects_bins_finer_than_w() {
        let p = PhysicalParams::default();
        let e = Ensemble::midbox(&p, Mode::Weighted);
        assert!(matches!(position_histogram(&e, &p, 21), Err(Error::Config(_))));
        assert!(matches!(position_histogram(&e, &p, 1), Err(Error::Config(_))));
    }

    #[test]
    fn histogram_folds_wall_tails_back() {
        let p = PhysicalParams::default();
        let e = weighted(&[(0.0, 1.0, 1.0)]);
        let h = position_histogram(&e, &p, 20).unwrap();
        // Half the packet lies beyond the wall and is reflected onto the other half.
        assert!((h[0] - 2.0 * standard_normal_mass(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn chi_square_examples() {
        let r = chi_square_frequencies(&[30, 10], &[0.75, 0.25], 0.001).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 1);
        assert!(r.passed);
        // Upper 0.1% point of chi-square with 1 dof.
        assert!((r.threshold - 10.827566).abs() < 1e-5);
        let r = chi_square_frequencies(&[100, 0], &[0.5, 0.5], 0.001).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn chi_square_refuses_sparse_cells() {
        assert!(chi_square_frequencies(&[9, 1], &[0.9, 0.1], 0.01).is_err());
        let (o, e) = pool_sparse_cells(&[1, 9, 80, 9, 1], &[0.01, 0.09, 0.8, 0.09, 0.01], 100.0, 5.0);
        assert_eq!(o, vec![10, 80, 10]);
        assert!((e[0] - 0.1).abs() < 1e-15);
        assert!(chi_square_frequencies(&o, &e, 0.01).unwrap().passed);
    }

    proptest! {
        #[test]
        fn chi_square_is_invariant_under_relabeling(
            raw in proptest::collection::vec(5u64..200, 3..8),
            shift in 0usize..8,
        ) {
            let n: u64 = raw.iter().sum();
            let expected: Vec<f64> = vec![1.0 / raw.len() as f64; raw.len()];
            prop_assume!(n as f64 / raw.len() as f64 >= 5.0);
            let a = chi_square_frequencies(&raw, &expected, 0.01).unwrap();
            let mut rotated = raw.clone();
            rotated.rotate_left(shift % raw.len());
            rotated.reverse();
            let b = chi_square_frequencies(&rotated, &expected, 0.01).unwrap();
            prop_assert!((a.statistic - b.statistic).abs() < 1e-9 * (1.0 + a.statistic));
        }

        #[test]
        fn entropy_is_at_most_log_bins(raw in proptest::collection::vec(0.0f64..1.0, 2..40)) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 1e-9);
            let h: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            prop_assert!(coarse_entropy(&h) <= (h.len() as f64).ln() + 1e-12);
            prop_assert!(tv_to_uniform(&h) >= 0.0 && tv_to_uniform(&h) <= 1.0);
        }
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let b: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let c: Vec<f64> = (0..3000).map(|_| 0.2 + rng.sample::<f64, _>(StandardNormal)).collect();
        assert!(ks_two_sample(&a, &b).unwrap().passes(0.01));
        assert!(!ks_two_sample(&a, &c).unwrap().passes(0.01));
    }

    #[test]
    fn ks_statistic_matches_brute_force() {
        let a = [0.1, 0.4, 0.4, 2.0];
        let b = [0.3, 0.4, 1.0];
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
        let brute = a
            .iter()
            .chain(&b)
            .map(|&x| (ecdf(&a, x) - ecdf(&b, x)).abs())
            .fold(0.0, f64::max);
        assert!((ks_two_sample(&a, &b).unwrap().statistic - brute).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // Classical critical values of the Kolmogorov distribution.
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 2e-4);
    }

    #[test]
    fn sampled_positions_follow_the_mixture() {
        let e = weighted(&[(-3.0, 1.0, 0.25), (5.0, 4.0, 0.75)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = sample_positions(&e, 200_000, &mut rng).unwrap();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((m - ensemble_position_mean(&e).unwrap()).abs() < 0.03);
        assert!((v - ensemble_position_variance(&e).unwrap()).abs() < 0.15);
    }

    fn collapse_at(center: f64, t: f64, slot: u32) -> Ensemble {
        Ensemble::from_branches(vec![branch(center, 1.0, Share::Weight(1.0), slot)], t, Mode::Collapse).unwrap()
    }

    #[test]
    fn expectation_compare_agrees_for_matching_sampling() {
        let reference = weighted(&[(2.0, 1.0, 0.5), (6.0, 1.0, 0.5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let runs: Vec<Ensemble> = (0..4000)
            .map(|i| {
                let c = if rng.random::<f64>() < 0.5 { 2.0 } else { 6.0 };
                collapse_at(c, 1.0, i)
            })
            .collect();
        let z = expectation_compare(&runs, &reference, |b| b.packet.center).unwrap();
        assert!(z.abs() < 3.0, "z {z}");

        let biased: Vec<Ensemble> = (0..4000).map(|i| collapse_at(2.0, 1.0, i)).collect();
        let z = expectation_compare(&biased, &reference, |b| b.packet.center).unwrap();
        assert!(z < -3.0);
    }

    #[test]
    fn expectation_compare_rejects_mismatched_times() {
        let reference = weighted(&[(2.0, 1.0, 1.0)]);
        let runs = vec![collapse_at(2.0, 1.0, 0), collapse_at(2.0, 2.0, 1)];
        assert!(matches!(
            expectation_compare(&runs, &reference, |b| b.packet.center),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn midbox_variance_after_fifty_steps() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 10_000.0).unwrap();
        let cfg = StepConfig {
            max_branches: 20_000,
            ..StepConfig::default()
        };
        let mut e = Ensemble::midbox(&p, Mode::Weighted);
        for _ in 0..50 {
            e = evolve_ensemble_step(&e, &p, &cfg).unwrap();
        }
        assert!(e.effective_size() >= 1e4);
        let v = ensemble_position_variance(&e).unwrap();
        assert!((v - 51.0).abs() < 0.05 * 51.0, "variance {v}");
    }
}
