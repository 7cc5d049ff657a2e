use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;

use super::config::{RunConfig, Scenario};
use super::output::{fmt_f64, series_csv, write_atomic, Check, Metric, SeriesRow};
use crate::engine::{
    decohere_branch, evolve_ensemble_step, offspring_distribution, Branch, Ensemble, Mode, Share, StepConfig, Timing,
};
use crate::error::{Error, Result};
use crate::model::{spread_variance, GaussianPacket, Interval, PhysicalParams};
use crate::oracle::{
    build_box_hamiltonian, fringe_content, grw_localization_channel, interference_visibility,
    lumped_weighted_reference, random_mixed_state, von_neumann_entropy, Grid, GridWavefunction, TaggedState,
};
use crate::rng::{combine, substream, Purpose};
use crate::stats::{
    chi_square_frequencies, coarse_entropy, ensemble_position_mean, entropy_noise_bound, expectation_compare,
    fit_diffusion, packet_histogram, pool_sparse_cells, tv_to_uniform, VarianceSeries, MIN_EXPECTED_COUNT,
};

/// Result of one scenario run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: RunConfig,
    pub metrics: Vec<(String, Metric)>,
    pub checks: Vec<Check>,
    pub series: Vec<SeriesRow>,
    /// Not written to the summary file, which must be reproducible.
    pub wall_clock: Duration,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn metric(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn series_file_name(&self) -> String {
        format!("{}.csv", self.config.scenario)
    }

    pub fn summary_file_name(&self) -> String {
        format!("{}.summary.toml", self.config.scenario)
    }

    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario = \"{}\"\n", self.config.scenario));
        out.push_str(&format!("passed = {}\n", self.passed()));
        out.push_str(&format!("series = \"{}\"\n", self.series_file_name()));
        out.push_str(&format!("series_rows = {}\n", self.series.len()));
        out.push_str("\n[config]\n");
        out.push_str(&self.config.to_document());
        out.push_str("\n[metrics]\n");
        for (name, m) in &self.metrics {
            out.push_str(&format!("{name} = {}\n", render_metric(m)));
        }
        out.push_str("\n[checks]\n");
        for c in &self.checks {
            out.push_str(&format!(
                "{} = {{ passed = {}, detail = \"{}\" }}\n",
                c.name,
                c.passed,
                escape(&c.detail)
            ));
        }
        out
    }
}

fn render_metric(m: &Metric) -> String {
    match m {
        Metric::Real(x) if x.is_nan() => "nan".into(),
        Metric::Real(x) if x.is_infinite() => if *x > 0.0 { "inf" } else { "-inf" }.into(),
        Metric::Real(x) => fmt_f64(*x),
        Metric::Int(i) => i.to_string(),
        Metric::Text(s) => format!("\"{}\"", escape(s)),
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Default)]
struct Report {
    metrics: Vec<(String, Metric)>,
    checks: Vec<Check>,
    series: Vec<SeriesRow>,
}

impl Report {
    fn real(&mut self, name: &str, x: f64) {
        self.metrics.push((name.into(), Metric::Real(x)));
    }

    fn int(&mut self, name: &str, i: i64) {
        self.metrics.push((name.into(), Metric::Int(i)));
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Runs the scenario and writes `<scenario>.csv` and `<scenario>.summary.toml`
/// into the output directory.
pub fn run_scenario(c: &RunConfig) -> Result<RunSummary> {
    let summary = simulate(c)?;
    let dir = &c.output_dir;
    write_atomic(&dir.join(summary.series_file_name()), &series_csv(&summary.series))?;
    write_atomic(&dir.join(summary.summary_file_name()), &summary.to_document())?;
    Ok(summary)
}

/// Runs the scenario without touching the file system.
pub fn simulate(c: &RunConfig) -> Result<RunSummary> {
    c.validate()?;
    let start = Instant::now();
    let report = match c.scenario {
        Scenario::Midbox => midbox(c)?,
        Scenario::Freespread => freespread(c)?,
        Scenario::BornTest => born_test(c)?,
        Scenario::PeresTest => peres_test(c)?,
        Scenario::CollapseCompare => collapse_compare(c)?,
        Scenario::LiouvilleCheck => liouville_check(c)?,
    };
    Ok(RunSummary {
        config: c.clone(),
        metrics: report.metrics,
        checks: report.checks,
        series: report.series,
        wall_clock: start.elapsed(),
    })
}

fn step_config(c: &RunConfig) -> StepConfig {
    StepConfig {
        fanout: c.fanout,
        max_branches: c.max_branches,
        timing: c.timing,
        seed: c.seed,
        ..StepConfig::default()
    }
}

fn initial_ensemble(c: &RunConfig) -> Ensemble {
    Ensemble::midbox(&c.params, c.mode)
}

/// Evolves the midbox ensemble, observing every step.
fn run_ensemble(c: &RunConfig, mut each: impl FnMut(&Ensemble) -> Result<()>) -> Result<Vec<SeriesRow>> {
    let p = &c.params;
    let cfg = step_config(c);
    let mut e = initial_ensemble(c);
    let mut rows = vec![SeriesRow::observe(&e, p, c.bins)?];
    each(&e)?;
    for _ in 0..c.steps {
        e = evolve_ensemble_step(&e, p, &cfg)?;
        rows.push(SeriesRow::observe(&e, p, c.bins)?);
        each(&e)?;
    }
    Ok(rows)
}

fn variance_series(rows: &[SeriesRow], keep: impl Fn(&SeriesRow) -> bool) -> Result<VarianceSeries> {
    let mut s = VarianceSeries::new();
    for r in rows.iter().filter(|r| keep(r)) {
        s.push(r.t, r.var_x, r.n_effective)?;
    }
    Ok(s)
}

fn diffusion_check(rep: &mut Report, p: &PhysicalParams, s: &VarianceSeries) {
    let target = p.diffusion_constant();
    rep.real("d_target", target);
    match fit_diffusion(s) {
        Ok(fit) => {
            rep.real("d_estimate", fit.d);
            rep.real("d_stderr", fit.stderr);
            rep.int("d_fit_samples", s.len() as i64);
            let rel = (fit.d - target).abs() / target;
            rep.check(
                "diffusion_constant",
                rel <= 0.10,
                format!(
                    "D = {:.6} vs {:.6}, relative error {:.4} (limit 0.10)",
                    fit.d, target, rel
                ),
            );
        }
        Err(e) => rep.check("diffusion_constant", false, format!("no estimate: {e}")),
    }
}

/// Checkpoint spacing in steps.
pub fn checkpoint_interval(steps: u64) -> u64 {
    (steps / 10).clamp(1, 100)
}

fn midbox(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let rows = run_ensemble(c, |_| Ok(()))?;

    // D is fitted while the packet is clear of the walls (4 sd inside).
    let clear = (p.box_length / 8.0).powi(2);
    let t_clear = rows.iter().take_while(|r| r.var_x <= clear).last().map_or(0.0, |r| r.t);
    let s = variance_series(&rows, |r| r.t > 0.0 && r.t <= t_clear)?;
    diffusion_check(&mut rep, p, &s);

    let every = checkpoint_interval(c.steps) as usize;
    let checkpoints: Vec<&SeriesRow> = rows.iter().step_by(every).collect();
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for pair in checkpoints.windows(2) {
        let drop = pair[0].coarse_entropy_nats - pair[1].coarse_entropy_nats;
        let bound = entropy_noise_bound(c.bins, pair[1].n_effective);
        worst = worst.max(drop - bound);
        ok &= drop <= bound;
    }
    rep.int("checkpoint_interval", every as i64);
    rep.real("entropy_worst_excess_drop", worst);
    rep.check(
        "entropy_nondecreasing",
        ok,
        format!("largest drop beyond the noise bound: {worst:.3e} nats"),
    );

    let last = rows.last().expect("initial row");
    rep.real("final_tv_uniform", last.tv_uniform);
    rep.real("final_coarse_entropy", last.coarse_entropy_nats);
    rep.real("max_coarse_entropy", (c.bins as f64).ln());

    let t_eq = 10.0 * p.equilibration_time();
    rep.real("equilibration_target_time", t_eq);
    let after: Vec<&&SeriesRow> = checkpoints.iter().filter(|r| r.t >= t_eq - 1e-9 * t_eq).collect();
    if after.len() >= 6 {
        let window = &after[..6];
        let worst_tv = window.iter().map(|r| r.tv_uniform).fold(0.0, f64::max);
        rep.real("equilibrated_max_tv", worst_tv);
        rep.check(
            "equilibrated",
            worst_tv < 0.05,
            format!(
                "TV distance at t = {} and 5 later checkpoints at most {worst_tv:.4} (limit 0.05)",
                window[0].t
            ),
        );
        let target = (c.bins as f64).ln();
        let rel = (last.coarse_entropy_nats - target).abs() / target;
        rep.check(
            "entropy_near_max",
            rel < 0.01,
            format!(
                "final entropy {:.6} vs ln {} = {target:.6}, relative gap {rel:.2e}",
                last.coarse_entropy_nats, c.bins
            ),
        );
    }
    rep.series = rows;
    Ok(rep)
}

fn freespread(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let rows = run_ensemble(c, |_| Ok(()))?;
    let w2 = p.width * p.width;
    let mut worst = 0.0f64;
    let mut min_eff = f64::INFINITY;
    for r in rows.iter().filter(|r| r.t >= 20.0 * p.period - 1e-9) {
        let k = (r.t / p.period).round();
        let target = w2 + k * p.step_variance();
        worst = worst.max((r.var_x - target).abs() / target);
        min_eff = min_eff.min(r.n_effective);
    }
    if min_eff.is_finite() {
        rep.real("ladder_max_relative_error", worst);
        rep.real("ladder_min_effective_branches", min_eff);
        rep.check(
            "variance_ladder",
            worst < 0.05,
            format!("largest relative deviation from w^2 + k delta^2 for k >= 20: {worst:.4} (limit 0.05)"),
        );
        rep.check(
            "effective_branches",
            min_eff >= 1e4,
            format!("smallest effective branch count for k >= 20: {min_eff:.1} (need 1e4)"),
        );
    } else {
        rep.check("variance_ladder", false, "needs at least 20 steps".into());
    }
    let s = variance_series(&rows, |r| r.t > 0.0)?;
    diffusion_check(&mut rep, p, &s);
    rep.series = rows;
    Ok(rep)
}

/// A parent sitting on a cell boundary, spread for `dt`.
fn born_parent(p: &PhysicalParams, dt: f64, multiplicity: u64) -> Result<Branch> {
    let packet = GaussianPacket::fresh(p.box_length / 2.0 + p.width / 2.0, p).advanced(dt, p)?;
    Ok(Branch {
        packet,
        tag: Default::default(),
        share: Share::Count(multiplicity),
        birth_time: 0.0,
    })
}

/// Expected weights for count-mode leaves, recomputed from the event time
/// recorded in their tags. Returns `(observed, expected)` over all cells.
fn born_cells(p: &PhysicalParams, c: &RunConfig, leaves: &[Branch]) -> Result<(Vec<u64>, Vec<f64>)> {
    let (t_event, _) = leaves[0]
        .tag
        .last_event()
        .ok_or_else(|| Error::Logic("leaf without a decoherence event".into()))?;
    let w2 = p.width * p.width;
    let excess = spread_variance(w2, t_event, p)? - w2;
    let center = p.box_length / 2.0 + p.width / 2.0;
    let bins = offspring_distribution(center, excess, p.width, step_config(c).offset_law)?;
    let mut observed = vec![0u64; bins.len()];
    for leaf in leaves {
        let (t, i) = leaf.tag.last_event().expect("leaf has an event");
        if t != t_event || leaf.tag.depth() != 1 {
            return Err(Error::Logic("leaves do not share a single event".into()));
        }
        if let Share::Count(n) = leaf.share {
            observed[i as usize] += n;
        }
    }
    Ok((observed, bins.iter().map(|b| b.weight).collect()))
}

pub const BORN_TOTAL: u64 = 10_000;

fn born_test(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let m = BORN_TOTAL.div_ceil(c.fanout as u64);
    let total = m * c.fanout as u64;
    rep.int("total_count", total as i64);

    // One event at the end of a period.
    let start = Ensemble::from_branches(vec![born_parent(p, 0.0, m)?], 0.0, Mode::Count)?;
    let rule = step_config(c).split_rule();
    let parent = born_parent(p, p.period, m)?;
    let leaves = decohere_branch(&parent, p, Mode::Count, &rule, p.period)?;
    let after = Ensemble::from_branches(leaves.clone(), p.period, Mode::Count)?;
    rep.series = vec![
        SeriesRow::observe(&start, p, c.bins)?,
        SeriesRow::observe(&after, p, c.bins)?,
    ];
    let (observed, expected) = born_cells(p, c, &leaves)?;
    let n = total as f64;
    let worst = observed
        .iter()
        .zip(&expected)
        .map(|(&o, &w)| (o as f64 - w * n).abs())
        .fold(0.0, f64::max);
    rep.int("deterministic_bins", expected.len() as i64);
    rep.real("deterministic_max_count_error", worst);
    rep.check(
        "born_deterministic",
        worst < 1.0,
        format!(
            "{} bins; largest |count - weight * N| = {worst:.4} (fraction bound 1/N = {:.1e})",
            expected.len(),
            1.0 / n
        ),
    );
    chi_square_check(&mut rep, "deterministic", &observed, &expected, n)?;

    // One event at an exponentially distributed time.
    let mut rng = substream(c.seed, Purpose::Timing, 0, 0);
    let t_event = Exp::new(1.0 / p.period)
        .map_err(|e| Error::config(format!("tau: {e}")))?
        .sample(&mut rng);
    rep.real("poisson_event_time", t_event);
    let parent = born_parent(p, t_event, m)?;
    let leaves = decohere_branch(&parent, p, Mode::Count, &rule, t_event)?;
    let (observed, expected) = born_cells(p, c, &leaves)?;
    rep.int("poisson_bins", expected.len() as i64);
    chi_square_check(&mut rep, "poisson", &observed, &expected, n)?;
    Ok(rep)
}

pub const BORN_ALPHA: f64 = 0.001;

fn chi_square_check(rep: &mut Report, label: &str, observed: &[u64], expected: &[f64], n: f64) -> Result<()> {
    let (o, e) = pool_sparse_cells(observed, expected, n, MIN_EXPECTED_COUNT);
    let name = format!("born_chi_square_{label}");
    if o.len() < 2 {
        rep.real(&format!("{label}_chi_square"), 0.0);
        rep.check(&name, true, "a single cell holds all the mass; nothing to test".into());
        return Ok(());
    }
    let r = chi_square_frequencies(&o, &e, BORN_ALPHA)?;
    rep.real(&format!("{label}_chi_square"), r.statistic);
    rep.real(&format!("{label}_chi_square_threshold"), r.threshold);
    rep.check(
        &name,
        r.passed,
        format!(
            "statistic {:.4e} on {} dof, threshold {:.4} at alpha {BORN_ALPHA}",
            r.statistic, r.dof, r.threshold
        ),
    );
    Ok(())
}

/// Per-trajectory seed.
pub fn trajectory_seed(seed: u64, index: usize) -> u64 {
    combine(combine(seed, Purpose::Trajectory as u64), index as u64)
}

/// One collapse trajectory that keeps each offspring with probability
/// proportional to its squared weight instead of its weight.
fn squared_weight_trajectory(p: &PhysicalParams, c: &RunConfig, index: usize) -> Result<Branch> {
    let rule = step_config(c).split_rule();
    let mut rng = substream(trajectory_seed(c.seed, index), Purpose::Prune, u64::MAX, 0);
    let mut b = Ensemble::midbox(p, Mode::Collapse).into_branches().remove(0);
    for step in 1..=c.steps {
        let t = step as f64 * p.period;
        let mut spread = b.clone();
        spread.packet = b.packet.advanced(p.period, p)?;
        let offspring = decohere_branch(&spread, p, Mode::Collapse, &rule, t)?;
        let total: f64 = offspring.iter().map(|o| o.mass().powi(2)).sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = offspring.len() - 1;
        for (i, o) in offspring.iter().enumerate() {
            u -= o.mass().powi(2);
            if u <= 0.0 {
                pick = i;
                break;
            }
        }
        b = offspring.into_iter().nth(pick).expect("index in range");
        b.share = Share::Weight(1.0);
    }
    Ok(b)
}

fn pooled_row(t: f64, branches: &[&Branch], p: &PhysicalParams, bins: usize) -> Result<SeriesRow> {
    let m = branches.len() as f64;
    let mean = branches.iter().map(|b| b.packet.center).sum::<f64>() / m;
    let var = branches
        .iter()
        .map(|b| (b.packet.center - mean).powi(2) + b.packet.variance)
        .sum::<f64>()
        / m;
    let h = packet_histogram(branches.iter().map(|b| (b.packet, 1.0)), p, bins)?;
    Ok(SeriesRow {
        t,
        n_branches: branches.len(),
        n_effective: m,
        mean_x: mean,
        var_x: var,
        coarse_entropy_nats: coarse_entropy(&h),
        tv_uniform: tv_to_uniform(&h),
    })
}

pub const Z_LIMIT: f64 = 3.0;

fn pool(runs: &[Ensemble]) -> Vec<&Branch> {
    runs.iter().map(|e| &e.branches()[0]).collect()
}

fn collapse_compare(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let n = c.trajectories;
    let configs: Vec<StepConfig> = (0..n)
        .map(|i| StepConfig {
            seed: trajectory_seed(c.seed, i),
            ..step_config(c)
        })
        .collect();
    let mut runs: Vec<Ensemble> = (0..n).map(|_| Ensemble::midbox(p, Mode::Collapse)).collect();
    let mut rows = vec![pooled_row(0.0, &pool(&runs), p, c.bins)?];
    for _ in 0..c.steps {
        runs = runs
            .par_iter()
            .zip(&configs)
            .map(|(e, cfg)| evolve_ensemble_step(e, p, cfg))
            .collect::<Result<_>>()?;
        rows.push(pooled_row(runs[0].time(), &pool(&runs), p, c.bins)?);
    }
    rep.series = rows;

    let reference = lumped_weighted_reference(p, step_config(c).offset_law, p.box_length / 2.0, c.steps as usize)?;
    let mu = ensemble_position_mean(&reference)?;
    let spread = |b: &Branch| (b.packet.center - mu).powi(2) + b.packet.variance;
    let z_mean = expectation_compare(&runs, &reference, |b| b.packet.center)?;
    let z_var = expectation_compare(&runs, &reference, spread)?;
    rep.int("trajectories", n as i64);
    rep.real("reference_mean", mu);
    rep.real("z_mean", z_mean);
    rep.real("z_variance", z_var);
    rep.check(
        "mean_unbiased",
        z_mean.abs() < Z_LIMIT,
        format!("|z| = {:.3} (limit {Z_LIMIT})", z_mean.abs()),
    );
    rep.check(
        "variance_unbiased",
        z_var.abs() < Z_LIMIT,
        format!("|z| = {:.3} (limit {Z_LIMIT})", z_var.abs()),
    );

    let biased: Vec<Ensemble> = (0..n)
        .into_par_iter()
        .map(|i| {
            let b = squared_weight_trajectory(p, c, i)?;
            Ensemble::from_branches(vec![b], reference.time(), Mode::Collapse)
        })
        .collect::<Result<_>>()?;
    let zb_mean = expectation_compare(&biased, &reference, |b| b.packet.center)?;
    let zb_var = expectation_compare(&biased, &reference, spread)?;
    rep.real("biased_z_mean", zb_mean);
    rep.real("biased_z_variance", zb_var);
    let zb = zb_mean.abs().max(zb_var.abs());
    rep.check(
        "biased_pruning_detected",
        zb > Z_LIMIT,
        format!("squared-weight pruning gives max |z| = {zb:.3} (must exceed {Z_LIMIT})"),
    );
    Ok(rep)
}

pub const LIOUVILLE_STATES: usize = 20;
pub const CHANNEL_STATES: usize = 100;
pub const LOW_ENTROPY_STATES: usize = 20;

fn oracle_grid(c: &RunConfig) -> Result<Grid> {
    Grid::new(c.grid, &c.params).map_err(|e| Error::config(format!("grid: {e}")))
}

fn liouville_check(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let grid = oracle_grid(c)?;
    let h = build_box_hamiltonian(grid.n, p)?;
    let mut rng = substream(c.seed, Purpose::Oracle, 0, 0);

    let mut worst = 0.0f64;
    for _ in 0..LIOUVILLE_STATES {
        let rho = random_mixed_state(grid, p, &mut rng)?;
        let s0 = von_neumann_entropy(&rho)?;
        let s1 = von_neumann_entropy(&h.evolve_density(&rho, p.period, c.steps as usize)?)?;
        worst = worst.max((s1 - s0).abs());
    }
    rep.real("liouville_max_abs_delta_s", worst);
    rep.check(
        "liouville_conservation",
        worst < 1e-8,
        format!(
            "{LIOUVILLE_STATES} states, {} unitary steps: max |dS| = {worst:.3e} nats (limit 1e-8)",
            c.steps
        ),
    );

    let mut gains = Vec::with_capacity(CHANNEL_STATES);
    for _ in 0..CHANNEL_STATES {
        let rho = random_mixed_state(grid, p, &mut rng)?;
        let before = von_neumann_entropy(&rho)?;
        let after = von_neumann_entropy(&grw_localization_channel(&rho, p)?)?;
        gains.push((before, after - before));
    }
    let min_gain = gains.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
    gains.sort_by(|a, b| a.0.total_cmp(&b.0));
    let low_gain = gains[..LOW_ENTROPY_STATES]
        .iter()
        .map(|g| g.1)
        .fold(f64::INFINITY, f64::min);
    rep.real("channel_min_gain", min_gain);
    rep.real("channel_min_gain_low_entropy", low_gain);
    rep.check(
        "channel_monotone",
        min_gain >= -1e-10,
        format!("{CHANNEL_STATES} states: smallest entropy change {min_gain:.3e} nats"),
    );
    rep.check(
        "channel_strict_increase",
        low_gain > 0.01,
        format!("{LOW_ENTROPY_STATES} lowest-entropy states: smallest gain {low_gain:.4} nats (need > 0.01)"),
    );
    Ok(rep)
}

/// Cap used for the long tag-uniqueness run.
pub const PERES_CAP: usize = 64;

fn peres_test(c: &RunConfig) -> Result<Report> {
    let p = &c.params;
    let mut rep = Report::default();
    let grid = oracle_grid(c)?;
    let h = build_box_hamiltonian(grid.n, p)?;
    let (mid, w) = (p.box_length / 2.0, p.width);
    let k0 = 2.0 / w;
    let t_meet = 10.0 * w / (p.hbar * k0 / p.mass);
    let a = GridWavefunction::gaussian(grid, mid - 10.0 * w, w, k0)?;
    let b = GridWavefunction::gaussian(grid, mid + 10.0 * w, w, -k0)?;
    let terms = [(0.5, a), (0.5, b)];
    let evolve = |psi: &GridWavefunction| h.evolve_wavefunction(psi, t_meet);
    let coherent = TaggedState::coherent(&terms)?.map(evolve)?;
    let tagged = TaggedState::decohered(&terms, 0.0)?.map(evolve)?;
    let region = Interval::new(mid - 2.0 * w, mid + 2.0 * w);
    let vis_coherent = interference_visibility(&coherent, region)?;
    let vis_tagged = interference_visibility(&tagged, region)?;
    let fringe_coherent = fringe_content(&coherent);
    let fringe_tagged = fringe_content(&tagged);
    rep.real("overlap_time", t_meet);
    rep.real("coherent_visibility", vis_coherent);
    rep.real("tagged_visibility", vis_tagged);
    rep.real("coherent_fringe_content", fringe_coherent);
    rep.real("tagged_fringe_content", fringe_tagged);
    rep.check(
        "coherent_visibility",
        vis_coherent > 0.5,
        format!("{vis_coherent:.4} (need > 0.5)"),
    );
    rep.check(
        "tagged_fringe_content",
        fringe_tagged < 1e-12,
        format!("{fringe_tagged:.3e} of the envelope (limit 1e-12)"),
    );
    rep.check(
        "fringe_contrast",
        fringe_coherent >= 1e6 * fringe_tagged,
        format!("coherent {fringe_coherent:.3e} vs tagged {fringe_tagged:.3e} (need a factor 1e6)"),
    );

    let tag_run = RunConfig {
        max_branches: PERES_CAP.min(c.max_branches),
        timing: Timing::Poisson,
        ..c.clone()
    };
    let mut checked = 0usize;
    let mut first_failure: Option<String> = None;
    let rows = run_ensemble(&tag_run, |e| {
        let r = e.verify_tags();
        checked += 1;
        if !r.passed && first_failure.is_none() {
            first_failure = Some(format!("t = {}: {r}", e.time()));
        }
        Ok(())
    })?;
    rep.int("tag_steps", c.steps as i64);
    rep.check(
        "tag_uniqueness",
        first_failure.is_none(),
        first_failure.unwrap_or_else(|| format!("lineages distinct at all {checked} observed times")),
    );
    rep.series = rows;
    Ok(rep)
}
