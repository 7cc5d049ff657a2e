//! Branching decoherence dynamics.
//!
//! An [`Ensemble`] holds the live branches of one particle at a common time.
//! [`evolve_ensemble_step`] spreads every branch for one period and splits it
//! into lattice-placed offspring. Three bookkeeping modes are supported:
//!
//! * `Weighted`: each branch carries its Born weight.
//! * `Count`: each branch carries an integer multiplicity; offspring counts
//!   are apportioned from `parent multiplicity * fanout`.
//! * `Collapse`: after every split one offspring is kept at random.

mod apportion;
mod decohere;
mod step;

use std::fmt;
use std::str::FromStr;

pub use apportion::apportion_counts;
pub use decohere::{calibrated_offset_variance, decohere_branch, lattice_anchor, offspring_distribution, SplitRule};
pub use step::{cap_resample, evolve_ensemble_step, prune_to_collapse, verify_tag_uniqueness, TagReport};

use crate::error::{Error, Result};
use crate::model::{GaussianPacket, PhysicalParams};
use crate::tag::TagPath;

/// Tolerance on the weight sum of a weighted ensemble.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Weighted,
    Count,
    Collapse,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Weighted => "weighted",
            Mode::Count => "count",
            Mode::Collapse => "collapse",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "weighted" => Ok(Mode::Weighted),
            "count" => Ok(Mode::Count),
            "collapse" => Ok(Mode::Collapse),
            other => Err(format!("unknown mode `{other}` (expected weighted, count or collapse)")),
        }
    }
}

/// When decoherence events fire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Exactly once per period, at the end of the period.
    Deterministic,
    /// As a Poisson process with mean spacing of one period.
    Poisson,
}

impl Timing {
    pub fn as_str(self) -> &'static str {
        match self {
            Timing::Deterministic => "deterministic",
            Timing::Poisson => "poisson",
        }
    }
}

impl FromStr for Timing {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Timing::Deterministic),
            "poisson" => Ok(Timing::Poisson),
            other => Err(format!("unknown timing `{other}` (expected deterministic or poisson)")),
        }
    }
}

/// How the Gaussian that places offspring on the lattice is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetLaw {
    /// The Gaussian variance is solved for so that the lattice-discretised
    /// offspring have exactly the parent's excess variance about its center.
    Calibrated,
    /// The Gaussian variance equals the parent's excess variance; lattice
    /// rounding then adds about `bin_width^2 / 12` per event.
    Raw,
}

/// Share of the ensemble carried by one branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Share {
    Weight(f64),
    Count(u64),
}

impl Share {
    pub fn mass(&self) -> f64 {
        match *self {
            Share::Weight(w) => w,
            Share::Count(c) => c as f64,
        }
    }
}

/// One decoherent component.
#[derive(Debug, Clone)]
pub struct Branch {
    pub packet: GaussianPacket,
    pub tag: TagPath,
    pub share: Share,
    pub birth_time: f64,
}

impl Branch {
    pub fn mass(&self) -> f64 {
        self.share.mass()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub fanout: u32,
    pub max_branches: usize,
    pub timing: Timing,
    pub seed: u64,
    pub offset_law: OffsetLaw,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            fanout: 8,
            max_branches: 100_000,
            timing: Timing::Deterministic,
            seed: 42,
            offset_law: OffsetLaw::Calibrated,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fanout < 1 {
            return Err(Error::config("fanout must be at least 1"));
        }
        if self.max_branches < 1 {
            return Err(Error::config("max_branches must be at least 1"));
        }
        Ok(())
    }

    pub fn split_rule(&self) -> SplitRule {
        SplitRule {
            fanout: self.fanout,
            law: self.offset_law,
        }
    }
}

/// All live branches of one particle at a common time.
#[derive(Debug, Clone)]
pub struct Ensemble {
    branches: Vec<Branch>,
    time: f64,
    mode: Mode,
    generation: u64,
    /// Priority cut of the last capping step; only used to skip work.
    cut_hint: f64,
}

impl Ensemble {
    /// A single packet of width `w` at rest in the middle of the box.
    pub fn midbox(p: &PhysicalParams, mode: Mode) -> Self {
        Self::from_packet(GaussianPacket::fresh(p.box_length / 2.0, p), mode)
    }

    /// A single untagged branch carrying the whole share.
    pub fn from_packet(packet: GaussianPacket, mode: Mode) -> Self {
        Self::with_multiplicity(packet, mode, 1)
    }

    /// Like [`Ensemble::from_packet`]; in count mode the branch starts with
    /// `multiplicity` units.
    pub fn with_multiplicity(packet: GaussianPacket, mode: Mode, multiplicity: u64) -> Self {
        let share = match mode {
            Mode::Count => Share::Count(multiplicity.max(1)),
            Mode::Weighted | Mode::Collapse => Share::Weight(1.0),
        };
        Self {
            branches: vec![Branch {
                packet,
                tag: TagPath::root(),
                share,
                birth_time: 0.0,
            }],
            time: 0.0,
            mode,
            generation: 0,
            cut_hint: 0.0,
        }
    }

    /// Builds an ensemble, checking every structural invariant.
    pub fn from_branches(branches: Vec<Branch>, time: f64, mode: Mode) -> Result<Self> {
        let e = Self {
            branches,
            time,
            mode,
            generation: 0,
            cut_hint: 0.0,
        };
        e.validate()?;
        Ok(e)
    }

    pub(crate) fn from_parts(branches: Vec<Branch>, time: f64, mode: Mode, generation: u64) -> Self {
        Self {
            branches,
            time,
            mode,
            generation,
            cut_hint: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Logic("ensemble has no branches".into()));
        }
        if self.mode == Mode::Collapse && self.branches.len() != 1 {
            return Err(Error::Logic(format!(
                "collapse ensemble must hold exactly one branch, found {}",
                self.branches.len()
            )));
        }
        match self.mode {
            Mode::Weighted | Mode::Collapse => {
                let mut sum = 0.0;
                for b in &self.branches {
                    match b.share {
                        Share::Weight(w) if w > 0.0 && w <= 1.0 + WEIGHT_SUM_TOLERANCE => sum += w,
                        other => {
                            return Err(Error::Logic(format!(
                                "invalid share {other:?} in {} ensemble",
                                self.mode
                            )))
                        }
                    }
                }
                if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(Error::Logic(format!("weights sum to {sum}, not 1")));
                }
            }
            Mode::Count => {
                for b in &self.branches {
                    if !matches!(b.share, Share::Count(c) if c >= 1) {
                        return Err(Error::Logic(format!("invalid share {:?} in count ensemble", b.share)));
                    }
                }
            }
        }
        if let Some(b) = self.branches.iter().find(|b| b.birth_time > self.time) {
            return Err(Error::Logic(format!(
                "branch born at {} is ahead of ensemble time {}",
                b.birth_time, self.time
            )));
        }
        let report = verify_tag_uniqueness(&self.branches);
        if !report.passed {
            return Err(Error::Logic(format!("duplicate lineage: {report}")));
        }
        Ok(())
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn into_branches(self) -> Vec<Branch> {
        self.branches
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Number of steps taken since the ensemble was created.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    /// Total multiplicity in count mode, zero otherwise.
    pub fn total_count(&self) -> u64 {
        self.branches
            .iter()
            .map(|b| match b.share {
                Share::Count(c) => c,
                Share::Weight(_) => 0,
            })
            .sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.branches.iter().map(Branch::mass).sum()
    }

    /// Kish effective sample size `(sum m)^2 / sum m^2`.
    pub fn effective_size(&self) -> f64 {
        let (s, s2) = self
            .branches
            .iter()
            .fold((0.0, 0.0), |(s, s2), b| (s + b.mass(), s2 + b.mass() * b.mass()));
        if s2 > 0.0 {
            s * s / s2
        } else {
            0.0
        }
    }

    pub fn verify_tags(&self) -> TagReport {
        verify_tag_uniqueness(&self.branches)
    }
}
