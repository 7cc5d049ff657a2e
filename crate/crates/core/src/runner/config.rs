use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::engine::{Mode, Timing};
use crate::error::{Error, Result};
use crate::model::PhysicalParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Midbox,
    Freespread,
    BornTest,
    PeresTest,
    CollapseCompare,
    LiouvilleCheck,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::Midbox,
        Scenario::Freespread,
        Scenario::BornTest,
        Scenario::PeresTest,
        Scenario::CollapseCompare,
        Scenario::LiouvilleCheck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Midbox => "midbox",
            Scenario::Freespread => "freespread",
            Scenario::BornTest => "born_test",
            Scenario::PeresTest => "peres_test",
            Scenario::CollapseCompare => "collapse_compare",
            Scenario::LiouvilleCheck => "liouville_check",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|sc| sc.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
            format!("unknown scenario `{s}` (expected one of {})", names.join(", "))
        })
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub params: PhysicalParams,
    pub mode: Mode,
    pub steps: u64,
    pub fanout: u32,
    pub max_branches: usize,
    pub bins: usize,
    pub seed: u64,
    pub timing: Timing,
    pub output_dir: PathBuf,
    /// Grid points of the quantum oracle (liouville_check, peres_test).
    pub grid: usize,
    /// Number of collapse trajectories (collapse_compare).
    pub trajectories: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Midbox,
            params: PhysicalParams::default(),
            mode: Mode::Weighted,
            steps: 200,
            fanout: 8,
            max_branches: 100_000,
            bins: 20,
            seed: 42,
            timing: Timing::Deterministic,
            output_dir: PathBuf::from("out"),
            grid: 128,
            trajectories: 10_000,
        }
    }
}

pub const KEYS: [&str; 16] = [
    "scenario",
    "m",
    "w",
    "tau",
    "hbar",
    "L",
    "mode",
    "steps",
    "fanout",
    "max_branches",
    "bins",
    "seed",
    "timing",
    "output_dir",
    "grid",
    "trajectories",
];

fn number<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn positive<T: FromStr + PartialOrd + Default>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let v: T = number(key, value)?;
    if v <= T::default() {
        return Err(Error::config(format!("{key}: must be positive, got {value}")));
    }
    Ok(v)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.params;
        let tagged = |e: String| Error::config(format!("{key}: {e}"));
        match key {
            "scenario" => self.scenario = value.parse().map_err(tagged)?,
            "m" => p.mass = number(key, value)?,
            "w" => p.width = number(key, value)?,
            "tau" => p.period = number(key, value)?,
            "hbar" => p.hbar = number(key, value)?,
            "L" => p.box_length = number(key, value)?,
            "mode" => self.mode = value.parse().map_err(tagged)?,
            "steps" => self.steps = positive(key, value)?,
            "fanout" => self.fanout = positive(key, value)?,
            "max_branches" => self.max_branches = positive(key, value)?,
            "bins" => self.bins = positive(key, value)?,
            "seed" => self.seed = number(key, value)?,
            "timing" => self.timing = value.parse().map_err(tagged)?,
            "output_dir" => {
                if value.is_empty() {
                    return Err(Error::config("output_dir: must not be empty"));
                }
                self.output_dir = PathBuf::from(value)
            }
            "grid" => self.grid = positive(key, value)?,
            "trajectories" => self.trajectories = positive(key, value)?,
            other => {
                return Err(Error::config(format!(
                    "unknown key `{other}` (expected one of {})",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Checks the physical parameters and the scenario's own requirements.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let p = &self.params;
        match self.scenario {
            Scenario::Freespread => {
                let spread = (p.width * p.width + self.steps as f64 * p.step_variance()).sqrt();
                if p.box_length / 2.0 < 10.0 * spread {
                    return Err(Error::config(format!(
                        "L: freespread needs L/2 >= 10 standard deviations of the final spread ({}), got L = {}",
                        10.0 * spread,
                        p.box_length
                    )));
                }
            }
            Scenario::PeresTest => {
                if p.box_length / 2.0 < 16.0 * p.width {
                    return Err(Error::config(format!(
                        "L: peres_test places packets 10 w either side of the middle and needs L >= 32 w, got L = {}",
                        p.box_length
                    )));
                }
            }
            Scenario::CollapseCompare => {
                if self.timing != Timing::Deterministic {
                    return Err(Error::config(
                        "timing: collapse_compare needs deterministic timing for its exact reference",
                    ));
                }
                if self.mode != Mode::Collapse {
                    return Err(Error::config("mode: collapse_compare runs in collapse mode"));
                }
                if self.trajectories < 2 {
                    return Err(Error::config("trajectories: need at least 2"));
                }
            }
            Scenario::BornTest => {
                if self.mode != Mode::Count {
                    return Err(Error::config("mode: born_test runs in count mode"));
                }
            }
            Scenario::Midbox | Scenario::LiouvilleCheck => {}
        }
        if self.scenario != Scenario::LiouvilleCheck && p.box_length / (self.bins as f64) < p.width {
            return Err(Error::config(format!(
                "bins: {} bins are narrower than w = {}",
                self.bins, p.width
            )));
        }
        Ok(())
    }

    /// Canonical `key = value` lines, one per key, in a fixed order.
    pub fn to_document(&self) -> String {
        let p = &self.params;
        let f = |x: f64| format!("{x:.16e}");
        let pairs: [(&str, String); 16] = [
            ("scenario", format!("\"{}\"", self.scenario)),
            ("m", f(p.mass)),
            ("w", f(p.width)),
            ("tau", f(p.period)),
            ("hbar", f(p.hbar)),
            ("L", f(p.box_length)),
            ("mode", format!("\"{}\"", self.mode)),
            ("steps", self.steps.to_string()),
            ("fanout", self.fanout.to_string()),
            ("max_branches", self.max_branches.to_string()),
            ("bins", self.bins.to_string()),
            ("seed", self.seed.to_string()),
            ("timing", format!("\"{}\"", self.timing.as_str())),
            ("output_dir", format!("\"{}\"", self.output_dir.display())),
            ("grid", self.grid.to_string()),
            ("trajectories", self.trajectories.to_string()),
        ];
        pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Splits on newlines and on commas outside quotes, dropping `#` comments.
fn entries(text: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut cur = String::new();
        let mut quoted = false;
        for ch in line.chars() {
            match ch {
                '"' => {
                    quoted = !quoted;
                    cur.push(ch);
                }
                '#' if !quoted => break,
                ',' if !quoted => out.push((lineno + 1, std::mem::take(&mut cur))),
                _ => cur.push(ch),
            }
        }
        if quoted {
            return Err(Error::config(format!("line {}: unterminated quote", lineno + 1)));
        }
        out.push((lineno + 1, cur));
    }
    out.retain(|(_, e)| !e.trim().is_empty());
    Ok(out)
}

/// Parses a flat `key = value` document on top of the defaults.
///
/// Entries are separated by newlines or commas; values may be quoted; `#`
/// starts a comment. Unknown keys are rejected. Without an explicit `mode`,
/// born_test runs in count mode and collapse_compare in collapse mode.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with_overrides(text, &[])
}

/// Like [`parse_config`], with `overrides` taking precedence over the document.
pub fn parse_config_with_overrides(text: &str, overrides: &[(&str, String)]) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (line, entry) in entries(text)? {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {line}: expected `key = value`, got `{}`", entry.trim())))?;
        let key = key.trim();
        let mut value = value.trim();
        if value.len() >= 2 && value.starts_with('"') && value.ends_with('"') {
            value = &value[1..value.len() - 1];
        }
        if seen.iter().any(|k| k == key) {
            return Err(Error::config(format!("line {line}: {key}: set more than once")));
        }
        c.set(key, value)
            .map_err(|e| Error::config(format!("line {line}: {}", strip(e))))?;
        seen.push(key.to_string());
    }
    for (key, value) in overrides {
        c.set(key, value)?;
        seen.push(key.to_string());
    }
    if !seen.iter().any(|k| k == "mode") {
        match c.scenario {
            Scenario::BornTest => c.mode = Mode::Count,
            Scenario::CollapseCompare => c.mode = Mode::Collapse,
            _ => {}
        }
    }
    c.validate()?;
    Ok(c)
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) | Error::Numerical(m) | Error::Logic(m) | Error::Io(m) => m,
    }
}
