//! Single-packet laws: free spreading, lattice discretisation of Gaussian
//! mass, and reflection at the box walls.

use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};

/// Gaussians are cut off this many standard deviations from their center.
pub const TRUNCATION_SIGMAS: f64 = 6.0;

/// Constants of the toy model.
///
/// `width` is the position standard deviation of a freshly localized packet
/// and `period` the time between decoherence events.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalParams {
    pub mass: f64,
    pub width: f64,
    pub period: f64,
    pub hbar: f64,
    pub box_length: f64,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            width: 1.0,
            period: 1.0,
            hbar: 1.0,
            box_length: 20.0,
        }
    }
}

impl PhysicalParams {
    pub fn new(mass: f64, width: f64, period: f64, hbar: f64, box_length: f64) -> Result<Self> {
        let p = Self {
            mass,
            width,
            period,
            hbar,
            box_length,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("m", self.mass),
            ("w", self.width),
            ("tau", self.period),
            ("hbar", self.hbar),
            ("L", self.box_length),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(format!(
                    "{name} must be finite and strictly positive, got {value}"
                )));
            }
        }
        if self.width > self.box_length / 20.0 {
            return Err(Error::config(format!(
                "w = {} exceeds L/20 = {}; packet tails would reach the walls",
                self.width,
                self.box_length / 20.0
            )));
        }
        let step = step_offset_variance(self);
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::config(format!(
                "step variance (tau*hbar/(m*w))^2 = {step} is not finite and positive"
            )));
        }
        Ok(())
    }

    /// Squared step scale `delta^2 = (tau*hbar/(m*w))^2`.
    pub fn step_variance(&self) -> f64 {
        step_offset_variance(self)
    }

    /// Diffusion constant under the `var(t) = 2*D*t` convention.
    pub fn diffusion_constant(&self) -> f64 {
        self.step_variance() / (2.0 * self.period)
    }

    /// `L^2 / D`, the time scale on which the box equilibrates.
    pub fn equilibration_time(&self) -> f64 {
        self.box_length * self.box_length / self.diffusion_constant()
    }
}

/// Variance of a free packet of initial variance `var0` after `dt`:
/// `var0 + (dt*hbar/(m*sqrt(var0)))^2`.
pub fn spread_variance(var0: f64, dt: f64, p: &PhysicalParams) -> Result<f64> {
    if !(var0 > 0.0 && var0.is_finite()) {
        return Err(Error::domain(format!("initial variance must be positive, got {var0}")));
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("elapsed time must be non-negative, got {dt}")));
    }
    let growth = dt * p.hbar / (p.mass * var0.sqrt());
    Ok(var0 + growth * growth)
}

/// Variance added by one period of spreading of a width-`w` packet.
pub fn step_offset_variance(p: &PhysicalParams) -> f64 {
    let step = p.period * p.hbar / (p.mass * p.width);
    step * step
}

/// A closed interval, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Probability mass of one lattice cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinWeight {
    /// Lattice index; the cell is `[(index - 1/2) * pitch, (index + 1/2) * pitch]`.
    pub index: i64,
    pub center: f64,
    pub weight: f64,
}

/// Mass of the standard normal on `[a, b]`, evaluated on the side of zero
/// that avoids cancellation.
pub fn standard_normal_mass(a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let s = std::f64::consts::SQRT_2;
    if a >= 0.0 {
        0.5 * (erfc(a / s) - erfc(b / s))
    } else if b <= 0.0 {
        0.5 * (erfc(-b / s) - erfc(-a / s))
    } else {
        0.5 * (erf(b / s) - erf(a / s))
    }
}

/// Standard normal tail beyond `z` on the side of zero `z` lies on, so that
/// neighbouring edges share one evaluation without losing the far tails.
#[derive(Clone, Copy)]
struct EdgeTail {
    z: f64,
    tail: f64,
}

impl EdgeTail {
    fn at(z: f64) -> Self {
        let tail = 0.5 * erfc(z.abs() / std::f64::consts::SQRT_2);
        Self { z, tail }
    }

    fn mass_to(self, right: EdgeTail) -> f64 {
        let m = if right.z <= self.z {
            0.0
        } else if self.z >= 0.0 {
            self.tail - right.tail
        } else if right.z <= 0.0 {
            right.tail - self.tail
        } else {
            1.0 - self.tail - right.tail
        };
        m.max(0.0)
    }
}

/// Gaussian mass per lattice cell.
///
/// Cells have pitch `bin_width` and are centered on integer multiples of it.
/// The Gaussian is truncated at six standard deviations and intersected with
/// `support`; the surviving cell masses are renormalized to sum to one.
pub fn bin_weights(center: f64, variance: f64, bin_width: f64, support: Interval) -> Result<Vec<BinWeight>> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::domain(format!("variance must be positive, got {variance}")));
    }
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::domain(format!("bin width must be positive, got {bin_width}")));
    }
    if !center.is_finite() {
        return Err(Error::domain("center must be finite"));
    }
    let sigma = variance.sqrt();
    let lo = (center - TRUNCATION_SIGMAS * sigma).max(support.lo);
    let hi = (center + TRUNCATION_SIGMAS * sigma).min(support.hi);
    if !(lo < hi) {
        return Err(Error::domain(format!(
            "truncated Gaussian at {center} (sd {sigma}) does not overlap the support [{}, {}]",
            support.lo, support.hi
        )));
    }
    let first = (lo / bin_width + 0.5).floor() as i64;
    let last = (hi / bin_width + 0.5).floor() as i64;
    let mut out = Vec::with_capacity((last - first + 1) as usize);
    let mut total = 0.0;
    let edge = |x: f64| EdgeTail::at((x - center) / sigma);
    let mut left = edge(((first as f64 - 0.5) * bin_width).max(lo));
    for index in first..=last {
        let right = edge(((index as f64 + 0.5) * bin_width).min(hi));
        let mass = left.mass_to(right);
        left = right;
        if mass > 0.0 {
            total += mass;
            out.push(BinWeight {
                index,
                center: index as f64 * bin_width,
                weight: mass,
            });
        }
    }
    if !(total > 0.0) {
        return Err(Error::domain("no Gaussian mass falls inside the support"));
    }
    for bin in &mut out {
        bin.weight /= total;
    }
    Ok(out)
}

/// Folds `x` into `[0, length]` by the method of images: period `2*length`,
/// upper half mirrored.
pub fn reflect_center(x: f64, length: f64) -> f64 {
    if (0.0..=length).contains(&x) {
        return x;
    }
    let period = 2.0 * length;
    let y = x.rem_euclid(period);
    if y > length {
        period - y
    } else {
        y
    }
}

/// One decoherent Gaussian component at rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPacket {
    pub center: f64,
    /// Position variance.
    pub variance: f64,
    /// Time since the last localization.
    pub age: f64,
}

impl GaussianPacket {
    /// A freshly localized packet of variance `w^2`.
    pub fn fresh(center: f64, p: &PhysicalParams) -> Self {
        Self {
            center,
            variance: p.width * p.width,
            age: 0.0,
        }
    }

    /// The same packet `dt` later. Spreading is measured from the last
    /// localization, not compounded.
    pub fn advanced(&self, dt: f64, p: &PhysicalParams) -> Result<Self> {
        let age = self.age + dt;
        Ok(Self {
            center: self.center,
            variance: spread_variance(p.width * p.width, age, p)?,
            age,
        })
    }
}
