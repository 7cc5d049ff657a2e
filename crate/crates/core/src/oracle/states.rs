use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;

use super::grid::{Grid, GridDensityMatrix, GridWavefunction};
use crate::error::{Error, Result};
use crate::model::{Interval, PhysicalParams};
use crate::tag::TagPath;

/// A random pure state: a superposition of one to three Gaussian packets
/// with random centers, widths in `[w, 3w]`, wavenumbers and complex weights.
pub fn random_pure_state(grid: Grid, p: &PhysicalParams, rng: &mut impl Rng) -> Result<GridWavefunction> {
    let packets = rng.random_range(1..=3);
    let mut amps = DVector::<Complex64>::zeros(grid.n);
    for _ in 0..packets {
        let sigma = rng.random_range(p.width..=3.0 * p.width);
        let margin = (4.0 * sigma).min(0.45 * grid.length);
        let center = rng.random_range(margin..grid.length - margin);
        let k = rng.random_range(-1.0..1.0) / p.width;
        let c = Complex64::from_polar(rng.random_range(0.2..1.0), rng.random_range(0.0..std::f64::consts::TAU));
        let g = GridWavefunction::gaussian(grid, center, sigma, k)?;
        amps += g.amplitudes() * c;
    }
    GridWavefunction::new(amps, grid)
}

/// A random mixture of one to six random pure states.
pub fn random_mixed_state(grid: Grid, p: &PhysicalParams, rng: &mut impl Rng) -> Result<GridDensityMatrix> {
    let rank = rng.random_range(1..=6);
    let states = (0..rank)
        .map(|_| random_pure_state(grid, p, rng))
        .collect::<Result<Vec<_>>>()?;
    let weights: Vec<f64> = (0..rank).map(|_| rng.random_range(0.05..1.0)).collect();
    let terms: Vec<(f64, &GridWavefunction)> = weights.iter().copied().zip(&states).collect();
    GridDensityMatrix::mixture(&terms)
}

/// One component of a tagged state on the grid.
#[derive(Debug, Clone)]
pub struct TaggedComponent {
    pub weight: f64,
    pub tag: TagPath,
    pub psi: GridWavefunction,
}

/// Components with tags. Components sharing a tag add coherently; distinct
/// tags are orthogonal, so their cross terms vanish.
#[derive(Debug, Clone)]
pub struct TaggedState {
    components: Vec<TaggedComponent>,
    grid: Grid,
}

impl TaggedState {
    pub fn new(components: Vec<TaggedComponent>) -> Result<Self> {
        let grid = *components
            .first()
            .ok_or_else(|| Error::domain("tagged state has no components"))?
            .psi
            .grid();
        if components.iter().any(|c| *c.psi.grid() != grid) {
            return Err(Error::domain("components live on different grids"));
        }
        if components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::domain("component weights must be positive"));
        }
        Ok(Self { components, grid })
    }

    /// All components under one tag: an ordinary coherent superposition.
    pub fn coherent(terms: &[(f64, GridWavefunction)]) -> Result<Self> {
        Self::new(
            terms
                .iter()
                .map(|(w, psi)| TaggedComponent {
                    weight: *w,
                    tag: TagPath::root(),
                    psi: psi.clone(),
                })
                .collect(),
        )
    }

    /// Each component under its own tag.
    pub fn decohered(terms: &[(f64, GridWavefunction)], event_time: f64) -> Result<Self> {
        Self::new(
            terms
                .iter()
                .enumerate()
                .map(|(i, (w, psi))| {
                    Ok(TaggedComponent {
                        weight: *w,
                        tag: TagPath::root().extended(event_time, i as u32)?,
                        psi: psi.clone(),
                    })
                })
                .collect::<Result<_>>()?,
        )
    }

    pub fn components(&self) -> &[TaggedComponent] {
        &self.components
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Applies `f` to every component wavefunction.
    pub fn map(&self, f: impl Fn(&GridWavefunction) -> Result<GridWavefunction>) -> Result<Self> {
        Self::new(
            self.components
                .iter()
                .map(|c| {
                    Ok(TaggedComponent {
                        psi: f(&c.psi)?,
                        ..c.clone()
                    })
                })
                .collect::<Result<_>>()?,
        )
    }

    /// Position density, normalised to `sum rho dx = 1`.
    pub fn density(&self) -> Vec<f64> {
        let n = self.grid.n;
        let mut rho = vec![0.0; n];
        for a in &self.components {
            for b in &self.components {
                let overlap = a.tag.overlap(&b.tag);
                if overlap == 0.0 {
                    continue;
                }
                let c = (a.weight * b.weight).sqrt() * overlap;
                for (i, r) in rho.iter_mut().enumerate() {
                    *r += c * (a.psi.amplitudes()[i] * b.psi.amplitudes()[i].conj()).re;
                }
            }
        }
        self.normalised(rho)
    }

    /// `sum p_k |psi_k|^2`: the density with every cross term dropped.
    pub fn envelope(&self) -> Vec<f64> {
        let mut rho = vec![0.0; self.grid.n];
        for c in &self.components {
            for (r, d) in rho.iter_mut().zip(c.psi.density()) {
                *r += c.weight * d;
            }
        }
        self.normalised(rho)
    }

    fn normalised(&self, mut rho: Vec<f64>) -> Vec<f64> {
        let total: f64 = rho.iter().sum::<f64>() * self.grid.dx;
        for r in &mut rho {
            *r /= total;
        }
        rho
    }
}

/// `max |rho - envelope| / max envelope`: the size of the interference terms.
pub fn fringe_content(state: &TaggedState) -> f64 {
    let rho = state.density();
    let env = state.envelope();
    let top = env.iter().copied().fold(0.0, f64::max);
    rho.iter().zip(&env).map(|(r, e)| (r - e).abs()).fold(0.0, f64::max) / top
}

/// `(max - min) / (max + min)` of the position density over `region`.
pub fn interference_visibility(state: &TaggedState, region: Interval) -> Result<f64> {
    visibility_of(&state.density(), state.grid(), region)
}

pub fn visibility_of(density: &[f64], grid: &Grid, region: Interval) -> Result<f64> {
    if !(region.lo >= 0.0 && region.hi <= grid.length && region.lo < region.hi) {
        return Err(Error::domain(format!(
            "region [{}, {}] is not inside the box [0, {}]",
            region.lo, region.hi, grid.length
        )));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, &d) in grid.points().zip(density) {
        if region.contains(x) {
            lo = lo.min(d);
            hi = hi.max(d);
        }
    }
    if !hi.is_finite() {
        return Err(Error::domain("region contains no grid points"));
    }
    Ok(if hi + lo > 0.0 { (hi - lo) / (hi + lo) } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::grid::{build_box_hamiltonian, von_neumann_entropy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_states_are_valid() {
        let p = PhysicalParams::default();
        let grid = Grid::new(128, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let rho = random_mixed_state(grid, &p, &mut rng).unwrap();
            rho.validate().unwrap();
            let s = von_neumann_entropy(&rho).unwrap();
            assert!((0.0..=6f64.ln() + 1e-9).contains(&s));
        }
    }

    #[test]
    fn distinct_tags_drop_cross_terms() {
        let p = PhysicalParams::default();
        let grid = Grid::new(128, &p).unwrap();
        let a = GridWavefunction::gaussian(grid, 9.0, 1.0, 2.0).unwrap();
        let b = GridWavefunction::gaussian(grid, 11.0, 1.0, -2.0).unwrap();
        let terms = [(0.5, a), (0.5, b)];
        let tagged = TaggedState::decohered(&terms, 1.0).unwrap();
        assert_eq!(tagged.density(), tagged.envelope());
        assert_eq!(fringe_content(&tagged), 0.0);
        let coherent = TaggedState::coherent(&terms).unwrap();
        assert!(fringe_content(&coherent) > 0.5);
    }

    #[test]
    fn single_packet_has_envelope_only() {
        let p = PhysicalParams::default();
        let grid = Grid::new(128, &p).unwrap();
        let a = GridWavefunction::gaussian(grid, 10.0, 2.0, 0.0).unwrap();
        let s = TaggedState::coherent(&[(1.0, a)]).unwrap();
        assert_eq!(fringe_content(&s), 0.0);
        // A Gaussian over +-w about its peak: (1 - e^{-1/8}) / (1 + e^{-1/8}).
        let v = interference_visibility(&s, Interval::new(9.0, 11.0)).unwrap();
        let bound = (1.0 - (-0.125f64).exp()) / (1.0 + (-0.125f64).exp());
        assert!(v <= bound + 1e-12);
        assert!(interference_visibility(&s, Interval::new(-1.0, 3.0)).is_err());
    }

    #[test]
    fn colliding_packets_interfere_only_when_coherent() {
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 40.0).unwrap();
        let h = build_box_hamiltonian(256, &p).unwrap();
        let grid = *h.grid();
        let mid = p.box_length / 2.0;
        let a = GridWavefunction::gaussian(grid, mid - 10.0, 1.0, 2.0).unwrap();
        let b = GridWavefunction::gaussian(grid, mid + 10.0, 1.0, -2.0).unwrap();
        let terms = [(0.5, a), (0.5, b)];
        let region = Interval::new(mid - 2.0, mid + 2.0);
        let evolve = |psi: &GridWavefunction| h.evolve_wavefunction(psi, 5.0);
        let coherent = TaggedState::coherent(&terms).unwrap().map(evolve).unwrap();
        let tagged = TaggedState::decohered(&terms, 0.0).unwrap().map(evolve).unwrap();
        assert!(interference_visibility(&coherent, region).unwrap() > 0.5);
        assert!(fringe_content(&tagged) < 1e-12);
        assert!(fringe_content(&coherent) > 0.5);
    }
}
