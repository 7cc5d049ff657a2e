use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::PhysicalParams;

/// Smallest grid the oracle accepts.
pub const MIN_GRID_POINTS: usize = 32;

/// Interior points `x_i = (i + 1) * dx`, `dx = L / (n + 1)`, of a box with
/// hard walls at `0` and `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub length: f64,
    pub dx: f64,
}

impl Grid {
    /// A grid that resolves the localization width: `n >= 32`, `dx <= w/4`.
    pub fn new(n: usize, p: &PhysicalParams) -> Result<Self> {
        p.validate()?;
        if n < MIN_GRID_POINTS {
            return Err(Error::config(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {n}"
            )));
        }
        let dx = p.box_length / (n as f64 + 1.0);
        if dx > p.width / 4.0 {
            return Err(Error::config(format!(
                "grid pitch {dx} does not resolve w = {} (need dx <= w/4)",
                p.width
            )));
        }
        Ok(Self {
            n,
            length: p.box_length,
            dx,
        })
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 1.0) * self.dx
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.x(i))
    }
}

/// Finite-difference kinetic operator with Dirichlet walls, diagonalised once.
#[derive(Debug, Clone)]
pub struct BoxHamiltonian {
    grid: Grid,
    hbar: f64,
    matrix: DMatrix<f64>,
    energies: DVector<f64>,
    modes: DMatrix<f64>,
}

pub fn build_box_hamiltonian(n: usize, p: &PhysicalParams) -> Result<BoxHamiltonian> {
    let grid = Grid::new(n, p)?;
    let scale = p.hbar * p.hbar / (p.mass * grid.dx * grid.dx);
    let matrix = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => scale,
        1 => -scale / 2.0,
        _ => 0.0,
    });
    let eig = SymmetricEigen::new(matrix.clone());
    Ok(BoxHamiltonian {
        grid,
        hbar: p.hbar,
        matrix,
        energies: eig.eigenvalues,
        modes: eig.eigenvectors,
    })
}

impl BoxHamiltonian {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    /// Orthonormal eigenvectors, one per column.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    fn complex_modes(&self) -> DMatrix<Complex64> {
        self.modes.map(|v| Complex64::new(v, 0.0))
    }

    fn phases(&self, dt: f64) -> Vec<Complex64> {
        self.energies
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -e * dt / self.hbar))
            .collect()
    }

    /// `exp(-i H dt / hbar)`.
    pub fn propagator(&self, dt: f64) -> DMatrix<Complex64> {
        let v = self.complex_modes();
        let phases = self.phases(dt);
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        scaled * v.transpose()
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        if *grid != self.grid {
            return Err(Error::domain("state and Hamiltonian live on different grids"));
        }
        Ok(())
    }

    /// `steps` successive propagations by `dt`, each applied as a phase
    /// rotation of the density matrix in the energy basis.
    pub fn evolve_density(&self, rho: &GridDensityMatrix, dt: f64, steps: usize) -> Result<GridDensityMatrix> {
        self.check_grid(&rho.grid)?;
        let v = self.complex_modes();
        let mut r = v.transpose() * &rho.elements * &v;
        let phases = self.phases(dt);
        for _ in 0..steps {
            for j in 0..self.grid.n {
                for k in 0..self.grid.n {
                    r[(j, k)] *= phases[j] * phases[k].conj();
                }
            }
        }
        Ok(GridDensityMatrix::from_raw(&v * r * v.transpose(), rho.grid))
    }

    pub fn evolve_wavefunction(&self, psi: &GridWavefunction, t: f64) -> Result<GridWavefunction> {
        self.check_grid(&psi.grid)?;
        let v = self.complex_modes();
        let mut c = v.transpose() * &psi.amplitudes;
        for (cj, ph) in c.iter_mut().zip(self.phases(t)) {
            *cj *= ph;
        }
        Ok(GridWavefunction {
            amplitudes: v * c,
            grid: psi.grid,
        })
    }
}

/// `rho -> U rho U^dagger` with `U = exp(-i H dt / hbar)`.
pub fn unitary_step(rho: &GridDensityMatrix, dt: f64, h: &BoxHamiltonian) -> Result<GridDensityMatrix> {
    h.check_grid(&rho.grid)?;
    let u = h.propagator(dt);
    Ok(GridDensityMatrix::from_raw(&u * &rho.elements * u.adjoint(), rho.grid))
}

/// Amplitudes with `sum |psi_i|^2 dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWavefunction {
    amplitudes: DVector<Complex64>,
    grid: Grid,
}

impl GridWavefunction {
    /// Normalises `amplitudes` on `grid`.
    pub fn new(amplitudes: DVector<Complex64>, grid: Grid) -> Result<Self> {
        if amplitudes.len() != grid.n {
            return Err(Error::domain(format!(
                "{} amplitudes for a grid of {} points",
                amplitudes.len(),
                grid.n
            )));
        }
        let norm = (amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dx).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::domain("wavefunction has zero or non-finite norm"));
        }
        Ok(Self {
            amplitudes: amplitudes / Complex64::new(norm, 0.0),
            grid,
        })
    }

    /// A Gaussian of position standard deviation `sigma` and wavenumber `k`.
    pub fn gaussian(grid: Grid, center: f64, sigma: f64, k: f64) -> Result<Self> {
        let amps = DVector::from_iterator(
            grid.n,
            grid.points().map(|x| {
                let d = x - center;
                Complex64::from_polar((-d * d / (4.0 * sigma * sigma)).exp(), k * x)
            }),
        );
        Self::new(amps, grid)
    }

    /// Normalised `sum c_j psi_j`.
    pub fn superpose(terms: &[(Complex64, &GridWavefunction)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::domain("empty superposition"))?;
        let grid = first.1.grid;
        let mut amps = DVector::zeros(grid.n);
        for (c, psi) in terms {
            if psi.grid != grid {
                return Err(Error::domain("superposed states live on different grids"));
            }
            amps += &psi.amplitudes * *c;
        }
        Self::new(amps, grid)
    }

    pub fn amplitudes(&self) -> &DVector<Complex64> {
        &self.amplitudes
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }

    pub fn inner(&self, other: &GridWavefunction) -> Complex64 {
        self.amplitudes
            .iter()
            .zip(other.amplitudes.iter())
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx
    }

    pub fn mean_x(&self) -> f64 {
        self.grid.points().zip(self.density()).map(|(x, d)| x * d).sum::<f64>() * self.grid.dx
    }

    pub fn var_x(&self) -> f64 {
        let m = self.mean_x();
        self.grid
            .points()
            .zip(self.density())
            .map(|(x, d)| (x - m).powi(2) * d)
            .sum::<f64>()
            * self.grid.dx
    }
}

pub const HERMITIAN_TOLERANCE: f64 = 1e-12;
pub const TRACE_TOLERANCE: f64 = 1e-10;
pub const EIGENVALUE_FLOOR: f64 = -1e-12;

/// Position-space density matrix `rho(x_i, x_j)` with `trace * dx = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensityMatrix {
    elements: DMatrix<Complex64>,
    grid: Grid,
}

impl GridDensityMatrix {
    /// Checks Hermiticity, normalisation and positivity.
    pub fn new(elements: DMatrix<Complex64>, grid: Grid) -> Result<Self> {
        if elements.nrows() != grid.n || elements.ncols() != grid.n {
            return Err(Error::domain(format!(
                "{}x{} matrix for a grid of {} points",
                elements.nrows(),
                elements.ncols(),
                grid.n
            )));
        }
        let rho = Self { elements, grid };
        rho.validate()?;
        Ok(rho)
    }

    /// Skips validation but restores exact Hermiticity.
    pub(crate) fn from_raw(elements: DMatrix<Complex64>, grid: Grid) -> Self {
        let herm = (&elements + elements.adjoint()) * Complex64::new(0.5, 0.0);
        Self { elements: herm, grid }
    }

    pub fn pure(psi: &GridWavefunction) -> Self {
        Self::from_raw(&psi.amplitudes * psi.amplitudes.adjoint(), psi.grid)
    }

    /// `sum_k p_k |psi_k><psi_k|` with the weights normalised.
    pub fn mixture(terms: &[(f64, &GridWavefunction)]) -> Result<Self> {
        let first = terms.first().ok_or_else(|| Error::domain("empty mixture"))?;
        let grid = first.1.grid;
        let total: f64 = terms.iter().map(|t| t.0).sum();
        if terms.iter().any(|t| !(t.0 >= 0.0)) || !(total > 0.0) {
            return Err(Error::domain("mixture weights must be non-negative with positive sum"));
        }
        let mut m = DMatrix::zeros(grid.n, grid.n);
        for (p, psi) in terms {
            if psi.grid != grid {
                return Err(Error::domain("mixed states live on different grids"));
            }
            m += &psi.amplitudes * psi.amplitudes.adjoint() * Complex64::new(p / total, 0.0);
        }
        Ok(Self::from_raw(m, grid))
    }

    /// `1/L` on the diagonal.
    pub fn maximally_mixed(grid: Grid) -> Self {
        let d = Complex64::new(1.0 / (grid.n as f64 * grid.dx), 0.0);
        Self {
            elements: DMatrix::from_diagonal_element(grid.n, grid.n, d),
            grid,
        }
    }

    pub fn elements(&self) -> &DMatrix<Complex64> {
        &self.elements
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn trace(&self) -> f64 {
        self.elements.diagonal().iter().map(|z| z.re).sum::<f64>() * self.grid.dx
    }

    pub fn density(&self) -> Vec<f64> {
        self.elements.diagonal().iter().map(|z| z.re).collect()
    }

    pub fn mean_x(&self) -> f64 {
        self.grid.points().zip(self.density()).map(|(x, d)| x * d).sum::<f64>() * self.grid.dx
    }

    pub fn var_x(&self) -> f64 {
        let m = self.mean_x();
        self.grid
            .points()
            .zip(self.density())
            .map(|(x, d)| (x - m).powi(2) * d)
            .sum::<f64>()
            * self.grid.dx
    }

    /// Eigenvalues of `rho * dx`, the occupation probabilities.
    pub fn occupations(&self) -> Vec<f64> {
        let scaled = &self.elements * Complex64::new(self.grid.dx, 0.0);
        SymmetricEigen::new(scaled).eigenvalues.iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n;
        for i in 0..n {
            for j in i..n {
                let d = self.elements[(i, j)] - self.elements[(j, i)].conj();
                if d.norm() > HERMITIAN_TOLERANCE {
                    return Err(Error::Numerical(format!(
                        "density matrix is not Hermitian at ({i}, {j}): deviation {}",
                        d.norm()
                    )));
                }
            }
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > TRACE_TOLERANCE {
            return Err(Error::Numerical(format!("trace * dx = {tr}, not 1")));
        }
        if let Some(l) = self.occupations().into_iter().find(|&l| l < EIGENVALUE_FLOOR) {
            return Err(Error::Numerical(format!("negative occupation {l}")));
        }
        Ok(())
    }
}

/// `-sum l ln l` over the occupations of `rho`.
pub fn von_neumann_entropy(rho: &GridDensityMatrix) -> Result<f64> {
    let mut s = 0.0;
    for l in rho.occupations() {
        if l < -1e-10 {
            return Err(Error::Numerical(format!("occupation {l} is negative beyond round-off")));
        }
        let l = l.clamp(0.0, 1.0);
        if l > 0.0 {
            s -= l * l.ln();
        }
    }
    Ok(s)
}

/// Gaussian localization channel `rho -> sum_z dx K_z rho K_z^dagger`,
/// `K_z = (a/pi)^(1/4) exp(-a (x - z)^2 / 2)`, `a = 1/(2 w^2)`.
///
/// The centers `z` run over the grid lattice extended `12 w` past each wall.
/// Since every `K_z` is diagonal in position the channel multiplies `rho`
/// elementwise by `G_ij = sum_z dx K_z(x_i) K_z(x_j)`.
pub fn grw_localization_channel(rho: &GridDensityMatrix, p: &PhysicalParams) -> Result<GridDensityMatrix> {
    let grid = rho.grid;
    if grid.dx > p.width / 4.0 {
        return Err(Error::config(format!(
            "grid pitch {} does not resolve w = {}",
            grid.dx, p.width
        )));
    }
    let g = localization_kernel(&grid, p.width);
    let mut out = rho.elements.clone();
    for i in 0..grid.n {
        for j in 0..grid.n {
            out[(i, j)] *= g[(i, j)];
        }
    }
    Ok(GridDensityMatrix::from_raw(out, grid))
}

fn localization_kernel(grid: &Grid, w: f64) -> DMatrix<f64> {
    let a = 1.0 / (2.0 * w * w);
    let norm = (a / std::f64::consts::PI).sqrt() * grid.dx;
    let pad = (12.0 * w / grid.dx).ceil() as i64;
    let n = grid.n as i64;
    let zs: Vec<f64> = (-pad..n + pad).map(|k| (k as f64 + 1.0) * grid.dx).collect();
    // k[z][i] = exp(-a (x_i - z)^2 / 2)
    let k = DMatrix::from_fn(zs.len(), grid.n, |iz, i| {
        let d = grid.x(i) - zs[iz];
        (-a * d * d / 2.0).exp()
    });
    (k.transpose() * k) * norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn params() -> PhysicalParams {
        PhysicalParams::default()
    }

    #[test]
    fn grid_preconditions() {
        assert!(matches!(Grid::new(16, &params()), Err(Error::Config(_))));
        // dx = 20/65 > 1/4
        assert!(matches!(Grid::new(64, &params()), Err(Error::Config(_))));
        assert!(Grid::new(128, &params()).is_ok());
    }

    #[test]
    fn hamiltonian_is_symmetric_and_positive() {
        let h = build_box_hamiltonian(128, &params()).unwrap();
        assert_eq!(h.matrix(), &h.matrix().transpose());
        assert!(h.energies().iter().all(|&e| e > 0.0));
    }

    #[test]
    fn spectrum_matches_particle_in_a_box() {
        let p = params();
        let h = build_box_hamiltonian(256, &p).unwrap();
        let e0 = h.energies().min();
        let exact = PI * PI / (2.0 * p.box_length * p.box_length);
        assert!((e0 - exact).abs() < 0.01 * exact);

        // The discrete operator has the closed-form spectrum
        // (hbar^2 / m dx^2)(1 - cos(k pi / (n + 1))).
        let dx = h.grid().dx;
        let mut numeric: Vec<f64> = h.energies().iter().copied().collect();
        numeric.sort_by(f64::total_cmp);
        for (k, e) in numeric.iter().enumerate() {
            let exact = (1.0 - (PI * (k + 1) as f64 / 257.0).cos()) / (dx * dx);
            assert!((e - exact).abs() < 1e-9 * exact.max(1.0));
        }
    }

    #[test]
    fn propagator_is_unitary() {
        let h = build_box_hamiltonian(128, &params()).unwrap();
        let u = h.propagator(0.7);
        let id = &u * u.adjoint();
        for i in 0..128 {
            for j in 0..128 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - Complex64::new(target, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn eigenstate_mixture_is_stationary() {
        let p = params();
        let h = build_box_hamiltonian(128, &p).unwrap();
        let grid = *h.grid();
        let mode = |k: usize| GridWavefunction::new(h.modes().column(k).map(|v| Complex64::new(v, 0.0)), grid).unwrap();
        let (a, b) = (mode(0), mode(3));
        let rho = GridDensityMatrix::mixture(&[(0.3, &a), (0.7, &b)]).unwrap();
        let next = unitary_step(&rho, 2.5, &h).unwrap();
        assert!((next.elements() - rho.elements()).camax() < 1e-12);
    }

    #[test]
    fn free_gaussian_spreads_quadratically() {
        // sigma(t)^2 = sigma^2 + (hbar t / (2 m sigma))^2 before wall contact.
        let p = PhysicalParams::new(1.0, 1.0, 1.0, 1.0, 40.0).unwrap();
        let h = build_box_hamiltonian(320, &p).unwrap();
        let sigma = 1.5;
        let psi = GridWavefunction::gaussian(*h.grid(), 20.0, sigma, 0.0).unwrap();
        let v0 = psi.var_x();
        for t in [0.5, 1.0, 2.0, 3.0] {
            let v = h.evolve_wavefunction(&psi, t).unwrap().var_x();
            let growth = (t / (2.0 * sigma)).powi(2);
            assert!((v - v0 - growth).abs() < 2e-3 * growth.max(0.1), "t {t}: {}", v - v0);
        }
    }

    #[test]
    fn stepwise_and_single_shot_evolution_agree() {
        let p = params();
        let h = build_box_hamiltonian(128, &p).unwrap();
        let psi = GridWavefunction::gaussian(*h.grid(), 8.0, 1.2, 0.6).unwrap();
        let rho = GridDensityMatrix::pure(&psi);
        let a = h.evolve_density(&rho, 0.25, 8).unwrap();
        let b = unitary_step(&rho, 2.0, &h).unwrap();
        assert!((a.elements() - b.elements()).camax() < 1e-10);
    }

    #[test]
    fn entropy_examples() {
        let p = params();
        let grid = Grid::new(128, &p).unwrap();
        let a = GridWavefunction::gaussian(grid, 5.0, 1.0, 0.0).unwrap();
        let b = GridWavefunction::gaussian(grid, 15.0, 1.0, 0.0).unwrap();
        let pure = GridDensityMatrix::pure(&a);
        pure.validate().unwrap();
        assert!(von_neumann_entropy(&pure).unwrap().abs() < 1e-9);
        let half = GridDensityMatrix::mixture(&[(1.0, &a), (1.0, &b)]).unwrap();
        assert!((von_neumann_entropy(&half).unwrap() - LN_2).abs() < 1e-9);
    }

    #[test]
    fn invalid_density_matrices_are_rejected() {
        let grid = Grid::new(128, &params()).unwrap();
        let mm = GridDensityMatrix::maximally_mixed(grid);
        let mut bad = mm.elements().clone();
        bad[(0, 1)] = Complex64::new(0.0, 0.1);
        assert!(GridDensityMatrix::new(bad, grid).is_err());
        let doubled = mm.elements() * Complex64::new(2.0, 0.0);
        assert!(GridDensityMatrix::new(doubled, grid).is_err());
        let mut neg = mm.elements().clone();
        neg[(0, 0)] -= Complex64::new(0.2, 0.0);
        neg[(1, 1)] += Complex64::new(0.2, 0.0);
        let neg = GridDensityMatrix::from_raw(neg, grid);
        assert!(neg.validate().is_err());
        assert!(matches!(von_neumann_entropy(&neg), Err(Error::Numerical(_))));
    }

    #[test]
    fn channel_preserves_trace_and_maximal_mixing() {
        let p = params();
        let grid = Grid::new(128, &p).unwrap();
        let mm = GridDensityMatrix::maximally_mixed(grid);
        let out = grw_localization_channel(&mm, &p).unwrap();
        assert!((out.elements() - mm.elements()).camax() < 1e-9);
        let psi = GridWavefunction::gaussian(grid, 7.0, 2.0, 1.0).unwrap();
        let out = grw_localization_channel(&GridDensityMatrix::pure(&psi), &p).unwrap();
        assert!((out.trace() - 1.0).abs() < 1e-9);
        out.validate().unwrap();
    }

    #[test]
    fn channel_kernel_matches_continuum_integral() {
        // Over the whole line, sum_z dx K_z(x) K_z(y) = exp(-(x - y)^2 / (8 w^2)).
        let p = params();
        let grid = Grid::new(128, &p).unwrap();
        let g = localization_kernel(&grid, p.width);
        for (i, j) in [(0, 0), (10, 17), (60, 61), (3, 120)] {
            let d = grid.x(i) - grid.x(j);
            assert!((g[(i, j)] - (-d * d / 8.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_leaves_position_distribution_alone() {
        let p = params();
        let grid = Grid::new(128, &p).unwrap();
        let psi = GridWavefunction::gaussian(grid, 10.0, p.width, 0.0).unwrap();
        let rho = GridDensityMatrix::pure(&psi);
        let out = grw_localization_channel(&rho, &p).unwrap();
        let growth = out.var_x() - rho.var_x();
        assert!(growth.abs() <= p.width * p.width);
        assert!(growth.abs() < 1e-12);
    }

    #[test]
    fn channel_on_separated_superposition() {
        // The cat state loses its coherence (ln 2), and each width-w packet
        // is itself partly mixed by the channel.
        let p = params();
        let grid = Grid::new(128, &p).unwrap();
        let a = GridWavefunction::gaussian(grid, 0.5 * p.box_length - 10.0 * p.width, p.width, 0.0).unwrap();
        let b = GridWavefunction::gaussian(grid, 0.5 * p.box_length + 10.0 * p.width, p.width, 0.0).unwrap();
        let one = Complex64::new(1.0, 0.0);
        let cat = GridWavefunction::superpose(&[(one, &a), (one, &b)]).unwrap();
        let s_cat =
            von_neumann_entropy(&grw_localization_channel(&GridDensityMatrix::pure(&cat), &p).unwrap()).unwrap();
        let s_one = von_neumann_entropy(&grw_localization_channel(&GridDensityMatrix::pure(&a), &p).unwrap()).unwrap();
        assert!(s_one > 0.1);
        assert!((s_cat - (LN_2 + s_one)).abs() < 0.01, "{s_cat} vs {}", LN_2 + s_one);
    }
}
