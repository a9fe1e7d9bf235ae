//! Unitary evolution and the observables built on it: infinite-temperature
//! OTOCs and the quantum-battery charging protocols.

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::couplings::{CouplingTensor, DisorderEnsemble, HoppingMatrix};
use crate::error::{domain, Error, Result};
use crate::fock::{inner, norm, partial_trace_raw, DensityMatrix, SectorBasis, MAX_DENSE_SITES};
use crate::hamiltonian::{
    build_bosonic_syk, build_dicke, build_free_fermion, build_rabi_cell, build_syk, DickeSpace, SparseHermitian,
};
use crate::output::{fmt_f64, Table};
use crate::spectral::{diagonalize, GrandSpectrum};
use crate::stats::{linear_fit, mean_stderr, LinearFit};

/// Sector dimension up to which evolution goes through a full
/// eigendecomposition.
pub const EIGEN_PATH_MAX_DIM: usize = 5000;
/// Default Krylov subspace dimension.
pub const KRYLOV_DIM: usize = 30;
/// Default local error target per Krylov step.
pub const KRYLOV_TOL: f64 = 1e-10;

/// `e^{−iHt}` either through eigenpairs or through short Lanczos steps.
pub enum Propagator {
    Eigen { values: Vec<f64>, vectors: Mat<C64> },
    Krylov { h: SparseHermitian, dim: usize, tol: f64 },
}

impl Propagator {
    /// Eigen path up to [`EIGEN_PATH_MAX_DIM`], Krylov beyond.
    pub fn new(h: &SparseHermitian) -> Result<Self> {
        Self::with_threshold(h, EIGEN_PATH_MAX_DIM)
    }

    pub fn with_threshold(h: &SparseHermitian, eigen_max_dim: usize) -> Result<Self> {
        if h.dim() <= eigen_max_dim {
            Self::eigen(h)
        } else {
            Ok(Self::krylov(h.clone(), KRYLOV_DIM, KRYLOV_TOL))
        }
    }

    pub fn eigen(h: &SparseHermitian) -> Result<Self> {
        let e = diagonalize(h, true)?;
        Ok(Self::Eigen { values: e.values, vectors: e.vectors.expect("vectors requested") })
    }

    pub fn krylov(h: SparseHermitian, dim: usize, tol: f64) -> Self {
        Self::Krylov { h, dim: dim.max(2), tol }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Eigen { values, .. } => values.len(),
            Self::Krylov { h, .. } => h.dim(),
        }
    }

    /// `e^{−iHt}ψ`.
    pub fn evolve(&self, psi: &[C64], t: f64) -> Result<Vec<C64>> {
        Ok(self.evolve_grid(psi, &[t])?.pop().unwrap())
    }

    /// `e^{−iHt}ψ` for every `t` in a non-decreasing, non-negative grid.
    pub fn evolve_grid(&self, psi: &[C64], times: &[f64]) -> Result<Vec<Vec<C64>>> {
        if psi.len() != self.dim() {
            return domain(format!("state of length {} for a propagator of dimension {}", psi.len(), self.dim()));
        }
        if times.iter().any(|&t| !(t >= 0.0)) || times.windows(2).any(|w| w[1] < w[0]) {
            return domain("times must be non-negative and non-decreasing");
        }
        match self {
            Self::Eigen { values, vectors } => {
                let c = adjoint_apply(vectors, psi);
                Ok(times
                    .iter()
                    .map(|&t| {
                        if t == 0.0 {
                            return psi.to_vec();
                        }
                        let ct: Vec<C64> =
                            c.iter().zip(values).map(|(x, &e)| x * C64::from_polar(1.0, -e * t)).collect();
                        dense_apply(vectors, &ct)
                    })
                    .collect())
            }
            Self::Krylov { h, dim, tol } => krylov_grid(h, psi, times, *dim, *tol),
        }
    }
}

fn adjoint_apply(u: &Mat<C64>, x: &[C64]) -> Vec<C64> {
    (0..u.ncols())
        .map(|k| u.col(k).iter().zip(x).map(|(a, b)| a.conj() * b).sum())
        .collect()
}

fn dense_apply(u: &Mat<C64>, c: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); u.nrows()];
    for (k, &ck) in c.iter().enumerate() {
        if ck == C64::new(0.0, 0.0) {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(u.col(k).iter()) {
            *o += a * ck;
        }
    }
    out
}

/// Orthonormal Krylov basis of `ψ/‖ψ‖` with the tridiagonal projection.
struct KrylovSpace {
    basis: Vec<Vec<C64>>,
    // eigenpairs of the tridiagonal matrix
    ritz: Vec<f64>,
    s: Mat<f64>,
    beta_last: f64,
    scale: f64,
}

impl KrylovSpace {
    fn build(h: &SparseHermitian, psi: &[C64], m: usize) -> Result<Self> {
        let scale = norm(psi);
        let n = psi.len();
        let m = m.min(n);
        let mut v: Vec<C64> = psi.iter().map(|x| x / scale).collect();
        let mut basis = Vec::with_capacity(m);
        let (mut alpha, mut beta) = (Vec::with_capacity(m), Vec::with_capacity(m));
        let mut w = vec![C64::new(0.0, 0.0); n];
        let hnorm = h.max_abs().max(1e-300);
        let mut beta_last = 0.0;
        for j in 0..m {
            h.matvec(&v, &mut w);
            alpha.push(inner(&v, &w).re);
            basis.push(v.clone());
            for _ in 0..2 {
                for q in &basis {
                    let c = inner(q, &w);
                    w.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let b = norm(&w);
            if j + 1 == m || b < 1e-13 * hnorm {
                beta_last = if b < 1e-13 * hnorm { 0.0 } else { b };
                break;
            }
            beta.push(b);
            v.iter_mut().zip(&w).for_each(|(a, x)| *a = x / b);
        }
        let k = alpha.len();
        let t = Mat::<f64>::from_fn(k, k, |i, j| match i.abs_diff(j) {
            0 => alpha[i],
            1 => beta[i.min(j)],
            _ => 0.0,
        });
        let e = t
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::Divergence(format!("Krylov projection failed: {e:?}")))?;
        let ritz = (0..k).map(|i| e.S().column_vector()[i]).collect();
        Ok(Self { basis, ritz, s: e.U().to_owned(), beta_last, scale })
    }

    /// Coefficients of `e^{−iTt} e₁` in the Krylov basis.
    fn coefficients(&self, t: f64) -> Vec<C64> {
        let k = self.ritz.len();
        let proj: Vec<C64> = (0..k).map(|j| C64::from_polar(self.s[(0, j)], -self.ritz[j] * t)).collect();
        (0..k).map(|i| (0..k).map(|j| proj[j] * self.s[(i, j)]).sum()).collect()
    }

    fn error_estimate(&self, t: f64) -> f64 {
        let c = self.coefficients(t);
        self.scale * self.beta_last * c.last().map_or(0.0, |x| x.norm())
    }

    fn state(&self, t: f64) -> Vec<C64> {
        let c = self.coefficients(t);
        let mut out = vec![C64::new(0.0, 0.0); self.basis[0].len()];
        for (q, &ck) in self.basis.iter().zip(&c) {
            let a = ck * self.scale;
            out.iter_mut().zip(q).for_each(|(o, b)| *o += a * b);
        }
        out
    }
}

fn krylov_grid(h: &SparseHermitian, psi: &[C64], times: &[f64], m: usize, tol: f64) -> Result<Vec<Vec<C64>>> {
    let mut out = Vec::with_capacity(times.len());
    let mut cur = psi.to_vec();
    let mut t_cur = 0.0;
    let mut next = 0;
    let mut dt_prev = f64::INFINITY;
    while next < times.len() {
        if times[next] <= t_cur {
            out.push(cur.clone());
            next += 1;
            continue;
        }
        if norm(&cur) == 0.0 {
            out.push(cur.clone());
            next += 1;
            continue;
        }
        let space = KrylovSpace::build(h, &cur, m)?;
        let remaining = times[times.len() - 1] - t_cur;
        let mut dt = remaining.min(2.0 * dt_prev);
        let mut halvings = 0;
        while space.error_estimate(dt) > tol {
            dt *= 0.5;
            halvings += 1;
            if halvings > 60 {
                return Err(Error::Divergence("Krylov step collapsed below resolution".into()));
            }
        }
        dt_prev = dt;
        let t_end = t_cur + dt;
        while next < times.len() && times[next] <= t_end {
            out.push(space.state(times[next] - t_cur));
            next += 1;
        }
        cur = space.state(dt);
        t_cur = t_end;
    }
    Ok(out)
}

/// Evolution of a full-space state under a charge-conserving Hamiltonian,
/// one sector at a time.
///
/// `build` returns the sector Hamiltonian; the result holds one full-space
/// state per time.
pub fn evolve_by_sector<F>(
    n_sites: usize,
    psi: &[C64],
    times: &[f64],
    eigen_max_dim: usize,
    build: F,
) -> Result<Vec<Vec<C64>>>
where
    F: Fn(&SectorBasis) -> Result<SparseHermitian> + Sync,
{
    if n_sites > MAX_DENSE_SITES {
        return Err(Error::Resource(format!("N = {n_sites} exceeds the {MAX_DENSE_SITES}-site cap")));
    }
    if psi.len() != 1 << n_sites {
        return domain("state must live on the full space");
    }
    let mut out = vec![vec![C64::new(0.0, 0.0); psi.len()]; times.len()];
    for q in 0..=n_sites {
        let basis = SectorBasis::enumerate(n_sites, q)?;
        let local: Vec<C64> = basis.states().iter().map(|&b| psi[b as usize]).collect();
        if norm(&local) == 0.0 {
            continue;
        }
        let prop = Propagator::with_threshold(&build(&basis)?, eigen_max_dim)?;
        let evolved = prop.evolve_grid(&local, times)?;
        for (slot, state) in out.iter_mut().zip(evolved) {
            for (&b, a) in basis.states().iter().zip(state) {
                slot[b as usize] = a;
            }
        }
    }
    Ok(out)
}

/// Which battery Hamiltonian drives the charging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Fermionic,
    Bosonic,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fermionic => "fermionic",
            Variant::Bosonic => "bosonic",
        }
    }
}

/// Charging trajectory with its per-level populations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatteryRun {
    pub tau: Vec<f64>,
    /// Stored energy, zero at `τ = 0`.
    pub energy: Vec<f64>,
    /// `E/τ`, zero at `τ = 0`.
    pub power: Vec<f64>,
    /// `(M, ergotropy of the first M cells at each τ)`.
    pub ergotropy: Vec<(usize, Vec<f64>)>,
    /// `populations[t][k]`: weight on the level with `k` excitations.
    pub populations: Vec<Vec<f64>>,
    pub n_sites: usize,
    pub omega: f64,
    pub label: String,
}

/// Product ground state of `ωJ^y`: every spin in the `σ^y = −1` state, so
/// the amplitude of `|bits⟩` is `i^{popcount}/2^{N/2}`.
pub fn battery_initial_state(n_sites: usize) -> Vec<C64> {
    let a = (0.5f64).powf(n_sites as f64 / 2.0);
    (0..1u32 << n_sites).map(|b| C64::i().powu(b.count_ones()) * a).collect()
}

/// Amplitudes in the `σ^y` product basis, where bit 1 marks `σ^y = +1`.
pub fn to_y_basis(psi: &[C64], n_sites: usize) -> Vec<C64> {
    let mut a = psi.to_vec();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for s in 0..n_sites {
        let bit = 1usize << s;
        for b in 0..a.len() {
            if b & bit != 0 {
                continue;
            }
            let (x0, x1) = (a[b], a[b | bit]);
            // ⟨σ^y=−1| = (⟨↓| − i⟨↑|)/√2, ⟨σ^y=+1| = (⟨↓| + i⟨↑|)/√2
            a[b] = (x0 - C64::i() * x1) * r;
            a[b | bit] = (x0 + C64::i() * x1) * r;
        }
    }
    a
}

/// Weight on each excitation number `k = 0..=N` of a y-basis state.
pub fn level_populations(y_amps: &[C64], n_sites: usize) -> Vec<f64> {
    let mut p = vec![0.0; n_sites + 1];
    for (b, a) in y_amps.iter().enumerate() {
        p[(b as u32).count_ones() as usize] += a.norm_sqr();
    }
    p
}

/// Extractable work of `rho` against a Hamiltonian diagonal in the same
/// basis with `energies[a]` on basis state `a`.
///
/// `Tr[ρH] − Σ r_n ε_n`, with `r` descending and `ε` ascending.
pub fn ergotropy(rho: &DensityMatrix, energies: &[f64]) -> Result<f64> {
    if rho.dim() != energies.len() {
        return domain(format!("density matrix of dimension {} against {} energies", rho.dim(), energies.len()));
    }
    let mut r = rho.eigenvalues()?;
    if r.first().is_some_and(|&x| x < -1e-10) {
        return domain(format!("density matrix has negative eigenvalue {:.3e}", r[0]));
    }
    r.reverse();
    let mut e = energies.to_vec();
    e.sort_by(f64::total_cmp);
    let active: f64 = (0..rho.dim()).map(|a| rho.elements[(a, a)].re * energies[a]).sum();
    let passive: f64 = r.iter().zip(&e).map(|(x, y)| x * y).sum();
    Ok(active - passive)
}

/// Observables of one full-space battery state.
fn battery_observables(psi: &[C64], n: usize, omega: f64, sizes: &[usize]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let y = to_y_basis(psi, n);
    let p = level_populations(&y, n);
    let energy = omega * p.iter().enumerate().map(|(k, w)| k as f64 * w).sum::<f64>();
    let mut erg = Vec::with_capacity(sizes.len());
    for &m in sizes {
        let rho = partial_trace_raw(&y, n, m)?;
        let local: Vec<f64> = (0..1u32 << m).map(|b| omega * b.count_ones() as f64).collect();
        erg.push(ergotropy(&rho, &local)?);
    }
    Ok((energy, p, erg))
}

/// Sector dimension above which battery charging switches to Krylov steps;
/// dense eigenvectors are slower than a handful of Lanczos steps here.
pub const BATTERY_EIGEN_MAX_DIM: usize = 1000;

/// SYK battery: start in the ground state of `ωJ^y`, evolve under the
/// quartic charging Hamiltonian, read off energy, power, populations and
/// ergotropies.
pub fn battery_charge_syk(
    tensor: &CouplingTensor,
    omega: f64,
    tau_grid: &[f64],
    variant: Variant,
    ergotropy_sizes: &[usize],
) -> Result<BatteryRun> {
    let n = tensor.n_sites();
    if n > MAX_DENSE_SITES {
        return Err(Error::Resource(format!("battery simulations are capped at {MAX_DENSE_SITES} cells")));
    }
    if tau_grid.first() != Some(&0.0) {
        return domain("charging grid must start at τ = 0");
    }
    if ergotropy_sizes.iter().any(|&m| m == 0 || m >= n) {
        return domain("ergotropy subsystem sizes must lie in 1..N");
    }
    let psi0 = battery_initial_state(n);
    let states = evolve_by_sector(n, &psi0, tau_grid, BATTERY_EIGEN_MAX_DIM, |b| match variant {
        Variant::Fermionic => build_syk(tensor, 0.0, b),
        Variant::Bosonic => build_bosonic_syk(tensor, b),
    })?;
    let mut run = BatteryRun {
        tau: tau_grid.to_vec(),
        energy: Vec::with_capacity(tau_grid.len()),
        power: Vec::with_capacity(tau_grid.len()),
        ergotropy: ergotropy_sizes.iter().map(|&m| (m, Vec::with_capacity(tau_grid.len()))).collect(),
        populations: Vec::with_capacity(tau_grid.len()),
        n_sites: n,
        omega,
        label: variant.name().into(),
    };
    for (state, &tau) in states.iter().zip(tau_grid) {
        let (e, p, erg) = battery_observables(state, n, omega, ergotropy_sizes)?;
        run.energy.push(e);
        run.power.push(if tau > 0.0 { e / tau } else { 0.0 });
        run.populations.push(p);
        for (slot, x) in run.ergotropy.iter_mut().zip(erg) {
            slot.1.push(x);
        }
    }
    Ok(run)
}

/// `Σ_k |p_k − binomial(N,k)/2^N| / 2`.
pub fn binomial_distance(p: &[f64]) -> f64 {
    let n = p.len() - 1;
    let total = 2f64.powi(n as i32);
    p.iter()
        .enumerate()
        .map(|(k, &x)| (x - crate::fock::binomial(n, k) as f64 / total).abs())
        .sum::<f64>()
        * 0.5
}

/// Least-squares slope of `ln P` against `ln N`.
pub fn fit_power_law(sizes: &[f64], values: &[f64]) -> Result<LinearFit> {
    if sizes.len() < 3 || sizes.len() != values.len() {
        return domain("a power-law fit needs at least three sizes");
    }
    if values.iter().chain(sizes).any(|&v| !(v > 0.0)) {
        return domain("power-law fit needs positive data");
    }
    let x: Vec<f64> = sizes.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    linear_fit(&x, &y).ok_or_else(|| Error::Domain("degenerate sizes".into()))
}

/// Disorder-averaged optimal power at one size.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerPoint {
    pub n_sites: usize,
    /// `max_τ ⟨⟨P(τ)⟩⟩`.
    pub p_star: f64,
    pub stderr: f64,
    pub tau_star: f64,
    /// `⟨⟨max_τ P(τ)⟩⟩`, reported for comparison only.
    pub p_star_per_realization: f64,
    pub energy_at_tau_star: f64,
    /// Mean stored energy over the last quarter of the grid.
    pub energy_plateau: f64,
    pub mean_populations: Vec<Vec<f64>>,
    pub realizations: usize,
}

/// Result of [`battery_power_scaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct PowerScaling {
    pub variant: Variant,
    pub points: Vec<PowerPoint>,
    pub fit: LinearFit,
}

/// Ensemble-averaged charging at one size.
pub fn battery_power_point(
    ens: &DisorderEnsemble,
    n_sites: usize,
    omega: f64,
    variant: Variant,
    tau_grid: &[f64],
) -> Result<PowerPoint> {
    let runs: Vec<BatteryRun> = (0..ens.realization_count)
        .into_par_iter()
        .map(|r| {
            let t = CouplingTensor::sample(n_sites, 1.0, &mut ens.stream(r))?;
            battery_charge_syk(&t, omega, tau_grid, variant, &[])
        })
        .collect::<Result<_>>()?;
    Ok(summarize_power(n_sites, tau_grid, &runs))
}

/// Ensemble summary of charging runs that share one size and τ grid.
pub fn summarize_power(n: usize, tau: &[f64], runs: &[BatteryRun]) -> PowerPoint {
    let nt = tau.len();
    let mut best = (0, f64::NEG_INFINITY, 0.0);
    for t in 1..nt {
        let col: Vec<f64> = runs.iter().map(|r| r.power[t]).collect();
        let (m, e) = mean_stderr(&col);
        if m > best.1 {
            best = (t, m, e);
        }
    }
    let per_run: Vec<f64> = runs.iter().map(|r| r.power.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
    let energy_at: Vec<f64> = runs.iter().map(|r| r.energy[best.0]).collect();
    let tail_start = nt - (nt / 4).max(1);
    let plateau: Vec<f64> = runs.iter().map(|r| crate::stats::mean(&r.energy[tail_start..])).collect();
    let mean_populations = (0..nt)
        .map(|t| (0..=n).map(|k| crate::stats::mean(&runs.iter().map(|r| r.populations[t][k]).collect::<Vec<_>>())).collect())
        .collect();
    PowerPoint {
        n_sites: n,
        p_star: best.1,
        stderr: best.2,
        tau_star: tau[best.0],
        p_star_per_realization: crate::stats::mean(&per_run),
        energy_at_tau_star: crate::stats::mean(&energy_at),
        energy_plateau: crate::stats::mean(&plateau),
        mean_populations,
        realizations: runs.len(),
    }
}

/// Optimal-power exponent over a list of sizes.
pub fn battery_power_scaling(
    ens: &DisorderEnsemble,
    sizes: &[usize],
    omega: f64,
    variant: Variant,
    tau_grid: &[f64],
) -> Result<PowerScaling> {
    if sizes.len() < 3 {
        return domain("power scaling needs at least three sizes");
    }
    if sizes.iter().any(|&n| n < 4 || n % 2 != 0) {
        return domain("sizes must be even and at least 4");
    }
    let points: Vec<PowerPoint> =
        sizes.iter().map(|&n| battery_power_point(ens, n, omega, variant, tau_grid)).collect::<Result<_>>()?;
    let x: Vec<f64> = points.iter().map(|p| p.n_sites as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.p_star).collect();
    Ok(PowerScaling { variant, fit: fit_power_law(&x, &y)?, points })
}

/// Dicke charging layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DickeMode {
    /// Each atom in its own cavity with one photon.
    Parallel,
    /// All atoms share one cavity holding `N` photons.
    Collective,
}

/// Largest change of the energy curve tolerated between cutoffs `4N` and `6N`.
pub const CUTOFF_DRIFT_TOL: f64 = 1e-6;

fn dicke_energy_curve(n: usize, omega: f64, lambda: f64, tau: &[f64], mode: DickeMode, rescale: bool, cutoff: usize) -> Result<Vec<f64>> {
    let (h, space, start) = match mode {
        DickeMode::Parallel => {
            let sp = DickeSpace::new(1, cutoff)?;
            (build_rabi_cell(omega, lambda, cutoff)?, sp, sp.index(0, 1))
        }
        DickeMode::Collective => {
            let sp = DickeSpace::new(n, cutoff)?;
            (build_dicke(n, omega, lambda, cutoff, rescale)?, sp, sp.index(0, n))
        }
    };
    let mut psi0 = vec![C64::new(0.0, 0.0); space.dim()];
    psi0[start] = C64::new(1.0, 0.0);
    let states = Propagator::new(&h)?.evolve_grid(&psi0, tau)?;
    let factor = match mode {
        DickeMode::Parallel => n as f64,
        DickeMode::Collective => 1.0,
    };
    Ok(states
        .iter()
        .map(|s| {
            // atomic energy ω(J^z + N/2) = ω·(m + N/2), zero in the ground state
            factor * omega * s.iter().enumerate().map(|(i, a)| space.unpack(i).0 as f64 * a.norm_sqr()).sum::<f64>()
        })
        .collect())
}

/// Dicke battery with a photon cutoff of four photons per atom in the evolved
/// cell, validated against six.
pub fn battery_charge_dicke(
    n_atoms: usize,
    omega: f64,
    lambda: f64,
    tau_grid: &[f64],
    mode: DickeMode,
    rescale: bool,
) -> Result<BatteryRun> {
    if n_atoms == 0 || tau_grid.first() != Some(&0.0) {
        return domain("need at least one atom and a grid starting at τ = 0");
    }
    // parallel mode evolves a single one-photon cell whatever N is
    let cell_atoms = match mode {
        DickeMode::Parallel => 1,
        DickeMode::Collective => n_atoms,
    };
    let base = 4 * cell_atoms;
    let lam = match mode {
        DickeMode::Parallel if rescale => lambda / (n_atoms as f64).sqrt(),
        _ => lambda,
    };
    let e = dicke_energy_curve(n_atoms, omega, lam, tau_grid, mode, rescale, base)?;
    let check = dicke_energy_curve(n_atoms, omega, lam, tau_grid, mode, rescale, 6 * cell_atoms)?;
    let drift = e.iter().zip(&check).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if drift > CUTOFF_DRIFT_TOL * (n_atoms as f64 * omega.abs()).max(1.0) {
        return Err(Error::Resource(format!("photon cutoff {base} not converged: energy drift {drift:.3e}")));
    }
    let power = e.iter().zip(tau_grid).map(|(&x, &t)| if t > 0.0 { x / t } else { 0.0 }).collect();
    Ok(BatteryRun {
        tau: tau_grid.to_vec(),
        energy: e,
        power,
        ergotropy: Vec::new(),
        populations: Vec::new(),
        n_sites: n_atoms,
        omega,
        label: match mode {
            DickeMode::Parallel => "dicke-parallel".into(),
            DickeMode::Collective => "dicke-collective".into(),
        },
    })
}

/// `max_τ P(τ)` with its position.
pub fn optimal_power(run: &BatteryRun) -> (f64, f64) {
    run.power
        .iter()
        .zip(&run.tau)
        .skip(1)
        .fold((f64::NEG_INFINITY, 0.0), |acc, (&p, &t)| if p > acc.0 { (p, t) } else { acc })
}

/// `c_w + c†_w` applied to a full-space vector.
fn apply_quadrature_x(site: usize, psi: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    let mask = (1u32 << site) - 1;
    for (b, &a) in psi.iter().enumerate() {
        let s = if (b as u32 & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        out[b ^ (1 << site)] += a * s;
    }
    out
}

/// `i(c†_v − c_v)` applied to a full-space vector.
fn apply_quadrature_p(site: usize, psi: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); psi.len()];
    let mask = (1u32 << site) - 1;
    for (b, &a) in psi.iter().enumerate() {
        let s = if (b as u32 & mask).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
        let filled = b >> site & 1 == 1;
        // c† on an empty site gives +i·s, −c on a filled one gives −i·s
        let f = if filled { C64::new(0.0, -s) } else { C64::new(0.0, s) };
        out[b ^ (1 << site)] += a * f;
    }
    out
}

/// Infinite-temperature OTOC data.
#[derive(Debug, Clone, PartialEq)]
pub struct OtocCurve {
    pub t: Vec<f64>,
    /// `Tr[W(t)VW(t)V]/2^N`.
    pub f: Vec<C64>,
    /// `−Tr([W(t),V]²)/2^N = 2 − 2 Re F`.
    pub c: Vec<f64>,
    pub stderr: Vec<f64>,
    pub w_site: usize,
    pub v_site: usize,
}

/// Largest size with the exact trace.
pub const OTOC_EXACT_MAX_SITES: usize = 10;
/// Largest size with the stochastic trace.
pub const OTOC_STOCHASTIC_MAX_SITES: usize = 14;

/// How the trace over the full space is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceMethod {
    Exact,
    /// Average over random-phase states from a fixed seed.
    Stochastic { samples: usize, seed: u64 },
}

/// Block eigen-decomposition of a charge-conserving full-space Hamiltonian.
struct BlockEvolution {
    grand: GrandSpectrum,
}

impl BlockEvolution {
    fn apply(&self, psi: &[C64], t: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        for s in &self.grand.sectors {
            let v = s.eig.vectors.as_ref().expect("vectors requested");
            let local: Vec<C64> = s.basis.states().iter().map(|&b| psi[b as usize]).collect();
            let c = adjoint_apply(v, &local);
            let ct: Vec<C64> = c.iter().zip(&s.eig.values).map(|(x, &e)| x * C64::from_polar(1.0, -e * t)).collect();
            for (&b, a) in s.basis.states().iter().zip(dense_apply(v, &ct)) {
                out[b as usize] = a;
            }
        }
        out
    }

    /// `W(t)|x⟩ = e^{iHt} W e^{−iHt} |x⟩`.
    fn heisenberg_x(&self, site: usize, x: &[C64], t: f64) -> Vec<C64> {
        self.apply(&apply_quadrature_x(site, &self.apply(x, t)), -t)
    }
}

/// OTOC of `W = c_w + c†_w` and `V = i(c†_v − c_v)` at `β = 0` for a
/// charge-conserving Hamiltonian given sector by sector.
pub fn otoc<F>(n_sites: usize, build: F, w_site: usize, v_site: usize, t_grid: &[f64], method: TraceMethod) -> Result<OtocCurve>
where
    F: Fn(&SectorBasis) -> Result<SparseHermitian> + Sync,
{
    if w_site == v_site {
        return domain("OTOC operators must sit on different sites");
    }
    if w_site >= n_sites || v_site >= n_sites {
        return domain("OTOC site outside the system");
    }
    let cap = match method {
        TraceMethod::Exact => OTOC_EXACT_MAX_SITES,
        TraceMethod::Stochastic { .. } => OTOC_STOCHASTIC_MAX_SITES,
    };
    if n_sites > cap {
        return Err(Error::Resource(format!("OTOC with this trace is limited to N ≤ {cap}")));
    }
    let evo = BlockEvolution { grand: GrandSpectrum::compute(n_sites, true, build)? };
    let dim = 1usize << n_sites;
    let mut curve = OtocCurve {
        t: t_grid.to_vec(),
        f: Vec::with_capacity(t_grid.len()),
        c: Vec::with_capacity(t_grid.len()),
        stderr: Vec::with_capacity(t_grid.len()),
        w_site,
        v_site,
    };
    match method {
        TraceMethod::Exact => {
            // dense operators in the block energy basis
            let u = block_unitary(&evo.grand, dim);
            let w_e = conjugate_operator(&u, |x| apply_quadrature_x(w_site, x));
            let v_e = conjugate_operator(&u, |x| apply_quadrature_p(v_site, x));
            let energies = block_energies(&evo.grand, dim);
            for &t in t_grid {
                let wt = Mat::<C64>::from_fn(dim, dim, |a, b| w_e[(a, b)] * C64::from_polar(1.0, (energies[a] - energies[b]) * t));
                let a = &wt * &v_e;
                let mut tr = C64::new(0.0, 0.0);
                for i in 0..dim {
                    for j in 0..dim {
                        tr += a[(i, j)] * a[(j, i)];
                    }
                }
                let f = tr / dim as f64;
                curve.f.push(f);
                curve.c.push(2.0 - 2.0 * f.re);
                curve.stderr.push(0.0);
            }
        }
        TraceMethod::Stochastic { samples, seed } => {
            if samples < 2 {
                return domain("stochastic trace needs at least two samples");
            }
            let per_sample: Vec<Vec<C64>> = (0..samples)
                .into_par_iter()
                .map(|r| {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    rng.set_stream(r as u64);
                    let amp = 1.0 / (dim as f64).sqrt();
                    let phi: Vec<C64> = (0..dim)
                        .map(|_| C64::from_polar(amp, rng.random::<f64>() * std::f64::consts::TAU))
                        .collect();
                    t_grid
                        .iter()
                        .map(|&t| {
                            let v1 = apply_quadrature_p(v_site, &phi);
                            let v2 = evo.heisenberg_x(w_site, &v1, t);
                            let v3 = apply_quadrature_p(v_site, &v2);
                            let v4 = evo.heisenberg_x(w_site, &v3, t);
                            inner(&phi, &v4)
                        })
                        .collect()
                })
                .collect();
            for k in 0..t_grid.len() {
                let re: Vec<f64> = per_sample.iter().map(|s| s[k].re).collect();
                let im: Vec<f64> = per_sample.iter().map(|s| s[k].im).collect();
                let (mr, er) = mean_stderr(&re);
                let (mi, _) = mean_stderr(&im);
                curve.f.push(C64::new(mr, mi));
                curve.c.push(2.0 - 2.0 * mr);
                curve.stderr.push(2.0 * er);
            }
        }
    }
    Ok(curve)
}

fn block_unitary(grand: &GrandSpectrum, dim: usize) -> Mat<C64> {
    let mut u = Mat::<C64>::zeros(dim, dim);
    let mut col = 0;
    for s in &grand.sectors {
        let v = s.eig.vectors.as_ref().expect("vectors requested");
        for k in 0..v.ncols() {
            for (r, &b) in s.basis.states().iter().enumerate() {
                u[(b as usize, col)] = v[(r, k)];
            }
            col += 1;
        }
    }
    u
}

fn block_energies(grand: &GrandSpectrum, dim: usize) -> Vec<f64> {
    let e: Vec<f64> = grand.sectors.iter().flat_map(|s| s.eig.values.iter().copied()).collect();
    debug_assert_eq!(e.len(), dim);
    e
}

/// `U† O U` for an operator given by its action on vectors.
fn conjugate_operator<F: Fn(&[C64]) -> Vec<C64> + Sync>(u: &Mat<C64>, op: F) -> Mat<C64> {
    let dim = u.nrows();
    let cols: Vec<Vec<C64>> =
        (0..dim).into_par_iter().map(|k| op(&u.col(k).iter().copied().collect::<Vec<_>>())).collect();
    let ou = Mat::<C64>::from_fn(dim, dim, |r, c| cols[c][r]);
    u.adjoint() * ou
}

/// OTOC of the SYK Hamiltonian for one coupling tensor.
pub fn otoc_syk(tensor: &CouplingTensor, w_site: usize, v_site: usize, t_grid: &[f64], method: TraceMethod) -> Result<OtocCurve> {
    otoc(tensor.n_sites(), |b| build_syk(tensor, 0.0, b), w_site, v_site, t_grid, method)
}

/// OTOC of the free-fermion hopping Hamiltonian.
pub fn otoc_free(hopping: &HoppingMatrix, w_site: usize, v_site: usize, t_grid: &[f64], method: TraceMethod) -> Result<OtocCurve> {
    otoc(hopping.n_sites(), |b| build_free_fermion(hopping, b), w_site, v_site, t_grid, method)
}

/// `battery.csv`.
pub fn battery_table(run: &BatteryRun) -> Table {
    let mut header = vec!["tau".to_string(), "E".into(), "P".into()];
    header.extend(run.ergotropy.iter().map(|(m, _)| format!("ergotropy_{m}")));
    if !run.populations.is_empty() {
        header.extend((0..=run.n_sites).map(|k| format!("p_{k}")));
    }
    let mut t = Table::new(&header);
    for i in 0..run.tau.len() {
        let mut row = vec![run.tau[i], run.energy[i], run.power[i]];
        row.extend(run.ergotropy.iter().map(|(_, v)| v[i]));
        if let Some(p) = run.populations.get(i) {
            row.extend(p.iter().copied());
        }
        t.push_floats(&row);
    }
    t
}

/// `power_scaling.csv` with the fitted exponent as a footer comment.
pub fn power_scaling_table(s: &PowerScaling) -> Table {
    let mut t = Table::new(&["N", "P_star", "stderr", "tau_star"]);
    for p in &s.points {
        t.push(vec![p.n_sites.to_string(), fmt_f64(p.p_star), fmt_f64(p.stderr), fmt_f64(p.tau_star)]);
    }
    t.comment(format!("variant={}", s.variant.name()));
    t.comment(format!("slope={} slope_stderr={}", fmt_f64(s.fit.slope), fmt_f64(s.fit.slope_stderr)));
    t
}

/// `otoc.csv`.
pub fn otoc_table(c: &OtocCurve) -> Table {
    let mut t = Table::new(&["t", "f_re", "f_im", "c", "stderr"]);
    for i in 0..c.t.len() {
        t.push_floats(&[c.t[i], c.f[i].re, c.f[i].im, c.c[i], c.stderr[i]]);
    }
    t
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::build_battery_h0;

    #[test]
    fn ergotropy_examples() {
        let pure = DensityMatrix { elements: Mat::from_fn(2, 2, |i, j| C64::new((i == 1 && j == 1) as u8 as f64, 0.0)) };
        assert!((ergotropy(&pure, &[0.0, 1.5]).unwrap() - 1.5).abs() < 1e-14);
        let mixed = DensityMatrix { elements: Mat::from_fn(2, 2, |i, j| C64::new(if i == j { 0.5 } else { 0.0 }, 0.0)) };
        assert!(ergotropy(&mixed, &[0.0, 1.0]).unwrap().abs() < 1e-14);
        let d = DensityMatrix { elements: Mat::from_fn(2, 2, |i, j| C64::new(if i != j { 0.0 } else if i == 0 { 0.2 } else { 0.8 }, 0.0)) };
        assert!((ergotropy(&d, &[0.0, 1.0]).unwrap() - 0.6).abs() < 1e-14);
        let bad = DensityMatrix { elements: Mat::from_fn(2, 2, |i, j| C64::new(if i != j { 0.0 } else if i == 0 { -0.2 } else { 1.2 }, 0.0)) };
        assert!(ergotropy(&bad, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn initial_state_is_h0_ground_state() {
        for n in [1, 3, 6] {
            let h = build_battery_h0(n, 0.7).unwrap();
            let psi = battery_initial_state(n);
            let hp = h.apply(&psi);
            for (x, y) in hp.iter().zip(&psi) {
                assert!((x + y * (0.35 * n as f64)).norm() < 1e-14);
            }
            let y = to_y_basis(&psi, n);
            assert!((y[0].norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn krylov_handles_invariant_subspace() {
        let h = build_battery_h0(3, 1.0).unwrap();
        let psi = battery_initial_state(3);
        let prop = Propagator::krylov(h, 30, 1e-12);
        let out = prop.evolve(&psi, 3.0).unwrap();
        let ph = C64::from_polar(1.0, 1.5 * 3.0);
        for (x, y) in out.iter().zip(&psi) {
            assert!((x - y * ph).norm() < 1e-12);
        }
    }

    #[test]
    fn power_law_self_test() {
        let n = [8.0, 10.0, 12.0, 14.0, 16.0];
        let p: Vec<f64> = n.iter().map(|x| 0.3 * x).collect();
        assert!((fit_power_law(&n, &p).unwrap().slope - 1.0).abs() < 1e-12);
        assert!(fit_power_law(&n[..2], &p[..2]).is_err());
    }

    #[test]
    fn quadratures_square_to_one() {
        let n = 4;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let psi: Vec<C64> = (0..16).map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        for s in 0..n {
            let xx = apply_quadrature_x(s, &apply_quadrature_x(s, &psi));
            let pp = apply_quadrature_p(s, &apply_quadrature_p(s, &psi));
            for i in 0..16 {
                assert!((xx[i] - psi[i]).norm() < 1e-14 && (pp[i] - psi[i]).norm() < 1e-14);
            }
        }
    }
}
