//! Spectra and the quantities derived from them: gaps, level statistics,
//! grand-canonical thermodynamics, bipartite entanglement and the Lehmann
//! Green's function.

use std::sync::Arc;

use faer::{Mat, Side};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::couplings::{CouplingTensor, DisorderEnsemble, HoppingMatrix};
use crate::error::{domain, Error, Result};
use crate::fock::{annihilate, create, partial_trace, FockSpace, PureState, SectorBasis, StateSpace};
use crate::hamiltonian::{build_free_fermion, build_syk, check_dense_sites, BasisTag, SparseHermitian};
use crate::output::{fmt_f64, Table};
use crate::stats::{mean_stderr, pairwise_sum};

/// Largest dense problem solved with eigenvectors.
pub const MAX_DENSE_WITH_VECTORS: usize = 13000;
/// Largest dense problem solved for eigenvalues only.
pub const MAX_DENSE_VALUES: usize = 16384;
/// Relative threshold under which two ground levels count as degenerate.
pub const DEGENERACY_RTOL: f64 = 1e-10;

/// Ascending eigenvalues with optional eigenvectors (column `k` belongs to
/// `values[k]`).
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    pub vectors: Option<Mat<C64>>,
    pub tag: BasisTag,
}

impl EigenSystem {
    pub fn vector(&self, k: usize) -> Option<Vec<C64>> {
        let v = self.vectors.as_ref()?;
        Some((0..v.nrows()).map(|r| v[(r, k)]).collect())
    }

    fn vectors_or_err(&self) -> Result<&Mat<C64>> {
        self.vectors
            .as_ref()
            .ok_or_else(|| Error::Precondition("eigenvectors were not computed".into()))
    }
}

/// Dense Hermitian diagonalization.
pub fn diagonalize(h: &SparseHermitian, want_vectors: bool) -> Result<EigenSystem> {
    let cap = if want_vectors { MAX_DENSE_WITH_VECTORS } else { MAX_DENSE_VALUES };
    if h.dim() > cap {
        return Err(Error::Resource(format!(
            "dimension {} exceeds the dense cap of {cap}; use Lanczos or Krylov propagation",
            h.dim()
        )));
    }
    let dense = h.to_dense();
    let fail = |e| Error::Divergence(format!("dense eigensolver failed: {e:?}"));
    if want_vectors {
        let e = dense.self_adjoint_eigen(Side::Lower).map_err(fail)?;
        let s = e.S().column_vector();
        let values: Vec<f64> = (0..h.dim()).map(|k| s[k].re).collect();
        let vectors = e.U().to_owned();
        Ok(EigenSystem { values, vectors: Some(vectors), tag: h.tag() })
    } else {
        let mut values = dense.self_adjoint_eigenvalues(Side::Lower).map_err(fail)?;
        values.sort_by(f64::total_cmp);
        Ok(EigenSystem { values, vectors: None, tag: h.tag() })
    }
}

/// Lowest `k` eigenvalues by Lanczos with full reorthogonalization.
///
/// Exactly degenerate levels appear once: a single Krylov sequence cannot
/// resolve multiplicity.
pub fn lanczos_lowest(h: &SparseHermitian, k: usize, tol: f64) -> Result<Vec<f64>> {
    let n = h.dim();
    if k == 0 || k > n {
        return domain(format!("cannot extract {k} levels from dimension {n}"));
    }
    if n <= 64 {
        return Ok(diagonalize(h, false)?.values[..k].to_vec());
    }
    let max_iter = n.min(600);
    let mut rng = ChaCha20Rng::seed_from_u64(0x1a2c_0500);
    let mut v: Vec<C64> = (0..n)
        .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let v0 = l2(&v);
    scale(&mut v, 1.0 / v0);
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![C64::new(0.0, 0.0); n];
    let hnorm = h.max_abs() * (h.nnz() as f64 / n as f64).sqrt().max(1.0);
    let mut last: Vec<f64> = Vec::new();
    for m in 0..max_iter {
        h.matvec(&v, &mut w);
        let a = dot(&v, &w).re;
        alpha.push(a);
        basis.push(v.clone());
        // two passes of classical Gram-Schmidt against every stored vector
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(&mut w, -c, q);
            }
        }
        let b = l2(&w);
        let steps = m + 1;
        if steps >= k && (steps % 5 == 0 || b < 1e-12 * hnorm || steps == max_iter) {
            let (ritz, resid) = tridiagonal_ritz(&alpha, &beta, b, k)?;
            let done = resid.iter().all(|&r| r < tol * hnorm)
                || (last.len() == k && ritz.iter().zip(&last).all(|(x, y)| (x - y).abs() < tol * hnorm * 1e-2));
            if done || b < 1e-12 * hnorm {
                return Ok(ritz);
            }
            last = ritz;
        }
        beta.push(b);
        v.copy_from_slice(&w);
        scale(&mut v, 1.0 / b);
    }
    Err(Error::Convergence { iterations: max_iter, last_residual: f64::NAN, residual_history: vec![] })
}

fn tridiagonal_ritz(alpha: &[f64], beta: &[f64], b_next: f64, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let e = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Divergence(format!("tridiagonal solve failed: {e:?}")))?;
    let s = e.S().column_vector();
    let u = e.U();
    let mut pairs: Vec<(f64, f64)> = (0..m).map(|j| (s[j], (b_next * u[(m - 1, j)]).abs())).collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let k = k.min(m);
    Ok((pairs[..k].iter().map(|p| p.0).collect(), pairs[..k].iter().map(|p| p.1).collect()))
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn l2(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

fn scale(a: &mut [C64], s: f64) {
    a.iter_mut().for_each(|x| *x *= s);
}

fn axpy(y: &mut [C64], c: C64, x: &[C64]) {
    y.iter_mut().zip(x).for_each(|(a, b)| *a += c * b);
}

/// Mean consecutive-gap ratio `⟨min(s_n, s_{n+1}) / max(s_n, s_{n+1})⟩`.
/// Roughly 0.386 for Poisson levels and 0.600 for GUE.
pub fn level_spacing_ratio(values: &[f64]) -> f64 {
    let s: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    let r: Vec<f64> = s
        .windows(2)
        .filter(|w| w[0].max(w[1]) > 0.0)
        .map(|w| w[0].min(w[1]) / w[0].max(w[1]))
        .collect();
    crate::stats::mean(&r)
}

/// Which disordered model a gap ensemble samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapModel {
    Syk,
    FreeFermion,
}

/// Disorder-averaged half-filling gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub n_sites: usize,
    pub mean: f64,
    pub stderr: f64,
    pub n_kept: usize,
    pub n_degenerate: usize,
}

/// Lowest two levels of a sector Hamiltonian, dense up to dimension 1000.
pub fn lowest_two(h: &SparseHermitian) -> Result<(f64, f64)> {
    if h.dim() < 2 {
        return domain("a gap needs at least two levels");
    }
    let v = if h.dim() <= 1000 { diagonalize(h, false)?.values } else { lanczos_lowest(h, 2, 1e-11)? };
    Ok((v[0], v[1]))
}

/// Sector Hamiltonian of realization `r` at half filling.
fn gap_hamiltonian(ens: &DisorderEnsemble, r: usize, n: usize, mu: f64, model: GapModel) -> Result<SparseHermitian> {
    let basis = SectorBasis::enumerate(n, n / 2)?;
    let mut rng = ens.stream(r);
    match model {
        GapModel::Syk => build_syk(&CouplingTensor::sample(n, 1.0, &mut rng)?, mu, &basis),
        GapModel::FreeFermion => build_free_fermion(&HoppingMatrix::sample(n, 1.0, &mut rng)?, &basis),
    }
}

/// Half-filling gap `E₁ − E₀` averaged over the ensemble; realizations with a
/// degenerate ground level are counted but excluded from the mean.
pub fn ground_gap(ens: &DisorderEnsemble, n_sites: usize, mu: f64, model: GapModel) -> Result<GapEstimate> {
    if n_sites % 2 != 0 || n_sites < 2 {
        return domain(format!("half filling needs an even site count, got {n_sites}"));
    }
    let gaps: Vec<(f64, bool)> = (0..ens.realization_count)
        .into_par_iter()
        .map(|r| realization_gap(ens, r, n_sites, mu, model))
        .collect::<Result<_>>()?;
    Ok(summarize_gaps(n_sites, &gaps))
}

/// Gap of one realization and whether its ground level is degenerate.
pub fn realization_gap(ens: &DisorderEnsemble, r: usize, n_sites: usize, mu: f64, model: GapModel) -> Result<(f64, bool)> {
    let h = gap_hamiltonian(ens, r, n_sites, mu, model)?;
    let (e0, e1) = lowest_two(&h)?;
    let gap = e1 - e0;
    Ok((gap, gap <= DEGENERACY_RTOL * e0.abs().max(e1.abs())))
}

/// Mean over the non-degenerate realizations.
pub fn summarize_gaps(n_sites: usize, gaps: &[(f64, bool)]) -> GapEstimate {
    let kept: Vec<f64> = gaps.iter().filter(|g| !g.1).map(|g| g.0).collect();
    let (mean, stderr) = if kept.is_empty() { (0.0, 0.0) } else { mean_stderr(&kept) };
    GapEstimate { n_sites, mean, stderr, n_kept: kept.len(), n_degenerate: gaps.len() - kept.len() }
}

/// Eigen-decomposition of one charge sector.
#[derive(Debug, Clone)]
pub struct SectorEigen {
    pub basis: Arc<SectorBasis>,
    pub eig: EigenSystem,
}

/// All sectors `Q = 0..=N`, indexed by charge.
#[derive(Debug, Clone)]
pub struct GrandSpectrum {
    pub n_sites: usize,
    pub sectors: Vec<SectorEigen>,
}

impl GrandSpectrum {
    /// Diagonalize `build(sector)` for every charge.
    pub fn compute<F>(n_sites: usize, want_vectors: bool, build: F) -> Result<Self>
    where
        F: Fn(&SectorBasis) -> Result<SparseHermitian> + Sync,
    {
        check_dense_sites(n_sites)?;
        let sectors = (0..=n_sites)
            .into_par_iter()
            .map(|q| {
                let basis = Arc::new(SectorBasis::enumerate(n_sites, q)?);
                let eig = diagonalize(&build(&basis)?, want_vectors)?;
                Ok(SectorEigen { basis, eig })
            })
            .collect::<Result<_>>()?;
        Ok(Self { n_sites, sectors })
    }

    pub fn syk(tensor: &CouplingTensor, mu: f64, want_vectors: bool) -> Result<Self> {
        Self::compute(tensor.n_sites(), want_vectors, |b| build_syk(tensor, mu, b))
    }

    /// Every eigenvalue, ascending.
    pub fn values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.sectors.iter().flat_map(|s| s.eig.values.iter().copied()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Global ground energy and every `(charge, level)` within the
    /// degeneracy threshold of it.
    pub fn ground(&self) -> (f64, Vec<(usize, usize)>) {
        let e0 = self.sectors.iter().map(|s| s.eig.values[0]).fold(f64::INFINITY, f64::min);
        let scale = self
            .sectors
            .iter()
            .flat_map(|s| [s.eig.values[0].abs(), s.eig.values.last().unwrap().abs()])
            .fold(0.0, f64::max);
        let mut ground = Vec::new();
        for (q, s) in self.sectors.iter().enumerate() {
            for (k, &e) in s.eig.values.iter().enumerate() {
                if e - e0 > DEGENERACY_RTOL * scale {
                    break;
                }
                ground.push((q, k));
            }
        }
        (e0, ground)
    }

    /// Lowest state as a full-space vector (first member of a degenerate
    /// ground multiplet).
    pub fn ground_state(&self) -> Result<PureState> {
        let (_, g) = self.ground();
        let (q, k) = g[0];
        let s = &self.sectors[q];
        let amps = s.eig.vectors_or_err()?.col(k).iter().copied().collect();
        PureState::new(StateSpace::Sector(s.basis.clone()), amps)?.to_full()
    }
}

/// Per-site thermodynamic functions on a temperature grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoCurve {
    pub temperatures: Vec<f64>,
    pub free_energy_per_site: Vec<f64>,
    pub entropy_per_site: Vec<f64>,
    pub energy_per_site: Vec<f64>,
}

/// Canonical functions of a full spectrum, `Z = Σ e^{−E/T}` evaluated with
/// the exponent anchored at the lowest level.
pub fn thermodynamics(energies: &[f64], n_sites: usize, temperatures: &[f64]) -> Result<ThermoCurve> {
    if temperatures.iter().any(|&t| !(t > 0.0)) {
        return domain("temperatures must be positive");
    }
    if energies.is_empty() {
        return domain("empty spectrum");
    }
    let mut e: Vec<f64> = energies.to_vec();
    e.sort_by(f64::total_cmp);
    let e0 = e[0];
    let n = n_sites as f64;
    let mut curve = ThermoCurve {
        temperatures: temperatures.to_vec(),
        free_energy_per_site: Vec::with_capacity(temperatures.len()),
        entropy_per_site: Vec::with_capacity(temperatures.len()),
        energy_per_site: Vec::with_capacity(temperatures.len()),
    };
    let mut w = vec![0.0; e.len()];
    let mut we = vec![0.0; e.len()];
    for &t in temperatures {
        for (k, &ek) in e.iter().enumerate() {
            w[k] = (-(ek - e0) / t).exp();
            we[k] = w[k] * (ek - e0);
        }
        let z = pairwise_sum(&w);
        let mean_excess = pairwise_sum(&we) / z;
        let f = e0 - t * z.ln();
        let u = e0 + mean_excess;
        curve.free_energy_per_site.push(f / n);
        curve.energy_per_site.push(u / n);
        // S = (U − F)/T = ln Z' + ⟨E − E0⟩/T, free of cancellation
        curve.entropy_per_site.push((z.ln() + mean_excess / t) / n);
    }
    Ok(curve)
}

/// Von Neumann entropy `−Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn von_neumann(probabilities: &[f64]) -> f64 {
    let terms: Vec<f64> = probabilities.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).collect();
    pairwise_sum(&terms)
}

/// Entanglement entropy of sites `0..n_a` in a pure state.
pub fn entanglement_entropy(state: &PureState, n_a: usize) -> Result<f64> {
    let rho = partial_trace(state, n_a)?;
    Ok(von_neumann(&rho.eigenvalues()?))
}

/// Retarded Green's function sampled on a real-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFunction {
    pub omega: Vec<f64>,
    pub retarded: Vec<C64>,
    pub eta: f64,
}

/// Poles of `G^R(ω) = Σ w/(ω − p + iη)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LehmannPoles {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl LehmannPoles {
    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// Four times the mean spacing of poles carrying weight.
    pub fn default_eta(&self) -> f64 {
        let mut p: Vec<f64> = self
            .positions
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 1e-12)
            .map(|(&x, _)| x)
            .collect();
        p.sort_by(f64::total_cmp);
        if p.len() < 2 {
            return 1e-2;
        }
        let spread = p[p.len() - 1] - p[0];
        if spread <= 0.0 {
            return 1e-2;
        }
        4.0 * spread / (p.len() - 1) as f64
    }

    pub fn evaluate(&self, omega: &[f64], eta: f64) -> SpectralFunction {
        let retarded = omega
            .iter()
            .map(|&w| {
                self.positions
                    .iter()
                    .zip(&self.weights)
                    .map(|(&p, &wt)| wt / C64::new(w - p, eta))
                    .sum()
            })
            .collect();
        SpectralFunction { omega: omega.to_vec(), retarded, eta }
    }
}

/// `c_site` (or `c†_site`) applied to a sector vector, landing in `to`.
fn apply_ladder(site: usize, dagger: bool, from: &SectorBasis, to: &SectorBasis, v: &[C64]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); to.dim()];
    for (a, &bits) in from.states().iter().enumerate() {
        let moved = if dagger { create(site, bits) } else { annihilate(site, bits) };
        if let Some((b, s)) = moved {
            out[to.index_of(b).expect("ladder target outside sector")] += v[a] * s;
        }
    }
    out
}

/// Overlaps `|⟨m|u⟩|²` with every eigenvector of `sector`.
fn projections(sector: &SectorEigen, u: &[C64]) -> Result<Vec<f64>> {
    let vecs = sector.eig.vectors_or_err()?;
    Ok((0..vecs.ncols()).map(|m| dot(&vecs.col(m).iter().copied().collect::<Vec<_>>(), u).norm_sqr()).collect())
}

/// Largest grand-space dimension accepted by the finite-temperature sum.
pub const MAX_FINITE_T_DIM: usize = 2000;

/// Lehmann poles of `G^R_i` for a grand spectrum with eigenvectors.
///
/// At `temperature == 0` the ground multiplet is averaged with equal weights;
/// the hole term carries `|⟨m|c_i|0⟩|²`. Positive temperatures use the full
/// double sum and are limited to [`MAX_FINITE_T_DIM`] states.
pub fn lehmann_poles(grand: &GrandSpectrum, site: usize, temperature: f64) -> Result<LehmannPoles> {
    let n = grand.n_sites;
    if site >= n {
        return domain(format!("site {site} outside 0..{n}"));
    }
    let mut positions = Vec::new();
    let mut weights = Vec::new();
    if temperature == 0.0 {
        let (e0, ground) = grand.ground();
        let share = 1.0 / ground.len() as f64;
        for &(q, k) in &ground {
            let g = &grand.sectors[q];
            let psi: Vec<C64> = g.eig.vectors_or_err()?.col(k).iter().copied().collect();
            if q < n {
                let up = &grand.sectors[q + 1];
                let u = apply_ladder(site, true, &g.basis, &up.basis, &psi);
                for (m, w) in projections(up, &u)?.into_iter().enumerate() {
                    positions.push(up.eig.values[m] - e0);
                    weights.push(w * share);
                }
            }
            if q > 0 {
                let down = &grand.sectors[q - 1];
                let u = apply_ladder(site, false, &g.basis, &down.basis, &psi);
                for (m, w) in projections(down, &u)?.into_iter().enumerate() {
                    positions.push(e0 - down.eig.values[m]);
                    weights.push(w * share);
                }
            }
        }
    } else if temperature > 0.0 {
        let dim: usize = grand.sectors.iter().map(|s| s.eig.values.len()).sum();
        if dim > MAX_FINITE_T_DIM {
            return Err(Error::Resource(format!(
                "finite-temperature Lehmann sum limited to {MAX_FINITE_T_DIM} states, got {dim}"
            )));
        }
        let beta = 1.0 / temperature;
        let (e0, _) = grand.ground();
        let boltz = |e: f64| (-beta * (e - e0)).exp();
        let z = pairwise_sum(&grand.values().iter().map(|&e| boltz(e)).collect::<Vec<_>>());
        for q in 0..n {
            // ⟨n|c|m⟩ with n in sector q, m in sector q+1
            let lo = &grand.sectors[q];
            let hi = &grand.sectors[q + 1];
            let vhi = hi.eig.vectors_or_err()?;
            for m in 0..vhi.ncols() {
                let col: Vec<C64> = vhi.col(m).iter().copied().collect();
                let u = apply_ladder(site, false, &hi.basis, &lo.basis, &col);
                for (nn, w) in projections(lo, &u)?.into_iter().enumerate() {
                    let (en, em) = (lo.eig.values[nn], hi.eig.values[m]);
                    positions.push(em - en);
                    weights.push(w * (boltz(en) + boltz(em)) / z);
                }
            }
        }
    } else {
        return domain("temperature must be non-negative");
    }
    Ok(LehmannPoles { positions, weights })
}

/// `G^R_i(ω)` on `omega`; `eta = None` selects [`LehmannPoles::default_eta`].
pub fn greens_lehmann(
    grand: &GrandSpectrum,
    site: usize,
    omega: &[f64],
    eta: Option<f64>,
    temperature: f64,
) -> Result<SpectralFunction> {
    let poles = lehmann_poles(grand, site, temperature)?;
    let eta = eta.unwrap_or_else(|| poles.default_eta());
    if !(eta > 0.0) {
        return domain("Lorentzian width must be positive");
    }
    Ok(poles.evaluate(omega, eta))
}

/// `entropy.csv`: temperature, disorder-averaged entropy per site, stderr.
pub fn entropy_table(temperatures: &[f64], curves: &[ThermoCurve]) -> Table {
    let mut t = Table::new(&["T", "S_per_site", "stderr"]);
    for (k, &temp) in temperatures.iter().enumerate() {
        let s: Vec<f64> = curves.iter().map(|c| c.entropy_per_site[k]).collect();
        let (m, e) = mean_stderr(&s);
        t.push_floats(&[temp, m, e]);
    }
    t
}

/// `gap.csv`.
pub fn gap_table(gaps: &[GapEstimate]) -> Table {
    let mut t = Table::new(&["N", "mean_gap", "stderr", "n_kept"]);
    for g in gaps {
        t.push(vec![g.n_sites.to_string(), fmt_f64(g.mean), fmt_f64(g.stderr), g.n_kept.to_string()]);
    }
    t
}

/// `green.csv`: frequency with real and imaginary parts of `G^R`.
pub fn green_table(sf: &SpectralFunction) -> Table {
    let mut t = Table::new(&["omega", "re_G", "im_G"]);
    for (w, g) in sf.omega.iter().zip(&sf.retarded) {
        t.push_floats(&[*w, g.re, g.im]);
    }
    t.comment(format!("eta={}", fmt_f64(sf.eta)));
    t
}

/// `see.csv`: subsystem size, mean entanglement entropy, stderr.
pub fn see_table(rows: &[(usize, f64, f64)]) -> Table {
    let mut t = Table::new(&["N_A", "S_EE", "stderr"]);
    for &(na, s, e) in rows {
        t.push(vec![na.to_string(), fmt_f64(s), fmt_f64(e)]);
    }
    t
}
