//! Large-N saddle point on the Matsubara axis.
//!
//! Grids: `ω_n = (2n+1)π/β` for `n = −M..M`, stored at index `n + M`;
//! `τ_k = kβ/L` for `k = 0..=L` with `L = 2M`, where `k = 0` means `0⁺` and
//! `k = L` means `β⁻`.
//!
//! `ω → τ` sums the free propagator `1/(iω_n + μ)` in closed form and sends
//! only the remainder through the FFT. `τ → ω` integrates the piecewise-cubic
//! interpolant of the samples against `e^{iω_nτ}` exactly, so the
//! endpoint discontinuity of the antiperiodic extension costs nothing.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use crate::error::{domain, Error, Result};
use crate::output::Table;
use crate::spectral::ThermoCurve;
use crate::stats::pairwise_sum;

/// Mixing and stopping rules for the fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdConfig {
    pub alpha: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Grid half-size; `None` picks [`default_half_size`].
    pub half_size: Option<usize>,
    pub tail: TailMode,
}

/// Treatment of the `1/(iω)` tail in the `ω → τ` transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    /// Subtract and add back the free propagator analytically.
    FreeSubtraction,
    /// Plain truncated sum (diagnostic only; aliases badly).
    Truncated,
}

impl Default for SdConfig {
    fn default() -> Self {
        Self { alpha: 0.3, tolerance: 1e-10, max_iterations: 5000, half_size: None, tail: TailMode::FreeSubtraction }
    }
}

/// `2¹⁴` up to `βJ = 200`, growing linearly in `βJ` beyond.
pub fn default_half_size(beta_j: f64) -> usize {
    const BASE: usize = 1 << 14;
    if beta_j <= 200.0 {
        BASE
    } else {
        (BASE as f64 * beta_j / 200.0).ceil() as usize
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SdDiagnostics {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_alpha: f64,
    /// Times the mixing was halved because the residual rose.
    pub alpha_halvings: usize,
}

/// Converged (or last) iterate of the saddle-point equations.
#[derive(Debug, Clone)]
pub struct MatsubaraGreen {
    pub beta: f64,
    pub mu: f64,
    pub coupling: f64,
    pub half_size: usize,
    pub g_iw: Vec<C64>,
    pub sigma_iw: Vec<C64>,
    /// `G(τ_k)` for `k = 0..L`, i.e. on `[0, β)`.
    pub g_tau: Vec<C64>,
    /// `Σ(τ_k)` for `k = 0..L`.
    pub sigma_tau: Vec<C64>,
    pub converged: bool,
    pub diagnostics: SdDiagnostics,
}

impl MatsubaraGreen {
    /// `ω_n` at storage index `idx`.
    pub fn omega(&self, idx: usize) -> f64 {
        matsubara(self.beta, idx as i64 - self.half_size as i64)
    }

    /// `τ_k = kβ/L`.
    pub fn tau(&self, k: usize) -> f64 {
        k as f64 * self.beta / (2 * self.half_size) as f64
    }

    /// `max |G(iω_{−n−1}) − conj G(iω_n)|`.
    pub fn conjugation_defect(&self) -> f64 {
        let l = self.g_iw.len();
        (0..l).map(|i| (self.g_iw[l - 1 - i] - self.g_iw[i].conj()).norm()).fold(0.0, f64::max)
    }

    /// `|iω_n G(iω_n) − 1|` at the largest stored frequency.
    pub fn tail_defect(&self) -> f64 {
        let last = self.g_iw.len() - 1;
        (C64::new(0.0, self.omega(last)) * self.g_iw[last] - 1.0).norm()
    }
}

#[inline]
fn matsubara(beta: f64, n: i64) -> f64 {
    (2 * n + 1) as f64 * PI / beta
}

/// Free propagator `G₀(τ) = −e^{μτ}/(1 + e^{βμ})` on `0 < τ < β`, evaluated
/// without overflow.
fn free_tau(mu: f64, beta: f64, tau: f64) -> f64 {
    if mu > 0.0 {
        -(mu * (tau - beta)).exp() / ((-beta * mu).exp() + 1.0)
    } else {
        -(mu * tau).exp() / (1.0 + (beta * mu).exp())
    }
}

/// Moments `∫₀¹ u^p e^{iθu} du`, `p = 0..=3`, by power series (`|θ| ≤ π`).
fn moments(theta: f64) -> [C64; 4] {
    let mut out = [C64::new(0.0, 0.0); 4];
    for (p, m) in out.iter_mut().enumerate() {
        let mut term = C64::new(1.0, 0.0); // (iθ)^k / k!
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..60 {
            acc += term / (p + k + 1) as f64;
            term *= C64::new(0.0, theta) / (k + 1) as f64;
            if term.norm() < 1e-18 {
                break;
            }
        }
        *m = acc;
    }
    out
}

/// Power coefficients of the Lagrange basis polynomial for `nodes[a]`.
fn lagrange_coeffs(nodes: [f64; 4], a: usize) -> [f64; 4] {
    let mut c = [1.0, 0.0, 0.0, 0.0];
    let mut deg = 0;
    let mut denom = 1.0;
    for (b, &xb) in nodes.iter().enumerate() {
        if b == a {
            continue;
        }
        // multiply by (u − xb)
        for d in (0..=deg + 1).rev() {
            let lower = if d > 0 { c[d - 1] } else { 0.0 };
            c[d] = lower - xb * c[d];
        }
        deg += 1;
        denom *= nodes[a] - xb;
    }
    c.map(|v| v / denom)
}

fn basis_integral(nodes: [f64; 4], a: usize, m: &[C64; 4]) -> C64 {
    let c = lagrange_coeffs(nodes, a);
    (0..4).map(|p| m[p] * c[p]).sum()
}

/// Weights of the cubic-interpolation Fourier integral at `θ = ωΔ`.
///
/// `∫₀^{LΔ} e^{iωτ} f dτ ≈ Δ[W Σ_{j=0}^{L} f_j e^{iθj} + Σ_{j<4} α_j f_j
/// + e^{iθL} Σ_{j<4} conj(α_j) f_{L−j}]`, exact for cubic `f`.
fn cubic_weights(theta: f64) -> (f64, [C64; 4]) {
    let m = moments(theta);
    let inner = [-1.0, 0.0, 1.0, 2.0];
    let first = [0.0, 1.0, 2.0, 3.0];
    let phase = |x: f64| C64::from_polar(1.0, theta * x);
    // interior point j is covered by intervals j−2..=j+1 with local node −d
    let w: C64 = (-2i32..=1).map(|d| phase(d as f64) * basis_integral(inner, (1 - d) as usize, &m)).sum();
    let mut alpha = [C64::new(0.0, 0.0); 4];
    for (j, slot) in alpha.iter_mut().enumerate() {
        // interval 0 uses points 0..=3 on nodes 0..=3; interval i ≥ 1 uses i−1..=i+2
        let mut wj = basis_integral(first, j, &m);
        for i in 1..=j + 1 {
            let a = j as i64 - (i as i64 - 1);
            if (0..4).contains(&a) {
                wj += phase(i as f64) * basis_integral(inner, a as usize, &m);
            }
        }
        *slot = wj - w * phase(j as f64);
    }
    debug_assert!(w.im.abs() < 1e-12);
    (w.re, alpha)
}

/// Precomputed plans and weights for one `(β, M)` grid.
pub struct MatsubaraTransform {
    beta: f64,
    half_size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    weights: Vec<(f64, [C64; 4])>,
    // e^{−iπk/L} (−1)^k
    twist: Vec<C64>,
}

impl MatsubaraTransform {
    pub fn new(beta: f64, half_size: usize) -> Self {
        let l = 2 * half_size;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(l);
        let inverse = planner.plan_fft_inverse(l);
        let weights = (0..l)
            .map(|idx| cubic_weights(matsubara(beta, idx as i64 - half_size as i64) * beta / l as f64))
            .collect();
        let twist = (0..l)
            .map(|k| {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                C64::from_polar(s, -PI * k as f64 / l as f64)
            })
            .collect();
        Self { beta, half_size, forward, inverse, weights, twist }
    }

    fn len(&self) -> usize {
        2 * self.half_size
    }

    /// `f(τ_k)` for `k = 0..=L` from `f(iω_n)`, `f(τ) = (1/β) Σ e^{−iω_nτ} f(iω_n)`.
    /// With `free_mu = Some(μ)` the part `1/(iω_n + μ)` is handled exactly.
    pub fn to_tau(&self, f_iw: &[C64], free_mu: Option<f64>) -> Vec<C64> {
        let l = self.len();
        let mut buf: Vec<C64> = match free_mu {
            Some(mu) => (0..l)
                .map(|idx| {
                    let w = matsubara(self.beta, idx as i64 - self.half_size as i64);
                    f_iw[idx] - 1.0 / C64::new(mu, w)
                })
                .collect(),
            None => f_iw.to_vec(),
        };
        self.forward.process(&mut buf);
        let mut out: Vec<C64> = buf.iter().zip(&self.twist).map(|(x, t)| x * t / self.beta).collect();
        // the remainder is continuous across the antiperiodic boundary
        out.push(-out[0]);
        if let Some(mu) = free_mu {
            for (k, v) in out.iter_mut().enumerate() {
                let tau = (k as f64 * self.beta / l as f64).min(self.beta);
                *v += free_tau(mu, self.beta, tau);
            }
        }
        out
    }

    /// `f(iω_n) = ∫₀^β e^{iω_nτ} f(τ) dτ` from `f(τ_k)`, `k = 0..=L`.
    pub fn to_iw(&self, f_tau: &[C64]) -> Vec<C64> {
        let l = self.len();
        assert_eq!(f_tau.len(), l + 1);
        // e^{iθ_n j} = e^{iπj/L} (−1)^j e^{2πi m j/L}, m = n + M
        let mut buf: Vec<C64> = (0..l).map(|j| f_tau[j] * self.twist[j].conj()).collect();
        self.inverse.process(&mut buf);
        let delta = self.beta / l as f64;
        buf.iter()
            .zip(&self.weights)
            .map(|(&s, &(w, alpha))| {
                // e^{iθL} = −1 for fermionic frequencies
                let sum = s - f_tau[l];
                let mut acc = sum * w;
                for j in 0..4 {
                    acc += alpha[j] * f_tau[j] - alpha[j].conj() * f_tau[l - j];
                }
                acc * delta
            })
            .collect()
    }
}

/// Solve `G = 1/(iω + μ − Σ)`, `Σ(τ) = −J²G(τ)²G(−τ)` by damped iteration.
///
/// `init` seeds the iteration (it must live on the same grid); otherwise the
/// free propagator is used.
pub fn solve_sd(j: f64, mu: f64, beta: f64, config: &SdConfig, init: Option<&MatsubaraGreen>) -> Result<MatsubaraGreen> {
    if !(beta > 0.0) || beta * j.abs() > 1e4 {
        return domain(format!("βJ must lie in (0, 1e4], got β={beta}, J={j}"));
    }
    if !(config.alpha > 0.0 && config.alpha <= 1.0) || !(config.tolerance > 0.0) {
        return domain("mixing must lie in (0,1] and tolerance must be positive");
    }
    let m = config.half_size.unwrap_or_else(|| default_half_size(beta * j.abs()));
    if m < 1 << 8 {
        return domain(format!("grid half-size {m} below the minimum of 256"));
    }
    let tr = MatsubaraTransform::new(beta, m);
    let l = 2 * m;
    let omega: Vec<f64> = (0..l).map(|idx| matsubara(beta, idx as i64 - m as i64)).collect();
    let free_mu = match config.tail {
        TailMode::FreeSubtraction => Some(mu),
        TailMode::Truncated => None,
    };
    let mut g: Vec<C64> = match init {
        Some(s) if s.half_size == m && s.beta == beta => s.g_iw.clone(),
        Some(_) => return domain("initial guess lives on a different grid"),
        None => omega.iter().map(|&w| 1.0 / C64::new(mu, w)).collect(),
    };
    let j2 = j * j;
    let mut alpha = config.alpha;
    let mut diag = SdDiagnostics::default();
    let mut sigma_iw = vec![C64::new(0.0, 0.0); l];
    let mut g_tau;
    let mut sigma_tau;
    let mut converged = false;
    loop {
        g_tau = tr.to_tau(&g, free_mu);
        sigma_tau = (0..=l).map(|k| g_tau[k] * g_tau[k] * g_tau[l - k] * j2).collect::<Vec<_>>();
        sigma_iw = if j2 == 0.0 { vec![C64::new(0.0, 0.0); l] } else { tr.to_iw(&sigma_tau) };
        let g_new: Vec<C64> = (0..l).map(|i| 1.0 / (C64::new(mu, omega[i]) - sigma_iw[i])).collect();
        let residual = g_new.iter().zip(&g).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        if !residual.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite iterate after {} iterations; retry with mixing below {alpha}",
                diag.iterations
            )));
        }
        diag.iterations += 1;
        let rose = diag.residual_history.last().is_some_and(|&prev| residual > prev);
        diag.residual_history.push(residual);
        if residual < config.tolerance {
            g = g_new;
            converged = true;
            break;
        }
        if diag.iterations >= config.max_iterations {
            break;
        }
        if rose && diag.iterations > 10 {
            alpha *= 0.5;
            diag.alpha_halvings += 1;
        }
        for (x, y) in g.iter_mut().zip(&g_new) {
            *x = *y * alpha + *x * (1.0 - alpha);
        }
    }
    diag.final_alpha = alpha;
    if !converged {
        return Err(Error::Convergence {
            iterations: diag.iterations,
            last_residual: *diag.residual_history.last().unwrap(),
            residual_history: diag.residual_history,
        });
    }
    // τ data consistent with the returned G
    let g_tau = tr.to_tau(&g, free_mu);
    let sigma_tau: Vec<C64> = (0..=l).map(|k| g_tau[k] * g_tau[k] * g_tau[l - k] * j2).collect();
    Ok(MatsubaraGreen {
        beta,
        mu,
        coupling: j,
        half_size: m,
        g_iw: g,
        sigma_iw,
        g_tau: g_tau[..l].to_vec(),
        sigma_tau: sigma_tau[..l].to_vec(),
        converged,
        diagnostics: diag,
    })
}

/// Trigamma `ψ'(x)` for `x > 0`.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 8.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    // asymptotic series 1/x + 1/(2x²) + Σ B_{2k}/x^{2k+1}
    acc + 1.0 / x
        + 0.5 * x2
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 * (1.0 / 30.0 - x2 * 5.0 / 66.0))))
}

/// Free-fermion grand potential per site `−(1/β) ln(1 + e^{βμ})`.
pub fn free_energy_free(mu: f64, beta: f64) -> f64 {
    let x = beta * mu;
    // ln(1 + e^x) without overflow
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    -softplus / beta
}

/// Large-N free energy per site from a converged solution.
///
/// `F/N = F₀/N + (1/β)Σ ln[G/G₀] − (3/4β)Σ ΣG`; both summands decay as
/// `−Σ₁/ω_n²` with `Σ₁ = −[Σ(0⁺) + Σ(β⁻)]`, and the frequencies beyond the
/// grid are added in closed form.
pub fn free_energy_largen(sol: &MatsubaraGreen) -> Result<f64> {
    if !sol.converged {
        return Err(Error::Precondition("free energy needs a converged solution".into()));
    }
    let beta = sol.beta;
    let terms: Vec<C64> = (0..sol.g_iw.len())
        .map(|i| {
            let w = sol.omega(i);
            let g0 = 1.0 / C64::new(sol.mu, w);
            (sol.g_iw[i] / g0).ln() - sol.sigma_iw[i] * sol.g_iw[i] * 0.75
        })
        .collect();
    let re: Vec<f64> = terms.iter().map(|t| t.re).collect();
    let im: Vec<f64> = terms.iter().map(|t| t.im).collect();
    let sum = C64::new(pairwise_sum(&re), pairwise_sum(&im));
    if (sum.im / beta).abs() > 1e-8 {
        return Err(Error::Precondition(format!("free energy has imaginary part {:.3e}", sum.im / beta)));
    }
    // Σ(0⁺) + Σ(β⁻) with Σ(τ) = −J² G(τ)² G(−τ) and antiperiodicity
    let g0p = sol.g_tau[0];
    let gbm = g_beta_minus(sol);
    let j2 = sol.coupling * sol.coupling;
    let s1 = -(j2 * g0p * g0p * gbm + j2 * gbm * gbm * g0p).re;
    // Σ_{|n|≥M} 1/ω_n² = 2 (β/π)² ψ'(M + 1/2) / 4
    let tail_sum = 0.5 * (beta / PI).powi(2) * trigamma(sol.half_size as f64 + 0.5);
    let tail = -0.25 * s1 * tail_sum;
    Ok(free_energy_free(sol.mu, beta) + (sum.re + tail) / beta)
}

/// `G(β⁻)` recovered from the stored `[0, β)` samples.
fn g_beta_minus(sol: &MatsubaraGreen) -> C64 {
    // G(β⁻) = −G(0⁻) and G(0⁺) − G(0⁻) = −1
    -(sol.g_tau[0] + 1.0)
}

/// Entropy per site `−∂F/∂T` at one temperature by a symmetric difference
/// with relative step `rel_step`.
pub fn entropy_largen(j: f64, mu: f64, temperature: f64, config: &SdConfig, rel_step: f64) -> Result<f64> {
    if !(temperature > 0.0) || !(rel_step > 0.0 && rel_step < 0.5) {
        return domain("temperature must be positive and the step in (0, 0.5)");
    }
    let m = config.half_size.unwrap_or_else(|| default_half_size(j.abs() / temperature));
    let cfg = SdConfig { half_size: Some(m), ..*config };
    let (tl, th) = (temperature * (1.0 - rel_step), temperature * (1.0 + rel_step));
    let fh = free_energy_largen(&solve_sd(j, mu, 1.0 / th, &cfg, None)?)?;
    let fl = free_energy_largen(&solve_sd(j, mu, 1.0 / tl, &cfg, None)?)?;
    Ok(-(fh - fl) / (th - tl))
}

/// Free energy on a temperature grid and the entropy from its derivative
/// (three-point differences on the possibly non-uniform grid, one-sided at
/// the ends).
pub fn entropy_curve_largen(j: f64, mu: f64, temperatures: &[f64], config: &SdConfig) -> Result<ThermoCurve> {
    if temperatures.len() < 5 {
        return domain("entropy curve needs at least five temperatures");
    }
    if temperatures.windows(2).any(|w| !(w[1] > w[0])) || !(temperatures[0] > 0.0) {
        return domain("temperatures must be positive and strictly increasing");
    }
    // one grid size for the whole curve keeps the discretization error smooth in T
    let beta_j_max = j.abs() / temperatures[0];
    let m = config.half_size.unwrap_or_else(|| default_half_size(beta_j_max));
    let cfg = SdConfig { half_size: Some(m), ..*config };
    let f: Vec<f64> = temperatures
        .iter()
        .map(|&t| free_energy_largen(&solve_sd(j, mu, 1.0 / t, &cfg, None)?))
        .collect::<Result<_>>()?;
    let s = negative_derivative(temperatures, &f);
    let u: Vec<f64> = f.iter().zip(&s).zip(temperatures).map(|((f, s), t)| f + t * s).collect();
    Ok(ThermoCurve {
        temperatures: temperatures.to_vec(),
        free_energy_per_site: f,
        entropy_per_site: s,
        energy_per_site: u,
    })
}

/// `−dy/dx` by second-order differences on a non-uniform grid.
fn negative_derivative(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let d3 = |i0: usize, i1: usize, i2: usize, at: usize| {
        // derivative of the quadratic through three points, evaluated at x[at]
        let (x0, x1, x2) = (x[i0], x[i1], x[i2]);
        let t = x[at];
        y[i0] * (2.0 * t - x1 - x2) / ((x0 - x1) * (x0 - x2))
            + y[i1] * (2.0 * t - x0 - x2) / ((x1 - x0) * (x1 - x2))
            + y[i2] * (2.0 * t - x0 - x1) / ((x2 - x0) * (x2 - x1))
    };
    (0..n)
        .map(|i| {
            let d = if i == 0 {
                d3(0, 1, 2, 0)
            } else if i == n - 1 {
                d3(n - 3, n - 2, n - 1, n - 1)
            } else {
                d3(i - 1, i, i + 1, i)
            };
            -d
        })
        .collect()
}

/// Linear extrapolation `S(T) → S(0)` through the given points.
pub fn extrapolate_zero_temperature(temperatures: &[f64], entropies: &[f64]) -> Result<f64> {
    crate::stats::linear_fit(temperatures, entropies)
        .map(|f| f.intercept)
        .ok_or_else(|| Error::Domain("need at least two distinct temperatures".into()))
}

/// Least-squares slope of `ln|G(τ)|` against `ln τ` for `τ` in `[lo, hi]`.
pub fn conformal_slope(sol: &MatsubaraGreen, lo: f64, hi: f64) -> Result<crate::stats::LinearFit> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for k in 1..sol.g_tau.len() {
        let tau = sol.tau(k);
        if tau >= lo && tau <= hi {
            xs.push(tau.ln());
            ys.push(sol.g_tau[k].norm().ln());
        }
    }
    crate::stats::linear_fit(&xs, &ys)
        .ok_or_else(|| Error::Domain(format!("no grid points inside τ ∈ [{lo}, {hi}]")))
}

/// `sd_green.csv`.
pub fn sd_green_table(sol: &MatsubaraGreen) -> Table {
    let mut t = Table::new(&["n", "omega_n", "re_G", "im_G", "re_Sigma", "im_Sigma"]);
    for i in 0..sol.g_iw.len() {
        let n = i as i64 - sol.half_size as i64;
        let (g, s) = (sol.g_iw[i], sol.sigma_iw[i]);
        let mut row = vec![n.to_string()];
        row.extend([sol.omega(i), g.re, g.im, s.re, s.im].map(crate::output::fmt_f64));
        t.push(row);
    }
    t
}

/// `sd_entropy.csv`.
pub fn sd_entropy_table(curve: &ThermoCurve) -> Table {
    let mut t = Table::new(&["T", "F_per_site", "S_per_site"]);
    for i in 0..curve.temperatures.len() {
        t.push_floats(&[curve.temperatures[i], curve.free_energy_per_site[i], curve.entropy_per_site[i]]);
    }
    t
}
