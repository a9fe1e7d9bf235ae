use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use syk_core::couplings::{CouplingTensor, DisorderEnsemble};
use syk_core::largen::{
    entropy_curve_largen, entropy_largen, free_energy_free, free_energy_largen, solve_sd, MatsubaraGreen, SdConfig,
};
use syk_core::spectral::{thermodynamics, GrandSpectrum};
use syk_core::C64;

fn cfg(m: usize) -> SdConfig {
    SdConfig { half_size: Some(m), ..SdConfig::default() }
}

#[test]
fn free_limit_is_exact() {
    let (mu, beta) = (0.3, 3.0);
    let sol = solve_sd(0.0, mu, beta, &cfg(1024), None).unwrap();
    assert_eq!(sol.diagnostics.iterations, 1);
    for i in 0..sol.g_iw.len() {
        let want = 1.0 / C64::new(mu, sol.omega(i));
        assert!((sol.g_iw[i] - want).norm() < 1e-15);
    }
    let f = free_energy_largen(&sol).unwrap();
    let exact = -(1.0 + (beta * mu).exp()).ln() / beta;
    assert!((f - exact).abs() < 1e-8, "{f} vs {exact}");
    assert!((free_energy_free(mu, beta) - exact).abs() < 1e-14);
}

#[test]
fn free_entropy_from_the_derivative() {
    let (mu, t): (f64, f64) = (0.5, 0.5);
    let x = mu / t;
    let exact = (1.0 + x.exp()).ln() - x * x.exp() / (1.0 + x.exp());
    let s = entropy_largen(0.0, mu, t, &cfg(4096), 1e-3).unwrap();
    assert!((s - exact).abs() < 1e-6, "{s} vs {exact}");
}

#[test]
fn half_filling_symmetries() {
    let sol = solve_sd(1.0, 0.0, 50.0, &SdConfig::default(), None).unwrap();
    let l = sol.g_tau.len();
    let mid = sol.g_tau[l / 2];
    assert!(mid.re < 0.0 && mid.im.abs() < 1e-10);
    // with G = −⟨T c c†⟩ at μ = 0: G(τ) = conj G(β − τ)
    for k in 1..l {
        assert!((sol.g_tau[k] - sol.g_tau[l - k].conj()).norm() < 1e-8);
    }
    assert!(sol.conjugation_defect() < 1e-12);
    // antiperiodic jump: G(0⁺) + G(β⁻) = −1 with G(β⁻) from the mirrored side
    assert!((sol.g_tau[0] + sol.g_tau[0].conj() + 1.0).norm() < 1e-8);
    assert_eq!(sol.diagnostics.alpha_halvings, 0);
    let h = &sol.diagnostics.residual_history;
    assert!(h[10..].windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn fixed_point_does_not_depend_on_the_start() {
    let c = cfg(1 << 13);
    let beta = 40.0;
    let base = solve_sd(1.0, 0.0, beta, &c, None).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let noisy: Vec<C64> = base
        .g_iw
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let g0 = 1.0 / C64::new(0.0, base.omega(i));
            g0 * (1.0 + 0.01 * (rng.random::<f64>() - 0.5))
        })
        .collect();
    let start = MatsubaraGreen { g_iw: noisy, ..base.clone() };
    let other = solve_sd(1.0, 0.0, beta, &c, Some(&start)).unwrap();
    let diff = base.g_iw.iter().zip(&other.g_iw).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(diff < 10.0 * c.tolerance, "{diff}");
}

#[test]
fn entropy_is_monotone_and_hot_limit_is_ln2() {
    let temps: Vec<f64> = [200.0, 120.0, 70.0, 40.0, 20.0, 10.0, 5.0, 2.0, 1.0, 0.5, 0.2, 0.1]
        .iter()
        .map(|bj| 1.0 / bj)
        .collect();
    let curve = entropy_curve_largen(1.0, 0.0, &temps, &SdConfig::default()).unwrap();
    for w in curve.entropy_per_site.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{w:?}");
    }
    let hot = entropy_largen(1.0, 0.0, 10.0, &cfg(1 << 12), 0.02).unwrap();
    assert!((hot - std::f64::consts::LN_2).abs() < 1e-2);
}

/// Thermodynamic and zero-temperature limits do not commute: the large-N
/// entropy at modest T stays above the finite-N curve at low T.
#[test]
fn large_n_entropy_exceeds_finite_size_at_low_temperature() {
    let n = 12;
    let ens = DisorderEnsemble::new(3, 3).unwrap();
    let low = 0.01;
    let ed: Vec<f64> = (0..ens.realization_count)
        .map(|r| {
            let t = CouplingTensor::sample(n, 1.0, &mut ens.stream(r)).unwrap();
            let grand = GrandSpectrum::syk(&t, 0.0, false).unwrap();
            thermodynamics(&grand.values(), n, &[low]).unwrap().entropy_per_site[0]
        })
        .collect();
    let s_ed = syk_core::stats::mean(&ed);
    let s_inf = entropy_largen(1.0, 0.0, 0.05, &SdConfig::default(), 0.02).unwrap();
    assert!(s_inf > s_ed, "large-N {s_inf} vs ED {s_ed}");
}
