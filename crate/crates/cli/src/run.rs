//! Experiment execution: realization farming, reductions in index order, CSV
//! artifacts and the run manifest.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use syk_core::couplings::{CouplingTensor, DisorderEnsemble};
use syk_core::dynamics::{
    battery_charge_dicke, battery_charge_syk, battery_table, binomial_distance, fit_power_law, optimal_power,
    otoc_syk, otoc_table, power_scaling_table, summarize_power, BatteryRun, OtocCurve, PowerScaling, TraceMethod,
};
use syk_core::fock::SectorBasis;
use syk_core::hamiltonian::build_syk;
use syk_core::largen::{entropy_curve_largen, sd_entropy_table, sd_green_table, solve_sd, SdConfig};
use syk_core::output::{fmt_f64, write_atomic, Table};
use syk_core::spectral::{
    diagonalize, entanglement_entropy, entropy_table, gap_table, green_table, greens_lehmann, level_spacing_ratio,
    realization_gap, see_table, summarize_gaps, thermodynamics, GapModel, GrandSpectrum, SpectralFunction,
};
use syk_core::stats::{linear_fit, mean, mean_stderr};
use syk_core::C64;

use crate::config::{Experiment, RunConfig, Sector, Trace};
use crate::error::CliError;

/// Share of realizations that must succeed for a group to count as done.
pub const MIN_SUCCESS_FRACTION: f64 = 0.8;

/// Outcome of one realization after at most one retry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Ok,
    OkAfterRetry(String),
    Failed(String),
}

impl Status {
    pub fn succeeded(&self) -> bool {
        !matches!(self, Status::Failed(_))
    }

    fn describe(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::OkAfterRetry(first) => format!("ok after retry (first attempt: {first})"),
            Status::Failed(e) => format!("failed: {e}"),
        }
    }
}

fn attempt<T>(f: &(impl Fn(usize) -> syk_core::Result<T> + Sync), r: usize) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(|| f(r))) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "worker panicked".into())),
    }
}

/// Run `f` on every realization index, retrying each failure once. Results
/// come back in index order whatever the scheduling.
pub fn farm<T: Send>(count: usize, f: impl Fn(usize) -> syk_core::Result<T> + Sync) -> Vec<(Status, Option<T>)> {
    (0..count)
        .into_par_iter()
        .map(|r| match attempt(&f, r) {
            Ok(v) => (Status::Ok, Some(v)),
            Err(first) => match attempt(&f, r) {
                Ok(v) => (Status::OkAfterRetry(first), Some(v)),
                Err(second) => (Status::Failed(second), None),
            },
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    artifact_version: String,
    experiment: &'a str,
    /// Canonical config; feeding it back to `syk-lab run` repeats the run.
    config: &'a str,
    master_seed: u64,
    rng: &'static str,
    realization_streams: Vec<u64>,
    started_unix: u64,
    finished_unix: Option<u64>,
    status: &'a str,
    realizations: &'a BTreeMap<String, Vec<String>>,
    artifacts: &'a [String],
    error: Option<String>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out: PathBuf,
    pub artifacts: Vec<String>,
    /// Groups (one per size) that fell below [`MIN_SUCCESS_FRACTION`].
    pub failed_groups: Vec<String>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    ens: DisorderEnsemble,
    statuses: BTreeMap<String, Vec<String>>,
    failed_groups: Vec<String>,
    artifacts: Vec<String>,
}

impl<'a> Runner<'a> {
    /// Farm a group of realizations, record statuses, and return the
    /// successful values in index order.
    fn group<T: Send>(&mut self, label: String, f: impl Fn(usize) -> syk_core::Result<T> + Sync) -> Vec<T> {
        let results = farm(self.cfg.realizations, f);
        let ok = results.iter().filter(|r| r.0.succeeded()).count();
        if (ok as f64) < MIN_SUCCESS_FRACTION * results.len() as f64 {
            self.failed_groups.push(format!("{label}: {ok}/{} realizations succeeded", results.len()));
        }
        self.statuses.insert(label, results.iter().map(|r| r.0.describe()).collect());
        results.into_iter().filter_map(|r| r.1).collect()
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        table.write(&self.cfg.out.join(name))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn body(&mut self) -> Result<(), CliError> {
        match self.cfg.experiment {
            Experiment::Spectrum => self.spectrum(),
            Experiment::Entropy => self.entropy(),
            Experiment::See => self.see(),
            Experiment::Green => self.green(),
            Experiment::Sd => self.sd(),
            Experiment::Otoc => self.otoc(),
            Experiment::Battery => self.battery(),
            Experiment::Dicke => self.dicke(),
            Experiment::PowerScaling => self.power_scaling(),
            Experiment::GapScaling => self.gap_scaling(),
        }
    }

    fn spectrum(&mut self) -> Result<(), CliError> {
        let (cfg, mu) = (self.cfg, self.cfg.mu);
        let ens = self.ens;
        for &n in &cfg.n {
            let charges: Vec<usize> = match cfg.sector {
                Sector::All => (0..=n).collect(),
                Sector::Half => vec![n / 2],
                Sector::Charge(q) => vec![q],
            };
            let per: Vec<(usize, Vec<(usize, Vec<f64>)>)> = self.group(format!("N={n}"), |r| {
                let t = sample(&ens, cfg.j, n, r)?;
                let sectors = charges
                    .iter()
                    .map(|&q| Ok((q, diagonalize(&build_syk(&t, mu, &SectorBasis::enumerate(n, q)?)?, false)?.values)))
                    .collect::<syk_core::Result<_>>()?;
                Ok((r, sectors))
            });
            let mut table = Table::new(&["realization", "charge", "level", "energy"]);
            let mut ratios = Vec::new();
            let ratio_charge = if charges.contains(&(n / 2)) { n / 2 } else { charges[0] };
            for (r, sectors) in &per {
                for (q, values) in sectors {
                    for (k, e) in values.iter().enumerate() {
                        table.push(vec![r.to_string(), q.to_string(), k.to_string(), fmt_f64(*e)]);
                    }
                    if *q == ratio_charge && values.len() > 2 {
                        ratios.push(level_spacing_ratio(values));
                    }
                }
            }
            if !ratios.is_empty() {
                let (m, e) = mean_stderr(&ratios);
                table.comment(format!("spacing_ratio_charge={ratio_charge} mean={} stderr={}", fmt_f64(m), fmt_f64(e)));
            }
            self.write(&format!("spectrum_N{n}.csv"), &table)?;
        }
        Ok(())
    }

    fn entropy(&mut self) -> Result<(), CliError> {
        let (cfg, mu) = (self.cfg, self.cfg.mu);
        let ens = self.ens;
        let temps = cfg.temperatures.points();
        for &n in &cfg.n {
            let curves = self.group(format!("N={n}"), |r| {
                let grand = GrandSpectrum::syk(&sample(&ens, cfg.j, n, r)?, mu, false)?;
                thermodynamics(&grand.values(), n, &temps)
            });
            if !curves.is_empty() {
                self.write(&format!("entropy_N{n}.csv"), &entropy_table(&temps, &curves))?;
            }
        }
        Ok(())
    }

    fn see(&mut self) -> Result<(), CliError> {
        let (cfg, mu) = (self.cfg, self.cfg.mu);
        let ens = self.ens;
        for &n in &cfg.n {
            let per: Vec<Vec<f64>> = self.group(format!("N={n}"), |r| {
                let gs = GrandSpectrum::syk(&sample(&ens, cfg.j, n, r)?, mu, true)?.ground_state()?;
                (1..n).map(|na| entanglement_entropy(&gs, na)).collect()
            });
            if per.is_empty() {
                continue;
            }
            let rows: Vec<(usize, f64, f64)> = (1..n)
                .map(|na| {
                    let (m, e) = mean_stderr(&per.iter().map(|s| s[na - 1]).collect::<Vec<_>>());
                    (na, m, e)
                })
                .collect();
            self.write(&format!("see_N{n}.csv"), &see_table(&rows))?;
        }
        Ok(())
    }

    fn green(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let ens = self.ens;
        let omega = cfg.omega_grid.points();
        for &n in &cfg.n {
            let per: Vec<SpectralFunction> = self.group(format!("N={n}"), |r| {
                let grand = GrandSpectrum::syk(&sample(&ens, cfg.j, n, r)?, cfg.mu, true)?;
                greens_lehmann(&grand, cfg.site, &omega, cfg.eta, cfg.temperature)
            });
            if per.is_empty() {
                continue;
            }
            let k = per.len() as f64;
            let retarded: Vec<C64> =
                (0..omega.len()).map(|i| per.iter().map(|s| s.retarded[i]).sum::<C64>() / k).collect();
            let eta = mean(&per.iter().map(|s| s.eta).collect::<Vec<_>>());
            let mut table = green_table(&SpectralFunction { omega: omega.clone(), retarded, eta });
            table.comment(format!("site={} temperature={}", cfg.site, fmt_f64(cfg.temperature)));
            self.write(&format!("green_N{n}.csv"), &table)?;
        }
        Ok(())
    }

    fn sd(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let temps = cfg.temperatures.points();
        let t_min = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        let sol = solve_sd(cfg.j, cfg.mu, 1.0 / t_min, &SdConfig::default(), None)?;
        let mut table = sd_green_table(&sol);
        table.comment(format!(
            "beta={} iterations={} alpha_halvings={}",
            fmt_f64(1.0 / t_min),
            sol.diagnostics.iterations,
            sol.diagnostics.alpha_halvings
        ));
        self.write("sd_green.csv", &table)?;
        // the derivative stencil needs a few neighbours; short grids give the Green's function only
        if temps.len() >= 5 {
            let curve = entropy_curve_largen(cfg.j, cfg.mu, &temps, &SdConfig::default())?;
            self.write("sd_entropy.csv", &sd_entropy_table(&curve))?;
        }
        Ok(())
    }

    fn otoc(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let ens = self.ens;
        let t = cfg.t.points();
        for &n in &cfg.n {
            let curves: Vec<OtocCurve> = self.group(format!("N={n}"), |r| {
                let method = match cfg.trace {
                    Trace::Exact => TraceMethod::Exact,
                    Trace::Stochastic => {
                        TraceMethod::Stochastic { samples: cfg.samples, seed: cfg.seed ^ ((r as u64 + 1) << 32) }
                    }
                };
                otoc_syk(&sample(&ens, cfg.j, n, r)?, cfg.w_site, cfg.v_site, &t, method)
            });
            if curves.is_empty() {
                continue;
            }
            let k = curves.len() as f64;
            let f: Vec<C64> = (0..t.len()).map(|i| curves.iter().map(|c| c.f[i]).sum::<C64>() / k).collect();
            let (c, stderr): (Vec<f64>, Vec<f64>) = (0..t.len())
                .map(|i| {
                    if curves.len() == 1 {
                        (curves[0].c[i], curves[0].stderr[i])
                    } else {
                        mean_stderr(&curves.iter().map(|c| c.c[i]).collect::<Vec<_>>())
                    }
                })
                .unzip();
            let avg = OtocCurve { t: t.clone(), f, c, stderr, w_site: cfg.w_site, v_site: cfg.v_site };
            self.write(&format!("otoc_N{n}.csv"), &otoc_table(&avg))?;
        }
        Ok(())
    }

    fn battery_runs(&mut self, n: usize, ergotropy_m: &[usize]) -> Vec<BatteryRun> {
        let cfg = self.cfg;
        let ens = self.ens;
        let tau = cfg.tau.points();
        self.group(format!("N={n}"), |r| battery_charge_syk(&sample(&ens, cfg.j, n, r)?, cfg.omega, &tau, cfg.variant, ergotropy_m))
    }

    fn battery(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let tau = cfg.tau.points();
        for &n in &cfg.n {
            let runs = self.battery_runs(n, &cfg.ergotropy_m);
            if runs.is_empty() {
                continue;
            }
            let avg = average_runs(&runs);
            let point = summarize_power(n, &tau, &runs);
            let mut table = battery_table(&avg);
            table.comment(format!("variant={} realizations={}", cfg.variant.name(), runs.len()));
            table.comment(format!(
                "P_star={} tau_star={} E_at_tau_star={} E_plateau={}",
                fmt_f64(point.p_star),
                fmt_f64(point.tau_star),
                fmt_f64(point.energy_at_tau_star),
                fmt_f64(point.energy_plateau)
            ));
            if let Some(last) = avg.populations.last() {
                table.comment(format!("binomial_tv_final={}", fmt_f64(binomial_distance(last))));
            }
            self.write(&format!("battery_N{n}_{}.csv", cfg.variant.name()), &table)?;
        }
        Ok(())
    }

    fn power_scaling(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let tau = cfg.tau.points();
        let mut points = Vec::new();
        for &n in &cfg.n {
            let runs = self.battery_runs(n, &[]);
            if !runs.is_empty() {
                points.push(summarize_power(n, &tau, &runs));
            }
        }
        if points.len() < 3 {
            return Err(CliError::Partial("fewer than three sizes produced data; no fit".into()));
        }
        let x: Vec<f64> = points.iter().map(|p| p.n_sites as f64).collect();
        let y: Vec<f64> = points.iter().map(|p| p.p_star).collect();
        let fit = fit_power_law(&x, &y)?;
        let s = PowerScaling { variant: cfg.variant, points, fit };
        self.write("power_scaling.csv", &power_scaling_table(&s))
    }

    fn gap_scaling(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let ens = self.ens;
        let mut gaps = Vec::new();
        for &n in &cfg.n {
            let per = self.group(format!("N={n}"), |r| realization_gap(&ens, r, n, cfg.mu, GapModel::Syk));
            if !per.is_empty() {
                gaps.push(summarize_gaps(n, &per));
            }
        }
        let mut table = gap_table(&gaps);
        let usable: Vec<_> = gaps.iter().filter(|g| g.n_kept > 0 && g.mean > 0.0).collect();
        if let Some(fit) = linear_fit(
            &usable.iter().map(|g| g.n_sites as f64).collect::<Vec<_>>(),
            &usable.iter().map(|g| g.mean.ln()).collect::<Vec<_>>(),
        ) {
            table.comment(format!("log_gap_slope={} slope_stderr={}", fmt_f64(fit.slope), fmt_f64(fit.slope_stderr)));
        }
        self.write("gap.csv", &table)
    }

    fn dicke(&mut self) -> Result<(), CliError> {
        let cfg = self.cfg;
        let tau = cfg.tau.points();
        let mut summary = Table::new(&["N", "P_star", "tau_star", "E_at_tau_star"]);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &n in &cfg.n {
            let run = battery_charge_dicke(n, cfg.omega, cfg.lambda, &tau, cfg.dicke_mode, cfg.rescale)?;
            let (p, t_star) = optimal_power(&run);
            let at = tau.iter().position(|&x| x == t_star).unwrap_or(0);
            summary.push(vec![n.to_string(), fmt_f64(p), fmt_f64(t_star), fmt_f64(run.energy[at])]);
            xs.push(n as f64);
            ys.push(p);
            self.write(&format!("dicke_N{n}.csv"), &battery_table(&run))?;
        }
        let mode = match cfg.dicke_mode {
            syk_core::dynamics::DickeMode::Collective => "collective",
            syk_core::dynamics::DickeMode::Parallel => "parallel",
        };
        summary.comment(format!("mode={mode} rescale={} lambda={}", cfg.rescale, fmt_f64(cfg.lambda)));
        if xs.len() >= 3 {
            let fit = fit_power_law(&xs, &ys)?;
            summary.comment(format!("slope={} slope_stderr={}", fmt_f64(fit.slope), fmt_f64(fit.slope_stderr)));
        }
        self.write("dicke.csv", &summary)
    }
}

fn sample(ens: &DisorderEnsemble, j: f64, n: usize, r: usize) -> syk_core::Result<CouplingTensor> {
    CouplingTensor::sample(n, j, &mut ens.stream(r))
}

/// Pointwise ensemble mean of runs sharing a grid.
fn average_runs(runs: &[BatteryRun]) -> BatteryRun {
    let k = runs.len() as f64;
    let avg = |get: &dyn Fn(&BatteryRun) -> &Vec<f64>| -> Vec<f64> {
        (0..get(&runs[0]).len()).map(|i| runs.iter().map(|r| get(r)[i]).sum::<f64>() / k).collect()
    };
    let first = &runs[0];
    BatteryRun {
        tau: first.tau.clone(),
        energy: avg(&|r| &r.energy),
        power: avg(&|r| &r.power),
        ergotropy: first
            .ergotropy
            .iter()
            .enumerate()
            .map(|(j, (m, _))| (*m, avg(&|r: &BatteryRun| &r.ergotropy[j].1)))
            .collect(),
        populations: (0..first.populations.len())
            .map(|t| (0..first.populations[t].len()).map(|q| runs.iter().map(|r| r.populations[t][q]).sum::<f64>() / k).collect())
            .collect(),
        n_sites: first.n_sites,
        omega: first.omega,
        label: first.label.clone(),
    }
}

fn write_manifest(
    cfg: &RunConfig,
    canonical: &str,
    started: u64,
    finished: Option<u64>,
    status: &str,
    statuses: &BTreeMap<String, Vec<String>>,
    artifacts: &[String],
    error: Option<String>,
) -> Result<(), CliError> {
    let streams = if cfg.experiment.is_disordered() { (0..cfg.realizations as u64).collect() } else { Vec::new() };
    let m = Manifest {
        artifact_version: format!("syk-lab {}", env!("CARGO_PKG_VERSION")),
        experiment: cfg.experiment.name(),
        config: canonical,
        master_seed: cfg.seed,
        rng: "ChaCha20 keyed by seed_from_u64(master_seed); realization r reads stream id r",
        realization_streams: streams,
        started_unix: started,
        finished_unix: finished,
        status,
        realizations: statuses,
        artifacts,
        error,
    };
    let json = serde_json::to_string_pretty(&m).map_err(|e| CliError::Other(e.to_string()))?;
    write_atomic(&cfg.out.join("manifest.json"), json.as_bytes())?;
    Ok(())
}

/// Validate, execute and record one experiment under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<RunReport, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out)?;
    let canonical = cfg.canonical();
    write_atomic(&cfg.out.join("config.cfg"), canonical.as_bytes())?;
    let started = now();
    let empty = BTreeMap::new();
    write_manifest(cfg, &canonical, started, None, "running", &empty, &[], None)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.effective_workers())
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    let mut runner = Runner {
        cfg,
        ens: DisorderEnsemble::new(cfg.seed, cfg.realizations.max(1))?,
        statuses: BTreeMap::new(),
        failed_groups: Vec::new(),
        artifacts: Vec::new(),
    };
    let outcome = pool.install(|| runner.body());
    let outcome = outcome.and_then(|()| {
        if runner.failed_groups.is_empty() {
            Ok(())
        } else {
            Err(CliError::Partial(runner.failed_groups.join("; ")))
        }
    });
    let status = match &outcome {
        Ok(()) => "ok",
        Err(CliError::Partial(_)) => "partial",
        Err(_) => "failed",
    };
    write_manifest(
        cfg,
        &canonical,
        started,
        Some(now()),
        status,
        &runner.statuses,
        &runner.artifacts,
        outcome.as_ref().err().map(|e| e.to_string()),
    )?;
    outcome.map(|()| RunReport { out: cfg.out.clone(), artifacts: runner.artifacts, failed_groups: runner.failed_groups })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn farm_retries_once_and_keeps_index_order() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls: Vec<AtomicUsize> = (0..6).map(|_| AtomicUsize::new(0)).collect();
        let out = farm(6, |r| {
            let k = calls[r].fetch_add(1, Ordering::SeqCst);
            match (r, k) {
                (2, 0) => Err(syk_core::Error::Domain("transient".into())),
                (4, _) => Err(syk_core::Error::Domain("permanent".into())),
                (5, 0) => panic!("boom"),
                _ => Ok(r * 10),
            }
        });
        assert_eq!(out.iter().map(|o| o.1).collect::<Vec<_>>(), vec![Some(0), Some(10), Some(20), Some(30), None, Some(50)]);
        assert!(matches!(out[2].0, Status::OkAfterRetry(_)));
        assert!(matches!(out[4].0, Status::Failed(_)));
        assert!(matches!(out[5].0, Status::OkAfterRetry(_)));
        assert_eq!(calls[4].load(Ordering::SeqCst), 2);
        assert_eq!(calls[0].load(Ordering::SeqCst), 1);
    }

    #[test]
    fn averaged_runs_are_pointwise_means() {
        let mk = |e: f64| BatteryRun {
            tau: vec![0.0, 1.0],
            energy: vec![0.0, e],
            power: vec![0.0, e],
            ergotropy: vec![(2, vec![0.0, e / 2.0])],
            populations: vec![vec![1.0, 0.0], vec![1.0 - e / 4.0, e / 4.0]],
            n_sites: 1,
            omega: 1.0,
            label: "x".into(),
        };
        let a = average_runs(&[mk(1.0), mk(3.0)]);
        assert_eq!(a.energy, vec![0.0, 2.0]);
        assert_eq!(a.ergotropy[0].1, vec![0.0, 1.0]);
        assert_eq!(a.populations[1], vec![0.5, 0.5]);
    }
}
