//! Streaming Monte Carlo over coupled paths and the convergence run.
//!
//! Paths are drawn one at a time from the counter-based source and folded
//! into accumulators through the order-deterministic reduction, so nothing of
//! size `M × N_fine` is ever held in memory and the results do not depend on
//! the worker count or batch size.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use sdeconv_core::coeffs::{CoefficientSpec, DiffusionCertificate};
use sdeconv_core::em::{CoupledPath, CoupledSampler};
use sdeconv_core::estimators::{
    default_bandwidth, interpolate_path, key_integral_path, local_time_path, modulus_exceedances,
    push_increment_moment, stochastic_integral_sup, Estimate, FrequencyEstimate, MeanAccumulator, RateModel,
    StrongErrorAccumulator, SupMean, SupMeanAccumulator,
};
use sdeconv_core::reduce::{reduce_paths, with_workers};
use sdeconv_core::{BrownianSource, ErrorReportF64};

use crate::config::ExperimentConfig;

pub struct Experiment {
    pub config: ExperimentConfig,
    pub b: CoefficientSpec<f64>,
    pub sigma: CoefficientSpec<f64>,
    pub cert: DiffusionCertificate<f64>,
    pub batch_paths: usize,
}

/// Local-time moments at one `(θ, x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTimeCell {
    pub theta: f64,
    pub x: f64,
    pub mean: Estimate<f64>,
    pub second_moment: Estimate<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> anyhow::Result<Self> {
        config.validate()?;
        let b = config.b.build()?;
        let (sigma, cert) = config.sigma.build_with_certificate()?;
        let cert = cert.ok_or_else(|| anyhow::anyhow!("sigma is not uniformly elliptic"))?;
        let batch_paths = config.estimators.batch_paths;
        Ok(Self {
            config,
            b,
            sigma,
            cert,
            batch_paths,
        })
    }

    pub fn fine_dt(&self) -> f64 {
        self.config.horizon / self.config.n_fine() as f64
    }

    fn sampler(&self, n_list: Vec<usize>, n_ref: usize) -> anyhow::Result<CoupledSampler<f64>> {
        let source = BrownianSource::new(self.config.seed, self.config.horizon, self.config.n_fine())?;
        Ok(CoupledSampler::new(
            self.b.clone(),
            self.sigma.clone(),
            self.config.x0,
            source,
            n_list,
            n_ref,
        )?)
    }

    fn stream<A: Send>(
        &self,
        sampler: &CoupledSampler<f64>,
        init: impl Fn() -> A + Sync,
        per_path: impl Fn(&mut A, &CoupledPath<f64>) + Sync,
        mut merge: impl FnMut(&mut A, A),
    ) -> anyhow::Result<A> {
        let (acc, _) = reduce_paths(
            self.config.paths,
            self.batch_paths,
            || (init(), sampler.buffers()),
            |(acc, buf), j| {
                sampler.sample(j, buf)?;
                per_path(acc, buf);
                Ok(())
            },
            |(acc, _), (part, _)| merge(acc, part),
        )?;
        Ok(acc)
    }

    /// Strong error of every `n` against `n_ref`, with the `n_ref/2` floor and
    /// both rate fits.
    pub fn strong_error(&self) -> anyhow::Result<ErrorReportF64> {
        let cfg = &self.config;
        let n_list = cfg.n_list.clone();
        let half = (cfg.n_ref % 2 == 0 && cfg.n_ref / 2 >= 3).then_some(cfg.n_ref / 2);
        let mut resolutions = n_list.clone();
        resolutions.extend(half);
        let sampler = self.sampler(resolutions, cfg.n_ref)?;
        let len = cfg.n_fine() + 1;
        let k = n_list.len();
        let acc = self.stream(
            &sampler,
            || StrongErrorAccumulator::new(&n_list, len, half.is_some()),
            |acc, path| {
                let fine: Vec<&[f64]> = path.fine[..k].iter().map(Vec::as_slice).collect();
                acc.push(&path.reference, &fine, path.fine.get(k).map(Vec::as_slice));
            },
            |acc, part| acc.merge(&part),
        )?;
        let mut report = acc.report(cfg.n_ref, self.fine_dt());
        report.fit_models(cfg.estimators.power_bounds.map(|[lo, hi]| (lo, hi)));
        Ok(report)
    }

    /// `max_t E|X_t − X_{η(t)}|^q` for every `n`.
    pub fn increment_moments(&self, q: f64) -> anyhow::Result<Vec<(usize, SupMean<f64>)>> {
        let cfg = &self.config;
        let sampler = self.sampler(cfg.n_list.clone(), cfg.n_list[0])?;
        let len = cfg.n_fine() + 1;
        let cells: Vec<usize> = cfg.n_list.iter().map(|n| cfg.n_fine() / n).collect();
        let acc = self.stream(
            &sampler,
            || vec![SupMeanAccumulator::new(len); cells.len()],
            |acc, path| {
                for ((a, fine), &cell) in acc.iter_mut().zip(&path.fine).zip(&cells) {
                    push_increment_moment(a, fine, cell, q);
                }
            },
            |acc, part| {
                for (a, p) in acc.iter_mut().zip(&part) {
                    a.merge(p);
                }
            },
        )?;
        Ok(cfg.n_list.iter().copied().zip(acc.iter().map(SupMeanAccumulator::finish)).collect())
    }

    pub fn bandwidth(&self) -> f64 {
        self.config
            .estimators
            .bandwidth
            .unwrap_or_else(|| default_bandwidth(self.config.horizon, self.config.n_fine()))
    }

    /// Local time of `V^(n)(θ)` at every `(θ, x)` of the configured grids.
    pub fn local_times(&self, n: usize) -> anyhow::Result<Vec<LocalTimeCell>> {
        let cfg = &self.config;
        let est = &cfg.estimators;
        let h = self.bandwidth();
        let sampler = self.sampler(vec![n], cfg.n_ref)?;
        let cell = cfg.n_fine() / n;
        let dt = self.fine_dt();
        let nf = cfg.n_fine();
        let cells = est.theta.len() * est.x_grid.len();
        let (acc, _) = self.stream(
            &sampler,
            || (vec![(MeanAccumulator::default(), MeanAccumulator::default()); cells], (vec![0.0; nf + 1], vec![0.0; nf])),
            |(acc, (values, qv)), path| {
                for (ti, &theta) in est.theta.iter().enumerate() {
                    interpolate_path(theta, &path.reference, &path.fine[0], cell, &self.sigma, dt, values, qv);
                    for (xi, &x) in est.x_grid.iter().enumerate() {
                        let l = local_time_path(&values[..nf], qv, x, h);
                        let slot = &mut acc[ti * est.x_grid.len() + xi];
                        slot.0.push(l);
                        slot.1.push(l * l);
                    }
                }
            },
            |(acc, _), (part, _)| {
                for (a, p) in acc.iter_mut().zip(part) {
                    a.0.merge(p.0);
                    a.1.merge(p.1);
                }
            },
        )?;
        let mut out = Vec::with_capacity(cells);
        for (ti, &theta) in est.theta.iter().enumerate() {
            for (xi, &x) in est.x_grid.iter().enumerate() {
                let (m, s) = acc[ti * est.x_grid.len() + xi];
                out.push(LocalTimeCell {
                    theta,
                    x,
                    mean: m.finish(),
                    second_moment: s.finish(),
                });
            }
        }
        Ok(out)
    }

    /// Within-cell modulus exceedances at level `eps` and frequency of
    /// `sup |stochastic integral| ≥ K − ‖b‖T − |x0|`, both for EM at `n`.
    pub fn modulus_and_tail(
        &self,
        n: usize,
        eps: f64,
        k: f64,
    ) -> anyhow::Result<(FrequencyEstimate<f64>, FrequencyEstimate<f64>)> {
        let cfg = &self.config;
        let sampler = self.sampler(Vec::new(), n)?;
        let cell = cfg.n_fine() / n;
        let dt = self.fine_dt();
        let level = k - self.b.sup_norm * cfg.horizon - cfg.x0.abs();
        let (hits, tail) = self.stream(
            &sampler,
            || (0usize, 0usize),
            |(hits, tail), path| {
                *hits += modulus_exceedances(&path.reference, cell, eps);
                if stochastic_integral_sup(&path.reference, cell, &self.b, cfg.x0, dt) >= level {
                    *tail += 1;
                }
            },
            |a, p| {
                a.0 += p.0;
                a.1 += p.1;
            },
        )?;
        Ok((
            FrequencyEstimate::new(hits, cfg.paths * n),
            FrequencyEstimate::new(tail, cfg.paths),
        ))
    }

    /// `∫ E|f(X_s) − f(X_{η(s)})|^p ds` for every `n`.
    pub fn key_integrals(&self, f: &CoefficientSpec<f64>, p: f64) -> anyhow::Result<Vec<(usize, Estimate<f64>)>> {
        let cfg = &self.config;
        let sampler = self.sampler(cfg.n_list.clone(), cfg.n_list[0])?;
        let cells: Vec<usize> = cfg.n_list.iter().map(|n| cfg.n_fine() / n).collect();
        let dt = self.fine_dt();
        let acc = self.stream(
            &sampler,
            || vec![MeanAccumulator::default(); cells.len()],
            |acc, path| {
                for ((a, fine), &cell) in acc.iter_mut().zip(&path.fine).zip(&cells) {
                    a.push(key_integral_path(f, p, fine, cell, dt));
                }
            },
            |acc, part| {
                for (a, p) in acc.iter_mut().zip(part) {
                    a.merge(p);
                }
            },
        )?;
        Ok(cfg.n_list.iter().copied().zip(acc.iter().map(MeanAccumulator::finish)).collect())
    }
}

#[derive(Debug, Serialize)]
struct FitEntry {
    model: &'static str,
    params: BTreeMap<&'static str, f64>,
    residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    exponent_bounds: Option<[f64; 2]>,
}

#[derive(Debug, Serialize)]
struct FloorEntry {
    n: usize,
    error_mean: f64,
    error_se: f64,
}

#[derive(Debug, Serialize)]
struct FitFile<'a> {
    b: &'a str,
    sigma: &'a str,
    seed: u64,
    #[serde(rename = "M")]
    paths: usize,
    #[serde(rename = "N_fine")]
    n_fine: usize,
    n_ref: usize,
    degenerate: bool,
    models: Vec<FitEntry>,
    self_coupling_floor: Option<FloorEntry>,
    warnings: &'a [String],
}

pub fn errors_csv(report: &ErrorReportF64) -> String {
    let mut s = String::from("n,error_mean,error_se,error_times_logn,argmax_time\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{}\n",
            r.n,
            r.error_mean,
            r.error_se,
            r.error_times_logn(),
            r.argmax_time
        ));
    }
    s
}

pub fn plotdata_csv(report: &ErrorReportF64) -> String {
    let mut s = String::from("x,y,yerr\n");
    for r in &report.rows {
        s.push_str(&format!("{},{:e},{:e}\n", r.n, r.error_mean, r.error_se));
    }
    s
}

pub fn fit_json(report: &ErrorReportF64, exp: &Experiment) -> String {
    let models = report
        .fits
        .iter()
        .map(|f| {
            let mut params = BTreeMap::new();
            params.insert("c", f.c);
            let exponent_bounds = match f.model {
                RateModel::COverLogN => None,
                RateModel::PowerLaw { bounds } => {
                    params.insert("a", -f.slope);
                    bounds.map(|(lo, hi)| [lo, hi])
                }
            };
            FitEntry {
                model: f.model.name(),
                params,
                residual: f.residual,
                exponent_bounds,
            }
        })
        .collect();
    let file = FitFile {
        b: &exp.b.name,
        sigma: &exp.sigma.name,
        seed: exp.config.seed,
        paths: exp.config.paths,
        n_fine: exp.config.n_fine(),
        n_ref: report.n_ref,
        degenerate: report.fits.len() < 2,
        models,
        self_coupling_floor: report.self_coupling_floor.map(|f| FloorEntry {
            n: f.n,
            error_mean: f.error_mean,
            error_se: f.error_se,
        }),
        warnings: &report.warnings,
    };
    let mut s = serde_json::to_string_pretty(&file).expect("fit report serialises");
    s.push('\n');
    s
}

pub struct RunOutcome {
    pub report: ErrorReportF64,
    pub files: Vec<PathBuf>,
}

/// Runs the convergence experiment and writes `errors.csv`, `fit.json` and
/// `plotdata.csv` into `out_dir`.
pub fn run_convergence(config: &ExperimentConfig, out_dir: &Path, workers: usize) -> anyhow::Result<RunOutcome> {
    let exp = Experiment::new(config.clone())?;
    let report = with_workers(workers, || exp.strong_error())??;
    fs::create_dir_all(out_dir).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out_dir.display()))?;
    let outputs = [
        ("errors.csv", errors_csv(&report)),
        ("fit.json", fit_json(&report, &exp)),
        ("plotdata.csv", plotdata_csv(&report)),
    ];
    let mut files = Vec::new();
    for (name, body) in outputs {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?;
        files.push(path);
    }
    Ok(RunOutcome { report, files })
}
