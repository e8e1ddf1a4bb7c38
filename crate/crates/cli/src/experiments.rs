//! Fit orchestration and the synthetic experiments behind `sweep`, `bench` and the
//! acceptance suite.

use std::time::Instant;

use anyhow::{bail, ensure, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;

use rtvf::fitting::{arx_fit_window, fit_with, initial_poles};
use rtvf::metrics::{fd_ser_db, frequency_grid, hausdorff, output_errors, td_ser_db};
use rtvf::modelops::{frequency_response, simulate_model};
use rtvf::oracle::{add_small_signal_noise, synth_record, InitialState};
use rtvf::regression::{build_regressors_with, solve_pole_ls_fast_with};
use rtvf::{split_bias, ArxModel, Execution, FitConfig, FitReport, RationalModel, StateSpaceModel, TimeSeries};

use crate::modelio::{ArxDoc, ModelDoc, Num, RationalDoc, ReportDoc, WindowMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Rtvf,
    Tdvf,
    Arx,
}

impl Method {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rtvf" => Ok(Method::Rtvf),
            "tdvf" => Ok(Method::Tdvf),
            "arx" => Ok(Method::Arx),
            other => bail!("unknown method `{other}` (rtvf, tdvf, arx)"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rtvf => "rtvf",
            Method::Tdvf => "tdvf",
            Method::Arx => "arx",
        }
    }
}

/// Everything needed to run one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitSpec {
    pub cfg: FitConfig,
    pub method: Method,
    pub na: usize,
    pub nb: usize,
    pub exec: Execution,
}

impl FitSpec {
    /// ARX orders default to one more than the rational order.
    pub fn new(cfg: FitConfig, method: Method) -> Self {
        let n = cfg.order + 1;
        FitSpec {
            cfg,
            method,
            na: n,
            nb: n,
            exec: Execution::default(),
        }
    }
}

pub enum Fitted {
    Rational(RationalModel, FitReport),
    Arx(ArxModel),
}

impl Fitted {
    /// Replays the model on `u`, which must start at the first fitted sample.
    pub fn replay(&self, u: &TimeSeries) -> Result<TimeSeries> {
        Ok(match self {
            Fitted::Rational(m, _) => simulate_model(m, u)?,
            Fitted::Arx(m) => m.simulate(u)?,
        })
    }

    pub fn converged(&self) -> bool {
        match self {
            Fitted::Rational(_, r) => r.converged,
            Fitted::Arx(_) => true,
        }
    }

    /// Transfer matrices over `omegas`.
    pub fn response(&self, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
        Ok(match self {
            Fitted::Rational(m, _) => frequency_response(m, omegas)?,
            Fitted::Arx(m) => omegas.iter().map(|&w| m.frequency_response(w)).collect(),
        })
    }
}

/// Last fitted sample (one-based, inclusive) for a training fraction `split` of
/// the samples from `window_start` on.
pub fn split_end(samples: usize, window_start: usize, split: f64) -> Result<usize> {
    ensure!(split > 0.0 && split <= 1.0, "split must lie in (0, 1]");
    ensure!(window_start >= 1 && window_start < samples, "window start {window_start} outside the record");
    let span = samples - window_start + 1;
    let train = ((span as f64) * split).round() as usize;
    Ok(window_start - 1 + train.clamp(2, span))
}

pub fn fit(u: &TimeSeries, y: &TimeSeries, spec: &FitSpec) -> Result<Fitted> {
    Ok(match spec.method {
        Method::Rtvf | Method::Tdvf => {
            let cfg = FitConfig {
                include_ic_term: spec.method == Method::Rtvf,
                ..spec.cfg.clone()
            };
            let (m, r) = fit_with(u, y, &cfg, spec.exec)?;
            Fitted::Rational(m, r)
        }
        Method::Arx => Fitted::Arx(arx_fit_window(u, y, spec.na, spec.nb, &spec.cfg)?),
    })
}

fn sub(ts: &TimeSeries, base: &[f64]) -> Result<TimeSeries> {
    Ok(ts.with_data(
        ts.channels()
            .iter()
            .zip(base)
            .map(|(c, b)| c.iter().map(|v| v - b).collect())
            .collect(),
    )?)
}

/// Replay metrics against the small-signal reference `y_ref - base`.
///
/// `first`/`last` are one-based sample numbers of the window within the record,
/// only used for labelling.
pub fn window_metrics(
    y_ref: &TimeSeries,
    y_hat: &TimeSeries,
    base: &[f64],
    first: usize,
    last: usize,
) -> Result<WindowMetrics> {
    let r = sub(y_ref, base)?;
    let h = sub(&y_hat.clone().with_t0(y_ref.t0()), base)?;
    let (e_inf, e_inf_rms) = match output_errors(&r, &h) {
        Ok(e) => (e.e_inf, e.e_inf_rms),
        Err(rtvf::Error::ZeroReference) => {
            let e = output_errors(y_ref, &y_hat.clone().with_t0(y_ref.t0()))?;
            (e.e_inf, f64::NAN)
        }
        Err(e) => return Err(e.into()),
    };
    let mut acc = 0.0;
    let mut n = 0usize;
    for (a, b) in r.channels().iter().zip(h.channels()) {
        for (x, z) in a.iter().zip(b) {
            acc += (x - z) * (x - z);
            n += 1;
        }
    }
    let td = td_ser_db(&r, &h).unwrap_or(f64::NAN);
    Ok(WindowMetrics {
        first,
        last,
        e_inf,
        e_inf_rms: Num(e_inf_rms),
        rms_error: (acc / n as f64).sqrt(),
        td_ser: Num(td),
    })
}

/// Result of a fit with its replay over the record from the window start.
pub struct FitRun {
    pub doc: ModelDoc,
    pub fitted: Fitted,
    /// Model outputs from the window start to the end of the record.
    pub replay: TimeSeries,
}

pub fn fit_and_report(u: &TimeSeries, y: &TimeSeries, spec: &FitSpec) -> Result<FitRun> {
    let k = u.len();
    let ws = spec.cfg.window_start;
    let we = spec.cfg.window_end.unwrap_or(k).min(k);
    ensure!(ws >= 1 && ws < we, "empty fitting window {ws}..{we}");
    let fitted = fit(u, y, spec)?;
    let u_run = u.slice(ws - 1, k)?;
    let y_run = y.slice(ws - 1, k)?;
    let replay = fitted.replay(&u_run)?;
    let base: Vec<f64> = y_run.channels().iter().map(|c| c[0]).collect();
    let n_train = we - ws + 1;
    let training = window_metrics(&y_run.slice(0, n_train)?, &replay.slice(0, n_train)?, &base, ws, we)?;
    let validation = if we < k {
        Some(window_metrics(
            &y_run.slice(n_train, y_run.len())?,
            &replay.slice(n_train, replay.len())?,
            &base,
            we + 1,
            k,
        )?)
    } else {
        None
    };
    let window = (ws, we);
    let mut doc = match &fitted {
        Fitted::Rational(m, r) => {
            ModelDoc::Rational(RationalDoc::new(m, ReportDoc::from_fit(spec.method.name(), r, window, training)))
        }
        Fitted::Arx(m) => {
            let r = FitReport {
                converged: true,
                condition: f64::NAN,
                ..FitReport::default()
            };
            ModelDoc::Arx(ArxDoc::new(m, ReportDoc::from_fit("arx", &r, window, training)))
        }
    };
    doc.report_mut().validation = validation;
    Ok(FitRun { doc, fitted, replay })
}

/// Transfer matrices of a state-space system over `omegas`.
pub fn truth_response(sys: &StateSpaceModel, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
    omegas
        .iter()
        .map(|&w| Ok(sys.transfer(Complex64::new(0.0, w))?))
        .collect()
}

/// Noise-free fit of a random system from a non-equilibrium start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Consistency {
    pub hausdorff: f64,
    pub e_inf_rms: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn consistency_case(
    order: usize,
    ports: usize,
    samples: usize,
    omega_max: f64,
    window_start: usize,
    seed: u64,
) -> Result<Consistency> {
    let rec = synth_record(order, ports, samples, omega_max, seed, InitialState::Offset(1.0))?;
    let mut cfg = FitConfig::new(order, omega_max);
    cfg.window_start = window_start;
    let run = fit_and_report(&rec.u, &rec.y, &FitSpec::new(cfg, Method::Rtvf))?;
    let Fitted::Rational(m, r) = &run.fitted else { unreachable!() };
    let report = run.doc.report();
    Ok(Consistency {
        hausdorff: hausdorff(m.poles().as_slice(), &rec.system.eigenvalues())?,
        e_inf_rms: report.training.e_inf_rms.0,
        iterations: r.iterations,
        converged: r.converged,
    })
}

/// One noisy trial of the SNR sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTrial {
    pub snr_db: f64,
    pub seed: u64,
    pub td_ser: f64,
    pub fd_ser: f64,
    pub hausdorff: f64,
}

/// Setup shared by every trial of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSetup {
    pub order: usize,
    pub ports: usize,
    pub samples: usize,
    pub omega_max: f64,
    pub window_start: usize,
}

impl Default for SweepSetup {
    fn default() -> Self {
        SweepSetup {
            order: 10,
            ports: 2,
            samples: 5000,
            omega_max: 10.0,
            window_start: 250,
        }
    }
}

/// Fits noisy small-signal data and scores the model against the clean record:
/// TD-SER replays the clean input, FD-SER compares with the true transfer matrix.
pub fn noise_trial(setup: &SweepSetup, snr_db: f64, seed: u64) -> Result<NoiseTrial> {
    let rec = synth_record(setup.order, setup.ports, setup.samples, setup.omega_max, seed, InitialState::Offset(1.0))?;
    let k = rec.u.len();
    let u = rec.u.slice(setup.window_start - 1, k)?;
    let y = rec.y.slice(setup.window_start - 1, k)?;
    let u_noisy = add_small_signal_noise(&u, snr_db, seed.wrapping_mul(2).wrapping_add(1))?;
    let y_noisy = add_small_signal_noise(&y, snr_db, seed.wrapping_mul(2).wrapping_add(2))?;
    let cfg = FitConfig::new(setup.order, setup.omega_max);
    let mut spec = FitSpec::new(cfg, Method::Rtvf);
    spec.exec = Execution::Sequential;
    let fitted = fit(&u_noisy, &y_noisy, &spec)?;
    let Fitted::Rational(m, _) = &fitted else { unreachable!() };

    let y_hat = fitted.replay(&u)?;
    let base: Vec<f64> = y.channels().iter().map(|c| c[0]).collect();
    let td = td_ser_db(&sub(&y, &base)?, &sub(&y_hat.with_t0(y.t0()), &base)?)?;
    let grid = frequency_grid(setup.omega_max);
    let fd = fd_ser_db(&truth_response(&rec.system, &grid)?, &fitted.response(&grid)?)?;
    Ok(NoiseTrial {
        snr_db,
        seed,
        td_ser: td,
        fd_ser: fd.mean,
        hausdorff: hausdorff(m.poles().as_slice(), &rec.system.eigenvalues())?,
    })
}

/// Runs every `(snr, trial)` pair; jobs are independent and run concurrently.
pub fn sweep(setup: &SweepSetup, snrs: &[f64], trials: usize, base_seed: u64) -> Result<Vec<NoiseTrial>> {
    let jobs: Vec<(f64, u64)> = snrs
        .iter()
        .flat_map(|&s| (0..trials as u64).map(move |t| (s, base_seed + t)))
        .collect();
    rtvf::par::map_slice(&jobs, Execution::Parallel, |&(s, seed)| noise_trial(setup, s, seed))
        .into_iter()
        .collect()
}

/// Per-level summary of a sweep: arithmetic means in dB plus extremes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLevel {
    pub snr_db: f64,
    pub trials: usize,
    pub td_mean: f64,
    pub td_min: f64,
    pub td_max: f64,
    pub fd_mean: f64,
    pub fd_min: f64,
    pub fd_max: f64,
}

pub fn summarize(trials: &[NoiseTrial]) -> Vec<SweepLevel> {
    let mut levels: Vec<f64> = Vec::new();
    for t in trials {
        if !levels.contains(&t.snr_db) {
            levels.push(t.snr_db);
        }
    }
    levels
        .into_iter()
        .map(|snr| {
            let at: Vec<&NoiseTrial> = trials.iter().filter(|t| t.snr_db == snr).collect();
            let n = at.len() as f64;
            let stat = |f: &dyn Fn(&NoiseTrial) -> f64| {
                let v: Vec<f64> = at.iter().map(|t| f(t)).collect();
                (
                    v.iter().sum::<f64>() / n,
                    v.iter().copied().fold(f64::INFINITY, f64::min),
                    v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                )
            };
            let (td_mean, td_min, td_max) = stat(&|t| t.td_ser);
            let (fd_mean, fd_min, fd_max) = stat(&|t| t.fd_ser);
            SweepLevel {
                snr_db: snr,
                trials: at.len(),
                td_mean,
                td_min,
                td_max,
                fd_mean,
                fd_min,
                fd_max,
            }
        })
        .collect()
}

/// Validation-window RMS error of the three methods on one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcComparison {
    pub rtvf: f64,
    pub tdvf: f64,
    pub arx: f64,
}

/// Reduced-order fit of a higher-order system started away from equilibrium,
/// identical data and window for every method.
#[allow(clippy::too_many_arguments)]
pub fn ic_comparison(
    true_order: usize,
    fit_order: usize,
    ports: usize,
    samples: usize,
    omega_max: f64,
    window_start: usize,
    offset_scale: f64,
    seed: u64,
) -> Result<IcComparison> {
    let rec = synth_record(true_order, ports, samples, omega_max, seed, InitialState::Offset(offset_scale))?;
    let mut cfg = FitConfig::new(fit_order, omega_max);
    cfg.window_start = window_start;
    cfg.window_end = Some(split_end(samples, window_start, 0.7)?);
    let score = |method| -> Result<f64> {
        let run = fit_and_report(&rec.u, &rec.y, &FitSpec::new(cfg.clone(), method))?;
        Ok(run.doc.report().validation.as_ref().expect("split leaves a validation window").rms_error)
    };
    Ok(IcComparison {
        rtvf: score(Method::Rtvf)?,
        tdvf: score(Method::Tdvf)?,
        arx: score(Method::Arx)?,
    })
}

/// Best-of-`repeats` wall time of one pole iteration (regressors plus LS solve).
pub fn time_pole_step(ports: usize, order: usize, samples: usize, exec: Execution, repeats: usize) -> Result<f64> {
    let omega = 10.0;
    let rec = synth_record(order, ports, samples, omega, 1, InitialState::Offset(1.0))?;
    let (u, y, _) = split_bias(&rec.joined()?, ports, ports)?;
    let poles = initial_poles(&FitConfig::new(order, omega))?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let b = build_regressors_with(&u, &y, &poles, true, rtvf::FilterRule::ZeroOrderHold, exec)?;
        std::hint::black_box(solve_pole_ls_fast_with(&b, exec)?);
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
