//! Pole initialization, pole relocation and the RTVF / TDVF / ARX drivers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filterbank::{self, sampled_kernel, FilterRule};
use crate::par::Execution;
use crate::regression::{
    build_delta, build_regressors_with, solve_pole_ls, solve_pole_ls_fast_with, solve_residue_ls,
    ResidueCoefficients,
};
use crate::sigcore::{
    same_grid, split_bias, BiasRecord, FitConfig, PoleInit, PoleKind, PoleSet, RationalModel,
    Relocation, Solver, TimeSeries,
};

/// Relative size of `d0` below which the denominator counts as degenerate.
const D0_RTOL: f64 = 1e-12;

/// Trajectory of one fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitReport {
    pub iterations: usize,
    pub pole_history: Vec<PoleSet>,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub condition: f64,
    /// Per-output residual norm of the final residue stage.
    pub residue_residual: Vec<f64>,
    /// Set when the loop stopped because the denominator degenerated.
    pub stop_reason: Option<String>,
    /// Iteration whose poles the model uses, `0` for the starting poles.
    /// The pick minimizes the residue-stage residual, so noise-driven wandering
    /// after a good iterate does not reach the returned model.
    pub selected_iteration: usize,
}

/// Starting poles for the iteration.
pub fn initial_poles(cfg: &FitConfig) -> Result<PoleSet> {
    if cfg.order < 1 || !(cfg.omega_max > 0.0 && cfg.omega_max.is_finite()) {
        return Err(Error::InvalidConfig("order >= 1 and omega_max > 0 required".into()));
    }
    let omega = cfg.omega_max;
    let pairs = cfg.order / 2;
    let mut poles = Vec::with_capacity(cfg.order);
    match cfg.pole_init {
        PoleInit::LogSpaced => {
            for w in log_spaced(omega * 1e-3, omega, pairs) {
                poles.push(Complex64::new(-w / 100.0, w));
                poles.push(Complex64::new(-w / 100.0, -w));
            }
            if cfg.order % 2 == 1 {
                poles.push(Complex64::new(-omega / 2.0, 0.0));
            }
        }
        PoleInit::SeededRandom(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = ((omega * 1e-3).ln(), (omega * 0.999).ln());
            for _ in 0..pairs {
                let w = rng.random_range(lo..hi).exp();
                let zeta: f64 = rng.random_range(0.01..0.5);
                let q = Complex64::new(-zeta * w, w * (1.0 - zeta * zeta).sqrt());
                poles.push(q);
                poles.push(q.conj());
            }
            if cfg.order % 2 == 1 {
                poles.push(Complex64::new(-rng.random_range(lo..hi).exp(), 0.0));
            }
        }
    }
    PoleSet::new(poles)
}

/// `n` log-spaced points on `[lo, hi]`; a single point sits at `hi`.
fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![hi],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

fn check_d0(d0: f64, d: &[Complex64]) -> Result<()> {
    let norm = (d0 * d0 + d.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt();
    if !(d0.abs() > D0_RTOL * norm) || !norm.is_finite() {
        return Err(Error::DenominatorDegenerate { d0, norm });
    }
    Ok(())
}

/// Zeros of `e0 + Σ e_n / (x - c_n)` as eigenvalues of a real matrix.
///
/// Each real center contributes a 1×1 block, each conjugate pair
/// `σ ± jω` the block `[[σ, ω], [-ω, σ]]` with input `[2, 0]` and output
/// `[Re e_n, Im e_n]`; the rank-one update `- b cᵀ / e0` moves the spectrum
/// onto the zeros.
fn barycentric_zeros(centers: &[Complex64], kinds: &[PoleKind], e0: f64, e: &[Complex64]) -> Vec<Complex64> {
    let n = centers.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    let mut c = DVector::<f64>::zeros(n);
    for (m, kind) in kinds.iter().enumerate() {
        let q = centers[m];
        match kind {
            PoleKind::Real => {
                a[(m, m)] = q.re;
                b[m] = 1.0;
                c[m] = e[m].re;
            }
            PoleKind::Upper => {
                a[(m, m)] = q.re;
                a[(m, m + 1)] = q.im;
                a[(m + 1, m)] = -q.im;
                a[(m + 1, m + 1)] = q.re;
                b[m] = 2.0;
                c[m] = e[m].re;
                c[m + 1] = e[m].im;
            }
            PoleKind::Lower => {}
        }
    }
    let m = a - b * c.transpose() / e0;
    m.complex_eigenvalues()
        .iter()
        .map(|z| Complex64::new(z.re, z.im))
        .collect()
}

/// Reflects unstable zeros and rebuilds a conjugate-closed set.
fn stabilize(raw: Vec<Complex64>) -> Result<PoleSet> {
    let flipped: Vec<Complex64> = raw
        .into_iter()
        .map(|z| {
            if z.re > 0.0 {
                Complex64::new(-z.re, z.im)
            } else if z.re == 0.0 {
                Complex64::new(-f64::EPSILON * z.norm().max(f64::MIN_POSITIVE), z.im)
            } else {
                z
            }
        })
        .collect();
    PoleSet::from_approximate(&flipped)
}

/// Zeros of `D(s) = d0 + Σ d_n / (s - q_n)`, `d = (d0, d_1 … d_N)` in complex form.
pub fn relocate_poles(d: &[Complex64], q: &PoleSet) -> Result<PoleSet> {
    check_len(d, q)?;
    let d0 = d[0].re;
    check_d0(d0, &d[1..])?;
    stabilize(barycentric_zeros(q.as_slice(), &q.kinds(), d0, &d[1..]))
}

/// Zeros of the sampled-data denominator `e0 + Σ e_n / (z - α_n)` seen by the
/// filter bank, mapped back with `s = ln(z) · fs`.
///
/// With `F_n(z) = μ_n + ν_n / (z - α_n)`, `e0 = d0 + Σ d_n μ_n` and `e_n = d_n ν_n`.
/// The eigenproblem is solved for `z - 1` so that slow poles keep full precision.
pub fn relocate_poles_sampled(d: &[Complex64], q: &PoleSet, fs: f64, rule: FilterRule) -> Result<PoleSet> {
    check_len(d, q)?;
    let d0 = d[0].re;
    check_d0(d0, &d[1..])?;
    let dt = 1.0 / fs;
    let kernels: Vec<_> = q.iter().map(|&p| sampled_kernel(p, fs, rule)).collect();
    let e0 = d0
        + d[1..]
            .iter()
            .zip(&kernels)
            .map(|(dn, k)| dn * k.mu)
            .sum::<Complex64>()
            .re;
    let e: Vec<Complex64> = d[1..].iter().zip(&kernels).map(|(dn, k)| dn * k.nu).collect();
    check_d0(e0, &e)?;
    let shifted: Vec<Complex64> = q.iter().map(|&p| filterbank::cexpm1(p * dt)).collect();
    let lambdas = barycentric_zeros(&shifted, &q.kinds(), e0, &e);
    let raw = lambdas
        .into_iter()
        .map(|l| {
            let one_plus = Complex64::new(1.0 + l.re, l.im);
            let log_mag = 0.5 * (2.0 * l.re + l.norm_sqr()).ln_1p();
            Complex64::new(log_mag, one_plus.im.atan2(one_plus.re)) * fs
        })
        .collect();
    stabilize(raw)
}

fn check_len(d: &[Complex64], q: &PoleSet) -> Result<()> {
    if d.len() != q.len() + 1 {
        return Err(Error::DimensionMismatch(format!(
            "{} denominator coefficients for {} poles",
            d.len(),
            q.len()
        )));
    }
    Ok(())
}

/// Largest relative distance from a pole of one set to the nearest pole of the other.
pub fn pole_movement(old: &PoleSet, new: &PoleSet) -> f64 {
    let directed = |a: &PoleSet, b: &PoleSet| {
        a.iter()
            .map(|&x| {
                b.iter().map(|&y| (x - y).norm()).fold(f64::INFINITY, f64::min) / x.norm()
            })
            .fold(0.0, f64::max)
    };
    directed(old, new).max(directed(new, old))
}

/// Crops the analysis window and removes the first-sample bias.
struct Prepared {
    u: TimeSeries,
    y: TimeSeries,
    bias: BiasRecord,
    t_start: f64,
}

fn prepare(u: &TimeSeries, y: &TimeSeries, cfg: &FitConfig) -> Result<Prepared> {
    cfg.validate()?;
    same_grid(u, y)?;
    if u.n_channels() != y.n_channels() {
        return Err(Error::ChannelMismatch {
            expected: u.n_channels(),
            got: y.n_channels(),
        });
    }
    let k = u.len();
    let end = cfg.window_end.unwrap_or(k);
    if end > k || cfg.window_start >= end {
        return Err(Error::InvalidConfig(format!(
            "window [{}, {end}] outside 1..={k}",
            cfg.window_start
        )));
    }
    let start = cfg.window_start - 1;
    let joined = u.hstack(y)?.slice(start, end)?;
    let t_start = joined.t0();
    let p = u.n_channels();
    let (u_s, y_s, bias) = split_bias(&joined, p, p)?;
    Ok(Prepared {
        u: u_s,
        y: y_s,
        bias,
        t_start,
    })
}

/// Real-time vector fitting with the initial-condition term.
pub fn rtvf_fit(u: &TimeSeries, y: &TimeSeries, cfg: &FitConfig) -> Result<(RationalModel, FitReport)> {
    fit_with(u, y, cfg, Execution::default())
}

/// Canonical time-domain vector fitting: same driver without the initial-condition block.
pub fn tdvf_fit(u: &TimeSeries, y: &TimeSeries, cfg: &FitConfig) -> Result<(RationalModel, FitReport)> {
    let cfg = FitConfig {
        include_ic_term: false,
        ..cfg.clone()
    };
    fit_with(u, y, &cfg, Execution::default())
}

/// Full driver with an explicit execution mode.
pub fn fit_with(
    u: &TimeSeries,
    y: &TimeSeries,
    cfg: &FitConfig,
    exec: Execution,
) -> Result<(RationalModel, FitReport)> {
    let prep = prepare(u, y, cfg)?;
    let p = prep.u.n_channels();
    let n = cfg.order;
    let fs = prep.u.fs();
    let per_row = (n + 1) * p + if cfg.include_ic_term { n + 1 } else { 0 } + n + 1;
    if prep.u.len() < 2 * per_row {
        return Err(Error::TooFewSamples {
            needed: 2 * per_row,
            got: prep.u.len(),
        });
    }

    let mut poles = initial_poles(cfg)?;
    let mut report = FitReport {
        iterations: 0,
        pole_history: Vec::new(),
        residual_history: Vec::new(),
        converged: false,
        condition: f64::NAN,
        residue_residual: Vec::new(),
        stop_reason: None,
        selected_iteration: 0,
    };
    let residue_stage = |poles: &PoleSet| -> Result<ResidueCoefficients> {
        let delta = build_delta(&prep.u, poles, cfg.include_ic_term, cfg.filter_rule, exec)?;
        solve_residue_ls(&delta, &prep.y)
    };
    let mut best: Option<(PoleSet, ResidueCoefficients, f64)> = None;
    for _ in 0..cfg.max_iters {
        let bundle = build_regressors_with(&prep.u, &prep.y, &poles, cfg.include_ic_term, cfg.filter_rule, exec)?;
        let sol = match cfg.solver {
            Solver::Dense => solve_pole_ls(&bundle)?,
            Solver::Fast => solve_pole_ls_fast_with(&bundle, exec)?,
        };
        let d = sol.complex_denominator(&poles)?;
        let next = match cfg.relocation {
            Relocation::Continuous => relocate_poles(&d, &poles),
            Relocation::Sampled => relocate_poles_sampled(&d, &poles, fs, cfg.filter_rule),
        };
        let next = match next {
            Ok(ps) => ps,
            Err(e) => {
                report.stop_reason = Some(e.to_string());
                break;
            }
        };
        // a relocation that merges poles changes the pair layout but never the count
        if next.len() != poles.len() {
            report.stop_reason = Some("relocation changed the pole count".into());
            break;
        }
        let moved = pole_movement(&poles, &next);
        report.iterations += 1;
        report.pole_history.push(next.clone());
        report.residual_history.push(sol.residual);
        report.condition = sol.condition;
        let res = residue_stage(&next)?;
        let score = res.residual.iter().map(|r| r * r).sum::<f64>();
        if best.as_ref().is_none_or(|b| score.total_cmp(&b.2).is_lt()) {
            report.selected_iteration = report.iterations;
            best = Some((next.clone(), res, score));
        }
        poles = next;
        if moved <= cfg.pole_tol {
            report.converged = true;
            break;
        }
    }

    let (poles, res) = match best {
        Some((poles, res, _)) => (poles, res),
        None => {
            let res = residue_stage(&poles)?;
            (poles, res)
        }
    };
    report.residue_residual = res.residual.clone();
    if report.condition.is_nan() {
        report.condition = res.condition;
    }
    let model = RationalModel::new(
        poles,
        res.residues,
        res.direct,
        res.zero_input,
        prep.bias,
        fs,
        prep.t_start,
        cfg.filter_rule,
    )?;
    Ok((model, report))
}

/// Discrete-time ARX model, one difference equation per output:
/// `y_i[k] + Σ_m a_im y_i[k-m] = Σ_j Σ_m b_ijm u_j[k-m]`, `m = 1..`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArxModel {
    pub na: usize,
    pub nb: usize,
    /// `a[i]` has length `na`.
    pub a: Vec<Vec<f64>>,
    /// `b[i][j]` has length `nb`.
    pub b: Vec<Vec<Vec<f64>>>,
    pub fs: f64,
    pub bias: BiasRecord,
    pub t_start: f64,
}

/// Equation-error least squares on the small-signal window of `cfg`.
pub fn arx_fit_window(u: &TimeSeries, y: &TimeSeries, na: usize, nb: usize, cfg: &FitConfig) -> Result<ArxModel> {
    let prep = prepare(u, y, cfg)?;
    let mut m = arx_fit(&prep.u, &prep.y, na, nb)?;
    m.bias = prep.bias;
    m.t_start = prep.t_start;
    Ok(m)
}

/// Equation-error least squares on the given samples, no bias removal.
pub fn arx_fit(u: &TimeSeries, y: &TimeSeries, na: usize, nb: usize) -> Result<ArxModel> {
    same_grid(u, y)?;
    let p_in = u.n_channels();
    let p_out = y.n_channels();
    let lag = na.max(nb);
    let k = u.len();
    let cols = na + nb * p_in;
    if k <= lag || k - lag < cols + 1 || k <= na + nb * p_in + 1 {
        return Err(Error::Underdetermined {
            rows: k.saturating_sub(lag),
            unknowns: cols,
        });
    }
    let rows = k - lag;
    let mut a_out = Vec::with_capacity(p_out);
    let mut b_out = Vec::with_capacity(p_out);
    for i in 0..p_out {
        let yi = y.channel(i);
        let mut x = DMatrix::zeros(rows, cols);
        let mut rhs = DVector::zeros(rows);
        for r in 0..rows {
            let kk = r + lag;
            rhs[r] = yi[kk];
            for m in 1..=na {
                x[(r, m - 1)] = -yi[kk - m];
            }
            for j in 0..p_in {
                let uj = u.channel(j);
                for m in 1..=nb {
                    x[(r, na + j * nb + m - 1)] = uj[kk - m];
                }
            }
        }
        let scales: Vec<f64> = x
            .column_iter()
            .map(|c| {
                let v = c.norm();
                if v > 0.0 {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        for (c, s) in scales.iter().enumerate() {
            x.column_mut(c).unscale_mut(*s);
        }
        let svd = x.svd(true, true);
        let top = svd.singular_values.max();
        let mut theta = svd
            .solve(&rhs, 1e-13 * top.max(f64::MIN_POSITIVE))
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        for (c, s) in scales.iter().enumerate() {
            theta[c] /= s;
        }
        a_out.push(theta.rows(0, na).iter().copied().collect());
        b_out.push(
            (0..p_in)
                .map(|j| theta.rows(na + j * nb, nb).iter().copied().collect())
                .collect(),
        );
    }
    Ok(ArxModel {
        na,
        nb,
        a: a_out,
        b: b_out,
        fs: u.fs(),
        bias: BiasRecord::zeros(p_out.max(p_in)),
        t_start: u.t0(),
    })
}

impl ArxModel {
    /// Free-run simulation from zero past on small-signal inputs.
    pub fn simulate_small(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = u.first().map_or(0, |c| c.len());
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| {
                let mut y = vec![0.0; k];
                for kk in 0..k {
                    let mut v = 0.0;
                    for m in 1..=self.na.min(kk) {
                        v -= a[m - 1] * y[kk - m];
                    }
                    for (j, bj) in b.iter().enumerate() {
                        for m in 1..=self.nb.min(kk) {
                            v += bj[m - 1] * u[j][kk - m];
                        }
                    }
                    y[kk] = v;
                }
                y
            })
            .collect()
    }

    /// Simulates from the first sample of `u`, removing and restoring the stored bias.
    pub fn simulate(&self, u: &TimeSeries) -> Result<TimeSeries> {
        if u.n_channels() != self.bias.u_bias.len() {
            return Err(Error::ChannelMismatch {
                expected: self.bias.u_bias.len(),
                got: u.n_channels(),
            });
        }
        let small: Vec<Vec<f64>> = u
            .channels()
            .iter()
            .zip(&self.bias.u_bias)
            .map(|(c, b)| c.iter().map(|v| v - b).collect())
            .collect();
        let y = self
            .simulate_small(&small)
            .into_iter()
            .zip(&self.bias.y_bias)
            .map(|(c, b)| c.into_iter().map(|v| v + b).collect())
            .collect();
        TimeSeries::from_channels(u.t0(), u.fs(), "y", y)
    }

    /// `H_ij(e^{jω/fs}) = B_ij(z) / A_i(z)`.
    pub fn frequency_response(&self, omega: f64) -> DMatrix<Complex64> {
        let z_inv = Complex64::new(0.0, -omega / self.fs).exp();
        let p_out = self.a.len();
        let p_in = self.b.first().map_or(0, |b| b.len());
        DMatrix::from_fn(p_out, p_in, |i, j| {
            let mut den = Complex64::new(1.0, 0.0);
            let mut zp = Complex64::new(1.0, 0.0);
            for m in 0..self.na {
                zp *= z_inv;
                den += self.a[i][m] * zp;
            }
            let mut num = Complex64::new(0.0, 0.0);
            let mut zp = Complex64::new(1.0, 0.0);
            for m in 0..self.nb {
                zp *= z_inv;
                num += self.b[i][j][m] * zp;
            }
            num / den
        })
    }
}
