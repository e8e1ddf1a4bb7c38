//! Single-pole convolution filters.
//!
//! `z⁽ⁿ⁾(t) = ∫₀ᵗ e^{q(t-τ)} z(τ) dτ` sampled on a uniform grid, plus the
//! closed-form filtered Heaviside step and the mapping between complex
//! per-pole coefficients and real least-squares coordinates.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sigcore::{PoleKind, PoleSet};

/// Discretization of the convolution integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterRule {
    /// Trapezoidal rule on the integrand:
    /// `y_k = α y_{k-1} + (Δt/2)(α z_{k-1} + z_k)`.
    Trapezoidal,
    /// Exact for signals held constant between samples:
    /// `y_k = α y_{k-1} + (α - 1)/q · z_{k-1}`.
    ZeroOrderHold,
}

fn check_pole(q: Complex64) -> Result<()> {
    if !(q.re < 0.0 && q.im.is_finite()) {
        return Err(Error::UnstablePole(format!("{q}")));
    }
    Ok(())
}

fn check_fs(fs: f64) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidSampleRate(fs));
    }
    Ok(())
}

/// `e^x - 1` without cancellation for small `|x|`.
pub(crate) fn cexpm1(x: Complex64) -> Complex64 {
    if x.norm() < 1e-5 {
        x * (1.0 + x * (0.5 + x / 6.0))
    } else {
        x.exp() - 1.0
    }
}

/// `(e^{q h} - 1) / q`.
fn phi1(q: Complex64, h: f64) -> Complex64 {
    cexpm1(q * h) / q
}

/// Sampled-data transfer function of one filter: `F(z) = mu + nu / (z - alpha)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledKernel {
    pub alpha: Complex64,
    pub mu: Complex64,
    pub nu: Complex64,
}

pub fn sampled_kernel(q: Complex64, fs: f64, rule: FilterRule) -> SampledKernel {
    let dt = 1.0 / fs;
    let alpha = (q * dt).exp();
    match rule {
        FilterRule::Trapezoidal => SampledKernel {
            alpha,
            mu: Complex64::new(dt / 2.0, 0.0),
            nu: alpha * dt,
        },
        FilterRule::ZeroOrderHold => SampledKernel {
            alpha,
            mu: Complex64::new(0.0, 0.0),
            nu: phi1(q, dt),
        },
    }
}

/// Filters a real signal with the trapezoidal rule.
pub fn filter_signal(z: &[f64], q: Complex64, fs: f64) -> Result<Vec<Complex64>> {
    filter_signal_with(z, q, fs, FilterRule::Trapezoidal)
}

pub fn filter_signal_with(
    z: &[f64],
    q: Complex64,
    fs: f64,
    rule: FilterRule,
) -> Result<Vec<Complex64>> {
    check_pole(q)?;
    check_fs(fs)?;
    let mut out = Vec::with_capacity(z.len());
    run_filter(z, q, fs, rule, |v| out.push(v));
    Ok(out)
}

#[inline]
fn run_filter(z: &[f64], q: Complex64, fs: f64, rule: FilterRule, mut emit: impl FnMut(Complex64)) {
    if z.is_empty() {
        return;
    }
    let dt = 1.0 / fs;
    let alpha = (q * dt).exp();
    let mut y = Complex64::new(0.0, 0.0);
    emit(y);
    match rule {
        FilterRule::Trapezoidal => {
            let h = dt / 2.0;
            for k in 1..z.len() {
                y = alpha * y + (alpha * z[k - 1] + z[k]) * h;
                emit(y);
            }
        }
        FilterRule::ZeroOrderHold => {
            let kappa = phi1(q, dt);
            for k in 1..z.len() {
                y = alpha * y + kappa * z[k - 1];
                emit(y);
            }
        }
    }
}

/// Closed-form filtered unit step `Θ⁽ⁿ⁾(t_k) = (e^{q t_k} - 1) / q`, `k = 0..k_max`.
pub fn filter_step(q: Complex64, k_max: usize, fs: f64) -> Result<Vec<Complex64>> {
    check_pole(q)?;
    check_fs(fs)?;
    Ok((0..k_max).map(|k| phi1(q, k as f64 / fs)).collect())
}

/// Real least-squares columns for every pole of `poles`, applied to `z`.
///
/// Equivalent to `realify_basis` on the complex filter outputs, but only the
/// upper member of each conjugate pair is filtered.
pub fn filtered_columns(z: &[f64], poles: &PoleSet, fs: f64, rule: FilterRule) -> Result<Vec<Vec<f64>>> {
    check_fs(fs)?;
    let mut cols = Vec::with_capacity(poles.len());
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        let q = poles.as_slice()[n];
        match kind {
            PoleKind::Real => {
                let mut col = Vec::with_capacity(z.len());
                run_filter(z, q, fs, rule, |v| col.push(v.re));
                cols.push(col);
            }
            PoleKind::Upper => {
                let mut re = Vec::with_capacity(z.len());
                let mut im = Vec::with_capacity(z.len());
                run_filter(z, q, fs, rule, |v| {
                    re.push(v.re);
                    im.push(v.im);
                });
                cols.push(re);
                cols.push(im);
            }
            PoleKind::Lower => {}
        }
    }
    Ok(cols)
}

/// Real columns of the filtered step for every pole.
pub fn step_columns(poles: &PoleSet, k_max: usize, fs: f64) -> Result<Vec<Vec<f64>>> {
    let cols: Vec<Vec<Complex64>> = poles
        .iter()
        .map(|&q| filter_step(q, k_max, fs))
        .collect::<Result<_>>()?;
    realify_basis(poles, &cols)
}

/// Maps complex filter outputs to real columns.
///
/// A real pole keeps the real part of its column. A conjugate pair `(n, n+1)`
/// becomes `(Re col_n, Im col_n)`; the matching complex coefficient is
/// recovered with [`complex_coefficients`].
pub fn realify_basis(poles: &PoleSet, columns: &[Vec<Complex64>]) -> Result<Vec<Vec<f64>>> {
    if columns.len() != poles.len() {
        return Err(Error::PairStructure(format!(
            "{} columns for {} poles",
            columns.len(),
            poles.len()
        )));
    }
    let mut out = Vec::with_capacity(columns.len());
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        let col = &columns[n];
        let norm = col.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let tol = 1e-12 * norm.max(f64::MIN_POSITIVE);
        match kind {
            PoleKind::Real => {
                let imag = col.iter().map(|v| v.im * v.im).sum::<f64>().sqrt();
                if imag > tol {
                    return Err(Error::PairStructure(format!(
                        "column {n} belongs to a real pole but is complex"
                    )));
                }
                out.push(col.iter().map(|v| v.re).collect());
            }
            PoleKind::Upper => {
                let next = &columns[n + 1];
                if next.len() != col.len() {
                    return Err(Error::PairStructure(format!("columns {n} and {} differ in length", n + 1)));
                }
                let mismatch = col
                    .iter()
                    .zip(next)
                    .map(|(a, b)| (a.conj() - b).norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                if mismatch > tol {
                    return Err(Error::PairStructure(format!(
                        "columns {n} and {} are not conjugate",
                        n + 1
                    )));
                }
                out.push(col.iter().map(|v| v.re).collect());
                out.push(col.iter().map(|v| v.im).collect());
            }
            PoleKind::Lower => {}
        }
    }
    Ok(out)
}

/// Real coordinates `(a, b)` of a pair become `c_n = (a - i b)/2`, `c_{n+1} = conj(c_n)`,
/// so that `c_n z + c_{n+1} conj(z) = a Re z + b Im z`.
pub fn complex_coefficients(poles: &PoleSet, real: &[f64]) -> Result<Vec<Complex64>> {
    if real.len() != poles.len() {
        return Err(Error::PairStructure(format!(
            "{} coefficients for {} poles",
            real.len(),
            poles.len()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); real.len()];
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        match kind {
            PoleKind::Real => out[n] = Complex64::new(real[n], 0.0),
            PoleKind::Upper => {
                let c = Complex64::new(real[n], -real[n + 1]) * 0.5;
                out[n] = c;
                out[n + 1] = c.conj();
            }
            PoleKind::Lower => {}
        }
    }
    Ok(out)
}

/// Inverse of [`complex_coefficients`].
pub fn real_coefficients(poles: &PoleSet, complex: &[Complex64]) -> Result<Vec<f64>> {
    if complex.len() != poles.len() {
        return Err(Error::PairStructure(format!(
            "{} coefficients for {} poles",
            complex.len(),
            poles.len()
        )));
    }
    let mut out = vec![0.0; complex.len()];
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        match kind {
            PoleKind::Real => out[n] = complex[n].re,
            PoleKind::Upper => {
                out[n] = 2.0 * complex[n].re;
                out[n + 1] = -2.0 * complex[n].im;
            }
            PoleKind::Lower => {}
        }
    }
    Ok(out)
}

/// Per-pole complex basis values `w_n` expressed in real coordinates, such that
/// `Σ c_n w_n = Σ r_n v_n` where `r = real_coefficients(c)` and `v` is the result.
pub fn realify_values(poles: &PoleSet, values: &[Complex64]) -> Vec<Complex64> {
    let mut out = values.to_vec();
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        if kind == PoleKind::Upper {
            let (w, w2) = (values[n], values[n + 1]);
            out[n] = (w + w2) * 0.5;
            out[n + 1] = (w - w2) * Complex64::new(0.0, -0.5);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn zero_input_gives_zero() {
        let out = filter_signal(&[0.0; 50], c(-2.0, 3.0), 100.0).unwrap();
        assert!(out.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn step_response_closed_form() {
        let fs = 1000.0;
        let z = vec![1.0; 1001];
        let out = filter_signal(&z, c(-1.0, 0.0), fs).unwrap();
        let exact = 1.0 - (-1.0f64).exp();
        assert!((out[1000].re - exact).abs() < 1e-6);
        assert!((exact - 0.63212).abs() < 1e-5);
    }

    #[test]
    fn exponential_closed_form() {
        let fs = 1000.0;
        let z: Vec<f64> = (0..=1000).map(|k| (-2.0 * k as f64 / fs).exp()).collect();
        let out = filter_signal(&z, c(-2.0, 0.0), fs).unwrap();
        let exact = (-2.0f64).exp();
        assert!((out[1000].re - exact).abs() < 1e-6);
        assert!((exact - 0.13534).abs() < 1e-5);
    }

    #[test]
    fn trapezoidal_second_order_convergence() {
        // z = e^{-t}, q = -2: exact output e^{-t} - e^{-2t}
        let q = c(-2.0, 0.0);
        let err = |fs: f64| {
            let k = (fs as usize) + 1;
            let z: Vec<f64> = (0..k).map(|i| (-(i as f64) / fs).exp()).collect();
            let out = filter_signal(&z, q, fs).unwrap();
            out.iter()
                .enumerate()
                .map(|(i, v)| {
                    let t = i as f64 / fs;
                    (v.re - ((-t).exp() - (-2.0 * t).exp())).abs()
                })
                .fold(0.0, f64::max)
        };
        let e1 = err(100.0);
        let e2 = err(200.0);
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn zoh_is_exact_for_held_signals() {
        // piecewise constant input, analytic convolution interval by interval
        let fs = 4.0;
        let q = c(-0.7, 2.1);
        let z = [0.0, 1.0, -0.5, 2.0, 0.25, 0.0];
        let out = filter_signal_with(&z, q, fs, FilterRule::ZeroOrderHold).unwrap();
        let h = 1.0 / fs;
        for k in 0..z.len() {
            let tk = k as f64 * h;
            let mut exact = c(0.0, 0.0);
            for m in 0..k {
                let (a, b) = (m as f64 * h, (m + 1) as f64 * h);
                // ∫_a^b e^{q(tk-τ)} dτ
                exact += ((q * (tk - a)).exp() - (q * (tk - b)).exp()) / q * z[m];
            }
            assert!((out[k] - exact).norm() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn filtered_step_values() {
        let s = filter_step(c(-1.0, 0.0), 3, 1.0 / 2f64.ln()).unwrap();
        assert_eq!(s[0], c(0.0, 0.0));
        assert!((s[1].re - 0.5).abs() < 1e-15);
        let far = filter_step(c(-1.0, 0.0), 2, 1.0 / 50.0).unwrap();
        assert!((far[1].re - 1.0).abs() < 1e-15);
        assert!(filter_step(c(0.0, 1.0), 3, 1.0).is_err());
    }

    #[test]
    fn zoh_step_matches_closed_form() {
        let q = c(-0.3, 1.7);
        let fs = 5.0;
        let out = filter_signal_with(&[1.0; 40], q, fs, FilterRule::ZeroOrderHold).unwrap();
        let closed = filter_step(q, 40, fs).unwrap();
        for (a, b) in out.iter().zip(&closed) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    fn trapezoidal_step_error(q: Complex64, fs: f64) -> f64 {
        let k = (2.0 * fs / q.norm()) as usize;
        let out = filter_signal(&vec![1.0; k], q, fs).unwrap();
        let closed = filter_step(q, k, fs).unwrap();
        let peak = closed.iter().map(|v| v.norm()).fold(0.0, f64::max);
        out.iter()
            .zip(&closed)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            / peak
    }

    #[test]
    fn trapezoidal_step_matches_closed_form_when_fine() {
        // the quadrature error is about (|q|Δt)²/12 of the peak
        let q = c(-3.0, 4.0);
        let fs = 6e4 * q.norm() / (2.0 * std::f64::consts::PI);
        let rel = trapezoidal_step_error(q, fs);
        assert!(rel <= 1e-9, "relative error {rel}");
    }

    #[test]
    fn trapezoidal_step_error_is_second_order() {
        let q = c(-3.0, 4.0);
        let fs = 1e4 * q.norm() / (2.0 * std::f64::consts::PI);
        let rel = trapezoidal_step_error(q, fs);
        let h = q.norm() / fs;
        let predicted = h * h / 12.0;
        assert!(rel <= 1.1 * predicted && rel >= 0.5 * predicted, "{rel} vs {predicted}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(filter_signal(&[1.0, 2.0], c(0.0, 0.0), 1.0).is_err());
        assert!(filter_signal(&[1.0, 2.0], c(-1.0, 0.0), 0.0).is_err());
        assert!(filter_signal(&[1.0, 2.0], c(1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn realify_real_and_pair() {
        let poles = PoleSet::new(vec![c(-1.0, 0.0)]).unwrap();
        let cols = vec![vec![c(1.0, 0.0), c(2.0, 1e-20)]];
        assert_eq!(realify_basis(&poles, &cols).unwrap(), vec![vec![1.0, 2.0]]);

        let poles = PoleSet::new(vec![c(-1.0, 3.0), c(-1.0, -3.0)]).unwrap();
        let col = vec![c(1.0, 2.0), c(-3.0, 4.0)];
        let conj: Vec<_> = col.iter().map(|v| v.conj()).collect();
        let out = realify_basis(&poles, &[col, conj.clone()]).unwrap();
        assert_eq!(out, vec![vec![1.0, -3.0], vec![2.0, 4.0]]);
        // broken pairing
        assert!(realify_basis(&poles, &[conj.clone(), conj]).is_err());
        assert!(realify_basis(&poles, &[vec![c(1.0, 0.0)]]).is_err());
    }

    #[test]
    fn realified_least_squares_matches_complex() {
        // A conjugate pair plus a real pole, 10 samples, real target.
        let poles = PoleSet::new(vec![c(-0.5, 2.0), c(-0.5, -2.0), c(-1.5, 0.0)]).unwrap();
        let z: Vec<f64> = (0..10).map(|k| ((k * 7 % 5) as f64) - 1.7).collect();
        let target: Vec<f64> = (0..10).map(|k| (k as f64 * 0.37).sin()).collect();
        let cplx: Vec<Vec<Complex64>> = poles
            .iter()
            .map(|&q| filter_signal(&z, q, 3.0).unwrap())
            .collect();
        let real = realify_basis(&poles, &cplx).unwrap();
        let a = DMatrix::from_fn(10, 3, |k, n| real[n][k]);
        let x = a
            .clone()
            .svd(true, true)
            .solve(&DVector::from_vec(target.clone()), 1e-14)
            .unwrap();
        let coeffs = complex_coefficients(&poles, x.as_slice()).unwrap();

        // complex LS on the raw columns with a real target
        let ac = DMatrix::from_fn(10, 3, |k, n| cplx[n][k]);
        let tc = DVector::from_iterator(10, target.iter().map(|&v| c(v, 0.0)));
        let xc = ac.clone().svd(true, true).solve(&tc, 1e-14).unwrap();
        let r_real = (ac.clone() * DVector::from_vec(coeffs.clone()) - &tc).norm();
        let r_cplx = (ac * xc - tc).norm();
        assert!((r_real - r_cplx).abs() <= 1e-12 * r_cplx.max(1.0));
        assert_eq!(real_coefficients(&poles, &coeffs).unwrap().len(), 3);
        let back = real_coefficients(&poles, &coeffs).unwrap();
        for (u, v) in back.iter().zip(x.iter()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn linearity(
            a in -5.0f64..5.0, b in -5.0f64..5.0,
            z1 in prop::collection::vec(-1.0f64..1.0, 30),
            z2 in prop::collection::vec(-1.0f64..1.0, 30),
            re in -5.0f64..-0.01, im in -5.0f64..5.0,
        ) {
            let q = c(re, im);
            for rule in [FilterRule::Trapezoidal, FilterRule::ZeroOrderHold] {
                let comb: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + b * y).collect();
                let lhs = filter_signal_with(&comb, q, 10.0, rule).unwrap();
                let f1 = filter_signal_with(&z1, q, 10.0, rule).unwrap();
                let f2 = filter_signal_with(&z2, q, 10.0, rule).unwrap();
                let scale = lhs.iter().chain(&f1).chain(&f2).map(|v| v.norm()).fold(1e-300, f64::max)
                    * (1.0 + a.abs() + b.abs());
                for k in 0..30 {
                    let rhs = f1[k] * a + f2[k] * b;
                    prop_assert!((lhs[k] - rhs).norm() <= 1e-12 * scale);
                }
            }
        }

        #[test]
        fn conjugation(
            z in prop::collection::vec(-3.0f64..3.0, 25),
            re in -5.0f64..-0.01, im in 0.01f64..5.0,
        ) {
            let q = c(re, im);
            for rule in [FilterRule::Trapezoidal, FilterRule::ZeroOrderHold] {
                let f = filter_signal_with(&z, q, 7.0, rule).unwrap();
                let g = filter_signal_with(&z, q.conj(), 7.0, rule).unwrap();
                for (x, y) in f.iter().zip(&g) {
                    prop_assert_eq!(x.conj(), *y);
                }
            }
        }
    }
}
