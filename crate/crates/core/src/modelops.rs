//! Frequency response, real realization and time-domain replay of fitted models.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filterbank;
use crate::sigcore::{PoleKind, RationalModel, StateSpaceModel, TimeSeries};

fn check_not_pole(m: &RationalModel, s: Complex64) -> Result<()> {
    if m.poles().iter().any(|p| *p == s) {
        return Err(Error::AtPole(format!("{s}")));
    }
    Ok(())
}

/// `H(s) = dterm + Σ residues[n] / (s - p_n)`.
pub fn evaluate_tf(m: &RationalModel, s: Complex64) -> Result<DMatrix<Complex64>> {
    check_not_pole(m, s)?;
    let mut h = m.dterm().map(|v| Complex64::new(v, 0.0));
    for (r, p) in m.residues().iter().zip(m.poles().iter()) {
        h += r / (s - p);
    }
    Ok(h)
}

/// `H(jω)` at every point of `omegas`.
pub fn frequency_response(m: &RationalModel, omegas: &[f64]) -> Result<Vec<DMatrix<Complex64>>> {
    omegas
        .iter()
        .map(|&w| evaluate_tf(m, Complex64::new(0.0, w)))
        .collect()
}

/// `Γ_i(s) = (b_i0 + Σ b_in / (s - p_n)) / s`.
pub fn evaluate_zero_input(m: &RationalModel, s: Complex64) -> Result<DVector<Complex64>> {
    if s == Complex64::new(0.0, 0.0) {
        return Err(Error::AtOrigin);
    }
    check_not_pole(m, s)?;
    let b = m.zero_input();
    Ok(DVector::from_fn(m.ports(), |i, _| {
        let mut g = b[(i, 0)];
        for (n, p) in m.poles().iter().enumerate() {
            g += b[(i, n + 1)] / (s - p);
        }
        g / s
    }))
}

/// Real block-diagonal realization with `P` states per real pole and `2P` per pair.
///
/// A pair `σ ± jω` with residue `R` contributes `A = [[σI, ωI], [-ωI, σI]]`,
/// `B = [2I; 0]` and `C = [Re R, Im R]`.
pub fn to_state_space(m: &RationalModel) -> Result<StateSpaceModel> {
    let p = m.ports();
    let n = m.order();
    let ns = n * p;
    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, p);
    let mut c = DMatrix::zeros(p, ns);
    let poles = m.poles().as_slice();
    for (k, kind) in m.poles().kinds().into_iter().enumerate() {
        let o = k * p;
        let q = poles[k];
        let r = &m.residues()[k];
        match kind {
            PoleKind::Real => {
                for i in 0..p {
                    a[(o + i, o + i)] = q.re;
                    b[(o + i, i)] = 1.0;
                }
                c.view_mut((0, o), (p, p)).copy_from(&r.map(|v| v.re));
            }
            PoleKind::Upper => {
                if k + 1 >= n || poles[k + 1] != q.conj() {
                    return Err(Error::PairStructure(format!("pole {k} lacks its conjugate")));
                }
                for i in 0..p {
                    a[(o + i, o + i)] = q.re;
                    a[(o + i, o + p + i)] = q.im;
                    a[(o + p + i, o + i)] = -q.im;
                    a[(o + p + i, o + p + i)] = q.re;
                    b[(o + i, i)] = 2.0;
                }
                c.view_mut((0, o), (p, p)).copy_from(&r.map(|v| v.re));
                c.view_mut((0, o + p), (p, p)).copy_from(&r.map(|v| v.im));
            }
            PoleKind::Lower => {}
        }
    }
    StateSpaceModel::new(a, b, c, m.dterm().clone())
}

/// Full-signal replay: `bias.y` plus the input response to `u - bias.u` plus the
/// zero-input term evaluated at `t - t_start`.
///
/// The input response is filtered with the model's own rule starting from rest at
/// the first sample of `u`, so `u` should begin at the model's `t_start` for the
/// zero-input term to line up.
pub fn simulate_model(m: &RationalModel, u: &TimeSeries) -> Result<TimeSeries> {
    let p = m.ports();
    if u.n_channels() != p {
        return Err(Error::ChannelMismatch {
            expected: p,
            got: u.n_channels(),
        });
    }
    if ((u.fs() - m.fs()) / m.fs()).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "model sampled at {} Hz, input at {} Hz",
            m.fs(),
            u.fs()
        )));
    }
    let k = u.len();
    let fs = m.fs();
    let poles = m.poles();
    let bias = m.bias();
    let mut y: Vec<Vec<f64>> = bias.y_bias.iter().map(|&b| vec![b; k]).collect();

    for j in 0..p {
        let uj: Vec<f64> = u.channel(j).iter().map(|v| v - bias.u_bias[j]).collect();
        let cols = filterbank::filtered_columns(&uj, poles, fs, m.filter_rule())?;
        for (i, yi) in y.iter_mut().enumerate() {
            let res: Vec<Complex64> = m.residues().iter().map(|r| r[(i, j)]).collect();
            let coef = filterbank::real_coefficients(poles, &res)?;
            let d = m.dterm()[(i, j)];
            for kk in 0..k {
                let mut v = d * uj[kk];
                for (col, cf) in cols.iter().zip(&coef) {
                    v += cf * col[kk];
                }
                yi[kk] += v;
            }
        }
    }

    let b = m.zero_input();
    if b.iter().any(|v| *v != Complex64::new(0.0, 0.0)) {
        let offset = ((u.t0() - m.t_start()) * fs).round();
        let times: Vec<f64> = (0..k).map(|kk| (kk as f64 + offset) / fs).collect();
        let steps: Vec<Vec<Complex64>> = poles
            .iter()
            .map(|&q| {
                times
                    .iter()
                    .map(|&t| if t <= 0.0 { Complex64::new(0.0, 0.0) } else { filterbank::cexpm1(q * t) / q })
                    .collect()
            })
            .collect();
        for (i, yi) in y.iter_mut().enumerate() {
            for kk in 0..k {
                if times[kk] < 0.0 {
                    continue;
                }
                let mut v = b[(i, 0)];
                for (n, st) in steps.iter().enumerate() {
                    v += b[(i, n + 1)] * st[kk];
                }
                yi[kk] += v.re;
            }
        }
    }
    TimeSeries::new(u.t0(), u.fs(), (1..=p).map(|i| format!("y{i}")).collect(), y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::FilterRule;
    use crate::metrics::hausdorff;
    use crate::sigcore::{BiasRecord, PoleSet};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn model_1x1(pole: f64, r: f64, d: f64) -> RationalModel {
        RationalModel::new(
            PoleSet::new(vec![c(pole, 0.0)]).unwrap(),
            vec![DMatrix::from_element(1, 1, c(r, 0.0))],
            DMatrix::from_element(1, 1, d),
            DMatrix::zeros(1, 2),
            BiasRecord::zeros(1),
            10.0,
            0.0,
            FilterRule::ZeroOrderHold,
        )
        .unwrap()
    }

    fn model_2x2() -> RationalModel {
        let poles = PoleSet::new(vec![c(-2.0, 0.0), c(-1.0, 5.0), c(-1.0, -5.0)]).unwrap();
        let r0 = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.5), c(-0.2, 0.1), c(0.3, -0.7), c(2.0, 0.0)]);
        let r2 = DMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(1.5, 0.0), c(-1.0, 0.0), c(0.25, 0.0)]);
        let b = DMatrix::from_row_slice(2, 4, &[
            c(0.1, 0.0), c(-0.4, 0.0), c(0.2, 0.3), c(0.2, -0.3),
            c(0.0, 0.0), c(0.3, 0.0), c(-0.1, 0.05), c(-0.1, -0.05),
        ]);
        RationalModel::new(
            poles,
            vec![r2, r0.clone(), r0.map(|v| v.conj())],
            DMatrix::from_row_slice(2, 2, &[0.1, 0.0, -0.2, 0.3]),
            b,
            BiasRecord { u_bias: vec![1.0, -1.0], y_bias: vec![0.5, 2.0] },
            20.0,
            0.0,
            FilterRule::ZeroOrderHold,
        )
        .unwrap()
    }

    #[test]
    fn evaluate_single_pole() {
        let m = model_1x1(-1.0, 2.0, 0.5);
        assert!((evaluate_tf(&m, c(0.0, 0.0)).unwrap()[(0, 0)] - c(2.5, 0.0)).norm() < 1e-15);
        assert!(evaluate_tf(&m, c(-1.0, 0.0)).is_err());
        let far = evaluate_tf(&m, c(0.0, 1e8)).unwrap()[(0, 0)];
        assert!((far - 0.5).norm() <= 2.0 / 1e8 * 1.0001);
    }

    #[test]
    fn conjugate_symmetry() {
        let m = model_2x2();
        for s in [c(0.3, 2.0), c(0.0, 7.5), c(4.0, -1.0)] {
            let a = evaluate_tf(&m, s.conj()).unwrap();
            let b = evaluate_tf(&m, s).unwrap().map(|v| v.conj());
            assert!((a - &b).norm() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn zero_input_values() {
        let m = model_1x1(-1.0, 2.0, 0.5);
        assert_eq!(evaluate_zero_input(&m, c(4.0, 0.0)).unwrap()[0], c(0.0, 0.0));
        assert_eq!(evaluate_zero_input(&m, c(0.0, 0.0)), Err(Error::AtOrigin));
        let m = RationalModel::new(
            m.poles().clone(),
            m.residues().to_vec(),
            m.dterm().clone(),
            DMatrix::from_row_slice(1, 2, &[c(2.0, 0.0), c(0.0, 0.0)]),
            BiasRecord::zeros(1),
            10.0,
            0.0,
            FilterRule::ZeroOrderHold,
        )
        .unwrap();
        assert!((evaluate_zero_input(&m, c(4.0, 0.0)).unwrap()[0] - c(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn realization_matches_model() {
        let m = model_2x2();
        let ss = to_state_space(&m).unwrap();
        let eig = ss.eigenvalues();
        assert!(hausdorff(&eig, m.poles().as_slice()).unwrap() <= 1e-10);
        let mut s = 0.37f64;
        for _ in 0..20 {
            s = (s * 7.13 + 0.19).fract();
            let z = c(2.0 * s - 0.5, 20.0 * s - 3.0);
            let a = evaluate_tf(&m, z).unwrap();
            let b = ss.transfer(z).unwrap();
            assert!((a - &b).norm() <= 1e-9 * b.norm().max(1.0));
        }
        let one = to_state_space(&model_1x1(-3.0, 1.0, 0.0)).unwrap();
        assert_eq!(one.a, DMatrix::from_element(1, 1, -3.0));
    }

    #[test]
    fn equilibrium_replay() {
        let m = model_1x1(-1.0, 2.0, 0.5);
        let m = RationalModel::new(
            m.poles().clone(),
            m.residues().to_vec(),
            m.dterm().clone(),
            m.zero_input().clone(),
            BiasRecord { u_bias: vec![3.0], y_bias: vec![-1.25] },
            10.0,
            0.0,
            FilterRule::ZeroOrderHold,
        )
        .unwrap();
        let u = TimeSeries::from_channels(0.0, 10.0, "u", vec![vec![3.0; 30]]).unwrap();
        let y = simulate_model(&m, &u).unwrap();
        assert!(y.channel(0).iter().all(|&v| v == -1.25));
    }

    #[test]
    fn replay_matches_realization() {
        let m = model_2x2();
        let data: Vec<Vec<f64>> = (0..2)
            .map(|j| (0..200).map(|k| ((k * (j + 3)) as f64 * 0.37).sin() + m.bias().u_bias[j]).collect())
            .collect();
        let u = TimeSeries::from_channels(0.0, 20.0, "u", data).unwrap();
        let y = simulate_model(&m, &u).unwrap();

        let ss = to_state_space(&m).unwrap();
        let small = u
            .with_data(u.channels().iter().zip(&m.bias().u_bias).map(|(c, b)| c.iter().map(|v| v - b).collect()).collect())
            .unwrap();
        let forced = crate::oracle::simulate_ss(&ss, &small, &DVector::zeros(ss.states())).unwrap();
        for i in 0..2 {
            for k in 0..200 {
                let t = k as f64 / 20.0;
                let mut g = m.zero_input()[(i, 0)];
                for (n, q) in m.poles().iter().enumerate() {
                    g += m.zero_input()[(i, n + 1)] * ((q * t).exp() - 1.0) / q;
                }
                let want = m.bias().y_bias[i] + forced.channel(i)[k] + g.re;
                assert!((y.channel(i)[k] - want).abs() < 1e-10, "{i} {k}");
            }
        }
    }

    #[test]
    fn replay_is_linear_in_small_input() {
        let m = model_2x2();
        let base: Vec<f64> = m.bias().u_bias.clone();
        let mk = |f: &dyn Fn(usize, usize) -> f64| {
            TimeSeries::from_channels(0.0, 20.0, "u", (0..2).map(|j| (0..100).map(|k| base[j] + f(j, k)).collect()).collect()).unwrap()
        };
        let f1 = |j: usize, k: usize| ((j + 1) as f64 * k as f64 * 0.1).cos();
        let f2 = |j: usize, k: usize| (k as f64 * 0.05 + j as f64).sin();
        let y1 = simulate_model(&m, &mk(&f1)).unwrap();
        let y2 = simulate_model(&m, &mk(&f2)).unwrap();
        let y12 = simulate_model(&m, &mk(&|j, k| f1(j, k) + f2(j, k))).unwrap();
        let y0 = simulate_model(&m, &mk(&|_, _| 0.0)).unwrap();
        for i in 0..2 {
            for k in 0..100 {
                let lhs = y12.channel(i)[k] - y0.channel(i)[k];
                let rhs = y1.channel(i)[k] - y0.channel(i)[k] + y2.channel(i)[k] - y0.channel(i)[k];
                assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn impulse_response_is_real() {
        // inverse DFT of H(jω) sampled symmetrically must be real
        let m = model_2x2();
        let n = 256;
        let w0 = 0.25;
        let h: Vec<DMatrix<Complex64>> = (0..n)
            .map(|k| {
                let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
                evaluate_tf(&m, c(0.0, kk * w0)).unwrap()
            })
            .collect();
        let mut peak = 0.0f64;
        let mut worst = 0.0f64;
        for t in 0..n {
            let mut acc = DMatrix::<Complex64>::zeros(2, 2);
            for (k, hk) in h.iter().enumerate() {
                // the Nyquist bin has no partner and is dropped
                if k == n / 2 {
                    continue;
                }
                let ang = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                acc += hk * Complex64::from_polar(1.0, ang);
            }
            for v in acc.iter() {
                peak = peak.max(v.re.abs());
                worst = worst.max(v.im.abs());
            }
        }
        assert!(worst <= 1e-9 * peak);
    }
}
