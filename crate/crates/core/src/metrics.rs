//! Pole-set distance, output errors and signal-to-error ratios.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sigcore::{same_grid, TimeSeries};

/// Number of points of the default frequency grid.
pub const GRID_POINTS: usize = 200;

/// `n` log-spaced points on `[lo, hi]`, both ends included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Default grid for frequency-domain metrics: 200 points over `[Ω/10³, Ω]`.
pub fn frequency_grid(omega_max: f64) -> Vec<f64> {
    log_grid(omega_max * 1e-3, omega_max, GRID_POINTS)
}

/// `max(sup_a inf_b |a-b|, sup_b inf_a |a-b|)`.
pub fn hausdorff(a: &[Complex64], b: &[Complex64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySet);
    }
    let directed = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Worst-case errors over all channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputErrors {
    /// `max_i ‖y_i - ŷ_i‖∞`.
    pub e_inf: f64,
    /// `max_i ‖y_i - ŷ_i‖∞ / ‖y_i‖₂`.
    pub e_inf_rms: f64,
}

pub fn output_errors(y_ref: &TimeSeries, y_hat: &TimeSeries) -> Result<OutputErrors> {
    same_grid(y_ref, y_hat)?;
    if y_ref.n_channels() != y_hat.n_channels() {
        return Err(Error::ChannelMismatch {
            expected: y_ref.n_channels(),
            got: y_hat.n_channels(),
        });
    }
    let mut e_inf = 0.0f64;
    let mut e_inf_rms = 0.0f64;
    for c in 0..y_ref.n_channels() {
        let (r, h) = (y_ref.channel(c), y_hat.channel(c));
        let worst = r.iter().zip(h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroReference);
        }
        e_inf = e_inf.max(worst);
        e_inf_rms = e_inf_rms.max(worst / norm);
    }
    Ok(OutputErrors { e_inf, e_inf_rms })
}

fn ser_from_energies(reference: f64, error: f64) -> Result<f64> {
    if reference == 0.0 {
        return Err(Error::ZeroReference);
    }
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    // equal sample counts cancel inside the RMS ratio
    Ok(10.0 * (reference / error).log10())
}

/// `20 log10(RMS z / RMS(z - z_M))`; `+∞` when the estimate is exact.
pub fn ser_db(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} reference samples, {} estimate samples",
            reference.len(),
            estimate.len()
        )));
    }
    let r = reference.iter().map(|v| v * v).sum();
    let e = reference.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    ser_from_energies(r, e)
}

/// Complex-valued variant used on frequency samples.
pub fn ser_db_complex(reference: &[Complex64], estimate: &[Complex64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch("sample counts differ".into()));
    }
    let r = reference.iter().map(|v| v.norm_sqr()).sum();
    let e = reference.iter().zip(estimate).map(|(a, b)| (a - b).norm_sqr()).sum();
    ser_from_energies(r, e)
}

/// Per-channel time-domain SER averaged arithmetically in dB.
pub fn td_ser_db(y_ref: &TimeSeries, y_hat: &TimeSeries) -> Result<f64> {
    same_grid(y_ref, y_hat)?;
    if y_ref.n_channels() != y_hat.n_channels() {
        return Err(Error::ChannelMismatch {
            expected: y_ref.n_channels(),
            got: y_hat.n_channels(),
        });
    }
    let mut acc = 0.0;
    for c in 0..y_ref.n_channels() {
        acc += ser_db(y_ref.channel(c), y_hat.channel(c))?;
    }
    Ok(acc / y_ref.n_channels() as f64)
}

/// Frequency-domain SER of every transfer-matrix entry and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct FdSer {
    pub per_entry: DMatrix<f64>,
    pub mean: f64,
}

/// Applies [`ser_db_complex`] to each entry across the frequency samples.
pub fn fd_ser_db(h_ref: &[DMatrix<Complex64>], h_model: &[DMatrix<Complex64>]) -> Result<FdSer> {
    if h_ref.is_empty() || h_ref.len() != h_model.len() {
        return Err(Error::DimensionMismatch("frequency sample counts differ".into()));
    }
    let shape = h_ref[0].shape();
    if h_ref.iter().chain(h_model).any(|h| h.shape() != shape) {
        return Err(Error::DimensionMismatch("transfer matrix shapes differ".into()));
    }
    let mut per_entry = DMatrix::zeros(shape.0, shape.1);
    for i in 0..shape.0 {
        for j in 0..shape.1 {
            let r: Vec<Complex64> = h_ref.iter().map(|h| h[(i, j)]).collect();
            let m: Vec<Complex64> = h_model.iter().map(|h| h[(i, j)]).collect();
            per_entry[(i, j)] = ser_db_complex(&r, &m)?;
        }
    }
    let mean = per_entry.iter().sum::<f64>() / per_entry.len() as f64;
    Ok(FdSer { per_entry, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn pts() -> impl Strategy<Value = Vec<Complex64>> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0).prop_map(|(a, b)| c(a, b)), 1..8)
    }

    #[test]
    fn hausdorff_examples() {
        let a = [c(1.0, 2.0), c(-3.0, 0.5)];
        assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        assert_eq!(hausdorff(&[c(0.0, 0.0)], &[c(3.0, 0.0), c(4.0, 0.0)]).unwrap(), 4.0);
        assert_eq!(hausdorff(&[], &a), Err(Error::EmptySet));
    }

    #[test]
    fn output_error_examples() {
        let r = TimeSeries::from_channels(0.0, 1.0, "y", vec![vec![1.0, 1.0]]).unwrap();
        let h = TimeSeries::from_channels(0.0, 1.0, "y", vec![vec![1.0, 1.5]]).unwrap();
        let e = output_errors(&r, &r).unwrap();
        assert_eq!((e.e_inf, e.e_inf_rms), (0.0, 0.0));
        let e = output_errors(&r, &h).unwrap();
        assert_eq!(e.e_inf, 0.5);
        assert!((e.e_inf_rms - 0.5 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn output_error_homogeneity() {
        let r = TimeSeries::from_channels(0.0, 1.0, "y", vec![vec![1.0, -2.0, 0.5], vec![3.0, 1.0, 1.0]]).unwrap();
        let h = TimeSeries::from_channels(0.0, 1.0, "y", vec![vec![1.1, -2.0, 0.4], vec![3.0, 1.3, 1.0]]).unwrap();
        let g = 7.5;
        let scale = |t: &TimeSeries| t.with_data(t.channels().iter().map(|c| c.iter().map(|v| v * g).collect()).collect()).unwrap();
        let e1 = output_errors(&r, &h).unwrap();
        let e2 = output_errors(&scale(&r), &scale(&h)).unwrap();
        assert!((e2.e_inf - g * e1.e_inf).abs() < 1e-12);
        assert!((e2.e_inf_rms - e1.e_inf_rms).abs() < 1e-15);
    }

    #[test]
    fn ser_examples() {
        let r: Vec<f64> = (0..1000).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let est: Vec<f64> = r.iter().map(|v| v * 0.99).collect();
        assert!((ser_db(&r, &est).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(ser_db(&r, &r).unwrap(), f64::INFINITY);
        assert_eq!(ser_db(&r, &vec![0.0; 1000]).unwrap(), 0.0);
        assert_eq!(ser_db(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::ZeroReference));
    }

    #[test]
    fn fd_ser_examples() {
        let h: Vec<DMatrix<Complex64>> = (0..50)
            .map(|k| DMatrix::from_fn(2, 2, |i, j| c(1.0 + k as f64 + i as f64, j as f64 - 0.3 * k as f64)))
            .collect();
        let same = fd_ser_db(&h, &h).unwrap();
        assert!(same.per_entry.iter().all(|v| *v == f64::INFINITY));
        let scaled: Vec<_> = h.iter().map(|m| m * c(1.01, 0.0)).collect();
        let r = fd_ser_db(&h, &scaled).unwrap();
        assert!(r.per_entry.iter().all(|v| (v - 40.0).abs() < 1e-9));
        let mean = r.per_entry.iter().sum::<f64>() / 4.0;
        assert_eq!(r.mean, mean);
    }

    #[test]
    fn grid_has_expected_span() {
        let g = frequency_grid(50.0);
        assert_eq!(g.len(), 200);
        assert!((g[0] - 0.05).abs() < 1e-15 && (g[199] - 50.0).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    proptest! {
        #[test]
        fn hausdorff_symmetric(a in pts(), b in pts()) {
            prop_assert_eq!(hausdorff(&a, &b).unwrap(), hausdorff(&b, &a).unwrap());
        }

        #[test]
        fn hausdorff_triangle(a in pts(), b in pts(), x in pts()) {
            let ab = hausdorff(&a, &b).unwrap();
            let ax = hausdorff(&a, &x).unwrap();
            let xb = hausdorff(&x, &b).unwrap();
            prop_assert!(ab <= ax + xb + 1e-12);
        }

        #[test]
        fn hausdorff_identity(a in pts()) {
            prop_assert_eq!(hausdorff(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn ser_scale_invariant(v in prop::collection::vec(-5.0f64..5.0, 4..40), g in 0.1f64..10.0, eps in 0.001f64..0.5) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let est: Vec<f64> = v.iter().map(|x| x * (1.0 + eps)).collect();
            let s1 = ser_db(&v, &est).unwrap();
            let vs: Vec<f64> = v.iter().map(|x| x * g).collect();
            let es: Vec<f64> = est.iter().map(|x| x * g).collect();
            prop_assert!((ser_db(&vs, &es).unwrap() - s1).abs() < 1e-9);
            prop_assert!((s1 + 20.0 * eps.log10()).abs() < 1e-9);
        }
    }
}
