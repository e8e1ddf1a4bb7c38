#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rtvf::filterbank::FilterRule;
use rtvf::modelops::to_state_space;
use rtvf::oracle::{colored_noise_input, simulate_ss};
use rtvf::{BiasRecord, PoleKind, PoleSet, RationalModel, TimeSeries};

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Random conjugate-closed residues on a fixed pole set, no initial-condition term.
pub fn model_on(poles: &PoleSet, ports: usize, fs: f64, seed: u64) -> RationalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut residues = Vec::with_capacity(poles.len());
    for (n, kind) in poles.kinds().into_iter().enumerate() {
        match kind {
            PoleKind::Real => residues.push(DMatrix::from_fn(ports, ports, |_, _| c(rng.random_range(-1.0..1.0), 0.0))),
            PoleKind::Upper => {
                let scale = poles.as_slice()[n].norm();
                let r = DMatrix::from_fn(ports, ports, |_, _| {
                    c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
                });
                residues.push(r.clone());
                residues.push(r.map(|v| v.conj()));
            }
            PoleKind::Lower => {}
        }
    }
    let dterm = DMatrix::from_fn(ports, ports, |_, _| rng.random_range(-0.5..0.5));
    RationalModel::new(
        poles.clone(),
        residues,
        dterm,
        DMatrix::zeros(ports, poles.len() + 1),
        BiasRecord::zeros(ports),
        fs,
        0.0,
        FilterRule::ZeroOrderHold,
    )
    .unwrap()
}

/// Input that starts at zero, so the series is already a small signal.
pub fn small_input(ports: usize, k: usize, fs: f64, omega: f64, seed: u64) -> TimeSeries {
    let u = colored_noise_input(ports, k, fs, omega, seed).unwrap();
    let data = u
        .channels()
        .iter()
        .map(|ch| ch.iter().map(|v| v - ch[0]).collect())
        .collect();
    u.with_data(data).unwrap()
}

/// Zero-state response through the state-space realization and the hold oracle.
pub fn respond(model: &RationalModel, u: &TimeSeries) -> TimeSeries {
    let ss = to_state_space(model).unwrap();
    simulate_ss(&ss, u, &DVector::zeros(ss.states())).unwrap()
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
