//! Ground-truth data: random stable systems, exact hold-equivalent simulation,
//! excitation signals and measurement noise.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::sigcore::{StateSpaceModel, TimeSeries};

/// Smallest damping ratio of a random pole.
pub const MIN_DAMPING: f64 = 0.05;

/// Ratio between the fastest and the slowest random pole magnitude bound.
pub const MAG_SPAN: f64 = 100.0;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random stable system in real block-diagonal form with `D = 0`.
///
/// Pairs `-ζω ± jω√(1-ζ²)` have `ζ ∈ [0.05, 1)`; an odd order adds one real pole.
/// Magnitudes are log-uniform over two decades, rescaled so the fastest equals `omega_max`.
pub fn random_system(order: usize, ports: usize, omega_max: f64, seed: u64) -> Result<StateSpaceModel> {
    if order < 1 || ports < 1 || !(omega_max > 0.0 && omega_max.is_finite()) {
        return Err(Error::InvalidConfig("order, ports >= 1 and omega_max > 0 required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = ((omega_max / MAG_SPAN).ln(), omega_max.ln());
    let draws: Vec<(f64, f64)> = (0..order.div_ceil(2))
        .map(|_| (rng.random_range(lo..=hi).exp(), rng.random_range(MIN_DAMPING..1.0)))
        .collect();
    // stretch so the fastest mode sits at the band edge the excitation covers
    let stretch = omega_max / draws.iter().map(|d| d.0).fold(0.0, f64::max);
    let mut a = DMatrix::zeros(order, order);
    for (i, &(w, zeta)) in draws.iter().enumerate() {
        let (w, k) = ((w * stretch).min(omega_max), 2 * i);
        if k + 1 < order {
            let (sigma, omega) = (-zeta * w, w * (1.0 - zeta * zeta).sqrt());
            a[(k, k)] = sigma;
            a[(k, k + 1)] = omega;
            a[(k + 1, k)] = -omega;
            a[(k + 1, k + 1)] = sigma;
        } else {
            a[(k, k)] = -w;
        }
    }
    let b = DMatrix::from_fn(order, ports, |_, _| normal(&mut rng));
    let c = DMatrix::from_fn(ports, order, |_, _| normal(&mut rng));
    StateSpaceModel::new(a, b, c, DMatrix::zeros(ports, ports))
}

/// `(e^{AΔt}, ∫₀^Δt e^{Aτ}dτ B)` from one exponential of the augmented matrix.
pub fn discretize(m: &StateSpaceModel, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = m.states();
    let p = m.inputs();
    let mut aug = DMatrix::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&m.a * dt));
    aug.view_mut((0, n), (n, p)).copy_from(&(&m.b * dt));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, p)).into_owned(),
    )
}

/// Simulates with the input held constant between samples, starting from `x0`
/// at the first sample.
pub fn simulate_ss(m: &StateSpaceModel, u: &TimeSeries, x0: &DVector<f64>) -> Result<TimeSeries> {
    if u.n_channels() != m.inputs() {
        return Err(Error::ChannelMismatch {
            expected: m.inputs(),
            got: u.n_channels(),
        });
    }
    if x0.len() != m.states() {
        return Err(Error::DimensionMismatch(format!(
            "x0 has {} entries for {} states",
            x0.len(),
            m.states()
        )));
    }
    let (ad, bd) = discretize(m, u.dt());
    let k = u.len();
    let mut y = vec![Vec::with_capacity(k); m.outputs()];
    let mut x = x0.clone();
    let mut uk = DVector::zeros(m.inputs());
    for kk in 0..k {
        for j in 0..m.inputs() {
            uk[j] = u.channel(j)[kk];
        }
        let yk = &m.c * &x + &m.d * &uk;
        for (i, v) in yk.iter().enumerate() {
            y[i].push(*v);
        }
        x = &ad * &x + &bd * &uk;
    }
    TimeSeries::from_channels(u.t0(), u.fs(), "y", y)
}

/// Equilibrium state `-A⁻¹ B ū`.
pub fn steady_state_x0(m: &StateSpaceModel, u_bias: &[f64]) -> Result<DVector<f64>> {
    if u_bias.len() != m.inputs() {
        return Err(Error::ChannelMismatch {
            expected: m.inputs(),
            got: u_bias.len(),
        });
    }
    let bu = &m.b * DVector::from_column_slice(u_bias);
    let sol = m.a.clone().lu().solve(&bu).ok_or(Error::SingularMatrix)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularMatrix);
    }
    Ok(-sol)
}

/// Gap `x0 + A⁻¹ B ū` between the actual and the equilibrium initial state.
pub fn t_offset(m: &StateSpaceModel, x0: &DVector<f64>, u_bias: &[f64]) -> Result<DVector<f64>> {
    Ok(x0 - steady_state_x0(m, u_bias)?)
}

/// Unit-variance stationary Gauss-Markov samples with correlation time `tau`,
/// stepped with the exact discretization.
fn gauss_markov(rng: &mut ChaCha8Rng, tau: f64, k: usize, fs: f64) -> Vec<f64> {
    let a = (-1.0 / (tau * fs)).exp();
    let g = (-(-2.0 / (tau * fs)).exp_m1()).sqrt();
    let mut out = Vec::with_capacity(k);
    let mut x = normal(rng);
    for _ in 0..k {
        out.push(x);
        x = a * x + g * normal(rng);
    }
    out
}

fn check_rate(fs: f64) -> Result<()> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::InvalidSampleRate(fs));
    }
    Ok(())
}

/// White Gaussian noise through a first-order low pass with corner `omega_max`,
/// one independent unit-variance channel per port.
pub fn colored_noise_input(ports: usize, k: usize, fs: f64, omega_max: f64, seed: u64) -> Result<TimeSeries> {
    check_rate(fs)?;
    if !(omega_max > 0.0) || ports == 0 {
        return Err(Error::InvalidConfig("omega_max > 0 and ports >= 1 required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..ports)
        .map(|_| gauss_markov(&mut rng, 1.0 / omega_max, k, fs))
        .collect();
    TimeSeries::from_channels(0.0, fs, "u", data)
}

/// Ornstein-Uhlenbeck path `τ u' = -u + η`, unit stationary variance.
pub fn ou_process(tau: f64, k: usize, fs: f64, seed: u64) -> Result<TimeSeries> {
    check_rate(fs)?;
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSeries::from_channels(0.0, fs, "u", vec![gauss_markov(&mut rng, tau, k, fs)])
}

/// First-order low pass `y' = ω_c (x - y)` with the input held between samples.
pub fn lowpass_first_order(x: &[f64], fs: f64, omega_c: f64) -> Vec<f64> {
    let a = (-omega_c / fs).exp();
    let mut y = Vec::with_capacity(x.len());
    let mut state = x.first().copied().unwrap_or(0.0);
    for &v in x {
        y.push(state);
        state = a * state + (1.0 - a) * v;
    }
    y
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// RMS of the signal after removing its mean.
pub fn detrended_rms(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Standard deviation giving the requested SNR against the detrended signal.
pub fn noise_sigma(x: &[f64], snr_db: f64) -> f64 {
    detrended_rms(x) * 10f64.powf(-snr_db / 20.0)
}

/// Adds Gaussian noise channel by channel at `snr_db`.
pub fn add_noise(ts: &TimeSeries, snr_db: f64, seed: u64) -> Result<TimeSeries> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig("snr must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ts
        .channels()
        .iter()
        .map(|ch| {
            let s = noise_sigma(ch, snr_db);
            ch.iter().map(|v| v + s * normal(&mut rng)).collect()
        })
        .collect();
    ts.with_data(data)
}

/// Like [`add_noise`], but the SNR refers to the small signal `x - x[0]` of each
/// channel, as in the synthetic noise sweeps.
pub fn add_small_signal_noise(ts: &TimeSeries, snr_db: f64, seed: u64) -> Result<TimeSeries> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig("snr must be finite".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = ts
        .channels()
        .iter()
        .map(|ch| {
            let x0 = ch.first().copied().unwrap_or(0.0);
            let rms = (ch.iter().map(|v| (v - x0) * (v - x0)).sum::<f64>() / ch.len() as f64).sqrt();
            let s = rms * 10f64.powf(-snr_db / 20.0);
            ch.iter().map(|v| v + s * normal(&mut rng)).collect()
        })
        .collect();
    ts.with_data(data)
}

/// Magnitude/phase noise: `σ = RMS(V - E V)·10^{-SNR/20}` on the magnitude and
/// `σ / E V` on the phase, drawn independently.
pub fn add_measurement_noise(
    mag: &TimeSeries,
    phase: &TimeSeries,
    snr_db: f64,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries)> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidConfig("snr must be finite".into()));
    }
    if mag.n_channels() != phase.n_channels() || mag.len() != phase.len() {
        return Err(Error::GridMismatch("magnitude and phase differ in shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mags = Vec::with_capacity(mag.n_channels());
    let mut phases = Vec::with_capacity(mag.n_channels());
    for c in 0..mag.n_channels() {
        let v = mag.channel(c);
        let ev = mean(v);
        if ev == 0.0 {
            return Err(Error::ZeroMeanMagnitude);
        }
        let s = noise_sigma(v, snr_db);
        let sp = s / ev.abs();
        mags.push(v.iter().map(|x| x + s * normal(&mut rng)).collect());
        phases.push(phase.channel(c).iter().map(|x| x + sp * normal(&mut rng)).collect());
    }
    Ok((mag.with_data(mags)?, phase.with_data(phases)?))
}

/// Initial state of a synthetic record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialState {
    /// Equilibrium for the first input sample.
    Steady,
    /// Equilibrium plus unit-normal entries times `scale`.
    Offset(f64),
}

/// One synthetic experiment: system, excitation and exact response.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub system: StateSpaceModel,
    pub u: TimeSeries,
    pub y: TimeSeries,
    pub x0: DVector<f64>,
    pub omega_max: f64,
}

impl Record {
    /// `x0 + A⁻¹B u(t₁)` for the first sample.
    pub fn t_offset(&self) -> Result<DVector<f64>> {
        let ub: Vec<f64> = self.u.channels().iter().map(|c| c[0]).collect();
        t_offset(&self.system, &self.x0, &ub)
    }

    /// Input and output side by side, inputs first.
    pub fn joined(&self) -> Result<TimeSeries> {
        self.u.hstack(&self.y)
    }
}

/// Sampling rate used by the synthetic recipe, `10·Ω/2π`.
pub fn recipe_rate(omega_max: f64) -> f64 {
    10.0 * omega_max / (2.0 * std::f64::consts::PI)
}

/// Random system driven by colored noise around a random operating point.
pub fn synth_record(
    order: usize,
    ports: usize,
    samples: usize,
    omega_max: f64,
    seed: u64,
    init: InitialState,
) -> Result<Record> {
    let fs = recipe_rate(omega_max);
    let system = random_system(order, ports, omega_max, seed)?;
    let noise = colored_noise_input(ports, samples, fs, omega_max, seed.wrapping_add(0x9e37_79b9))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x85eb_ca6b));
    let offsets: Vec<f64> = (0..ports).map(|_| normal(&mut rng)).collect();
    let u = noise.with_data(
        noise
            .channels()
            .iter()
            .zip(&offsets)
            .map(|(c, o)| c.iter().map(|v| v + o).collect())
            .collect(),
    )?;
    let u0: Vec<f64> = u.channels().iter().map(|c| c[0]).collect();
    let mut x0 = steady_state_x0(&system, &u0)?;
    if let InitialState::Offset(scale) = init {
        for v in x0.iter_mut() {
            *v += scale * normal(&mut rng);
        }
    }
    let y = simulate_ss(&system, &u, &x0)?;
    Ok(Record {
        system,
        u,
        y,
        x0,
        omega_max,
    })
}
