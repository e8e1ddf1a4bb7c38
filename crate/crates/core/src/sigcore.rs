//! Core value types: sampled signals, pole sets, fitted models and fit configuration.
//!
//! Everything here is an immutable value once constructed. Constructors
//! enforce the invariants, so downstream code can rely on them.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filterbank::FilterRule;

/// Relative tolerance under which two poles are considered duplicates.
pub const DUPLICATE_POLE_RTOL: f64 = 1e-12;

/// Uniformly sampled multichannel real signal.
///
/// Sample `k` (zero based) sits at `t0 + k / fs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    t0: f64,
    fs: f64,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl TimeSeries {
    /// Builds a series from channel-major data (`data[c][k]`).
    pub fn new(t0: f64, fs: f64, names: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self> {
        check_parts(t0, fs, &names, &data)?;
        Ok(Self { t0, fs, names, data })
    }

    /// Builds a series with generated channel names `prefix1..prefixC`.
    pub fn from_channels(t0: f64, fs: f64, prefix: &str, data: Vec<Vec<f64>>) -> Result<Self> {
        let names = (1..=data.len()).map(|c| format!("{prefix}{c}")).collect();
        Self::new(t0, fs, names, data)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    /// Number of samples K.
    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.data
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 / self.fs
    }

    /// Row view as a K×C matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.n_channels(), |k, c| self.data[c][k])
    }

    /// Samples `start..end` (zero based), with the time origin moved accordingly.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::GridMismatch(format!(
                "slice {start}..{end} outside 0..{}",
                self.len()
            )));
        }
        let data = self.data.iter().map(|ch| ch[start..end].to_vec()).collect();
        Self::new(self.time(start), self.fs, self.names.clone(), data)
    }

    /// Channels `start..end`.
    pub fn select(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n_channels() {
            return Err(Error::ChannelMismatch {
                expected: end,
                got: self.n_channels(),
            });
        }
        Self::new(
            self.t0,
            self.fs,
            self.names[start..end].to_vec(),
            self.data[start..end].to_vec(),
        )
    }

    /// Same grid, new data.
    pub fn with_data(&self, data: Vec<Vec<f64>>) -> Result<Self> {
        let names = if data.len() == self.names.len() {
            self.names.clone()
        } else {
            (1..=data.len()).map(|c| format!("ch{c}")).collect()
        };
        Self::new(self.t0, self.fs, names, data)
    }

    /// Re-origin the time axis.
    pub fn with_t0(mut self, t0: f64) -> Self {
        self.t0 = t0;
        self
    }

    /// Concatenate the channels of two series on the same grid.
    pub fn hstack(&self, other: &TimeSeries) -> Result<Self> {
        same_grid(self, other)?;
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut data = self.data.clone();
        data.extend(other.data.iter().cloned());
        Self::new(self.t0, self.fs, names, data)
    }
}

fn check_parts(t0: f64, fs: f64, names: &[String], data: &[Vec<f64>]) -> Result<()> {
    if !(fs.is_finite() && fs > 0.0) {
        return Err(Error::InvalidSampleRate(fs));
    }
    if !t0.is_finite() {
        return Err(Error::GridMismatch(format!("non-finite time origin {t0}")));
    }
    if data.is_empty() {
        return Err(Error::ChannelMismatch {
            expected: 1,
            got: 0,
        });
    }
    if names.len() != data.len() {
        return Err(Error::ChannelMismatch {
            expected: data.len(),
            got: names.len(),
        });
    }
    let k = data[0].len();
    if k < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: k });
    }
    for (c, ch) in data.iter().enumerate() {
        if ch.len() != k {
            return Err(Error::GridMismatch(format!(
                "channel {c} has {} samples, expected {k}",
                ch.len()
            )));
        }
        if let Some(pos) = ch.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                channel: c,
                sample: pos + 1,
            });
        }
    }
    Ok(())
}

/// Fails unless both series share sampling rate, start time and length.
pub fn same_grid(a: &TimeSeries, b: &TimeSeries) -> Result<()> {
    let tol = 1e-9 / a.fs;
    if (a.fs - b.fs).abs() > 1e-12 * a.fs || (a.t0 - b.t0).abs() > tol || a.len() != b.len() {
        return Err(Error::GridMismatch(format!(
            "(t0={}, fs={}, K={}) vs (t0={}, fs={}, K={})",
            a.t0,
            a.fs,
            a.len(),
            b.t0,
            b.fs,
            b.len()
        )));
    }
    Ok(())
}

/// Per-channel statistics reported by [`validate_grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridDiagnostics {
    pub samples: usize,
    pub fs: f64,
    pub channels: Vec<ChannelStats>,
}

/// Re-checks the grid invariants of raw parts and reports per-channel statistics.
pub fn validate_parts(
    t0: f64,
    fs: f64,
    names: &[String],
    data: &[Vec<f64>],
) -> Result<GridDiagnostics> {
    check_parts(t0, fs, names, data)?;
    let channels = names
        .iter()
        .zip(data)
        .map(|(name, ch)| {
            let n = ch.len() as f64;
            ChannelStats {
                name: name.clone(),
                mean: ch.iter().sum::<f64>() / n,
                rms: (ch.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
            }
        })
        .collect();
    Ok(GridDiagnostics {
        samples: data[0].len(),
        fs,
        channels,
    })
}

/// Confirms a series is well formed and returns channel statistics.
pub fn validate_grid(ts: &TimeSeries) -> Result<GridDiagnostics> {
    validate_parts(ts.t0, ts.fs, &ts.names, &ts.data)
}

/// Constant operating point removed from inputs and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRecord {
    pub u_bias: Vec<f64>,
    pub y_bias: Vec<f64>,
}

impl BiasRecord {
    pub fn zeros(ports: usize) -> Self {
        Self {
            u_bias: vec![0.0; ports],
            y_bias: vec![0.0; ports],
        }
    }
}

/// Subtracts the first sample of every channel.
///
/// The first `p_in` channels are inputs, the next `p_out` outputs. The small-signal
/// series are re-origined to `t = 0` at their first sample.
pub fn split_bias(
    ts: &TimeSeries,
    p_in: usize,
    p_out: usize,
) -> Result<(TimeSeries, TimeSeries, BiasRecord)> {
    if ts.n_channels() != p_in + p_out || p_in == 0 || p_out == 0 {
        return Err(Error::ChannelMismatch {
            expected: p_in + p_out,
            got: ts.n_channels(),
        });
    }
    let bias: Vec<f64> = ts.data.iter().map(|ch| ch[0]).collect();
    let small: Vec<Vec<f64>> = ts
        .data
        .iter()
        .zip(&bias)
        .map(|(ch, b)| ch.iter().map(|v| v - b).collect())
        .collect();
    let u = TimeSeries::new(
        0.0,
        ts.fs,
        ts.names[..p_in].to_vec(),
        small[..p_in].to_vec(),
    )?;
    let y = TimeSeries::new(
        0.0,
        ts.fs,
        ts.names[p_in..].to_vec(),
        small[p_in..].to_vec(),
    )?;
    Ok((
        u,
        y,
        BiasRecord {
            u_bias: bias[..p_in].to_vec(),
            y_bias: bias[p_in..].to_vec(),
        },
    ))
}

/// Stable pole list closed under conjugation.
///
/// Stored in canonical order: ascending magnitude, with each complex pair
/// stored as (upper half-plane pole, its conjugate).
#[derive(Debug, Clone, PartialEq)]
pub struct PoleSet {
    poles: Vec<Complex64>,
}

/// Role of a pole inside a [`PoleSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleKind {
    Real,
    /// First member of a pair, positive imaginary part.
    Upper,
    /// Conjugate of the preceding pole.
    Lower,
}

fn fmt_c(z: Complex64) -> String {
    format!("{:.6e}{:+.6e}i", z.re, z.im)
}

impl PoleSet {
    /// Validates stability, exact conjugate closure and distinctness.
    pub fn new(poles: Vec<Complex64>) -> Result<Self> {
        if poles.is_empty() {
            return Err(Error::EmptySet);
        }
        for p in &poles {
            if !(p.re.is_finite() && p.im.is_finite()) || p.re >= 0.0 {
                return Err(Error::UnstablePole(fmt_c(*p)));
            }
        }
        for (a, p) in poles.iter().enumerate() {
            for q in &poles[a + 1..] {
                if (p - q).norm() <= DUPLICATE_POLE_RTOL * p.norm().max(q.norm()) {
                    return Err(Error::DuplicatePole(fmt_c(*p)));
                }
            }
        }
        let mut reals = Vec::new();
        let mut uppers = Vec::new();
        let mut lowers = Vec::new();
        for p in &poles {
            match p.im.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => uppers.push(*p),
                Some(std::cmp::Ordering::Less) => lowers.push(*p),
                _ => reals.push(*p),
            }
        }
        for u in &uppers {
            if !lowers.contains(&u.conj()) {
                return Err(Error::MissingConjugate(fmt_c(*u)));
            }
        }
        for l in &lowers {
            if !uppers.contains(&l.conj()) {
                return Err(Error::MissingConjugate(fmt_c(*l)));
            }
        }
        let mut groups: Vec<Complex64> = reals.into_iter().chain(uppers).collect();
        groups.sort_by(|a, b| {
            a.norm()
                .partial_cmp(&b.norm())
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
                .then(a.re.partial_cmp(&b.re).unwrap())
        });
        let mut ordered = Vec::with_capacity(poles.len());
        for p in groups {
            ordered.push(p);
            if p.im > 0.0 {
                ordered.push(p.conj());
            }
        }
        Ok(Self { poles: ordered })
    }

    /// Builds a set from numerically computed roots: snaps near-real values to the
    /// real axis, pairs near-conjugates and averages each pair.
    pub fn from_approximate(raw: &[Complex64]) -> Result<Self> {
        let mut reals = Vec::new();
        let mut upper = Vec::new();
        let mut lower = Vec::new();
        for &p in raw {
            if p.im.abs() <= 1e-12 * p.norm() {
                reals.push(Complex64::new(p.re, 0.0));
            } else if p.im > 0.0 {
                upper.push(p);
            } else {
                lower.push(p);
            }
        }
        let mut out = reals;
        let mut used = vec![false; lower.len()];
        for u in upper {
            let best = lower
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .min_by(|a, b| {
                    (a.1.conj() - u)
                        .norm()
                        .partial_cmp(&(b.1.conj() - u).norm())
                        .unwrap()
                });
            match best {
                Some((i, l)) => {
                    used[i] = true;
                    let m = (u + l.conj()) * 0.5;
                    out.push(m);
                    out.push(m.conj());
                }
                None => {
                    // unmatched: keep the real part only
                    out.push(Complex64::new(u.re, 0.0));
                }
            }
        }
        for (i, l) in lower.iter().enumerate() {
            if !used[i] {
                out.push(Complex64::new(l.re, 0.0));
            }
        }
        Self::new(out)
    }

    pub fn len(&self) -> usize {
        self.poles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poles.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.poles
    }

    pub fn iter(&self) -> impl Iterator<Item = &Complex64> {
        self.poles.iter()
    }

    pub fn kind(&self, n: usize) -> PoleKind {
        let p = self.poles[n];
        if p.im == 0.0 {
            PoleKind::Real
        } else if p.im > 0.0 {
            PoleKind::Upper
        } else {
            PoleKind::Lower
        }
    }

    pub fn kinds(&self) -> Vec<PoleKind> {
        (0..self.len()).map(|n| self.kind(n)).collect()
    }
}

/// Common-pole rational MIMO model with an initial-condition term.
///
/// `H(s) = dterm + Σ residues[n] / (s - p_n)` and, per output `i`,
/// `Γ_i(s) = (b_i0 + Σ b_in / (s - p_n)) / s` with `b` stored in `zero_input`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalModel {
    poles: PoleSet,
    residues: Vec<DMatrix<Complex64>>,
    dterm: DMatrix<f64>,
    zero_input: DMatrix<Complex64>,
    bias: BiasRecord,
    fs: f64,
    t_start: f64,
    filter_rule: FilterRule,
}

fn conj_closed(poles: &PoleSet, get: impl Fn(usize) -> Complex64, tol: f64) -> bool {
    poles.kinds().iter().enumerate().all(|(n, k)| match k {
        PoleKind::Real => get(n).im.abs() <= tol,
        PoleKind::Upper => (get(n).conj() - get(n + 1)).norm() <= tol,
        PoleKind::Lower => true,
    })
}

impl RationalModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        poles: PoleSet,
        residues: Vec<DMatrix<Complex64>>,
        dterm: DMatrix<f64>,
        zero_input: DMatrix<Complex64>,
        bias: BiasRecord,
        fs: f64,
        t_start: f64,
        filter_rule: FilterRule,
    ) -> Result<Self> {
        let n = poles.len();
        let p = dterm.nrows();
        if dterm.ncols() != p {
            return Err(Error::DimensionMismatch("dterm must be square".into()));
        }
        if residues.len() != n || residues.iter().any(|r| r.shape() != (p, p)) {
            return Err(Error::DimensionMismatch(format!(
                "expected {n} residue matrices of size {p}x{p}"
            )));
        }
        if zero_input.shape() != (p, n + 1) {
            return Err(Error::DimensionMismatch(format!(
                "zero_input must be {p}x{}",
                n + 1
            )));
        }
        if bias.u_bias.len() != p || bias.y_bias.len() != p {
            return Err(Error::DimensionMismatch("bias length must equal ports".into()));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidSampleRate(fs));
        }
        let scale = residues
            .iter()
            .flat_map(|r| r.iter())
            .chain(zero_input.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let tol = 1e-9 * scale;
        for i in 0..p {
            for j in 0..p {
                if !conj_closed(&poles, |m| residues[m][(i, j)], tol) {
                    return Err(Error::PairStructure(format!(
                        "residues of entry ({i},{j}) not conjugate-closed"
                    )));
                }
            }
            if !conj_closed(&poles, |m| zero_input[(i, m + 1)], tol) || zero_input[(i, 0)].im.abs() > tol {
                return Err(Error::PairStructure(format!(
                    "zero-input row {i} not conjugate-closed"
                )));
            }
        }
        // snap to exact closure
        let kinds = poles.kinds();
        let mut residues = residues;
        let mut zero_input = zero_input;
        for (m, k) in kinds.iter().enumerate() {
            match k {
                PoleKind::Real => {
                    residues[m].iter_mut().for_each(|c| c.im = 0.0);
                    for i in 0..p {
                        zero_input[(i, m + 1)].im = 0.0;
                    }
                }
                PoleKind::Upper => {
                    residues[m + 1] = residues[m].map(|c| c.conj());
                    for i in 0..p {
                        zero_input[(i, m + 2)] = zero_input[(i, m + 1)].conj();
                    }
                }
                PoleKind::Lower => {}
            }
        }
        for i in 0..p {
            zero_input[(i, 0)].im = 0.0;
        }
        Ok(Self {
            poles,
            residues,
            dterm,
            zero_input,
            bias,
            fs,
            t_start,
            filter_rule,
        })
    }

    pub fn poles(&self) -> &PoleSet {
        &self.poles
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    pub fn ports(&self) -> usize {
        self.dterm.nrows()
    }

    /// Residue matrix of pole `n`.
    pub fn residues(&self) -> &[DMatrix<Complex64>] {
        &self.residues
    }

    pub fn residue(&self, i: usize, j: usize, n: usize) -> Complex64 {
        self.residues[n][(i, j)]
    }

    pub fn dterm(&self) -> &DMatrix<f64> {
        &self.dterm
    }

    /// P×(N+1) coefficients of the initial-condition term, column 0 is `b_i0`.
    pub fn zero_input(&self) -> &DMatrix<Complex64> {
        &self.zero_input
    }

    pub fn bias(&self) -> &BiasRecord {
        &self.bias
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    /// Absolute time of the first sample of the fitting window.
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn filter_rule(&self) -> FilterRule {
        self.filter_rule
    }
}

/// Real state-space realization `x' = Ax + Bu`, `y = Cx + Du`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n
            || b.nrows() != n
            || c.ncols() != n
            || d.nrows() != c.nrows()
            || d.ncols() != b.ncols()
        {
            return Err(Error::DimensionMismatch(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Eigenvalues of A.
    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.a
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|z| Complex64::new(z.re, z.im))
            .collect()
    }

    /// `C (sI - A)^{-1} B + D`.
    pub fn transfer(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.states();
        let a = self.a.map(|v| Complex64::new(v, 0.0));
        let m = DMatrix::<Complex64>::identity(n, n) * s - a;
        let b = self.b.map(|v| Complex64::new(v, 0.0));
        let x = m.lu().solve(&b).ok_or(Error::AtPole(fmt_c(s)))?;
        Ok(self.c.map(|v| Complex64::new(v, 0.0)) * x + self.d.map(|v| Complex64::new(v, 0.0)))
    }
}

/// Pole-initialization strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleInit {
    LogSpaced,
    SeededRandom(u64),
}

/// Least-squares backend for the pole-identification step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    /// Assemble and factor the full bordered-block-diagonal system.
    Dense,
    /// Per-output QR factorizations reduced to a small system in the denominator.
    Fast,
}

/// How relocated poles are extracted from the fitted denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relocation {
    /// Zeros of `D(s) = d0 + Σ d_n / (s - q_n)`.
    Continuous,
    /// Zeros of the sampled-data denominator induced by the filter rule, mapped
    /// back through `s = ln(z) / Δt`.
    Sampled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub order: usize,
    pub max_iters: usize,
    pub pole_tol: f64,
    pub omega_max: f64,
    pub pole_init: PoleInit,
    /// One-based index of the first sample used for fitting.
    pub window_start: usize,
    /// One-based index of the last sample used for fitting (inclusive), `None` for the end.
    pub window_end: Option<usize>,
    /// `true` fits the initial-condition term, `false` is plain time-domain VF.
    pub include_ic_term: bool,
    pub solver: Solver,
    pub filter_rule: FilterRule,
    pub relocation: Relocation,
}

impl FitConfig {
    pub fn new(order: usize, omega_max: f64) -> Self {
        Self {
            order,
            max_iters: 20,
            pole_tol: 1e-6,
            omega_max,
            pole_init: PoleInit::LogSpaced,
            window_start: 1,
            window_end: None,
            include_ic_term: true,
            solver: Solver::Fast,
            filter_rule: FilterRule::ZeroOrderHold,
            relocation: Relocation::Sampled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order < 1 {
            return Err(Error::InvalidConfig("order must be >= 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.omega_max.is_finite() && self.omega_max > 0.0) {
            return Err(Error::InvalidConfig("omega_max must be positive".into()));
        }
        if !(self.pole_tol.is_finite() && self.pole_tol >= 0.0) {
            return Err(Error::InvalidConfig("pole_tol must be non-negative".into()));
        }
        if self.window_start < 1 {
            return Err(Error::InvalidConfig("window_start is one-based".into()));
        }
        if let Some(end) = self.window_end {
            if end <= self.window_start {
                return Err(Error::InvalidConfig("window_end must exceed window_start".into()));
            }
        }
        Ok(())
    }
}
