//! Regressor assembly and least-squares solvers.
//!
//! For every output `i` the fitting condition reads
//! `φ_i d + Δ a_i ≈ 0`, where `Δ = [ψ_1 … ψ_P β]` collects the filtered inputs
//! and filtered steps and `φ_i = -[ỹ_i, ỹ_i⁽¹⁾ … ỹ_i⁽ᴺ⁾]`. Stacking all outputs
//! gives a bordered-block-diagonal system in `(a_1 … a_P, d)`.
//!
//! Both solvers normalize columns to unit 2-norm and append one relaxation row
//! `w · g·d = w` that keeps the denominator away from the trivial zero solution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::filterbank::{self, FilterRule};
use crate::par::{self, Execution};
use crate::sigcore::{same_grid, PoleSet, TimeSeries};

/// Number of frequency points of the relaxation constraint.
const RELAX_POINTS: usize = 200;

/// Singular values below this fraction of the largest count as zero.
const RANK_RTOL: f64 = 1e-13;

/// Shared input block `Δ = [ψ_1 … ψ_P β]`.
#[derive(Debug, Clone)]
pub struct Delta {
    pub matrix: DMatrix<f64>,
    pub poles: PoleSet,
    pub fs: f64,
    pub ports: usize,
    pub include_ic: bool,
}

impl Delta {
    pub fn order(&self) -> usize {
        self.poles.len()
    }

    /// Columns per input block and per initial-condition block.
    pub fn block_width(&self) -> usize {
        self.order() + 1
    }
}

/// All regressor matrices for one pole-identification step.
#[derive(Debug, Clone)]
pub struct RegressorBundle {
    pub delta: Delta,
    /// One `K×(N+1)` matrix per output, sign included.
    pub phi: Vec<DMatrix<f64>>,
}

impl RegressorBundle {
    pub fn samples(&self) -> usize {
        self.delta.matrix.nrows()
    }

    pub fn ports(&self) -> usize {
        self.delta.ports
    }

    pub fn order(&self) -> usize {
        self.delta.order()
    }

    pub fn unknowns(&self) -> usize {
        self.ports() * self.delta.matrix.ncols() + self.order() + 1
    }
}

/// Real-coordinate solution of the pole-identification problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    /// Denominator `(d_0, d_1 … d_N)` in real coordinates.
    pub d: DVector<f64>,
    /// Per output: stacked `c_i1 … c_iP` then `b_i` (when present), real coordinates.
    pub a: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleSolution {
    pub coefficients: CoefficientSet,
    /// `‖stacked residual‖₂` of the homogeneous data rows.
    pub residual: f64,
    /// Condition estimate of the column-normalized system.
    pub condition: f64,
}

impl PoleSolution {
    /// Denominator coefficients in complex per-pole form, `d_0` first.
    pub fn complex_denominator(&self, poles: &PoleSet) -> Result<Vec<Complex64>> {
        let d = &self.coefficients.d;
        let mut out = vec![Complex64::new(d[0], 0.0)];
        out.extend(filterbank::complex_coefficients(poles, &d.as_slice()[1..])?);
        Ok(out)
    }
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols.len());
    for (c, col) in cols.iter().enumerate() {
        m.column_mut(c).copy_from_slice(col);
    }
    m
}

fn signal_block(
    z: &[f64],
    poles: &PoleSet,
    fs: f64,
    rule: FilterRule,
    sign: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut cols = vec![z.iter().map(|v| sign * v).collect::<Vec<_>>()];
    for col in filterbank::filtered_columns(z, poles, fs, rule)? {
        cols.push(col.into_iter().map(|v| sign * v).collect());
    }
    Ok(cols)
}

/// Builds `Δ` from small-signal inputs.
pub fn build_delta(
    u_small: &TimeSeries,
    poles: &PoleSet,
    include_ic: bool,
    rule: FilterRule,
    exec: Execution,
) -> Result<Delta> {
    let k = u_small.len();
    let fs = u_small.fs();
    let blocks = par::map_range(u_small.n_channels(), exec, |j| {
        signal_block(u_small.channel(j), poles, fs, rule, 1.0)
    });
    let mut cols = Vec::new();
    for b in blocks {
        cols.extend(b?);
    }
    if include_ic {
        cols.push(vec![1.0; k]);
        cols.extend(filterbank::step_columns(poles, k, fs)?);
    }
    Ok(Delta {
        matrix: columns_to_matrix(&cols, k),
        poles: poles.clone(),
        fs,
        ports: u_small.n_channels(),
        include_ic,
    })
}

/// Builds `Δ` and every `φ_i`.
pub fn build_regressors(
    u_small: &TimeSeries,
    y_small: &TimeSeries,
    poles: &PoleSet,
    include_ic: bool,
    rule: FilterRule,
) -> Result<RegressorBundle> {
    build_regressors_with(u_small, y_small, poles, include_ic, rule, Execution::default())
}

pub fn build_regressors_with(
    u_small: &TimeSeries,
    y_small: &TimeSeries,
    poles: &PoleSet,
    include_ic: bool,
    rule: FilterRule,
    exec: Execution,
) -> Result<RegressorBundle> {
    same_grid(u_small, y_small)?;
    let p = u_small.n_channels();
    if y_small.n_channels() != p {
        return Err(Error::ChannelMismatch {
            expected: p,
            got: y_small.n_channels(),
        });
    }
    let n = poles.len();
    let k = u_small.len();
    let width = (n + 1) * p + if include_ic { n + 1 } else { 0 } + n + 1;
    if k < width {
        return Err(Error::Underdetermined {
            rows: k,
            unknowns: width,
        });
    }
    let delta = build_delta(u_small, poles, include_ic, rule, exec)?;
    let fs = u_small.fs();
    let phi = par::map_range(p, exec, |i| {
        signal_block(y_small.channel(i), poles, fs, rule, -1.0).map(|c| columns_to_matrix(&c, k))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(RegressorBundle { delta, phi })
}

/// Frequency grid used by the relaxation constraint.
pub fn relaxation_grid(fs: f64) -> Vec<f64> {
    let hi = std::f64::consts::PI * fs;
    let lo = hi * 1e-4;
    crate::metrics::log_grid(lo, hi, RELAX_POINTS)
}

/// `g` such that `g·d` is the grid average of `Re D(jω)`.
fn relaxation_row(poles: &PoleSet, fs: f64) -> DVector<f64> {
    let grid = relaxation_grid(fs);
    let mean: Vec<Complex64> = poles
        .iter()
        .map(|&q| {
            grid.iter()
                .map(|&w| (Complex64::new(0.0, w) - q).inv())
                .sum::<Complex64>()
                / grid.len() as f64
        })
        .collect();
    let real = filterbank::realify_values(poles, &mean);
    let mut g = DVector::zeros(poles.len() + 1);
    g[0] = 1.0;
    for (n, v) in real.iter().enumerate() {
        g[n + 1] = v.re;
    }
    g
}

fn col_norms(m: &DMatrix<f64>) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

fn safe_scale(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

fn numerical_rank(s: &[f64]) -> usize {
    let top = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > RANK_RTOL * top && v > 0.0).count()
}

fn condition(s: &[f64]) -> f64 {
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Least squares `min ‖M x - rhs‖` for a small, full-column-rank `M`.
fn small_lstsq(m: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    let n = m.ncols();
    let qr = m.qr();
    let qtb = qr.q().transpose() * rhs;
    let r = qr.r();
    r.solve_upper_triangular(&qtb.rows(0, n).into_owned())
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize], scales: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (o, (&c, s)) in cols.iter().zip(scales).enumerate() {
        out.column_mut(o).copy_from(&(m.column(c) / *s));
    }
    out
}

/// Column-normalized problem over the columns that are not identically zero.
///
/// An all-zero column (for instance the filtered copies of an input that never
/// moves) carries no information; its coefficient is fixed at zero. The `d0`
/// column always stays because the relaxation row involves it.
struct Scaled {
    delta: DMatrix<f64>,
    phi: Vec<DMatrix<f64>>,
    g: DVector<f64>,
    weight: f64,
    delta_cols: Vec<usize>,
    delta_scale: Vec<f64>,
    d_cols: Vec<usize>,
    d_scale: Vec<f64>,
    m_full: usize,
    nd_full: usize,
}

impl Scaled {
    fn new(bundle: &RegressorBundle) -> Self {
        let m_full = bundle.delta.matrix.ncols();
        let nd_full = bundle.order() + 1;
        let dn = col_norms(&bundle.delta.matrix);
        let delta_cols: Vec<usize> = (0..m_full).filter(|&c| dn[c] > 0.0).collect();
        let delta_scale: Vec<f64> = delta_cols.iter().map(|&c| safe_scale(dn[c])).collect();

        let mut pn = vec![0.0; nd_full];
        for phi in &bundle.phi {
            for (c, v) in col_norms(phi).into_iter().enumerate() {
                pn[c] += v * v;
            }
        }
        let pn: Vec<f64> = pn.into_iter().map(f64::sqrt).collect();
        let weight = safe_scale(pn.iter().sum::<f64>() / nd_full as f64);
        let d_cols: Vec<usize> = (0..nd_full).filter(|&c| c == 0 || pn[c] > 0.0).collect();
        let d_scale: Vec<f64> = d_cols.iter().map(|&c| safe_scale(pn[c])).collect();

        let g_full = relaxation_row(&bundle.delta.poles, bundle.delta.fs);
        let g = DVector::from_iterator(
            d_cols.len(),
            d_cols.iter().zip(&d_scale).map(|(&c, s)| g_full[c] / s),
        );
        Self {
            delta: select_columns(&bundle.delta.matrix, &delta_cols, &delta_scale),
            phi: bundle
                .phi
                .iter()
                .map(|p| select_columns(p, &d_cols, &d_scale))
                .collect(),
            g,
            weight,
            delta_cols,
            delta_scale,
            d_cols,
            d_scale,
            m_full,
            nd_full,
        }
    }

    fn m(&self) -> usize {
        self.delta_cols.len()
    }

    fn nd(&self) -> usize {
        self.d_cols.len()
    }

    /// Scatters compact, normalized unknowns back to the full real coordinates.
    fn finish(&self, a: Vec<DVector<f64>>, d: &DVector<f64>) -> CoefficientSet {
        let mut d_full = DVector::zeros(self.nd_full);
        for (o, (&c, s)) in self.d_cols.iter().zip(&self.d_scale).enumerate() {
            d_full[c] = d[o] / s;
        }
        let a = a
            .into_iter()
            .map(|ai| {
                let mut full = DVector::zeros(self.m_full);
                for (o, (&c, s)) in self.delta_cols.iter().zip(&self.delta_scale).enumerate() {
                    full[c] = ai[o] / s;
                }
                full
            })
            .collect();
        CoefficientSet { d: d_full, a }
    }
}

/// Appends the weighted relaxation row to `r` (zero data right-hand side) and
/// solves the resulting least-squares problem.
fn solve_with_constraint(
    r: &DMatrix<f64>,
    g: &DVector<f64>,
    weight: f64,
    unknowns: usize,
    extra_condition: f64,
) -> Result<(DVector<f64>, f64)> {
    let n = r.ncols();
    let s_data = singular_values(r);
    let data_rank = numerical_rank(&s_data);
    let mut aug = DMatrix::zeros(r.nrows() + 1, n);
    aug.rows_mut(0, r.nrows()).copy_from(r);
    for c in 0..n {
        aug[(r.nrows(), c)] = weight * g[c];
    }
    let s = singular_values(&aug);
    let cond = condition(&s).max(extra_condition);
    let rank = numerical_rank(&s);
    if data_rank + 1 < n || rank < n {
        return Err(Error::DegenerateRegressor {
            rank: unknowns - (n - data_rank.min(n)),
            unknowns,
            condition: cond,
        });
    }
    let mut rhs = DVector::zeros(aug.nrows());
    rhs[r.nrows()] = weight;
    let x = small_lstsq(aug, rhs).ok_or(Error::DegenerateRegressor {
        rank: unknowns - 1,
        unknowns,
        condition: cond,
    })?;
    Ok((x, cond))
}

/// Reference solver: assembles and factors the full bordered-block-diagonal matrix.
pub fn solve_pole_ls(bundle: &RegressorBundle) -> Result<PoleSolution> {
    let k = bundle.samples();
    let p = bundle.ports();
    let unknowns = bundle.unknowns();
    if p * k < unknowns {
        return Err(Error::Underdetermined {
            rows: p * k,
            unknowns,
        });
    }
    let sc = Scaled::new(bundle);
    let (m, nd) = (sc.m(), sc.nd());
    let cols = p * m + nd;
    let mut big = DMatrix::zeros(p * k, cols);
    for (i, phi) in sc.phi.iter().enumerate() {
        big.view_mut((i * k, i * m), (k, m)).copy_from(&sc.delta);
        big.view_mut((i * k, p * m), (k, nd)).copy_from(phi);
    }
    let r = big.qr().r();
    let mut g = DVector::zeros(cols);
    g.rows_mut(p * m, nd).copy_from(&sc.g);
    let (x, cond) = solve_with_constraint(&r, &g, sc.weight, unknowns, 1.0)?;
    let residual = (&r * &x).norm();
    let a = (0..p).map(|i| x.rows(i * m, m).into_owned()).collect();
    let d = x.rows(p * m, nd).into_owned();
    Ok(PoleSolution {
        coefficients: sc.finish(a, &d),
        residual,
        condition: cond,
    })
}

/// Decoupled solver: one QR of `[Δ φ_i]` per output, then a small problem in `d`.
pub fn solve_pole_ls_fast(bundle: &RegressorBundle) -> Result<PoleSolution> {
    solve_pole_ls_fast_with(bundle, Execution::default())
}

struct BlockFactor {
    r11: DMatrix<f64>,
    r12: DMatrix<f64>,
    r22: DMatrix<f64>,
}

pub fn solve_pole_ls_fast_with(bundle: &RegressorBundle, exec: Execution) -> Result<PoleSolution> {
    let k = bundle.samples();
    let p = bundle.ports();
    let unknowns = bundle.unknowns();
    let sc = Scaled::new(bundle);
    let (m, nd) = (sc.m(), sc.nd());
    if k < m + nd {
        return Err(Error::Underdetermined {
            rows: k,
            unknowns: m + nd,
        });
    }

    let factors: Vec<BlockFactor> = par::map_range(p, exec, |i| {
        let mut x = DMatrix::zeros(k, m + nd);
        x.columns_mut(0, m).copy_from(&sc.delta);
        x.columns_mut(m, nd).copy_from(&sc.phi[i]);
        let r = x.qr().r();
        BlockFactor {
            r11: r.view((0, 0), (m, m)).into_owned(),
            r12: r.view((0, m), (m, nd)).into_owned(),
            r22: r.view((m, m), (nd, nd)).into_owned(),
        }
    });

    // Δ is shared, so its conditioning is the same in every factor
    let (delta_rank, delta_cond) = triangular_rank(&factors[0].r11);
    if delta_rank < m {
        return Err(Error::DegenerateRegressor {
            rank: delta_rank * p + nd,
            unknowns,
            condition: delta_cond,
        });
    }

    let mut reduced = DMatrix::zeros(p * nd, nd);
    for (i, f) in factors.iter().enumerate() {
        reduced.view_mut((i * nd, 0), (nd, nd)).copy_from(&f.r22);
    }
    let (d, cond) = solve_with_constraint(&reduced, &sc.g, sc.weight, unknowns, delta_cond)?;
    let residual = (&reduced * &d).norm();

    let mut a = Vec::with_capacity(p);
    for f in &factors {
        let rhs = -(&f.r12 * &d);
        a.push(f.r11.solve_upper_triangular(&rhs).ok_or(Error::DegenerateRegressor {
            rank: unknowns - 1,
            unknowns,
            condition: delta_cond,
        })?);
    }
    Ok(PoleSolution {
        coefficients: sc.finish(a, &d),
        residual,
        condition: cond,
    })
}

/// Rank and condition estimate read off the diagonal of a triangular factor.
fn triangular_rank(r: &DMatrix<f64>) -> (usize, f64) {
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let dmin = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let rank = diag
        .iter()
        .filter(|&&v| v > RANK_RTOL * dmax * diag.len() as f64)
        .count();
    let cond = if dmin > 0.0 { dmax / dmin } else { f64::INFINITY };
    (rank, cond)
}

/// Residue-stage coefficients in complex per-pole form.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidueCoefficients {
    /// `c_ij⁽⁰⁾`, P×P.
    pub direct: DMatrix<f64>,
    /// `c_ij⁽ⁿ⁾` for every pole, each P×P.
    pub residues: Vec<DMatrix<Complex64>>,
    /// `b_i⁽ⁿ⁾`, P×(N+1); zero when the initial-condition block is absent.
    pub zero_input: DMatrix<Complex64>,
    /// Per-output residual norm `‖Δ a_i - ỹ_i‖`.
    pub residual: Vec<f64>,
    pub condition: f64,
}

/// Solves `Δ a_i ≈ ỹ_i` for every output with the poles held fixed.
pub fn solve_residue_ls(delta: &Delta, y_small: &TimeSeries) -> Result<ResidueCoefficients> {
    let k = delta.matrix.nrows();
    let m = delta.matrix.ncols();
    let p = delta.ports;
    let n = delta.order();
    if y_small.len() != k || y_small.n_channels() != p {
        return Err(Error::DimensionMismatch(format!(
            "Δ is {k}x{m} for {p} ports, outputs are {}x{}",
            y_small.len(),
            y_small.n_channels()
        )));
    }
    if k < m {
        return Err(Error::Underdetermined { rows: k, unknowns: m });
    }
    let norms = col_norms(&delta.matrix);
    let cols: Vec<usize> = (0..m).filter(|&c| norms[c] > 0.0).collect();
    let scales: Vec<f64> = cols.iter().map(|&c| norms[c]).collect();
    let ma = cols.len();
    let ds = select_columns(&delta.matrix, &cols, &scales);
    let qr = ds.clone().qr();
    let r = qr.r();
    let (rank, cond) = triangular_rank(&r);
    if rank < ma {
        return Err(Error::DegenerateRegressor {
            rank: rank + (m - ma),
            unknowns: m,
            condition: cond,
        });
    }
    let q = qr.q();
    let mut sol = Vec::with_capacity(p);
    let mut residual = Vec::with_capacity(p);
    for i in 0..p {
        let y = DVector::from_column_slice(y_small.channel(i));
        let qty = q.transpose() * &y;
        let a = r.solve_upper_triangular(&qty).ok_or(Error::DegenerateRegressor {
            rank,
            unknowns: m,
            condition: cond,
        })?;
        residual.push((&ds * &a - &y).norm());
        let mut full = DVector::zeros(m);
        for (o, (&c, s)) in cols.iter().zip(&scales).enumerate() {
            full[c] = a[o] / s;
        }
        sol.push(full);
    }

    let width = n + 1;
    let mut direct = DMatrix::zeros(p, p);
    let mut residues = vec![DMatrix::zeros(p, p); n];
    let mut zero_input = DMatrix::zeros(p, width);
    for (i, a) in sol.iter().enumerate() {
        for j in 0..p {
            let block = &a.as_slice()[j * width..(j + 1) * width];
            direct[(i, j)] = block[0];
            let c = filterbank::complex_coefficients(&delta.poles, &block[1..])?;
            for (nn, v) in c.into_iter().enumerate() {
                residues[nn][(i, j)] = v;
            }
        }
        if delta.include_ic {
            let block = &a.as_slice()[p * width..(p + 1) * width];
            zero_input[(i, 0)] = Complex64::new(block[0], 0.0);
            let b = filterbank::complex_coefficients(&delta.poles, &block[1..])?;
            for (nn, v) in b.into_iter().enumerate() {
                zero_input[(i, nn + 1)] = v;
            }
        }
    }
    Ok(ResidueCoefficients {
        direct,
        residues,
        zero_input,
        residual,
        condition: cond,
    })
}
