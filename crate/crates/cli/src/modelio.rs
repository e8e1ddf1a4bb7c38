//! JSON documents: fitted models, ground truth and run manifests.

use anyhow::{bail, ensure, Context, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use rtvf::filterbank::FilterRule;
use rtvf::{ArxModel, BiasRecord, FitReport, PoleSet, RationalModel, StateSpaceModel};

pub const SCHEMA: u32 = 1;

/// A float that may be infinite or NaN; those are written as `"inf"`, `"-inf"`, `"nan"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Num(pub f64);

impl Serialize for Num {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::F(v) => Ok(Num(v)),
            Raw::S(s) => match s.as_str() {
                "inf" => Ok(Num(f64::INFINITY)),
                "-inf" => Ok(Num(f64::NEG_INFINITY)),
                "nan" => Ok(Num(f64::NAN)),
                other => Err(serde::de::Error::custom(format!("unexpected number `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cx {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for Cx {
    fn from(c: Complex64) -> Self {
        Cx { re: c.re, im: c.im }
    }
}

impl From<Cx> for Complex64 {
    fn from(c: Cx) -> Self {
        Complex64::new(c.re, c.im)
    }
}

fn cxs(v: &[Complex64]) -> Vec<Cx> {
    v.iter().copied().map(Cx::from).collect()
}

fn rows<T: Copy + nalgebra::Scalar>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows<T: Copy + nalgebra::Scalar>(r: &[Vec<T>], ncols: usize) -> Result<DMatrix<T>> {
    ensure!(r.iter().all(|row| row.len() == ncols), "ragged matrix");
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasDoc {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl From<&BiasRecord> for BiasDoc {
    fn from(b: &BiasRecord) -> Self {
        BiasDoc {
            u: b.u_bias.clone(),
            y: b.y_bias.clone(),
        }
    }
}

impl From<&BiasDoc> for BiasRecord {
    fn from(b: &BiasDoc) -> Self {
        BiasRecord {
            u_bias: b.u.clone(),
            y_bias: b.y.clone(),
        }
    }
}

/// Replay quality over one sample window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    /// One-based first and last sample (inclusive) of the window in the input file.
    pub first: usize,
    pub last: usize,
    pub e_inf: f64,
    pub e_inf_rms: Num,
    /// RMS of the output error over all channels and samples.
    pub rms_error: f64,
    pub td_ser: Num,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub method: String,
    pub iterations: usize,
    pub converged: bool,
    /// Iteration whose poles the model carries, `0` for the starting set.
    #[serde(default)]
    pub selected_iteration: usize,
    pub condition: Num,
    pub residual_history: Vec<Num>,
    pub residue_residual: Vec<Num>,
    pub pole_history: Vec<Vec<Cx>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<String>,
    pub window_start: usize,
    pub window_end: usize,
    pub training: WindowMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<WindowMetrics>,
}

impl ReportDoc {
    pub fn from_fit(method: &str, r: &FitReport, window: (usize, usize), training: WindowMetrics) -> Self {
        ReportDoc {
            method: method.into(),
            iterations: r.iterations,
            converged: r.converged,
            selected_iteration: r.selected_iteration,
            condition: Num(r.condition),
            residual_history: r.residual_history.iter().map(|&v| Num(v)).collect(),
            residue_residual: r.residue_residual.iter().map(|&v| Num(v)).collect(),
            pole_history: r.pole_history.iter().map(|p| cxs(p.as_slice())).collect(),
            stop_reason: r.stop_reason.clone(),
            window_start: window.0,
            window_end: window.1,
            training,
            validation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationalDoc {
    pub schema: u32,
    pub order: usize,
    pub ports: usize,
    pub fs: f64,
    pub t_start: f64,
    pub filter_rule: String,
    pub poles: Vec<Cx>,
    /// `residues[i][j][n]`.
    pub residues: Vec<Vec<Vec<Cx>>>,
    pub dterm: Vec<Vec<f64>>,
    /// `zero_input[i][n]`, `n = 0` is the constant term.
    pub zero_input: Vec<Vec<Cx>>,
    pub bias: BiasDoc,
    pub fit_report: ReportDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArxDoc {
    pub schema: u32,
    pub na: usize,
    pub nb: usize,
    pub ports: usize,
    pub fs: f64,
    pub t_start: f64,
    /// `a[i][m-1]` multiplies `y_i[k-m]`.
    pub a: Vec<Vec<f64>>,
    /// `b[i][j][m-1]` multiplies `u_j[k-m]`.
    pub b: Vec<Vec<Vec<f64>>>,
    pub bias: BiasDoc,
    pub fit_report: ReportDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelDoc {
    Rational(RationalDoc),
    Arx(ArxDoc),
}

fn rule_name(r: FilterRule) -> &'static str {
    match r {
        FilterRule::ZeroOrderHold => "zoh",
        FilterRule::Trapezoidal => "trapezoidal",
    }
}

pub fn parse_rule(s: &str) -> Result<FilterRule> {
    match s {
        "zoh" => Ok(FilterRule::ZeroOrderHold),
        "trapezoidal" => Ok(FilterRule::Trapezoidal),
        other => bail!("unknown filter rule `{other}` (zoh, trapezoidal)"),
    }
}

impl RationalDoc {
    pub fn new(m: &RationalModel, fit_report: ReportDoc) -> Self {
        let p = m.ports();
        let n = m.order();
        RationalDoc {
            schema: SCHEMA,
            order: n,
            ports: p,
            fs: m.fs(),
            t_start: m.t_start(),
            filter_rule: rule_name(m.filter_rule()).into(),
            poles: cxs(m.poles().as_slice()),
            residues: (0..p)
                .map(|i| (0..p).map(|j| (0..n).map(|k| m.residue(i, j, k).into()).collect()).collect())
                .collect(),
            dterm: rows(m.dterm()),
            zero_input: rows(m.zero_input()).into_iter().map(|r| cxs(&r)).collect(),
            bias: m.bias().into(),
            fit_report,
        }
    }

    pub fn to_model(&self) -> Result<RationalModel> {
        ensure!(self.schema == SCHEMA, "unsupported model schema {}", self.schema);
        let (p, n) = (self.ports, self.order);
        ensure!(self.poles.len() == n, "model lists {} poles for order {n}", self.poles.len());
        ensure!(
            self.residues.len() == p && self.residues.iter().all(|r| r.len() == p && r.iter().all(|e| e.len() == n)),
            "residues must be [{p}][{p}][{n}]"
        );
        let poles = PoleSet::new(self.poles.iter().map(|&c| c.into()).collect())?;
        let residues = (0..n)
            .map(|k| DMatrix::from_fn(p, p, |i, j| self.residues[i][j][k].into()))
            .collect();
        ensure!(self.zero_input.len() == p, "zero_input must have {p} rows");
        let zi: Vec<Vec<Complex64>> = self.zero_input.iter().map(|r| r.iter().map(|&c| c.into()).collect()).collect();
        let model = RationalModel::new(
            poles,
            residues,
            from_rows(&self.dterm, p)?,
            from_rows(&zi, n + 1)?,
            (&self.bias).into(),
            self.fs,
            self.t_start,
            parse_rule(&self.filter_rule)?,
        )?;
        Ok(model)
    }
}

impl ArxDoc {
    pub fn new(m: &ArxModel, fit_report: ReportDoc) -> Self {
        ArxDoc {
            schema: SCHEMA,
            na: m.na,
            nb: m.nb,
            ports: m.a.len(),
            fs: m.fs,
            t_start: m.t_start,
            a: m.a.clone(),
            b: m.b.clone(),
            bias: (&m.bias).into(),
            fit_report,
        }
    }

    pub fn to_model(&self) -> Result<ArxModel> {
        ensure!(self.schema == SCHEMA, "unsupported model schema {}", self.schema);
        let p = self.ports;
        ensure!(self.a.len() == p && self.a.iter().all(|r| r.len() == self.na), "a must be [{p}][{}]", self.na);
        ensure!(
            self.b.len() == p && self.b.iter().all(|r| r.len() == p && r.iter().all(|e| e.len() == self.nb)),
            "b must be [{p}][{p}][{}]",
            self.nb
        );
        Ok(ArxModel {
            na: self.na,
            nb: self.nb,
            a: self.a.clone(),
            b: self.b.clone(),
            fs: self.fs,
            bias: (&self.bias).into(),
            t_start: self.t_start,
        })
    }
}

impl ModelDoc {
    pub fn report(&self) -> &ReportDoc {
        match self {
            ModelDoc::Rational(d) => &d.fit_report,
            ModelDoc::Arx(d) => &d.fit_report,
        }
    }

    pub fn report_mut(&mut self) -> &mut ReportDoc {
        match self {
            ModelDoc::Rational(d) => &mut d.fit_report,
            ModelDoc::Arx(d) => &mut d.fit_report,
        }
    }
}

/// Ground truth written next to a synthetic record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthDoc {
    pub schema: u32,
    pub order: usize,
    pub ports: usize,
    pub samples: usize,
    pub seed: u64,
    pub omega_max: f64,
    pub fs: f64,
    pub initial_state: String,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    /// Gap between the initial state and the equilibrium of the first input sample.
    pub t_offset: Vec<f64>,
    pub poles: Vec<Cx>,
}

impl TruthDoc {
    pub fn system(&self) -> Result<StateSpaceModel> {
        ensure!(self.schema == SCHEMA, "unsupported truth schema {}", self.schema);
        let n = self.order;
        let p = self.ports;
        let m = StateSpaceModel::new(
            from_rows(&self.a, n)?,
            from_rows(&self.b, p)?,
            from_rows(&self.c, n)?,
            from_rows(&self.d, p)?,
        )?;
        Ok(m)
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.poles.iter().map(|&c| c.into()).collect()
    }

    pub fn from_system(
        sys: &StateSpaceModel,
        x0: &DVector<f64>,
        t_offset: &DVector<f64>,
        meta: (usize, u64, f64, f64, &str),
    ) -> Self {
        let (samples, seed, omega_max, fs, init) = meta;
        let mut poles = sys.eigenvalues();
        poles.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap().then(a.re.partial_cmp(&b.re).unwrap()));
        TruthDoc {
            schema: SCHEMA,
            order: sys.states(),
            ports: sys.inputs(),
            samples,
            seed,
            omega_max,
            fs,
            initial_state: init.into(),
            a: rows(&sys.a),
            b: rows(&sys.b),
            c: rows(&sys.c),
            d: rows(&sys.d),
            x0: x0.iter().copied().collect(),
            t_offset: t_offset.iter().copied().collect(),
            poles: cxs(&poles),
        }
    }
}

pub fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("{} is not a valid document", path.display()))
}
