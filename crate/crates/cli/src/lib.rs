//! Command-line front end for `rtvf`: synthetic data, fitting, evaluation,
//! noise injection, SNR sweeps and timing.

pub mod config;
pub mod csvio;
pub mod experiments;
pub mod modelio;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rtvf::metrics::{fd_ser_db, frequency_grid, hausdorff};
use rtvf::oracle::{add_measurement_noise, add_small_signal_noise, recipe_rate, synth_record, InitialState};
use rtvf::{Execution, FitConfig, PoleInit, Relocation, Solver, TimeSeries};

use config::{pick, FileConfig};
use experiments::{FitSpec, Fitted, Method, SweepSetup};
use modelio::{ModelDoc, Num, TruthDoc};

/// Exit status for a fit that stopped before its pole tolerance was met.
pub const EXIT_NOT_CONVERGED: i32 = 1;
/// Exit status for usage, I/O and solver errors.
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rtvf", version, about = "Rational model identification from input/output records")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random system, excite it and write the record plus ground truth.
    Synth(SynthArgs),
    /// Fit a model to a record.
    Fit(FitArgs),
    /// Score a model against a record and, optionally, the ground truth.
    Eval(EvalArgs),
    /// Time one pole iteration for several port counts.
    Bench(BenchArgs),
    /// Add measurement noise to a record.
    Noise(NoiseArgs),
    /// Noisy-fit SNR sweep over random systems.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "RTVF_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub ports: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fastest pole magnitude in rad/s; sets the sampling rate to 10·Ω/2π.
    #[arg(long)]
    pub omega_max: Option<f64>,
    /// `steady` starts at equilibrium, `nonsteady` adds a random state offset.
    #[arg(long)]
    pub x0: Option<String>,
    /// Standard deviation of the random state offset.
    #[arg(long)]
    pub offset_scale: Option<f64>,
    /// File stem: writes STEM.csv, STEM_truth.json and STEM_manifest.json.
    #[arg(long, default_value = "data")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: Common,
    /// Record CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// rtvf, tdvf or arx.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub order: Option<usize>,
    /// Bandwidth for the starting poles; defaults to 2π·fs/10.
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub pole_tol: Option<f64>,
    /// First fitted sample, one-based.
    #[arg(long)]
    pub window_start: Option<usize>,
    /// Last fitted sample, one-based and inclusive; overrides --split.
    #[arg(long)]
    pub window_end: Option<usize>,
    /// Training fraction of the samples after the window start; the rest validates.
    #[arg(long)]
    pub split: Option<f64>,
    /// `logspaced` or `random:SEED`.
    #[arg(long)]
    pub init: Option<String>,
    /// `fast` or `dense`.
    #[arg(long)]
    pub solver: Option<String>,
    /// `zoh` or `trapezoidal`.
    #[arg(long)]
    pub filter: Option<String>,
    /// `sampled` or `continuous`.
    #[arg(long)]
    pub relocation: Option<String>,
    /// ARX output lags.
    #[arg(long)]
    pub na: Option<usize>,
    /// ARX input lags.
    #[arg(long)]
    pub nb: Option<usize>,
    /// Run on one thread.
    #[arg(long)]
    pub sequential: bool,
    /// File stem: writes STEM.json and STEM_replay.csv.
    #[arg(long, default_value = "model")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Ground-truth JSON from `synth`; enables FD-SER and the pole distance.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "6,12,24,48")]
    pub ports: Vec<usize>,
    #[arg(long, default_value_t = 8)]
    pub order: usize,
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    /// Use the rayon pool for the per-output factorizations.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Args)]
pub struct NoiseArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Treat column pairs as magnitude/phase, e.g. `y1:y2`; repeatable.
    /// Without it every input and output channel gets small-signal noise.
    #[arg(long)]
    pub phasor: Vec<String>,
    #[arg(long, default_value = "noisy")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_delimiter = ',')]
    pub snr: Option<Vec<f64>>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub ports: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub omega_max: Option<f64>,
    #[arg(long)]
    pub window_start: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// File stem: writes STEM.csv (every trial) and STEM_summary.csv.
    #[arg(long, default_value = "sweep")]
    pub name: String,
}

/// Files produced by a command, written only once every one of them is ready.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Writes each file through a temporary sibling and a rename; on failure the
    /// files already placed are removed again.
    fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done: Vec<PathBuf> = Vec::new();
        let result = (|| -> Result<()> {
            for (path, bytes) in &self.files {
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
                }
                let mut tmp = path.clone().into_os_string();
                tmp.push(".partial");
                let tmp = PathBuf::from(tmp);
                std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", path.display()))?;
                if let Err(e) = std::fs::rename(&tmp, path) {
                    let _ = std::fs::remove_file(&tmp);
                    return Err(e).with_context(|| format!("cannot write {}", path.display()));
                }
                done.push(path.clone());
            }
            Ok(())
        })();
        match result {
            Ok(()) => Ok(done),
            Err(e) => {
                for p in &done {
                    let _ = std::fs::remove_file(p);
                }
                Err(e)
            }
        }
    }
}

fn announce(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Noise(a) => cmd_noise(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let order = pick(a.order, file.order, 10);
    let ports = pick(a.ports, file.ports, 2);
    let samples = pick(a.samples, file.samples, 5000);
    let seed = pick(a.seed, file.seed, 1);
    let omega_max = pick(a.omega_max, file.omega_max, 10.0);
    let x0 = pick(a.x0, file.x0, "nonsteady".into());
    let scale = pick(a.offset_scale, file.offset_scale, 1.0);
    ensure!(order >= 1 && ports >= 1, "order and ports must be positive");
    ensure!(samples >= 2, "need at least two samples");
    let init = match x0.as_str() {
        "steady" => InitialState::Steady,
        "nonsteady" => InitialState::Offset(scale),
        other => bail!("unknown --x0 `{other}` (steady, nonsteady)"),
    };

    let rec = synth_record(order, ports, samples, omega_max, seed, init)?;
    let fs = recipe_rate(omega_max);
    let truth = TruthDoc::from_system(&rec.system, &rec.x0, &rec.t_offset()?, (samples, seed, omega_max, fs, &x0));
    let dir = &a.common.out_dir;
    let csv_path = dir.join(format!("{}.csv", a.name));
    let truth_path = dir.join(format!("{}_truth.json", a.name));
    let manifest = serde_json::json!({
        "schema": modelio::SCHEMA,
        "command": "synth",
        "data": csv_path.file_name().map(|s| s.to_string_lossy().into_owned()),
        "truth": truth_path.file_name().map(|s| s.to_string_lossy().into_owned()),
        "order": order,
        "ports": ports,
        "samples": samples,
        "seed": seed,
        "omega_max": omega_max,
        "fs": fs,
        "x0": x0,
        "offset_scale": scale,
    });
    let mut out = Outputs::default();
    out.add(csv_path, csvio::record_csv(&rec.u, &rec.y)?);
    out.add(truth_path, modelio::to_json(&truth)?);
    out.add(dir.join(format!("{}_manifest.json", a.name)), modelio::to_json(&manifest)?);
    announce(&out.commit()?);
    Ok(0)
}

fn parse_init(s: &str) -> Result<PoleInit> {
    if s == "logspaced" {
        return Ok(PoleInit::LogSpaced);
    }
    if let Some(seed) = s.strip_prefix("random:") {
        return Ok(PoleInit::SeededRandom(seed.parse().context("random:SEED needs an integer seed")?));
    }
    bail!("unknown --init `{s}` (logspaced, random:SEED)")
}

/// Resolves flags, config file and defaults into a fit specification.
pub fn resolve_fit(a: &FitArgs, file: &FileConfig, samples: usize, fs: f64) -> Result<FitSpec> {
    let order = pick(a.order, file.order, 10);
    let omega_max = pick(a.omega_max, file.omega_max, 2.0 * std::f64::consts::PI * fs / 10.0);
    let mut cfg = FitConfig::new(order, omega_max);
    cfg.max_iters = pick(a.max_iters, file.max_iters, cfg.max_iters);
    cfg.pole_tol = pick(a.pole_tol, file.pole_tol, cfg.pole_tol);
    cfg.window_start = pick(a.window_start, file.window_start, 1);
    let split = pick(a.split, file.split, 0.7);
    cfg.window_end = Some(match a.window_end.or(file.window_end) {
        Some(e) => e,
        None => experiments::split_end(samples, cfg.window_start, split)?,
    });
    cfg.pole_init = parse_init(&pick(a.init.clone(), file.init.clone(), "logspaced".into()))?;
    cfg.solver = match pick(a.solver.clone(), file.solver.clone(), "fast".into()).as_str() {
        "fast" => Solver::Fast,
        "dense" => Solver::Dense,
        other => bail!("unknown --solver `{other}` (fast, dense)"),
    };
    cfg.filter_rule = modelio::parse_rule(&pick(a.filter.clone(), file.filter.clone(), "zoh".into()))?;
    cfg.relocation = match pick(a.relocation.clone(), file.relocation.clone(), "sampled".into()).as_str() {
        "sampled" => Relocation::Sampled,
        "continuous" => Relocation::Continuous,
        other => bail!("unknown --relocation `{other}` (sampled, continuous)"),
    };
    cfg.validate()?;
    let method = Method::parse(&pick(a.method.clone(), file.method.clone(), "rtvf".into()))?;
    let mut spec = FitSpec::new(cfg, method);
    spec.na = pick(a.na, file.na, spec.na);
    spec.nb = pick(a.nb, file.nb, spec.nb);
    if a.sequential {
        spec.exec = Execution::Sequential;
    }
    Ok(spec)
}

fn cmd_fit(a: FitArgs) -> Result<i32> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let (u, y) = csvio::read_record(&a.data)?;
    let spec = resolve_fit(&a, &file, u.len(), u.fs())?;
    let run = experiments::fit_and_report(&u, &y, &spec)?;

    let dir = &a.common.out_dir;
    let mut out = Outputs::default();
    out.add(dir.join(format!("{}.json", a.name)), modelio::to_json(&run.doc)?);
    out.add(dir.join(format!("{}_replay.csv", a.name)), csvio::outputs_csv(&run.replay)?);
    announce(&out.commit()?);

    let r = run.doc.report();
    let show = |label: &str, w: &modelio::WindowMetrics| {
        eprintln!(
            "{label}: samples {}..{}  E_inf {:.3e}  E_inf_rms {:.3e}  rms {:.3e}  TD-SER {:.2} dB",
            w.first, w.last, w.e_inf, w.e_inf_rms.0, w.rms_error, w.td_ser.0
        )
    };
    eprintln!("{}: {} iterations, converged {}", r.method, r.iterations, r.converged);
    show("training", &r.training);
    if let Some(v) = &r.validation {
        show("validation", v);
    }
    if !run.fitted.converged() {
        if let Some(why) = &r.stop_reason {
            eprintln!("stopped: {why}");
        }
        return Ok(EXIT_NOT_CONVERGED);
    }
    Ok(0)
}

/// Metrics emitted by `eval`; truth-dependent fields are omitted without truth.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub kind: String,
    pub samples: usize,
    pub e_inf: f64,
    pub e_inf_rms: Num,
    pub rms_error: f64,
    pub td_ser: Num,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fd_ser: Option<Num>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hausdorff: Option<f64>,
}

/// Index of the sample at time `t` (within half a sample).
fn sample_at(ts: &TimeSeries, t: f64) -> Result<usize> {
    let k = ((t - ts.t0()) * ts.fs()).round();
    ensure!(
        k >= 0.0 && (k as usize) < ts.len(),
        "model starts at t = {t}, outside the record"
    );
    Ok(k as usize)
}

pub fn evaluate(doc: &ModelDoc, u: &TimeSeries, y: &TimeSeries, truth: Option<&TruthDoc>) -> Result<EvalReport> {
    let (fitted, t_start, kind) = match doc {
        ModelDoc::Rational(d) => (Fitted::Rational(d.to_model()?, Default::default()), d.t_start, "rational"),
        ModelDoc::Arx(d) => (Fitted::Arx(d.to_model()?), d.t_start, "arx"),
    };
    let k0 = sample_at(u, t_start)?;
    let u = u.slice(k0, u.len())?;
    let y = y.slice(k0, y.len())?;
    let y_hat = fitted.replay(&u)?;
    let base: Vec<f64> = y.channels().iter().map(|c| c[0]).collect();
    let w = experiments::window_metrics(&y, &y_hat, &base, k0 + 1, k0 + y.len())?;
    let mut rep = EvalReport {
        kind: kind.into(),
        samples: y.len(),
        e_inf: w.e_inf,
        e_inf_rms: w.e_inf_rms,
        rms_error: w.rms_error,
        td_ser: w.td_ser,
        fd_ser: None,
        hausdorff: None,
    };
    if let Some(t) = truth {
        let sys = t.system()?;
        let grid = frequency_grid(t.omega_max);
        let fd = fd_ser_db(&experiments::truth_response(&sys, &grid)?, &fitted.response(&grid)?)?;
        rep.fd_ser = Some(Num(fd.mean));
        if let Fitted::Rational(m, _) = &fitted {
            rep.hausdorff = Some(hausdorff(m.poles().as_slice(), &t.poles())?);
        }
    }
    Ok(rep)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let doc: ModelDoc = modelio::read_json(&a.model)?;
    let (u, y) = csvio::read_record(&a.data)?;
    let truth: Option<TruthDoc> = a.truth.as_deref().map(modelio::read_json).transpose()?;
    let rep = evaluate(&doc, &u, &y, truth.as_ref())?;
    let text = modelio::to_json(&rep)?;
    if let Some(path) = a.output {
        let mut out = Outputs::default();
        out.add(path, text.clone());
        out.commit()?;
    }
    print!("{}", String::from_utf8(text)?);
    Ok(0)
}

fn cmd_bench(a: BenchArgs) -> Result<i32> {
    ensure!(a.ports.len() >= 2, "need at least two port counts for a slope");
    let exec = if a.parallel { Execution::Parallel } else { Execution::Sequential };
    let mut secs = Vec::with_capacity(a.ports.len());
    let mut text = String::from("ports,seconds\n");
    for &p in &a.ports {
        let t = experiments::time_pole_step(p, a.order, a.samples, exec, a.repeats)?;
        eprintln!("P = {p:3}: {t:.4} s");
        text.push_str(&format!("{p},{t}\n"));
        secs.push(t);
    }
    let x: Vec<f64> = a.ports.iter().map(|&p| p as f64).collect();
    let slope = experiments::loglog_slope(&x, &secs);
    print!("{text}");
    println!("# slope {slope:.3}");
    let dir = a.out_dir.or_else(|| std::env::var_os("RTVF_OUT_DIR").map(PathBuf::from));
    if let Some(dir) = dir {
        let mut out = Outputs::default();
        out.add(dir.join("bench.csv"), text.into_bytes());
        announce(&out.commit()?);
    }
    Ok(0)
}

fn column<'a>(u: &'a TimeSeries, y: &'a TimeSeries, name: &str) -> Result<(bool, usize)> {
    let find = |ts: &TimeSeries| ts.names().iter().position(|n| n == name);
    if let Some(i) = find(u) {
        return Ok((false, i));
    }
    if let Some(i) = find(y) {
        return Ok((true, i));
    }
    bail!("no column named `{name}`")
}

fn cmd_noise(a: NoiseArgs) -> Result<i32> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let snr = pick(a.snr, file.snr, 30.0);
    let seed = pick(a.seed, file.seed, 1);
    let (u, y) = csvio::read_record(&a.data)?;
    let (u2, y2) = if a.phasor.is_empty() {
        (add_small_signal_noise(&u, snr, seed)?, add_small_signal_noise(&y, snr, seed.wrapping_add(1))?)
    } else {
        let mut chans = [u.channels().to_vec(), y.channels().to_vec()];
        for (n, pair) in a.phasor.iter().enumerate() {
            let (m, p) = pair.split_once(':').with_context(|| format!("--phasor `{pair}` is not MAG:PHASE"))?;
            let (mo, mi) = column(&u, &y, m)?;
            let (po, pi) = column(&u, &y, p)?;
            let as_ts = |c: &Vec<f64>| TimeSeries::from_channels(u.t0(), u.fs(), "c", vec![c.clone()]);
            let (nm, np) = add_measurement_noise(
                &as_ts(&chans[mo as usize][mi])?,
                &as_ts(&chans[po as usize][pi])?,
                snr,
                seed.wrapping_add(n as u64),
            )?;
            chans[mo as usize][mi] = nm.channel(0).to_vec();
            chans[po as usize][pi] = np.channel(0).to_vec();
        }
        let [cu, cy] = chans;
        (u.with_data(cu)?, y.with_data(cy)?)
    };
    let mut out = Outputs::default();
    out.add(a.common.out_dir.join(format!("{}.csv", a.name)), csvio::record_csv(&u2, &y2)?);
    announce(&out.commit()?);
    Ok(0)
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let d = SweepSetup::default();
    let setup = SweepSetup {
        order: pick(a.order, file.order, d.order),
        ports: pick(a.ports, file.ports, d.ports),
        samples: pick(a.samples, file.samples, d.samples),
        omega_max: pick(a.omega_max, file.omega_max, d.omega_max),
        window_start: pick(a.window_start, file.window_start, d.window_start),
    };
    ensure!(setup.window_start >= 1 && setup.window_start < setup.samples, "window start outside the record");
    let snrs = pick(a.snr, file.snr_list, vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]);
    let trials = pick(a.trials, file.trials, 10);
    let seed = pick(a.seed, file.seed, 1);
    ensure!(trials >= 1 && !snrs.is_empty(), "need at least one SNR level and one trial");

    let results = experiments::sweep(&setup, &snrs, trials, seed)?;
    let mut all = String::from("snr_db,seed,td_ser_db,fd_ser_db,hausdorff\n");
    for t in &results {
        all.push_str(&format!(
            "{},{},{},{},{}\n",
            t.snr_db,
            t.seed,
            fmt_db(t.td_ser),
            fmt_db(t.fd_ser),
            t.hausdorff
        ));
    }
    let mut summary = String::from("snr_db,trials,td_mean,td_min,td_max,fd_mean,fd_min,fd_max\n");
    for l in experiments::summarize(&results) {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            l.snr_db,
            l.trials,
            fmt_db(l.td_mean),
            fmt_db(l.td_min),
            fmt_db(l.td_max),
            fmt_db(l.fd_mean),
            fmt_db(l.fd_min),
            fmt_db(l.fd_max)
        ));
    }
    let dir = &a.common.out_dir;
    let mut out = Outputs::default();
    out.add(dir.join(format!("{}.csv", a.name)), all.into_bytes());
    out.add(dir.join(format!("{}_summary.csv", a.name)), summary.clone().into_bytes());
    announce(&out.commit()?);
    print!("{summary}");
    Ok(0)
}

/// Reads a model document from disk.
pub fn load_model(path: &Path) -> Result<ModelDoc> {
    modelio::read_json(path)
}
