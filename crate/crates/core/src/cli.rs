//! Batch driver: JSON experiment configs in, CSV/JSON artifacts and a
//! manifest out.
//!
//! ```text
//! qplab <command> --config <file> [--seed N] [--threads N] [--out DIR]
//! ```
//!
//! Every artifact is written to a temporary file in the output directory and
//! renamed into place. Result files carry the full configuration in their
//! header: a leading `# config: {...}` line for CSV, a `config` field for
//! JSON.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::greens::{decay_fit, green_solve, pave_direct, Interval, PaveOptions};
use crate::ldt::ldt_scaling_table;
use crate::localization::{decay_profile, eigensystem, most_localized, summarize, EigenPair};
use crate::lowerbound::{
    complexified_growth_check, dyadic_deltas, epsilon_gap, multiscale_recursion, sublevel_measure, GapGrid,
    RecursionOptions, ScaleLadder,
};
use crate::lyapunov::{default_sigma, lyapunov_n, LyapunovEstimate, Sampler};
use crate::model::spec::PotentialSpec;
use crate::ldt::ScalingTable;
use crate::{Error, Frequency, Phase, Result, TrigPotential};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Lyapunov,
    Ldt,
    Green,
    Pave,
    Localize,
    Lowerbound,
    Recursion,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Lyapunov => "lyapunov",
            Command::Ldt => "ldt",
            Command::Green => "green",
            Command::Pave => "pave",
            Command::Localize => "localize",
            Command::Lowerbound => "lowerbound",
            Command::Recursion => "recursion",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Energies as an explicit list or an inclusive equispaced range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnergyGrid {
    Values(Vec<f64>),
    Range { lo: f64, hi: f64, count: usize },
}

impl Default for EnergyGrid {
    fn default() -> Self {
        EnergyGrid::Values(vec![0.0])
    }
}

impl EnergyGrid {
    pub fn values(&self) -> Vec<f64> {
        match *self {
            EnergyGrid::Values(ref v) => v.clone(),
            EnergyGrid::Range { lo, hi, count } => match count {
                0 => Vec::new(),
                1 => vec![lo],
                _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
            },
        }
    }
}

/// Command-specific knobs; each command reads the ones it needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub sigma: Option<f64>,
    #[serde(rename = "box")]
    pub interval: Option<[i64; 2]>,
    pub theta: Option<Vec<f64>>,
    /// Paving window size.
    pub window: Option<usize>,
    /// Paving decay rate; measured from the windows when absent.
    pub rate: Option<f64>,
    pub delta: Option<f64>,
    pub rate_min: Option<f64>,
    pub r2_min: Option<f64>,
    pub enforce_gate: Option<bool>,
    pub ldt_samples: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Must match the command given on the command line when present.
    #[serde(default)]
    pub command: Option<Command>,
    pub potential: PotentialSpec,
    #[serde(default)]
    pub energies: EnergyGrid,
    /// Scale schedule.
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// File name inside the output directory; `<command>.<format>` by default.
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub params: Params,
}

fn invalid(path: &str, reason: impl Into<String>) -> Error {
    Error::ConfigInvalid {
        path: path.into(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid {
            path: format!("line {} column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(&path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Almost-Mathieu localization scan: λ = 5, golden ω, box [−500, 500], θ = 0.
    pub fn flagship_localization() -> Self {
        let v = TrigPotential::cosine(5.0);
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            command: Some(Command::Localize),
            potential: PotentialSpec::from_parts(&v, &Frequency::golden()),
            energies: EnergyGrid::default(),
            n: vec![200],
            samples: None,
            seed: 0,
            output: None,
            format: Format::Json,
            params: Params {
                interval: Some([-500, 500]),
                theta: Some(vec![0.0]),
                delta: Some(0.5),
                rate_min: Some(0.8 * 2.5f64.ln()),
                r2_min: Some(0.95),
                ..Params::default()
            },
        }
    }

    /// Ladder at λ = 50 for `cos 2πθ₁ + cos 2πθ₂`, scales 200…1600.
    pub fn flagship_recursion() -> Self {
        let v = TrigPotential::cosine_sum_2d(50.0);
        let w = Frequency::default_2d();
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            command: Some(Command::Recursion),
            potential: PotentialSpec::from_parts(&v, &w),
            energies: EnergyGrid::default(),
            n: vec![200, 400, 800, 1600],
            samples: None,
            seed: 0,
            output: None,
            format: Format::Json,
            params: Params {
                sigma: Some(0.1),
                enforce_gate: Some(false),
                ..Params::default()
            },
        }
    }

    fn built(&self) -> Result<(TrigPotential, Frequency)> {
        self.potential.build()
    }

    fn energies_nonempty(&self) -> Result<Vec<f64>> {
        let e = self.energies.values();
        if e.is_empty() {
            return Err(invalid("energies", "no energies"));
        }
        Ok(e)
    }

    fn schedule(&self) -> Result<&[usize]> {
        if self.n.is_empty() || self.n.contains(&0) {
            return Err(invalid("n", "schedule must be a nonempty list of positive scales"));
        }
        Ok(&self.n)
    }

    fn theta(&self, dim: usize) -> Result<Phase> {
        match &self.params.theta {
            None => Ok(Phase::zero(dim)),
            Some(t) if t.len() == dim => Ok(Phase::new(t)),
            Some(_) => Err(invalid("params.theta", format!("expected {dim} coordinates"))),
        }
    }

    fn interval(&self) -> Result<Interval> {
        match self.params.interval {
            Some([lo, hi]) if lo <= hi => Ok(Interval::new(lo, hi)),
            Some(_) => Err(invalid("params.box", "need lo <= hi")),
            None => Err(invalid("params.box", "missing")),
        }
    }

    fn sampler(&self, dim: usize, n: usize) -> Sampler {
        match (self.samples, dim) {
            (None, _) => Sampler::default_for(dim, n),
            (Some(s), 1) => Sampler::Grid { points: s.max(1) },
            (Some(s), _) => Sampler::Stratified {
                per_axis: ((s as f64).sqrt().ceil() as usize).max(1),
                seed: self.seed,
            },
        }
    }

    fn file_name(&self, command: Command) -> String {
        self.output.clone().unwrap_or_else(|| {
            let ext = match self.format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            format!("{}.{ext}", command.name())
        })
    }
}

/// Which series a plot-data file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    LyapunovVsE,
    DecayProfile,
    LdtScaling,
    Ladder,
}

impl PlotKind {
    fn stem(self) -> &'static str {
        match self {
            PlotKind::LyapunovVsE => "lyapunov_vs_E",
            PlotKind::DecayProfile => "decay_profile",
            PlotKind::LdtScaling => "ldt_scaling",
            PlotKind::Ladder => "ladder",
        }
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::LyapunovVsE => ("E", "L_n"),
            PlotKind::DecayProfile => ("|k - center|", "log|xi_k|"),
            PlotKind::LdtScaling => ("n", "deviation fraction"),
            PlotKind::Ladder => ("n", "L_n"),
        }
    }
}

/// Two-column data ready for plotting, with `# key: value` header lines.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub kind: PlotKind,
    pub header: Vec<(String, String)>,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn lyapunov(rows: &[LyapunovEstimate]) -> Self {
        PlotSeries {
            kind: PlotKind::LyapunovVsE,
            header: rows.first().map(|r| vec![("n".into(), r.n.to_string())]).unwrap_or_default(),
            points: rows.iter().map(|r| (r.energy, r.value)).collect(),
        }
    }

    pub fn decay_profile(pair: &EigenPair) -> Self {
        let p = decay_profile(pair);
        PlotSeries {
            kind: PlotKind::DecayProfile,
            header: vec![
                ("center".into(), p.center.to_string()),
                ("rate".into(), p.rate.to_string()),
                ("E".into(), pair.energy.to_string()),
            ],
            points: pair
                .interval
                .sites()
                .zip(&pair.vector)
                .filter(|(_, x)| **x != 0.0)
                .map(|(k, x)| ((k - p.center).abs() as f64, x.abs().ln()))
                .collect(),
        }
    }

    pub fn ldt(table: &ScalingTable) -> Self {
        PlotSeries {
            kind: PlotKind::LdtScaling,
            header: table.rows.first().map(|r| vec![("sigma".into(), r.sigma.to_string())]).unwrap_or_default(),
            points: table.rows.iter().map(|r| (r.n as f64, r.fraction)).collect(),
        }
    }

    pub fn ladder(ladder: &ScaleLadder) -> Self {
        PlotSeries {
            kind: PlotKind::Ladder,
            header: vec![
                ("lambda".into(), ladder.lambda.to_string()),
                ("half_log_lambda".into(), ladder.half_log_lambda.to_string()),
            ],
            points: ladder.rungs.iter().map(|r| (r.n as f64, r.l)).collect(),
        }
    }
}

/// Writes `<stem>.dat` (whitespace-separated, gnuplot-readable) and a
/// `<stem>.gp` script stub into `dir`. Returns both paths.
pub fn emit_plot_data(series: &PlotSeries, dir: &Path) -> Result<Vec<PathBuf>> {
    if series.points.is_empty() {
        return Err(Error::EmptyResult(format!("no points for {}", series.kind.stem())));
    }
    let stem = series.kind.stem();
    let (xl, yl) = series.kind.labels();
    let mut dat = String::new();
    writeln!(dat, "# {stem}").unwrap();
    for (k, v) in &series.header {
        writeln!(dat, "# {k}: {v}").unwrap();
    }
    writeln!(dat, "# {xl}\t{yl}").unwrap();
    for (x, y) in &series.points {
        writeln!(dat, "{x:.17e} {y:.17e}").unwrap();
    }
    let reference = series
        .header
        .iter()
        .find(|(k, _)| k == "half_log_lambda")
        .map(|(_, v)| format!(", {v} title \"1/2 log lambda\""))
        .unwrap_or_default();
    let gp = format!(
        "set xlabel \"{xl}\"\nset ylabel \"{yl}\"\nplot \"{stem}.dat\" using 1:2 with linespoints title \"{stem}\"{reference}\n"
    );
    let dat_path = dir.join(format!("{stem}.dat"));
    let gp_path = dir.join(format!("{stem}.gp"));
    write_atomic(&dat_path, dat.as_bytes())?;
    write_atomic(&gp_path, gp.as_bytes())?;
    Ok(vec![dat_path, gp_path])
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Artifact {
    body: Vec<u8>,
    plots: Vec<PlotSeries>,
}

fn csv_artifact(cfg_line: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut out = format!("# config: {cfg_line}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(header).map_err(io)?;
        for r in rows {
            w.write_record(&r).map_err(io)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn json_artifact<T: Serialize>(cfg: &ExperimentConfig, result: &T) -> Vec<u8> {
    let doc = serde_json::json!({ "config": cfg, "result": result });
    let mut s = serde_json::to_string_pretty(&doc).expect("result serializes");
    s.push('\n');
    s.into_bytes()
}

fn emit(cfg: &ExperimentConfig, header: &[&str], rows: Vec<Vec<String>>, json: impl Serialize) -> Result<Vec<u8>> {
    match cfg.format {
        Format::Csv => csv_artifact(&serde_json::to_string(cfg).expect("config serializes"), header, rows),
        Format::Json => Ok(json_artifact(cfg, &json)),
    }
}

fn s(x: impl ToString) -> String {
    x.to_string()
}

fn run_lyapunov(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let energies = cfg.energies_nonempty()?;
    let mut rows = Vec::new();
    for &n in cfg.schedule()? {
        for &e in &energies {
            rows.push(lyapunov_n(&w, e, n, &v, &cfg.sampler(v.dim(), n)));
        }
    }
    let last_n = *cfg.n.last().expect("nonempty schedule");
    let plot: Vec<LyapunovEstimate> = rows.iter().filter(|r| r.n == last_n).cloned().collect();
    let table = rows
        .iter()
        .map(|r| vec![s(r.n), s(r.energy), s(r.value), s(r.std_error), s(r.samples), s(serde_json::to_value(r.quadrature).unwrap().as_str().unwrap())])
        .collect();
    Ok(Artifact {
        body: emit(cfg, &["n", "E", "value", "std_error", "samples", "quadrature"], table, &rows)?,
        plots: vec![PlotSeries::lyapunov(&plot)],
    })
}

fn run_ldt(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let e = cfg.energies_nonempty()?[0];
    let sigma = cfg.params.sigma.unwrap_or(default_sigma(v.dim()));
    let samples = cfg.samples.unwrap_or(100_000);
    let table = ldt_scaling_table(&w, e, &v, sigma, cfg.schedule()?, samples, cfg.seed)?;
    let rows = table
        .rows
        .iter()
        .map(|r| vec![s(r.n), s(r.sigma), s(r.threshold), s(r.fraction), s(r.std_error), s(r.bound_reference)])
        .collect();
    Ok(Artifact {
        body: emit(cfg, &["n", "sigma", "threshold", "fraction", "std_error", "bound_reference"], rows, &table)?,
        plots: vec![PlotSeries::ldt(&table)],
    })
}

fn run_green(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let e = cfg.energies_nonempty()?[0];
    let iv = cfg.interval()?;
    let g = green_solve(iv, &w, &cfg.theta(v.dim())?, e, &v)?;
    let body = match cfg.format {
        Format::Csv => {
            let mut out = format!("# config: {}\n", serde_json::to_string(cfg).expect("config serializes")).into_bytes();
            g.write_triplets(&mut out)?;
            out
        }
        Format::Json => {
            let fit = decay_fit(&g, (iv.len() / 8).max(1)).ok();
            json_artifact(
                cfg,
                &serde_json::json!({
                    "interval": iv, "E": e, "log_sup": g.log_sup(),
                    "symmetry_error": g.symmetry_error(), "decay_fit": fit,
                }),
            )
        }
    };
    Ok(Artifact { body, plots: vec![] })
}

fn run_pave(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let e = cfg.energies_nonempty()?[0];
    let iv = cfg.interval()?;
    let n = cfg.params.window.unwrap_or(50);
    let theta = cfg.theta(v.dim())?;
    let c = match cfg.params.rate {
        Some(c) => c,
        None => crate::greens::measured_window_rate(iv, n, &w, &theta, e, &v)?,
    };
    let paving = pave_direct(iv, n, &w, &theta, e, &v, c, &PaveOptions::default())?;
    let body = match cfg.format {
        Format::Csv => {
            let mut out = format!("# config: {}\n", serde_json::to_string(cfg).expect("config serializes")).into_bytes();
            paving.green.write_triplets(&mut out)?;
            out
        }
        Format::Json => json_artifact(cfg, &serde_json::json!({ "window_rate": c, "certificate": paving.certificate })),
    };
    Ok(Artifact { body, plots: vec![] })
}

fn run_localize(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let iv = cfg.interval()?;
    let pairs = eigensystem(iv, &w, &cfg.theta(v.dim())?, &v);
    let rate_min = cfg.params.rate_min.unwrap_or(0.0);
    let r2_min = cfg.params.r2_min.unwrap_or(0.95);
    let summary = summarize(&pairs, v.coupling(), rate_min, r2_min)?;
    let profiles: Vec<_> = pairs.iter().map(decay_profile).collect();
    let plots = most_localized(&pairs, 1, r2_min, 1)
        .first()
        .map(|(i, _)| vec![PlotSeries::decay_profile(&pairs[*i])])
        .unwrap_or_default();
    let rows = pairs
        .iter()
        .zip(&profiles)
        .enumerate()
        .map(|(i, (p, d))| vec![s(i), s(p.energy), s(d.center), s(d.rate), s(d.r2), s(d.tail_mass)])
        .collect();
    Ok(Artifact {
        body: emit(cfg, &["index", "E", "center", "rate", "r2", "tail_mass"], rows, &summary)?,
        plots,
    })
}

fn run_lowerbound(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let lambda = v.coupling();
    let v0 = v.clone().with_coupling(1.0);
    let energies = cfg.energies_nonempty()?;
    let samples = cfg.samples.unwrap_or(1_000_000).max(10_000);
    let targets: Vec<f64> = energies.iter().map(|e| e / lambda.max(f64::MIN_POSITIVE)).collect();
    let sublevel = sublevel_measure(&v0, &targets, &dyadic_deltas(-10, -4), samples, cfg.seed)?;
    let mut growth = Vec::new();
    let mut gap = None;
    if v.dim() == 1 {
        let delta = cfg.params.delta.unwrap_or(0.1);
        let g = epsilon_gap(&v0, delta, &targets, &GapGrid::default())?;
        let n = cfg.n.last().copied().unwrap_or(1000);
        for (&e, &t) in energies.iter().zip(&targets) {
            let y0 = epsilon_gap(&v0, delta, &[t], &GapGrid::default())?.y0;
            growth.push(complexified_growth_check(lambda, &v0, &w, e, y0, g.epsilon, n)?);
        }
        gap = Some(g);
    }
    let rows = sublevel
        .rows
        .iter()
        .flat_map(|r| r.points.iter().map(move |p| vec![s(r.e1), s(p.delta), s(p.measure), s(p.std_error)]))
        .collect();
    let json = serde_json::json!({ "epsilon_gap": gap, "complexified_growth": growth, "sublevel": sublevel });
    Ok(Artifact {
        body: emit(cfg, &["E1", "delta", "measure", "std_error"], rows, json)?,
        plots: vec![],
    })
}

fn run_recursion(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (v, w) = cfg.built()?;
    let e = cfg.energies_nonempty()?[0];
    let opts = RecursionOptions {
        sigma: cfg.params.sigma.unwrap_or(0.1),
        sampler: cfg.samples.map(|_| cfg.sampler(v.dim(), 0)),
        ldt_samples: cfg.params.ldt_samples.unwrap_or(0),
        seed: cfg.seed,
        enforce_gate: cfg.params.enforce_gate.unwrap_or(true),
        enforce_drop: true,
    };
    let lambda = v.coupling();
    let v0 = v.with_coupling(1.0);
    let ladder = multiscale_recursion(lambda, &v0, &w, e, cfg.schedule()?, &opts)?;
    let rows = ladder
        .rungs
        .iter()
        .map(|r| {
            vec![
                s(r.n),
                s(r.l),
                s(r.std_error),
                s(r.rho),
                s(r.gate_ok),
                r.drop_margin.map(s).unwrap_or_default(),
            ]
        })
        .collect();
    Ok(Artifact {
        body: emit(cfg, &["n", "L", "std_error", "rho", "gate_ok", "drop_margin"], rows, &ladder)?,
        plots: vec![PlotSeries::ladder(&ladder)],
    })
}

/// Where and how a run executes.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub plots: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            out_dir: PathBuf::from("."),
            threads: None,
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: Command,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub threads: usize,
    pub qplab_version: String,
    pub wall_time_s: f64,
    pub outputs: Vec<PathBuf>,
}

/// SHA-256 of the canonical (compact) config JSON.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(cfg).expect("config serializes"));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs one experiment and writes its artifacts and `<output>.manifest.json`.
pub fn run(command: Command, cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Manifest> {
    if let Some(c) = cfg.command {
        if c != command {
            return Err(invalid("command", format!("config is for {}, not {}", c.name(), command.name())));
        }
    }
    let mut cfg = cfg.clone();
    cfg.command = Some(command);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let start = Instant::now();
    let artifact = pool.install(|| match command {
        Command::Lyapunov => run_lyapunov(&cfg),
        Command::Ldt => run_ldt(&cfg),
        Command::Green => run_green(&cfg),
        Command::Pave => run_pave(&cfg),
        Command::Localize => run_localize(&cfg),
        Command::Lowerbound => run_lowerbound(&cfg),
        Command::Recursion => run_recursion(&cfg),
    })?;
    let out = opts.out_dir.join(cfg.file_name(command));
    write_atomic(&out, &artifact.body)?;
    let mut outputs = vec![out.clone()];
    if opts.plots {
        for p in &artifact.plots {
            if !p.points.is_empty() {
                outputs.extend(emit_plot_data(p, &opts.out_dir)?);
            }
        }
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command,
        config_sha256: config_hash(&cfg),
        config: cfg.clone(),
        seed: cfg.seed,
        threads: pool.current_num_threads(),
        qplab_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        outputs,
    };
    let mut path = out.into_os_string();
    path.push(".manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(Path::new(&path), text.as_bytes())?;
    Ok(manifest)
}

const COMMAND_HELP: &str = "\
Output columns (CSV, after a `# config:` line):
  lyapunov    n,E,value,std_error,samples,quadrature
  ldt         n,sigma,threshold,fraction,std_error,bound_reference
  green       n1,n2,sign,log_mag
  pave        n1,n2,sign,log_mag
  localize    index,E,center,rate,r2,tail_mass
  lowerbound  E1,delta,measure,std_error
  recursion   n,L,std_error,rho,gate_ok,drop_margin
With \"format\": \"json\" the file holds {\"config\": ..., \"result\": ...}.
`localize` and `recursion` run built-in configurations when --config is omitted.";

#[derive(Debug, Parser)]
#[command(name = "qplab", version, about = "Quasi-periodic Schrödinger operator experiments", after_help = COMMAND_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Clone, clap::Args)]
pub struct CommonArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Print the effective config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// L_n(E) over an energy grid and scale schedule.
    Lyapunov(CommonArgs),
    /// Deviation-set measure per scale.
    Ldt(CommonArgs),
    /// Green's function of a box.
    Green(CommonArgs),
    /// Green's function of a long interval assembled from windows.
    Pave(CommonArgs),
    /// Eigenvector decay profiles of a box.
    Localize(CommonArgs),
    /// Strip gap, complexified growth and sublevel exponents.
    Lowerbound(CommonArgs),
    /// Multiscale ladder over a scale schedule.
    Recursion(CommonArgs),
}

impl CliCommand {
    fn split(&self) -> (Command, &CommonArgs) {
        match self {
            CliCommand::Lyapunov(a) => (Command::Lyapunov, a),
            CliCommand::Ldt(a) => (Command::Ldt, a),
            CliCommand::Green(a) => (Command::Green, a),
            CliCommand::Pave(a) => (Command::Pave, a),
            CliCommand::Localize(a) => (Command::Localize, a),
            CliCommand::Lowerbound(a) => (Command::Lowerbound, a),
            CliCommand::Recursion(a) => (Command::Recursion, a),
        }
    }
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigInvalid { .. } => 2,
        _ => 1,
    }
}

fn execute(cli: &Cli) -> Result<Option<Manifest>> {
    let (command, args) = cli.command.split();
    let mut cfg = match (&args.config, command) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Command::Localize) => ExperimentConfig::flagship_localization(),
        (None, Command::Recursion) => ExperimentConfig::flagship_recursion(),
        (None, _) => return Err(invalid("--config", "required for this command")),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.print_config {
        cfg.command = Some(command);
        println!("{}", cfg.to_json());
        return Ok(None);
    }
    let opts = RunOptions {
        out_dir: args.out.clone(),
        threads: args.threads,
        plots: true,
    };
    run(command, &cfg, &opts).map(Some)
}

/// Entry point for the binary: parses `args`, runs, and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(Some(m)) => {
            for o in &m.outputs {
                println!("{}", o.display());
            }
            0
        }
        Ok(None) => 0,
        Err(e) => {
            eprintln!("{e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lyapunov_config() -> ExperimentConfig {
        ExperimentConfig {
            schema_version: 1,
            command: None,
            potential: PotentialSpec::from_parts(&TrigPotential::cosine(5.0), &Frequency::golden()),
            energies: EnergyGrid::Range {
                lo: -7.0,
                hi: 7.0,
                count: 5,
            },
            n: vec![50],
            samples: Some(64),
            seed: 3,
            output: None,
            format: Format::Csv,
            params: Params::default(),
        }
    }

    #[test]
    fn energy_grid_forms() {
        let r = EnergyGrid::Range {
            lo: -1.0,
            hi: 1.0,
            count: 3,
        };
        assert_eq!(r.values(), vec![-1.0, 0.0, 1.0]);
        let parsed: EnergyGrid = serde_json::from_str("[0.5, 2]").unwrap();
        assert_eq!(parsed.values(), vec![0.5, 2.0]);
    }

    #[test]
    fn config_round_trip_and_schema() {
        let cfg = lyapunov_config();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let mut bad = cfg.clone();
        bad.schema_version = 9;
        let err = ExperimentConfig::from_json(&bad.to_json()).unwrap_err();
        assert!(matches!(err, Error::ConfigInvalid { ref path, .. } if path == "schema_version"));
        let err = ExperimentConfig::from_json("{\"schema_version\": 1, \"bogus\": 1}").unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = lyapunov_config();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.seed += 1;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }

    #[test]
    fn lyapunov_run_writes_rows_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let opts = RunOptions {
            out_dir: dir.path().into(),
            threads: Some(1),
            plots: true,
        };
        let m = run(Command::Lyapunov, &lyapunov_config(), &opts).unwrap();
        let text = std::fs::read_to_string(&m.outputs[0]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: "));
        assert_eq!(lines[1], "n,E,value,std_error,samples,quadrature");
        assert_eq!(lines.len(), 2 + 5);
        assert!(dir.path().join("lyapunov.csv.manifest.json").exists());
        assert!(dir.path().join("lyapunov_vs_E.dat").exists());
        let again = run(Command::Lyapunov, &lyapunov_config(), &opts).unwrap();
        assert_eq!(std::fs::read(&again.outputs[0]).unwrap(), text.as_bytes());
    }

    #[test]
    fn command_mismatch_is_config_error() {
        let mut cfg = lyapunov_config();
        cfg.command = Some(Command::Ldt);
        let err = run(Command::Lyapunov, &cfg, &RunOptions::default()).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn plot_data_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let empty = PlotSeries {
            kind: PlotKind::Ladder,
            header: vec![],
            points: vec![],
        };
        assert!(matches!(emit_plot_data(&empty, dir.path()), Err(Error::EmptyResult(_))));
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
        let s = PlotSeries {
            kind: PlotKind::Ladder,
            header: vec![("half_log_lambda".into(), "1.956".into())],
            points: vec![(200.0, 3.2), (400.0, 3.1)],
        };
        let paths = emit_plot_data(&s, dir.path()).unwrap();
        let dat = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(dat.contains("# half_log_lambda: 1.956"));
        let data: Vec<&str> = dat.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data.len(), 2);
        assert_eq!(data[0].split_whitespace().count(), 2);
        assert!(std::fs::read_to_string(&paths[1]).unwrap().contains("ladder.dat"));
    }
}
