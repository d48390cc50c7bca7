//! `gccd` command-line tool.
//!
//! Exit codes: 0 success, 1 parse or argument error, 2 infeasible problem,
//! 3 I/O error.

mod files;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gccd::ecg::{detect_rpeaks, load_signal, synth_ecg, BeatShape, EcgSignal, SignalFormat, SynthConfig};
use gccd::eval::{load_annotations, match_peaks, tolerance_samples, MatchStrategy, MetricsRow, Report};
use gccd::graph::{ecg_template, GapTable, Severity, Wave};
use gccd::oracle::{oracle_solve, OracleConfig};
use gccd::{parse_graph, solve, ConstraintGraph, Error};
use rayon::prelude::*;
use serde::Serialize;

use files::{read_text, record_id, records_in, write_atomic};

#[derive(Parser)]
#[command(name = "gccd", version, about = "Graph-constrained changepoint detection for ECG signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment one signal and write the segmentation.
    Segment(SegmentArgs),
    /// Detect R-peaks in one or more records.
    Detect(DetectArgs),
    /// Compare detected peaks with reference annotations.
    Eval(EvalArgs),
    /// Generate a synthetic ECG record with ground-truth peaks.
    Synth(SynthArgs),
    /// Inspect or build constraint graphs.
    #[command(subcommand)]
    Graph(GraphCommand),
    /// Solve a tiny instance by exhaustive grid search.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Check a graph file and list problems.
    Validate { path: PathBuf },
    /// Print a cyclic ECG template graph.
    Template {
        /// Waveforms to include, e.g. `PQRST` or `QRS`.
        #[arg(long, default_value = "PQRST")]
        waves: String,
        #[arg(long, default_value_t = 0.3)]
        gap: f64,
        #[arg(long, default_value_t = 1.0)]
        penalty: f64,
    },
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    Csv,
    Plain,
}

#[derive(Clone, Copy, Default, ValueEnum)]
enum Strategy {
    #[default]
    Greedy,
    Optimal,
}

#[derive(Args, Clone)]
struct GraphArgs {
    /// Constraint graph file.
    #[arg(long, conflicts_with = "template")]
    graph: Option<PathBuf>,
    /// Build a template graph from these waveforms instead, e.g. `PQRST`.
    #[arg(long)]
    template: Option<String>,
    /// Penalty for every edge entering a waveform (template) or for every
    /// edge (graph file).
    #[arg(long)]
    penalty: Option<f64>,
    /// Gap for every edge. Templates default to 0.3 × the signal's
    /// peak-to-peak amplitude.
    #[arg(long)]
    gap: Option<f64>,
}

#[derive(Args, Clone)]
struct SignalArgs {
    /// Sampling frequency in Hz.
    #[arg(long, default_value_t = 360.0)]
    fs: f64,
    /// Input layout; by default `.csv` files are CSV and others plain.
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
}

#[derive(Args)]
struct SegmentArgs {
    input: PathBuf,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    signal: SignalArgs,
    #[arg(long, value_enum, default_value_t)]
    format: OutputFormat,
    /// Write one fitted mean per sample instead of the segment list.
    #[arg(long)]
    per_sample: bool,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Signal files. Ignored when `--manifest` is given.
    inputs: Vec<PathBuf>,
    /// File of `signal [graph]` lines; relative paths resolve against the
    /// manifest's directory and a missing graph falls back to the graph flags.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    signal: SignalArgs,
    /// Output directory for `<record>.peaks` and `<record>.segments.json`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Detected peaks: a file or a directory of per-record files.
    #[arg(long)]
    detected: PathBuf,
    /// Reference annotations: a file or a directory of per-record files.
    #[arg(long)]
    reference: PathBuf,
    /// Extension of detected-peak files inside a directory.
    #[arg(long, default_value = "peaks")]
    detected_ext: String,
    /// Extension of annotation files inside a directory.
    #[arg(long, default_value = "ann")]
    reference_ext: String,
    #[arg(long, default_value_t = 150.0)]
    tol_ms: f64,
    #[arg(long, default_value_t = 360.0)]
    fs: f64,
    #[arg(long, value_enum, default_value_t)]
    strategy: Strategy,
    #[arg(long, value_enum, default_value_t)]
    format: OutputFormat,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    beats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise standard deviation in mV.
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    #[arg(long, default_value_t = 360.0)]
    fs: f64,
    /// Output directory for `synth<seed>.txt` and `synth<seed>.ann`.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write `synth<seed>.graph`, a template matched to the beat shape.
    #[arg(long)]
    emit_graph: bool,
}

#[derive(Args)]
struct OracleArgs {
    input: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[command(flatten)]
    signal: SignalArgs,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Detect(a) => cmd_detect(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Graph(c) => cmd_graph(c),
        Command::Oracle(a) => cmd_oracle(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Infeasible(_) => 2,
                Error::Io { .. } => 3,
                _ => 1,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn check_override(name: &str, value: Option<f64>) -> anyhow::Result<()> {
    if let Some(v) = value {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidArgument(format!("--{name} must be finite and non-negative, got {v}")).into());
        }
    }
    Ok(())
}

fn load_graph_file(path: &Path) -> anyhow::Result<ConstraintGraph> {
    let text = read_text(path)?;
    parse_graph(&text).with_context(|| format!("in {}", path.display()))
}

/// Resolves the graph for one signal from a file or a template.
fn build_graph(args: &GraphArgs, file: Option<&Path>, signal: &EcgSignal) -> anyhow::Result<ConstraintGraph> {
    check_override("penalty", args.penalty)?;
    check_override("gap", args.gap)?;
    let file = file.or(args.graph.as_deref());
    if let Some(path) = file {
        let mut graph = load_graph_file(path)?;
        for e in &mut graph.edges {
            if let Some(p) = args.penalty {
                e.penalty = p;
            }
            if let Some(g) = args.gap {
                e.gap = g;
            }
        }
        return Ok(graph);
    }
    let Some(waves) = &args.template else {
        return Err(Error::InvalidArgument("need --graph or --template".into()).into());
    };
    let waves = Wave::parse_set(waves)?;
    let gap = args.gap.unwrap_or_else(|| {
        let (lo, hi) = signal
            .samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        0.3 * (hi - lo)
    });
    if gap <= 0.0 {
        return Err(Error::InvalidArgument("template gap must be positive; pass --gap for a flat signal".into()).into());
    }
    Ok(ecg_template(&waves, &GapTable::uniform(gap), args.penalty.unwrap_or(1.0))?)
}

fn read_signal(path: &Path, args: &SignalArgs) -> anyhow::Result<EcgSignal> {
    let format = match args.input_format {
        Some(InputFormat::Csv) => SignalFormat::Csv,
        Some(InputFormat::Plain) => SignalFormat::Plain,
        None => SignalFormat::from_path(path),
    };
    Ok(load_signal(path, format, args.fs).with_context(|| format!("reading {}", path.display()))?)
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_atomic(path, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}

fn cmd_segment(a: SegmentArgs) -> anyhow::Result<u8> {
    let signal = read_signal(&a.input, &a.signal)?;
    let graph = build_graph(&a.graph, None, &signal)?;
    let seg = solve(&signal.samples, &graph)?;
    let text = match (a.format, a.per_sample) {
        (OutputFormat::Json, false) => to_json(&seg.to_document(&graph)),
        (OutputFormat::Json, true) => to_json(&seg.means_per_sample()),
        (OutputFormat::Text, true) => seg.means_per_sample().iter().map(|m| format!("{m}\n")).collect(),
        (OutputFormat::Text, false) => {
            let mut s = format!("# total_cost {}\nstart\tend\tstate\tmean\n", seg.total_cost);
            for x in &seg.segments {
                s.push_str(&format!("{}\t{}\t{}\t{}\n", x.start, x.end, graph.vertex(x.state).name, x.mean));
            }
            s
        }
    };
    emit(a.out.as_deref(), &text)?;
    Ok(0)
}

struct Job {
    signal: PathBuf,
    graph: Option<PathBuf>,
}

fn parse_manifest(path: &Path) -> anyhow::Result<Vec<Job>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut jobs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() > 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: "expected `signal [graph]`".into(),
            })
            .with_context(|| format!("in {}", path.display()));
        }
        jobs.push(Job {
            signal: base.join(fields[0]),
            graph: fields.get(1).map(|g| base.join(g)),
        });
    }
    Ok(jobs)
}

fn detect_one(job: &Job, a: &DetectArgs) -> anyhow::Result<()> {
    let signal = read_signal(&job.signal, &a.signal)?;
    let graph = build_graph(&a.graph, job.graph.as_deref(), &signal)?;
    let found = detect_rpeaks(&signal, &graph).with_context(|| format!("record {}", signal.record_id))?;
    let id = record_id(&job.signal);
    write_atomic(&a.out.join(format!("{id}.peaks")), found.peaks.to_text().as_bytes())?;
    write_atomic(
        &a.out.join(format!("{id}.segments.json")),
        to_json(&found.segmentation.to_document(&graph)).as_bytes(),
    )?;
    Ok(())
}

fn cmd_detect(a: DetectArgs) -> anyhow::Result<u8> {
    let jobs = match &a.manifest {
        Some(m) => parse_manifest(m)?,
        None => a
            .inputs
            .iter()
            .map(|p| Job {
                signal: p.clone(),
                graph: None,
            })
            .collect(),
    };
    if jobs.is_empty() {
        return Err(Error::InvalidArgument("no input records".into()).into());
    }
    let mut ids = BTreeMap::new();
    for j in &jobs {
        if let Some(prev) = ids.insert(record_id(&j.signal), &j.signal) {
            bail!(Error::InvalidArgument(format!(
                "{} and {} share a record id",
                prev.display(),
                j.signal.display()
            )));
        }
    }
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let results: Vec<anyhow::Result<()>> = jobs.par_iter().map(|j| detect_one(j, &a)).collect();
    let mut first_err = None;
    for (job, r) in jobs.iter().zip(results) {
        if let Err(e) = r {
            eprintln!("error: {}: {e:#}", job.signal.display());
            first_err.get_or_insert(e);
        }
    }
    match first_err {
        Some(e) => Ok(exit_code(&e)),
        None => Ok(0),
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<u8> {
    if !(a.tol_ms.is_finite() && a.tol_ms >= 0.0) {
        bail!(Error::InvalidArgument(format!("--tol-ms must be non-negative, got {}", a.tol_ms)));
    }
    if !(a.fs.is_finite() && a.fs > 0.0) {
        bail!(Error::InvalidArgument(format!("--fs must be positive, got {}", a.fs)));
    }
    let detected = records_in(&a.detected, &a.detected_ext)?;
    let reference = records_in(&a.reference, &a.reference_ext)?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if detected.len() == 1 && reference.len() == 1 && a.detected.is_file() {
        let (id, d) = detected.into_iter().next().expect("one");
        let (_, r) = reference.into_iter().next().expect("one");
        vec![(id, d, r)]
    } else {
        let only_d: Vec<&String> = detected.keys().filter(|k| !reference.contains_key(*k)).collect();
        let only_r: Vec<&String> = reference.keys().filter(|k| !detected.contains_key(*k)).collect();
        if !only_d.is_empty() || !only_r.is_empty() {
            bail!(Error::InvalidArgument(format!(
                "record lists differ: only detected {only_d:?}, only reference {only_r:?}"
            )));
        }
        detected
            .into_iter()
            .map(|(id, d)| {
                let r = reference[&id].clone();
                (id, d, r)
            })
            .collect()
    };
    let tol = tolerance_samples(a.tol_ms, a.fs);
    let strategy = match a.strategy {
        Strategy::Greedy => MatchStrategy::Greedy,
        Strategy::Optimal => MatchStrategy::Optimal,
    };
    let mut rows = Vec::new();
    for (id, d, r) in pairs {
        let det = load_annotations(&d).with_context(|| format!("reading {}", d.display()))?;
        let refs = load_annotations(&r).with_context(|| format!("reading {}", r.display()))?;
        let m = match_peaks(det.as_slice(), refs.as_slice(), tol, strategy)?;
        rows.push(MetricsRow::from_match(id, &m));
    }
    let report = Report::new(rows);
    let text = match a.format {
        OutputFormat::Text => report.to_text(),
        OutputFormat::Json => to_json(&report),
    };
    emit(a.out.as_deref(), &text)?;
    Ok(0)
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<u8> {
    let cfg = SynthConfig {
        n_beats: a.beats,
        fs: a.fs,
        shape: BeatShape::default(),
        noise_sd: a.noise_sd,
        seed: a.seed,
    };
    let (signal, truth) = synth_ecg(&cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let stem = a.out.join(&signal.record_id);
    let samples: String = signal.samples.iter().map(|x| format!("{x}\n")).collect();
    write_atomic(&stem.with_extension("txt"), samples.as_bytes())?;
    write_atomic(&stem.with_extension("ann"), truth.to_text().as_bytes())?;
    if a.emit_graph {
        let graph = cfg.shape.matched_template(0.1)?;
        write_atomic(&stem.with_extension("graph"), graph.to_text().as_bytes())?;
    }
    Ok(0)
}

fn cmd_graph(c: GraphCommand) -> anyhow::Result<u8> {
    match c {
        GraphCommand::Validate { path } => {
            let text = read_text(&path)?;
            // Parsing already rejects errors; warnings are reported here.
            let graph = parse_graph(&text).with_context(|| format!("in {}", path.display()))?;
            let diagnostics = graph.validate();
            for d in &diagnostics {
                let level = match d.severity {
                    Severity::Warning => "warning",
                    Severity::Error => "error",
                };
                println!("{level}: {}", d.message);
            }
            println!(
                "{}: {} states, {} edges",
                path.display(),
                graph.vertices.len(),
                graph.edges.len()
            );
            Ok(if graph.has_errors() { 1 } else { 0 })
        }
        GraphCommand::Template { waves, gap, penalty } => {
            let graph = ecg_template(&Wave::parse_set(&waves)?, &GapTable::uniform(gap), penalty)?;
            print!("{}", graph.to_text());
            Ok(0)
        }
    }
}

#[derive(Serialize)]
struct OracleReport {
    cost: f64,
    grid_bound: f64,
    gaps_aligned: bool,
    segmentation: gccd::solver::SegmentationDocument,
}

fn cmd_oracle(a: OracleArgs) -> anyhow::Result<u8> {
    let signal = read_signal(&a.input, &a.signal)?;
    let graph = load_graph_file(&a.graph)?;
    let cfg = OracleConfig {
        mean_grid_step: a.step,
        ..OracleConfig::default()
    };
    let sol = oracle_solve(&signal.samples, &graph, &cfg)?;
    print!(
        "{}",
        to_json(&OracleReport {
            cost: sol.cost,
            grid_bound: sol.grid_bound,
            gaps_aligned: sol.gaps_aligned,
            segmentation: sol.segmentation.to_document(&graph),
        })
    );
    Ok(0)
}
