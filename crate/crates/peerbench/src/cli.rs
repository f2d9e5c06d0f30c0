//! Command-line front end.
//!
//! Every command accepts `--config FILE` (flat `key = value`); flags take
//! precedence over file values, and file values over defaults. Each run
//! writes a JSON manifest recording all resolved parameters and the sha256
//! of every input and output.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use peerbench_core::synth::{
    self, four_cells, CellSpec, SynthPanelConfig, SynthTrajConfig, TrajGenerator,
};
use peerbench_core::trajtest::{inclusion_histogram, TrajSchedule, TrajTestConfig};
use peerbench_core::treebench::{LeafPrior, McmcSchedule, ThresholdSource, TreePriorConfig};

use crate::config::{KeyValueConfig, Resolver};
use crate::error::{CliError, Result};
use crate::formats::{self, DrawsFile, ScoresTable};
use crate::manifest::{now_rfc3339, FileDigest, RunManifest};
use crate::panel_io::{self, parse_delimiter, ColumnMap};
use crate::stages::{self, TreeParams};

#[derive(Debug, Parser)]
#[command(name = "peerbench", version, about = "Covariate-adjusted benchmarking and trajectory testing for panel scores")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic panel with a ground-truth sidecar.
    SimulatePanel(SimulatePanelArgs),
    /// Generate a labelled synthetic trajectory cohort.
    SimulateTrajectories(SimulateTrajectoriesArgs),
    /// Build covariates and normal scores from a raw panel.
    Transform(TransformArgs),
    /// Fit the regression tree and emit benchmark scores and intervals.
    FitTree(FitTreeArgs),
    /// Recompute predictive intervals from stored tree draws.
    Intervals(IntervalsArgs),
    /// Test benchmarked trajectories for nonzero mean.
    TestTrajectories(TestTrajectoriesArgs),
    /// transform → fit-tree → test-trajectories from one config file.
    Pipeline(PipelineArgs),
    /// Emit per-subject plot data from pipeline outputs.
    EmitPlots(EmitPlotsArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest path (default: next to the main output).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Field delimiter: `comma` (default), `tab`, or one character.
    #[arg(long)]
    pub delimiter: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SimulatePanelArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground-truth sidecar (default: `<out>.truth.csv`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub start_year: Option<i64>,
    /// 1, 2 or 4 heteroskedastic cells.
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub group_shift: Option<f64>,
    #[arg(long)]
    pub covariate_jitter: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct SimulateTrajectoriesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub periods: Option<usize>,
    #[arg(long)]
    pub start_time: Option<i64>,
    #[arg(long)]
    pub fraction_nonnull: Option<f64>,
    #[arg(long)]
    pub phi_min: Option<f64>,
    #[arg(long)]
    pub phi_max: Option<f64>,
    #[arg(long)]
    pub v_min: Option<f64>,
    #[arg(long)]
    pub v_max: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub width: Option<f64>,
    /// `bump` or `gp`.
    #[arg(long)]
    pub generator: Option<String>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PanelInputArgs {
    /// Raw panel (delimited text with header).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column-map file; omitted → roles inferred from the header.
    #[arg(long)]
    pub columns: Option<PathBuf>,
    /// Baseline label for inferred group covariates.
    #[arg(long)]
    pub baseline: Option<String>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TransformArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub panel: PanelInputArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TreeArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// `node` (default) or `global`.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub m0: Option<f64>,
    #[arg(long)]
    pub kappa0: Option<f64>,
    #[arg(long)]
    pub a0: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(id = "tree_burn_in", long = "tree-burn-in")]
    pub burn_in: Option<usize>,
    #[arg(id = "tree_thin", long = "tree-thin")]
    pub thin: Option<usize>,
    /// Independent chains, run in parallel and pooled.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Predictive-interval level.
    #[arg(long)]
    pub level: Option<f64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct FitTreeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Scores table written by `transform`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Retained draws (default: `<out>.draws.json`).
    #[arg(long)]
    pub draws: Option<PathBuf>,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct IntervalsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Scores table the draws were fitted on.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub draws: Option<PathBuf>,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrajArgs {
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(id = "traj_burn_in", long = "traj-burn-in")]
    pub burn_in: Option<usize>,
    #[arg(id = "traj_thin", long = "traj-thin")]
    pub thin: Option<usize>,
    #[arg(long)]
    pub ig_shape: Option<f64>,
    #[arg(long)]
    pub ig_scale: Option<f64>,
    /// GP amplitude τ².
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub length_scale: Option<f64>,
    #[arg(long)]
    pub weight_a: Option<f64>,
    #[arg(long)]
    pub weight_b: Option<f64>,
    #[arg(long)]
    pub phi_grid: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub min_history: Option<usize>,
    #[arg(long)]
    pub histogram_bins: Option<usize>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TestTrajectoriesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Benchmark table or any `subject,time,<value>` file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub value_column: Option<String>,
    /// Per-subject results.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for per-subject band files (default: `bands` next to `out`).
    #[arg(long)]
    pub bands_dir: Option<PathBuf>,
    #[arg(long)]
    pub histogram: Option<PathBuf>,
    /// Posterior-mean trajectories (long format).
    #[arg(long)]
    pub means: Option<PathBuf>,
    #[command(flatten)]
    pub traj: TrajArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Re-run the parameters recorded in a manifest.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[command(flatten)]
    pub panel: PanelInputArgs,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub tree: TreeArgs,
    #[command(flatten)]
    pub traj: TrajArgs,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EmitPlotsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Pipeline output directory; supplies defaults for the file flags.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub means: Option<PathBuf>,
    #[arg(long)]
    pub bands_dir: Option<PathBuf>,
    /// Comma-separated subject ids.
    #[arg(long)]
    pub subjects: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

/// Parses and runs; `Ok` for success and for `--help` / `--version`.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if e.use_stderr() => return Err(CliError::usage(e.to_string().trim_end().to_string())),
        Err(e) => {
            // help / version; a closed pipe is not an error
            let _ = write!(std::io::stdout(), "{e}");
            return Ok(());
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match cli.command {
        Command::SimulatePanel(a) => simulate_panel(&a),
        Command::SimulateTrajectories(a) => simulate_trajectories(&a),
        Command::Transform(a) => transform(&a),
        Command::FitTree(a) => fit_tree(&a),
        Command::Intervals(a) => intervals(&a),
        Command::TestTrajectories(a) => test_trajectories(&a),
        Command::Pipeline(a) => pipeline(&a),
        Command::EmitPlots(a) => emit_plots(&a),
    }
}

// ---------------------------------------------------------------------------
// output bookkeeping

/// Files and directories created by a run. Unless committed, everything is
/// removed on drop, so failed runs leave no partial outputs.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        if dir.as_os_str().is_empty() || dir.is_dir() {
            return Ok(());
        }
        if let Some(parent) = dir.parent() {
            self.ensure_dir(parent)?;
        }
        std::fs::create_dir(dir).map_err(|e| CliError::io(dir, e))?;
        self.dirs.push(dir.to_path_buf());
        Ok(())
    }

    /// Creates `path` (and missing parents), hands a buffered writer to `f`.
    pub fn write<F>(&mut self, path: &Path, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        self.files.push(path.to_path_buf());
        let mut w = BufWriter::new(file);
        f(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
        Ok(())
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }

    fn digests(&self) -> Result<Vec<FileDigest>> {
        self.files.iter().map(|p| FileDigest::of(p)).collect()
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = std::fs::remove_dir(d);
        }
    }
}

struct Run {
    command: &'static str,
    started: String,
    resolver: Resolver,
    inputs: Vec<FileDigest>,
    outputs: Outputs,
    delimiter: u8,
}

impl Run {
    fn new(command: &'static str, common: &CommonArgs) -> Result<Self> {
        Self::with_config(command, common, None)
    }

    fn with_config(command: &'static str, common: &CommonArgs, base: Option<KeyValueConfig>) -> Result<Self> {
        let mut file = base.unwrap_or_default();
        if let Some(p) = &common.config {
            for (k, v) in KeyValueConfig::from_file(p)?.entries() {
                file.set(k.clone(), v.clone());
            }
        }
        let mut resolver = Resolver::new(file);
        let d = resolver.value("delimiter", common.delimiter.clone(), "comma".to_string())?;
        let delimiter = parse_delimiter(&d)?;
        Ok(Run {
            command,
            started: now_rfc3339(),
            resolver,
            inputs: Vec::new(),
            outputs: Outputs::default(),
            delimiter,
        })
    }

    fn path(&mut self, key: &str, flag: &Option<PathBuf>) -> Result<PathBuf> {
        let s: String = self.resolver.required(key, flag.as_ref().map(|p| p.display().to_string()))?;
        Ok(PathBuf::from(s))
    }

    fn path_or(&mut self, key: &str, flag: &Option<PathBuf>, default: PathBuf) -> Result<PathBuf> {
        let s = self.resolver.value(key, flag.as_ref().map(|p| p.display().to_string()), default.display().to_string())?;
        Ok(PathBuf::from(s))
    }

    fn open_input(&mut self, path: &Path) -> Result<BufReader<File>> {
        let f = File::open(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.push(FileDigest::of(path)?);
        Ok(BufReader::new(f))
    }

    /// Writes the manifest, keeps outputs, and returns the manifest.
    fn finish(self, manifest_path: &Path) -> Result<RunManifest> {
        let seed = self.resolver.resolved().get("seed").and_then(|s| s.parse().ok());
        let m = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            params: self.resolver.resolved().clone(),
            inputs: self.inputs,
            outputs: self.outputs.digests()?,
            started: self.started,
            finished: now_rfc3339(),
        };
        m.write(manifest_path)?;
        self.outputs.commit();
        log::info!("wrote {}", manifest_path.display());
        Ok(m)
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_path(common: &CommonArgs, main_output: &Path) -> PathBuf {
    common.manifest.clone().unwrap_or_else(|| sibling(main_output, ".manifest.json"))
}

// ---------------------------------------------------------------------------
// parameter resolution shared by single commands and the pipeline

fn resolve_tree(r: &mut Resolver, a: &TreeArgs, seed: u64) -> Result<TreeParams> {
    let d = TreePriorConfig::default();
    let ld = LeafPrior::default();
    let sd = McmcSchedule::default();
    let thresholds = match r.value("tree.thresholds", a.thresholds.clone(), "node".to_string())?.as_str() {
        "node" => ThresholdSource::Node,
        "global" => ThresholdSource::Global,
        other => return Err(CliError::usage(format!("tree.thresholds must be `node` or `global`, got `{other}`"))),
    };
    let p = TreeParams {
        prior: TreePriorConfig {
            alpha: r.value("tree.alpha", a.alpha, d.alpha)?,
            beta: r.value("tree.beta", a.beta, d.beta)?,
            leaf: LeafPrior {
                m0: r.value("tree.m0", a.m0, ld.m0)?,
                kappa0: r.value("tree.kappa0", a.kappa0, ld.kappa0)?,
                a0: r.value("tree.a0", a.a0, ld.a0)?,
                b0: r.value("tree.b0", a.b0, ld.b0)?,
            },
            min_leaf: r.value("tree.min-leaf", a.min_leaf, d.min_leaf)?,
            max_depth: r.value("tree.max-depth", a.max_depth, d.max_depth)?,
            thresholds,
        },
        schedule: McmcSchedule {
            iterations: r.value("tree.iterations", a.iterations, sd.iterations)?,
            burn_in: r.value("tree.burn-in", a.burn_in, sd.burn_in)?,
            thin: r.value("tree.thin", a.thin, sd.thin)?,
            seed,
            likelihood: true,
        },
        chains: r.value("tree.chains", a.chains, 1)?,
        level: r.value("level", a.level, 0.95)?,
    };
    p.prior.validate()?;
    p.schedule.validate()?;
    Ok(p)
}

fn resolve_traj(r: &mut Resolver, a: &TrajArgs, seed: u64) -> Result<(TrajTestConfig, usize)> {
    let d = TrajTestConfig::default();
    let s = TrajSchedule::default();
    let cfg = TrajTestConfig {
        ig_shape: r.value("traj.ig-shape", a.ig_shape, d.ig_shape)?,
        ig_scale: r.value("traj.ig-scale", a.ig_scale, d.ig_scale)?,
        gp_amplitude: r.value("traj.tau2", a.tau2, d.gp_amplitude)?,
        gp_length_scale: r.value("traj.length-scale", a.length_scale, d.gp_length_scale)?,
        weight_prior: (
            r.value("traj.weight-a", a.weight_a, d.weight_prior.0)?,
            r.value("traj.weight-b", a.weight_b, d.weight_prior.1)?,
        ),
        phi_grid: r.value("traj.phi-grid", a.phi_grid, d.phi_grid)?,
        horizon: r.value("traj.horizon", a.horizon, d.horizon)?,
        min_history: r.value("traj.min-history", a.min_history, d.min_history)?,
        schedule: TrajSchedule {
            sweeps: r.value("traj.sweeps", a.sweeps, s.sweeps)?,
            burn_in: r.value("traj.burn-in", a.burn_in, s.burn_in)?,
            thin: r.value("traj.thin", a.thin, s.thin)?,
            seed,
        },
    };
    cfg.validate()?;
    let bins = r.value("traj.histogram-bins", a.histogram_bins, 10)?;
    if bins == 0 {
        return Err(CliError::usage("traj.histogram-bins must be at least 1"));
    }
    Ok((cfg, bins))
}

fn load_panel(run: &mut Run, p: &PanelInputArgs) -> Result<panel_io::LoadedPanel> {
    let input = run.path("input", &p.input)?;
    let columns = run.resolver.optional("columns", p.columns.as_ref().map(|c| c.display().to_string()))?;
    let map = match &columns {
        Some(c) => {
            let path = PathBuf::from(c);
            run.inputs.push(FileDigest::of(&path)?);
            Some(ColumnMap::from_config(&KeyValueConfig::from_file(&path)?)?)
        }
        None => None,
    };
    let baseline = run.resolver.optional("baseline", p.baseline.clone())?;
    let reader = run.open_input(&input)?;
    let loaded = panel_io::read_panel(reader, run.delimiter, map.as_ref(), baseline.as_deref())
        .map_err(|e| e.context(input.display()))?;
    let d = loaded.dataset.dropped;
    run.resolver.record("dropped.missing-score", d.missing_score);
    run.resolver.record("dropped.missing-covariate", d.missing_covariate);
    Ok(loaded)
}

/// Percent-encodes everything outside `[A-Za-z0-9._-]`, giving an
/// injective, filesystem-safe file stem.
pub fn file_stem(subject: &str) -> String {
    let mut s = String::with_capacity(subject.len());
    for b in subject.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || (b == b'.' && !s.is_empty()) {
            s.push(b as char);
        } else {
            s.push_str(&format!("%{b:02X}"));
        }
    }
    s
}

// ---------------------------------------------------------------------------
// commands

fn simulate_panel(a: &SimulatePanelArgs) -> Result<()> {
    let mut run = Run::new("simulate-panel", &a.common)?;
    let out = run.path("out", &a.out)?;
    let truth = run.path_or("truth", &a.truth, sibling(&out, ".truth.csv"))?;
    let d = SynthPanelConfig::default();
    let r = &mut run.resolver;
    let cells = match r.value("cells", a.cells, 4)? {
        1 => vec![CellSpec { mu: 0.0, sigma: 1.0 }],
        2 => vec![CellSpec { mu: -0.5, sigma: 0.5 }, CellSpec { mu: 0.5, sigma: 1.5 }],
        4 => four_cells(),
        k => return Err(CliError::usage(format!("cells must be 1, 2 or 4, got {k}"))),
    };
    let cfg = SynthPanelConfig {
        subjects: r.value("subjects", a.subjects, d.subjects)?,
        periods: r.value("periods", a.periods, d.periods)?,
        start_year: r.value("start-year", a.start_year, d.start_year)?,
        cells,
        groups: r.value("groups", a.groups, d.groups)?,
        group_shift: r.value("group-shift", a.group_shift, d.group_shift)?,
        covariate_jitter: r.value("covariate-jitter", a.covariate_jitter, d.covariate_jitter)?,
        missing_rate: r.value("missing-rate", a.missing_rate, d.missing_rate)?,
        seed: r.value("seed", a.seed, d.seed)?,
    };
    let panel = synth::generate_panel(&cfg)?;
    let delim = run.delimiter;
    run.outputs.write(&out, |w| panel_io::write_panel(w, delim, &panel.dataset, &panel.missing))?;
    run.outputs.write(&truth, |w| formats::write_panel_truth(w, delim, &panel.truth))?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

fn simulate_trajectories(a: &SimulateTrajectoriesArgs) -> Result<()> {
    let mut run = Run::new("simulate-trajectories", &a.common)?;
    let out = run.path("out", &a.out)?;
    let truth = run.path_or("truth", &a.truth, sibling(&out, ".truth.csv"))?;
    let d = SynthTrajConfig::default();
    let r = &mut run.resolver;
    let generator = match r.value("generator", a.generator.clone(), "bump".to_string())?.as_str() {
        "bump" => TrajGenerator::Bump,
        "gp" => TrajGenerator::GpDraw,
        other => return Err(CliError::usage(format!("generator must be `bump` or `gp`, got `{other}`"))),
    };
    let cfg = SynthTrajConfig {
        subjects: r.value("subjects", a.subjects, d.subjects)?,
        periods: r.value("periods", a.periods, d.periods)?,
        start_time: r.value("start-time", a.start_time, d.start_time)?,
        fraction_nonnull: r.value("fraction-nonnull", a.fraction_nonnull, d.fraction_nonnull)?,
        phi_range: (r.value("phi-min", a.phi_min, d.phi_range.0)?, r.value("phi-max", a.phi_max, d.phi_range.1)?),
        v_range: (r.value("v-min", a.v_min, d.v_range.0)?, r.value("v-max", a.v_max, d.v_range.1)?),
        amplitude: r.value("amplitude", a.amplitude, d.amplitude)?,
        width: r.value("width", a.width, d.width)?,
        generator,
        missing_rate: r.value("missing-rate", a.missing_rate, d.missing_rate)?,
        seed: r.value("seed", a.seed, d.seed)?,
    };
    let s = synth::generate_trajectories(&cfg)?;
    let delim = run.delimiter;
    run.outputs.write(&out, |w| formats::write_trajectories(w, delim, &s.trajectories))?;
    run.outputs.write(&truth, |w| formats::write_traj_truth(w, delim, &s.trajectories, &s.truth))?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

fn transform(a: &TransformArgs) -> Result<()> {
    let mut run = Run::new("transform", &a.common)?;
    let out = run.path("out", &a.out)?;
    let panel = load_panel(&mut run, &a.panel)?;
    let scores = stages::transform(&panel)?;
    let delim = run.delimiter;
    run.outputs.write(&out, |w| scores.write(w, delim))?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

fn read_scores(run: &mut Run, key: &str, flag: &Option<PathBuf>) -> Result<ScoresTable> {
    let path = run.path(key, flag)?;
    let r = run.open_input(&path)?;
    ScoresTable::read(r, run.delimiter).map_err(|e| e.context(path.display()))
}

fn fit_tree(a: &FitTreeArgs) -> Result<()> {
    let mut run = Run::new("fit-tree", &a.common)?;
    let out = run.path("out", &a.out)?;
    let draws_path = run.path_or("draws", &a.draws, sibling(&out, ".draws.json"))?;
    let scores = read_scores(&mut run, "input", &a.input)?;
    let seed = run.resolver.value("seed", a.seed, 1)?;
    let params = resolve_tree(&mut run.resolver, &a.tree, seed)?;
    let (table, draws) = stages::fit_tree(&scores, &params)?;
    let delim = run.delimiter;
    run.outputs.write(&out, |w| formats::write_benchmark(w, delim, &scores, &table))?;
    run.outputs.write(&draws_path, |w| Ok(serde_json::to_writer(w, &draws)?))?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

fn intervals(a: &IntervalsArgs) -> Result<()> {
    let mut run = Run::new("intervals", &a.common)?;
    let out = run.path("out", &a.out)?;
    let scores = read_scores(&mut run, "input", &a.input)?;
    let draws_path = run.path("draws", &a.draws)?;
    let draws: DrawsFile = serde_json::from_reader(run.open_input(&draws_path)?)
        .map_err(|e| CliError::data(format!("{}: {e}", draws_path.display())))?;
    let level = run.resolver.value("level", a.level, 0.95)?;
    let table = stages::intervals(&scores, draws, level)?;
    let delim = run.delimiter;
    run.outputs.write(&out, |w| formats::write_benchmark(w, delim, &scores, &table))?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

struct TrajOutputs {
    results: PathBuf,
    bands_dir: PathBuf,
    histogram: PathBuf,
    means: PathBuf,
}

fn write_traj_outputs(
    run: &mut Run,
    paths: &TrajOutputs,
    trajs: &[peerbench_core::trajtest::Trajectory],
    result: &peerbench_core::trajtest::TrajectoryRun,
    bins: usize,
) -> Result<()> {
    let delim = run.delimiter;
    run.outputs.write(&paths.results, |w| formats::write_results(w, delim, &result.results))?;
    for r in &result.results {
        let p = paths.bands_dir.join(format!("{}.csv", file_stem(&r.subject)));
        run.outputs.write(&p, |w| formats::write_bands(w, delim, &r.bands))?;
    }
    run.outputs.write(&paths.means, |w| formats::write_trajectory_means(w, delim, trajs, &result.results))?;
    let hist = inclusion_histogram(&result.reported_probabilities(), bins);
    run.outputs.write(&paths.histogram, |w| formats::write_histogram(w, delim, &hist))?;
    run.resolver.record("result.weight-mean", result.weight_mean);
    Ok(())
}

fn test_trajectories(a: &TestTrajectoriesArgs) -> Result<()> {
    let mut run = Run::new("test-trajectories", &a.common)?;
    let out = run.path("out", &a.out)?;
    let dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let paths = TrajOutputs {
        bands_dir: run.path_or("bands-dir", &a.bands_dir, dir.join("bands"))?,
        histogram: run.path_or("histogram", &a.histogram, sibling(&out, ".histogram.csv"))?,
        means: run.path_or("means", &a.means, sibling(&out, ".means.csv"))?,
        results: out.clone(),
    };
    let input = run.path("input", &a.input)?;
    let column = run.resolver.value("value-column", a.value_column.clone(), "benchmark".to_string())?;
    let reader = run.open_input(&input)?;
    let trajs = formats::read_trajectories(reader, run.delimiter, &column).map_err(|e| e.context(input.display()))?;
    let seed = run.resolver.value("seed", a.seed, 1)?;
    let (cfg, bins) = resolve_traj(&mut run.resolver, &a.traj, seed)?;
    let result = stages::test_trajectories(&trajs, &cfg)?;
    write_traj_outputs(&mut run, &paths, &trajs, &result, bins)?;
    run.finish(&manifest_path(&a.common, &out))?;
    Ok(())
}

/// Names of the files `pipeline` writes inside its output directory.
pub mod pipeline_files {
    pub const SCORES: &str = "scores.csv";
    pub const BENCHMARK: &str = "benchmark.csv";
    pub const DRAWS: &str = "draws.json";
    pub const RESULTS: &str = "results.csv";
    pub const BANDS: &str = "bands";
    pub const MEANS: &str = "trajectory_means.csv";
    pub const HISTOGRAM: &str = "histogram.csv";
    pub const MANIFEST: &str = "manifest.json";
}

fn pipeline(a: &PipelineArgs) -> Result<()> {
    use pipeline_files::*;
    let replayed = match &a.replay {
        Some(p) => {
            let m = RunManifest::read(p)?;
            if m.command != "pipeline" {
                return Err(CliError::usage(format!("{} records a `{}` run, not `pipeline`", p.display(), m.command)));
            }
            Some(m)
        }
        None => None,
    };
    let base = replayed.as_ref().map(|m| {
        KeyValueConfig::from_entries(
            m.params.iter().filter(|(k, _)| !k.starts_with("dropped.") && !k.starts_with("result.")),
        )
    });
    let mut run = Run::with_config("pipeline", &a.common, base)?;
    let out_dir = run.path("out-dir", &a.out_dir)?;
    let seed = run.resolver.value("seed", a.seed, 1)?;

    let stage = |name: &str, e: CliError| e.context(format!("stage {name}"));
    let panel = load_panel(&mut run, &a.panel).map_err(|e| stage("transform", e))?;
    if let Some(m) = &replayed {
        for d in &m.inputs {
            let now = FileDigest::of(&d.path)?;
            if now.sha256 != d.sha256 {
                return Err(CliError::data(format!("input {} changed since the manifest was written", d.path.display())));
            }
        }
    }
    let tree = resolve_tree(&mut run.resolver, &a.tree, seed)?;
    let (traj_cfg, bins) = resolve_traj(&mut run.resolver, &a.traj, seed)?;
    let delim = run.delimiter;

    let scores = stages::transform(&panel).map_err(|e| stage("transform", e))?;
    run.outputs.write(&out_dir.join(SCORES), |w| scores.write(w, delim))?;

    let (table, draws) = stages::fit_tree(&scores, &tree).map_err(|e| stage("fit-tree", e))?;
    run.outputs.write(&out_dir.join(BENCHMARK), |w| formats::write_benchmark(w, delim, &scores, &table))?;
    run.outputs.write(&out_dir.join(DRAWS), |w| Ok(serde_json::to_writer(w, &draws)?))?;

    let trajs = stages::trajectories_from_benchmark(&scores, &table).map_err(|e| stage("test-trajectories", e))?;
    let result = stages::test_trajectories(&trajs, &traj_cfg).map_err(|e| stage("test-trajectories", e))?;
    let paths = TrajOutputs {
        results: out_dir.join(RESULTS),
        bands_dir: out_dir.join(BANDS),
        histogram: out_dir.join(HISTOGRAM),
        means: out_dir.join(MEANS),
    };
    write_traj_outputs(&mut run, &paths, &trajs, &result, bins).map_err(|e| stage("test-trajectories", e))?;

    let manifest = run.finish(&a.common.manifest.clone().unwrap_or_else(|| out_dir.join(MANIFEST)))?;
    if let Some(old) = replayed {
        compare_replay(&old, &manifest)?;
    }
    Ok(())
}

/// Compares output digests by path relative to each run's output directory.
fn compare_replay(old: &RunManifest, new: &RunManifest) -> Result<()> {
    let rel = |m: &RunManifest| -> std::collections::BTreeMap<PathBuf, String> {
        let dir = PathBuf::from(m.params.get("out-dir").cloned().unwrap_or_default());
        m.outputs
            .iter()
            .map(|d| (d.path.strip_prefix(&dir).unwrap_or(&d.path).to_path_buf(), d.sha256.clone()))
            .collect()
    };
    let (a, b) = (rel(old), rel(new));
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if differing.is_empty() {
        log::info!("replay reproduced all {} outputs", b.len());
        Ok(())
    } else {
        Err(CliError::data(format!("replay outputs differ from the manifest: {}", differing.join(", "))))
    }
}

fn near_matches<'a>(name: &str, known: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(f64, &str)> = known
        .map(|k| (strsim::jaro_winkler(name, k), k))
        .filter(|(s, _)| *s >= 0.75)
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(y.1)));
    scored.into_iter().take(5).map(|(_, k)| k).collect()
}

fn emit_plots(a: &EmitPlotsArgs) -> Result<()> {
    let mut run = Run::new("emit-plots", &a.common)?;
    let base = run.resolver.optional("run-dir", a.run_dir.as_ref().map(|p| p.display().to_string()))?.map(PathBuf::from);
    let dflt = |name: &str| base.as_ref().map(|b| b.join(name));
    let need = |run: &mut Run, key: &str, flag: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
        match dflt(name) {
            Some(d) => run.path_or(key, flag, d),
            None => run.path(key, flag),
        }
    };
    let bench_path = need(&mut run, "benchmark", &a.benchmark, pipeline_files::BENCHMARK)?;
    let results_path = need(&mut run, "results", &a.results, pipeline_files::RESULTS)?;
    let means_path = need(&mut run, "means", &a.means, pipeline_files::MEANS)?;
    let bands_dir = need(&mut run, "bands-dir", &a.bands_dir, pipeline_files::BANDS)?;
    let out_dir = run.path("out-dir", &a.out_dir)?;
    let subjects: String = run.resolver.required("subjects", a.subjects.clone())?;
    let bins = run.resolver.value("bins", a.bins, 10usize)?;
    let delim = run.delimiter;

    let bench = formats::read_benchmark(run.open_input(&bench_path)?, delim).map_err(|e| e.context(bench_path.display()))?;
    let results =
        formats::read_results(run.open_input(&results_path)?, delim).map_err(|e| e.context(results_path.display()))?;
    let means_reader = run.open_input(&means_path)?;
    let means = read_means(means_reader, delim).map_err(|e| e.context(means_path.display()))?;

    let wanted: Vec<&str> = subjects.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if wanted.is_empty() {
        return Err(CliError::usage("no subjects given"));
    }
    for s in &wanted {
        if !results.iter().any(|r| r.subject == *s) {
            let near = near_matches(s, results.iter().map(|r| r.subject.as_str()));
            let hint = if near.is_empty() { String::new() } else { format!("; near matches: {}", near.join(", ")) };
            return Err(CliError::data(format!("unknown subject `{s}`{hint}")));
        }
    }
    for s in wanted {
        let stem = file_stem(s);
        let rows: Vec<_> = bench.iter().filter(|r| r.subject == s).collect();
        run.outputs.write(&out_dir.join(format!("{stem}.before_after.csv")), |w| {
            let mut cw = csv::WriterBuilder::new().delimiter(delim).from_writer(w);
            cw.write_record(["time", "z", "benchmark", "pred_lower", "pred_upper", "common_scale"])?;
            for r in &rows {
                cw.write_record([
                    r.time.to_string(),
                    panel_io::fmt_f64(r.z),
                    panel_io::fmt_f64(r.benchmark),
                    panel_io::fmt_f64(r.pred_lower),
                    panel_io::fmt_f64(r.pred_upper),
                    panel_io::fmt_f64(r.common_scale),
                ])?;
            }
            cw.flush()?;
            Ok(())
        })?;
        let band_path = bands_dir.join(format!("{stem}.csv"));
        let bands = formats::read_bands(run.open_input(&band_path)?, delim).map_err(|e| e.context(band_path.display()))?;
        let observed: Vec<&(String, i64, f64, Option<f64>)> = means.iter().filter(|m| m.0 == s).collect();
        run.outputs.write(&out_dir.join(format!("{stem}.trajectory.csv")), |w| {
            let mut cw = csv::WriterBuilder::new().delimiter(delim).from_writer(w);
            let mut h = vec!["kind", "time", "benchmark", "mean_trajectory"];
            h.extend(&formats::BAND_COLUMNS[1..]);
            cw.write_record(&h)?;
            for m in &observed {
                let mut rec = vec![
                    "observed".to_string(),
                    m.1.to_string(),
                    panel_io::fmt_f64(m.2),
                    m.3.map(panel_io::fmt_f64).unwrap_or_default(),
                ];
                rec.extend(std::iter::repeat_n(String::new(), 7));
                cw.write_record(&rec)?;
            }
            for (t, v) in &bands {
                let mut rec = vec!["forecast".to_string(), t.to_string(), String::new(), String::new()];
                rec.extend(v.iter().map(|x| panel_io::fmt_f64(*x)));
                cw.write_record(&rec)?;
            }
            cw.flush()?;
            Ok(())
        })?;
    }
    let probs: Vec<f64> = results.iter().filter_map(|r| r.inclusion_probability).collect();
    let hist = inclusion_histogram(&probs, bins);
    run.outputs.write(&out_dir.join("histogram.csv"), |w| formats::write_histogram(w, delim, &hist))?;
    run.finish(&a.common.manifest.clone().unwrap_or_else(|| out_dir.join("plots.manifest.json")))?;
    Ok(())
}

type MeanRow = (String, i64, f64, Option<f64>);

fn read_means<R: std::io::Read>(input: R, delimiter: u8) -> Result<Vec<MeanRow>> {
    let mut r = csv::ReaderBuilder::new().delimiter(delimiter).from_reader(input);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let bad = || CliError::data(format!("line {line}: malformed trajectory-means row"));
        let t = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let m = match rec.get(3).unwrap_or("") {
            "" => None,
            s => Some(s.parse().map_err(|_| bad())?),
        };
        out.push((rec.get(0).unwrap_or("").to_string(), t, v, m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argument_definitions_are_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn file_stems_are_safe_and_distinct() {
        assert_eq!(file_stem("F001"), "F001");
        assert_eq!(file_stem("a/b"), "a%2Fb");
        assert_eq!(file_stem("..x"), "%2E.x");
        assert_ne!(file_stem("a b"), file_stem("a_b"));
    }

    #[test]
    fn near_matches_rank_similar_ids() {
        let ids = ["F0012", "F0013", "G9999", "F0112"];
        let m = near_matches("F0012x", ids.iter().copied());
        assert_eq!(m.first(), Some(&"F0012"));
        assert!(!m.contains(&"G9999"));
    }

    #[test]
    fn usage_errors_map_to_exit_one() {
        let e = run(["peerbench", "no-such-command"]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        let e = run(["peerbench", "transform", "--out", "x.csv"]).unwrap_err();
        assert_eq!(e.exit_code(), 1, "{e}");
        assert!(run(["peerbench", "--help"]).is_ok());
    }
}
