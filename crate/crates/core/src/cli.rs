//! Command-line front end: `segment`, `interpolate`, `eval` and `gen-scene`.
//!
//! Exit status is 0 on success, 2 for usage errors and 1 for processing
//! errors. Diagnostics go to stderr; results are only written to files.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::ensemble::{builtin_refiners, post_process, run_ensemble, EnsembleConfig, EnsembleTrace};
use crate::error::Error;
use crate::eval::{regional_report, stats_records};
use crate::io::{
    read_flo, read_image, read_mask, write_flo, write_heatmap, write_image, write_mask, write_report_csv,
    write_report_json, Metric, ReportRecord, ReportRegion,
};
use crate::metrics::{analyze_at, ErrorAnalysis, MetricConfig, DEFAULT_EPSILON, DEFAULT_VARIATION_RADIUS};
use crate::synth::{self, read_manifest, write_corpus};
use crate::types::{ErrorMasks, FlowField, Frame, Region, TimeStep};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PROCESSING: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "errvfi", version, about = "Error-aware video frame interpolation toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Predict interpolation error and write error maps, masks and thresholds.
    Segment(SegmentArgs),
    /// Synthesize the frame at time t with the staged region pipeline.
    Interpolate(InterpolateArgs),
    /// Region-conditioned quality report for a prediction or a whole corpus.
    Eval(EvalArgs),
    /// Generate a synthetic corpus with ground-truth flows and middle frames.
    GenScene(GenSceneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub frame0: PathBuf,
    #[arg(long)]
    pub frame1: PathBuf,
    /// Flow from frame 0 to frame 1 (.flo).
    #[arg(long)]
    pub flow_fwd: PathBuf,
    /// Flow from frame 1 to frame 0 (.flo).
    #[arg(long)]
    pub flow_bwd: PathBuf,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Debug, Args)]
pub struct AnalysisArgs {
    #[arg(long, default_value_t = 0.5)]
    pub t: f64,
    #[arg(long, default_value_t = DEFAULT_VARIATION_RADIUS)]
    pub variation_radius: usize,
    /// Map unknown or non-finite flow values to 0 instead of failing.
    #[arg(long)]
    pub lenient_flo: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    pub report: ReportFormat,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Ground-truth middle frame; enables a regional report.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, default_value = "identity")]
    pub flow_refiner: String,
    #[arg(long, default_value = "identity")]
    pub pixel_refiner: String,
    /// Dump every stage's flows, frames and masks under `<out>/trace`.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    pub report: ReportFormat,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted frame.
    #[arg(long, required_unless_present = "corpus")]
    pub pred: Option<PathBuf>,
    #[arg(long, required_unless_present = "corpus")]
    pub gt: Option<PathBuf>,
    /// Directory holding mask_high.pgm, mask_mid.pgm and mask_low.pgm.
    #[arg(long, conflicts_with = "corpus")]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub frame0: Option<PathBuf>,
    #[arg(long)]
    pub frame1: Option<PathBuf>,
    #[arg(long)]
    pub flow_fwd: Option<PathBuf>,
    #[arg(long)]
    pub flow_bwd: Option<PathBuf>,
    /// Evaluate plain scaled-flow synthesis on every scene of a generated corpus.
    #[arg(long, conflicts_with_all = ["pred", "gt"])]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    pub report: ReportFormat,
}

#[derive(Debug, Args)]
pub struct GenSceneArgs {
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = synth::DEFAULT_CANVAS.0)]
    pub height: usize,
    #[arg(long, default_value_t = synth::DEFAULT_CANVAS.1)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Processing(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Processing(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Processing(e.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Processing(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => EXIT_USAGE,
                CliError::Processing(_) => EXIT_PROCESSING,
            }
        }
    }
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Segment(a) => cmd_segment(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenScene(a) => cmd_gen_scene(a),
    }
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Processing(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn load_frame(path: &Path) -> CliResult<Frame> {
    read_image(&read_file(path)?).map_err(|e| CliError::Processing(Error::Format(format!("{}: {e}", path.display()))))
}

fn load_flow(path: &Path, lenient: bool) -> CliResult<FlowField> {
    read_flo(&read_file(path)?, lenient).map_err(|e| CliError::Processing(Error::Format(format!("{}: {e}", path.display()))))
}

impl AnalysisArgs {
    fn time_step(&self) -> CliResult<TimeStep> {
        TimeStep::new(self.t).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn metric_config(&self) -> CliResult<MetricConfig> {
        MetricConfig::new(self.variation_radius, DEFAULT_EPSILON).map_err(|e| CliError::Usage(e.to_string()))
    }
}

struct Inputs {
    i0: Frame,
    i1: Frame,
    f01: FlowField,
    f10: FlowField,
}

fn load_inputs(frame0: &Path, frame1: &Path, fwd: &Path, bwd: &Path, lenient: bool) -> CliResult<Inputs> {
    let inputs = Inputs {
        i0: load_frame(frame0)?,
        i1: load_frame(frame1)?,
        f01: load_flow(fwd, lenient)?,
        f10: load_flow(bwd, lenient)?,
    };
    let dims = inputs.i0.dims();
    for (name, d) in [
        ("frame1", inputs.i1.dims()),
        ("flow-fwd", inputs.f01.dims()),
        ("flow-bwd", inputs.f10.dims()),
    ] {
        if d != dims {
            return Err(Error::DimensionMismatch {
                what: name,
                expected: format!("{}x{}", dims.0, dims.1),
                actual: format!("{}x{}", d.0, d.1),
            }
            .into());
        }
    }
    if inputs.i0.channels() != inputs.i1.channels() {
        return Err(Error::DimensionMismatch {
            what: "frame channels",
            expected: inputs.i0.channels().to_string(),
            actual: inputs.i1.channels().to_string(),
        }
        .into());
    }
    Ok(inputs)
}

fn write_report(out: &Path, format: ReportFormat, records: &[ReportRecord]) -> CliResult<()> {
    fs::create_dir_all(out)?;
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        fs::write(out.join("report.csv"), write_report_csv(records)?)?;
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        fs::write(out.join("report.json"), write_report_json(records)?)?;
    }
    Ok(())
}

fn write_masks(dir: &Path, masks: &ErrorMasks) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    for r in Region::ALL {
        fs::write(dir.join(format!("mask_{r}.pgm")), write_mask(masks.get(r)))?;
    }
    Ok(())
}

/// Error maps, masks and thresholds as report rows plus heatmap files.
fn write_analysis(dir: &Path, scene: &str, a: &ErrorAnalysis) -> CliResult<Vec<ReportRecord>> {
    fs::create_dir_all(dir)?;
    let full = ReportRegion::Full;
    let mut records = Vec::new();
    for (name, map, metric) in [
        ("e_ms", &a.e_ms, Metric::EMsMax),
        ("e_mv", &a.e_mv, Metric::EMvMax),
        ("e_pc", &a.e_pc, Metric::EPcMax),
        ("e_tot", &a.e_tot, Metric::ETotMax),
    ] {
        let (bytes, max) = write_heatmap(map);
        fs::write(dir.join(format!("{name}.pgm")), bytes)?;
        records.push(ReportRecord::new(scene, full, metric, max));
    }
    write_masks(dir, &a.masks)?;
    records.extend([
        ReportRecord::new(scene, full, Metric::TauHigh, a.masks.tau_high()),
        ReportRecord::new(scene, full, Metric::TauMid, a.masks.tau_mid()),
        ReportRecord::new(scene, full, Metric::GammaMs, a.scalars.gamma_ms),
        ReportRecord::new(scene, full, Metric::GammaMv, a.scalars.gamma_mv),
        ReportRecord::new(scene, full, Metric::GammaPc, a.scalars.gamma_pc),
    ]);
    for r in Region::ALL {
        let mask = a.masks.get(r);
        let n = mask.count();
        records.push(ReportRecord::new(scene, r.into(), Metric::PixelCount, n as f64));
        if n > 0 {
            let sum: f64 = a
                .e_tot
                .data()
                .iter()
                .zip(mask.data())
                .filter(|(_, &m)| m)
                .map(|(v, _)| v)
                .sum();
            records.push(ReportRecord::new(scene, r.into(), Metric::MeanError, sum / n as f64));
        }
    }
    Ok(records)
}

pub fn cmd_segment(args: &SegmentArgs) -> CliResult<()> {
    let a = &args.input;
    let t = a.analysis.time_step()?;
    let cfg = a.analysis.metric_config()?;
    let inp = load_inputs(&a.frame0, &a.frame1, &a.flow_fwd, &a.flow_bwd, a.analysis.lenient_flo)?;
    let analysis = analyze_at(&inp.i0, &inp.i1, &inp.f01, &inp.f10, t, &cfg)?;
    let records = write_analysis(&args.out, "input", &analysis)?;
    write_report(&args.out, args.report, &records)
}

fn dump_trace(dir: &Path, trace: &EnsembleTrace) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    write_masks(dir, &trace.analysis.masks)?;
    fs::write(dir.join("flow_0t.flo"), write_flo(&trace.flow_0t))?;
    fs::write(dir.join("flow_1t.flo"), write_flo(&trace.flow_1t))?;
    fs::write(dir.join("e_tot.pgm"), write_heatmap(&trace.analysis.e_tot).0)?;
    for s in &trace.stages {
        let d = dir.join(format!("stage_{}_{}", s.stage, s.region));
        fs::create_dir_all(&d)?;
        fs::write(d.join("flow_0t.flo"), write_flo(&s.flow_0t))?;
        fs::write(d.join("flow_1t.flo"), write_flo(&s.flow_1t))?;
        fs::write(d.join("frame.ppm"), write_image(&s.frame))?;
        let vis = Frame::new(s.visibility.dims().0, s.visibility.dims().1, 1, s.visibility.data().to_vec())?;
        fs::write(d.join("visibility.pgm"), write_image(&vis))?;
        fs::write(d.join("refined_mask.pgm"), write_mask(&s.refined_mask))?;
    }
    fs::write(dir.join("assembled.ppm"), write_image(&trace.frame))?;
    if let Some(post) = &trace.post {
        let d = dir.join("post");
        write_masks(&d, &post.analysis.masks)?;
        for s in &post.stages {
            fs::write(d.join(format!("stage_{}_{}.ppm", s.stage, s.region)), write_image(&s.frame))?;
        }
    }
    Ok(())
}

pub fn cmd_interpolate(args: &InterpolateArgs) -> CliResult<()> {
    let a = &args.input;
    let t = a.analysis.time_step()?;
    let cfg = EnsembleConfig {
        metrics: a.analysis.metric_config()?,
        ..Default::default()
    };
    let catalog = builtin_refiners();
    let flow_refiner = catalog.flow(&args.flow_refiner).map_err(|e| CliError::Usage(e.to_string()))?;
    let pixel_refiner = catalog.pixel(&args.pixel_refiner).map_err(|e| CliError::Usage(e.to_string()))?;
    let inp = load_inputs(&a.frame0, &a.frame1, &a.flow_fwd, &a.flow_bwd, a.analysis.lenient_flo)?;
    let gt = args.gt.as_deref().map(load_frame).transpose()?;

    let trace = run_ensemble(&inp.i0, &inp.i1, &inp.f01, &inp.f10, t, [flow_refiner; 3], &cfg)?;
    let trace = post_process(&trace, &inp.i0, &inp.i1, &inp.f01, &inp.f10, [pixel_refiner; 3], &cfg)?;
    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("frame_t.ppm"), write_image(trace.output()))?;
    if args.trace {
        dump_trace(&args.out.join("trace"), &trace)?;
    }
    if let Some(gt) = gt {
        let stats = regional_report(trace.output(), &gt, &trace.analysis.masks)?;
        write_report(&args.out, args.report, &stats_records("input", &stats))?;
    }
    Ok(())
}

fn load_masks(dir: &Path) -> CliResult<ErrorMasks> {
    let m = |r: Region| -> CliResult<_> {
        let p = dir.join(format!("mask_{r}.pgm"));
        read_mask(&read_file(&p)?).map_err(|e| CliError::Processing(Error::Format(format!("{}: {e}", p.display()))))
    };
    Ok(ErrorMasks::new(m(Region::High)?, m(Region::Mid)?, m(Region::Low)?, 0.0, 0.0)?)
}

/// Per-scene regional statistics of plain scaled-flow synthesis, followed by
/// corpus means of each region's MSE under the scene id `corpus-mean`.
fn eval_corpus(dir: &Path, args: &EvalArgs) -> CliResult<Vec<ReportRecord>> {
    let t = args.analysis.time_step()?;
    let cfg = EnsembleConfig {
        metrics: args.analysis.metric_config()?,
        ..Default::default()
    };
    let identity = builtin_refiners();
    let identity = identity.flow("identity")?;
    let manifest = read_manifest(dir)?;
    let mut records = Vec::new();
    let mut sums = [(0.0f64, 0usize); 4];
    for scene in &manifest.scenes {
        let sd = dir.join(&scene.id);
        let inp = load_inputs(
            &sd.join(synth::FRAME0_FILE),
            &sd.join(synth::FRAME1_FILE),
            &sd.join(synth::FLOW_FWD_FILE),
            &sd.join(synth::FLOW_BWD_FILE),
            args.analysis.lenient_flo,
        )?;
        let gt = load_frame(&sd.join(synth::FRAME_MID_FILE))?;
        let trace = run_ensemble(&inp.i0, &inp.i1, &inp.f01, &inp.f10, t, [identity; 3], &cfg)?;
        let stats = regional_report(&trace.frame, &gt, &trace.analysis.masks)?;
        for (slot, s) in sums.iter_mut().zip(&stats) {
            if let Some(m) = s.mse {
                slot.0 += m;
                slot.1 += 1;
            }
        }
        records.extend(stats_records(&scene.id, &stats));
    }
    let regions = [ReportRegion::High, ReportRegion::Mid, ReportRegion::Low, ReportRegion::Full];
    for (region, (sum, n)) in regions.into_iter().zip(sums) {
        if n > 0 {
            records.push(ReportRecord::new("corpus-mean", region, Metric::Mse, sum / n as f64));
        }
    }
    Ok(records)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let records = if let Some(dir) = &args.corpus {
        eval_corpus(dir, args)?
    } else {
        let (Some(pred), Some(gt)) = (&args.pred, &args.gt) else {
            return Err(CliError::Usage("--pred and --gt are required without --corpus".into()));
        };
        let masks = match (&args.masks, &args.frame0, &args.frame1, &args.flow_fwd, &args.flow_bwd) {
            (Some(dir), ..) => load_masks(dir)?,
            (None, Some(f0), Some(f1), Some(fw), Some(bw)) => {
                let t = args.analysis.time_step()?;
                let cfg = args.analysis.metric_config()?;
                let inp = load_inputs(f0, f1, fw, bw, args.analysis.lenient_flo)?;
                analyze_at(&inp.i0, &inp.i1, &inp.f01, &inp.f10, t, &cfg)?.masks
            }
            _ => {
                return Err(CliError::Usage(
                    "eval needs --masks or all of --frame0/--frame1/--flow-fwd/--flow-bwd".into(),
                ))
            }
        };
        let pred = load_frame(pred)?;
        let gt = load_frame(gt)?;
        stats_records("input", &regional_report(&pred, &gt, &masks)?)
    };
    write_report(&args.out, args.report, &records)
}

pub fn cmd_gen_scene(args: &GenSceneArgs) -> CliResult<()> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if args.height < 16 || args.width < 16 {
        return Err(CliError::Usage("canvas must be at least 16x16".into()));
    }
    write_corpus(&args.out, args.count, args.seed, args.height, args.width)?;
    Ok(())
}
