use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use docparse::eval::{evaluate, render_text, EvalConfig, Interpolation, DEFAULT_MIN_CONFIDENCE};
use docparse::pipeline::{parse_detections, Detections, ParseConfig, StageTimings};
use docparse::refinement::RefinementConfig;
use docparse::relations::{NestingThresholds, RelationConfig, DEFAULT_TAU_OVLP, DEFAULT_THETA1, DEFAULT_THETA2};
use docparse::synth::{generate_page, perturb, NoiseSpec, PageSpec};
use docparse::tablestruct::{match_cells_to_text, parse_table_with_gap, TableGrid, DEFAULT_CENTROID_GAP, DEFAULT_GAMMA};
use docparse::weaklabels::{generate_weak_labels, read_records, write_records, WeakLabelConfig};
use docparse::{DocStructure, Entity, Grammar, Page};

#[derive(Parser, Debug)]
#[command(name = "docparse", version, about = "Hierarchical document structure parsing")]
struct Cli {
    #[command(flatten)]
    knobs: Knobs,
    /// Dump the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Debug, Clone)]
struct Knobs {
    /// Minimum overlap fraction for partial nesting.
    #[arg(long, global = true, default_value_t = DEFAULT_THETA1)]
    theta1: f64,
    /// Minimum size ratio for partial nesting.
    #[arg(long, global = true, default_value_t = DEFAULT_THETA2)]
    theta2: f64,
    /// Horizontal overlap share deciding column membership.
    #[arg(long, global = true, default_value_t = DEFAULT_TAU_OVLP)]
    tau_ovlp: f64,
    /// Refinement iteration budget.
    #[arg(long, global = true, default_value_t = 30)]
    max_iterations: usize,
    /// Skip structure refinement.
    #[arg(long, global = true)]
    no_refine: bool,
    /// Confidence bar for predictions (parse defaults to 0.7, eval to none).
    #[arg(long, global = true)]
    min_confidence: Option<f64>,
    /// Centroid gap in pixels for row and column synthesis.
    #[arg(long, global = true, default_value_t = DEFAULT_CENTROID_GAP)]
    centroid_gap: f64,
    /// Grammar file replacing the built-in one.
    #[arg(long, global = true)]
    grammar: Option<PathBuf>,
    /// Worker threads for multi-document commands.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Print per-stage wall time to stderr.
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Detections file(s) to structure file(s).
    Parse(ParseArgs),
    /// Table detections to a grid report.
    Tables(TablesArgs),
    /// Reverse-render record stream to a noisy structure file.
    Weaklabel(WeaklabelArgs),
    /// Score a prediction structure against ground truth.
    Eval(EvalArgs),
    /// Generate a synthetic fixture directory.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ParseArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output file for one input, output directory for several.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TablesArgs {
    input: PathBuf,
    /// Text boxes to match against the recovered cells.
    #[arg(long)]
    text_boxes: Option<PathBuf>,
    /// Share of a text box a cell must cover to claim it.
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeaklabelArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 1000.0)]
    page_width: f64,
    #[arg(long, default_value_t = 1400.0)]
    page_height: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Json,
    Text,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// IoU threshold; repeat for several.
    #[arg(long, default_values_t = vec![0.5])]
    iou: Vec<f64>,
    /// Use 11-point interpolated AP.
    #[arg(long)]
    eleven_point: bool,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    format: ReportFormat,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Page layout as JSON; a random layout drawn from `--seed` is used when absent.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise settings as JSON for the perturbed detections.
    #[arg(long, conflicts_with = "zero_noise")]
    noise: Option<PathBuf>,
    /// Emit detections identical to the ground truth.
    #[arg(long)]
    zero_noise: bool,
    #[arg(short, long)]
    out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct EffectiveConfig {
    parse: ParseConfig,
    eval_min_confidence: Option<f64>,
    centroid_gap: f64,
    gamma: f64,
    weaklabel: WeakLabelConfig,
    jobs: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum EntityList {
    Bare(Vec<Entity>),
    Wrapped { entities: Vec<Entity> },
}

#[derive(Debug, Serialize)]
struct CellMatch {
    cell: String,
    text: String,
}

#[derive(Debug, Serialize)]
struct TableReport {
    shape: (usize, usize),
    grid: TableGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    matches: Option<Vec<CellMatch>>,
}

impl Knobs {
    fn parse_config(&self) -> Result<ParseConfig> {
        let relations = RelationConfig {
            nesting: NestingThresholds {
                theta1: self.theta1,
                theta2: self.theta2,
            },
            tau_ovlp: self.tau_ovlp,
        };
        relations.validate()?;
        let refinement = RefinementConfig::new(self.max_iterations)?;
        let min_confidence = self.min_confidence.unwrap_or(DEFAULT_MIN_CONFIDENCE);
        check_unit("min-confidence", min_confidence)?;
        Ok(ParseConfig {
            relations,
            refinement,
            min_confidence,
            refine: !self.no_refine,
        })
    }

    fn weaklabel_config(&self) -> Result<WeakLabelConfig> {
        ensure!(self.centroid_gap >= 0.0, "centroid-gap must be non-negative");
        check_unit("tau-ovlp", self.tau_ovlp)?;
        Ok(WeakLabelConfig {
            centroid_gap: self.centroid_gap,
            tau_ovlp: self.tau_ovlp,
            ..WeakLabelConfig::default()
        })
    }

    fn grammar(&self) -> Result<Grammar> {
        match &self.grammar {
            None => Ok(Grammar::default()),
            Some(p) => Ok(Grammar::from_toml_str(&read_text(p)?)?),
        }
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    ensure!((0.0..=1.0).contains(&v), "{name} must lie in [0, 1], got {v}");
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Writes through a temporary file in the target directory so readers never
/// see a partial file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn emit(output: Option<&Path>, contents: &str) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, contents),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            Ok(())
        }
    }
}

fn ms(d: std::time::Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn report_timing(label: &str, t: &StageTimings) {
    let refine = t.refine.map(|d| format!("{:.3}", ms(d))).unwrap_or_else(|| "-".into());
    eprintln!(
        "timing {label}: filter {:.3} ms, classify {:.3} ms, refine {refine} ms, total {:.3} ms",
        ms(t.filter),
        ms(t.classify),
        ms(t.total)
    );
}

fn parse_one(input: &Path, output: Option<&Path>, grammar: &Grammar, config: &ParseConfig, timing: bool) -> Result<()> {
    let detections: Detections = read_json(input)?;
    let parsed = parse_detections(&detections, grammar, config);
    for w in &parsed.warnings {
        eprintln!("warning: {}: {w}", input.display());
    }
    if timing {
        report_timing(&input.display().to_string(), &parsed.timings);
    }
    emit(output, &to_json(&parsed.structure)?)
}

fn run_parse(args: &ParseArgs, knobs: &Knobs) -> Result<()> {
    let config = knobs.parse_config()?;
    let grammar = knobs.grammar()?;
    if let [input] = args.inputs.as_slice() {
        return parse_one(input, args.output.as_deref(), &grammar, &config, knobs.timing);
    }
    let Some(dir) = &args.output else {
        bail!("several inputs need --output naming a directory");
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(knobs.jobs.max(1))
        .build()?;
    let failures: Vec<String> = pool.install(|| {
        args.inputs
            .par_iter()
            .filter_map(|input| {
                let stem = input.file_stem().unwrap_or_default().to_string_lossy();
                let target = dir.join(format!("{stem}.structure.json"));
                parse_one(input, Some(&target), &grammar, &config, knobs.timing)
                    .err()
                    .map(|e| format!("{}: {e:#}", input.display()))
            })
            .collect()
    });
    for f in &failures {
        eprintln!("error: {f}");
    }
    ensure!(failures.is_empty(), "{} of {} documents failed", failures.len(), args.inputs.len());
    Ok(())
}

fn run_tables(args: &TablesArgs, knobs: &Knobs) -> Result<()> {
    ensure!(
        (DEFAULT_GAMMA..=1.0).contains(&args.gamma),
        "gamma must lie in [0.5, 1], got {}",
        args.gamma
    );
    let entities = match read_json::<EntityList>(&args.input)? {
        EntityList::Bare(v) | EntityList::Wrapped { entities: v } => v,
    };
    let grid = parse_table_with_gap(&entities, knobs.centroid_gap)?;
    let matches = match &args.text_boxes {
        None => None,
        Some(p) => {
            let texts = match read_json::<EntityList>(p)? {
                EntityList::Bare(v) | EntityList::Wrapped { entities: v } => v,
            };
            let pairs = match_cells_to_text(&grid, &texts, args.gamma)?;
            Some(pairs.into_iter().map(|(cell, text)| CellMatch { cell, text }).collect())
        }
    };
    let report = TableReport {
        shape: grid.shape(),
        grid,
        matches,
    };
    emit(args.output.as_deref(), &to_json(&report)?)
}

fn run_weaklabel(args: &WeaklabelArgs, knobs: &Knobs) -> Result<()> {
    ensure!(
        args.page_width > 0.0 && args.page_height > 0.0,
        "page dimensions must be positive"
    );
    let records = read_records(&read_text(&args.input)?).with_context(|| format!("parsing {}", args.input.display()))?;
    let labels = generate_weak_labels(&records, Page::new(args.page_width, args.page_height), &knobs.weaklabel_config()?)?;
    emit(args.output.as_deref(), &to_json(&labels.to_file())?)
}

fn run_eval(args: &EvalArgs, knobs: &Knobs) -> Result<()> {
    ensure!(!args.iou.is_empty(), "at least one --iou is required");
    for &t in &args.iou {
        ensure!(t > 0.0 && t <= 1.0, "iou must lie in (0, 1], got {t}");
    }
    if let Some(c) = knobs.min_confidence {
        check_unit("min-confidence", c)?;
    }
    let pred: DocStructure = read_json(&args.pred)?;
    let gt: DocStructure = read_json(&args.gt)?;
    let interpolation = if args.eleven_point {
        Interpolation::ElevenPoint
    } else {
        Interpolation::AllPoint
    };
    let reports: Vec<_> = args
        .iou
        .iter()
        .map(|&iou_threshold| {
            evaluate(
                &pred,
                &gt,
                &EvalConfig {
                    iou_threshold,
                    interpolation,
                    min_confidence: knobs.min_confidence,
                },
            )
        })
        .collect();
    let text = match args.format {
        ReportFormat::Json if reports.len() == 1 => to_json(&reports[0])?,
        ReportFormat::Json => to_json(&reports)?,
        ReportFormat::Text => reports.iter().map(render_text).collect::<Vec<_>>().join("\n"),
    };
    emit(args.output.as_deref(), &text)
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let spec = match &args.layout {
        Some(p) => read_json::<PageSpec>(p)?,
        None => PageSpec::random(args.seed),
    };
    let noise = match (&args.noise, args.zero_noise) {
        (Some(p), _) => read_json::<NoiseSpec>(p)?,
        (None, true) => NoiseSpec::zero(),
        (None, false) => NoiseSpec {
            seed: args.seed,
            ..NoiseSpec::default()
        },
    };
    let page = generate_page(&spec)?;
    let entities = perturb(&page.ground_truth, &noise)?;
    let detections = Detections {
        page: page.ground_truth.page,
        entities,
    };
    let dir = &args.out_dir;
    write_atomic(&dir.join("layout.json"), &to_json(&spec)?)?;
    write_atomic(&dir.join("noise.json"), &to_json(&noise)?)?;
    write_atomic(&dir.join("ground_truth.json"), &to_json(&page.ground_truth)?)?;
    write_atomic(&dir.join("records.jsonl"), &write_records(&page.records))?;
    write_atomic(&dir.join("detections.json"), &to_json(&detections)?)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let knobs = &cli.knobs;
    if cli.print_config {
        let gamma = match &cli.command {
            Some(Command::Tables(t)) => t.gamma,
            _ => DEFAULT_GAMMA,
        };
        let config = EffectiveConfig {
            parse: knobs.parse_config()?,
            eval_min_confidence: knobs.min_confidence,
            centroid_gap: knobs.centroid_gap,
            gamma,
            weaklabel: knobs.weaklabel_config()?,
            jobs: knobs.jobs,
        };
        return emit(None, &to_json(&config)?);
    }
    match &cli.command {
        None => bail!("no command given; see --help"),
        Some(Command::Parse(a)) => run_parse(a, knobs),
        Some(Command::Tables(a)) => run_tables(a, knobs),
        Some(Command::Weaklabel(a)) => run_weaklabel(a, knobs),
        Some(Command::Eval(a)) => run_eval(a, knobs),
        Some(Command::Synth(a)) => run_synth(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
