//! Command-line surface of the guided-decoding engine and the dispersion
//! analysis pipeline.
//!
//! Exit codes: 0 on success, 2 on validation or usage errors, 3 when the
//! baseline verification check fails.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vpsg::analysis::{
    expected_distance_mc, frequency_table, hit_accuracy, mu_square_closed_form, pooled_report,
    Condition, DistanceReport, FrequencyReport,
};
use vpsg::core::{
    Coordinate, GuidanceConfig, PredictionRecord, RouteLabel, StepDistribution, Vocabulary,
    DEFAULT_ALPHA, DEFAULT_DECAY, DEFAULT_EPSILON_FLOOR, DEFAULT_MAX_DIGITS, DEFAULT_MAX_STEPS,
};
use vpsg::corpus::{self, CorpusConfig};
use vpsg::guidance::{decode, normalize, DecodeOutput};
use vpsg::providers::replay_route_set;
use vpsg::trace::{read_trace_file, TraceFile};

#[derive(Parser)]
#[command(
    name = "vpsg",
    version,
    about = "Digit-only negative-evidence guided decoding and coordinate-dispersion analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode recorded traces with guidance and report per-step details
    /// and accuracy.
    Run(RunArgs),
    /// Dispersion, frequency and baseline statistics over a predictions
    /// file.
    Analyze(AnalyzeArgs),
    /// Cross-check the closed-form unit-square expected distance against
    /// a Monte-Carlo estimate.
    VerifyBaseline(VerifyArgs),
    /// Generate a seeded synthetic corpus of traces, predictions and
    /// ground truth.
    MakeSynthetic(MakeSyntheticArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Trace files to decode (repeatable).
    #[arg(long = "trace", value_name = "FILE", num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Directory of trace files (all *.jsonl inside, sorted).
    #[arg(long, value_name = "DIR", conflicts_with = "traces")]
    corpus: Option<PathBuf>,
    /// Base guidance coefficient (default 0.55).
    #[arg(long)]
    alpha: Option<f64>,
    /// Geometric decay factor of the coefficient schedule (default 0.4).
    #[arg(long)]
    decay: Option<f64>,
    /// Auxiliary seeds to use (default: all seeds the trace declares).
    #[arg(long)]
    seeds: Option<usize>,
    /// Use only seed 0 instead of aggregating all auxiliary routes.
    #[arg(long)]
    no_aggregate: bool,
    /// Apply the constant base coefficient on every digit.
    #[arg(long)]
    no_decay: bool,
    /// Restrict candidates to template-legal tokens instead of the
    /// permissive default.
    #[arg(long)]
    strict: bool,
    /// Baseline shortcut: force alpha = 0.
    #[arg(long)]
    alpha0: bool,
    /// Write the structured run report (JSON lines) here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Append decoded points as prediction records here.
    #[arg(long, value_name = "PATH")]
    predictions_out: Option<PathBuf>,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ConditionArg {
    Normal,
    Shuffled,
    Both,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Predictions file (one JSON record per line).
    #[arg(long, value_name = "FILE")]
    preds: PathBuf,
    /// Which condition to report.
    #[arg(long, value_enum, default_value = "both")]
    condition: ConditionArg,
    /// Number of entries in the frequency table.
    #[arg(long, default_value_t = 10)]
    topk: usize,
    /// Attach a Monte-Carlo null with this many sample pairs per
    /// resolution.
    #[arg(long, value_name = "N")]
    mc_null: Option<usize>,
    /// Seed for the Monte-Carlo null.
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Write the structured reports (JSON) here.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Monte-Carlo sample pairs.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

#[derive(Args)]
struct MakeSyntheticArgs {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 220)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Logit margin of the position-conditioned pathway.
    #[arg(long, default_value_t = 4.5)]
    signal: f64,
    /// Logit margin of the position-unconditioned pathway.
    #[arg(long, default_value_t = 6.0)]
    bias: f64,
    /// Attractor coordinates of the unconditioned pathway.
    #[arg(long, value_delimiter = ',', default_values_t = [1024u32, 512, 1056])]
    attractors: Vec<u32>,
    /// Auxiliary seeds per trace.
    #[arg(long, default_value_t = 5)]
    aux_seeds: usize,
    /// Decoded runs per condition per image in the predictions file.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    /// Digit-logit noise amplitude.
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    /// Per-seed spread of the unconditioned bias sharpness.
    #[arg(long, default_value_t = 0.3)]
    bias_spread: f64,
}

/// Defaults loadable from the TOML file named by `VPSG_CONFIG`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDefaults {
    alpha: Option<f64>,
    decay: Option<f64>,
    seeds: Option<usize>,
    epsilon_floor: Option<f64>,
    max_digits: Option<u8>,
    max_steps: Option<usize>,
}

fn file_defaults() -> Result<FileDefaults> {
    match std::env::var_os("VPSG_CONFIG") {
        None => Ok(FileDefaults::default()),
        Some(path) => {
            let text = fs::read_to_string(&path)
                .with_context(|| format!("reading config file {}", Path::new(&path).display()))?;
            toml::from_str(&text)
                .with_context(|| format!("parsing config file {}", Path::new(&path).display()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => cmd_run(args).map(|_| ExitCode::SUCCESS),
        Command::Analyze(args) => cmd_analyze(args).map(|_| ExitCode::SUCCESS),
        Command::VerifyBaseline(args) => cmd_verify_baseline(args),
        Command::MakeSynthetic(args) => cmd_make_synthetic(args).map(|_| ExitCode::SUCCESS),
    }
}

/// Fixed-width table; column 0 is left-aligned, the rest right-aligned.
fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            if i == 0 {
                line.push_str(&format!("{cell:<width$}", width = widths[i]));
            } else {
                line.push_str(&format!("{cell:>width$}", width = widths[i]));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    };
    push_row(&headers.iter().map(|h| h.to_string()).collect::<Vec<_>>());
    for row in rows {
        push_row(row);
    }
    out
}

// ---------------------------------------------------------------------------
// run

#[derive(Serialize)]
struct ConfigEcho<'a> {
    #[serde(rename = "type")]
    record: &'static str,
    alpha: f64,
    decay: f64,
    seeds: Option<usize>,
    aggregate: bool,
    use_decay: bool,
    strict: bool,
    epsilon_floor: f64,
    max_digits: u8,
    max_steps: usize,
    inputs: &'a [String],
}

#[derive(Serialize)]
struct StepEcho {
    token: String,
    alpha: f64,
    guided: bool,
    main_top: Vec<(String, f64)>,
    fused_top: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct ResultEcho {
    #[serde(rename = "type")]
    record: &'static str,
    id: String,
    coord: Option<Coordinate>,
    hit: Option<bool>,
    steps: Vec<StepEcho>,
}

#[derive(Serialize)]
struct SummaryEcho {
    #[serde(rename = "type")]
    record: &'static str,
    inputs: usize,
    decoded: usize,
    with_gt: usize,
    hits: usize,
    accuracy_percent: Option<f64>,
}

fn top_probs(dist: &StepDistribution, vocab: &Vocabulary, k: usize) -> Vec<(String, f64)> {
    let mut ids: Vec<usize> = (0..vocab.len()).collect();
    ids.sort_by(|&a, &b| {
        dist.logprob(b)
            .partial_cmp(&dist.logprob(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    ids.truncate(k);
    ids.into_iter()
        .map(|id| (vocab.token(id).to_string(), dist.prob(id)))
        .collect()
}

fn input_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

struct RunOutcome {
    id: String,
    trace: TraceFile,
    output: DecodeOutput,
    hit: Option<bool>,
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let defaults = file_defaults()?;
    let inputs: Vec<PathBuf> = if let Some(dir) = &args.corpus {
        corpus::trace_paths(dir)
            .with_context(|| format!("listing traces under {}", dir.display()))?
    } else {
        args.traces.clone()
    };
    if inputs.is_empty() {
        bail!("no inputs: pass --trace FILE or --corpus DIR");
    }

    let alpha = if args.alpha0 {
        0.0
    } else {
        args.alpha.or(defaults.alpha).unwrap_or(DEFAULT_ALPHA)
    };
    let base_cfg = GuidanceConfig {
        alpha,
        decay: args.decay.or(defaults.decay).unwrap_or(DEFAULT_DECAY),
        seeds: 1, // resolved per trace below
        aggregate: !args.no_aggregate,
        use_decay: !args.no_decay,
        epsilon_floor: defaults.epsilon_floor.unwrap_or(DEFAULT_EPSILON_FLOOR),
        max_digits: defaults.max_digits.unwrap_or(DEFAULT_MAX_DIGITS),
        max_steps: defaults.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
    };
    let seeds_flag = args.seeds.or(defaults.seeds);

    let mut outcomes = Vec::with_capacity(inputs.len());
    let mut warned_no_aggregate = false;
    for path in &inputs {
        let trace =
            read_trace_file(path).with_context(|| format!("reading trace {}", path.display()))?;
        let vocab = Arc::new(trace.vocabulary()?);
        let seeds = seeds_flag.unwrap_or(trace.header.seeds);
        if args.no_aggregate && seeds > 1 && !warned_no_aggregate {
            eprintln!("warning: --no-aggregate uses only seed 0 of {seeds}");
            warned_no_aggregate = true;
        }
        let cfg = GuidanceConfig {
            seeds,
            ..base_cfg.clone()
        };
        let routes = replay_route_set(&trace, seeds)?;
        let output = decode(&routes, &vocab, &cfg, args.strict)
            .with_context(|| format!("decoding {}", path.display()))?;
        let hit = match (trace.header.image.gt_bbox, output.coord) {
            (Some(bbox), Some(coord)) => Some(bbox.contains(coord)),
            (Some(_), None) => Some(false),
            (None, _) => None,
        };
        outcomes.push(RunOutcome {
            id: input_id(path),
            trace,
            output,
            hit,
        });
    }

    print_run_report(&outcomes, &base_cfg, seeds_flag, args.strict);

    if let Some(out) = &args.out {
        write_run_report(out, &outcomes, &base_cfg, seeds_flag, args.strict)?;
    }
    if let Some(out) = &args.predictions_out {
        write_predictions(out, &outcomes)?;
    }
    Ok(())
}

fn print_run_report(
    outcomes: &[RunOutcome],
    cfg: &GuidanceConfig,
    seeds_flag: Option<usize>,
    strict: bool,
) {
    println!(
        "guidance: alpha {:.6} decay {:.6} seeds {} aggregate {} use-decay {} strict {}",
        cfg.alpha,
        cfg.decay,
        seeds_flag.map_or_else(|| "per-trace".to_string(), |s| s.to_string()),
        cfg.aggregate,
        cfg.use_decay,
        strict
    );

    if outcomes.len() == 1 {
        let outcome = &outcomes[0];
        let vocab = outcome.trace.vocabulary().expect("validated on read");
        let rows: Vec<Vec<String>> = outcome
            .output
            .steps
            .iter()
            .enumerate()
            .map(|(i, step)| {
                let fused_dist = normalize(&step.fused).expect("finite fused scores");
                let fmt = |pairs: Vec<(String, f64)>| {
                    pairs
                        .into_iter()
                        .map(|(t, p)| format!("{t:?} {p:.3}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                vec![
                    (i + 1).to_string(),
                    format!("{:?}", vocab.token(step.token)),
                    format!("{:.4}", step.fused.alpha_used()),
                    if step.fused.guided() { "yes" } else { "no" }.to_string(),
                    fmt(top_probs(&step.main, &vocab, 3)),
                    fmt(top_probs(&fused_dist, &vocab, 3)),
                ]
            })
            .collect();
        print!(
            "{}",
            render_table(
                &["step", "token", "alpha_t", "guided", "top main", "top fused"],
                &rows
            )
        );
    }

    let rows: Vec<Vec<String>> = outcomes
        .iter()
        .map(|o| {
            vec![
                o.id.clone(),
                o.output
                    .coord
                    .map_or_else(|| "-".to_string(), |c| c.to_string()),
                match o.hit {
                    Some(true) => "yes".to_string(),
                    Some(false) => "no".to_string(),
                    None => "-".to_string(),
                },
            ]
        })
        .collect();
    print!("{}", render_table(&["input", "decoded", "gt-hit"], &rows));

    let decoded = outcomes.iter().filter(|o| o.output.coord.is_some()).count();
    let with_gt = outcomes.iter().filter(|o| o.hit.is_some()).count();
    let hits = outcomes.iter().filter(|o| o.hit == Some(true)).count();
    match with_gt {
        0 => println!("inputs {}  decoded {decoded}", outcomes.len()),
        _ => println!(
            "inputs {}  decoded {decoded}  hits {hits}/{with_gt}  accuracy {:.2}%",
            outcomes.len(),
            100.0 * hits as f64 / with_gt as f64
        ),
    }
}

fn write_run_report(
    path: &Path,
    outcomes: &[RunOutcome],
    cfg: &GuidanceConfig,
    seeds_flag: Option<usize>,
    strict: bool,
) -> Result<()> {
    let mut file =
        File::create(path).with_context(|| format!("creating report file {}", path.display()))?;
    let ids: Vec<String> = outcomes.iter().map(|o| o.id.clone()).collect();
    let config = ConfigEcho {
        record: "config",
        alpha: cfg.alpha,
        decay: cfg.decay,
        seeds: seeds_flag,
        aggregate: cfg.aggregate,
        use_decay: cfg.use_decay,
        strict,
        epsilon_floor: cfg.epsilon_floor,
        max_digits: cfg.max_digits,
        max_steps: cfg.max_steps,
        inputs: &ids,
    };
    writeln!(file, "{}", serde_json::to_string(&config)?)?;

    let mut decoded = 0usize;
    let mut with_gt = 0usize;
    let mut hits = 0usize;
    for outcome in outcomes {
        let vocab = outcome.trace.vocabulary()?;
        decoded += usize::from(outcome.output.coord.is_some());
        with_gt += usize::from(outcome.hit.is_some());
        hits += usize::from(outcome.hit == Some(true));
        let steps = outcome
            .output
            .steps
            .iter()
            .map(|step| {
                let fused_dist = normalize(&step.fused)?;
                Ok(StepEcho {
                    token: vocab.token(step.token).to_string(),
                    alpha: step.fused.alpha_used(),
                    guided: step.fused.guided(),
                    main_top: top_probs(&step.main, &vocab, 3),
                    fused_top: top_probs(&fused_dist, &vocab, 3),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let result = ResultEcho {
            record: "result",
            id: outcome.id.clone(),
            coord: outcome.output.coord,
            hit: outcome.hit,
            steps,
        };
        writeln!(file, "{}", serde_json::to_string(&result)?)?;
    }
    let summary = SummaryEcho {
        record: "summary",
        inputs: outcomes.len(),
        decoded,
        with_gt,
        hits,
        accuracy_percent: (with_gt > 0).then(|| 100.0 * hits as f64 / with_gt as f64),
    };
    writeln!(file, "{}", serde_json::to_string(&summary)?)?;
    Ok(())
}

fn write_predictions(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut file = File::create(path)
        .with_context(|| format!("creating predictions file {}", path.display()))?;
    for outcome in outcomes {
        let Some(coord) = outcome.output.coord else {
            continue;
        };
        let record = PredictionRecord {
            image: outcome.trace.image_meta(outcome.id.clone())?,
            coord,
            route: RouteLabel::Vpsg,
            run: 0,
        };
        writeln!(file, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let file =
        File::open(path).with_context(|| format!("opening predictions {}", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(&line)
            .with_context(|| format!("line {}: invalid prediction record", i + 1))?;
        record.image.validate()?;
        records.push(record);
    }
    if records.is_empty() {
        bail!("predictions file {} is empty", path.display());
    }
    Ok(records)
}

#[derive(Serialize)]
struct AnalyzeReport {
    distance: Vec<DistanceReport>,
    frequency: Vec<(String, FrequencyReport)>,
}

fn print_distance_report(report: &DistanceReport) {
    println!("condition: {}", report.condition.label());
    // Resolution-level view of the per-image means.
    let mut by_resolution: std::collections::BTreeMap<(u32, u32), (usize, usize, f64)> =
        std::collections::BTreeMap::new();
    for img in &report.per_image {
        let entry = by_resolution
            .entry((img.width, img.height))
            .or_insert((0, 0, 0.0));
        entry.0 += 1;
        entry.1 += img.pairs;
        entry.2 += img.mean;
    }
    let mut rows: Vec<Vec<String>> = by_resolution
        .iter()
        .map(|(&(w, h), &(images, pairs, mean_sum))| {
            vec![
                format!("{w}x{h}"),
                images.to_string(),
                pairs.to_string(),
                format!("{:.6}", mean_sum / images as f64),
            ]
        })
        .collect();
    rows.push(vec![
        "pooled".to_string(),
        report.per_image.len().to_string(),
        report.pooled_pairs.to_string(),
        format!("{:.6}", report.pooled_mean),
    ]);
    print!(
        "{}",
        render_table(&["resolution", "images", "pairs", "mean-dist"], &rows)
    );
    println!("baseline mu0 {:.9}", report.baseline_mu0);
    if let Some(nulls) = &report.mc_null {
        for null in nulls {
            println!(
                "mc-null {}x{} {:.6} (se {:.6}, n {})",
                null.width, null.height, null.estimate, null.std_error, null.samples
            );
        }
    }
}

fn print_frequency_report(label: &str, report: &FrequencyReport) {
    println!("top-{} numbers ({label})", report.entries.len());
    let rows: Vec<Vec<String>> = report
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| vec![(i + 1).to_string(), e.number.to_string(), e.count.to_string()])
        .collect();
    print!("{}", render_table(&["rank", "number", "count"], &rows));
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    let preds = read_predictions(&args.preds)?;
    let conditions: &[Condition] = match args.condition {
        ConditionArg::Normal => &[Condition::Normal],
        ConditionArg::Shuffled => &[Condition::Shuffled],
        ConditionArg::Both => &[Condition::Normal, Condition::Shuffled],
    };

    let mut distance_reports = Vec::new();
    let mut frequency_reports = Vec::new();
    for (i, &condition) in conditions.iter().enumerate() {
        if i > 0 {
            println!();
        }
        let mut report = pooled_report(&preds, condition)
            .with_context(|| format!("distance report ({})", condition.label()))?;
        if let Some(n) = args.mc_null {
            report = report.with_mc_null(n, args.seed)?;
        }
        print_distance_report(&report);
        let subset: Vec<PredictionRecord> = preds
            .iter()
            .filter(|p| condition.matches(p.route))
            .cloned()
            .collect();
        let freq = frequency_table(&subset, args.topk)?;
        print_frequency_report(condition.label(), &freq);
        distance_reports.push(report);
        frequency_reports.push((condition.label().to_string(), freq));
    }

    // Hit accuracy when every record carries a ground-truth box.
    if preds.iter().all(|p| p.image.gt_bbox.is_some()) {
        let table = hit_accuracy(&preds)?;
        println!();
        let rows: Vec<Vec<String>> = table
            .cells
            .iter()
            .map(|c| {
                vec![
                    c.category.clone(),
                    c.ui_type.clone(),
                    format!("{}/{}", c.hits, c.total),
                    format!("{:.2}", c.percent),
                ]
            })
            .collect();
        print!(
            "{}",
            render_table(&["category", "ui-type", "hits", "percent"], &rows)
        );
        println!(
            "unweighted average {:.2}%  overall {:.2}%",
            table.average_percent, table.overall_percent
        );
    }

    if let Some(out) = &args.out {
        let report = AnalyzeReport {
            distance: distance_reports,
            frequency: frequency_reports,
        };
        fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing report {}", out.display()))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// verify-baseline

fn cmd_verify_baseline(args: VerifyArgs) -> Result<ExitCode> {
    let closed = mu_square_closed_form();
    let mc = expected_distance_mc(1.0, 1.0, args.samples, args.seed)?;
    let diff = (closed - mc.estimate).abs();
    let threshold = 3.0 * mc.std_error;
    let pass = diff < threshold;
    println!("closed-form mean distance  {closed:.9}");
    println!(
        "monte-carlo estimate       {:.9} (se {:.9}, n {})",
        mc.estimate, mc.std_error, mc.samples
    );
    println!("|closed - estimate|        {diff:.9}");
    println!("threshold (3 * se)         {threshold:.9}");
    println!(
        "result                     {}",
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}

// ---------------------------------------------------------------------------
// make-synthetic

fn cmd_make_synthetic(args: MakeSyntheticArgs) -> Result<()> {
    let config = CorpusConfig {
        images: args.n,
        seed: args.seed,
        aux_seeds: args.aux_seeds,
        runs_per_condition: args.runs,
        signal_strength: args.signal,
        bias_strength: args.bias,
        attractors: args.attractors.clone(),
        noise_amplitude: args.noise,
        seed_bias_spread: args.bias_spread,
    };
    let corpus = corpus::generate(&config).context("generating corpus")?;
    fs::create_dir_all(&args.out)?;
    let paths = corpus::write_to_dir(&corpus, &args.out).context("writing corpus")?;
    println!(
        "wrote {} traces to {}",
        paths.trace_files.len(),
        paths.traces_dir.display()
    );
    println!(
        "wrote {} predictions to {}",
        corpus.predictions.len(),
        paths.predictions.display()
    );
    println!(
        "wrote {} ground-truth records to {}",
        corpus.images.len(),
        paths.groundtruth.display()
    );
    Ok(())
}
