// SPDX-License-Identifier: MIT OR Apache-2.0

//! `alignscope` command-line front end.
//!
//! Exit codes: 0 on success, 1 on a domain error (bad data, failed
//! validation), 2 on a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use alignscope_core::coarse::{aggregate_profiles, layer_averaged_scalar, CoarseAnalysis};
use alignscope_core::fixture::{generate_fixture, spread_map, FixtureSpec};
use alignscope_core::intervention::{apply_plans, read_plans, select_tokens, write_plans, Operator, Strategy};
use alignscope_core::regression::{append_predictors, correlate_grouped, read_predictors, read_scores};
use alignscope_core::report::{
    render_report, write_alignment_csv, write_aps_csv, write_path_dump, write_profiles_csv, write_regressions_csv,
    Format, ResultsBundle,
};
use alignscope_core::store::load_manifest;
use alignscope_core::token::corpus_alignment_stats;
use alignscope_core::{Metric, Modality};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const THREADS_ENV: &str = "ALIGNSCOPE_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "alignscope",
    version,
    about = "Speech/text representation alignment analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a manifest and decode every payload.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Layer-wise similarity of mean-pooled speech and text states.
    Coarse(CoarseArgs),
    /// Token alignment paths: monotonicity, consistency and APS per layer.
    Paths(PathsArgs),
    /// Alignment path score per sample.
    Aps(ApsArgs),
    /// Fit the text/speech score gap against predictors.
    Regress(RegressArgs),
    /// Select speech frames and edit their embeddings.
    Intervene(IntervArgs),
    /// Generate a synthetic corpus with a planted alignment.
    Fixture(FixtureArgs),
    /// Full analysis of one or more corpora with CSV, JSON and SVG output.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Cos,
    Dist,
    Both,
}

impl MetricArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            MetricArg::Cos => vec![Metric::Cos],
            MetricArg::Dist => vec![Metric::Dist],
            MetricArg::Both => Metric::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Bottom3,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OperatorArg {
    Angle,
    Length,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Args)]
struct CoarseArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    metric: MetricArg,
    /// Profile CSV (sample_id,metric,layer,value).
    #[arg(long)]
    out: PathBuf,
    /// Also append layer-averaged scalars (fbar_cos, fbar_dist) for this checkpoint to --predictors-out.
    #[arg(long, requires = "predictors_out")]
    checkpoint: Option<String>,
    #[arg(long, requires = "checkpoint")]
    predictors_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PathsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Statistics CSV (sample_id,layer,metric,statistic,value).
    #[arg(long)]
    out: PathBuf,
    /// Dump every path entry (sample_id,layer,metric,j,i,value).
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ApsArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// APS CSV (sample_id,metric,aps).
    #[arg(long)]
    out: PathBuf,
    /// Also append aps_cos and aps_dist for this checkpoint to --predictors-out.
    #[arg(long, requires = "predictors_out")]
    checkpoint: Option<String>,
    #[arg(long, requires = "checkpoint")]
    predictors_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegressArgs {
    /// checkpoint_id,group,text_score,speech_score[,gap]
    #[arg(long)]
    scores: PathBuf,
    /// checkpoint_id,predictor,value
    #[arg(long)]
    predictors: PathBuf,
    /// Restrict to these predictors (default: all in the table).
    #[arg(long = "predictor")]
    only: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for scatter plots.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IntervArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Samples to edit (default: every sample).
    #[arg(long = "sample")]
    samples: Vec<String>,
    #[arg(long, value_enum, default_value = "bottom3")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "angle")]
    operator: OperatorArg,
    /// Replay plans from this JSON file instead of selecting.
    #[arg(long, conflicts_with = "samples")]
    plans: Option<PathBuf>,
    /// Directory for the edited corpus.
    #[arg(long)]
    out_dir: PathBuf,
    /// Where to save the plans (default: <out-dir>/plans.json).
    #[arg(long)]
    plan_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    samples: usize,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 6)]
    text_len: usize,
    #[arg(long, default_value_t = 12)]
    speech_len: usize,
    /// Comma-separated strictly increasing frame indices (default: evenly spread).
    #[arg(long, value_delimiter = ',')]
    planted: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Corpus manifests; repeat for several checkpoints.
    #[arg(long = "manifest", required = true)]
    manifests: Vec<PathBuf>,
    /// Series labels, one per manifest (default: manifest parent directory names).
    #[arg(long = "label")]
    labels: Vec<String>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, requires = "scores")]
    predictors: Option<PathBuf>,
    #[arg(long = "format", value_enum, default_values = ["csv", "json", "svg"])]
    formats: Vec<FormatArg>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also dump full alignment paths.
    #[arg(long)]
    dump_paths: bool,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let pool = match thread_pool() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Worker count from the `ALIGNSCOPE_THREADS` value; unset or 0 means one per core.
pub fn parse_threads(value: Option<&str>) -> anyhow::Result<usize> {
    match value {
        Some(v) => v
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")),
        None => Ok(0),
    }
}

fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let threads = parse_threads(std::env::var(THREADS_ENV).ok().as_deref())?;
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

fn execute(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Validate { manifest } => validate(&manifest),
        Command::Coarse(args) => coarse(args),
        Command::Paths(args) => paths(args),
        Command::Aps(args) => aps(args),
        Command::Regress(args) => regress(args),
        Command::Intervene(args) => intervene(args),
        Command::Fixture(args) => fixture(args),
        Command::Report(args) => report(args),
    }
}

fn validate(path: &Path) -> anyhow::Result<()> {
    let set = load_manifest(path)?;
    let mut payloads = 0;
    for id in set.sorted_ids() {
        for modality in [Modality::Speech, Modality::Text] {
            if set.payload_path(id, modality).is_ok() {
                set.read_sample(id, modality)?;
                payloads += 1;
            }
        }
    }
    let m = &set.manifest;
    println!(
        "ok: {} samples, {payloads} payloads, dim {}, {} layers (+ embedding layer)",
        m.samples.len(),
        m.dim,
        m.layer_count
    );
    Ok(())
}

fn coarse_analyses(manifest: &Path, metrics: &[Metric]) -> anyhow::Result<Vec<CoarseAnalysis>> {
    let set = load_manifest(manifest)?;
    Ok(metrics
        .iter()
        .map(|&m| aggregate_profiles(&set, m))
        .collect::<Result<_, _>>()?)
}

fn coarse(args: CoarseArgs) -> anyhow::Result<()> {
    let analyses = coarse_analyses(&args.manifest, &args.metric.metrics())?;
    write_profiles_csv(&analyses, &args.out)?;
    let mut scalars = Vec::new();
    for a in &analyses {
        let fbar = layer_averaged_scalar(&a.aggregate);
        println!("fbar_{} = {fbar}", a.metric);
        scalars.push((
            if a.metric == Metric::Cos {
                "fbar_cos"
            } else {
                "fbar_dist"
            },
            fbar,
        ));
    }
    if let (Some(ck), Some(out)) = (&args.checkpoint, &args.predictors_out) {
        append_predictors(out, ck, &scalars)?;
    }
    Ok(())
}

fn paths(args: PathsArgs) -> anyhow::Result<()> {
    let set = load_manifest(&args.manifest)?;
    let corpus = corpus_alignment_stats(&set)?;
    write_alignment_csv(&corpus, &args.out)?;
    if let Some(dump) = &args.dump_paths {
        write_path_dump(&corpus, dump)?;
    }
    let a = &corpus.aggregate;
    let show = |v: Option<f64>| v.map_or("undefined".to_string(), |x| x.to_string());
    println!("rho_cos = {}", show(a.rho_cos));
    println!("rho_dist = {}", show(a.rho_dist));
    println!("consistency = {}", a.consistency);
    if corpus.undefined_rho_cos + corpus.undefined_rho_dist > 0 {
        println!(
            "undefined rho: {} samples (cos), {} samples (dist)",
            corpus.undefined_rho_cos, corpus.undefined_rho_dist
        );
    }
    Ok(())
}

fn aps(args: ApsArgs) -> anyhow::Result<()> {
    let set = load_manifest(&args.manifest)?;
    let corpus = corpus_alignment_stats(&set)?;
    write_aps_csv(&corpus, &args.out)?;
    println!("aps_cos = {}", corpus.aggregate.aps_cos);
    println!("aps_dist = {}", corpus.aggregate.aps_dist);
    if let (Some(ck), Some(out)) = (&args.checkpoint, &args.predictors_out) {
        append_predictors(
            out,
            ck,
            &[
                ("aps_cos", corpus.aggregate.aps_cos),
                ("aps_dist", corpus.aggregate.aps_dist),
            ],
        )?;
    }
    Ok(())
}

fn regress(args: RegressArgs) -> anyhow::Result<()> {
    let scores = read_scores(&args.scores)?;
    let table = read_predictors(&args.predictors)?;
    let names: Vec<&String> = if args.only.is_empty() {
        table.keys().collect()
    } else {
        for name in &args.only {
            if !table.contains_key(name) {
                bail!("predictor '{name}' not found in {}", args.predictors.display());
            }
        }
        args.only.iter().collect()
    };
    if names.is_empty() {
        bail!("no predictors in {}", args.predictors.display());
    }
    let mut regs = Vec::new();
    for name in names {
        let reg = correlate_grouped(&table[name], &scores, name).with_context(|| format!("predictor '{name}'"))?;
        for fit in &reg.fits {
            println!(
                "{} [{}]: slope = {}, intercept = {}, r_squared = {}, n = {}",
                name, fit.group, fit.slope, fit.intercept, fit.r_squared, fit.n
            );
        }
        for s in &reg.skipped {
            eprintln!("warning: {name} [{}] skipped: {}", s.group, s.reason);
        }
        regs.push(reg);
    }
    if let Some(out) = &args.out {
        write_regressions_csv(&regs, out)?;
    }
    if let Some(path) = &args.json {
        let json = serde_json_string(&regs)?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = &args.svg_dir {
        let bundle = ResultsBundle {
            regressions: regs,
            ..Default::default()
        };
        render_report(&bundle, &[Format::Csv, Format::Svg], dir)?;
    }
    Ok(())
}

fn serde_json_string<T: serde::Serialize>(value: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn intervene(args: IntervArgs) -> anyhow::Result<()> {
    let set = load_manifest(&args.manifest)?;
    let strategy = match args.strategy {
        StrategyArg::Bottom3 => Strategy::Bottom3,
        StrategyArg::All => Strategy::All,
    };
    let operator = match args.operator {
        OperatorArg::Angle => Operator::Angle,
        OperatorArg::Length => Operator::Length,
    };
    let plans = match &args.plans {
        Some(path) => read_plans(path)?,
        None => {
            let ids: Vec<String> = if args.samples.is_empty() {
                set.sorted_ids().into_iter().map(String::from).collect()
            } else {
                args.samples.clone()
            };
            ids.iter()
                .map(|id| {
                    let (speech, text) = set.read_pair(id)?;
                    select_tokens(id, &speech, &text, strategy, operator).map_err(|e| e.in_sample(id))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
    };
    let manifest = apply_plans(&set, &plans, &args.out_dir)?;
    let plan_out = args.plan_out.unwrap_or_else(|| args.out_dir.join("plans.json"));
    write_plans(&plans, &plan_out)?;
    let edited: usize = plans.iter().map(|p| p.pairs.len()).sum();
    println!(
        "edited {edited} speech frames across {} samples; wrote {} and {}",
        plans.len(),
        args.out_dir.join("manifest.json").display(),
        plan_out.display()
    );
    let stale = manifest.samples.iter().filter(|s| s.stale).count();
    if stale > 0 {
        println!("{stale} samples flagged stale: block layers must be regenerated from the edited embeddings");
    }
    Ok(())
}

fn fixture(args: FixtureArgs) -> anyhow::Result<()> {
    let spec = FixtureSpec {
        n_samples: args.samples,
        layer_count: args.layers,
        dim: args.dim,
        text_len: args.text_len,
        speech_len: args.speech_len,
        planted_map: args
            .planted
            .unwrap_or_else(|| spread_map(args.text_len, args.speech_len)),
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let path = generate_fixture(&spec, &args.out_dir)?;
    println!("{}", path.display());
    Ok(())
}

fn report(args: ReportArgs) -> anyhow::Result<()> {
    if !args.labels.is_empty() && args.labels.len() != args.manifests.len() {
        bail!(
            "{} labels given for {} manifests",
            args.labels.len(),
            args.manifests.len()
        );
    }
    let labels: Vec<String> = if args.labels.is_empty() {
        args.manifests.iter().map(|m| default_label(m)).collect()
    } else {
        args.labels.clone()
    };
    let mut bundle = ResultsBundle::default();
    let mut predictors: BTreeMap<String, Vec<(String, f64)>> = BTreeMap::new();
    for (label, manifest) in labels.iter().zip(&args.manifests) {
        let set = load_manifest(manifest)?;
        for metric in Metric::ALL {
            let a = aggregate_profiles(&set, metric).with_context(|| format!("{}", manifest.display()))?;
            predictors
                .entry(format!("fbar_{metric}"))
                .or_default()
                .push((label.clone(), layer_averaged_scalar(&a.aggregate)));
            bundle.profiles.push((label.clone(), a));
        }
        let corpus = corpus_alignment_stats(&set).with_context(|| format!("{}", manifest.display()))?;
        predictors
            .entry("aps_cos".into())
            .or_default()
            .push((label.clone(), corpus.aggregate.aps_cos));
        predictors
            .entry("aps_dist".into())
            .or_default()
            .push((label.clone(), corpus.aggregate.aps_dist));
        if args.dump_paths {
            std::fs::create_dir_all(&args.out_dir)?;
            let name = if labels.len() > 1 {
                format!("paths_{label}.csv")
            } else {
                "paths.csv".to_string()
            };
            write_path_dump(&corpus, args.out_dir.join(name))?;
        }
        bundle.metadata.insert(
            format!("undefined_rho/{label}"),
            serde_json::json!({
                "cos": corpus.undefined_rho_cos,
                "dist": corpus.undefined_rho_dist,
            }),
        );
        bundle.alignment.push((label.clone(), corpus));
    }
    bundle.metadata.insert(
        "estimators".into(),
        serde_json::json!({
            "profile_aggregate": "per-layer mean of per-sample metric values, samples in id order",
            "path_statistics": "per-layer statistic, averaged over layers 1..L, then over samples in id order",
            "rank_correlation": "Spearman with average ranks for ties; constant paths undefined and excluded",
            "path_ties": "smallest speech frame index",
            "layers": "block outputs 1..L; layer 0 excluded",
        }),
    );
    if let Some(scores_path) = &args.scores {
        let scores = read_scores(scores_path)?;
        let table = match &args.predictors {
            Some(p) => read_predictors(p)?,
            None => predictors,
        };
        for (name, values) in &table {
            match correlate_grouped(values, &scores, name) {
                Ok(reg) => bundle.regressions.push(reg),
                Err(e) => eprintln!("warning: regression on {name} skipped: {e}"),
            }
        }
    }
    let formats: Vec<Format> = args
        .formats
        .iter()
        .map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
            FormatArg::Svg => Format::Svg,
        })
        .collect();
    let written = render_report(&bundle, &formats, &args.out_dir)?;
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn default_label(manifest: &Path) -> String {
    manifest
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}
