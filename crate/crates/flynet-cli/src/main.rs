//! `flynet` — visual place recognition pipeline.
//!
//! Subcommands wire dataset -> encoder -> classifier -> temporal filter ->
//! evaluation. All randomness flows from config seeds (or the `--seed`
//! master override), so identical invocations write identical artifacts.
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flynet::classifier::{count_footprint, read_head, ModelKind};
use flynet::dataset::{export_traverse, generate_synthetic, write_ground_truth};
use flynet::encoder::{build_projection, encode_traverse, read_descriptors, write_descriptors};
use flynet::eval::{auc, pr_curve, write_pr_csv, write_pr_svg, Tolerance};
use flynet::pipeline::{
    match_stage, measure_throughput, read_matches_csv, run_pipeline, FilterKind, PipelineConfig,
    PipelineError, TraverseSource,
};

#[derive(Parser)]
#[command(name = "flynet", version, about = "Compact visual place recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file (flat key=value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed: overrides every section seed with derived substreams.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.reseed(seed);
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic traverse pair as PGM directories plus ground truth.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (creates reference/, query/, ground_truth.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a traverse into packed binary descriptors (FNAD).
    Encode {
        #[command(flatten)]
        config: ConfigArgs,
        /// Image directory, `synthetic:reference`, or `synthetic:query`.
        #[arg(long)]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the place classifier on reference descriptors (FNHD).
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// FNAD file of reference descriptors, labeled 0..n-1 in order.
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Match a query traverse against a reference; writes matches.csv.
    Match {
        #[command(flatten)]
        config: ConfigArgs,
        /// Reference source: directory or `synthetic:`.
        #[arg(long)]
        reference: String,
        /// Query source: directory or `synthetic:`.
        #[arg(long)]
        query: String,
        /// Ground-truth CSV (query_index,reference_index); identity if omitted.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Temporal filter: none, seqslam, rnn, cann (overrides config).
        #[arg(long)]
        filter: Option<String>,
        /// Reuse a trained head instead of training one.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Output matches.csv path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a matches.csv into PR curve, SVG, and AUC.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        matches: PathBuf,
        /// Frame tolerance (overrides config).
        #[arg(long)]
        tolerance: Option<usize>,
        /// Output directory for pr.csv and pr.svg.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print layer/parameter/neuron counts per model.
    Footprint {
        /// flynet, flynet_rnn, or flynet_cann; all three if omitted.
        #[arg(long)]
        model: Option<String>,
    },
    /// Measure encode/match throughput on synthetic data.
    Bench {
        #[command(flatten)]
        config: ConfigArgs,
        /// Optional timing.csv output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full pipeline: encode, train, filter, evaluate, write artifacts.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        reference: String,
        #[arg(long)]
        query: String,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        filter: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_filter(s: &str) -> Result<FilterKind, PipelineError> {
    FilterKind::parse(s)
        .ok_or_else(|| PipelineError::Config { detail: format!("unknown filter {s:?}") })
}

fn execute(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Generate { config, out } => {
            let cfg = config.load()?;
            let (reference, query) = generate_synthetic(&cfg.synth)
                .map_err(PipelineError::from)?;
            std::fs::create_dir_all(&out).map_err(|e| PipelineError::Data {
                detail: format!("cannot create {}: {e}", out.display()),
            })?;
            export_traverse(&reference, &out.join("reference"))?;
            export_traverse(&query, &out.join("query"))?;
            let pairs: Vec<(usize, usize)> = (0..query.len()).map(|i| (i, i)).collect();
            let comment = format!("config {}", cfg.hash());
            write_ground_truth(&out.join("ground_truth.csv"), &pairs, Some(&comment))?;
            std::fs::write(
                out.join("config.txt"),
                format!("# {comment}\n{}", cfg.to_canonical_string()),
            )
            .map_err(|e| PipelineError::Data { detail: format!("cannot write config.txt: {e}") })?;
            println!(
                "generated {} reference and {} query frames in {}",
                reference.len(),
                query.len(),
                out.display()
            );
            Ok(())
        }
        Command::Encode { config, input, out } => {
            let cfg = config.load()?;
            let source = TraverseSource::parse(&input);
            let traverse = flynet::pipeline::resolve_traverse(&cfg, &source)?;
            let projection = build_projection(&cfg.encoder)?;
            let descriptors = encode_traverse(&projection, &traverse, &cfg.encoder)?;
            write_descriptors(
                &out,
                cfg.encoder.m as u32,
                cfg.encoder.n as u32,
                cfg.encoder.seed,
                &descriptors,
            )?;
            println!("encoded {} frames -> {}", descriptors.len(), out.display());
            Ok(())
        }
        Command::Train { config, descriptors, out } => {
            let cfg = config.load()?;
            let set = read_descriptors(&descriptors)?;
            let labels: Vec<usize> = (0..set.descriptors.len()).collect();
            let result = flynet::classifier::fit(&set.descriptors, &labels, &cfg.train)?;
            flynet::classifier::write_head(&out, &result.head)?;
            let mut trace = format!("# config {}\nepoch,loss,accuracy\n", cfg.hash());
            for stats in &result.trace {
                trace.push_str(&format!("{},{},{}\n", stats.epoch, stats.loss, stats.accuracy));
            }
            let trace_path = out.with_extension("trace.csv");
            std::fs::write(&trace_path, trace).map_err(|e| PipelineError::Data {
                detail: format!("cannot write {}: {e}", trace_path.display()),
            })?;
            let last = result.trace.last().unwrap();
            println!(
                "trained {} places, final accuracy {:.4} -> {}",
                result.head.places(),
                last.accuracy,
                out.display()
            );
            Ok(())
        }
        Command::Match { config, reference, query, gt, filter, head, out } => {
            let mut cfg = config.load()?;
            if let Some(f) = filter {
                cfg.filter = parse_filter(&f)?;
            }
            let head_override = head.map(|p| read_head(&p)).transpose()?;
            let records = match_stage(
                &cfg,
                &TraverseSource::parse(&reference),
                &TraverseSource::parse(&query),
                gt.as_deref(),
                head_override,
                &out,
            )?;
            let matched = records.iter().filter(|r| r.predicted.is_some()).count();
            println!("matched {matched}/{} queries -> {}", records.len(), out.display());
            Ok(())
        }
        Command::Eval { config, matches, tolerance, out } => {
            let cfg = config.load()?;
            let tol = tolerance.map(|frames| Tolerance { frames }).unwrap_or(cfg.tolerance);
            let records = read_matches_csv(&matches)?;
            let curve = pr_curve(&records, tol)?;
            let area = auc(&curve);
            std::fs::create_dir_all(&out).map_err(|e| PipelineError::Data {
                detail: format!("cannot create {}: {e}", out.display()),
            })?;
            let comment = format!("config {}", cfg.hash());
            write_pr_csv(&out.join("pr.csv"), &curve, Some(&comment))?;
            write_pr_svg(&out.join("pr.svg"), &curve, Some(&comment))?;
            println!("auc {} over {} records (tolerance {})", area, records.len(), tol.frames);
            Ok(())
        }
        Command::Footprint { model } => {
            let kinds: Vec<ModelKind> = match model {
                Some(name) => vec![ModelKind::parse(&name).ok_or_else(|| {
                    PipelineError::Config { detail: format!("unknown model {name:?}") }
                })?],
                None => vec![ModelKind::FlyNet, ModelKind::FlyNetRnn, ModelKind::FlyNetCann],
            };
            println!("{:<14} {:>6} {:>9} {:>12} {:>8}", "model", "layers", "params", "weights_only", "neurons");
            for kind in kinds {
                let fp = count_footprint(kind);
                println!(
                    "{:<14} {:>6} {:>9} {:>12} {:>8}",
                    kind.name(),
                    fp.layers,
                    fp.params,
                    fp.weights_only,
                    fp.neurons
                );
            }
            Ok(())
        }
        Command::Bench { config, out } => {
            let cfg = config.load()?;
            let timing = measure_throughput(&cfg)?;
            println!(
                "feature {:.3}s  match {:.3}s  avg/query {:.6}s ({:.2} fps) over {} frames, filter {}",
                timing.feature_s,
                timing.match_s,
                timing.avg_query_s,
                if timing.avg_query_s > 0.0 { 1.0 / timing.avg_query_s } else { 0.0 },
                cfg.synth.num_places,
                cfg.filter.name()
            );
            if let Some(path) = out {
                let text = format!(
                    "# config {}\nfeature_s,match_s,avg_query_s\n{},{},{}\n",
                    cfg.hash(),
                    timing.feature_s,
                    timing.match_s,
                    timing.avg_query_s
                );
                std::fs::write(&path, text).map_err(|e| PipelineError::Data {
                    detail: format!("cannot write {}: {e}", path.display()),
                })?;
            }
            Ok(())
        }
        Command::Run { config, reference, query, gt, filter, out } => {
            let mut cfg = config.load()?;
            if let Some(f) = filter {
                cfg.filter = parse_filter(&f)?;
            }
            let outcome = run_pipeline(
                &cfg,
                &TraverseSource::parse(&reference),
                &TraverseSource::parse(&query),
                gt.as_deref(),
                &out,
            )?;
            println!(
                "method {}  auc {:.4}  (feature {:.3}s, match {:.3}s, avg/query {:.6}s)",
                outcome.method,
                outcome.auc,
                outcome.timing.feature_s,
                outcome.timing.match_s,
                outcome.timing.avg_query_s
            );
            println!("artifacts in {} (config {})", out.display(), outcome.config_hash);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
