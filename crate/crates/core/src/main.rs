use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tokenpress::cost_model::{CostQuery, HardwareConfig, ModelConfig};
use tokenpress::pipeline::{self, StrategySpec};
use tokenpress::saliency::{SaliencyConfig, SoftmaxDim};
use tokenpress::Error;

#[derive(Parser)]
#[command(name = "tokenpress", version, about = "Visual token sequence compression toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress the visual tokens of a bundle with one strategy.
    Compress(CompressArgs),
    /// Export a saliency heatmap (PGM + CSV) for one layer.
    Saliency(SaliencyArgs),
    /// Compare two strategies (or two prompts) by retained-set overlap.
    Compare(CompareArgs),
    /// Saliency heatmaps per layer and their pairwise rank correlation.
    LayerScan(LayerScanArgs),
    /// Prefill cost sweep over visual-token retention.
    Cost(CostArgs),
    /// Load and check a bundle.
    Validate {
        #[arg(long)]
        bundle: PathBuf,
    },
}

#[derive(Args)]
struct CompressArgs {
    /// Bundle directory (manifest.json plus .npy arrays).
    #[arg(long)]
    bundle: PathBuf,
    /// basic-saliency | cluster-saliency | cluster-dynamic | cluster-coarse |
    /// cluster-aggregate | random | spatial
    #[arg(long)]
    strategy: String,
    /// Output directory for the compressed sequence and run record.
    #[arg(long)]
    out: PathBuf,
    /// Number of clusters.
    #[arg(long)]
    k: Option<usize>,
    /// Percent of each cluster kept by saliency.
    #[arg(long)]
    x_percent: Option<f64>,
    /// Scale on the per-cluster softmax weights (cluster-dynamic).
    #[arg(long)]
    lambda: Option<f64>,
    /// Number of visual tokens to keep.
    #[arg(long)]
    retain_count: Option<usize>,
    /// Fraction of visual tokens to keep; --retain-count wins if both are set.
    #[arg(long)]
    retain_frac: Option<f64>,
    /// Seed for k-means++, random sampling and aggregate order (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// embeddings | keys
    #[arg(long)]
    basis: Option<String>,
    /// euclidean | cosine
    #[arg(long)]
    metric: Option<String>,
    /// Layer whose projections drive saliency (default 0).
    #[arg(long)]
    layer: Option<usize>,
    /// random | mean_position
    #[arg(long)]
    order: Option<String>,
    /// Skip the 1/sqrt(d_head) logit scaling.
    #[arg(long)]
    unscaled: bool,
    /// text | visual
    #[arg(long)]
    softmax_dim: Option<String>,
    /// Lloyd iteration cap (default 100).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Lloyd centroid-shift tolerance (default 1e-6).
    #[arg(long)]
    tol: Option<f64>,
}

impl CompressArgs {
    fn spec(&self) -> Result<StrategySpec, Error> {
        let mut spec = StrategySpec::new(self.strategy.parse()?);
        let pairs: [(&str, Option<String>); 14] = [
            ("k", self.k.map(|v| v.to_string())),
            ("x_percent", self.x_percent.map(|v| v.to_string())),
            ("lambda", self.lambda.map(|v| v.to_string())),
            ("retain_count", self.retain_count.map(|v| v.to_string())),
            ("retain_frac", self.retain_frac.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("basis", self.basis.clone()),
            ("metric", self.metric.clone()),
            ("layer", self.layer.map(|v| v.to_string())),
            ("order", self.order.clone()),
            ("scaled", self.unscaled.then(|| "false".to_string())),
            ("softmax_dim", self.softmax_dim.clone()),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
            ("tol", self.tol.map(|v| v.to_string())),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                spec.set(key, &v)?;
            }
        }
        spec.check()?;
        Ok(spec)
    }
}

#[derive(Args)]
struct SaliencyArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, default_value_t = 0)]
    layer: usize,
    #[arg(long)]
    unscaled: bool,
    #[arg(long, default_value = "text")]
    softmax_dim: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Second bundle (e.g. same image, other prompt); defaults to --bundle.
    #[arg(long)]
    bundle_b: Option<PathBuf>,
    /// Strategy A as `name:key=value,...`, e.g. `basic-saliency:count=64`.
    #[arg(long = "a")]
    spec_a: String,
    #[arg(long = "b")]
    spec_b: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LayerScanArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Comma-separated layer indices.
    #[arg(long, value_delimiter = ',', required = true)]
    layers: Vec<usize>,
    #[arg(long)]
    unscaled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    /// ModelConfig JSON.
    #[arg(long)]
    model: PathBuf,
    /// HardwareConfig JSON.
    #[arg(long)]
    hardware: PathBuf,
    #[arg(long)]
    n_text: u64,
    #[arg(long)]
    n_visual: u64,
    /// Explicit retention values; overrides --steps.
    #[arg(long, value_delimiter = ',')]
    r: Vec<f64>,
    /// Evenly spaced retention values 1/steps .. 1.
    #[arg(long, default_value_t = 20)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Compress(args) => {
            let spec = args.spec()?;
            let start = Instant::now();
            let (summary, warnings) = pipeline::run_compress(&args.bundle, &spec, &args.out)?;
            warn_all(&warnings);
            println!(
                "{}: {} -> {} tokens ({:.1}% of visual tokens; {} retained, {} aggregated), seed {}, {:.1} ms",
                spec.name,
                summary.input_count,
                summary.output_count,
                summary.retained_percent,
                summary.retained_count,
                summary.aggregated_count,
                summary.seed.map_or_else(|| "-".to_string(), |s| s.to_string()),
                start.elapsed().as_secs_f64() * 1e3,
            );
        }
        Command::Saliency(args) => {
            let cfg = SaliencyConfig {
                layer_index: args.layer,
                scaled: !args.unscaled,
                softmax_dim: args.softmax_dim.parse::<SoftmaxDim>()?,
            };
            let (summary, warnings) = pipeline::run_saliency(&args.bundle, &cfg, &args.out)?;
            warn_all(&warnings);
            println!(
                "layer {}: {} scores in [{}, {}], mean {}",
                args.layer, summary.n_visual, summary.min, summary.max, summary.mean
            );
        }
        Command::Compare(args) => {
            let a: StrategySpec = args.spec_a.parse()?;
            let b: StrategySpec = args.spec_b.parse()?;
            let bundle_b = args.bundle_b.unwrap_or_else(|| args.bundle.clone());
            let (report, warnings) = pipeline::run_compare(&args.bundle, &bundle_b, &a, &b, args.out.as_deref())?;
            warn_all(&warnings);
            print_json(&report);
        }
        Command::LayerScan(args) => {
            let (summary, warnings) = pipeline::run_layer_scan(&args.bundle, &args.layers, !args.unscaled, &args.out)?;
            warn_all(&warnings);
            print!("{}", pipeline::correlation_csv(&summary.layers, &summary.correlation)?);
        }
        Command::Cost(args) => {
            let model: ModelConfig = pipeline::read_json(&args.model)?;
            let hw: HardwareConfig = pipeline::read_json(&args.hardware)?;
            let base = CostQuery {
                n_text_tokens: args.n_text,
                n_visual_tokens_full: args.n_visual,
                retention: 1.0,
            };
            let retentions = if args.r.is_empty() {
                if args.steps == 0 {
                    return Err(Error::InvalidArgument("--steps must be positive".into()));
                }
                pipeline::retention_grid(args.steps)
            } else {
                args.r
            };
            let reports = pipeline::run_cost(&model, &hw, &base, &retentions, &args.out)?;
            for r in &reports {
                println!(
                    "r={:<6} T={:<6} flops x{:.4}  kv x{:.4}  act x{:.4}  time x{:.4}",
                    r.retention,
                    r.tokens,
                    r.ratios.prefill_flops,
                    r.ratios.kv_cache_bytes,
                    r.ratios.activation_bytes_peak,
                    r.ratios.prefill_time
                );
            }
        }
        Command::Validate { bundle } => {
            let report = pipeline::run_validate(&bundle)?;
            if report.layers.iter().any(|&(h, _)| h == 1) {
                eprintln!("warning: a layer has a single head; saliency is constant 1/N_t there");
            }
            print_json(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
