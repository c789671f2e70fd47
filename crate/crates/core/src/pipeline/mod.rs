//! Orchestration behind the command-line subcommands.
//!
//! Every `run_*` function is a pure function of its input files and
//! arguments: nothing time- or host-dependent is written to the output
//! directory, so repeated runs produce byte-identical trees. Each output
//! directory gets a `run.json` with the fully resolved parameters.

mod spec;

pub use spec::{Strategy, StrategyName, StrategyParams, StrategySpec, DEFAULT_DYNAMIC_K};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clustering::{self, ClusterModel};
use crate::cost_model::{self, CostQuery, HardwareConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::metrics;
use crate::rng;
use crate::saliency::{self, HeatmapFormat, SaliencyConfig, SaliencyMap};
use crate::sampling;
use crate::sequence::{save_sequence, CompressedSequence};
use crate::token_store::{create_dir, load_bundle, write_file, write_json, TokenBundle};

pub const RUN_FILE: &str = "run.json";

/// Result of running one strategy on one bundle.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub strategy: Strategy,
    pub sequence: CompressedSequence,
    pub saliency: Option<SaliencyMap>,
    pub model: Option<ClusterModel>,
    pub warnings: Vec<String>,
}

fn saliency_warnings(bundle: &TokenBundle, cfg: &SaliencyConfig) -> Vec<String> {
    match bundle.layer(cfg.layer_index) {
        Ok(layer) if layer.n_heads() == 1 => vec![format!(
            "layer {} has a single head: every saliency score equals 1/N_t, so selection reduces to index order",
            cfg.layer_index
        )],
        _ => Vec::new(),
    }
}

/// Computes a saliency map, adding the single-head warning if it applies.
pub fn saliency_for(bundle: &TokenBundle, cfg: &SaliencyConfig, warnings: &mut Vec<String>) -> Result<SaliencyMap> {
    warnings.extend(saliency_warnings(bundle, cfg));
    saliency::compute_saliency_with(bundle, cfg)
}

pub fn execute(bundle: &TokenBundle, spec: &StrategySpec) -> Result<Outcome> {
    let (strategy, mut warnings) = spec.resolve(bundle.n_visual())?;
    let mut saliency_map = None;
    let mut model = None;

    let sequence = match &strategy {
        Strategy::BasicSaliency { retain_count, saliency } => {
            let map = saliency_for(bundle, saliency, &mut warnings)?;
            let idx = saliency::basic_saliency_select(&map, *retain_count)?;
            saliency_map = Some(map);
            CompressedSequence::retained(bundle, &idx, None)
        }
        Strategy::ClusterSaliency {
            cluster,
            x_percent,
            retain_count,
            saliency,
        } => {
            let map = saliency_for(bundle, saliency, &mut warnings)?;
            let m = clustering::cluster_tokens(bundle, cluster)?;
            let seq = match retain_count {
                Some(c) => clustering::variant1_static_exact(bundle, &m, &map, *x_percent, *c)?,
                None => clustering::variant1_static(bundle, &m, &map, *x_percent)?,
            };
            saliency_map = Some(map);
            model = Some(m);
            seq
        }
        Strategy::ClusterDynamic {
            cluster,
            lambda,
            saliency,
        } => {
            let map = saliency_for(bundle, saliency, &mut warnings)?;
            let m = clustering::cluster_tokens(bundle, cluster)?;
            let seq = clustering::variant2_dynamic(bundle, &m, &map, *lambda)?;
            saliency_map = Some(map);
            model = Some(m);
            seq
        }
        Strategy::ClusterCoarse {
            cluster,
            x_percent,
            saliency,
        } => {
            let map = saliency_for(bundle, saliency, &mut warnings)?;
            let m = clustering::cluster_tokens(bundle, cluster)?;
            let seq = clustering::variant3_coarse(bundle, &m, &map, *x_percent)?;
            saliency_map = Some(map);
            model = Some(m);
            seq
        }
        Strategy::ClusterAggregate { cluster, order } => {
            let m = clustering::cluster_tokens(bundle, cluster)?;
            let seq = clustering::cluster_aggregate(bundle, &m, cluster.seed, *order)?;
            model = Some(m);
            seq
        }
        Strategy::Random { retain_count, seed } => sampling::random_sample(bundle, *retain_count, *seed)?,
        Strategy::Spatial { retain_count } => {
            let seq = sampling::spatial_sample(bundle, *retain_count)?;
            if seq.len() != *retain_count {
                warnings.push(format!(
                    "no uniform lattice holds exactly {retain_count} tokens; selected {}",
                    seq.len()
                ));
            }
            seq
        }
    };

    Ok(Outcome {
        strategy,
        sequence,
        saliency: saliency_map,
        model,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord<T> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub prng: String,
    #[serde(flatten)]
    pub body: T,
    pub warnings: Vec<String>,
}

fn record<T: Serialize>(dir: &Path, command: &str, body: T, warnings: &[String]) -> Result<()> {
    let rec = RunRecord {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        prng: rng::ALGORITHM_ID.into(),
        body,
        warnings: warnings.to_vec(),
    };
    write_json(&dir.join(RUN_FILE), &rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressSummary {
    pub bundle: String,
    pub strategy: Strategy,
    pub input_count: usize,
    pub output_count: usize,
    pub retained_count: usize,
    pub aggregated_count: usize,
    pub retained_percent: f64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
struct ClusterSummary<'a> {
    k: usize,
    seed: u64,
    basis: clustering::Basis,
    metric: clustering::Metric,
    objective: f64,
    iterations: usize,
    objective_history: &'a [f64],
    sizes: &'a [usize],
    labels: &'a [usize],
}

fn write_model(dir: &Path, m: &ClusterModel) -> Result<()> {
    write_json(
        &dir.join("clusters.json"),
        &ClusterSummary {
            k: m.k,
            seed: m.seed,
            basis: m.basis,
            metric: m.metric,
            objective: m.objective,
            iterations: m.iterations,
            objective_history: &m.objective_history,
            sizes: &m.sizes,
            labels: &m.labels,
        },
    )
}

/// Runs one strategy and writes the compressed sequence, provenance,
/// optional cluster/saliency side files and `run.json` into `out_dir`.
pub fn run_compress(bundle_path: &Path, spec: &StrategySpec, out_dir: &Path) -> Result<(CompressSummary, Vec<String>)> {
    let bundle = load_bundle(bundle_path)?;
    let outcome = execute(&bundle, spec)?;
    let seq = &outcome.sequence;

    save_sequence(seq, &bundle, out_dir)?;
    if let Some(m) = &outcome.model {
        write_model(out_dir, m)?;
    }
    if let Some(map) = &outcome.saliency {
        write_json(&out_dir.join("saliency.json"), map)?;
    }
    let summary = CompressSummary {
        bundle: bundle_path.display().to_string(),
        strategy: outcome.strategy.clone(),
        input_count: bundle.n_visual(),
        output_count: seq.len(),
        retained_count: seq.retained_indices().len(),
        aggregated_count: seq.aggregated_count(),
        retained_percent: seq.retained_percent(),
        seed: outcome.strategy.seed(),
    };
    record(out_dir, "compress", &summary, &outcome.warnings)?;
    Ok((summary, outcome.warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencySummary {
    pub bundle: String,
    pub config: SaliencyConfig,
    pub n_visual: usize,
    pub n_text: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Keys and queries come from the stored input embeddings projected by
    /// the chosen layer's weights, not from that layer's hidden states.
    pub source: String,
}

const SALIENCY_SOURCE: &str = "input embeddings projected by the selected layer's W_q/W_k";

/// Writes `heatmap.pgm`, `heatmap.csv`, `saliency.json` and `run.json`.
pub fn run_saliency(
    bundle_path: &Path,
    cfg: &SaliencyConfig,
    out_dir: &Path,
) -> Result<(SaliencySummary, Vec<String>)> {
    let bundle = load_bundle(bundle_path)?;
    let mut warnings = Vec::new();
    let map = saliency_for(&bundle, cfg, &mut warnings)?;
    create_dir(out_dir)?;
    saliency::export_heatmap(&map, bundle.grid(), out_dir.join("heatmap.pgm"), HeatmapFormat::Pgm)?;
    saliency::export_heatmap(&map, bundle.grid(), out_dir.join("heatmap.csv"), HeatmapFormat::Csv)?;
    write_json(&out_dir.join("saliency.json"), &map)?;
    let n = map.len() as f64;
    let summary = SaliencySummary {
        bundle: bundle_path.display().to_string(),
        config: *cfg,
        n_visual: bundle.n_visual(),
        n_text: bundle.n_text(),
        min: map.scores.iter().copied().fold(f64::INFINITY, f64::min),
        max: map.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: map.scores.iter().sum::<f64>() / n,
        source: SALIENCY_SOURCE.into(),
    };
    record(out_dir, "saliency", &summary, &warnings)?;
    Ok((summary, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    /// Jaccard overlap of retained index sets.
    Selection,
    /// Adjusted Rand index of cluster labels.
    Clustering,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub bundle_a: String,
    pub bundle_b: String,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    pub kind: ComparisonKind,
    pub count_a: usize,
    pub count_b: usize,
    pub jaccard: Option<f64>,
    pub adjusted_rand: Option<f64>,
    /// Spearman correlation of the saliency maps, when both strategies use one.
    pub spearman: Option<f64>,
    pub notes: Vec<String>,
}

fn is_aggregate(s: &Strategy) -> bool {
    matches!(s, Strategy::ClusterAggregate { .. })
}

/// Overlap metrics between two outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub kind: ComparisonKind,
    pub jaccard: Option<f64>,
    pub adjusted_rand: Option<f64>,
    pub spearman: Option<f64>,
    pub notes: Vec<String>,
}

/// Compares two configurations, typically the same image under two prompts.
pub fn compare_outcomes(a: &Outcome, b: &Outcome) -> Result<Comparison> {
    let mut notes = Vec::new();
    match (is_aggregate(&a.strategy), is_aggregate(&b.strategy)) {
        (true, true) => {
            let (ma, mb) = (a.model.as_ref().unwrap(), b.model.as_ref().unwrap());
            let ari = metrics::adjusted_rand_index(&ma.labels, &mb.labels)?;
            Ok(Comparison {
                kind: ComparisonKind::Clustering,
                jaccard: None,
                adjusted_rand: Some(ari),
                spearman: None,
                notes,
            })
        }
        (false, false) => {
            let ja = metrics::jaccard(&a.sequence.retained_indices(), &b.sequence.retained_indices());
            let rho = match (&a.saliency, &b.saliency) {
                (Some(sa), Some(sb)) => match saliency::rank_correlation(sa, sb) {
                    Ok(r) => Some(r),
                    Err(Error::UndefinedCorrelation(why)) => {
                        notes.push(format!("saliency rank correlation undefined: {why}"));
                        None
                    }
                    Err(e) => return Err(e),
                },
                _ => None,
            };
            Ok(Comparison {
                kind: ComparisonKind::Selection,
                jaccard: Some(ja),
                adjusted_rand: None,
                spearman: rho,
                notes,
            })
        }
        _ => Err(Error::Incomparable(format!(
            "{} aggregates clusters while {} selects tokens",
            if is_aggregate(&a.strategy) {
                a.strategy.name()
            } else {
                b.strategy.name()
            },
            if is_aggregate(&a.strategy) {
                b.strategy.name()
            } else {
                a.strategy.name()
            },
        ))),
    }
}

pub fn run_compare(
    bundle_a: &Path,
    bundle_b: &Path,
    spec_a: &StrategySpec,
    spec_b: &StrategySpec,
    out_dir: Option<&Path>,
) -> Result<(CompareReport, Vec<String>)> {
    let ba = load_bundle(bundle_a)?;
    let bb = if bundle_b == bundle_a {
        ba.clone()
    } else {
        load_bundle(bundle_b)?
    };
    let oa = execute(&ba, spec_a)?;
    let ob = execute(&bb, spec_b)?;
    if ba.n_visual() != bb.n_visual() {
        return Err(Error::Incomparable(format!(
            "bundles have {} and {} visual tokens",
            ba.n_visual(),
            bb.n_visual()
        )));
    }
    let Comparison {
        kind,
        jaccard,
        adjusted_rand,
        spearman,
        notes,
    } = compare_outcomes(&oa, &ob)?;
    let report = CompareReport {
        bundle_a: bundle_a.display().to_string(),
        bundle_b: bundle_b.display().to_string(),
        strategy_a: oa.strategy,
        strategy_b: ob.strategy,
        kind,
        count_a: oa.sequence.len(),
        count_b: ob.sequence.len(),
        jaccard,
        adjusted_rand,
        spearman,
        notes,
    };
    let mut warnings = oa.warnings;
    warnings.extend(ob.warnings);
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_json(&dir.join("compare.json"), &report)?;
        record(dir, "compare", &report, &warnings)?;
    }
    Ok((report, warnings))
}

/// Pairwise Spearman matrix; `None` where a correlation is undefined.
pub type CorrelationMatrix = Vec<Vec<Option<f64>>>;

pub fn correlation_matrix(maps: &[SaliencyMap]) -> CorrelationMatrix {
    maps.iter()
        .map(|a| maps.iter().map(|b| saliency::rank_correlation(a, b).ok()).collect())
        .collect()
}

pub fn correlation_csv(layers: &[usize], matrix: &CorrelationMatrix) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::invalid(e.to_string());
    let mut header = vec!["layer".to_string()];
    header.extend(layers.iter().map(usize::to_string));
    w.write_record(&header).map_err(err)?;
    for (l, row) in layers.iter().zip(matrix) {
        let mut rec = vec![l.to_string()];
        rec.extend(row.iter().map(|v| v.map_or_else(String::new, |x| x.to_string())));
        w.write_record(&rec).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScanSummary {
    pub bundle: String,
    pub layers: Vec<usize>,
    pub scaled: bool,
    pub correlation: CorrelationMatrix,
    pub source: String,
}

/// Per-layer heatmaps (`layer{i}.pgm`, `layer{i}.csv`) plus the pairwise
/// Spearman matrix in `correlation.csv`.
pub fn run_layer_scan(
    bundle_path: &Path,
    layers: &[usize],
    scaled: bool,
    out_dir: &Path,
) -> Result<(LayerScanSummary, Vec<String>)> {
    if layers.is_empty() {
        return Err(Error::invalid("layer scan needs at least one layer"));
    }
    let bundle = load_bundle(bundle_path)?;
    let mut warnings = Vec::new();
    let mut maps = Vec::with_capacity(layers.len());
    for &layer_index in layers {
        let cfg = SaliencyConfig {
            layer_index,
            scaled,
            ..Default::default()
        };
        maps.push(saliency_for(&bundle, &cfg, &mut warnings)?);
    }
    create_dir(out_dir)?;
    for (l, map) in layers.iter().zip(&maps) {
        saliency::export_heatmap(
            map,
            bundle.grid(),
            out_dir.join(format!("layer{l}.pgm")),
            HeatmapFormat::Pgm,
        )?;
        saliency::export_heatmap(
            map,
            bundle.grid(),
            out_dir.join(format!("layer{l}.csv")),
            HeatmapFormat::Csv,
        )?;
    }
    let matrix = correlation_matrix(&maps);
    write_file(
        &out_dir.join("correlation.csv"),
        correlation_csv(layers, &matrix)?.as_bytes(),
    )?;
    let summary = LayerScanSummary {
        bundle: bundle_path.display().to_string(),
        layers: layers.to_vec(),
        scaled,
        correlation: matrix,
        source: SALIENCY_SOURCE.into(),
    };
    record(out_dir, "layer-scan", &summary, &warnings)?;
    Ok((summary, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub model: ModelConfig,
    pub hardware: HardwareConfig,
    pub query: CostQuery,
    pub retentions: Vec<f64>,
}

/// `steps` evenly spaced retention values `1/steps, 2/steps, ..., 1`.
pub fn retention_grid(steps: usize) -> Vec<f64> {
    (1..=steps).map(|i| i as f64 / steps as f64).collect()
}

/// Writes `sweep.csv` and `run.json`.
pub fn run_cost(
    model: &ModelConfig,
    hw: &HardwareConfig,
    base: &CostQuery,
    retentions: &[f64],
    out_dir: &Path,
) -> Result<Vec<cost_model::CostReport>> {
    let reports = cost_model::sweep(model, hw, base, retentions)?;
    create_dir(out_dir)?;
    write_file(&out_dir.join("sweep.csv"), cost_model::sweep_csv(&reports)?.as_bytes())?;
    record(
        out_dir,
        "cost",
        CostSummary {
            model: model.clone(),
            hardware: *hw,
            query: *base,
            retentions: retentions.to_vec(),
        },
        &[],
    )?;
    Ok(reports)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub n_visual: usize,
    pub n_text: usize,
    pub dim: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub layers: Vec<(usize, usize)>,
    pub has_visual_keys: bool,
}

/// Loads the bundle, returning its shape on success.
pub fn run_validate(bundle_path: &Path) -> Result<BundleReport> {
    let b = load_bundle(bundle_path)?;
    Ok(BundleReport {
        n_visual: b.n_visual(),
        n_text: b.n_text(),
        dim: b.dim(),
        grid_rows: b.grid().rows,
        grid_cols: b.grid().cols,
        layers: b.layers().iter().map(|l| (l.n_heads(), l.d_head())).collect(),
        has_visual_keys: b.visual_keys().is_some(),
    })
}
