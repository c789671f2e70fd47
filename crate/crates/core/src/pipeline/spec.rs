//! Strategy selection and parameter validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clustering::{Basis, ClusterConfig, LloydParams, Metric};
use crate::error::{Error, Result};
use crate::saliency::{SaliencyConfig, SoftmaxDim};
use crate::sequence::OrderPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    BasicSaliency,
    ClusterSaliency,
    ClusterDynamic,
    ClusterCoarse,
    ClusterAggregate,
    Random,
    Spatial,
}

impl StrategyName {
    pub const ALL: [StrategyName; 7] = [
        StrategyName::BasicSaliency,
        StrategyName::ClusterSaliency,
        StrategyName::ClusterDynamic,
        StrategyName::ClusterCoarse,
        StrategyName::ClusterAggregate,
        StrategyName::Random,
        StrategyName::Spatial,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::BasicSaliency => "basic-saliency",
            StrategyName::ClusterSaliency => "cluster-saliency",
            StrategyName::ClusterDynamic => "cluster-dynamic",
            StrategyName::ClusterCoarse => "cluster-coarse",
            StrategyName::ClusterAggregate => "cluster-aggregate",
            StrategyName::Random => "random",
            StrategyName::Spatial => "spatial",
        }
    }

    fn required(self) -> &'static [Param] {
        use Param::*;
        match self {
            StrategyName::BasicSaliency | StrategyName::Random | StrategyName::Spatial => &[Retention],
            StrategyName::ClusterSaliency | StrategyName::ClusterCoarse => &[K, XPercent],
            StrategyName::ClusterDynamic => &[Lambda],
            StrategyName::ClusterAggregate => &[K],
        }
    }

    fn optional(self) -> &'static [Param] {
        use Param::*;
        match self {
            StrategyName::BasicSaliency => &[Layer, Scaled, SoftmaxDim],
            StrategyName::ClusterSaliency => {
                &[Seed, Basis, Metric, Layer, Scaled, SoftmaxDim, Retention, MaxIters, Tol]
            }
            StrategyName::ClusterDynamic => &[K, Seed, Basis, Metric, Layer, Scaled, SoftmaxDim, MaxIters, Tol],
            StrategyName::ClusterCoarse => &[Seed, Basis, Metric, Layer, Scaled, SoftmaxDim, MaxIters, Tol],
            StrategyName::ClusterAggregate => &[Seed, Order, Basis, Metric, MaxIters, Tol],
            StrategyName::Random => &[Seed],
            StrategyName::Spatial => &[],
        }
    }

    pub fn uses_saliency(self) -> bool {
        !matches!(
            self,
            StrategyName::ClusterAggregate | StrategyName::Random | StrategyName::Spatial
        )
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    K,
    XPercent,
    Lambda,
    Retention,
    Seed,
    Basis,
    Metric,
    Layer,
    Order,
    Scaled,
    SoftmaxDim,
    MaxIters,
    Tol,
}

impl Param {
    fn key(self) -> &'static str {
        match self {
            Param::K => "k",
            Param::XPercent => "x_percent",
            Param::Lambda => "lambda",
            Param::Retention => "retain_count|retain_frac",
            Param::Seed => "seed",
            Param::Basis => "basis",
            Param::Metric => "metric",
            Param::Layer => "layer",
            Param::Order => "order",
            Param::Scaled => "scaled",
            Param::SoftmaxDim => "softmax_dim",
            Param::MaxIters => "max_iters",
            Param::Tol => "tol",
        }
    }
}

/// Strategy name plus whatever parameters the user supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyParams {
    pub k: Option<usize>,
    pub x_percent: Option<f64>,
    pub lambda: Option<f64>,
    pub retain_count: Option<usize>,
    pub retain_frac: Option<f64>,
    pub seed: Option<u64>,
    pub basis: Option<Basis>,
    pub metric: Option<Metric>,
    pub layer: Option<usize>,
    pub order: Option<OrderPolicy>,
    pub scaled: Option<bool>,
    pub softmax_dim: Option<SoftmaxDim>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
}

impl StrategyParams {
    fn has(&self, p: Param) -> bool {
        match p {
            Param::K => self.k.is_some(),
            Param::XPercent => self.x_percent.is_some(),
            Param::Lambda => self.lambda.is_some(),
            Param::Retention => self.retain_count.is_some() || self.retain_frac.is_some(),
            Param::Seed => self.seed.is_some(),
            Param::Basis => self.basis.is_some(),
            Param::Metric => self.metric.is_some(),
            Param::Layer => self.layer.is_some(),
            Param::Order => self.order.is_some(),
            Param::Scaled => self.scaled.is_some(),
            Param::SoftmaxDim => self.softmax_dim.is_some(),
            Param::MaxIters => self.max_iters.is_some(),
            Param::Tol => self.tol.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: StrategyName,
    pub params: StrategyParams,
}

const ALL_PARAMS: [Param; 13] = [
    Param::K,
    Param::XPercent,
    Param::Lambda,
    Param::Retention,
    Param::Seed,
    Param::Basis,
    Param::Metric,
    Param::Layer,
    Param::Order,
    Param::Scaled,
    Param::SoftmaxDim,
    Param::MaxIters,
    Param::Tol,
];

/// A spec with every parameter checked and defaulted, ready to execute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum Strategy {
    BasicSaliency {
        retain_count: usize,
        saliency: SaliencyConfig,
    },
    ClusterSaliency {
        cluster: ClusterConfig,
        x_percent: f64,
        /// Exact output count; trims or pads the per-cluster selection.
        retain_count: Option<usize>,
        saliency: SaliencyConfig,
    },
    ClusterDynamic {
        cluster: ClusterConfig,
        lambda: f64,
        saliency: SaliencyConfig,
    },
    ClusterCoarse {
        cluster: ClusterConfig,
        x_percent: f64,
        saliency: SaliencyConfig,
    },
    ClusterAggregate {
        cluster: ClusterConfig,
        order: OrderPolicy,
    },
    Random {
        retain_count: usize,
        seed: u64,
    },
    Spatial {
        retain_count: usize,
    },
}

impl Strategy {
    pub fn name(&self) -> StrategyName {
        match self {
            Strategy::BasicSaliency { .. } => StrategyName::BasicSaliency,
            Strategy::ClusterSaliency { .. } => StrategyName::ClusterSaliency,
            Strategy::ClusterDynamic { .. } => StrategyName::ClusterDynamic,
            Strategy::ClusterCoarse { .. } => StrategyName::ClusterCoarse,
            Strategy::ClusterAggregate { .. } => StrategyName::ClusterAggregate,
            Strategy::Random { .. } => StrategyName::Random,
            Strategy::Spatial { .. } => StrategyName::Spatial,
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Strategy::ClusterSaliency { cluster, .. }
            | Strategy::ClusterDynamic { cluster, .. }
            | Strategy::ClusterCoarse { cluster, .. }
            | Strategy::ClusterAggregate { cluster, .. } => Some(cluster.seed),
            Strategy::Random { seed, .. } => Some(*seed),
            Strategy::BasicSaliency { .. } | Strategy::Spatial { .. } => None,
        }
    }

    pub fn saliency_config(&self) -> Option<&SaliencyConfig> {
        match self {
            Strategy::BasicSaliency { saliency, .. }
            | Strategy::ClusterSaliency { saliency, .. }
            | Strategy::ClusterDynamic { saliency, .. }
            | Strategy::ClusterCoarse { saliency, .. } => Some(saliency),
            _ => None,
        }
    }
}

pub const DEFAULT_DYNAMIC_K: usize = 20;

impl StrategySpec {
    pub fn new(name: StrategyName) -> Self {
        Self {
            name,
            params: StrategyParams::default(),
        }
    }

    /// Checks that every required parameter is present and nothing else is.
    pub fn check(&self) -> Result<()> {
        for p in self.name.required() {
            if !self.params.has(*p) {
                return Err(Error::invalid(format!("strategy {} requires `{}`", self.name, p.key())));
            }
        }
        for p in ALL_PARAMS {
            if self.params.has(p) && !self.name.required().contains(&p) && !self.name.optional().contains(&p) {
                return Err(Error::invalid(format!(
                    "strategy {} does not take `{}`",
                    self.name,
                    p.key()
                )));
            }
        }
        Ok(())
    }

    /// Fills defaults and converts a retention fraction into a count for a
    /// bundle of `n_visual` tokens. Returns the strategy and any warnings.
    pub fn resolve(&self, n_visual: usize) -> Result<(Strategy, Vec<String>)> {
        self.check()?;
        let p = &self.params;
        let mut warnings = Vec::new();

        let retain_count = match (p.retain_count, p.retain_frac) {
            (Some(c), Some(_)) => {
                warnings.push("both retain_count and retain_frac given; using retain_count".into());
                Some(c)
            }
            (Some(c), None) => Some(c),
            (None, Some(f)) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::invalid(format!("retain_frac {f} outside (0, 1]")));
                }
                Some(((f * n_visual as f64).round() as usize).max(1))
            }
            (None, None) => None,
        };
        if let Some(c) = retain_count {
            if c == 0 || c > n_visual {
                return Err(Error::invalid(format!("retain_count {c} outside 1..={n_visual}")));
            }
        }

        let saliency = SaliencyConfig {
            layer_index: p.layer.unwrap_or(0),
            scaled: p.scaled.unwrap_or(true),
            softmax_dim: p.softmax_dim.unwrap_or_default(),
        };
        let defaults = LloydParams::default();
        let cluster = |k: usize| ClusterConfig {
            k,
            seed: p.seed.unwrap_or(0),
            basis: p.basis.unwrap_or_default(),
            metric: p.metric.unwrap_or_default(),
            lloyd: LloydParams {
                max_iters: p.max_iters.unwrap_or(defaults.max_iters),
                tol: p.tol.unwrap_or(defaults.tol),
                seed_trials: Some(defaults.trials(k)),
            },
        };
        let need = |v: Option<usize>| v.expect("checked above");

        let strategy = match self.name {
            StrategyName::BasicSaliency => Strategy::BasicSaliency {
                retain_count: need(retain_count),
                saliency,
            },
            StrategyName::ClusterSaliency => Strategy::ClusterSaliency {
                cluster: cluster(need(p.k)),
                x_percent: p.x_percent.expect("checked above"),
                retain_count,
                saliency,
            },
            StrategyName::ClusterDynamic => Strategy::ClusterDynamic {
                cluster: cluster(p.k.unwrap_or(DEFAULT_DYNAMIC_K)),
                lambda: p.lambda.expect("checked above"),
                saliency,
            },
            StrategyName::ClusterCoarse => Strategy::ClusterCoarse {
                cluster: cluster(need(p.k)),
                x_percent: p.x_percent.expect("checked above"),
                saliency,
            },
            StrategyName::ClusterAggregate => Strategy::ClusterAggregate {
                cluster: cluster(need(p.k)),
                order: p.order.unwrap_or(OrderPolicy::Random),
            },
            StrategyName::Random => Strategy::Random {
                retain_count: need(retain_count),
                seed: p.seed.unwrap_or(0),
            },
            StrategyName::Spatial => Strategy::Spatial {
                retain_count: need(retain_count),
            },
        };
        Ok((strategy, warnings))
    }

    /// Sets one `key=value` parameter.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::invalid(format!("bad value '{v}' for `{key}`")))
        }
        let p = &mut self.params;
        match key {
            "k" => p.k = Some(num(key, value)?),
            "x" | "x_percent" => p.x_percent = Some(num(key, value)?),
            "lambda" => p.lambda = Some(num(key, value)?),
            "count" | "retain_count" => p.retain_count = Some(num(key, value)?),
            "frac" | "retain_frac" => p.retain_frac = Some(num(key, value)?),
            "seed" => p.seed = Some(num(key, value)?),
            "basis" => {
                p.basis = Some(match value {
                    "embeddings" => Basis::Embeddings,
                    "keys" => Basis::Keys,
                    _ => return Err(Error::invalid(format!("unknown basis '{value}'"))),
                })
            }
            "metric" => {
                p.metric = Some(match value {
                    "euclidean" => Metric::Euclidean,
                    "cosine" => Metric::Cosine,
                    _ => return Err(Error::invalid(format!("unknown metric '{value}'"))),
                })
            }
            "layer" => p.layer = Some(num(key, value)?),
            "order" => p.order = Some(value.parse()?),
            "scaled" => p.scaled = Some(num(key, value)?),
            "softmax_dim" => p.softmax_dim = Some(value.parse()?),
            "max_iters" => p.max_iters = Some(num(key, value)?),
            "tol" => p.tol = Some(num(key, value)?),
            other => return Err(Error::invalid(format!("unknown parameter `{other}`"))),
        }
        Ok(())
    }
}

/// Parses `name[:key=value,key=value...]`, e.g. `cluster-aggregate:k=64,seed=7`.
impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = StrategySpec::new(name.trim().parse()?);
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key=value, got '{pair}'")))?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.check()?;
        Ok(spec)
    }
}
