//! Parameter sweeps. Independent runs fan out over rayon when the `parallel`
//! feature is on; results are collected in parameter order either way, so
//! both execution modes produce identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::metrics::{self, MetricsError, MonitorStats, SweepRow};
use crate::nodes::Activity;
use crate::scenario::{PrimaryConfig, ScenarioConfig, SecondaryConfig};
use crate::sensing::{self, DetectionConfig};
use crate::sim::engine::{self, SimError};
use crate::sim::medium::{Medium, PrimarySource};
use crate::types::{ChannelId, NodeId, TrafficClass};

/// Trials per independently seeded Monte-Carlo batch.
pub const TRIAL_BATCH: u64 = 1000;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        return Execution::Parallel;
        #[cfg(not(feature = "parallel"))]
        Execution::Sequential
    }
}

fn map_ordered<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
    }
}

/// Sample mean and the half-width of its Student-t 95% interval.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

fn z975() -> f64 {
    Normal::standard().inverse_cdf(0.975)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSweepConfig {
    pub min_nodes: u8,
    pub max_nodes: u8,
    pub frames: u64,
    pub seeds: u64,
    pub base_seed: u64,
    pub warmup: u64,
    /// Radio and primary settings; its secondaries are replaced per point.
    pub template: ScenarioConfig,
}

impl NodeSweepConfig {
    /// Perfect sensing, an always-on primary on the highest channel, and
    /// every node asking for a full data state.
    pub fn perfect_sensing(min_nodes: u8, max_nodes: u8, frames: u64, seeds: u64) -> Self {
        let template = ScenarioConfig::default();
        NodeSweepConfig {
            min_nodes,
            max_nodes,
            frames,
            seeds,
            base_seed: 0,
            warmup: metrics::DEFAULT_WARMUP_FRAMES,
            template: ScenarioConfig {
                primary: Some(PrimaryConfig {
                    channel: template.num_channels,
                    activity: Activity::AlwaysOn,
                    power_dbm: -50.0,
                }),
                ..template
            },
        }
    }

    pub fn scenario_for(&self, k: u8) -> ScenarioConfig {
        let n = self.template.slots_per_state;
        ScenarioConfig {
            secondaries: (1..=k)
                .map(|id| SecondaryConfig::new(id, TrafficClass::Normal, n))
                .collect(),
            frames: self.frames,
            ..self.template.clone()
        }
    }
}

/// One sweep run's numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub nodes: u8,
    pub seed: u64,
    pub per_node_throughput: Vec<f64>,
    pub jain: f64,
    pub monitor: MonitorStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSweepPoint {
    pub nodes: u8,
    pub runs: Vec<RunOutcome>,
    pub throughput: (f64, f64),
    pub jain: (f64, f64),
}

pub fn sweep_nodes(
    cfg: &NodeSweepConfig,
    exec: Execution,
) -> Result<Vec<NodeSweepPoint>, SweepError> {
    let n = cfg.template.slots_per_state;
    if cfg.min_nodes < 1 || cfg.min_nodes > cfg.max_nodes || cfg.max_nodes > n {
        return Err(SweepError::Usage(format!(
            "need 1 <= min <= max <= {n}, got min={} max={}",
            cfg.min_nodes, cfg.max_nodes
        )));
    }
    if cfg.seeds == 0 || cfg.frames <= cfg.warmup {
        return Err(SweepError::Usage(
            "need at least one seed and more frames than warm-up".to_string(),
        ));
    }
    let jobs: Vec<(u8, u64)> = (cfg.min_nodes..=cfg.max_nodes)
        .flat_map(|k| (0..cfg.seeds).map(move |s| (k, cfg.base_seed + s)))
        .collect();
    let results = map_ordered(
        exec,
        &jobs,
        |&(k, seed)| -> Result<RunOutcome, SweepError> {
            let log = engine::run(&cfg.scenario_for(k), seed, cfg.frames)?;
            let per_node = log
                .nodes()
                .into_iter()
                .map(|node| metrics::throughput(&log, node, cfg.warmup))
                .collect::<Result<Vec<_>, _>>()?;
            let jain = metrics::jain_index(&per_node)?;
            Ok(RunOutcome {
                nodes: k,
                seed,
                per_node_throughput: per_node,
                jain,
                monitor: log.monitor,
            })
        },
    );
    let results = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(results
        .chunks(cfg.seeds as usize)
        .map(|runs| {
            let tp: Vec<f64> = runs
                .iter()
                .map(|r| {
                    r.per_node_throughput.iter().sum::<f64>() / r.per_node_throughput.len() as f64
                })
                .collect();
            let jain: Vec<f64> = runs.iter().map(|r| r.jain).collect();
            NodeSweepPoint {
                nodes: runs[0].nodes,
                runs: runs.to_vec(),
                throughput: mean_ci95(&tp),
                jain: mean_ci95(&jain),
            }
        })
        .collect())
}

pub fn node_sweep_rows(points: &[NodeSweepPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .flat_map(|p| {
            [("throughput", p.throughput), ("jain", p.jain)].map(|(metric, (mean, ci95))| {
                SweepRow {
                    param: "nodes".to_string(),
                    value: f64::from(p.nodes),
                    metric: metric.to_string(),
                    mean,
                    ci95,
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingSweepConfig {
    pub nodes: Vec<usize>,
    pub sigma_db: f64,
    /// Distance of both the primary's and the noise's mean power from the
    /// threshold.
    pub margin_db: f64,
    pub threshold_dbm: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Shadowing that makes a single detection right with probability `q`
/// when both means sit `margin_db` from the threshold.
pub fn sigma_for_accuracy(q: f64, margin_db: f64) -> Option<f64> {
    if !(q > 0.5 && q < 1.0) || margin_db <= 0.0 {
        return None;
    }
    Some(margin_db / Normal::standard().inverse_cdf(q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensingPoint {
    pub nodes: usize,
    pub trials: u64,
    pub correct: u64,
    pub accuracy: f64,
    pub ci95: f64,
}

/// Correct fused decisions in one batch of trials. Each trial turns the
/// primary on with probability one half, lets `m` nodes sense it
/// independently and fuses their verdicts by majority.
fn sensing_batch(cfg: &SensingSweepConfig, m: usize, batch: u64, trials: u64) -> u64 {
    let ch = ChannelId::new(2).expect("channel 2");
    let mut medium = Medium::new(
        cfg.threshold_dbm - cfg.margin_db,
        cfg.sigma_db,
        cfg.threshold_dbm,
    )
    .with_primary(PrimarySource {
        channel: ch,
        power_dbm: cfg.threshold_dbm + cfg.margin_db,
    });
    let det = DetectionConfig {
        threshold_dbm: cfg.threshold_dbm,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((m as u64) << 32) | batch);
    let mut correct = 0;
    for _ in 0..trials {
        let active = rand::Rng::random_bool(&mut rng, 0.5);
        medium.set_primary_active(active);
        let reports: Vec<_> = (1..=m)
            .map(|i| sensing::sense_all(NodeId(i as u8), &[ch], &medium, &det, &mut rng))
            .collect();
        let fused = sensing::fuse_majority(&reports, &[ch]).expect("at least one report");
        if fused.empty_channels.contains(ch) != active {
            correct += 1;
        }
    }
    correct
}

pub fn sweep_sensing(
    cfg: &SensingSweepConfig,
    exec: Execution,
) -> Result<Vec<SensingPoint>, SweepError> {
    if cfg.nodes.is_empty()
        || cfg
            .nodes
            .iter()
            .any(|&m| m == 0 || m > usize::from(NodeId::MAX_SECONDARY))
    {
        return Err(SweepError::Usage(
            "node counts must be in 1..=254".to_string(),
        ));
    }
    if cfg.trials == 0 {
        return Err(SweepError::Usage("need at least one trial".to_string()));
    }
    if !(cfg.sigma_db.is_finite() && cfg.sigma_db >= 0.0) {
        return Err(SweepError::Usage(
            "sigma must be finite and non-negative".to_string(),
        ));
    }
    let batches = cfg.trials.div_ceil(TRIAL_BATCH);
    let jobs: Vec<(usize, u64)> = cfg
        .nodes
        .iter()
        .flat_map(|&m| (0..batches).map(move |b| (m, b)))
        .collect();
    let counts = map_ordered(exec, &jobs, |&(m, b)| {
        let size = TRIAL_BATCH.min(cfg.trials - b * TRIAL_BATCH);
        sensing_batch(cfg, m, b, size)
    });
    let z = z975();
    Ok(cfg
        .nodes
        .iter()
        .zip(counts.chunks(batches as usize))
        .map(|(&m, c)| {
            let correct: u64 = c.iter().sum();
            let p = correct as f64 / cfg.trials as f64;
            SensingPoint {
                nodes: m,
                trials: cfg.trials,
                correct,
                accuracy: p,
                ci95: z * (p * (1.0 - p) / cfg.trials as f64).sqrt(),
            }
        })
        .collect())
}

pub fn sensing_sweep_rows(points: &[SensingPoint]) -> Vec<SweepRow> {
    points
        .iter()
        .map(|p| SweepRow {
            param: "nodes".to_string(),
            value: p.nodes as f64,
            metric: "accuracy".to_string(),
            mean: p.accuracy,
            ci95: p.ci95,
        })
        .collect()
}
