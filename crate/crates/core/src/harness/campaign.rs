use std::fmt;
use std::io::{Read, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::attack::{prox_log_barrier_attack, AttackConfig};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::{Image, Metric};

/// One CSV row: the outcome of attacking one image under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub image_id: usize,
    pub true_label: usize,
    pub clean_pred: usize,
    pub metric: String,
    pub success: bool,
    pub distance_l0: f64,
    pub distance_l1: f64,
    pub distance_l2: f64,
    pub distance_linf: f64,
    pub distance_tv: f64,
    pub iterations: usize,
    pub backtracks: usize,
    pub seed: u64,
}

impl CampaignRecord {
    pub fn metric(&self) -> Result<Metric> {
        self.metric.parse()
    }

    pub fn distance(&self, metric: Metric) -> f64 {
        match metric {
            Metric::L0 => self.distance_l0,
            Metric::L1 => self.distance_l1,
            Metric::L2 => self.distance_l2,
            Metric::Linf => self.distance_linf,
            Metric::Tv => self.distance_tv,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignOutcome {
    pub record: CampaignRecord,
    /// `None` when the attack returned an error.
    pub adversarial: Option<Image>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CampaignOptions {
    pub sample_size: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

/// Attack seed for one image, derived from the configured seed so that each
/// image gets its own stream regardless of scheduling.
pub fn image_seed(seed: u64, image_id: usize) -> u64 {
    seed ^ (image_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Indices of `sample_size` distinct examples chosen with `seed`, in
/// ascending order.
pub fn sample_indices(len: usize, sample_size: usize, seed: u64) -> Result<Vec<usize>> {
    if sample_size > len {
        return Err(Error::invalid(format!("sample of {sample_size} from {len} examples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = index::sample(&mut rng, len, sample_size).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

fn attack_one(net: &Network, data: &Dataset, id: usize, cfg: &AttackConfig) -> Result<CampaignOutcome> {
    let ex = &data.examples[id];
    let clean_pred = net.predict(&ex.image)?;
    let cfg = AttackConfig {
        seed: image_seed(cfg.seed, id),
        ..cfg.clone()
    };
    let base = CampaignRecord {
        image_id: id,
        true_label: ex.label,
        clean_pred,
        metric: cfg.metric.name().to_owned(),
        success: false,
        distance_l0: f64::NAN,
        distance_l1: f64::NAN,
        distance_l2: f64::NAN,
        distance_linf: f64::NAN,
        distance_tv: f64::NAN,
        iterations: 0,
        backtracks: 0,
        seed: cfg.seed,
    };
    Ok(match prox_log_barrier_attack(net, &ex.image, ex.label, &cfg) {
        Ok(r) => CampaignOutcome {
            record: CampaignRecord {
                success: r.success,
                distance_l0: r.distances.l0,
                distance_l1: r.distances.l1,
                distance_l2: r.distances.l2,
                distance_linf: r.distances.linf,
                distance_tv: r.distances.tv,
                iterations: r.iterations_used,
                backtracks: r.backtrack_count,
                ..base
            },
            adversarial: Some(r.adversarial),
        },
        Err(_) => CampaignOutcome {
            record: base,
            adversarial: None,
        },
    })
}

/// Attacks a seeded sample of `data` with every config. Per-image attack
/// errors become unsuccessful rows; outcomes are ordered by image id, then by
/// config, independent of the worker count.
pub fn run_campaign(
    net: &Network,
    data: &Dataset,
    opts: &CampaignOptions,
    configs: &[AttackConfig],
) -> Result<Vec<CampaignOutcome>> {
    if data.shape() != net.input_shape() {
        return Err(Error::shape(net.input_shape(), data.shape()));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let ids = sample_indices(data.len(), opts.sample_size, opts.seed)?;
    let jobs: Vec<(usize, usize)> = ids
        .iter()
        .flat_map(|&id| (0..configs.len()).map(move |c| (id, c)))
        .collect();
    let run = || -> Result<Vec<CampaignOutcome>> {
        jobs.par_iter()
            .map(|&(id, c)| attack_one(net, data, id, &configs[c]))
            .collect()
    };
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::invalid(e.to_string()))?
            .install(run),
        None => run(),
    }
}

pub fn write_csv<W: Write>(
    records: impl IntoIterator<Item = impl std::borrow::Borrow<CampaignRecord>>,
    w: W,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r.borrow())?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<CampaignRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Default reporting thresholds for MNIST-scale images.
pub fn default_thresholds(metric: Metric) -> Vec<f64> {
    match metric {
        Metric::L0 => vec![10.0, 30.0],
        Metric::L1 => vec![5.0, 15.0],
        Metric::L2 => vec![1.25, 2.3],
        Metric::Linf => vec![0.1, 0.3],
        Metric::Tv => vec![1.0, 3.0],
    }
}

/// Median distance under the reporting convention: starred when some but
/// fewer than all attacks succeed, unattained when at most half do.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MedianDistance {
    Exact(f64),
    Starred(f64),
    Unattained,
}

impl MedianDistance {
    pub fn value(&self) -> Option<f64> {
        match *self {
            MedianDistance::Exact(v) | MedianDistance::Starred(v) => Some(v),
            MedianDistance::Unattained => None,
        }
    }
}

impl fmt::Display for MedianDistance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MedianDistance::Exact(v) => write!(f, "{}", fmt_num(*v)),
            MedianDistance::Starred(v) => write!(f, "{}*", fmt_num(*v)),
            MedianDistance::Unattained => f.write_str("-"),
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.4}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub metric: Metric,
    pub images: usize,
    pub clean_accuracy: f64,
    pub success_rate: f64,
    /// `(ε, fraction misclassified within ε)`, ascending in ε.
    pub error_rate_at: Vec<(f64, f64)>,
    pub median_distance: MedianDistance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub metrics: Vec<MetricSummary>,
}

/// Median of `values` where failures count as `+∞`; the mean of the two
/// middle values for even counts.
fn median_with_failures(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Aggregates rows per metric, in order of first appearance.
pub fn summarize(records: &[CampaignRecord], thresholds: impl Fn(Metric) -> Vec<f64>) -> Result<CampaignSummary> {
    let mut order: Vec<Metric> = Vec::new();
    for r in records {
        let m = r.metric()?;
        if !order.contains(&m) {
            order.push(m);
        }
    }
    let mut metrics = Vec::new();
    for metric in order {
        let rows: Vec<&CampaignRecord> = records.iter().filter(|r| r.metric().ok() == Some(metric)).collect();
        let n = rows.len() as f64;
        let achieved: Vec<f64> = rows
            .iter()
            .map(|r| if r.success { r.distance(metric) } else { f64::INFINITY })
            .collect();
        let successes = achieved.iter().filter(|d| d.is_finite()).count() as f64;
        let success_rate = successes / n;
        let mut eps = thresholds(metric);
        eps.sort_by(f64::total_cmp);
        let error_rate_at = eps
            .into_iter()
            .map(|e| (e, achieved.iter().filter(|&&d| d <= e).count() as f64 / n))
            .collect();
        let median_distance = if success_rate <= 0.5 {
            MedianDistance::Unattained
        } else if success_rate < 1.0 {
            MedianDistance::Starred(median_with_failures(achieved))
        } else {
            MedianDistance::Exact(median_with_failures(achieved))
        };
        metrics.push(MetricSummary {
            metric,
            images: rows.len(),
            clean_accuracy: rows.iter().filter(|r| r.clean_pred == r.true_label).count() as f64 / n,
            success_rate,
            error_rate_at,
            median_distance,
        });
    }
    Ok(CampaignSummary { metrics })
}

impl fmt::Display for CampaignSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# % error at ε includes clean misclassifications; * = not every attack succeeded, - = median unattained"
        )?;
        writeln!(
            f,
            "{:<6} {:>7} {:>10} {:>9}  {:<32} {:>10}",
            "metric", "images", "clean_acc", "success", "% error at ε", "median"
        )?;
        for m in &self.metrics {
            let errs: Vec<String> = m
                .error_rate_at
                .iter()
                .map(|(e, r)| format!("{}: {:.1}", fmt_num(*e), 100.0 * r))
                .collect();
            writeln!(
                f,
                "{:<6} {:>7} {:>9.1}% {:>8.1}%  {:<32} {:>10}",
                m.metric.name(),
                m.images,
                100.0 * m.clean_accuracy,
                100.0 * m.success_rate,
                errs.join("  "),
                m.median_distance.to_string()
            )?;
        }
        Ok(())
    }
}
