use super::{sign, AttackResult, Distances};
use crate::error::{Error, Result};
use crate::model::{softmax, Network};
use crate::prox::{l2_norm, project_l2_ball};
use crate::tensor::{box_project_slice, Image, Metric};

/// Projected gradient ascent on the cross-entropy loss inside an ε-ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    /// Length of each ascent step: `ℓ2` length of a normalized gradient step
    /// or the size of a sign step for `ℓ∞`.
    pub step_size: f64,
    /// `Metric::L2` or `Metric::Linf`.
    pub metric: Metric,
}

/// Gradient of the cross-entropy loss `-log softmax(z(u))_y` with respect to
/// the input.
pub fn cross_entropy_gradient(net: &Network, u: &Image, y: usize) -> Result<Vec<f64>> {
    let z = net.forward(u)?;
    if y >= z.len() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let mut g = softmax(z.as_slice());
    g[y] -= 1.0;
    net.input_gradient(u, &g)
}

/// Starts at `x` and ascends until misclassified or `steps` are spent,
/// projecting the perturbation onto the ε-ball and the image onto the box
/// after every step.
pub fn pgd_attack(net: &Network, x: &Image, y: usize, cfg: &PgdConfig) -> Result<AttackResult> {
    if !matches!(cfg.metric, Metric::L2 | Metric::Linf) {
        return Err(Error::invalid(format!("pgd supports l2 and linf, not {}", cfg.metric)));
    }
    if !(cfg.epsilon >= 0.0) || !(cfg.step_size >= 0.0) {
        return Err(Error::invalid("epsilon and step size must be non-negative"));
    }
    let mut u = x.clone();
    let mut used = 0;
    let wrong = |u: &Image| -> Result<bool> { Ok(net.predict(u)? != y) };
    if cfg.epsilon > 0.0 && !wrong(&u)? {
        for step in 0..cfg.steps {
            let g = cross_entropy_gradient(net, &u, y)?;
            let moved: Vec<f64> = match cfg.metric {
                Metric::L2 => {
                    let n = l2_norm(&g);
                    if n == 0.0 {
                        break;
                    }
                    u.as_slice()
                        .iter()
                        .zip(&g)
                        .map(|(a, b)| a + cfg.step_size * b / n)
                        .collect()
                }
                _ => u
                    .as_slice()
                    .iter()
                    .zip(&g)
                    .map(|(a, b)| a + cfg.step_size * sign(*b))
                    .collect(),
            };
            let delta: Vec<f64> = moved.iter().zip(x.as_slice()).map(|(a, b)| a - b).collect();
            let delta = match cfg.metric {
                Metric::L2 => project_l2_ball(&delta, cfg.epsilon),
                _ => delta.iter().map(|d| d.clamp(-cfg.epsilon, cfg.epsilon)).collect(),
            };
            let next: Vec<f64> = x.as_slice().iter().zip(&delta).map(|(a, d)| a + d).collect();
            u = x.with_data(box_project_slice(&next)?)?;
            used = step + 1;
            if wrong(&u)? {
                break;
            }
        }
    }
    Ok(AttackResult {
        success: wrong(&u)?,
        distances: Distances::between(&u, x)?,
        adversarial: u,
        iterations_used: used,
        backtrack_count: 0,
        init_distance: 0.0,
        trace: None,
    })
}

/// Bisection over ε for the smallest budget at which PGD succeeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdSearch {
    pub metric: Metric,
    pub steps: usize,
    /// Step size as a multiple of `ε / steps`.
    pub step_factor: f64,
    /// Upper end of the search interval.
    pub epsilon_max: f64,
    pub bisections: usize,
}

impl PgdSearch {
    pub fn new(metric: Metric, epsilon_max: f64) -> Self {
        Self {
            metric,
            steps: 40,
            step_factor: 2.5,
            epsilon_max,
            bisections: 20,
        }
    }

    fn config(&self, epsilon: f64) -> PgdConfig {
        PgdConfig {
            epsilon,
            steps: self.steps,
            step_size: self.step_factor * epsilon / self.steps as f64,
            metric: self.metric,
        }
    }
}

/// Smallest ε (up to bisection resolution) at which PGD succeeds, with the
/// result at that ε; `None` if it fails even at `epsilon_max`.
pub fn pgd_minimal_epsilon(
    net: &Network,
    x: &Image,
    y: usize,
    search: &PgdSearch,
) -> Result<Option<(f64, AttackResult)>> {
    if net.predict(x)? != y {
        return Ok(Some((0.0, pgd_attack(net, x, y, &search.config(0.0))?)));
    }
    let top = pgd_attack(net, x, y, &search.config(search.epsilon_max))?;
    if !top.success {
        return Ok(None);
    }
    let (mut lo, mut hi, mut best) = (0.0, search.epsilon_max, top);
    for _ in 0..search.bisections {
        let mid = 0.5 * (lo + hi);
        let r = pgd_attack(net, x, y, &search.config(mid))?;
        if r.success {
            hi = mid;
            best = r;
        } else {
            lo = mid;
        }
    }
    Ok(Some((hi, best)))
}
