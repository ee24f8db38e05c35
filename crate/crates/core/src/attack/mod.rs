//! Minimal-perturbation attacks: the proximal log-barrier attack and a
//! projected gradient ascent baseline.

mod pgd;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use pgd::{cross_entropy_gradient, pgd_attack, pgd_minimal_epsilon, PgdConfig, PgdSearch};

use crate::error::{Error, Result};
use crate::model::{barrier_value, grad_log_barrier, Network};
use crate::prox::{l2_norm, prox_metric, ProxParams};
use crate::tensor::{box_project_slice, metric_eval, Image, Metric};

/// Noise used to find a misclassified starting point. Each rung of the ladder
/// is tried `max_init_tries` times before moving to the next, larger one.
#[derive(Debug, Clone, PartialEq)]
pub enum InitNoise {
    /// `x + σ·N(0, I)`, clipped to the box, for each `σ` in the ladder.
    Gaussian(Vec<f64>),
    /// `x + U(-a, a)` per component, clipped to the box, for each amplitude
    /// `a` in the ladder.
    Uniform(Vec<f64>),
}

impl InitNoise {
    pub fn gaussian() -> Self {
        InitNoise::Gaussian(vec![0.25, 0.5, 1.0, 2.0, 4.0])
    }

    pub fn uniform() -> Self {
        InitNoise::Uniform(vec![0.25, 0.5, 0.75, 1.0])
    }

    /// Uniform noise for ℓ∞ and ℓ0, Gaussian otherwise.
    pub fn default_for(metric: Metric) -> Self {
        match metric {
            Metric::Linf | Metric::L0 => Self::uniform(),
            _ => Self::gaussian(),
        }
    }

    fn ladder(&self) -> &[f64] {
        match self {
            InitNoise::Gaussian(l) | InitNoise::Uniform(l) => l,
        }
    }
}

/// How the misclassified starting point is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMethod {
    /// The noise ladder, then the gradient ascent if the ladder is exhausted.
    #[default]
    Noise,
    /// Gradient ascent from `x` only.
    Ascent,
}

impl fmt::Display for InitMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InitMethod::Noise => "noise",
            InitMethod::Ascent => "ascent",
        })
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noise" => Ok(InitMethod::Noise),
            "ascent" => Ok(InitMethod::Ascent),
            other => Err(Error::invalid(format!(
                "unknown init method '{other}' (expected noise or ascent)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub lambda0: f64,
    pub beta: f64,
    /// Gradient step size `h`.
    pub step: f64,
    /// Prox weight `μ`.
    pub mu: f64,
    /// Outer iteration count `K`.
    pub iterations: usize,
    /// Barrier weight schedule period `K_inner`.
    pub inner: usize,
    pub metric: Metric,
    pub init_method: InitMethod,
    pub init_noise: InitNoise,
    pub max_init_tries: usize,
    /// Cross-entropy ascent steps from `x`; 0 disables the ascent.
    pub init_ascent_steps: usize,
    /// Euclidean length of a normalized-gradient step for `Metric::L2`,
    /// per-component size of a sign step otherwise.
    pub init_ascent_step_size: f64,
    /// The attack succeeds once the true class leaves the top `k_top`.
    pub k_top: usize,
    /// Measure the margin on softmax probabilities instead of logits.
    pub use_softmax: bool,
    pub seed: u64,
    /// For `Metric::L0`, optimize with the ℓ1 prox but keep selecting and
    /// reporting by ℓ0.
    pub l1_substitute: bool,
    /// Keep a per-iteration [`TraceEntry`] log.
    pub record_trace: bool,
}

impl AttackConfig {
    /// Defaults: `λ0 = 0.1`, `β = 0.75`, `h = 0.1`, `μ = 1`, `K = 900`,
    /// `K_inner = 30`.
    pub fn new(metric: Metric) -> Self {
        Self {
            lambda0: 0.1,
            beta: 0.75,
            step: 0.1,
            mu: 1.0,
            iterations: 900,
            inner: 30,
            metric,
            init_method: InitMethod::Noise,
            init_noise: InitNoise::default_for(metric),
            max_init_tries: 10,
            init_ascent_steps: 250,
            init_ascent_step_size: if metric == Metric::L2 { 0.05 } else { 0.02 },
            k_top: 1,
            use_softmax: false,
            seed: 0,
            l1_substitute: false,
            record_trace: false,
        }
    }

    /// Total-variation preset: `μ = 5`, `K = 200`, `K_inner = 20`.
    pub fn tv() -> Self {
        Self {
            mu: 5.0,
            iterations: 200,
            inner: 20,
            ..Self::new(Metric::Tv)
        }
    }

    /// The usual configuration for a metric: [`AttackConfig::tv`] for TV,
    /// [`AttackConfig::new`] otherwise.
    pub fn preset(metric: Metric) -> Self {
        match metric {
            Metric::Tv => Self::tv(),
            m => Self::new(m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("lambda0", self.lambda0)?;
        positive("step", self.step)?;
        positive("mu", self.mu)?;
        positive("init_ascent_step_size", self.init_ascent_step_size)?;
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1), got {}", self.beta)));
        }
        if self.inner == 0 || self.k_top == 0 || self.max_init_tries == 0 {
            return Err(Error::invalid("inner, k_top and max_init_tries must be at least 1"));
        }
        if self.init_method == InitMethod::Ascent && self.init_ascent_steps == 0 {
            return Err(Error::invalid("ascent initialization needs init_ascent_steps > 0"));
        }
        let ladder = self.init_noise.ladder();
        if ladder.is_empty() || ladder.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("init noise ladder must be non-empty and positive"));
        }
        Ok(())
    }

    /// Barrier weight in effect at iteration `k`.
    pub fn lambda_at(&self, k: usize) -> f64 {
        self.lambda0 * self.beta.powi((k / self.inner) as i32)
    }
}

/// The reported dissimilarities between an adversarial image and the clean one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distances {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub tv: f64,
}

impl Distances {
    pub fn between(u: &Image, x: &Image) -> Result<Self> {
        Ok(Self {
            l0: metric_eval(Metric::L0, u, x)?,
            l1: metric_eval(Metric::L1, u, x)?,
            l2: metric_eval(Metric::L2, u, x)?,
            linf: metric_eval(Metric::Linf, u, x)?,
            tv: metric_eval(Metric::Tv, u, x)?,
        })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::L0 => self.l0,
            Metric::L1 => self.l1,
            Metric::L2 => self.l2,
            Metric::Linf => self.linf,
            Metric::Tv => self.tv,
        }
    }
}

/// State after one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub lambda: f64,
    /// Margin `F` at the accepted iterate.
    pub barrier: f64,
    /// Distance of the accepted iterate.
    pub distance: f64,
    /// Distance of the best iterate so far.
    pub best_distance: f64,
    /// Step fraction accepted by backtracking; 0 means the previous iterate
    /// was kept.
    pub step_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Image,
    pub success: bool,
    pub distances: Distances,
    pub iterations_used: usize,
    /// Iterations whose full step was rejected by backtracking.
    pub backtrack_count: usize,
    /// Attack metric at the starting point; NaN when initialization failed.
    pub init_distance: f64,
    pub trace: Option<Vec<TraceEntry>>,
}

impl AttackResult {
    pub(crate) fn failure(x: &Image) -> Result<Self> {
        Ok(Self {
            adversarial: x.clone(),
            success: false,
            distances: Distances::between(x, x)?,
            iterations_used: 0,
            backtrack_count: 0,
            init_distance: f64::NAN,
            trace: None,
        })
    }
}

fn misclassified(net: &Network, u: &Image, y: usize, k_top: usize, use_softmax: bool) -> Result<Option<f64>> {
    let f = barrier_value(&net.forward(u)?, y, k_top, use_softmax)?.value;
    Ok((f > 0.0).then_some(f))
}

/// A misclassified point in the box. [`InitMethod::Noise`] tries escalating
/// random noise around `x` and falls back to the ascent; the ascent climbs the
/// cross-entropy from `x` with normalized-gradient steps for ℓ2 and sign
/// steps otherwise, projecting onto the box. Returns `x` itself when it is
/// already misclassified.
pub fn initialize_misclassified(
    net: &Network,
    x: &Image,
    y: usize,
    cfg: &AttackConfig,
    rng: &mut impl Rng,
) -> Result<Image> {
    cfg.validate()?;
    if misclassified(net, x, y, cfg.k_top, cfg.use_softmax)?.is_some() {
        return Ok(x.clone());
    }
    let mut tries = 0;
    let ladder: &[f64] = match cfg.init_method {
        InitMethod::Noise => cfg.init_noise.ladder(),
        InitMethod::Ascent => &[],
    };
    for &scale in ladder {
        for _ in 0..cfg.max_init_tries {
            tries += 1;
            let noisy: Vec<f64> = x
                .as_slice()
                .iter()
                .map(|&v| {
                    let n = match cfg.init_noise {
                        InitNoise::Gaussian(_) => scale * rng.sample::<f64, _>(StandardNormal),
                        InitNoise::Uniform(_) => rng.gen_range(-scale..=scale),
                    };
                    v + n
                })
                .collect();
            let u = x.with_data(box_project_slice(&noisy)?)?;
            if misclassified(net, &u, y, cfg.k_top, cfg.use_softmax)?.is_some() {
                return Ok(u);
            }
        }
    }
    let mut u = x.clone();
    for _ in 0..cfg.init_ascent_steps {
        tries += 1;
        let g = cross_entropy_gradient(net, &u, y)?;
        let moved: Vec<f64> = if cfg.metric == Metric::L2 {
            let n = l2_norm(&g);
            if n == 0.0 {
                break;
            }
            u.as_slice()
                .iter()
                .zip(&g)
                .map(|(v, d)| v + cfg.init_ascent_step_size * d / n)
                .collect()
        } else {
            u.as_slice()
                .iter()
                .zip(&g)
                .map(|(v, d)| v + cfg.init_ascent_step_size * sign(*d))
                .collect()
        };
        let next = x.with_data(box_project_slice(&moved)?)?;
        if next == u {
            break;
        }
        u = next;
        if misclassified(net, &u, y, cfg.k_top, cfg.use_softmax)?.is_some() {
            return Ok(u);
        }
    }
    Err(Error::InitializationFailed { tries })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// The first point `u_prev + t (u_new - u_prev)` for `t = 1, 1/2, …, 2^-10`
/// that is misclassified, together with `t`; `(u_prev, 0)` if none is.
pub fn backtrack_to_feasible(
    u_new: &Image,
    u_prev: &Image,
    net: &Network,
    y: usize,
    k_top: usize,
    use_softmax: bool,
) -> Result<(Image, f64)> {
    u_new.ensure_same_shape(u_prev)?;
    if u_new == u_prev {
        return Ok((u_prev.clone(), 0.0));
    }
    let dir = u_new.sub(u_prev)?;
    let mut t = 1.0;
    for _ in 0..=10 {
        let cand = if t == 1.0 {
            u_new.clone()
        } else {
            let v: Vec<f64> = dir.iter().map(|d| t * d).collect();
            u_prev.offset(&v)?
        };
        if misclassified(net, &cand, y, k_top, use_softmax)?.is_some() {
            return Ok((cand, t));
        }
        t *= 0.5;
    }
    Ok((u_prev.clone(), 0.0))
}

/// Runs the proximal log-barrier attack on `(x, y)`.
///
/// Each iteration takes a gradient step on `λ·(-log F)`, applies the prox of
/// `μ·m(·; x)`, projects onto `[0, 1]`, backtracks towards the previous
/// iterate until misclassified, and keeps the closest iterate seen. An
/// initialization failure yields an unsuccessful result rather than an error.
pub fn prox_log_barrier_attack(net: &Network, x: &Image, y: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if x.shape() != net.input_shape() {
        return Err(Error::shape(net.input_shape(), x.shape()));
    }
    if !x.in_unit_box() {
        return Err(Error::invalid("clean image must lie in [0, 1]"));
    }
    if y >= net.class_count() {
        return Err(Error::invalid(format!("label {y} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u0 = match initialize_misclassified(net, x, y, cfg, &mut rng) {
        Ok(u) => u,
        Err(Error::InitializationFailed { .. }) => return AttackResult::failure(x),
        Err(e) => return Err(e),
    };
    let metric = cfg.metric;
    let prox_metric_kind = if cfg.l1_substitute && metric == Metric::L0 {
        Metric::L1
    } else {
        metric
    };
    let params = ProxParams::new(cfg.mu, x)?;
    let init_distance = metric_eval(metric, &u0, x)?;
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(cfg.iterations));

    let mut u = u0.clone();
    let mut best = u0;
    let mut best_distance = init_distance;
    let mut backtrack_count = 0;
    let mut iterations_used = 0;
    if best_distance > 0.0 {
        for k in 0..cfg.iterations {
            let lambda = cfg.lambda_at(k);
            let g = grad_log_barrier(net, &u, y, cfg.k_top, cfg.use_softmax)?;
            let scale = cfg.step * lambda;
            let z: Vec<f64> = u
                .as_slice()
                .iter()
                .zip(g.gradient.as_slice())
                .map(|(a, b)| a - scale * b)
                .collect();
            let z = u.with_data(z)?;
            let y_k = prox_metric(prox_metric_kind, &z, &params)?;
            let proposal = x.with_data(box_project_slice(y_k.as_slice())?)?;
            let (next, t) = backtrack_to_feasible(&proposal, &u, net, y, cfg.k_top, cfg.use_softmax)?;
            if t < 1.0 {
                backtrack_count += 1;
            }
            u = next;
            let distance = metric_eval(metric, &u, x)?;
            if distance < best_distance {
                best_distance = distance;
                best = u.clone();
            }
            iterations_used = k + 1;
            if let Some(trace) = trace.as_mut() {
                let barrier = barrier_value(&net.forward(&u)?, y, cfg.k_top, cfg.use_softmax)?.value;
                trace.push(TraceEntry {
                    lambda,
                    barrier,
                    distance,
                    best_distance,
                    step_fraction: t,
                });
            }
        }
    }
    let success = misclassified(net, &best, y, cfg.k_top, cfg.use_softmax)?.is_some() && best.in_unit_box();
    Ok(AttackResult {
        distances: Distances::between(&best, x)?,
        adversarial: best,
        success,
        iterations_used,
        backtrack_count,
        init_distance,
        trace,
    })
}

#[cfg(test)]
mod tests;
