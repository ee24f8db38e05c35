//! Proximal operators of the ℓp dissimilarities, ball projections and a
//! fixed-step proximal gradient solver for `f + g` composite problems.
//!
//! Every `prox_*_dist` operator evaluates
//!
//! ```text
//! argmin_u  mu * m(u; x) + 0.5 * ||u - z||_2^2
//! ```
//!
//! where `x` is the anchor (the clean image).

use crate::error::{Error, Result};
use crate::tensor::{Image, Metric};
use crate::tv;

/// Weight and anchor of `Prox_{mu m(.; x)}`.
#[derive(Debug, Clone, Copy)]
pub struct ProxParams<'a> {
    mu: f64,
    anchor: &'a Image,
}

impl<'a> ProxParams<'a> {
    pub fn new(mu: f64, anchor: &'a Image) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::invalid(format!("prox weight must be positive, got {mu}")));
        }
        Ok(Self { mu, anchor })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn anchor(&self) -> &'a Image {
        self.anchor
    }
}

/// `sign(s) * max(|s| - mu, 0)`, componentwise.
pub fn soft_threshold(s: &[f64], mu: f64) -> Vec<f64> {
    s.iter()
        .map(|&v| v.signum() * (v.abs() - mu).max(0.0))
        .map(|v| if v == 0.0 { 0.0 } else { v })
        .collect()
}

/// Keeps `s_i` when `|s_i| > alpha` strictly, zeroes it otherwise.
pub fn hard_threshold(s: &[f64], alpha: f64) -> Vec<f64> {
    s.iter().map(|&v| if v.abs() > alpha { v } else { 0.0 }).collect()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{u : ||u||_1 <= radius}`.
///
/// Sort-based: with `a` the magnitudes sorted in decreasing order, the
/// threshold is `theta = (sum_{j<=rho} a_j - radius) / rho` where `rho` is the
/// largest index with `a_rho > (sum_{j<=rho} a_j - radius) / rho`. The result
/// is the soft threshold of `v` at `theta`.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    debug_assert!(radius > 0.0);
    if l1_norm(v) <= radius {
        return v.to_vec();
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));

    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &a) in mags.iter().enumerate() {
        cumsum += a;
        let candidate = (cumsum - radius) / (j + 1) as f64;
        if a > candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    let mut out = soft_threshold(v, theta);
    // Rounding in the running sum can leave the norm a few ulps above the
    // radius; a relative rescale restores feasibility.
    let norm = l1_norm(&out);
    if norm > radius {
        let scale = radius / norm;
        out.iter_mut().for_each(|x| *x *= scale);
    }
    out
}

/// Euclidean projection onto `{u : ||u||_2 <= radius}`.
pub fn project_l2_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let norm = l2_norm(v);
    if norm <= radius {
        v.to_vec()
    } else {
        let scale = radius / norm;
        v.iter().map(|x| x * scale).collect()
    }
}

fn residual(z: &Image, p: &ProxParams<'_>) -> Result<Vec<f64>> {
    z.sub(p.anchor)
}

/// `x + T_mu(z - x)`.
pub fn prox_l1_dist(z: &Image, p: &ProxParams<'_>) -> Result<Image> {
    let r = residual(z, p)?;
    p.anchor.offset(&soft_threshold(&r, p.mu))
}

/// `z - mu * Proj_{B2}((z - x) / mu)`.
pub fn prox_l2_dist(z: &Image, p: &ProxParams<'_>) -> Result<Image> {
    let r = residual(z, p)?;
    let scaled: Vec<f64> = r.iter().map(|v| v / p.mu).collect();
    let proj = project_l2_ball(&scaled, 1.0);
    let data = z.as_slice().iter().zip(&proj).map(|(zi, q)| zi - p.mu * q).collect();
    z.with_data(data)
}

/// `z - mu * Proj_{B1}((z - x) / mu)` (Moreau decomposition of the ℓ∞ prox).
pub fn prox_linf_dist(z: &Image, p: &ProxParams<'_>) -> Result<Image> {
    let r = residual(z, p)?;
    let scaled: Vec<f64> = r.iter().map(|v| v / p.mu).collect();
    let proj = project_l1_ball(&scaled, 1.0);
    let data = z.as_slice().iter().zip(&proj).map(|(zi, q)| zi - p.mu * q).collect();
    z.with_data(data)
}

/// `x + H_{sqrt(2 mu)}(z - x)`. Ties at the threshold resolve to `x`.
pub fn prox_l0_dist(z: &Image, p: &ProxParams<'_>) -> Result<Image> {
    let r = residual(z, p)?;
    p.anchor.offset(&hard_threshold(&r, (2.0 * p.mu).sqrt()))
}

/// Dispatches to the prox of `mu * m(.; x)` for any metric. The TV prox is an
/// iterative solver; its convergence flag is dropped here.
pub fn prox_metric(metric: Metric, z: &Image, p: &ProxParams<'_>) -> Result<Image> {
    match metric {
        Metric::L0 => prox_l0_dist(z, p),
        Metric::L1 => prox_l1_dist(z, p),
        Metric::L2 => prox_l2_dist(z, p),
        Metric::Linf => prox_linf_dist(z, p),
        Metric::Tv => tv::prox_tv_dist(z, p).map(|out| out.image),
    }
}

/// `min_v f(v) + g(v)` with `f` smooth (`L`-Lipschitz gradient) and `g` having
/// a computable prox.
pub trait CompositeProblem {
    fn smooth_value(&self, v: &[f64]) -> f64;
    fn smooth_gradient(&self, v: &[f64]) -> Vec<f64>;
    fn nonsmooth_value(&self, v: &[f64]) -> f64;
    /// `Prox_{step * g}(v)`.
    fn nonsmooth_prox(&self, v: &[f64], step: f64) -> Vec<f64>;
    fn lipschitz_bound(&self) -> f64;

    fn objective(&self, v: &[f64]) -> f64 {
        self.smooth_value(v) + self.nonsmooth_value(v)
    }
}

#[derive(Debug, Clone)]
pub struct ProxGradientOutput {
    pub solution: Vec<f64>,
    /// `Φ(x^k)` for `k = 0..=iterations`.
    pub trace: Vec<f64>,
    /// `||x - Prox_{step g}(x - step ∇f(x))||_2` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

fn prox_gradient_step<P: CompositeProblem + ?Sized>(prob: &P, x: &[f64], step: f64) -> Vec<f64> {
    let grad = prob.smooth_gradient(x);
    let forward: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - step * gi).collect();
    prob.nonsmooth_prox(&forward, step)
}

/// Runs `x^{k+1} = Prox_{step g}(x^k - step ∇f(x^k))` for `iters` steps, or
/// until an exact fixed point is reached.
pub fn prox_gradient_solve<P: CompositeProblem + ?Sized>(
    prob: &P,
    x0: &[f64],
    step: f64,
    iters: usize,
) -> Result<ProxGradientOutput> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(format!("step must be positive, got {step}")));
    }
    if iters == 0 {
        return Err(Error::invalid("iteration count must be at least 1"));
    }
    let mut x = x0.to_vec();
    let phi0 = prob.objective(&x);
    if !phi0.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut trace = vec![phi0];
    let mut done = 0;
    for k in 1..=iters {
        let next = prox_gradient_step(prob, &x, step);
        let phi = prob.objective(&next);
        if !phi.is_finite() || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { iteration: k });
        }
        trace.push(phi);
        done = k;
        let fixed = next == x;
        x = next;
        if fixed {
            break;
        }
    }
    let probe = prox_gradient_step(prob, &x, step);
    let residual = x.iter().zip(&probe).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(ProxGradientOutput {
        solution: x,
        trace,
        residual,
        iterations: done,
    })
}

/// `0.5 ||A u - b||^2 + lambda ||u||_1` with a dense row-major `A`.
#[derive(Debug, Clone)]
pub struct Lasso {
    rows: usize,
    cols: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    lambda: f64,
    lipschitz: f64,
}

impl Lasso {
    pub fn new(rows: usize, cols: usize, a: Vec<f64>, b: Vec<f64>, lambda: f64) -> Result<Self> {
        if a.len() != rows * cols || b.len() != rows {
            return Err(Error::shape(
                format!("{rows}x{cols} matrix and {rows}-vector"),
                format!("{} and {} entries", a.len(), b.len()),
            ));
        }
        if lambda < 0.0 {
            return Err(Error::invalid("lambda must be non-negative"));
        }
        let mut lasso = Self {
            rows,
            cols,
            a,
            b,
            lambda,
            lipschitz: 0.0,
        };
        lasso.lipschitz = lasso.gram_spectral_norm();
        Ok(lasso)
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| {
                self.a[i * self.cols..(i + 1) * self.cols]
                    .iter()
                    .zip(u)
                    .map(|(a, x)| a * x)
                    .sum()
            })
            .collect()
    }

    fn apply_transpose(&self, r: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (i, ri) in r.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.a[i * self.cols + j] * ri;
            }
        }
        out
    }

    /// Largest eigenvalue of `A^T A` by power iteration.
    fn gram_spectral_norm(&self) -> f64 {
        let mut v = vec![1.0 / (self.cols as f64).sqrt(); self.cols];
        let mut estimate = 0.0;
        for _ in 0..1000 {
            let w = self.apply_transpose(&self.apply(&v));
            let norm = l2_norm(&w);
            if norm == 0.0 {
                return 0.0;
            }
            estimate = norm;
            v = w.into_iter().map(|x| x / norm).collect();
        }
        estimate
    }
}

impl CompositeProblem for Lasso {
    fn smooth_value(&self, v: &[f64]) -> f64 {
        let r = self.apply(v);
        0.5 * r.iter().zip(&self.b).map(|(ri, bi)| (ri - bi).powi(2)).sum::<f64>()
    }

    fn smooth_gradient(&self, v: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.apply(v).iter().zip(&self.b).map(|(ri, bi)| ri - bi).collect();
        self.apply_transpose(&r)
    }

    fn nonsmooth_value(&self, v: &[f64]) -> f64 {
        self.lambda * l1_norm(v)
    }

    fn nonsmooth_prox(&self, v: &[f64], step: f64) -> Vec<f64> {
        soft_threshold(v, step * self.lambda)
    }

    fn lipschitz_bound(&self) -> f64 {
        self.lipschitz
    }
}
