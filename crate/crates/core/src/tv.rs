//! Anisotropic total variation: the forward-difference operator, the TV
//! seminorm and its proximal operator.

use crate::error::Result;
use crate::prox::ProxParams;
use crate::tensor::{Image, Shape};

/// Stopping threshold on the ℓ∞ change between successive splitting sweeps.
pub const TV_PROX_TOLERANCE: f64 = 1e-8;
pub const TV_PROX_MAX_SWEEPS: usize = 200;

/// Forward differences of an image. `dx` differences along rows (vertical
/// neighbour `i + 1`), `dy` along columns (horizontal neighbour `j + 1`). Both
/// vanish at the far boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub shape: Shape,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

impl GradientField {
    /// `||Mv||_{1,1}`.
    pub fn l1_norm(&self) -> f64 {
        self.dx.iter().chain(&self.dy).map(|d| d.abs()).sum()
    }
}

pub fn finite_difference(v: &Image) -> GradientField {
    finite_difference_slice(v.as_slice(), v.shape())
}

fn finite_difference_slice(v: &[f64], shape: Shape) -> GradientField {
    let (h, w) = (shape.height, shape.width);
    let mut dx = vec![0.0; shape.len()];
    let mut dy = vec![0.0; shape.len()];
    for c in 0..shape.channels {
        let base = c * h * w;
        for i in 0..h {
            for j in 0..w {
                let at = base + i * w + j;
                if i + 1 < h {
                    dx[at] = v[at + w] - v[at];
                }
                if j + 1 < w {
                    dy[at] = v[at + 1] - v[at];
                }
            }
        }
    }
    GradientField { shape, dx, dy }
}

/// Anisotropic TV summed over channels.
pub fn tv_seminorm(v: &Image) -> f64 {
    tv_seminorm_slice(v.as_slice(), v.shape())
}

pub(crate) fn tv_seminorm_slice(v: &[f64], shape: Shape) -> f64 {
    let (h, w) = (shape.height, shape.width);
    let mut total = 0.0;
    for c in 0..shape.channels {
        total += plane_tv(&v[c * h * w..(c + 1) * h * w], h, w);
    }
    total
}

fn plane_tv(p: &[f64], h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..h {
        for j in 0..w {
            let at = i * w + j;
            if i + 1 < h {
                total += (p[at + w] - p[at]).abs();
            }
            if j + 1 < w {
                total += (p[at + 1] - p[at]).abs();
            }
        }
    }
    total
}

/// Exact minimizer of `0.5 ||u - v||^2 + mu * sum_i |u_{i+1} - u_i|`.
///
/// Direct non-iterative scan (Condat's algorithm): segments are grown left to
/// right while tracking the range of admissible segment values, and emitted
/// as soon as a jump becomes unavoidable.
pub fn tv_prox_1d(v: &[f64], mu: f64) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    tv_prox_1d_into(v, mu, &mut out);
    out
}

fn tv_prox_1d_into(input: &[f64], lambda: f64, out: &mut [f64]) {
    let n = input.len();
    debug_assert_eq!(out.len(), n);
    // Constant signals are fixed points; returning them verbatim avoids the
    // rounding of the `v - lambda + lambda` round trip below.
    if n <= 1 || lambda <= 0.0 || input.iter().all(|&x| x == input[0]) {
        out.copy_from_slice(input);
        return;
    }
    let last = n - 1;
    let (mut k, mut k0, mut kplus, mut kminus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = lambda;
    let mut umax = -lambda;
    let mut vmin = input[0] - lambda;
    let mut vmax = input[0] + lambda;
    let two_lambda = 2.0 * lambda;

    loop {
        while k == last {
            if umin < 0.0 {
                // segment value too high: emit it and restart after kminus
                loop {
                    out[k0] = vmin;
                    k0 += 1;
                    if k0 > kminus {
                        break;
                    }
                }
                k = k0;
                kminus = k0;
                vmin = input[k0];
                umin = lambda;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                loop {
                    out[k0] = vmax;
                    k0 += 1;
                    if k0 > kplus {
                        break;
                    }
                }
                k = k0;
                kplus = k0;
                vmax = input[k0];
                umax = -lambda;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                for o in &mut out[k0..=k] {
                    *o = vmin;
                }
                return;
            }
        }
        umin += input[k + 1] - vmin;
        if umin < -lambda {
            // negative jump
            loop {
                out[k0] = vmin;
                k0 += 1;
                if k0 > kminus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmin = input[k0];
            vmax = vmin + two_lambda;
            umin = lambda;
            umax = -lambda;
            continue;
        }
        umax += input[k + 1] - vmax;
        if umax > lambda {
            // positive jump
            loop {
                out[k0] = vmax;
                k0 += 1;
                if k0 > kplus {
                    break;
                }
            }
            k = k0;
            kplus = k0;
            kminus = k0;
            vmax = input[k0];
            vmin = vmax - two_lambda;
            umin = lambda;
            umax = -lambda;
        } else {
            k += 1;
            if umin >= lambda {
                kminus = k;
                vmin += (umin - lambda) / (k - k0 + 1) as f64;
                umin = lambda;
            }
            if umax <= -lambda {
                kplus = k;
                vmax += (umax + lambda) / (k - k0 + 1) as f64;
                umax = -lambda;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TvProxOutput {
    pub image: Image,
    pub converged: bool,
    /// Largest sweep count used over all channels.
    pub sweeps: usize,
}

/// `Prox_{mu ||. - x||_TV}(z) = x + Prox_{mu TV}(z - x)`, channel by channel.
///
/// The 2D anisotropic prox splits into a row term and a column term, each an
/// independent set of 1D problems solved exactly by [`tv_prox_1d`]. The two
/// are combined with the Dykstra-like proximal splitting
///
/// ```text
/// y = prox_rows(u + p);  p = u + p - y
/// u = prox_cols(y + q);  q = y + q - u
/// ```
///
/// until `||u_new - u_old||_∞ < 1e-8` or 200 sweeps. On non-convergence the
/// iterate with the lowest objective is returned and `converged` is false.
pub fn prox_tv_dist(z: &Image, p: &ProxParams<'_>) -> Result<TvProxOutput> {
    let shape = z.shape();
    let residual = z.sub(p.anchor())?;
    let plane = shape.plane();
    let mut solved = vec![0.0; residual.len()];
    let mut converged = true;
    let mut sweeps = 0;
    for c in 0..shape.channels {
        let range = c * plane..(c + 1) * plane;
        let stats = prox_tv_plane(
            &residual[range.clone()],
            shape.height,
            shape.width,
            p.mu(),
            &mut solved[range],
        );
        converged &= stats.0;
        sweeps = sweeps.max(stats.1);
    }
    let image = p.anchor().offset(&solved)?;
    Ok(TvProxOutput {
        image,
        converged,
        sweeps,
    })
}

fn plane_objective(u: &[f64], r: &[f64], h: usize, w: usize, mu: f64) -> f64 {
    let fit: f64 = u.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum();
    0.5 * fit + mu * plane_tv(u, h, w)
}

fn prox_rows(src: &[f64], h: usize, w: usize, mu: f64, dst: &mut [f64]) {
    for i in 0..h {
        tv_prox_1d_into(&src[i * w..(i + 1) * w], mu, &mut dst[i * w..(i + 1) * w]);
    }
}

fn prox_cols(src: &[f64], h: usize, w: usize, mu: f64, dst: &mut [f64], col: &mut [f64], buf: &mut [f64]) {
    for j in 0..w {
        for i in 0..h {
            col[i] = src[i * w + j];
        }
        tv_prox_1d_into(col, mu, buf);
        for i in 0..h {
            dst[i * w + j] = buf[i];
        }
    }
}

/// Solves one channel; returns (converged, sweeps).
fn prox_tv_plane(r: &[f64], h: usize, w: usize, mu: f64, out: &mut [f64]) -> (bool, usize) {
    // A single row or column is a 1D problem with an exact solution.
    if h == 1 || w == 1 {
        tv_prox_1d_into(r, mu, out);
        return (true, 1);
    }
    let n = r.len();
    let mut u = r.to_vec();
    let mut y = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut col = vec![0.0; h];
    let mut buf = vec![0.0; h];

    let mut best = (f64::INFINITY, u.clone());
    for sweep in 1..=TV_PROX_MAX_SWEEPS {
        for i in 0..n {
            a[i] = u[i] + p[i];
        }
        prox_rows(&a, h, w, mu, &mut y);
        for i in 0..n {
            p[i] = a[i] - y[i];
            a[i] = y[i] + q[i];
        }
        prox_cols(&a, h, w, mu, &mut next, &mut col, &mut buf);
        let mut change = 0.0f64;
        for i in 0..n {
            q[i] = a[i] - next[i];
            change = change.max((next[i] - u[i]).abs());
        }
        std::mem::swap(&mut u, &mut next);
        if change < TV_PROX_TOLERANCE {
            out.copy_from_slice(&u);
            return (true, sweep);
        }
        let obj = plane_objective(&u, r, h, w, mu);
        if obj < best.0 {
            best.0 = obj;
            best.1.copy_from_slice(&u);
        }
    }
    out.copy_from_slice(&best.1);
    (false, TV_PROX_MAX_SWEEPS)
}
