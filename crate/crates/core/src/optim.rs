//! Quasi-Newton minimization used by the registration step.

/// Settings for [`bfgs`].
#[derive(Clone, Copy, Debug)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once the infinity norm of the gradient drops below this value.
    pub gradient_tolerance: f64,
    /// Largest allowed change of any single variable per iteration.
    pub max_step: f64,
    /// Relative objective decrease below which an iteration counts as stalled.
    pub stall_tolerance: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iterations: 200, gradient_tolerance: 1e-8, max_step: 0.05, stall_tolerance: 1e-12 }
    }
}

#[derive(Clone, Debug)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` starting from `x0`. `f` writes the gradient into its second
/// argument and returns the objective value. The returned point is the best
/// one visited, so its value never exceeds the initial value.
pub fn bfgs<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let initial_value = fx;
    // inverse Hessian approximation, row-major
    let mut h = identity(n);
    let mut scaled = false;
    let mut stalls = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut d = vec![0.0; n];

    while iterations < opts.max_iterations {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= opts.gradient_tolerance {
            converged = true;
            break;
        }
        for i in 0..n {
            d[i] = -dot(&h[i * n..(i + 1) * n], &g);
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            h = identity(n);
            scaled = false;
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = dot(&g, &d);
        }
        let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut alpha = if dmax > opts.max_step { opts.max_step / dmax } else { 1.0 };
        iterations += 1;

        let mut accepted = None;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * alpha * slope {
                accepted = Some(f_new);
                break;
            }
            alpha *= 0.5;
        }
        let Some(f_new) = accepted else {
            // no descent along the quasi-Newton direction; retry once from
            // steepest descent before giving up
            if !scaled && h == identity(n) {
                break;
            }
            h = identity(n);
            scaled = false;
            continue;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h = identity(n);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            update_inverse_hessian(&mut h, &s, &y, sy);
        }

        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if decrease <= opts.stall_tolerance * fx.abs().max(f64::MIN_POSITIVE) {
            stalls += 1;
            if stalls >= 3 {
                converged = true;
                break;
            }
        } else {
            stalls = 0;
        }
    }
    BfgsResult { x, value: fx, initial_value, iterations, converged }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Central finite-difference gradient.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64, grad: &mut [f64])
where
    F: FnMut(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + step;
        let fp = f(&xp);
        xp[i] = xi - step;
        let fm = f(&xp);
        xp[i] = xi;
        grad[i] = (fp - fm) / (2.0 * step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let rosen = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let opts = BfgsOptions { max_iterations: 500, max_step: 0.5, ..Default::default() };
        let r = bfgs(rosen, &[-1.2, 1.0], &opts);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.value <= r.initial_value);
    }

    #[test]
    fn stationary_start_returns_immediately() {
        let r = bfgs(
            |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * x[0];
                x[0] * x[0]
            },
            &[0.0],
            &BfgsOptions::default(),
        );
        assert_eq!(r.iterations, 0);
        assert!(r.converged);
        assert_eq!(r.x, vec![0.0]);
    }

    #[test]
    fn central_difference_matches_quadratic_gradient() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + x[0] * x[1] - 2.0 * x[1];
        let mut g = [0.0; 2];
        central_difference(f, &[0.5, -1.0], 1e-6, &mut g);
        assert!((g[0] - 2.0).abs() < 1e-8);
        assert!((g[1] - (0.5 - 2.0)).abs() < 1e-8);
    }
}
