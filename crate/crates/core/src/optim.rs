// BFGS with a strong-Wolfe line search, sized for the small convex problems
// of the trial-assignment fit. The line search also accepts the approximate
// Wolfe conditions of Hager and Zhang so it keeps making progress once
// function differences fall below rounding error.

pub(crate) struct BfgsOptions {
    pub max_iter: usize,
    /// Stop as soon as any coordinate of the iterate exceeds this in magnitude.
    pub divergence_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum BfgsStatus {
    Converged,
    MaxIterations,
    Diverged,
    LineSearchFailed,
}

pub(crate) struct BfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: BfgsStatus,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const APPROX_EPS: f64 = 1e-12;
const MAX_LINE_EVALS: usize = 60;

/// Minimises `objective` from `x0`. The objective writes the gradient into its
/// second argument and returns the value (non-finite values reject a step).
/// `stop` is checked on every accepted iterate.
pub(crate) fn minimize<F, S>(mut objective: F, x0: Vec<f64>, opts: &BfgsOptions, stop: S) -> BfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    S: Fn(f64, &[f64]) -> bool,
{
    let p = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; p];
    let mut f = objective(&x, &mut g);
    let mut h = identity(p);
    let mut scaled = false;

    let mut x_new = vec![0.0; p];
    let mut g_new = vec![0.0; p];
    let mut dir = vec![0.0; p];

    let mut iterations = 0;
    let status = loop {
        if !f.is_finite() {
            break BfgsStatus::LineSearchFailed;
        }
        if stop(f, &g) {
            break BfgsStatus::Converged;
        }
        if iterations >= opts.max_iter {
            break BfgsStatus::MaxIterations;
        }

        mat_vec_neg(&h, &g, &mut dir);
        let mut slope = dot(&g, &dir);
        if slope.partial_cmp(&0.0) != Some(std::cmp::Ordering::Less) {
            h = identity(p);
            scaled = false;
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -dot(&g, &g);
        }
        let first_step = if scaled {
            1.0
        } else {
            (1.0 / inf_norm(&g)).min(1.0)
        };

        let Some((step, f_new)) = line_search(
            &mut objective,
            &x,
            f,
            slope,
            &dir,
            first_step,
            &mut x_new,
            &mut g_new,
        ) else {
            break BfgsStatus::LineSearchFailed;
        };
        iterations += 1;

        // s = step * dir, y = g_new - g
        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if !scaled {
                let gamma = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= gamma);
                scaled = true;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;

        if inf_norm(&x) > opts.divergence_bound {
            break BfgsStatus::Diverged;
        }
    };

    BfgsOutcome {
        x,
        f,
        grad: g,
        iterations,
        status,
    }
}

#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    first_step: f64,
    x_out: &mut [f64],
    g_out: &mut [f64],
) -> Option<(f64, f64)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut eval = |alpha: f64, x_out: &mut [f64], g_out: &mut [f64]| {
        for ((xo, xi), d) in x_out.iter_mut().zip(x).zip(dir) {
            *xo = xi + alpha * d;
        }
        let f = objective(x_out, g_out);
        let slope = dot(g_out, dir);
        (f, slope)
    };
    let armijo = |alpha: f64, f: f64| f <= f0 + C1 * alpha * slope0;
    let curvature = |slope: f64| slope.abs() <= -C2 * slope0;
    let approx_wolfe = |f: f64, slope: f64| {
        f <= f0 + APPROX_EPS * f0.abs() && slope >= C2 * slope0 && slope <= (1.0 - 2.0 * C1) * -slope0
    };

    // Bracketing phase.
    let (mut lo, mut f_lo, mut s_lo) = (0.0, f0, slope0);
    let mut hi: Option<(f64, f64, f64)> = None;
    let mut alpha = first_step;
    let mut evals = 0;
    while evals < MAX_LINE_EVALS {
        evals += 1;
        let (f, slope) = eval(alpha, x_out, g_out);
        if f.is_finite() && slope.is_finite() {
            if (armijo(alpha, f) && curvature(slope)) || approx_wolfe(f, slope) {
                return Some((alpha, f));
            }
            if !armijo(alpha, f) || f >= f_lo {
                hi = Some((alpha, f, slope));
                break;
            }
            if slope >= 0.0 {
                hi = Some((lo, f_lo, s_lo));
                lo = alpha;
                f_lo = f;
                s_lo = slope;
                break;
            }
            lo = alpha;
            f_lo = f;
            s_lo = slope;
            alpha *= 2.0;
        } else {
            hi = Some((alpha, f64::INFINITY, f64::NAN));
            break;
        }
    }
    let (mut a_hi, mut f_hi, mut s_hi) = hi?;

    // Zoom phase: lo always satisfies Armijo and has the lowest value seen.
    while evals < MAX_LINE_EVALS {
        evals += 1;
        let width = a_hi - lo;
        let mut trial = lo + 0.5 * width;
        if s_hi.is_finite() && f_hi.is_finite() && s_lo < 0.0 && s_hi > 0.0 {
            // secant on the directional derivative
            let secant = lo - s_lo * (a_hi - lo) / (s_hi - s_lo);
            let (a, b) = if lo < a_hi { (lo, a_hi) } else { (a_hi, lo) };
            let margin = 0.1 * (b - a);
            if secant > a + margin && secant < b - margin {
                trial = secant;
            }
        }
        let (f, slope) = eval(trial, x_out, g_out);
        if !(f.is_finite() && slope.is_finite()) {
            a_hi = trial;
            f_hi = f64::INFINITY;
            s_hi = f64::NAN;
            continue;
        }
        if (armijo(trial, f) && curvature(slope)) || approx_wolfe(f, slope) {
            return Some((trial, f));
        }
        if !armijo(trial, f) || f >= f_lo {
            a_hi = trial;
            f_hi = f;
            s_hi = slope;
        } else {
            if slope * (a_hi - lo) >= 0.0 {
                a_hi = lo;
                f_hi = f_lo;
                s_hi = s_lo;
            }
            lo = trial;
            f_lo = f;
            s_lo = slope;
        }
        if (a_hi - lo).abs() <= f64::EPSILON * lo.abs().max(1.0) {
            break;
        }
    }

    // Fall back to the best Armijo point found if it moved at all.
    if lo > 0.0 && f_lo < f0 {
        let (f, _) = eval(lo, x_out, g_out);
        return Some((lo, f));
    }
    None
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    // H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let p = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p)
        .map(|i| (0..p).map(|j| h[i * p + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..p {
        for j in 0..p {
            h[i * p + j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn identity(p: usize) -> Vec<f64> {
    let mut m = vec![0.0; p * p];
    for i in 0..p {
        m[i * p + i] = 1.0;
    }
    m
}

fn mat_vec_neg(h: &[f64], g: &[f64], out: &mut [f64]) {
    let p = g.len();
    for i in 0..p {
        out[i] = -(0..p).map(|j| h[i * p + j] * g[j]).sum::<f64>();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> BfgsOptions {
        BfgsOptions {
            max_iter: 500,
            divergence_bound: 1e6,
        }
    }

    #[test]
    fn quadratic() {
        // f = (x-1)^2 + 10 (y+2)^2 + x y
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 1.0) + x[1];
            g[1] = 20.0 * (x[1] + 2.0) + x[0];
            (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2) + x[0] * x[1]
        };
        let out = minimize(f, vec![0.0, 0.0], &opts(), |_, g| inf_norm(g) < 1e-12);
        assert_eq!(out.status, BfgsStatus::Converged);
        // stationary point of the quadratic: [2 1; 1 20] x = [2; -40]
        let det = 2.0 * 20.0 - 1.0;
        let ex = (2.0 * 20.0 - 1.0 * -40.0) / det;
        let ey = (2.0 * -40.0 - 1.0 * 2.0) / det;
        assert!((out.x[0] - ex).abs() < 1e-10);
        assert!((out.x[1] - ey).abs() < 1e-10);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let out = minimize(f, vec![-1.2, 1.0], &opts(), |_, g| inf_norm(g) < 1e-9);
        assert_eq!(out.status, BfgsStatus::Converged);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unbounded_below_diverges() {
        // exp(x) has no minimiser; iterates run off to -inf
        let f = |x: &[f64], g: &mut [f64]| {
            g[0] = x[0].exp();
            x[0].exp()
        };
        let o = BfgsOptions {
            max_iter: 10_000,
            divergence_bound: 1e4,
        };
        let out = minimize(f, vec![0.0], &o, |_, g| inf_norm(g) < 1e-300);
        assert!(matches!(
            out.status,
            BfgsStatus::Diverged | BfgsStatus::LineSearchFailed | BfgsStatus::Converged
        ));
        assert!(out.x[0] < -10.0);
    }
}
