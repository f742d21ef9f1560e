//! Quadrature rules on intervals.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Nodes and weights of a rule on some interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn extend(&mut self, other: Rule) {
        self.nodes.extend(other.nodes);
        self.weights.extend(other.weights);
    }
}

/// Gauss–Legendre rule with `n` points on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Rule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Rule { nodes, weights }
}

/// `P_n(x)` and `P_n'(x)`.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

fn cosine_map(x0: f64, h: f64, u: f64) -> f64 {
    // measured from the nearer end so nodes do not round onto it
    if u < 0.5 {
        x0 + h * (0.5 * PI * u).sin().powi(2)
    } else {
        (x0 + h) - h * (0.5 * PI * u).cos().powi(2)
    }
}

/// Gauss–Legendre on `[x0, x1]` after the substitution
/// `x = x0 + (x1 - x0)(1 - cos πu)/2`, which flattens square-root endpoint
/// behavior. Nodes never touch the endpoints.
pub fn cosine_panel(x0: f64, x1: f64, n: usize) -> Rule {
    let gl = gauss_legendre(n);
    let h = x1 - x0;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
        let u = 0.5 * (t + 1.0);
        nodes.push(cosine_map(x0, h, u));
        weights.push(0.5 * w * 0.5 * h * PI * (PI * u).sin());
    }
    Rule { nodes, weights }
}

/// Composite rule over consecutive panels `[breaks[i], breaks[i+1]]`, with
/// `total` nodes shared in proportion to panel length (at least `min_per`
/// per panel).
pub fn panel_rule(breaks: &[f64], total: usize, min_per: usize) -> Rule {
    let mut rule = Rule::default();
    if breaks.len() < 2 {
        return rule;
    }
    let span = breaks[breaks.len() - 1] - breaks[0];
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let n = ((total as f64 * len / span).round() as usize).max(min_per);
        rule.extend(cosine_panel(w[0], w[1], n));
    }
    rule
}

/// Midpoint rule with `n` nodes on `[x0, x1]`.
pub fn midpoint(x0: f64, x1: f64, n: usize) -> Rule {
    let h = (x1 - x0) / n as f64;
    Rule {
        nodes: (0..n).map(|j| x0 + (j as f64 + 0.5) * h).collect(),
        weights: vec![h; n],
    }
}

const ROUNDING_FLOOR: f64 = 1e-12;
/// Relative error band inside which a non-improving piece is accepted.
const NOISE_BAND: f64 = 1e-6;
/// Pieces narrower than this (relative to `|x|`) put their outer nodes
/// within a few ulps of the ends; stop there.
const MIN_EXTENT: f64 = 1e-8;

/// Controls for [`adaptive_panels`].
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    /// Gauss–Legendre order per subinterval.
    pub order: usize,
    /// Absolute tolerance relative to `∫|g|` over the whole range.
    pub tol: f64,
    pub max_depth: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive {
            order: 16,
            tol: 1e-13,
            max_depth: 24,
        }
    }
}

struct Piece<V> {
    x0: f64,
    h: f64,
    u0: f64,
    u1: f64,
    depth: usize,
    parent_err: f64,
    values: Vec<V>,
}

fn gl_on(gl: &Rule, x0: f64, h: f64, u0: f64, u1: f64) -> (Vec<f64>, Vec<f64>) {
    let half = 0.5 * (u1 - u0);
    gl.nodes
        .iter()
        .zip(&gl.weights)
        .map(|(&t, &w)| {
            let u = u0 + half * (t + 1.0);
            let x = cosine_map(x0, h, u);
            (x, w * half * 0.5 * h * PI * (PI * u).sin())
        })
        .unzip()
}

/// Adaptive composite rule on `[breaks[0], breaks[last]]`.
///
/// Each panel is cosine-mapped as in [`cosine_panel`] and then bisected in
/// the map parameter wherever Gauss–Legendre on an interval disagrees with
/// the sum over its halves. `measure` turns a sample into the components
/// whose integrals drive refinement. Roughly `initial` nodes are spent
/// before refinement. Returns the rule and the sample at each node.
pub fn adaptive_panels<V, F, M, E>(
    breaks: &[f64],
    initial: usize,
    opts: Adaptive,
    f: F,
    measure: M,
) -> std::result::Result<(Rule, Vec<V>), E>
where
    V: Send + Clone,
    E: Send,
    F: Fn(f64) -> std::result::Result<V, E> + Sync,
    M: Fn(&V) -> Vec<C64> + Sync,
{
    let gl = gauss_legendre(opts.order);
    let eval = |xs: Vec<f64>| -> std::result::Result<Vec<V>, E> { xs.into_par_iter().map(&f).collect() };
    let integral = |xs: &[f64], ws: &[f64], vals: &[V]| -> Vec<C64> {
        let mut acc: Vec<C64> = Vec::new();
        for ((_, &w), v) in xs.iter().zip(ws).zip(vals) {
            let m = measure(v);
            if acc.is_empty() {
                acc = vec![C64::new(0.0, 0.0); m.len()];
            }
            for (a, b) in acc.iter_mut().zip(m) {
                *a += w * b;
            }
        }
        acc
    };

    let span = breaks.last().copied().unwrap_or(0.0) - breaks.first().copied().unwrap_or(0.0);
    let mut pieces = Vec::new();
    for w in breaks.windows(2) {
        let h = w[1] - w[0];
        if h <= 0.0 {
            continue;
        }
        let count = ((initial as f64 * h / span / opts.order as f64).round() as usize).max(1);
        for j in 0..count {
            pieces.push((w[0], h, j as f64 / count as f64, (j + 1) as f64 / count as f64));
        }
    }
    let xs: Vec<f64> = pieces
        .iter()
        .flat_map(|&(x0, h, u0, u1)| gl_on(&gl, x0, h, u0, u1).0)
        .collect();
    let mut vals = eval(xs)?.into_iter();
    let mut work: Vec<Piece<V>> = pieces
        .iter()
        .map(|&(x0, h, u0, u1)| Piece {
            x0,
            h,
            u0,
            u1,
            depth: 0,
            parent_err: f64::INFINITY,
            values: vals.by_ref().take(opts.order).collect(),
        })
        .collect();

    let mut scale = 0.0;
    for p in &work {
        let (x, w) = gl_on(&gl, p.x0, p.h, p.u0, p.u1);
        let abs: f64 = x
            .iter()
            .zip(&w)
            .zip(&p.values)
            .map(|((_, &wt), v)| wt.abs() * measure(v).iter().map(|c| c.norm()).fold(0.0, f64::max))
            .sum();
        scale += abs;
    }
    let tol = opts.tol * scale.max(f64::MIN_POSITIVE);

    let mut rule = Rule::default();
    let mut values = Vec::new();
    while !work.is_empty() {
        let halves: Vec<f64> = work
            .iter()
            .flat_map(|p| {
                let mid = 0.5 * (p.u0 + p.u1);
                let mut x = gl_on(&gl, p.x0, p.h, p.u0, mid).0;
                x.extend(gl_on(&gl, p.x0, p.h, mid, p.u1).0);
                x
            })
            .collect();
        let mut hv = eval(halves)?.into_iter();
        let mut next = Vec::new();
        for p in work {
            let mid = 0.5 * (p.u0 + p.u1);
            let left: Vec<V> = hv.by_ref().take(opts.order).collect();
            let right: Vec<V> = hv.by_ref().take(opts.order).collect();
            let (xw, ww) = gl_on(&gl, p.x0, p.h, p.u0, p.u1);
            let (xl, wl) = gl_on(&gl, p.x0, p.h, p.u0, mid);
            let (xr, wr) = gl_on(&gl, p.x0, p.h, mid, p.u1);
            let whole = integral(&xw, &ww, &p.values);
            let il = integral(&xl, &wl, &left);
            let ir = integral(&xr, &wr, &right);
            let err = whole
                .iter()
                .zip(il.iter().zip(&ir))
                .map(|(a, (b, c))| (a - b - c).norm())
                .fold(0.0, f64::max);
            let share = (p.u1 - p.u0) * p.h / span;
            let local: f64 = wl
                .iter()
                .zip(&left)
                .chain(wr.iter().zip(&right))
                .map(|(w, v)| w.abs() * measure(v).iter().map(|c| c.norm()).fold(0.0, f64::max))
                .sum();
            // samples near branch points carry relative noise well above eps;
            // once halving stops paying off, the remaining error is that noise
            let stalled = err > 0.25 * p.parent_err && err <= NOISE_BAND * local;
            let (a, b) = (cosine_map(p.x0, p.h, p.u0), cosine_map(p.x0, p.h, p.u1));
            let unresolvable = b - a <= MIN_EXTENT * a.abs().max(b.abs()).max(1.0);
            // non-finite samples are passed through for the caller to report
            if !err.is_finite()
                || err <= (tol * share).max(ROUNDING_FLOOR * local)
                || stalled
                || unresolvable
                || p.depth >= opts.max_depth
            {
                for (x, w, v) in [(xl, wl, left), (xr, wr, right)] {
                    rule.nodes.extend(x);
                    rule.weights.extend(w);
                    values.extend(v);
                }
            } else {
                next.push(Piece {
                    values: left,
                    u1: mid,
                    depth: p.depth + 1,
                    parent_err: err,
                    ..p
                });
                next.push(Piece {
                    x0: p.x0,
                    h: p.h,
                    u0: mid,
                    u1: p.u1,
                    depth: p.depth + 1,
                    parent_err: err,
                    values: right,
                });
            }
        }
        work = next;
    }
    // restore ascending order
    let mut order: Vec<usize> = (0..rule.nodes.len()).collect();
    order.sort_by(|&i, &j| rule.nodes[i].total_cmp(&rule.nodes[j]));
    let sorted = Rule {
        nodes: order.iter().map(|&i| rule.nodes[i]).collect(),
        weights: order.iter().map(|&i| rule.weights[i]).collect(),
    };
    let mut slots: Vec<Option<V>> = values.into_iter().map(Some).collect();
    let values = order.iter().map(|&i| slots[i].take().expect("each index once")).collect();
    Ok((sorted, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1, 2, 5, 16, 33] {
            let r = gauss_legendre(n);
            let total: f64 = r.weights.iter().sum();
            assert!((total - 2.0).abs() < 1e-13, "n={n}");
            for deg in 0..(2 * n) {
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                let got = r.integrate(|x| x.powi(deg as i32));
                assert!((got - exact).abs() < 1e-13, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn large_rule_is_accurate() {
        let r = gauss_legendre(512);
        assert!((r.integrate(|x| x.exp()) - (1f64.exp() - (-1f64).exp())).abs() < 1e-13);
    }

    #[test]
    fn cosine_panel_handles_sqrt_endpoints() {
        let r = cosine_panel(0.0, 1.0, 40);
        let got = r.integrate(|x| (x * (1.0 - x)).sqrt());
        assert!((got - PI / 8.0).abs() < 1e-13);
        assert!(r.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn panel_rule_with_kink() {
        let r = panel_rule(&[-1.0, 0.3, 1.0], 200, 16);
        let got = r.integrate(|x| (x - 0.3).abs());
        let exact = 0.5 * 1.3 * 1.3 + 0.5 * 0.7 * 0.7;
        assert!((got - exact).abs() < 1e-13);
    }

    #[test]
    fn midpoint_rule_periodic() {
        let r = midpoint(0.0, 2.0 * PI, 64);
        assert!((r.integrate(|x| (3.0 * x).cos().powi(2)) - PI).abs() < 1e-13);
    }

    #[test]
    fn adaptive_resolves_narrow_peak() {
        let eps = 1e-4;
        let g = |x: f64| Ok::<_, ()>(eps / ((x - 0.3137).powi(2) + eps * eps));
        let (r, v) = adaptive_panels(&[0.0, 1.0], 64, Adaptive::default(), g, |y: &f64| vec![C64::from(*y)]).unwrap();
        let got: f64 = r.weights.iter().zip(&v).map(|(w, y)| w * y).sum();
        let exact = ((1.0 - 0.3137) / eps).atan() + (0.3137 / eps).atan();
        assert!((got - exact).abs() < 1e-10, "{got} vs {exact}");
        assert!(r.nodes.windows(2).all(|w| w[0] < w[1]));
        assert!(r.len() < 2000, "{} nodes", r.len());
    }

    #[test]
    fn adaptive_keeps_sqrt_endpoints() {
        let (r, v) = adaptive_panels(&[0.0, 0.5, 1.0], 64, Adaptive::default(), |x| Ok::<_, ()>((x * (1.0 - x)).sqrt()), |y: &f64| {
            vec![C64::from(*y)]
        })
        .unwrap();
        let got: f64 = r.weights.iter().zip(&v).map(|(w, y)| w * y).sum();
        assert!((got - PI / 8.0).abs() < 1e-13);
    }
}
