//! Direct scattering: `T(ω)`, `U(k, ω)`, special solutions and scattering
//! coefficients.
//!
//! With `ℰ(k) = diag e_σ(k, θ_σ)`, `P(k) = diag p_σ(k)`, `D = diag(θ⁻¹ - θ)`:
//!
//! ```text
//! T(ω)    = ℰ(0) - ℛ(λ) B(0) ℰ(1)
//! U(k, ω) = [-P(k) + ℰ(k) T⁻¹] B B(0)⁻¹ D ℰ(1)⁻¹
//! ```
//!
//! Column `σ` of `U(k, ω)` is the solution with a unit wave incoming along `σ`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::chart::{build_chart, SpectralChart, CIRCLE_TOL};
use crate::error::{Error, Result};
use crate::jost::{build_jost, build_p, wronskian, JostTable};
use crate::websystem::WebSystem;

/// Relative determinant threshold below which a sample is treated as a pole.
pub const NEAR_POLE_TOL: f64 = 1e-13;

/// A system together with its chart and Jost tables.
#[derive(Debug, Clone)]
pub struct Model {
    pub sys: WebSystem,
    pub chart: SpectralChart,
    pub jost: Vec<JostTable>,
}

#[derive(Debug, Clone)]
pub struct ScatteringSample {
    pub omega: C64,
    pub lambda: C64,
    pub theta: Vec<C64>,
    pub open: Vec<bool>,
    pub t_inv: DMatrix<C64>,
    /// `s[(γ, σ)] = s_γσ`; diagonal entries are meaningful only for open `σ`.
    pub s: DMatrix<C64>,
    /// [`Model::pole_indicator`] at this point.
    pub pole_indicator: f64,
}

#[derive(Debug, Clone)]
pub struct SpecialSolution {
    pub source: usize,
    pub omega: C64,
    /// `values[γ][k] = ψ^σ(γ(k))` for `k = 0..=k_max`.
    pub values: Vec<Vec<C64>>,
    pub interior: Vec<C64>,
}

/// Values needed for `U(k, ω)` at one point and one branch choice.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub omega: C64,
    pub lambda: C64,
    pub theta: Vec<C64>,
    pub t_inv: DMatrix<C64>,
    /// `b_σ (θ_σ⁻¹ - θ_σ) / (𝔟_σ(0) e_σ(1, θ_σ))`.
    pub x: Vec<C64>,
    /// See [`Model::pole_indicator`].
    pub pole_indicator: f64,
}

impl Model {
    pub fn new(sys: WebSystem) -> Result<Self> {
        let chart = build_chart(&sys)?;
        let jost = sys.channels().iter().map(build_jost).collect();
        Ok(Model { sys, chart, jost })
    }

    pub fn channel_count(&self) -> usize {
        self.sys.channel_count()
    }

    /// Physical branch `θ_σ(ω)` for every channel.
    pub fn thetas(&self, omega: C64) -> Result<Vec<C64>> {
        (0..self.channel_count()).map(|s| self.chart.theta(s, omega)).collect()
    }

    /// Branch continued from `reference`, valid on both sides of the circle.
    pub fn thetas_continued(&self, omega: C64, reference: C64) -> Vec<C64> {
        (0..self.channel_count())
            .map(|s| self.chart.theta_continued(s, omega, reference))
            .collect()
    }

    /// `ℰ(k)` diagonal.
    pub fn e_diag(&self, k: usize, theta: &[C64]) -> Vec<C64> {
        self.jost.iter().zip(theta).map(|(j, &t)| j.eval(k, t)).collect()
    }

    pub fn t_matrix_with(&self, omega: C64, theta: &[C64]) -> Result<DMatrix<C64>> {
        let lambda = self.chart.lambda(omega)?;
        let r = self.sys.attachment_resolvent(lambda)?;
        let e0 = self.e_diag(0, theta);
        let e1 = self.e_diag(1, theta);
        let nc = self.channel_count();
        Ok(DMatrix::from_fn(nc, nc, |g, s| {
            let diag = if g == s { e0[g] } else { C64::new(0.0, 0.0) };
            diag - r[(g, s)] * self.sys.channel(s).coupling_b0 * e1[s]
        }))
    }

    /// `[[L₁ - λ, -B(0)ℰ(1)], [-Πᵀ, ℰ(0)]]` with `Π` the attachment map;
    /// its determinant is `det(L₁ - λ) det T` but its entries stay bounded
    /// when `λ` approaches `σ(L₁)`.
    pub fn bordered_matrix(&self, omega: C64, theta: &[C64]) -> DMatrix<C64> {
        let sys = &self.sys;
        let m = sys.central_size();
        let nc = sys.channel_count();
        let lambda = self.chart.a - self.chart.b * (omega + omega.inv());
        let e0 = self.e_diag(0, theta);
        let e1 = self.e_diag(1, theta);
        let mut k = DMatrix::from_element(m + nc, m + nc, C64::new(0.0, 0.0));
        for i in 0..m {
            for j in 0..m {
                k[(i, j)] = C64::from(sys.central().matrix[(i, j)]);
            }
            k[(i, i)] -= lambda;
        }
        for c in 0..nc {
            let v = sys.attachment(c);
            k[(v, m + c)] = -sys.channel(c).coupling_b0 * e1[c];
            k[(m + c, v)] = C64::new(-1.0, 0.0);
            k[(m + c, m + c)] = e0[c];
        }
        k
    }

    /// `|det K| / ∏ ‖K columns‖` for the bordered matrix `K`; small only near
    /// a pole of `T⁻¹`.
    pub fn pole_indicator(&self, omega: C64, theta: &[C64]) -> f64 {
        let k = self.bordered_matrix(omega, theta);
        let scale: f64 = k.column_iter().map(|c| c.norm().max(1e-300)).product();
        k.determinant().norm() / scale
    }

    pub fn t_matrix(&self, omega: C64) -> Result<DMatrix<C64>> {
        let theta = self.thetas(omega)?;
        self.t_matrix_with(omega, &theta)
    }

    /// Everything needed for `U(k, ω)`; fails only if `T` is numerically
    /// singular or some `e_σ(1, θ_σ)` vanishes.
    pub fn evaluate_with(&self, omega: C64, theta: Vec<C64>) -> Result<Evaluation> {
        let lambda = self.chart.lambda(omega)?;
        let m = self.sys.central_size();
        let nc = self.channel_count();
        // T is the Schur complement of L₁ - λ in the bordered matrix, so T⁻¹
        // is its trailing block of K⁻¹; this stays finite on σ(L₁)
        let k = self.bordered_matrix(omega, &theta);
        let scale: f64 = k.column_iter().map(|c| c.norm().max(1e-300)).product();
        let lu = k.lu();
        let indicator = lu.determinant().norm() / scale;
        let near = || Error::NearPole { omega, det: indicator };
        if indicator < 1e-15 {
            return Err(near());
        }
        let k_inv = lu.try_inverse().ok_or_else(near)?;
        let t_inv = k_inv.view((m, m), (nc, nc)).into_owned();
        let e1 = self.e_diag(1, &theta);
        let mut x = Vec::with_capacity(theta.len());
        for (s, (&th, &e)) in theta.iter().zip(&e1).enumerate() {
            if e.norm() < 1e-14 {
                return Err(Error::NearPole { omega, det: e.norm() });
            }
            let ch = self.sys.channel(s);
            x.push(ch.limit_b * (th.inv() - th) / (ch.coupling_b0 * e));
        }
        Ok(Evaluation {
            omega,
            lambda,
            theta,
            t_inv,
            x,
            pole_indicator: indicator,
        })
    }

    pub fn evaluate(&self, omega: C64) -> Result<Evaluation> {
        let theta = self.thetas(omega)?;
        self.evaluate_with(omega, theta)
    }

    /// `U(k, ω)` from a prepared evaluation.
    pub fn u_from(&self, ev: &Evaluation, k: usize) -> DMatrix<C64> {
        let nc = self.channel_count();
        let ek = self.e_diag(k, &ev.theta);
        let pk: Vec<C64> = (0..nc)
            .map(|s| build_p(self.sys.channel(s), ev.lambda, k.max(1))[k])
            .collect();
        DMatrix::from_fn(nc, nc, |g, s| {
            let mut v = ek[g] * ev.t_inv[(g, s)];
            if g == s {
                v -= pk[g];
            }
            v * ev.x[s]
        })
    }

    pub fn u_matrix(&self, k: usize, omega: C64) -> Result<DMatrix<C64>> {
        let ev = self.evaluate(omega)?;
        Ok(self.u_from(&ev, k))
    }

    /// Scattering coefficients at `ω ∈ 𝕋`.
    pub fn scattering_sample(&self, omega: C64) -> Result<ScatteringSample> {
        let omega = omega / omega.norm();
        let theta = self.chart.point(omega)?.theta;
        self.scattering_sample_with(omega, theta)
    }

    /// As [`scattering_sample`](Self::scattering_sample) with caller-supplied
    /// `θ_σ(ω)`, for points so close to a band edge that recomputing `θ`
    /// from `λ(ω)` would round onto `±1`.
    pub fn scattering_sample_with(&self, omega: C64, theta: Vec<C64>) -> Result<ScatteringSample> {
        let open: Vec<bool> = theta.iter().map(|t| (t.norm() - 1.0).abs() <= CIRCLE_TOL).collect();
        let ev = self.evaluate_with(omega, theta.clone())?;
        if ev.pole_indicator < NEAR_POLE_TOL {
            return Err(Error::NearPole { omega, det: ev.pole_indicator });
        }
        let s = self.s_from(&ev);
        Ok(ScatteringSample {
            omega,
            lambda: ev.lambda,
            theta,
            open,
            t_inv: ev.t_inv,
            s,
            pole_indicator: ev.pole_indicator,
        })
    }

    /// Scattering matrix from an evaluation on the circle.
    pub fn s_from(&self, ev: &Evaluation) -> DMatrix<C64> {
        let nc = self.channel_count();
        let mut s = DMatrix::from_fn(nc, nc, |g, sg| ev.t_inv[(g, sg)] * ev.x[sg]);
        for sg in 0..nc {
            let k = self.jost[sg].support + 1;
            let th = ev.theta[sg];
            let lam = ev.lambda;
            let ch = self.sys.channel(sg);
            let p = build_p(ch, lam, k + 1);
            let e = &self.jost[sg];
            let psi = |kk: usize| (e.eval(kk, th) * ev.t_inv[(sg, sg)] - p[kk]) * ev.x[sg];
            let w = wronskian((psi(k), psi(k + 1)), (th.powi(-(k as i32)), th.powi(-(k as i32) - 1)));
            s[(sg, sg)] = w / (th.inv() - th);
        }
        s
    }

    /// Column `σ` of `U(k, ω)` for `k = 0..=k_max` plus interior values.
    pub fn special_solution(&self, sigma: usize, omega: C64, k_max: usize) -> Result<SpecialSolution> {
        let ev = self.evaluate(omega)?;
        let nc = self.channel_count();
        let mut values = Vec::with_capacity(nc);
        for g in 0..nc {
            let kk = self.jost[g].support + 2;
            let direct_max = k_max.min(kk);
            let p = build_p(self.sys.channel(g), ev.lambda, direct_max.max(1));
            let e = &self.jost[g];
            let th = ev.theta[g];
            let mut col: Vec<C64> = (0..=direct_max)
                .map(|k| {
                    let mut v = e.eval(k, th) * ev.t_inv[(g, sigma)];
                    if g == sigma {
                        v -= p[k];
                    }
                    v * ev.x[sigma]
                })
                .collect();
            if k_max > direct_max {
                // free region: ψ(k) = α θ^{-k} + β θ^k
                let k1 = direct_max - 1;
                let (v1, v2) = (col[k1], col[k1 + 1]);
                let (beta, alpha) = if g == sigma {
                    let m1 = th.powi(-(k1 as i32));
                    let m2 = th.powi(-(k1 as i32) - 1);
                    let n1 = th.powi(k1 as i32);
                    let n2 = th.powi(k1 as i32 + 1);
                    let det = m1 * n2 - m2 * n1;
                    ((m1 * v2 - m2 * v1) / det, (v1 * n2 - v2 * n1) / det)
                } else {
                    (ev.t_inv[(g, sigma)] * ev.x[sigma], C64::new(0.0, 0.0))
                };
                for k in (direct_max + 1)..=k_max {
                    let kk = k as i32;
                    col.push(alpha * th.powi(-kk) + beta * th.powi(kk));
                }
            }
            values.push(col);
        }
        let xi1: Vec<C64> = values.iter().map(|c| c.get(1).copied().unwrap_or_default()).collect();
        let interior = self.sys.prolong_to_interior(&xi1, ev.lambda)?;
        Ok(SpecialSolution {
            source: sigma,
            omega,
            values,
            interior,
        })
    }

    /// Angles `ψ_j = 2π(j + 1/2)/n` with points within half a step of a band
    /// edge or of `±1` removed.
    pub fn circle_grid(&self, n: usize) -> Vec<f64> {
        let h = 2.0 * PI / n as f64;
        let mut edges = self.chart.breakpoints();
        edges.extend(edges.clone().into_iter().map(|p| 2.0 * PI - p));
        (0..n)
            .map(|j| (j as f64 + 0.5) * h)
            .filter(|&p| edges.iter().all(|&e| (p - e).abs() >= 0.5 * h - 1e-15))
            .collect()
    }

    /// Scattering samples on [`circle_grid`](Self::circle_grid), in grid order.
    pub fn sample_circle(&self, n: usize) -> Vec<(f64, Result<ScatteringSample>)> {
        self.circle_grid(n)
            .into_par_iter()
            .map(|p| (p, self.scattering_sample(C64::from_polar(1.0, p))))
            .collect()
    }
}

/// Flux balance residual for open source `σ`.
pub fn flux_residual(model: &Model, sample: &ScatteringSample, sigma: usize) -> f64 {
    let b = |c: usize| model.sys.channel(c).limit_b;
    let lhs = b(sigma) * sample.theta[sigma].im * (1.0 - sample.s[(sigma, sigma)].norm_sqr());
    let rhs: f64 = (0..model.channel_count())
        .filter(|&n| n != sigma && sample.open[n])
        .map(|n| b(n) * sample.theta[n].im * sample.s[(n, sigma)].norm_sqr())
        .sum();
    (lhs - rhs).abs()
}

/// Largest reciprocity residual `|b_γ D_γ s_γσ - b_σ D_σ s_σγ|` over pairs.
pub fn reciprocity_residual(model: &Model, sample: &ScatteringSample) -> f64 {
    let nc = model.channel_count();
    let w: Vec<C64> = (0..nc)
        .map(|c| model.sys.channel(c).limit_b * (sample.theta[c].inv() - sample.theta[c]))
        .collect();
    let mut worst = 0.0f64;
    for g in 0..nc {
        for s in 0..nc {
            if g == s {
                continue;
            }
            worst = worst.max((w[g] * sample.s[(g, s)] - w[s] * sample.s[(s, g)]).norm());
        }
    }
    worst
}
