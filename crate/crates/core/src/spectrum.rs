//! Discrete spectrum: poles of `U(k, ω)`, residue matrices and energies.
//!
//! Poles inside the disk are real; they are located as sign changes of
//! `det T · det(L₁ - λ)` (computed as one bordered determinant, so central
//! eigenvalues cause no trouble) and of `e_σ(1, θ_σ)`. Poles on the circle
//! are embedded eigenvalues and are located as zeros of the same
//! determinant along the upper half circle.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direct::{Evaluation, Model};
use crate::error::{Error, Result};
use crate::oracle::energy_weight;

/// Distance from `ω = ±1` and from band-edge points excluded from the search.
pub const EDGE_EXCLUSION: f64 = 1e-4;
/// Points per unit length for the real-axis scan.
const REAL_GRID: usize = 8000;
/// Points on the upper half circle.
const CIRCLE_GRID: usize = 4096;
/// Residue norms below this are treated as "no pole".
const RESIDUE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Zero of `det T`.
    DetT,
    /// Zero of some `e_σ(1, θ_σ)`.
    JostZero,
    /// Zero of `det T` on the unit circle.
    Embedded,
}

#[derive(Debug, Clone)]
pub struct PoleSeed {
    pub omega: C64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct DiscreteLevel {
    pub omega_hat: C64,
    pub lambda_hat: f64,
    pub theta: Vec<C64>,
    pub dtheta: Vec<C64>,
    /// `𝔐(ω̂) = ℰ(k, ω̂)⁻¹ Res U(k, ω̂)`.
    pub m: DMatrix<C64>,
    /// `‖φ^ν‖²` for each `ν`.
    pub energies: Vec<f64>,
    pub provenance: Provenance,
    /// Relative change of the residue when the contour radius is halved.
    pub radius_stability: f64,
    /// Relative change of `𝔐` between the two evaluation levels `k`.
    pub k_stability: f64,
    pub radius: f64,
}

impl DiscreteLevel {
    pub fn on_circle(&self) -> bool {
        (self.omega_hat.norm() - 1.0).abs() < 1e-12
    }
}

/// `det(L₁ - λ) det T(ω)`, normalized by `(1 + |λ|²)^{M/2}`.
fn bordered_det(model: &Model, omega: C64, theta: &[C64]) -> C64 {
    let m = model.sys.central_size() as f64;
    let lambda = model.chart.a - model.chart.b * (omega + omega.inv());
    model.bordered_matrix(omega, theta).determinant() / (1.0 + lambda.norm_sqr()).powf(0.5 * m)
}

fn real_scan_fn(model: &Model, omega: f64, which: Option<usize>) -> f64 {
    let w = C64::new(omega, 0.0);
    let theta: Vec<C64> = (0..model.channel_count())
        .map(|s| model.chart.theta_continued(s, w, w))
        .collect();
    match which {
        None => bordered_det(model, w, &theta).re,
        Some(s) => model.jost[s].eval(1, theta[s]).re,
    }
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Candidate pole locations (not yet validated by residues).
pub fn find_pole_seeds(model: &Model) -> Result<Vec<PoleSeed>> {
    let mut seeds = Vec::new();
    let nc = model.channel_count();
    let h = 1.0 / REAL_GRID as f64;
    let scans: Vec<Option<usize>> = std::iter::once(None).chain((0..nc).map(Some)).collect();
    for (lo_end, hi_end) in [(-1.0 + EDGE_EXCLUSION, -1e-3), (1e-3, 1.0 - EDGE_EXCLUSION)] {
        let n = ((hi_end - lo_end) / h).ceil() as usize;
        let xs: Vec<f64> = (0..=n).map(|i| lo_end + (hi_end - lo_end) * i as f64 / n as f64).collect();
        for &which in &scans {
            let vals: Vec<f64> = xs.par_iter().map(|&x| real_scan_fn(model, x, which)).collect();
            for i in 0..n {
                if vals[i] == 0.0 || (vals[i] < 0.0) != (vals[i + 1] < 0.0) {
                    let root = bisect(|x| real_scan_fn(model, x, which), xs[i], xs[i + 1]);
                    seeds.push(PoleSeed {
                        omega: C64::new(root, 0.0),
                        provenance: if which.is_none() { Provenance::DetT } else { Provenance::JostZero },
                    });
                }
            }
        }
    }
    seeds.extend(circle_seeds(model)?);
    // merge duplicates found by several scans
    seeds.sort_by(|a, b| a.omega.re.total_cmp(&b.omega.re).then(a.omega.im.total_cmp(&b.omega.im)));
    seeds.dedup_by(|a, b| (a.omega - b.omega).norm() < 1e-9);
    Ok(seeds)
}

fn circle_det(model: &Model, psi: f64) -> C64 {
    let w = C64::from_polar(1.0, psi);
    let theta: Vec<C64> = (0..model.channel_count()).map(|s| model.chart.theta_continued(s, w, w)).collect();
    bordered_det(model, w, &theta)
}

/// Polished zeros of the continued determinant found from minima of
/// `|det|` along the upper half circle, with whether each lies on it.
fn circle_candidates(model: &Model) -> Result<Vec<(C64, bool)>> {
    let h = PI / CIRCLE_GRID as f64;
    let edges = model.chart.breakpoints();
    let near_edge = |p: f64| edges.iter().any(|&e| (p - e).abs() < EDGE_EXCLUSION);
    let psis: Vec<f64> = (0..CIRCLE_GRID).map(|j| (j as f64 + 0.5) * h).collect();
    let vals: Vec<f64> = psis.par_iter().map(|&p| circle_det(model, p).norm()).collect();
    let scale = vals.iter().copied().fold(0.0f64, f64::max).max(1e-300);
    let mut out = Vec::new();
    for j in 1..CIRCLE_GRID - 1 {
        if !(vals[j] <= vals[j - 1] && vals[j] <= vals[j + 1]) || vals[j] > 1e-2 * scale {
            continue;
        }
        // Newton in ψ on the complex determinant; real roots only
        let mut p = psis[j];
        let mut ok = false;
        for _ in 0..60 {
            let d = 1e-7;
            let f = circle_det(model, p);
            let fp = (circle_det(model, p + d) - circle_det(model, p - d)) / (2.0 * d);
            if fp.norm() == 0.0 {
                break;
            }
            let step = (f / fp).re;
            p -= step;
            if (p - psis[j]).abs() > 4.0 * h {
                break;
            }
            if step.abs() < 1e-15 {
                ok = true;
                break;
            }
        }
        if !ok || near_edge(p) || p <= EDGE_EXCLUSION || p >= PI - EDGE_EXCLUSION {
            continue;
        }
        if circle_det(model, p).norm() >= 1e-6 * scale {
            continue;
        }
        // a shallow minimum can belong to a resonance just off the circle
        let w0 = C64::from_polar(1.0, p);
        match polish_off_circle(model, w0) {
            Some(r) if (r.norm() - 1.0).abs() > ON_CIRCLE_TOL => out.push((r, false)),
            Some(_) => out.push((w0, true)),
            None => {}
        }
    }
    Ok(out)
}

fn circle_seeds(model: &Model) -> Result<Vec<PoleSeed>> {
    Ok(circle_candidates(model)?
        .into_iter()
        .filter(|c| c.1)
        .map(|(omega, _)| PoleSeed { omega, provenance: Provenance::Embedded })
        .collect())
}

/// Energies graded geometrically around resonances so close to the circle
/// that their scattering features are narrower than any fixed grid resolves.
pub fn near_circle_energies(model: &Model) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (w, _) in circle_candidates(model)?.into_iter().filter(|c| !c.1) {
        let lambda = model.chart.a - model.chart.b * (w + w.inv());
        out.push(lambda.re);
        let mut d = lambda.im.abs().max(1e-14);
        while d < 1e-2 {
            out.extend([lambda.re - d, lambda.re + d]);
            d *= 4.0;
        }
    }
    Ok(out)
}

const ON_CIRCLE_TOL: f64 = 1e-12;

/// Complex Newton on the continued determinant near `w0`; `None` if it wanders or stalls.
fn polish_off_circle(model: &Model, w0: C64) -> Option<C64> {
    let det = |w: C64| model.bordered_matrix(w, &model.thetas_continued(w, w0)).determinant();
    let mut w = w0;
    for it in 0..40 {
        let h = 1e-6 * 0.1f64.powi(it.min(4));
        let fp = (det(w + h) - det(w - h)) / (2.0 * h);
        if fp.norm() == 0.0 {
            return None;
        }
        let step = det(w) / fp;
        w -= step;
        if !w.is_finite() || (w - w0).norm() > 1e-2 {
            return None;
        }
        if step.norm() < 1e-12 {
            return Some(w);
        }
    }
    None
}

/// Points a residue contour around `omega` must keep away from.
fn excluded_points(model: &Model, omega: C64, others: &[C64]) -> Vec<C64> {
    let mut pts = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(-1.0, 0.0)];
    for e in model.chart.edge_points() {
        pts.push(e);
        pts.push(e.conj());
    }
    for &o in others {
        if (o - omega).norm() > 1e-12 {
            pts.push(o);
            pts.push(o.conj());
        }
    }
    if omega.im.abs() > 1e-14 {
        pts.push(omega.conj());
    }
    pts
}

/// Default contour radius: half the distance to the nearest excluded point,
/// kept inside the disk for interior poles.
pub fn default_radius(model: &Model, omega: C64, others: &[C64]) -> f64 {
    let mut d = excluded_points(model, omega, others)
        .into_iter()
        .map(|p| (p - omega).norm())
        .fold(f64::INFINITY, f64::min);
    if omega.norm() < 1.0 - 1e-12 {
        d = d.min(1.0 - omega.norm());
    }
    (0.5 * d).min(0.05)
}

/// `(1/2πi) ∮ U(k, ω) dω` over `|ω - ω̂| = r`.
pub fn contour_residue(model: &Model, omega_hat: C64, k: usize, radius: f64) -> Result<DMatrix<C64>> {
    contour_sum(model, omega_hat, radius, |ev| model.u_from(ev, k))
}

/// `(1/2πi) ∮ g(ω) dω` by trapezoid, points doubled until the change drops
/// below `1e-9` relative, above a rounding floor.
fn contour_sum<G>(model: &Model, omega_hat: C64, radius: f64, g: G) -> Result<DMatrix<C64>>
where
    G: Fn(&Evaluation) -> DMatrix<C64> + Sync,
{
    let nc = model.channel_count();
    // also returns the largest term, which sets the rounding floor
    let eval = |n: usize| -> Result<(DMatrix<C64>, f64)> {
        let terms: Vec<Result<DMatrix<C64>>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let e = C64::from_polar(1.0, 2.0 * PI * (j as f64 + 0.5) / n as f64);
                let w = omega_hat + radius * e;
                let theta = model.thetas_continued(w, omega_hat);
                let ev = model.evaluate_with(w, theta)?;
                Ok(g(&ev) * e)
            })
            .collect();
        let mut acc = DMatrix::from_element(nc, nc, C64::new(0.0, 0.0));
        let mut big = 0.0f64;
        for t in terms {
            let t = t?;
            big = big.max(max_abs(&t));
            acc += t;
        }
        Ok((acc * C64::from(radius / n as f64), big * radius))
    };
    let mut n = 64;
    let (mut prev, _) = eval(n)?;
    loop {
        n *= 2;
        let (next, big) = eval(n)?;
        let diff = max_abs(&(&next - &prev));
        if diff <= 1e-9 * max_abs(&next) + 1e-13 * big {
            return Ok(next);
        }
        if n >= 16384 {
            return Err(Error::ResidueAnomaly {
                omega: omega_hat,
                message: format!("contour sum not converged (change {diff:e})"),
            });
        }
        prev = next;
    }
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `𝔐(ω̂) = ℰ(k, ω̂)⁻¹ Res U(k, ω̂)` using a contour of the given radius.
pub fn residue_matrix(model: &Model, omega_hat: C64, k: usize, radius: f64) -> Result<DMatrix<C64>> {
    let res = contour_residue(model, omega_hat, k, radius)?;
    let theta = model.thetas_continued(omega_hat, omega_hat);
    let e = model.e_diag(k, &theta);
    let nc = model.channel_count();
    Ok(DMatrix::from_fn(nc, nc, |g, s| res[(g, s)] / e[g]))
}

/// The two `k` in `0..=K₀+1` where `min_σ |e_σ(k, θ_σ(ω̂))|` is largest;
/// dividing the residue by a small `e_σ(k)` costs digits.
fn residue_levels(model: &Model, omega_hat: C64) -> (usize, usize) {
    let theta = model.thetas_continued(omega_hat, omega_hat);
    let mut ks: Vec<(usize, f64)> = (0..=model.sys.max_support() + 1)
        .map(|k| (k, model.e_diag(k, &theta).iter().map(|e| e.norm()).fold(f64::INFINITY, f64::min)))
        .collect();
    ks.sort_by(|a, b| b.1.total_cmp(&a.1));
    (ks[0].0, ks[1].0)
}

/// Locate, validate and characterize every discrete level, ordered by `λ̂`.
pub fn find_levels(model: &Model) -> Result<Vec<DiscreteLevel>> {
    let seeds = find_pole_seeds(model)?;
    let locations: Vec<C64> = seeds.iter().map(|s| s.omega).collect();
    let mut levels = Vec::new();
    for seed in &seeds {
        let w = seed.omega;
        let r = default_radius(model, w, &locations);
        let (k1, k2) = residue_levels(model, w);
        let m1 = residue_matrix(model, w, k1, r)?;
        let scale = max_abs(&m1);
        if scale < RESIDUE_FLOOR {
            continue;
        }
        let lambda_hat = model.chart.lambda(w)?.re;
        if let Some(j) = model
            .sys
            .central_eigenvalues()
            .iter()
            .position(|&l| (l - lambda_hat).abs() < 1e-10)
        {
            return Err(Error::Unsupported(format!(
                "level λ = {lambda_hat} coincides with central eigenvalue #{j}"
            )));
        }
        let m2 = residue_matrix(model, w, k2, r)?;
        let m_half = residue_matrix(model, w, k1, 0.5 * r)?;
        let k_stability = max_abs(&(&m2 - &m1)) / scale;
        let radius_stability = max_abs(&(&m_half - &m1)) / scale;
        if k_stability > 1e-7 {
            return Err(Error::ResidueAnomaly {
                omega: w,
                message: format!("residue depends on k (relative change {k_stability:e})"),
            });
        }
        let theta = model.thetas_continued(w, w);
        let dtheta = (0..model.channel_count())
            .map(|s| model.chart.dtheta_at(s, w, theta[s]))
            .collect::<Result<Vec<_>>>()?;
        let mut level = DiscreteLevel {
            omega_hat: w,
            lambda_hat,
            theta,
            dtheta,
            m: m1,
            energies: Vec::new(),
            provenance: seed.provenance,
            radius_stability,
            k_stability,
            radius: r,
        };
        level.energies = (0..model.channel_count())
            .map(|nu| level_energy(model, &level, nu))
            .collect::<Result<Vec<_>>>()?;
        levels.push(level);
    }
    levels.sort_by(|a, b| a.lambda_hat.total_cmp(&b.lambda_hat));
    Ok(levels)
}

/// `‖φ^ν‖² = w_ν m_νν` with `w_ν = b_ν(θ_ν⁻¹ - θ_ν) / (b(1 - conj(ω̂)⁻²))`.
pub fn level_energy(model: &Model, level: &DiscreteLevel, nu: usize) -> Result<f64> {
    let w = energy_weight(&model.sys, &model.chart, nu, level.omega_hat, level.theta[nu]);
    let e = (w * level.m[(nu, nu)]).re;
    if e < -1e-9 {
        return Err(Error::ResidueAnomaly {
            omega: level.omega_hat,
            message: format!("negative energy {e:e} for channel {nu}"),
        });
    }
    Ok(e.max(0.0))
}

/// Eigenfunction `φ^ν`: channel values `values[σ][k] = e_σ(k, θ̂_σ) m_σν` for
/// `k = 0..=k_max`, and the interior prolongation.
pub fn eigenfunction_samples(
    model: &Model,
    level: &DiscreteLevel,
    nu: usize,
    k_max: usize,
) -> Result<(Vec<Vec<C64>>, Vec<C64>)> {
    if model
        .sys
        .central_eigenvalues()
        .iter()
        .any(|&l| (l - level.lambda_hat).abs() < 1e-10)
    {
        return Err(Error::Unsupported(format!(
            "level λ = {} coincides with a central eigenvalue",
            level.lambda_hat
        )));
    }
    let values: Vec<Vec<C64>> = (0..model.channel_count())
        .map(|s| {
            (0..=k_max)
                .map(|k| model.jost[s].eval(k, level.theta[s]) * level.m[(s, nu)])
                .collect()
        })
        .collect();
    let xi1: Vec<C64> = values.iter().map(|v| v.get(1).copied().unwrap_or_default()).collect();
    let interior = model.sys.prolong_to_interior(&xi1, C64::from(level.lambda_hat))?;
    Ok((values, interior))
}

/// `Σ |φ^ν|²` over the center and all channels, with the geometric tail past
/// the supports summed in closed form. Requires every channel closed at ω̂
/// or with a vanishing row.
pub fn eigenfunction_norm(model: &Model, level: &DiscreteLevel, nu: usize) -> Result<f64> {
    let k_max = model.sys.max_support() + 2;
    let (values, interior) = eigenfunction_samples(model, level, nu, k_max)?;
    let mut total: f64 = interior.iter().map(|z| z.norm_sqr()).sum();
    for (s, col) in values.iter().enumerate() {
        total += col[1..].iter().map(|z| z.norm_sqr()).sum::<f64>();
        let q = level.theta[s].norm_sqr();
        let last = col[k_max].norm_sqr();
        if last > 0.0 {
            total += last * q / (1.0 - q);
        }
    }
    Ok(total)
}
