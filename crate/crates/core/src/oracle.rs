//! Brute-force cross-checks on finite truncations.
//!
//! Nothing here uses Jost solutions, the chart's branch machinery beyond
//! `θ_σ(ω)`, or contour integrals; the point is independence from the
//! pipeline.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::chart::SpectralChart;
use crate::error::Result;
use crate::linalg::Arrow;
use crate::websystem::WebSystem;

/// Out-of-band eigenvalue of a truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedLevel {
    pub lambda: f64,
    /// `|v(last site)| / max |v|` over all channels.
    pub decay: f64,
}

#[derive(Debug, Clone)]
pub struct TruncationResult {
    pub n_sites: usize,
    pub levels: Vec<TruncatedLevel>,
    /// Smallest eigenvalue of the truncation.
    pub lowest: f64,
}

/// Eigenvalues of the `N`-site truncation outside `[a-2b, a+2b]` whose
/// eigenvectors decay below `1e-6` at the truncation boundary.
pub fn truncated_eigenvalues(sys: &WebSystem, chart: &SpectralChart, n_sites: usize) -> Result<TruncationResult> {
    let arrow = Arrow::new(sys, n_sites)?;
    let bounds = arrow.spectral_bounds();
    let lo_edge = chart.a - 2.0 * chart.b;
    let hi_edge = chart.a + 2.0 * chart.b;
    let below = arrow.count_below(lo_edge);
    let dim = arrow.dim();
    let above_start = arrow.count_below(hi_edge);
    let indices: Vec<usize> = (0..below).chain(above_start..dim).collect();
    let mut levels: Vec<TruncatedLevel> = indices
        .par_iter()
        .map(|&i| -> Result<Option<TruncatedLevel>> {
            let lambda = arrow.eigenvalue(i, bounds);
            if lambda > lo_edge && lambda < hi_edge {
                return Ok(None);
            }
            let v = arrow.eigenvector(lambda)?;
            let decay = decay_metric(sys, n_sites, &v);
            Ok((decay < 1e-6).then_some(TruncatedLevel { lambda, decay }))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    levels.sort_by(|x, y| x.lambda.total_cmp(&y.lambda));
    let lowest = arrow.eigenvalue(0, bounds);
    Ok(TruncationResult { n_sites, levels, lowest })
}

fn decay_metric(sys: &WebSystem, n_sites: usize, v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let m = sys.central_size();
    (0..sys.channel_count())
        .map(|c| v[m + c * n_sites + n_sites - 1].abs() / max)
        .fold(0.0, f64::max)
}

/// Scattering coefficients `s_γσ`, `γ = 0..C`, for a unit wave incoming on
/// the open channel `σ`, from a radiation-closed linear solve with `N` sites.
pub fn scattering_by_linear_solve(
    sys: &WebSystem,
    chart: &SpectralChart,
    sigma: usize,
    omega: C64,
    n_sites: usize,
) -> Result<Vec<C64>> {
    let arrow = Arrow::new(sys, n_sites)?;
    let lambda = chart.lambda(omega)?;
    let nc = sys.channel_count();
    let theta: Vec<C64> = (0..nc).map(|c| chart.theta(c, omega)).collect::<Result<_>>()?;
    let n = n_sites as i32;
    let mut rhs = vec![C64::new(0.0, 0.0); arrow.dim()];
    let tail: Vec<C64> = (0..nc)
        .map(|c| -sys.channel(c).b_coef(n_sites) * theta[c])
        .collect();
    // ψ(N+1) = θ ψ(N) + g on the source channel
    let th = theta[sigma];
    let g = th.powi(-n - 1) - th.powi(1 - n);
    rhs[sys.central_size() + sigma * n_sites + n_sites - 1] = sys.channel(sigma).b_coef(n_sites) * g;
    let x = arrow.solve(lambda, &tail, &rhs)?;
    Ok((0..nc)
        .map(|c| {
            let k = sys.channel(c).support() + 1;
            let v = x[sys.central_size() + c * n_sites + k - 1];
            let incoming = if c == sigma { theta[c].powi(-(k as i32)) } else { C64::new(0.0, 0.0) };
            (v - incoming) / theta[c].powi(k as i32)
        })
        .collect())
}

/// Residue matrix `m_σν` rebuilt from a normalized truncation eigenvector.
///
/// For a simple eigenvalue `φ^ν = c_ν v` with `‖v‖ = 1`, and
/// `m_σν = w_ν g_σ g_ν` where `g_σ = v(σ(K₀+1)) / θ_σ^{K₀+1}` and `w_ν` is the
/// energy weight of channel `ν` at `ω̂`.
pub fn residue_by_eigenvector(
    sys: &WebSystem,
    chart: &SpectralChart,
    omega_hat: C64,
    lambda_hat: f64,
    n_sites: usize,
) -> Result<Vec<Vec<C64>>> {
    let arrow = Arrow::new(sys, n_sites)?;
    let v = arrow.eigenvector(lambda_hat)?;
    let nc = sys.channel_count();
    let m = sys.central_size();
    let theta: Vec<C64> = (0..nc)
        .map(|c| chart.theta_continued(c, omega_hat, omega_hat))
        .collect();
    // fix the sign so the largest central entry is positive
    let pivot = v[..m]
        .iter()
        .copied()
        .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
    let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
    let g: Vec<C64> = (0..nc)
        .map(|c| {
            let k = sys.channel(c).support() + 1;
            sign * v[m + c * n_sites + k - 1] / theta[c].powi(k as i32)
        })
        .collect();
    let w: Vec<C64> = (0..nc)
        .map(|c| energy_weight(sys, chart, c, omega_hat, theta[c]))
        .collect();
    Ok((0..nc)
        .map(|s| (0..nc).map(|n| w[n] * g[s] * g[n]).collect())
        .collect())
}

/// `w_ν = b_ν(θ_ν⁻¹ - θ_ν) / (b (1 - conj(ω̂)⁻²))`, so that `‖φ^ν‖² = w_ν m_νν`.
pub fn energy_weight(sys: &WebSystem, chart: &SpectralChart, nu: usize, omega_hat: C64, theta: C64) -> C64 {
    sys.channel(nu).limit_b * (theta.inv() - theta) / (chart.b * (1.0 - omega_hat.conj().powi(-2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::build_chart;
    use crate::fixtures;

    #[test]
    fn fixture_bound_state() {
        let sys = fixtures::single_channel(4.0, 2.0, 1.0, 1.0);
        let chart = build_chart(&sys).unwrap();
        let r = truncated_eigenvalues(&sys, &chart, 2000).unwrap();
        assert_eq!(r.levels.len(), 1);
        assert!((r.levels[0].lambda - 4.5).abs() < 1e-10);
        let m = residue_by_eigenvector(&sys, &chart, C64::new(-0.5, 0.0), 4.5, 2000).unwrap();
        assert!((m[0][0] - 0.375).norm() < 1e-6);
    }

    #[test]
    fn free_system_has_no_levels() {
        let sys = fixtures::single_channel(2.0, 2.0, 1.0, 1.0);
        let chart = build_chart(&sys).unwrap();
        assert!(truncated_eigenvalues(&sys, &chart, 400).unwrap().levels.is_empty());
    }

    #[test]
    fn levels_stable_in_n() {
        let sys = fixtures::random_system(13, 2, 3);
        let chart = build_chart(&sys).unwrap();
        let a = truncated_eigenvalues(&sys, &chart, 1000).unwrap();
        let b = truncated_eigenvalues(&sys, &chart, 2000).unwrap();
        assert_eq!(a.levels.len(), b.levels.len());
        for (x, y) in a.levels.iter().zip(&b.levels) {
            assert!((x.lambda - y.lambda).abs() < 1e-8);
        }
    }

    #[test]
    fn linear_solve_free_channel() {
        let sys = fixtures::single_channel(2.0, 2.0, 1.0, 1.0);
        let chart = build_chart(&sys).unwrap();
        let w = C64::from_polar(1.0, 0.8);
        let s = scattering_by_linear_solve(&sys, &chart, 0, w, 50).unwrap();
        assert!((s[0] + w * w).norm() < 1e-12);
    }
}
