//! Inverse problem: kernel assembly from spectral data, the discrete
//! Marchenko system, and channel coefficient recovery.
//!
//! Per channel `ν`, with `f_ν(n) = s̃_ν(n) + q_νν(n) - M_νν(n)`:
//!
//! ```text
//! f(k+m) + a(k,m) + Σ_{s=k+1}^{N} a(k,s) f(s+m) = 0,   m = k+1..N
//! ```

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;

use crate::chart::SpectralChart;
use crate::dataset::{z, SpectralDataset};
use crate::direct::Model;
use crate::error::{Error, Result};
use crate::jost::{recover_coefficients, JostCoefficients};
use crate::quad::{adaptive_panels, Adaptive};
use crate::spectrum::DiscreteLevel;

/// Largest tolerated imaginary part of an assembled kernel value.
pub const REALITY_TOL: f64 = 1e-9;
/// Relative pivot size below which the Marchenko matrix counts as singular.
pub const SINGULAR_TOL: f64 = 1e-10;
/// Cap on the geometric tail added to the Marchenko truncation.
pub const MAX_TAIL: usize = 32;

/// `s̃_σ(n)` for `n = 0..=n_max`.
pub fn fourier_reflection(ds: &SpectralDataset, sigma: usize, n_max: usize) -> Vec<C64> {
    let ch = &ds.channels[sigma];
    let mut out = vec![C64::new(0.0, 0.0); n_max + 1];
    for (row, &w) in ch.s_diag.iter().zip(&ch.weights) {
        let theta = C64::new(row[0], row[1]);
        let s = C64::new(row[2], row[3]);
        let mut term = s * w / (2.0 * PI);
        for v in out.iter_mut() {
            *v += term;
            term *= theta;
        }
    }
    out
}

/// `q_σσ(n)` for `n = 0..=n_max` from the closed-channel magnitudes.
pub fn closed_channel_kernel(ds: &SpectralDataset, chart: &SpectralChart, sigma: usize, n_max: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n_max + 1];
    if chart.channels[sigma].segments.is_empty() {
        return Ok(out);
    }
    let id = &ds.channels[sigma].id;
    let entries: Vec<_> = ds.cross_mag.iter().filter(|x| &x.sigma == id).collect();
    if entries.is_empty() {
        return Err(Error::Dataset(format!(
            "channel {id} has a closed range on the circle but no cross magnitudes"
        )));
    }
    let b_sigma = ds.channels[sigma].b;
    for entry in entries {
        let nu = ds.channel_index(&entry.nu).expect("validated");
        let b_nu = ds.channels[nu].b;
        for (&[t, mag], &w) in entry.samples.iter().zip(&entry.weights) {
            let omega = chart.omega_of_theta(sigma, t)?;
            let th_nu = chart.theta(nu, omega)?;
            let phi = mag * mag * b_sigma * (1.0 / t - t) / (b_nu * (th_nu.inv() - th_nu));
            // (1/2πi) Φ θ^{n-1} w; Φ is imaginary so the result is real
            let mut term = phi * w / (2.0 * PI * C64::i() * t);
            for v in out.iter_mut() {
                *v += term.re;
                term *= t;
            }
        }
    }
    Ok(out)
}

/// `M_νν(n)` for `n = 0..=n_max`.
pub fn discrete_kernel(ds: &SpectralDataset, nu: usize, n_max: usize) -> Vec<f64> {
    let id = &ds.channels[nu].id;
    let mut out = vec![0.0; n_max + 1];
    for level in &ds.levels {
        let theta = z(level.theta[id]);
        let mut term = z(level.dtheta[id]) * z(level.m_diag[nu]) / theta;
        for v in out.iter_mut() {
            *v += term.re;
            term *= theta;
        }
    }
    out
}

/// Kernel of one channel with its components, indexed by `n = 0..=n_f`.
#[derive(Debug, Clone, Serialize)]
pub struct KernelChannel {
    pub id: String,
    pub f: Vec<f64>,
    pub s_tilde: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
    /// Largest `|Im s̃(n)|` seen.
    pub imaginary: f64,
}

pub fn assemble_kernel(ds: &SpectralDataset, chart: &SpectralChart, nu: usize, n_f: usize) -> Result<KernelChannel> {
    let st = fourier_reflection(ds, nu, n_f);
    let imaginary = st.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    if imaginary > REALITY_TOL {
        return Err(Error::KernelAssembly(format!(
            "channel {}: Fourier coefficients have imaginary part {imaginary:e}",
            ds.channels[nu].id
        )));
    }
    let s_tilde: Vec<f64> = st.iter().map(|v| v.re).collect();
    let q = closed_channel_kernel(ds, chart, nu, n_f)?;
    let m = discrete_kernel(ds, nu, n_f);
    let f = (0..=n_f).map(|n| s_tilde[n] + q[n] - m[n]).collect();
    Ok(KernelChannel {
        id: ds.channels[nu].id.clone(),
        f,
        s_tilde,
        q,
        m,
        imaginary,
    })
}

/// Truncation `N` for the Marchenko system: `2K₀ + 2` plus enough terms for
/// the slowest discrete tail to fall below `1e-12`.
pub fn default_n_max(ds: &SpectralDataset, k0_guess: usize) -> usize {
    let rate = ds
        .levels
        .iter()
        .flat_map(|l| l.theta.values().map(|&t| z(t).norm()))
        .fold(0.0f64, f64::max);
    let tail = if rate > 0.0 && rate < 1.0 {
        ((1e-12f64).ln() / rate.ln()).ceil() as usize
    } else {
        0
    };
    2 * k0_guess + 2 + tail.min(MAX_TAIL)
}

/// Row `k` of the Jost coefficient table from the Marchenko system.
#[derive(Debug, Clone)]
pub struct MarchenkoRow {
    pub k: usize,
    /// `a(k, m)` for `m = k+1..=n_max`.
    pub a: Vec<f64>,
    /// Max-norm residual of the solved system.
    pub residual: f64,
    /// `‖A⁻¹‖_∞` of the system matrix.
    pub inverse_norm: f64,
}

/// Solve for `a(k, ·)`; `f` must be defined up to index `2 n_max`.
pub fn solve_marchenko(f: &[f64], k: usize, n_max: usize) -> Result<MarchenkoRow> {
    if f.len() <= 2 * n_max {
        return Err(Error::KernelAssembly(format!(
            "kernel has {} values, {} needed",
            f.len(),
            2 * n_max + 1
        )));
    }
    if n_max <= k {
        return Ok(MarchenkoRow {
            k,
            a: Vec::new(),
            residual: 0.0,
            inverse_norm: 1.0,
        });
    }
    let len = n_max - k;
    // unknown j ↔ s = k+1+j, equation i ↔ m = k+1+i
    let mat = DMatrix::from_fn(len, len, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        delta + f[2 * k + 2 + i + j]
    });
    let rhs = DVector::from_fn(len, |i, _| -f[2 * k + 1 + i]);
    let lu = mat.clone().lu();
    let u = lu.u();
    let pivot_min = u.diagonal().iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    let scale = mat.amax().max(1.0);
    if pivot_min < SINGULAR_TOL * scale {
        return Err(Error::IllPosed {
            k,
            message: format!("pivot {pivot_min:e} relative to {scale:e}"),
        });
    }
    let x = lu.solve(&rhs).ok_or_else(|| Error::IllPosed {
        k,
        message: "factorization failed".into(),
    })?;
    let inv = lu.try_inverse().ok_or_else(|| Error::IllPosed {
        k,
        message: "factorization failed".into(),
    })?;
    let inverse_norm = inv.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let residual = (&mat * &x - &rhs).amax();
    Ok(MarchenkoRow {
        k,
        a: x.iter().copied().collect(),
        residual,
        inverse_norm,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveredChannel {
    pub id: String,
    pub limit_a: f64,
    pub limit_b: f64,
    /// `𝔞(k)`, `k = 1..=k_max`.
    pub diag: Vec<f64>,
    /// `𝔟(k)`, `k = 1..=k_max`.
    pub hop: Vec<f64>,
    /// Error bars from solver residuals and conditioning.
    pub errors: Vec<f64>,
    pub max_residual: f64,
}

/// Solve rows `k = 0..=k_max+1` and read off `𝔞(k)`, `𝔟(k)`.
pub fn recover_channel(kernel: &KernelChannel, a: f64, b: f64, k_max: usize, n_max: usize) -> Result<RecoveredChannel> {
    let rows: Vec<MarchenkoRow> = (0..=k_max + 1)
        .into_par_iter()
        .map(|k| solve_marchenko(&kernel.f, k, n_max))
        .collect::<Result<_>>()?;
    let coeffs = JostCoefficients {
        rows: rows
            .iter()
            .map(|r| std::iter::once(1.0).chain(r.a.iter().copied()).collect())
            .collect(),
    };
    let (diag, hop) = recover_coefficients(&coeffs, a, b, k_max)?;
    // forward error of a(k, ·) is bounded by ‖A⁻¹‖ times the residual plus
    // the kernel's own rounding; each coefficient uses rows k-1 and k
    let delta: Vec<f64> = rows
        .iter()
        .map(|r| r.inverse_norm * (r.residual + f64::EPSILON * (1.0 + kernel.f.iter().map(|v| v.abs()).fold(0.0, f64::max))))
        .collect();
    let errors = (1..=k_max).map(|k| 3.0 * b * (delta[k - 1] + delta[k])).collect();
    Ok(RecoveredChannel {
        id: kernel.id.clone(),
        limit_a: a,
        limit_b: b,
        diag,
        hop,
        errors,
        max_residual: rows.iter().map(|r| r.residual).fold(0.0, f64::max),
    })
}

/// Full inverse pass over every channel of a dataset.
pub fn invert(ds: &SpectralDataset, k_max: usize, n_max: Option<usize>) -> Result<Vec<RecoveredChannel>> {
    let chart = ds.chart()?;
    let n_max = n_max.unwrap_or_else(|| default_n_max(ds, k_max)).max(k_max + 3);
    (0..ds.channels.len())
        .into_par_iter()
        .map(|nu| {
            let kernel = assemble_kernel(ds, &chart, nu, 2 * n_max)?;
            let ch = &ds.channels[nu];
            recover_channel(&kernel, ch.a, ch.b, k_max, n_max)
        })
        .collect()
}

/// Cross-checks that need the forward model, not just the dataset.
pub mod diagnostics {
    use super::*;

    /// Angles in `[0, 2π]` of band edges and `±1`.
    pub fn circle_breaks(chart: &SpectralChart) -> Vec<f64> {
        let mut breaks = chart.breakpoints();
        breaks.extend(chart.breakpoints().into_iter().map(|p| 2.0 * PI - p));
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        breaks
    }

    /// `(1/2πi) ∮ g(ω) dω` by adaptive panels in `ψ`, `nodes` to start with.
    fn contour<F>(chart: &SpectralChart, nodes: usize, g: F) -> Result<Vec<C64>>
    where
        F: Fn(C64) -> Result<Vec<C64>> + Sync,
    {
        let (rule, values) = adaptive_panels(
            &circle_breaks(chart),
            nodes,
            Adaptive::default(),
            |psi| {
                let omega = C64::from_polar(1.0, psi);
                Ok::<_, Error>(g(omega)?.into_iter().map(|v| v * omega / (2.0 * PI)).collect::<Vec<C64>>())
            },
            |v: &Vec<C64>| v.clone(),
        )?;
        let mut out = vec![C64::new(0.0, 0.0); values.first().map_or(0, |p| p.len())];
        for (w, p) in rule.weights.iter().zip(values) {
            for (o, v) in out.iter_mut().zip(p) {
                *o += *w * v;
            }
        }
        Ok(out)
    }

    /// `q_νσ(n) = (1/2πi)∮ s_νσ θ_ν^{n-1} θ_ν' dω` for `n = 0..=n_max`.
    pub fn off_diagonal_q(model: &Model, nu: usize, sigma: usize, n_max: usize, nodes: usize) -> Result<Vec<C64>> {
        contour(&model.chart, nodes, |omega| {
            let sample = model.scattering_sample(omega)?;
            let th = sample.theta[nu];
            let mut term = sample.s[(nu, sigma)] * model.chart.dtheta_at(nu, omega, th)? / th;
            Ok((0..=n_max)
                .map(|_| {
                    let v = term;
                    term *= th;
                    v
                })
                .collect())
        })
    }

    /// `M_νσ(n) = Σ Re(θ_ν' θ_ν^{n-1} m_νσ)` over levels.
    pub fn off_diagonal_m(levels: &[DiscreteLevel], nu: usize, sigma: usize, n: usize) -> f64 {
        levels
            .iter()
            .map(|l| (l.dtheta[nu] * l.theta[nu].powi(n as i32 - 1) * l.m[(nu, sigma)]).re)
            .sum()
    }

    /// `J(l, k) = (1/2πi)∮ Δ_l U(k) dω` by direct quadrature.
    pub fn j_by_contour(model: &Model, l: usize, k: usize, nodes: usize) -> Result<DMatrix<C64>> {
        let nc = model.channel_count();
        let flat = contour(&model.chart, nodes, |omega| {
            let ev = model.evaluate(omega)?;
            let u = model.u_from(&ev, k);
            let mut out = Vec::with_capacity(nc * nc);
            for s in 0..nc {
                for n in 0..nc {
                    let th = ev.theta[n];
                    let d = model.chart.dtheta_at(n, omega, th)?;
                    out.push(th.powi(l as i32 - 1) * d * u[(n, s)]);
                }
            }
            Ok(out)
        })?;
        Ok(DMatrix::from_fn(nc, nc, |n, s| flat[s * nc + n]))
    }

    /// `C(k)[A(k,l) + Σ_m A(k,m) Z(l+m)]` with `Z` built from a dataset
    /// (diagonal) and `q_νσ` by contour quadrature (off-diagonal).
    pub fn j_by_kernel(model: &Model, ds: &SpectralDataset, l: usize, k: usize, nodes: usize) -> Result<DMatrix<C64>> {
        let nc = model.channel_count();
        let chart = ds.chart()?;
        let top = l + model.sys.max_support() * 2 + k + 2;
        let mut z_diag = Vec::with_capacity(nc);
        for s in 0..nc {
            let st = fourier_reflection(ds, s, top);
            let q = closed_channel_kernel(ds, &chart, s, top)?;
            z_diag.push((0..=top).map(|n| st[n] + q[n]).collect::<Vec<C64>>());
        }
        let mut out = DMatrix::from_element(nc, nc, C64::new(0.0, 0.0));
        for n in 0..nc {
            let jt = &model.jost[n];
            let c = jt.c_at(k);
            let row = jt.coeffs.rows.get(k).cloned().unwrap_or_else(|| vec![1.0]);
            let a_at = |m: usize| if m >= k { row.get(m - k).copied().unwrap_or(0.0) } else { 0.0 };
            for s in 0..nc {
                let zz: Vec<C64> = if n == s {
                    z_diag[n].clone()
                } else {
                    off_diagonal_q(model, n, s, top, nodes)?
                };
                let mut acc = if n == s { C64::from(a_at(l)) } else { C64::new(0.0, 0.0) };
                for (i, &am) in row.iter().enumerate() {
                    acc += am * zz[k + i + l];
                }
                out[(n, s)] = c * acc;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{export_spectral_data, ExportOptions, QuadratureKind};
    use crate::fixtures;
    use crate::jost::build_jost;
    use crate::spectrum::find_levels;
    use proptest::prelude::*;

    fn opts(nodes: usize) -> ExportOptions {
        ExportOptions {
            circle_nodes: nodes,
            segment_nodes: nodes / 8,
            kind: QuadratureKind::Panel,
            ..Default::default()
        }
    }

    fn kernel_of(sys: crate::websystem::WebSystem, nodes: usize, n_f: usize) -> (SpectralDataset, Vec<KernelChannel>) {
        let model = Model::new(sys).unwrap();
        let levels = find_levels(&model).unwrap();
        let ds = export_spectral_data(&model, &levels, &opts(nodes)).unwrap();
        let chart = ds.chart().unwrap();
        let ks = (0..ds.channels.len())
            .map(|n| assemble_kernel(&ds, &chart, n, n_f).unwrap())
            .collect();
        (ds, ks)
    }

    /// `f` from a Jost table by back-substitution, row `k` from `K₀` down.
    fn kernel_from_jost(coeffs: &JostCoefficients, k0: usize, n_f: usize) -> Vec<f64> {
        let mut f = vec![0.0; n_f + 1];
        let a = |k: usize, m: usize| if m < k { 0.0 } else { coeffs.get(k, m) };
        for k in (0..=k0).rev() {
            for m in [k + 2, k + 1] {
                // f(k+m) + a(k,m) + Σ_{s>k} a(k,s) f(s+m) = 0; f(s+m) with s > k is known
                let tail: f64 = ((k + 1)..=(2 * k0 + 2)).map(|s| a(k, s) * f.get(s + m).copied().unwrap_or(0.0)).sum();
                f[k + m] = -a(k, m) - tail;
            }
        }
        f
    }

    #[test]
    fn free_channel_kernel_vanishes() {
        let (_, ks) = kernel_of(fixtures::single_channel(2.0, 2.0, 1.0, 1.0), 512, 20);
        for n in 1..=20 {
            assert!(ks[0].f[n].abs() < 1e-13, "f({n}) = {}", ks[0].f[n]);
        }
    }

    #[test]
    fn bound_state_discrete_kernel() {
        let (_, ks) = kernel_of(fixtures::single_channel(4.0, 2.0, 1.0, 1.0), 512, 12);
        for n in 1..=12 {
            let expect = 0.375 * (-0.5f64).powi(n as i32 - 1);
            assert!((ks[0].m[n] - expect).abs() < 1e-9);
            assert!(ks[0].f[n].abs() < 1e-9, "f({n}) = {}", ks[0].f[n]);
        }
    }

    #[test]
    fn perturbation_recovers_first_coefficient() {
        let d = 0.7;
        let ch = crate::websystem::ChannelSpec::new("s", 2.0, 1.0, 1.0, vec![2.0 + d], vec![1.0]).unwrap();
        let sys = crate::websystem::WebSystem::new(
            crate::websystem::CentralBlock {
                matrix: DMatrix::from_element(1, 1, 2.0),
                attachments: vec![0],
            },
            vec![ch],
        )
        .unwrap();
        let (_, ks) = kernel_of(sys.clone(), 1024, 24);
        let row = solve_marchenko(&ks[0].f, 0, 12).unwrap();
        let truth = build_jost(sys.channel(0));
        assert!((row.a[0] - truth.coeffs.get(0, 1)).abs() < 1e-9);
        assert!(row.residual < 1e-10);
    }

    #[test]
    fn kernel_matches_jost_back_substitution() {
        for seed in [2, 9] {
            let sys = fixtures::random_system(seed, 2, 3);
            let (_, ks) = kernel_of(sys.clone(), 1024, 12);
            for (c, kc) in ks.iter().enumerate() {
                let jt = build_jost(sys.channel(c));
                let oracle = kernel_from_jost(&jt.coeffs, jt.support, 12);
                for n in 1..=12 {
                    assert!((kc.f[n] - oracle[n]).abs() < 1e-8, "seed {seed} ch {c} n {n}: {} vs {}", kc.f[n], oracle[n]);
                }
            }
        }
    }

    #[test]
    fn zero_kernel_gives_zero_rows() {
        let f = vec![0.0; 41];
        let row = solve_marchenko(&f, 3, 20).unwrap();
        assert!(row.a.iter().all(|&v| v == 0.0));
        let rec = recover_channel(
            &KernelChannel {
                id: "x".into(),
                f,
                s_tilde: vec![],
                q: vec![],
                m: vec![],
                imaginary: 0.0,
            },
            2.0,
            1.5,
            4,
            20,
        )
        .unwrap();
        assert!(rec.diag.iter().all(|&v| v == 2.0) && rec.hop.iter().all(|&v| v == 1.5));
    }

    #[test]
    fn short_kernel_is_rejected() {
        assert!(matches!(solve_marchenko(&[0.0; 10], 0, 5), Err(Error::KernelAssembly(_))));
    }

    #[test]
    fn random_round_trip() {
        let sys = fixtures::random_system(21, 3, 4);
        let model = Model::new(sys.clone()).unwrap();
        let levels = find_levels(&model).unwrap();
        let ds = export_spectral_data(&model, &levels, &opts(2048)).unwrap();
        let rec = invert(&ds, 4, None).unwrap();
        for (c, r) in rec.iter().enumerate() {
            let ch = sys.channel(c);
            for k in 1..=4 {
                assert!((r.diag[k - 1] - ch.a_coef(k)).abs() < 1e-8);
                assert!((r.hop[k - 1] - ch.b_coef(k)).abs() < 1e-8);
                assert!(r.hop[k - 1] > 0.0);
            }
        }
    }

    #[test]
    fn zeroing_levels_adds_discrete_part() {
        let (mut ds, ks) = kernel_of(fixtures::f2(), 512, 10);
        ds.levels.clear();
        let chart = ds.chart().unwrap();
        for (n, k) in ks.iter().enumerate() {
            let bare = assemble_kernel(&ds, &chart, n, 10).unwrap();
            for i in 0..=10 {
                assert!((bare.f[i] - (k.f[i] + k.m[i])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn off_diagonal_kernel_matches_levels() {
        let model = Model::new(fixtures::f2()).unwrap();
        let levels = find_levels(&model).unwrap();
        assert_eq!(levels.len(), 1);
        for (nu, sigma) in [(0, 1), (1, 0)] {
            let q = diagnostics::off_diagonal_q(&model, nu, sigma, 20, 1024).unwrap();
            for n in 1..=20 {
                let m = diagnostics::off_diagonal_m(&levels, nu, sigma, n);
                assert!((q[n].re - m).abs() < 1e-9, "n={n}: {} vs {m}", q[n].re);
                assert!(q[n].im.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn contour_and_kernel_agree_on_j() {
        let model = Model::new(fixtures::random_system(9, 2, 3)).unwrap();
        let levels = find_levels(&model).unwrap();
        let ds = export_spectral_data(&model, &levels, &opts(1024)).unwrap();
        for k in 0..2 {
            for l in 0..2 {
                let a = diagnostics::j_by_contour(&model, l, k, 1024).unwrap();
                let b = diagnostics::j_by_kernel(&model, &ds, l, k, 1024).unwrap();
                let err = (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(err < 1e-8, "k={k} l={l}: {err:e}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn round_trip_on_random_systems(seed in 0u64..10_000, channels in 2usize..=3) {
            let sys = fixtures::random_system(seed, channels, 4);
            let model = Model::new(sys.clone()).unwrap();
            let levels = find_levels(&model).unwrap();
            let ds = export_spectral_data(&model, &levels, &opts(4096)).unwrap();
            let k_max = sys.max_support().max(1);
            for (c, r) in invert(&ds, k_max, None).unwrap().iter().enumerate() {
                for k in 1..=k_max {
                    prop_assert!((r.diag[k - 1] - sys.channel(c).a_coef(k)).abs() < 1e-7);
                    prop_assert!((r.hop[k - 1] - sys.channel(c).b_coef(k)).abs() < 1e-7);
                }
                for (n, k) in r.errors.iter().zip(1..) {
                    prop_assert!(n.is_finite(), "k={}", k);
                }
            }
        }
    }
}
