//! Band geometry and the Zhukovskii uniformization.
//!
//! The global band `[a-2b, a+2b]` is parametrized by `ω` on the unit circle
//! through `λ = a - b(ω + 1/ω)`; each channel has its own map `θ_σ` with
//! `λ = a_σ - b_σ(θ_σ + 1/θ_σ)`. The composition `θ_σ(ω)` needs an explicit
//! branch rule, implemented in [`SpectralChart::theta`].

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::websystem::WebSystem;

/// Tolerance for deciding that a point sits on the unit circle.
pub const CIRCLE_TOL: f64 = 1e-12;

/// Per-channel band data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelBand {
    pub a: f64,
    pub b: f64,
    /// Upper-half open arc `T_σ⁺ ∩ {Im ω ≥ 0}` as `[ψ_lo, ψ_hi]` in radians;
    /// the full open set is this arc together with its mirror image.
    pub open_arc: (f64, f64),
    /// Segments of `J_σ`, each `[lo, hi]` with `-1 ≤ lo < hi ≤ 1`.
    pub segments: Vec<(f64, f64)>,
}

impl ChannelBand {
    pub fn lo(&self) -> f64 {
        self.a - 2.0 * self.b
    }
    pub fn hi(&self) -> f64 {
        self.a + 2.0 * self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralChart {
    pub a: f64,
    pub b: f64,
    pub channels: Vec<ChannelBand>,
}

/// `ω` together with everything the chart derives from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartPoint {
    pub omega: C64,
    pub lambda: C64,
    pub theta: Vec<C64>,
    pub open: Vec<bool>,
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

impl SpectralChart {
    /// Chart for explicit channel limits `(a_σ, b_σ)`.
    pub fn from_limits(limits: &[(f64, f64)]) -> Result<Self> {
        if limits.is_empty() {
            return Err(Error::Domain("chart needs at least one channel".into()));
        }
        let mut bands: Vec<(f64, f64)> =
            limits.iter().map(|&(a, b)| (a - 2.0 * b, a + 2.0 * b)).collect();
        bands.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut reach = bands[0].1;
        for &(lo, hi) in &bands[1..] {
            if lo >= reach {
                return Err(Error::DisconnectedBands { left: reach, right: lo });
            }
            reach = reach.max(hi);
        }
        let min = bands[0].0;
        let max = reach;
        let a = 0.5 * (min + max);
        let b = 0.25 * (max - min);

        let channels = limits
            .iter()
            .map(|&(ca, cb)| {
                let lo = ca - 2.0 * cb;
                let hi = ca + 2.0 * cb;
                let psi_lo = clamp_unit((a - lo) / (2.0 * b)).acos();
                let psi_hi = clamp_unit((a - hi) / (2.0 * b)).acos();
                let mut segments = Vec::new();
                // λ below the channel band near ω = 1, above it near ω = -1
                if lo > min {
                    let t = Self::real_root((ca - min) / cb);
                    segments.push((t, 1.0));
                }
                if hi < max {
                    let t = Self::real_root((ca - max) / cb);
                    segments.insert(0, (-1.0, t));
                }
                ChannelBand {
                    a: ca,
                    b: cb,
                    open_arc: (psi_lo, psi_hi),
                    segments,
                }
            })
            .collect();
        Ok(SpectralChart { a, b, channels })
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    /// Root of `θ + 1/θ = z` inside `(-1, 1)` for real `|z| ≥ 2`.
    fn real_root(z: f64) -> f64 {
        let disc = (z * z - 4.0).max(0.0).sqrt();
        let big = 0.5 * (z + z.signum() * disc);
        1.0 / big
    }

    /// `λ(ω) = a - b(ω + 1/ω)`.
    pub fn lambda(&self, omega: C64) -> Result<C64> {
        if omega == C64::new(0.0, 0.0) {
            return Err(Error::Domain("λ(ω) undefined at ω = 0".into()));
        }
        Ok(self.a - self.b * (omega + omega.inv()))
    }

    fn lambda_unchecked(&self, omega: C64) -> C64 {
        self.a - self.b * (omega + omega.inv())
    }

    /// `θ_σ(ω)` on the closed unit disk with the physical branch rule.
    pub fn theta(&self, sigma: usize, omega: C64) -> Result<C64> {
        if omega == C64::new(0.0, 0.0) {
            return Err(Error::Domain("θ(ω) undefined at ω = 0".into()));
        }
        Ok(self.theta_unchecked(sigma, omega))
    }

    fn theta_unchecked(&self, sigma: usize, omega: C64) -> C64 {
        let r = omega.norm();
        if (r - 1.0).abs() <= CIRCLE_TOL {
            self.theta_on_circle(sigma, omega)
        } else if r < 1.0 {
            self.theta_inside(sigma, omega)
        } else {
            // reflect: λ(ω) = λ(1/ω); the small root is the decaying one
            self.theta_inside(sigma, omega.inv())
        }
    }

    fn z_of(&self, sigma: usize, omega: C64) -> C64 {
        let ch = &self.channels[sigma];
        (ch.a - self.lambda_unchecked(omega)) / ch.b
    }

    fn theta_inside(&self, sigma: usize, omega: C64) -> C64 {
        let z = self.z_of(sigma, omega);
        let s = (z * z - 4.0).sqrt();
        let r1 = 0.5 * (z + s);
        let r2 = 0.5 * (z - s);
        let big = if r1.norm() >= r2.norm() { r1 } else { r2 };
        big.inv()
    }

    fn theta_on_circle(&self, sigma: usize, omega: C64) -> C64 {
        let ch = &self.channels[sigma];
        // 1 ∓ z/2 from half-angles of ψ = arg ω, exact next to ω = ±1
        let (s2, c2) = (0.5 * omega.arg().abs()).sin_cos();
        let one_minus = (4.0 * self.b * s2 * s2 + ((self.a - 2.0 * self.b) - (ch.a - 2.0 * ch.b))) / (2.0 * ch.b);
        let one_plus = (4.0 * self.b * c2 * c2 + ((ch.a + 2.0 * ch.b) - (self.a + 2.0 * self.b))) / (2.0 * ch.b);
        if one_minus >= 0.0 && one_plus >= 0.0 {
            let re = 0.5 * (one_plus - one_minus);
            let im = (one_minus * one_plus).sqrt();
            let sign = if omega.im < 0.0 { -1.0 } else { 1.0 };
            C64::new(re, sign * im)
        } else {
            C64::new(Self::real_root(one_plus - one_minus), 0.0)
        }
    }

    /// Analytic continuation of `θ_σ` to a neighborhood of a point
    /// `reference` on the closed disk, valid on both sides of the circle.
    pub fn theta_continued(&self, sigma: usize, omega: C64, reference: C64) -> C64 {
        let r = omega.norm();
        if r <= 1.0 {
            return self.theta_unchecked(sigma, omega);
        }
        let inner = self.theta_unchecked(sigma, omega.inv());
        if self.is_open(sigma, reference) {
            inner.inv()
        } else {
            inner
        }
    }

    /// `dθ_σ/dω = b(1 - ω⁻²) / (b_σ(1 - θ_σ⁻²))` at a given branch value.
    pub fn dtheta_at(&self, sigma: usize, omega: C64, theta: C64) -> Result<C64> {
        // on the circle 1 - z⁻² = 2i Im z / z, which keeps its relative
        // accuracy next to z = ±1
        let gap = |z: C64| {
            if (z.norm() - 1.0).abs() < CIRCLE_TOL {
                C64::new(0.0, 2.0 * z.im) / z
            } else {
                1.0 - z.powi(-2)
            }
        };
        let denom = gap(theta);
        if denom.norm() < 1e-14 {
            return Err(Error::BandEdge(format!(
                "dθ/dω singular: θ_{sigma} = {theta} at ω = {omega}"
            )));
        }
        let ch = &self.channels[sigma];
        Ok(self.b * gap(omega) / (ch.b * denom))
    }

    pub fn dtheta_domega(&self, sigma: usize, omega: C64) -> Result<C64> {
        if omega == C64::new(0.0, 0.0) {
            return Err(Error::Domain("dθ/dω undefined at ω = 0".into()));
        }
        self.dtheta_at(sigma, omega, self.theta_unchecked(sigma, omega))
    }

    /// `ω_σ(θ)` on the closed upper half circle for `θ ∈ J_σ`.
    pub fn omega_of_theta(&self, sigma: usize, theta: f64) -> Result<C64> {
        let ch = &self.channels[sigma];
        let inside = ch
            .segments
            .iter()
            .any(|&(lo, hi)| theta >= lo - 1e-14 && theta <= hi + 1e-14);
        if !inside || theta == 0.0 {
            return Err(Error::Domain(format!("θ = {theta} outside J_{sigma}")));
        }
        let lambda = ch.a - ch.b * (theta + 1.0 / theta);
        Ok(self.omega_of_lambda(lambda))
    }

    /// `ω` on the circle with `θ_σ(ω) = e^{iφ}`, `φ ∈ [-π, π]`, for an open
    /// channel. Uses half-angle forms so `1 ± cos ψ` keeps full relative
    /// precision next to `ω = ±1`.
    pub fn omega_of_phase(&self, sigma: usize, phi: f64) -> C64 {
        let ch = &self.channels[sigma];
        let (s2, c2) = (0.5 * phi).sin_cos();
        // 1 - cos ψ = (λ - (a - 2b)) / 2b and 1 + cos ψ = ((a + 2b) - λ) / 2b
        let one_minus = ((ch.a - 2.0 * ch.b - (self.a - 2.0 * self.b)) + 4.0 * ch.b * s2 * s2) / (2.0 * self.b);
        let one_plus = ((self.a + 2.0 * self.b - (ch.a + 2.0 * ch.b)) + 4.0 * ch.b * c2 * c2) / (2.0 * self.b);
        let one_minus = one_minus.clamp(0.0, 2.0);
        let one_plus = one_plus.clamp(0.0, 2.0);
        let im = (one_minus * one_plus).sqrt();
        let re = 0.5 * (one_plus - one_minus);
        let w = C64::new(re, im) / C64::new(re, im).norm();
        if phi < 0.0 {
            w.conj()
        } else {
            w
        }
    }

    /// Upper-half-circle preimage of a real `λ` in the global band.
    pub fn omega_of_lambda(&self, lambda: f64) -> C64 {
        let w = clamp_unit((self.a - lambda) / (2.0 * self.b));
        C64::new(w, (1.0 - w * w).max(0.0).sqrt())
    }

    /// Angle `ψ ∈ [0, π]` with `λ(e^{iψ}) = lambda`.
    pub fn angle_of_lambda(&self, lambda: f64) -> f64 {
        clamp_unit((self.a - lambda) / (2.0 * self.b)).acos()
    }

    /// Whether channel `σ` propagates at `ω`.
    pub fn is_open(&self, sigma: usize, omega: C64) -> bool {
        if ((omega.norm()) - 1.0).abs() > CIRCLE_TOL {
            return false;
        }
        self.z_of(sigma, omega).re.abs() <= 2.0
    }

    pub fn point(&self, omega: C64) -> Result<ChartPoint> {
        let lambda = self.lambda(omega)?;
        let theta: Vec<C64> = (0..self.channels.len())
            .map(|s| self.theta_unchecked(s, omega))
            .collect();
        let open = theta.iter().map(|t| (t.norm() - 1.0).abs() <= CIRCLE_TOL).collect();
        Ok(ChartPoint {
            omega,
            lambda,
            theta,
            open,
        })
    }

    /// Angles in `[0, π]` where some channel band edge sits, including the
    /// endpoints `0` and `π`; sorted, deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = vec![0.0, PI];
        for ch in &self.channels {
            for psi in [ch.open_arc.0, ch.open_arc.1] {
                if psi > 1e-13 && psi < PI - 1e-13 {
                    out.push(psi);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        out
    }

    /// Band-edge points `e^{iψ}` strictly inside the upper half circle.
    pub fn edge_points(&self) -> Vec<C64> {
        self.breakpoints()
            .into_iter()
            .filter(|&p| p > 0.0 && p < PI)
            .map(|p| C64::from_polar(1.0, p))
            .collect()
    }

    /// Breakpoints in the `θ_σ` angle `φ ∈ [0, π]` as ω runs the upper open
    /// arc of channel `σ`: images of band edges and of the `extra` energies, plus `0`, `π`.
    pub fn theta_breakpoints(&self, sigma: usize, extra: &[f64]) -> Vec<f64> {
        let ch = &self.channels[sigma];
        let mut out = vec![0.0, PI];
        let edges = self.channels.iter().flat_map(|o| [o.lo(), o.hi()]);
        for lambda in edges.chain(extra.iter().copied()) {
            let c = (ch.a - lambda) / (2.0 * ch.b);
            if c > -1.0 + 1e-13 && c < 1.0 - 1e-13 {
                out.push(c.acos());
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        out
    }

    /// Breakpoints of `J_σ` segments in `θ`: images of band edges and `extra`.
    pub fn segment_breakpoints(&self, sigma: usize, seg: (f64, f64), extra: &[f64]) -> Vec<f64> {
        let ch = &self.channels[sigma];
        let mut out = vec![seg.0, seg.1];
        let edges = self.channels.iter().flat_map(|o| [o.lo(), o.hi()]);
        for lambda in edges.chain(extra.iter().copied()) {
            let z = (ch.a - lambda) / ch.b;
            if z.abs() > 2.0 {
                let t = Self::real_root(z);
                if t > seg.0 + 1e-13 && t < seg.1 - 1e-13 {
                    out.push(t);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        out
    }
}

/// Chart for a system.
pub fn build_chart(sys: &WebSystem) -> Result<SpectralChart> {
    let limits: Vec<(f64, f64)> = sys.channels().iter().map(|c| (c.limit_a, c.limit_b)).collect();
    SpectralChart::from_limits(&limits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f1_chart() -> SpectralChart {
        SpectralChart::from_limits(&[(2.0, 1.0), (3.0, 1.0)]).unwrap()
    }

    #[test]
    fn global_band_of_two_channels() {
        let ch = f1_chart();
        assert_eq!((ch.a, ch.b), (2.5, 1.25));
    }

    #[test]
    fn single_channel_is_matched() {
        let ch = SpectralChart::from_limits(&[(2.0, 1.0)]).unwrap();
        assert_eq!((ch.a, ch.b), (2.0, 1.0));
        assert!(ch.channels[0].segments.is_empty());
        let (lo, hi) = ch.channels[0].open_arc;
        assert!(lo.abs() < 1e-15 && (hi - PI).abs() < 1e-15);
    }

    #[test]
    fn disconnected_bands_rejected() {
        let err = SpectralChart::from_limits(&[(2.0, 1.0), (8.0, 1.0)]).unwrap_err();
        assert!(matches!(err, Error::DisconnectedBands { .. }));
    }

    #[test]
    fn lambda_special_points() {
        let ch = f1_chart();
        let l = |w: C64| ch.lambda(w).unwrap();
        assert!((l(C64::new(1.0, 0.0)) - 0.0).norm() < 1e-15);
        assert!((l(C64::new(-1.0, 0.0)) - 5.0).norm() < 1e-15);
        assert!((l(C64::new(0.0, 1.0)) - 2.5).norm() < 1e-15);
        assert!(ch.lambda(C64::new(0.0, 0.0)).is_err());
    }

    #[test]
    fn matched_channel_theta_is_identity() {
        let ch = SpectralChart::from_limits(&[(2.0, 1.0)]).unwrap();
        for w in [C64::new(0.3, 0.4), C64::new(-0.7, 0.0), C64::from_polar(1.0, 2.0), C64::from_polar(1.0, -0.5)] {
            assert!((ch.theta(0, w).unwrap() - w).norm() < 1e-14, "{w}");
            assert!((ch.dtheta_domega(0, w).unwrap() - 1.0).norm() < 1e-12);
        }
    }

    #[test]
    fn closed_channel_at_top_edge() {
        let ch = f1_chart();
        let t = ch.theta(0, C64::new(-1.0, 0.0)).unwrap();
        assert!((t.re - (-3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert_eq!(t.im, 0.0);
        assert!((t.re + 0.381966011250105).abs() < 1e-12);
    }

    #[test]
    fn segments_of_f1() {
        let ch = f1_chart();
        let s0 = &ch.channels[0].segments;
        assert_eq!(s0.len(), 1);
        assert_eq!(s0[0].0, -1.0);
        assert!((s0[0].1 - (-3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        let s1 = &ch.channels[1].segments;
        assert_eq!(s1.len(), 1);
        assert_eq!(s1[0].1, 1.0);
        let w = ch.omega_of_theta(0, -0.381966011250105).unwrap();
        assert!((w - C64::new(-1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn omega_of_theta_rejects_outside() {
        let ch = f1_chart();
        assert!(ch.omega_of_theta(0, 0.5).is_err());
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let ch = f1_chart();
        let h = 1e-6;
        for w in [C64::new(0.3, 0.2), C64::new(-0.5, 0.6), C64::new(0.1, -0.7)] {
            let fd = (ch.theta(0, w + h).unwrap() - ch.theta(0, w - h).unwrap()) / (2.0 * h);
            let d = ch.dtheta_domega(0, w).unwrap();
            assert!(((fd - d) / d).norm() < 1e-7, "{w}: {fd} vs {d}");
            let dc = ch.dtheta_domega(0, w.conj()).unwrap();
            assert!((dc - d.conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn continuation_is_analytic_across_open_arc() {
        let ch = f1_chart();
        let w0 = C64::from_polar(1.0, 1.7);
        assert!(ch.is_open(0, w0) && ch.is_open(1, w0));
        for s in 0..2 {
            let inside = ch.theta_continued(s, w0 * 0.999_999, w0);
            let outside = ch.theta_continued(s, w0 * 1.000_001, w0);
            assert!((inside - outside).norm() < 1e-5, "{inside} {outside}");
        }
        let w1 = C64::from_polar(1.0, 2.9);
        assert!(!ch.is_open(0, w1));
        let inside = ch.theta_continued(0, w1 * 0.999_999, w1);
        let outside = ch.theta_continued(0, w1 * 1.000_001, w1);
        assert!((inside - outside).norm() < 1e-5);
    }

    proptest! {
        #[test]
        fn theta_solves_quadratic_and_conjugates(
            r in 0.05f64..1.0, phi in -3.1f64..3.1, a2 in 1.0f64..4.0, b2 in 0.5f64..1.5
        ) {
            let ch = SpectralChart::from_limits(&[(2.0, 1.0), (a2, b2)]).unwrap();
            let w = C64::from_polar(r, phi);
            for s in 0..2 {
                let t = ch.theta(s, w).unwrap();
                let band = &ch.channels[s];
                let lam = band.a - band.b * (t + t.inv());
                prop_assert!((lam - ch.lambda(w).unwrap()).norm() < 1e-11);
                prop_assert!(t.norm() <= 1.0 + 1e-12);
                prop_assert!((ch.theta(s, w.conj()).unwrap() - t.conj()).norm() < 1e-12);
            }
        }

        #[test]
        fn arc_partition_on_circle(phi in 0.001f64..(PI - 0.001), a2 in 1.0f64..4.0, b2 in 0.5f64..1.5) {
            let ch = SpectralChart::from_limits(&[(2.0, 1.0), (a2, b2)]).unwrap();
            let w = C64::from_polar(1.0, phi);
            let lam = ch.lambda(w).unwrap().re;
            for s in 0..2 {
                let band = &ch.channels[s];
                let t = ch.theta(s, w).unwrap();
                let inside = lam > band.lo() && lam < band.hi();
                let (plo, phi_hi) = band.open_arc;
                if (lam - band.lo()).abs() > 1e-9 && (lam - band.hi()).abs() > 1e-9 {
                    prop_assert_eq!(ch.is_open(s, w), inside);
                    prop_assert_eq!(inside, phi > plo && phi < phi_hi);
                }
                if inside {
                    prop_assert!((t.norm() - 1.0).abs() < 1e-12);
                    prop_assert!((ch.theta(s, w.inv()).unwrap() - t.inv()).norm() < 1e-12);
                    prop_assert!(t.im > 0.0);
                } else {
                    prop_assert!(t.im == 0.0 && t.re.abs() < 1.0);
                    prop_assert!((ch.theta(s, w.inv()).unwrap() - t).norm() < 1e-12);
                    let back = ch.omega_of_theta(s, t.re).unwrap();
                    prop_assert!((back - w).norm() < 1e-9);
                }
            }
        }
    }
}
