//! Jost solutions of a compactly supported channel.
//!
//! Beyond the support the Jost solution is the pure power `θ^k`, so the
//! backward recursion terminates and `e(k, θ) = c(k) Σ_m a(k, m) θ^m` is an
//! exact finite Laurent polynomial with powers `k..=max(k, 2K₀ - k)`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::websystem::ChannelSpec;

/// Triangular table `a(k, m)` for `m ≥ k`, `a(k, k) = 1`.
///
/// Row `k` stores `a(k, k), a(k, k+1), …`; entries past the stored range
/// are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JostCoefficients {
    pub rows: Vec<Vec<f64>>,
}

impl JostCoefficients {
    pub fn get(&self, k: usize, m: usize) -> f64 {
        if m < k {
            return 0.0;
        }
        self.rows
            .get(k)
            .and_then(|r| r.get(m - k))
            .copied()
            .unwrap_or(if m == k { 1.0 } else { 0.0 })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JostTable {
    pub id: String,
    pub limit_a: f64,
    pub limit_b: f64,
    pub support: usize,
    /// `c(k)` for `k = 0..=K₀+1`.
    pub c: Vec<f64>,
    /// Rows `k = 0..=K₀+1`.
    pub coeffs: JostCoefficients,
}

/// Multiply a coefficient list (lowest power `lo`) by `θ + 1/θ`.
fn times_shift_sum(p: &[f64]) -> Vec<f64> {
    // input powers lo..lo+n-1, output lo-1..lo+n
    let n = p.len();
    let mut out = vec![0.0; n + 2];
    for (i, &v) in p.iter().enumerate() {
        out[i] += v;
        out[i + 2] += v;
    }
    out
}

/// Backward recursion from the free region down to `k = 0`.
pub fn build_jost(ch: &ChannelSpec) -> JostTable {
    let k0 = ch.support();
    let a = ch.limit_a;
    let b = ch.limit_b;
    // polys[k]: coefficients of e(k) with lowest power k
    let mut polys: Vec<Vec<f64>> = vec![Vec::new(); k0 + 3];
    polys[k0 + 1] = vec![1.0];
    polys[k0 + 2] = vec![1.0];
    for k in (1..=k0 + 1).rev() {
        let ek = &polys[k];
        let ek1 = &polys[k + 1];
        let shifted = times_shift_sum(ek);
        let d = ch.a_coef(k) - a;
        let mut next = vec![0.0; shifted.len().max(ek.len() + 1).max(ek1.len() + 2)];
        for (i, v) in shifted.iter().enumerate() {
            next[i] += b * v;
        }
        for (i, v) in ek.iter().enumerate() {
            next[i + 1] += d * v;
        }
        let bk = ch.b_coef(k);
        for (i, v) in ek1.iter().enumerate() {
            next[i + 2] -= bk * v;
        }
        let bkm = ch.b_coef(k - 1);
        for v in next.iter_mut() {
            *v /= bkm;
        }
        while next.len() > 1 && next.last() == Some(&0.0) {
            next.pop();
        }
        // degree bound: e(k-1) has powers k-1..=2K₀-k+1
        let max_len = (2 * k0 + 1).saturating_sub(2 * (k - 1)).max(1);
        next.truncate(max_len);
        polys[k - 1] = next;
    }
    let mut c = vec![1.0; k0 + 2];
    for k in (0..=k0).rev() {
        c[k] = c[k + 1] * b / ch.b_coef(k);
    }
    let rows = (0..=k0 + 1)
        .map(|k| {
            let lead = c[k];
            polys[k].iter().map(|v| v / lead).collect::<Vec<f64>>()
        })
        .map(|mut r: Vec<f64>| {
            r[0] = 1.0;
            r
        })
        .collect();
    JostTable {
        id: ch.id.clone(),
        limit_a: a,
        limit_b: b,
        support: k0,
        c,
        coeffs: JostCoefficients { rows },
    }
}

impl JostTable {
    pub fn c_at(&self, k: usize) -> f64 {
        self.c.get(k).copied().unwrap_or(1.0)
    }

    fn row(&self, k: usize) -> &[f64] {
        self.coeffs.rows.get(k).map(|r| r.as_slice()).unwrap_or(&[1.0])
    }

    /// `e(k, θ)`.
    pub fn eval(&self, k: usize, theta: C64) -> C64 {
        let row = self.row(k);
        let mut acc = C64::new(0.0, 0.0);
        for &v in row.iter().rev() {
            acc = acc * theta + v;
        }
        self.c_at(k) * acc * theta.powi(k as i32)
    }

    /// `de(k, θ)/dθ`.
    pub fn derivative(&self, k: usize, theta: C64) -> C64 {
        let row = self.row(k);
        let mut acc = C64::new(0.0, 0.0);
        for (j, &v) in row.iter().enumerate() {
            let p = (k + j) as i32;
            if p > 0 {
                acc += v * p as f64 * theta.powi(p - 1);
            }
        }
        self.c_at(k) * acc
    }

    /// Second solution `e¹(k, θ) = e(k, 1/θ)`, equal to `θ^{-k}` past the support.
    pub fn eval_second(&self, k: usize, theta: C64) -> C64 {
        self.eval(k, theta.inv())
    }

    /// Laurent coefficients of `e¹(k, ·)` as `(power, value)` pairs.
    pub fn second_solution_terms(&self, k: usize) -> Vec<(i64, f64)> {
        self.row(k)
            .iter()
            .enumerate()
            .map(|(j, &v)| (-((k + j) as i64), self.c_at(k) * v))
            .collect()
    }
}

/// `p(k)` for `k = 0..=k_max` with `p(0) = 1`, `p(1) = 0`.
pub fn build_p(ch: &ChannelSpec, lambda: C64, k_max: usize) -> Vec<C64> {
    let mut p = vec![C64::new(0.0, 0.0); k_max.max(1) + 1];
    p[0] = C64::new(1.0, 0.0);
    for k in 1..k_max {
        p[k + 1] = ((ch.a_coef(k) - lambda) * p[k] - ch.b_coef(k - 1) * p[k - 1]) / ch.b_coef(k);
    }
    p.truncate(k_max + 1);
    p
}

/// `𝔞(k)`, `𝔟(k)` for `k = 1..=k_max` from a coefficient table.
pub fn recover_coefficients(
    coeffs: &JostCoefficients,
    a: f64,
    b: f64,
    k_max: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut diag = Vec::with_capacity(k_max);
    let mut hop = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let da = coeffs.get(k - 1, k) - coeffs.get(k, k + 1);
        let sq = da * coeffs.get(k, k + 1) + coeffs.get(k, k + 2) - coeffs.get(k - 1, k + 1) + 1.0;
        if sq <= 0.0 || !sq.is_finite() {
            return Err(Error::Reconstruction {
                k,
                message: format!("𝔟(k)²/b² = {sq} is not positive"),
            });
        }
        diag.push(a + b * da);
        hop.push(b * sq.sqrt());
    }
    Ok((diag, hop))
}

/// `x(k) y(k+1) - x(k+1) y(k)`.
pub fn wronskian(x: (C64, C64), y: (C64, C64)) -> C64 {
    x.0 * y.1 - x.1 * y.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use proptest::prelude::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn free_channel_table() {
        let ch = ChannelSpec::free("f", 2.0, 1.0, 1.0);
        let t = build_jost(&ch);
        assert_eq!(t.c, vec![1.0, 1.0]);
        for k in 0..4 {
            assert_eq!(t.coeffs.get(k, k), 1.0);
            assert_eq!(t.coeffs.get(k, k + 1), 0.0);
        }
        assert!((t.eval(3, c(0.5)) - 0.125).norm() < 1e-16);
    }

    #[test]
    fn diagonal_perturbation_by_hand() {
        let d = 0.3;
        let ch = ChannelSpec::new("d", 2.0, 1.5, 1.5, vec![2.0 + d], vec![1.5]).unwrap();
        let t = build_jost(&ch);
        assert_eq!(t.coeffs.rows[0].len(), 2);
        assert!((t.coeffs.get(0, 1) - d / 1.5).abs() < 1e-15);
        assert_eq!(t.c[0], 1.0);
        assert!((t.eval(0, c(1.0)) - (1.0 + d / 1.5)).norm() < 1e-15);
        let (diag, hop) = recover_coefficients(&t.coeffs, 2.0, 1.5, 3).unwrap();
        assert!((diag[0] - (2.0 + d)).abs() < 1e-14);
        assert!((hop[0] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn hop_perturbation_scales_c() {
        let ch = ChannelSpec::new("h", 2.0, 1.0, 1.0, vec![2.0], vec![1.3]).unwrap();
        let t = build_jost(&ch);
        assert!((t.c[1] - 1.0 / 1.3).abs() < 1e-15);
        assert_recurrence(&ch, &t);
    }

    fn assert_recurrence(ch: &ChannelSpec, t: &JostTable) {
        for theta in [C64::new(0.3, 0.7), C64::new(-0.9, 0.1), C64::from_polar(1.0, 0.4)] {
            let lam = ch.limit_a - ch.limit_b * (theta + theta.inv());
            for k in 1..=ch.support() + 3 {
                let lhs = ch.b_coef(k - 1) * t.eval(k - 1, theta);
                let rhs = (ch.a_coef(k) - lam) * t.eval(k, theta) - ch.b_coef(k) * t.eval(k + 1, theta);
                assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()), "k={k}");
            }
        }
    }

    #[test]
    fn random_tables_satisfy_recurrence() {
        for seed in 0..20 {
            let ch = fixtures::random_channel(seed, 8);
            let t = build_jost(&ch);
            assert_recurrence(&ch, &t);
            for k in 0..=ch.support() + 1 {
                assert_eq!(t.coeffs.get(k, k), 1.0);
                let hi = (2 * ch.support()).saturating_sub(k).max(k);
                assert!(t.coeffs.rows[k].len() <= hi - k + 1);
            }
        }
    }

    #[test]
    fn conjugation_on_circle() {
        let t = build_jost(&fixtures::random_channel(3, 5));
        let th = C64::from_polar(1.0, 1.1);
        for k in 0..7 {
            assert!((t.eval(k, th.conj()) - t.eval(k, th).conj()).norm() < 1e-13);
        }
    }

    #[test]
    fn second_solution_wronskian() {
        let ch = fixtures::random_channel(11, 6);
        let t = build_jost(&ch);
        for th in [C64::new(0.4, 0.3), C64::from_polar(1.0, 2.0)] {
            let w = ch.b_coef(0)
                * wronskian(
                    (t.eval_second(0, th), t.eval_second(1, th)),
                    (t.eval(0, th), t.eval(1, th)),
                );
            let expect = ch.limit_b * (th - th.inv());
            assert!((w - expect).norm() < 1e-10 * expect.norm());
        }
        let terms = t.second_solution_terms(ch.support() + 1);
        assert_eq!(terms, vec![(-(ch.support() as i64 + 1), 1.0)]);
    }

    #[test]
    fn p_solution_cases() {
        let ch = fixtures::random_channel(5, 4);
        let p = build_p(&ch, c(1.7), 5);
        assert_eq!(p[0], c(1.0));
        assert_eq!(p[1], c(0.0));
        assert!((p[2] + ch.b_coef(0) / ch.b_coef(1)).norm() < 1e-15);

        let free = ChannelSpec::free("f", 2.0, 1.0, 1.0);
        let w = C64::new(0.3, 0.5);
        let lam = 2.0 - (w + w.inv());
        let p = build_p(&free, lam, 8);
        for (k, pk) in p.iter().enumerate().skip(1) {
            let km = k as i32 - 1;
            let expect = (w.powi(km) - w.powi(-km)) / (w.inv() - w);
            assert!((pk - expect).norm() < 1e-11 * (1.0 + expect.norm()), "k={k}");
        }
    }

    #[test]
    fn p_from_jost_pair() {
        // p is the solution with p(0) = 1, p(1) = 0 expressed through e(θ), e(1/θ)
        let ch = fixtures::random_channel(8, 4);
        let t = build_jost(&ch);
        let th = C64::from_polar(1.0, 0.9);
        let lam = ch.limit_a - ch.limit_b * (th + th.inv());
        let e = |k| t.eval(k, th);
        let f = |k| t.eval_second(k, th);
        let w = wronskian((e(0), e(1)), (f(0), f(1)));
        let p = build_p(&ch, lam, 12);
        for (k, pk) in p.iter().enumerate() {
            let via = (e(k) * f(1) - f(k) * e(1)) / w;
            assert!((pk - via).norm() < 1e-11 * (1.0 + pk.norm()), "k={k}");
        }
    }

    #[test]
    fn free_wronskian_on_circle() {
        let t = build_jost(&ChannelSpec::free("f", 2.0, 1.0, 1.0));
        let th = C64::from_polar(1.0, 0.7);
        let w = wronskian((t.eval(0, th), t.eval(1, th)), (t.eval(0, th.conj()), t.eval(1, th.conj())));
        assert!((w - (th.conj() - th)).norm() < 1e-15);
    }

    #[test]
    fn negative_square_reported() {
        let coeffs = JostCoefficients {
            rows: vec![vec![1.0, 0.0, 5.0], vec![1.0, 0.0]],
        };
        assert!(matches!(
            recover_coefficients(&coeffs, 0.0, 1.0, 1),
            Err(Error::Reconstruction { k: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn wronskian_antisymmetric(a in -5.0f64..5.0, b in -5.0f64..5.0, c_ in -5.0f64..5.0, d in -5.0f64..5.0) {
            let x = (C64::new(a, b), C64::new(c_, d));
            let y = (C64::new(d, a), C64::new(b, -c_));
            prop_assert_eq!(wronskian(x, x), C64::new(0.0, 0.0));
            prop_assert!((wronskian(x, y) + wronskian(y, x)).norm() < 1e-12);
        }

        #[test]
        fn round_trip(seed in 0u64..10_000) {
            let ch = fixtures::random_channel(seed, 10);
            let t = build_jost(&ch);
            let k0 = ch.support();
            let (diag, hop) = recover_coefficients(&t.coeffs, ch.limit_a, ch.limit_b, k0 + 1).unwrap();
            for k in 1..=k0 + 1 {
                prop_assert!((diag[k - 1] - ch.a_coef(k)).abs() < 1e-12);
                prop_assert!((hop[k - 1] - ch.b_coef(k)).abs() < 1e-12);
            }
        }

        #[test]
        fn wronskian_constant_in_k(seed in 0u64..1000, phi in 0.1f64..3.0, r in 0.2f64..1.0) {
            let ch = fixtures::random_channel(seed, 6);
            let t = build_jost(&ch);
            let th = C64::from_polar(r, phi);
            let lam = ch.limit_a - ch.limit_b * (th + th.inv());
            let p = build_p(&ch, lam, ch.support() + 7);
            let w0 = ch.b_coef(0) * wronskian((t.eval(0, th), t.eval(1, th)), (p[0], p[1]));
            for k in 1..=ch.support() + 5 {
                let wk = ch.b_coef(k) * wronskian((t.eval(k, th), t.eval(k + 1, th)), (p[k], p[k + 1]));
                prop_assert!((wk - w0).norm() < 1e-11 * (1.0 + w0.norm()));
            }
        }
    }
}
