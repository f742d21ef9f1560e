//! Structured elimination for truncated web operators.
//!
//! Each channel is a tridiagonal chain hanging off one central vertex, so
//! eliminating chains from their tails leaves a dense `M × M` Schur
//! complement on the central block. Cost is `O(C·N + M³)`.

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::websystem::WebSystem;

/// Shifted truncated operator `L_N - z` with optional extra diagonal terms
/// on the last site of every channel.
pub struct Arrow<'a> {
    pub sys: &'a WebSystem,
    pub n_sites: usize,
}

const TINY: f64 = 1e-300;

impl<'a> Arrow<'a> {
    pub fn new(sys: &'a WebSystem, n_sites: usize) -> Result<Self> {
        // validates n_sites against every support
        sys.assemble_truncated_operator(n_sites)?;
        Ok(Arrow { sys, n_sites })
    }

    pub fn dim(&self) -> usize {
        self.sys.central_size() + self.sys.channel_count() * self.n_sites
    }

    fn index(&self, c: usize, k: usize) -> usize {
        self.sys.central_size() + c * self.n_sites + k - 1
    }

    /// Solve `(L_N - z + diag(tail)) x = rhs` where `tail[c]` is added to the
    /// diagonal at the last site of channel `c`.
    pub fn solve<T>(&self, z: T, tail: &[T], rhs: &[T]) -> Result<Vec<T>>
    where
        T: ComplexField<RealField = f64> + Copy,
    {
        let m = self.sys.central_size();
        let n = self.n_sites;
        let nc = self.sys.channel_count();
        let re = |v: f64| T::from_real(v);
        let mut alpha = vec![vec![T::zero(); n + 1]; nc];
        let mut beta = vec![vec![T::zero(); n + 1]; nc];
        let mut schur = DMatrix::from_fn(m, m, |i, j| {
            let v = re(self.sys.central().matrix[(i, j)]);
            if i == j {
                v - z
            } else {
                v
            }
        });
        let mut rc = DVector::from_fn(m, |i, _| rhs[i]);
        for c in 0..nc {
            let ch = self.sys.channel(c);
            let mut next_alpha = T::zero();
            let mut next_beta = T::zero();
            for k in (1..=n).rev() {
                let mut piv = re(ch.a_coef(k)) - z;
                if k == n {
                    piv += tail[c];
                } else {
                    piv -= re(ch.b_coef(k)) * next_alpha;
                }
                if piv.modulus() < TINY {
                    piv = re(TINY);
                }
                let r = rhs[self.index(c, k)] + if k < n { re(ch.b_coef(k)) * next_beta } else { T::zero() };
                next_alpha = re(ch.b_coef(k - 1)) / piv;
                next_beta = r / piv;
                alpha[c][k] = next_alpha;
                beta[c][k] = next_beta;
            }
            let v = self.sys.attachment(c);
            let b0 = re(ch.coupling_b0);
            schur[(v, v)] -= b0 * alpha[c][1];
            rc[v] += b0 * beta[c][1];
        }
        let central = schur
            .lu()
            .solve(&rc)
            .ok_or_else(|| Error::Domain("singular central Schur complement".into()))?;
        let mut x = vec![T::zero(); self.dim()];
        for i in 0..m {
            x[i] = central[i];
        }
        for c in 0..nc {
            let mut prev = central[self.sys.attachment(c)];
            for k in 1..=n {
                let v = alpha[c][k] * prev + beta[c][k];
                x[self.index(c, k)] = v;
                prev = v;
            }
        }
        Ok(x)
    }

    /// Number of eigenvalues of `L_N` strictly below `x` (Sylvester inertia).
    pub fn count_below(&self, x: f64) -> usize {
        let m = self.sys.central_size();
        let n = self.n_sites;
        let mut negatives = 0;
        let mut schur = self.sys.central().matrix.clone();
        for i in 0..m {
            schur[(i, i)] -= x;
        }
        for c in 0..self.sys.channel_count() {
            let ch = self.sys.channel(c);
            let mut d_next = 0.0;
            for k in (1..=n).rev() {
                let mut d = ch.a_coef(k) - x;
                if k < n {
                    d -= ch.b_coef(k).powi(2) / d_next;
                }
                if d == 0.0 {
                    d = -TINY;
                }
                if d < 0.0 {
                    negatives += 1;
                }
                d_next = d;
            }
            let v = self.sys.attachment(c);
            schur[(v, v)] -= ch.coupling_b0.powi(2) / d_next;
        }
        let eig = SymmetricEigen::new(schur);
        negatives + eig.eigenvalues.iter().filter(|&&e| e < 0.0).count()
    }

    /// Gershgorin interval containing the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        let op = self
            .sys
            .assemble_truncated_operator(self.n_sites)
            .expect("validated in new");
        let mut radius = vec![0.0; op.dim()];
        for &(i, j, v) in &op.upper {
            radius[i] += v.abs();
            radius[j] += v.abs();
        }
        let lo = op.diag.iter().zip(&radius).map(|(d, r)| d - r).fold(f64::INFINITY, f64::min);
        let hi = op.diag.iter().zip(&radius).map(|(d, r)| d + r).fold(f64::NEG_INFINITY, f64::max);
        (lo - 1.0, hi + 1.0)
    }

    /// The `idx`-th smallest eigenvalue (0-based) by bisection on
    /// [`count_below`](Self::count_below).
    pub fn eigenvalue(&self, idx: usize, bounds: (f64, f64)) -> f64 {
        let (mut lo, mut hi) = bounds;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.count_below(mid) > idx {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Unit eigenvector for an (accurately known, simple) eigenvalue by
    /// inverse iteration.
    pub fn eigenvector(&self, lambda: f64) -> Result<Vec<f64>> {
        let dim = self.dim();
        let tail = vec![0.0; self.sys.channel_count()];
        let shift = lambda + 1e-13 * (1.0 + lambda.abs());
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.01 * ((i * 7919) % 13) as f64).collect();
        for _ in 0..4 {
            let w = self.solve(shift, &tail, &v)?;
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = w.into_iter().map(|x| x / norm).collect();
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use num_complex::Complex64 as C64;

    #[test]
    fn solve_matches_dense() {
        let sys = fixtures::random_system(6, 3, 3);
        let arrow = Arrow::new(&sys, 9).unwrap();
        let dense = sys.assemble_truncated_operator(9).unwrap().to_dense().map(C64::from);
        let z = C64::new(1.3, 0.4);
        let tail = vec![C64::new(0.2, -0.1), C64::new(0.0, 0.5), C64::new(-0.3, 0.0)];
        let rhs: Vec<C64> = (0..arrow.dim()).map(|i| C64::new((i as f64).sin(), (i as f64).cos())).collect();
        let x = arrow.solve(z, &tail, &rhs).unwrap();
        let mut a = dense - DMatrix::identity(arrow.dim(), arrow.dim()) * z;
        for c in 0..3 {
            let i = arrow.index(c, 9);
            a[(i, i)] += tail[c];
        }
        let ax = &a * DVector::from_vec(x);
        for i in 0..arrow.dim() {
            assert!((ax[i] - rhs[i]).norm() < 1e-11);
        }
    }

    #[test]
    fn inertia_matches_dense_eigenvalues() {
        let sys = fixtures::random_system(8, 2, 2);
        let arrow = Arrow::new(&sys, 7).unwrap();
        let dense = sys.assemble_truncated_operator(7).unwrap().to_dense();
        let mut eig: Vec<f64> = SymmetricEigen::new(dense).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        for x in [-1.0, 0.5, 1.7, 2.9, 4.4, 8.0] {
            let expect = eig.iter().filter(|&&e| e < x).count();
            assert_eq!(arrow.count_below(x), expect, "x={x}");
        }
        let bounds = arrow.spectral_bounds();
        for idx in [0, 5, eig.len() - 1] {
            assert!((arrow.eigenvalue(idx, bounds) - eig[idx]).abs() < 1e-12);
        }
    }
}
