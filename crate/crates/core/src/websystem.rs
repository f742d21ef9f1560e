//! The physical system: a finite symmetric central block with semi-infinite
//! Jacobi channels hanging off distinct attachment vertices.
//!
//! Channel `σ` carries sites `σ(0), σ(1), …` where `σ(0)` is a vertex of the
//! central block. Along the channel the operator acts as
//!
//! ```text
//! (Lξ)(σ(k)) = -b(k-1) ξ(σ(k-1)) + a(k) ξ(σ(k)) - b(k) ξ(σ(k+1)),   k ≥ 1
//! ```
//!
//! and the coefficients equal their limits `(a_σ, b_σ)` beyond the support
//! `K₀`. The central block enters the channel problem only through the
//! attachment resolvent `ℛ(λ)`, which turns the central rows into a boundary
//! condition on the pair `(ξ(σ(0)), ξ(σ(1)))`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance below which `λ` is considered to sit on a central eigenvalue.
pub const RESOLVENT_POLE_TOL: f64 = 1e-12;

/// One semi-infinite channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub id: String,
    pub limit_a: f64,
    pub limit_b: f64,
    /// Bond between `σ(0)` and `σ(1)`.
    pub coupling_b0: f64,
    /// `a(k)` for `k = 1..=K₀`.
    pub diag: Vec<f64>,
    /// `b(k)` for `k = 1..=K₀`.
    pub hop: Vec<f64>,
}

impl ChannelSpec {
    /// A channel whose coefficients equal the limits from `k = 1` on.
    pub fn free(id: impl Into<String>, a: f64, b: f64, b0: f64) -> Self {
        ChannelSpec {
            id: id.into(),
            limit_a: a,
            limit_b: b,
            coupling_b0: b0,
            diag: Vec::new(),
            hop: Vec::new(),
        }
    }

    pub fn new(
        id: impl Into<String>,
        a: f64,
        b: f64,
        b0: f64,
        diag: Vec<f64>,
        hop: Vec<f64>,
    ) -> Result<Self> {
        let ch = ChannelSpec {
            id: id.into(),
            limit_a: a,
            limit_b: b,
            coupling_b0: b0,
            diag,
            hop,
        };
        ch.validate("channel")?;
        Ok(ch)
    }

    /// Support `K₀`: coefficients equal the limits for `k > K₀`.
    pub fn support(&self) -> usize {
        self.diag.len()
    }

    /// `a(k)`, `k ≥ 1`.
    pub fn a_coef(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        self.diag.get(k - 1).copied().unwrap_or(self.limit_a)
    }

    /// `b(k)`, `k ≥ 0`; `b(0)` is the coupling to the central block.
    pub fn b_coef(&self, k: usize) -> f64 {
        if k == 0 {
            self.coupling_b0
        } else {
            self.hop.get(k - 1).copied().unwrap_or(self.limit_b)
        }
    }

    /// Lowest band edge `a_σ - 2 b_σ`.
    pub fn band_lo(&self) -> f64 {
        self.limit_a - 2.0 * self.limit_b
    }

    /// Highest band edge `a_σ + 2 b_σ`.
    pub fn band_hi(&self) -> f64 {
        self.limit_a + 2.0 * self.limit_b
    }

    fn validate(&self, path: &str) -> Result<()> {
        let finite = |v: f64, field: &str| -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::input(format!("{path}.{field}"), "value must be finite"))
            }
        };
        finite(self.limit_a, "a")?;
        finite(self.limit_b, "b")?;
        finite(self.coupling_b0, "b0")?;
        if self.limit_b <= 0.0 {
            return Err(Error::input(format!("{path}.b"), "limit b must be positive"));
        }
        if self.coupling_b0 <= 0.0 {
            return Err(Error::input(format!("{path}.b0"), "coupling b0 must be positive"));
        }
        if self.diag.len() != self.hop.len() {
            return Err(Error::input(
                path.to_string(),
                "diag and hop tables must both cover k = 1..=support",
            ));
        }
        for (i, &v) in self.diag.iter().enumerate() {
            finite(v, &format!("diag[{}]", i + 1))?;
        }
        for (i, &v) in self.hop.iter().enumerate() {
            finite(v, &format!("hop[{}]", i + 1))?;
            if v <= 0.0 {
                return Err(Error::input(
                    format!("{path}.hop[{}]", i + 1),
                    "hopping coefficients must be positive",
                ));
            }
        }
        Ok(())
    }
}

/// The central block `L₁` together with the attachment map `σ ↦ σ(0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralBlock {
    pub matrix: DMatrix<f64>,
    /// `attachments[c]` is the central vertex of channel `c`.
    pub attachments: Vec<usize>,
}

impl CentralBlock {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Full description of the web: central block, channels and the cached
/// spectral decomposition of `L₁`.
#[derive(Debug, Clone)]
pub struct WebSystem {
    central: CentralBlock,
    channels: Vec<ChannelSpec>,
    eigenvalues: Vec<f64>,
    /// Columns are orthonormal eigenvectors `p_j`.
    eigenvectors: DMatrix<f64>,
}

impl WebSystem {
    pub fn new(central: CentralBlock, channels: Vec<ChannelSpec>) -> Result<Self> {
        let m = central.matrix.nrows();
        if m == 0 || central.matrix.ncols() != m {
            return Err(Error::input("central", "central matrix must be square and non-empty"));
        }
        for i in 0..m {
            for j in 0..i {
                if central.matrix[(i, j)] != central.matrix[(j, i)] {
                    return Err(Error::input(
                        format!("central.entries[{i},{j}]"),
                        "central matrix must be exactly symmetric",
                    ));
                }
            }
        }
        if central.attachments.len() != channels.len() {
            return Err(Error::input("channels", "one attachment vertex per channel required"));
        }
        for (c, &v) in central.attachments.iter().enumerate() {
            if v >= m {
                return Err(Error::input(
                    format!("channels[{c}].attach"),
                    format!("vertex {v} outside central block of size {m}"),
                ));
            }
            if central.attachments[..c].contains(&v) {
                return Err(Error::input(
                    format!("channels[{c}].attach"),
                    format!("vertex {v} already used by another channel"),
                ));
            }
        }
        for (c, ch) in channels.iter().enumerate() {
            ch.validate(&format!("channels[{c}]"))?;
            if channels[..c].iter().any(|o| o.id == ch.id) {
                return Err(Error::input(format!("channels[{c}].id"), "duplicate channel id"));
            }
        }

        let eig = SymmetricEigen::new(central.matrix.clone());
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut eigenvectors = DMatrix::zeros(m, m);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        let gram = eigenvectors.transpose() * &eigenvectors;
        let dev = (gram - DMatrix::identity(m, m)).amax();
        if dev > 1e-12 {
            return Err(Error::Domain(format!(
                "central eigenvectors not orthonormal (deviation {dev:e})"
            )));
        }

        Ok(WebSystem {
            central,
            channels,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn central(&self) -> &CentralBlock {
        &self.central
    }

    pub fn channels(&self) -> &[ChannelSpec] {
        &self.channels
    }

    pub fn channel(&self, c: usize) -> &ChannelSpec {
        &self.channels[c]
    }

    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.id == id)
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn central_size(&self) -> usize {
        self.central.size()
    }

    pub fn attachment(&self, c: usize) -> usize {
        self.central.attachments[c]
    }

    /// Eigenvalues of `L₁`, ascending.
    pub fn central_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors of `L₁` as columns, matching
    /// [`central_eigenvalues`](Self::central_eigenvalues).
    pub fn central_eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn max_support(&self) -> usize {
        self.channels.iter().map(|c| c.support()).max().unwrap_or(0)
    }

    /// `B(0) = diag{b_σ(0)}`.
    pub fn coupling_diag(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.coupling_b0).collect()
    }

    fn check_off_spectrum(&self, lambda: C64) -> Result<()> {
        for (j, &lj) in self.eigenvalues.iter().enumerate() {
            if (lambda - lj).norm() <= RESOLVENT_POLE_TOL {
                return Err(Error::ResolventPole {
                    index: j,
                    eigenvalue: lj,
                    lambda,
                    tol: RESOLVENT_POLE_TOL,
                });
            }
        }
        Ok(())
    }

    /// Resolvent columns `r(α, ν(0); λ)` for every central vertex `α` and
    /// channel `ν`, as an `M × C` matrix.
    pub fn interior_resolvent(&self, lambda: C64) -> Result<DMatrix<C64>> {
        self.check_off_spectrum(lambda)?;
        let m = self.central_size();
        let nc = self.channel_count();
        let inv: Vec<C64> = self
            .eigenvalues
            .iter()
            .map(|&lj| (C64::from(lj) - lambda).inv())
            .collect();
        let mut out = DMatrix::from_element(m, nc, C64::new(0.0, 0.0));
        for nu in 0..nc {
            let beta = self.attachment(nu);
            for alpha in 0..m {
                let mut acc = C64::new(0.0, 0.0);
                for (j, w) in inv.iter().enumerate() {
                    acc += *w * (self.eigenvectors[(alpha, j)] * self.eigenvectors[(beta, j)]);
                }
                out[(alpha, nu)] = acc;
            }
        }
        Ok(out)
    }

    /// `ℛ(λ)`: the resolvent of `L₁` restricted to attachment vertices,
    /// evaluated through the spectral sum.
    pub fn attachment_resolvent(&self, lambda: C64) -> Result<DMatrix<C64>> {
        let full = self.interior_resolvent(lambda)?;
        let nc = self.channel_count();
        Ok(DMatrix::from_fn(nc, nc, |s, n| full[(self.attachment(s), n)]))
    }

    /// `ξ(0) − ℛ(λ) B(0) ξ(1)`; vanishes exactly when the pair satisfies the
    /// boundary condition imposed by the central block.
    pub fn boundary_residual(&self, xi0: &[C64], xi1: &[C64], lambda: C64) -> Result<Vec<C64>> {
        let nc = self.channel_count();
        if xi0.len() != nc || xi1.len() != nc {
            return Err(Error::Domain(format!(
                "boundary vectors must have length {nc} (got {} and {})",
                xi0.len(),
                xi1.len()
            )));
        }
        let r = self.attachment_resolvent(lambda)?;
        let scaled = DVector::from_fn(nc, |i, _| xi1[i] * self.channels[i].coupling_b0);
        let rhs = r * scaled;
        Ok((0..nc).map(|i| xi0[i] - rhs[i]).collect())
    }

    /// Unique extension of channel data into the central block:
    /// `ξ(α) = Σ_ν r(α, ν(0); λ) b_ν(0) ξ(ν(1))`.
    pub fn prolong_to_interior(&self, xi1: &[C64], lambda: C64) -> Result<Vec<C64>> {
        let nc = self.channel_count();
        if xi1.len() != nc {
            return Err(Error::Domain(format!(
                "channel vector must have length {nc} (got {})",
                xi1.len()
            )));
        }
        let r = self.interior_resolvent(lambda)?;
        let scaled = DVector::from_fn(nc, |i, _| xi1[i] * self.channels[i].coupling_b0);
        Ok((r * scaled).iter().copied().collect())
    }

    /// Truncation of the full operator keeping `n_sites` sites per channel
    /// (Dirichlet beyond the last one).
    pub fn assemble_truncated_operator(&self, n_sites: usize) -> Result<TruncatedOperator> {
        for ch in &self.channels {
            let needed = ch.support() + 2;
            if n_sites < needed {
                return Err(Error::TruncationTooShort {
                    channel: ch.id.clone(),
                    needed,
                    got: n_sites,
                });
            }
        }
        let m = self.central_size();
        let nc = self.channel_count();
        let dim = m + nc * n_sites;
        let mut diag = vec![0.0; dim];
        let mut upper = Vec::new();
        for i in 0..m {
            diag[i] = self.central.matrix[(i, i)];
            for j in (i + 1)..m {
                let v = self.central.matrix[(i, j)];
                if v != 0.0 {
                    upper.push((i, j, v));
                }
            }
        }
        for (c, ch) in self.channels.iter().enumerate() {
            let base = m + c * n_sites;
            upper.push((self.attachment(c), base, -ch.coupling_b0));
            for k in 1..=n_sites {
                diag[base + k - 1] = ch.a_coef(k);
                if k < n_sites {
                    upper.push((base + k - 1, base + k, -ch.b_coef(k)));
                }
            }
        }
        Ok(TruncatedOperator {
            central_size: m,
            channel_count: nc,
            n_sites,
            diag,
            upper,
        })
    }
}

/// Sparse symmetric truncation of the web operator.
///
/// Index layout: central vertices `0..M`, then channel `c` site `k`
/// (`1..=n_sites`) at `M + c·n_sites + k − 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedOperator {
    pub central_size: usize,
    pub channel_count: usize,
    pub n_sites: usize,
    pub diag: Vec<f64>,
    /// Strict upper-triangle entries `(i, j, value)` with `i < j`.
    pub upper: Vec<(usize, usize, f64)>,
}

impl TruncatedOperator {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn site_index(&self, channel: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.n_sites);
        self.central_size + channel * self.n_sites + k - 1
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut out = DMatrix::zeros(n, n);
        for (i, &d) in self.diag.iter().enumerate() {
            out[(i, i)] = d;
        }
        for &(i, j, v) in &self.upper {
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
        out
    }

    pub fn matvec<T>(&self, x: &[T]) -> Vec<T>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        let mut y: Vec<T> = self.diag.iter().zip(x).map(|(&d, &xi)| xi * d).collect();
        for &(i, j, v) in &self.upper {
            y[i] = y[i] + x[j] * v;
            y[j] = y[j] + x[i] * v;
        }
        y
    }
}

// ---------------------------------------------------------------------------
// JSON system file

/// On-disk system description.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemFile {
    pub central: CentralFile,
    pub channels: Vec<ChannelFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CentralFile {
    pub size: usize,
    /// Upper-triangle entries `[i, j, value]`.
    pub entries: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChannelFile {
    pub id: String,
    pub a: f64,
    pub b: f64,
    pub b0: f64,
    pub attach: usize,
    pub support: usize,
    #[serde(default)]
    pub diag: Vec<(usize, f64)>,
    #[serde(default)]
    pub hop: Vec<(usize, f64)>,
}

impl SystemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn into_system(self) -> Result<WebSystem> {
        let m = self.central.size;
        if m == 0 {
            return Err(Error::input("central.size", "central block must be non-empty"));
        }
        let mut matrix = DMatrix::zeros(m, m);
        for (idx, &(i, j, v)) in self.central.entries.iter().enumerate() {
            let path = format!("central.entries[{idx}]");
            if i >= m || j >= m {
                return Err(Error::input(path, format!("index out of range for size {m}")));
            }
            if j < i {
                return Err(Error::input(path, "entries must be in the upper triangle (i <= j)"));
            }
            if !v.is_finite() {
                return Err(Error::input(path, "value must be finite"));
            }
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
        let mut channels = Vec::with_capacity(self.channels.len());
        let mut attachments = Vec::with_capacity(self.channels.len());
        for (c, ch) in self.channels.into_iter().enumerate() {
            let mut diag = vec![ch.a; ch.support];
            let mut hop = vec![ch.b; ch.support];
            for (idx, &(k, v)) in ch.diag.iter().enumerate() {
                if k == 0 || k > ch.support {
                    return Err(Error::input(
                        format!("channels[{c}].diag[{idx}]"),
                        format!("site {k} outside 1..={}", ch.support),
                    ));
                }
                diag[k - 1] = v;
            }
            for (idx, &(k, v)) in ch.hop.iter().enumerate() {
                if k == 0 || k > ch.support {
                    return Err(Error::input(
                        format!("channels[{c}].hop[{idx}]"),
                        format!("site {k} outside 1..={}", ch.support),
                    ));
                }
                hop[k - 1] = v;
            }
            attachments.push(ch.attach);
            let spec = ChannelSpec {
                id: ch.id,
                limit_a: ch.a,
                limit_b: ch.b,
                coupling_b0: ch.b0,
                diag,
                hop,
            };
            spec.validate(&format!("channels[{c}]"))?;
            channels.push(spec);
        }
        WebSystem::new(CentralBlock { matrix, attachments }, channels)
    }

    pub fn from_system(sys: &WebSystem) -> Self {
        let m = sys.central_size();
        let mut entries = Vec::new();
        for i in 0..m {
            for j in i..m {
                let v = sys.central().matrix[(i, j)];
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        let channels = sys
            .channels()
            .iter()
            .enumerate()
            .map(|(c, ch)| ChannelFile {
                id: ch.id.clone(),
                a: ch.limit_a,
                b: ch.limit_b,
                b0: ch.coupling_b0,
                attach: sys.attachment(c),
                support: ch.support(),
                diag: ch.diag.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect(),
                hop: ch.hop.iter().enumerate().map(|(i, &v)| (i + 1, v)).collect(),
            })
            .collect();
        SystemFile {
            central: CentralFile { size: m, entries },
            channels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn single_free_channel_truncation() {
        let sys = fixtures::single_channel(4.0, 2.0, 1.0, 1.0);
        let op = sys.assemble_truncated_operator(3).unwrap().to_dense();
        let expected = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, -1.0, 0.0, 0.0, //
                -1.0, 2.0, -1.0, 0.0, //
                0.0, -1.0, 2.0, -1.0, //
                0.0, 0.0, -1.0, 2.0,
            ],
        );
        assert_eq!(op, expected);
    }

    #[test]
    fn empty_channel_list_gives_central_matrix() {
        let central = CentralBlock {
            matrix: DMatrix::from_element(1, 1, 3.25),
            attachments: vec![],
        };
        let sys = WebSystem::new(central, vec![]).unwrap();
        let op = sys.assemble_truncated_operator(5).unwrap().to_dense();
        assert_eq!(op, DMatrix::from_element(1, 1, 3.25));
    }

    #[test]
    fn f1_truncation_matches_hand_transcription() {
        let sys = fixtures::f1();
        let op = sys.assemble_truncated_operator(2).unwrap().to_dense();
        // layout: v0, v1, ch1(1), ch1(2), ch2(1), ch2(2)
        let expected = DMatrix::from_row_slice(
            6,
            6,
            &[
                2.5, -1.0, -1.0, 0.0, 0.0, 0.0, //
                -1.0, 2.5, 0.0, 0.0, -1.0, 0.0, //
                -1.0, 0.0, 2.0, -1.0, 0.0, 0.0, //
                0.0, 0.0, -1.0, 2.0, 0.0, 0.0, //
                0.0, -1.0, 0.0, 0.0, 3.0, -1.0, //
                0.0, 0.0, 0.0, 0.0, -1.0, 3.0,
            ],
        );
        assert_eq!(op, expected);
    }

    #[test]
    fn truncation_too_short_names_channel() {
        let ch = ChannelSpec::new("long", 2.0, 1.0, 1.0, vec![2.1, 2.2, 2.3], vec![1.0, 0.9, 1.1])
            .unwrap();
        let sys = WebSystem::new(
            CentralBlock {
                matrix: DMatrix::from_element(1, 1, 4.0),
                attachments: vec![0],
            },
            vec![ch],
        )
        .unwrap();
        match sys.assemble_truncated_operator(4) {
            Err(Error::TruncationTooShort { channel, needed, .. }) => {
                assert_eq!(channel, "long");
                assert_eq!(needed, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_operator_is_exactly_symmetric() {
        let sys = fixtures::random_system(7, 3, 4);
        let dense = sys.assemble_truncated_operator(12).unwrap().to_dense();
        assert_eq!(dense, dense.transpose());
    }

    #[test]
    fn scalar_resolvent() {
        let sys = fixtures::single_channel(4.0, 2.0, 1.0, 1.0);
        let lam = C64::new(1.3, 0.2);
        let r = sys.attachment_resolvent(lam).unwrap();
        assert!((r[(0, 0)] - (c(4.0) - lam).inv()).norm() < 1e-15);
    }

    #[test]
    fn resolvent_real_and_symmetric_off_spectrum() {
        let sys = fixtures::random_system(3, 3, 2);
        let r = sys.attachment_resolvent(c(-0.77)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(r[(i, j)].im, 0.0);
                assert!((r[(i, j)] - r[(j, i)]).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn f1_resolvent_matches_dense_inverse() {
        let sys = fixtures::f1();
        let lam = c(2.5);
        let r = sys.attachment_resolvent(lam).unwrap();
        let shifted = sys.central().matrix.map(C64::from) - DMatrix::identity(2, 2) * lam;
        let inv = shifted.try_inverse().unwrap();
        for s in 0..2 {
            for n in 0..2 {
                let expect = inv[(sys.attachment(s), sys.attachment(n))];
                assert!((r[(s, n)] - expect).norm() < 1e-14, "{s}{n}");
            }
        }
    }

    #[test]
    fn resolvent_pole_is_reported() {
        let sys = fixtures::f1();
        let lj = sys.central_eigenvalues()[1];
        match sys.attachment_resolvent(c(lj)) {
            Err(Error::ResolventPole { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn boundary_residual_cases() {
        let sys = fixtures::f1();
        let lam = C64::new(0.4, 0.3);
        let xi1 = [C64::new(1.0, -2.0), C64::new(0.5, 0.25)];
        let r = sys.attachment_resolvent(lam).unwrap();
        let xi0: Vec<C64> = (0..2)
            .map(|i| (0..2).map(|j| r[(i, j)] * sys.channel(j).coupling_b0 * xi1[j]).sum())
            .collect();
        let res = sys.boundary_residual(&xi0, &xi1, lam).unwrap();
        assert!(res.iter().all(|z| z.norm() < 1e-14));

        let zero = [C64::new(0.0, 0.0); 2];
        let xi0 = [C64::new(0.3, 0.1), C64::new(-1.0, 0.0)];
        let res = sys.boundary_residual(&xi0, &zero, lam).unwrap();
        assert_eq!(res, xi0.to_vec());
    }

    #[test]
    fn prolongation_cases() {
        let sys = fixtures::single_channel(4.0, 2.0, 1.0, 0.7);
        let lam = C64::new(1.0, 0.5);
        let zero = sys.prolong_to_interior(&[C64::new(0.0, 0.0)], lam).unwrap();
        assert_eq!(zero, vec![C64::new(0.0, 0.0)]);
        let v = sys.prolong_to_interior(&[c(1.0)], lam).unwrap();
        assert!((v[0] - 0.7 / (c(4.0) - lam)).norm() < 1e-15);
    }

    #[test]
    fn prolonged_solution_satisfies_central_rows() {
        let sys = fixtures::random_system(11, 3, 3);
        let lam = C64::new(0.9, 0.4);
        let xi1 = [C64::new(0.2, 1.0), C64::new(-0.5, 0.1), C64::new(1.5, -0.7)];
        let interior = sys.prolong_to_interior(&xi1, lam).unwrap();
        let m = sys.central_size();
        for alpha in 0..m {
            let mut row = -lam * interior[alpha];
            for beta in 0..m {
                row += sys.central().matrix[(alpha, beta)] * interior[beta];
            }
            for (c, &x1) in xi1.iter().enumerate() {
                if sys.attachment(c) == alpha {
                    row -= sys.channel(c).coupling_b0 * x1;
                }
            }
            assert!(row.norm() < 1e-10, "row {alpha}: {row}");
        }
    }

    #[test]
    fn system_file_round_trip_and_defaults() {
        let text = r#"{
            "central": {"size": 2, "entries": [[0,0,2.5],[0,1,-1.0],[1,1,2.5]]},
            "channels": [
                {"id": "left", "a": 2.0, "b": 1.0, "b0": 1.0, "attach": 0, "support": 2,
                 "diag": [[2, 2.3]], "hop": [[1, 0.8]]},
                {"id": "right", "a": 3.0, "b": 1.0, "b0": 1.0, "attach": 1, "support": 0}
            ]
        }"#;
        let sys = SystemFile::from_json(text).unwrap().into_system().unwrap();
        let left = sys.channel(0);
        assert_eq!(left.diag, vec![2.0, 2.3]);
        assert_eq!(left.hop, vec![0.8, 1.0]);
        let again = SystemFile::from_system(&sys).into_system().unwrap();
        assert_eq!(again.channels(), sys.channels());
        assert_eq!(again.central(), sys.central());
    }

    #[test]
    fn schema_errors_carry_json_path() {
        let text = r#"{"central": {"size": 1, "entries": [[0,0,"x"]]}, "channels": []}"#;
        match SystemFile::from_json(text) {
            Err(Error::Schema { path, .. }) => assert!(path.starts_with("central.entries[0]"), "{path}"),
            other => panic!("unexpected {other:?}"),
        }
        let text = r#"{"central": {"size": 1, "entries": [[0,0,4.0]]},
            "channels": [{"id":"x","a":2,"b":-1,"b0":1,"attach":0,"support":0}]}"#;
        match SystemFile::from_json(text).unwrap().into_system() {
            Err(Error::Input { path, .. }) => assert_eq!(path, "channels[0].b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shared_attachment_rejected() {
        let central = CentralBlock {
            matrix: DMatrix::identity(2, 2),
            attachments: vec![0, 0],
        };
        let chans = vec![ChannelSpec::free("a", 2.0, 1.0, 1.0), ChannelSpec::free("b", 2.0, 1.0, 1.0)];
        assert!(WebSystem::new(central, chans).is_err());
    }

    #[test]
    fn cached_eigenpairs_are_orthonormal() {
        let sys = fixtures::random_system(5, 2, 1);
        let p = sys.central_eigenvectors();
        let gram = p.transpose() * p;
        assert!((gram - DMatrix::identity(p.nrows(), p.nrows())).amax() < 1e-12);
    }
}
