//! Spectral data: everything the inverse problem is allowed to see.
//!
//! A dataset is produced from a [`Model`] by sampling the scattering matrix
//! and collecting the discrete levels, and is then consumed by
//! [`crate::marchenko`] without access to the underlying system.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::SpectralChart;
use crate::direct::Model;
use crate::error::{Error, Result};
use crate::quad::{adaptive_panels, midpoint, Adaptive, Rule};
use crate::spectrum::{near_circle_energies, DiscreteLevel};

/// Fraction of circle samples allowed to fall on a near-pole and be
/// replaced by neighbor interpolation.
pub const MAX_FLAGGED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureKind {
    /// Cosine-mapped Gauss–Legendre panels split at band-edge images.
    #[default]
    Panel,
    /// Equispaced midpoint nodes on the full circle.
    Uniform,
}

#[derive(Debug, Clone, Copy)]
pub struct ExportOptions {
    /// Nodes on the full `θ_σ` circle.
    pub circle_nodes: usize,
    /// Nodes per segment of `J_σ`.
    pub segment_nodes: usize,
    pub kind: QuadratureKind,
    /// Refinement controls for panel rules.
    pub adaptive: Adaptive,
}

impl Default for ExportOptions {
    fn default() -> Self {
        ExportOptions {
            circle_nodes: 4096,
            segment_nodes: 512,
            kind: QuadratureKind::Panel,
            adaptive: Adaptive::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartData {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelData {
    pub id: String,
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub quadrature: QuadratureKind,
    /// `[θ_re, θ_im, s_re, s_im]` with `θ = θ_σ` running the full circle.
    pub s_diag: Vec<[f64; 4]>,
    /// Weights in the angle of `θ`; sum to `2π`.
    pub weights: Vec<f64>,
    /// Samples replaced by neighbor interpolation.
    #[serde(default)]
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossMagnitude {
    pub sigma: String,
    pub nu: String,
    /// `[θ, |s_σν(ω_σ(θ))|]` for `θ ∈ J_σ` where `ν` is open.
    pub samples: Vec<[f64; 2]>,
    /// Weights in `θ`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelData {
    pub omega_hat: [f64; 2],
    pub lambda_hat: f64,
    pub theta: BTreeMap<String, [f64; 2]>,
    pub dtheta: BTreeMap<String, [f64; 2]>,
    /// Diagonal of the residue matrix, channel order.
    #[serde(rename = "M_diag")]
    pub m_diag: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralDataset {
    pub chart: ChartData,
    pub channels: Vec<ChannelData>,
    pub cross_mag: Vec<CrossMagnitude>,
    pub levels: Vec<LevelData>,
}

fn c(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

pub(crate) fn z(v: [f64; 2]) -> C64 {
    C64::new(v[0], v[1])
}

/// Fill `None` entries from their nearest valid neighbors (mean of both
/// sides when available).
fn fill_flagged(values: &mut [Option<C64>]) -> Result<usize> {
    let n = values.len();
    let flagged = values.iter().filter(|v| v.is_none()).count();
    if flagged == 0 {
        return Ok(0);
    }
    if flagged as f64 > MAX_FLAGGED_FRACTION * n as f64 {
        return Err(Error::Dataset(format!(
            "{flagged} of {n} circle samples are too close to a pole"
        )));
    }
    let snapshot: Vec<Option<C64>> = values.to_vec();
    for i in 0..n {
        if snapshot[i].is_some() {
            continue;
        }
        let left = (0..i).rev().find_map(|j| snapshot[j]);
        let right = ((i + 1)..n).find_map(|j| snapshot[j]);
        values[i] = match (left, right) {
            (Some(l), Some(r)) => Some(0.5 * (l + r)),
            (Some(v), None) | (None, Some(v)) => Some(v),
            (None, None) => None,
        };
    }
    Ok(flagged)
}

/// `s_σσ` at `θ_σ = e^{iφ}`, or `None` next to a pole.
fn reflection_at(model: &Model, sigma: usize, phi: f64) -> Result<Option<C64>> {
    let omega = model.chart.omega_of_phase(sigma, phi);
    let mut theta = model.chart.point(omega)?.theta;
    theta[sigma] = C64::from_polar(1.0, phi);
    match model.scattering_sample_with(omega, theta) {
        Ok(sample) => Ok(Some(sample.s[(sigma, sigma)])),
        Err(Error::NearPole { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn channel_data(model: &Model, sigma: usize, opts: &ExportOptions, extra: &[f64]) -> Result<ChannelData> {
    let (rule, mut values) = match opts.kind {
        QuadratureKind::Uniform => {
            let rule = midpoint(-PI, PI, opts.circle_nodes);
            let values = rule
                .nodes
                .par_iter()
                .map(|&phi| reflection_at(model, sigma, phi))
                .collect::<Result<Vec<_>>>()?;
            (rule, values)
        }
        QuadratureKind::Panel => {
            // refine on the upper half and mirror, so the lower half is
            // sampled on exactly conjugate nodes
            let (half, upper) = adaptive_panels(
                &model.chart.theta_breakpoints(sigma, extra),
                opts.circle_nodes / 2,
                opts.adaptive,
                |phi| reflection_at(model, sigma, phi),
                |v: &Option<C64>| vec![v.unwrap_or_default()],
            )?;
            let lower = half
                .nodes
                .par_iter()
                .rev()
                .map(|&phi| reflection_at(model, sigma, -phi))
                .collect::<Result<Vec<_>>>()?;
            let mut rule = Rule {
                nodes: half.nodes.iter().rev().map(|p| -p).collect(),
                weights: half.weights.iter().rev().copied().collect(),
            };
            rule.extend(half);
            (rule, lower.into_iter().chain(upper).collect())
        }
    };
    let flagged = fill_flagged(&mut values)?;
    let ch = model.sys.channel(sigma);
    Ok(ChannelData {
        id: ch.id.clone(),
        a: ch.limit_a,
        b: ch.limit_b,
        quadrature: opts.kind,
        s_diag: rule
            .nodes
            .iter()
            .zip(&values)
            .map(|(&phi, s)| {
                let s = s.expect("filled");
                [phi.cos(), phi.sin(), s.re, s.im]
            })
            .collect(),
        weights: rule.weights,
        flagged,
    })
}

/// Per-channel `|s_σν|` and the `Φ_σ` weight `|b_σ(θ⁻¹-θ) / (b_ν(θ_ν⁻¹-θ_ν))|`
/// (zero for closed `ν`) at one node of `J_σ`.
#[derive(Clone)]
struct CrossSample {
    open: Vec<bool>,
    mag: Vec<f64>,
    weight: Vec<f64>,
}

fn cross_at(model: &Model, sigma: usize, t: f64) -> Result<CrossSample> {
    let chart = &model.chart;
    let nc = model.channel_count();
    let omega = chart.omega_of_theta(sigma, t)?;
    let sample = model.scattering_sample(omega).map_err(|e| match e {
        Error::NearPole { .. } => Error::Dataset(format!(
            "J_{} sample θ = {t} hits a pole of the scattering matrix",
            model.sys.channel(sigma).id
        )),
        e => e,
    })?;
    let b = |c: usize| model.sys.channel(c).limit_b;
    let weight = (0..nc)
        .map(|n| {
            let th = sample.theta[n];
            if sample.open[n] && n != sigma {
                (b(sigma) * (1.0 / t - t) / (b(n) * (th.inv() - th))).norm()
            } else {
                0.0
            }
        })
        .collect();
    Ok(CrossSample {
        open: sample.open.clone(),
        mag: (0..nc).map(|n| sample.s[(sigma, n)].norm()).collect(),
        weight,
    })
}

fn cross_data(model: &Model, sigma: usize, opts: &ExportOptions, extra: &[f64]) -> Result<Vec<CrossMagnitude>> {
    let chart = &model.chart;
    let nc = model.channel_count();
    let mut rule = Rule::default();
    let mut samples = Vec::new();
    for &seg in &chart.channels[sigma].segments {
        let (r, v) = adaptive_panels(
            &chart.segment_breakpoints(sigma, seg, extra),
            opts.segment_nodes,
            opts.adaptive,
            |t| cross_at(model, sigma, t),
            |c: &CrossSample| c.mag.iter().zip(&c.weight).map(|(m, w)| C64::from(m * m * w)).collect(),
        )?;
        rule.extend(r);
        samples.extend(v);
    }
    let mut out = Vec::new();
    for nu in (0..nc).filter(|&n| n != sigma) {
        let mut entry = CrossMagnitude {
            sigma: model.sys.channel(sigma).id.clone(),
            nu: model.sys.channel(nu).id.clone(),
            samples: Vec::new(),
            weights: Vec::new(),
        };
        for ((&t, &w), s) in rule.nodes.iter().zip(&rule.weights).zip(&samples) {
            if s.open[nu] {
                entry.samples.push([t, s.mag[nu]]);
                entry.weights.push(w);
            }
        }
        if !entry.samples.is_empty() {
            out.push(entry);
        }
    }
    Ok(out)
}

fn level_data(model: &Model, level: &DiscreteLevel) -> LevelData {
    let ids = || model.sys.channels().iter().map(|c| c.id.clone());
    LevelData {
        omega_hat: c(level.omega_hat),
        lambda_hat: level.lambda_hat,
        theta: ids().zip(level.theta.iter().map(|&t| c(t))).collect(),
        dtheta: ids().zip(level.dtheta.iter().map(|&t| c(t))).collect(),
        m_diag: (0..model.channel_count()).map(|s| c(level.m[(s, s)])).collect(),
    }
}

/// Sample everything the inverse problem needs.
pub fn export_spectral_data(model: &Model, levels: &[DiscreteLevel], opts: &ExportOptions) -> Result<SpectralDataset> {
    let nc = model.channel_count();
    // narrow resonances become panel ends so refinement can find them
    let extra = near_circle_energies(model)?;
    let channels = (0..nc)
        .map(|s| channel_data(model, s, opts, &extra))
        .collect::<Result<Vec<_>>>()?;
    let mut cross_mag = Vec::new();
    for s in 0..nc {
        cross_mag.extend(cross_data(model, s, opts, &extra)?);
    }
    Ok(SpectralDataset {
        chart: ChartData {
            a: model.chart.a,
            b: model.chart.b,
        },
        channels,
        cross_mag,
        levels: levels.iter().map(|l| level_data(model, l)).collect(),
    })
}

impl SpectralDataset {
    pub fn channel_index(&self, id: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.id == id)
    }

    /// Rebuild the chart from the stored limit constants.
    pub fn chart(&self) -> Result<SpectralChart> {
        let limits: Vec<(f64, f64)> = self.channels.iter().map(|c| (c.a, c.b)).collect();
        SpectralChart::from_limits(&limits)
    }

    /// Structural checks beyond what the schema enforces.
    pub fn validate(&self) -> Result<()> {
        let chart = self.chart()?;
        if (chart.a - self.chart.a).abs() > 1e-12 * (1.0 + chart.a.abs())
            || (chart.b - self.chart.b).abs() > 1e-12 * (1.0 + chart.b.abs())
        {
            return Err(Error::input("chart", "global constants disagree with channel limits"));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.s_diag.len() != ch.weights.len() || ch.s_diag.is_empty() {
                return Err(Error::input(format!("channels[{i}].weights"), "length must match s_diag"));
            }
        }
        for (i, x) in self.cross_mag.iter().enumerate() {
            if self.channel_index(&x.sigma).is_none() || self.channel_index(&x.nu).is_none() {
                return Err(Error::input(format!("cross_mag[{i}]"), "unknown channel id"));
            }
            if x.samples.len() != x.weights.len() {
                return Err(Error::input(format!("cross_mag[{i}].weights"), "length must match samples"));
            }
            if let Some(j) = x.samples.iter().position(|s| s[1] < 0.0) {
                return Err(Error::input(format!("cross_mag[{i}].samples[{j}]"), "magnitude is negative"));
            }
        }
        for (i, l) in self.levels.iter().enumerate() {
            if l.m_diag.len() != self.channels.len() {
                return Err(Error::input(format!("levels[{i}].M_diag"), "one entry per channel required"));
            }
            for ch in &self.channels {
                if !l.theta.contains_key(&ch.id) || !l.dtheta.contains_key(&ch.id) {
                    return Err(Error::input(format!("levels[{i}].theta"), format!("missing channel {}", ch.id)));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ds: SpectralDataset = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}
