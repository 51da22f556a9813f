//! Measurement informativeness and reconstruction-fidelity experiments:
//! singular-value spectra of the forward operator, the RMSE metric, and the
//! photon-budget / occluder-size / regularization sweeps.

use nalgebra::{DMatrix, RealField};
use ndarray::Array2;
use num_traits::Float;
use thiserror::Error;

use crate::float::Real;
use crate::photoncount::{simulate_counts, AcquisitionParams, CountMatrix, PhotonCountError};
use crate::recon::{reconstruct, tv_seminorm, ReconError, ReconstructionConfig};
use crate::scene::{DiskOccluder, Point3, SceneGeometry, SceneError, UnitVec3};
use crate::transport::{apply_forward, build_operator, ForwardOperator, MeanPhotonMatrix, TransportError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(String, String),
    #[error("operator contains non-finite entries")]
    NonFinite,
    #[error("sweep axis values must be strictly monotone")]
    NonMonotoneAxis,
    #[error("target PPP {target} unreachable with at most {cap} pulses")]
    PppUnreachable { target: f64, cap: u64 },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Recon(#[from] ReconError),
    #[error(transparent)]
    PhotonCount(#[from] PhotonCountError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Fraction of the top singular value below which directions are counted as
/// uninformative.
pub const DEFAULT_EFFECTIVE_RANK_TAU: f64 = 1e-6;

/// Singular-value spectrum of a forward operator.
#[derive(Debug, Clone)]
pub struct SpectrumReport<R> {
    /// Descending singular values.
    pub singular_values: Vec<R>,
    /// Count of singular values above `tau * sigma_max`.
    pub effective_rank: usize,
    pub tau: R,
    /// sigma_max / smallest singular value above the threshold.
    pub condition_indicator: R,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Ppp,
    OccluderDiameter,
    BarSeparation,
    Lambda,
}

impl SweepAxis {
    pub fn label(&self) -> &'static str {
        match self {
            SweepAxis::Ppp => "ppp",
            SweepAxis::OccluderDiameter => "occluder_diameter",
            SweepAxis::BarSeparation => "bar_separation",
            SweepAxis::Lambda => "lambda",
        }
    }
}

/// One sweep sample: the axis value plus named metrics.
#[derive(Debug, Clone)]
pub struct SweepPoint<R> {
    pub value: R,
    pub metrics: Vec<(String, R)>,
}

#[derive(Debug, Clone)]
pub struct SweepReport<R> {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint<R>>,
}

impl<R: Real> SweepReport<R> {
    pub fn new(axis: SweepAxis, points: Vec<SweepPoint<R>>) -> Result<Self, AnalysisError> {
        let strictly_up = points.windows(2).all(|w| w[1].value > w[0].value);
        let strictly_down = points.windows(2).all(|w| w[1].value < w[0].value);
        if points.len() > 1 && !strictly_up && !strictly_down {
            return Err(AnalysisError::NonMonotoneAxis);
        }
        Ok(Self { axis, points })
    }

    pub fn metric(&self, name: &str) -> Vec<R> {
        self.points
            .iter()
            .filter_map(|p| {
                p.metrics
                    .iter()
                    .find(|(n, _)| n == name)
                    .map(|(_, v)| *v)
            })
            .collect()
    }

    /// CSV with one row per sample point.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(self.axis.label());
        if let Some(first) = self.points.first() {
            for (name, _) in &first.metrics {
                out.push(',');
                out.push_str(name);
            }
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{:.9e}", p.value.to_f64().unwrap()));
            for (_, v) in &p.metrics {
                out.push_str(&format!(",{:.9e}", v.to_f64().unwrap()));
            }
            out.push('\n');
        }
        out
    }

    /// Space-separated columns for external plotting.
    pub fn to_gnuplot(&self) -> String {
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(self.axis.label());
        if let Some(first) = self.points.first() {
            for (name, _) in &first.metrics {
                out.push(' ');
                out.push_str(name);
            }
        }
        out.push('\n');
        for p in &self.points {
            out.push_str(&format!("{:.9e}", p.value.to_f64().unwrap()));
            for (_, v) in &p.metrics {
                out.push_str(&format!(" {:.9e}", v.to_f64().unwrap()));
            }
            out.push('\n');
        }
        out
    }
}

/// Root-mean-square reflectivity error with the `1/n` normalization:
/// `sqrt(sum (F - F_hat)^2) / n`.
pub fn rmse<R: Real>(estimate: &Array2<R>, truth: &Array2<R>) -> Result<R, AnalysisError> {
    if estimate.dim() != truth.dim() {
        return Err(AnalysisError::DimensionMismatch(
            format!("{:?}", estimate.dim()),
            format!("{:?}", truth.dim()),
        ));
    }
    let sum: R = estimate
        .iter()
        .zip(truth.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum.sqrt() / R::from_usize(truth.nrows()).unwrap())
}

/// Full singular-value spectrum of the operator matrix, descending.
pub fn singular_spectrum<R: Real + RealField>(
    op: &ForwardOperator<R>,
    tau: R,
) -> Result<SpectrumReport<R>, AnalysisError> {
    let mat = op.matrix();
    if mat.iter().any(|v| !Float::is_finite(*v)) {
        return Err(AnalysisError::NonFinite);
    }
    let dm = DMatrix::from_row_iterator(mat.nrows(), mat.ncols(), mat.iter().copied());
    let mut sv: Vec<R> = dm.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = sv.first().copied().unwrap_or_else(R::zero);
    let threshold = tau * sigma_max;
    let effective_rank = sv.iter().filter(|&&s| s > threshold).count();
    let sigma_min_eff = sv
        .iter()
        .filter(|&&s| s > threshold)
        .last()
        .copied()
        .unwrap_or_else(R::zero);
    let condition_indicator = if sigma_min_eff > R::zero() {
        sigma_max / sigma_min_eff
    } else {
        R::zero()
    };
    Ok(SpectrumReport {
        singular_values: sv,
        effective_rank,
        tau,
        condition_indicator,
    })
}

/// Pulses needed so the expected detected signal PPP (background excluded)
/// reaches `target`.
pub fn pulses_for_target_ppp<R: Real>(
    y: &MeanPhotonMatrix<R>,
    eta: R,
    background: &Array2<R>,
    target: f64,
    cap: u64,
) -> Result<u64, AnalysisError> {
    if y.values.dim() != background.dim() {
        return Err(AnalysisError::DimensionMismatch(
            format!("{:?}", y.values.dim()),
            format!("{:?}", background.dim()),
        ));
    }
    let count = R::from_usize(y.values.len()).unwrap();
    let p_sig: R = y
        .values
        .iter()
        .zip(background.iter())
        .map(|(&yij, &b)| Float::exp(-eta * b) - Float::exp(-eta * (yij + b)))
        .sum::<R>()
        / count;
    let p_sig = p_sig.to_f64().unwrap();
    if p_sig <= 0.0 {
        return Err(AnalysisError::PppUnreachable { target, cap });
    }
    let n = (target / p_sig).ceil() as u64;
    if n == 0 || n > cap {
        return Err(AnalysisError::PppUnreachable { target, cap });
    }
    Ok(n.max(1))
}

/// Photon-efficiency experiment: per target PPP level, size the pulse budget,
/// simulate, and reconstruct with both likelihoods; RMSE averaged over seeds.
#[allow(clippy::too_many_arguments)]
pub fn sweep_ppp<R: Real>(
    op: &ForwardOperator<R>,
    truth: &Array2<R>,
    eta: R,
    background: &Array2<R>,
    ppp_levels: &[f64],
    cfg_binomial: &ReconstructionConfig<R>,
    cfg_gaussian: &ReconstructionConfig<R>,
    seeds: &[u64],
    pulse_cap: u64,
) -> Result<SweepReport<R>, AnalysisError> {
    let y = apply_forward(op, truth)?;
    let mut points = Vec::with_capacity(ppp_levels.len());
    for &target in ppp_levels {
        let n = pulses_for_target_ppp(&y, eta, background, target, pulse_cap)?;
        let params = AcquisitionParams::new(n, eta, background.clone())?;
        let mut rmse_bin = R::zero();
        let mut rmse_gauss = R::zero();
        let mut realized = R::zero();
        for &seed in seeds {
            let counts = simulate_counts(&y, &params, seed)?;
            let res_bin = reconstruct(&counts, op, cfg_binomial)?;
            let res_gauss = reconstruct(&counts, op, cfg_gaussian)?;
            rmse_bin = rmse_bin + rmse(&res_bin.estimate, truth)?;
            rmse_gauss = rmse_gauss + rmse(&res_gauss.estimate, truth)?;
            let total: u64 = counts.counts.iter().sum();
            let bg_expect: R = background
                .iter()
                .map(|&b| R::one() - Float::exp(-eta * b))
                .sum::<R>()
                * R::from_u64(n).unwrap();
            realized = realized
                + (R::from_u64(total).unwrap() - bg_expect)
                    / R::from_usize(counts.counts.len()).unwrap();
        }
        let k = R::from_usize(seeds.len()).unwrap();
        points.push(SweepPoint {
            value: R::of(target),
            metrics: vec![
                ("rmse_binomial".into(), rmse_bin / k),
                ("rmse_gaussian".into(), rmse_gauss / k),
                ("pulses".into(), R::from_u64(n).unwrap()),
                ("realized_signal_ppp".into(), realized / k),
            ],
        });
    }
    SweepReport::new(SweepAxis::Ppp, points)
}

/// Occluder-size experiment: rebuild the operator per occluder diameter
/// and track reconstruction RMSE.
#[allow(clippy::too_many_arguments)]
pub fn sweep_occluder<R: Real>(
    base_scene: &SceneGeometry<R>,
    occluder_center: Point3<R>,
    occluder_normal: UnitVec3<R>,
    diameters: &[R],
    photons_per_pulse: R,
    truth: &Array2<R>,
    params: &AcquisitionParams<R>,
    cfg: &ReconstructionConfig<R>,
    seed: u64,
) -> Result<SweepReport<R>, AnalysisError> {
    let mut points = Vec::with_capacity(diameters.len());
    for &d in diameters {
        let occ = DiskOccluder::new(occluder_center, occluder_normal, d * R::of(0.5))?;
        let mut scene = base_scene.without_occluders();
        scene.occluders.push(occ);
        let scene = SceneGeometry::new(
            scene.laser,
            scene.illumination,
            scene.hidden_wall,
            scene.fov_patch,
            scene.detector,
            scene.occluders,
            scene.visible_wall_reflectivity,
        )?;
        let op = build_operator(&scene, photons_per_pulse)?;
        let y = apply_forward(&op, truth)?;
        let counts = simulate_counts(&y, params, seed)?;
        let res = reconstruct(&counts, &op, cfg)?;
        points.push(SweepPoint {
            value: d,
            metrics: vec![("rmse".into(), rmse(&res.estimate, truth)?)],
        });
    }
    SweepReport::new(SweepAxis::OccluderDiameter, points)
}

/// Regularization-weight experiment: reconstruct the same counts at each lambda.
pub fn sweep_lambda<R: Real>(
    op: &ForwardOperator<R>,
    counts: &CountMatrix<R>,
    truth: &Array2<R>,
    lambdas: &[R],
    cfg: &ReconstructionConfig<R>,
) -> Result<SweepReport<R>, AnalysisError> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let cfg = ReconstructionConfig {
            lambda,
            ..cfg.clone()
        };
        let res = reconstruct(counts, op, &cfg)?;
        points.push(SweepPoint {
            value: lambda,
            metrics: vec![
                ("rmse".into(), rmse(&res.estimate, truth)?),
                ("tv".into(), tv_seminorm(&res.estimate)),
            ],
        });
    }
    SweepReport::new(SweepAxis::Lambda, points)
}

/// Mean across a band of rows, one value per column: the 1-D profile used by
/// the two-bar resolution criterion.
pub fn bar_profile<R: Real>(estimate: &Array2<R>, rows: std::ops::Range<usize>) -> Vec<R> {
    let height = R::from_usize(rows.len().max(1)).unwrap();
    (0..estimate.ncols())
        .map(|j| {
            rows.clone()
                .map(|i| estimate[[i, j]])
                .sum::<R>()
                / height
        })
        .collect()
}

/// Two bars count as resolved when the profile has two local maxima separated
/// by a dip of at least 20% of the profile peak. Returns the resolution flag
/// and the deepest relative dip found.
pub fn bars_resolved<R: Real>(profile: &[R]) -> (bool, R) {
    let peak = profile.iter().copied().fold(R::zero(), R::max);
    if peak <= R::zero() || profile.len() < 3 {
        return (false, R::zero());
    }
    let mut maxima = Vec::new();
    for i in 0..profile.len() {
        let left = if i > 0 { profile[i - 1] } else { R::neg_infinity() };
        let right = if i + 1 < profile.len() {
            profile[i + 1]
        } else {
            R::neg_infinity()
        };
        if profile[i] >= left && profile[i] >= right && profile[i] > R::zero() {
            // Collapse plateaus to their first sample.
            if i == 0 || profile[i] != profile[i - 1] {
                maxima.push(i);
            }
        }
    }
    let mut best_dip = R::zero();
    for (ai, &a) in maxima.iter().enumerate() {
        for &b in maxima.iter().skip(ai + 1) {
            let valley = profile[a..=b].iter().copied().fold(R::infinity(), R::min);
            let depth = profile[a].min(profile[b]) - valley;
            best_dip = best_dip.max(depth / peak);
        }
    }
    (best_dip >= R::of(0.2), best_dip)
}
