//! SPAD detection statistics in the low-flux regime.
//!
//! Each laser pulse yields at most one count; over N pulses the per-point
//! count is binomial with success probability `1 - exp(-eta (Y + B))`.
//! Simulation uses the exact exponential; the solver's likelihood uses the
//! linearized low-flux form separately.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::float::Real;
use crate::transport::MeanPhotonMatrix;

#[derive(Debug, Error)]
pub enum PhotonCountError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("negative input to p0: Y={y}, B={b}")]
    NegativeRate { y: f64, b: f64 },
    #[error("count r={r} outside [0, {n}]")]
    CountOutOfRange { r: u64, n: u64 },
    #[error("dimension mismatch: Y is {y_rows}x{y_cols}, background is {b_rows}x{b_cols}")]
    DimensionMismatch {
        y_rows: usize,
        y_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
}

/// Acquisition settings: pulses per raster point, quantum efficiency, and the
/// calibrated mean background photons per pulse interval.
#[derive(Debug, Clone)]
pub struct AcquisitionParams<R> {
    pub pulses_per_point: u64,
    pub quantum_efficiency: R,
    pub background: Array2<R>,
}

impl<R: Real> AcquisitionParams<R> {
    pub fn new(
        pulses_per_point: u64,
        quantum_efficiency: R,
        background: Array2<R>,
    ) -> Result<Self, PhotonCountError> {
        if pulses_per_point == 0 {
            return Err(PhotonCountError::Invalid {
                field: "pulses_per_point",
                reason: "must be at least 1".into(),
            });
        }
        if !(quantum_efficiency > R::zero() && quantum_efficiency <= R::one()) {
            return Err(PhotonCountError::Invalid {
                field: "quantum_efficiency",
                reason: "must be in (0, 1]".into(),
            });
        }
        if background.iter().any(|&b| !(b >= R::zero()) || !b.is_finite()) {
            return Err(PhotonCountError::Invalid {
                field: "background",
                reason: "entries must be finite and nonnegative".into(),
            });
        }
        Ok(Self {
            pulses_per_point,
            quantum_efficiency,
            background,
        })
    }
}

/// Observed (or simulated) photon counts with their acquisition parameters.
#[derive(Debug, Clone)]
pub struct CountMatrix<R> {
    pub counts: Array2<u64>,
    pub params: AcquisitionParams<R>,
    pub seed: Option<u64>,
}

/// Probability that the SPAD registers no count in one pulse interval:
/// `exp(-eta (Y + B))`.
pub fn p0<R: Real>(y: R, b: R, eta: R) -> Result<R, PhotonCountError> {
    if y < R::zero() || b < R::zero() {
        return Err(PhotonCountError::NegativeRate {
            y: y.to_f64().unwrap_or(f64::NAN),
            b: b.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((-eta * (y + b)).exp())
}

fn entry_rng(seed: u64, i: usize, j: usize) -> ChaCha8Rng {
    // Per-entry stream keyed by (seed, i, j): reproducible regardless of
    // evaluation order or worker count.
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(i as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(j as u64).to_le_bytes());
    key[24..32].copy_from_slice(b"oclcount");
    ChaCha8Rng::from_seed(key)
}

/// Draws each count independently as `Binomial(N, 1 - p0)`.
pub fn simulate_counts<R: Real>(
    y: &MeanPhotonMatrix<R>,
    params: &AcquisitionParams<R>,
    seed: u64,
) -> Result<CountMatrix<R>, PhotonCountError> {
    let (rows, cols) = y.values.dim();
    let (b_rows, b_cols) = params.background.dim();
    if (rows, cols) != (b_rows, b_cols) {
        return Err(PhotonCountError::DimensionMismatch {
            y_rows: rows,
            y_cols: cols,
            b_rows,
            b_cols,
        });
    }
    let n = params.pulses_per_point;
    let mut counts = Array2::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let p_zero = p0(y.values[[i, j]], params.background[[i, j]], params.quantum_efficiency)?;
            let p_detect = (1.0 - p_zero.to_f64().unwrap()).clamp(0.0, 1.0);
            let mut rng = entry_rng(seed, i, j);
            counts[[i, j]] = Binomial::new(n, p_detect)
                .expect("probability validated")
                .sample(&mut rng);
        }
    }
    Ok(CountMatrix {
        counts,
        params: params.clone(),
        seed: Some(seed),
    })
}

/// Log of the binomial PMF via log-gamma. Returns `-inf` only when a
/// degenerate success probability makes the count impossible.
pub fn binomial_log_pmf<R: Real>(r: u64, n: u64, p: R) -> Result<R, PhotonCountError> {
    if r > n {
        return Err(PhotonCountError::CountOutOfRange { r, n });
    }
    let p = p.to_f64().unwrap();
    if !(0.0..=1.0).contains(&p) {
        return Err(PhotonCountError::Invalid {
            field: "p",
            reason: format!("probability {p} outside [0, 1]"),
        });
    }
    let (rf, nf) = (r as f64, n as f64);
    if p == 0.0 {
        return Ok(R::of(if r == 0 { 0.0 } else { f64::NEG_INFINITY }));
    }
    if p == 1.0 {
        return Ok(R::of(if r == n { 0.0 } else { f64::NEG_INFINITY }));
    }
    let log_coeff = ln_gamma(nf + 1.0) - ln_gamma(rf + 1.0) - ln_gamma(nf - rf + 1.0);
    Ok(R::of(log_coeff + rf * p.ln() + (nf - rf) * (1.0 - p).ln()))
}

/// Inverts the count rates back to estimated mean signal photons per pulse:
/// `max(0, -ln(1 - R/N)/eta - B)`, with a half-count continuity correction
/// when every pulse registered.
pub fn rate_estimate<R: Real>(counts: &CountMatrix<R>) -> Array2<R> {
    let n = counts.params.pulses_per_point;
    let eta = counts.params.quantum_efficiency.to_f64().unwrap();
    let nf = n as f64;
    Array2::from_shape_fn(counts.counts.dim(), |(i, j)| {
        let mut r = counts.counts[[i, j]] as f64;
        if counts.counts[[i, j]] == n {
            r = nf - 0.5;
        }
        let b = counts.params.background[[i, j]].to_f64().unwrap();
        let y = -(1.0 - r / nf).ln() / eta - b;
        R::of(y.max(0.0))
    })
}
