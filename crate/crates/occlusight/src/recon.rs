//! Penalized maximum-likelihood reconstruction.
//!
//! Minimizes a smooth negative log-likelihood (binomial for raw SPAD counts,
//! Gaussian for rate estimates) plus a total-variation penalty, under a
//! nonnegativity constraint, by monotone proximal-gradient descent with
//! backtracking. The TV proximal step runs a dual projected-gradient inner
//! loop that also enforces nonnegativity.

use ndarray::Array2;
use thiserror::Error;

use crate::float::Real;
use crate::photoncount::{rate_estimate, CountMatrix};
use crate::transport::{apply_adjoint, apply_forward, ForwardOperator, ReflectivityImage, TransportError};

#[derive(Debug, Error)]
pub enum ReconError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("objective is not finite at initialization")]
    NonFiniteObjective,
    #[error("backtracking step underflow at iteration {iteration}")]
    StepUnderflow { iteration: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Likelihood {
    Binomial,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvVariant {
    Isotropic,
    Anisotropic,
}

#[derive(Debug, Clone, Copy)]
pub enum Initialization<R> {
    Uniform(R),
    AdjointBackprojection,
}

/// Initial step for the proximal-gradient iteration. `Auto` sizes the step
/// from a power-iteration estimate of the smooth term's curvature.
#[derive(Debug, Clone, Copy)]
pub enum StepSize<R> {
    Auto,
    Fixed(R),
}

/// Backtracking line-search parameters for the proximal-gradient step.
#[derive(Debug, Clone, Copy)]
pub struct StepRule<R> {
    pub initial_step: StepSize<R>,
    pub shrink: R,
    pub sufficient_decrease: R,
}

impl<R: Real> Default for StepRule<R> {
    fn default() -> Self {
        Self {
            initial_step: StepSize::Auto,
            shrink: R::of(0.5),
            sufficient_decrease: R::of(0.1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionConfig<R> {
    pub likelihood: Likelihood,
    pub lambda: R,
    pub max_iterations: usize,
    pub relative_objective_tolerance: R,
    pub tv_inner_iterations: usize,
    pub tv_variant: TvVariant,
    pub initialization: Initialization<R>,
    pub step_rule: StepRule<R>,
    /// Floor inside the likelihood log when a positive count meets a
    /// vanishing predicted rate.
    pub log_floor: R,
}

impl<R: Real> Default for ReconstructionConfig<R> {
    fn default() -> Self {
        Self {
            likelihood: Likelihood::Binomial,
            lambda: R::of(0.75),
            max_iterations: 500,
            relative_objective_tolerance: R::of(1e-6),
            tv_inner_iterations: 50,
            tv_variant: TvVariant::Isotropic,
            initialization: Initialization::Uniform(R::of(0.5)),
            step_rule: StepRule::default(),
            log_floor: R::of(1e-12),
        }
    }
}

impl<R: Real> ReconstructionConfig<R> {
    fn validate(&self) -> Result<(), ReconError> {
        if self.lambda < R::zero() {
            return Err(ReconError::Config("lambda must be nonnegative".into()));
        }
        if self.max_iterations == 0 || self.tv_inner_iterations == 0 {
            return Err(ReconError::Config("iteration limits must be positive".into()));
        }
        if self.relative_objective_tolerance <= R::zero() || self.log_floor <= R::zero() {
            return Err(ReconError::Config("tolerances must be positive".into()));
        }
        let sr = &self.step_rule;
        if let StepSize::Fixed(s) = sr.initial_step {
            if s <= R::zero() {
                return Err(ReconError::Config("initial step must be positive".into()));
            }
        }
        if sr.shrink <= R::zero() || sr.shrink >= R::one() || sr.sufficient_decrease <= R::zero() {
            return Err(ReconError::Config("invalid step rule".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult<R> {
    /// Nonnegative estimate; not clamped above (see `display_image`).
    pub estimate: Array2<R>,
    pub objective_trace: Vec<R>,
    pub iterations_used: usize,
    pub converged: bool,
    pub config: ReconstructionConfig<R>,
}

impl<R: Real> ReconstructionResult<R> {
    /// Estimate clamped to [0, 1] for display and image export.
    pub fn display_image(&self) -> ReflectivityImage<R> {
        let clamped = self
            .estimate
            .mapv(|v| v.max(R::zero()).min(R::one()));
        ReflectivityImage::new(clamped).expect("clamped values are in range")
    }
}

/// Binomial negative log-likelihood of the counts under reflectivity `f`,
/// with constant-in-F terms dropped:
/// `sum_ij (N - R_ij) eta Y_ij - R_ij ln(eta Y_ij + eta B_ij)` for
/// `Y = K_p A f`.
pub fn nll_binomial<R: Real>(
    counts: &CountMatrix<R>,
    f: &Array2<R>,
    op: &ForwardOperator<R>,
    log_floor: R,
) -> Result<R, ReconError> {
    let y = apply_forward(op, f)?.values;
    let eta = counts.params.quantum_efficiency;
    let n = R::from_u64(counts.params.pulses_per_point).unwrap();
    let mut total = R::zero();
    for ((idx, &yij), &r) in y.indexed_iter().zip(counts.counts.iter()) {
        let r = R::from_u64(r).unwrap();
        let b = counts.params.background[idx];
        let mut arg = eta * (yij + b);
        if r > R::zero() && arg < log_floor {
            arg = log_floor;
        }
        total = total + (n - r) * eta * yij
            - if r > R::zero() { r * arg.ln() } else { R::zero() };
    }
    Ok(total)
}

/// Gradient of `nll_binomial` with respect to `f`.
pub fn nll_binomial_grad<R: Real>(
    counts: &CountMatrix<R>,
    f: &Array2<R>,
    op: &ForwardOperator<R>,
    log_floor: R,
) -> Result<Array2<R>, ReconError> {
    let y = apply_forward(op, f)?.values;
    let eta = counts.params.quantum_efficiency;
    let n = R::from_u64(counts.params.pulses_per_point).unwrap();
    let mut w = Array2::zeros(y.dim());
    for ((idx, &yij), &r) in y.indexed_iter().zip(counts.counts.iter()) {
        let r = R::from_u64(r).unwrap();
        let b = counts.params.background[idx];
        let mut arg = eta * (yij + b);
        if r > R::zero() && arg < log_floor {
            arg = log_floor;
        }
        w[idx] = (n - r) - if r > R::zero() { r / arg } else { R::zero() };
    }
    Ok(apply_adjoint(op, &w)?.mapv(|v| v * eta))
}

/// Gaussian baseline: `1/2 || y_hat - K_p A f ||^2`.
pub fn nll_gaussian<R: Real>(
    y_hat: &Array2<R>,
    f: &Array2<R>,
    op: &ForwardOperator<R>,
) -> Result<R, ReconError> {
    let y = apply_forward(op, f)?.values;
    let half = R::of(0.5);
    Ok(half
        * y_hat
            .iter()
            .zip(y.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<R>())
}

/// Gradient of `nll_gaussian` with respect to `f`.
pub fn nll_gaussian_grad<R: Real>(
    y_hat: &Array2<R>,
    f: &Array2<R>,
    op: &ForwardOperator<R>,
) -> Result<Array2<R>, ReconError> {
    let y = apply_forward(op, f)?.values;
    let resid = y_hat - &y;
    Ok(apply_adjoint(op, &resid)?.mapv(|v| -v))
}

fn forward_diffs<R: Real>(u: &Array2<R>, i: usize, j: usize) -> (R, R) {
    let (rows, cols) = u.dim();
    let dv = if i + 1 < rows {
        u[[i + 1, j]] - u[[i, j]]
    } else {
        R::zero()
    };
    let dh = if j + 1 < cols {
        u[[i, j + 1]] - u[[i, j]]
    } else {
        R::zero()
    };
    (dv, dh)
}

/// Total-variation seminorm with forward differences and replicate boundary
/// (off-grid differences are zero).
pub fn tv_seminorm_variant<R: Real>(u: &Array2<R>, variant: TvVariant) -> R {
    let (rows, cols) = u.dim();
    let mut total = R::zero();
    for i in 0..rows {
        for j in 0..cols {
            let (dv, dh) = forward_diffs(u, i, j);
            total = total
                + match variant {
                    TvVariant::Isotropic => (dv * dv + dh * dh).sqrt(),
                    TvVariant::Anisotropic => dv.abs() + dh.abs(),
                };
        }
    }
    total
}

/// Isotropic TV seminorm (the default penalty).
pub fn tv_seminorm<R: Real>(u: &Array2<R>) -> R {
    tv_seminorm_variant(u, TvVariant::Isotropic)
}

/// Approximate minimizer of `1/2 ||u - v||^2 + weight TV(u)` over `u >= 0`,
/// via projected gradient ascent on the dual. `weight == 0` reduces to the
/// nonnegative projection exactly.
pub fn tv_prox<R: Real>(
    v: &Array2<R>,
    weight: R,
    variant: TvVariant,
    inner_iterations: usize,
    inner_tolerance: R,
) -> Array2<R> {
    let clamp_pos = |u: &Array2<R>| u.mapv(|x| x.max(R::zero()));
    if weight <= R::zero() {
        return clamp_pos(v);
    }
    let (rows, cols) = v.dim();
    let mut pv: Array2<R> = Array2::zeros((rows, cols)); // dual along rows
    let mut ph: Array2<R> = Array2::zeros((rows, cols)); // dual along cols
    let step = R::one() / (R::of(8.0) * weight);

    // u = P_{>=0}(v + weight * div p)
    let primal = |pv: &Array2<R>, ph: &Array2<R>| -> Array2<R> {
        let mut out = v.clone();
        for i in 0..rows {
            for j in 0..cols {
                let mut div = R::zero();
                if i + 1 < rows {
                    div = div + pv[[i, j]];
                }
                if i > 0 {
                    div = div - pv[[i - 1, j]];
                }
                if j + 1 < cols {
                    div = div + ph[[i, j]];
                }
                if j > 0 {
                    div = div - ph[[i, j - 1]];
                }
                out[[i, j]] = (out[[i, j]] + weight * div).max(R::zero());
            }
        }
        out
    };

    for _ in 0..inner_iterations {
        let u = primal(&pv, &ph);
        // dual ascent: p += grad(u) / (8 weight), then project to the unit ball
        let mut dual_delta = R::zero();
        for i in 0..rows {
            for j in 0..cols {
                let (dv, dh) = forward_diffs(&u, i, j);
                let a = pv[[i, j]] + step * dv;
                let b = ph[[i, j]] + step * dh;
                let (a, b) = match variant {
                    TvVariant::Isotropic => {
                        let norm = (a * a + b * b).sqrt().max(R::one());
                        (a / norm, b / norm)
                    }
                    TvVariant::Anisotropic => (
                        a.max(-R::one()).min(R::one()),
                        b.max(-R::one()).min(R::one()),
                    ),
                };
                dual_delta = dual_delta
                    .max((a - pv[[i, j]]).abs())
                    .max((b - ph[[i, j]]).abs());
                pv[[i, j]] = a;
                ph[[i, j]] = b;
            }
        }
        if dual_delta * weight < inner_tolerance {
            break;
        }
    }
    primal(&pv, &ph)
}

/// Power-iteration estimate of the largest eigenvalue of
/// `K_p^2 A^T diag(d) A`.
fn estimate_curvature<R: Real>(op: &ForwardOperator<R>, diag: &Array2<R>) -> R {
    let n = op.pixel_side();
    let mut v = Array2::from_elem((n, n), R::one() / R::from_usize(n).unwrap());
    let mut lam = R::zero();
    for _ in 0..30 {
        let y = apply_forward(op, &v).expect("dimensions fixed").values * diag;
        let w = apply_adjoint(op, &y).expect("dimensions fixed");
        let norm = w.iter().map(|&x| x * x).sum::<R>().sqrt();
        if norm <= R::zero() || !norm.is_finite() {
            return R::zero();
        }
        lam = norm;
        v = w.mapv(|x| x / norm);
    }
    lam
}

/// Monotone proximal-gradient reconstruction of the hidden-wall reflectivity.
pub fn reconstruct<R: Real>(
    counts: &CountMatrix<R>,
    op: &ForwardOperator<R>,
    cfg: &ReconstructionConfig<R>,
) -> Result<ReconstructionResult<R>, ReconError> {
    cfg.validate()?;
    let n = op.pixel_side();
    let m = op.grid_side();
    if counts.counts.dim() != (m, m) {
        return Err(ReconError::Transport(TransportError::DimensionMismatch {
            expected: format!("{m} x {m} counts"),
            got: format!("{} x {}", counts.counts.nrows(), counts.counts.ncols()),
        }));
    }

    // The Gaussian baseline operates on rate estimates, not raw counts.
    let y_hat = match cfg.likelihood {
        Likelihood::Gaussian => Some(rate_estimate(counts)),
        Likelihood::Binomial => None,
    };
    let smooth = |f: &Array2<R>| -> Result<R, ReconError> {
        match cfg.likelihood {
            Likelihood::Binomial => nll_binomial(counts, f, op, cfg.log_floor),
            Likelihood::Gaussian => nll_gaussian(y_hat.as_ref().unwrap(), f, op),
        }
    };
    let smooth_grad = |f: &Array2<R>| -> Result<Array2<R>, ReconError> {
        match cfg.likelihood {
            Likelihood::Binomial => nll_binomial_grad(counts, f, op, cfg.log_floor),
            Likelihood::Gaussian => nll_gaussian_grad(y_hat.as_ref().unwrap(), f, op),
        }
    };

    let mut f = match cfg.initialization {
        Initialization::Uniform(v) => Array2::from_elem((n, n), v.max(R::zero())),
        Initialization::AdjointBackprojection => {
            let b = apply_adjoint(op, &rate_estimate(counts))?;
            let peak = b.iter().fold(R::zero(), |a, &v| a.max(v));
            if peak > R::zero() {
                b.mapv(|v| v.max(R::zero()) * R::of(0.5) / peak)
            } else {
                Array2::zeros((n, n))
            }
        }
    };

    let tv_tol = R::of(1e-8);
    let objective = |f: &Array2<R>, g_val: R| g_val + cfg.lambda * tv_seminorm_variant(f, cfg.tv_variant);

    let g0 = smooth(&f)?;
    let mut obj_cur = objective(&f, g0);
    if !obj_cur.is_finite() {
        return Err(ReconError::NonFiniteObjective);
    }
    let initial_step = match cfg.step_rule.initial_step {
        StepSize::Fixed(s) => s,
        StepSize::Auto => {
            // Curvature of the smooth term at the initial point:
            // binomial Hessian is eta^2 K_p^2 A^T diag(R / arg^2) A,
            // Gaussian Hessian is K_p^2 A^T A.
            let diag = match cfg.likelihood {
                Likelihood::Gaussian => Array2::from_elem((m, m), R::one()),
                Likelihood::Binomial => {
                    let y = apply_forward(op, &f)?.values;
                    let eta = counts.params.quantum_efficiency;
                    Array2::from_shape_fn((m, m), |idx| {
                        let r = R::from_u64(counts.counts[idx]).unwrap();
                        let arg = (eta * (y[idx] + counts.params.background[idx]))
                            .max(cfg.log_floor);
                        eta * eta * r / (arg * arg)
                    })
                }
            };
            let lip = estimate_curvature(op, &diag);
            if lip > R::zero() {
                R::one() / lip
            } else {
                R::one()
            }
        }
    };
    let mut trace = vec![obj_cur];
    let mut converged = false;
    let mut iterations = 0;
    let min_step = initial_step * R::of(1e-20);
    // The spectral step makes per-iteration progress lumpy, so a single
    // sub-tolerance change is not evidence of convergence; require a run of
    // them.
    const STALL_RUN: usize = 8;
    let mut small_changes = 0usize;
    // Previous iterate and gradient for the Barzilai-Borwein spectral step.
    let mut prev: Option<(Array2<R>, Array2<R>)> = None;

    'outer: for iter in 0..cfg.max_iterations {
        iterations = iter + 1;
        let grad = smooth_grad(&f)?;
        // Spectral initial step: matches the local curvature along the last
        // displacement, which copes far better with ill conditioning than a
        // global 1/L step. Backtracking below keeps the iteration monotone.
        let mut step = match &prev {
            Some((pf, pg)) => {
                let mut ss = R::zero();
                let mut sy = R::zero();
                for ((&a, &b), (&ga, &gb)) in
                    f.iter().zip(pf.iter()).zip(grad.iter().zip(pg.iter()))
                {
                    let s = a - b;
                    ss = ss + s * s;
                    sy = sy + s * (ga - gb);
                }
                if sy > R::zero() && ss > R::zero() {
                    (ss / sy).max(initial_step).min(initial_step * R::of(1e12))
                } else {
                    initial_step
                }
            }
            None => initial_step,
        };
        prev = Some((f.clone(), grad.clone()));
        loop {
            let trial = &f - &grad.mapv(|g| g * step);
            let fp = tv_prox(&trial, step * cfg.lambda, cfg.tv_variant, cfg.tv_inner_iterations, tv_tol);
            let g_new = smooth(&fp)?;
            let mut dist = R::zero();
            for (&a, &b) in fp.iter().zip(f.iter()) {
                let d = a - b;
                dist = dist + d * d;
            }
            let obj_new = objective(&fp, g_new);
            // Sufficient-decrease acceptance relative to the actual move.
            let required =
                obj_cur - cfg.step_rule.sufficient_decrease / (R::of(2.0) * step) * dist;
            if obj_new <= required {
                let scale = obj_cur.abs().max(R::one());
                let rel_change = (obj_cur - obj_new) / scale;
                f = fp;
                obj_cur = obj_new;
                trace.push(obj_cur);
                if rel_change <= cfg.relative_objective_tolerance {
                    small_changes += 1;
                    if small_changes >= STALL_RUN {
                        converged = true;
                        break 'outer;
                    }
                } else {
                    small_changes = 0;
                }
                break;
            }
            // The prox point cannot improve the objective beyond rounding:
            // a stationary point.
            if obj_new <= obj_cur + obj_cur.abs().max(R::one()) * R::of(1e-14)
                && dist <= R::of(1e-24)
            {
                converged = true;
                break 'outer;
            }
            step = step * cfg.step_rule.shrink;
            if step < min_step {
                return Err(ReconError::StepUnderflow { iteration: iter });
            }
        }
    }

    Ok(ReconstructionResult {
        estimate: f,
        objective_trace: trace,
        iterations_used: iterations,
        converged,
        config: cfg.clone(),
    })
}
