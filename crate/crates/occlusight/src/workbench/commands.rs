//! Pipeline subcommands. Each reads a scenario config, writes its artifacts
//! into the output directory, and refreshes the manifest.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::{
    bar_profile, bars_resolved, rmse, singular_spectrum, sweep_lambda, sweep_occluder, sweep_ppp,
    AnalysisError, SweepAxis, SweepPoint, SweepReport, DEFAULT_EFFECTIVE_RANK_TAU,
};
use crate::photoncount::{simulate_counts, PhotonCountError};
use crate::recon::{reconstruct, Likelihood, ReconError};
use crate::transport::{
    apply_forward, build_operator, read_operator, write_operator, ForwardOperator, TransportError,
};
use crate::workbench::config::{ConfigError, ScenarioConfig};
use crate::workbench::{io as wio, manifest, patterns};
use crate::{Counts, Scalar};

/// Failure categories map directly onto process exit codes.
#[derive(Debug, Error)]
pub enum CommandError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Config(_) => 2,
            CommandError::Io(_) => 3,
            CommandError::Numeric(_) => 4,
        }
    }
}

impl From<ConfigError> for CommandError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } | ConfigError::MissingFile { .. } => {
                CommandError::Io(e.to_string())
            }
            _ => CommandError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CommandError {
    fn from(e: std::io::Error) -> Self {
        CommandError::Io(e.to_string())
    }
}

impl From<TransportError> for CommandError {
    fn from(e: TransportError) -> Self {
        match e {
            TransportError::Io(_) | TransportError::Format(_) => CommandError::Io(e.to_string()),
            _ => CommandError::Numeric(e.to_string()),
        }
    }
}

impl From<ReconError> for CommandError {
    fn from(e: ReconError) -> Self {
        match e {
            ReconError::Config(_) => CommandError::Config(e.to_string()),
            ReconError::Transport(t) => t.into(),
            _ => CommandError::Numeric(e.to_string()),
        }
    }
}

impl From<PhotonCountError> for CommandError {
    fn from(e: PhotonCountError) -> Self {
        CommandError::Numeric(e.to_string())
    }
}

impl From<AnalysisError> for CommandError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Transport(t) => t.into(),
            AnalysisError::Recon(r) => r.into(),
            AnalysisError::PhotonCount(p) => p.into(),
            AnalysisError::Scene(s) => CommandError::Config(s.to_string()),
            _ => CommandError::Numeric(e.to_string()),
        }
    }
}

pub const OPERATOR_FILE: &str = "operator.bin";
pub const COUNTS_STEM: &str = "counts";
pub const TRUTH_FILE: &str = "truth.csv";
pub const REFLECTIVITY_CSV: &str = "reflectivity.csv";
pub const REFLECTIVITY_PGM: &str = "reflectivity.pgm";
pub const TRACE_FILE: &str = "objective_trace.csv";
pub const SPECTRUM_FILE: &str = "spectrum.csv";

/// Resolves the output directory (CLI override beats config) and creates it.
pub fn resolve_out_dir(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
) -> Result<PathBuf, CommandError> {
    let dir = match out_override {
        Some(p) => p.to_path_buf(),
        None => cfg.base_dir.join(&cfg.output.directory),
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn effective_seed(cfg: &ScenarioConfig, seed_override: Option<u64>) -> u64 {
    seed_override.unwrap_or(cfg.acquisition.seed)
}

/// Loads the operator artifact if present and matching the configured scene;
/// otherwise builds and writes it.
fn ensure_operator(
    cfg: &ScenarioConfig,
    dir: &Path,
) -> Result<ForwardOperator<Scalar>, CommandError> {
    let scene = cfg.scene_geometry()?;
    let path = dir.join(OPERATOR_FILE);
    if path.exists() {
        let op = read_operator::<Scalar>(&path)?;
        if op.scene_fingerprint() == &scene.fingerprint()
            && op.photons_per_pulse() == cfg.acquisition.photons_per_pulse
        {
            return Ok(op);
        }
    }
    let op = build_operator(&scene, cfg.acquisition.photons_per_pulse)?;
    write_operator(&op, &path)?;
    Ok(op)
}

fn ensure_counts(
    cfg: &ScenarioConfig,
    dir: &Path,
    op: &ForwardOperator<Scalar>,
    seed: u64,
    seed_overridden: bool,
) -> Result<Counts, CommandError> {
    let path = dir.join(format!("{COUNTS_STEM}.csv"));
    if path.exists() {
        let counts = wio::read_counts(dir, COUNTS_STEM)?;
        let same_seed = counts.seed == Some(seed);
        if counts.counts.dim() == (op.grid_side(), op.grid_side())
            && (same_seed || !seed_overridden)
        {
            return Ok(counts);
        }
    }
    let truth = cfg.truth_image()?;
    let y = apply_forward(op, &truth)?;
    let params = cfg.acquisition_params()?;
    let counts = simulate_counts(&y, &params, seed)?;
    wio::write_counts(dir, COUNTS_STEM, &counts)?;
    wio::write_float_csv(&dir.join(TRUTH_FILE), &truth)?;
    Ok(counts)
}

pub fn cmd_build_operator(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
) -> Result<(), CommandError> {
    let dir = resolve_out_dir(cfg, out_override)?;
    let op = ensure_operator(cfg, &dir)?;
    manifest::write_manifest(&dir, &cfg.hash(), cfg.acquisition.seed)?;
    println!(
        "operator: {} x {} entries ({} -> {})",
        op.grid_side() * op.grid_side(),
        op.pixel_side() * op.pixel_side(),
        dir.join(OPERATOR_FILE).display(),
        "ok"
    );
    Ok(())
}

pub fn cmd_simulate(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<(), CommandError> {
    let dir = resolve_out_dir(cfg, out_override)?;
    let seed = effective_seed(cfg, seed_override);
    let op = ensure_operator(cfg, &dir)?;
    let truth = cfg.truth_image()?;
    let y = apply_forward(&op, &truth)?;
    let params = cfg.acquisition_params()?;
    let counts = simulate_counts(&y, &params, seed)?;
    wio::write_counts(&dir, COUNTS_STEM, &counts)?;
    wio::write_float_csv(&dir.join(TRUTH_FILE), &truth)?;
    manifest::write_manifest(&dir, &cfg.hash(), seed)?;
    let total: u64 = counts.counts.iter().sum();
    println!(
        "counts: mean PPP {:.2} over {} points (seed {seed})",
        total as f64 / counts.counts.len() as f64,
        counts.counts.len()
    );
    Ok(())
}

pub fn cmd_reconstruct(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<Scalar, CommandError> {
    let dir = resolve_out_dir(cfg, out_override)?;
    let seed = effective_seed(cfg, seed_override);
    let op = ensure_operator(cfg, &dir)?;
    let counts = ensure_counts(cfg, &dir, &op, seed, seed_override.is_some())?;
    let result = reconstruct(&counts, &op, &cfg.recon_config())?;
    let display = result.display_image();
    wio::write_float_csv(&dir.join(REFLECTIVITY_CSV), display.values())?;
    wio::write_pgm(&dir.join(REFLECTIVITY_PGM), display.values())?;
    let trace: Vec<String> = result
        .objective_trace
        .iter()
        .enumerate()
        .map(|(k, v)| format!("{k},{v:.8e}"))
        .collect();
    std::fs::write(
        dir.join(TRACE_FILE),
        format!("iteration,objective\n{}\n", trace.join("\n")),
    )?;
    let truth = cfg.truth_image()?;
    let err = rmse(&result.estimate, &truth)?;
    manifest::write_manifest(&dir, &cfg.hash(), seed)?;
    println!(
        "reconstruction: {} iterations, converged = {}, rmse = {err:.6}",
        result.iterations_used, result.converged
    );
    Ok(err)
}

/// Sweep request from the CLI: axis name plus sample values.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub axis: String,
    pub values: Vec<f64>,
}

pub fn cmd_analyze(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
    sweep: Option<&SweepSpec>,
) -> Result<(), CommandError> {
    let dir = resolve_out_dir(cfg, out_override)?;
    let seed = effective_seed(cfg, seed_override);
    let op = ensure_operator(cfg, &dir)?;
    match sweep {
        None => {
            let rep = singular_spectrum(&op, DEFAULT_EFFECTIVE_RANK_TAU)?;
            let rows: Vec<String> = rep
                .singular_values
                .iter()
                .enumerate()
                .map(|(k, s)| format!("{k},{s:.8e}"))
                .collect();
            std::fs::write(
                dir.join(SPECTRUM_FILE),
                format!("index,singular_value\n{}\n", rows.join("\n")),
            )?;
            println!(
                "spectrum: {} singular values, effective rank {} (tau = {:.1e})",
                rep.singular_values.len(),
                rep.effective_rank,
                rep.tau
            );
        }
        Some(spec) => {
            let report = run_sweep(cfg, &dir, &op, seed, spec)?;
            let stem = format!("sweep_{}", report.axis.label());
            std::fs::write(dir.join(format!("{stem}.csv")), report.to_csv())?;
            std::fs::write(dir.join(format!("{stem}.dat")), report.to_gnuplot())?;
            println!("sweep: {} points along {}", report.points.len(), report.axis.label());
        }
    }
    manifest::write_manifest(&dir, &cfg.hash(), seed)?;
    Ok(())
}

fn run_sweep(
    cfg: &ScenarioConfig,
    dir: &Path,
    op: &ForwardOperator<Scalar>,
    seed: u64,
    spec: &SweepSpec,
) -> Result<SweepReport<Scalar>, CommandError> {
    let recon_cfg = cfg.recon_config();
    match spec.axis.as_str() {
        "lambda" => {
            let counts = ensure_counts(cfg, dir, op, seed, false)?;
            let truth = cfg.truth_image()?;
            Ok(sweep_lambda(op, &counts, &truth, &spec.values, &recon_cfg)?)
        }
        "ppp" => {
            let truth = cfg.truth_image()?;
            let params = cfg.acquisition_params()?;
            let gaussian_cfg = crate::recon::ReconstructionConfig {
                likelihood: Likelihood::Gaussian,
                ..recon_cfg.clone()
            };
            let seeds = [seed, seed + 1, seed + 2];
            Ok(sweep_ppp(
                op,
                &truth,
                params.quantum_efficiency,
                &params.background,
                &spec.values,
                &recon_cfg,
                &gaussian_cfg,
                &seeds,
                u64::MAX / 2,
            )?)
        }
        "occluder-diameter" => {
            let scene = cfg.scene_geometry()?;
            let occ = scene.occluders.first().ok_or_else(|| {
                CommandError::Config(
                    "occluder-diameter sweep needs at least one occluder in the scene".into(),
                )
            })?;
            let (center, normal) = (occ.center, occ.normal);
            let truth = cfg.truth_image()?;
            let params = cfg.acquisition_params()?;
            Ok(sweep_occluder(
                &scene,
                center,
                normal,
                &spec.values,
                cfg.acquisition.photons_per_pulse,
                &truth,
                &params,
                &recon_cfg,
                seed,
            )?)
        }
        "bar-separation" => {
            let params = cfg.acquisition_params()?;
            let extent = cfg.scene.hidden_wall.extent_u;
            let width = cfg.truth.bar_width.unwrap_or(0.04);
            let n = cfg.pixel_side();
            let mut points = Vec::with_capacity(spec.values.len());
            for &sep in &spec.values {
                let truth = patterns::two_bar(n, extent, sep, width)
                    .map_err(CommandError::Config)?;
                let y = apply_forward(op, &truth)?;
                let counts = simulate_counts(&y, &params, seed)?;
                let result = reconstruct(&counts, op, &recon_cfg)?;
                let profile = bar_profile(&result.estimate, patterns::two_bar_rows(n));
                let (resolved, dip) = bars_resolved(&profile);
                points.push(SweepPoint {
                    value: sep,
                    metrics: vec![
                        ("dip".into(), dip),
                        ("resolved".into(), if resolved { 1.0 } else { 0.0 }),
                        ("rmse".into(), rmse(&result.estimate, &truth)?),
                    ],
                });
            }
            Ok(SweepReport::new(SweepAxis::BarSeparation, points)?)
        }
        other => Err(CommandError::Config(format!(
            "unknown sweep axis {other:?} (expected lambda, ppp, occluder-diameter, or bar-separation)"
        ))),
    }
}

pub fn cmd_render(
    cfg: &ScenarioConfig,
    out_override: Option<&Path>,
) -> Result<(), CommandError> {
    let dir = resolve_out_dir(cfg, out_override)?;
    let csv = dir.join(REFLECTIVITY_CSV);
    if !csv.exists() {
        return Err(CommandError::Io(format!(
            "no reflectivity artifact at {}; run reconstruct first",
            csv.display()
        )));
    }
    let image = wio::read_float_csv(&csv)?;
    if image.iter().any(|v| !v.is_finite()) {
        return Err(CommandError::Numeric(
            "reflectivity artifact contains non-finite values".into(),
        ));
    }
    wio::write_pgm(&dir.join(REFLECTIVITY_PGM), &image)?;
    manifest::write_manifest(&dir, &cfg.hash(), cfg.acquisition.seed)?;
    println!("rendered {}", dir.join(REFLECTIVITY_PGM).display());
    Ok(())
}
