//! Scenario configuration files: TOML grammar, validation with field paths,
//! and conversion into the typed domain objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::photoncount::AcquisitionParams;
use crate::recon::{
    Initialization, Likelihood, ReconstructionConfig, StepRule, StepSize, TvVariant,
};
use crate::scene::{
    Detector, DiskOccluder, PlanarPatchGrid, Point3, SceneGeometry, UnitVec3,
};
use crate::Scalar;
use ndarray::Array2;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid value for {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("referenced file {path} does not exist (from {field})")]
    MissingFile { field: String, path: PathBuf },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub extent_u: f64,
    pub extent_v: f64,
    pub count_u: usize,
    pub count_v: usize,
    pub normal: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorBlock {
    pub position: [f64; 3],
    pub aperture_area: f64,
    pub optical_axis: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccluderBlock {
    pub center: [f64; 3],
    pub normal: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneBlock {
    pub laser: [f64; 3],
    pub illumination: GridBlock,
    pub hidden_wall: GridBlock,
    pub fov_patch: GridBlock,
    pub detector: DetectorBlock,
    #[serde(default)]
    pub occluders: Vec<OccluderBlock>,
    pub visible_wall_reflectivity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionBlock {
    /// K_p, photons emitted per laser pulse.
    pub photons_per_pulse: f64,
    /// N, pulses per illumination point.
    pub pulses_per_point: u64,
    /// eta, detection efficiency.
    pub quantum_efficiency: f64,
    /// Constant mean background photons per pulse; exclusive with
    /// `background_file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<f64>,
    /// CSV file of per-point background rates, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background_file: Option<String>,
    pub seed: u64,
}

fn default_tv_variant() -> String {
    "isotropic".into()
}

fn default_initialization() -> String {
    "uniform".into()
}

fn default_initialization_value() -> f64 {
    0.5
}

fn default_log_floor() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconBlock {
    /// "binomial" or "gaussian".
    pub likelihood: String,
    pub lambda: f64,
    pub max_iterations: usize,
    pub relative_objective_tolerance: f64,
    pub tv_inner_iterations: usize,
    #[serde(default = "default_tv_variant")]
    pub tv_variant: String,
    /// "uniform" or "adjoint".
    #[serde(default = "default_initialization")]
    pub initialization: String,
    #[serde(default = "default_initialization_value")]
    pub initialization_value: f64,
    /// Fixed initial step; omitted means automatic sizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default = "default_log_floor")]
    pub log_floor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthBlock {
    /// Builtin pattern name: "man", "uniform", or "two-bar"; exclusive with
    /// `file`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// PGM or CSV image file, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Two-bar inner-edge separation in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    /// Two-bar bar width in meters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_width: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
}

/// One parsed and validated scenario file; drives every subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scene: SceneBlock,
    pub acquisition: AcquisitionBlock,
    pub reconstruction: ReconBlock,
    pub truth: TruthBlock,
    pub output: OutputBlock,
    /// Directory the config was loaded from; anchors relative file
    /// references. Not part of the config grammar.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg: ScenarioConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    cfg.validate()?;
    Ok(cfg)
}

fn check_positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(invalid(field, format!("must be positive and finite, got {v}")));
    }
    Ok(())
}

fn check_grid(prefix: &str, g: &GridBlock) -> Result<(), ConfigError> {
    check_positive(&format!("{prefix}.extent_u"), g.extent_u)?;
    check_positive(&format!("{prefix}.extent_v"), g.extent_v)?;
    if g.count_u == 0 || g.count_v == 0 {
        return Err(invalid(
            format!("{prefix}.count_u/count_v"),
            "cell counts must be positive",
        ));
    }
    Ok(())
}

impl ScenarioConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        check_grid("scene.illumination", &self.scene.illumination)?;
        check_grid("scene.hidden_wall", &self.scene.hidden_wall)?;
        check_grid("scene.fov_patch", &self.scene.fov_patch)?;
        check_positive("scene.detector.aperture_area", self.scene.detector.aperture_area)?;
        if !(self.scene.visible_wall_reflectivity > 0.0
            && self.scene.visible_wall_reflectivity <= 1.0)
        {
            return Err(invalid(
                "scene.visible_wall_reflectivity",
                "must be in (0, 1]",
            ));
        }
        for (k, occ) in self.scene.occluders.iter().enumerate() {
            check_positive(&format!("scene.occluders[{k}].radius"), occ.radius)?;
        }
        if self.scene.illumination.count_u != self.scene.illumination.count_v {
            return Err(invalid(
                "scene.illumination.count_v",
                "illumination scan must be square (count_u == count_v)",
            ));
        }
        if self.scene.hidden_wall.count_u != self.scene.hidden_wall.count_v {
            return Err(invalid(
                "scene.hidden_wall.count_v",
                "hidden-wall pixel grid must be square (count_u == count_v)",
            ));
        }

        check_positive("acquisition.photons_per_pulse", self.acquisition.photons_per_pulse)?;
        if self.acquisition.pulses_per_point == 0 {
            return Err(invalid("acquisition.pulses_per_point", "must be at least 1"));
        }
        if !(self.acquisition.quantum_efficiency > 0.0
            && self.acquisition.quantum_efficiency <= 1.0)
        {
            return Err(invalid("acquisition.quantum_efficiency", "must be in (0, 1]"));
        }
        match (&self.acquisition.background, &self.acquisition.background_file) {
            (Some(b), None) => {
                if !(*b >= 0.0) || !b.is_finite() {
                    return Err(invalid("acquisition.background", "must be nonnegative"));
                }
            }
            (None, Some(f)) => {
                let p = self.base_dir.join(f);
                if !p.exists() {
                    return Err(ConfigError::MissingFile {
                        field: "acquisition.background_file".into(),
                        path: p,
                    });
                }
            }
            _ => {
                return Err(invalid(
                    "acquisition.background",
                    "exactly one of background and background_file is required",
                ));
            }
        }

        match self.reconstruction.likelihood.as_str() {
            "binomial" | "gaussian" => {}
            other => {
                return Err(invalid(
                    "reconstruction.likelihood",
                    format!("unknown likelihood {other:?} (expected binomial or gaussian)"),
                ));
            }
        }
        match self.reconstruction.tv_variant.as_str() {
            "isotropic" | "anisotropic" => {}
            other => {
                return Err(invalid(
                    "reconstruction.tv_variant",
                    format!("unknown variant {other:?}"),
                ));
            }
        }
        match self.reconstruction.initialization.as_str() {
            "uniform" | "adjoint" => {}
            other => {
                return Err(invalid(
                    "reconstruction.initialization",
                    format!("unknown initialization {other:?}"),
                ));
            }
        }
        if self.reconstruction.lambda < 0.0 || !self.reconstruction.lambda.is_finite() {
            return Err(invalid("reconstruction.lambda", "must be nonnegative"));
        }
        if let Some(s) = self.reconstruction.step {
            check_positive("reconstruction.step", s)?;
        }

        match (&self.truth.pattern, &self.truth.file) {
            (Some(name), None) => match name.as_str() {
                "man" | "uniform" | "two-bar" => {}
                other => {
                    return Err(invalid(
                        "truth.pattern",
                        format!("unknown builtin pattern {other:?}"),
                    ));
                }
            },
            (None, Some(f)) => {
                let p = self.base_dir.join(f);
                if !p.exists() {
                    return Err(ConfigError::MissingFile {
                        field: "truth.file".into(),
                        path: p,
                    });
                }
            }
            _ => {
                return Err(invalid(
                    "truth.pattern",
                    "exactly one of pattern and file is required",
                ));
            }
        }
        if let Some(sep) = self.truth.separation {
            check_positive("truth.separation", sep)?;
        }
        if self.output.directory.is_empty() {
            return Err(invalid("output.directory", "must not be empty"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical re-serialization of the parsed config, so
    /// whitespace and comment differences do not change the hash.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Illumination scan side m.
    pub fn grid_side(&self) -> usize {
        self.scene.illumination.count_u
    }

    /// Hidden-wall pixel side n.
    pub fn pixel_side(&self) -> usize {
        self.scene.hidden_wall.count_u
    }

    pub fn scene_geometry(&self) -> Result<SceneGeometry<Scalar>, ConfigError> {
        let grid = |prefix: &str, g: &GridBlock| -> Result<PlanarPatchGrid<Scalar>, ConfigError> {
            PlanarPatchGrid::new(
                point(g.origin),
                unit(&format!("{prefix}.axis_u"), g.axis_u)?,
                unit(&format!("{prefix}.axis_v"), g.axis_v)?,
                g.extent_u,
                g.extent_v,
                g.count_u,
                g.count_v,
                unit(&format!("{prefix}.normal"), g.normal)?,
            )
            .map_err(|e| invalid(prefix, e.to_string()))
        };
        let detector = Detector::new(
            point(self.scene.detector.position),
            self.scene.detector.aperture_area,
            unit("scene.detector.optical_axis", self.scene.detector.optical_axis)?,
        )
        .map_err(|e| invalid("scene.detector", e.to_string()))?;
        let mut occluders = Vec::with_capacity(self.scene.occluders.len());
        for (k, o) in self.scene.occluders.iter().enumerate() {
            occluders.push(
                DiskOccluder::new(
                    point(o.center),
                    unit(&format!("scene.occluders[{k}].normal"), o.normal)?,
                    o.radius,
                )
                .map_err(|e| invalid(format!("scene.occluders[{k}]"), e.to_string()))?,
            );
        }
        SceneGeometry::new(
            point(self.scene.laser),
            grid("scene.illumination", &self.scene.illumination)?,
            grid("scene.hidden_wall", &self.scene.hidden_wall)?,
            grid("scene.fov_patch", &self.scene.fov_patch)?,
            detector,
            occluders,
            self.scene.visible_wall_reflectivity,
        )
        .map_err(|e| invalid("scene", e.to_string()))
    }

    /// Acquisition parameters; `seed_override` replaces the config seed.
    pub fn acquisition_params(&self) -> Result<AcquisitionParams<Scalar>, ConfigError> {
        let m = self.grid_side();
        let background = match (&self.acquisition.background, &self.acquisition.background_file) {
            (Some(b), None) => Array2::from_elem((m, m), *b),
            (None, Some(f)) => {
                let p = self.base_dir.join(f);
                let arr = super::io::read_float_csv(&p)
                    .map_err(|e| invalid("acquisition.background_file", e.to_string()))?;
                if arr.dim() != (m, m) {
                    return Err(invalid(
                        "acquisition.background_file",
                        format!("expected {m} x {m} grid, got {:?}", arr.dim()),
                    ));
                }
                arr
            }
            _ => unreachable!("validated at load"),
        };
        AcquisitionParams::new(
            self.acquisition.pulses_per_point,
            self.acquisition.quantum_efficiency,
            background,
        )
        .map_err(|e| invalid("acquisition", e.to_string()))
    }

    pub fn recon_config(&self) -> ReconstructionConfig<Scalar> {
        let r = &self.reconstruction;
        ReconstructionConfig {
            likelihood: match r.likelihood.as_str() {
                "gaussian" => Likelihood::Gaussian,
                _ => Likelihood::Binomial,
            },
            lambda: r.lambda,
            max_iterations: r.max_iterations,
            relative_objective_tolerance: r.relative_objective_tolerance,
            tv_inner_iterations: r.tv_inner_iterations,
            tv_variant: match r.tv_variant.as_str() {
                "anisotropic" => TvVariant::Anisotropic,
                _ => TvVariant::Isotropic,
            },
            initialization: match r.initialization.as_str() {
                "adjoint" => Initialization::AdjointBackprojection,
                _ => Initialization::Uniform(r.initialization_value),
            },
            step_rule: StepRule {
                initial_step: match r.step {
                    Some(s) => StepSize::Fixed(s),
                    None => StepSize::Auto,
                },
                ..StepRule::default()
            },
            log_floor: r.log_floor,
        }
    }

    /// Ground-truth reflectivity image from the builtin generator or file.
    pub fn truth_image(&self) -> Result<Array2<Scalar>, ConfigError> {
        let n = self.pixel_side();
        let extent = self.scene.hidden_wall.extent_u;
        match (&self.truth.pattern, &self.truth.file) {
            (Some(name), None) => match name.as_str() {
                "uniform" => Ok(super::patterns::uniform(n, 1.0)),
                "man" => Ok(super::patterns::man_shape(n)),
                "two-bar" => {
                    let sep = self.truth.separation.ok_or_else(|| {
                        invalid("truth.separation", "required for the two-bar pattern")
                    })?;
                    let width = self.truth.bar_width.unwrap_or(0.04);
                    super::patterns::two_bar(n, extent, sep, width)
                        .map_err(|e| invalid("truth", e))
                }
                _ => unreachable!("validated at load"),
            },
            (None, Some(f)) => {
                let p = self.base_dir.join(f);
                super::patterns::load_image(&p).map_err(|e| invalid("truth.file", e.to_string()))
            }
            _ => unreachable!("validated at load"),
        }
    }

    /// Row band the truth pattern occupies; used for bar-profile analysis.
    pub fn pattern_rows(&self) -> std::ops::Range<usize> {
        let n = self.pixel_side();
        if matches!(self.truth.pattern.as_deref(), Some("two-bar")) {
            super::patterns::two_bar_rows(n)
        } else {
            0..n
        }
    }
}

fn point(v: [f64; 3]) -> Point3<Scalar> {
    Point3::new(v[0], v[1], v[2])
}

fn unit(field: &str, v: [f64; 3]) -> Result<UnitVec3<Scalar>, ConfigError> {
    UnitVec3::new(v[0], v[1], v[2]).map_err(|e| invalid(field, e.to_string()))
}
