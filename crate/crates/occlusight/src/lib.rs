//! Occlusion-based non-line-of-sight imaging toolkit: scene modelling, light
//! transport, photon-count simulation, regularized reconstruction, and the
//! analysis/workbench layers on top.
//!
//! Core numerics are generic over the scalar type through [`float::Real`]
//! (implemented for `f32` and `f64`); the aliases below pin the default `f64`
//! instantiations used by the command-line tool.

pub mod analysis;
pub mod float;
pub mod photoncount;
pub mod recon;
pub mod scene;
pub mod transport;
pub mod workbench;

/// Default scalar type for the command-line tool and bundled configurations.
pub type Scalar = f64;

pub type Point = scene::Point3<Scalar>;
pub type Vector = scene::Vec3<Scalar>;
pub type Scene = scene::SceneGeometry<Scalar>;
pub type Occluder = scene::DiskOccluder<Scalar>;
pub type Operator = transport::ForwardOperator<Scalar>;
pub type Reflectivity = transport::ReflectivityImage<Scalar>;
pub type MeanPhotons = transport::MeanPhotonMatrix<Scalar>;
pub type Acquisition = photoncount::AcquisitionParams<Scalar>;
pub type Counts = photoncount::CountMatrix<Scalar>;
pub type ReconConfig = recon::ReconstructionConfig<Scalar>;
pub type ReconResult = recon::ReconstructionResult<Scalar>;
pub type Spectrum = analysis::SpectrumReport<Scalar>;
pub type Sweep = analysis::SweepReport<Scalar>;
