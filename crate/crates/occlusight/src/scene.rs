//! Scene geometry: walls, occluders, visibility and Lambertian angular factors.
//!
//! Positions are in meters. The visible wall carries the illumination grid and
//! the detector's field-of-view patch; the hidden wall carries the unknown
//! reflectivity pattern. Disk occluders between the walls define the binary
//! shadow function that makes the measurements informative.

use ndarray::Array2;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::float::Real;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("direction ({0}, {1}, {2}) is not unit length")]
    NotUnit(f64, f64, f64),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("coincident points in trajectory: {0} and {1}")]
    CoincidentPoints(&'static str, &'static str),
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// A position in 3-space, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3<R> {
    pub x: R,
    pub y: R,
    pub z: R,
}

/// A free vector in 3-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3<R> {
    pub x: R,
    pub y: R,
    pub z: R,
}

/// A direction with Euclidean norm 1 (validated at construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVec3<R>(Vec3<R>);

impl<R: Real> Point3<R> {
    pub fn new(x: R, y: R, z: R) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, other: Point3<R>) -> Vec3<R> {
        Vec3 {
            x: self.x - other.x,
            y: self.y - other.y,
            z: self.z - other.z,
        }
    }

    pub fn add(self, v: Vec3<R>) -> Point3<R> {
        Point3 {
            x: self.x + v.x,
            y: self.y + v.y,
            z: self.z + v.z,
        }
    }
}

impl<R: Real> Vec3<R> {
    pub fn new(x: R, y: R, z: R) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Vec3<R>) -> R {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sq(self) -> R {
        self.dot(self)
    }

    pub fn norm(self) -> R {
        self.norm_sq().sqrt()
    }

    pub fn scale(self, s: R) -> Vec3<R> {
        Vec3 {
            x: self.x * s,
            y: self.y * s,
            z: self.z * s,
        }
    }

    pub fn cross(self, other: Vec3<R>) -> Vec3<R> {
        Vec3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }
}

impl<R: Real> UnitVec3<R> {
    /// Validates unit norm within the scalar's geometric tolerance.
    pub fn new(x: R, y: R, z: R) -> Result<Self, SceneError> {
        let v = Vec3::new(x, y, z);
        if (v.norm() - R::one()).abs() > R::geom_tol() {
            return Err(SceneError::NotUnit(
                x.to_f64().unwrap_or(f64::NAN),
                y.to_f64().unwrap_or(f64::NAN),
                z.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(Self(v))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn from_vec(v: Vec3<R>) -> Result<Self, SceneError> {
        let n = v.norm();
        if n <= R::zero() || !n.is_finite() {
            return Err(SceneError::NotUnit(
                v.x.to_f64().unwrap_or(f64::NAN),
                v.y.to_f64().unwrap_or(f64::NAN),
                v.z.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(Self(v.scale(R::one() / n)))
    }

    pub fn as_vec(self) -> Vec3<R> {
        self.0
    }
}

/// A rectangular planar patch subdivided into a regular grid of cells.
///
/// `origin` is the patch center. Cell `(i, j)` runs row-major: `i` indexes
/// along `axis_v`, `j` along `axis_u`.
#[derive(Debug, Clone)]
pub struct PlanarPatchGrid<R> {
    pub origin: Point3<R>,
    pub axis_u: UnitVec3<R>,
    pub axis_v: UnitVec3<R>,
    pub extent_u: R,
    pub extent_v: R,
    pub count_u: usize,
    pub count_v: usize,
    pub normal: UnitVec3<R>,
}

impl<R: Real> PlanarPatchGrid<R> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        origin: Point3<R>,
        axis_u: UnitVec3<R>,
        axis_v: UnitVec3<R>,
        extent_u: R,
        extent_v: R,
        count_u: usize,
        count_v: usize,
        normal: UnitVec3<R>,
    ) -> Result<Self, SceneError> {
        let tol = R::geom_tol();
        if axis_u.as_vec().dot(axis_v.as_vec()).abs() > tol {
            return Err(invalid("axis_u/axis_v", "in-plane axes are not orthogonal"));
        }
        if axis_u.as_vec().dot(normal.as_vec()).abs() > tol
            || axis_v.as_vec().dot(normal.as_vec()).abs() > tol
        {
            return Err(invalid("normal", "normal is not orthogonal to the in-plane axes"));
        }
        if extent_u <= R::zero() || extent_v <= R::zero() {
            return Err(invalid("extent", "patch extents must be positive"));
        }
        if count_u == 0 || count_v == 0 {
            return Err(invalid("count", "cell counts must be positive"));
        }
        Ok(Self {
            origin,
            axis_u,
            axis_v,
            extent_u,
            extent_v,
            count_u,
            count_v,
            normal,
        })
    }

    /// Area of one grid cell, m^2.
    pub fn cell_area(&self) -> R {
        (self.extent_u / R::from_usize(self.count_u).unwrap())
            * (self.extent_v / R::from_usize(self.count_v).unwrap())
    }

    /// Center of cell `(i, j)`; `i` along `axis_v`, `j` along `axis_u`.
    pub fn cell_center(&self, i: usize, j: usize) -> Point3<R> {
        debug_assert!(i < self.count_v && j < self.count_u);
        let half = R::of(0.5);
        let fu = (R::from_usize(j).unwrap() + half) / R::from_usize(self.count_u).unwrap() - half;
        let fv = (R::from_usize(i).unwrap() + half) / R::from_usize(self.count_v).unwrap() - half;
        self.origin
            .add(self.axis_u.as_vec().scale(fu * self.extent_u))
            .add(self.axis_v.as_vec().scale(fv * self.extent_v))
    }
}

/// Opaque circular occluder.
#[derive(Debug, Clone)]
pub struct DiskOccluder<R> {
    pub center: Point3<R>,
    pub normal: UnitVec3<R>,
    pub radius: R,
}

impl<R: Real> DiskOccluder<R> {
    pub fn new(center: Point3<R>, normal: UnitVec3<R>, radius: R) -> Result<Self, SceneError> {
        if radius <= R::zero() {
            return Err(invalid("radius", "occluder radius must be positive"));
        }
        Ok(Self {
            center,
            normal,
            radius,
        })
    }
}

/// Single-pixel detector; the integral over its photosensitive area collapses
/// to one quadrature node at `position` weighted by `aperture_area`.
#[derive(Debug, Clone)]
pub struct Detector<R> {
    pub position: Point3<R>,
    pub aperture_area: R,
    pub optical_axis: UnitVec3<R>,
}

impl<R: Real> Detector<R> {
    pub fn new(
        position: Point3<R>,
        aperture_area: R,
        optical_axis: UnitVec3<R>,
    ) -> Result<Self, SceneError> {
        if aperture_area <= R::zero() {
            return Err(invalid("aperture_area", "aperture area must be positive"));
        }
        Ok(Self {
            position,
            aperture_area,
            optical_axis,
        })
    }
}

/// Full validated scene description. Immutable after construction.
#[derive(Debug, Clone)]
pub struct SceneGeometry<R> {
    pub laser: Point3<R>,
    pub illumination: PlanarPatchGrid<R>,
    pub hidden_wall: PlanarPatchGrid<R>,
    pub fov_patch: PlanarPatchGrid<R>,
    pub detector: Detector<R>,
    pub occluders: Vec<DiskOccluder<R>>,
    pub visible_wall_reflectivity: R,
}

impl<R: Real> SceneGeometry<R> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        laser: Point3<R>,
        illumination: PlanarPatchGrid<R>,
        hidden_wall: PlanarPatchGrid<R>,
        fov_patch: PlanarPatchGrid<R>,
        detector: Detector<R>,
        occluders: Vec<DiskOccluder<R>>,
        visible_wall_reflectivity: R,
    ) -> Result<Self, SceneError> {
        let tol = R::geom_tol();
        if visible_wall_reflectivity <= R::zero() || visible_wall_reflectivity > R::one() {
            return Err(invalid(
                "visible_wall_reflectivity",
                "reflectivity must be in (0, 1]",
            ));
        }
        // Illumination grid and FOV patch share the visible-wall plane.
        let n_i = illumination.normal.as_vec();
        let n_f = fov_patch.normal.as_vec();
        if n_i.cross(n_f).norm() > tol {
            return Err(invalid(
                "fov_patch.normal",
                "illumination grid and FOV patch are not coplanar (normals differ)",
            ));
        }
        let offset = fov_patch.origin.sub(illumination.origin);
        if offset.dot(n_i).abs() > tol {
            return Err(invalid(
                "fov_patch.origin",
                "illumination grid and FOV patch are not coplanar (plane offset)",
            ));
        }
        // Laser and detector sit on the reflecting side of the visible wall.
        if laser.sub(illumination.origin).dot(n_i) <= R::zero() {
            return Err(invalid(
                "laser",
                "laser is behind the visible wall plane",
            ));
        }
        if detector.position.sub(illumination.origin).dot(n_i) <= R::zero() {
            return Err(invalid(
                "detector.position",
                "detector is behind the visible wall plane",
            ));
        }
        // Hidden wall faces the visible wall.
        if hidden_wall.normal.as_vec().dot(n_i) >= R::zero() {
            return Err(invalid(
                "hidden_wall.normal",
                "hidden wall does not face the visible wall",
            ));
        }
        // Occluders lie strictly between the two wall planes.
        for (idx, occ) in occluders.iter().enumerate() {
            let s_vis = occ.center.sub(illumination.origin).dot(n_i);
            let s_hid = occ
                .center
                .sub(hidden_wall.origin)
                .dot(hidden_wall.normal.as_vec());
            if s_vis <= R::zero() || s_hid <= R::zero() {
                return Err(invalid(
                    format!("occluders[{idx}].center"),
                    "occluder does not lie strictly between the wall planes",
                ));
            }
        }
        Ok(Self {
            laser,
            illumination,
            hidden_wall,
            fov_patch,
            detector,
            occluders,
            visible_wall_reflectivity,
        })
    }

    /// Content hash of the geometry; identifies the operator a scene generates.
    pub fn fingerprint(&self) -> [u8; 32] {
        fn put<R: Real>(buf: &mut Vec<u8>, v: R) {
            buf.extend_from_slice(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes());
        }
        fn put3<R: Real>(buf: &mut Vec<u8>, x: R, y: R, z: R) {
            put(buf, x);
            put(buf, y);
            put(buf, z);
        }
        // Field order is fixed; changing it invalidates stored operators.
        let mut buf = Vec::new();
        put3(&mut buf, self.laser.x, self.laser.y, self.laser.z);
        for grid in [&self.illumination, &self.hidden_wall, &self.fov_patch] {
            put3(&mut buf, grid.origin.x, grid.origin.y, grid.origin.z);
            for v in [grid.axis_u, grid.axis_v, grid.normal] {
                let v = v.as_vec();
                put3(&mut buf, v.x, v.y, v.z);
            }
            put(&mut buf, grid.extent_u);
            put(&mut buf, grid.extent_v);
            buf.extend_from_slice(&(grid.count_u as u64).to_le_bytes());
            buf.extend_from_slice(&(grid.count_v as u64).to_le_bytes());
        }
        let det = &self.detector;
        put3(&mut buf, det.position.x, det.position.y, det.position.z);
        put(&mut buf, det.aperture_area);
        let ax = det.optical_axis.as_vec();
        put3(&mut buf, ax.x, ax.y, ax.z);
        buf.extend_from_slice(&(self.occluders.len() as u64).to_le_bytes());
        for occ in &self.occluders {
            put3(&mut buf, occ.center.x, occ.center.y, occ.center.z);
            let n = occ.normal.as_vec();
            put3(&mut buf, n.x, n.y, n.z);
            put(&mut buf, occ.radius);
        }
        put(&mut buf, self.visible_wall_reflectivity);
        Sha256::digest(&buf).into()
    }

    /// Copy of the scene with all occluders removed.
    pub fn without_occluders(&self) -> Self {
        let mut s = self.clone();
        s.occluders.clear();
        s
    }
}

/// Binary shadow function: `true` iff the open segment `(p, q)` is free of
/// every occluder disk. Grazing hits (distance within 1e-12 of the radius)
/// count as blocked; segments parallel to a disk plane never hit it.
pub fn shadow<R: Real>(p: Point3<R>, q: Point3<R>, occluders: &[DiskOccluder<R>]) -> bool {
    let d = q.sub(p);
    let graze = R::of(1e-12);
    for occ in occluders {
        let n = occ.normal.as_vec();
        let denom = d.dot(n);
        if denom == R::zero() {
            continue;
        }
        let t = occ.center.sub(p).dot(n) / denom;
        if t <= R::zero() || t >= R::one() {
            continue;
        }
        let hit = p.add(d.scale(t));
        if hit.sub(occ.center).norm() <= occ.radius + graze {
            return false;
        }
    }
    true
}

fn cos_clamped<R: Real>(v: Vec3<R>, n: UnitVec3<R>) -> R {
    let c = v.dot(n.as_vec()) / v.norm();
    if c < R::zero() {
        R::zero()
    } else {
        c
    }
}

/// Product of the six Lambertian BRDF cosines along a three-bounce trajectory
/// laser -> wall point -> hidden point -> wall point -> detector. Back-facing
/// cosines clamp to zero.
#[allow(clippy::too_many_arguments)]
pub fn geometric_factor<R: Real>(
    laser: Point3<R>,
    ell: Point3<R>,
    x: Point3<R>,
    c: Point3<R>,
    omega: Point3<R>,
    n_ell: UnitVec3<R>,
    n_x: UnitVec3<R>,
    n_c: UnitVec3<R>,
) -> Result<R, SceneError> {
    let pairs: [(Vec3<R>, &'static str, &'static str); 4] = [
        (laser.sub(ell), "laser", "illumination point"),
        (x.sub(ell), "hidden point", "illumination point"),
        (x.sub(c), "hidden point", "fov point"),
        (c.sub(omega), "fov point", "detector"),
    ];
    for (v, a, b) in pairs {
        if v.norm_sq() == R::zero() {
            return Err(SceneError::CoincidentPoints(a, b));
        }
    }
    Ok(cos_clamped(laser.sub(ell), n_ell)
        * cos_clamped(x.sub(ell), n_ell)
        * cos_clamped(ell.sub(x), n_x)
        * cos_clamped(c.sub(x), n_x)
        * cos_clamped(x.sub(c), n_c)
        * cos_clamped(omega.sub(c), n_c))
}

/// Mask of hidden-wall pixels with unobstructed sight of both the
/// illumination point and the FOV point, evaluated at pixel centers.
pub fn visible_hidden_set<R: Real>(
    ell: Point3<R>,
    c: Point3<R>,
    scene: &SceneGeometry<R>,
) -> Array2<u8> {
    let n_v = scene.hidden_wall.count_v;
    let n_u = scene.hidden_wall.count_u;
    Array2::from_shape_fn((n_v, n_u), |(k, l)| {
        let x = scene.hidden_wall.cell_center(k, l);
        u8::from(shadow(x, ell, &scene.occluders) && shadow(x, c, &scene.occluders))
    })
}
