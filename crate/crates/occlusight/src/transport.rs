//! Discrete three-bounce forward operator.
//!
//! `build_operator` assembles the dense m^2 x n^2 matrix whose entry
//! `(i*m + j, k*n + l)` is the photon-transfer probability from hidden-wall
//! pixel `(k, l)` into the detector under illumination of grid point `(i, j)`.
//! The field-of-view integral is approximated by a midpoint rule over the FOV
//! patch cells; the detector integral collapses to a single node weighted by
//! the aperture area. All entries are dimensionless (areas in m^2 cancel the
//! inverse-square distances); `K_p * A * f` is photons per pulse.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use thiserror::Error;

use crate::float::Real;
use crate::scene::{shadow, Point3, SceneGeometry, UnitVec3, Vec3};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("zero distance between {pair} at entry (i={i}, j={j}, k={k}, l={l})")]
    DegenerateTrajectory {
        pair: &'static str,
        i: usize,
        j: usize,
        k: usize,
        l: usize,
    },
    #[error("reflectivity value {value} at ({k}, {l}) outside [0, 1]")]
    ReflectivityOutOfRange { k: usize, l: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("operator file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The hidden wall's reflectivity pattern, entries in [0, 1].
#[derive(Debug, Clone)]
pub struct ReflectivityImage<R> {
    values: Array2<R>,
}

impl<R: Real> ReflectivityImage<R> {
    pub fn new(values: Array2<R>) -> Result<Self, TransportError> {
        for ((k, l), &v) in values.indexed_iter() {
            if !(v >= R::zero() && v <= R::one()) {
                return Err(TransportError::ReflectivityOutOfRange {
                    k,
                    l,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<R> {
        &self.values
    }

    pub fn side(&self) -> usize {
        self.values.nrows()
    }
}

/// Mean photons per pulse arriving at the detector, per illumination point.
#[derive(Debug, Clone)]
pub struct MeanPhotonMatrix<R> {
    pub values: Array2<R>,
}

/// Dense forward operator with its photon budget and scene provenance.
#[derive(Debug, Clone)]
pub struct ForwardOperator<R> {
    matrix: Array2<R>,
    m: usize,
    n: usize,
    photons_per_pulse: R,
    fingerprint: [u8; 32],
}

impl<R: Real> ForwardOperator<R> {
    /// Wraps an existing m^2 x n^2 matrix as an operator. Entries must be
    /// finite and nonnegative and both dimensions perfect squares.
    pub fn from_parts(
        matrix: Array2<R>,
        photons_per_pulse: R,
        fingerprint: [u8; 32],
    ) -> Result<Self, TransportError> {
        let isqrt = |v: usize| -> Option<usize> {
            let r = (v as f64).sqrt().round() as usize;
            (r * r == v).then_some(r)
        };
        let m = isqrt(matrix.nrows()).ok_or_else(|| TransportError::DimensionMismatch {
            expected: "square row count m^2".into(),
            got: matrix.nrows().to_string(),
        })?;
        let n = isqrt(matrix.ncols()).ok_or_else(|| TransportError::DimensionMismatch {
            expected: "square column count n^2".into(),
            got: matrix.ncols().to_string(),
        })?;
        if matrix.iter().any(|v| !v.is_finite() || *v < R::zero()) {
            return Err(TransportError::Format(
                "operator entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            matrix,
            m,
            n,
            photons_per_pulse,
            fingerprint,
        })
    }

    pub fn matrix(&self) -> &Array2<R> {
        &self.matrix
    }

    /// Illumination grid side length m (rows index an m x m grid).
    pub fn grid_side(&self) -> usize {
        self.m
    }

    /// Hidden-wall side length n (columns index an n x n grid).
    pub fn pixel_side(&self) -> usize {
        self.n
    }

    pub fn photons_per_pulse(&self) -> R {
        self.photons_per_pulse
    }

    pub fn scene_fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }
}

/// Per-pixel FOV-quadrature sum: everything in the kernel that does not
/// depend on the illumination point. Shared by `kernel_entry` and
/// `build_operator` so both evaluate the identical quadrature.
fn fov_sum<R: Real>(scene: &SceneGeometry<R>, x: Point3<R>, n_x: UnitVec3<R>) -> R {
    let n_c = scene.fov_patch.normal;
    let omega = scene.detector.position;
    let mut acc = R::zero();
    for ci in 0..scene.fov_patch.count_v {
        for cj in 0..scene.fov_patch.count_u {
            let c = scene.fov_patch.cell_center(ci, cj);
            if !shadow(x, c, &scene.occluders) {
                continue;
            }
            let cx = c.sub(x); // leaving the hidden pixel toward the node
            let xc = x.sub(c); // arriving at the node from the hidden pixel
            let oc = omega.sub(c); // leaving the node toward the detector
            let d2 = cx.norm_sq();
            let d3 = oc.norm_sq();
            acc = acc + cos_pos(cx, n_x) * cos_pos(xc, n_c) * cos_pos(oc, n_c) / (d2 * d3);
        }
    }
    acc
}

fn cos_pos<R: Real>(v: Vec3<R>, n: UnitVec3<R>) -> R {
    let c = v.dot(n.as_vec()) / v.norm();
    if c > R::zero() {
        c
    } else {
        R::zero()
    }
}

fn check_distances<R: Real>(
    scene: &SceneGeometry<R>,
    ell: Point3<R>,
    x: Point3<R>,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> Result<(), TransportError> {
    let deg = |pair| TransportError::DegenerateTrajectory { pair, i, j, k, l };
    if scene.laser.sub(ell).norm_sq() == R::zero() {
        return Err(deg("laser and illumination point"));
    }
    if x.sub(ell).norm_sq() == R::zero() {
        return Err(deg("illumination point and hidden pixel"));
    }
    for ci in 0..scene.fov_patch.count_v {
        for cj in 0..scene.fov_patch.count_u {
            let c = scene.fov_patch.cell_center(ci, cj);
            if x.sub(c).norm_sq() == R::zero() {
                return Err(deg("hidden pixel and fov node"));
            }
            if c.sub(scene.detector.position).norm_sq() == R::zero() {
                return Err(deg("fov node and detector"));
            }
        }
    }
    Ok(())
}

/// One operator entry: midpoint-rule quadrature of the kernel over the FOV
/// patch, for illumination point `(i, j)` and hidden pixel `(k, l)`.
pub fn kernel_entry<R: Real>(
    scene: &SceneGeometry<R>,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> Result<R, TransportError> {
    let ell = scene.illumination.cell_center(i, j);
    let x = scene.hidden_wall.cell_center(k, l);
    check_distances(scene, ell, x, i, j, k, l)?;
    if !shadow(x, ell, &scene.occluders) {
        return Ok(R::zero());
    }
    let n_ell = scene.illumination.normal;
    let n_x = scene.hidden_wall.normal;
    let le = scene.laser.sub(ell);
    let xe = x.sub(ell);
    let illum_part =
        cos_pos(le, n_ell) * cos_pos(xe, n_ell) * cos_pos(ell.sub(x), n_x) / xe.norm_sq();
    let rho = scene.visible_wall_reflectivity;
    let weights = scene.hidden_wall.cell_area()
        * scene.fov_patch.cell_area()
        * scene.detector.aperture_area
        * rho
        * rho;
    Ok(illum_part * fov_sum(scene, x, n_x) * weights)
}

/// Assembles the dense forward operator. Rows are independent and computed in
/// parallel; the result is bit-identical for any worker count.
pub fn build_operator<R: Real>(
    scene: &SceneGeometry<R>,
    photons_per_pulse: R,
) -> Result<ForwardOperator<R>, TransportError> {
    let m = scene.illumination.count_v;
    let n = scene.hidden_wall.count_v;
    if scene.illumination.count_u != m {
        return Err(TransportError::DimensionMismatch {
            expected: "square illumination grid".into(),
            got: format!("{m} x {}", scene.illumination.count_u),
        });
    }
    if scene.hidden_wall.count_u != n {
        return Err(TransportError::DimensionMismatch {
            expected: "square hidden-wall grid".into(),
            got: format!("{n} x {}", scene.hidden_wall.count_u),
        });
    }

    // Pixel centers and the illumination-independent FOV quadrature sums.
    let mut pixels = Vec::with_capacity(n * n);
    let n_x = scene.hidden_wall.normal;
    for k in 0..n {
        for l in 0..n {
            let x = scene.hidden_wall.cell_center(k, l);
            check_distances(scene, scene.illumination.cell_center(0, 0), x, 0, 0, k, l)?;
            pixels.push((x, fov_sum(scene, x, n_x)));
        }
    }

    let rho = scene.visible_wall_reflectivity;
    let weights = scene.hidden_wall.cell_area()
        * scene.fov_patch.cell_area()
        * scene.detector.aperture_area
        * rho
        * rho;
    let n_ell = scene.illumination.normal;

    let mut matrix = Array2::zeros((m * m, n * n));
    let rows: Vec<(usize, &mut [R])> = matrix
        .as_slice_mut()
        .expect("freshly allocated matrix is contiguous")
        .chunks_mut(n * n)
        .enumerate()
        .collect();
    let err = std::sync::Mutex::new(None);
    rows.into_par_iter().for_each(|(r, row)| {
        let (i, j) = (r / m, r % m);
        let ell = scene.illumination.cell_center(i, j);
        let le = scene.laser.sub(ell);
        if le.norm_sq() == R::zero() {
            *err.lock().unwrap() = Some(TransportError::DegenerateTrajectory {
                pair: "laser and illumination point",
                i,
                j,
                k: 0,
                l: 0,
            });
            return;
        }
        let cos_laser = cos_pos(le, n_ell);
        for (q, &(x, fov)) in pixels.iter().enumerate() {
            let xe = x.sub(ell);
            if xe.norm_sq() == R::zero() {
                *err.lock().unwrap() = Some(TransportError::DegenerateTrajectory {
                    pair: "illumination point and hidden pixel",
                    i,
                    j,
                    k: q / scene.hidden_wall.count_u,
                    l: q % scene.hidden_wall.count_u,
                });
                return;
            }
            if !shadow(x, ell, &scene.occluders) {
                row[q] = R::zero();
                continue;
            }
            row[q] = cos_laser * cos_pos(xe, n_ell) * cos_pos(ell.sub(x), n_x) / xe.norm_sq()
                * fov
                * weights;
        }
    });
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }

    Ok(ForwardOperator {
        matrix,
        m,
        n,
        photons_per_pulse,
        fingerprint: scene.fingerprint(),
    })
}

/// `Y = K_p * (A f)` reshaped to m x m.
pub fn apply_forward<R: Real>(
    op: &ForwardOperator<R>,
    image: &Array2<R>,
) -> Result<MeanPhotonMatrix<R>, TransportError> {
    let n = op.n;
    if image.dim() != (n, n) {
        return Err(TransportError::DimensionMismatch {
            expected: format!("{n} x {n} image"),
            got: format!("{} x {}", image.nrows(), image.ncols()),
        });
    }
    let f = Array1::from_iter(image.iter().copied());
    let y = op.matrix.dot(&f) * op.photons_per_pulse;
    Ok(MeanPhotonMatrix {
        values: y.into_shape_with_order((op.m, op.m)).expect("m^2 vector"),
    })
}

/// `K_p * (A^T w)` reshaped to n x n; the adjoint of `apply_forward`.
pub fn apply_adjoint<R: Real>(
    op: &ForwardOperator<R>,
    weights: &Array2<R>,
) -> Result<Array2<R>, TransportError> {
    let m = op.m;
    if weights.dim() != (m, m) {
        return Err(TransportError::DimensionMismatch {
            expected: format!("{m} x {m} grid"),
            got: format!("{} x {}", weights.nrows(), weights.ncols()),
        });
    }
    let w = Array1::from_iter(weights.iter().copied());
    let g = op.matrix.t().dot(&w) * op.photons_per_pulse;
    Ok(g.into_shape_with_order((op.n, op.n)).expect("n^2 vector"))
}

const MAGIC: &[u8; 4] = b"OCLA";
const FORMAT_VERSION: u32 = 1;

/// Writes the operator as a flat binary file: magic, version, m, n, K_p,
/// scene fingerprint, then row-major little-endian f64 entries.
pub fn write_operator<R: Real>(op: &ForwardOperator<R>, path: &Path) -> Result<(), TransportError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(op.m as u32).to_le_bytes())?;
    w.write_all(&(op.n as u32).to_le_bytes())?;
    w.write_all(&op.photons_per_pulse.to_f64().unwrap().to_le_bytes())?;
    w.write_all(&op.fingerprint)?;
    for &v in op.matrix.iter() {
        w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_operator<R: Real>(path: &Path) -> Result<ForwardOperator<R>, TransportError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TransportError::Format("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != FORMAT_VERSION {
        return Err(TransportError::Format(format!(
            "unsupported version {version}"
        )));
    }
    r.read_exact(&mut b4)?;
    let m = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let k_p = f64::from_le_bytes(b8);
    let mut fingerprint = [0u8; 32];
    r.read_exact(&mut fingerprint)?;
    let mut data = Vec::with_capacity(m * m * n * n);
    for _ in 0..m * m * n * n {
        r.read_exact(&mut b8)?;
        let v = f64::from_le_bytes(b8);
        data.push(R::from_f64(v).ok_or_else(|| {
            TransportError::Format(format!("entry {v} not representable in target scalar"))
        })?);
    }
    let matrix = Array2::from_shape_vec((m * m, n * n), data)
        .map_err(|e| TransportError::Format(e.to_string()))?;
    Ok(ForwardOperator {
        matrix,
        m,
        n,
        photons_per_pulse: R::from_f64(k_p)
            .ok_or_else(|| TransportError::Format("K_p not representable".into()))?,
        fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{geometric_factor, Detector, DiskOccluder, PlanarPatchGrid};
    use approx::assert_relative_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pt(x: f64, y: f64, z: f64) -> Point3<f64> {
        Point3::new(x, y, z)
    }

    fn uv(x: f64, y: f64, z: f64) -> UnitVec3<f64> {
        UnitVec3::new(x, y, z).unwrap()
    }

    pub(crate) fn scene(
        m: usize,
        n: usize,
        fov_nodes: usize,
        occluders: Vec<DiskOccluder<f64>>,
    ) -> SceneGeometry<f64> {
        let up = uv(0.0, 1.0, 0.0);
        let right = uv(1.0, 0.0, 0.0);
        let illum = PlanarPatchGrid::new(
            pt(0.0, 0.0, 0.0),
            right,
            up,
            1.0,
            1.0,
            m,
            m,
            uv(0.0, 0.0, 1.0),
        )
        .unwrap();
        let hidden = PlanarPatchGrid::new(
            pt(0.0, 0.0, 1.0),
            right,
            up,
            1.0,
            1.0,
            n,
            n,
            uv(0.0, 0.0, -1.0),
        )
        .unwrap();
        let fov = PlanarPatchGrid::new(
            pt(-0.75, 0.0, 0.0),
            right,
            up,
            0.5,
            0.5,
            fov_nodes,
            fov_nodes,
            uv(0.0, 0.0, 1.0),
        )
        .unwrap();
        let det = Detector::new(pt(-0.5, -2.0, 1.5), 1e-4, uv(0.0, 0.8, -0.6)).unwrap();
        SceneGeometry::new(pt(0.0, -2.0, 1.5), illum, hidden, fov, det, occluders, 0.8).unwrap()
    }

    fn center_disk(radius: f64) -> DiskOccluder<f64> {
        DiskOccluder::new(pt(0.0, 0.0, 0.5), uv(0.0, 0.0, 1.0), radius).unwrap()
    }

    #[test]
    fn kernel_entry_single_node_hand_evaluation() {
        // One FOV node, no occluders: the entry is a single product term.
        let sc = scene(1, 1, 1, vec![]);
        let got = kernel_entry(&sc, 0, 0, 0, 0).unwrap();

        let ell = sc.illumination.cell_center(0, 0);
        let x = sc.hidden_wall.cell_center(0, 0);
        let c = sc.fov_patch.cell_center(0, 0);
        let omega = sc.detector.position;
        let g = geometric_factor(
            sc.laser,
            ell,
            x,
            c,
            omega,
            sc.illumination.normal,
            sc.hidden_wall.normal,
            sc.fov_patch.normal,
        )
        .unwrap();
        let d1 = ell.sub(x).norm_sq();
        let d2 = x.sub(c).norm_sq();
        let d3 = c.sub(omega).norm_sq();
        let expected = 0.8 * 0.8 * sc.hidden_wall.cell_area() * sc.fov_patch.cell_area() * 1e-4
            * g
            / (d1 * d2 * d3);
        assert_relative_eq!(got, expected, max_relative = 1e-12);
        assert!(got > 0.0);
    }

    #[test]
    fn kernel_entry_fully_shadowed_pixel_is_zero() {
        // Giant disk right in front of the hidden wall blocks every path.
        let occ =
            DiskOccluder::new(pt(0.0, 0.0, 0.99), uv(0.0, 0.0, 1.0), 5.0).unwrap();
        let sc = scene(2, 2, 4, vec![occ]);
        for k in 0..2 {
            for l in 0..2 {
                assert_eq!(kernel_entry(&sc, 0, 0, k, l).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn kernel_entry_quadrature_refinement_below_one_percent() {
        let coarse = scene(4, 4, 16, vec![center_disk(0.034)]);
        let fine = scene(4, 4, 32, vec![center_disk(0.034)]);
        for (k, l) in [(0, 0), (1, 2), (3, 3)] {
            let a = kernel_entry(&coarse, 1, 1, k, l).unwrap();
            let b = kernel_entry(&fine, 1, 1, k, l).unwrap();
            assert!(a > 0.0);
            assert!(
                (a - b).abs() / b < 0.01,
                "refinement moved entry by {:.3}%",
                100.0 * (a - b).abs() / b
            );
        }
    }

    #[test]
    fn build_operator_degenerate_scene_matches_kernel_entry() {
        let sc = scene(1, 1, 2, vec![]);
        let op = build_operator(&sc, 1.0).unwrap();
        assert_eq!(op.matrix().dim(), (1, 1));
        let e = kernel_entry(&sc, 0, 0, 0, 0).unwrap();
        assert_relative_eq!(op.matrix()[[0, 0]], e, max_relative = 1e-12);
    }

    #[test]
    fn build_operator_agrees_with_kernel_entry() {
        let sc = scene(3, 3, 4, vec![center_disk(0.15)]);
        let op = build_operator(&sc, 1.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let e = kernel_entry(&sc, i, j, k, l).unwrap();
                        let got = op.matrix()[[i * 3 + j, k * 3 + l]];
                        assert_relative_eq!(got, e, max_relative = 1e-12, epsilon = 1e-30);
                    }
                }
            }
        }
    }

    #[test]
    fn occluded_entries_vanish_where_unoccluded_do_not() {
        let occluded = build_operator(&scene(6, 6, 4, vec![center_disk(0.2)]), 1.0).unwrap();
        let open = build_operator(&scene(6, 6, 4, vec![]), 1.0).unwrap();
        let mut vanished = 0;
        for (a, b) in occluded.matrix().iter().zip(open.matrix().iter()) {
            assert!(a <= b, "occlusion dominance violated");
            if *a == 0.0 && *b > 0.0 {
                vanished += 1;
            }
        }
        assert!(vanished > 0);
        assert!(occluded.matrix().iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn occluded_rows_vary_more_than_unoccluded() {
        let row_roughness = |op: &ForwardOperator<f64>| {
            let mat = op.matrix();
            let mut worst = 0.0f64;
            for r in 1..mat.nrows() {
                let prev = mat.row(r - 1);
                let cur = mat.row(r);
                let diff: f64 = prev
                    .iter()
                    .zip(cur.iter())
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let scale: f64 = cur.iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.max(diff / scale);
            }
            worst
        };
        let occluded = build_operator(&scene(8, 8, 4, vec![center_disk(0.1)]), 1.0).unwrap();
        let open = build_operator(&scene(8, 8, 4, vec![]), 1.0).unwrap();
        assert!(row_roughness(&open) < row_roughness(&occluded));
    }

    #[test]
    fn forward_linearity_and_zero() {
        let sc = scene(4, 4, 4, vec![center_disk(0.1)]);
        let op = build_operator(&sc, 2.5e3).unwrap();
        let zero = Array2::<f64>::zeros((4, 4));
        assert!(apply_forward(&op, &zero)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f1 = Array2::from_shape_fn((4, 4), |_| rng.gen::<f64>());
        let f2 = Array2::from_shape_fn((4, 4), |_| rng.gen::<f64>());
        let (alpha, beta) = (0.3, 1.7);
        let lhs = apply_forward(&op, &(&f1 * alpha + &f2 * beta)).unwrap();
        let y1 = apply_forward(&op, &f1).unwrap();
        let y2 = apply_forward(&op, &f2).unwrap();
        for ((&l, &a), &b) in lhs.values.iter().zip(y1.values.iter()).zip(y2.values.iter()) {
            assert_relative_eq!(l, alpha * a + beta * b, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_pixel_image_reads_out_operator_column() {
        let sc = scene(4, 4, 4, vec![center_disk(0.1)]);
        let op = build_operator(&sc, 1e4).unwrap();
        let (k, l) = (2, 1);
        let mut f = Array2::<f64>::zeros((4, 4));
        f[[k, l]] = 1.0;
        let y = apply_forward(&op, &f).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let e = kernel_entry(&sc, i, j, k, l).unwrap();
                assert_relative_eq!(y.values[[i, j]], 1e4 * e, max_relative = 1e-10, epsilon = 1e-30);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let sc = scene(5, 4, 4, vec![center_disk(0.12)]);
        let op = build_operator(&sc, 3.3e3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let f = Array2::from_shape_fn((4, 4), |_| rng.gen::<f64>());
            let w = Array2::from_shape_fn((5, 5), |_| rng.gen::<f64>());
            let yf = apply_forward(&op, &f).unwrap();
            let aw = apply_adjoint(&op, &w).unwrap();
            let lhs: f64 = yf.values.iter().zip(w.iter()).map(|(a, b)| a * b).sum();
            let rhs: f64 = f.iter().zip(aw.iter()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
    }

    #[test]
    fn single_entry_weights_read_out_scaled_row() {
        let sc = scene(3, 3, 4, vec![]);
        let op = build_operator(&sc, 2.0).unwrap();
        let mut w = Array2::<f64>::zeros((3, 3));
        w[[1, 2]] = 1.0;
        let g = apply_adjoint(&op, &w).unwrap();
        for k in 0..3 {
            for l in 0..3 {
                assert_relative_eq!(
                    g[[k, l]],
                    2.0 * op.matrix()[[1 * 3 + 2, k * 3 + l]],
                    max_relative = 1e-14
                );
            }
        }
        assert!(apply_adjoint(&op, &Array2::zeros((3, 3)))
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn build_is_deterministic() {
        let sc = scene(6, 6, 4, vec![center_disk(0.1)]);
        let a = build_operator(&sc, 1.0).unwrap();
        let b = build_operator(&sc, 1.0).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.scene_fingerprint(), b.scene_fingerprint());
    }

    #[test]
    fn operator_file_round_trip() {
        let sc = scene(4, 3, 4, vec![center_disk(0.1)]);
        let op = build_operator(&sc, 1.5e4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.bin");
        write_operator(&op, &path).unwrap();
        let back: ForwardOperator<f64> = read_operator(&path).unwrap();
        assert_eq!(back.matrix(), op.matrix());
        assert_eq!(back.photons_per_pulse(), op.photons_per_pulse());
        assert_eq!(back.scene_fingerprint(), op.scene_fingerprint());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sc = scene(3, 3, 2, vec![]);
        let op = build_operator(&sc, 1.0).unwrap();
        let bad = Array2::<f64>::zeros((4, 4));
        assert!(matches!(
            apply_forward(&op, &bad),
            Err(TransportError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            apply_adjoint(&op, &bad),
            Err(TransportError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn reflectivity_image_rejects_out_of_range() {
        let ok = ReflectivityImage::new(Array2::from_elem((2, 2), 0.5));
        assert!(ok.is_ok());
        let bad = ReflectivityImage::new(Array2::from_elem((2, 2), 1.5));
        assert!(matches!(
            bad,
            Err(TransportError::ReflectivityOutOfRange { .. })
        ));
    }
}
