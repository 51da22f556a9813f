//! Artifact readers and writers: float CSV grids, counts CSV with its
//! metadata sidecar, and binary PGM rendering.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::photoncount::{AcquisitionParams, CountMatrix, PhotonCountError};
use crate::Scalar;

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

/// Writes a float grid as CSV, one row per line, 9 significant digits.
pub fn write_float_csv(path: &Path, values: &Array2<Scalar>) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for row in values.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v:.8e}"));
            first = false;
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_float_csv(path: &Path) -> Result<Array2<Scalar>, std::io::Error> {
    let text = std::fs::read_to_string(path)?;
    let mut rows: Vec<Vec<Scalar>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<Scalar>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<Scalar>())
            .collect();
        let row = row.map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?;
        if let Some(prev) = rows.first() {
            if row.len() != prev.len() {
                return Err(bad(format!("line {}: ragged row", lineno + 1)));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad("empty CSV"));
    }
    let ncols = rows[0].len();
    let flat: Vec<Scalar> = rows.into_iter().flatten().collect();
    let nrows = flat.len() / ncols;
    Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| bad(e.to_string()))
}

/// Counts metadata sidecar; lives next to the counts CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct CountsMeta {
    pub pulses_per_point: u64,
    pub quantum_efficiency: Scalar,
    pub seed: Option<u64>,
    /// Background-rate CSV, relative to the sidecar.
    pub background_file: String,
}

/// Writes counts CSV + TOML sidecar + background CSV; `stem` names the
/// artifact set (`<stem>.csv`, `<stem>.meta.toml`, `<stem>.background.csv`).
pub fn write_counts(
    dir: &Path,
    stem: &str,
    counts: &CountMatrix<Scalar>,
) -> Result<(), std::io::Error> {
    let mut out = String::new();
    for row in counts.counts.rows() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(dir.join(format!("{stem}.csv")), out)?;
    let background_file = format!("{stem}.background.csv");
    write_float_csv(&dir.join(&background_file), &counts.params.background)?;
    let meta = CountsMeta {
        pulses_per_point: counts.params.pulses_per_point,
        quantum_efficiency: counts.params.quantum_efficiency,
        seed: counts.seed,
        background_file,
    };
    let text = toml::to_string(&meta).map_err(|e| bad(e.to_string()))?;
    std::fs::write(dir.join(format!("{stem}.meta.toml")), text)
}

pub fn read_counts(dir: &Path, stem: &str) -> Result<CountMatrix<Scalar>, std::io::Error> {
    let text = std::fs::read_to_string(dir.join(format!("{stem}.csv")))?;
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<u64>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<u64>())
            .collect();
        rows.push(row.map_err(|e| bad(format!("line {}: {e}", lineno + 1)))?);
    }
    if rows.is_empty() {
        return Err(bad("empty counts CSV"));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(bad("ragged counts CSV"));
    }
    let nrows = rows.len();
    let flat: Vec<u64> = rows.into_iter().flatten().collect();
    let counts = Array2::from_shape_vec((nrows, ncols), flat).map_err(|e| bad(e.to_string()))?;
    let meta_text = std::fs::read_to_string(dir.join(format!("{stem}.meta.toml")))?;
    let meta: CountsMeta = toml::from_str(&meta_text).map_err(|e| bad(e.to_string()))?;
    let background = read_float_csv(&dir.join(&meta.background_file))?;
    let params = AcquisitionParams::new(meta.pulses_per_point, meta.quantum_efficiency, background)
        .map_err(|e: PhotonCountError| bad(e.to_string()))?;
    Ok(CountMatrix {
        counts,
        params,
        seed: meta.seed,
    })
}

/// Binary PGM (P5), maxval 255, half-up rounding, values clamped to [0, 1].
pub fn write_pgm(path: &Path, image: &Array2<Scalar>) -> Result<(), std::io::Error> {
    if image.iter().any(|v| !v.is_finite()) {
        return Err(bad("image contains non-finite values"));
    }
    let (h, w) = image.dim();
    let mut file = std::fs::File::create(path)?;
    write!(file, "P5\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        .collect();
    file.write_all(&bytes)
}
