//! Builtin hidden-wall reflectivity patterns and image-file loading.

use std::path::Path;

use ndarray::Array2;

use crate::Scalar;

/// Constant-reflectivity pattern.
pub fn uniform(n: usize, value: Scalar) -> Array2<Scalar> {
    Array2::from_elem((n, n), value.clamp(0.0, 1.0))
}

/// Geometric stand-in for a human silhouette: head disk, torso block, two
/// legs. Bright figure (0.9) on a dark wall (0.0).
pub fn man_shape(n: usize) -> Array2<Scalar> {
    let mut img = Array2::zeros((n, n));
    let nf = n as f64;
    // Coordinates in [0, 1]^2 with u along columns, v along rows (v = 0 at
    // the top of the image).
    let mut paint = |pred: &dyn Fn(f64, f64) -> bool| {
        for i in 0..n {
            for j in 0..n {
                let v = (i as f64 + 0.5) / nf;
                let u = (j as f64 + 0.5) / nf;
                if pred(u, v) {
                    img[[i, j]] = 0.9;
                }
            }
        }
    };
    // Head: disk centered near the top.
    paint(&|u, v| {
        let du = u - 0.5;
        let dv = v - 0.18;
        du * du + dv * dv <= 0.10 * 0.10
    });
    // Torso with arms: wide block.
    paint(&|u, v| (0.30..=0.70).contains(&u) && (0.30..=0.60).contains(&v));
    // Legs: two columns.
    paint(&|u, v| (0.34..=0.46).contains(&u) && (0.60..=0.92).contains(&v));
    paint(&|u, v| (0.54..=0.66).contains(&u) && (0.60..=0.92).contains(&v));
    img
}

/// Rows the two-bar pattern occupies: the central half of the image.
pub fn two_bar_rows(n: usize) -> std::ops::Range<usize> {
    n / 4..(3 * n) / 4
}

/// Two vertical bars of width `bar_width` meters whose inner edges are
/// `separation` meters apart, centered on a wall of width `extent` meters.
/// Bars span the central half of the rows.
pub fn two_bar(
    n: usize,
    extent: Scalar,
    separation: Scalar,
    bar_width: Scalar,
) -> Result<Array2<Scalar>, String> {
    if separation <= 0.0 || bar_width <= 0.0 {
        return Err("separation and bar width must be positive".into());
    }
    let total = separation + 2.0 * bar_width;
    if total >= extent {
        return Err(format!(
            "bars do not fit: separation {separation} + widths {} >= wall extent {extent}",
            2.0 * bar_width
        ));
    }
    let mut img = Array2::zeros((n, n));
    let rows = two_bar_rows(n);
    // Horizontal coordinate of a pixel-column center, in meters from the
    // wall's left edge.
    let left_bar = (extent - total) / 2.0;
    let right_bar = left_bar + bar_width + separation;
    for j in 0..n {
        let u = (j as f64 + 0.5) / n as f64 * extent;
        let in_left = u >= left_bar && u < left_bar + bar_width;
        let in_right = u >= right_bar && u < right_bar + bar_width;
        if in_left || in_right {
            for i in rows.clone() {
                img[[i, j]] = 1.0;
            }
        }
    }
    Ok(img)
}

/// Loads a truth image from a CSV of floats or a binary PGM (P5); values are
/// clamped to [0, 1] (PGM samples are divided by maxval).
pub fn load_image(path: &Path) -> Result<Array2<Scalar>, std::io::Error> {
    let is_pgm = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("pgm"))
        .unwrap_or(false);
    let img = if is_pgm {
        read_pgm(path)?
    } else {
        super::io::read_float_csv(path)?
    };
    Ok(img.mapv(|v| v.clamp(0.0, 1.0)))
}

fn bad(msg: impl Into<String>) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.into())
}

fn read_pgm(path: &Path) -> Result<Array2<Scalar>, std::io::Error> {
    let bytes = std::fs::read(path)?;
    // Header: magic, width, height, maxval as whitespace-separated tokens
    // (comment lines allowed), then a single whitespace byte and the payload.
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos == start {
            return Err(bad("truncated PGM header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?.to_string());
    }
    pos += 1; // single whitespace after maxval
    if tokens[0] != "P5" {
        return Err(bad(format!("unsupported PGM magic {:?}", tokens[0])));
    }
    let width: usize = tokens[1].parse().map_err(|_| bad("bad PGM width"))?;
    let height: usize = tokens[2].parse().map_err(|_| bad("bad PGM height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad PGM maxval"))?;
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM supported"));
    }
    let payload = &bytes[pos..];
    if payload.len() < width * height {
        return Err(bad("PGM payload shorter than width * height"));
    }
    let mut img = Array2::zeros((height, width));
    for i in 0..height {
        for j in 0..width {
            img[[i, j]] = payload[i * width + j] as Scalar / maxval as Scalar;
        }
    }
    Ok(img)
}
