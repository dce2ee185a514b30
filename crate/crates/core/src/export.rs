//! CSV and PNG dumps of factor matrices and masks.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};

/// Writes `m` row by row, optionally preceded by a header of column names.
/// Values use the shortest representation that reads back exactly.
pub fn write_matrix_csv<W: Write>(out: W, m: &Array2<f64>, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if let Some(h) = header {
        if h.len() != m.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{} header names for {} columns",
                h.len(),
                m.ncols()
            )));
        }
        w.write_record(h)?;
    }
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_matrix_csv(path: impl AsRef<Path>, m: &Array2<f64>, header: Option<&[String]>) -> Result<()> {
    write_matrix_csv(BufWriter::new(File::create(path)?), m, header)
}

/// Reads a numeric CSV; when `header` is set the first record is returned as
/// column names.
pub fn read_matrix_csv<R: Read>(input: R, header: bool) -> Result<(Option<Vec<String>>, Array2<f64>)> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(header)
        .from_reader(input);
    let names = if header {
        Some(r.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec?;
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(Error::ShapeMismatch(format!("row {rows} has {} fields", rec.len())));
        }
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| {
                Error::InvalidArgument(format!("row {rows}: cannot parse {field:?}: {e}"))
            })?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((names, m))
}

pub fn load_matrix_csv(path: impl AsRef<Path>, header: bool) -> Result<(Option<Vec<String>>, Array2<f64>)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_matrix_csv(File::open(path)?, header)
}

/// Grey-scale image with one pixel per entry, row 0 at the bottom, scaled so
/// that `max` maps to white.
fn to_image(m: &Array2<f64>, max: f64) -> GrayImage {
    let (rows, cols) = m.dim();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    GrayImage::from_fn(cols as u32, rows as u32, |x, y| {
        let v = m[[rows - 1 - y as usize, x as usize]];
        Luma([(v * scale).round().clamp(0.0, 255.0) as u8])
    })
}

/// Saves a mask (values in [0, 1]) with frequency increasing upwards.
pub fn save_mask_png(path: impl AsRef<Path>, mask: &Array2<f64>) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::ShapeMismatch("empty mask".into()));
    }
    to_image(mask, 1.0).save(path)?;
    Ok(())
}

/// Saves a non-negative matrix scaled by its maximum.
pub fn save_heatmap_png(path: impl AsRef<Path>, m: &Array2<f64>) -> Result<()> {
    if m.is_empty() {
        return Err(Error::ShapeMismatch("empty matrix".into()));
    }
    let max = m.iter().cloned().fold(0.0, f64::max);
    to_image(m, max).save(path)?;
    Ok(())
}
