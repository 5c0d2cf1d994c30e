//! Plain-text design files, PGM images and CSV histories.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::design::DesignField;
use crate::error::{Error, Result};
use crate::optimizer::IterationRecord;

/// Renders a design as text: a `N gamma volume_target` header line, then `N` rows from the top
/// of the domain down. Values use the shortest representation that parses back exactly.
pub fn design_to_string(field: &DesignField) -> String {
    let n = field.n();
    let mut s = format!("{} {} {}\n", n, field.gamma(), field.volume_target());
    for row in (0..n).rev() {
        let line: Vec<String> = (0..n).map(|col| field.get(row, col).to_string()).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_design(text: &str) -> Result<DesignField> {
    let bad = |m: String| Error::Parse {
        what: "design file".into(),
        message: m,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split_whitespace()
        .collect();
    if header.len() != 3 {
        return Err(bad(format!("header needs `N gamma volume`, got {} fields", header.len())));
    }
    let n: usize = header[0].parse().map_err(|e| bad(format!("N: {e}")))?;
    let gamma: f64 = header[1].parse().map_err(|e| bad(format!("gamma: {e}")))?;
    let volume: f64 = header[2].parse().map_err(|e| bad(format!("volume: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        if row.len() != n {
            return Err(bad(format!("row {} has {} values, expected {n}", i + 1, row.len())));
        }
        rows.push(row);
    }
    if rows.len() != n {
        return Err(bad(format!("{} rows, expected {n}", rows.len())));
    }
    let values = rows.into_iter().rev().flatten().collect();
    DesignField::new(n, values, gamma, volume)
}

pub fn write_design(field: &DesignField, path: &Path) -> Result<()> {
    std::fs::write(path, design_to_string(field)).map_err(|e| Error::io(path, e))
}

pub fn read_design(path: &Path) -> Result<DesignField> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_design(&text)
}

/// Gray level of a conductivity: `round(255 (k − γ)/(1 − γ))`, halves rounded up.
pub fn pixel_value(k: f64, gamma: f64) -> u8 {
    let t = (255.0 * (k - gamma) / (1.0 - gamma)).clamp(0.0, 255.0);
    // values a few ulps below a half are halves that lost precision in the division
    (t + 0.5 + 1e-9).floor().min(255.0) as u8
}

/// Grayscale raster with row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    /// Builds an image from bottom-up row-major cell values, replicating each cell `scale` times.
    fn from_cells(n: usize, scale: usize, value: impl Fn(usize, usize) -> u8) -> Self {
        let side = n * scale;
        let mut pixels = Vec::with_capacity(side * side);
        for y in 0..side {
            let row = n - 1 - y / scale;
            for x in 0..side {
                pixels.push(value(row, x / scale));
            }
        }
        Image {
            width: side,
            height: side,
            pixels,
        }
    }

    pub fn to_pgm(&self, binary: bool) -> Vec<u8> {
        if binary {
            let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
            out.extend_from_slice(&self.pixels);
            out
        } else {
            let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
            for row in self.pixels.chunks(self.width) {
                let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
            out.into_bytes()
        }
    }

    pub fn write_pgm(&self, path: &Path, binary: bool) -> Result<()> {
        std::fs::write(path, self.to_pgm(binary)).map_err(|e| Error::io(path, e))
    }
}

/// One pixel per design cell (times `scale`), black = γ, white = 1.
pub fn design_image(field: &DesignField, scale: usize) -> Image {
    let g = field.gamma();
    Image::from_cells(field.n(), scale.max(1), |r, c| pixel_value(field.get(r, c), g))
}

/// Per-element `η_T²` on a log scale over its positive range; zero indicators map to black.
pub fn heatmap_image(n: usize, eta_sq: &[f64], scale: usize) -> Image {
    let logs: Vec<f64> = eta_sq.iter().filter(|v| **v > 0.0).map(|v| v.log10()).collect();
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Image::from_cells(n, scale.max(1), |r, c| {
        let v = eta_sq[r * n + c];
        if v <= 0.0 {
            0
        } else if hi > lo {
            let t = (v.log10() - lo) / (hi - lo);
            (255.0 * t + 0.5).floor() as u8
        } else {
            255
        }
    })
}

/// `row, col, eta_sq` per element, rows counted from the bottom.
pub fn write_indicator_csv(n: usize, eta_sq: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["row", "col", "eta_sq"]).map_err(|e| csv_error(path, e))?;
    for (e, v) in eta_sq.iter().enumerate() {
        w.write_record(&[(e / n).to_string(), (e % n).to_string(), v.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            what: path.display().to_string(),
            message: format!("{other:?}"),
        },
    }
}

/// Streams iteration records to CSV, flushing each row so a failed run keeps its history.
pub struct HistoryWriter {
    path: std::path::PathBuf,
    inner: csv::Writer<File>,
}

impl HistoryWriter {
    pub const COLUMNS: [&'static str; 8] = ["iter", "phi_h", "e_apost", "phi_c", "volume", "qm", "change", "cg_iters"];

    pub fn create(path: &Path) -> Result<Self> {
        let inner = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        Ok(HistoryWriter {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn push(&mut self, record: &IterationRecord) -> Result<()> {
        self.inner.serialize(record).map_err(|e| csv_error(&self.path, e))?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<IterationRecord>, _>>()
        .map_err(|e| csv_error(path, e))
}

pub fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, value).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        what: path.display().to_string(),
        message: e.to_string(),
    })
}
