//! Datasets: seeded synthetic generators plus IDX and CSV loaders.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IDX_UBYTE: u8 = 0x08;
const CENTER_RETRIES: usize = 10_000;

/// Layout of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Vector(usize),
    Image { height: usize, width: usize },
}

impl Geometry {
    pub fn dim(self) -> usize {
        match self {
            Geometry::Vector(d) => d,
            Geometry::Image { height, width } => height * width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Matrix,
    pub labels: Option<Vec<usize>>,
    pub geometry: Geometry,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        samples: Matrix,
        labels: Option<Vec<usize>>,
        geometry: Geometry,
    ) -> Result<Self> {
        if geometry.dim() != samples.cols() {
            return Err(Error::contract(format!(
                "geometry {geometry:?} declares {} values per sample, data has {}",
                geometry.dim(),
                samples.cols()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::contract(format!(
                    "{} labels for {} samples",
                    l.len(),
                    samples.rows()
                )));
            }
            if distinct(l) < 2 {
                return Err(Error::contract(
                    "labels must contain at least 2 distinct values",
                ));
            }
        }
        if !samples.is_finite() {
            return Err(Error::contract("samples contain non-finite values"));
        }
        Ok(Dataset {
            name: name.into(),
            samples,
            labels,
            geometry,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn class_count(&self) -> Option<usize> {
        self.labels.as_deref().map(distinct)
    }

    /// Shifts every column to zero mean and scales it to unit (population)
    /// variance. Constant columns are only centered.
    pub fn standardize(&mut self) {
        let (n, d) = self.samples.shape();
        if n == 0 {
            return;
        }
        for c in 0..d {
            let col = self.samples.column(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in 0..n {
                let v = self.samples.get(r, c);
                self.samples.set(r, c, (v - mean) / sd);
            }
        }
    }
}

fn distinct(labels: &[usize]) -> usize {
    let mut v = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v.len()
}

/// `k` isotropic Gaussian clusters of `n_per` points each. Centers are drawn
/// uniformly from `[-separation, separation]^dim` and rejected until every
/// pair is at least `separation` apart. Rows are grouped by cluster.
pub fn gaussian_blobs(
    k: usize,
    n_per: usize,
    dim: usize,
    separation: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if k < 2 {
        return Err(Error::Generation(format!("need at least 2 blobs, got {k}")));
    }
    if n_per == 0 || dim == 0 {
        return Err(Error::Generation(
            "blobs need at least one point and one dimension".into(),
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Generation(
            "separation and sigma must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut tries = 0;
    while centers.len() < k {
        tries += 1;
        if tries > CENTER_RETRIES {
            return Err(Error::Generation(format!(
                "could not place {k} centers {separation} apart in {dim} dimensions"
            )));
        }
        let c: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-separation..=separation))
            .collect();
        let far = centers.iter().all(|o| {
            let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
            d2.sqrt() >= separation
        });
        if far {
            centers.push(c);
        }
    }
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let mut data = Vec::with_capacity(k * n_per * dim);
    let mut labels = Vec::with_capacity(k * n_per);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..n_per {
            data.extend(c.iter().map(|&m| m + noise.sample(&mut rng)));
            labels.push(label);
        }
    }
    Dataset::new(
        format!("blobs-k{k}-d{dim}"),
        Matrix::from_vec(k * n_per, dim, data)?,
        Some(labels),
        Geometry::Vector(dim),
    )
}

/// Two interleaved unit half-circles with Gaussian noise.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 4 || !n.is_multiple_of(2) {
        return Err(Error::Generation(format!(
            "two_moons needs an even n >= 4, got {n}"
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Generation("noise must be non-negative".into()));
    }
    let half = n / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("positive noise"));
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for moon in 0..2 {
        for i in 0..half {
            let t = std::f64::consts::PI * i as f64 / (half - 1) as f64;
            let (x, y) = if moon == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            let (dx, dy) = match &normal {
                Some(nd) => (nd.sample(&mut rng), nd.sample(&mut rng)),
                None => (0.0, 0.0),
            };
            data.push(x + dx);
            data.push(y + dy);
            labels.push(moon);
        }
    }
    Dataset::new(
        "two-moons",
        Matrix::from_vec(n, 2, data)?,
        Some(labels),
        Geometry::Vector(2),
    )
}

fn idx_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        format: "IDX",
        offset,
        message: message.into(),
    }
}

/// Decoded IDX unsigned-byte payload.
struct IdxArray {
    dims: Vec<usize>,
    values: Vec<u8>,
}

fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(idx_err(
            bytes.len() as u64,
            "file shorter than the 4-byte magic",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err(0, "magic must start with two zero bytes"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(idx_err(
            2,
            format!("unsupported element type 0x{:02x}", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(idx_err(3, "zero dimensions"));
    }
    let mut dims = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let at = 4 + 4 * i;
        let Some(raw) = bytes.get(at..at + 4) else {
            return Err(idx_err(
                bytes.len() as u64,
                format!("truncated in dimension {i}"),
            ));
        };
        dims.push(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize);
    }
    let header = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| idx_err(4, "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(idx_err(
            bytes.len() as u64,
            format!(
                "payload has {} bytes, header promises {count}",
                payload.len()
            ),
        ));
    }
    if payload.len() > count {
        return Err(idx_err(
            (header + count) as u64,
            "trailing bytes after payload",
        ));
    }
    Ok(IdxArray {
        dims,
        values: payload.to_vec(),
    })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut buf)?;
    Ok(buf)
}

/// Loads an unsigned-byte IDX image file (`n × height × width`) and an
/// optional label file (`n`). Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let img = parse_idx(&read_all(images)?)?;
    let (n, geometry) = match img.dims.as_slice() {
        &[n, h, w] => (
            n,
            Geometry::Image {
                height: h,
                width: w,
            },
        ),
        &[n, d] => (n, Geometry::Vector(d)),
        other => {
            return Err(idx_err(
                3,
                format!("expected 2 or 3 dimensions, found {}", other.len()),
            ))
        }
    };
    let data = img.values.iter().map(|&b| b as f64 / 255.0).collect();
    let samples = Matrix::from_vec(n, geometry.dim(), data)?;
    let labels = match labels {
        Some(p) => {
            let l = parse_idx(&read_all(p)?)?;
            if l.dims.len() != 1 {
                return Err(idx_err(3, "label file must be one-dimensional"));
            }
            if l.dims[0] != n {
                return Err(idx_err(4, format!("{} labels for {n} images", l.dims[0])));
            }
            Some(l.values.iter().map(|&b| b as usize).collect())
        }
        None => None,
    };
    let name = images
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Dataset::new(name, samples, labels, geometry)
}

/// Writes an unsigned-byte IDX file with the given dimensions.
pub fn write_idx(path: &Path, dims: &[usize], values: &[u8]) -> Result<()> {
    let count: usize = dims.iter().product();
    if count != values.len() || dims.is_empty() || dims.len() > 255 {
        return Err(Error::contract(format!(
            "IDX dims {dims:?} do not match {} values",
            values.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&[0, 0, IDX_UBYTE, dims.len() as u8])?;
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::contract("IDX dimension exceeds u32"))?;
        w.write_all(&d.to_be_bytes())?;
    }
    w.write_all(values)?;
    w.flush()?;
    Ok(())
}

fn is_numeric_record(rec: &csv::StringRecord) -> bool {
    rec.iter().all(|c| c.trim().parse::<f64>().is_ok())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?))
}

fn csv_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_parse_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_label(cell: &str, line: u64) -> Result<usize> {
    cell.parse::<usize>().map_err(|_| Error::Parse {
        line,
        message: format!("label `{cell}` is not a non-negative integer"),
    })
}

/// Loads a rectangular numeric CSV. A first row containing any non-numeric
/// cell is taken as a header and skipped. When `label_column` is given, that
/// column is split off as integer labels.
pub fn load_csv(path: &Path, label_column: Option<usize>) -> Result<Dataset> {
    let mut reader = csv_reader(path)?;
    let mut width = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_parse_err)?;
        let line = csv_line(&rec);
        if i == 0 && !is_numeric_record(&rec) {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} fields, found {}", rec.len()),
            });
        }
        if let Some(lc) = label_column {
            if lc >= rec.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("label column {lc} out of range for {} fields", rec.len()),
                });
            }
        }
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == label_column {
                labels.push(parse_label(cell, line)?);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("field {c} (`{cell}`) is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("field {c} is not finite"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "no data rows".into(),
        });
    }
    let d = width.unwrap_or(0) - usize::from(label_column.is_some());
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Dataset::new(
        name,
        Matrix::from_vec(rows, d, data)?,
        label_column.map(|_| labels),
        Geometry::Vector(d),
    )
}

/// Writes samples as CSV with an `x0..x{d-1}` header, followed by a `label`
/// column when labels are present. Values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..dataset.dim()).map(|c| format!("x{c}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_io)?;
    for r in 0..dataset.len() {
        let mut rec: Vec<String> = dataset
            .samples
            .row(r)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        if let Some(l) = &dataset.labels {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Reads a label CSV: either `sample_id,label` rows or a single label
/// column, with an optional header row.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let mut reader = csv_reader(path)?;
    let mut out = Vec::new();
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_parse_err)?;
        let line = csv_line(&rec);
        if i == 0 && !is_numeric_record(&rec) {
            continue;
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected || !(1..=2).contains(&rec.len()) {
            return Err(Error::Parse {
                line,
                message: format!("expected 1 or 2 consistent fields, found {}", rec.len()),
            });
        }
        out.push(parse_label(&rec[rec.len() - 1], line)?);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} contains no labels", path.display()),
        });
    }
    Ok(out)
}

/// Writes `sample_id,<column>` rows.
pub fn write_labels<W: Write>(labels: &[usize], column: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", column]).map_err(csv_io)?;
    for (i, l) in labels.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}
