//! Data containers for weighted point-cloud time series and the grid
//! binning that turns raw particles into weighted bin centers.
//!
//! A [`Cytogram`] holds the particles observed during one time interval:
//! an `n_t x d` matrix of measurements plus one positive weight (biomass)
//! per particle. A dataset is a vector of cytograms aligned row-for-row
//! with a [`CovariateMatrix`].

use crate::error::{MoeError, Result};
use crate::num::{pairwise_sum, Real};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Weighted point cloud observed during one time interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cytogram<R> {
    /// 1-based time label shared with the covariate row.
    pub time: u64,
    /// `n_t x d` particle measurements.
    pub points: Array2<R>,
    /// `n_t` strictly positive particle weights.
    pub weights: Array1<R>,
}

impl<R: Real> Cytogram<R> {
    pub fn new(time: u64, points: Array2<R>, weights: Array1<R>) -> Result<Self> {
        if points.nrows() != weights.len() {
            return Err(MoeError::dim(format!(
                "cytogram t={time}: {} points but {} weights",
                points.nrows(),
                weights.len()
            )));
        }
        for (i, &w) in weights.iter().enumerate() {
            if !(w > R::zero()) || !w.is_finite() {
                return Err(MoeError::data(format!(
                    "cytogram t={time}, particle {i}: non-positive weight {w}"
                )));
            }
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(MoeError::data(format!(
                "cytogram t={time}: non-finite measurement"
            )));
        }
        Ok(Self { time, points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn total_weight(&self) -> R {
        pairwise_sum(self.weights.as_slice().expect("contiguous"))
    }
}

/// Per-time covariate rows, aligned with the cytogram vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateMatrix<R> {
    /// Strictly increasing time labels, one per row of `x`.
    pub times: Vec<u64>,
    /// `T x p` covariate values.
    pub x: Array2<R>,
}

impl<R: Real> CovariateMatrix<R> {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Row position of a time label, if present.
    pub fn position_of(&self, time: u64) -> Option<usize> {
        self.times.binary_search(&time).ok()
    }

    /// Keeps only the given row positions (in the order given).
    pub fn subset(&self, rows: &[usize]) -> CovariateMatrix<R> {
        let mut x = Array2::zeros((rows.len(), self.n_covariates()));
        let mut times = Vec::with_capacity(rows.len());
        for (i, &r) in rows.iter().enumerate() {
            x.row_mut(i).assign(&self.x.row(r));
            times.push(self.times[r]);
        }
        CovariateMatrix { times, x }
    }
}

/// Occupied bins of one cytogram after grid aggregation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BinnedCytogram<R> {
    pub time: u64,
    /// `m_t x d` bin-center coordinates of the occupied bins.
    pub centers: Array2<R>,
    /// `m_t` summed weights, all strictly positive.
    pub weights: Array1<R>,
}

impl<R: Real> BinnedCytogram<R> {
    pub fn len(&self) -> usize {
        self.centers.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.centers.ncols()
    }

    pub fn total_weight(&self) -> R {
        pairwise_sum(self.weights.as_slice().expect("contiguous"))
    }
}

/// Regular binning grid: `bins` equal-width cells per dimension on `[lo, hi]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec<R> {
    pub lo: Vec<R>,
    pub hi: Vec<R>,
    pub bins: usize,
}

impl<R: Real> GridSpec<R> {
    pub fn new(lo: Vec<R>, hi: Vec<R>, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(MoeError::config("grid bin count must be at least 1"));
        }
        if lo.len() != hi.len() {
            return Err(MoeError::dim("grid lo/hi length mismatch"));
        }
        for j in 0..lo.len() {
            if !(lo[j] < hi[j]) {
                return Err(MoeError::config(format!(
                    "grid dimension {j}: lo {} must be below hi {}",
                    lo[j], hi[j]
                )));
            }
        }
        Ok(Self { lo, hi, bins })
    }

    /// Grid covering the per-dimension data range, widened by 1% of the
    /// range on each side so train/test splits share comparable bounds.
    pub fn from_data(cytograms: &[Cytogram<R>], bins: usize) -> Result<Self> {
        let d = cytograms
            .iter()
            .find(|c| !c.is_empty())
            .map(|c| c.dim())
            .ok_or_else(|| MoeError::data("cannot derive a grid from an empty dataset"))?;
        let mut lo = vec![R::infinity(); d];
        let mut hi = vec![R::neg_infinity(); d];
        for c in cytograms {
            for row in c.points.rows() {
                for j in 0..d {
                    lo[j] = lo[j].min(row[j]);
                    hi[j] = hi[j].max(row[j]);
                }
            }
        }
        for j in 0..d {
            let width = hi[j] - lo[j];
            let pad = if width > R::zero() {
                width * R::of(0.01)
            } else {
                (lo[j].abs() + R::one()) * R::of(0.01)
            };
            lo[j] = lo[j] - pad;
            hi[j] = hi[j] + pad;
        }
        Self::new(lo, hi, bins)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn width(&self, j: usize) -> R {
        (self.hi[j] - self.lo[j]) / R::of(self.bins as f64)
    }

    /// Bin index per dimension, or `None` if the point lies outside the grid.
    /// A coordinate exactly at the upper bound maps to the last bin.
    fn index_of(&self, y: ndarray::ArrayView1<R>) -> Option<Vec<u32>> {
        let mut idx = Vec::with_capacity(self.dim());
        for j in 0..self.dim() {
            let v = y[j];
            if v < self.lo[j] || v > self.hi[j] {
                return None;
            }
            let raw = ((v - self.lo[j]) / self.width(j)).floor();
            let mut b = raw.to_usize().unwrap_or(0);
            if b >= self.bins {
                b = self.bins - 1;
            }
            idx.push(b as u32);
        }
        Some(idx)
    }

    fn center_of(&self, idx: &[u32]) -> Vec<R> {
        idx.iter()
            .enumerate()
            .map(|(j, &b)| self.lo[j] + (R::of(b as f64) + R::of(0.5)) * self.width(j))
            .collect()
    }
}

/// Aggregates a cytogram onto the grid. Returns the occupied bins plus the
/// number of particles dropped for lying outside the grid bounds.
pub fn bin_cytogram<R: Real>(c: &Cytogram<R>, grid: &GridSpec<R>) -> Result<(BinnedCytogram<R>, usize)> {
    if !c.is_empty() && c.dim() != grid.dim() {
        return Err(MoeError::dim(format!(
            "cytogram t={} has dimension {} but the grid has {}",
            c.time,
            c.dim(),
            grid.dim()
        )));
    }
    let mut members: BTreeMap<Vec<u32>, Vec<R>> = BTreeMap::new();
    let mut dropped = 0usize;
    for (i, row) in c.points.rows().into_iter().enumerate() {
        match grid.index_of(row) {
            Some(idx) => members.entry(idx).or_default().push(c.weights[i]),
            None => dropped += 1,
        }
    }
    let m = members.len();
    let d = grid.dim();
    let mut centers = Array2::zeros((m, d));
    let mut weights = Array1::zeros(m);
    for (b, (idx, ws)) in members.into_iter().enumerate() {
        let center = grid.center_of(&idx);
        for j in 0..d {
            centers[[b, j]] = center[j];
        }
        weights[b] = pairwise_sum(&ws);
    }
    Ok((
        BinnedCytogram {
            time: c.time,
            centers,
            weights,
        },
        dropped,
    ))
}

/// Bins every cytogram in a dataset. Returns the binned series and the
/// total count of dropped out-of-range particles.
pub fn bin_dataset<R: Real>(
    cytograms: &[Cytogram<R>],
    grid: &GridSpec<R>,
) -> Result<(Vec<BinnedCytogram<R>>, usize)> {
    let mut out = Vec::with_capacity(cytograms.len());
    let mut dropped = 0usize;
    for c in cytograms {
        let (b, n) = bin_cytogram(c, grid)?;
        dropped += n;
        out.push(b);
    }
    Ok((out, dropped))
}

fn parse_numeric(field: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| MoeError::data(format!("line {line}: non-numeric field '{field}' in column {col}")))?;
    if !v.is_finite() {
        return Err(MoeError::data(format!(
            "line {line}: non-finite value '{field}' in column {col}"
        )));
    }
    Ok(v)
}

fn parse_time(field: &str, line: usize) -> Result<u64> {
    field
        .trim()
        .parse()
        .map_err(|_| MoeError::data(format!("line {line}: invalid time index '{field}'")))
}

/// Reads a covariate CSV with header `time,x1,...,xp`. Time labels must be
/// strictly increasing; every value must be present and finite.
pub fn read_covariates<R: Real>(path: &Path) -> Result<CovariateMatrix<R>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || headers.get(0).map(str::trim) != Some("time") {
        return Err(MoeError::data(format!(
            "{}: expected header 'time,x1,...,xp'",
            path.display()
        )));
    }
    let p = headers.len() - 1;
    let col_names: Vec<String> = (1..headers.len()).map(|i| headers.get(i).unwrap().to_string()).collect();
    let mut times: Vec<u64> = Vec::new();
    let mut rows: Vec<R> = Vec::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = rec_idx + 2;
        if record.len() != p + 1 {
            return Err(MoeError::data(format!(
                "line {line}: expected {} fields, found {}",
                p + 1,
                record.len()
            )));
        }
        let t = parse_time(record.get(0).unwrap(), line)?;
        if let Some(&last) = times.last() {
            if t <= last {
                return Err(MoeError::data(format!(
                    "line {line}: time {t} not strictly increasing (previous {last})"
                )));
            }
        }
        times.push(t);
        for j in 0..p {
            rows.push(R::of(parse_numeric(record.get(j + 1).unwrap(), line, &col_names[j])?));
        }
    }
    if times.is_empty() {
        return Err(MoeError::data(format!("{}: no covariate rows", path.display())));
    }
    let x = Array2::from_shape_vec((times.len(), p), rows).expect("shape");
    Ok(CovariateMatrix { times, x })
}

/// Reads a particle CSV with header `time,y1,...,yd,biomass` and aligns it
/// against the covariate rows. Every observed time must have a covariate
/// row; covariate times with no particles yield empty cytograms so the two
/// containers stay index-aligned.
pub fn ingest_dataset<R: Real>(
    cytogram_path: &Path,
    covariate_path: &Path,
) -> Result<(Vec<Cytogram<R>>, CovariateMatrix<R>)> {
    let covariates = read_covariates::<R>(covariate_path)?;
    let mut reader = csv::Reader::from_path(cytogram_path)?;
    let headers = reader.headers()?.clone();
    let n_fields = headers.len();
    if n_fields < 3
        || headers.get(0).map(str::trim) != Some("time")
        || headers.get(n_fields - 1).map(str::trim) != Some("biomass")
    {
        return Err(MoeError::data(format!(
            "{}: expected header 'time,y1,...,yd,biomass'",
            cytogram_path.display()
        )));
    }
    let d = n_fields - 2;
    let mut per_time: BTreeMap<usize, (Vec<R>, Vec<R>)> = BTreeMap::new();
    for (rec_idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = rec_idx + 2;
        if record.len() != n_fields {
            return Err(MoeError::data(format!(
                "line {line}: expected {n_fields} fields, found {}",
                record.len()
            )));
        }
        let t = parse_time(record.get(0).unwrap(), line)?;
        let pos = covariates.position_of(t).ok_or_else(|| {
            MoeError::data(format!(
                "line {line}: missing covariate row for time {t}"
            ))
        })?;
        let w = parse_numeric(record.get(n_fields - 1).unwrap(), line, "biomass")?;
        if w <= 0.0 {
            return Err(MoeError::data(format!("line {line}: non-positive weight {w}")));
        }
        let entry = per_time.entry(pos).or_default();
        for j in 0..d {
            let col = format!("y{}", j + 1);
            entry.0.push(R::of(parse_numeric(record.get(j + 1).unwrap(), line, &col)?));
        }
        entry.1.push(R::of(w));
    }
    let mut cytograms = Vec::with_capacity(covariates.len());
    for pos in 0..covariates.len() {
        let time = covariates.times[pos];
        let (points, weights) = match per_time.remove(&pos) {
            Some((ys, ws)) => {
                let n = ws.len();
                (
                    Array2::from_shape_vec((n, d), ys).expect("shape"),
                    Array1::from_vec(ws),
                )
            }
            None => (Array2::zeros((0, d)), Array1::zeros(0)),
        };
        cytograms.push(Cytogram::new(time, points, weights)?);
    }
    Ok((cytograms, covariates))
}

/// Writes particles as `time,y1,...,yd,biomass`.
pub fn write_cytogram_csv<R: Real, W: Write>(out: W, cytograms: &[Cytogram<R>]) -> Result<()> {
    let d = cytograms.iter().find(|c| !c.is_empty()).map(|c| c.dim()).unwrap_or(1);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|j| format!("y{j}")));
    header.push("biomass".to_string());
    w.write_record(&header)?;
    for c in cytograms {
        for i in 0..c.len() {
            let mut rec = vec![c.time.to_string()];
            rec.extend((0..d).map(|j| format!("{}", c.points[[i, j]])));
            rec.push(format!("{}", c.weights[i]));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes occupied bins as `time,b1,...,bd,weight`.
pub fn write_binned_csv<R: Real, W: Write>(out: W, bins: &[BinnedCytogram<R>]) -> Result<()> {
    let d = bins.iter().find(|b| !b.is_empty()).map(|b| b.dim()).unwrap_or(1);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend((1..=d).map(|j| format!("b{j}")));
    header.push("weight".to_string());
    w.write_record(&header)?;
    for b in bins {
        for i in 0..b.len() {
            let mut rec = vec![b.time.to_string()];
            rec.extend((0..d).map(|j| format!("{}", b.centers[[i, j]])));
            rec.push(format!("{}", b.weights[i]));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
