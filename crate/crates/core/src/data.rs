//! Datasets, treatment-group views and simplex weight vectors.
//!
//! Covariates are stored dense and row-major. A [`Dataset`] is validated once
//! at construction and never mutated afterwards, so it can be shared freely
//! between replication workers.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a weight vector before renormalization.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<f64>,
    n: usize,
    d: usize,
    t: Vec<bool>,
    y: Option<Vec<f64>>,
    names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from a row-major `n × d` covariate buffer.
    pub fn new(x: Vec<f64>, d: usize, t: Vec<bool>, y: Option<Vec<f64>>) -> Result<Self> {
        let names = (1..=d).map(|j| format!("x{j}")).collect();
        Self::with_names(x, d, t, y, names)
    }

    pub fn with_names(x: Vec<f64>, d: usize, t: Vec<bool>, y: Option<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("at least one covariate is required".into()));
        }
        if x.len() % d != 0 {
            return Err(Error::InvalidData(format!(
                "covariate buffer of length {} is not a multiple of d = {d}",
                x.len()
            )));
        }
        let n = x.len() / d;
        if n < 2 {
            return Err(Error::InvalidData(format!("need at least 2 units, got {n}")));
        }
        if t.len() != n {
            return Err(Error::DimensionMismatch {
                what: "treatment vector",
                expected: n,
                got: t.len(),
            });
        }
        if names.len() != d {
            return Err(Error::DimensionMismatch {
                what: "covariate names",
                expected: d,
                got: names.len(),
            });
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite covariate at unit {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if !t.iter().any(|&ti| ti) {
            return Err(Error::DegenerateTreatment("control"));
        }
        if t.iter().all(|&ti| ti) {
            return Err(Error::DegenerateTreatment("treated"));
        }
        if let Some(y) = &y {
            if y.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "outcome vector",
                    expected: n,
                    got: y.len(),
                });
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidData(format!("non-finite outcome at unit {i}")));
            }
        }
        Ok(Dataset { x, n, d, t, y, names })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn treatment(&self) -> &[bool] {
        &self.t
    }

    pub fn is_treated(&self, i: usize) -> bool {
        self.t[i]
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.x[i * self.d + j]).collect()
    }

    pub fn groups(&self) -> GroupView {
        split_groups(self)
    }

    /// Replaces the outcome vector, keeping covariates and treatment.
    pub fn with_outcome(mut self, y: Option<Vec<f64>>) -> Result<Self> {
        if let Some(v) = &y {
            if v.len() != self.n {
                return Err(Error::DimensionMismatch {
                    what: "outcome vector",
                    expected: self.n,
                    got: v.len(),
                });
            }
        }
        self.y = y;
        Ok(self)
    }

    /// Copy with every covariate column z-scored. Constant columns are only
    /// centered. Outcomes are left untouched.
    pub fn standardized(&self) -> Dataset {
        let mut x = self.x.clone();
        let n = self.n as f64;
        for j in 0..self.d {
            let mean = (0..self.n).map(|i| self.x[i * self.d + j]).sum::<f64>() / n;
            let var = (0..self.n)
                .map(|i| (self.x[i * self.d + j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            for i in 0..self.n {
                x[i * self.d + j] = (x[i * self.d + j] - mean) * scale;
            }
        }
        Dataset { x, ..self.clone() }
    }
}

/// Which treatment group a weight vector lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Control,
    Treated,
}

impl Side {
    pub fn contains(self, treated: bool) -> bool {
        match self {
            Side::Control => !treated,
            Side::Treated => treated,
        }
    }

    pub fn other(self) -> Side {
        match self {
            Side::Control => Side::Treated,
            Side::Treated => Side::Control,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Control => "control",
            Side::Treated => "treated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupView {
    pub control_idx: Vec<usize>,
    pub treated_idx: Vec<usize>,
}

impl GroupView {
    pub fn n(&self) -> usize {
        self.control_idx.len() + self.treated_idx.len()
    }

    pub fn n0(&self) -> usize {
        self.control_idx.len()
    }

    pub fn n1(&self) -> usize {
        self.treated_idx.len()
    }

    pub fn indices(&self, side: Side) -> &[usize] {
        match side {
            Side::Control => &self.control_idx,
            Side::Treated => &self.treated_idx,
        }
    }
}

/// Partitions unit indices by treatment, ascending within each group.
pub fn split_groups(ds: &Dataset) -> GroupView {
    let (treated_idx, control_idx): (Vec<usize>, Vec<usize>) = (0..ds.n()).partition(|&i| ds.is_treated(i));
    GroupView {
        control_idx,
        treated_idx,
    }
}

/// Dense length-n weights supported on a single treatment group and summing
/// to one there.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    w: Vec<f64>,
    side: Side,
}

impl WeightVector {
    /// Validates a dense weight vector against `treatment`. The sum must be
    /// within [`SIMPLEX_TOL`] of one; the stored vector is renormalized.
    pub fn try_new(w: Vec<f64>, side: Side, treatment: &[bool]) -> Result<Self> {
        if w.len() != treatment.len() {
            return Err(Error::DimensionMismatch {
                what: "weight vector",
                expected: treatment.len(),
                got: w.len(),
            });
        }
        let mut sum = 0.0;
        for (i, (&wi, &ti)) in w.iter().zip(treatment).enumerate() {
            if !wi.is_finite() || wi < 0.0 {
                return Err(Error::InvalidWeights(format!("weight {wi} at unit {i}")));
            }
            if !side.contains(ti) && wi != 0.0 {
                return Err(Error::InvalidWeights(format!(
                    "unit {i} is outside the {} group but has weight {wi}",
                    side.as_str()
                )));
            }
            sum += wi;
        }
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self::renormalized(w, sum, side))
    }

    /// Scatters weights given over the units of `side` (in ascending index
    /// order) into a dense vector and renormalizes them to sum to one.
    pub fn from_group(gv: &GroupView, side: Side, local: &[f64]) -> Result<Self> {
        let idx = gv.indices(side);
        if local.len() != idx.len() {
            return Err(Error::DimensionMismatch {
                what: "group weights",
                expected: idx.len(),
                got: local.len(),
            });
        }
        if let Some(bad) = local.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {bad}")));
        }
        let sum: f64 = local.iter().sum();
        if sum <= 0.0 {
            return Err(Error::InvalidWeights("weights sum to zero".into()));
        }
        let mut w = vec![0.0; gv.n()];
        for (&i, &v) in idx.iter().zip(local) {
            w[i] = v;
        }
        Ok(Self::renormalized(w, sum, side))
    }

    pub fn uniform(gv: &GroupView, side: Side) -> Self {
        let m = gv.indices(side).len();
        let mut w = vec![0.0; gv.n()];
        for &i in gv.indices(side) {
            w[i] = 1.0 / m as f64;
        }
        WeightVector { w, side }
    }

    fn renormalized(mut w: Vec<f64>, sum: f64, side: Side) -> Self {
        if sum != 1.0 {
            w.iter_mut().for_each(|v| *v /= sum);
        }
        WeightVector { w, side }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Weights restricted to the tagged group, ascending unit order.
    pub fn group_weights(&self, gv: &GroupView) -> Vec<f64> {
        gv.indices(self.side).iter().map(|&i| self.w[i]).collect()
    }

    pub fn max_weight(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }
}

/// Ground truth carried alongside a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOracle {
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub pi: Vec<f64>,
    pub true_att: f64,
    pub true_ate: f64,
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub treatment: String,
    /// Outcome column; a missing column yields a dataset without outcomes.
    pub outcome: Option<String>,
    /// Covariate columns in order. `None` takes every other column.
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            treatment: "t".into(),
            outcome: Some("y".into()),
            covariates: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema).map_err(|e| match e {
        Error::EmptyFile(_) => Error::EmptyFile(path.to_path_buf()),
        other => other,
    })
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::EmptyFile(Default::default()));
    }
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let t_col = find(&schema.treatment)?;
    let y_col = schema
        .outcome
        .as_deref()
        .and_then(|name| headers.iter().position(|h| h == name));
    let x_cols: Vec<usize> = match &schema.covariates {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&j| j != t_col && Some(j) != y_col).collect(),
    };
    if x_cols.is_empty() {
        return Err(Error::InvalidData("no covariate columns".into()));
    }

    let mut x = Vec::new();
    let mut t = Vec::new();
    let mut y = y_col.map(|_| Vec::new());
    for (row_no, record) in rdr.records().enumerate() {
        let record = record?;
        // header is line 1
        let line = row_no + 2;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let number = |j: usize| -> Result<f64> {
            let raw = cell(j);
            raw.parse::<f64>().map_err(|_| Error::NonNumeric {
                line,
                column: headers[j].clone(),
                value: raw.to_owned(),
            })
        };
        let treated = match cell(t_col) {
            "1" | "1.0" => true,
            "0" | "0.0" => false,
            other => {
                return Err(Error::InvalidTreatment {
                    line,
                    value: other.to_owned(),
                })
            }
        };
        t.push(treated);
        for &j in &x_cols {
            x.push(number(j)?);
        }
        if let (Some(ys), Some(j)) = (y.as_mut(), y_col) {
            ys.push(number(j)?);
        }
    }
    if t.is_empty() {
        return Err(Error::EmptyFile(Default::default()));
    }
    let names = x_cols.iter().map(|&j| headers[j].clone()).collect();
    Dataset::with_names(x, x_cols.len(), t, y, names)
}

/// Writes `t`, `y` (when present) and the covariate columns. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_owned()];
    if ds.outcome().is_some() {
        header.push("y".to_owned());
    }
    header.extend(ds.covariate_names().iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec = vec![if ds.is_treated(i) { "1" } else { "0" }.to_owned()];
        if let Some(y) = ds.outcome() {
            rec.push(y[i].to_string());
        }
        rec.extend(ds.row(i).iter().map(f64::to_string));
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

/// Writes `m0`, `m1` and `pi` per unit.
pub fn save_oracle_csv(oracle: &SimOracle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["m0", "m1", "pi"])?;
    for i in 0..oracle.m0.len() {
        wtr.write_record([
            oracle.m0[i].to_string(),
            oracle.m1[i].to_string(),
            oracle.pi[i].to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an oracle sidecar; the population effects are not stored in it.
pub fn load_oracle_csv(path: impl AsRef<Path>, true_att: f64, true_ate: f64) -> Result<SimOracle> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let (mut m0, mut m1, mut pi) = (Vec::new(), Vec::new(), Vec::new());
    for (row_no, rec) in rdr.deserialize::<(f64, f64, f64)>().enumerate() {
        let (a, b, p) = rec.map_err(|e| Error::InvalidData(format!("oracle line {}: {e}", row_no + 2)))?;
        m0.push(a);
        m1.push(b);
        pi.push(p);
    }
    Ok(SimOracle {
        m0,
        m1,
        pi,
        true_att,
        true_ate,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightRecord {
    unit_index: usize,
    weight: f64,
    group: Side,
}

/// Writes one row per unit: its weight within its own group. Treated units
/// get `treated` when given and `1/n1` otherwise.
pub fn save_weights_csv(
    ds: &Dataset,
    control: &WeightVector,
    treated: Option<&WeightVector>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let gv = ds.groups();
    let uniform;
    let treated = match treated {
        Some(w) => w,
        None => {
            uniform = WeightVector::uniform(&gv, Side::Treated);
            &uniform
        }
    };
    let mut wtr = csv::Writer::from_path(path)?;
    for i in 0..ds.n() {
        let (w, group) = if ds.is_treated(i) {
            (treated.as_slice()[i], Side::Treated)
        } else {
            (control.as_slice()[i], Side::Control)
        };
        wtr.serialize(WeightRecord {
            unit_index: i,
            weight: w,
            group,
        })?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a weights file written by [`save_weights_csv`] back into
/// `(control, treated)` weight vectors for `ds`.
pub fn load_weights_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(WeightVector, WeightVector)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let mut w0 = vec![0.0; ds.n()];
    let mut w1 = vec![0.0; ds.n()];
    let mut seen = vec![false; ds.n()];
    for rec in rdr.deserialize::<WeightRecord>() {
        let rec = rec?;
        if rec.unit_index >= ds.n() {
            return Err(Error::DimensionMismatch {
                what: "weights file unit index",
                expected: ds.n(),
                got: rec.unit_index,
            });
        }
        if rec.group.contains(ds.is_treated(rec.unit_index)) {
            match rec.group {
                Side::Control => w0[rec.unit_index] = rec.weight,
                Side::Treated => w1[rec.unit_index] = rec.weight,
            }
        } else {
            return Err(Error::InvalidWeights(format!(
                "unit {} is tagged {} but the dataset disagrees",
                rec.unit_index,
                rec.group.as_str()
            )));
        }
        seen[rec.unit_index] = true;
    }
    let count = seen.iter().filter(|&&s| s).count();
    if count != ds.n() {
        return Err(Error::DimensionMismatch {
            what: "weights file rows",
            expected: ds.n(),
            got: count,
        });
    }
    Ok((
        WeightVector::try_new(w0, Side::Control, ds.treatment())?,
        WeightVector::try_new(w1, Side::Treated, ds.treatment())?,
    ))
}
