//! Datasets on disk, JSON artifacts and dataset generators.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::activations::PiecewiseLinear;
use crate::cells::CellSignature;
use crate::error::{Error, Result};
use crate::linear_baseline::LinearFit;
use crate::network::{check_assumptions, matrix_to_rows, Dataset, LossKind};
use crate::separation::SeparationResult;

const GENERATOR_RETRIES: u64 = 16;

/// Reads one sample per row. Label columns are those whose header starts with
/// `y`, or the last `d_y` columns when `d_y` is given.
pub fn read_dataset_csv(path: &Path, d_y: Option<usize>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let is_label: Vec<bool> = match d_y {
        Some(k) if k <= headers.len() => {
            (0..headers.len()).map(|c| c >= headers.len() - k).collect()
        }
        Some(k) => {
            return Err(Error::Parse(format!(
                "{k} label columns requested, file has {}",
                headers.len()
            )))
        }
        None => headers.iter().map(|h| h.starts_with('y')).collect(),
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let mut n = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}, column {}: {field:?} is not a number",
                    line + 2,
                    c + 1
                ))
            })?;
            if is_label[c] {
                ys.push(v)
            } else {
                xs.push(v)
            }
        }
        n += 1;
    }
    let dy = is_label.iter().filter(|&&l| l).count();
    let dx = headers.len() - dy;
    if n == 0 || dx == 0 || dy == 0 {
        return Err(Error::Parse(format!(
            "need samples, inputs and labels; got {n} rows, {dx} input and {dy} label columns"
        )));
    }
    Dataset::new(
        DMatrix::from_column_slice(dx, n, &xs),
        DMatrix::from_column_slice(dy, n, &ys),
    )
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    write_dataset(data, File::create(path)?)
}

/// Header `x0,…,y0,…` then one sample per row.
pub fn write_dataset<W: Write>(data: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..data.d_x())
        .map(|i| format!("x{i}"))
        .chain((0..data.d_y()).map(|i| format!("y{i}")))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.n() {
        let row: Vec<String> = data
            .x
            .column(i)
            .iter()
            .chain(data.y.column(i).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    File::create(path)?.write_all(to_json_string(value)?.as_bytes())?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitView {
    pub loss: LossKind,
    pub w_tilde: Vec<Vec<f64>>,
    pub risk: f64,
    pub grad_norm: f64,
    pub residual_norm: f64,
}

impl From<&LinearFit> for FitView {
    fn from(f: &LinearFit) -> Self {
        Self {
            loss: f.loss,
            w_tilde: matrix_to_rows(&f.w_tilde),
            risk: f.risk,
            grad_norm: f.grad_norm,
            residual_norm: f.residual_norm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationView {
    pub i_set: Vec<usize>,
    pub j_set: Vec<usize>,
    pub beta: Vec<f64>,
    pub trivial_branch: bool,
    pub alpha_max: f64,
    pub u_sum_over_i: f64,
}

impl SeparationView {
    pub fn new(res: &SeparationResult, u: &[f64]) -> Self {
        Self {
            i_set: res.i_set().to_vec(),
            j_set: res.j_set().to_vec(),
            beta: res.beta.iter().cloned().collect(),
            trivial_branch: res.trivial_branch,
            alpha_max: res.alpha_max,
            u_sum_over_i: res.u_sum_over_i(u),
        }
    }
}

/// Input of the `separate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeparationInput {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    /// One point per entry.
    pub x: Vec<Vec<f64>>,
}

impl SeparationInput {
    pub fn points(&self) -> Result<DMatrix<f64>> {
        let d = self.x.first().map_or(0, Vec::len);
        if self.x.iter().any(|p| p.len() != d) {
            return Err(Error::Parse("points have different dimensions".into()));
        }
        Ok(DMatrix::from_fn(d, self.x.len(), |r, c| self.x[c][r]))
    }
}

/// Row-major run-length encoding of a matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLength {
    pub rows: usize,
    pub cols: usize,
    /// `(value, count)` pairs.
    pub runs: Vec<(f64, usize)>,
}

impl RunLength {
    pub fn encode(m: &DMatrix<f64>) -> Self {
        let mut runs: Vec<(f64, usize)> = Vec::new();
        for r in 0..m.nrows() {
            for &v in m.row(r).iter() {
                match runs.last_mut() {
                    Some((last, count)) if *last == v => *count += 1,
                    _ => runs.push((v, 1)),
                }
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            runs,
        }
    }

    pub fn decode(&self) -> Result<DMatrix<f64>> {
        let flat: Vec<f64> = self
            .runs
            .iter()
            .flat_map(|&(v, c)| std::iter::repeat_n(v, c))
            .collect();
        if flat.len() != self.rows * self.cols {
            return Err(Error::Parse(format!(
                "runs cover {} entries, expected {}",
                flat.len(),
                self.rows * self.cols
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &flat))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureView {
    pub patterns: Vec<RunLength>,
    /// `(layer, unit, sample)`
    pub boundary: Vec<(usize, usize, usize)>,
}

impl From<&CellSignature> for SignatureView {
    fn from(s: &CellSignature) -> Self {
        Self {
            patterns: s.patterns.iter().map(RunLength::encode).collect(),
            boundary: s.boundary.iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Xor,
    /// `k` Gaussian clusters of `per_cluster` points in the plane, labelled alternately 0 and 1.
    Blobs {
        k: usize,
        per_cluster: usize,
        seed: u64,
    },
    /// Points on a line with exactly affine labels.
    Linear {
        n: usize,
        seed: u64,
    },
}

impl DatasetSpec {
    /// Parses `xor`, `blobs:<k>,<per_cluster>` or `linear:<n>`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown dataset spec {s:?}"));
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
        match s.split_once(':') {
            None if s == "xor" => Ok(Self::Xor),
            Some(("blobs", rest)) => {
                let (k, m) = rest.split_once(',').ok_or_else(bad)?;
                Ok(Self::Blobs {
                    k: num(k)?,
                    per_cluster: num(m)?,
                    seed,
                })
            }
            Some(("linear", n)) => Ok(Self::Linear { n: num(n)?, seed }),
            _ => Err(bad()),
        }
    }
}

fn blobs(k: usize, per_cluster: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let n = k * per_cluster;
    let mut x = DMatrix::zeros(2, n);
    let mut y = DMatrix::zeros(1, n);
    let noise = Normal::new(0.0, 0.5).expect("valid deviation");
    for c in 0..k {
        let centre = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        for m in 0..per_cluster {
            let i = c * per_cluster + m;
            for d in 0..2 {
                x[(d, i)] = centre[d] + noise.sample(rng);
            }
            y[(0, i)] = (c % 2) as f64;
        }
    }
    Dataset::new(x, y)
}

fn linear(n: usize, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let x = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-3.0..3.0));
    let y = x.map(|v| 2.0 * v - 1.0);
    Dataset::new(x, y)
}

/// Generates a dataset; with `assumptions` set the data must not be affinely
/// fittable and must have distinct samples. Random specs are redrawn up to 16 times.
pub fn gen_dataset(spec: &DatasetSpec, assumptions: bool) -> Result<Dataset> {
    let seed = match spec {
        DatasetSpec::Xor => return Ok(Dataset::xor()),
        DatasetSpec::Blobs { seed, .. } | DatasetSpec::Linear { seed, .. } => *seed,
    };
    let mut last = String::new();
    for attempt in 0..GENERATOR_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let data = match *spec {
            DatasetSpec::Blobs { k, per_cluster, .. } => blobs(k, per_cluster, &mut rng)?,
            DatasetSpec::Linear { n, .. } => linear(n, &mut rng)?,
            DatasetSpec::Xor => unreachable!(),
        };
        if !data.has_distinct_columns() {
            last = "duplicate samples".into();
            continue;
        }
        if !assumptions {
            return Ok(data);
        }
        let dims = [data.d_x(), data.d_y() + 1, data.d_y()];
        let r = check_assumptions(&data, &dims, &PiecewiseLinear::relu(), LossKind::Squared);
        if r.not_linearly_fittable {
            return Ok(data);
        }
        last = "labels are fit exactly by an affine model".into();
    }
    Err(Error::AssumptionFailed(format!(
        "generator gave up after {GENERATOR_RETRIES} draws: {last}"
    )))
}
