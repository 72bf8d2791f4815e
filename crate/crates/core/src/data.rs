//! Observed data, CSV ingestion, cross-fitting fold plans and arm subsets.

use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Immutable table of `(y, t, x)` rows. Covariates are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData {
    y: Vec<f64>,
    t: Vec<u8>,
    x: Vec<f64>,
    n: usize,
    p: usize,
}

impl ObservedData {
    /// Validates shapes, binary treatment and finiteness.
    pub fn new(y: Vec<f64>, t: Vec<u8>, x: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if t.len() != n {
            return Err(Error::ShapeMismatch(format!("y has {n} rows, t has {}", t.len())));
        }
        if x.len() != n * p {
            return Err(Error::ShapeMismatch(format!("x has {} entries, expected {n} x {p}", x.len())));
        }
        if let Some(i) = t.iter().position(|&v| v > 1) {
            return Err(Error::NonBinaryTreatment { row: i + 1, value: t[i].to_string() });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: i + 1, column: "y".into() });
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { row: k / p + 1, column: format!("x{}", k % p + 1) });
        }
        Ok(ObservedData { y, t, x, n, p })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    /// Same rows with treatment labels flipped (`t -> 1 - t`).
    pub fn with_swapped_labels(&self) -> ObservedData {
        ObservedData { t: self.t.iter().map(|&t| 1 - t).collect(), ..self.clone() }
    }
}

/// CSV parsing options.
#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { delimiter: b',' }
    }
}

/// Loads a CSV with header `y,t,x1..xp`. Covariate columns keep header order.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<ObservedData> {
    let file = std::fs::File::open(path)?;
    read_csv(file, options)
}

pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<ObservedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut y_col = None;
    let mut t_col = None;
    let mut x_cols = Vec::new();
    let mut unexpected = None;
    for (j, name) in headers.iter().enumerate() {
        match name {
            "y" => y_col = Some(j),
            "t" => t_col = Some(j),
            _ if is_covariate_name(name) => x_cols.push((j, name.to_string())),
            _ if unexpected.is_none() => unexpected = Some(name.to_string()),
            _ => {}
        }
    }
    // A missing required column is the more useful diagnosis.
    let y_col = y_col.ok_or_else(|| Error::MissingColumn("y".into()))?;
    let t_col = t_col.ok_or_else(|| Error::MissingColumn("t".into()))?;
    if let Some(name) = unexpected {
        return Err(Error::UnexpectedColumn(name));
    }
    let p = x_cols.len();

    let mut y = Vec::new();
    let mut t = Vec::new();
    let mut x = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        y.push(parse_real(record.get(y_col), row, "y")?);
        let raw_t = record.get(t_col).unwrap_or("");
        match raw_t.parse::<f64>() {
            Ok(0.0) => t.push(0),
            Ok(1.0) => t.push(1),
            _ => return Err(Error::NonBinaryTreatment { row, value: raw_t.to_string() }),
        }
        for (j, name) in &x_cols {
            x.push(parse_real(record.get(*j), row, name)?);
        }
    }
    ObservedData::new(y, t, x, p)
}

fn is_covariate_name(name: &str) -> bool {
    name.len() > 1 && name.starts_with('x') && name[1..].bytes().all(|b| b.is_ascii_digit())
}

fn parse_real(field: Option<&str>, row: usize, column: &str) -> Result<f64> {
    let raw = field.unwrap_or("");
    let v: f64 =
        raw.parse().map_err(|_| Error::InvalidNumber { row, column: column.to_string(), value: raw.to_string() })?;
    if !v.is_finite() {
        return Err(Error::NonFiniteValue { row, column: column.to_string() });
    }
    Ok(v)
}

/// Partition of row indices into `k` disjoint test folds.
///
/// `assignments[i]` is the (0-based) fold holding row `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignments[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Random permutation of `0..n` cut into `k` contiguous blocks; the first
/// `n % k` blocks take one extra row.
pub fn split_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("fold count must be >= 2, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::TooFewRows { needed: 2 * k, got: n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[rng::TAG_FOLD_PLAN]));

    let base = n / k;
    let extra = n % k;
    let mut assignments = vec![0; n];
    let mut start = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &i in &perm[start..start + size] {
            assignments[i] = fold;
        }
        start += size;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// Rows of `parent` (restricted to some index set) with treatment `arm`.
#[derive(Debug, Clone)]
pub struct ArmSubset<'a> {
    pub parent: &'a ObservedData,
    pub indices: Vec<usize>,
    pub arm: u8,
}

impl ArmSubset<'_> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn arm_subset<'a>(data: &'a ObservedData, indices: &[usize], arm: u8) -> Result<ArmSubset<'a>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= data.n()) {
        return Err(Error::ShapeMismatch(format!("index {bad} out of range for n = {}", data.n())));
    }
    let picked: Vec<usize> = indices.iter().copied().filter(|&i| data.t()[i] == arm).collect();
    if picked.is_empty() {
        return Err(Error::EmptyArm { arm });
    }
    Ok(ArmSubset { parent: data, indices: picked, arm })
}
