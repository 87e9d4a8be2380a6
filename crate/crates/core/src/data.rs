//! Dataset loading (dense CSV, sparse libsvm, paired feature/label files),
//! seeded train/test splits and train-only standardization.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{DrkmError, Real, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    /// `N x d`, one sample per row.
    pub x: DMatrix<T>,
    /// Class indices in `0..classes`.
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Original label of each class index.
    pub label_names: Vec<String>,
    /// Standardization applied to `x`, if any.
    pub scaling: Option<Scaling<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: DMatrix<T>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(DrkmError::Data("dataset needs at least one row and one feature".into()));
        }
        if labels.len() != x.nrows() {
            return Err(DrkmError::Data(format!(
                "{} labels for {} rows",
                labels.len(),
                x.nrows()
            )));
        }
        let classes = label_names.len();
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(DrkmError::Data(format!("label index {l} out of range for {classes} classes")));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite_value()) {
            let (r, c) = (pos % x.nrows(), pos / x.nrows());
            return Err(DrkmError::Data(format!("non-finite value at row {r}, column {c}")));
        }
        Ok(Dataset {
            x,
            labels,
            classes,
            label_names,
            scaling: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `idx` in that order; label metadata and scaling are kept.
    pub fn select(&self, idx: &[usize]) -> Dataset<T> {
        Dataset {
            x: self.x.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            label_names: self.label_names.clone(),
            scaling: self.scaling.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Per-feature affine map `x -> (x - mean) / std`. Constant features keep
/// mean 0 and std 1, i.e. pass through unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub constant: Vec<bool>,
}

impl<T: Real> Scaling<T> {
    /// Fits population mean and standard deviation per column.
    pub fn fit(x: &DMatrix<T>) -> Self {
        let n = T::from_usize_lossy(x.nrows());
        let mut mean = Vec::with_capacity(x.ncols());
        let mut std = Vec::with_capacity(x.ncols());
        let mut constant = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let m = col.iter().fold(T::zero(), |a, &v| a + v) / n;
            let var = col.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / n;
            let s = var.sqrt();
            if s <= T::lit(1e-10) * (T::one() + m.abs()) {
                mean.push(T::zero());
                std.push(T::one());
                constant.push(true);
            } else {
                mean.push(m);
                std.push(s);
                constant.push(false);
            }
        }
        Scaling { mean, std, constant }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.dim() {
            return Err(DrkmError::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
                context: "scaled feature dimension",
            });
        }
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.mean[j], self.std[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    /// Fraction of rows held out for testing; the rest is training data.
    TestFraction(f64),
    /// Exact sizes; `train + test` may be less than the number of rows.
    Counts { train: usize, test: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    /// Keep class proportions in both parts.
    pub stratified: bool,
}

impl SplitSpec {
    pub fn fraction(test_fraction: f64) -> Self {
        SplitSpec {
            sizes: SplitSizes::TestFraction(test_fraction),
            stratified: false,
        }
    }

    pub fn counts(train: usize, test: usize) -> Self {
        SplitSpec {
            sizes: SplitSizes::Counts { train, test },
            stratified: false,
        }
    }

    pub fn stratified(mut self) -> Self {
        self.stratified = true;
        self
    }

    fn resolve(&self, n: usize) -> Result<(usize, usize)> {
        match self.sizes {
            SplitSizes::TestFraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(DrkmError::Config(format!(
                        "dataset.split.test_fraction must be in (0, 1), got {f}"
                    )));
                }
                let test = ((n as f64 * f).round() as usize).clamp(1, n.saturating_sub(1).max(1));
                if test >= n {
                    return Err(DrkmError::Data(format!("cannot split {n} rows")));
                }
                Ok((n - test, test))
            }
            SplitSizes::Counts { train, test } => {
                if train == 0 || test == 0 || train + test > n {
                    return Err(DrkmError::Data(format!(
                        "split of {train} train + {test} test rows does not fit {n} rows"
                    )));
                }
                Ok((train, test))
            }
        }
    }
}

/// Largest-remainder apportionment of `total` over `weights`.
fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut out: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut rem: Vec<(usize, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| ((total * w) % sum, i))
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - out.iter().sum::<usize>();
    for &(_, i) in rem.iter().take(short) {
        out[i] += 1;
    }
    out
}

/// Seeded index partition used by [`standardize_split`].
pub fn split_indices<T: Real>(data: &Dataset<T>, spec: &SplitSpec, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.n();
    let (n_train, n_test) = spec.resolve(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = if spec.stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
        for (i, &l) in data.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let tr_quota = apportion(n_train, &counts);
        let te_quota = apportion(n_test, &counts);
        let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n_test));
        for (c, idx) in by_class.iter_mut().enumerate() {
            idx.shuffle(&mut rng);
            let tr = tr_quota[c].min(idx.len());
            let te = te_quota[c].min(idx.len() - tr);
            train.extend_from_slice(&idx[..tr]);
            test.extend_from_slice(&idx[tr..tr + te]);
        }
        (train, test)
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        (idx[..n_train].to_vec(), idx[n_train..n_train + n_test].to_vec())
    };
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let mut seen = vec![false; data.classes];
    for &i in &train {
        seen[data.labels[i]] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(DrkmError::Data(format!(
            "split leaves class {:?} without training samples",
            data.label_names[c]
        )));
    }
    Ok((train, test))
}

/// Seeded shuffle and split, then standardization fitted on the training
/// rows and applied to both parts.
pub fn standardize_split<T: Real>(data: &Dataset<T>, spec: &SplitSpec, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let (tr, te) = split_indices(data, spec, seed)?;
    let mut train = data.select(&tr);
    let mut test = data.select(&te);
    let scaling = Scaling::fit(&train.x);
    train.x = scaling.apply(&train.x)?;
    test.x = scaling.apply(&test.x)?;
    train.scaling = Some(scaling.clone());
    test.scaling = Some(scaling);
    Ok((train, test))
}

/// Maps raw labels to indices in first-appearance order.
#[derive(Default)]
struct LabelMap {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl LabelMap {
    fn get(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(raw.to_string(), i);
        self.names.push(raw.to_string());
        i
    }

    /// Relabels so that numeric labels are ordered ascending; non-numeric
    /// label sets keep first-appearance order.
    fn sort_numeric(self, labels: &mut [usize]) -> Vec<String> {
        let parsed: Option<Vec<f64>> = self.names.iter().map(|s| s.parse::<f64>().ok()).collect();
        let Some(values) = parsed else {
            return self.names;
        };
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
        let mut remap = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            remap[old] = new;
        }
        for l in labels.iter_mut() {
            *l = remap[*l];
        }
        order.into_iter().map(|i| self.names[i].clone()).collect()
    }
}

fn parse_real<T: Real>(cell: &str, line: usize, col: usize) -> Result<T> {
    let v: T = cell
        .trim()
        .parse()
        .map_err(|_| DrkmError::Data(format!("line {line}, column {}: {cell:?} is not a number", col + 1)))?;
    if !v.is_finite_value() {
        return Err(DrkmError::Data(format!("line {line}, column {}: non-finite value", col + 1)));
    }
    Ok(v)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| DrkmError::Data(format!("cannot open {}: {e}", path.display())))
}

fn csv_reader(path: &Path, has_header: bool) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> DrkmError {
    DrkmError::Data(format!("{}: {e}", path.display()))
}

/// Dense CSV with the class label in the last column.
pub fn load_csv<T: Real>(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path, has_header)?;
    let mut values: Vec<T> = Vec::new();
    let mut labels = Vec::new();
    let mut map = LabelMap::default();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => {
                if rec.len() < 2 {
                    return Err(DrkmError::Data(format!(
                        "line {line}: need at least one feature and a label"
                    )));
                }
                width = Some(rec.len());
            }
            Some(w) if w != rec.len() => {
                return Err(DrkmError::Data(format!(
                    "line {line}: expected {w} fields, found {}",
                    rec.len()
                )))
            }
            _ => {}
        }
        let d = rec.len() - 1;
        for (j, cell) in rec.iter().take(d).enumerate() {
            values.push(parse_real(cell, line, j)?);
        }
        labels.push(map.get(&rec[d]));
    }
    let Some(w) = width else {
        return Err(DrkmError::Data(format!("{} contains no data rows", path.display())));
    };
    let x = DMatrix::from_row_slice(labels.len(), w - 1, &values);
    Dataset::new(x, labels, map.names)
}

/// Writes `data` as CSV (features then original label). Reals use the
/// shortest representation that parses back to the same bits.
pub fn write_csv<T: Real>(path: impl AsRef<Path>, data: &Dataset<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| csv_err(path.as_ref(), e))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(data.label_names[data.labels[i]].clone());
        w.write_record(&row).map_err(|e| csv_err(path.as_ref(), e))?;
    }
    w.flush()?;
    Ok(())
}

/// Feature-only CSV (no label column), as consumed by `predict`.
pub fn load_features_csv<T: Real>(path: impl AsRef<Path>, has_header: bool) -> Result<DMatrix<T>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path, has_header)?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if let Some(w) = width {
            if w != rec.len() {
                return Err(DrkmError::Data(format!("line {line}: expected {w} fields, found {}", rec.len())));
            }
        }
        width = Some(rec.len());
        for (j, cell) in rec.iter().enumerate() {
            values.push(parse_real::<T>(cell, line, j)?);
        }
        rows += 1;
    }
    let Some(w) = width else {
        return Err(DrkmError::Data(format!("{} contains no data rows", path.display())));
    };
    Ok(DMatrix::from_row_slice(rows, w, &values))
}

/// Sparse `label idx:val ...` rows with 1-based ascending indices.
/// Missing entries are zero; `d` defaults to the largest index seen.
pub fn load_libsvm<T: Real>(path: impl AsRef<Path>, d: Option<usize>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(open(path)?);
    let mut rows: Vec<Vec<(usize, T)>> = Vec::new();
    let mut labels = Vec::new();
    let mut map = LabelMap::default();
    let mut max_idx = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut parts = content.split_whitespace();
        let label = parts.next().expect("non-empty line has a token");
        let mut row = Vec::new();
        let mut last = 0;
        for pair in parts {
            let (idx, val) = pair
                .split_once(':')
                .ok_or_else(|| DrkmError::Data(format!("line {lineno}: malformed pair {pair:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| DrkmError::Data(format!("line {lineno}: bad index in {pair:?}")))?;
            if idx == 0 {
                return Err(DrkmError::Data(format!("line {lineno}: indices are 1-based, found 0")));
            }
            if idx <= last {
                return Err(DrkmError::Data(format!(
                    "line {lineno}: index {idx} does not ascend after {last}"
                )));
            }
            last = idx;
            let v = parse_real::<T>(val, lineno, idx - 1)?;
            row.push((idx, v));
        }
        max_idx = max_idx.max(last);
        labels.push(map.get(label));
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DrkmError::Data(format!("{} contains no data rows", path.display())));
    }
    let d = match d {
        Some(d) if d < max_idx => {
            return Err(DrkmError::Data(format!("index {max_idx} exceeds the declared dimension {d}")))
        }
        Some(d) => d,
        None => max_idx,
    };
    let mut x = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        for &(j, v) in row {
            x[(i, j - 1)] = v;
        }
    }
    let names = map.sort_numeric(&mut labels);
    Dataset::new(x, labels, names)
}

/// Features and labels in separate files: whitespace- or comma-separated
/// feature rows, one label per line.
pub fn load_paired<T: Real>(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset<T>> {
    let (fp, lp) = (features.as_ref(), labels.as_ref());
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (lineno, line) in BufReader::new(open(fp)?).lines().enumerate() {
        let line = line?;
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if cells.is_empty() {
            continue;
        }
        match width {
            Some(w) if w != cells.len() => {
                return Err(DrkmError::Data(format!(
                    "{} line {}: expected {w} fields, found {}",
                    fp.display(),
                    lineno + 1,
                    cells.len()
                )))
            }
            _ => width = Some(cells.len()),
        }
        for (j, c) in cells.iter().enumerate() {
            values.push(parse_real::<T>(c, lineno + 1, j)?);
        }
        rows += 1;
    }
    let mut map = LabelMap::default();
    let mut y = Vec::new();
    for line in BufReader::new(open(lp)?).lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            y.push(map.get(t));
        }
    }
    if y.len() != rows {
        return Err(DrkmError::Data(format!(
            "{} has {rows} rows but {} has {} labels",
            fp.display(),
            lp.display(),
            y.len()
        )));
    }
    let Some(w) = width else {
        return Err(DrkmError::Data(format!("{} contains no data rows", fp.display())));
    };
    let names = map.sort_numeric(&mut y);
    Dataset::new(DMatrix::from_row_slice(rows, w, &values), y, names)
}

/// Writes features and labels as two files in the [`load_paired`] layout.
pub fn write_paired<T: Real>(data: &Dataset<T>, features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let mut f = std::io::BufWriter::new(File::create(features.as_ref())?);
    for row in data.x.row_iter() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(" "))?;
    }
    f.flush()?;
    let mut l = std::io::BufWriter::new(File::create(labels.as_ref())?);
    for &y in &data.labels {
        writeln!(l, "{}", data.label_names[y])?;
    }
    l.flush()?;
    Ok(())
}

/// Reads the feature columns `start..start + width` of a labelled CSV
/// (label last), skipping the rest of each row. Lets a kernel matrix be
/// assembled from column blocks without holding the full matrix.
pub fn read_csv_columns<T: Real>(
    path: impl AsRef<Path>,
    has_header: bool,
    start: usize,
    width: usize,
) -> Result<DMatrix<T>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path, has_header)?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut take = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let d = rec.len().saturating_sub(1);
        if start >= d {
            return Err(DrkmError::Data(format!("line {line}: column {start} beyond {d} features")));
        }
        let w = width.min(d - start);
        match take {
            Some(t) if t != w => return Err(DrkmError::Data(format!("line {line}: ragged row"))),
            _ => take = Some(w),
        }
        for j in start..start + w {
            values.push(parse_real::<T>(&rec[j], line, j)?);
        }
        rows += 1;
    }
    let w = take.ok_or_else(|| DrkmError::Data(format!("{} contains no data rows", path.display())))?;
    Ok(DMatrix::from_row_slice(rows, w, &values))
}
