//! Labelled datasets and the ways training draws from them: class-balanced
//! mini-batches, bootstrap resamples, stratified splits, and synthetic label
//! noise. Every routine is a pure function of its inputs and a seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::loss::ClassStats;
use crate::matrix::Matrix;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    class_index: Vec<Vec<usize>>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labels",
                features.rows(),
                labels.len()
            )));
        }
        let mut class_index = vec![Vec::new(); n_classes];
        for (row, &label) in labels.iter().enumerate() {
            class_index
                .get_mut(label)
                .ok_or(Error::Label { label, n_classes })?
                .push(row);
        }
        Ok(Dataset {
            features,
            labels,
            class_index,
            n_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Row ids of each class, ascending.
    pub fn class_index(&self) -> &[Vec<usize>] {
        &self.class_index
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<u64> {
        self.class_index.iter().map(|ids| ids.len() as u64).collect()
    }

    pub fn class_stats(&self) -> Result<ClassStats> {
        ClassStats::new(self.class_counts())
    }

    /// New dataset made of the given rows, in order, duplicates allowed.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let labels = rows.iter().map(|&r| self.labels[r]).collect();
        Dataset::new(self.features.select_rows(rows), labels, self.n_classes)
            .expect("rows drawn from a valid dataset")
    }

    /// Same rows with every feature passed through `f`.
    pub fn map_features(&self, f: impl FnOnce(&Matrix) -> Matrix) -> Result<Dataset> {
        Dataset::new(f(&self.features), self.labels.clone(), self.n_classes)
    }

    /// Manifest text: `n_classes,n_features,n_rows`, then `label,f1,...,fk` per row.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            writeln!(out, "{},{},{}", self.n_classes, self.n_features(), self.len())?;
            for (label, row) in self.labels.iter().zip(self.features.iter_rows()) {
                write!(out, "{label}")?;
                for v in row {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Dataset::parse_manifest(BufReader::new(file))
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn parse_manifest(reader: impl BufRead) -> Result<Dataset> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map_or(true, |l| !l.trim().is_empty())
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty manifest".into()))?;
        let header = header.map_err(|e| Error::Parse(e.to_string()))?;
        let fields: Vec<usize> = header
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("header {header:?}: {e}")))?;
        let [n_classes, n_features, n_rows] = fields[..] else {
            return Err(Error::Parse(format!(
                "header must be n_classes,n_features,n_rows, got {header:?}"
            )));
        };

        let mut labels = Vec::with_capacity(n_rows);
        let mut data = Vec::with_capacity(n_rows * n_features);
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::Parse(e.to_string()))?;
            let lineno = lineno + 1;
            let mut parts = line.split(',');
            let label: usize = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {lineno}: label: {e}")))?;
            if label >= n_classes {
                return Err(Error::Parse(format!(
                    "line {lineno}: label {label} >= n_classes {n_classes}"
                )));
            }
            let before = data.len();
            for p in parts {
                let v: f64 = p
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("line {lineno}: {p:?}: {e}")))?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!("line {lineno}: non-finite value")));
                }
                data.push(v);
            }
            if data.len() - before != n_features {
                return Err(Error::Parse(format!(
                    "line {lineno}: {} features, header says {n_features}",
                    data.len() - before
                )));
            }
            labels.push(label);
        }
        if labels.len() != n_rows {
            return Err(Error::Parse(format!(
                "{} rows, header says {n_rows}",
                labels.len()
            )));
        }
        Dataset::new(Matrix::from_vec(n_rows, n_features, data)?, labels, n_classes)
    }
}

/// Row ids forming one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: Vec<usize>,
}

/// Label-flip probability and the seed driving the flips.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub rate: f64,
    pub seed: u64,
}

/// Cycles through a class's rows in freshly shuffled passes, so the rows of
/// a large class are each used once per pass and a small class repeats.
struct ClassStream<'a> {
    ids: &'a [usize],
    order: Vec<usize>,
    pos: usize,
}

impl<'a> ClassStream<'a> {
    fn new(ids: &'a [usize]) -> Self {
        ClassStream {
            ids,
            order: Vec::new(),
            pos: 0,
        }
    }

    fn next(&mut self, rng: &mut seed::Rng) -> usize {
        if self.pos == self.order.len() {
            self.order = self.ids.to_vec();
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// One epoch of class-balanced batches.
///
/// Each batch holds `batch_size / n` rows of every class, with the
/// `batch_size % n` leftover slots given to a seeded random choice of
/// classes. The epoch has `ceil(majority · n / batch_size)` batches, enough to
/// visit every row of the largest class once; smaller classes are revisited
/// (over-sampled) in reshuffled passes.
pub fn balanced_batches(ds: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let n = ds.n_classes();
    if batch_size < n {
        return Err(Error::Sampling(format!(
            "batch size {batch_size} smaller than class count {n}"
        )));
    }
    if let Some(c) = ds.class_index().iter().position(Vec::is_empty) {
        return Err(Error::Sampling(format!("class {c} has no samples")));
    }
    let majority = ds.class_index().iter().map(Vec::len).max().unwrap_or(0);
    let n_batches = (majority * n).div_ceil(batch_size);
    let base = batch_size / n;
    let extra = batch_size % n;

    let mut rng = seed::rng(seed);
    let mut streams: Vec<ClassStream> = ds.class_index().iter().map(|ids| ClassStream::new(ids)).collect();
    let mut classes: Vec<usize> = (0..n).collect();
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        classes.shuffle(&mut rng);
        let mut rows = Vec::with_capacity(batch_size);
        for (rank, &c) in classes.iter().enumerate() {
            let take = base + usize::from(rank < extra);
            for _ in 0..take {
                rows.push(streams[c].next(&mut rng));
            }
        }
        rows.shuffle(&mut rng);
        batches.push(Batch { rows });
    }
    Ok(batches)
}

/// One epoch of plain shuffled batches covering every row once; the last
/// batch may be short.
pub fn shuffled_batches(ds: &Dataset, batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Sampling("batch size must be positive".into()));
    }
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    rows.shuffle(&mut seed::rng(seed));
    Ok(rows
        .chunks(batch_size)
        .map(|c| Batch { rows: c.to_vec() })
        .collect())
}

/// Same-size resample drawn uniformly with replacement.
pub fn bootstrap_resample(ds: &Dataset, seed: u64) -> Result<Dataset> {
    if ds.is_empty() {
        return Err(Error::Sampling("cannot resample an empty dataset".into()));
    }
    let mut rng = seed::rng(seed);
    let rows: Vec<usize> = (0..ds.len()).map(|_| rng.gen_range(0..ds.len())).collect();
    Ok(ds.subset(&rows))
}

/// Flips each label with probability `rate` to a uniformly chosen different class.
pub fn inject_label_noise(ds: &Dataset, spec: NoiseSpec) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "noise rate {} not in [0, 1]",
            spec.rate
        )));
    }
    let n = ds.n_classes();
    if spec.rate > 0.0 && n < 2 {
        return Err(Error::InvalidArgument(
            "label noise needs at least 2 classes".into(),
        ));
    }
    let mut rng = seed::rng(spec.seed);
    let labels = ds
        .labels()
        .iter()
        .map(|&y| {
            if rng.gen_bool(spec.rate) {
                let other = rng.gen_range(0..n - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect();
    Dataset::new(ds.features().clone(), labels, n)
}

/// How many rows of each class go to the test side of a split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSize {
    /// `round(fraction · class size)` per class.
    Fraction(f64),
    /// Exactly this many per class.
    PerClass(usize),
}

/// Per-class random split into `(train, test)`. Each class must keep at
/// least one row on both sides.
pub fn stratified_split(ds: &Dataset, size: SplitSize, seed: u64) -> Result<(Dataset, Dataset)> {
    if let SplitSize::Fraction(f) = size {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "test fraction {f} not in (0, 1)"
            )));
        }
    }
    let mut rng = seed::rng(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, ids) in ds.class_index().iter().enumerate() {
        let n_test = match size {
            SplitSize::Fraction(f) => (f * ids.len() as f64).round() as usize,
            SplitSize::PerClass(k) => k,
        };
        if n_test == 0 || n_test >= ids.len() {
            return Err(Error::Sampling(format!(
                "class {c} with {} rows cannot give {n_test} to test and keep one for training",
                ids.len()
            )));
        }
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng);
        test.extend_from_slice(&shuffled[..n_test]);
        train.extend_from_slice(&shuffled[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}
