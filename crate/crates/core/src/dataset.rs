//! Labeled datasets, their file formats and the sampling protocols.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 2051;
const IDX_LABELS_MAGIC: u32 = 2049;

/// One input vector with entries in `[0, 1]` and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Array1<f64>,
    pub y: usize,
}

/// Examples stored row-wise: `x` is `N × d`, `y[i]` is the class of row `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Vec<usize>,
    num_classes: usize,
    provenance: String,
}

/// Where the class label sits on each line of a table file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelColumn {
    First,
    #[default]
    Last,
}

/// Requested size for [`balanced_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSize {
    PerClass(usize),
    /// Split as evenly as possible; lower class indices take the remainder.
    Total(usize),
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Vec<usize>, num_classes: usize, provenance: impl Into<String>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::CountMismatch(format!("{} rows, {} labels", x.nrows(), y.len())));
        }
        if let Some(&label) = y.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Shape("feature values must lie in [0, 1]".into()));
        }
        Ok(Self {
            x,
            y,
            num_classes,
            provenance: provenance.into(),
        })
    }

    pub fn from_examples(examples: &[LabeledExample], num_classes: usize) -> Result<Self> {
        let d = examples.first().map_or(0, |e| e.x.len());
        let mut x = Array2::zeros((examples.len(), d));
        for (i, e) in examples.iter().enumerate() {
            if e.x.len() != d {
                return Err(Error::Shape("examples differ in length".into()));
            }
            x.row_mut(i).assign(&e.x);
        }
        Self::new(x, examples.iter().map(|e| e.y).collect(), num_classes, "in-memory")
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn labels(&self) -> &[usize] {
        &self.y
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.x.row(i)
    }

    pub fn example(&self, i: usize) -> LabeledExample {
        LabeledExample {
            x: self.x.row(i).to_owned(),
            y: self.y[i],
        }
    }

    /// Widens the class count, e.g. to match a taxonomy.
    pub fn with_num_classes(mut self, k: usize) -> Result<Self> {
        if let Some(&label) = self.y.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        self.num_classes = k;
        Ok(self)
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize], provenance: impl Into<String>) -> Dataset {
        let mut x = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            x.row_mut(r).assign(&self.x.row(i));
        }
        Dataset {
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
            provenance: provenance.into(),
        }
    }

    /// Same examples with features replaced, e.g. by a hidden projection.
    pub fn with_features(&self, x: Array2<f64>) -> Result<Dataset> {
        Dataset::new(x, self.y.clone(), self.num_classes, self.provenance.clone())
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &y in &self.y {
            h[y] += 1;
        }
        h
    }

    /// Table-format text with the label last; values print in shortest
    /// round-trip form.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (row, &y) in self.x.outer_iter().zip(&self.y) {
            for v in row {
                let _ = write!(out, "{v} ");
            }
            let _ = writeln!(out, "{y}");
        }
        out
    }
}

fn read_u32(buf: &[u8], at: usize, what: &str) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Truncated(format!("{what} header")))
}

/// Parses an IDX image file and its label file. Pixels are scaled by 1/255.
pub fn load_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let count = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;

    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let label_count = read_u32(labels, 4, "labels")? as usize;
    if label_count != count {
        return Err(Error::CountMismatch(format!("{count} images, {label_count} labels")));
    }

    let d = rows * cols;
    let pixels = images
        .get(16..16 + count * d)
        .ok_or_else(|| Error::Truncated(format!("expected {} pixel bytes", count * d)))?;
    let label_bytes = labels
        .get(8..8 + count)
        .ok_or_else(|| Error::Truncated(format!("expected {count} label bytes")))?;

    let x = Array2::from_shape_fn((count, d), |(i, j)| f64::from(pixels[i * d + j]) / 255.0);
    let y: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let k = y.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(x, y, k, "idx")
}

pub fn load_idx_files(images: &Path, labels: &Path) -> Result<Dataset> {
    let mut ds = load_idx(&std::fs::read(images)?, &std::fs::read(labels)?)?;
    ds.provenance = images.display().to_string();
    Ok(ds)
}

/// Parses whitespace-separated rows of `d` features in `[0, 1]` plus one
/// integer label.
pub fn load_table(text: &str, label_column: LabelColumn) -> Result<Dataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        let (label_tok, feats) = match label_column {
            LabelColumn::Last => (tokens[tokens.len() - 1], &tokens[..tokens.len() - 1]),
            LabelColumn::First => (tokens[0], &tokens[1..]),
        };
        if let Some(w) = width {
            if feats.len() != w {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("ragged row: {} features, expected {w}", feats.len()),
                });
            }
        } else {
            width = Some(feats.len());
        }
        let label: usize = label_tok.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("invalid label `{label_tok}`"),
        })?;
        let mut row = Vec::with_capacity(feats.len());
        for tok in feats {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-numeric token `{tok}`"),
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("feature {v} outside [0, 1]"),
                });
            }
            row.push(v);
        }
        rows.push(row);
        labels.push(label);
    }
    let d = width.ok_or(Error::EmptyDataset)?;
    let x = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    Dataset::new(x, labels, k, "table")
}

/// Draws `counts[k]` examples of each class uniformly without replacement,
/// then shuffles the combined order.
fn sample_per_class(data: &Dataset, counts: &[usize], seed: u64, provenance: String) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes];
    for (i, &y) in data.y.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut chosen = Vec::new();
    for (class, pool) in by_class.iter_mut().enumerate() {
        let want = counts[class];
        if pool.len() < want {
            return Err(Error::InsufficientExamples {
                class,
                available: pool.len(),
                requested: want,
            });
        }
        let (picked, _) = pool.partial_shuffle(&mut rng, want);
        chosen.extend_from_slice(picked);
    }
    chosen.shuffle(&mut rng);
    Ok(data.subset(&chosen, provenance))
}

pub fn balanced_sample(data: &Dataset, size: SampleSize, seed: u64) -> Result<Dataset> {
    let k = data.num_classes;
    let counts: Vec<usize> = match size {
        SampleSize::PerClass(n) => vec![n; k],
        SampleSize::Total(t) => (0..k).map(|c| t / k + usize::from(c < t % k)).collect(),
    };
    sample_per_class(
        data,
        &counts,
        seed,
        format!("{} | balanced {:?} seed {seed}", data.provenance, size),
    )
}

/// One class gets `rare_count` examples, every other class `other_count`.
pub fn rare_class_sample(
    data: &Dataset,
    rare_class: usize,
    rare_count: usize,
    other_count: usize,
    seed: u64,
) -> Result<Dataset> {
    if rare_class >= data.num_classes {
        return Err(Error::LabelOutOfRange {
            label: rare_class,
            classes: data.num_classes,
        });
    }
    if rare_count == 0 {
        log::warn!("rare class {rare_class} sampled with zero examples");
    }
    let mut counts = vec![other_count; data.num_classes];
    counts[rare_class] = rare_count;
    sample_per_class(
        data,
        &counts,
        seed,
        format!(
            "{} | rare class {rare_class}: {rare_count} vs {other_count} seed {seed}",
            data.provenance
        ),
    )
}
