//! Long-tailed labeled datasets: exponential class-count profiles, a seeded
//! Gaussian-mixture generator, and the delimited text file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KrdError, Result};
use crate::numerics::{fmt_f64, gaussian_sample, normalize_in_place, Matrix, RngState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(KrdError::invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if classes == 0 {
            return Err(KrdError::invalid("class count must be positive"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(KrdError::CorruptData(format!(
                "example {i} has label {l}, but there are only {classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `idx` as a new dataset with the same class count.
    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| KrdError::io(path, e))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label");
        for j in 0..self.dim() {
            let _ = write!(s, ",f{j}");
        }
        s.push('\n');
        for (row, &label) in self.features.iter_rows().zip(&self.labels) {
            let _ = write!(s, "{label}");
            for &v in row {
                s.push(',');
                s.push_str(&fmt_f64(v));
            }
            s.push('\n');
        }
        s
    }

    /// Loads a dataset file. With `classes = None` the class count is
    /// `max(label) + 1`.
    pub fn load(path: &Path, classes: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| KrdError::io(path, e))?;
        Self::from_csv(&text, path, classes)
    }

    pub fn from_csv(text: &str, path: &Path, classes: Option<usize>) -> Result<Self> {
        let err = |line: usize, message: String| KrdError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"label") || cols.len() < 2 {
            return Err(err(1, format!("malformed header `{header}`")));
        }
        for (j, c) in cols[1..].iter().enumerate() {
            if *c != format!("f{j}") {
                return Err(err(1, format!("header column {} is `{c}`, expected `f{j}`", j + 1)));
            }
        }
        let d = cols.len() - 1;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d + 1 {
                return Err(err(n, format!("expected {} fields, found {}", d + 1, fields.len())));
            }
            let label: usize = fields[0]
                .parse()
                .map_err(|_| err(n, format!("label `{}` is not a non-negative integer", fields[0])))?;
            if let Some(c) = classes {
                if label >= c {
                    return Err(err(n, format!("label {label} out of range for {c} classes")));
                }
            }
            for f in &fields[1..] {
                let v: f64 = f.parse().map_err(|_| err(n, format!("feature `{f}` is not a number")))?;
                if !v.is_finite() {
                    return Err(err(n, format!("non-finite feature `{f}`")));
                }
                data.push(v);
            }
            labels.push(label);
        }
        let classes = match classes {
            Some(c) => c,
            None => labels.iter().max().map(|&m| m + 1).unwrap_or(1),
        };
        let features = Matrix::from_vec(labels.len(), d, data)?;
        LabeledDataset::new(features, labels, classes)
    }
}

/// Per-class example counts `n_c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(pub Vec<usize>);

impl ClassCounts {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    /// First class with no examples, if any. Only ingested files can produce one.
    pub fn first_empty(&self) -> Option<usize> {
        self.0.iter().position(|&n| n == 0)
    }

    /// Ratio between the most and least frequent class.
    pub fn imbalance_rate(&self) -> f64 {
        let max = self.0.iter().copied().max().unwrap_or(0);
        let min = self.0.iter().copied().min().unwrap_or(0);
        max as f64 / min as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub classes: usize,
    pub n_max: usize,
    pub rho: f64,
}

/// `n_c = round(n_max · ρ^(−c/(C−1)))`.
pub fn make_exponential_counts(profile: ImbalanceProfile) -> Result<ClassCounts> {
    let ImbalanceProfile { classes, n_max, rho } = profile;
    if !(rho >= 1.0) || !rho.is_finite() {
        return Err(KrdError::invalid(format!("imbalance rate must be >= 1, got {rho}")));
    }
    if classes == 0 {
        return Err(KrdError::invalid("class count must be positive"));
    }
    if (n_max as f64) < rho {
        return Err(KrdError::invalid(format!(
            "n_max = {n_max} is smaller than rho = {rho}; the rarest class would be empty"
        )));
    }
    if classes == 1 {
        return Ok(ClassCounts(vec![n_max]));
    }
    let counts = (0..classes)
        .map(|c| {
            let e = -(c as f64) / (classes - 1) as f64;
            ((n_max as f64 * rho.powf(e)).round() as usize).max(1)
        })
        .collect();
    Ok(ClassCounts(counts))
}

pub fn class_counts(data: &LabeledDataset) -> Result<ClassCounts> {
    let mut counts = vec![0usize; data.classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        *counts
            .get_mut(l)
            .ok_or_else(|| KrdError::CorruptData(format!("example {i} has label {l} >= {}", data.classes())))? += 1;
    }
    Ok(ClassCounts(counts))
}

/// Isotropic Gaussian clusters, one per class, with centers at a fixed
/// radius `spread` along seeded random directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub centers: Matrix,
    pub sigma: f64,
}

impl GaussianMixture {
    pub fn new(rng: &mut RngState, classes: usize, dim: usize, spread: f64, sigma: f64) -> Result<Self> {
        if dim < 2 {
            return Err(KrdError::invalid(format!("mixture dimension must be >= 2, got {dim}")));
        }
        if classes == 0 {
            return Err(KrdError::invalid("class count must be positive"));
        }
        if !(spread > 0.0) || !(sigma > 0.0) {
            return Err(KrdError::invalid(format!(
                "spread and sigma must be positive, got {spread} and {sigma}"
            )));
        }
        let mut centers = Matrix::zeros(classes, dim);
        for c in 0..classes {
            let row = centers.row_mut(c);
            loop {
                row.iter_mut().for_each(|v| *v = rng.standard_normal());
                if normalize_in_place(row) > 1e-8 {
                    break;
                }
            }
            row.iter_mut().for_each(|v| *v *= spread);
        }
        Ok(GaussianMixture { centers, sigma })
    }

    pub fn classes(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    /// Exactly `counts[c]` draws from class `c`, rows sorted by class.
    pub fn sample(&self, rng: &mut RngState, counts: &ClassCounts) -> Result<LabeledDataset> {
        if counts.classes() != self.classes() {
            return Err(KrdError::invalid(format!(
                "{} class counts for a {}-class mixture",
                counts.classes(),
                self.classes()
            )));
        }
        let n = counts.total();
        let mut data = Vec::with_capacity(n * self.dim());
        let mut labels = Vec::with_capacity(n);
        for (c, &nc) in counts.as_slice().iter().enumerate() {
            let block = gaussian_sample(rng, self.centers.row(c), self.sigma, nc)?;
            data.extend_from_slice(block.as_slice());
            labels.extend(std::iter::repeat_n(c, nc));
        }
        LabeledDataset::new(Matrix::from_vec(n, self.dim(), data)?, labels, self.classes())
    }
}

/// Draws the class centers from `rng`, then the examples.
pub fn synth_gaussian_mixture(
    rng: &mut RngState,
    counts: &ClassCounts,
    dim: usize,
    spread: f64,
    sigma: f64,
) -> Result<(GaussianMixture, LabeledDataset)> {
    let mixture = GaussianMixture::new(rng, counts.classes(), dim, spread, sigma)?;
    let data = mixture.sample(rng, counts)?;
    Ok((mixture, data))
}

/// `per_class` fresh draws per class. `rng` must be a stream disjoint from
/// the one used for training data.
pub fn balanced_eval_split(
    rng: &mut RngState,
    per_class: usize,
    mixture: &GaussianMixture,
) -> Result<LabeledDataset> {
    if per_class == 0 {
        return Err(KrdError::invalid("evaluation split needs at least one example per class"));
    }
    mixture.sample(rng, &ClassCounts(vec![per_class; mixture.classes()]))
}
