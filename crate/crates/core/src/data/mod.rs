//! Labelled datasets and non-IID partitioning.

mod idx;
mod partition;
mod synthetic;

pub use idx::{load_idx, parse_idx};
pub use partition::{partition, partition_indices, take_cloud_fraction, SplitKind, SplitSpec};
pub use synthetic::{make_gaussian_mixture, make_glyphs, GLYPH_SIDE};

use std::io::Write;

use crate::error::{Error, Result};
use crate::nnkernel::{Matrix, Rng};

/// Where a run's train and test data come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    GaussianMixture {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f32,
    },
    Glyphs {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
    },
    Idx {
        train_images: std::path::PathBuf,
        train_labels: std::path::PathBuf,
        test_images: std::path::PathBuf,
        test_labels: std::path::PathBuf,
    },
}

impl DatasetSpec {
    /// `(train, test)`. Synthetic test sets are drawn after the training set
    /// from the same stream.
    pub fn build(&self, rng: &mut Rng) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetSpec::GaussianMixture {
                classes,
                per_class,
                test_per_class,
                spread,
            } => Ok((
                make_gaussian_mixture(*classes, *per_class, *spread, rng)?,
                make_gaussian_mixture(*classes, *test_per_class, *spread, rng)?,
            )),
            DatasetSpec::Glyphs {
                classes,
                per_class,
                test_per_class,
            } => Ok((
                make_glyphs(*classes, *per_class, rng)?,
                make_glyphs(*classes, *test_per_class, rng)?,
            )),
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => Ok((
                load_idx(train_images, train_labels)?,
                load_idx(test_images, test_labels)?,
            )),
        }
    }

    /// Image height and width used for SSIM. IDX data is square when its
    /// dimension is a perfect square; everything else is a single row.
    pub fn image_shape(&self, data_dim: usize) -> (usize, usize) {
        match self {
            DatasetSpec::Glyphs { .. } => (GLYPH_SIDE, GLYPH_SIDE),
            DatasetSpec::Idx { .. } => {
                let side = (data_dim as f64).sqrt().round() as usize;
                if side * side == data_dim {
                    (side, side)
                } else {
                    (1, data_dim)
                }
            }
            DatasetSpec::GaussianMixture { .. } => (1, data_dim),
        }
    }
}

/// Samples in `[-1, 1]` with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Matrix,
    labels: Vec<usize>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Matrix, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        if samples.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l >= class_count) {
            return Err(Error::Data {
                offset: pos as u64,
                reason: format!("label {} outside {class_count} classes", labels[pos]),
            });
        }
        Ok(Self {
            samples,
            labels,
            class_count,
        })
    }

    pub fn empty(data_dim: usize, class_count: usize) -> Self {
        Self {
            samples: Matrix::zeros(0, data_dim),
            labels: Vec::new(),
            class_count,
        }
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn data_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sorted distinct labels present.
    pub fn classes_present(&self) -> Vec<usize> {
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.class_count).filter(|&c| seen[c]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
        }
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        LabeledDataset::new(
            self.samples.vcat(&other.samples)?,
            labels,
            self.class_count.max(other.class_count),
        )
    }

    /// Indices of each class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.class_count];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    /// Debug export: header `label,x0,x1,...`, one row per sample.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "label")?;
        for j in 0..self.data_dim() {
            write!(w, ",x{j}")?;
        }
        writeln!(w)?;
        for (i, &l) in self.labels.iter().enumerate() {
            write!(w, "{l}")?;
            for v in self.samples.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
