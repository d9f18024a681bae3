//! Pixel label maps with an ignore marker, and the binary masks derived
//! from them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label value excluded from prototypes, losses and metrics.
pub const IGNORE: u16 = u16::MAX;

/// Per-pixel class labels over a flattened `hw` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    y: Vec<u16>,
    n_classes: usize,
}

impl LabelMap {
    pub fn new(y: Vec<u16>, n_classes: usize) -> Result<Self> {
        for (index, &value) in y.iter().enumerate() {
            if value != IGNORE && usize::from(value) >= n_classes {
                return Err(Error::InvalidLabel {
                    value,
                    index,
                    n_classes,
                });
            }
        }
        Ok(LabelMap { y, n_classes })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, pixel: usize) -> u16 {
        self.y[pixel]
    }

    pub fn labels(&self) -> &[u16] {
        &self.y
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.y[pixel] != IGNORE
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.y.iter().map(|&v| v != IGNORE).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.y.iter().filter(|&&v| v != IGNORE).count()
    }

    /// Pixels per class, ignored pixels excluded.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &v in &self.y {
            if v != IGNORE {
                counts[usize::from(v)] += 1;
            }
        }
        counts
    }

    pub fn present_classes(&self) -> Vec<usize> {
        self.class_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(k, _)| k)
            .collect()
    }

    /// The binary mask `M_k`, with ignored pixels always false.
    pub fn class_mask(&self, k: usize) -> Vec<bool> {
        self.y.iter().map(|&v| v != IGNORE && usize::from(v) == k).collect()
    }

    /// `[hw × n]` matrix with a 1 at each pixel's true class; ignored
    /// pixels are all-zero rows.
    pub fn one_hot(&self) -> Tensor {
        let (hw, n) = (self.len(), self.n_classes);
        let mut data = vec![0.0; hw * n];
        for (i, &v) in self.y.iter().enumerate() {
            if v != IGNORE {
                data[i * n + usize::from(v)] = 1.0;
            }
        }
        Tensor::matrix(hw, n, data).expect("one_hot shape")
    }

    /// `[n × hw]` masked-average-pooling matrix: row `k` holds `1/count_k`
    /// at class-`k` pixels, so multiplying by a feature matrix yields the
    /// per-class means. Also returns which classes are absent.
    pub fn pooling_matrix(&self) -> (Tensor, Vec<bool>) {
        let (hw, n) = (self.len(), self.n_classes);
        let counts = self.class_counts();
        let absent: Vec<bool> = counts.iter().map(|&c| c == 0).collect();
        let mut data = vec![0.0; n * hw];
        for (i, &v) in self.y.iter().enumerate() {
            if v != IGNORE {
                let k = usize::from(v);
                data[k * hw + i] = 1.0 / counts[k] as f64;
            }
        }
        (
            Tensor::matrix(n, hw, data).expect("pooling matrix shape"),
            absent,
        )
    }
}
