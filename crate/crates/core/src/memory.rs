//! Fixed-capacity FIFO memory of key embeddings, logical labels, and
//! label distributions. The three queues advance in lockstep: one
//! enqueue inserts a batch into all of them at the same positions, and a
//! snapshot reads them back oldest first.

use crate::matrix::Matrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("batch of {batch} rows exceeds queue capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },
    #[error("{matrix} has {found} columns, queue expects {expected}")]
    WidthMismatch { matrix: &'static str, expected: usize, found: usize },
    #[error("row counts disagree: z {z}, y {y}, d {d}")]
    RowMismatch { z: usize, y: usize, d: usize },
    #[error("embedding row {row} has norm {norm} (must be 1 within 1e-6)")]
    NotUnit { row: usize, norm: f64 },
    #[error("label row {row} holds non-binary value {value}")]
    NotBinary { row: usize, value: f64 },
    #[error("distribution row {row} {problem}")]
    NotDistribution { row: usize, problem: String },
    #[error("queue capacity must be positive")]
    ZeroCapacity,
}

/// Ring-buffer storage for up to `capacity` (embedding, labels,
/// distribution) triples.
#[derive(Debug, Clone)]
pub struct QueueSet {
    capacity: usize,
    z: Matrix,
    y: Matrix,
    d: Matrix,
    /// Next write position.
    head: usize,
    /// Number of valid rows (saturates at `capacity`).
    len: usize,
}

/// Oldest-first copies of the queue contents, row-aligned across the
/// three matrices.
#[derive(Debug, Clone)]
pub struct QueueSnapshot {
    pub z: Matrix,
    pub y: Matrix,
    pub d: Matrix,
}

impl QueueSnapshot {
    pub fn len(&self) -> usize {
        self.z.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl QueueSet {
    pub fn new(capacity: usize, embed_dim: usize, num_labels: usize) -> Result<Self, MemoryError> {
        if capacity == 0 {
            return Err(MemoryError::ZeroCapacity);
        }
        Ok(QueueSet {
            capacity,
            z: Matrix::zeros(capacity, embed_dim),
            y: Matrix::zeros(capacity, num_labels),
            d: Matrix::zeros(capacity, num_labels),
            head: 0,
            len: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Validate and insert a batch, overwriting the oldest rows once
    /// full. Validation is all-or-nothing: a bad row leaves the queue
    /// untouched.
    pub fn enqueue_batch(&mut self, z: &Matrix, y: &Matrix, d: &Matrix) -> Result<(), MemoryError> {
        let b = z.rows();
        if y.rows() != b || d.rows() != b {
            return Err(MemoryError::RowMismatch { z: b, y: y.rows(), d: d.rows() });
        }
        if b > self.capacity {
            return Err(MemoryError::BatchTooLarge { batch: b, capacity: self.capacity });
        }
        for (matrix, found, expected) in [
            ("embeddings", z.cols(), self.z.cols()),
            ("labels", y.cols(), self.y.cols()),
            ("distributions", d.cols(), self.d.cols()),
        ] {
            if found != expected {
                return Err(MemoryError::WidthMismatch { matrix, expected, found });
            }
        }
        for r in 0..b {
            let norm: f64 = z.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(MemoryError::NotUnit { row: r, norm });
            }
            for &v in y.row(r) {
                if v != 0.0 && v != 1.0 {
                    return Err(MemoryError::NotBinary { row: r, value: v });
                }
            }
            let mut sum = 0.0;
            for &v in d.row(r) {
                if !(0.0..=1.0).contains(&v) {
                    return Err(MemoryError::NotDistribution {
                        row: r,
                        problem: format!("holds {} outside [0, 1]", v),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(MemoryError::NotDistribution {
                    row: r,
                    problem: format!("sums to {} (must be 1 within 1e-6)", sum),
                });
            }
        }

        for r in 0..b {
            let slot = (self.head + r) % self.capacity;
            self.z.row_mut(slot).copy_from_slice(z.row(r));
            self.y.row_mut(slot).copy_from_slice(y.row(r));
            self.d.row_mut(slot).copy_from_slice(d.row(r));
        }
        self.head = (self.head + b) % self.capacity;
        self.len = (self.len + b).min(self.capacity);
        Ok(())
    }

    /// Copies of the live rows, oldest first. Empty matrices (zero rows)
    /// when nothing has been enqueued.
    pub fn snapshot(&self) -> QueueSnapshot {
        let start = if self.len < self.capacity {
            0
        } else {
            self.head
        };
        let order: Vec<usize> = (0..self.len)
            .map(|i| (start + i) % self.capacity)
            .collect();
        QueueSnapshot {
            z: self.z.select_rows(&order).expect("in-range by construction"),
            y: self.y.select_rows(&order).expect("in-range by construction"),
            d: self.d.select_rows(&order).expect("in-range by construction"),
        }
    }
}
