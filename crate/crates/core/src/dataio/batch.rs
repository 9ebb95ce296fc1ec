//! Epoch batching and the two-view masking augmentation used during
//! pretraining.

use super::dataset::MulanDataset;
use crate::matrix::{Matrix, NumError};
use crate::ops::bernoulli_mask;
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct Batch {
    /// Dataset row indices in batch order.
    pub indices: Vec<usize>,
    pub x: Matrix,
    pub y: Matrix,
}

/// Slice one epoch into batches of `batch_size` (the last batch may be
/// smaller). With `shuffle` the row order is a fresh Fisher-Yates
/// permutation drawn from `rng`; otherwise rows appear in dataset order.
pub fn make_batches(
    ds: &MulanDataset,
    batch_size: usize,
    shuffle: bool,
    rng: &mut Rng,
) -> Result<Vec<Batch>, NumError> {
    if batch_size == 0 {
        return Err(NumError::param("make_batches", "batch_size must be positive"));
    }
    let mut order: Vec<usize> = (0..ds.n()).collect();
    if shuffle {
        rng.shuffle(&mut order);
    }
    let mut out = Vec::with_capacity(ds.n().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let x = ds.features.select_rows(chunk)?;
        let y = ds.labels.select_rows(chunk)?;
        out.push(Batch { indices: chunk.to_vec(), x, y });
    }
    Ok(out)
}

/// Two independently masked views of the same batch, for the query and
/// key towers. Masking zeroes features without rescaling.
pub fn two_views(x: &Matrix, mask_rate: f64, rng: &mut Rng) -> Result<(Matrix, Matrix), NumError> {
    let (v0, _) = bernoulli_mask(x, mask_rate, rng)?;
    let (v1, _) = bernoulli_mask(x, mask_rate, rng)?;
    Ok((v0, v1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn toy(n: usize) -> MulanDataset {
        let features = Matrix::from_vec(n, 2, (0..n * 2).map(|i| i as f64).collect()).unwrap();
        let labels = Matrix::filled(n, 3, 0.0);
        MulanDataset {
            features,
            labels,
            feature_names: vec!["a".into(), "b".into()],
            label_names: vec!["x".into(), "y".into(), "z".into()],
        }
    }

    #[test]
    fn covers_every_row_once() {
        let ds = toy(10);
        let mut rng = Rng::new(3, 0);
        let batches = make_batches(&ds, 4, true, &mut rng).unwrap();
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[0].x.rows(), 4);
        assert_eq!(batches[2].x.rows(), 2);
        let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batch_rows_match_dataset_rows() {
        let ds = toy(7);
        let mut rng = Rng::new(4, 0);
        let batches = make_batches(&ds, 3, true, &mut rng).unwrap();
        for b in &batches {
            for (pos, &idx) in b.indices.iter().enumerate() {
                assert_eq!(b.x.row(pos), ds.features.row(idx));
            }
        }
    }

    #[test]
    fn unshuffled_batches_keep_dataset_order() {
        let ds = toy(5);
        let mut rng = Rng::new(5, 0);
        let batches = make_batches(&ds, 2, false, &mut rng).unwrap();
        assert_eq!(batches[0].indices, vec![0, 1]);
        assert_eq!(batches[2].indices, vec![4]);
    }

    #[test]
    fn same_seed_same_shuffle() {
        let ds = toy(32);
        let a = make_batches(&ds, 8, true, &mut Rng::new(9, 1)).unwrap();
        let b = make_batches(&ds, 8, true, &mut Rng::new(9, 1)).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.indices, y.indices);
        }
    }

    #[test]
    fn views_differ_but_share_support() {
        let x = Matrix::filled(20, 30, 1.0);
        let mut rng = Rng::new(11, 0);
        let (v0, v1) = two_views(&x, 0.5, &mut rng).unwrap();
        assert_ne!(v0, v1);
        for (&a, &b) in v0.data().iter().zip(v1.data().iter()) {
            assert!(a == 0.0 || a == 1.0);
            assert!(b == 0.0 || b == 1.0);
        }
        let (u0, u1) = two_views(&x, 0.0, &mut rng).unwrap();
        assert_eq!(u0, x);
        assert_eq!(u1, x);
    }
}
