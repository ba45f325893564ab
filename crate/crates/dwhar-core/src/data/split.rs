//! Subject-level and random splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::windows::SensorBatch;
use crate::error::{Error, Result};
use crate::util::seed_stream;

/// One leave-one-subject-out fold.
pub struct LosoFold {
    pub held_out_subject: String,
    pub train: SensorBatch,
    pub test: SensorBatch,
}

/// Builds one fold per distinct subject, ordered by subject id; the fold's
/// test set is exactly that subject's windows.
pub fn loso_split(batch: &SensorBatch) -> Result<Vec<LosoFold>> {
    let mut subjects: Vec<String> = batch.subjects.clone();
    subjects.sort();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::usage(
            "leave-one-subject-out needs at least two subjects; use the holdout split instead",
        ));
    }
    subjects
        .into_iter()
        .map(|subject| {
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
                (0..batch.len()).partition(|&i| batch.subjects[i] == subject);
            Ok(LosoFold {
                held_out_subject: subject,
                train: batch.select(&train_idx)?,
                test: batch.select(&test_idx)?,
            })
        })
        .collect()
}

/// Seeded shuffle followed by contiguous slicing into train/validation/test.
/// Fractions must sum to 1; every positive fraction must receive at least
/// one window.
pub fn holdout_split(
    batch: &SensorBatch,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(SensorBatch, SensorBatch, SensorBatch)> {
    let (f1, f2, f3) = fractions;
    for f in [f1, f2, f3] {
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::usage(format!("split fraction {f} is outside [0, 1]")));
        }
    }
    if (f1 + f2 + f3 - 1.0).abs() > 1e-9 {
        return Err(Error::usage(format!(
            "split fractions must sum to 1, got {f1} + {f2} + {f3}"
        )));
    }
    let b = batch.len();
    let n1 = (f1 * b as f64).floor() as usize;
    let n2 = (f2 * b as f64).floor() as usize;
    let n3 = b - n1 - n2;
    for (name, f, n) in [("train", f1, n1), ("validation", f2, n2), ("test", f3, n3)] {
        if f > 0.0 && n == 0 {
            return Err(Error::usage(format!(
                "batch of {b} windows is too small for a non-empty {name} split at fraction {f}"
            )));
        }
    }
    let mut indices: Vec<usize> = (0..b).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(seed, "holdout"));
    indices.shuffle(&mut rng);
    Ok((
        batch.select(&indices[..n1])?,
        batch.select(&indices[n1..n1 + n2])?,
        batch.select(&indices[n1 + n2..])?,
    ))
}
