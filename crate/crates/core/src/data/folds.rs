use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Timeline;
use crate::error::{Error, Result};

/// Timeline ids assigned to each split of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

/// Partitions timelines into `k` folds. Each timeline is tested exactly once;
/// the remaining timelines of a fold are split into dev (`dev_fraction`,
/// rounded, at least one when possible) and train.
pub fn split_folds(
    timelines: &[Timeline],
    k: usize,
    dev_fraction: f64,
    seed: u64,
) -> Result<Vec<Fold>> {
    if k == 0 || timelines.len() < k {
        return Err(Error::Data(format!(
            "{} timelines cannot form {k} folds",
            timelines.len()
        )));
    }
    if !(0.0..1.0).contains(&dev_fraction) {
        return Err(Error::Config(format!("dev fraction {dev_fraction} not in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<String> = timelines.iter().map(|t| t.timeline_id.clone()).collect();
    ids.shuffle(&mut rng);

    let n = ids.len();
    let (base, extra) = (n / k, n % k);
    let mut chunks = Vec::with_capacity(k);
    let mut at = 0;
    for i in 0..k {
        let size = base + usize::from(i < extra);
        chunks.push(ids[at..at + size].to_vec());
        at += size;
    }

    let folds = (0..k)
        .map(|i| {
            let mut rest: Vec<String> = chunks
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .flat_map(|(_, c)| c.iter().cloned())
                .collect();
            rest.shuffle(&mut rng);
            let mut n_dev = (rest.len() as f64 * dev_fraction).round() as usize;
            if dev_fraction > 0.0 && n_dev == 0 && rest.len() >= 2 {
                n_dev = 1;
            }
            let train = rest.split_off(n_dev);
            Fold {
                train,
                dev: rest,
                test: chunks[i].clone(),
            }
        })
        .collect();
    Ok(folds)
}
