use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Example indices owned by one worker, in local order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub worker_id: usize,
    pub examples: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Splits `total` examples across `workers` workers in blocks of `block`.
///
/// The indices are shuffled once with `stream`; the first `total mod
/// (workers·block)` shuffled indices are discarded and the rest are cut into
/// equal contiguous shards. When a shard holds an odd number of blocks, its
/// last block is dropped as well so that every worker can form pairs.
pub fn shard_examples(
    total: usize,
    workers: usize,
    block: usize,
    stream: &mut RngStream,
) -> Result<Vec<Shard>> {
    if workers == 0 || block == 0 {
        return Err(Error::config("m and b must be at least 1"));
    }
    let unit = workers * block;
    if total < unit {
        return Err(Error::config(format!(
            "N = {total} examples cannot fill m·b = {workers}·{block}"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    stream.shuffle(&mut order);
    let discard = total % unit;
    let kept = &order[discard..];
    let mut per_worker = kept.len() / workers;
    if (per_worker / block) % 2 == 1 {
        log::info!(
            "dropping one block of {block} example(s) per worker so {} blocks pair up",
            per_worker / block
        );
        per_worker -= block;
    }
    if per_worker == 0 {
        return Err(Error::config(format!(
            "N = {total} leaves no complete pair of blocks for m = {workers}, b = {block}"
        )));
    }
    Ok(kept
        .chunks_exact(kept.len() / workers)
        .take(workers)
        .enumerate()
        .map(|(worker_id, chunk)| Shard {
            worker_id,
            examples: chunk[..per_worker].to_vec(),
        })
        .collect())
}
