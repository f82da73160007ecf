//! Zipf-skewed partition sizes.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkewError {
    #[error("need at least one partition")]
    NoPartitions,
    #[error("{rows} rows cannot fill {partitions} partitions")]
    TooFewRows { rows: u64, partitions: usize },
    #[error("exponent must be finite and >= 0, got {0}")]
    BadExponent(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkewFragment {
    pub partitions: Vec<u64>,
    pub rows: u64,
    pub zipf_s: f64,
    pub seed: u64,
}

/// Sizes proportional to `rank^-s`, rounded by largest remainder so they sum
/// to `rows` exactly, with every partition holding at least one row.
/// The result does not depend on the seed; it is carried for provenance.
pub fn zipf_partitions(partitions: usize, rows: u64, s: f64) -> Result<Vec<u64>, SkewError> {
    if partitions == 0 {
        return Err(SkewError::NoPartitions);
    }
    if rows < partitions as u64 {
        return Err(SkewError::TooFewRows { rows, partitions });
    }
    if !(s >= 0.0 && s.is_finite()) {
        return Err(SkewError::BadExponent(s));
    }
    let weights: Vec<f64> = (1..=partitions).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * rows as f64).collect();
    let mut sizes: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let mut short = rows - sizes.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..partitions).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if short == 0 {
            break;
        }
        sizes[i] += 1;
        short -= 1;
    }
    // Weights are non-increasing, so empties sit at the tail; borrow from the largest.
    for i in 0..partitions {
        if sizes[i] == 0 {
            let donor = (0..partitions)
                .max_by_key(|&j| (sizes[j], std::cmp::Reverse(j)))
                .expect("non-empty");
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    Ok(sizes)
}

pub fn gen_skew(partitions: usize, rows: u64, zipf_s: f64, seed: u64) -> Result<SkewFragment, SkewError> {
    Ok(SkewFragment {
        partitions: zipf_partitions(partitions, rows, zipf_s)?,
        rows,
        zipf_s,
        seed,
    })
}
