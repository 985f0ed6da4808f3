use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use super::{substream, SampleMatrix};
use crate::error::{Error, Result};

/// Multinomial resampling: `m` rows drawn with probability ∝ `weights`.
pub fn resample_weighted(samples: &SampleMatrix, weights: &[f64], m: usize, seed: u64) -> Result<SampleMatrix> {
    if weights.len() != samples.nrows() {
        return Err(Error::InvalidWeights(format!("{} weights for {} rows", weights.len(), samples.nrows())));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("weight {w} is negative or not finite")));
    }
    if m == 0 {
        return Err(Error::InvalidWeights("m must be at least 1".into()));
    }
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidWeights(e.to_string()))?;
    let mut rng = substream(seed, 0);
    let mut out = SampleMatrix::new(samples.ncols());
    for _ in 0..m {
        out.push(samples.row(dist.sample(&mut rng)));
    }
    Ok(out)
}
