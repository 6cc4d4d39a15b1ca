use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ControllerError;
use crate::kde::{
    estimate_density, mean_density, select_bandwidth, Bandwidth, Density, GridSpec, Sample,
};
use crate::scoring::{build_score_table_auto, regularization, Quantizer, ScoreTable};
use crate::TaskId;

/// Smallest subsample the estimation phase will fit a density to.
pub const MIN_SUBSAMPLE: usize = 16;

fn partition<R: Rng + ?Sized>(values: &[f64], parts: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let size = values.len() / parts;
    if size == 0 {
        return Vec::new();
    }
    let mut shuffled = values.to_vec();
    shuffled.shuffle(rng);
    shuffled.chunks_exact(size).take(parts).map(<[f64]>::to_vec).collect()
}

/// Spreads each value uniformly over its quantizer cell: `x` becomes
/// `(floor(x * scale) + u) / scale` with `u` uniform on `[0, 1)`. Features
/// arrive as integers in quantized units, and ties would otherwise let the
/// bandwidth selector resolve the integer lattice.
pub fn dequantize<R: Rng + ?Sized>(values: &[f64], quantizer: Quantizer, rng: &mut R) -> Vec<f64> {
    values
        .iter()
        .map(|&x| quantizer.to_feature(quantizer.quantize(x) as f64 + rng.random::<f64>()))
        .collect()
}

/// For `j = 1..=k`, a random permutation of `values` cut into `j` disjoint
/// parts of `floor(n / j)` values (the remainder is dropped). Returned as
/// `(part size, parts)`; sizes that would be empty are left out.
pub fn subsample_split<R: Rng + ?Sized>(values: &[f64], k: usize, rng: &mut R) -> Vec<(usize, Vec<Vec<f64>>)> {
    let mut out = Vec::with_capacity(k);
    if k >= 1 && !values.is_empty() {
        out.push((values.len(), vec![values.to_vec()]));
    }
    for parts in 2..=k {
        let split = partition(values, parts, rng);
        if split.is_empty() {
            break;
        }
        out.push((split[0].len(), split));
    }
    out
}

/// Estimates averaged over `parts` disjoint subsamples of `size` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeLevel {
    pub size: u64,
    pub parts: usize,
    pub mean: Density,
    /// Mean of the subsample estimates' `∫ f²`.
    pub mean_regularization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimation {
    pub task_id: TaskId,
    pub full: Density,
    pub bandwidth: Bandwidth,
    /// Ordered by decreasing size; the first level is the full sample.
    pub levels: Vec<SizeLevel>,
    pub tables: Vec<ScoreTable>,
}

impl Estimation {
    pub fn sizes(&self) -> Vec<u64> {
        self.levels.iter().map(|l| l.size).collect()
    }

    pub fn regularizations(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mean_regularization).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationParams {
    pub subsamples: usize,
    pub grid_points: usize,
    pub max_bins: usize,
    pub quantizer: Quantizer,
    /// Apply [`dequantize`] to the sample before fitting.
    pub dequantize: bool,
}

/// Fits the full-sample density and the subsample levels `j = 2..=k` on a
/// common grid, and builds one score table per level.
pub fn estimation_phase<R: Rng + ?Sized>(
    task_id: TaskId,
    values: &[f64],
    params: &EstimationParams,
    rng: &mut R,
) -> Result<Estimation, ControllerError> {
    let values = if params.dequantize {
        dequantize(values, params.quantizer, rng)
    } else {
        values.to_vec()
    };
    let values = values.as_slice();
    let full = Sample::new(task_id, values.to_vec())?;
    let full_bw = select_bandwidth(&full)?;

    let mut splits: Vec<(usize, Vec<Sample>)> = Vec::new();
    for parts in 2..=params.subsamples {
        if values.len() / parts < MIN_SUBSAMPLE {
            break;
        }
        let samples = partition(values, parts, rng)
            .into_iter()
            .map(|v| Sample::new(task_id, v))
            .collect::<Result<Vec<_>, _>>()?;
        splits.push((parts, samples));
    }

    // A level whose subsamples cannot all be fitted is dropped.
    let bandwidths: Vec<Option<Vec<f64>>> = splits
        .par_iter()
        .map(|(_, samples)| {
            samples
                .iter()
                .map(|s| select_bandwidth(s).ok().map(|b| b.h))
                .collect::<Option<Vec<f64>>>()
        })
        .collect();

    let h_max = bandwidths
        .iter()
        .flatten()
        .flatten()
        .copied()
        .fold(full_bw.h, f64::max);
    let (min, max) = full.min_max();
    let grid = GridSpec::new(min - 3.0 * h_max, max + 3.0 * h_max, params.grid_points)?;
    let full_density = estimate_density(&full, full_bw.h, &grid)?;

    let subsample_levels: Vec<SizeLevel> = splits
        .par_iter()
        .zip(bandwidths.par_iter())
        .filter_map(|((parts, samples), hs)| hs.as_ref().map(|hs| (*parts, samples, hs)))
        .map(|(parts, samples, hs)| {
            let densities = samples
                .iter()
                .zip(hs)
                .map(|(s, &h)| estimate_density(s, h, &grid))
                .collect::<Result<Vec<_>, _>>()?;
            let mean_regularization =
                densities.iter().map(regularization).sum::<f64>() / densities.len() as f64;
            Ok(SizeLevel {
                size: samples[0].len() as u64,
                parts,
                mean: mean_density(&densities)?,
                mean_regularization,
            })
        })
        .collect::<Result<Vec<_>, ControllerError>>()?;

    let mut levels = vec![SizeLevel {
        size: values.len() as u64,
        parts: 1,
        mean_regularization: regularization(&full_density),
        mean: full_density.clone(),
    }];
    levels.extend(subsample_levels);

    let tables = levels
        .iter()
        .map(|l| build_score_table_auto(task_id, &l.mean, params.quantizer, params.max_bins))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Estimation {
        task_id,
        full: full_density,
        bandwidth: full_bw,
        levels,
        tables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::DEFAULT_MAX_BINS;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params() -> EstimationParams {
        EstimationParams {
            subsamples: 6,
            grid_points: 1 << 12,
            max_bins: DEFAULT_MAX_BINS,
            quantizer: Quantizer::IDENTITY,
            dequantize: false,
        }
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let values: Vec<f64> = (0..12).map(f64::from).collect();
        let split = subsample_split(&values, 3, &mut rng);
        let shape: Vec<(usize, usize)> = split.iter().map(|(size, parts)| (*size, parts.len())).collect();
        assert_eq!(shape, vec![(12, 1), (6, 2), (4, 3)]);
        for (_, parts) in &split {
            let mut seen: Vec<f64> = parts.concat();
            seen.sort_by(f64::total_cmp);
            let before = seen.len();
            seen.dedup();
            assert_eq!(seen.len(), before);
            assert!(seen.iter().all(|v| values.contains(v)));
        }
        assert_eq!(subsample_split(&values, 1, &mut rng), vec![(12, vec![values.clone()])]);
        assert_eq!(subsample_split(&values[..2], 5, &mut rng).len(), 2);
    }

    #[test]
    fn levels_share_a_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dist = Normal::new(500.0f64, 80.0).unwrap();
        let values: Vec<f64> = (0..1_200).map(|_| dist.sample(&mut rng).round()).collect();
        let est = estimation_phase(TaskId(1), &values, &params(), &mut rng).unwrap();
        assert_eq!(est.sizes(), vec![1200, 600, 400, 300, 240, 200]);
        assert!(est.levels.iter().all(|l| l.mean.grid() == est.full.grid()));
        assert_eq!(est.tables.len(), 6);
        for l in &est.levels[1..] {
            assert!(regularization(&l.mean) <= l.mean_regularization + 1e-12);
        }
    }

    #[test]
    fn small_samples_keep_fewer_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values: Vec<f64> = (0..40).map(|i| f64::from(i * 7 % 23)).collect();
        let est = estimation_phase(TaskId(1), &values, &params(), &mut rng).unwrap();
        assert_eq!(est.sizes(), vec![40, 20]);
    }
}
