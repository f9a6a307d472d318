//! Seeded mini-batch training loop shared by every pairwise model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::tensor::Parameters;
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Added to every gradient as `l2 · w` after batch averaging.
    pub l2: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 10,
            batch_size: 128,
            adam: AdamConfig::default(),
            seed: 0,
            l2: 0.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean per-pair loss of each epoch, measured while training.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Minimizes the mean of `loss_grad` over `pairs`. The callback returns a
/// pair's loss and adds its gradient into the buffer it is given; the
/// buffer has the model's own type so both tensor lists line up.
pub fn fit<F, M, P>(
    model: &mut M,
    pairs: &[P],
    config: &FitConfig,
    mut loss_grad: impl FnMut(&M, &P, &mut M) -> Result<F>,
) -> Result<FitReport>
where
    F: Scalar,
    M: Parameters<F> + Clone,
{
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut optimizer = Adam::new(config.adam, model);
    let mut grads = model.clone();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut report = FitReport::default();
    let l2 = F::of(config.l2);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.zero_grads();
            for &i in batch {
                total += loss_grad(model, &pairs[i], &mut grads)?.as_f64();
            }
            let scale = F::one() / F::of(batch.len() as f64);
            for g in grads.tensors_mut() {
                g.scale(scale);
            }
            if config.l2 != 0.0 {
                for (g, (_, w)) in grads.tensors_mut().into_iter().zip(model.tensors()) {
                    for (gk, wk) in g.data_mut().iter_mut().zip(w.data()) {
                        *gk += l2 * *wk;
                    }
                }
            }
            optimizer.step(model, &grads)?;
        }
        report.epoch_losses.push(total / pairs.len() as f64);
    }
    report.steps = optimizer.steps();
    Ok(report)
}
