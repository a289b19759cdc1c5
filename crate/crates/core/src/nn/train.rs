//! Adam training loop with weighted BCE and optional on-the-fly
//! flip/translate augmentation.

use ndarray::{Array1, Array3, Array4};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::OccupancyGrid;

use super::loss::weighted_bce;
use super::unet::{grid_to_input, Gradients, UNet, UNetConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Positive-class weight; None computes background/foreground pixel
    /// ratio over the training set.
    pub pos_weight: Option<f64>,
    pub augment: bool,
    /// Binarization threshold stamped on the produced model; None uses the
    /// Bayes-consistent w/(w+1) for the training weight w.
    #[serde(default)]
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 2,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            pos_weight: None,
            augment: true,
            threshold: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if let Some(w) = self.pos_weight {
            if w <= 0.0 {
                return Err(Error::InvalidArgument("positive-class weight must be > 0".into()));
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be > 0".into()));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument("threshold must be in (0,1)".into()));
            }
        }
        Ok(())
    }
}

/// Background/foreground pixel ratio over the mask set.
pub fn class_weight(dataset: &[(OccupancyGrid, OccupancyGrid)]) -> f64 {
    let mut fg = 0usize;
    let mut total = 0usize;
    for (_, mask) in dataset {
        fg += mask.count_occupied();
        total += mask.pixels().len();
    }
    if fg == 0 {
        1.0
    } else {
        (total - fg) as f64 / fg as f64
    }
}

struct Adam {
    m: Vec<(Array4<f32>, Array1<f32>)>,
    v: Vec<(Array4<f32>, Array1<f32>)>,
    t: i32,
}

impl Adam {
    fn new(model: &UNet<f32>) -> Self {
        let zeros: Vec<_> = model
            .layers()
            .iter()
            .map(|l| {
                (
                    Array4::<f32>::zeros(l.weight.dim()),
                    Array1::<f32>::zeros(l.bias.len()),
                )
            })
            .collect();
        Adam { m: zeros.clone(), v: zeros, t: 0 }
    }

    fn step(&mut self, model: &mut UNet<f32>, grads: &Gradients<f32>, cfg: &TrainConfig) {
        self.t += 1;
        let b1 = cfg.beta1 as f32;
        let b2 = cfg.beta2 as f32;
        let lr = cfg.learning_rate as f32;
        let eps = cfg.adam_eps as f32;
        let bc1 = 1.0 - b1.powi(self.t);
        let bc2 = 1.0 - b2.powi(self.t);
        for (li, layer) in model.layers_mut().into_iter().enumerate() {
            let (gw, gb) = &grads[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];
            ndarray::Zip::from(&mut layer.weight)
                .and(mw)
                .and(vw)
                .and(gw)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(gb)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                });
        }
    }
}

fn augment_pair(
    grid: &OccupancyGrid,
    mask: &OccupancyGrid,
    rng: &mut ChaCha8Rng,
) -> (OccupancyGrid, OccupancyGrid) {
    // mirror flip only: translations would move the laser off the grid
    // center, a configuration that never occurs in real rasterized scans
    if rng.gen_bool(0.5) {
        (flip_y(grid), flip_y(mask))
    } else {
        (grid.clone(), mask.clone())
    }
}

fn flip_y(grid: &OccupancyGrid) -> OccupancyGrid {
    let n = grid.spec.matrix_length;
    let mut out = OccupancyGrid::zeros(grid.spec);
    for (px, py) in grid.occupied() {
        out.set(px, n - 1 - py, 255);
    }
    out
}

/// Accumulated per-layer gradient sum, reduced in sample-index order.
fn add_grads(acc: &mut Option<Gradients<f32>>, g: Gradients<f32>) {
    match acc {
        None => *acc = Some(g),
        Some(a) => {
            for ((aw, ab), (gw, gb)) in a.iter_mut().zip(g) {
                *aw += &gw;
                *ab += &gb;
            }
        }
    }
}

/// Trains a fresh model on grid/mask pairs; returns the model and the
/// per-step batch loss history.
pub fn train(
    dataset: &[(OccupancyGrid, OccupancyGrid)],
    unet_cfg: &UNetConfig,
    cfg: &TrainConfig,
) -> Result<(UNet<f32>, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    cfg.validate()?;
    let mut model_cfg = unet_cfg.clone();
    model_cfg.input_size = dataset[0].0.spec.matrix_length;
    let w64 = cfg.pos_weight.unwrap_or_else(|| class_weight(dataset));
    // Weighted BCE tilts the optimum to p* = w q / (w q + 1 - q) for true
    // leg probability q, so binarizing produced masks at the posterior
    // midpoint q = 1/2 means a threshold of w/(w+1); this reduces to the
    // 0.5 default when w = 1. An explicit config threshold overrides it.
    model_cfg.threshold = cfg.threshold.unwrap_or(w64 / (w64 + 1.0));
    let mut model = UNet::<f32>::new(model_cfg, cfg.seed)?;
    let mut adam = Adam::new(&model);
    let w = w64 as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261696e);
    let mut history = Vec::new();
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(cfg.batch_size) {
            let mut acc: Option<Gradients<f32>> = None;
            let mut batch_loss = 0.0f64;
            for &i in batch {
                let (grid, mask) = &dataset[i];
                let (g, m) = if cfg.augment {
                    augment_pair(grid, mask, &mut rng)
                } else {
                    (grid.clone(), mask.clone())
                };
                let x: Array3<f32> = grid_to_input(&g);
                let y: Array3<f32> = grid_to_input(&m);
                let (probs, cache) = model.forward_cached(&x)?;
                let (loss, grad_probs) = weighted_bce(&probs, &y, w)?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged { step });
                }
                batch_loss += loss as f64;
                let (grads, _) = model.backward(&cache, &grad_probs)?;
                add_grads(&mut acc, grads);
            }
            let mut grads = acc.unwrap();
            let scale = 1.0 / batch.len() as f32;
            for (gw, gb) in &mut grads {
                *gw *= scale;
                *gb *= scale;
            }
            adam.step(&mut model, &grads, cfg);
            history.push(batch_loss / batch.len() as f64);
            step += 1;
        }
    }
    Ok((model, history))
}

/// Mean weighted-BCE loss of a model over a labeled set (no updates).
pub fn evaluate_loss(
    model: &UNet<f32>,
    dataset: &[(OccupancyGrid, OccupancyGrid)],
    w: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (grid, mask) in dataset {
        let x: Array3<f32> = grid_to_input(grid);
        let y: Array3<f32> = grid_to_input(mask);
        let probs = model.forward(&x)?;
        let (loss, _) = weighted_bce(&probs, &y, w as f32)?;
        total += loss as f64;
    }
    Ok(total / dataset.len() as f64)
}
