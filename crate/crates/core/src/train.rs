//! Fitting a field to LR voxel intensities, and sampling it on a new grid.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::{normalize_coords, shared_bounds, voxel_coords};
use crate::encode::OneBlobConfig;
use crate::error::{Error, Result};
use crate::field::{FieldConfig, GradShard, TwoFactorField, Variant};
use crate::optim::{adam_update, AdamHyper, AdamState, WeightDecay};
use crate::volume::{affine_apply, Affine, Volume3D};

/// Samples per worker unit. Fixed so that gradient reduction order, and
/// therefore the result, does not depend on the thread count.
const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_grids: f64,
    pub lr_mlp: f64,
    pub weight_decay: f64,
    pub weight_decay_mode: WeightDecay,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub levels: usize,
    pub r_min: usize,
    pub r_max: usize,
    pub coeff_resolution: usize,
    pub n_bins: usize,
    pub oneblob_sigma: f64,
    pub hidden: Vec<usize>,
    pub init_scale: f64,
    pub variant: Variant,
    /// Padding of the coordinate normalization box as a fraction of the LR
    /// extent per side. `None` pads by half an LR voxel.
    pub margin: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 1000,
            lr_grids: 2e-2,
            lr_mlp: 1e-3,
            weight_decay: 5e-4,
            weight_decay_mode: WeightDecay::Decoupled,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            levels: 6,
            r_min: 32,
            r_max: 128,
            coeff_resolution: 32,
            n_bins: 32,
            oneblob_sigma: 1.0,
            hidden: vec![64, 64],
            init_scale: 0.1,
            variant: Variant::Full,
            margin: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // zero learning rates are accepted so a run can be checked to leave parameters untouched
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be non-negative, got {v}")))
            }
        };
        non_negative("lr_grids", self.lr_grids)?;
        non_negative("lr_mlp", self.lr_mlp)?;
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if let Some(m) = self.margin {
            if !(m >= 0.0) {
                return Err(Error::Config(format!("margin must be non-negative, got {m}")));
            }
        }
        self.field_config().validate()
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            levels: self.levels,
            coeff_resolution: self.coeff_resolution,
            basis_min_resolution: self.r_min,
            basis_max_resolution: self.r_max,
            oneblob: OneBlobConfig {
                n_bins: self.n_bins,
                sigma: self.oneblob_sigma,
            },
            hidden: self.hidden.clone(),
            variant: self.variant,
            init_scale: self.init_scale,
            seed: self.seed,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Stable hex digest of the resolved configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_batch(pred, target)?;
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

/// `d(mse)/d(pred_j) = 2 (pred_j - target_j) / n`.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_batch(pred, target)?;
    let n = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

fn check_batch(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Contract(format!(
            "mse needs equal non-empty batches, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(())
}

/// One Adam state per parameter tensor, grouped as the field stores them.
struct Optimizer {
    coeff: Vec<AdamState>,
    basis: Vec<AdamState>,
    mlp: Vec<AdamState>,
}

impl Optimizer {
    fn new(field: &TwoFactorField, hyper: AdamHyper) -> Self {
        let grids = |p: &crate::grid::GridPyramid| p.levels.iter().map(|g| AdamState::new(g.len(), hyper)).collect();
        Self {
            coeff: grids(&field.coeff),
            basis: grids(&field.basis),
            mlp: field.mlp.tensors().iter().map(|t| AdamState::new(t.len(), hyper)).collect(),
        }
    }

    fn step(&mut self, field: &mut TwoFactorField, cfg: &TrainConfig) -> Result<()> {
        let wd = cfg.weight_decay;
        let grids = field.coeff.levels.iter_mut().zip(&mut self.coeff).chain(field.basis.levels.iter_mut().zip(&mut self.basis));
        for (g, s) in grids {
            adam_update(&mut g.values, &g.grad, s, cfg.lr_grids, wd, cfg.weight_decay_mode)?;
        }
        let grads = field.mlp_grads.tensors().into_iter().map(<[f64]>::to_vec).collect::<Vec<_>>();
        for ((p, g), s) in field.mlp.tensors_mut().into_iter().zip(&grads).zip(&mut self.mlp) {
            adam_update(p, g, s, cfg.lr_mlp, wd, cfg.weight_decay_mode)?;
        }
        field.zero_grad();
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub field: TwoFactorField,
    /// Mean squared error over all training voxels, per epoch.
    pub loss_history: Vec<f64>,
    pub steps: usize,
}

/// Fits a fresh field to the voxels of `lr` with mini-batch Adam.
pub fn train(lr: &Volume3D, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let margin = cfg.margin.unwrap_or_else(|| crate::coords::default_margin(lr.dims()));
    let bounds = shared_bounds(lr, margin);
    let coords = normalize_coords(&voxel_coords(lr), bounds, lr.dims())?;
    let targets: Vec<f64> = lr.data().iter().map(|&v| v as f64).collect();

    let mut field = TwoFactorField::new(cfg.field_config())?;
    field.bounds = Some(bounds);
    field.intensity_range = lr.intensity_range();
    field.metadata = serde_json::json!({ "train": cfg });

    let mut optimizer = Optimizer::new(&field, cfg.adam());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let n = targets.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sse = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let scale = 2.0 / batch.len() as f64;
            let shards: Vec<(GradShard, f64)> = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut trace = field.new_trace();
                    let mut shard = field.new_shard();
                    let mut sse = 0.0;
                    for &idx in chunk {
                        let pred = field
                            .forward_traced(coords.points[idx], &mut trace)
                            .expect("normalized coordinates lie in the unit cube");
                        let residual = pred - targets[idx];
                        sse += residual * residual;
                        field.backward_traced(&mut trace, scale * residual, &mut shard);
                    }
                    (shard, sse)
                })
                .collect();
            for (shard, sse) in &shards {
                field.apply_shard(shard);
                epoch_sse += sse;
            }
            optimizer.step(&mut field, cfg)?;
            steps += 1;
        }
        history.push(epoch_sse / n as f64);
    }
    Ok(TrainOutcome {
        field,
        loss_history: history,
        steps,
    })
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub volume: Volume3D,
    /// Fraction of query voxels whose normalized coordinate was clamped.
    pub clamped_fraction: f64,
}

/// Evaluates the field at every voxel center of the target grid.
pub fn infer_volume(field: &TwoFactorField, dims: [usize; 3], affine: Affine) -> Result<Volume3D> {
    infer_with_stats(field, dims, affine).map(|inf| inf.volume)
}

pub fn infer_with_stats(field: &TwoFactorField, dims: [usize; 3], affine: Affine) -> Result<Inference> {
    let bounds = field
        .bounds
        .ok_or_else(|| Error::Contract("field has no stored normalization bounds".into()))?;
    bounds.validate()?;
    let [h, w, _] = dims;
    let mut data = vec![0.0f32; dims.iter().product()];
    let clamped: usize = data
        .par_chunks_mut(h * w)
        .enumerate()
        .map(|(k, slice)| {
            let mut trace = field.new_trace();
            let mut clamped = 0;
            for j in 0..w {
                for i in 0..h {
                    let p = affine_apply(&affine, [i as f64, j as f64, k as f64]);
                    let (u, c) = bounds.normalize(p);
                    clamped += c as usize;
                    let pred = field.forward_traced(u, &mut trace).expect("clamped point is in domain");
                    slice[i + h * j] = pred.clamp(0.0, 1.0) as f32;
                }
            }
            clamped
        })
        .sum();
    let volume = Volume3D::new(dims, data, affine)?.with_intensity_range(field.intensity_range);
    Ok(Inference {
        clamped_fraction: clamped as f64 / volume.len() as f64,
        volume,
    })
}
