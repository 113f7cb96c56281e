//! Mini-batch ADAM training with gradient clipping and validation RMSE.

use crate::model::{
    backward, batch_inputs, forward, persistence_forecast, Dropout, Forecast, ForecastModel, History, ModelShape,
    Normalizer, Params, FEATURES, INPUT_STEPS, OUTPUTS, OUTPUT_STEPS,
};
use crate::ForecastError;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const WINDOW: usize = INPUT_STEPS + OUTPUT_STEPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decay of the gradient moving average.
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    /// Global gradient norm threshold.
    pub clip_norm: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 200,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.2,
            clip_norm: 1.0,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ForecastError> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.clip_norm > 0.0
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(ForecastError::Config(format!("{self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Validation RMSE per feature (load, PV) as a fraction of the
    /// feature's observed range.
    pub validation_rmse: [f64; FEATURES],
    /// The same metric for the persistence forecast.
    pub persistence_rmse: [f64; FEATURES],
    /// Mean training loss (normalised MSE) of every epoch.
    pub epoch_loss: Vec<f64>,
    pub train_windows: usize,
    pub validation_windows: usize,
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    fn new(shape: &ModelShape) -> Self {
        Self {
            m: Params::zeros(shape),
            v: Params::zeros(shape),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut Params, grad: &Params, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let grads = grad.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Rescales `grad` so that its global L2 norm does not exceed `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grad: &mut Params, max_norm: f64) -> f64 {
    let norm = grad
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

fn targets(series: &[[f64; FEATURES]], starts: &[usize], norm: &Normalizer) -> Array2<f64> {
    Array2::from_shape_fn((starts.len(), OUTPUTS), |(b, o)| {
        let (k, f) = (o / FEATURES, o % FEATURES);
        norm.normalize(f, series[starts[b] + INPUT_STEPS + k][f])
    })
}

/// Trains a model on a chronological series of `[load_kw, pv_kw]` rows.
///
/// Windows of six inputs and three targets are taken at every slot. The
/// first `train_fraction` of the windows trains the model and the rest
/// validate it; the normaliser only sees rows of training windows.
pub fn train(
    series: &[[f64; FEATURES]],
    shape: &ModelShape,
    cfg: &TrainConfig,
) -> Result<(ForecastModel, TrainReport), ForecastError> {
    cfg.validate()?;
    if series.len() < WINDOW {
        return Err(ForecastError::DataTooShort {
            rows: series.len(),
            needed: WINDOW,
        });
    }
    let windows = series.len() - WINDOW + 1;
    let train_windows = ((windows as f64 * cfg.train_fraction).floor() as usize).clamp(1, windows);
    let val_starts: Vec<usize> = if train_windows < windows {
        (train_windows..windows).collect()
    } else {
        vec![windows - 1]
    };
    let norm = Normalizer::fit(&series[..train_windows - 1 + WINDOW]);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ForecastModel::new(shape.clone(), &mut rng);
    model.normalizer = Some(norm);
    let mut adam = Adam::new(shape);
    let mut order: Vec<usize> = (0..train_windows).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let histories: Vec<&[[f64; FEATURES]]> = batch.iter().map(|&s| &series[s..s + INPUT_STEPS]).collect();
            let steps = batch_inputs(&histories, &norm);
            let target = targets(series, batch, &norm);
            let dropout = Dropout {
                rate: cfg.dropout,
                rng: &mut rng,
            };
            let (out, cache) = forward(&model.params, &steps, Some(dropout))?;
            let diff = &out - &target;
            let loss = diff.mapv(|d| d * d).sum() / diff.len() as f64;
            if !loss.is_finite() {
                return Err(ForecastError::Divergence { epoch });
            }
            total += loss * batch.len() as f64;
            let d_out = diff * (2.0 / (batch.len() * OUTPUTS) as f64);
            let mut grad = backward(&model.params, &cache, &d_out);
            clip_global_norm(&mut grad, cfg.clip_norm);
            adam.step(&mut model.params, &grad, cfg);
        }
        epoch_loss.push(total / train_windows as f64);
    }
    if !model.params.is_finite() {
        return Err(ForecastError::Divergence { epoch: cfg.epochs });
    }

    let ranges = feature_ranges(series);
    let validation_rmse = range_rmse(series, &val_starts, &ranges, |h| {
        model.forecast_batch(h).expect("fitted model")
    });
    let persistence_rmse = range_rmse(series, &val_starts, &ranges, |h| {
        h.iter()
            .map(|h| persistence_forecast(&to_history(h)))
            .collect()
    });
    Ok((
        model,
        TrainReport {
            validation_rmse,
            persistence_rmse,
            epoch_loss,
            train_windows,
            validation_windows: val_starts.len(),
        },
    ))
}

fn to_history(rows: &[[f64; FEATURES]]) -> History {
    let mut h = [[0.0; FEATURES]; INPUT_STEPS];
    h.copy_from_slice(rows);
    h
}

/// Observed range of each feature, falling back to `max(|v|, 1)` for a
/// constant feature so the metric stays defined.
pub fn feature_ranges(series: &[[f64; FEATURES]]) -> [f64; FEATURES] {
    let mut out = [1.0; FEATURES];
    for (f, r) in out.iter_mut().enumerate() {
        let lo = series.iter().map(|row| row[f]).fold(f64::INFINITY, f64::min);
        let hi = series.iter().map(|row| row[f]).fold(f64::NEG_INFINITY, f64::max);
        *r = if hi - lo > 1e-9 { hi - lo } else { hi.abs().max(1.0) };
    }
    out
}

/// RMSE over every horizon of the windows starting at `starts`, divided
/// by the feature range.
pub fn range_rmse(
    series: &[[f64; FEATURES]],
    starts: &[usize],
    ranges: &[f64; FEATURES],
    predict: impl Fn(&[&[[f64; FEATURES]]]) -> Vec<Forecast>,
) -> [f64; FEATURES] {
    let mut sq = [0.0; FEATURES];
    let mut n = 0usize;
    for chunk in starts.chunks(1024) {
        let histories: Vec<&[[f64; FEATURES]]> = chunk.iter().map(|&s| &series[s..s + INPUT_STEPS]).collect();
        for (pred, &s) in predict(&histories).iter().zip(chunk) {
            for k in 0..OUTPUT_STEPS {
                for f in 0..FEATURES {
                    let d = pred[k][f] - series[s + INPUT_STEPS + k][f];
                    sq[f] += d * d;
                }
            }
            n += OUTPUT_STEPS;
        }
    }
    let mut out = [0.0; FEATURES];
    for f in 0..FEATURES {
        out[f] = (sq[f] / n.max(1) as f64).sqrt() / ranges[f];
    }
    out
}
