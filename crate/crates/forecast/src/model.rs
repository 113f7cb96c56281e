//! Stacked GRU network with a fully connected head, min-max normaliser and
//! versioned JSON persistence.

use crate::gru::{GruLayer, StepCache};
use crate::ForecastError;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Past slots fed to the network.
pub const INPUT_STEPS: usize = 6;
/// Future slots predicted.
pub const OUTPUT_STEPS: usize = 3;
/// Load and PV.
pub const FEATURES: usize = 2;
pub const OUTPUTS: usize = OUTPUT_STEPS * FEATURES;

const FORMAT: &str = "nanogrid-gru-forecaster";
const FORMAT_VERSION: u32 = 1;

/// Six past `[load_kw, pv_kw]` rows, oldest first.
pub type History = [[f64; FEATURES]; INPUT_STEPS];
/// Three future `[load_kw, pv_kw]` rows, nearest first.
pub type Forecast = [[f64; FEATURES]; OUTPUT_STEPS];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub gru_layers: usize,
    pub hidden: usize,
    /// Widths of the hidden fully connected layers; a linear output layer
    /// of six units follows them.
    pub dense: Vec<usize>,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            gru_layers: 6,
            hidden: 32,
            dense: vec![64, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `input × output`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((input, output)),
            b: Array1::zeros(output),
        }
    }

    fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(input, output);
        let l = (6.0 / (input + output) as f64).sqrt();
        d.w.mapv_inplace(|_| rng.gen_range(-l..l));
        d
    }
}

/// All trainable tensors. Gradients and optimiser moments share the layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub gru: Vec<GruLayer>,
    pub dense: Vec<Dense>,
}

impl Params {
    pub fn zeros(shape: &ModelShape) -> Self {
        Self::build(shape, GruLayer::zeros, Dense::zeros)
    }

    pub fn xavier<R: Rng + ?Sized>(shape: &ModelShape, rng: &mut R) -> Self {
        let rng = std::cell::RefCell::new(rng);
        Self::build(
            shape,
            |i, o| GruLayer::xavier(i, o, &mut **rng.borrow_mut()),
            |i, o| Dense::xavier(i, o, &mut **rng.borrow_mut()),
        )
    }

    fn build(shape: &ModelShape, gru: impl Fn(usize, usize) -> GruLayer, dense: impl Fn(usize, usize) -> Dense) -> Self {
        let gru_layers = (0..shape.gru_layers)
            .map(|l| gru(if l == 0 { FEATURES } else { shape.hidden }, shape.hidden))
            .collect();
        let mut widths = vec![shape.hidden];
        widths.extend(&shape.dense);
        widths.push(OUTPUTS);
        let dense_layers = widths.windows(2).map(|w| dense(w[0], w[1])).collect();
        Self {
            gru: gru_layers,
            dense: dense_layers,
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.gru.iter().flat_map(|l| l.tensors()).collect();
        for d in &self.dense {
            out.push(d.w.as_slice().expect("standard layout"));
            out.push(d.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.gru.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        for d in &mut self.dense {
            out.push(d.w.as_slice_mut().expect("standard layout"));
            out.push(d.b.as_slice_mut().expect("standard layout"));
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations of one batched forward pass.
pub struct ForwardCache {
    gru: Vec<Vec<StepCache>>,
    /// Input of every dense layer.
    dense_inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden dense layers.
    dense_pre: Vec<Array2<f64>>,
    /// Inverted-dropout masks of the hidden dense layers, if training.
    masks: Vec<Option<Array2<f64>>>,
}

/// Dropout applied to hidden dense activations during training.
pub struct Dropout<'a, R: Rng + ?Sized> {
    pub rate: f64,
    pub rng: &'a mut R,
}

/// Runs a batch through the network. `steps[t]` holds the normalised input
/// of time step `t`, one sample per row.
pub fn forward<R: Rng + ?Sized>(
    params: &Params,
    steps: &[Array2<f64>],
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<(Array2<f64>, ForwardCache), ForecastError> {
    let batch = steps.first().map_or(0, |s| s.nrows());
    let mut seq: Vec<Array2<f64>> = steps.to_vec();
    let mut gru_caches = Vec::with_capacity(params.gru.len());
    for layer in &params.gru {
        let mut h = Array2::zeros((batch, layer.hidden_size()));
        let mut caches = Vec::with_capacity(seq.len());
        let mut outs = Vec::with_capacity(seq.len());
        for x in &seq {
            let (h_new, cache) = layer.step(x.view(), h.view())?;
            caches.push(cache);
            outs.push(h_new.clone());
            h = h_new;
        }
        gru_caches.push(caches);
        seq = outs;
    }
    let mut act = seq.pop().ok_or(ForecastError::Dimension {
        what: "input sequence",
        expected: INPUT_STEPS,
        got: 0,
    })?;
    let last = params.dense.len() - 1;
    let mut dense_inputs = Vec::with_capacity(params.dense.len());
    let mut dense_pre = Vec::with_capacity(last);
    let mut masks = Vec::with_capacity(last);
    for (i, d) in params.dense.iter().enumerate() {
        let pre = act.dot(&d.w) + &d.b;
        dense_inputs.push(act);
        if i == last {
            act = pre;
            break;
        }
        let mut out = pre.mapv(|v| v.max(0.0));
        let mask = dropout.as_mut().filter(|d| d.rate > 0.0).map(|d| {
            let keep = 1.0 - d.rate;
            Array2::from_shape_fn(out.raw_dim(), |_| if d.rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
        });
        if let Some(m) = &mask {
            out *= m;
        }
        dense_pre.push(pre);
        masks.push(mask);
        act = out;
    }
    Ok((
        act,
        ForwardCache {
            gru: gru_caches,
            dense_inputs,
            dense_pre,
            masks,
        },
    ))
}

/// Gradients of the loss with respect to every parameter, given the
/// gradient `d_out` with respect to the network output.
pub fn backward(params: &Params, cache: &ForwardCache, d_out: &Array2<f64>) -> Params {
    let mut grad = Params {
        gru: params.gru.iter().map(|l| GruLayer::zeros(l.input_size(), l.hidden_size())).collect(),
        dense: params.dense.iter().map(|d| Dense::zeros(d.w.nrows(), d.w.ncols())).collect(),
    };
    let mut delta = d_out.clone();
    for i in (0..params.dense.len()).rev() {
        if i < params.dense.len() - 1 {
            if let Some(m) = &cache.masks[i] {
                delta *= m;
            }
            ndarray::Zip::from(&mut delta)
                .and(&cache.dense_pre[i])
                .for_each(|d, &p| {
                    if p <= 0.0 {
                        *d = 0.0
                    }
                });
        }
        grad.dense[i].w = cache.dense_inputs[i].t().dot(&delta);
        grad.dense[i].b = delta.sum_axis(Axis(0));
        delta = delta.dot(&params.dense[i].w.t());
    }

    // `delta` is now the gradient at the last hidden state of the top layer.
    let steps = cache.gru.first().map_or(0, |c| c.len());
    let mut d_seq: Vec<Array2<f64>> = (0..steps).map(|_| Array2::zeros(delta.raw_dim())).collect();
    if let Some(last) = d_seq.last_mut() {
        *last = delta;
    }
    for (l, layer) in params.gru.iter().enumerate().rev() {
        let mut dh_next = Array2::zeros(d_seq[0].raw_dim());
        let mut d_inputs = Vec::with_capacity(steps);
        for t in (0..steps).rev() {
            let dh = &d_seq[t] + &dh_next;
            let (dx, dh_prev) = layer.step_backward(&cache.gru[l][t], &dh, &mut grad.gru[l]);
            d_inputs.push(dx);
            dh_next = dh_prev;
        }
        d_inputs.reverse();
        d_seq = d_inputs;
    }
    grad
}

/// Per-feature min-max scaling to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: [f64; FEATURES],
    pub span: [f64; FEATURES],
}

impl Normalizer {
    pub fn fit(rows: &[[f64; FEATURES]]) -> Self {
        let mut min = [f64::INFINITY; FEATURES];
        let mut max = [f64::NEG_INFINITY; FEATURES];
        for r in rows {
            for f in 0..FEATURES {
                min[f] = min[f].min(r[f]);
                max[f] = max[f].max(r[f]);
            }
        }
        let mut span = [1.0; FEATURES];
        for f in 0..FEATURES {
            if !min[f].is_finite() {
                min[f] = 0.0;
            } else if max[f] - min[f] > 1e-9 {
                span[f] = max[f] - min[f];
            }
        }
        Self { min, span }
    }

    pub fn normalize(&self, f: usize, v: f64) -> f64 {
        (v - self.min[f]) / self.span[f]
    }

    pub fn denormalize(&self, f: usize, v: f64) -> f64 {
        v * self.span[f] + self.min[f]
    }
}

/// Builds the per-step input matrices for a batch of histories.
pub fn batch_inputs(histories: &[&[[f64; FEATURES]]], norm: &Normalizer) -> Vec<Array2<f64>> {
    let steps = histories.first().map_or(0, |h| h.len());
    (0..steps)
        .map(|t| Array2::from_shape_fn((histories.len(), FEATURES), |(b, f)| norm.normalize(f, histories[b][t][f])))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub shape: ModelShape,
    pub params: Params,
    pub normalizer: Option<Normalizer>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: ForecastModel,
}

impl ForecastModel {
    pub fn new<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        Self {
            params: Params::xavier(&shape, rng),
            shape,
            normalizer: None,
        }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            params: Params::zeros(&shape),
            shape,
            normalizer: None,
        }
    }

    /// Predicts the next three slots. PV forecasts are clamped at zero.
    pub fn forecast(&self, history: &History) -> Result<Forecast, ForecastError> {
        let norm = self.normalizer.ok_or(ForecastError::NotReady)?;
        let steps = batch_inputs(&[&history[..]], &norm);
        let (out, _) = forward::<rand::rngs::ThreadRng>(&self.params, &steps, None)?;
        Ok(decode_row(&out, 0, &norm))
    }

    /// Batched inference over many histories.
    pub fn forecast_batch(&self, histories: &[&[[f64; FEATURES]]]) -> Result<Vec<Forecast>, ForecastError> {
        let norm = self.normalizer.ok_or(ForecastError::NotReady)?;
        if histories.is_empty() {
            return Ok(Vec::new());
        }
        let steps = batch_inputs(histories, &norm);
        let (out, _) = forward::<rand::rngs::ThreadRng>(&self.params, &steps, None)?;
        Ok((0..histories.len()).map(|b| decode_row(&out, b, &norm)).collect())
    }

    pub fn save(&self, path: &Path) -> Result<(), ForecastError> {
        let file = ModelFile {
            format: FORMAT.to_string(),
            version: FORMAT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| ForecastError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| ForecastError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ForecastError> {
        let text = std::fs::read_to_string(path).map_err(|e| ForecastError::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text).map_err(|e| ForecastError::Format(e.to_string()))?;
        if file.format != FORMAT || file.version != FORMAT_VERSION {
            return Err(ForecastError::Format(format!(
                "unsupported model file {} v{} (expected {FORMAT} v{FORMAT_VERSION})",
                file.format, file.version
            )));
        }
        let expected = Params::zeros(&file.model.shape);
        let shapes_match = expected
            .tensors()
            .iter()
            .zip(file.model.params.tensors())
            .all(|(a, b)| a.len() == b.len())
            && expected.tensors().len() == file.model.params.tensors().len();
        if !shapes_match || !file.model.params.is_finite() {
            return Err(ForecastError::Format("weights do not match the declared shape".into()));
        }
        Ok(file.model)
    }
}

fn decode_row(out: &Array2<f64>, row: usize, norm: &Normalizer) -> Forecast {
    let mut f = [[0.0; FEATURES]; OUTPUT_STEPS];
    let row = out.slice(s![row, ..]);
    for k in 0..OUTPUT_STEPS {
        for j in 0..FEATURES {
            f[k][j] = norm.denormalize(j, row[k * FEATURES + j]);
        }
        f[k][1] = f[k][1].max(0.0);
    }
    f
}

/// Repeats the latest observation for every future slot.
pub fn persistence_forecast(history: &History) -> Forecast {
    [history[INPUT_STEPS - 1]; OUTPUT_STEPS]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_shape() -> ModelShape {
        ModelShape {
            gru_layers: 2,
            hidden: 2,
            dense: vec![3],
        }
    }

    #[test]
    fn zero_model_outputs_the_final_bias() {
        let mut m = ForecastModel::zeros(ModelShape::default());
        m.normalizer = Some(Normalizer {
            min: [1.0, 0.0],
            span: [10.0, 4.0],
        });
        let last = m.params.dense.len() - 1;
        m.params.dense[last].b = Array1::from(vec![0.5, 0.25, 0.5, 0.25, 0.5, -1.0]);
        let f = m.forecast(&[[3.0, 1.0]; 6]).unwrap();
        assert_eq!(f[0], [6.0, 1.0]);
        assert_eq!(f[1], [6.0, 1.0]);
        assert_eq!(f[2], [6.0, 0.0], "negative PV clamps to zero");
    }

    #[test]
    fn output_shape_is_fixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = ForecastModel::new(ModelShape::default(), &mut rng);
        m.normalizer = Some(Normalizer::fit(&[[0.0, 0.0], [10.0, 5.0]]));
        let f = m.forecast(&[[4.0, 2.0]; 6]).unwrap();
        assert_eq!(f.len(), 3);
        assert!(f.iter().all(|r| r[1] >= 0.0));
    }

    #[test]
    fn unfitted_model_is_not_ready() {
        let m = ForecastModel::zeros(toy_shape());
        assert!(matches!(m.forecast(&[[0.0; 2]; 6]), Err(ForecastError::NotReady)));
    }

    #[test]
    fn persistence_examples() {
        let mut h = [[1.0, 1.0]; 6];
        h[5] = [4.0, 2.0];
        assert_eq!(persistence_forecast(&h), [[4.0, 2.0]; 3]);
        assert_eq!(persistence_forecast(&[[0.0; 2]; 6]), [[0.0; 2]; 3]);
    }

    #[test]
    fn normalizer_round_trip_and_constant_feature() {
        let n = Normalizer::fit(&[[2.0, 3.0], [6.0, 3.0]]);
        assert_eq!(n.span, [4.0, 1.0]);
        assert_eq!(n.normalize(0, 6.0), 1.0);
        assert_eq!(n.denormalize(0, 0.5), 4.0);
        assert_eq!(n.normalize(1, 3.0), 0.0);
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = ForecastModel::new(toy_shape(), &mut rng);
        m.normalizer = Some(Normalizer::fit(&[[0.0, 0.0], [3.0, 1.0]]));
        m.save(&path).unwrap();
        assert_eq!(ForecastModel::load(&path).unwrap(), m);

        let text = std::fs::read_to_string(&path).unwrap().replace("\"version\":1", "\"version\":99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(ForecastModel::load(&path), Err(ForecastError::Format(_))));
    }

    fn loss(params: &Params, steps: &[Array2<f64>], target: &Array2<f64>) -> f64 {
        let (out, _) = forward::<ChaCha8Rng>(params, steps, None).unwrap();
        (&out - target).mapv(|d| d * d).sum() / target.len() as f64
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut params = Params::xavier(&toy_shape(), &mut rng);
        for t in params.tensors_mut() {
            for v in t.iter_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        let steps: Vec<Array2<f64>> = (0..INPUT_STEPS)
            .map(|_| Array2::from_shape_fn((4, FEATURES), |_| rng.gen_range(0.0..1.0)))
            .collect();
        let target = Array2::from_shape_fn((4, OUTPUTS), |_| rng.gen_range(0.0..1.0));
        let (out, cache) = forward::<ChaCha8Rng>(&params, &steps, None).unwrap();
        let d_out = (&out - &target) * (2.0 / target.len() as f64);
        let grad = backward(&params, &cache, &d_out);

        let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.iter().copied()).collect();
        let eps = 1e-6;
        let mut idx = 0;
        let mut worst: f64 = 0.0;
        for ti in 0..params.tensors().len() {
            for j in 0..params.tensors()[ti].len() {
                let orig = params.tensors()[ti][j];
                params.tensors_mut()[ti][j] = orig + eps;
                let up = loss(&params, &steps, &target);
                params.tensors_mut()[ti][j] = orig - eps;
                let down = loss(&params, &steps, &target);
                params.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[idx];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max(rel);
                assert!(rel < 1e-4, "tensor {ti} entry {j}: analytic {a} numeric {numeric}");
                idx += 1;
            }
        }
        assert_eq!(idx, params.parameter_count());
        assert!(worst < 1e-4);
    }
}
