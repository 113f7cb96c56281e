//! A single GRU layer with batched forward and backward passes.
//!
//! Gate weights are stored side by side, columns ordered update | reset |
//! candidate, so one matrix product yields all three pre-activations.

use crate::ForecastError;
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GruLayer {
    /// Input weights, `input × 3·hidden`.
    pub w: Array2<f64>,
    /// Recurrent weights, `hidden × 3·hidden`.
    pub u: Array2<f64>,
    /// Biases, `3·hidden`.
    pub b: Array1<f64>,
}

/// Activations of one time step kept for back-propagation.
#[derive(Clone, Debug)]
pub struct StepCache {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    pub z: Array2<f64>,
    pub r: Array2<f64>,
    pub candidate: Array2<f64>,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl GruLayer {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Array2::zeros((input, 3 * hidden)),
            u: Array2::zeros((hidden, 3 * hidden)),
            b: Array1::zeros(3 * hidden),
        }
    }

    /// Xavier-uniform weights and zero biases.
    pub fn xavier<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut layer = Self::zeros(input, hidden);
        let wl = (6.0 / (input + hidden) as f64).sqrt();
        let ul = (6.0 / (2 * hidden) as f64).sqrt();
        layer.w.mapv_inplace(|_| rng.gen_range(-wl..wl));
        layer.u.mapv_inplace(|_| rng.gen_range(-ul..ul));
        layer
    }

    pub fn input_size(&self) -> usize {
        self.w.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.u.nrows()
    }

    fn check(&self, x: &ArrayView2<f64>, h: &ArrayView2<f64>) -> Result<(), ForecastError> {
        if x.ncols() != self.input_size() {
            return Err(ForecastError::Dimension {
                what: "GRU input",
                expected: self.input_size(),
                got: x.ncols(),
            });
        }
        if h.ncols() != self.hidden_size() || h.nrows() != x.nrows() {
            return Err(ForecastError::Dimension {
                what: "GRU hidden state",
                expected: self.hidden_size(),
                got: h.ncols(),
            });
        }
        Ok(())
    }

    /// One time step for a batch: rows of `x` and `h` are samples.
    pub fn step(&self, x: ArrayView2<f64>, h: ArrayView2<f64>) -> Result<(Array2<f64>, StepCache), ForecastError> {
        self.check(&x, &h)?;
        let n = self.hidden_size();
        let mut a = x.dot(&self.w) + &self.b;
        {
            let mut gates = a.slice_mut(s![.., ..2 * n]);
            gates += &h.dot(&self.u.slice(s![.., ..2 * n]));
            gates.mapv_inplace(sigmoid);
        }
        let z = a.slice(s![.., ..n]).to_owned();
        let r = a.slice(s![.., n..2 * n]).to_owned();
        let rh = &r * &h;
        let mut candidate = a.slice(s![.., 2 * n..]).to_owned();
        candidate += &rh.dot(&self.u.slice(s![.., 2 * n..]));
        candidate.mapv_inplace(f64::tanh);
        let mut h_new = Array2::zeros(h.raw_dim());
        Zip::from(&mut h_new)
            .and(&z)
            .and(&h)
            .and(&candidate)
            .for_each(|o, &z, &h, &c| *o = (1.0 - z) * h + z * c);
        let cache = StepCache {
            x: x.to_owned(),
            h_prev: h.to_owned(),
            z,
            r,
            candidate,
        };
        Ok((h_new, cache))
    }

    /// Back-propagates one step. `dh` is the loss gradient with respect to
    /// this step's output; gradients of the parameters are accumulated into
    /// `grad`. Returns the gradients with respect to the step input and the
    /// previous hidden state.
    pub fn step_backward(&self, cache: &StepCache, dh: &Array2<f64>, grad: &mut GruLayer) -> (Array2<f64>, Array2<f64>) {
        let n = self.hidden_size();
        let StepCache {
            x,
            h_prev,
            z,
            r,
            candidate,
        } = cache;
        let mut da = Array2::zeros((dh.nrows(), 3 * n));
        let mut dh_prev = dh * &z.mapv(|z| 1.0 - z);

        // Candidate branch.
        let mut da_h = dh * z;
        Zip::from(&mut da_h).and(candidate).for_each(|d, &c| *d *= 1.0 - c * c);
        let rh = r * h_prev;
        let u_h = self.u.slice(s![.., 2 * n..]);
        grad.u.slice_mut(s![.., 2 * n..]).scaled_add(1.0, &rh.t().dot(&da_h));
        let d_rh = da_h.dot(&u_h.t());
        dh_prev += &(&d_rh * r);

        // Update and reset gates.
        Zip::from(da.slice_mut(s![.., ..n]))
            .and(dh)
            .and(candidate)
            .and(h_prev)
            .and(z)
            .for_each(|d, &dh, &c, &hp, &z| *d = dh * (c - hp) * z * (1.0 - z));
        Zip::from(da.slice_mut(s![.., n..2 * n]))
            .and(&d_rh)
            .and(h_prev)
            .and(r)
            .for_each(|d, &g, &hp, &r| *d = g * hp * r * (1.0 - r));
        da.slice_mut(s![.., 2 * n..]).assign(&da_h);

        let da_zr = da.slice(s![.., ..2 * n]);
        grad.u.slice_mut(s![.., ..2 * n]).scaled_add(1.0, &h_prev.t().dot(&da_zr));
        dh_prev += &da_zr.dot(&self.u.slice(s![.., ..2 * n]).t());

        grad.w.scaled_add(1.0, &x.t().dot(&da));
        grad.b.scaled_add(1.0, &da.sum_axis(Axis(0)));
        let dx = da.dot(&self.w.t());
        (dx, dh_prev)
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut [f64]; 3] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn tensors(&self) -> [&[f64]; 3] {
        [
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }
}

/// Single-sample cell update: returns the next hidden state.
pub fn gru_cell(x: &[f64], h: &[f64], p: &GruLayer) -> Result<Vec<f64>, ForecastError> {
    let xv = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let hv = ArrayView2::from_shape((1, h.len()), h).expect("row vector");
    let (out, _) = p.step(xv, hv)?;
    Ok(out.into_raw_vec_and_offset().0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_zero_state() {
        let p = GruLayer::zeros(3, 4);
        assert_eq!(gru_cell(&[1.0, -2.0, 0.5], &[0.0; 4], &p).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let p = GruLayer::zeros(2, 3);
        let h = [0.8, -0.4, 2.0];
        let out = gru_cell(&[0.3, 0.7], &h, &p).unwrap();
        for (o, v) in out.iter().zip(h) {
            assert!((o - 0.5 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_update_gate_takes_the_candidate() {
        let mut p = GruLayer::zeros(1, 1);
        p.b[0] = 40.0;
        p.b[2] = 0.7;
        let out = gru_cell(&[0.0], &[0.9], &p).unwrap();
        assert!((out[0] - 0.7f64.tanh()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = GruLayer::zeros(2, 3);
        assert!(matches!(gru_cell(&[1.0], &[0.0; 3], &p), Err(ForecastError::Dimension { .. })));
        assert!(matches!(gru_cell(&[1.0, 2.0], &[0.0; 2], &p), Err(ForecastError::Dimension { .. })));
    }

    proptest! {
        #[test]
        fn output_is_a_convex_combination(
            seed in 0u64..1000,
            x in proptest::collection::vec(-3.0f64..3.0, 2),
            h in proptest::collection::vec(-2.0f64..2.0, 3),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = GruLayer::xavier(2, 3, &mut rng);
            p.b.mapv_inplace(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
            let xv = ArrayView2::from_shape((1, 2), &x).unwrap();
            let hv = ArrayView2::from_shape((1, 3), &h).unwrap();
            let (out, cache) = p.step(xv, hv).unwrap();
            for i in 0..3 {
                let c = cache.candidate[[0, i]];
                let lo = h[i].min(c) - 1e-12;
                let hi = h[i].max(c) + 1e-12;
                prop_assert!(out[[0, i]] >= lo && out[[0, i]] <= hi);
                prop_assert!(out[[0, i]].abs() <= h[i].abs().max(1.0) + 1e-12);
            }
        }
    }
}
