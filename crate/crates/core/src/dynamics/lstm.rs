use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::base::FeatureVector;
use crate::error::{check_dim, Error, Result};
use crate::rng::RngState;

pub const DEFAULT_STATE_DIM: usize = 512;
pub const DEFAULT_CONTEXT_LEN: usize = 4;

/// An LSTM layer over embedded frames followed by an affine head back to the
/// embedding dimension.
///
/// Flat parameter layout: `Wx (d × 4m) | Wh (m × 4m) | b (4m) | Wo (m × d) |
/// bo (d)`. Gate columns are ordered input, forget, output, candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentPredictor {
    input: usize,
    state: usize,
    context_len: usize,
    params: Vec<f64>,
}

/// Forward cache of one batch, kept for backpropagation through time.
pub(crate) struct Trace {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
    pub(crate) output: Array2<f64>,
}

impl RecurrentPredictor {
    pub fn param_count(input: usize, state: usize) -> usize {
        let g = 4 * state;
        input * g + state * g + g + state * input + input
    }

    pub fn zeros(input: usize, state: usize, context_len: usize) -> Self {
        Self {
            input,
            state,
            context_len,
            params: vec![0.0; Self::param_count(input, state)],
        }
    }

    /// Uniform `±1/√m` weights, forget-gate bias 1, zero head bias.
    pub fn random(input: usize, state: usize, context_len: usize, rng: &mut RngState) -> Result<Self> {
        if state <= input {
            return Err(Error::config(format!(
                "state dimension {state} must exceed the embedding dimension {input}"
            )));
        }
        let mut p = Self::zeros(input, state, context_len);
        let a = 1.0 / (state as f64).sqrt();
        p.wx_mut().mapv_inplace(|_| rng.uniform_range(-a, a));
        p.wh_mut().mapv_inplace(|_| rng.uniform_range(-a, a));
        p.bias_mut().slice_mut(s![state..2 * state]).fill(1.0);
        p.wo_mut().mapv_inplace(|_| rng.uniform_range(-a, a));
        Ok(p)
    }

    pub fn from_params(input: usize, state: usize, context_len: usize, params: Vec<f64>) -> Result<Self> {
        check_dim(Self::param_count(input, state), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("predictor parameters must be finite"));
        }
        Ok(Self {
            input,
            state,
            context_len,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn state_dim(&self) -> usize {
        self.state
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 5] {
        let (d, m) = (self.input, self.state);
        let wx = 0;
        let wh = wx + d * 4 * m;
        let b = wh + m * 4 * m;
        let wo = b + 4 * m;
        let bo = wo + m * d;
        [wx, wh, b, wo, bo]
    }

    fn wx(&self) -> ArrayView2<'_, f64> {
        let [a, b, ..] = self.offsets();
        ArrayView2::from_shape((self.input, 4 * self.state), &self.params[a..b]).unwrap()
    }

    fn wh(&self) -> ArrayView2<'_, f64> {
        let [_, a, b, ..] = self.offsets();
        ArrayView2::from_shape((self.state, 4 * self.state), &self.params[a..b]).unwrap()
    }

    fn bias(&self) -> ArrayView1<'_, f64> {
        let [_, _, a, b, _] = self.offsets();
        ArrayView1::from(&self.params[a..b])
    }

    fn wo(&self) -> ArrayView2<'_, f64> {
        let [.., a, b] = self.offsets();
        ArrayView2::from_shape((self.state, self.input), &self.params[a..b]).unwrap()
    }

    pub fn head_bias(&self) -> ArrayView1<'_, f64> {
        let [.., a] = self.offsets();
        ArrayView1::from(&self.params[a..])
    }

    fn wx_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (d, m) = (self.input, self.state);
        let [a, b, ..] = self.offsets();
        ArrayViewMut2::from_shape((d, 4 * m), &mut self.params[a..b]).unwrap()
    }

    fn wh_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let m = self.state;
        let [_, a, b, ..] = self.offsets();
        ArrayViewMut2::from_shape((m, 4 * m), &mut self.params[a..b]).unwrap()
    }

    fn bias_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let [_, _, a, b, _] = self.offsets();
        ArrayViewMut1::from(&mut self.params[a..b])
    }

    fn wo_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (d, m) = (self.input, self.state);
        let [.., a, b] = self.offsets();
        ArrayViewMut2::from_shape((m, d), &mut self.params[a..b]).unwrap()
    }

    pub fn head_bias_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let [.., a] = self.offsets();
        ArrayViewMut1::from(&mut self.params[a..])
    }

    /// Runs the cell over `steps[t]` (each `B × d`) from a zero state.
    pub(crate) fn forward_batch(&self, steps: &[ArrayView2<'_, f64>]) -> Result<Trace> {
        let first = steps.first().ok_or_else(|| Error::degenerate("empty context"))?;
        let b = first.nrows();
        let m = self.state;
        let mut h = Array2::zeros((b, m));
        let mut c = Array2::zeros((b, m));
        let mut trace = Trace {
            xs: Vec::with_capacity(steps.len()),
            hs: vec![h.clone()],
            cs: vec![c.clone()],
            gates: Vec::with_capacity(steps.len()),
            output: Array2::zeros((0, 0)),
        };
        for x in steps {
            check_dim(self.input, x.ncols())?;
            check_dim(b, x.nrows())?;
            let mut z = x.dot(&self.wx());
            ndarray::linalg::general_mat_mul(1.0, &h, &self.wh(), 1.0, &mut z);
            z += &self.bias();
            for mut row in z.axis_iter_mut(Axis(0)) {
                for v in row.slice_mut(s![..3 * m]).iter_mut() {
                    *v = sigmoid(*v);
                }
                for v in row.slice_mut(s![3 * m..]).iter_mut() {
                    *v = v.tanh();
                }
            }
            let (gi, gf, go, gg) = (z.slice(s![.., ..m]), z.slice(s![.., m..2 * m]), z.slice(s![.., 2 * m..3 * m]), z.slice(s![.., 3 * m..]));
            c = &gf * &c + &gi * &gg;
            h = &go * &c.mapv(f64::tanh);
            trace.xs.push(x.to_owned());
            trace.gates.push(z);
            trace.hs.push(h.clone());
            trace.cs.push(c.clone());
        }
        let mut y = h.dot(&self.wo());
        y += &self.head_bias();
        trace.output = y;
        Ok(trace)
    }

    /// Backpropagates `d_out` (gradient w.r.t. the head outputs) through the
    /// head and every recurrent step; accumulates into `grad`.
    pub(crate) fn backward_batch(&self, trace: &Trace, d_out: ArrayView2<'_, f64>, grad: &mut [f64]) {
        let m = self.state;
        let (d, steps) = (self.input, trace.xs.len());
        let [o_wx, o_wh, o_b, o_wo, o_bo] = self.offsets();
        {
            let h_last = &trace.hs[steps];
            let mut gwo = ArrayViewMut2::from_shape((m, d), &mut grad[o_wo..o_bo]).unwrap();
            ndarray::linalg::general_mat_mul(1.0, &h_last.t(), &d_out, 1.0, &mut gwo);
            let mut gbo = ArrayViewMut1::from(&mut grad[o_bo..]);
            gbo += &d_out.sum_axis(Axis(0));
        }
        let mut dh = d_out.dot(&self.wo().t());
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let b = dh.nrows();
        for t in (0..steps).rev() {
            let z = &trace.gates[t];
            let c = &trace.cs[t + 1];
            let c_prev = &trace.cs[t];
            let mut dz = Array2::zeros((b, 4 * m));
            for r in 0..b {
                for k in 0..m {
                    let (i, f, o, g) = (z[[r, k]], z[[r, m + k]], z[[r, 2 * m + k]], z[[r, 3 * m + k]]);
                    let tc = c[[r, k]].tanh();
                    let dhk = dh[[r, k]];
                    let dck = dc[[r, k]] + dhk * o * (1.0 - tc * tc);
                    dz[[r, k]] = dck * g * i * (1.0 - i);
                    dz[[r, m + k]] = dck * c_prev[[r, k]] * f * (1.0 - f);
                    dz[[r, 2 * m + k]] = dhk * tc * o * (1.0 - o);
                    dz[[r, 3 * m + k]] = dck * i * (1.0 - g * g);
                    dc[[r, k]] = dck * f;
                }
            }
            {
                let mut gwx = ArrayViewMut2::from_shape((d, 4 * m), &mut grad[o_wx..o_wh]).unwrap();
                ndarray::linalg::general_mat_mul(1.0, &trace.xs[t].t(), &dz, 1.0, &mut gwx);
            }
            {
                let mut gwh = ArrayViewMut2::from_shape((m, 4 * m), &mut grad[o_wh..o_b]).unwrap();
                ndarray::linalg::general_mat_mul(1.0, &trace.hs[t].t(), &dz, 1.0, &mut gwh);
            }
            {
                let mut gb = ArrayViewMut1::from(&mut grad[o_b..o_wo]);
                gb += &dz.sum_axis(Axis(0));
            }
            if t > 0 {
                dh = dz.dot(&self.wh().t());
            }
        }
    }

    /// Mean squared-error loss over a batch of contexts and its gradient.
    /// `contexts[t]` is the `B × d` block of step `t`; `targets` is `B × d`.
    pub fn loss_and_grad(&self, contexts: &[ArrayView2<'_, f64>], targets: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>)> {
        let trace = self.forward_batch(contexts)?;
        check_dim(trace.output.nrows(), targets.nrows())?;
        check_dim(self.input, targets.ncols())?;
        let b = targets.nrows() as f64;
        let diff = &trace.output - &targets;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / b;
        let d_out = diff.mapv(|v| 2.0 * v / b);
        let mut grad = vec![0.0; self.params.len()];
        self.backward_batch(&trace, d_out.view(), &mut grad);
        Ok((loss, grad))
    }

    pub fn batch_loss(&self, contexts: &[ArrayView2<'_, f64>], targets: ArrayView2<'_, f64>) -> Result<f64> {
        let trace = self.forward_batch(contexts)?;
        check_dim(trace.output.nrows(), targets.nrows())?;
        let diff = &trace.output - &targets;
        Ok(diff.iter().map(|v| v * v).sum::<f64>() / targets.nrows() as f64)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Runs the predictor over one context (rows are frames, oldest first).
pub fn rnn_forward(pred: &RecurrentPredictor, context: ArrayView2<'_, f64>) -> Result<FeatureVector> {
    if context.nrows() == 0 {
        return Err(Error::degenerate("context must hold at least one frame"));
    }
    check_dim(pred.input_dim(), context.ncols())?;
    let steps: Vec<ArrayView2<'_, f64>> = (0..context.nrows()).map(|t| context.slice(s![t..t + 1, ..])).collect();
    let trace = pred.forward_batch(&steps)?;
    Ok(FeatureVector::from_vec_unchecked(trace.output.row(0).to_vec()))
}

/// `‖prediction − target‖²`.
pub fn rnn_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    crate::base::squared_l2(prediction, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_output_head_bias() {
        let mut p = RecurrentPredictor::zeros(3, 5, 4);
        p.head_bias_mut().assign(&ndarray::array![0.5, -1.0, 2.0]);
        let mut rng = RngState::new(1);
        let ctx = Array2::from_shape_fn((4, 3), |_| rng.normal());
        assert_eq!(rnn_forward(&p, ctx.view()).unwrap().as_slice(), &[0.5, -1.0, 2.0]);
    }

    #[test]
    fn defaults() {
        assert_eq!(DEFAULT_CONTEXT_LEN, 4);
        assert_eq!(DEFAULT_STATE_DIM, 512);
        assert!(DEFAULT_STATE_DIM > crate::embed::DEFAULT_EMBED_DIM);
    }

    #[test]
    fn state_must_exceed_input() {
        let mut rng = RngState::new(0);
        assert!(RecurrentPredictor::random(8, 8, 4, &mut rng).is_err());
    }

    #[test]
    fn order_matters_for_some_random_model() {
        let mut rng = RngState::new(5);
        let mut differs = false;
        for _ in 0..20 {
            let p = RecurrentPredictor::random(4, 9, 4, &mut rng).unwrap();
            let ctx = Array2::from_shape_fn((4, 4), |_| rng.normal());
            let mut rev = ctx.clone();
            rev.invert_axis(Axis(0));
            let a = rnn_forward(&p, ctx.view()).unwrap();
            let b = rnn_forward(&p, rev.view()).unwrap();
            if a.iter().zip(b.iter()).any(|(x, y)| (x - y).abs() > 1e-9) {
                differs = true;
                break;
            }
        }
        assert!(differs);
    }

    #[test]
    fn rnn_loss_cases() {
        assert_eq!(rnn_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rnn_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert!(rnn_loss(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let p = RecurrentPredictor::zeros(3, 5, 4);
        let ctx = Array2::zeros((4, 2));
        assert!(matches!(rnn_forward(&p, ctx.view()), Err(Error::Dimension { .. })));
        let empty = Array2::zeros((0, 3));
        assert!(rnn_forward(&p, empty.view()).is_err());
    }
}
