use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::base::{FeatureVector, NORM_EPS};
use crate::error::{check_dim, Error, Result};
use crate::par;
use crate::rng::RngState;

use super::Embedder;

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_EMBED_DIM: usize = 128;

/// Rows per forward/backward block; fixed so results do not depend on the
/// number of workers.
const BLOCK_ROWS: usize = 192;

/// Two-layer rectified encoder with an l2-normalized output.
///
/// Parameters live in one flat vector laid out as `W1 (f×h) | b1 (h) |
/// W2 (h×d) | b2 (d)`, row-major, so optimizer state and finite-difference
/// checks can treat the model as a plain point in parameter space.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel {
    input: usize,
    hidden: usize,
    output: usize,
    params: Vec<f64>,
}

impl EmbeddingModel {
    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        input * hidden + hidden + hidden * output + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            params: vec![0.0; Self::param_count(input, hidden, output)],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn random(input: usize, hidden: usize, output: usize, rng: &mut RngState) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + output) as f64).sqrt();
        m.w1_mut().mapv_inplace(|_| rng.uniform_range(-a1, a1));
        m.w2_mut().mapv_inplace(|_| rng.uniform_range(-a2, a2));
        m
    }

    pub fn from_params(input: usize, hidden: usize, output: usize, params: Vec<f64>) -> Result<Self> {
        check_dim(Self::param_count(input, hidden, output), params.len())?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::degenerate("embedding parameters must be finite"));
        }
        Ok(Self {
            input,
            hidden,
            output,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self) -> [usize; 4] {
        let w1 = self.input * self.hidden;
        let b1 = w1 + self.hidden;
        let w2 = b1 + self.hidden * self.output;
        [0, w1, b1, w2]
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        let [a, b, ..] = self.offsets();
        ArrayView2::from_shape((self.input, self.hidden), &self.params[a..b]).unwrap()
    }

    pub fn b1(&self) -> ArrayView1<'_, f64> {
        let [_, b, c, _] = self.offsets();
        ArrayView1::from(&self.params[b..c])
    }

    pub fn w2(&self) -> ArrayView2<'_, f64> {
        let [_, _, c, d] = self.offsets();
        ArrayView2::from_shape((self.hidden, self.output), &self.params[c..d]).unwrap()
    }

    pub fn b2(&self) -> ArrayView1<'_, f64> {
        let [.., d] = self.offsets();
        ArrayView1::from(&self.params[d..])
    }

    pub fn w1_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (f, h) = (self.input, self.hidden);
        let [a, b, ..] = self.offsets();
        ArrayViewMut2::from_shape((f, h), &mut self.params[a..b]).unwrap()
    }

    pub fn b1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let [_, b, c, _] = self.offsets();
        ArrayViewMut1::from(&mut self.params[b..c])
    }

    pub fn w2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        let (h, d) = (self.hidden, self.output);
        let [_, _, c, e] = self.offsets();
        ArrayViewMut2::from_shape((h, d), &mut self.params[c..e]).unwrap()
    }

    pub fn b2_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        let [.., d] = self.offsets();
        ArrayViewMut1::from(&mut self.params[d..])
    }

    /// `normalize(W2ᵀ relu(W1ᵀ x + b1) + b2)` for a single input.
    pub fn embed_forward(&self, x: &[f64]) -> Result<FeatureVector> {
        check_dim(self.input, x.len())?;
        let xv = ArrayView2::from_shape((1, x.len()), x).unwrap();
        let out = self.forward_block(xv)?;
        Ok(FeatureVector::from_vec_unchecked(out.embedded.row(0).to_vec()))
    }

    fn forward_block(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        let mut pre1 = x.dot(&self.w1());
        pre1 += &self.b1();
        let act = pre1.mapv(|v| v.max(0.0));
        let mut raw = act.dot(&self.w2());
        raw += &self.b2();
        let mut norms = Array1::zeros(raw.nrows());
        let mut embedded = raw;
        for (i, mut row) in embedded.axis_iter_mut(Axis(0)).enumerate() {
            let n = row.dot(&row).sqrt();
            if !(n >= NORM_EPS) {
                return Err(Error::degenerate(format!(
                    "pre-normalization output of row {i} has norm {n:e}"
                )));
            }
            row /= n;
            norms[i] = n;
        }
        Ok(Forward {
            pre1,
            act,
            norms,
            embedded,
        })
    }

    /// Accumulates into `grad` the parameter gradient for upstream gradient
    /// `d_emb` (with respect to the normalized outputs) of inputs `x`.
    fn backward_block(&self, x: ArrayView2<'_, f64>, fwd: &Forward, d_emb: ArrayView2<'_, f64>, grad: &mut [f64]) {
        // d raw = (I - e eᵀ) d_e / ‖raw‖
        let mut d_raw = d_emb.to_owned();
        for i in 0..d_raw.nrows() {
            let e = fwd.embedded.row(i);
            let proj = e.dot(&d_emb.row(i));
            let n = fwd.norms[i];
            let mut r = d_raw.row_mut(i);
            r.scaled_add(-proj, &e);
            r /= n;
        }
        let d_act = d_raw.dot(&self.w2().t());
        let d_pre1 = ndarray::Zip::from(&d_act)
            .and(&fwd.pre1)
            .map_collect(|&g, &p| if p > 0.0 { g } else { 0.0 });

        let [o_w1, o_b1, o_w2, o_b2] = self.offsets();
        let (f, h, d) = (self.input, self.hidden, self.output);
        let mut gw1 = ArrayViewMut2::from_shape((f, h), &mut grad[o_w1..o_b1]).unwrap();
        ndarray::linalg::general_mat_mul(1.0, &x.t(), &d_pre1, 1.0, &mut gw1);
        let mut gb1 = ArrayViewMut1::from(&mut grad[o_b1..o_w2]);
        gb1 += &d_pre1.sum_axis(Axis(0));
        let mut gw2 = ArrayViewMut2::from_shape((h, d), &mut grad[o_w2..o_b2]).unwrap();
        ndarray::linalg::general_mat_mul(1.0, &fwd.act.t(), &d_raw, 1.0, &mut gw2);
        let mut gb2 = ArrayViewMut1::from(&mut grad[o_b2..]);
        gb2 += &d_raw.sum_axis(Axis(0));
    }

    /// Mean triplet loss over a batch and its exact parameter gradient.
    pub fn triplet_grad(&self, anchors: ArrayView2<'_, f64>, positives: ArrayView2<'_, f64>, negatives: ArrayView2<'_, f64>, margin: f64) -> Result<(f64, Vec<f64>)> {
        let t = anchors.nrows();
        check_dim(t, positives.nrows())?;
        check_dim(t, negatives.nrows())?;
        for m in [anchors, positives, negatives] {
            check_dim(self.input, m.ncols())?;
        }
        if t == 0 {
            return Err(Error::degenerate("empty triplet batch"));
        }
        let ranges = par::blocks(t, BLOCK_ROWS / 3);
        let parts = par::try_map(&ranges, |&(lo, hi)| -> Result<(f64, Vec<f64>)> {
            let rows = hi - lo;
            let mut x = Array2::zeros((3 * rows, self.input));
            x.slice_mut(s![..rows, ..]).assign(&anchors.slice(s![lo..hi, ..]));
            x.slice_mut(s![rows..2 * rows, ..]).assign(&positives.slice(s![lo..hi, ..]));
            x.slice_mut(s![2 * rows.., ..]).assign(&negatives.slice(s![lo..hi, ..]));
            let fwd = self.forward_block(x.view())?;
            let e = &fwd.embedded;
            let mut d_emb = Array2::zeros(e.raw_dim());
            let mut loss = 0.0;
            let scale = 1.0 / t as f64;
            for i in 0..rows {
                let (ea, ep, en) = (e.row(i), e.row(rows + i), e.row(2 * rows + i));
                let l = hinge(ea, ep, en, margin);
                if l > 0.0 {
                    loss += l;
                    // ∂/∂ea = 2(en − ep), ∂/∂ep = 2(ep − ea), ∂/∂en = 2(ea − en)
                    for k in 0..self.output {
                        d_emb[[i, k]] = 2.0 * (en[k] - ep[k]) * scale;
                        d_emb[[rows + i, k]] = 2.0 * (ep[k] - ea[k]) * scale;
                        d_emb[[2 * rows + i, k]] = 2.0 * (ea[k] - en[k]) * scale;
                    }
                }
            }
            let mut grad = vec![0.0; self.params.len()];
            if loss > 0.0 {
                self.backward_block(x.view(), &fwd, d_emb.view(), &mut grad);
            }
            Ok((loss, grad))
        })?;
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        for (l, g) in parts {
            loss += l;
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        Ok((loss / t as f64, grad))
    }

    /// Mean triplet loss, forward only.
    pub fn triplet_batch_loss(&self, anchors: ArrayView2<'_, f64>, positives: ArrayView2<'_, f64>, negatives: ArrayView2<'_, f64>, margin: f64) -> Result<f64> {
        let ea = self.embed_frames(anchors)?;
        let ep = self.embed_frames(positives)?;
        let en = self.embed_frames(negatives)?;
        let t = ea.nrows();
        let total: f64 = (0..t).map(|i| hinge(ea.row(i), ep.row(i), en.row(i), margin)).sum();
        Ok(total / t as f64)
    }
}

impl Embedder for EmbeddingModel {
    fn input_dim(&self) -> usize {
        self.input
    }

    fn embed_frames(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim(self.input, frames.ncols())?;
        let ranges = par::blocks(frames.nrows(), BLOCK_ROWS);
        let parts = par::try_map(&ranges, |&(lo, hi)| {
            self.forward_block(frames.slice(s![lo..hi, ..])).map(|f| f.embedded)
        })?;
        let mut out = Array2::zeros((frames.nrows(), self.output));
        for (&(lo, hi), part) in ranges.iter().zip(parts) {
            out.slice_mut(s![lo..hi, ..]).assign(&part);
        }
        Ok(out)
    }
}

struct Forward {
    pre1: Array2<f64>,
    act: Array2<f64>,
    norms: Array1<f64>,
    embedded: Array2<f64>,
}

fn hinge(ea: ArrayView1<'_, f64>, ep: ArrayView1<'_, f64>, en: ArrayView1<'_, f64>, margin: f64) -> f64 {
    let dp: f64 = ea.iter().zip(ep.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let dn: f64 = ea.iter().zip(en.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (dp - dn + margin).max(0.0)
}

/// `max(0, ‖pa − pp‖² − ‖pa − pn‖² + δ)`.
pub fn triplet_loss(pa: &[f64], pp: &[f64], pn: &[f64], delta: f64) -> Result<f64> {
    check_dim(pa.len(), pp.len())?;
    check_dim(pa.len(), pn.len())?;
    if !(delta > 0.0) {
        return Err(Error::config(format!("margin must be positive, got {delta}")));
    }
    Ok(hinge(ArrayView1::from(pa), ArrayView1::from(pp), ArrayView1::from(pn), delta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_head_gives_basis_vector() {
        let mut rng = RngState::new(1);
        let mut m = EmbeddingModel::random(5, 7, 4, &mut rng);
        m.w2_mut().fill(0.0);
        m.b2_mut().fill(0.0);
        m.b2_mut()[0] = 1.0;
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
            assert_eq!(m.embed_forward(&x).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn outputs_have_unit_norm() {
        let mut rng = RngState::new(2);
        let m = EmbeddingModel::random(16, 32, 8, &mut rng);
        let x = Array2::from_shape_fn((1000, 16), |_| rng.normal() * 3.0);
        let e = m.embed_frames(x.view()).unwrap();
        for row in e.rows() {
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn batch_and_single_forward_agree() {
        let mut rng = RngState::new(3);
        let m = EmbeddingModel::random(6, 10, 4, &mut rng);
        let x = Array2::from_shape_fn((400, 6), |_| rng.normal());
        let e = m.embed_frames(x.view()).unwrap();
        for i in [0, 191, 192, 399] {
            let single = m.embed_forward(x.row(i).as_slice().unwrap()).unwrap();
            for k in 0..4 {
                assert!((single[k] - e[[i, k]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_model_is_degenerate() {
        let m = EmbeddingModel::zeros(3, 4, 2);
        assert!(matches!(m.embed_forward(&[1.0, 2.0, 3.0]), Err(Error::DegenerateInput(_))));
        assert!(matches!(m.embed_forward(&[1.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn default_dims() {
        assert_eq!(DEFAULT_EMBED_DIM, 128);
        assert_eq!(DEFAULT_HIDDEN, 256);
    }

    #[test]
    fn triplet_loss_cases() {
        assert_eq!(triplet_loss(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 0.2).unwrap(), 0.0);
        let l = triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[0.0, 1.0], 0.2).unwrap();
        assert!((l - 0.2).abs() < 1e-15);
        // distances 2 and 4
        assert_eq!(triplet_loss(&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.0], 0.2).unwrap(), 0.0);
        assert!(triplet_loss(&[1.0], &[1.0, 0.0], &[0.0], 0.2).is_err());
    }

    #[test]
    fn inactive_hinge_gives_zero_gradient() {
        let mut rng = RngState::new(4);
        let m = EmbeddingModel::random(3, 5, 2, &mut rng);
        let a = Array2::from_shape_vec((1, 3), vec![1.0, 0.5, -0.2]).unwrap();
        let far = Array2::from_shape_vec((1, 3), vec![-40.0, 30.0, 25.0]).unwrap();
        let (ea, en) = (m.embed_forward(a.row(0).as_slice().unwrap()).unwrap(), m.embed_forward(far.row(0).as_slice().unwrap()).unwrap());
        let dn = crate::base::sq_dist(&ea, &en);
        // positive = anchor, so the hinge is inactive when dn >= margin
        let margin = dn * 0.5;
        assert!(margin > 0.0);
        let (loss, grad) = m.triplet_grad(a.view(), a.view(), far.view(), margin).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_singles() {
        let mut rng = RngState::new(5);
        let m = EmbeddingModel::random(4, 6, 3, &mut rng);
        let t = 5;
        let gen = |rng: &mut RngState| Array2::from_shape_fn((t, 4), |_| rng.normal());
        let (a, p, n) = (gen(&mut rng), gen(&mut rng), gen(&mut rng));
        let (loss, grad) = m.triplet_grad(a.view(), p.view(), n.view(), 0.5).unwrap();
        let mut mean = vec![0.0; grad.len()];
        let mut mean_loss = 0.0;
        for i in 0..t {
            let r = s![i..i + 1, ..];
            let (l, g) = m.triplet_grad(a.slice(r), p.slice(r), n.slice(r), 0.5).unwrap();
            mean_loss += l / t as f64;
            for (acc, v) in mean.iter_mut().zip(g) {
                *acc += v / t as f64;
            }
        }
        assert!((loss - mean_loss).abs() < 1e-12);
        for (x, y) in grad.iter().zip(&mean) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
