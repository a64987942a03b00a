//! One-hidden-layer ReLU classifier with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alloc::SoftLabel;

/// Network weights. With zero hidden units the output layer reads the
/// features directly and the model is a linear softmax.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

impl ClassifierParams {
    pub fn zeros(input_dim: usize, hidden: usize, classes: usize) -> Self {
        let width = if hidden == 0 { input_dim } else { hidden };
        Self {
            hidden_weights: Array2::zeros((hidden, input_dim)),
            hidden_bias: Array1::zeros(hidden),
            output_weights: Array2::zeros((classes, width)),
            output_bias: Array1::zeros(classes),
        }
    }

    /// He-normal weights, zero biases.
    pub fn init<R: Rng>(input_dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(input_dim, hidden, classes);
        let hidden_scale = (2.0 / input_dim as f64).sqrt();
        p.hidden_weights.mapv_inplace(|_| {
            let g: f64 = StandardNormal.sample(rng);
            hidden_scale * g
        });
        let out_scale = (2.0 / p.output_weights.ncols() as f64).sqrt();
        p.output_weights.mapv_inplace(|_| {
            let g: f64 = StandardNormal.sample(rng);
            out_scale * g
        });
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            hidden_weights: Array2::zeros(self.hidden_weights.raw_dim()),
            hidden_bias: Array1::zeros(self.hidden_bias.raw_dim()),
            output_weights: Array2::zeros(self.output_weights.raw_dim()),
            output_bias: Array1::zeros(self.output_bias.raw_dim()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.output_bias.len()
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Flat views of every tensor, paired with whether it is a weight
    /// matrix (as opposed to a bias).
    pub fn tensors_mut(&mut self) -> [(&mut [f64], bool); 4] {
        [
            (
                self.hidden_weights.as_slice_mut().expect("standard layout"),
                true,
            ),
            (
                self.hidden_bias.as_slice_mut().expect("standard layout"),
                false,
            ),
            (
                self.output_weights.as_slice_mut().expect("standard layout"),
                true,
            ),
            (
                self.output_bias.as_slice_mut().expect("standard layout"),
                false,
            ),
        ]
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [
            self.hidden_weights.as_slice().expect("standard layout"),
            self.hidden_bias.as_slice().expect("standard layout"),
            self.output_weights.as_slice().expect("standard layout"),
            self.output_bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn hidden(&self, x: ArrayView1<'_, f64>) -> (Array1<f64>, Array1<f64>) {
        if self.hidden_units() == 0 {
            return (x.to_owned(), x.to_owned());
        }
        let pre = self.hidden_weights.dot(&x) + &self.hidden_bias;
        let act = pre.mapv(|v| v.max(0.0));
        (pre, act)
    }

    fn logits(&self, act: &Array1<f64>) -> Array1<f64> {
        self.output_weights.dot(act) + &self.output_bias
    }
}

fn log_softmax(logits: &Array1<f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.mapv(|l| (l - m).exp()).sum().ln();
    logits.mapv(|l| l - lse)
}

/// Class probabilities for one input.
pub fn forward(params: &ClassifierParams, x: ArrayView1<'_, f64>) -> Array1<f64> {
    let (_, act) = params.hidden(x);
    log_softmax(&params.logits(&act)).mapv(f64::exp)
}

/// Row-wise class probabilities.
pub fn forward_batch(params: &ClassifierParams, x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), params.num_classes()));
    for (row, mut o) in x.outer_iter().zip(out.outer_iter_mut()) {
        o.assign(&forward(params, row));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub labeled: f64,
    pub unlabeled: f64,
    /// `labeled + lambda * unlabeled`
    pub total: f64,
}

/// Adds the gradient of `-coef * sum_j w_j log p_j(x)` to `grads` and returns
/// that loss.
fn accumulate(
    params: &ClassifierParams,
    x: ArrayView1<'_, f64>,
    target: &[f64],
    coef: f64,
    grads: &mut ClassifierParams,
) -> f64 {
    let (pre, act) = params.hidden(x);
    let log_p = log_softmax(&params.logits(&act));
    let mass: f64 = target.iter().sum();
    let loss = -coef * target.iter().zip(&log_p).map(|(w, lp)| w * lp).sum::<f64>();
    if mass == 0.0 || coef == 0.0 {
        return loss;
    }
    // d loss / d logits = coef * (mass * p - w)
    let dlogits: Array1<f64> = log_p
        .iter()
        .zip(target)
        .map(|(lp, w)| coef * (mass * lp.exp() - w))
        .collect();
    grads.output_bias += &dlogits;
    for (mut row, &d) in grads.output_weights.outer_iter_mut().zip(&dlogits) {
        row.scaled_add(d, &act);
    }
    if params.hidden_units() > 0 {
        let dact = params.output_weights.t().dot(&dlogits);
        let dpre: Array1<f64> = dact
            .iter()
            .zip(&pre)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect();
        grads.hidden_bias += &dpre;
        for (mut row, &d) in grads.hidden_weights.outer_iter_mut().zip(&dpre) {
            row.scaled_add(d, &x);
        }
    }
    loss
}

/// Labeled cross-entropy on `labeled_x` plus `lambda` times the soft-label
/// weighted cross-entropy on `unlabeled_x`, with exact gradients.
///
/// Each soft label may carry less than unit mass; an all-zero label drops the
/// example from the gradient while still counting in the batch mean.
pub fn loss_and_grad(
    params: &ClassifierParams,
    labeled_x: ArrayView2<'_, f64>,
    labels: &[usize],
    unlabeled_x: ArrayView2<'_, f64>,
    targets: &[SoftLabel],
    lambda: f64,
) -> (LossParts, ClassifierParams) {
    assert_eq!(
        labeled_x.nrows(),
        labels.len(),
        "labeled batch size mismatch"
    );
    assert_eq!(
        unlabeled_x.nrows(),
        targets.len(),
        "unlabeled batch size mismatch"
    );
    let k = params.num_classes();
    let mut grads = params.zeros_like();

    let mut labeled = 0.0;
    if !labels.is_empty() {
        let coef = 1.0 / labels.len() as f64;
        let mut onehot = vec![0.0; k];
        for (x, &y) in labeled_x.outer_iter().zip(labels) {
            onehot[y] = 1.0;
            labeled += accumulate(params, x, &onehot, coef, &mut grads);
            onehot[y] = 0.0;
        }
    }

    let mut unlabeled = 0.0;
    if !targets.is_empty() {
        let coef = 1.0 / targets.len() as f64;
        // separate accumulator so the lambda scaling is applied once
        let mut ugrads = params.zeros_like();
        for (x, q) in unlabeled_x.outer_iter().zip(targets) {
            unlabeled += accumulate(params, x, &q.weights, coef, &mut ugrads);
        }
        if lambda != 0.0 {
            for ((g, _), u) in grads.tensors_mut().into_iter().zip(ugrads.tensors()) {
                for (a, b) in g.iter_mut().zip(u) {
                    *a += lambda * b;
                }
            }
        }
    }

    let parts = LossParts {
        labeled,
        unlabeled,
        total: labeled + lambda * unlabeled,
    };
    (parts, grads)
}

/// Fraction of argmax mispredictions; ties go to the lowest class index.
pub fn evaluate(
    params: &ClassifierParams,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
) -> crate::Result<f64> {
    if labels.is_empty() || features.nrows() != labels.len() {
        return crate::error::invalid("evaluation split must be non-empty and aligned");
    }
    let probs = forward_batch(params, features);
    let wrong = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(p, &y)| argmax(p.iter().copied()) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in values.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_are_uniform() {
        let p = ClassifierParams::zeros(2, 8, 5);
        for v in forward(&p, array![0.3, -2.0].view()) {
            assert_abs_diff_eq!(v, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn outputs_on_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for h in [0, 4, 32] {
            let p = ClassifierParams::init(2, h, 4, &mut rng);
            let out = forward(&p, array![1.5, -0.7].view());
            assert_abs_diff_eq!(out.sum(), 1.0, epsilon = 1e-9);
            assert!(out.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn scaling_output_layer_sharpens() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = ClassifierParams::init(2, 6, 3, &mut rng);
            let x = array![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut sharp = p.clone();
            sharp.output_weights *= 3.0;
            sharp.output_bias *= 3.0;
            let before = forward(&p, x.view()).fold(0.0f64, |a, &b| a.max(b));
            let after = forward(&sharp, x.view()).fold(0.0f64, |a, &b| a.max(b));
            assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn full_abstention_removes_unlabeled_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = ClassifierParams::init(2, 5, 3, &mut rng);
        let lx = array![[0.1, 0.2], [1.0, -1.0]];
        let ux = array![[0.5, 0.5], [-0.3, 0.9]];
        let abstain = vec![SoftLabel::abstain(3); 2];
        let (with_u, g1) = loss_and_grad(&p, lx.view(), &[0, 2], ux.view(), &abstain, 1.0);
        let (without, g2) = loss_and_grad(
            &p,
            lx.view(),
            &[0, 2],
            ux.slice(ndarray::s![..0, ..]),
            &[],
            1.0,
        );
        assert_eq!(with_u.unlabeled, 0.0);
        assert_eq!(with_u.total, without.total);
        assert_eq!(g1, g2);
    }

    #[test]
    fn zero_lambda_is_supervised() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = ClassifierParams::init(2, 5, 2, &mut rng);
        let lx = array![[0.1, 0.2]];
        let ux = array![[0.5, 0.5]];
        let q = vec![SoftLabel::one_hot(2, 1)];
        let (parts, g) = loss_and_grad(&p, lx.view(), &[0], ux.view(), &q, 0.0);
        let (sup, gs) = loss_and_grad(
            &p,
            lx.view(),
            &[0],
            ux.slice(ndarray::s![..0, ..]),
            &[],
            0.0,
        );
        assert_eq!(parts.total, sup.total);
        assert!(parts.unlabeled > 0.0);
        assert_eq!(g, gs);
    }

    #[test]
    fn evaluation_extremes() {
        // bias-only linear model that always predicts class 1
        let mut p = ClassifierParams::zeros(2, 0, 4);
        p.output_bias[1] = 5.0;
        let x = Array2::zeros((8, 2));
        let balanced: Vec<usize> = (0..8).map(|i| i % 4).collect();
        assert_abs_diff_eq!(evaluate(&p, x.view(), &balanced).unwrap(), 0.75);
        assert_eq!(evaluate(&p, x.view(), &[1; 8]).unwrap(), 0.0);
        assert!(evaluate(&p, x.slice(ndarray::s![..0, ..]), &[]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax([0.5, 0.5].into_iter()), 0);
        assert_eq!(argmax([0.1, 0.7, 0.7].into_iter()), 1);
    }
}
