//! Learning-rate schedule, Nesterov momentum and parameter averaging.

use std::f64::consts::PI;

use super::model::ClassifierParams;

/// `lr_peak * cos(7 pi t / (16 T))`
pub fn cosine_lr(t: usize, horizon: usize, lr_peak: f64) -> f64 {
    lr_peak * (7.0 * PI * t as f64 / (16.0 * horizon as f64)).cos()
}

/// One step of SGD with Nesterov momentum. Weight decay is folded into the
/// gradient of weight matrices only; biases are not decayed.
pub fn nesterov_step(
    params: &mut ClassifierParams,
    grads: &ClassifierParams,
    buffers: &mut ClassifierParams,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for (((p, is_weight), g), (buf, _)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(buffers.tensors_mut())
    {
        let decay = if is_weight { weight_decay } else { 0.0 };
        for ((w, &gw), b) in p.iter_mut().zip(g).zip(buf.iter_mut()) {
            let d = gw + decay * *w;
            *b = momentum * *b + d;
            *w -= lr * (d + momentum * *b);
        }
    }
}

/// `ema <- decay * ema + (1 - decay) * params`
pub fn ema_update(ema: &mut ClassifierParams, params: &ClassifierParams, decay: f64) {
    for ((e, _), p) in ema.tensors_mut().into_iter().zip(params.tensors()) {
        for (a, &b) in e.iter_mut().zip(p) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn scalar(v: f64) -> ClassifierParams {
        let mut p = ClassifierParams::zeros(1, 0, 1);
        p.output_weights[[0, 0]] = v;
        p
    }

    #[test]
    fn lr_endpoints_and_monotone() {
        assert_abs_diff_eq!(cosine_lr(0, 100, 0.03), 0.03, epsilon = 1e-15);
        let end = cosine_lr(100, 100, 0.03);
        assert_abs_diff_eq!(end, 0.03 * (7.0 * PI / 16.0).cos(), epsilon = 1e-15);
        assert!((end - 0.00585).abs() < 1e-5);
        let lrs: Vec<f64> = (1..=100).map(|t| cosine_lr(t, 100, 0.03)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = ClassifierParams::zeros(2, 3, 2);
        p.hidden_bias[1] = 0.7;
        let before = p.clone();
        let g = p.zeros_like();
        let mut buf = p.zeros_like();
        nesterov_step(&mut p, &g, &mut buf, 0.1, 0.9, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn plain_sgd_without_momentum() {
        let mut p = scalar(2.0);
        p.output_bias[0] = 1.0;
        let mut g = scalar(0.5);
        g.output_bias[0] = 0.25;
        let mut buf = p.zeros_like();
        nesterov_step(&mut p, &g, &mut buf, 0.1, 0.0, 0.01);
        assert_relative_eq!(p.output_weights[[0, 0]], 2.0 - 0.1 * (0.5 + 0.01 * 2.0));
        // biases are not decayed
        assert_relative_eq!(p.output_bias[0], 1.0 - 0.1 * 0.25);
    }

    #[test]
    fn two_nesterov_steps_constant_gradient() {
        let (lr, m, g) = (0.05, 0.9, 1.5);
        // buffer after step 1: g; step 1 moves lr (g + m g)
        // buffer after step 2: m g + g; step 2 moves lr (g + m (m g + g))
        let expected = lr * (g + m * g) + lr * (g + m * (m * g + g));
        let mut p = scalar(0.0);
        let grads = scalar(g);
        let mut buf = p.zeros_like();
        nesterov_step(&mut p, &grads, &mut buf, lr, m, 0.0);
        nesterov_step(&mut p, &grads, &mut buf, lr, m, 0.0);
        assert_relative_eq!(-p.output_weights[[0, 0]], expected, max_relative = 1e-14);
    }

    #[test]
    fn ema_behaviour() {
        let target = scalar(1.0);
        let mut ema = scalar(0.3);
        ema_update(&mut ema, &target, 0.0);
        assert_eq!(ema, target);

        let mut ema = scalar(0.0);
        for _ in 0..1000 {
            ema_update(&mut ema, &target, 0.999);
        }
        let expected = 1.0 - 0.999f64.powi(1000);
        assert_relative_eq!(ema.output_weights[[0, 0]], expected, max_relative = 1e-10);
        assert_abs_diff_eq!(expected, 0.632, epsilon = 1e-3);

        let mut ema = scalar(0.0);
        let mut prev_gap = 1.0;
        for _ in 0..20 {
            ema_update(&mut ema, &target, 0.5);
            let gap = 1.0 - ema.output_weights[[0, 0]];
            assert_relative_eq!(gap, 0.5 * prev_gap);
            prev_gap = gap;
        }
    }
}
