use rtm_core::attention::{
    attention_weights, phrase_scores, token_scores, AttentionNorm, AttentionParams, TokenAlignment,
};
use rtm_core::interaction::{merge, tsim, TensorParams};
use rtm_core::numkit::{bilinear, Activation, Rng, Tensor};

fn triple_loop(x: &[f64], m: &[f64], k: usize, y: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut out = vec![0.0; k];
    for (s, o) in out.iter_mut().enumerate() {
        for i in 0..d {
            for j in 0..d {
                *o += x[i] * m[s * d * d + i * d + j] * y[j];
            }
        }
    }
    out
}

fn random_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

#[test]
fn bilinear_matches_triple_loop() {
    let mut rng = Rng::new(3);
    for _ in 0..100 {
        let d = 1 + rng.below(8);
        let k = 1 + rng.below(4);
        let m: Tensor<f64> = rng.uniform_tensor(&[k, d, d], 1.0);
        let (x, y) = (random_vec(&mut rng, d), random_vec(&mut rng, d));
        let got = bilinear(&x, &m, &y).unwrap();
        assert_eq!(got.shape(), [k]);
        for (a, b) in got.data().iter().zip(triple_loop(&x, m.data(), k, &y)) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn tsim_is_activated_bilinear() {
    let mut rng = Rng::new(4);
    for case in 0..100 {
        let d = 1 + rng.below(8);
        let k = 1 + rng.below(4);
        let tp: TensorParams<f64> = TensorParams::init(&mut rng, k, d);
        let (q, a, e) = (random_vec(&mut rng, d), random_vec(&mut rng, d), random_vec(&mut rng, d));
        let f = [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Identity][case % 4];
        let t = tsim(&q, &a, &e, &tp, f).unwrap();
        for (r, (x, y)) in [(&q, &a), (&q, &e), (&a, &e)].into_iter().enumerate() {
            let want: Vec<f64> = triple_loop(x, tp.m[r].data(), k, y).into_iter().map(|v| f.apply(v)).collect();
            for (g, w) in t.out[r].iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_weights_form_a_distribution() {
    let mut rng = Rng::new(5);
    for case in 0..1000 {
        let d = 1 + rng.below(8);
        let n = 1 + rng.below(12);
        let mut p: AttentionParams<f64> = AttentionParams::init(&mut rng, d);
        let scale = rng.uniform(0.1, 10.0);
        p.w_ws.scale(scale);
        let answer: Tensor<f64> = rng.uniform_tensor(&[n, d], 2.0);
        let rows = if case % 2 == 0 {
            phrase_scores(&answer, &random_vec(&mut rng, d), &p).unwrap()
        } else {
            let m = 1 + rng.below(8);
            let question: Tensor<f64> = rng.uniform_tensor(&[m, d], 2.0);
            token_scores(&answer, &question, &p, TokenAlignment::Positional).unwrap()
        };
        let w = attention_weights(&rows, &p, AttentionNorm::Softmax).unwrap();
        assert_eq!(w.len(), n);
        assert!(w.data().iter().all(|&v| v >= 0.0));
        assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_parameters_give_exactly_uniform_weights() {
    let mut rng = Rng::new(6);
    for n in 1..20 {
        let d = 1 + rng.below(8);
        let p = AttentionParams::zeros(d);
        let answer: Tensor<f64> = rng.uniform_tensor(&[n, d], 1.0);
        let rows = phrase_scores(&answer, &random_vec(&mut rng, d), &p).unwrap();
        let w = attention_weights(&rows, &p, AttentionNorm::Softmax).unwrap();
        assert!(w.data().iter().all(|&v| v == 1.0 / n as f64));
    }
}

#[test]
fn merge_width_is_two_d_plus_three_k() {
    for (d, k) in [(100, 1), (1, 1), (8, 4), (10, 2), (50, 3), (600, 4)] {
        let c = vec![0.5; d];
        let t = vec![0.25; k];
        let m = merge(&c, [&t, &t, &t], &c);
        assert_eq!(m.len(), 2 * d + 3 * k);
    }
    assert_eq!(merge(&[0.0; 100], [&[0.0], &[0.0], &[0.0]], &[0.0; 100]).len(), 203);
}
