mod common;

use common::{embedding_reference, normal_vec, rng, toy_config, wake_head};
use cryforge::{step_embedding, EpsilonNet, ModelConfig, Tensor};

fn param<'a>(net: &'a EpsilonNet, name: &str) -> &'a [f64] {
    net.parameter(name).unwrap().tensor.values()
}

fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + x.iter().enumerate().map(|(i, xi)| w[o * x.len() + i] * xi).sum::<f64>())
        .collect()
}

/// `out[c][i] = b[c] + sum_{ci,k} w[c, ci, k] x[ci][i + (k - half) d]`
fn conv(w: &[f64], b: &[f64], x: &[Vec<f64>], kernel: usize, dilation: usize) -> Vec<Vec<f64>> {
    let len = x[0].len() as isize;
    let half = (kernel as isize - 1) / 2;
    (0..b.len())
        .map(|c| {
            (0..len)
                .map(|i| {
                    let mut acc = b[c];
                    for (ci, row) in x.iter().enumerate() {
                        for k in 0..kernel {
                            let j = i + (k as isize - half) * dilation as isize;
                            if (0..len).contains(&j) {
                                acc += w[(c * x.len() + ci) * kernel + k] * row[j as usize];
                            }
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// The whole network written out sample by sample for one input.
fn straight_line(net: &EpsilonNet, x: &[f64], t: f64) -> Vec<f64> {
    let cfg = net.config();
    let p = |n: &str| param(net, n);
    let e = step_embedding(t).unwrap();
    let e = dense(p("embed_fc1.weight"), p("embed_fc1.bias"), &e);
    let e: Vec<f64> = e.into_iter().map(swish).collect();
    let e = dense(p("embed_fc2.weight"), p("embed_fc2.bias"), &e);
    let cond: Vec<f64> = e.into_iter().map(swish).collect();

    let mut h: Vec<Vec<f64>> = conv(p("input_proj.weight"), p("input_proj.bias"), &[x.to_vec()], 1, 1)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    let c = cfg.residual_channels;
    let mut skip = vec![vec![0.0; x.len()]; cfg.skip_channels];
    for l in 0..cfg.residual_layers {
        let n = |s: &str| format!("layers.{l}.{s}");
        let proj = dense(p(&n("step_fc.weight")), p(&n("step_fc.bias")), &cond);
        let y: Vec<Vec<f64>> = h
            .iter()
            .zip(&proj)
            .map(|(row, s)| row.iter().map(|v| v + s).collect())
            .collect();
        let y = conv(
            p(&n("dilated_conv.weight")),
            p(&n("dilated_conv.bias")),
            &y,
            cfg.kernel_size,
            cfg.dilation(l),
        );
        let gated: Vec<Vec<f64>> = (0..c)
            .map(|ch| {
                y[ch]
                    .iter()
                    .zip(&y[c + ch])
                    .map(|(f, g)| f.tanh() / (1.0 + (-g).exp()))
                    .collect()
            })
            .collect();
        let s = conv(p(&n("skip_proj.weight")), p(&n("skip_proj.bias")), &gated, 1, 1);
        for (acc, row) in skip.iter_mut().zip(&s) {
            acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let r = conv(p(&n("residual_proj.weight")), p(&n("residual_proj.bias")), &gated, 1, 1);
        h = h
            .iter()
            .zip(&r)
            .map(|(hr, rr)| hr.iter().zip(rr).map(|(a, b)| (a + b) / 2f64.sqrt()).collect())
            .collect();
    }
    let relu = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        m.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
    };
    let a = relu(skip);
    let a = relu(conv(p("out_conv1.weight"), p("out_conv1.bias"), &a, 1, 1));
    conv(p("out_conv2.weight"), p("out_conv2.bias"), &a, 1, 1).remove(0)
}

#[test]
fn forward_matches_straight_line_oracle() {
    let mut cfg = toy_config(3, 4, 40);
    cfg.skip_channels = 5;
    cfg.dilation_cycle_length = 2;
    let mut net = EpsilonNet::init(cfg, &mut rng(3)).unwrap();
    wake_head(&mut net, 4);
    let mut r = rng(5);
    let xs = normal_vec(2 * 40, &mut r);
    let steps = [1usize, 37];
    let out = net.forward(&Tensor::new(vec![2, 1, 40], xs.clone()).unwrap(), &steps).unwrap();
    assert_eq!(out.shape(), &[2, 1, 40]);
    for (b, &t) in steps.iter().enumerate() {
        let expect = straight_line(&net, &xs[b * 40..(b + 1) * 40], t as f64);
        for (i, (a, e)) in out.values()[b * 40..].iter().zip(&expect).enumerate() {
            assert!((a - e).abs() < 1e-10, "item {b} sample {i}: {a} vs {e}");
        }
    }
}

#[test]
fn embedding_matches_high_precision_reference() {
    let zero = step_embedding(0.0).unwrap();
    assert!(zero[..64].iter().all(|&v| v == 0.0));
    assert!(zero[64..].iter().all(|&v| v == 1.0));
    let reference = embedding_reference();
    assert_eq!(reference.len(), 128);
    let one = step_embedding(1.0).unwrap();
    for (i, (a, e)) in one.iter().zip(&reference).enumerate() {
        assert!((a - e).abs() < 1e-12, "entry {i}: {a} vs {e}");
    }
    assert!(step_embedding(-1.0).is_err());
    assert!(step_embedding(f64::NAN).is_err());
}

#[test]
fn init_spread_follows_fan_in() {
    let net = EpsilonNet::init(ModelConfig::desk(), &mut rng(1)).unwrap();
    for p in net.parameters() {
        let v = p.tensor.values();
        if p.name.starts_with("out_conv2") {
            assert!(v.iter().all(|&x| x == 0.0));
            continue;
        }
        let shape = p.tensor.shape();
        let fan_in: usize = if p.name.ends_with(".bias") {
            let w = net.parameter(&p.name.replace(".bias", ".weight")).unwrap();
            w.tensor.shape()[1..].iter().product()
        } else {
            shape[1..].iter().product()
        };
        let bound = (1.0 / fan_in as f64).sqrt();
        assert!(v.iter().all(|x| x.abs() <= bound), "{}", p.name);
        if v.len() >= 1000 {
            // U(-a, a) has standard deviation a / sqrt(3)
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let expect = bound / 3f64.sqrt();
            assert!((sd / expect - 1.0).abs() < 0.05, "{}: sd {sd} vs {expect}", p.name);
        }
    }
}

#[test]
fn zero_head_predicts_zero() {
    let net = EpsilonNet::init(toy_config(2, 8, 16), &mut rng(2)).unwrap();
    let x = Tensor::new(vec![1, 1, 16], normal_vec(16, &mut rng(3))).unwrap();
    assert!(net.forward(&x, &[5]).unwrap().values().iter().all(|&v| v == 0.0));
}

#[test]
fn prediction_depends_on_step() {
    let mut net = EpsilonNet::init(toy_config(2, 8, 32), &mut rng(6)).unwrap();
    wake_head(&mut net, 7);
    let x = Tensor::new(vec![1, 1, 32], normal_vec(32, &mut rng(8))).unwrap();
    let first = net.forward(&x, &[1]).unwrap();
    let last = net.forward(&x, &[200]).unwrap();
    let diff = first
        .values()
        .iter()
        .zip(last.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff > 1e-6, "max difference {diff}");
}

#[test]
fn receptive_field_radius_is_the_dilation_sum() {
    let cfg = ModelConfig::default();
    let analytic: usize = (0..30).map(|i| (1usize << (i % 10)) * (3 - 1) / 2).sum();
    assert_eq!(cfg.receptive_field_radius(), analytic);
    assert_eq!(analytic, 3 * 1023);

    // an impulse moves outputs only within the radius
    let mut cfg = toy_config(4, 4, 64);
    cfg.dilation_cycle_length = 3;
    let radius = cfg.receptive_field_radius();
    assert_eq!(radius, 1 + 2 + 4 + 1);
    let mut net = EpsilonNet::init(cfg, &mut rng(9)).unwrap();
    wake_head(&mut net, 10);
    let base = vec![0.3; 64];
    let mut bumped = base.clone();
    bumped[32] += 1.0;
    let run = |x: Vec<f64>| net.forward(&Tensor::new(vec![1, 1, 64], x).unwrap(), &[10]).unwrap();
    let (a, b) = (run(base), run(bumped));
    for i in 0..64usize {
        let moved = a.values()[i] != b.values()[i];
        assert_eq!(moved, i.abs_diff(32) <= radius, "sample {i}");
    }
}
