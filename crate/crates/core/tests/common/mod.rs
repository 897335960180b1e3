//! Test oracles written independently of the crate's kernels: a binary64
//! reference MLP, reference losses and a central finite-difference driver.
#![allow(dead_code)]

use psfedgan::nnkernel::{Activation, LayerSpec, Matrix, Network, ParamVector, Rng};

pub type Rows = Vec<Vec<f64>>;

pub fn rows_of(m: &Matrix) -> Rows {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&v| v as f64).collect())
        .collect()
}

fn act64(a: Activation, v: f64) -> f64 {
    match a {
        Activation::Identity => v,
        Activation::Relu => v.max(0.0),
        Activation::LeakyRelu(s) => {
            if v > 0.0 {
                v
            } else {
                s as f64 * v
            }
        }
        Activation::Tanh => v.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
    }
}

/// Forward pass in binary64. `values` follows the crate's layout: per dense
/// layer an `[in x out]` row-major weight block, then the biases.
/// Also returns the smallest magnitude seen at the input of a piecewise-linear
/// activation, which tells whether a finite difference may straddle a kink.
pub fn forward64(specs: &[LayerSpec], values: &[f64], x: &Rows) -> (Rows, f64) {
    let mut h = x.clone();
    let mut offset = 0;
    let mut kink = f64::INFINITY;
    for spec in specs {
        match *spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let w = &values[offset..offset + in_dim * out_dim];
                let b = &values[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
                offset += in_dim * out_dim + out_dim;
                h = h
                    .iter()
                    .map(|row| {
                        (0..out_dim)
                            .map(|o| b[o] + (0..in_dim).map(|i| row[i] * w[i * out_dim + o]).sum::<f64>())
                            .collect()
                    })
                    .collect();
            }
            LayerSpec::Activation { activation, .. } => {
                if matches!(activation, Activation::Relu | Activation::LeakyRelu(_)) {
                    for v in h.iter().flatten() {
                        kink = kink.min(v.abs());
                    }
                }
                for v in h.iter_mut().flatten() {
                    *v = act64(activation, *v);
                }
            }
        }
    }
    (h, kink)
}

pub fn values64(p: &ParamVector) -> Vec<f64> {
    p.values().iter().map(|&v| v as f64).collect()
}

/// Mean binary cross-entropy, `p` clamped as the crate does.
pub fn bce64(pred: &Rows, target: f64) -> f64 {
    let n = pred.iter().map(Vec::len).sum::<usize>() as f64;
    let total: f64 = pred
        .iter()
        .flatten()
        .map(|&p| {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            target * p.ln() + (1.0 - target) * (1.0 - p).ln()
        })
        .sum();
    -total / n
}

pub fn softmax_ce64(logits: &Rows, labels: &[usize]) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(row, &l)| {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[l]
        })
        .sum();
    total / labels.len() as f64
}

/// Central differences of `f` at `x`. Coordinates where the two one-sided
/// differences disagree (a kink inside the stencil) come back as `None`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<Option<f64>> {
    let f0 = f(x);
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            let fwd = (up - f0) / h;
            let bwd = (f0 - down) / h;
            let scale = fwd.abs().max(bwd.abs()).max(1e-3);
            ((fwd - bwd).abs() <= 1e-3 * scale + 1e-6).then(|| (up - down) / (2.0 * h))
        })
        .collect()
}

/// Largest elementwise relative error between an analytic and a numeric
/// gradient. The denominator is floored at 1% of the numeric gradient's
/// largest entry so that near-zero entries are judged on absolute error.
/// Skipped coordinates are ignored; the count of compared ones is returned.
pub fn rel_error(analytic: &[f32], numeric: &[Option<f64>]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (0.01 * scale).max(1e-9);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (&a, n) in analytic.iter().zip(numeric) {
        if let Some(n) = *n {
            compared += 1;
            let a = a as f64;
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(floor));
        }
    }
    (worst, compared)
}

/// A random small MLP: 1 to 3 dense layers of width 1 to 6, each followed by
/// a random activation.
pub fn random_net(rng: &mut Rng) -> (Vec<LayerSpec>, Network) {
    let acts = [
        Activation::Identity,
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ];
    let depth = 1 + rng.below(3);
    let mut width = 1 + rng.below(6);
    let mut specs = Vec::new();
    for _ in 0..depth {
        let out = 1 + rng.below(6);
        specs.push(LayerSpec::dense(width, out));
        specs.push(LayerSpec::act(out, acts[rng.below(acts.len())]));
        width = out;
    }
    let mut p = ParamVector::zeros(&specs).unwrap();
    for v in p.values_mut() {
        *v = rng.uniform_range(-1.0, 1.0);
    }
    (specs, Network::new(p))
}

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Analytic gradients of `sum(c * net(x))` against binary64 central
/// differences, for parameters and inputs. Returns the worst relative error
/// and the number of compared coordinates.
pub fn check_network(specs: &[LayerSpec], net: &Network, x: &Matrix, c: &Matrix) -> (f64, usize) {
    let (grads, dx) = net.backward(x, c).unwrap();
    let c64 = rows_of(c);
    let x64 = rows_of(x);
    let weigh = |out: &Rows| -> f64 {
        out.iter()
            .flatten()
            .zip(c64.iter().flatten())
            .map(|(a, b)| a * b)
            .sum()
    };
    let theta = values64(net.params());
    let h = 1e-6;
    let num_p = central_diff(&theta, h, |t| weigh(&forward64(specs, t, &x64).0));
    let flat_x: Vec<f64> = x64.iter().flatten().copied().collect();
    let cols = x.cols();
    let num_x = central_diff(&flat_x, h, |fx| {
        let xs: Rows = fx.chunks(cols).map(<[f64]>::to_vec).collect();
        weigh(&forward64(specs, &theta, &xs).0)
    });
    let (ep, np) = rel_error(grads.values(), &num_p);
    let (ex, nx) = rel_error(dx.as_slice(), &num_x);
    (ep.max(ex), np + nx)
}

/// Runs [`check_network`] on `count` random nets drawn from `seed`.
pub fn gradient_sweep(seed: u64, count: usize) -> Vec<(f64, usize)> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|_| {
            let (specs, net) = random_net(&mut rng);
            let batch = 1 + rng.below(4);
            let x = random_matrix(&mut rng, batch, net.in_dim());
            let c = random_matrix(&mut rng, batch, net.out_dim());
            check_network(&specs, &net, &x, &c)
        })
        .collect()
}

use psfedgan::channel::ChannelKind;
use psfedgan::data::{DatasetSpec, SplitKind};
use psfedgan::gan::CGanConfig;
use psfedgan::protocol::{ClassifierConfig, FederationConfig, RoundConfig, TrainerConfig};

/// Three Setup-1 users on a 10-class 2-D Gaussian mixture with small nets.
pub fn toy_federation(seed: u64) -> FederationConfig {
    FederationConfig {
        master_seed: seed,
        dataset: DatasetSpec::GaussianMixture {
            classes: 10,
            per_class: 40,
            test_per_class: 20,
            spread: 0.1,
        },
        split: SplitKind::Setup1,
        num_users: 3,
        gan: CGanConfig::mlp(4, 10, 2, &[16], &[16], 0.2, 16),
        trainer: TrainerConfig::default(),
        round: RoundConfig {
            steps_per_round: 10,
            synth_per_user: 30,
            cloud_fraction: 0.05,
            classifier_epochs_per_round: 1,
        },
        classifier: ClassifierConfig {
            hidden: vec![16],
            pretrain_epochs: 1,
            ..ClassifierConfig::default()
        },
        channel: ChannelKind::Ideal,
        attackers: Vec::new(),
        rounds: 3,
        probe_size: 32,
        judge_epochs: 2,
        sync_check: true,
        threads: 1,
    }
}
