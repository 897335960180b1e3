//! Conditional GAN on top of the dense kernel.
//!
//! Labels condition both networks by one-hot concatenation: the generator sees
//! `[z | onehot(l)]` and the discriminator sees `[x | onehot(l)]`. The
//! discriminator ends in a sigmoid and is trained with binary cross-entropy;
//! the generator uses the non-saturating loss `-log D(G(z, l))`.

use crate::error::{Error, Result};
use crate::nnkernel::{
    bce_loss, one_hot, validate_layers, Activation, LayerSpec, Matrix, Network, OptimizerState,
    ParamVector, Rng,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CGanConfig {
    pub z_dim: usize,
    pub num_classes: usize,
    pub data_dim: usize,
    pub gen_layers: Vec<LayerSpec>,
    pub disc_layers: Vec<LayerSpec>,
    pub d_steps_per_g_step: usize,
    pub batch_size: usize,
}

impl CGanConfig {
    /// Standard MLP pair: leaky-ReLU hidden layers, tanh generator head and
    /// sigmoid discriminator head.
    pub fn mlp(
        z_dim: usize,
        num_classes: usize,
        data_dim: usize,
        gen_hidden: &[usize],
        disc_hidden: &[usize],
        leaky_slope: f32,
        batch_size: usize,
    ) -> Self {
        Self {
            z_dim,
            num_classes,
            data_dim,
            gen_layers: mlp_layers(
                z_dim + num_classes,
                gen_hidden,
                data_dim,
                Activation::LeakyRelu(leaky_slope),
                Activation::Tanh,
            ),
            disc_layers: mlp_layers(
                data_dim + num_classes,
                disc_hidden,
                1,
                Activation::LeakyRelu(leaky_slope),
                Activation::Sigmoid,
            ),
            d_steps_per_g_step: 1,
            batch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.z_dim == 0 || self.num_classes == 0 || self.data_dim == 0 {
            return Err(Error::config("z_dim, num_classes and data_dim must be positive"));
        }
        if self.batch_size == 0 || self.d_steps_per_g_step == 0 {
            return Err(Error::config("batch_size and d_steps_per_g_step must be positive"));
        }
        validate_layers(&self.gen_layers)?;
        validate_layers(&self.disc_layers)?;
        let g_in = self.gen_layers[0].in_dim();
        let g_out = self.gen_layers.last().unwrap().out_dim();
        let d_in = self.disc_layers[0].in_dim();
        let d_out = self.disc_layers.last().unwrap().out_dim();
        if g_in != self.z_dim + self.num_classes {
            return Err(Error::config(format!(
                "generator input {g_in} != z_dim + num_classes = {}",
                self.z_dim + self.num_classes
            )));
        }
        if g_out != self.data_dim {
            return Err(Error::config(format!(
                "generator output {g_out} != data_dim {}",
                self.data_dim
            )));
        }
        if d_in != self.data_dim + self.num_classes {
            return Err(Error::config(format!(
                "discriminator input {d_in} != data_dim + num_classes = {}",
                self.data_dim + self.num_classes
            )));
        }
        if d_out != 1 {
            return Err(Error::config("discriminator must emit one value"));
        }
        Ok(())
    }
}

/// Dense stack `input -> hidden... -> output` with `hidden_act` between dense
/// layers and `head` after the last one.
pub fn mlp_layers(
    input: usize,
    hidden: &[usize],
    output: usize,
    hidden_act: Activation,
    head: Activation,
) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::dense(prev, h));
        layers.push(LayerSpec::act(h, hidden_act));
        prev = h;
    }
    layers.push(LayerSpec::dense(prev, output));
    layers.push(LayerSpec::act(output, head));
    layers
}

/// The noise `z_t` and labels `l_t` of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBatch {
    pub z: Matrix,
    pub labels: Vec<usize>,
}

impl NoiseBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn bit_eq(&self, other: &NoiseBatch) -> bool {
        self.labels == other.labels && self.z.bit_eq(&other.z)
    }

    fn generator_input(&self, cfg: &CGanConfig) -> Result<Matrix> {
        if self.z.cols() != cfg.z_dim {
            return Err(Error::shape(format!(
                "noise has {} columns, z_dim is {}",
                self.z.cols(),
                cfg.z_dim
            )));
        }
        if self.z.rows() != self.labels.len() {
            return Err(Error::shape("noise rows and label count differ"));
        }
        self.z.hcat(&one_hot(&self.labels, cfg.num_classes)?)
    }
}

/// Draw `cfg.batch_size` noise rows, then one label per row uniformly from
/// `allowed_labels`.
pub fn sample_noise(rng: &mut Rng, cfg: &CGanConfig, allowed_labels: &[usize]) -> Result<NoiseBatch> {
    sample_noise_n(rng, cfg, allowed_labels, cfg.batch_size)
}

pub fn sample_noise_n(
    rng: &mut Rng,
    cfg: &CGanConfig,
    allowed_labels: &[usize],
    n: usize,
) -> Result<NoiseBatch> {
    if allowed_labels.is_empty() {
        return Err(Error::config("no labels to sample from"));
    }
    if let Some(&bad) = allowed_labels.iter().find(|&&l| l >= cfg.num_classes) {
        return Err(Error::config(format!(
            "label {bad} outside {} classes",
            cfg.num_classes
        )));
    }
    let mut z = Matrix::zeros(n, cfg.z_dim);
    rng.fill_normal(z.as_mut_slice());
    let labels = (0..n)
        .map(|_| allowed_labels[rng.below(allowed_labels.len())])
        .collect();
    Ok(NoiseBatch { z, labels })
}

/// Forward pass of the generator on a noise batch.
pub fn generate(g: &Network, noise: &NoiseBatch, cfg: &CGanConfig) -> Result<Matrix> {
    g.forward(&noise.generator_input(cfg)?)
}

fn disc_input(x: &Matrix, labels: &[usize], cfg: &CGanConfig) -> Result<Matrix> {
    if x.cols() != cfg.data_dim {
        return Err(Error::shape(format!(
            "samples have {} columns, data_dim is {}",
            x.cols(),
            cfg.data_dim
        )));
    }
    if x.rows() != labels.len() {
        return Err(Error::shape("sample rows and label count differ"));
    }
    x.hcat(&one_hot(labels, cfg.num_classes)?)
}

/// Discriminator output for labelled samples.
pub fn discriminate(d: &Network, x: &Matrix, labels: &[usize], cfg: &CGanConfig) -> Result<Matrix> {
    d.forward(&disc_input(x, labels, cfg)?)
}

/// One discriminator update: real rows target 1, `G(noise)` rows target 0.
///
/// Generated samples are constants here, so `g` is only read. The returned
/// loss is the sum of the real and fake mean cross-entropies, evaluated before
/// the update.
pub fn train_discriminator_step(
    d: &mut Network,
    g: &Network,
    real: &Matrix,
    real_labels: &[usize],
    noise: &NoiseBatch,
    opt: &mut OptimizerState,
    cfg: &CGanConfig,
) -> Result<f32> {
    if real.rows() != noise.len() {
        return Err(Error::shape(format!(
            "real batch {} and noise batch {} differ",
            real.rows(),
            noise.len()
        )));
    }
    let fake = generate(g, noise, cfg)?;
    let real_in = disc_input(real, real_labels, cfg)?;
    let fake_in = disc_input(&fake, &noise.labels, cfg)?;

    let real_trace = d.forward_trace(&real_in)?;
    let (real_loss, real_grad) = bce_loss(
        real_trace.output(),
        &Matrix::filled(real.rows(), 1, 1.0),
    )?;
    let fake_trace = d.forward_trace(&fake_in)?;
    let (fake_loss, fake_grad) = bce_loss(
        fake_trace.output(),
        &Matrix::filled(fake.rows(), 1, 0.0),
    )?;

    let (mut grads, _) = d.backward_trace(&real_trace, &real_grad, false)?;
    let (fake_grads, _) = d.backward_trace(&fake_trace, &fake_grad, false)?;
    add_into(&mut grads, &fake_grads);
    opt.step(d.params_mut(), &grads)?;
    Ok(real_loss + fake_loss)
}

/// One generator update against a frozen discriminator.
///
/// Gradients of `BCE(D(G(z, l)), 1)` flow back through `d` into `g`; `d` is
/// only read. Given bit-equal `(g, d, noise, opt)` the result is bit-equal,
/// which is what keeps the client and server generators in lockstep.
pub fn train_generator_step(
    g: &mut Network,
    d: &Network,
    noise: &NoiseBatch,
    opt: &mut OptimizerState,
    cfg: &CGanConfig,
) -> Result<f32> {
    let g_trace = g.forward_trace(&noise.generator_input(cfg)?)?;
    let d_in = disc_input(g_trace.output(), &noise.labels, cfg)?;
    let d_trace = d.forward_trace(&d_in)?;
    let (loss, grad) = bce_loss(d_trace.output(), &Matrix::filled(noise.len(), 1, 1.0))?;
    let d_input_grad = d.input_gradient(&d_trace, &grad)?;
    let upstream = d_input_grad.columns(0, cfg.data_dim);
    let (grads, _) = g.backward_trace(&g_trace, &upstream, false)?;
    opt.step(g.params_mut(), &grads)?;
    Ok(loss)
}

fn add_into(acc: &mut ParamVector, other: &ParamVector) {
    for (a, &b) in acc.values_mut().iter_mut().zip(other.values()) {
        *a += b;
    }
}
