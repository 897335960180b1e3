//! Client and server state machines.
//!
//! A client runs a local cGAN. After each discriminator update it publishes
//! the discriminator together with the noise batch its generator is about to
//! train on. The server keeps one twin generator per client, started from the
//! client's secret seed, and replays every generator step against the
//! published discriminator. At round boundaries the server trains a global
//! classifier on cloud data plus samples from the twins.
//!
//! Seed derivation, all through [`splitmix64`]:
//!
//! * user `i`: `splitmix64(master ^ i)`
//! * named streams (dataset, split, cloud, server, probe, judge):
//!   `splitmix64(splitmix64(master) ^ tag)`, see [`Stream`]
//! * a client's generator is drawn from `Rng::new(user_seed)`, its
//!   discriminator from `Rng::new(splitmix64(user_seed ^ DISC_SALT))` and its
//!   minibatch and noise sampling from `Rng::new(splitmix64(user_seed ^ LOCAL_SALT))`

mod federation;
mod message;
mod replay;

pub use federation::{
    centralized_baseline, run_federation, AttackerSpec, FederationConfig, FederationOutput,
    PreparedData, BIAS_ATTACK_INIT_RANGE,
};
pub use message::{arch_digest, param_digest, MpMessage};
pub use replay::{replay, LogWriter, ReplayHeader, ReplayOutcome, UserDigest};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::gan::{
    generate, mlp_layers, sample_noise, sample_noise_n, train_discriminator_step,
    train_generator_step, CGanConfig,
};
use crate::metrics::{classify_accuracy, MetricsRecord};
use crate::nnkernel::{
    softmax_cross_entropy, splitmix64, Activation, InitScheme, Matrix, Network, OptimizerKind,
    OptimizerState, Rng,
};

pub const DISC_SALT: u64 = 0xD15C_0000_0000_0001;
pub const LOCAL_SALT: u64 = 0x10CA_1000_0000_0002;

/// Per-user secret seed.
pub fn user_seed(master: u64, user: u32) -> u64 {
    splitmix64(master ^ user as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dataset = 1,
    Split = 2,
    Cloud = 3,
    Server = 4,
    Probe = 5,
    Judge = 6,
}

pub fn stream_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(master) ^ stream as u64)
}

/// Sampling stream a client uses for minibatches and noise.
pub fn local_rng(user_seed: u64) -> Rng {
    Rng::new(splitmix64(user_seed ^ LOCAL_SALT))
}

/// Optimizers and initialization shared by every generator and discriminator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub init: InitScheme,
    pub gen_optimizer: OptimizerKind,
    pub gen_lr: f32,
    pub disc_optimizer: OptimizerKind,
    pub disc_lr: f32,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            init: InitScheme::GlorotZeroBias,
            gen_optimizer: OptimizerKind::adam(),
            gen_lr: 2e-4,
            disc_optimizer: OptimizerKind::adam(),
            disc_lr: 2e-4,
        }
    }
}

impl TrainerConfig {
    pub fn gen_state(&self) -> OptimizerState {
        OptimizerState::new(self.gen_optimizer, self.gen_lr)
    }

    pub fn disc_state(&self) -> OptimizerState {
        OptimizerState::new(self.disc_optimizer, self.disc_lr)
    }

    /// The generator every party derives from `seed`.
    pub fn init_generator(&self, cfg: &CGanConfig, seed: u64) -> Result<Network> {
        Network::init(&cfg.gen_layers, self.init, &mut Rng::new(seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    /// Local steps per user per round (`N`).
    pub steps_per_round: usize,
    /// Synthetic samples drawn from each server generator per round (`S`).
    pub synth_per_user: usize,
    pub cloud_fraction: f64,
    pub classifier_epochs_per_round: usize,
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_round == 0 || self.classifier_epochs_per_round == 0 {
            return Err(Error::config("steps_per_round and classifier_epochs_per_round must be positive"));
        }
        if !(self.cloud_fraction > 0.0 && self.cloud_fraction <= 1.0) {
            return Err(Error::config(format!(
                "cloud_fraction {} outside (0, 1]",
                self.cloud_fraction
            )));
        }
        Ok(())
    }
}

/// One local training timeline.
#[derive(Debug, Clone)]
pub struct ClientState {
    user_id: u32,
    seed: u64,
    cfg: CGanConfig,
    g: Network,
    d: Network,
    g_opt: OptimizerState,
    d_opt: OptimizerState,
    shard: LabeledDataset,
    classes: Vec<usize>,
    step: u64,
    arch_digest: u64,
}

impl ClientState {
    pub fn new(
        user_id: u32,
        seed: u64,
        cfg: &CGanConfig,
        trainer: &TrainerConfig,
        shard: LabeledDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        if shard.data_dim() != cfg.data_dim {
            return Err(Error::shape(format!(
                "shard has dimension {}, model expects {}",
                shard.data_dim(),
                cfg.data_dim
            )));
        }
        let g = trainer.init_generator(cfg, seed)?;
        let d = Network::init(
            &cfg.disc_layers,
            trainer.init,
            &mut Rng::new(splitmix64(seed ^ DISC_SALT)),
        )?;
        Ok(Self {
            user_id,
            seed,
            classes: shard.classes_present(),
            arch_digest: arch_digest(&cfg.disc_layers)?,
            cfg: cfg.clone(),
            g,
            d,
            g_opt: trainer.gen_state(),
            d_opt: trainer.disc_state(),
            shard,
            step: 0,
        })
    }

    pub fn user_id(&self) -> u32 {
        self.user_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generator(&self) -> &Network {
        &self.g
    }

    pub fn discriminator(&self) -> &Network {
        &self.d
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn shard(&self) -> &LabeledDataset {
        &self.shard
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn registration(&self) -> Registration {
        Registration {
            user_id: self.user_id,
            seed: self.seed,
            classes: self.classes.clone(),
            disc_digest: self.arch_digest,
        }
    }
}

/// One local step.
///
/// Each discriminator update draws a real minibatch (uniform with replacement
/// from the shard) and then a noise batch. The message carries the updated
/// discriminator and the last noise batch, and is built before the generator
/// trains on that same batch.
pub fn client_step(c: &mut ClientState, rng: &mut Rng) -> Result<MpMessage> {
    let n = c.shard.len();
    if n == 0 {
        return Err(Error::Protocol(format!("user {} has an empty shard", c.user_id)));
    }
    let cfg = &c.cfg;
    let mut noise = None;
    for _ in 0..cfg.d_steps_per_g_step {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(n)).collect();
        let real = c.shard.samples().select_rows(&idx);
        let real_labels: Vec<usize> = idx.iter().map(|&i| c.shard.labels()[i]).collect();
        let z = sample_noise(rng, cfg, &c.classes)?;
        train_discriminator_step(&mut c.d, &c.g, &real, &real_labels, &z, &mut c.d_opt, cfg)?;
        noise = Some(z);
    }
    let noise = noise.expect("d_steps_per_g_step is validated positive");
    let msg = MpMessage {
        user_id: c.user_id,
        step: c.step,
        disc_params: c.d.params().clone(),
        noise,
        arch_digest: c.arch_digest,
    };
    train_generator_step(&mut c.g, &c.d, &msg.noise, &mut c.g_opt, cfg)?;
    c.step += 1;
    Ok(msg)
}

/// What a client tells the server out of band at setup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Registration {
    pub user_id: u32,
    pub seed: u64,
    pub classes: Vec<usize>,
    pub disc_digest: u64,
}

/// The server's twin of one client generator.
#[derive(Debug, Clone)]
pub struct ServerSlot {
    reg: Registration,
    g: Network,
    opt: OptimizerState,
    next_step: u64,
    round_steps: usize,
}

impl ServerSlot {
    pub fn new(reg: Registration, cfg: &CGanConfig, trainer: &TrainerConfig) -> Result<Self> {
        if reg.classes.is_empty() || reg.classes.iter().any(|&c| c >= cfg.num_classes) {
            return Err(Error::config(format!(
                "user {} registered an invalid class set {:?}",
                reg.user_id, reg.classes
            )));
        }
        Ok(Self {
            g: trainer.init_generator(cfg, reg.seed)?,
            opt: trainer.gen_state(),
            reg,
            next_step: 0,
            round_steps: 0,
        })
    }

    pub fn registration(&self) -> &Registration {
        &self.reg
    }

    pub fn generator(&self) -> &Network {
        &self.g
    }

    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    /// One generator step against the published discriminator. On error the
    /// slot is unchanged.
    pub fn ingest(&mut self, msg: &MpMessage, cfg: &CGanConfig) -> Result<()> {
        if msg.user_id != self.reg.user_id {
            return Err(Error::Protocol(format!(
                "message for user {} routed to user {}",
                msg.user_id, self.reg.user_id
            )));
        }
        if msg.step != self.next_step {
            return Err(Error::Desync {
                user: msg.user_id,
                expected: self.next_step,
                got: msg.step,
            });
        }
        if msg.arch_digest != self.reg.disc_digest || !msg.layout_matches_digest() {
            return Err(Error::Protocol(format!(
                "user {} step {}: discriminator architecture digest mismatch",
                msg.user_id, msg.step
            )));
        }
        let d = Network::new(msg.disc_params.clone());
        let mut g = self.g.clone();
        let mut opt = self.opt.clone();
        train_generator_step(&mut g, &d, &msg.noise, &mut opt, cfg)?;
        self.g = g;
        self.opt = opt;
        self.next_step += 1;
        self.round_steps += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f32,
    pub batch_size: usize,
    /// Epochs on cloud data before the first round.
    pub pretrain_epochs: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            learning_rate: 1e-3,
            batch_size: 32,
            pretrain_epochs: 5,
        }
    }
}

/// MLP classifier trained with softmax cross-entropy and Adam.
#[derive(Debug, Clone)]
pub struct Classifier {
    net: Network,
    opt: OptimizerState,
    batch_size: usize,
}

impl Classifier {
    pub fn new(data_dim: usize, classes: usize, cfg: &ClassifierConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.batch_size == 0 {
            return Err(Error::config("classifier batch_size must be positive"));
        }
        let layers = mlp_layers(data_dim, &cfg.hidden, classes, Activation::Relu, Activation::Identity);
        Ok(Self {
            net: Network::init(&layers, InitScheme::GlorotZeroBias, rng)?,
            opt: OptimizerState::new(
                OptimizerKind::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    eps: 1e-8,
                },
                cfg.learning_rate,
            ),
            batch_size: cfg.batch_size,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    /// Shuffled minibatch epochs; returns the mean loss of the last epoch.
    pub fn train_epochs(&mut self, data: &LabeledDataset, epochs: usize, rng: &mut Rng) -> Result<f32> {
        let mut last = 0.0;
        if data.is_empty() {
            return Ok(last);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..epochs {
            rng.shuffle(&mut order);
            let mut total = 0.0f64;
            let mut batches = 0;
            for chunk in order.chunks(self.batch_size) {
                let x = data.samples().select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
                let trace = self.net.forward_trace(&x)?;
                let (loss, grad) = softmax_cross_entropy(trace.output(), &y)?;
                let (grads, _) = self.net.backward_trace(&trace, &grad, false)?;
                self.opt.step(self.net.params_mut(), &grads)?;
                total += loss as f64;
                batches += 1;
            }
            last = (total / batches as f64) as f32;
        }
        Ok(last)
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64> {
        classify_accuracy(&self.net, data.samples(), data.labels())
    }
}

/// Server side: one twin generator per user plus the global classifier.
#[derive(Debug, Clone)]
pub struct ServerState {
    cfg: CGanConfig,
    slots: Vec<ServerSlot>,
    classifier: Classifier,
    cloud: LabeledDataset,
    round: usize,
}

impl ServerState {
    /// Builds the twins and pretrains the classifier on the cloud data; `rng`
    /// initializes the classifier and drives its pretraining.
    pub fn new(
        cfg: &CGanConfig,
        trainer: &TrainerConfig,
        registrations: Vec<Registration>,
        cloud: LabeledDataset,
        classifier: &ClassifierConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut ids: Vec<u32> = registrations.iter().map(|r| r.user_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != registrations.len() {
            return Err(Error::config("duplicate user registration"));
        }
        let slots = registrations
            .into_iter()
            .map(|r| ServerSlot::new(r, cfg, trainer))
            .collect::<Result<Vec<_>>>()?;
        let mut c = Classifier::new(cfg.data_dim, cfg.num_classes, classifier, rng)?;
        c.train_epochs(&cloud, classifier.pretrain_epochs, rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            slots,
            classifier: c,
            cloud,
            round: 0,
        })
    }

    pub fn slots(&self) -> &[ServerSlot] {
        &self.slots
    }

    pub fn slots_mut(&mut self) -> &mut [ServerSlot] {
        &mut self.slots
    }

    pub fn slot(&self, user_id: u32) -> Option<&ServerSlot> {
        self.slots.iter().find(|s| s.reg.user_id == user_id)
    }

    pub fn classifier(&self) -> &Classifier {
        &self.classifier
    }

    pub fn cloud(&self) -> &LabeledDataset {
        &self.cloud
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn cgan(&self) -> &CGanConfig {
        &self.cfg
    }

    pub fn ingest(&mut self, msg: &MpMessage) -> Result<()> {
        server_ingest(self, msg)
    }
}

pub fn server_ingest(s: &mut ServerState, msg: &MpMessage) -> Result<()> {
    let cfg = &s.cfg;
    let slot = s
        .slots
        .iter_mut()
        .find(|sl| sl.reg.user_id == msg.user_id)
        .ok_or_else(|| Error::Protocol(format!("message from unregistered user {}", msg.user_id)))?;
    slot.ingest(msg, cfg)
}

/// Round boundary: check every user delivered `N` steps, draw `S` samples
/// from each twin (labels from the user's class set), train the classifier on
/// cloud plus synthetic data and score it on `test`.
///
/// Only `round` and `cl_accuracy` of the returned record are filled.
pub fn server_round_update(
    s: &mut ServerState,
    cfg: &RoundConfig,
    rng: &mut Rng,
    test: &LabeledDataset,
) -> Result<MetricsRecord> {
    for slot in &s.slots {
        if slot.round_steps != cfg.steps_per_round {
            return Err(Error::Protocol(format!(
                "round {}: user {} delivered {} of {} steps",
                s.round, slot.reg.user_id, slot.round_steps, cfg.steps_per_round
            )));
        }
    }
    let pool = synthetic_pool(s, cfg.synth_per_user, rng)?;
    let pool = s.cloud.concat(&pool)?;
    s.classifier
        .train_epochs(&pool, cfg.classifier_epochs_per_round, rng)?;
    for slot in &mut s.slots {
        slot.round_steps = 0;
    }
    s.round += 1;
    Ok(MetricsRecord {
        round: s.round,
        cl_accuracy: s.classifier.accuracy(test)?,
        cloud_accuracy: Vec::new(),
        attacker_accuracy: Vec::new(),
        nmse: None,
        ssim: None,
        param_distance: None,
        bytes_cumulative: 0,
        messages_cumulative: 0,
    })
}

/// `per_user` labelled samples from every twin, in slot order.
pub fn synthetic_pool(s: &ServerState, per_user: usize, rng: &mut Rng) -> Result<LabeledDataset> {
    let cfg = &s.cfg;
    let mut samples = Matrix::zeros(0, cfg.data_dim);
    let mut labels = Vec::new();
    if per_user > 0 {
        for slot in &s.slots {
            let noise = sample_noise_n(rng, cfg, &slot.reg.classes, per_user)?;
            samples = samples.vcat(&generate(&slot.g, &noise, cfg)?)?;
            labels.extend_from_slice(&noise.labels);
        }
    }
    LabeledDataset::new(samples, labels, cfg.num_classes)
}
