//! Eavesdroppers that shadow-train a generator from intercepted messages.
//!
//! An attacker knows the victim's generator architecture and secret seed, but
//! its copy of the first dense layer is off by a factor `r`: weights for
//! [`AttackMode::WeightScale`], biases for [`AttackMode::BiasScale`].
//! [`AttackMode::Oracle`] applies no perturbation and serves as a positive
//! control.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::channel::Tap;
use crate::error::{Error, Result};
use crate::gan::{generate, train_generator_step, CGanConfig, NoiseBatch};
use crate::metrics::{batch_ssim, classify_accuracy, nmse};
use crate::nnkernel::{InitScheme, LayerSpec, Network, OptimizerKind, OptimizerState, Rng};
use crate::protocol::MpMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackMode {
    WeightScale,
    BiasScale,
    Oracle,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::WeightScale => "weight_scale",
            AttackMode::BiasScale => "bias_scale",
            AttackMode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight_scale" => Ok(AttackMode::WeightScale),
            "bias_scale" => Ok(AttackMode::BiasScale),
            "oracle" => Ok(AttackMode::Oracle),
            other => Err(Error::config(format!("unknown attack mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackerConfig {
    pub target_user: u32,
    pub mode: AttackMode,
    /// Ignored for the oracle.
    pub r: f32,
    pub assumed_arch: Vec<LayerSpec>,
    pub assumed_seed: u64,
    pub init: InitScheme,
    pub optimizer: OptimizerKind,
    pub learning_rate: f32,
}

#[derive(Debug, Clone)]
pub struct AttackerState {
    cfg: AttackerConfig,
    gan: CGanConfig,
    g: Network,
    opt: OptimizerState,
    steps_seen: u64,
    next_expected: u64,
    gaps: Vec<(u64, u64)>,
    failed_steps: u64,
    arch_mismatch: bool,
}

/// Build the attacker's generator from its assumed seed and architecture,
/// then perturb the first dense layer. `gan` supplies the noise, label and
/// data dimensions.
pub fn attacker_init(cfg: &AttackerConfig, gan: &CGanConfig) -> Result<AttackerState> {
    if cfg.mode != AttackMode::Oracle && !(0.0..=1.0).contains(&cfg.r) {
        return Err(Error::config(format!("attacker r = {} outside [0, 1]", cfg.r)));
    }
    let mut g = Network::init(&cfg.assumed_arch, cfg.init, &mut Rng::new(cfg.assumed_seed))?;
    if let Some(first) = g.params().first_dense() {
        let (w, b) = g.params_mut().dense_parts_mut(first);
        match cfg.mode {
            AttackMode::WeightScale => w.iter_mut().for_each(|x| *x *= cfg.r),
            AttackMode::BiasScale => b.iter_mut().for_each(|x| *x *= cfg.r),
            AttackMode::Oracle => {}
        }
    }
    let gan = CGanConfig {
        gen_layers: cfg.assumed_arch.clone(),
        ..gan.clone()
    };
    Ok(AttackerState {
        opt: OptimizerState::new(cfg.optimizer, cfg.learning_rate),
        cfg: cfg.clone(),
        gan,
        g,
        steps_seen: 0,
        next_expected: 0,
        gaps: Vec::new(),
        failed_steps: 0,
        arch_mismatch: false,
    })
}

impl AttackerState {
    pub fn config(&self) -> &AttackerConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Network {
        &self.g
    }

    pub fn steps_seen(&self) -> u64 {
        self.steps_seen
    }

    /// `(expected, got)` for every step discontinuity observed.
    pub fn gaps(&self) -> &[(u64, u64)] {
        &self.gaps
    }

    /// Messages whose generator step could not be applied.
    pub fn failed_steps(&self) -> u64 {
        self.failed_steps
    }

    /// Set once an intercepted discriminator's input width disagrees with the
    /// attacker's generator output.
    pub fn arch_mismatch(&self) -> bool {
        self.arch_mismatch
    }
}

/// Apply the same generator step the server would. Never fails: gaps and
/// unusable messages are recorded instead.
pub fn attacker_ingest(a: &mut AttackerState, msg: &MpMessage) {
    if msg.step != a.next_expected {
        a.gaps.push((a.next_expected, msg.step));
    }
    a.next_expected = msg.step + 1;
    a.steps_seen += 1;
    let d = Network::new(msg.disc_params.clone());
    if d.in_dim() != a.g.out_dim() + a.gan.num_classes {
        a.arch_mismatch = true;
    }
    let mut g = a.g.clone();
    let mut opt = a.opt.clone();
    match train_generator_step(&mut g, &d, &msg.noise, &mut opt, &a.gan) {
        Ok(_) => {
            a.g = g;
            a.opt = opt;
        }
        Err(_) => a.failed_steps += 1,
    }
}

impl Tap for AttackerState {
    fn observe(&mut self, msg: &MpMessage) {
        if msg.user_id == self.cfg.target_user {
            attacker_ingest(self, msg);
        }
    }
}

impl Tap for Vec<AttackerState> {
    fn observe(&mut self, msg: &MpMessage) {
        for a in self.iter_mut() {
            a.observe(msg);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub r: f32,
    pub mode: AttackMode,
    pub user_id: u32,
    pub attacker_acc: f64,
    pub cloud_acc: f64,
    pub nmse: f64,
    pub ssim: f64,
    /// `None` when the assumed architecture differs from the victim's.
    pub param_l2: Option<f64>,
}

impl AttackReport {
    pub const CSV_HEADER: &'static str = "r,mode,user_id,attacker_acc,cloud_acc,nmse,ssim,param_l2";

    pub fn write_csv_row<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            self.r,
            self.mode,
            self.user_id,
            self.attacker_acc,
            self.cloud_acc,
            self.nmse,
            self.ssim,
            self.param_l2.map_or(String::new(), |d| format!("{d:.6}"))
        )?;
        Ok(())
    }
}

pub fn write_attack_csv<W: Write>(reports: &[AttackReport], mut w: W) -> Result<()> {
    writeln!(w, "{}", AttackReport::CSV_HEADER)?;
    for r in reports {
        r.write_csv_row(&mut w)?;
    }
    Ok(())
}

/// Compare the attacker's generator with the victim's on identical noise.
///
/// `victim_gan` describes the victim's generator; images are
/// `image_shape = (height, width)` with values in `[-1, 1]`.
pub fn evaluate_attack(
    a: &AttackerState,
    victim: &Network,
    victim_gan: &CGanConfig,
    probe: &NoiseBatch,
    judge: &Network,
    victim_classes: &[usize],
    image_shape: (usize, usize),
) -> Result<AttackReport> {
    if probe.is_empty() {
        return Err(Error::UndefinedMetric("empty probe batch".into()));
    }
    if let Some(l) = probe.labels.iter().find(|l| !victim_classes.contains(l)) {
        return Err(Error::config(format!("probe label {l} not held by the victim")));
    }
    let forged = generate(&a.g, probe, &a.gan)?;
    let real = generate(victim, probe, victim_gan)?;
    if forged.shape() != real.shape() {
        return Err(Error::shape("attacker and victim outputs differ in shape"));
    }
    let (h, w) = image_shape;
    Ok(AttackReport {
        r: a.cfg.r,
        mode: a.cfg.mode,
        user_id: a.cfg.target_user,
        attacker_acc: classify_accuracy(judge, &forged, &probe.labels)?,
        cloud_acc: classify_accuracy(judge, &real, &probe.labels)?,
        nmse: nmse(&real, &forged)?,
        ssim: batch_ssim(&real, &forged, h, w, 2.0)?,
        param_l2: victim
            .params()
            .same_layout(a.g.params())
            .then(|| victim.params().l2_distance(a.g.params())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::sample_noise_n;
    use crate::protocol::TrainerConfig;

    fn gan() -> CGanConfig {
        CGanConfig::mlp(3, 2, 4, &[6], &[6], 0.2, 8)
    }

    fn cfg(mode: AttackMode, r: f32, init: InitScheme) -> AttackerConfig {
        AttackerConfig {
            target_user: 0,
            mode,
            r,
            assumed_arch: gan().gen_layers,
            assumed_seed: 77,
            init,
            optimizer: OptimizerKind::adam(),
            learning_rate: 2e-4,
        }
    }

    fn truth(init: InitScheme) -> Network {
        let t = TrainerConfig {
            init,
            ..TrainerConfig::default()
        };
        t.init_generator(&gan(), 77).unwrap()
    }

    #[test]
    fn oracle_starts_at_the_victim() {
        let a = attacker_init(&cfg(AttackMode::Oracle, 0.3, InitScheme::default()), &gan()).unwrap();
        assert!(a.generator().params().bit_eq(truth(InitScheme::default()).params()));
    }

    #[test]
    fn weight_scale_halves_only_first_weights() {
        let a = attacker_init(&cfg(AttackMode::WeightScale, 0.5, InitScheme::GlorotUniformBias(0.05)), &gan()).unwrap();
        let t = truth(InitScheme::GlorotUniformBias(0.05));
        let (wa, ba) = a.generator().params().dense_parts(0);
        let (wt, bt) = t.params().dense_parts(0);
        assert!(wa.iter().zip(wt).all(|(x, y)| x.to_bits() == (y * 0.5).to_bits()));
        assert!(ba.iter().zip(bt).all(|(x, y)| x.to_bits() == y.to_bits()));
        let n = wa.len();
        assert_eq!(a.generator().params().bit_diff_count(t.params()), n);
    }

    #[test]
    fn bias_scale_is_toothless_with_zero_biases() {
        let a = attacker_init(&cfg(AttackMode::BiasScale, 0.0, InitScheme::GlorotZeroBias), &gan()).unwrap();
        assert!(a.generator().params().bit_eq(truth(InitScheme::GlorotZeroBias).params()));
        let b = attacker_init(&cfg(AttackMode::BiasScale, 0.0, InitScheme::GlorotUniformBias(0.05)), &gan()).unwrap();
        assert!(!b.generator().params().bit_eq(truth(InitScheme::GlorotUniformBias(0.05)).params()));
    }

    #[test]
    fn r_outside_unit_interval_rejected() {
        assert!(attacker_init(&cfg(AttackMode::WeightScale, 1.5, InitScheme::default()), &gan()).is_err());
        assert!(attacker_init(&cfg(AttackMode::Oracle, 1.5, InitScheme::default()), &gan()).is_ok());
    }

    #[test]
    fn oracle_report_is_exact() {
        let g = gan();
        let a = attacker_init(&cfg(AttackMode::Oracle, 1.0, InitScheme::default()), &g).unwrap();
        let victim = truth(InitScheme::default());
        let judge = Network::init(
            &crate::gan::mlp_layers(4, &[5], 2, crate::nnkernel::Activation::Relu, crate::nnkernel::Activation::Identity),
            InitScheme::default(),
            &mut Rng::new(3),
        )
        .unwrap();
        let probe = sample_noise_n(&mut Rng::new(4), &g, &[0, 1], 20).unwrap();
        let rep = evaluate_attack(&a, &victim, &g, &probe, &judge, &[0, 1], (2, 2)).unwrap();
        assert_eq!(rep.nmse, 0.0);
        assert!((rep.ssim - 1.0).abs() < 1e-12);
        assert_eq!(rep.attacker_acc, rep.cloud_acc);
        assert_eq!(rep.param_l2, Some(0.0));
        assert!(evaluate_attack(&a, &victim, &g, &probe, &judge, &[0], (2, 2)).is_err());
    }

    #[test]
    fn csv_row() {
        let rep = AttackReport {
            r: 0.5,
            mode: AttackMode::BiasScale,
            user_id: 3,
            attacker_acc: 0.25,
            cloud_acc: 1.0,
            nmse: 1.5,
            ssim: 0.01,
            param_l2: None,
        };
        let mut out = Vec::new();
        rep.write_csv_row(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "0.5,bias_scale,3,0.250000,1.000000,1.500000,0.010000,\n"
        );
    }
}
