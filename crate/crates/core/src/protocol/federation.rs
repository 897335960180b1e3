//! End-to-end simulation loop.

use std::io::Write;

use sha2::{Digest, Sha256};

use super::{
    client_step, local_rng, server_round_update, stream_seed, user_seed, Classifier,
    ClassifierConfig, ClientState, LogWriter, ReplayHeader, RoundConfig, ServerSlot, ServerState,
    Stream, TrainerConfig, UserDigest,
};
use crate::attacker::{attacker_init, evaluate_attack, AttackMode, AttackReport, AttackerConfig, AttackerState};
use crate::channel::{cost_compare, encode, ChannelKind, ChannelModel, CostReport};
use crate::data::{partition, take_cloud_fraction, DatasetSpec, LabeledDataset, SplitKind, SplitSpec};
use crate::error::{Error, Result};
use crate::gan::{generate, sample_noise_n, CGanConfig, NoiseBatch};
use crate::metrics::{classify_accuracy, MetricsRecord};
use crate::nnkernel::{InitScheme, Rng};

/// An eavesdropper on one user's link. Architecture and seed are the
/// victim's true ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackerSpec {
    pub target_user: u32,
    pub mode: AttackMode,
    pub r: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub master_seed: u64,
    pub dataset: DatasetSpec,
    pub split: SplitKind,
    pub num_users: usize,
    pub gan: CGanConfig,
    pub trainer: TrainerConfig,
    /// `steps_per_round = 0` means one local epoch: the largest shard
    /// divided by the batch size, rounded up.
    pub round: RoundConfig,
    pub classifier: ClassifierConfig,
    pub channel: ChannelKind,
    pub attackers: Vec<AttackerSpec>,
    pub rounds: usize,
    /// Noise rows per user for judge accuracy and attack evaluation.
    pub probe_size: usize,
    /// Epochs for the judge, a classifier trained on all real training data.
    pub judge_epochs: usize,
    /// Compare every client generator with its twin after every step.
    pub sync_check: bool,
    pub threads: usize,
}

/// Bias range used by every party once any attacker scales biases, so that
/// the perturbation is not a no-op on zero biases.
pub const BIAS_ATTACK_INIT_RANGE: f32 = 0.05;

impl FederationConfig {
    /// Hash of the configuration. The thread count does not affect results
    /// and is excluded.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = Self {
            threads: 1,
            ..self.clone()
        };
        Sha256::digest(format!("{canonical:?}").as_bytes()).into()
    }

    /// The trainer actually used: bias-scaling attackers switch a zero-bias
    /// init to uniform biases.
    pub fn effective_trainer(&self) -> TrainerConfig {
        let mut t = self.trainer;
        if t.init == InitScheme::GlorotZeroBias
            && self.attackers.iter().any(|a| a.mode == AttackMode::BiasScale)
        {
            t.init = InitScheme::GlorotUniformBias(BIAS_ATTACK_INIT_RANGE);
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        self.gan.validate()?;
        if self.num_users == 0 || self.rounds == 0 || self.probe_size == 0 {
            return Err(Error::config("num_users, rounds and probe_size must be positive"));
        }
        if self.num_users > u32::MAX as usize {
            return Err(Error::config("too many users"));
        }
        self.channel.validate()?;
        RoundConfig {
            steps_per_round: self.round.steps_per_round.max(1),
            ..self.round.clone()
        }
        .validate()?;
        for a in &self.attackers {
            if a.target_user as usize >= self.num_users {
                return Err(Error::config(format!(
                    "attacker targets user {} of {}",
                    a.target_user, self.num_users
                )));
            }
            if a.mode != AttackMode::Oracle && !(0.0..=1.0).contains(&a.r) {
                return Err(Error::config(format!("attacker r = {} outside [0, 1]", a.r)));
            }
        }
        Ok(())
    }

    /// Build and split the data: the cloud share is withheld per class before
    /// the rest is sharded among users.
    pub fn prepare(&self) -> Result<PreparedData> {
        self.validate()?;
        let (train, test) = self
            .dataset
            .build(&mut Rng::new(stream_seed(self.master_seed, Stream::Dataset)))?;
        if train.data_dim() != self.gan.data_dim || train.class_count() != self.gan.num_classes {
            return Err(Error::config(format!(
                "dataset is {}-dimensional with {} classes, model expects {} and {}",
                train.data_dim(),
                train.class_count(),
                self.gan.data_dim,
                self.gan.num_classes
            )));
        }
        let (cloud_idx, rest_idx) = take_cloud_fraction(
            &train,
            self.round.cloud_fraction,
            &mut Rng::new(stream_seed(self.master_seed, Stream::Cloud)),
        )?;
        let rest = train.subset(&rest_idx);
        let spec = SplitSpec::new(
            self.split.clone(),
            self.num_users,
            stream_seed(self.master_seed, Stream::Split),
        );
        let shards = partition(&rest, &spec)?;
        Ok(PreparedData {
            cloud: train.subset(&cloud_idx),
            train,
            test,
            shards,
        })
    }

    pub fn resolved_round(&self, data: &PreparedData) -> RoundConfig {
        let mut round = self.round.clone();
        if round.steps_per_round == 0 {
            let largest = data.shards.iter().map(LabeledDataset::len).max().unwrap_or(0);
            round.steps_per_round = largest.div_ceil(self.gan.batch_size).max(1);
        }
        round
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub cloud: LabeledDataset,
    pub shards: Vec<LabeledDataset>,
}

pub struct FederationOutput {
    pub records: Vec<MetricsRecord>,
    /// Evaluation of every attacker after the last round.
    pub attack_reports: Vec<AttackReport>,
    pub cost: CostReport,
    pub digests: Vec<UserDigest>,
    /// Largest number of differing parameters seen between any client
    /// generator and its twin; `None` unless `sync_check` is set.
    pub max_sync_diff: Option<usize>,
    pub round: RoundConfig,
    pub server: ServerState,
    pub clients: Vec<ClientState>,
    pub attackers: Vec<AttackerState>,
    pub judge: Classifier,
    pub data: PreparedData,
}

struct Lane {
    client: ClientState,
    rng: Rng,
    channel: ChannelModel<Vec<AttackerState>>,
    probe: NoiseBatch,
    log: Vec<Vec<u8>>,
    max_diff: usize,
}

fn run_lane(
    lane: &mut Lane,
    slot: &mut ServerSlot,
    gan: &CGanConfig,
    steps: usize,
    sync_check: bool,
    logging: bool,
) -> Result<()> {
    for _ in 0..steps {
        let msg = client_step(&mut lane.client, &mut lane.rng)?;
        let delivered = lane.channel.transmit(msg);
        slot.ingest(&delivered, gan)?;
        if sync_check {
            let diff = lane
                .client
                .generator()
                .params()
                .bit_diff_count(slot.generator().params());
            lane.max_diff = lane.max_diff.max(diff);
        }
        if logging {
            lane.log.push(encode(&delivered));
        }
    }
    Ok(())
}

fn run_round(
    lanes: &mut [Lane],
    slots: &mut [ServerSlot],
    gan: &CGanConfig,
    steps: usize,
    sync_check: bool,
    logging: bool,
    threads: usize,
) -> Result<()> {
    let threads = threads.clamp(1, lanes.len().max(1));
    if threads == 1 {
        for (lane, slot) in lanes.iter_mut().zip(slots.iter_mut()) {
            run_lane(lane, slot, gan, steps, sync_check, logging)?;
        }
        return Ok(());
    }
    let chunk = lanes.len().div_ceil(threads);
    std::thread::scope(|s| {
        let workers: Vec<_> = lanes
            .chunks_mut(chunk)
            .zip(slots.chunks_mut(chunk))
            .map(|(ls, ss)| {
                s.spawn(move || -> Result<()> {
                    for (lane, slot) in ls.iter_mut().zip(ss.iter_mut()) {
                        run_lane(lane, slot, gan, steps, sync_check, logging)?;
                    }
                    Ok(())
                })
            })
            .collect();
        workers
            .into_iter()
            .map(|w| w.join().expect("federation worker panicked"))
            .collect::<Result<()>>()
    })
}

/// Run the whole simulation. The output depends only on `cfg`; thread count
/// changes scheduling, not results. When `log` is given, every delivered
/// message is appended to it as a replay log.
pub fn run_federation(cfg: &FederationConfig, log: Option<&mut dyn Write>) -> Result<FederationOutput> {
    let data = cfg.prepare()?;
    let round = cfg.resolved_round(&data);
    round.validate()?;
    let trainer = cfg.effective_trainer();
    let gan = &cfg.gan;
    let master = cfg.master_seed;

    let mut clients = Vec::with_capacity(cfg.num_users);
    for (u, shard) in data.shards.iter().enumerate() {
        if shard.is_empty() {
            return Err(Error::config(format!("user {u} received no data")));
        }
        let id = u as u32;
        clients.push(ClientState::new(id, user_seed(master, id), gan, &trainer, shard.clone())?);
    }
    let registrations = clients.iter().map(ClientState::registration).collect::<Vec<_>>();
    let mut server_rng = Rng::new(stream_seed(master, Stream::Server));
    let mut server = ServerState::new(
        gan,
        &trainer,
        registrations.clone(),
        data.cloud.clone(),
        &cfg.classifier,
        &mut server_rng,
    )?;
    let mut judge_rng = Rng::new(stream_seed(master, Stream::Judge));
    let mut judge = Classifier::new(gan.data_dim, gan.num_classes, &cfg.classifier, &mut judge_rng)?;
    judge.train_epochs(&data.train, cfg.judge_epochs, &mut judge_rng)?;

    let mut probe_rng = Rng::new(stream_seed(master, Stream::Probe));
    let mut lanes = Vec::with_capacity(clients.len());
    for client in clients {
        let attackers = cfg
            .attackers
            .iter()
            .filter(|a| a.target_user == client.user_id())
            .map(|a| {
                attacker_init(
                    &AttackerConfig {
                        target_user: a.target_user,
                        mode: a.mode,
                        r: a.r,
                        assumed_arch: gan.gen_layers.clone(),
                        assumed_seed: client.seed(),
                        init: trainer.init,
                        optimizer: trainer.gen_optimizer,
                        learning_rate: trainer.gen_lr,
                    },
                    gan,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        lanes.push(Lane {
            probe: sample_noise_n(&mut probe_rng, gan, client.classes(), cfg.probe_size)?,
            rng: local_rng(client.seed()),
            channel: ChannelModel::with_tap(cfg.channel, attackers),
            client,
            log: Vec::new(),
            max_diff: 0,
        });
    }

    let mut writer = match log {
        Some(w) => Some(LogWriter::new(
            w,
            &ReplayHeader {
                config_digest: cfg.digest(),
                master_seed: master,
                gan: gan.clone(),
                trainer,
                users: registrations,
            },
        )?),
        None => None,
    };
    let image_shape = cfg.dataset.image_shape(gan.data_dim);
    let mut records = Vec::with_capacity(cfg.rounds);
    let mut attack_reports = Vec::new();
    for r in 0..cfg.rounds {
        run_round(
            &mut lanes,
            server.slots_mut(),
            gan,
            round.steps_per_round,
            cfg.sync_check,
            writer.is_some(),
            cfg.threads,
        )?;
        if let Some(w) = writer.as_mut() {
            for lane in &mut lanes {
                for bytes in lane.log.drain(..) {
                    w.record(&bytes)?;
                }
            }
        }
        let mut rec = server_round_update(&mut server, &round, &mut server_rng, &data.test)?;
        for (lane, slot) in lanes.iter().zip(server.slots()) {
            let x = generate(slot.generator(), &lane.probe, gan)?;
            rec.cloud_accuracy
                .push(classify_accuracy(judge.network(), &x, &lane.probe.labels)?);
        }
        let mut reports = Vec::new();
        for lane in &lanes {
            for a in lane.channel.tap().into_iter().flatten() {
                reports.push(evaluate_attack(
                    a,
                    lane.client.generator(),
                    gan,
                    &lane.probe,
                    judge.network(),
                    lane.client.classes(),
                    image_shape,
                )?);
            }
        }
        if !reports.is_empty() {
            let n = reports.len() as f64;
            rec.attacker_accuracy = reports.iter().map(|a| a.attacker_acc).collect();
            rec.nmse = Some(reports.iter().map(|a| a.nmse).sum::<f64>() / n);
            rec.ssim = Some(reports.iter().map(|a| a.ssim).sum::<f64>() / n);
            let dists: Vec<f64> = reports.iter().filter_map(|a| a.param_l2).collect();
            rec.param_distance = (!dists.is_empty()).then(|| dists.iter().sum::<f64>() / dists.len() as f64);
        }
        rec.bytes_cumulative = lanes.iter().map(|l| l.channel.bytes_sent()).sum();
        rec.messages_cumulative = lanes.iter().map(|l| l.channel.messages_sent()).sum();
        records.push(rec);
        if r + 1 == cfg.rounds {
            attack_reports = reports;
        }
    }

    let digests: Vec<UserDigest> = server.slots().iter().map(UserDigest::of).collect();
    if let Some(w) = writer {
        w.finish(&digests)?;
    }
    let messages = lanes.iter().map(|l| l.channel.messages_sent()).sum();
    let max_sync_diff = cfg.sync_check.then(|| lanes.iter().map(|l| l.max_diff).max().unwrap_or(0));
    let mut clients = Vec::with_capacity(lanes.len());
    let mut attackers = Vec::new();
    for lane in lanes {
        clients.push(lane.client);
        attackers.extend(lane.channel.into_tap().unwrap_or_default());
    }
    Ok(FederationOutput {
        records,
        attack_reports,
        cost: cost_compare("run", &gan.gen_layers, &gan.disc_layers, gan.batch_size, gan.z_dim)
            .with_messages(messages),
        digests,
        max_sync_diff,
        round,
        server,
        clients,
        attackers,
        judge,
        data,
    })
}

/// Classifier trained on real data alone, on the same schedule as the
/// server's: `rng` initializes it, it pretrains for
/// `classifier.pretrain_epochs`, then runs `epochs_per_round` epochs per round.
/// Returns the classifier and its final test accuracy.
pub fn centralized_baseline(
    train: &LabeledDataset,
    test: &LabeledDataset,
    classifier: &ClassifierConfig,
    epochs_per_round: usize,
    rounds: usize,
    rng: &mut Rng,
) -> Result<(Classifier, f64)> {
    let mut c = Classifier::new(train.data_dim(), train.class_count(), classifier, rng)?;
    c.train_epochs(train, classifier.pretrain_epochs, rng)?;
    for _ in 0..rounds {
        c.train_epochs(train, epochs_per_round, rng)?;
    }
    let acc = c.accuracy(test)?;
    Ok((c, acc))
}
