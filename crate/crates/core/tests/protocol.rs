mod common;

use common::toy_federation;
use psfedgan::attacker::{attacker_init, attacker_ingest, AttackMode, AttackerConfig};
use psfedgan::channel::{encode, ChannelKind, ChannelModel};
use psfedgan::data::{make_gaussian_mixture, make_glyphs};
use psfedgan::gan::{sample_noise, train_discriminator_step, train_generator_step, CGanConfig};
use psfedgan::metrics::write_metrics_csv;
use psfedgan::nnkernel::{splitmix64, InitScheme, Network, OptimizerKind, Rng};
use psfedgan::protocol::*;
use psfedgan::Error;

fn glyph_client(seed: u64, classes: usize) -> (CGanConfig, TrainerConfig, ClientState) {
    let all = make_glyphs(10, 30, &mut Rng::new(seed)).unwrap();
    let keep: Vec<usize> = (0..all.len()).filter(|&i| all.labels()[i] < classes).collect();
    let ds = all.subset(&keep);
    let cfg = CGanConfig::mlp(8, 10, 64, &[32], &[32], 0.2, 16);
    let trainer = TrainerConfig::default();
    let c = ClientState::new(0, seed, &cfg, &trainer, ds).unwrap();
    (cfg, trainer, c)
}

#[test]
fn twin_stays_bit_equal_every_step() {
    let (cfg, trainer, mut c) = glyph_client(3, 2);
    let mut slot = ServerSlot::new(c.registration(), &cfg, &trainer).unwrap();
    let mut rng = local_rng(c.seed());
    for t in 0..300 {
        let msg = client_step(&mut c, &mut rng).unwrap();
        slot.ingest(&msg, &cfg).unwrap();
        assert!(c.generator().params().bit_eq(slot.generator().params()), "step {t}");
    }
}

#[test]
fn discriminator_trajectory_ignores_the_server() {
    let (cfg, trainer, mut c) = glyph_client(4, 3);
    let shard = c.shard().clone();
    let classes = c.classes().to_vec();
    let seed = c.seed();
    let mut slot = ServerSlot::new(c.registration(), &cfg, &trainer).unwrap();
    let mut rng = local_rng(seed);
    let mut attached = Vec::new();
    for _ in 0..200 {
        let msg = client_step(&mut c, &mut rng).unwrap();
        slot.ingest(&msg, &cfg).unwrap();
        attached.push(param_digest(c.discriminator().params()));
    }

    // A plain local GAN with the same seeds and no publishing at all.
    let mut g = trainer.init_generator(&cfg, seed).unwrap();
    let mut d = Network::init(
        &cfg.disc_layers,
        trainer.init,
        &mut Rng::new(splitmix64(seed ^ DISC_SALT)),
    )
    .unwrap();
    let (mut g_opt, mut d_opt) = (trainer.gen_state(), trainer.disc_state());
    let mut rng = local_rng(seed);
    let mut alone = Vec::new();
    for _ in 0..200 {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(shard.len())).collect();
        let real = shard.samples().select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| shard.labels()[i]).collect();
        let z = sample_noise(&mut rng, &cfg, &classes).unwrap();
        train_discriminator_step(&mut d, &g, &real, &labels, &z, &mut d_opt, &cfg).unwrap();
        train_generator_step(&mut g, &d, &z, &mut g_opt, &cfg).unwrap();
        alone.push(param_digest(d.params()));
    }
    assert_eq!(attached, alone);
}

#[test]
fn step_gap_is_a_desync_and_leaves_the_twin_alone() {
    let (cfg, trainer, mut c) = glyph_client(5, 1);
    let mut slot = ServerSlot::new(c.registration(), &cfg, &trainer).unwrap();
    let mut rng = local_rng(c.seed());
    let first = client_step(&mut c, &mut rng).unwrap();
    let second = client_step(&mut c, &mut rng).unwrap();
    let before = slot.generator().clone();
    match slot.ingest(&second, &cfg) {
        Err(Error::Desync { expected: 0, got: 1, .. }) => {}
        other => panic!("expected desync, got {other:?}"),
    }
    assert!(slot.generator().params().bit_eq(before.params()));
    slot.ingest(&first, &cfg).unwrap();
    slot.ingest(&second, &cfg).unwrap();
    assert!(slot.generator().params().bit_eq(c.generator().params()));
}

#[test]
fn zero_server_learning_rate_is_caught_by_the_sync_check() {
    let (cfg, trainer, mut c) = glyph_client(6, 2);
    let frozen = TrainerConfig {
        gen_lr: 0.0,
        ..trainer
    };
    let mut slot = ServerSlot::new(c.registration(), &cfg, &frozen).unwrap();
    let init = slot.generator().clone();
    let mut rng = local_rng(c.seed());
    let mut diverged = false;
    for _ in 0..5 {
        let msg = client_step(&mut c, &mut rng).unwrap();
        slot.ingest(&msg, &cfg).unwrap();
        assert!(slot.generator().params().bit_eq(init.params()));
        diverged |= !c.generator().params().bit_eq(slot.generator().params());
    }
    assert!(diverged);
}

#[test]
fn oracle_attacker_tracks_the_twin_even_over_a_quantized_link() {
    let (cfg, trainer, mut c) = glyph_client(7, 2);
    let mut slot = ServerSlot::new(c.registration(), &cfg, &trainer).unwrap();
    let mut oracle = attacker_init(
        &AttackerConfig {
            target_user: 0,
            mode: AttackMode::Oracle,
            r: 1.0,
            assumed_arch: cfg.gen_layers.clone(),
            assumed_seed: c.seed(),
            init: trainer.init,
            optimizer: trainer.gen_optimizer,
            learning_rate: trainer.gen_lr,
        },
        &cfg,
    )
    .unwrap();
    let mut channel: ChannelModel = ChannelModel::new(ChannelKind::Quantized { bits: 8, clip: 1.0 });
    let mut rng = local_rng(c.seed());
    for _ in 0..50 {
        let delivered = channel.transmit(client_step(&mut c, &mut rng).unwrap());
        slot.ingest(&delivered, &cfg).unwrap();
        attacker_ingest(&mut oracle, &delivered);
        assert!(oracle.generator().params().bit_eq(slot.generator().params()));
    }
    // The client trained against its unquantized discriminator.
    assert!(!c.generator().params().bit_eq(slot.generator().params()));
    assert_eq!(channel.messages_sent(), 50);
}

fn a1(seed: u64, cfg: &CGanConfig, trainer: &TrainerConfig) -> psfedgan::attacker::AttackerState {
    attacker_init(
        &AttackerConfig {
            target_user: 0,
            mode: AttackMode::WeightScale,
            r: 0.9999,
            assumed_arch: cfg.gen_layers.clone(),
            assumed_seed: seed,
            init: trainer.init,
            optimizer: trainer.gen_optimizer,
            learning_rate: trainer.gen_lr,
        },
        cfg,
    )
    .unwrap()
}

#[test]
fn weight_scaled_attacker_drifts_away() {
    let cfg = CGanConfig::mlp(16, 2, 64, &[128, 128], &[128, 128], 0.2, 64);
    let trainer = TrainerConfig::default();
    let ds = make_glyphs(2, 100, &mut Rng::new(1)).unwrap();
    let mut c = ClientState::new(0, 99, &cfg, &trainer, ds).unwrap();
    let mut attacker = a1(99, &cfg, &trainer);
    let mut late = a1(99, &cfg, &trainer);
    let initial = attacker.generator().params().l2_distance(c.generator().params());
    assert!(initial > 0.0);
    let mut rng = local_rng(99);
    let mut dist = Vec::new();
    for t in 0..500 {
        let msg = client_step(&mut c, &mut rng).unwrap();
        attacker_ingest(&mut attacker, &msg);
        if t > 0 {
            attacker_ingest(&mut late, &msg);
        }
        dist.push(attacker.generator().params().l2_distance(c.generator().params()));
    }
    assert!(
        dist.iter().any(|&d| d >= 10.0 * initial),
        "initial {initial}, final {}",
        dist[499]
    );
    // Trend, not pointwise: the last fifth sits above the first fifth.
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&dist[400..]) > mean(&dist[..100]));
    assert_eq!(late.gaps(), &[(0, 1)]);
    let late_dist = late.generator().params().l2_distance(c.generator().params());
    assert!(late_dist >= dist[499], "missed first step: {late_dist} vs {}", dist[499]);
}

#[test]
fn federation_keeps_every_twin_synchronized() {
    let cfg = toy_federation(11);
    let out = run_federation(&cfg, None).unwrap();
    assert_eq!(out.max_sync_diff, Some(0));
    assert_eq!(out.records.len(), 3);
    let expected = (cfg.rounds * cfg.round.steps_per_round) as u64;
    for d in &out.digests {
        assert_eq!(d.steps, expected);
    }
    assert_eq!(out.records[2].messages_cumulative, expected * 3);
}

fn csv(out: &FederationOutput) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&out.records, &mut buf).unwrap();
    buf
}

#[test]
fn thread_count_does_not_change_results() {
    let one = toy_federation(12);
    let four = FederationConfig { threads: 4, ..one.clone() };
    let (mut log1, mut log4) = (Vec::new(), Vec::new());
    let a = run_federation(&one, Some(&mut log1)).unwrap();
    let b = run_federation(&four, Some(&mut log4)).unwrap();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(log1, log4);
    assert_eq!(a.digests, b.digests);
}

#[test]
fn replay_reproduces_digests_and_rejects_tampering() {
    let cfg = toy_federation(13);
    let mut log = Vec::new();
    let out = run_federation(&cfg, Some(&mut log)).unwrap();
    let outcome = replay(&log).unwrap();
    assert_eq!(outcome.digests, out.digests);
    assert_eq!(outcome.records, 3 * 3 * cfg.round.steps_per_round as u64);

    let stride = (log.len() / 97).max(1);
    for pos in (0..log.len()).step_by(stride).chain([log.len() - 1]) {
        let mut bad = log.clone();
        bad[pos] ^= 0x01;
        assert!(replay(&bad).is_err(), "flip at {pos} went unnoticed");
    }
    assert!(replay(&log[..log.len() - 1]).is_err());
}

#[test]
fn replay_detects_a_dropped_record_under_a_valid_checksum() {
    let cfg = toy_federation(14);
    let data = cfg.prepare().unwrap();
    let mut clients: Vec<ClientState> = data
        .shards
        .iter()
        .enumerate()
        .map(|(u, s)| {
            let id = u as u32;
            ClientState::new(id, user_seed(cfg.master_seed, id), &cfg.gan, &cfg.trainer, s.clone()).unwrap()
        })
        .collect();
    let header = ReplayHeader {
        config_digest: cfg.digest(),
        master_seed: cfg.master_seed,
        gan: cfg.gan.clone(),
        trainer: cfg.trainer,
        users: clients.iter().map(ClientState::registration).collect(),
    };
    let mut slots: Vec<ServerSlot> = header
        .users
        .iter()
        .map(|r| ServerSlot::new(r.clone(), &cfg.gan, &cfg.trainer).unwrap())
        .collect();
    let mut writer = LogWriter::new(Vec::new(), &header).unwrap();
    for (c, slot) in clients.iter_mut().zip(slots.iter_mut()) {
        let mut rng = local_rng(c.seed());
        for t in 0..6 {
            let msg = client_step(c, &mut rng).unwrap();
            slot.ingest(&msg, &cfg.gan).unwrap();
            if !(c.user_id() == 1 && t == 3) {
                writer.record(&encode(&msg)).unwrap();
            }
        }
    }
    let digests: Vec<UserDigest> = slots.iter().map(UserDigest::of).collect();
    let log = writer.finish(&digests).unwrap();
    assert!(replay(&log).is_err());
}

#[test]
fn cloud_only_with_no_synthetics_is_the_centralized_classifier() {
    let train = make_gaussian_mixture(4, 50, 0.2, &mut Rng::new(1)).unwrap();
    let test = make_gaussian_mixture(4, 20, 0.2, &mut Rng::new(2)).unwrap();
    let gan = CGanConfig::mlp(2, 4, 2, &[8], &[8], 0.2, 8);
    let ccfg = ClassifierConfig::default();
    let round = RoundConfig {
        steps_per_round: 1,
        synth_per_user: 0,
        cloud_fraction: 1.0,
        classifier_epochs_per_round: 2,
    };
    let mut rng = Rng::new(42);
    let mut server =
        ServerState::new(&gan, &TrainerConfig::default(), Vec::new(), train.clone(), &ccfg, &mut rng).unwrap();
    let mut acc = 0.0;
    for _ in 0..3 {
        acc = server_round_update(&mut server, &round, &mut rng, &test).unwrap().cl_accuracy;
    }
    let (central, central_acc) = centralized_baseline(&train, &test, &ccfg, 2, 3, &mut Rng::new(42)).unwrap();
    assert!(server.classifier().network().params().bit_eq(central.network().params()));
    assert_eq!(acc, central_acc);
}

#[test]
fn bias_attacker_switches_everyone_to_uniform_biases() {
    let mut cfg = toy_federation(15);
    assert_eq!(cfg.effective_trainer().init, InitScheme::GlorotZeroBias);
    cfg.attackers.push(AttackerSpec {
        target_user: 0,
        mode: AttackMode::BiasScale,
        r: 0.5,
    });
    assert_eq!(
        cfg.effective_trainer().init,
        InitScheme::GlorotUniformBias(BIAS_ATTACK_INIT_RANGE)
    );
    let out = run_federation(&cfg, None).unwrap();
    assert_eq!(out.max_sync_diff, Some(0));
    assert_eq!(out.attack_reports.len(), 1);
    assert!(matches!(cfg.trainer.gen_optimizer, OptimizerKind::Adam { .. }));
}
