use psfedgan::channel::{bundled_architectures, decode, encode, encoded_len, ChannelKind, ChannelModel};
use psfedgan::data::make_glyphs;
use psfedgan::gan::CGanConfig;
use psfedgan::nnkernel::Rng;
use psfedgan::protocol::{client_step, local_rng, ClientState, TrainerConfig};

#[test]
fn real_messages_round_trip_at_the_predicted_size() {
    let cfg = CGanConfig::mlp(16, 10, 64, &[128, 128], &[128, 128], 0.2, 64);
    let ds = make_glyphs(3, 20, &mut Rng::new(2)).unwrap();
    let mut c = ClientState::new(0, 8, &cfg, &TrainerConfig::default(), ds).unwrap();
    let mut rng = local_rng(8);
    let mut channel: ChannelModel = ChannelModel::new(ChannelKind::Ideal);
    let mut bytes = 0u64;
    for _ in 0..4 {
        let msg = client_step(&mut c, &mut rng).unwrap();
        let wire = encode(&msg);
        let entries = msg.disc_params.layout().len();
        assert_eq!(wire.len(), encoded_len(entries, msg.disc_params.len(), 64, 16));
        assert!(decode(&wire).unwrap().bit_eq(&msg));
        bytes += wire.len() as u64;
        let delivered = channel.transmit(msg.clone());
        assert!(delivered.bit_eq(&msg));
    }
    assert_eq!(channel.bytes_sent(), bytes);
    assert_eq!(channel.messages_sent(), 4);
}

/// Counts worked out by hand from the layer widths; a dense `a -> b` layer
/// holds `a*b + b` parameters.
#[test]
fn bundled_costs_match_hand_counts() {
    let expected = [
        ("toy", 101_440, 85_249, 64, 64),
        ("gaussian2d", 5_058, 4_609, 64, 8),
        ("glyphs", 28_224, 26_241, 64, 16),
        ("dcgan_scale", 917_264, 916_993, 64, 100),
    ];
    let archs = bundled_architectures();
    assert_eq!(archs.len(), expected.len());
    for (arch, (name, g, d, b, z)) in archs.iter().zip(expected) {
        let c = arch.cost();
        assert_eq!(c.arch_name, name);
        assert_eq!((c.gen_params, c.disc_params), (g, d));
        assert_eq!(c.params_full, g + d);
        assert_eq!(c.params_psfedgan, d + b * (z + 1));
        assert_eq!(c.bytes_psfedgan(), 4 * (d + b * (z + 1)) as u64);
        assert!(c.params_psfedgan < c.params_full);
    }
}
