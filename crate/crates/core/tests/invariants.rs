use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttcast::cells::{PittConfig, PittConvLstmCell};
use ttcast::cttd::{self, CttdChain};
use ttcast::data::{self, SplitSpec, SyntheticKind, SyntheticParams, VolumeSequence};
use ttcast::eof;
use ttcast::metrics;
use ttcast::network::{CellKind, Network, NetworkConfig};
use ttcast::params::ParamStore;
use ttcast::physics::{PhysicsKind, PhysicsSpec};
use ttcast::tensor::{Tape, Tensor};
use ttcast::trainer::{self, Checkpoint, TrainConfig, Trainer};
use ttcast::Error;

fn tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rand::Rng::random_range(&mut rng, -1.0..1.0))
}

fn config_strategy() -> impl Strategy<Value = PittConfig> {
    (1usize..4, 0usize..3, 1usize..4, prop_oneof![Just(1usize), Just(3)], 0usize..3).prop_map(
        |(order, extra, rank, kernel, phys)| PittConfig {
            order,
            steps: order + extra,
            rank,
            kernel,
            physics: [PhysicsSpec::none(), PhysicsSpec::diffusion(), PhysicsSpec::wave()][phys].clone(),
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tensor_len_matches_shape(shape in prop::collection::vec(1usize..5, 1..5)) {
        let t = Tensor::<f64>::zeros(&shape);
        prop_assert_eq!(t.len(), shape.iter().product::<usize>());
        prop_assert!(Tensor::<f64>::new(&shape, vec![0.0; t.len() + 1]).is_err());
    }

    #[test]
    fn gradients_are_deterministic(seed in any::<u64>(), h in 2usize..6, w in 2usize..6) {
        let grad = || {
            let tape = Tape::new();
            let x = tape.param(tensor(&[h, w, 2], seed));
            let k = tape.param(tensor(&[3, 3, 2, 3], seed ^ 1));
            let y = tape.conv2d(x, k, None).unwrap();
            let y = tape.tanh(y).unwrap();
            let loss = tape.mean_square(y).unwrap();
            tape.gradient(loss, &[x, k]).unwrap()
        };
        let (a, b) = (grad(), grad());
        for (ga, gb) in a.iter().zip(&b) {
            prop_assert_eq!(ga.data(), gb.data());
            prop_assert!(ga.all_finite());
        }
    }

    #[test]
    fn eof_basis_is_orthonormal_and_sorted(t in 2usize..12, n in 2usize..12, seed in any::<u64>()) {
        let s = tensor(&[t, n], seed);
        let m = DMatrix::from_row_slice(t, n, s.data());
        let p = t.min(n);
        let (pcs, basis) = eof::fit(&m, p).unwrap();
        prop_assert_eq!(pcs.shape(), (t, p));
        let gram = &basis.eofs * basis.eofs.transpose();
        prop_assert!((gram - DMatrix::identity(p, p)).abs().max() < 1e-10);
        prop_assert!(basis.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(basis.singular_values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn chain_param_count_matches_cores(k in prop_oneof![Just(1usize), Just(3), Just(5)],
                                       ranks in prop::collection::vec(1usize..5, 2..5)) {
        let cores: Vec<Tensor<f64>> = ranks.windows(2).map(|r| Tensor::zeros(&[k, k, r[0], r[1]])).collect();
        let chain = CttdChain::new(cores).unwrap();
        prop_assert_eq!(chain.param_count(), cttd::chain_param_count(k, &ranks));
        prop_assert_eq!(chain.rank_vector(), ranks.clone());
        if ranks.len() == 2 {
            prop_assert_eq!(cttd::dense_equivalent_count(1, k, &ranks), chain.param_count());
        }
    }

    #[test]
    fn chain_rejects_rank_mismatch(r0 in 1usize..4, r1 in 1usize..4, gap in 1usize..3) {
        let cores = vec![Tensor::<f64>::zeros(&[3, 3, r0, r1]), Tensor::zeros(&[3, 3, r1 + gap, 2])];
        prop_assert!(matches!(CttdChain::new(cores), Err(Error::Shape(_))));
    }

    #[test]
    fn pitt_cell_shapes(config in config_strategy(), s in 1usize..4, c in 1usize..4, seed in any::<u64>()) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = PittConvLstmCell::new(&mut store, "l", s, c, config.clone(), &mut rng).unwrap();
        let ranks = cell.ranks();
        prop_assert_eq!(ranks.len(), config.order + 1);
        prop_assert_eq!(*ranks.last().unwrap(), 4 * c);
        prop_assert_eq!(cell.coefficient.is_some(), config.physics.initial_coefficient().is_some());

        let tape = Tape::new();
        let params = store.bind(&tape);
        let state = cell.init_state(&tape, 4, 3);
        prop_assert_eq!(state.history.len(), config.steps);
        let x = tape.constant(tensor(&[4, 3, s], seed ^ 7).cast());
        let out = cell.step(&tape, &params, x, &state).unwrap();
        prop_assert_eq!(out.state.history.len(), config.steps);
        prop_assert_eq!(tape.shape(out.hidden), vec![4, 3, c]);
        prop_assert!(tape.value(out.hidden).all_finite());
        // Wave pairs consecutive orders, so a single order has no residual.
        let expects_residual = match config.physics.kind {
            PhysicsKind::None => false,
            PhysicsKind::Diffusion => true,
            PhysicsKind::Wave => config.order >= 2,
        };
        prop_assert_eq!(out.residual.is_some(), expects_residual);
        if let (Some(r), Some(id)) = (out.residual, cell.coefficient) {
            prop_assert!(tape.value(r).item() >= 0.0);
            let coef = store.get(id).item();
            prop_assert!((1.0 + coef.exp()).ln() >= 0.0);
        }
    }

    #[test]
    fn pitt_rejects_order_above_steps(order in 2usize..5, deficit in 1usize..3) {
        let config = PittConfig { order, steps: order.saturating_sub(deficit), ..PittConfig::default() };
        prop_assert!(matches!(config.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn block_inputs_follow_skips(channels in prop::collection::vec(1usize..40, 1..6), c in 1usize..4) {
        let cfg = NetworkConfig { channels: channels.clone(), ..NetworkConfig::desk(CellKind::Tt, [6, 4, c]) };
        let inputs = cfg.block_inputs();
        prop_assert_eq!(inputs[0], c);
        for b in 1..channels.len() {
            let skip = if b >= 2 { channels[b - 2] } else { 0 };
            prop_assert_eq!(inputs[b], channels[b - 1] + skip);
        }
    }

    #[test]
    fn train_config_rejects_bad_decay(factor in prop_oneof![-1.0f64..=0.0, 1.0f64..3.0]) {
        let cfg = TrainConfig { lr_decay_factor: factor, ..TrainConfig::default() };
        prop_assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn split_is_disjoint_and_complete(t in 40usize..120, frac in 0.3f64..0.7) {
        let seq = data::generate_synthetic(SyntheticKind::Diffusion, t, 1, 3, 3, &SyntheticParams::default(), 1).unwrap();
        let spec = SplitSpec { train_fraction: frac, window: 10 };
        let (train, val) = data::split(&seq, &spec).unwrap();
        prop_assert_eq!(train.len() + val.len(), t);
        let cut = train.len();
        prop_assert_eq!(val.data.data()[0], seq.data.data()[cut * seq.data.len() / t]);
        prop_assert!(data::window_starts(train.len(), 10).iter().all(|&s| s + 10 <= cut));
    }

    #[test]
    fn ssim_bounded_and_mse_nonnegative(seed in any::<u64>(), h in 4usize..12, w in 4usize..12) {
        let a = tensor(&[h, w, 2], seed);
        let b = tensor(&[h, w, 2], seed ^ 3);
        let s = metrics::ssim(&a, &b, 2.0).unwrap().value;
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert!(metrics::mse(&a, &b).unwrap() >= 0.0);
        prop_assert_eq!(metrics::mse(&a, &a).unwrap(), 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn checkpoint_bytes_are_stable(seed in any::<u64>(), cell in prop_oneof![
        Just(CellKind::Convlstm), Just(CellKind::Tt), Just(CellKind::PittDiffusion), Just(CellKind::PittWave)
    ]) {
        let cfg = NetworkConfig { channels: vec![3, 3], layers_per_block: 1, ..NetworkConfig::desk(cell, [4, 3, 2]) };
        let net = Network::build(cfg, seed).unwrap();
        let trainer = Trainer::new(net, TrainConfig { seed, ..TrainConfig::default() }).unwrap();
        let bytes = trainer.checkpoint().to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &trainer.checkpoint());
        let again = Trainer::from_checkpoint(&back).unwrap().checkpoint().to_bytes();
        prop_assert_eq!(bytes, again);
    }
}

#[test]
fn persistence_is_zero_on_constant_frames() {
    let frames = vec![Tensor::<f32>::full(&[3, 2, 1], 0.5); 30];
    assert_eq!(trainer::persistence_mse(&frames, 10, 10).unwrap(), 0.0);
}

#[test]
fn volume_sequence_rejects_non_finite() {
    let mut t = Tensor::<f32>::zeros(&[2, 1, 2, 2, 1]);
    t.data_mut()[3] = f32::NAN;
    assert!(matches!(VolumeSequence::new(t, 1.0), Err(Error::Numeric(_))));
}
