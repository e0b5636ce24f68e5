use super::*;
use crate::data::synth_gaussian_ring;
use crate::numerics::Tensor;

fn ring(n: usize, seed: u64) -> Dataset {
    synth_gaussian_ring(n, 4, 1.0, 0.05, seed).unwrap()
}

fn base_config(method: Method, k: usize, objective: Objective) -> TrainConfig {
    TrainConfig {
        method,
        k,
        epochs: 2,
        batch_size: 5,
        objective,
        optimizer: None,
        d_steps_per_g_step: None,
        clip_c: None,
        seed: 9,
        checkpoint_interval: None,
        stratified: false,
        arch: ArchConfig::default(),
    }
}

#[test]
fn same_seed_same_model() {
    let data = ring(40, 3);
    let cfg = base_config(Method::Mgmd, 2, Objective::js());
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn different_seed_different_model() {
    let data = ring(40, 3);
    let mut cfg = base_config(Method::Mgmd, 2, Objective::js());
    let a = train(&data, &cfg).unwrap();
    cfg.seed = 10;
    let b = train(&data, &cfg).unwrap();
    assert_ne!(a.generators[0].params, b.generators[0].params);
}

#[test]
fn classic_is_k1_mgmd() {
    let data = ring(30, 5);
    let mgmd = train(&data, &base_config(Method::Mgmd, 1, Objective::js())).unwrap();
    let classic = train(&data, &base_config(Method::Classic, 1, Objective::js())).unwrap();
    assert_eq!(mgmd.generators, classic.generators);
    assert_eq!(mgmd.discriminators, classic.discriminators);
    assert_eq!(mgmd.partitions.parts, classic.partitions.parts);
    assert_eq!(mgmd.loss_history, classic.loss_history);
}

#[test]
fn loss_history_is_one_entry_per_epoch_and_finite() {
    let data = ring(40, 3);
    let mut cfg = base_config(Method::Mgmd, 3, Objective::js());
    cfg.epochs = 4;
    let model = train(&data, &cfg).unwrap();
    assert_eq!(model.loss_history.len(), 4);
    for e in &model.loss_history {
        assert_eq!(e.d_ascent.len(), 3);
        assert_eq!(e.g_value.len(), 3);
        assert!(e.d_ascent.iter().chain(e.g_value.iter()).all(|v| v.is_finite()));
    }
}

#[test]
fn pargan_has_one_generator_and_k_discriminators() {
    let data = ring(40, 3);
    let model = train(&data, &base_config(Method::Pargan, 3, Objective::js())).unwrap();
    assert_eq!(model.generators.len(), 1);
    assert_eq!(model.discriminators.len(), 3);
    assert_eq!(model.loss_history[0].g_value.len(), 1);
    // The shared generator trains against every discriminator.
    assert_eq!(model.objective.generator_coupling, GeneratorCoupling::All);
}

/// Observer that records which sample ids each discriminator trained on.
#[derive(Default)]
struct IdRecorder {
    per_pair: Vec<Vec<u64>>,
}

impl TrainObserver for IdRecorder {
    fn real_batch(&mut self, pair: usize, ids: &[u64]) {
        if self.per_pair.len() <= pair {
            self.per_pair.resize(pair + 1, Vec::new());
        }
        self.per_pair[pair].extend_from_slice(ids);
    }
}

#[test]
fn discriminators_only_see_their_own_partition() {
    let data = ring(47, 8);
    let mut cfg = base_config(Method::Mgmd, 3, Objective::js());
    cfg.epochs = 3;
    let mut rec = IdRecorder::default();
    let model = train_with_observer(&data, &cfg, &mut rec).unwrap();
    assert_eq!(rec.per_pair.len(), 3);
    for (pair, seen) in rec.per_pair.iter().enumerate() {
        let allowed: std::collections::HashSet<u64> = model.partitions.parts[pair]
            .iter()
            .map(|&r| data.ids[r])
            .collect();
        assert!(!seen.is_empty());
        for id in seen {
            assert!(allowed.contains(id), "pair {pair} trained on foreign id {id}");
        }
    }
}

/// Observer that checks the clip bound after every critic step.
struct ClipChecker {
    c: f64,
    steps: usize,
}

impl TrainObserver for ClipChecker {
    fn after_critic_step(&mut self, _pair: usize, disc: &MlpParams) {
        self.steps += 1;
        for t in &disc.tensors {
            for v in t.data() {
                assert!(v.is_finite());
                assert!(
                    v.abs() <= self.c,
                    "weight {v} escaped the clip bound {}",
                    self.c
                );
            }
        }
    }
}

#[test]
fn wasserstein_critic_weights_stay_clipped() {
    let data = ring(40, 3);
    let mut cfg = base_config(Method::Mgmd, 2, Objective::wasserstein());
    cfg.epochs = 3;
    let mut checker = ClipChecker { c: 0.01, steps: 0 };
    train_with_observer(&data, &cfg, &mut checker).unwrap();
    assert!(checker.steps > 0);
}

#[test]
fn js_mode_rejects_clip_setting() {
    let data = ring(20, 1);
    let mut cfg = base_config(Method::Mgmd, 2, Objective::js());
    cfg.clip_c = Some(0.01);
    let err = train(&data, &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn invalid_shapes_are_config_errors() {
    let data = ring(20, 1);

    let mut cfg = base_config(Method::Classic, 2, Objective::js());
    assert!(matches!(train(&data, &cfg).unwrap_err(), Error::Config(_)));

    cfg = base_config(Method::Pargan, 1, Objective::js());
    assert!(matches!(train(&data, &cfg).unwrap_err(), Error::Config(_)));

    cfg = base_config(Method::Mgmd, 0, Objective::js());
    assert!(matches!(train(&data, &cfg).unwrap_err(), Error::Config(_)));

    cfg = base_config(Method::Mgmd, 21, Objective::js());
    assert!(matches!(train(&data, &cfg).unwrap_err(), Error::Config(_)));

    cfg = base_config(Method::Mgmd, 2, Objective::js());
    cfg.epochs = 0;
    assert!(matches!(train(&data, &cfg).unwrap_err(), Error::Config(_)));
}

#[test]
fn tiny_partitions_fall_back_to_resampling() {
    // k=4 over 10 samples gives partitions of 2 and 3, smaller than the
    // batch; training must still take one step per epoch.
    let data = ring(10, 2);
    let cfg = base_config(Method::Mgmd, 4, Objective::js());
    let model = train(&data, &cfg).unwrap();
    assert_eq!(model.loss_history.len(), 2);
}

#[test]
fn defaults_follow_the_objective() {
    let js = base_config(Method::Mgmd, 2, Objective::js());
    assert_eq!(js.resolved_d_steps(), 1);
    assert_eq!(js.resolved_clip(), None);
    let opt = js.resolved_optimizer();
    assert_eq!(opt.kind, OptChoice::Adam);
    assert!((opt.learning_rate - 2e-4).abs() < 1e-15);
    assert!((opt.beta1 - 0.5).abs() < 1e-15);

    let w = base_config(Method::Mgmd, 2, Objective::wasserstein());
    assert_eq!(w.resolved_d_steps(), 5);
    assert_eq!(w.resolved_clip(), Some(0.01));
    assert_eq!(w.resolved_optimizer().kind, OptChoice::Sgd);
}

#[test]
fn arch_defaults_scale_with_data_width() {
    let toy = base_config(Method::Mgmd, 2, Objective::js());
    let (g, d, prior) = toy.resolve_arch(2).unwrap();
    assert_eq!(g.widths, vec![8, 32, 32, 2]);
    assert_eq!(d.widths, vec![2, 32, 32, 1]);
    assert_eq!(prior.dim, 8);

    let (g, d, prior) = toy.resolve_arch(784).unwrap();
    assert_eq!(g.widths, vec![64, 128, 256, 784]);
    assert_eq!(d.widths, vec![784, 256, 128, 1]);
    assert_eq!(prior.dim, 64);

    let mut custom = base_config(Method::Mgmd, 2, Objective::js());
    custom.arch.generator_widths = Some(vec![6, 16, 2]);
    custom.arch.discriminator_widths = Some(vec![2, 16, 1]);
    let (g, _, prior) = custom.resolve_arch(2).unwrap();
    assert_eq!(g.widths, vec![6, 16, 2]);
    assert_eq!(prior.dim, 6);

    custom.arch.latent_dim = Some(5);
    assert!(matches!(custom.resolve_arch(2).unwrap_err(), Error::Config(_)));
}

#[test]
fn wasserstein_discriminator_output_is_unbounded() {
    let cfg = base_config(Method::Mgmd, 2, Objective::wasserstein());
    let (_, d, _) = cfg.resolve_arch(2).unwrap();
    assert_eq!(d.output, Activation::Identity);
    let cfg = base_config(Method::Mgmd, 2, Objective::js());
    let (_, d, _) = cfg.resolve_arch(2).unwrap();
    assert_eq!(d.output, Activation::Sigmoid);
}

#[test]
fn checkpoint_interval_fires_on_schedule() {
    struct Counter {
        epochs: Vec<usize>,
    }
    impl TrainObserver for Counter {
        fn checkpoint_due(&mut self, epoch: usize, model: &TrainedModel) {
            self.epochs.push(epoch);
            assert_eq!(model.loss_history.len(), epoch);
        }
    }
    let data = ring(40, 3);
    let mut cfg = base_config(Method::Mgmd, 2, Objective::js());
    cfg.epochs = 5;
    cfg.checkpoint_interval = Some(2);
    let mut counter = Counter { epochs: Vec::new() };
    train_with_observer(&data, &cfg, &mut counter).unwrap();
    assert_eq!(counter.epochs, vec![2, 4]);
}

#[test]
fn training_moves_the_parameters() {
    let data = ring(40, 3);
    let cfg = base_config(Method::Mgmd, 2, Objective::js());
    let before = init_model(&data, &cfg).unwrap();
    let after = train(&data, &cfg).unwrap();
    assert_ne!(before.generators[0].params, after.generators[0].params);
    assert_ne!(before.discriminators[0].params, after.discriminators[0].params);
    // Init and trained models share the same partition layout.
    assert_eq!(before.partitions, after.partitions);
}

#[test]
fn dataset_digest_tracks_content() {
    let a = ring(20, 1);
    let b = ring(20, 2);
    assert_ne!(dataset_digest(&a), dataset_digest(&b));
    assert_eq!(dataset_digest(&a), dataset_digest(&ring(20, 1)));
}

#[test]
fn config_json_rejects_unknown_fields() {
    let good = r#"{
        "method": "mgmd", "k": 2, "epochs": 1, "batch_size": 8,
        "objective": {"kind": "js"}, "seed": 3
    }"#;
    // Objective carries its own defaults for mode and coupling.
    match serde_json::from_str::<TrainConfig>(good) {
        Ok(cfg) => {
            assert_eq!(cfg.method, Method::Mgmd);
            assert!(!cfg.stratified);
        }
        Err(e) => panic!("expected clean parse, got {e}"),
    }
    let bad = r#"{
        "method": "mgmd", "k": 2, "epochs": 1, "batch_size": 8,
        "objective": {"kind": "js"}, "seed": 3, "lerning_rate": 0.1
    }"#;
    assert!(serde_json::from_str::<TrainConfig>(bad).is_err());
}

#[test]
fn generator_updates_respect_d_steps_cadence() {
    struct StepCounter {
        critic: usize,
        gen: usize,
    }
    impl TrainObserver for StepCounter {
        fn after_critic_step(&mut self, _pair: usize, _d: &MlpParams) {
            self.critic += 1;
        }
        fn after_generator_step(&mut self, _gen: usize, _g: &MlpParams) {
            self.gen += 1;
        }
    }
    let data = ring(50, 4);
    let mut cfg = base_config(Method::Mgmd, 1, Objective::js());
    cfg.epochs = 2;
    cfg.batch_size = 5;
    cfg.d_steps_per_g_step = Some(3);
    let mut counter = StepCounter { critic: 0, gen: 0 };
    train_with_observer(&data, &cfg, &mut counter).unwrap();
    // 10 critic steps per epoch, 20 total, one generator step per 3 critic
    // steps with the counter carrying across epochs.
    assert_eq!(counter.critic, 20);
    assert_eq!(counter.gen, 6);
}

#[test]
fn pargan_generator_steps_once_per_full_round() {
    struct StepCounter {
        critic: usize,
        gen: usize,
    }
    impl TrainObserver for StepCounter {
        fn after_critic_step(&mut self, _pair: usize, _d: &MlpParams) {
            self.critic += 1;
        }
        fn after_generator_step(&mut self, gen: usize, _g: &MlpParams) {
            assert_eq!(gen, 0);
            self.gen += 1;
        }
    }
    let data = ring(60, 4);
    let mut cfg = base_config(Method::Pargan, 3, Objective::js());
    cfg.epochs = 2;
    cfg.batch_size = 5;
    let mut counter = StepCounter { critic: 0, gen: 0 };
    train_with_observer(&data, &cfg, &mut counter).unwrap();
    // 20 samples per partition, 4 steps per epoch, 3 critics each: the
    // generator moves once per round, so 4 times per epoch.
    assert_eq!(counter.critic, 24);
    assert_eq!(counter.gen, 8);
}

#[test]
fn nonzero_latent_flows_through_generated_batches() {
    let data = ring(30, 6);
    let cfg = base_config(Method::Mgmd, 2, Objective::js());
    let model = train(&data, &cfg).unwrap();
    let z = Tensor::filled(vec![3, model.latent_dim()], 0.3);
    let out = model.generators[0].forward(&z).unwrap();
    assert_eq!(out.shape(), &[3, 2]);
    assert!(out.data().iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
}
