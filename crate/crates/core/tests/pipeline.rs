use sdff_autograd::no_grad;
use sdff_core::checkpoint::Checkpoint;
use sdff_core::energy::Probe;
use sdff_core::events::stack_batch;
use sdff_core::net::{ModelConfig, SdformerFlow};
use sdff_core::nn::Ctx;
use sdff_core::synth::{generate_scenes, scene_to_sample, Sample, SceneConfig};
use sdff_core::train::{predict, train_step, AdamW, Batch, TrainConfig, Trainer};

fn samples(count: usize, seed: u64) -> Vec<Sample> {
    let cfg = SceneConfig::default();
    generate_scenes(&cfg, count, seed, None, (1.0, 3.0))
        .unwrap()
        .iter()
        .map(|s| scene_to_sample(s, cfg.duration_us, 10, 2).unwrap())
        .collect()
}

fn snapshot(model: &SdformerFlow) -> Vec<Vec<f32>> {
    model.state().iter().map(|(_, t)| t.to_vec()).collect()
}

#[test]
fn training_is_bitwise_reproducible() {
    let data = samples(8, 1);
    let run = || {
        let model = SdformerFlow::new(ModelConfig::tiny(), 3).unwrap();
        let cfg = TrainConfig {
            batch: 4,
            seed: 11,
            max_steps: Some(4),
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(&model, cfg).unwrap();
        let mut losses = Vec::new();
        for epoch in 0..2 {
            losses.extend(trainer.train_epoch(&model, &data, epoch).unwrap().losses);
        }
        (losses, snapshot(&model))
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la.len(), 4);
    assert_eq!(la.iter().map(|l| l.to_bits()).collect::<Vec<_>>(), lb.iter().map(|l| l.to_bits()).collect::<Vec<_>>());
    assert_eq!(pa, pb);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = samples(2, 2);
    let refs: Vec<&Sample> = data.iter().collect();
    let batch = Batch::new(&refs).unwrap();
    let model = SdformerFlow::new(ModelConfig::tiny(), 4).unwrap();
    let params = model.parameters();
    let before: Vec<Vec<f32>> = params.iter().map(|(_, t)| t.to_vec()).collect();
    let mut opt = AdamW::new(&params, 0.0, 1e-2);
    for step in 0..3 {
        train_step(&model, &mut opt, &batch, false, step).unwrap();
    }
    let after: Vec<Vec<f32>> = model.parameters().iter().map(|(_, t)| t.to_vec()).collect();
    assert_eq!(before, after);
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let data = samples(4, 3);
    let model = SdformerFlow::new(ModelConfig::tiny(), 5).unwrap();
    let mut trainer = Trainer::new(
        &model,
        TrainConfig {
            batch: 2,
            max_steps: Some(2),
            ..TrainConfig::default()
        },
    )
    .unwrap();
    trainer.train_epoch(&model, &data, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    Checkpoint::from_model(&model).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().into_model().unwrap();
    assert_eq!(snapshot(&model), snapshot(&loaded));
    assert_eq!(predict(&model, &data).unwrap(), predict(&loaded, &data).unwrap());

    let other = SdformerFlow::new(ModelConfig { base_dim: 16, ..ModelConfig::tiny() }, 0).unwrap();
    assert!(Checkpoint::load(&path).unwrap().load_into(&other).is_err());
}

#[test]
fn synaptic_layers_past_the_head_see_only_spikes() {
    let model = SdformerFlow::new(ModelConfig::tiny(), 6).unwrap();
    let data = samples(2, 4);
    let refs: Vec<_> = data.iter().map(|s| &s.input).collect();
    let x = stack_batch(&refs).unwrap();
    let mut cx = Ctx::with_probe(2, 5, Probe::new());
    let _guard = no_grad();
    model.forward(&x, &mut cx).unwrap();
    let probe = cx.take_probe().unwrap();
    let real_valued = ["sfg.head", "spe.shortcut", "decoder0.flow", "decoder1.flow"];
    for layer in probe.layers() {
        let expect_binary = !real_valued.contains(&layer.name.as_str());
        assert_eq!(layer.binary, expect_binary, "{}", layer.name);
    }
    assert!(!probe.spikes().is_empty());
    for s in probe.spikes() {
        let rate = s.ones as f64 / s.elements as f64;
        assert!(rate > 0.0 && rate < 1.0, "{} rate {rate}", s.name);
    }
}

#[test]
fn encoder_features_follow_stage_dims() {
    let cfg = ModelConfig::tiny();
    let model = SdformerFlow::new(cfg.clone(), 7).unwrap();
    let data = samples(3, 5);
    let refs: Vec<_> = data.iter().map(|s| &s.input).collect();
    let x = stack_batch(&refs).unwrap();
    let mut cx = Ctx::eval(3, cfg.time_steps);
    let _guard = no_grad();
    let skips = model.encode(&x, &mut cx).unwrap();
    assert_eq!(skips.len(), cfg.encoders);
    for (l, skip) in skips.iter().enumerate() {
        let side = 32 / (4 << l);
        let s = skip.shape();
        assert_eq!(s.iter().product::<usize>(), cfg.time_steps * 3 * side * side * cfg.dims()[l], "{s:?}");
        assert_eq!(*s.last().unwrap(), cfg.dims()[l], "{s:?}");
    }
    let out = model.forward(&x, &mut Ctx::eval(3, cfg.time_steps)).unwrap();
    assert_eq!(out.full.shape(), &[3, 2, 32, 32]);
}
