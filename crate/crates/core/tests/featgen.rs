mod common;

use common::fixtures::clusters;

use rand::Rng;
use tripaug::featgen::{
    argmax, fit, load_checkpoint, pretrain_classifier, pretrain_reconstructor, save_checkpoint,
    train_gan, ConditionTable, GanConfig, LabeledFeatures, PretrainConfig,
};
use tripaug::rng::substream;

#[test]
fn gradients_match_finite_differences() {
    for i in 0..20 {
        let r = common::check_configuration(i);
        assert!(r.first_order() < 1e-4, "configuration {i}: {r:?}");
        assert!(r.penalty < 1e-3, "configuration {i}: {r:?}");
    }
}

#[test]
fn classifier_separates_toy_clusters() {
    let (data, _) = clusters(16, 100, 1);
    let cfg = PretrainConfig { epochs: 20, lr: 0.05, batch: 16 };
    let net = pretrain_classifier(&data, &cfg, &mut substream(3, "t")).unwrap();
    let hits = data
        .rows
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| argmax(&net.apply(x).unwrap()) == y)
        .count();
    assert!(hits as f64 / data.rows.len() as f64 >= 0.99);
    let again = pretrain_classifier(&data, &cfg, &mut substream(3, "t")).unwrap();
    assert_eq!(net, again);
}

#[test]
fn single_sample_loss_decreases() {
    let (full, _) = clusters(4, 1, 2);
    let one = LabeledFeatures::new(vec![full.rows[0].clone()], &[full.classes[0]]).unwrap();
    let two = LabeledFeatures::new(full.rows[..2].to_vec(), &full.classes[..2]).unwrap();
    let one = LabeledFeatures { classes: two.classes.clone(), labels: vec![0], ..one };
    let mut last = f64::INFINITY;
    for epochs in 1..6 {
        let cfg = PretrainConfig { epochs, lr: 0.01, batch: 1 };
        let net = pretrain_classifier(&one, &cfg, &mut substream(4, "t")).unwrap();
        let loss = -net.apply(&one.rows[0]).unwrap()[0].ln();
        assert!(loss < last);
        last = loss;
    }
}

#[test]
fn zero_iterations_keeps_initialization_and_judges_stay_frozen() {
    let (data, _) = clusters(6, 20, 5);
    let mut cfg = GanConfig::toy(6);
    cfg.cond_dim = 4;
    cfg.hidden = 8;
    cfg.max_iter = 0;
    let cond = ConditionTable::synthesize(&data.classes, 4, 0).unwrap();
    let pre = PretrainConfig { epochs: 2, lr: 0.05, batch: 8 };
    let cls = pretrain_classifier(&data, &pre, &mut substream(0, "c")).unwrap();
    let rec = pretrain_reconstructor(&data, &cond, 8, 0.2, &pre, &mut substream(0, "r")).unwrap();
    let s0 = train_gan(&data, &cond, cls.clone(), rec.clone(), &cfg).unwrap();
    cfg.max_iter = 30;
    let s1 = train_gan(&data, &cond, cls.clone(), rec.clone(), &cfg).unwrap();
    assert_eq!(s0.best_iteration, 0);
    assert_eq!(s0.history.len(), 1);
    assert_eq!(s1.classifier, cls);
    assert_eq!(s1.reconstructor, rec);
    let s2 = train_gan(&data, &cond, cls, rec, &cfg).unwrap();
    assert_eq!(s1.generator, s2.generator);
    assert_eq!(s1.critic, s2.critic);
}

#[test]
fn toy_generator_converges() {
    let (data, means) = clusters(16, 200, 7);
    let cfg = GanConfig::toy(16);
    let cond = ConditionTable::synthesize(&data.classes, cfg.cond_dim, cfg.seed).unwrap();
    let state = fit(&data, &cond, &cfg).unwrap();
    let mut rng = substream(11, "gen");
    let mut hits = 0;
    let n = 200;
    for (label, &class) in data.classes.iter().enumerate() {
        let mut mean = [0.0; 16];
        for _ in 0..n {
            let x = state.generate(class, &mut rng).unwrap();
            if argmax(&state.classifier.apply(&x).unwrap()) == label {
                hits += 1;
            }
            for (m, v) in mean.iter_mut().zip(&x) {
                *m += v / n as f64;
            }
        }
        for (k, (g, r)) in mean.iter().zip(&means[label]).enumerate() {
            assert!((g - r).abs() < 3.0 * 0.5, "class {class} dim {k}: {g} vs {r}");
        }
    }
    let acc = hits as f64 / (3 * n) as f64;
    assert!(acc >= 0.9, "accuracy {acc}, history {:?}", state.history);
    let x = state.generate(1, &mut substream(1, "a")).unwrap();
    assert_eq!(x, state.generate(1, &mut substream(1, "a")).unwrap());
    assert_eq!(x.len(), 16);
    assert!(state.generate(99, &mut rng).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gan.ckpt");
    save_checkpoint(&state, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.config, state.config);
    assert_eq!(loaded.classes, state.classes);
    let y = loaded.generate(1, &mut substream(1, "a")).unwrap();
    for (a, b) in x.iter().zip(&y) {
        assert!((a - b).abs() < 1e-3 * (1.0 + a.abs()));
    }
    let bytes = std::fs::read(&path).unwrap();
    assert!(tripaug::featgen::parse_checkpoint(&bytes[..bytes.len() - 1], &path).is_err());
    let _ = rng.random::<u8>();
}
