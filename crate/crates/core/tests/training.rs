use ner_mrc::checkpoint;
use ner_mrc::encoder::EncoderConfig;
use ner_mrc::hrca::HrcaConfig;
use ner_mrc::model::{prepare_examples, NerMrcModel, Variant};
use ner_mrc::synth;
use ner_mrc::train::{batch_gradients, build_vocab, predict_corpus, train, AdamW, TrainConfig, TrainData};
use ner_mrc::Error;

fn config(epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        epochs,
        seed: 4,
        hrca: HrcaConfig::default(),
        encoder: EncoderConfig::default(),
        ..TrainConfig::default()
    }
}

#[test]
fn training_loss_falls_over_the_first_epochs() {
    let corpus = synth::corpus(50, 10, 0, 7);
    let data = TrainData {
        train: &corpus.train,
        dev: &corpus.dev,
        test: None,
    };
    let out = train(&config(3), data, &synth::catalog(), None).unwrap();
    let losses: Vec<f64> = out.record.epochs.iter().map(|e| e.train_loss).collect();
    assert_eq!(losses.len(), 3);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn loss_falls_over_first_steps_on_a_fixed_batch() {
    let sentences = synth::generate(2, 3);
    let catalog = synth::catalog();
    for variant in Variant::ALL {
        let mut c = config(1);
        c.ablation = variant;
        c.encoder.d_model = 16;
        let mut model = NerMrcModel::new(c.model_config(), build_vocab(&sentences, &catalog), catalog.clone(), 2).unwrap();
        let examples = prepare_examples(&sentences, &catalog, variant).unwrap();
        let batch: Vec<_> = examples.iter().collect();
        let mut opt = AdamW::new(&model.store, 0.9, 0.999, 1e-8, 0.01);
        let mut losses = Vec::new();
        for _ in 0..5 {
            let (loss, grads) = batch_gradients(&model, &batch).unwrap();
            assert!(loss >= 0.0);
            losses.push(loss);
            opt.step(&mut model.store, &grads, 1e-3);
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{}: {losses:?}", variant.name());
    }
}

#[test]
fn schedule_is_piecewise_linear_with_peak_after_warmup() {
    let corpus = synth::corpus(10, 2, 0, 1);
    let mut c = config(4);
    c.encoder.d_model = 8;
    c.warmup_fraction = 0.25;
    let data = TrainData {
        train: &corpus.train,
        dev: &corpus.dev,
        test: None,
    };
    let record = train(&c, data, &synth::catalog(), None).unwrap().record;
    let lr = &record.schedule;
    // 10 sentences, batch 2 → 5 steps per epoch, 20 in total, 5 of warmup
    assert_eq!(lr.len(), 20);
    let warmup = 5;
    assert_eq!(lr[0], 0.0);
    let peak = lr.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(lr.iter().position(|&x| x == peak), Some(warmup));
    assert!((peak - c.learning_rate).abs() < 1e-15);
    for w in lr[..=warmup].windows(3).chain(lr[warmup..].windows(3)) {
        assert!(((w[2] - w[1]) - (w[1] - w[0])).abs() < 1e-15, "{w:?}");
    }
    assert!((lr[19] - c.learning_rate / 15.0).abs() < 1e-15);
}

#[test]
fn checkpoint_round_trip_predicts_identically() {
    let corpus = synth::corpus(12, 4, 8, 2);
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let mut c = config(2);
        c.encoder.d_model = 16;
        c.ablation = variant;
        let data = TrainData {
            train: &corpus.train,
            dev: &corpus.dev,
            test: None,
        };
        let out = train(&c, data, &synth::catalog(), None).unwrap();
        let path = dir.path().join(format!("{}.ckpt", variant.name()));
        checkpoint::save(&out.last, &path).unwrap();
        let loaded = checkpoint::load(&path).unwrap();
        assert_eq!(predict_corpus(&out.last, &corpus.test).unwrap(), predict_corpus(&loaded, &corpus.test).unwrap());
        let t = ner_mrc::reconstruct(&corpus.test[0], &synth::catalog()).unwrap();
        if variant.uses_triplets() {
            assert_eq!(out.last.prediction_matrix(&t).unwrap(), loaded.prediction_matrix(&t).unwrap());
        }
    }
}

#[test]
fn early_stopping_cuts_the_epoch_count() {
    let corpus = synth::corpus(6, 3, 0, 8);
    let mut c = config(20);
    c.encoder.d_model = 8;
    c.learning_rate = 1e-9;
    c.early_stopping_patience = Some(2);
    let data = TrainData {
        train: &corpus.train,
        dev: &corpus.dev,
        test: None,
    };
    let record = train(&c, data, &synth::catalog(), None).unwrap().record;
    assert!(record.epochs.len() < 20);
    assert_eq!(record.epochs.len(), record.best_epoch + 2);

    c.early_stopping_patience = None;
    c.epochs = 3;
    let data = TrainData {
        train: &corpus.train,
        dev: &corpus.dev,
        test: None,
    };
    assert_eq!(train(&c, data, &synth::catalog(), None).unwrap().record.epochs.len(), 3);
}

#[test]
fn non_finite_loss_aborts_with_a_diagnostics_dump() {
    let corpus = synth::corpus(6, 2, 0, 8);
    let mut c = config(50);
    c.encoder.d_model = 8;
    c.learning_rate = 1e300;
    c.warmup_fraction = 0.0;
    let dir = tempfile::tempdir().unwrap();
    let data = TrainData {
        train: &corpus.train,
        dev: &corpus.dev,
        test: None,
    };
    match train(&c, data, &synth::catalog(), Some(dir.path())) {
        Err(Error::NonFiniteLoss { .. }) => {}
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.record.epochs.len())),
    }
    let dump: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert!(dump.get("step").is_some());
}
