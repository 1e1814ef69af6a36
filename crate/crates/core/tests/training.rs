use textvae::data::Split;
use textvae::model::{reconstruction_nll, Variant};
use textvae::nn::{Mode, Session};
use textvae::train::metrics::strip_wallclock;
use textvae::train::{Checkpoint, RunDir, TrainConfig, Trainer};
use textvae::{Error, Tensor};

fn tiny(variant: Variant) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.model.variant = variant;
    c.model.channels = vec![4, 8];
    c.model.latent_dim = 4;
    c.model.embed_dim = 4;
    c.model.lstm_hidden = 8;
    c.model.bytenet_layers = 2;
    c.model.bytenet_channels = 6;
    c.corpus.window = 16;
    c.corpus.synth_length = 2000;
    c.train.batch_size = 4;
    c.train.max_steps = 40;
    c.train.eval_interval = 10;
    c.train.eval_batches = 2;
    c.train.anneal_steps = 20;
    c.train.checkpoint_interval = 20;
    c.train.samples = 2;
    c
}

#[test]
fn identical_seeds_give_identical_logs() {
    for v in Variant::ALL {
        let dir = tempfile::tempdir().unwrap();
        let mut texts = Vec::new();
        for i in 0..2 {
            let mut t = Trainer::new(tiny(v), None).unwrap();
            let run = RunDir::create(&dir.path().join(i.to_string()), "r", &t.config).unwrap();
            t.run(Some(&run)).unwrap();
            let csv = std::fs::read_to_string(run.metrics()).unwrap();
            texts.push((strip_wallclock(&csv).unwrap(), std::fs::read_to_string(run.samples()).unwrap()));
        }
        assert_eq!(texts[0], texts[1], "{v}");
        assert_eq!(texts[0].0.lines().count(), 1 + 4);
    }
}

#[test]
fn different_seeds_differ() {
    let a = {
        let mut t = Trainer::new(tiny(Variant::HybridLstm), None).unwrap();
        t.run_until(10, None).unwrap();
        t.rows()[0].train_loss
    };
    let mut c = tiny(Variant::HybridLstm);
    c.train.seed = 2;
    let mut t = Trainer::new(c, None).unwrap();
    t.run_until(10, None).unwrap();
    assert_ne!(a, t.rows()[0].train_loss);
}

#[test]
fn resume_matches_uninterrupted_run() {
    for v in [Variant::HybridBytenet, Variant::LstmVae] {
        let mut full = Trainer::new(tiny(v), None).unwrap();
        full.run_until(40, None).unwrap();

        let mut first = Trainer::new(tiny(v), None).unwrap();
        first.run_until(15, None).unwrap();
        let bytes = first.checkpoint().to_bytes();
        drop(first);
        let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), None).unwrap();
        assert_eq!(resumed.step, 15);
        resumed.run_until(40, None).unwrap();

        let strip = |rows: &[textvae::train::MetricRow]| {
            rows.iter()
                .map(|r| textvae::train::MetricRow { wallclock: 0.0, ..r.clone() })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(full.rows()), strip(resumed.rows()), "{v}");
        for (a, b) in full.store.entries().iter().zip(resumed.store.entries()) {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }
}

#[test]
fn checkpoint_of_other_model_is_rejected() {
    let t = Trainer::new(tiny(Variant::HybridLstm), None).unwrap();
    let ckpt = t.checkpoint();
    let mut other = tiny(Variant::HybridLstm);
    other.model.latent_dim = 5;
    let mut t2 = Trainer::new(other, None).unwrap();
    let err = t2.restore(&ckpt).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)), "{err}");
    assert_eq!(t2.step, 0);

    // a tensor with the wrong shape is named in the error
    let mut bad = ckpt.clone();
    let (name, t) = bad.tensors.iter_mut().find(|(n, _)| n == "param/enc.mu.bias").unwrap();
    *t = Tensor::zeros(&[3]);
    let name = name.clone();
    let mut t3 = Trainer::new(tiny(Variant::HybridLstm), None).unwrap();
    let before = t3.store.clone();
    let msg = t3.restore(&bad).unwrap_err().to_string();
    assert!(msg.contains("enc.mu.bias"), "{msg} / {name}");
    assert_eq!(t3.store, before);
}

#[test]
fn corrupted_checkpoint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(tiny(Variant::ConvDeconv), None).unwrap();
    let p = dir.path().join("x.ckpt");
    let bytes = t.checkpoint().to_bytes();
    std::fs::write(&p, &bytes[..bytes.len() - 5]).unwrap();
    assert!(matches!(Checkpoint::load(&p), Err(Error::Checkpoint(_))));
}

#[test]
fn nan_aborts_and_keeps_last_good_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(Variant::HybridLstm), None).unwrap();
    let run = RunDir::create(dir.path(), "nan", &t.config).unwrap();
    t.run_until(20, Some(&run)).unwrap();
    let good = run.latest_checkpoint().unwrap();
    let good_bytes = std::fs::read(&good).unwrap();
    let id = t.store.find("lm.out.weight").unwrap();
    t.store.get_mut(id).data_mut()[0] = f64::NAN;
    let err = t.run_until(40, Some(&run)).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)), "{err}");
    assert_eq!(run.latest_checkpoint().unwrap(), good);
    assert_eq!(std::fs::read(&good).unwrap(), good_bytes);
}

#[test]
fn deterministic_autoencoder_limit() {
    // kl_weight = 0, alpha = 0 and zero noise: the objective is the
    // reconstruction of a plain autoencoder decoding the posterior mean
    let mut c = tiny(Variant::HybridBytenet);
    c.train.kl_weight = Some(0.0);
    c.train.alpha = 0.0;
    let t = Trainer::new(c, None).unwrap();
    let mut rng = textvae::train::step_rng(9, 0);
    let batch = t.data.sample_batch(Split::Train, 4, &mut rng).unwrap();
    let hist = batch.history();
    let z_dim = t.config.model.latent_dim;

    let mut s = Session::new(&t.store, Mode::Train);
    let out = t.model.forward(&mut s, &batch, &hist, Tensor::zeros(&[4, z_dim]), 0.0, 0.0).unwrap();
    let hybrid = s.tape.value(out.loss).data()[0];

    let mut s = Session::new(&t.store, Mode::Train);
    let post = t.model.encode(&mut s, &batch.ids, 4).unwrap();
    let dec = t.model.decode(&mut s, post.mu, &hist).unwrap();
    let rec = reconstruction_nll(&mut s.tape, dec.lm_logits, &batch.ids, &batch.mask).unwrap();
    let ae = s.tape.value(rec).data()[0];
    assert!((hybrid - ae).abs() < 1e-12, "{hybrid} vs {ae}");
    let kl = textvae::model::kl_divergence(&mut s.tape, post).unwrap();
    assert_eq!(out.breakdown.kl, s.tape.value(kl).data()[0]);
}

#[test]
fn objective_decreases_on_periodic_text() {
    let mut c = tiny(Variant::ConvDeconv);
    c.train.max_steps = 300;
    c.train.eval_interval = 50;
    let mut t = Trainer::new(c, None).unwrap();
    t.run(None).unwrap();
    let losses: Vec<f64> = t.rows().iter().map(|r| r.train_loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "{losses:?}");
    assert!(losses.last().unwrap() < &(0.9 * losses[0]), "{losses:?}");
}

#[test]
fn run_directory_layout() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(Variant::HybridLstm), None).unwrap();
    let run = RunDir::create(dir.path(), "layout", &t.config).unwrap();
    t.run(Some(&run)).unwrap();
    assert!(run.path.file_name().unwrap().to_string_lossy().starts_with("layout-"));
    let snapshot = TrainConfig::load(&run.path.join("config.toml")).unwrap();
    assert_eq!(snapshot, t.config);
    assert_eq!(std::fs::read_to_string(run.samples()).unwrap().lines().count(), 2);
    let ckpts: Vec<_> = std::fs::read_dir(run.path.join("checkpoints")).unwrap().collect();
    assert_eq!(ckpts.len(), 3); // steps 0, 20, 40
}
