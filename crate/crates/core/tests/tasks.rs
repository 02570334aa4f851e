use std::sync::OnceLock;

use gvcl::report::mean_std;
use gvcl::scenegen::{build_dataset, Dataset, GeneratorConfig, SplitFractions};
use gvcl::tasks::experiment::{HyperOverrides, Prepared};
use gvcl::tasks::train::{PhaseConfig, PhaseMode, PriorSource, Schedule};
use gvcl::tasks::variant::trajset_hash;
use gvcl::tasks::{
    run_experiment, run_plan, train_observation_task, train_prior_task, ExperimentConfig, Labels, ModelArtifact,
    ModelState, ModelVariant, PosteriorCheckpoint, Predictor, RunControl, TaskData, TaskKind, TaskSpec, VariantName,
};
use gvcl::trajset::{build_cover, TrajectorySet};
use gvcl::varcore::{init_params, softmax, ClassifierLoss, LikelihoodKind, Network, NetworkSpec, VariationalParams};
use gvcl::Error;

fn dataset() -> &'static Dataset {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    DATA.get_or_init(|| build_dataset(120, 5, SplitFractions::default(), &GeneratorConfig::default()).unwrap())
}

fn small_set() -> TrajectorySet {
    build_cover(&dataset().train_futures(), 8.0).unwrap()
}

fn spec(kind: TaskKind, epochs: usize, lr: f64) -> TaskSpec {
    TaskSpec {
        kind,
        loss: match kind {
            TaskKind::PriorKnowledge => LikelihoodKind::MultiLabelBce,
            TaskKind::Observation => LikelihoodKind::MultiClassCe,
        },
        epochs,
        batch_size: 5,
        base_lr: lr,
        beta: 0.2,
        schedule: Schedule::Constant,
        n_mc: 1,
    }
}

fn quick(name: VariantName, epochs: usize) -> ModelVariant {
    HyperOverrides {
        epochs: Some(epochs),
        prior_epochs: Some(epochs),
        ..Default::default()
    }
    .resolve(name)
    .unwrap()
}

#[test]
fn task_spec_pairs_kind_with_loss() {
    let mut s = spec(TaskKind::PriorKnowledge, 1, 0.01);
    assert!(s.validate().is_ok());
    s.loss = LikelihoodKind::MultiClassCe;
    assert!(matches!(s.validate(), Err(Error::Config(_))));
    let mut o = spec(TaskKind::Observation, 1, 0.01);
    o.loss = LikelihoodKind::MultiLabelBce;
    assert!(o.validate().is_err());
}

#[test]
fn constant_targets_are_fitted() {
    let set = small_set();
    let scenes = &dataset().train[..10];
    let ones = vec![vec![1.0; set.len()]; scenes.len()];
    let data = TaskData::new(scenes, &set, Labels::Drivable)
        .unwrap()
        .with_drivable_labels(ones)
        .unwrap();
    let net_spec = NetworkSpec::desk_default(set.len());
    let net = Network::new(&net_spec).unwrap();
    let init = init_params(&net_spec, 3).unwrap();
    let (ckpt, _) = train_prior_task(&net, &spec(TaskKind::PriorKnowledge, 60, 0.05), &data, init, 3).unwrap();
    assert_eq!(ckpt.task_id, 1);
    for s in scenes {
        let state = gvcl::tasks::scaled_state(s);
        let logits = net.forward(ckpt.params.means(), &s.raster, &state).unwrap();
        let mean_sigmoid = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).sum::<f64>() / logits.len() as f64;
        assert!(mean_sigmoid > 0.9, "mean sigmoid {mean_sigmoid}");
    }
}

#[test]
fn prior_task_reduces_bce_and_checkpoint_round_trips() {
    let set = small_set();
    let data = TaskData::new(&dataset().train[..10], &set, Labels::Drivable).unwrap();
    let net_spec = NetworkSpec::desk_default(set.len());
    let net = Network::new(&net_spec).unwrap();
    let init = init_params(&net_spec, 4).unwrap();
    let (ckpt, log) = train_prior_task(&net, &spec(TaskKind::PriorKnowledge, 30, 0.02), &data, init, 4).unwrap();
    let first = log.epochs.first().unwrap().nll;
    let last = log.epochs.last().unwrap().nll;
    assert!(last < first, "bce {first} -> {last}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("prior.json");
    ckpt.save(&path).unwrap();
    let back = PosteriorCheckpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let means_bits: Vec<u64> = back.params.means().iter().map(|v| v.to_bits()).collect();
    assert_eq!(
        means_bits,
        ckpt.params.means().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    let path2 = dir.path().join("again.json");
    back.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn observation_task_checks_its_prior() {
    let set = small_set();
    let data = TaskData::new(&dataset().train[..6], &set, Labels::Mode).unwrap();
    let net_spec = NetworkSpec::desk_default(set.len());
    let net = Network::new(&net_spec).unwrap();
    let params = init_params(&net_spec, 1).unwrap();
    let s = spec(TaskKind::Observation, 1, 0.01);

    let wrong_task = PosteriorCheckpoint::new(params.clone(), 2, 1.0).unwrap();
    assert!(train_observation_task(&net, &s, &data, &wrong_task, 1).is_err());

    let other = init_params(&NetworkSpec::desk_default(set.len() + 1), 1).unwrap();
    let wrong_shape = PosteriorCheckpoint::new(other, 1, 1.0).unwrap();
    assert!(matches!(
        train_observation_task(&net, &s, &data, &wrong_shape, 1),
        Err(Error::Shape(_))
    ));

    let ok = PosteriorCheckpoint::new(params.clone(), 1, 1.0).unwrap();
    assert_eq!(ok.as_prior().unwrap(), params);
    let (out, _) = train_observation_task(&net, &s, &data, &ok, 1).unwrap();
    assert_eq!(out.task_id, 2);
    assert!(PosteriorCheckpoint::new(params, 1, 0.5).is_err());
}

#[test]
fn zero_beta_observation_ignores_the_prior() {
    let set = small_set();
    let data = TaskData::new(&dataset().train[..8], &set, Labels::Mode).unwrap();
    let net_spec = NetworkSpec::desk_default(set.len());
    let net = Network::new(&net_spec).unwrap();
    let posterior = init_params(&net_spec, 9).unwrap();
    let prior = PosteriorCheckpoint::new(posterior.clone(), 1, 10.0).unwrap();
    let mut s = spec(TaskKind::Observation, 3, 0.01);
    s.beta = 0.0;
    let (informed, log_a) = train_observation_task(&net, &s, &data, &prior, 21).unwrap();

    let plain = PhaseConfig {
        name: "observation".into(),
        tag: 2,
        mode: PhaseMode::Variational {
            beta: 0.0,
            prior: PriorSource::StandardNormal,
            n_mc: 1,
        },
        loss: ClassifierLoss::Ce,
        epochs: 3,
        batch_size: 5,
        lr: 0.01,
        schedule: Schedule::Constant,
    };
    let res = run_plan(
        &net,
        &[plain],
        &[&data],
        ModelState::Variational(posterior),
        21,
        &RunControl::default(),
    )
    .unwrap()
    .unwrap();
    assert_eq!(res.state, ModelState::Variational(informed.params));
    assert_eq!(res.log, log_a);
    assert!(log_a.epochs.iter().all(|e| e.kl == 0.0));
}

fn prepared() -> &'static Prepared<'static> {
    static PREP: OnceLock<Prepared<'static>> = OnceLock::new();
    PREP.get_or_init(|| Prepared::new(dataset(), 8.0).unwrap())
}

#[test]
fn loss_with_zero_lambda_traces_base() {
    let p = prepared();
    let mut over = HyperOverrides {
        epochs: Some(3),
        lr: Some(0.0008),
        ..Default::default()
    };
    let base = over.resolve(VariantName::Base).unwrap();
    over.lambda_multi = Some(0.0);
    let loss = over.resolve(VariantName::Loss).unwrap();
    let a = p.train(&base, 0.5, 13, &RunControl::default()).unwrap().unwrap();
    let b = p.train(&loss, 0.5, 13, &RunControl::default()).unwrap().unwrap();
    assert_eq!(a.state, b.state);
    assert_eq!(a.log, b.log);
}

#[test]
fn gvcl_and_gvcl_det_share_training() {
    let p = prepared();
    let gvcl = p
        .train(&quick(VariantName::Gvcl, 2), 0.5, 7, &RunControl::default())
        .unwrap()
        .unwrap();
    let det = p
        .train(&quick(VariantName::GvclDet, 2), 0.5, 7, &RunControl::default())
        .unwrap()
        .unwrap();
    let bytes = |a: &ModelArtifact| serde_json::to_vec(&a.state).unwrap();
    assert_eq!(bytes(&gvcl), bytes(&det));
    assert_eq!(gvcl.log, det.log);

    let pred = Predictor::new(&det, &p.set).unwrap();
    let net = Network::new(&det.network).unwrap();
    for s in dataset().test.iter().take(5) {
        let got = pred.predict(s, 0).unwrap();
        let want = softmax(
            &net.forward(det.state.means(), &s.raster, &gvcl::tasks::scaled_state(s))
                .unwrap(),
        );
        assert_eq!(got, want);
        let sampled = Predictor::new(&gvcl, &p.set).unwrap().predict(s, 0).unwrap();
        assert_ne!(sampled, want);
        assert!((sampled.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(sampled, Predictor::new(&gvcl, &p.set).unwrap().predict(s, 0).unwrap());
    }
}

#[test]
fn vanishing_std_predicts_like_the_mean_network() {
    let p = prepared();
    let det = p
        .train(&quick(VariantName::Base, 1), 0.5, 2, &RunControl::default())
        .unwrap()
        .unwrap();
    let net = Network::new(&det.network).unwrap();
    let means = det.state.means().to_vec();
    let mut vi = det.clone();
    vi.variant = quick(VariantName::Vi, 1);
    vi.state = ModelState::Variational(
        VariationalParams::new(means.clone(), vec![1e-12; means.len()], net.layout().clone()).unwrap(),
    );
    let a = Predictor::new(&det, &p.set).unwrap();
    let b = Predictor::new(&vi, &p.set).unwrap();
    for s in dataset().test.iter().take(5) {
        let pa = a.predict(s, 3).unwrap();
        let pb = b.predict(s, 3).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-9);
        }
    }
}

#[test]
fn predictor_rejects_foreign_sets() {
    let p = prepared();
    let det = p
        .train(&quick(VariantName::Base, 1), 0.5, 2, &RunControl::default())
        .unwrap()
        .unwrap();
    let other = build_cover(&dataset().train_futures(), 3.0).unwrap();
    assert!(Predictor::new(&det, &other).is_err());
    let mut tampered = det.clone();
    tampered.trajset_hash = trajset_hash(&other);
    assert!(Predictor::new(&tampered, &p.set).is_err());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let p = prepared();
    let v = quick(VariantName::Gvcl, 3);
    let straight = p.train(&v, 0.5, 5, &RunControl::default()).unwrap().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let control = |n| RunControl {
        snapshot: Some(dir.path().join("snap.json")),
        stop_after_epochs: Some(n),
    };
    assert!(p.train(&v, 0.5, 5, &control(2)).unwrap().is_none());
    assert!(p.train(&v, 0.5, 5, &control(3)).unwrap().is_none());
    let resumed = p.train(&v, 0.5, 5, &control(10)).unwrap().unwrap();
    assert_eq!(
        serde_json::to_vec(&straight).unwrap(),
        serde_json::to_vec(&resumed).unwrap()
    );
    let other = quick(VariantName::Gvcl, 4);
    assert!(matches!(p.train(&other, 0.5, 5, &control(1)), Err(Error::Config(_))));
}

#[test]
fn exploding_learning_rate_is_reported_as_divergence() {
    let p = prepared();
    let v = HyperOverrides {
        epochs: Some(5),
        lr: Some(1e300),
        ..Default::default()
    }
    .resolve(VariantName::Base)
    .unwrap();
    match p.train(&v, 1.0, 1, &RunControl::default()) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn experiment_reports_are_reproducible_and_aggregate_correctly() {
    let cfg = ExperimentConfig::from_toml_str(
        r#"
        variant = "base"
        epsilon = 8.0
        fraction = 1.0
        seeds = [1, 2, 3]
        epochs = 2
        "#,
    )
    .unwrap();
    let a = run_experiment(&cfg, dataset()).unwrap();
    let b = run_experiment(&cfg, dataset()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.rows.len(), 3);
    assert_eq!(a.aggregates.len(), 1);
    let agg = &a.aggregates[0];
    for i in 0..11 {
        let vals: Vec<f64> = a.rows.iter().map(|r| r.metrics.as_array()[i]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((agg.mean.as_array()[i] - mean).abs() < 1e-12);
        assert!((agg.std.as_array()[i] - var.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&vals), (agg.mean.as_array()[i], agg.std.as_array()[i]));
    }
    assert!(a.to_csv().lines().count() == 4);
}

#[test]
fn config_rejects_inconsistent_fields() {
    let bad = [
        "variant = \"base\"\nepsilon = 8.0\nfraction = 1.5\nseeds = [1]",
        "variant = \"base\"\nepsilon = 8.0\nfraction = 0.5\nseeds = []",
        "variant = \"base\"\nepsilon = 8.0\nfraction = 0.5\nseeds = [1]\nlambda_multi = 0.1",
        "variant = \"bayes\"\nepsilon = 8.0\nfraction = 0.5\nseeds = [1]",
        "variant = \"gvcl\"\nepsilon = 8.0\nfraction = 0.5\nseeds = [1]\nsharpening = 0.5",
        "variant = \"base\"\nepsilon = 8.0\nfraction = 0.5\nseeds = [1]\nunknown = 1",
    ];
    for text in bad {
        assert!(
            matches!(ExperimentConfig::from_toml_str(text), Err(Error::Config(_))),
            "{text}"
        );
    }
    let loss =
        ExperimentConfig::from_toml_str("variant = \"loss\"\nepsilon = 4.0\nfraction = 0.1\nseeds = [1]").unwrap();
    assert_eq!(loss.model_variant().unwrap().hyper.lambda_multi, Some(0.01));
}

#[test]
fn sharper_priors_keep_predictions_on_the_road() {
    static DATA: OnceLock<Dataset> = OnceLock::new();
    let ds =
        DATA.get_or_init(|| build_dataset(300, 17, SplitFractions::default(), &GeneratorConfig::default()).unwrap());
    let set = build_cover(&ds.train_futures(), 8.0).unwrap();
    let prior_data = TaskData::new(&ds.train, &set, Labels::Drivable).unwrap();
    let obs = TaskData::new(&ds.train[..8], &set, Labels::Mode).unwrap();
    let net_spec = NetworkSpec::desk_default(set.len());
    let net = Network::new(&net_spec).unwrap();
    let held_out = &ds.test;
    let sharpenings = [1.0, 10.0, 100.0];
    let mut dac = [0.0; 3];
    for seed in 0..3u64 {
        let mut prior_spec = spec(TaskKind::PriorKnowledge, 10, 0.01);
        prior_spec.batch_size = 12;
        prior_spec.beta = 1.0 / 12.0;
        let (ckpt, _) = train_prior_task(
            &net,
            &prior_spec,
            &prior_data,
            init_params(&net_spec, seed).unwrap(),
            seed,
        )
        .unwrap();
        for (k, &sharp) in sharpenings.iter().enumerate() {
            let prior = ckpt.clone().with_sharpening(sharp).unwrap();
            let mut obs_spec = spec(TaskKind::Observation, 150, 0.01);
            obs_spec.batch_size = 8;
            obs_spec.beta = 1.0 / 8.0;
            let (post, _) = train_observation_task(&net, &obs_spec, &obs, &prior, seed).unwrap();
            let mut inside = 0.0;
            for s in held_out {
                let probs = softmax(
                    &net.forward(post.params.means(), &s.raster, &gvcl::tasks::scaled_state(s))
                        .unwrap(),
                );
                let top = gvcl::metrics::top_k(&probs, 5);
                let labels = gvcl::trajset::drivable_labels(&set, &s.mask, s.pose());
                inside += top.iter().filter(|&&m| labels[m]).count() as f64 / 5.0;
            }
            dac[k] += inside / held_out.len() as f64 / 3.0;
        }
    }
    eprintln!("dac by sharpening: {dac:?}");
    assert!(dac[0] <= dac[1] && dac[1] <= dac[2], "{dac:?}");
}
