use mixsyn::learner::{self, KnownData};
use mixsyn::lti::{FeedbackGain, LtiPlant};
use mixsyn::matops;
use mixsyn::pipeline::{self, PipelineConfig, Stage};
use mixsyn::simsde;

#[test]
fn identify_linearize_prefix_stops_after_plant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig { stages: vec![Stage::Identify, Stage::Linearize], ..PipelineConfig::default() };
    let rep = pipeline::run_pipeline(&cfg, dir.path()).unwrap();
    assert!(dir.path().join("plant.json").exists());
    assert!(!dir.path().join("k1.json").exists());
    assert!(rep.learning.is_none() && rep.gain_search.is_none());
    let plant = LtiPlant::from_json(&std::fs::read_to_string(dir.path().join("plant.json")).unwrap()).unwrap();
    assert_eq!((plant.n(), plant.m(), plant.qw()), (1, 2, 1));
    // drag and torque slope make the linearized speed dynamics stable
    assert!(plant.a[(0, 0)] < 0.0);
    assert!((plant.b2[(0, 0)] + 9.8).abs() < 0.05);
    let eq = rep.equilibrium.unwrap();
    assert!(eq.residual <= 1e-8);
    assert_eq!(eq.x_eq, vec![20.0]);
}

#[test]
fn supplied_plant_matches_direct_module_calls() {
    let dir = tempfile::tempdir().unwrap();
    let plant = mixsyn::fixtures::scalar_plant();
    let plant_path = dir.path().join("given_plant.json");
    std::fs::write(&plant_path, plant.to_json()).unwrap();
    let mut cfg = PipelineConfig {
        stages: vec![Stage::GainSearch, Stage::Collect, Stage::Learn],
        gamma: 2.0,
        ..PipelineConfig::default()
    };
    cfg.paths.plant = Some(plant_path);
    cfg.deploy.x0 = vec![1.0];
    cfg.collect.horizon = 100.0;
    let out = dir.path().join("out");
    let rep = pipeline::run_pipeline(&cfg, &out).unwrap();

    let found = mixsyn::hinf::find_admissible_gain(&plant, 2.0, &cfg.gain_search.poles, &cfg.search_options()).unwrap();
    let traj = simsde::simulate(&plant, &found.gain, &cfg.collect.sim_config(1, cfg.seed)).unwrap();
    let batch = simsde::collect_batch(&traj, cfg.collect.interval_len).unwrap();
    let res = learner::robust_gains(&batch, &KnownData::from_plant(&plant), &cfg.learn.learner_config(2.0), &found.gain, None).unwrap();
    assert_eq!(rep.learning.unwrap().k_hat, matops::to_rows(&res.k_hat));
    assert_eq!(rep.gain_search.unwrap().k1, matops::to_rows(&found.gain));
    assert!(rep.realizability.unwrap().satisfied());
}

#[test]
fn report_lists_realizability_and_admissibility_before_learning() {
    let dir = tempfile::tempdir().unwrap();
    let rep = pipeline::run_pipeline(&PipelineConfig::default(), dir.path()).unwrap();
    let gs = rep.gain_search.as_ref().unwrap();
    assert!(gs.admissibility.admissible);
    assert!(gs.admissibility.hinf_norm < 500.0);
    assert!(rep.realizability.as_ref().unwrap().stabilizable);
    let dep = rep.deployment.as_ref().unwrap();
    assert!(!dep.inject_worst_case);
    assert!(dep.steady_state_deviation[0].is_finite());
    let text = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(text.contains("\"realizability\""));
    for a in &rep.artifacts {
        assert!(dir.path().join(a).exists(), "{a}");
    }
    let history = std::fs::read_to_string(dir.path().join("learning_history.csv")).unwrap();
    assert!(history.starts_with("p,q,rel_err_P,rel_err_K,residual\n"));
}

#[test]
fn stage_failure_names_stage_and_completed_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig { gamma: 1e-3, ..PipelineConfig::default() };
    cfg.stages = vec![Stage::Identify, Stage::Linearize, Stage::GainSearch];
    let err = pipeline::run_pipeline(&cfg, dir.path()).unwrap_err();
    match &err {
        mixsyn::Error::Stage { stage, completed, .. } => {
            assert_eq!(stage, "gain_search");
            assert!(completed.contains(&"plant.json".to_string()));
        }
        other => panic!("unexpected error {other}"),
    }
    assert!(!err.is_validation());
}

#[test]
fn steady_state_slope_deviation_is_reduced_by_feedback() {
    let dir = tempfile::tempdir().unwrap();
    let rep = pipeline::run_pipeline(&PipelineConfig::default(), dir.path()).unwrap();
    let plant = LtiPlant::try_from(rep.plant.as_ref().unwrap()).unwrap();
    let w = matops::DenseMatrix::from_element(1, 1, 40f64.to_radians());
    let open = pipeline::steady_state(&plant, &FeedbackGain(matops::DenseMatrix::zeros(2, 1)), &w).unwrap();
    let closed = rep.deployment.unwrap().steady_state_deviation[0];
    assert!(closed.abs() < open[(0, 0)].abs());
}
