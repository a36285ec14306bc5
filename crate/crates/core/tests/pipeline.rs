use otdkit_core::genesis::CityConfig;
use otdkit_core::pipeline::{run_pipeline, synthesize, Artifacts, Inputs, PipelineConfig};

fn small() -> PipelineConfig {
    PipelineConfig {
        city: CityConfig {
            n_passengers: 60,
            n_days: 8,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn inputs_for(cfg: &PipelineConfig, dir: &std::path::Path) -> Inputs {
    let (city, sim) = synthesize(cfg).unwrap();
    let inputs = Inputs {
        network: city.network,
        swipes: sim.swipes,
        avl: sim.avl,
        schedule: sim.schedule,
    };
    let mut art = Artifacts::new(dir, &cfg.hash()).unwrap();
    inputs.write(&mut art).unwrap();
    Inputs::load(dir).unwrap()
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = small();
    let tmp = tempfile::tempdir().unwrap();
    let inputs = inputs_for(&cfg, &tmp.path().join("in"));
    let (m1, out) = run_pipeline(&cfg, &inputs, &tmp.path().join("a")).unwrap();
    let (m2, _) = run_pipeline(&cfg, &inputs, &tmp.path().join("b")).unwrap();
    assert_eq!(m1.stages, ["sync", "repair", "journeys", "chains", "fit-choice"]);
    assert!(!out.trips.is_empty());
    let a = std::fs::read(tmp.path().join("a/manifest.json")).unwrap();
    let b = std::fs::read(tmp.path().join("b/manifest.json")).unwrap();
    assert_eq!(a, b);
    assert_eq!(m1, m2);
    for e in &m1.artifacts {
        let text = std::fs::read_to_string(tmp.path().join("a").join(&e.name)).unwrap();
        assert!(text.contains(&m1.config_hash), "{} lacks the config hash", e.name);
    }
}

#[test]
fn empty_swipes_give_empty_outputs() {
    let cfg = small();
    let tmp = tempfile::tempdir().unwrap();
    let mut inputs = inputs_for(&cfg, &tmp.path().join("in"));
    inputs.swipes.clear();
    let (m, out) = run_pipeline(&cfg, &inputs, &tmp.path().join("out")).unwrap();
    assert!(out.trips.is_empty() && out.journeys.is_empty() && out.chains.is_empty() && out.models.is_empty());
    assert_eq!(m.stages.len(), 5);
}

#[test]
fn schema_errors_name_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small();
    let dir = tmp.path().join("in");
    inputs_for(&cfg, &dir);
    let path = dir.join("swipes.csv");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("bad,row\n");
    std::fs::write(&path, text).unwrap();
    let err = Inputs::load(&dir).unwrap_err().to_string();
    assert!(err.contains("swipes.csv"), "{err}");
}

#[test]
fn design_stages_run() {
    let tmp = tempfile::tempdir().unwrap();
    let base = small();
    let inputs = inputs_for(&base, &tmp.path().join("in"));
    let red = base.with_overrides([("design.mode", "redistribute")]).unwrap();
    let (m, _) = run_pipeline(&red, &inputs, &tmp.path().join("r")).unwrap();
    assert_eq!(m.stages.last().unwrap(), "redistribute");
    assert!(tmp.path().join("r/od_after.csv").exists());
    let opt = base
        .with_overrides([("design.mode", "optimize"), ("pso.iters", "10"), ("pso.swarm", "8"), ("design.ridership_floor", "0")])
        .unwrap();
    let (m, _) = run_pipeline(&opt, &inputs, &tmp.path().join("o")).unwrap();
    assert_eq!(m.stages.last().unwrap(), "optimize");
    let design: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("o/design.json")).unwrap()).unwrap();
    let h = design["best"]["headway_min"].as_f64().unwrap();
    assert!((2.0..=20.0).contains(&h));
    assert_eq!(design["od_after"], "od_after.csv");
}
