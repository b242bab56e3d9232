mod common;

use std::sync::OnceLock;

use genrom::dynamics::assemble_fom;
use genrom::pipeline::*;

fn trained() -> &'static (ModelArtifact, Campaign) {
    static CELL: OnceLock<(ModelArtifact, Campaign)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = common::toy_config();
        let artifact = train_offline(&cfg).unwrap();
        let test = run_campaign(&cfg, &assemble_fom(&cfg.fom).unwrap(), Split::Test).unwrap();
        (artifact, test)
    })
}

#[test]
fn saved_artifact_predicts_identically() {
    let (artifact, test) = trained();
    let dir = tempfile::tempdir().unwrap();
    artifact.save(dir.path()).unwrap();
    let loaded = ModelArtifact::load(dir.path()).unwrap();
    let obs = Observation::Signals(&test.samples[0].measurement);
    let ens = artifact.config.ensemble;
    let a = predict_online(artifact, obs, ens, 5, None).unwrap();
    let b = predict_online(&loaded, obs, ens, 5, None).unwrap();
    assert_eq!((a.mean, a.lower, a.upper), (b.mean, b.lower, b.upper));
    assert_eq!(a.parameters, b.parameters);
}

#[test]
fn stale_artifact_is_refused() {
    let (artifact, _) = trained();
    let dir = tempfile::tempdir().unwrap();
    artifact.save(dir.path()).unwrap();
    let manifest = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["config_hash"] = serde_json::Value::String("0".repeat(64));
    std::fs::write(&manifest, json.to_string()).unwrap();
    assert!(ModelArtifact::load(dir.path()).is_err());
    assert!(ModelArtifact::load(&dir.path().join("absent")).is_err());
}

#[test]
fn envelope_brackets_the_mean_trajectory() {
    let (artifact, test) = trained();
    for (i, s) in test.samples.iter().enumerate() {
        let b = predict_online(artifact, Observation::Signals(&s.measurement), artifact.config.ensemble, i as u64, None)
            .unwrap();
        assert_eq!(b.ensemble_size + b.failed, 4);
        assert!(b.lower.iter().zip(b.mean.iter()).all(|(l, m)| l <= m));
        assert!(b.mean.iter().zip(b.upper.iter()).all(|(m, u)| m <= u));
        assert!(b.parameters.samples.iter().all(|p| {
            p.values.iter().zip(artifact.config.parameters.bounds()).all(|(v, (lo, hi))| *v >= lo && *v <= hi)
        }));
    }
}

#[test]
fn single_member_ensemble_collapses_onto_the_mean() {
    let (artifact, test) = trained();
    let obs = Observation::Signals(&test.samples[1].measurement);
    let b = predict_online(artifact, obs, EnsembleConfig { n_basis: 1, n_param: 1 }, 3, None).unwrap();
    assert_eq!(b.ensemble_size, 1);
    assert_eq!(b.lower, b.mean);
    assert_eq!(b.upper, b.mean);
    let paired = predict_online(artifact, obs, EnsembleConfig { n_basis: 2, n_param: 5 }, 3, None).unwrap();
    assert_eq!(paired.ensemble_size + paired.failed, 5);
}

#[test]
fn features_and_signals_give_the_same_prediction() {
    let (artifact, test) = trained();
    let s = &test.samples[2];
    let ens = artifact.config.ensemble;
    let a = predict_online(artifact, Observation::Signals(&s.measurement), ens, 8, Some(&s.history.displacement)).unwrap();
    let b = predict_online(artifact, Observation::Features(&a.features), ens, 8, None).unwrap();
    assert_eq!(a.mean, b.mean);
    assert!(a.error_pct.unwrap() >= 0.0);
    assert!(b.error_pct.is_none());
}

#[test]
fn evaluation_reports_are_reproducible() {
    let (artifact, test) = trained();
    let a = evaluate(artifact, test).unwrap();
    let b = evaluate(artifact, test).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.ladder.len(), 4);
    let names: Vec<&str> = a.metrics.ladder.iter().map(|t| t.tier.as_str()).collect();
    assert_eq!(names, TIERS);
    let dir = tempfile::tempdir().unwrap();
    write_evaluation(dir.path(), &a).unwrap();
    let files = render_report(dir.path(), &dir.path().join("report")).unwrap();
    assert_eq!(files.len(), 2);
    let svg = std::fs::read_to_string(&files[1]).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polygon"));
}

#[test]
fn config_round_trips_through_json() {
    let cfg = CampaignConfig::desk(400, 40);
    let text = serde_json::to_string(&cfg).unwrap();
    let back: CampaignConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
    let minimal: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut trimmed = minimal.as_object().unwrap().clone();
    trimmed.retain(|k, _| ["fom", "parameters", "dt", "t_end", "features", "cvae", "inference"].contains(&k.as_str()));
    let defaults: CampaignConfig = serde_json::from_value(serde_json::Value::Object(trimmed)).unwrap();
    assert_eq!((defaults.n_train, defaults.n_test), (1000, 200));
}
