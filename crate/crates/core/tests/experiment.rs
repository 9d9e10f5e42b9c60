use std::path::Path;

use pulsesep::experiment::{
    embed_in_range_profile, excluded_average, median, process_recording, process_series, run_experiment, sweep_snr,
    ExperimentConfig, MeanSd, Method, Seeds, SeedResult, StageTiming,
};
use pulsesep::ga::GaConfig;
use pulsesep::scenario::simulate;
use pulsesep::Error;

fn quick(methods: Vec<Method>, seeds: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig { methods, seeds: Seeds::Count(seeds), ..ExperimentConfig::default() };
    c.scenario.duration = 5.0;
    c.ga = GaConfig { population: 16, generations: 4, ..GaConfig::default() };
    c
}

fn row(seed: u64, method: Method, errors: Vec<f64>) -> SeedResult {
    SeedResult {
        seed,
        method,
        errors: Some(errors),
        ptt: None,
        ptt_error: None,
        pwv: None,
        secondary_peaks: Vec::new(),
        fitness_trace: Vec::new(),
        failure: None,
        timing: StageTiming::default(),
    }
}

#[test]
fn config_validation() {
    let empty = ExperimentConfig { methods: Vec::new(), ..ExperimentConfig::default() };
    assert!(matches!(empty.validate(), Err(Error::Configuration(_))));
    assert!(ExperimentConfig { seeds: Seeds::List(Vec::new()), ..ExperimentConfig::default() }.validate().is_err());
    let no_gate = ExperimentConfig { input: Some("x.bin".into()), ..ExperimentConfig::default() };
    assert!(matches!(no_gate.validate(), Err(Error::Configuration(_))));
    assert!(ExperimentConfig { gate: Some("2:1".into()), ..ExperimentConfig::default() }.validate().is_err());
    assert!(ExperimentConfig::from_toml_str("methods = []").is_err());
    assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
    let c = ExperimentConfig::from_toml_str("methods = [\"jade\"]\nseeds = [4, 9]\n[ga]\npopulation = 10").unwrap();
    assert_eq!(c.methods, vec![Method::Jade]);
    assert_eq!(c.seeds.to_vec(), vec![4, 9]);
    assert_eq!(c.ga.population, 10);
    assert_eq!(c.ga.generations, 50);
}

#[test]
fn seeds_and_methods_parse() {
    assert_eq!(Seeds::parse("3").unwrap().to_vec(), vec![1, 2, 3]);
    assert_eq!(Seeds::parse("7, 2").unwrap().to_vec(), vec![7, 2]);
    assert!(Seeds::parse("x").is_err());
    assert_eq!(Method::parse("ICA").unwrap(), Method::Jade);
    assert_eq!(Method::parse("mvdr").unwrap().name(), "mvdr");
    assert!(Method::parse("pca").is_err());
}

#[test]
fn shipped_presets_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let reference = ExperimentConfig::load(&dir.join("reference.toml")).unwrap();
    assert_eq!(reference.scenario.targets.len(), 2);
    assert_eq!(reference.scenario.targets[1].power_db, -3.0);
    let close = ExperimentConfig::load(&dir.join("close_targets.toml")).unwrap();
    assert_eq!(close.scenario.targets[0].position, -0.1);
    let recording = ExperimentConfig::load(&dir.join("recording.toml")).unwrap();
    assert!(recording.input.as_ref().unwrap().starts_with(&dir));
    assert!(recording.gate.is_some());
}

#[test]
fn summary_statistics() {
    let m = MeanSd::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(m.mean, 2.5);
    assert!((m.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(MeanSd::of(&[2.0]).unwrap().sd, 0.0);
    assert!(MeanSd::of(&[]).is_none());
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
}

#[test]
fn exclusion_counts_large_errors() {
    let rows = vec![
        row(1, Method::Jade, vec![5e-6, 6e-6]),
        row(2, Method::Jade, vec![20e-6, 6e-6]),
        row(3, Method::Jade, vec![3e-6, 4e-6]),
        row(1, Method::Proposed, vec![1e-6, 1e-6]),
    ];
    let (runs, excluded, mean, per_target) = excluded_average(&rows, Method::Jade, 15e-6);
    assert_eq!((runs, excluded), (3, 1));
    assert!((per_target[0] - 4e-6).abs() < 1e-18 && (per_target[1] - 5e-6).abs() < 1e-18);
    assert!((mean.unwrap() - 4.5e-6).abs() < 1e-18);
}

#[test]
fn baselines_on_the_reference_scenario() {
    let c = ExperimentConfig { methods: vec![Method::Mvdr, Method::Jade], ..ExperimentConfig::default() };
    let report = run_experiment(&c).unwrap();
    assert_eq!(report.true_ptt, Some(0.3));
    let mvdr = report.method(Method::Mvdr).unwrap();
    let e = |s: &pulsesep::experiment::MethodSummary, i: usize| s.error[i].unwrap().mean * 1e6;
    assert!((e(mvdr, 0) - 9.0).abs() <= 3.0, "{}", e(mvdr, 0));
    assert!((e(mvdr, 1) - 10.1).abs() <= 3.0, "{}", e(mvdr, 1));
    let jade = report.method(Method::Jade).unwrap();
    assert!((e(jade, 0) - 5.6).abs() <= 2.0, "{}", e(jade, 0));
    assert!((e(jade, 1) - 5.8).abs() <= 2.0, "{}", e(jade, 1));
    assert!(report.results.iter().all(|r| r.failure.is_none()));
}

#[test]
fn reports_are_reproducible_and_consistent() {
    let c = quick(vec![Method::Mvdr, Method::Jade, Method::Proposed], 3);
    let a = run_experiment(&c).unwrap();
    let b = run_experiment(&c).unwrap();
    assert_eq!(a.to_json_without_timing().unwrap(), b.to_json_without_timing().unwrap());
    assert_eq!(a.results.len(), 9);
    for s in &a.summary {
        let rows: Vec<&SeedResult> = a.results.iter().filter(|r| r.method == s.method && r.failure.is_none()).collect();
        for t in 0..2 {
            let values: Vec<f64> = rows.iter().map(|r| r.errors.as_ref().unwrap()[t]).collect();
            let again = MeanSd::of(&values).unwrap();
            let stored = s.error[t].unwrap();
            assert!((again.mean - stored.mean).abs() <= 1e-12 * stored.mean.abs());
            assert!((again.sd - stored.sd).abs() <= 1e-12 * stored.sd.abs().max(1e-30));
        }
        let ptt: Vec<f64> = rows.iter().filter_map(|r| r.ptt_error).collect();
        assert_eq!(s.median_ptt_error, median(&ptt));
    }
    let proposed = a.results.iter().find(|r| r.method == Method::Proposed).unwrap();
    assert_eq!(proposed.fitness_trace.len(), 4);
}

#[test]
fn outputs_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick(vec![Method::Jade, Method::Proposed], 2);
    c.output_dir = Some(dir.path().to_path_buf());
    c.ga.generations = 3;
    run_experiment(&c).unwrap();
    for f in ["report.json", "seeds.csv", "summary.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let plots = dir.path().join("plots");
    for f in ["jade_seed1_iq.csv", "jade_seed1_displacement.csv", "jade_seed1_impulse.csv", "proposed_seed1_impulse_gen1.csv", "proposed_seed1_impulse_gen3.csv"] {
        assert!(plots.join(f).is_file(), "{f}");
    }
    assert!(!plots.join("jade_seed2_iq.csv").exists());
    let seeds = std::fs::read_to_string(dir.path().join("seeds.csv")).unwrap();
    assert!(seeds.starts_with("seed,method,error1_um,error2_um,ptt_ms"));
    assert_eq!(seeds.lines().count(), 5);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["results"].as_array().unwrap().len(), 4);
}

#[test]
fn recording_matches_the_in_memory_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick(vec![Method::Mvdr, Method::Jade, Method::Proposed], 1);
    let sim = simulate(&c.scenario, 1).unwrap();
    let tensor = embed_in_range_profile(&sim.received, 16, 8, 0.85, 0.05).unwrap();
    let path = dir.path().join("profile.bin");
    tensor.save(&path).unwrap();
    c.gate = Some("1.225:1.275".into());
    c.distance = Some(0.75);

    let memory = process_series(&c, &tensor).unwrap();
    c.input = Some(path);
    let file = process_recording(&c).unwrap();
    let via_run = run_experiment(&c).unwrap();
    assert_eq!(memory.to_json_without_timing().unwrap(), file.to_json_without_timing().unwrap());
    assert_eq!(file.to_json_without_timing().unwrap(), via_run.to_json_without_timing().unwrap());
    assert!(file.true_ptt.is_none());
    for r in &file.results {
        assert!(r.errors.is_none());
        if let (Some(ptt), Some(pwv)) = (r.ptt, r.pwv) {
            assert!((pwv - 0.75 / ptt).abs() < 1e-12);
        }
    }
}

#[test]
fn recording_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = quick(vec![Method::Jade], 1);
    c.gate = None;
    let sim = simulate(&c.scenario, 1).unwrap();
    let tensor = embed_in_range_profile(&sim.received, 4, 1, 1.0, 0.1).unwrap();
    assert!(matches!(process_series(&c, &tensor), Err(Error::Configuration(_))));

    let path = dir.path().join("broken.bin");
    std::fs::write(&path, b"RPTENSR1\x01").unwrap();
    c.gate = Some("1.05:1.15".into());
    c.input = Some(path);
    assert!(matches!(process_recording(&c), Err(Error::Format { .. })));
    c.input = Some(dir.path().join("missing.bin"));
    assert!(matches!(process_recording(&c), Err(Error::Io(_))));
}

#[test]
fn single_point_sweep_matches_a_run() {
    let mut c = quick(vec![Method::Jade], 1);
    let table = sweep_snr(&c, &[40.0]).unwrap();
    assert_eq!(table.rows.len(), 1);
    c.scenario.noise_power_db = -40.0;
    let report = run_experiment(&c).unwrap();
    let errors = report.results[0].errors.clone().unwrap();
    let r = table.row(40.0, Method::Jade).unwrap();
    assert_eq!((r.runs, r.excluded), (1, 0));
    assert_eq!(r.target_errors, errors);
    assert!(table.to_csv().starts_with("snr_db,method,runs,excluded,mean_error_um\n40,jade,1,0,"));
    assert!(sweep_snr(&c, &[]).is_err());
}
