//! End-to-end runs of the four variants on simulated scenes.

use assisted_doa::eval::{run_variant, AlgorithmVariant, ExperimentConfig, Pipeline};
use assisted_doa::sim::{build_prototype_db, parse_angles, render_default};
use assisted_doa::spectrum::build_matched_pairs;
use assisted_doa::stft::analyze_with;
use assisted_doa::track::{OracleSpp, SppGate};

#[test]
fn variants_share_gating_and_match_separate_runs() {
    let mut cfg = ExperimentConfig::desk_default(3);
    cfg.scene.speech_duration_s = 1.0;
    let scene = cfg.scene_for(40.0, 0);
    let rendered = render_default(&scene).unwrap();
    let angles = parse_angles(&cfg.angles).unwrap();
    let db_h = build_prototype_db(&scene.array_h.geometry, &angles, &cfg.stft).unwrap();
    let db_e = build_prototype_db(&scene.array_e.geometry, &angles, &cfg.stft).unwrap();
    let pairs = build_matched_pairs(
        db_h.angles_deg(),
        db_e.angles_deg(),
        &scene.array_h.pose,
        &scene.array_e.pose,
        cfg.pair_radius_m,
        cfg.pair_count,
    )
    .unwrap();
    let tracker = cfg.tracker.resolve(&cfg.stft).unwrap();
    let pipeline = Pipeline::new(cfg.stft, &db_h, Some(&db_e), Some(pairs), tracker).unwrap();
    let stft = analyze_with(&rendered.mixture, cfg.stft).unwrap();
    let clean = analyze_with(&rendered.clean_speech, cfg.stft).unwrap();
    let noise = analyze_with(&rendered.noise, cfg.stft).unwrap();
    let oracle = OracleSpp::from_components(&clean, &noise, rendered.m_h).unwrap();

    for (gate, oracle) in [(SppGate::blind(rendered.m_h), None), (SppGate::oracle(rendered.m_h), Some(&oracle))] {
        let joint = pipeline.run(&stft, gate.clone(), oracle, &AlgorithmVariant::ALL).unwrap();
        let bearing: Vec<Vec<usize>> = joint
            .traces
            .iter()
            .map(|t| t.frames.iter().filter(|f| f.estimate.is_some()).map(|f| f.frame).collect())
            .collect();
        assert!(!bearing[0].is_empty());
        assert!(bearing.iter().all(|b| *b == bearing[0]), "variants disagree on estimate-bearing frames");
        for (v, trace) in AlgorithmVariant::ALL.iter().zip(&joint.traces) {
            let alone = run_variant(*v, &pipeline, &stft, gate.clone(), oracle).unwrap();
            assert_eq!(alone.variant, *v);
            assert_eq!(alone.estimates(), trace.estimates(), "{v}");
        }
    }
}

#[test]
fn experiment_report_is_well_formed() {
    let mut cfg = ExperimentConfig::desk_default(9);
    cfg.doas_deg = vec![-120.0, 0.0];
    cfg.noise_seeds = 2;
    cfg.scene.speech_duration_s = 0.6;
    let report = assisted_doa::run_experiment(&cfg).unwrap();
    assert_eq!(report.scenes.len(), 4);
    assert_eq!(report.metadata.failed_scenes, 0);
    for s in &report.scenes {
        let frames: Vec<usize> = s.variants.iter().map(|v| v.frames).collect();
        assert!(frames.iter().all(|&f| f == frames[0] && f > 0));
        for v in &s.variants {
            let a = v.accuracy.unwrap();
            assert!((0.0..=1.0).contains(&a));
            assert!((a - v.correct as f64 / v.frames as f64).abs() < 1e-12);
        }
    }
    for v in AlgorithmVariant::ALL {
        let a = report.average_of(v).unwrap();
        assert!((0.0..=1.0).contains(&a));
    }
    let json = report.to_json().unwrap();
    assert!(json.contains(&report.metadata.config_hash));
}
