use std::fs;
use std::path::Path;

use imutube_core::imusynth::{gravity, world_kinematics, SensorPlacement, Skeleton};
use imutube_core::pipeline::generator::clip_specs;
use imutube_core::pipeline::run::{virtual_outputs, PROVENANCE_FILE};
use imutube_core::pipeline::{
    exit, generate_synthetic, process_clip, run_pipeline, CameraMotion, ClipStatus,
    GeneratorConfig, ManifestSet, PipelineConfig, Scenario,
};

fn generate(
    dir: &Path,
    cfg: &GeneratorConfig,
    pc: &PipelineConfig,
) -> Vec<imutube_core::pipeline::ClipManifest> {
    generate_synthetic(cfg, &pc.synth, dir).unwrap();
    ManifestSet::load(&dir.join("manifest.json")).unwrap()
}

#[test]
fn one_csv_per_clip_track_and_placement() {
    let tmp = tempfile::tempdir().unwrap();
    let pc = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 2,
        duration_s: 3.0,
        ..GeneratorConfig::default()
    };
    let clips = generate(&tmp.path().join("data"), &gen, &pc);
    assert_eq!(clips.len(), 6);
    let out = tmp.path().join("out");
    let summary = run_pipeline(&clips, &pc, &out).unwrap();
    assert_eq!(summary.exit_code(), exit::OK);
    assert_eq!(summary.failed_clips, 0);
    let csvs = virtual_outputs(&summary, &out);
    assert_eq!(csvs.len(), 6 * pc.synth.placements.len());
    assert!(csvs
        .iter()
        .all(|p| p.exists() && p.with_extension("json").exists()));
    let provenance = fs::read_to_string(out.join(PROVENANCE_FILE)).unwrap();
    assert!(provenance.contains(&pc.fingerprint()));
    for (stage, fp) in pc.stage_fingerprints() {
        assert!(provenance.contains(stage) && provenance.contains(&fp));
    }
}

#[test]
fn empty_manifest_set_succeeds_with_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&[], &PipelineConfig::default(), tmp.path()).unwrap();
    assert_eq!(summary.exit_code(), exit::OK);
    assert_eq!(summary.streams_written, 0);
    assert!(tmp.path().join(PROVENANCE_FILE).exists());
}

#[test]
fn corrupt_depth_frame_skips_only_that_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let pc = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 1,
        scenarios: vec![Scenario::Still, Scenario::ArmWave],
        duration_s: 2.0,
        camera: CameraMotion::Pan,
        ..GeneratorConfig::default()
    };
    let data = tmp.path().join("data");
    let clips = generate(&data, &gen, &pc);
    let bad = &clips[1];
    let depth = bad
        .depth_dir
        .as_ref()
        .unwrap()
        .join(format!("{}_000010.dmap", bad.clip_id));
    fs::write(&depth, b"DMAPgarbage").unwrap();

    let summary = run_pipeline(&clips, &pc, &tmp.path().join("out")).unwrap();
    assert_eq!(summary.exit_code(), exit::PARTIAL);
    assert_eq!(summary.failed_clips, 1);
    assert!(summary.warnings > 0);
    assert!(matches!(summary.clips[0].status, ClipStatus::Ok { .. }));
    match &summary.clips[1].status {
        ClipStatus::Failed { error } => assert!(error.contains("dmap"), "{error}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn virtual_acceleration_matches_the_analytic_motion() {
    let tmp = tempfile::tempdir().unwrap();
    let mut pc = PipelineConfig::default();
    pc.synth.placements = vec!["wrist_right".into()];
    let gen = GeneratorConfig {
        subjects: 1,
        scenarios: vec![Scenario::Walk, Scenario::ArmWave],
        duration_s: 4.0,
        ..GeneratorConfig::default()
    };
    let clips = generate(tmp.path(), &gen, &pc);
    let skeleton = Skeleton::coco17();
    let wrist = SensorPlacement::named("wrist_right").unwrap();
    for (clip, spec) in clips.iter().zip(clip_specs(&gen)) {
        let processed = process_clip(clip, &pc).unwrap();
        let track = &processed.tracks[0];
        let stream = &processed.streams[0].1;
        let kin = world_kinematics(track, &skeleton, &wrist).unwrap();
        let (mut err, mut norm) = (0.0, 0.0);
        let margin = 10;
        for t in margin..stream.len() - margin {
            let measured = kin.orientations[t] * stream.accel[t] + gravity();
            let truth = spec.scene.joint_accelerations(t as f64 / gen.fps)[10];
            err += (measured - truth).norm_squared();
            norm += truth.norm_squared();
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 0.05, "{}: relative RMS error {rel}", clip.clip_id);
    }
}

#[test]
fn panning_camera_is_compensated() {
    let tmp = tempfile::tempdir().unwrap();
    let pc = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 1,
        scenarios: vec![Scenario::Still],
        duration_s: 3.0,
        camera: CameraMotion::Pan,
        ..GeneratorConfig::default()
    };
    let clips = generate(tmp.path(), &gen, &pc);
    let p = process_clip(&clips[0], &pc).unwrap();
    assert!(p.warnings.is_empty(), "{:?}", p.warnings);
    let rms_spread = |frames: Vec<Vec<nalgebra::Vector3<f64>>>| {
        let n = frames.len() as f64;
        let mut total = 0.0;
        for j in 0..frames[0].len() {
            let mean = frames.iter().map(|f| f[j]).sum::<nalgebra::Vector3<f64>>() / n;
            total += frames
                .iter()
                .map(|f| (f[j] - mean).norm_squared())
                .sum::<f64>()
                / n;
        }
        (total / frames[0].len() as f64).sqrt()
    };
    let world = rms_spread(p.tracks[0].joints_world.clone());
    let raw = rms_spread(p.calibrated[0].1.iter().map(|c| c.joints.clone()).collect());
    assert!(world < 1e-2 && raw > 0.5, "world {world} raw {raw}");
}

#[test]
fn map_budget_is_shared_across_recordings() {
    use imutube_core::pipeline::{fit_stream_map, load_streams};
    let tmp = tempfile::tempdir().unwrap();
    let pc = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 3,
        scenarios: vec![Scenario::Still, Scenario::Walk],
        duration_s: 4.0,
        ..GeneratorConfig::default()
    };
    let clips = generate(&tmp.path().join("data"), &gen, &pc);
    let out = tmp.path().join("out");
    run_pipeline(&clips, &pc, &out).unwrap();
    let virtual_ = load_streams(&out.join("virtual")).unwrap();
    let real = load_streams(&tmp.path().join("data/real")).unwrap();
    let full = fit_stream_map(&virtual_, &real, &pc.synth.placements, None).unwrap();
    assert_eq!(full.channels[0].target.len(), 6 * 120);
    // 3 s per class: one second from each of the three subjects.
    let capped = fit_stream_map(&virtual_, &real, &pc.synth.placements, Some(3.0)).unwrap();
    assert_eq!(capped.channels[0].target.len(), 2 * 3 * 30);
    for ch in &capped.channels {
        assert_eq!(ch.source.len(), full.channels[0].source.len());
    }
}
