//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero when any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 5`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use imutube_core::calib3d::{solve_pnp, CameraIntrinsics, LmConfig, ScaleMode};
use imutube_core::distmap::{
    apply_map, apply_to_stream, fit_gaussian, fit_map, frechet_distance, ks_statistic,
    DistributionMap,
};
use imutube_core::egomotion::{
    backproject, colored_icp, estimate_normals, IcpConfig, MotionTrack3D,
};
use imutube_core::harlab::{
    ecdf_features, evaluate_loso, wilson_interval, window_count, EvalConfig, Protocol, Window,
};
use imutube_core::imusynth::{
    ensure_orientations, gravity, synthesize, world_kinematics, Origin, SensorPlacement, Skeleton,
    SynthConfig,
};
use imutube_core::pipeline::generator::clip_specs;
use imutube_core::pipeline::run::virtual_outputs;
use imutube_core::pipeline::{
    build_windows, fit_stream_map, generate_synthetic, load_dataset, load_streams, process_clip,
    run_pipeline, CameraMotion, ClipManifest, DomainShift, GeneratorConfig, LoadedStream,
    ManifestSet, PipelineConfig, Scenario, SynthStageConfig,
};
use imutube_core::trackio::hungarian::min_cost_assignment;
use imutube_core::RigidTransform;

type Check = Result<String, String>;

/// Number, name and body of one criterion.
type Criterion = (u32, &'static str, Box<dyn Fn() -> Check>);

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation3<f64> {
    let axis = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    )
    .normalize();
    Rotation3::from_scaled_axis(axis * rng.random_range(0.0..max_angle))
}

fn geometry_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let intr = CameraIntrinsics::pinhole(800.0, 320.0, 240.0);
    let rest = Skeleton::coco17().rest_pose();
    let mut pnp_ok = 0;
    let (mut pnp_rot, mut pnp_tr) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let p3: Vec<Vector3<f64>> = rest
            .iter()
            .map(|p| {
                p + Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    0.0,
                )
            })
            .collect();
        let truth = RigidTransform::new(
            random_rotation(&mut rng, PI),
            Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(3.0..8.0),
            ),
        );
        let p2: Vec<Option<Vector2<f64>>> = p3
            .iter()
            .map(|p| intr.project(&truth.apply(p)).ok())
            .collect();
        let Ok(sol) = solve_pnp(
            &p2,
            &p3,
            &intr,
            None,
            ScaleMode::Estimate,
            &LmConfig::default(),
        ) else {
            continue;
        };
        let rot = sol.transform.rotation_angle_to(&truth);
        let tr = (sol.transform.translation - truth.translation).norm();
        pnp_rot = pnp_rot.max(rot);
        pnp_tr = pnp_tr.max(tr);
        if rot < 1e-5 && tr < 1e-5 {
            pnp_ok += 1;
        }
    }

    let gen = GeneratorConfig::default();
    let scene = clip_specs(&gen)[0].scene;
    let (depth, color) = scene.render(0.0);
    let cfg = IcpConfig::default();
    let target = backproject(&depth, &color, &scene.intrinsics, 2, None)
        .and_then(|c| estimate_normals(&c, cfg.normal_neighbors))
        .map_err(|e| e.to_string())?;
    let mut icp_ok = 0;
    let (mut icp_rot, mut icp_tr) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let offset = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        )
        .normalize()
            * rng.random_range(0.0..0.1);
        let truth = RigidTransform::new(random_rotation(&mut rng, 10f64.to_radians()), offset);
        let mut source = target.clone();
        let inv = truth.inverse();
        source.points = target.points.iter().map(|p| inv.apply(p)).collect();
        source.normals = None;
        match colored_icp(&source, &target, &cfg) {
            Ok(r) => {
                let rot = r.transform.rotation_angle_to(&truth);
                let tr = (r.transform.translation - truth.translation).norm();
                icp_rot = icp_rot.max(rot);
                icp_tr = icp_tr.max(tr);
                if rot < 1e-3 && tr < 1e-3 {
                    icp_ok += 1;
                }
            }
            Err(e) => return Err(format!("ICP failed: {e}")),
        }
    }
    verdict(
        pnp_ok == 100 && icp_ok == 50,
        format!(
            "PnP {pnp_ok}/100 (max err {pnp_rot:.1e} rad, {pnp_tr:.1e} m); \
             ICP {icp_ok}/50 (max err {icp_rot:.1e} rad, {icp_tr:.1e} m)"
        ),
    )
}

fn rms_spread(frames: &[Vec<Vector3<f64>>]) -> f64 {
    let n = frames.len() as f64;
    let joints = frames[0].len();
    let mut total = 0.0;
    for j in 0..joints {
        let mean = frames.iter().map(|f| f[j]).sum::<Vector3<f64>>() / n;
        total += frames
            .iter()
            .map(|f| (f[j] - mean).norm_squared())
            .sum::<f64>()
            / n;
    }
    (total / joints as f64).sqrt()
}

fn ego_compensation() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pc = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 1,
        scenarios: vec![Scenario::Still],
        duration_s: 3.0,
        camera: CameraMotion::Pan,
        ..GeneratorConfig::default()
    };
    generate_synthetic(&gen, &pc.synth, tmp.path()).map_err(|e| e.to_string())?;
    let clips = ManifestSet::load(&tmp.path().join("manifest.json")).map_err(|e| e.to_string())?;
    let p = process_clip(&clips[0], &pc).map_err(|e| e.to_string())?;
    let world = rms_spread(&p.tracks[0].joints_world);
    let raw: Vec<_> = p.calibrated[0].1.iter().map(|c| c.joints.clone()).collect();
    let raw = rms_spread(&raw);
    verdict(
        world < 1e-2 && raw > 0.5,
        format!("world-frame RMS spread {world:.4} m, uncompensated {raw:.3} m over 3 s"),
    )
}

fn track(joints: Vec<Vec<Vector3<f64>>>) -> MotionTrack3D {
    MotionTrack3D {
        track_id: 0,
        clip_id: "c".into(),
        fps: 30.0,
        start_frame: 0,
        joints_world: joints,
        joint_orientations: None,
        label: "l".into(),
        subject: "s".into(),
    }
}

fn sensor_synthesis() -> Check {
    let sk = Skeleton::coco17();
    let still = track(vec![sk.rest_pose(); 90]);
    let (mut accel_dev, mut gyro_max) = (0.0f64, 0.0f64);
    for name in ["wrist_right", "waist_chest", "thigh_left", "head"] {
        let placement = SensorPlacement::named(name).map_err(|e| e.to_string())?;
        let s = synthesize(&still, &sk, &placement, &SynthConfig::default())
            .map_err(|e| e.to_string())?;
        for (a, g) in s.accel.iter().zip(&s.gyro) {
            accel_dev = accel_dev.max((a.norm() - 9.81).abs());
            gyro_max = gyro_max.max(g.norm());
        }
    }

    // The right wrist swings sideways; 3 Hz is 0.2× Nyquist at 30 fps.
    let wrist = SensorPlacement::named("wrist_right").map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for f in [0.5, 1.0, 2.0, 3.0] {
        let (amp, w) = (0.05, 2.0 * PI * f);
        let frames = (0..120)
            .map(|i| {
                let t = i as f64 / 30.0;
                let mut j = sk.rest_pose();
                j[10].x += amp * (w * t).sin();
                j[10].y += 0.5 * amp * (w * t).cos();
                j
            })
            .collect();
        let mut tr = track(frames);
        ensure_orientations(&mut tr, &sk).map_err(|e| e.to_string())?;
        let s = synthesize(&tr, &sk, &wrist, &SynthConfig::default()).map_err(|e| e.to_string())?;
        let kin = world_kinematics(&tr, &sk, &wrist).map_err(|e| e.to_string())?;
        let (mut err, mut norm) = (0.0, 0.0);
        for (i, a) in s.accel.iter().enumerate() {
            let t = i as f64 / 30.0;
            let truth = Vector3::new(
                -amp * w * w * (w * t).sin(),
                -0.5 * amp * w * w * (w * t).cos(),
                0.0,
            );
            let measured = kin.orientations[i] * a + gravity();
            err += (measured - truth).norm_squared();
            norm += truth.norm_squared();
        }
        worst = worst.max((err / norm).sqrt());
    }
    verdict(
        accel_dev <= 0.01 && gyro_max < 1e-6 && worst < 0.02,
        format!(
            "static |a| deviation {accel_dev:.1e} m/s², |gyro| {gyro_max:.1e} rad/s; \
             sinusoid worst relative RMS {:.2} %",
            100.0 * worst
        ),
    )
}

/// One channel of a two-regime signal: a drifting sinusoid with noise.
fn synthetic_channel(rng: &mut ChaCha8Rng, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 30.0;
            let regime = if (i / 900) % 2 == 0 { 1.0 } else { 2.5 };
            regime * (2.0 * PI * 1.3 * t + phase).sin() + 0.4 * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

fn feature_stats(channels: &[Vec<f64>]) -> Result<imutube_core::distmap::GaussianStats, String> {
    let n = channels[0].len() / 30;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let w = Window {
                channels: channels
                    .iter()
                    .map(|c| c[30 * k..30 * (k + 1)].to_vec())
                    .collect(),
                label: String::new(),
                subject: String::new(),
                origin: Origin::Real,
                recording: String::new(),
            };
            ecdf_features(&w, 5)
        })
        .collect();
    fit_gaussian(&features).map_err(|e| e.to_string())
}

fn map_channels(map: &DistributionMap, channels: &[Vec<f64>]) -> Vec<Vec<f64>> {
    channels
        .iter()
        .enumerate()
        .map(|(c, xs)| xs.iter().map(|&x| apply_map(map, x, c)).collect())
        .collect()
}

fn distribution_mapping(root: &Path) -> Check {
    const N: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let names: Vec<String> = (0..3).map(|c| format!("ch{c}")).collect();
    let gen = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..3)
            .map(|c| synthetic_channel(rng, N, c as f64))
            .collect()
    };
    let real_fit = gen(&mut rng);
    let real_eval = gen(&mut rng);
    let virtual_: Vec<Vec<f64>> = gen(&mut rng)
        .into_iter()
        .map(|c| c.into_iter().map(|x| 1.8 * x + 1.5).collect())
        .collect();
    let map = fit_map(&names, &virtual_, &real_fit).map_err(|e| e.to_string())?;
    let mapped = map_channels(&map, &virtual_);
    let ks = (0..3)
        .map(|c| ks_statistic(&mapped[c], &real_eval[c]))
        .fold(0.0, f64::max);
    let real_stats = feature_stats(&real_eval)?;
    let fid = |ch: &[Vec<f64>]| -> Result<f64, String> {
        frechet_distance(&feature_stats(ch)?, &real_stats).map_err(|e| e.to_string())
    };
    let fid_raw = fid(&virtual_)?;
    let fid_full = fid(&mapped)?;

    let reduction = 1.0 - fid_full / fid_raw;
    let (sat_full, sat_budget) = mapping_saturation(root)?;
    verdict(
        ks < 0.02 && reduction >= 0.9 && sat_budget <= 1.1 * sat_full,
        format!(
            "KS {ks:.4}; FID {fid_raw:.3} → {fid_full:.4} ({:.1} % reduction); \
             synthetic HAR task FID with all real data {sat_full:.3}, with 600 s {sat_budget:.3} \
             ({:+.1} %)",
            100.0 * reduction,
            100.0 * (sat_budget / sat_full - 1.0)
        ),
    )
}

/// Fit maps from pipeline output to the real streams with all real data
/// and with 600 s of it (200 s per class), and compare the Frechet
/// distance of mapped virtual windows to real windows.
fn mapping_saturation(root: &Path) -> Result<(f64, f64), String> {
    let err = |e: imutube_core::pipeline::PipelineError| e.to_string();
    let (clips, cfg) = shifted_har_task(root)?;
    let summary = run_pipeline(&clips, &cfg, &root.join("out")).map_err(err)?;
    if summary.failed_clips > 0 {
        return Err(format!("{} clips failed", summary.failed_clips));
    }
    let virtual_ = load_streams(&root.join("out/virtual")).map_err(err)?;
    let real = load_streams(&root.join("data/real")).map_err(err)?;
    let placements = &cfg.synth.placements;
    let (real_windows, _) = build_windows(&real, placements, &cfg.eval).map_err(err)?;
    let real_stats = window_stats(&real_windows, &cfg.eval)?;
    let mut fids = Vec::new();
    for budget in [None, Some(200.0)] {
        let map = fit_stream_map(&virtual_, &real, placements, budget).map_err(err)?;
        let mapped: Vec<LoadedStream> = virtual_
            .iter()
            .map(|s| {
                Ok(LoadedStream {
                    stream: apply_to_stream(&map, &s.stream).map_err(|e| e.to_string())?,
                    ..s.clone()
                })
            })
            .collect::<Result<_, String>>()?;
        let (windows, _) = build_windows(&mapped, placements, &cfg.eval).map_err(err)?;
        let stats = window_stats(&windows, &cfg.eval)?;
        fids.push(frechet_distance(&stats, &real_stats).map_err(|e| e.to_string())?);
    }
    Ok((fids[0], fids[1]))
}

fn window_stats(
    windows: &[Window],
    cfg: &EvalConfig,
) -> Result<imutube_core::distmap::GaussianStats, String> {
    let features: Vec<Vec<f64>> = windows
        .iter()
        .map(|w| ecdf_features(w, cfg.n_components))
        .collect();
    fit_gaussian(&features).map_err(|e| e.to_string())
}

/// 5 subjects × still/walk/arm_wave × 60 s from a static camera, and a
/// configuration that distorts the virtual sensors with a gain and an
/// offset.
fn shifted_har_task(root: &Path) -> Result<(Vec<ClipManifest>, PipelineConfig), String> {
    let mut cfg = PipelineConfig::default();
    let gen = GeneratorConfig {
        subjects: 5,
        scenarios: vec![Scenario::Still, Scenario::Walk, Scenario::ArmWave],
        duration_s: 60.0,
        ..GeneratorConfig::default()
    };
    let data = root.join("data");
    generate_synthetic(&gen, &cfg.synth, &data).map_err(|e| e.to_string())?;
    let clips = ManifestSet::load(&data.join("manifest.json")).map_err(|e| e.to_string())?;
    cfg.synth.domain_shift = Some(DomainShift {
        accel_gain: 1.5,
        accel_offset: 3.0,
        gyro_gain: 1.5,
        gyro_offset: 0.5,
    });
    Ok((clips, cfg))
}

fn read_all(paths: &[std::path::PathBuf]) -> Result<Vec<Vec<u8>>, String> {
    paths
        .iter()
        .map(|p| fs::read(p).map_err(|e| format!("{}: {e}", p.display())))
        .collect()
}

fn f1(
    data: &imutube_core::harlab::Dataset,
    protocol: Protocol,
    cfg: &EvalConfig,
) -> Result<f64, String> {
    evaluate_loso(data, protocol, cfg)
        .map(|r| r.mean_macro_f1)
        .map_err(|e| format!("{protocol}: {e}"))
}

fn end_to_end(root: &Path) -> Check {
    let (clips, shifted_cfg) = shifted_har_task(root)?;
    let base = PipelineConfig {
        synth: SynthStageConfig {
            domain_shift: None,
            ..shifted_cfg.synth.clone()
        },
        ..shifted_cfg.clone()
    };
    let data = root.join("data");
    let clean = root.join("clean");
    run_pipeline(&clips, &base, &clean).map_err(|e| e.to_string())?;
    let shifted = root.join("shifted");
    run_pipeline(&clips, &shifted_cfg, &shifted).map_err(|e| e.to_string())?;

    let real = data.join("real");
    let (clean_data, _) =
        load_dataset(&real, &clean.join("virtual"), &base).map_err(|e| e.to_string())?;
    let (shift_data, _) =
        load_dataset(&real, &shifted.join("virtual"), &base).map_err(|e| e.to_string())?;

    let eval = base.eval.clone();
    let r2r = f1(&clean_data, Protocol::R2R, &eval)?;
    let capped = EvalConfig {
        real_cap_per_class_s: Some(30.0),
        ..eval.clone()
    };
    let r2r_capped = f1(&clean_data, Protocol::R2R, &capped)?;
    let v2r_map = f1(&shift_data, Protocol::V2R, &eval)?;
    let v2r_nomap = f1(
        &shift_data,
        Protocol::V2R,
        &EvalConfig {
            use_mapping: false,
            ..eval.clone()
        },
    )?;
    let mix = f1(
        &shift_data,
        Protocol::Mix2R,
        &EvalConfig {
            mix_virtual_ratio: 1.0,
            ..capped.clone()
        },
    )?;
    let gain = v2r_map - v2r_nomap;
    let bar = r2r_capped.max(v2r_map) - 0.02;
    verdict(
        r2r >= 0.95 && gain >= 0.15 && mix >= bar,
        format!(
            "R2R {r2r:.3}; V2R shifted {v2r_nomap:.3} → mapped {v2r_map:.3} (gain {gain:+.3}); \
             Mix2R {mix:.3} vs R2R-capped {r2r_capped:.3}"
        ),
    )
}

fn combinatorial_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for case in 0..1000 {
        let n = 4 + case % 3;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let got = min_cost_assignment(&cost);
        let total: f64 = got
            .iter()
            .enumerate()
            .map(|(i, j)| cost[i][j.expect("square matrices assign every row")])
            .sum();
        if (total - brute_force(&cost)).abs() > 1e-12 {
            mismatches += 1;
        }
    }

    let mut window_errors = 0;
    for _ in 0..200 {
        let length = rng.random_range(0.5..5.0);
        let overlap = [0.0, 0.25, 0.5, 0.75][rng.random_range(0..4)];
        let step = length * (1.0 - overlap);
        let k: usize = rng.random_range(0..50);
        // Durations strictly between two window boundaries.
        let duration = length + step * (k as f64 + rng.random_range(0.01..0.99));
        let mut count = 0;
        while count as f64 * step + length <= duration {
            count += 1;
        }
        if window_count(duration, length, overlap) != count || count != k + 1 {
            window_errors += 1;
        }
    }

    let mut wilson_err = 0.0f64;
    for _ in 0..100 {
        let n: u64 = rng.random_range(1..10_000);
        let s = rng.random_range(0..=n);
        let z = 1.96;
        let (lo, hi) = wilson_interval(s, n, z).map_err(|e| e.to_string())?;
        let (nf, p) = (n as f64, s as f64 / n as f64);
        let c = (p + z * z / (2.0 * nf)) / (1.0 + z * z / nf);
        let h = z / (1.0 + z * z / nf) * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
        wilson_err = wilson_err
            .max((lo - (c - h).max(0.0)).abs())
            .max((hi - (c + h).min(1.0)).abs());
    }
    verdict(
        mismatches == 0 && window_errors == 0 && wilson_err < 1e-9,
        format!(
            "Hungarian mismatches {mismatches}/1000; window count errors {window_errors}/200; \
             max Wilson deviation {wilson_err:.1e}"
        ),
    )
}

fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[row][j] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.len()])
}

fn determinism(root: &Path) -> Check {
    let pc = PipelineConfig {
        seed: 11,
        ..PipelineConfig::default()
    };
    let gen = GeneratorConfig {
        subjects: 3,
        duration_s: 20.0,
        seed: 11,
        ..GeneratorConfig::default()
    };
    let data = root.join("data");
    generate_synthetic(&gen, &pc.synth, &data).map_err(|e| e.to_string())?;
    let clips = ManifestSet::load(&data.join("manifest.json")).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = root.join(run);
        let summary = run_pipeline(&clips, &pc, &out).map_err(|e| e.to_string())?;
        let csvs = read_all(&virtual_outputs(&summary, &out))?;
        let reports = imutube_core::pipeline::report(
            &data.join("real"),
            &out.join("virtual"),
            &Protocol::ALL,
            &pc,
            &out.join("eval"),
        )
        .map_err(|e| e.to_string())?;
        let json: Vec<String> = reports.iter().map(|r| r.to_json()).collect();
        outputs.push((csvs, json));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    verdict(
        !a.0.is_empty() && a == b,
        format!(
            "{} IMU CSVs and {} evaluation reports compared; identical: {}",
            a.0.len(),
            a.1.len(),
            a == b
        ),
    )
}

fn main() {
    let only: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let tmp = tempfile::tempdir().expect("temporary directory");
    let e2e = tmp.path().join("e2e");
    let det = tmp.path().join("det");
    let sat = tmp.path().join("sat");
    let checks: Vec<Criterion> = vec![
        (1, "geometry oracles", Box::new(geometry_oracles)),
        (2, "ego-motion compensation", Box::new(ego_compensation)),
        (3, "sensor synthesis", Box::new(sensor_synthesis)),
        (
            4,
            "distribution mapping",
            Box::new(move || distribution_mapping(&sat)),
        ),
        (
            5,
            "end-to-end synthetic HAR",
            Box::new(move || end_to_end(&e2e)),
        ),
        (6, "combinatorial oracles", Box::new(combinatorial_oracles)),
        (7, "determinism", Box::new(move || determinism(&det))),
    ];
    let limits = [(1, 60.0), (5, 600.0)];
    let mut failed = 0;
    for (id, name, check) in &checks {
        if !only.is_empty() && !only.contains(id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let over = limits
            .iter()
            .find(|(i, _)| i == id)
            .filter(|(_, l)| secs > *l);
        let (ok, detail) = match (result, over) {
            (Ok(d), None) => (true, d),
            (Ok(d), Some((_, l))) => (false, format!("{d}; runtime over {l} s")),
            (Err(d), _) => (false, d),
        };
        println!(
            "{} criterion {id} ({name}): {detail} [{secs:.1} s]",
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
