//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so each criterion reports PASS or FAIL on its own line.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speech_portrait::apc::ApcModel;
use speech_portrait::audio::{write_wav, AudioConfig, MelStream};
use speech_portrait::config::PipelineConfig;
use speech_portrait::eval::{image_metrics, pose_metrics, Image, PSNR_CAP_DB};
use speech_portrait::geometry::{
    apply_pose, inverse_rotation_matrix, mat_mul, project, rotation_matrix, CameraIntrinsics, HeadPose,
};
use speech_portrait::manifold::{build_database, ReprDatabase};
use speech_portrait::pipeline::Engine;
use speech_portrait::pose::{
    pose_nll_loss, sample_pose, PoseDistribution, PoseFeature, PoseModel, PoseNetConfig, FEATURE_DIM, POSE_DIM,
};
use speech_portrait::raster::{draw_segment, GrayImage};
use speech_portrait::scene::{canonical_map, FaceRig};

type Outcome = Result<String, String>;
type Check = Box<dyn Fn() -> Outcome>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_speech-portrait"))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Speech-like test signal: a pitched buzz with a syllable envelope plus
/// noise.
fn voice(seconds: f64, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    let n = (seconds * 16_000.0) as usize;
    let tau = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let env = (0.5 + 0.5 * (tau * 4.0 * t).sin()).powi(2);
            let pitch = 140.0 + 30.0 * (tau * 0.3 * t).sin();
            let buzz: f64 = (1..6).map(|h| (tau * pitch * h as f64 * t).sin() / h as f64).sum();
            (0.25 * env * buzz + r.gen_range(-0.01..0.01)) as f32
        })
        .collect()
}

fn artifacts(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        if name != "timings.json" {
            out.insert(name, std::fs::read(&p).map_err(|e| e.to_string())?);
        }
    }
    Ok(out)
}

fn run_ok(cmd: &mut Command) -> Result<(), String> {
    let o = cmd.output().map_err(|e| e.to_string())?;
    ensure!(
        o.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    Ok(())
}

fn apc_parameter_count() -> Outcome {
    let start = Instant::now();
    let model = ApcModel::zeros(80, 512, 3);
    let elapsed = start.elapsed().as_secs_f64();
    // per layer: three gates of W_ih, W_hh, b_ih and b_hh
    let expected: usize = [80usize, 512, 512].iter().map(|&i| 3 * 512 * (i + 512 + 2)).sum();
    let stored: usize = model.to_store().iter().map(|(_, t)| t.len()).sum();
    ensure!(expected == 4_064_256, "closed form gives {expected}");
    ensure!(
        model.gru_param_count() == expected,
        "model reports {}",
        model.gru_param_count()
    );
    ensure!(stored == expected, "stored tensors hold {stored}");
    ensure!(elapsed < 1.0, "construction took {elapsed:.3} s");
    Ok(format!("4064256 parameters, built in {:.1} ms", elapsed * 1e3))
}

fn receptive_field() -> Outcome {
    let start = Instant::now();
    let config = PoseNetConfig::default();
    let model = PoseModel::random(config.clone(), &mut rng(21)).map_err(|e| e.to_string())?;
    let t = 300usize;
    let mut r = rng(22);
    let conds: Vec<Vec<f32>> = (0..=t)
        .map(|_| (0..config.cond_dim).map(|_| r.gen_range(-1.0..1.0)).collect())
        .collect();
    let feats: Vec<PoseFeature> = (0..t)
        .map(|_| PoseFeature {
            p: std::array::from_fn(|_| r.gen_range(-0.2..0.2)),
            dp: std::array::from_fn(|_| r.gen_range(-0.02..0.02)),
        })
        .collect();
    // output at step t with the feature fed after step `at` (if any) replaced
    let run = |at: Option<usize>| -> Result<PoseDistribution, String> {
        let mut m = model.clone();
        for s in 0..t {
            m.step(&conds[s]).map_err(|e| e.to_string())?;
            let mut f = feats[s];
            if Some(s) == at {
                f.p.iter_mut().chain(f.dp.iter_mut()).for_each(|v| *v += 1.0);
            }
            m.feed(f);
        }
        m.step(&conds[t]).map_err(|e| e.to_string())
    };
    let delta = |a: &PoseDistribution, b: &PoseDistribution| {
        a.mu.iter()
            .chain(&a.neg_log_sigma)
            .zip(b.mu.iter().chain(&b.neg_log_sigma))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max)
    };
    let base = run(None)?;
    let inside = delta(&base, &run(Some(t - 255))?);
    let outside = delta(&base, &run(Some(t - 256))?);
    let elapsed = start.elapsed().as_secs_f64();
    ensure!(inside > 0.0, "perturbation at t-255 had no effect");
    ensure!(
        outside < 1e-7,
        "perturbation at t-256 changed the output by {outside:e}"
    );
    ensure!(elapsed < 10.0, "took {elapsed:.2} s");
    Ok(format!(
        "|Δ| at t-255 = {inside:.3e}, at t-256 = {outside:.1e}, {elapsed:.2} s"
    ))
}

fn latency_contract() -> Outcome {
    let config = PipelineConfig {
        synthetic_db_rows: 64,
        ..PipelineConfig::default()
    };
    ensure!(config.delay_frames == 18 && config.fps == 60, "unexpected defaults");
    let audio = voice(2.0, 31);
    let mut engine = Engine::from_config(config.clone()).map_err(|e| e.to_string())?;
    engine.push_audio(&audio[..5066]).map_err(|e| e.to_string())?;
    ensure!(engine.poll_frame().is_none(), "frame available after 5066 samples");
    engine.push_audio(&audio[5066..5067]).map_err(|e| e.to_string())?;
    let first = engine.poll_frame().ok_or("no frame after 5067 samples")?;
    ensure!(first.frame_index == 0, "first frame is {}", first.frame_index);
    // frame 0 covers audio up to ceil(16000 / 60) samples
    let frame0_end = 16_000u64.div_ceil(60);
    let lag = 5067 - frame0_end;
    ensure!(lag == 4800, "lag is {lag} samples");
    let lag_ms = lag as f64 * 1000.0 / 16_000.0;
    ensure!(lag_ms == 300.0, "lag is {lag_ms} ms");
    let mut frames = 1;
    engine.push_audio(&audio[5067..]).map_err(|e| e.to_string())?;
    while engine.poll_frame().is_some() {
        frames += 1;
    }
    // floor(60 · D) − d
    ensure!(frames == 120 - 18, "2 s produced {frames} frames");
    Ok(format!(
        "first frame at 5067 samples (none at 5066), lag {lag} samples = {lag_ms} ms, {frames} frames from 2 s"
    ))
}

/// Reference log-mel: periodic Hann, zero-padded naive DFT, HTK-scale
/// triangles on bin centre frequencies, natural log with a floor.
fn reference_log_mel(signal: &[f32], c: &AudioConfig) -> Vec<Vec<f64>> {
    let pi = std::f64::consts::PI;
    let window: Vec<f64> = (0..c.frame_len)
        .map(|n| (pi * n as f64 / c.frame_len as f64).sin().powi(2))
        .collect();
    let mel = |f: f64| 1127.0 * (1.0 + f / 700.0).ln();
    let inv = |m: f64| 700.0 * ((m / 1127.0).exp() - 1.0);
    let n_bins = c.fft_size / 2 + 1;
    let points: Vec<f64> = (0..c.n_mels + 2)
        .map(|i| inv(mel(c.mel_fmin) + i as f64 * (mel(c.mel_fmax) - mel(c.mel_fmin)) / (c.n_mels + 1) as f64))
        .collect();
    let bank: Vec<Vec<f64>> = (0..c.n_mels)
        .map(|m| {
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * c.sample_rate as f64 / c.fft_size as f64;
                    let (l, ce, r) = (points[m], points[m + 1], points[m + 2]);
                    if f <= l || f >= r {
                        0.0
                    } else if f <= ce {
                        (f - l) / (ce - l)
                    } else {
                        (r - f) / (r - ce)
                    }
                })
                .collect()
        })
        .collect();
    let frames = if signal.len() < c.frame_len {
        0
    } else {
        (signal.len() - c.frame_len) / c.hop_len + 1
    };
    (0..frames)
        .map(|j| {
            let x: Vec<f64> = (0..c.frame_len)
                .map(|n| signal[j * c.hop_len + n] as f64 * window[n])
                .collect();
            let power: Vec<f64> = (0..n_bins)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (n, v) in x.iter().enumerate() {
                        let a = 2.0 * pi * ((k * n) % c.fft_size) as f64 / c.fft_size as f64;
                        re += v * a.cos();
                        im -= v * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            bank.iter()
                .map(|row| {
                    row.iter()
                        .zip(&power)
                        .map(|(w, p)| w * p)
                        .sum::<f64>()
                        .max(c.log_floor)
                        .ln()
                })
                .collect()
        })
        .collect()
}

fn mel_oracle() -> Outcome {
    let config = AudioConfig::default();
    let mut r = rng(41);
    let mut worst = 0.0f64;
    for case in 0..20 {
        let amp: f32 = r.gen_range(0.05..1.0);
        let signal: Vec<f32> = (0..16_000).map(|_| amp * r.gen_range(-1.0f32..1.0)).collect();
        let mut stream = MelStream::new(config.clone()).map_err(|e| e.to_string())?;
        let frames = stream.push(&signal).map_err(|e| e.to_string())?;
        let reference = reference_log_mel(&signal, &config);
        let expected_count = (16_000 - 267) / 133 + 1;
        ensure!(
            frames.len() == expected_count && reference.len() == expected_count,
            "case {case}: {} frames",
            frames.len()
        );
        for (f, g) in frames.iter().zip(&reference) {
            for (a, b) in f.values.iter().zip(g) {
                worst = worst.max((*a as f64 - b).abs());
            }
        }
    }
    ensure!(worst <= 1e-4, "max abs error {worst:e}");
    Ok(format!("max abs error {worst:.2e} over 20 signals, 119 frames each"))
}

fn lle_suite() -> Outcome {
    let mut r = rng(51);
    let (mut worst_sum, mut worst_member, mut worst_line) = (0.0f64, 0.0f64, 0.0f64);
    for case in 0..1000 {
        let rows = if case % 10 == 0 {
            r.gen_range(520..900)
        } else {
            r.gen_range(12..200)
        };
        let dim = r.gen_range(3..48);
        let data: Vec<f32> = (0..rows * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let db = ReprDatabase::from_matrix(rows, dim, data).map_err(|e| e.to_string())?;
        let k = r.gen_range(1..=10);

        let h: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.2..1.2)).collect();
        let p = db.lle_project(&h, k).map_err(|e| e.to_string())?;
        worst_sum = worst_sum.max((p.weights.iter().sum::<f64>() - 1.0).abs());

        let member = r.gen_range(0..rows);
        let row = db.row(member).to_vec();
        let q = db.lle_project(&row, k).map_err(|e| e.to_string())?;
        let err: f64 = row
            .iter()
            .zip(&q.reconstructed)
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = row.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        worst_member = worst_member.max(err / norm);

        // two-row bank, query on the segment: weights (1 − t, t)
        let a: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let t: f64 = r.gen_range(0.05..0.95);
        let on: Vec<f32> = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((1.0 - t) * *x as f64 + t * *y as f64) as f32)
            .collect();
        let pair = build_database(&[a.clone(), b.clone()]).map_err(|e| e.to_string())?;
        let w = pair.lle_project(&on, 2).map_err(|e| e.to_string())?;
        // closed-form line projection of the stored (rounded) query
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for i in 0..dim {
            let d = b[i] as f64 - a[i] as f64;
            num += (on[i] as f64 - a[i] as f64) * d;
            den += d * d;
        }
        let s = num / den;
        let mut got = [0.0f64; 2];
        for (&idx, &wt) in w.neighbor_indices.iter().zip(&w.weights) {
            got[idx] = wt;
        }
        worst_line = worst_line.max((got[0] - (1.0 - s)).abs()).max((got[1] - s).abs());
    }
    ensure!(worst_sum <= 1e-6, "|Σw − 1| up to {worst_sum:e}");
    ensure!(
        worst_member <= 1e-5,
        "member reconstruction error up to {worst_member:e}"
    );
    ensure!(worst_line <= 1e-6, "segment weights off by up to {worst_line:e}");
    Ok(format!(
        "1000 cases: |Σw−1| ≤ {worst_sum:.1e}, member rel err ≤ {worst_member:.1e}, segment weights err ≤ {worst_line:.1e}"
    ))
}

fn gaussian() -> Outcome {
    let mut r = rng(61);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dist = PoseDistribution {
            mu: std::array::from_fn(|_| r.gen_range(-2.0..2.0)),
            neg_log_sigma: std::array::from_fn(|_| r.gen_range(-2.0..2.0)),
        };
        let x: [f32; FEATURE_DIM] =
            std::array::from_fn(|d| dist.mu[d] + r.gen_range(-4.0..4.0) * (-dist.neg_log_sigma[d]).exp());
        let density: f64 = (0..FEATURE_DIM)
            .map(|d| {
                let sigma = (-(dist.neg_log_sigma[d] as f64)).exp();
                let z = (x[d] as f64 - dist.mu[d] as f64) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            })
            .product();
        worst = worst.max((pose_nll_loss(&dist, &x) + density.ln()).abs());
    }
    ensure!(worst <= 1e-9, "NLL differs from −ln density by {worst:e}");

    let standard = PoseDistribution {
        mu: [0.0; FEATURE_DIM],
        neg_log_sigma: [0.0; FEATURE_DIM],
    };
    let n = 100_000;
    let mut sum = [0.0f64; FEATURE_DIM];
    let mut sq = [0.0f64; FEATURE_DIM];
    let mut sampler = rng(62);
    for _ in 0..n {
        let s = sample_pose(&standard, &HeadPose::default(), &mut sampler);
        ensure!(
            s.pose.to_array()[..] == s.draw[..POSE_DIM],
            "pose is not the first six draws"
        );
        for d in 0..FEATURE_DIM {
            sum[d] += s.draw[d] as f64;
            sq[d] += (s.draw[d] as f64).powi(2);
        }
    }
    let (mut mean_err, mut std_err) = (0.0f64, 0.0f64);
    for d in 0..FEATURE_DIM {
        let mean = sum[d] / n as f64;
        let std = (sq[d] / n as f64 - mean * mean).sqrt();
        mean_err = mean_err.max(mean.abs());
        std_err = std_err.max((std - 1.0).abs());
    }
    ensure!(mean_err <= 0.0126, "sample mean off by {mean_err}");
    ensure!(std_err <= 0.02, "sample std off by {std_err}");
    Ok(format!(
        "NLL err ≤ {worst:.1e}; 1e5 samples: |mean| ≤ {mean_err:.4}, |std−1| ≤ {std_err:.4}"
    ))
}

fn determinism(tmp: &Path) -> Outcome {
    let wav = tmp.join("det.wav");
    let samples = voice(3.0, 71);
    write_wav(&wav, &samples).map_err(|e| e.to_string())?;
    let (a, b, s) = (tmp.join("det_a"), tmp.join("det_b"), tmp.join("det_s"));
    for out in [&a, &b] {
        run_ok(
            bin()
                .args(["--seed", "5", "infer", "--wav"])
                .arg(&wav)
                .arg("--out")
                .arg(out),
        )?;
    }
    let first = artifacts(&a)?;
    ensure!(first.len() == 180 - 18 + 1, "{} artifacts", first.len());
    ensure!(first == artifacts(&b)?, "two infer runs differ");

    let pcm: Vec<u8> = speech_portrait::audio::read_wav(&wav)
        .map_err(|e| e.to_string())?
        .iter()
        .flat_map(|&v| ((v * 32768.0) as i16).to_le_bytes())
        .collect();
    let mut child = bin()
        .args(["--seed", "5", "stream", "--chunk-bytes", "1000", "--out"])
        .arg(&s)
        .stdin(Stdio::piped())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    {
        let mut stdin = child.stdin.take().unwrap();
        for chunk in pcm.chunks(777) {
            stdin.write_all(chunk).map_err(|e| e.to_string())?;
        }
    }
    let o = child.wait_with_output().map_err(|e| e.to_string())?;
    ensure!(
        o.status.success(),
        "stream failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    ensure!(first == artifacts(&s)?, "stream output differs from infer output");
    Ok(format!(
        "{} files byte-identical across two infer runs and the stream run",
        first.len()
    ))
}

fn throughput(tmp: &Path) -> Outcome {
    let wav = tmp.join("clip30.wav");
    write_wav(&wav, &voice(30.0, 81)).map_err(|e| e.to_string())?;
    let out = tmp.join("clip30");
    run_ok(bin().args(["infer", "--wav"]).arg(&wav).arg("--out").arg(&out))?;
    let text = std::fs::read_to_string(out.join("timings.json")).map_err(|e| e.to_string())?;
    let report: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let num = |v: &serde_json::Value| v.as_f64().ok_or_else(|| format!("missing number in {text}"));
    let fps = num(&report["frames_per_second"])?;
    let sum_p99 = num(&report["stage_sum"]["p99_us"])? / 1000.0;
    let manifold_p99 = num(&report["stages"]["manifold"]["p99_us"])? / 1000.0;
    let manifold_max = num(&report["stages"]["manifold"]["max_us"])? / 1000.0;
    let frames = num(&report["frames"])?;
    let detail = format!(
        "{frames} frames at {fps:.1} fps, stage-sum p99 {sum_p99:.2} ms, manifold p99 {manifold_p99:.2} ms (max {manifold_max:.2} ms)"
    );
    ensure!(frames == 1800.0 - 18.0, "{detail}");
    ensure!(fps >= 60.0, "{detail}");
    ensure!(sum_p99 < 16.0, "{detail}");
    ensure!(manifold_p99 < 5.0, "{detail}");
    Ok(detail)
}

fn geometry_suite() -> Outcome {
    let cam = CameraIntrinsics::default();
    let p = project(&[[0.05, 0.1, 1.2]], &cam).map_err(|e| e.to_string())?[0];
    ensure!(
        (p[0] - 306.0).abs() < 1e-4 && (p[1] - 356.0).abs() < 1e-4,
        "projection {p:?}"
    );
    ensure!(project(&[[0.0, 0.0, 0.0]], &cam).is_err(), "z = 0 projected");

    // R = Rz·Ry·Rx from the elementary rotations
    let mut r = rng(91);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let a: [f32; 3] = std::array::from_fn(|_| r.gen_range(-3.0..3.0));
        let (sx, cx) = (a[0] as f64).sin_cos();
        let (sy, cy) = (a[1] as f64).sin_cos();
        let (sz, cz) = (a[2] as f64).sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        let mul = |m: [[f64; 3]; 3], n: [[f64; 3]; 3]| -> [[f64; 3]; 3] {
            std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| m[i][k] * n[k][j]).sum()))
        };
        let expected = mul(rz, mul(ry, rx));
        let got = rotation_matrix(a);
        let round_trip = mat_mul(&got, &inverse_rotation_matrix(a));
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((got[i][j] as f64 - expected[i][j]).abs());
                worst = worst.max((round_trip[i][j] as f64 - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let t: [f32; 3] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let pt = [
            r.gen_range(-1.0f32..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        ];
        let moved = apply_pose(&[pt], &HeadPose::new(a, t))[0];
        for i in 0..3 {
            let e: f64 = (0..3).map(|k| expected[i][k] * pt[k] as f64).sum::<f64>() + t[i] as f64;
            worst = worst.max((moved[i] as f64 - e).abs());
        }
    }
    ensure!(worst < 1e-5, "rotation error {worst:e}");

    let rig = FaceRig::synthetic();
    let bb = &rig.billboard;
    ensure!(bb.alpha == 0.5, "billboard alpha {}", bb.alpha);
    let pose = HeadPose::new([0.3, -0.2, 0.1], [0.25, -0.5, 0.125]);
    for (moved, base) in bb.positions(&pose).iter().zip(&bb.shoulder_points) {
        for k in 0..3 {
            ensure!(
                moved[k] == base[k] + 0.5 * pose.t[k],
                "billboard point {base:?} → {moved:?}"
            );
        }
    }

    // segments with an odd major extent never hit a rounding tie, so the
    // minor coordinate is round(i·dn/dm)
    for (a, b) in [
        ((0i128, 0i128), (11i128, 4i128)),
        ((3, 20), (-6, 1)),
        ((40, 7), (5, 30)),
        ((0, 0), (10, 0)),
        ((5, 5), (5, 17)),
        ((9, 9), (0, 0)),
    ] {
        let mut img = GrayImage::new(64, 64);
        draw_segment(&mut img, a, b);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let steps = dx.abs().max(dy.abs());
        let mut expected: Vec<(usize, usize)> = (0..=steps)
            .map(|i| {
                let f = i as f64 / steps as f64;
                (
                    (a.0 as f64 + f * dx as f64).round(),
                    (a.1 as f64 + f * dy as f64).round(),
                )
            })
            .filter(|&(x, y)| (0.0..64.0).contains(&x) && (0.0..64.0).contains(&y))
            .map(|(x, y)| (x as usize, y as usize))
            .collect();
        expected.sort_by_key(|&(x, y)| (y, x));
        expected.dedup();
        ensure!(img.lit() == expected, "segment {a:?} → {b:?}: {:?}", img.lit());
    }

    let golden_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/zero_pose.pgm");
    let golden = std::fs::read(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    for _ in 0..2 {
        let map = canonical_map(&FaceRig::synthetic(), &cam).map_err(|e| e.to_string())?;
        ensure!(
            map.image.to_pgm() == golden,
            "zero-pose map differs from the golden file"
        );
    }
    Ok("projection, rotation order and inverse, billboard shift, Bresenham cases and golden map all match".into())
}

fn direct_ssim(a: &Image, b: &Image) -> f64 {
    let (w, h, ch) = (a.width, a.height, a.channels);
    let (ww, wh) = (w.min(8), h.min(8));
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut total = 0.0;
    for c in 0..ch {
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - wh {
            for x0 in 0..=w - ww {
                let px = |img: &Image, x: usize, y: usize| img.data[(y * w + x) * ch + c] as f64;
                let n = (ww * wh) as f64;
                let (mut mx, mut my) = (0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        mx += px(a, x, y);
                        my += px(b, x, y);
                    }
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for y in y0..y0 + wh {
                    for x in x0..x0 + ww {
                        let (dx, dy) = (px(a, x, y) - mx, px(b, x, y) - my);
                        vx += dx * dx;
                        vy += dy * dy;
                        cov += dx * dy;
                    }
                }
                let (vx, vy, cov) = (vx / n, vy / n, cov / n);
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / ch as f64
}

fn metric_kit() -> Outcome {
    let mut r = rng(101);
    let (mut worst_l1, mut worst_ssim) = (0.0f64, 0.0f64);
    for case in 0..60 {
        let (w, h) = (r.gen_range(3..40), r.gen_range(3..40));
        let ch = if case % 3 == 0 { 3 } else { 1 };
        let a: Vec<u8> = (0..w * h * ch).map(|_| r.gen()).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&v| (v as i32 + r.gen_range(-40..40)).clamp(0, 255) as u8)
            .collect();
        let ia = Image::new(w, h, ch, a.clone()).map_err(|e| e.to_string())?;
        let ib = Image::new(w, h, ch, b.clone()).map_err(|e| e.to_string())?;

        let same = image_metrics(&ia, &ia).map_err(|e| e.to_string())?;
        ensure!(
            same.l1 == 0.0 && same.mse == 0.0 && same.ssim == 1.0 && same.psnr_db == PSNR_CAP_DB,
            "identical: {same:?}"
        );

        let m = image_metrics(&ia, &ib).map_err(|e| e.to_string())?;
        let n = a.len() as f64;
        let l1: f64 = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>()
            / n;
        let mse: f64 = a
            .iter()
            .zip(&b)
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum::<f64>()
            / n;
        worst_l1 = worst_l1.max((m.l1 - l1).abs()).max((m.mse - mse).abs());
        if mse > 0.0 {
            ensure!(
                (m.psnr_db - 10.0 * (255.0 * 255.0 / mse).log10()).abs() < 1e-9,
                "psnr {}",
                m.psnr_db
            );
        }
        worst_ssim = worst_ssim.max((m.ssim - direct_ssim(&ia, &ib)).abs());
    }
    ensure!(worst_l1 <= 1e-9, "L1/MSE error {worst_l1:e}");
    ensure!(worst_ssim <= 1e-6, "SSIM error {worst_ssim:e}");

    let rig = FaceRig::synthetic();
    let track: Vec<HeadPose> = (0..30)
        .map(|i| HeadPose::new([0.01 * i as f32, -0.02, 0.0], [0.0, 0.001 * i as f32, 0.0]))
        .collect();
    let pm = pose_metrics(&track, &track, &rig).map_err(|e| e.to_string())?;
    ensure!(
        pm.d_l == 0.0 && pm.d_v == 0.0 && pm.d_rot_deg == 0.0 && pm.d_pos == 0.0,
        "identical tracks: {pm:?}"
    );
    Ok(format!("60 random image pairs: L1/MSE err ≤ {worst_l1:.1e}, SSIM err ≤ {worst_ssim:.1e}; identical inputs give zero error, SSIM 1, PSNR {PSNR_CAP_DB}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let dir = tmp.path().to_path_buf();
    let criteria: Vec<(&str, Check)> = vec![
        ("APC parameter count", Box::new(apc_parameter_count)),
        ("pose receptive field", Box::new(receptive_field)),
        ("latency contract", Box::new(latency_contract)),
        ("mel oracle", Box::new(mel_oracle)),
        ("LLE suite", Box::new(lle_suite)),
        ("Gaussian correctness", Box::new(gaussian)),
        (
            "determinism",
            Box::new({
                let d = dir.clone();
                move || determinism(&d)
            }),
        ),
        (
            "throughput",
            Box::new({
                let d = dir.clone();
                move || throughput(&d)
            }),
        ),
        ("geometry suite", Box::new(geometry_suite)),
        ("metric kit", Box::new(metric_kit)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
