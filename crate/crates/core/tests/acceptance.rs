//! Acceptance suite. One line per criterion; each is timed against its
//! runtime budget. Pass criterion numbers as arguments to run a subset.

mod support;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::gradcheck::{clear_of_zero, pool_blocks_separated, random_tensor, relative_error, KINK_CLEARANCE, TOLERANCE};
use uwstereo::image::{psnr, Image, Mask};
use uwstereo::optics::{approximation_error_curve, depth_range, fit_depth_calibration, CalibrationGrid, CameraModel, FlatInterface};
use uwstereo::pipeline::{cmd_reconstruct, PipelineConfig, SceneKind};
use uwstereo::restoration::{
    desk_pattern, mean_abs_residual, removal_forward, task_sample, train_removal, BubbleProfile, RemovalConfig, RemovalNet,
    RemovalSchedule, Task,
};
use uwstereo::rig::{decode_correspondences, simulate_capture, GrayDecoder, Side, StereoRig};
use uwstereo::segmentation::{
    augment_dataset, disc_scene, disc_with_area, mask_to_search_constraints, segment, train_segmentation, AugmentPolicy,
    SegmentationSchedule, UNet, UNetConfig,
};
use uwstereo::stereo::*;
use uwstereo::synth::random_stereo_sample;
use uwstereo::tensor::{Graph, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria = [
        Criterion { id: 1, name: "refraction approximation bound", budget: Duration::from_secs(30), run: refraction_bound },
        Criterion { id: 2, name: "gradient correctness", budget: Duration::from_secs(120), run: gradient_checks },
        Criterion { id: 3, name: "hinge-loss training separation", budget: Duration::from_secs(600), run: hinge_separation },
        Criterion { id: 4, name: "stereo oracle equivalence", budget: Duration::from_secs(300), run: oracle_equivalence },
        Criterion { id: 5, name: "shift recovery", budget: Duration::from_secs(300), run: shift_recovery },
        Criterion { id: 6, name: "robustness direction", budget: Duration::from_secs(1200), run: robustness_direction },
        Criterion { id: 7, name: "pattern-projection benefit", budget: Duration::from_secs(300), run: pattern_benefit },
        Criterion { id: 8, name: "restoration gain", budget: Duration::from_secs(900), run: restoration_gain },
        Criterion { id: 9, name: "segmentation quality", budget: Duration::from_secs(600), run: segmentation_quality },
        Criterion { id: 10, name: "geometry round-trips", budget: Duration::from_secs(60), run: geometry_round_trips },
        Criterion { id: 11, name: "end-to-end pipeline", budget: Duration::from_secs(300), run: end_to_end },
    ];
    let mut failed = 0;
    for c in criteria.iter().filter(|c| wanted.is_empty() || wanted.contains(&c.id)) {
        let t = Instant::now();
        let out = (c.run)();
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.budget;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = if in_time { String::new() } else { format!(", over the {} s budget", c.budget.as_secs()) };
        println!(
            "[{}] {:>2}. {}: {} ({:.1} s{budget})",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- 1

fn refraction_bound() -> Outcome {
    let cam = CameraModel::pinhole(1400.0, 1400.0, 639.5, 511.5, 1280, 1024);
    let grid = CalibrationGrid::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for (d0, asserted) in [(0.02, true), (0.05, true), (0.10, false)] {
        let iface = FlatInterface::frontal(d0, 1.0 / 1.33);
        let worst = fit_depth_calibration(&cam, &iface, 0.6, grid)
            .and_then(|calib| {
                let lo = (d0 + 0.01f64).max(0.1);
                let n = ((1.0 - lo) / 0.01).round() as usize + 1;
                approximation_error_curve(&calib, &iface, &cam, &depth_range(lo, 1.0, n), &grid)
            })
            .map(|curve| curve.iter().map(|s| s.max_rel).fold(0.0, f64::max));
        match worst {
            Ok(w) => {
                if asserted {
                    pass &= w < 0.008;
                }
                parts.push(format!("{:.0} cm {:.3}%", d0 * 100.0, 100.0 * w));
            }
            Err(e) => {
                pass &= !asserted;
                parts.push(format!("{:.0} cm failed: {e}", d0 * 100.0));
            }
        }
    }
    outcome(pass, format!("max relative error {} (bound 0.8% at 2 and 5 cm)", parts.join(", ")))
}

// ---------------------------------------------------------------- 2

type OpCase = (&'static str, fn(&mut ChaCha8Rng) -> (Vec<Tensor>, fn(&mut Graph, &[Var]) -> uwstereo::Result<Var>));

fn dims(rng: &mut ChaCha8Rng) -> [usize; 4] {
    [rng.random_range(1..3), rng.random_range(1..4), 2 * rng.random_range(1..3), 2 * rng.random_range(1..3)]
}

fn kink_free(rng: &mut ChaCha8Rng, shape: &[usize], ok: impl Fn(&Tensor) -> bool) -> Tensor {
    loop {
        let t = random_tensor(shape, rng, 1.0);
        if ok(&t) {
            return t;
        }
    }
}

fn op_cases() -> Vec<OpCase> {
    vec![
        ("add", |r| {
            let s = dims(r);
            (vec![random_tensor(&s, r, 1.0), random_tensor(&s, r, 1.0)], |g, v| g.add(v[0], v[1]))
        }),
        ("sub", |r| {
            let s = dims(r);
            (vec![random_tensor(&s, r, 1.0), random_tensor(&s, r, 1.0)], |g, v| g.sub(v[0], v[1]))
        }),
        ("mul", |r| {
            let s = dims(r);
            (vec![random_tensor(&s, r, 1.0), random_tensor(&s, r, 1.0)], |g, v| g.mul(v[0], v[1]))
        }),
        ("scale", |r| (vec![random_tensor(&dims(r), r, 1.0)], |g, v| g.scale(v[0], -1.7))),
        ("conv2d", |r| {
            let [n, c, h, w] = dims(r);
            let o = r.random_range(1..4);
            (
                vec![random_tensor(&[n, c, h + 1, w + 2], r, 1.0), random_tensor(&[o, c, 3, 3], r, 1.0), random_tensor(&[o], r, 1.0)],
                |g, v| g.conv2d(v[0], v[1], v[2]),
            )
        }),
        ("pointwise", |r| {
            let [n, c, h, w] = dims(r);
            let o = r.random_range(1..4);
            (
                vec![random_tensor(&[n, c, h, w], r, 1.0), random_tensor(&[o, c], r, 1.0), random_tensor(&[o], r, 1.0)],
                |g, v| g.pointwise(v[0], v[1], v[2]),
            )
        }),
        ("batch_norm", |r| {
            let [_, c, h, w] = dims(r);
            (
                vec![random_tensor(&[2, c, h, w], r, 2.0), random_tensor(&[c], r, 1.5), random_tensor(&[c], r, 1.0)],
                |g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5)?.0),
            )
        }),
        ("relu", |r| {
            let s = dims(r);
            (vec![kink_free(r, &s, clear_of_zero)], |g, v| g.relu(v[0]))
        }),
        ("maxpool2x2", |r| {
            let s = dims(r);
            (vec![kink_free(r, &s, pool_blocks_separated)], |g, v| g.maxpool2x2(v[0]))
        }),
        ("upsample2x", |r| (vec![random_tensor(&dims(r), r, 1.0)], |g, v| g.upsample2x(v[0]))),
        ("concat_channels", |r| {
            let [n, c, h, w] = dims(r);
            (vec![random_tensor(&[n, c, h, w], r, 1.0), random_tensor(&[n, 2, h, w], r, 1.0)], |g, v| g.concat_channels(v[0], v[1]))
        }),
        ("crop", |r| {
            let [n, c, h, w] = dims(r);
            (vec![random_tensor(&[n, c, h + 2, w + 3], r, 1.0)], |g, v| {
                let (h, w) = {
                    let s = g.value(v[0]).shape();
                    (s[2], s[3])
                };
                g.crop(v[0], 1, 2, h - 2, w - 3)
            })
        }),
        ("weighted_inner", |r| {
            let [n, c, h, w] = dims(r);
            (
                vec![random_tensor(&[n, c, h, w], r, 1.0), random_tensor(&[n, c, h, w], r, 1.0), random_tensor(&[c * h * w], r, 1.0)],
                |g, v| g.weighted_inner(v[0], v[1], v[2]),
            )
        }),
        ("mean_spatial", |r| (vec![random_tensor(&dims(r), r, 1.0)], |g, v| g.mean_spatial(v[0]))),
        ("reshape", |r| {
            (vec![random_tensor(&dims(r), r, 1.0)], |g, v| {
                let n = g.value(v[0]).len();
                g.reshape(v[0], &[n])
            })
        }),
        ("slice_samples", |r| {
            let [_, c, h, w] = dims(r);
            (vec![random_tensor(&[3, c, h, w], r, 1.0)], |g, v| g.slice_samples(v[0], 1, 2))
        }),
        ("hinge", |r| {
            let n = r.random_range(2..8);
            // every pair sits clear of the kink at minus - plus + margin = 0
            let (p, m) = loop {
                let p = random_tensor(&[n], r, 1.0);
                let m = random_tensor(&[n], r, 1.0);
                if p.data().iter().zip(m.data()).all(|(a, b)| (b - a + 0.3).abs() > KINK_CLEARANCE) {
                    break (p, m);
                }
            };
            (vec![p, m], |g, v| g.hinge(v[0], v[1], 0.3))
        }),
        ("sum", |r| (vec![random_tensor(&dims(r), r, 1.0)], |g, v| g.sum(v[0]))),
        ("mean", |r| (vec![random_tensor(&dims(r), r, 1.0)], |g, v| g.mean(v[0]))),
        ("softmax_cross_entropy", |r| {
            let [n, _, h, w] = dims(r);
            (vec![random_tensor(&[n, 2, h, w], r, 2.0)], |g, v| {
                let s = g.value(v[0]).shape().to_vec();
                let hw = s[2] * s[3];
                // fixed one-hot target derived from the extents only
                let data = (0..s[0] * 2 * hw)
                    .map(|i| {
                        let (ch, p) = ((i / hw) % 2, i % hw);
                        if (p % 3 == 0) == (ch == 1) { 1.0 } else { 0.0 }
                    })
                    .collect();
                g.softmax_cross_entropy(v[0], &Tensor::new(&s, data)?)
            })
        }),
        ("mse", |r| {
            let s = dims(r);
            (vec![random_tensor(&s, r, 1.0), random_tensor(&s, r, 1.0)], |g, v| g.mse(v[0], v[1]))
        }),
    ]
}

fn gradient_checks() -> Outcome {
    let cases = op_cases();
    let per_op = 100usize.div_ceil(cases.len());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut instances = 0;
    for (name, build) in &cases {
        let mut w: f64 = 0.0;
        for i in 0..per_op {
            let (inputs, op) = build(&mut rng);
            w = w.max(relative_error(op, &inputs, 100 + i as u64));
            instances += 1;
        }
        worst.push((name, w));
    }
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let bad: Vec<String> = worst.iter().filter(|w| !(w.1 < TOLERANCE)).map(|w| format!("{} {:.1e}", w.0, w.1)).collect();
    let detail = format!("{instances} instances over {} ops, worst relative error {max:.2e} (< 1e-4)", cases.len());
    if bad.is_empty() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; failing: {}", bad.join(", ")))
    }
}

// ---------------------------------------------------------------- 3

/// Noise patches whose positive is the same patch under mild noise and
/// whose negative is an independent patch.
fn separable_set(n: usize, p: usize, seed: u64) -> Vec<PatchExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = 3f64.sqrt();
    let patch = |rng: &mut ChaCha8Rng| Tensor::new(&[1, 1, p, p], (0..p * p).map(|_| rng.random_range(-a..a)).collect()).unwrap();
    (0..n)
        .map(|_| {
            let left = patch(&mut rng);
            let positive = Tensor::new(&[1, 1, p, p], left.data().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect()).unwrap();
            PatchExample { left, positive, negative: patch(&mut rng) }
        })
        .collect()
}

type HingeRun = (StereoNet, f64, f64, f64);

/// Trained once and shared by the separation and shift-recovery checks.
fn hinge_trained_net() -> &'static Result<HingeRun, String> {
    static RUN: std::sync::OnceLock<Result<HingeRun, String>> = std::sync::OnceLock::new();
    RUN.get_or_init(|| train_hinge_net().map_err(|e| e.to_string()))
}

fn train_hinge_net() -> uwstereo::Result<HingeRun> {
    let cfg = StereoConfig::desk();
    let train = separable_set(5000, cfg.patch, 30);
    let held = separable_set(1000, cfg.patch, 31);
    let mut net = StereoNet::new(cfg)?;
    let schedule = StereoSchedule { epochs: 3, learning_rate: 0.01, ..Default::default() };
    let initial = mean_hinge(&net, &train, schedule.margin)?;
    train_stereo(&mut net, &train, &schedule)?;
    let final_loss = mean_hinge(&net, &train, schedule.margin)?;
    let acc = ranking_accuracy(&net, &held)?;
    Ok((net, initial, final_loss, acc))
}

fn hinge_separation() -> Outcome {
    match hinge_trained_net() {
        Ok((_, initial, final_loss, acc)) => outcome(
            *acc > 0.95 && *final_loss < 0.5 * initial,
            format!(
                "5000 pairs, held-out accuracy {:.2}% (> 95%), mean loss {:.4} -> {:.4} (ratio {:.3} < 0.5)",
                100.0 * acc,
                initial,
                final_loss,
                final_loss / initial
            ),
        ),
        Err(e) => outcome(false, format!("training failed: {e}")),
    }
}

// ---------------------------------------------------------------- 4

fn noise_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Image {
    Image::from_vec(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let range = DisparityRange::new(0, 7).unwrap();
    let (mut pixels, mut mismatches) = (0usize, 0usize);
    for scene in 0..20u64 {
        let head = if scene % 2 == 0 { Head::Linear } else { Head::Fcn };
        let net = StereoNet::new(StereoConfig { patch: 8, layers: 2, channels: 4, hidden: 6, head, seed: scene }).unwrap();
        let (l, r) = (noise_image(32, 32, &mut rng), noise_image(32, 32, &mut rng));
        let map = wta_disparity_with(&build_cost_volume(&l, &r, None, &net, range).unwrap(), false);
        let (ls, rs) = (standardize(&l), standardize(&r));
        let p = net.config().patch;
        for y in 0..32 {
            for x in 0..32 {
                // every pair scored on its own, best disparity first on ties
                let mut best: Option<(usize, f64)> = None;
                if let Some(left) = patch_at(&ls, x, y, p) {
                    for d in range.min..=range.max.min(x) {
                        let Some(right) = patch_at(&rs, x - d, y, p) else { continue };
                        let s = net.score_patches(&left, &right).unwrap();
                        if best.is_none_or(|(_, b)| s > b) {
                            best = Some((d, s));
                        }
                    }
                }
                pixels += 1;
                if map.get(x, y) != best.map(|b| b.0 as f64) {
                    mismatches += 1;
                }
            }
        }
    }
    outcome(mismatches == 0, format!("20 scenes of 32x32, 8 disparities: {mismatches} of {pixels} pixels differ from exhaustive search"))
}

// ---------------------------------------------------------------- 5

fn shifted_pair(w: usize, h: usize, shift: usize, seed: u64) -> (Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wide = noise_image(w + shift, h, &mut rng);
    let left = Image::from_fn(w, h, |x, y| wide.get(x, y));
    let right = Image::from_fn(w, h, |x, y| wide.get(x + shift, y));
    (left, right)
}

fn shift_hits(map: &DisparityMap, interior: &[(usize, usize)]) -> f64 {
    let hits = interior.iter().filter(|&&(x, y)| map.get(x, y).is_some_and(|d| (d - 5.0).abs() < 0.5)).count();
    hits as f64 / interior.len() as f64
}

fn shift_recovery() -> Outcome {
    let (w, h) = (96, 64);
    let range = DisparityRange::new(0, 12).unwrap();
    let mask = Mask::from_fn(w, h, |x, y| ((x as f64 - 56.0) / 36.0).powi(2) + ((y as f64 - 32.0) / 28.0).powi(2) <= 1.0);
    // masked pixels whose patch fits and whose full disparity range is searchable
    let half = StereoConfig::desk().patch / 2 + 4;
    let interior: Vec<(usize, usize)> = (half..h - half)
        .flat_map(|y| (range.max + half..w - half).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();
    let net = match hinge_trained_net() {
        Ok((net, ..)) => net,
        Err(e) => return outcome(false, format!("training failed: {e}")),
    };
    let (mut learned, mut baseline) = (Vec::new(), Vec::new());
    for seed in 0..3 {
        let (l, r) = shifted_pair(w, h, 5, 50 + seed);
        let v = build_cost_volume(&l, &r, Some(&mask), net, range).unwrap();
        learned.push(shift_hits(&wta_disparity(&v), &interior));
        let b = baseline_block_match(&l, &r, Some(&mask), &BlockMatchOptions::default(), range).unwrap();
        baseline.push(shift_hits(&b, &interior));
    }
    let lo = |v: &[f64]| v.iter().copied().fold(1.0, f64::min);
    outcome(
        lo(&learned) >= 0.99 && lo(&baseline) >= 0.99,
        format!(
            "{} interior masked pixels x 3 pairs: learned {:.2}%, baseline {:.2}% recover 5 px (>= 99%)",
            interior.len(),
            100.0 * lo(&learned),
            100.0 * lo(&baseline)
        ),
    )
}

// ---------------------------------------------------------------- 6

fn robustness_direction() -> Outcome {
    let (w, h) = (160, 120);
    let profile = Some(BubbleProfile::FAR_MUCH);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut examples = Vec::new();
    for s in 0..16 {
        let smp = random_stereo_sample(100 + s, w, h, profile).unwrap();
        examples.extend(sample_examples(&smp.left, &smp.right, &smp.disparity, 16, 400, &Augmentation::default(), &mut rng).unwrap());
    }
    let schedule = StereoSchedule { epochs: 8, learning_rate: 0.01, ..Default::default() };
    let mut nets = Vec::new();
    for head in [Head::Linear, Head::Fcn] {
        let mut net = StereoNet::new(StereoConfig::desk().with_head(head)).unwrap();
        if let Err(e) = train_stereo(&mut net, &examples, &schedule) {
            return outcome(false, format!("{head:?} training failed: {e}"));
        }
        nets.push(net);
    }
    let range = DisparityRange::new(0, 40).unwrap();
    let (mut lin, mut fcn, mut base) = (0.0, 0.0, 0.0);
    let scenes = 6;
    for s in 0..scenes {
        let smp = random_stereo_sample(900 + s, w, h, profile).unwrap();
        let vl = build_cost_volume(&smp.left, &smp.right, Some(&smp.target), &nets[0], range).unwrap();
        // all three are scored on the pixels the learned matchers can reach
        let region = vl.valid_mask();
        let rate = |m: &DisparityMap| bad_pixel_rate(m, smp.disparity.data(), 1.0, Some(&region)).unwrap_or(1.0);
        lin += rate(&wta_disparity(&vl));
        let vf = build_cost_volume(&smp.left, &smp.right, Some(&smp.target), &nets[1], range).unwrap();
        fcn += rate(&wta_disparity(&vf));
        let b = baseline_block_match(&smp.left, &smp.right, Some(&smp.target), &BlockMatchOptions::default(), range).unwrap();
        base += rate(&b);
    }
    let n = scenes as f64;
    let (lin, fcn, base) = (lin / n, fcn / n, base / n);
    outcome(
        fcn <= lin && lin <= base,
        format!("far-much bubbles, mean bad-pixel rate (> 1 px) over {scenes} scenes: fcn {fcn:.3} <= lin {lin:.3} <= baseline {base:.3}"),
    )
}

// ---------------------------------------------------------------- 7

fn plane_run(pattern: bool) -> uwstereo::Result<(usize, f64)> {
    let dir = tempfile::tempdir().map_err(|e| uwstereo::Error::io("tempdir", e))?;
    let mut cfg = PipelineConfig::default();
    cfg.paths.output = dir.path().to_path_buf();
    cfg.reconstruct.scene.kind = SceneKind::TexturelessPlane;
    if pattern {
        cfg.reconstruct.scene.pattern = Some(uwstereo::restoration::ProjectedPattern {
            orientation: 0.6,
            ..desk_pattern(cfg.reconstruct.scene.focal)
        });
    }
    let out = cmd_reconstruct(&cfg, true)?;
    Ok((out.cloud.len(), out.report.map_or(f64::INFINITY, |r| r.rmse)))
}

fn pattern_benefit() -> Outcome {
    match (plane_run(false), plane_run(true)) {
        (Ok((n0, e0)), Ok((n1, e1))) => outcome(
            n1 >= 10 * n0 && n1 > 0 && e1 <= e0,
            format!("textureless plane at 0.6 m: {n0} points, RMSE {:.3} mm without pattern; {n1} points, RMSE {:.3} mm with", e0 * 1e3, e1 * 1e3),
        ),
        (a, b) => outcome(false, format!("reconstruction failed: {:?} / {:?}", a.err(), b.err())),
    }
}

// ---------------------------------------------------------------- 8

fn restoration_net(task: Task, train: usize, epochs: usize, profile: BubbleProfile) -> uwstereo::Result<RemovalNet> {
    let pairs = (0..train as u64)
        .map(|s| task_sample(task, 1000 + s, 128, 128, profile).map(|r| (r.degraded, r.clean)))
        .collect::<uwstereo::Result<Vec<_>>>()?;
    let mut net = RemovalNet::new(RemovalConfig::desk())?;
    train_removal(&mut net, &pairs, &RemovalSchedule { epochs, learning_rate: 0.05, ..Default::default() })?;
    Ok(net)
}

fn restoration_gain() -> Outcome {
    let profile = BubbleProfile::NEAR_MUCH;
    let eval = || -> uwstereo::Result<(f64, f64, f64, f64)> {
        let bubbles = restoration_net(Task::Bubbles, 80, 20, profile)?;
        let pattern = restoration_net(Task::Pattern, 40, 12, profile)?;
        let (mut before, mut after, mut rd, mut rr) = (0.0, 0.0, 0.0, 0.0);
        for s in 0..20u64 {
            let b = task_sample(Task::Bubbles, 9000 + s, 128, 128, profile)?;
            before += psnr(&b.degraded, &b.clean) / 20.0;
            after += psnr(&removal_forward(&b.degraded, &bubbles)?, &b.clean) / 20.0;
            let p = task_sample(Task::Pattern, 9000 + s, 128, 128, profile)?;
            rd += mean_abs_residual(&p.degraded, &p.clean, &p.affected);
            rr += mean_abs_residual(&removal_forward(&p.degraded, &pattern)?, &p.clean, &p.affected);
        }
        Ok((before, after, rd / 20.0, rr / 20.0))
    };
    match eval() {
        Ok((before, after, rd, rr)) => {
            let reduction = 1.0 - rr / rd;
            outcome(
                after - before >= 3.0 && reduction >= 0.6,
                format!(
                    "20 held-out images each: bubbles PSNR {before:.2} -> {after:.2} dB (+{:.2}, >= 3), pattern residual {rd:.4} -> {rr:.4} ({:.1}% reduction, >= 60%)",
                    after - before,
                    100.0 * reduction
                ),
            )
        }
        Err(e) => outcome(false, format!("failed: {e}")),
    }
}

// ---------------------------------------------------------------- 9

fn segmentation_quality() -> Outcome {
    let base: Vec<_> = (0..100).map(|s| disc_scene(s, 64, 64)).collect();
    let run = || -> uwstereo::Result<(f64, f64, f64, f64)> {
        let data = augment_dataset(&base, &AugmentPolicy::default())?;
        let mut net = UNet::new(UNetConfig::desk())?;
        train_segmentation(&mut net, &data, &SegmentationSchedule { epochs: 3, crop: None, ..Default::default() })?;
        let ious: Vec<f64> = (0..20)
            .map(|s| {
                let (img, truth) = disc_scene(10_000 + s, 128, 128);
                segment(&img, &net).map(|m| m.iou(&truth))
            })
            .collect::<uwstereo::Result<_>>()?;
        let iou = ious.iter().sum::<f64>() / ious.len() as f64;

        // timing on a 512x512 textured pair with a 20%-area target
        let (img, target) = disc_with_area(77, 512, 512, 0.2);
        let left = Image::from_fn(512, 512, |x, y| 0.5 * img.get(x, y) + 0.5 * ((x * 7919 + y * 104729) % 257) as f64 / 256.0);
        let right = Image::from_fn(512, 512, |x, y| left.get((x + 6).min(511), y));
        let stereo = StereoNet::new(StereoConfig::desk())?;
        let range = DisparityRange::new(0, 16)?;
        let t = Instant::now();
        build_cost_volume(&left, &right, None, &stereo, range)?;
        let full = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let constrained = mask_to_search_constraints(&target, 4);
        let mask = constrained.to_mask();
        if let Some(r) = constrained.clip(range) {
            build_cost_volume(&left, &right, Some(&mask), &stereo, r)?;
        }
        let masked = t.elapsed().as_secs_f64();
        Ok((iou, full, masked, target.count() as f64 / (512.0 * 512.0)))
    };
    match run() {
        Ok((iou, full, masked, area)) => {
            let speedup = full / masked;
            outcome(
                iou > 0.9 && speedup >= 3.0,
                format!(
                    "mean IoU {iou:.3} on 20 held-out scenes (> 0.9); 512x512, {:.0}% mask: full {full:.2} s, masked {masked:.2} s, {speedup:.1}x (>= 3x)",
                    100.0 * area
                ),
            )
        }
        Err(e) => outcome(false, format!("failed: {e}")),
    }
}

// ---------------------------------------------------------------- 10

fn geometry_round_trips() -> Outcome {
    use nalgebra::{Matrix3, Rotation3, Vector3};
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    let rig = StereoRig::rectified_pair(CameraModel::pinhole(700.0, 700.0, 320.0, 240.0, 640, 480), 0.12).unwrap();
    let mut tri: f64 = 0.0;
    for _ in 0..1000 {
        let p = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4), rng.random_range(0.3..3.0));
        let (l, r) = rig.project_rectified(&p).unwrap();
        tri = tri.max((rig.triangulate(l.0, l.1, l.0 - r.0).unwrap() - p).norm());
    }

    // generic coefficients: a camera pixel center never lands exactly on a
    // display pixel boundary, where either neighbour is off by exactly 0.5
    let mut jitter = |s: f64| rng.random_range(-s..s);
    let hom = Matrix3::new(
        0.9 + jitter(0.02),
        0.05 + jitter(0.01),
        10.0 + jitter(1.0),
        -0.03 + jitter(0.01),
        0.95 + jitter(0.02),
        6.0 + jitter(1.0),
        2e-4 + jitter(5e-5),
        -1e-4 + jitter(5e-5),
        1.0,
    );
    let warp = |x: f64, y: f64| {
        let q = hom * Vector3::new(x, y, 1.0);
        (q.x / q.z, q.y / q.z)
    };
    let cap = simulate_capture(400, 300, 320, 240, |x, y| Some(warp(x, y))).unwrap();
    let map = decode_correspondences(&cap, &GrayDecoder::new(400, 300)).unwrap();
    let mut gray: f64 = 0.0;
    for y in 0..240 {
        for x in 0..320 {
            if map.valid.get(x, y) {
                let (gx, gy) = warp(x as f64, y as f64);
                let i = y * 320 + x;
                gray = gray.max((map.x[i] - gx).abs()).max((map.y[i] - gy).abs());
            }
        }
    }

    let lens = |k1: f64| CameraModel { k1, k2: 0.02, p1: 2e-4, ..CameraModel::pinhole(400.0, 402.0, 162.0, 118.0, 320, 240) };
    let rot = Rotation3::from_euler_angles(0.5f64.to_radians(), 2f64.to_radians(), -0.7f64.to_radians()).into_inner();
    let tilted = StereoRig::new(lens(-0.1), lens(-0.08), rot, Vector3::new(0.1, 0.004, -0.003)).unwrap();
    let mut rows: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let p = Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3), rng.random_range(0.8..2.0));
        let pr = tilted.rotation.transpose() * (p - tilted.translation);
        let (Some(l), Some(r)) = (tilted.left.project(&p), tilted.right.project(&pr)) else { continue };
        let inside = |q: (f64, f64)| q.0 >= 0.0 && q.1 >= 0.0 && q.0 <= 320.0 && q.1 <= 240.0;
        if !inside(l) || !inside(r) {
            continue;
        }
        let rl = tilted.rectify_point(Side::Left, l.0, l.1).unwrap();
        let rr = tilted.rectify_point(Side::Right, r.0, r.1).unwrap();
        rows = rows.max((rl.1 - rr.1).abs());
        checked += 1;
    }
    outcome(
        tri < 1e-9 && gray < 0.5 && rows < 0.1,
        format!(
            "triangulation {tri:.1e} m (< 1e-9), gray-code decode {gray:.6} px (< 0.5), rectified rows {rows:.1e} px (< 0.1)"
        ),
    )
}

// ---------------------------------------------------------------- 11

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.paths.output = dir.path().to_path_buf();
    match cmd_reconstruct(&cfg, true) {
        Ok(out) => match out.report {
            Some(r) => outcome(
                r.rmse < 1e-3 && cfg.reconstruct.scene.depth == 0.6,
                format!("textured plane at 0.6 m: {} points, RMSE {:.3} mm (< 1 mm)", r.point_count, r.rmse * 1e3),
            ),
            None => outcome(false, "no points to evaluate"),
        },
        Err(e) => outcome(false, format!("failed: {e}")),
    }
}
