//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting, so `--nocapture` gives a readable summary.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tfsr::coords::margin_for_factor;
use tfsr::encode::{OneBlobConfig, SawtoothConfig};
use tfsr::field::{load_checkpoint, save_checkpoint, FieldConfig, TwoFactorField, Variant};
use tfsr::grid::{resolution_schedule, LevelGrid};
use tfsr::metrics::{psnr, ssim3d, MetricsReport, SSIM_C1};
use tfsr::phantom::{generate, PhantomKind, PhantomSpec};
use tfsr::tricubic::tricubic_upsample;
use tfsr::volume::{downsample, load_vvol, save_vvol, upsampled_affine, Volume3D, IDENTITY};
use tfsr::{infer_volume, train, TrainConfig};

fn report(n: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} {status}: {name} | {}", detail.as_ref());
}

fn random_point(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// PSNR/SSIM of the field and of tricubic against the HR region covered by
/// the LR blocks.
fn sr_scores(hr: &Volume3D, k: usize, cfg: &TrainConfig) -> ((f64, f64), (f64, f64)) {
    let lr = downsample(hr, k).unwrap();
    let d = lr.dims();
    let truth = hr.crop([d[0] * k, d[1] * k, d[2] * k]).unwrap();
    let cfg = TrainConfig {
        margin: Some(margin_for_factor(d, k)),
        ..cfg.clone()
    };
    let field = train(&lr, &cfg).unwrap().field;
    let sr = infer_volume(&field, truth.dims(), upsampled_affine(lr.affine(), k)).unwrap();
    let tc = tricubic_upsample(&lr, k).unwrap();
    (
        (psnr(&sr, &truth).unwrap(), ssim3d(&sr, &truth).unwrap()),
        (psnr(&tc, &truth).unwrap(), ssim3d(&tc, &truth).unwrap()),
    )
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let cfg = FieldConfig {
        levels: 2,
        coeff_resolution: 4,
        basis_min_resolution: 8,
        basis_max_resolution: 8,
        oneblob: OneBlobConfig { n_bins: 4, sigma: 1.0 },
        hidden: vec![8, 8],
        init_scale: 0.5,
        seed: 11,
        ..FieldConfig::default()
    };
    let mut field = TwoFactorField::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let points: Vec<[f64; 3]> = (0..5).map(|_| random_point(&mut rng)).collect();
    let targets: Vec<f64> = (0..5).map(|_| rng.gen()).collect();

    let loss = |f: &TwoFactorField| -> f64 {
        points
            .iter()
            .zip(&targets)
            .map(|(p, t)| (f.predict(*p).unwrap() - t).powi(2))
            .sum::<f64>()
            / points.len() as f64
    };

    field.zero_grad();
    for (p, t) in points.iter().zip(&targets) {
        let pred = field.forward(*p).unwrap();
        field.backward(2.0 * (pred - t) / points.len() as f64).unwrap();
    }
    let analytic: Vec<Vec<f64>> = field.grad_tensors().iter().map(|g| g.to_vec()).collect();

    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = field.tensors()[ti][j];
            field.tensors_mut()[ti][j] = orig + h;
            let up = loss(&field);
            field.tensors_mut()[ti][j] = orig - h;
            let down = loss(&field);
            field.tensors_mut()[ti][j] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
            checked += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-3 && secs < 30.0;
    report(
        1,
        "gradient correctness",
        pass,
        format!("{checked} parameters, worst relative error {worst:.2e}, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_interpolation_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = |p: [f64; 3]| 0.3 - 1.1 * p[0] + 2.0 * p[1] + 0.7 * p[2];
    let grid = LevelGrid::from_fn(9, f).unwrap();
    let mut affine_err = 0.0f64;
    let mut unity_err = 0.0f64;
    for _ in 0..1000 {
        let p = random_point(&mut rng);
        affine_err = affine_err.max((grid.trilerp(p).unwrap() - f(p)).abs());
        let w: f64 = grid.corners(p).weight.iter().sum();
        unity_err = unity_err.max((w - 1.0).abs());
    }

    let n = 10;
    let ramp = |x: f64, y: f64, z: f64| 0.05 + 0.03 * x + 0.02 * y + 0.04 * z;
    let lr = Volume3D::from_fn([n; 3], IDENTITY, |i, j, l| ramp(i as f64, j as f64, l as f64) as f32).unwrap();
    let k = 3;
    let up = tricubic_upsample(&lr, k).unwrap();
    let lr_coord = |j: usize| (j as f64 + 0.5) / k as f64 - 0.5;
    let interior = |x: f64| (1.0..=(n - 2) as f64).contains(&x);
    let mut ramp_err = 0.0f64;
    for l in 0..n * k {
        for j in 0..n * k {
            for i in 0..n * k {
                let (x, y, z) = (lr_coord(i), lr_coord(j), lr_coord(l));
                if interior(x) && interior(y) && interior(z) {
                    ramp_err = ramp_err.max((up.get(i, j, l) as f64 - ramp(x, y, z)).abs());
                }
            }
        }
    }
    let pass = affine_err < 1e-6 && unity_err < 1e-12 && ramp_err < 1e-6;
    report(
        2,
        "interpolation exactness",
        pass,
        format!("affine {affine_err:.1e}, partition {unity_err:.1e}, tricubic ramp {ramp_err:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_3_schedule_and_frequencies() {
    let (r_min, r_max, k) = (32.0f64, 128.0f64, 6);
    let g = ((r_max.ln() - r_min.ln()) / (k - 1) as f64).exp();
    let mut oracle: Vec<usize> = (1..=k).map(|i| (r_min * g.powi(i - 1)).floor() as usize).collect();
    oracle[0] = 32;
    oracle[5] = 128;
    let schedule = resolution_schedule(32, 128, 6).unwrap();
    let freqs = SawtoothConfig::new(6).frequencies;
    let expected_f = [2.0, 3.2, 4.4, 5.6, 6.8, 8.0];
    let f_ok = freqs.len() == 6 && freqs.iter().zip(expected_f).all(|(a, b)| (a - b).abs() < 1e-12);
    let pass = schedule == oracle && schedule == [32, 42, 55, 73, 97, 128] && f_ok;
    report(3, "schedule and frequencies", pass, format!("R = {schedule:?}, f = {freqs:?}"));
    assert!(pass);
}

#[test]
fn criterion_4_metric_oracles() {
    let zeros = Volume3D::filled([12, 12, 12], 0.0).unwrap();
    let tenth = Volume3D::filled([12, 12, 12], 0.1).unwrap();
    let p = psnr(&zeros, &tenth).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = Volume3D::from_fn([14, 13, 12], IDENTITY, |_, _, _| rng.gen()).unwrap();
    let s_self = ssim3d(&noise, &noise).unwrap();

    let a = Volume3D::filled([12, 12, 12], 0.3).unwrap();
    let b = Volume3D::filled([12, 12, 12], 0.7).unwrap();
    let (x, y) = (0.3f32 as f64, 0.7f32 as f64);
    let closed = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1);
    let s_const = ssim3d(&a, &b).unwrap();

    let pass = (p - 20.0).abs() < 1e-6 && (s_self - 1.0).abs() < 1e-12 && (s_const - closed).abs() < 1e-4;
    report(
        4,
        "metric oracles",
        pass,
        format!("psnr {p:.9} dB, ssim(a,a) {s_self}, constants {s_const:.6} vs {closed:.6}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_overfit_sanity() {
    let start = Instant::now();
    let lr = generate(&PhantomSpec::checker(16, [0.0; 3])).unwrap();
    let out = train(&lr, &TrainConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = *out.loss_history.last().unwrap();
    let pass = out.loss_history.len() == 50 && last < 1e-3 && secs < 60.0;
    report(5, "overfit sanity", pass, format!("final loss {last:.3e} after 50 epochs, {secs:.1}s"));
    assert!(pass);
}

#[test]
fn criterion_6_desk_scale_sr_win() {
    let start = Instant::now();
    let hr = generate(&PhantomSpec::checker(48, [2.0; 3])).unwrap();
    let ((mp, ms), (tp, ts)) = sr_scores(&hr, 2, &TrainConfig::default());
    let secs = start.elapsed().as_secs_f64();
    let pass = mp >= tp + 1.0 && ms >= ts && secs < 600.0;
    report(
        6,
        "desk-scale SR win",
        pass,
        format!("model {mp:.2} dB / {ms:.4}, tricubic {tp:.2} dB / {ts:.4}, {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_7_ablation_direction() {
    let hr = generate(&PhantomSpec::new(PhantomKind::SmoothBlobs, 32, 0)).unwrap();
    let score = |variant: Variant, k: usize| {
        let cfg = TrainConfig {
            variant,
            ..TrainConfig::default()
        };
        sr_scores(&hr, k, &cfg).0 .0
    };
    let full2 = score(Variant::Full, 2);
    let mut lines = vec![format!("k=2 full {full2:.2}")];
    let mut ordered = true;
    let mut oneblob2 = f64::NAN;
    for v in [Variant::NoBasis, Variant::NoCoeff, Variant::NoPeriodic, Variant::NoOneblob] {
        let p = score(v, 2);
        ordered &= full2 >= p;
        if v == Variant::NoOneblob {
            oneblob2 = p;
        }
        lines.push(format!("{v} {p:.2}"));
    }
    let full3 = score(Variant::Full, 3);
    let oneblob3 = score(Variant::NoOneblob, 3);
    let (d2, d3) = (full2 - oneblob2, full3 - oneblob3);
    lines.push(format!("no-oneblob deficit k=2 {d2:.2}, k=3 {d3:.2}"));
    let pass = ordered && d2 >= 0.2 && d3 >= 0.2 && d3 > d2;
    report(7, "ablation direction", pass, lines.join(", "));
    assert!(pass);
}

fn run_pipeline(dir: &Path) -> Vec<MetricsReport> {
    let out = Command::new(env!("CARGO_BIN_EXE_tfsr"))
        .args(["pipeline", "--kind", "smooth-blobs", "--size", "24", "--factor", "2", "--seed", "3", "--out"])
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<MetricsReport>(l).unwrap().without_timing())
        .collect()
}

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ra = run_pipeline(&a);
    let rb = run_pipeline(&b);
    let ca = std::fs::read(a.join("model.ckpt")).unwrap();
    let cb = std::fs::read(b.join("model.ckpt")).unwrap();
    let pass = ca == cb && ra == rb && ra.len() == 2;
    report(
        8,
        "determinism",
        pass,
        format!("checkpoints {} bytes identical: {}, reports identical: {}", ca.len(), ca == cb, ra == rb),
    );
    assert!(pass);
}

#[test]
fn criterion_9_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let affine = [[0.9, 0.1, 0.0, -4.0], [0.0, 1.1, 0.2, 3.5], [0.05, 0.0, 1.3, 12.0], [0.0, 0.0, 0.0, 1.0]];
    let v = Volume3D::from_fn([7, 5, 6], affine, |_, _, _| rng.gen_range(-3.0..3.0))
        .unwrap()
        .with_intensity_range((-12.5, 800.0));
    let path = tmp.path().join("v.vvol");
    save_vvol(&v, &path).unwrap();
    let back = load_vvol(&path).unwrap();
    let vvol_ok = back.dims() == v.dims()
        && back.affine() == v.affine()
        && back.intensity_range() == v.intensity_range()
        && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());

    let lr = generate(&PhantomSpec::new(PhantomKind::SmoothBlobs, 12, 1)).unwrap();
    let field = train(
        &lr,
        &TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        },
    )
    .unwrap()
    .field;
    let ckpt = tmp.path().join("m.ckpt");
    save_checkpoint(&field, &ckpt).unwrap();
    let loaded = load_checkpoint(&ckpt).unwrap();
    let same = (0..100).all(|_| {
        let p = random_point(&mut rng);
        field.predict(p).unwrap().to_bits() == loaded.predict(p).unwrap().to_bits()
    });
    let pass = vvol_ok && same;
    report(9, "round trips", pass, format!("vvol bit-exact: {vvol_ok}, checkpoint predictions exact at 100 points: {same}"));
    assert!(pass);
}
