//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::io::Write;
use std::time::{Duration, Instant};

use common::{
    adam_reference_step, away_from_zero, check_loss, check_op, correlated_pair, direct_ssim_plane, model_errors,
    naive_conv, naive_conv_transposed, oracle_unprocess, random_config, FD_TOL, LEADERBOARD, SEEDS,
};
use ispnet::bench::profile_hd;
use ispnet::metrics::{charbonnier, l1, ms_ssim, mse, ssim, CHARBONNIER_EPS};
use ispnet::models::{
    checkpoint_bytes, checkpoint_from_bytes, csanet, dam_block, smallnet, unet, CsaNetConfig, UNetConfig,
};
use ispnet::nn::{conv2d_transposed_with, conv2d_with, Activation, ConvSpec, Padding};
use ispnet::raw_pipeline::{render_scene, unprocess, BilinearBaseline, UnprocessConfig};
use ispnet::trainer::{adam_update, AdamConfig, LrSchedule, TrainRun};
use ispnet::{
    evaluate, load_checkpoint, mai_score, save_checkpoint, train, LossKind, LossSpec, PairSet, ScoreInputs, Tape,
    Tensor, TrainConfig,
};
use sha2::{Digest, Sha256};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn score_golden() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, psnr, ms, printed) in LEADERBOARD {
        let s = mai_score(ScoreInputs::new(psnr, ms / 1e3).unwrap());
        worst = worst.max((s - printed).abs());
    }
    let t = start.elapsed();
    outcome(
        worst <= 0.01 && within(t, 1.0),
        format!("10 rows, worst |diff| {worst:.4} (tol 0.01), {:.3} s", t.as_secs_f64()),
    )
}

fn randn(shape: (usize, usize, usize, usize), seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, seed)
}

fn zip(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).unwrap()
}

fn loss_inputs(seed: u64, shape: (usize, usize, usize, usize)) -> (Tensor<f64>, Tensor<f64>) {
    let target = Tensor::<f64>::uniform(shape, 0.1, 0.9, seed);
    let noise = Tensor::<f64>::randn(shape, seed + 1000);
    let pred = zip(&target, &noise, |t, n| t + 0.05 * n);
    (pred, target)
}

type Case = (&'static str, Box<dyn Fn(u64) -> f64>);

fn conv_case(name: &'static str, cin: usize, cout: usize, k: usize, hw: (usize, usize), spec: ConvSpec) -> Case {
    (
        name,
        Box::new(move |seed| {
            let x = randn((2, cin, hw.0, hw.1), seed);
            let w = randn((cout, cin / spec.groups, k, k), seed + 100);
            let b = randn((1, cout, 1, 1), seed + 200);
            check_op(&[x, w, b], seed, |t, v| t.conv2d(v[0], v[1], Some(v[2]), spec).unwrap())
        }),
    )
}

fn gradient_cases() -> Vec<Case> {
    let mut cases = vec![
        conv_case("conv 3x3", 3, 4, 3, (6, 7), ConvSpec::default()),
        conv_case("conv stride 2", 3, 4, 3, (7, 8), ConvSpec::default().stride(2)),
        conv_case("conv dilated", 2, 3, 3, (8, 8), ConvSpec::default().dilation(2)),
        conv_case(
            "depthwise dilated 5x5",
            4,
            4,
            5,
            (9, 9),
            ConvSpec::default().dilation(2).groups(4),
        ),
        conv_case("grouped conv", 4, 6, 3, (5, 5), ConvSpec::default().groups(2)),
        conv_case(
            "valid conv",
            2,
            3,
            3,
            (6, 7),
            ConvSpec::default().padding(Padding::Valid),
        ),
    ];
    for k in [2usize, 3, 4] {
        let name: &'static str = ["conv transposed k2", "conv transposed k3", "conv transposed k4"][k - 2];
        cases.push((
            name,
            Box::new(move |seed| {
                let x = randn((2, 3, 4, 5), seed);
                let w = randn((3, 2, k, k), seed + 100);
                let b = randn((1, 2, 1, 1), seed + 200);
                let spec = ConvSpec::default().stride(2);
                check_op(&[x, w, b], seed, |t, v| {
                    t.conv2d_transposed(v[0], v[1], Some(v[2]), spec).unwrap()
                })
            }),
        ));
    }
    for kind in [Activation::Relu, Activation::Tanh, Activation::Sigmoid] {
        cases.push((
            kind.name(),
            Box::new(move |seed| {
                let x = away_from_zero(randn((2, 3, 4, 4), seed), 1e-2);
                check_op(&[x], seed, |t, v| t.activation(v[0], kind).unwrap())
            }),
        ));
    }
    cases.push((
        "max pool",
        Box::new(|seed| {
            let n = 2 * 3 * 6 * 8;
            let noise = Tensor::<f64>::uniform((1, 1, 1, n), 0.0, 1.0, seed).into_data();
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| noise[a].total_cmp(&noise[b]));
            let x = Tensor::from_vec((2, 3, 6, 8), idx.iter().map(|&i| i as f64 * 1e-2).collect()).unwrap();
            check_op(&[x], seed, |t, v| t.max_pool2(v[0]).unwrap())
        }),
    ));
    cases.push((
        "global avg pool",
        Box::new(|seed| {
            check_op(&[randn((2, 3, 5, 4), seed)], seed, |t, v| {
                t.global_avg_pool(v[0]).unwrap()
            })
        }),
    ));
    cases.push((
        "bilinear up2",
        Box::new(|seed| check_op(&[randn((2, 2, 4, 5), seed)], seed, |t, v| t.bilinear_up2(v[0]).unwrap())),
    ));
    cases.push((
        "pixel shuffle",
        Box::new(|seed| {
            check_op(&[randn((1, 12, 3, 4), seed)], seed, |t, v| {
                t.pixel_shuffle(v[0], 2).unwrap()
            })
        }),
    ));
    cases.push((
        "space to depth",
        Box::new(|seed| {
            check_op(&[randn((1, 3, 6, 4), seed)], seed, |t, v| {
                t.space_to_depth(v[0], 2).unwrap()
            })
        }),
    ));
    cases.push((
        "mul broadcast",
        Box::new(|seed| {
            let ins = [randn((2, 3, 4, 4), seed), randn((2, 3, 1, 1), seed + 1)];
            check_op(&ins, seed, |t: &mut Tape<f64>, v| t.mul(v[0], v[1]).unwrap())
        }),
    ));
    cases.push((
        "l1",
        Box::new(|seed| {
            let (pred, target) = loss_inputs(seed, (2, 3, 5, 5));
            let pred = zip(&pred, &target, |p, t| if p >= t { p + 1e-2 } else { p - 1e-2 });
            check_loss(&pred, |p| l1(p, &target).unwrap())
        }),
    ));
    cases.push((
        "mse",
        Box::new(|seed| {
            let (pred, target) = loss_inputs(seed, (2, 3, 5, 5));
            check_loss(&pred, |p| mse(p, &target).unwrap())
        }),
    ));
    cases.push((
        "charbonnier",
        Box::new(|seed| {
            let (pred, target) = loss_inputs(seed, (2, 3, 5, 5));
            check_loss(&pred, |p| charbonnier(p, &target, CHARBONNIER_EPS).unwrap())
        }),
    ));
    cases.push((
        "ssim",
        Box::new(|seed| {
            let (pred, target) = loss_inputs(seed, (1, 2, 14, 15));
            check_loss(&pred, |p| ssim(p, &target).unwrap())
        }),
    ));
    cases.push((
        "ms-ssim",
        Box::new(|seed| {
            let (pred, target) = loss_inputs(seed, (1, 1, 44, 46));
            check_loss(&pred, |p| ms_ssim(p, &target).unwrap())
        }),
    ));
    cases
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, "");
    let mut checks = 0;
    for (name, f) in gradient_cases() {
        for seed in 0..SEEDS {
            let e = f(seed);
            checks += 1;
            if !(e <= worst.0) {
                worst = (e, name);
            }
        }
    }
    for (name, model, input) in [
        ("smallnet", smallnet(3).unwrap(), (1, 4, 6, 6)),
        ("dam block", dam_block(8, 5).unwrap(), (1, 8, 9, 9)),
    ] {
        let errs = model_errors(&model, input);
        if errs.len() < SEEDS as usize {
            worst = (f64::INFINITY, name);
        }
        for (_, e) in errs {
            checks += 1;
            if !(e <= worst.0) {
                worst = (e, name);
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst.0 < FD_TOL && within(t, 120.0),
        format!(
            "{checks} checks over {SEEDS} seeds each, worst rel err {:.2e} ({}), {:.1} s",
            worst.0,
            worst.1,
            t.as_secs_f64()
        ),
    )
}

fn oracles() -> Outcome {
    let start = Instant::now();
    let mut conv_err: f64 = 0.0;
    let specs = [
        (3, 5, 3, ConvSpec::default()),
        (4, 6, 3, ConvSpec::default().stride(2)),
        (6, 6, 5, ConvSpec::default().dilation(2).groups(6)),
        (4, 8, 3, ConvSpec::default().groups(2)),
        (2, 3, 3, ConvSpec::default().padding(Padding::Valid)),
    ];
    for (seed, (cin, cout, k, spec)) in specs.into_iter().enumerate() {
        let seed = seed as u64;
        let x = Tensor::<f64>::uniform((2, cin, 11, 12), -1.0, 1.0, seed);
        let w = Tensor::<f64>::uniform((cout, cin / spec.groups, k, k), -0.5, 0.5, seed + 10);
        let b = Tensor::<f64>::uniform((1, cout, 1, 1), -0.5, 0.5, seed + 20);
        let got: Tensor<f32> = conv2d_with(&x.cast(), &w.cast(), Some(&b.cast()), &spec).unwrap();
        conv_err = conv_err.max(got.cast::<f64>().max_abs_diff(&naive_conv(&x, &w, Some(&b), &spec)));
    }
    for k in [2, 3, 4] {
        let x = Tensor::<f64>::uniform((2, 5, 6, 7), -1.0, 1.0, k as u64);
        let w = Tensor::<f64>::uniform((5, 3, k, k), -0.5, 0.5, 10 + k as u64);
        let spec = ConvSpec::default().stride(2);
        let got: Tensor<f32> = conv2d_transposed_with(&x.cast(), &w.cast(), None, &spec).unwrap();
        conv_err = conv_err.max(got.cast::<f64>().max_abs_diff(&naive_conv_transposed(&x, &w, None)));
    }

    let mut ssim_err: f64 = 0.0;
    for seed in 0..3 {
        let (x, y) = correlated_pair((2, 3, 19, 23), seed);
        let s = x.shape();
        let mut sum = 0.0;
        for n in 0..s.n() {
            for c in 0..s.c() {
                sum += direct_ssim_plane(x.plane(n, c), y.plane(n, c), s.h(), s.w()).0;
            }
        }
        let expect = sum / (s.n() * s.c()) as f64;
        ssim_err = ssim_err.max((ssim(&x, &y).unwrap().value - expect).abs());
    }

    let cfg = AdamConfig::default();
    let starts = [-2.0, -0.1, 0.0, 0.5, 4.0];
    let mut p = starts.to_vec();
    let (mut m, mut v) = (vec![0.0; 5], vec![0.0; 5]);
    let mut reference: Vec<(f64, f64, f64)> = starts.iter().map(|&s| (s, 0.0, 0.0)).collect();
    let mut adam_err: f64 = 0.0;
    for t in 1..=10u64 {
        let g: Vec<f64> = p.iter().map(|&q| 3.0 * (q - 0.7)).collect();
        adam_update(&mut p, &g, &mut m, &mut v, t, 0.05, &cfg);
        for (i, (q, m1, v1)) in reference.iter_mut().enumerate() {
            let grad = 3.0 * (*q - 0.7);
            adam_reference_step(q, m1, v1, grad, t, 0.05);
            adam_err = adam_err.max((p[i] - *q).abs());
        }
    }

    let mut codes = 0;
    for seed in 0..5 {
        let cfg = random_config(seed);
        let rgb = render_scene(48, 32, seed);
        let got = unprocess(&rgb, &cfg).unwrap();
        let expect = oracle_unprocess(&rgb, &cfg);
        for (&a, &b) in got.data().iter().zip(&expect) {
            codes = codes.max((a as i32 - b as i32).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        conv_err < 1e-5 && ssim_err < 1e-5 && adam_err < 1e-7 && codes <= 1 && within(t, 60.0),
        format!(
            "conv {conv_err:.1e}, ssim {ssim_err:.1e}, adam {adam_err:.1e}, unprocess {codes} code(s), {:.2} s",
            t.as_secs_f64()
        ),
    )
}

fn acceptance_noise(seed: u64) -> UnprocessConfig {
    UnprocessConfig {
        noise_read: 1e-4,
        noise_shot: 1e-2,
        ..UnprocessConfig::sample(seed)
    }
}

fn training_property() -> Outcome {
    let start = Instant::now();
    // Held-out pairs share the camera (ccm, gains, noise levels) but not the
    // scenes or the noise realisations.
    let train_cfg = acceptance_noise(7);
    let val_cfg = UnprocessConfig { seed: 8, ..train_cfg };
    let data = PairSet::synthesize(500, 256, &train_cfg, 1000).unwrap();
    let val = PairSet::synthesize(50, 256, &val_cfg, 9000).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        lr_initial: 1e-4,
        lr_final: 1e-4,
        lr_schedule: LrSchedule::Constant,
        total_steps: 2000,
        loss: LossSpec::single(LossKind::Charbonnier),
        augment_flip: false,
        seed: 1,
        validate_every: 0,
        checkpoint_every: 0,
    };
    let (model, run) = train(smallnet(0).unwrap(), &data, &cfg, TrainRun::default()).unwrap();
    let avg = |r: &[ispnet::trainer::StepRecord]| r.iter().map(|s| s.loss).sum::<f64>() / r.len() as f64;
    let first = avg(&run.log[..50]);
    let last = avg(&run.log[run.log.len() - 50..]);
    let reduction = 1.0 - last / first;
    let trained = evaluate(&model, &val).unwrap().psnr;
    let baseline = evaluate(&BilinearBaseline::new(val_cfg), &val).unwrap().psnr;
    let t = start.elapsed();
    outcome(
        trained - baseline >= 1.0 && reduction >= 0.5 && within(t, 900.0),
        format!(
            "smallnet {trained:.2} dB vs bilinear {baseline:.2} dB ({:+.2} dB), loss {first:.4} -> {last:.4} (-{:.0}%), {:.0} s",
            trained - baseline,
            100.0 * reduction,
            t.as_secs_f64()
        ),
    )
}

fn architecture() -> Outcome {
    let start = Instant::now();
    let count = smallnet(0).unwrap().parameter_count();
    let x = Tensor::uniform((1, 4, 544, 960), 0.0, 1.0, 11);
    let mut shapes_ok = true;
    let mut open_ok = true;
    for (name, m) in [
        ("smallnet", smallnet(0).unwrap()),
        ("csanet", csanet(CsaNetConfig::default(), 0).unwrap()),
        ("unet", unet(UNetConfig::default(), 0).unwrap()),
    ] {
        let y = m.predict(&x).unwrap();
        shapes_ok &= y.shape() == (1, 3, 1088, 1920).into();
        if name != "smallnet" {
            open_ok &= y.data().iter().all(|&v| v > 0.0 && v < 1.0);
        }
    }
    let t = start.elapsed();
    outcome(
        count == 4652 && shapes_ok && open_ok,
        format!(
            "smallnet {count} params, HD shapes {}, csanet/unet in (0,1) {}, {:.1} s",
            if shapes_ok { "ok" } else { "wrong" },
            if open_ok { "yes" } else { "no" },
            t.as_secs_f64()
        ),
    )
}

fn determinism() -> Outcome {
    let data = PairSet::synthesize(6, 64, &UnprocessConfig::sample(3), 77).unwrap();
    let cfg = TrainConfig {
        batch_size: 2,
        total_steps: 20,
        ..ispnet::Recipe::Dhisp.config(20, 9)
    };
    let run = || {
        let (m, _) = train(smallnet(5).unwrap(), &data, &cfg, TrainRun::default()).unwrap();
        checkpoint_bytes(&m).unwrap()
    };
    let (a, b) = (run(), run());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = checkpoint_from_bytes(&a).unwrap();
    save_checkpoint(&model, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    let round_trip = checkpoint_bytes(&back).unwrap() == a && std::fs::read(&path).unwrap() == a;
    outcome(
        a == b && round_trip,
        format!(
            "repeat run {}, save/load {}",
            if a == b { "bitwise equal" } else { "differs" },
            if round_trip { "bitwise equal" } else { "differs" }
        ),
    )
}

fn bench_hd() -> Outcome {
    let m = smallnet(0).unwrap();
    let hash = |m: &ispnet::ModelGraph| Sha256::digest(checkpoint_bytes(m).unwrap()).to_vec();
    let before = hash(&m);
    let r = profile_hd(&m).unwrap();
    let untouched = hash(&m) == before;
    let rel = (r.layer_sum_ms() - r.total_ms).abs() / r.total_ms;
    outcome(
        r.layers.len() == 4 && rel <= 0.05 && untouched,
        format!(
            "{} rows, layer sum {:.1} ms vs total {:.1} ms ({:.1}%), weights {}",
            r.layers.len(),
            r.layer_sum_ms(),
            r.total_ms,
            100.0 * rel,
            if untouched { "unchanged" } else { "MUTATED" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("score golden", score_golden),
        ("gradient suite", gradient_suite),
        ("oracle equivalence", oracles),
        ("training property", training_property),
        ("architecture contracts", architecture),
        ("determinism", determinism),
        ("bench --hd", bench_hd),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut out = std::io::stdout();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.is_some_and(|n| n != i + 1) {
            continue;
        }
        let o = run();
        failed += usize::from(!o.pass);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        writeln!(out, "[{verdict}] {}. {name}: {}", i + 1, o.detail).unwrap();
        out.flush().unwrap();
    }
    if failed > 0 {
        writeln!(out, "{failed} acceptance criteria failed").unwrap();
        std::process::exit(1);
    }
}
