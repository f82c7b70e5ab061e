//! Latency profiler and score reports.

use ispnet::bench::{profile, profile_hd, score_report, HD_HEIGHT, HD_WIDTH};
use ispnet::models::{checkpoint_bytes, smallnet};
use ispnet::raw_pipeline::UnprocessConfig;
use ispnet::{build_model, mai_score, PairSet, ScoreInputs, Shape};
use sha2::{Digest, Sha256};

fn weights_hash(m: &ispnet::ModelGraph) -> Vec<u8> {
    Sha256::digest(checkpoint_bytes(m).unwrap()).to_vec()
}

#[test]
fn hd_smallnet_profile() {
    let m = smallnet(0).unwrap();
    let before = weights_hash(&m);
    let r = profile_hd(&m).unwrap();
    assert_eq!(weights_hash(&m), before, "profiling changed the weights");
    assert_eq!(r.geometry, (HD_HEIGHT, HD_WIDTH));
    assert_eq!(r.input, Shape::new(1, 4, 544, 960));
    assert_eq!(r.layers.len(), 4);
    let ops: Vec<&str> = r.layers.iter().map(|l| l.op.as_str()).collect();
    assert_eq!(ops[3], "pixel_shuffle");
    assert!(r.total_ms > 0.0);
    let rel = (r.layer_sum_ms() - r.total_ms).abs() / r.total_ms;
    assert!(rel <= 0.05, "layer sum {} vs total {}", r.layer_sum_ms(), r.total_ms);
    assert!(r.conv_share() > 80.0, "conv share {:.1}%", r.conv_share());
    let pct: f64 = r.layers.iter().map(|l| l.percent).sum();
    assert!((pct - 100.0).abs() < 1e-9);
    assert_eq!(r.parameter_bytes, 4652 * 4);
    assert_eq!(r.runs, 10);
    assert_eq!(r.warmup, 3);
    assert!(r.threads >= 1);
}

#[test]
fn repeated_profiles_are_stable() {
    let m = smallnet(0).unwrap();
    let a = profile(&m, 512, 512, 7, 2).unwrap();
    let b = profile(&m, 512, 512, 7, 2).unwrap();
    let rel = (a.total_ms - b.total_ms).abs() / a.total_ms.min(b.total_ms);
    assert!(rel <= 0.2, "{:.3} ms then {:.3} ms", a.total_ms, b.total_ms);
}

#[test]
fn incompatible_geometry_is_rejected() {
    let u = build_model("unet", 0).unwrap();
    assert!(profile(&u, 1080, 1920, 5, 2).is_err());
    assert!(profile(&u, 64, 64, 5, 2).is_ok());
    let m = smallnet(0).unwrap();
    assert!(profile(&m, 65, 64, 5, 2).is_err());
    assert!(profile(&m, 64, 64, 1, 2).is_err());
}

#[test]
fn score_report_fills_quality() {
    let m = smallnet(0).unwrap();
    let val = PairSet::synthesize(3, 32, &UnprocessConfig::sample(1), 5).unwrap();
    let r = profile(&m, 64, 64, 5, 2).unwrap();
    let total = r.total_ms;
    let r = score_report(&m, &val, r).unwrap();
    let q = r.quality.unwrap();
    let expect = mai_score(ScoreInputs::new(q.psnr, total / 1e3).unwrap());
    assert_eq!(q.score, expect);
    let text = r.to_text();
    assert!(text.contains("Final Score"));
    assert!(text.contains("not mobile APU"));
    let csv = r.to_csv();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("index,layer,op,median_ms,percent"));
    let empty = PairSet::synthesize(0, 32, &UnprocessConfig::sample(1), 5).unwrap();
    assert!(score_report(&m, &empty, profile(&m, 64, 64, 5, 2).unwrap()).is_err());
}

fn score(psnr: f64, seconds: f64) -> f64 {
    mai_score(ScoreInputs::new(psnr, seconds).unwrap())
}

#[test]
fn score_branches_and_saturations() {
    // Fast branch: alpha 20.
    assert!((score(23.2, 0.061) - 25.98).abs() < 1e-9);
    // Lower clip: anything under 30 ms counts as 30 ms.
    assert_eq!(score(20.0, 0.001), score(20.0, 0.03));
    assert!((score(20.0, 0.001) - 23.4).abs() < 1e-9);
    // Slow branch: alpha 0.5.
    assert!((score(23.23, 1.861) - 22.3995).abs() < 1e-9);
    // Upper clip: psnr - 2.4 beyond five seconds.
    assert!((score(21.0, 7.5) - 18.6).abs() < 1e-9);
    assert_eq!(score(21.0, 5.0), score(21.0, 60.0));
    // The branches meet at 0.2 s.
    assert_eq!(score(22.0, 0.2), 22.0);
    assert!(ScoreInputs::new(22.0, 0.0).is_err());
    assert!(ScoreInputs::new(f64::NAN, 0.1).is_err());
}
