//! Acceptance suite. Every criterion prints one `PASS`/`FAIL`/`SKIP` line to
//! the terminal (written past the test harness's capture) and the test fails
//! if any criterion fails.
//!
//! The wall-clock half of criterion 8 runs only with `GLA_PERF=1`.

use std::io::Write;
use std::time::{Duration, Instant};

use dlsn_core::bench::{count_macs, dense_macs, measure_scaling, BenchOptions};
use dlsn_core::features::{bucket_histogram, write_fmap};
use dlsn_core::gla::{attend_bucket, gla_forward, gla_macs, round_weights, GlaParams};
use dlsn_core::imaging::{degrade, psnr_y, ssim_y, DegradationSpec, ImageBuffer};
use dlsn_core::network::{dlsn_forward, init_params, reference_grad_check, save_params, NetworkConfig};
use dlsn_core::rng::SeededRng;
use dlsn_core::sblsh::{assign_buckets, orthonormal_basis, plan_chunks, HashPlan};
use dlsn_core::tensor::{matmul, FeatureMap, Matrix};
use dlsn_core::training::{fit_lss_target, reference_spec, synth_dataset, train_toy, write_log_csv, TrainOptions};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn report(id: usize, name: &str, o: &Outcome, elapsed: Duration) {
    let status = if o.passed { "PASS" } else { "FAIL" };
    let line = format!(
        "acceptance {id:>2} {status} {name}: {} ({:.2}s)\n",
        o.detail,
        elapsed.as_secs_f64()
    );
    // Bypasses the harness capture so the summary shows on every run.
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn dense_reference(x: &FeatureMap, p: &GlaParams) -> Matrix {
    let q = dlsn_core::tensor::conv2d_3x3(x, &p.qk_conv).unwrap().to_matrix();
    let v = dlsn_core::tensor::conv2d_3x3(x, &p.v_conv).unwrap().to_matrix();
    let n = q.cols();
    let mut out = Matrix::zeros(q.rows(), n);
    for i in 0..n {
        let s: Vec<f64> = (0..n)
            .map(|j| (0..q.rows()).map(|k| q.get(k, i) * q.get(k, j)).sum())
            .collect();
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|v| (v - max).exp()).sum();
        for (j, sj) in s.iter().enumerate() {
            let a = (sj - max).exp() / z;
            for k in 0..q.rows() {
                out.set(k, i, out.get(k, i) + a * v.get(k, j));
            }
        }
    }
    out
}

fn c1_dense_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = SeededRng::new(seed);
        let mut p = GlaParams::init(4, 64, &mut rng);
        p.zero_learned_scoring();
        let x = FeatureMap::new(4, 8, 8, rng.normal_vec(256, 1.0)).unwrap();
        let out = gla_forward(&x, &p, &HashPlan::dense(64).unwrap()).unwrap();
        worst = worst.max(out.to_matrix().max_abs_diff(&dense_reference(&x, &p)));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst < 1e-9 && secs < 5.0, format!("max abs diff {worst:.2e} over 20 inputs"))
}

fn c2_orthonormality() -> Outcome {
    let mut worst: f64 = 0.0;
    for (b, c) in [(4, 8), (8, 8), (16, 64)] {
        for seed in 0..100 {
            let m = orthonormal_basis(b, c, seed).unwrap();
            let g = matmul(m.matrix(), &m.matrix().transpose()).unwrap();
            worst = worst.max(g.max_abs_diff(&Matrix::identity(b)));
        }
    }
    outcome(worst < 1e-10, format!("max |MM^T - I| {worst:.2e}"))
}

fn c3_scale_invariance() -> Outcome {
    let mut rng = SeededRng::new(3);
    let basis = orthonormal_basis(8, 16, 3).unwrap();
    let x = Matrix::new(16, 1000, rng.normal_vec(16_000, 1.0)).unwrap();
    let base = assign_buckets(&x, &basis).unwrap();
    let mut mismatches = 0;
    for alpha in [0.01, 1.0, 100.0] {
        let scaled = Matrix::new(16, 1000, x.data().iter().map(|v| v * alpha).collect()).unwrap();
        let ids = assign_buckets(&scaled, &basis).unwrap();
        mismatches += ids.iter().zip(&base).filter(|(a, b)| a != b).count();
    }
    outcome(mismatches == 0, format!("{mismatches} mismatched assignments of 3000"))
}

fn c4_chunk_partition() -> Outcome {
    let mut rng = SeededRng::new(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = 1 + rng.below(500);
        let l = 1 + rng.below(64);
        let ids: Vec<usize> = (0..n).map(|_| rng.below(8)).collect();
        let plan = plan_chunks(&ids, l, 0).unwrap();
        let mut seen = vec![0usize; n];
        let mut pads = 0;
        for chunk in plan.chunks() {
            if chunk.len() != l {
                bad += 1;
            }
            for &i in chunk {
                if i < n {
                    seen[i] += 1;
                } else {
                    pads += 1;
                }
            }
        }
        let expected_pad = (l - n % l) % l;
        if seen.iter().any(|&s| s != 1) || pads != expected_pad || plan.padding() != expected_pad {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{bad} faulty plans of 1000"))
}

fn c5_attention_normalization() -> Outcome {
    let mut rng = SeededRng::new(5);
    let mut worst: f64 = 0.0;
    let mut padded = 0;
    for _ in 0..10_000 {
        let c = 1 + rng.below(4);
        let l = 1 + rng.below(8);
        let p = GlaParams::init(c, l, &mut rng);
        let mut mask: Vec<bool> = (0..l).map(|_| rng.uniform() < 0.25).collect();
        mask[rng.below(l)] = false;
        if mask.iter().any(|&m| m) {
            padded += 1;
        }
        let mut bucket = || {
            let mut m = Matrix::new(c, l, rng.normal_vec(c * l, 2.0)).unwrap();
            for (j, &pad) in mask.iter().enumerate() {
                if pad {
                    (0..c).for_each(|k| m.set(k, j, 0.0));
                }
            }
            m
        };
        let (q, lb, v) = (bucket(), bucket(), bucket());
        let att = attend_bucket(&q, &lb, &v, &mask, &p).unwrap();
        for i in (0..l).filter(|&i| !mask[i]) {
            let sum: f64 = (0..l).filter(|&t| !mask[t]).map(|t| att.attention.get(t, i)).sum();
            let leaked: f64 = (0..l).filter(|&t| mask[t]).map(|t| att.attention.get(t, i).abs()).sum();
            worst = worst.max((sum - 1.0).abs()).max(leaked);
        }
    }
    outcome(worst < 1e-12, format!("max |sum - 1| {worst:.2e} over 10000 buckets ({padded} padded)"))
}

fn c6_round_weights() -> Outcome {
    let mut rng = SeededRng::new(6);
    let mut worst: f64 = 0.0;
    let mut negative = 0;
    for h in 1..=4 {
        for _ in 0..2500 {
            let sums: Vec<Vec<f64>> = (0..h).map(|_| rng.normal_vec(8, 10.0)).collect();
            negative += sums.iter().flatten().filter(|s| **s < 0.0).count();
            let w = round_weights(&sums).unwrap();
            for i in 0..8 {
                let total: f64 = w.iter().map(|r| r[i]).sum();
                worst = worst.max((total - 1.0).abs());
            }
        }
    }
    outcome(
        worst < 1e-9 && negative > 0,
        format!("max |sum - 1| {worst:.2e}, {negative} negative score sums"),
    )
}

fn c7_gradient_check() -> Outcome {
    let start = Instant::now();
    let report = reference_grad_check(0, 1e-5, 1e-4).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failing: Vec<&str> = report
        .tensors
        .iter()
        .filter(|t| !t.passed)
        .map(|t| t.name.as_str())
        .collect();
    outcome(
        report.passed() && secs < 60.0,
        format!(
            "{} tensors, max rel error {:.2e}, failing {:?}",
            report.tensors.len(),
            report.max_rel_error(),
            failing
        ),
    )
}

fn c8_complexity() -> (Outcome, Option<Outcome>) {
    let sizes = [1024, 2048, 4096, 8192, 16384];
    let opts = BenchOptions::default();
    let counts = count_macs(&sizes, &opts).unwrap();
    let (n0, d0, g0) = counts[0];
    let mut exact = true;
    for &(n, d, g) in &counts {
        let k = (n / n0) as u64;
        exact &= d == d0 * k * k && g == g0 * k;
        exact &= d == dense_macs(n, opts.channels);
        exact &= g == gla_macs(n, opts.channels, opts.bucket_size, opts.rounds);
    }
    let macs = outcome(exact, format!("MAC ratios exact over hw {sizes:?}"));
    if std::env::var("GLA_PERF").as_deref() != Ok("1") {
        return (macs, None);
    }
    let r = measure_scaling(&sizes, &opts).unwrap();
    let (d, g) = (r.dense_fit.slope, r.gla_fit.slope);
    let perf = outcome(
        (0.8..=1.3).contains(&g) && d >= 1.7,
        format!("log-log slopes dense {d:.3}, gla {g:.3}"),
    );
    (macs, Some(perf))
}

fn c9_toy_training() -> Outcome {
    let start = Instant::now();
    let cfg = NetworkConfig::micro();
    let spec = reference_spec(cfg.master_seed);
    let report = train_toy(&cfg, &spec, &TrainOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let last = report.final_row();
    let (l0, l200) = (report.loss_at(0).unwrap(), report.loss_at(200).unwrap());
    let finite = report.log.iter().all(|r| r.loss.is_finite());
    outcome(
        last.step == 500 && last.psnr > report.baseline_psnr && l200 < l0 && finite && secs < 600.0,
        format!(
            "held-out PSNR {:.3} dB vs bicubic {:.3} dB; loss {:.4} -> {:.4} (step 200) -> {:.4}",
            last.psnr, report.baseline_psnr, l0, l200, last.loss
        ),
    )
}

fn c10_lss_mechanism() -> Outcome {
    let mut rng = SeededRng::new(10);
    let (c, l) = (4, 8);
    let mut q = Matrix::new(c, l, rng.normal_vec(c * l, 0.3)).unwrap();
    // Key 1 is almost the query itself; key 6 points the opposite way.
    for k in 0..c {
        q.set(k, 0, 1.0);
        q.set(k, 1, 0.95);
        q.set(k, 6, -0.9);
    }
    let lb = Matrix::new(c, l, rng.normal_vec(c * l, 1.0)).unwrap();
    let p = GlaParams::init(c, l, &mut rng);
    let mut target = vec![0.0; l];
    target[6] = 1.0;
    let fit = fit_lss_target(&q, &lb, &p, 0, &target, 200, 0.05, 0.01).unwrap();
    let lowest = (1..l)
        .min_by(|&a, &b| {
            let da: f64 = (0..c).map(|k| q.get(k, 0) * q.get(k, a)).sum();
            let db: f64 = (0..c).map(|k| q.get(k, 0) * q.get(k, b)).sum();
            da.total_cmp(&db)
        })
        .unwrap();
    outcome(
        lowest == 6 && fit.argmax_before() != 6 && fit.argmax_after() == 6 && fit.kl < 0.01 && fit.steps <= 200,
        format!(
            "argmax {} -> {} after {} steps, KL {:.2e}",
            fit.argmax_before(),
            fit.argmax_after(),
            fit.steps,
            fit.kl
        ),
    )
}

fn c11_metrics() -> Outcome {
    let mut rng = SeededRng::new(11);
    let a = ImageBuffer::new(32, 32, (0..32 * 32 * 3).map(|_| rng.below(250) as u8).collect()).unwrap();
    let mut b = a.clone();
    b.pixels_mut().iter_mut().for_each(|v| *v += 1);
    let psnr = psnr_y(&a, &b).unwrap();
    let ssim = ssim_y(&a, &a).unwrap();
    outcome(
        (psnr - 48.1308).abs() <= 1e-3 && (ssim - 1.0).abs() <= 1e-9,
        format!("psnr {psnr:.5} dB, ssim {ssim:.12}"),
    )
}

/// Byte outputs of every seeded operation the command-line tool exposes.
fn seeded_outputs(seed: u64) -> Vec<Vec<u8>> {
    let mut rng = SeededRng::new(seed);
    let img = ImageBuffer::new(16, 16, (0..768).map(|_| rng.below(256) as u8).collect()).unwrap();
    let lr = degrade(
        &img,
        &DegradationSpec {
            scale: 2,
            blur_sigma: 1.0,
            noise_level: 10.0,
            rng_seed: seed,
        },
    )
    .unwrap();
    let cfg = NetworkConfig::micro().with_seed(seed);
    let params = init_params(&cfg).unwrap();
    let sr = dlsn_forward(&lr, &params, &cfg).unwrap();
    let fmap = FeatureMap::new(4, 6, 6, rng.normal_vec(144, 1.0)).unwrap();
    let hist = bucket_histogram(&fmap, 4, 2, seed).unwrap();
    let report = train_toy(
        &cfg,
        &reference_spec(seed),
        &TrainOptions {
            steps: 3,
            eval_every: 1,
            ..TrainOptions::default()
        },
    )
    .unwrap();
    let mut log = Vec::new();
    write_log_csv(&report.log, &mut log).unwrap();
    let grads = reference_grad_check(seed, 1e-5, 1e-4).unwrap().to_string();
    let macs = format!("{:?}", count_macs(&[64, 128, 256, 512], &BenchOptions { seed, ..BenchOptions::default() }).unwrap());
    let data: Vec<u8> = synth_dataset(&reference_spec(seed))
        .unwrap()
        .iter()
        .flat_map(|p| p.lr.pixels().iter().chain(p.hr.pixels()).copied().collect::<Vec<_>>())
        .collect();
    vec![
        lr.pixels().to_vec(),
        sr.pixels().to_vec(),
        save_params(&params),
        write_fmap(&fmap),
        format!("{hist:?}").into_bytes(),
        log,
        grads.into_bytes(),
        macs.into_bytes(),
        data,
    ]
}

fn c12_reproducibility() -> Outcome {
    let a = seeded_outputs(12);
    let b = seeded_outputs(12);
    let differing = a.iter().zip(&b).filter(|(x, y)| x != y).count();
    outcome(differing == 0, format!("{differing} of {} outputs differ", a.len()))
}

#[test]
fn acceptance() {
    let mut failed = Vec::new();
    let run = |id: usize, name: &str, f: fn() -> Outcome, failed: &mut Vec<usize>| {
        let start = Instant::now();
        let o = f();
        report(id, name, &o, start.elapsed());
        if !o.passed {
            failed.push(id);
        }
    };
    run(1, "dense equivalence", c1_dense_equivalence, &mut failed);
    run(2, "orthonormality", c2_orthonormality, &mut failed);
    run(3, "bucket scale invariance", c3_scale_invariance, &mut failed);
    run(4, "chunk partition", c4_chunk_partition, &mut failed);
    run(5, "attention normalization", c5_attention_normalization, &mut failed);
    run(6, "round-weight normalization", c6_round_weights, &mut failed);
    run(7, "gradient check", c7_gradient_check, &mut failed);
    let start = Instant::now();
    let (macs, perf) = c8_complexity();
    report(8, "complexity (MAC counts)", &macs, start.elapsed());
    if !macs.passed {
        failed.push(8);
    }
    match perf {
        Some(p) => {
            report(8, "complexity (wall time)", &p, start.elapsed());
            if !p.passed {
                failed.push(8);
            }
        }
        None => {
            let _ = std::io::stderr()
                .write_all(b"acceptance  8 SKIP complexity (wall time): set GLA_PERF=1 to run\n");
        }
    }
    run(9, "toy training", c9_toy_training, &mut failed);
    run(10, "LSS mechanism", c10_lss_mechanism, &mut failed);
    run(11, "metrics sanity", c11_metrics, &mut failed);
    run(12, "reproducibility", c12_reproducibility, &mut failed);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
