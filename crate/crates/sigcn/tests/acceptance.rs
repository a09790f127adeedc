//! Acceptance gate: one test per release criterion, each printing a
//! single pass/fail line (visible with `--nocapture`, or on failure).

mod common;

use std::time::Instant;

use sigcn::config::Config;
use sigcn::episodes::{generate_episode, GeneratorConfig};
use sigcn::gradcheck::{self, DEFAULT_TOL};
use sigcn::head;
use sigcn::ia;
use sigcn::pipeline;
use sigcn::rng::SplitMix64;
use sigcn::sigr::{self, Salience};
use sigcn::tape::Tape;
use sigcn::tensor::Tensor;

fn report(criterion: &str, ok: bool, details: &str) {
    println!(
        "{criterion}: {} — {details}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "{criterion} failed: {details}");
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let (reports, all_ok) = gradcheck::run(11, DEFAULT_TOL).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let enough = reports.iter().all(|r| r.instances >= 20);
    let worst = reports
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0f64, f64::max);
    let ok = all_ok && enough && elapsed < 120.0;
    report(
        "criterion 1 (gradient suite)",
        ok,
        &format!(
            "{} ops, worst rel err {worst:.3e}, {elapsed:.1}s",
            reports.len()
        ),
    );
}

#[test]
fn criterion_2_loop_oracles() {
    let mut rng = SplitMix64::new(22);
    let mut worst = 0.0f64;

    // sigcn_layer against the loop oracle.
    for _ in 0..50 {
        let n = 2 + rng.below(9);
        let c = 1 + rng.below(8);
        let k = 1 + rng.below(5);
        let x = common::rand_tensor(&mut rng, vec![n, c]);
        let a_hat = common::rand_tensor(&mut rng, vec![n, n]);
        let theta = common::rand_tensor(&mut rng, vec![k, c]);
        let want = common::sigcn_layer(x.data(), a_hat.data(), theta.data(), n, c, k);
        let mut tape = Tape::new();
        let xi = tape.constant(x);
        let ai = tape.constant(a_hat);
        let ti = tape.constant(theta);
        let out = sigr::sigcn_layer(&mut tape, xi, ai, ti).unwrap();
        worst = worst.max(common::max_abs_diff(tape.value(out).unwrap().data(), &want));
    }

    // associate against the loop Gram oracle.
    for _ in 0..50 {
        let c = 1 + rng.below(8);
        let (h, w) = (2 + rng.below(3), 2 + rng.below(3));
        let s = 1 + rng.below(3);
        let (alpha, beta) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
        let q0 = common::rand_tensor(&mut rng, vec![c, h, w]);
        let q1 = common::rand_tensor(&mut rng, vec![c, h, w]);
        let vs = common::rand_tensor(&mut rng, vec![c, s, s]);
        let (want0, want1) = common::associate(
            q0.data(),
            q1.data(),
            vs.data(),
            c,
            h * w,
            s * s,
            alpha,
            beta,
        );
        let mut tape = Tape::new();
        let v0 = tape.constant(q0);
        let v1 = tape.constant(q1);
        let si = tape.constant(vs);
        let (t0, t1) = ia::associate(&mut tape, v0, v1, si, alpha, beta).unwrap();
        worst = worst.max(common::max_abs_diff(tape.value(t0).unwrap().data(), &want0));
        worst = worst.max(common::max_abs_diff(tape.value(t1).unwrap().data(), &want1));
    }

    // Activation maps against brute-force matching.
    for _ in 0..50 {
        let c = 2 + rng.below(7);
        let (h, w) = (2 + rng.below(5), 2 + rng.below(5));
        let shots = 1 + rng.below(3);
        let fs: Vec<(Tensor, sigcn::episodes::Mask)> = (0..shots)
            .map(|_| {
                (
                    common::rand_tensor(&mut rng, vec![c, h, w]),
                    common::rand_mask(&mut rng, h, w),
                )
            })
            .collect();
        let refs: Vec<(&Tensor, &sigcn::episodes::Mask)> =
            fs.iter().map(|(t, m)| (t, m)).collect();
        let fq = common::rand_tensor(&mut rng, vec![c, h, w]);
        let got = sigcn::matching::pixel_activation(&refs, &fq).unwrap();
        worst = worst.max(common::max_abs_diff(
            got.data(),
            &common::pixel_activation(&refs, &fq),
        ));
        let r = 1 + rng.below(h.min(w));
        let got = sigcn::matching::region_activation(&refs, &fq, r).unwrap();
        worst = worst.max(common::max_abs_diff(
            got.data(),
            &common::region_activation(&refs, &fq, r),
        ));
    }

    // miou against direct counting.
    for _ in 0..50 {
        let episodes = 1 + rng.below(6);
        let (h, w) = (3 + rng.below(4), 3 + rng.below(4));
        let mut preds = Vec::new();
        let mut gts = Vec::new();
        let mut ids = Vec::new();
        for _ in 0..episodes {
            preds.push(common::rand_mask(&mut rng, h, w));
            gts.push(common::rand_mask(&mut rng, h, w));
            ids.push(rng.below(3) as u32);
        }
        let got = head::miou(&preds, &gts, &ids).unwrap();
        let (want_classes, want_mean, want_fb) = common::miou(&preds, &gts, &ids);
        worst = worst.max((got.miou_mean - want_mean).abs());
        worst = worst.max((got.fb_iou - want_fb).abs());
        for (cid, want) in want_classes {
            worst = worst.max((got.miou_per_class[&cid.to_string()] - want).abs());
        }
    }

    report(
        "criterion 2 (loop oracles)",
        worst <= 1e-9,
        &format!("50 instances per op, worst abs diff {worst:.3e}"),
    );
}

#[test]
fn criterion_3_salience_and_graph_invariants() {
    let mut rng = SplitMix64::new(33);
    let mut failures = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (2 + rng.below(4), 2 + rng.below(4));
        let n = h * w;
        let c = 2 + rng.below(6);

        // Threshold monotonicity on a random normalized map.
        let map = Tensor::from_fn(vec![h, w], |_| rng.next_f64());
        let (t1, t2) = {
            let a = rng.next_f64();
            let b = rng.next_f64();
            (a.min(b), a.max(b))
        };
        let loose = sigr::select_salient(&map, t1).unwrap();
        let tight = sigr::select_salient(&map, t2).unwrap();
        // The fallback pixel of an all-empty tight selection is maximal,
        // so it is salient under the looser threshold too whenever that
        // one selected anything by value.
        if loose.on.iter().zip(&tight.on).any(|(l, t)| *t && !*l) {
            failures += 1;
        }

        // Adjacency symmetry, zero diagonal, range, and salient support.
        let xq = common::rand_tensor(&mut rng, vec![c, h, w]);
        let on: Vec<bool> = (0..n).map(|_| rng.next_f64() < 0.5).collect();
        let sal = Salience { h, w, on };
        let g = sigr::build_graph(&xq, &sal).unwrap();
        for i in 0..n {
            for j in 0..n {
                let v = g.a0.at2(i, j);
                worst = worst.max((v - g.a0.at2(j, i)).abs());
                if i == j && v != 0.0 {
                    failures += 1;
                }
                if (!sal.on[i] || !sal.on[j]) && v != 0.0 {
                    failures += 1;
                }
                if !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&v) {
                    failures += 1;
                }
            }
        }

        // Scale invariance: scaling one node's feature vector by c > 0
        // leaves the cosine adjacency unchanged.
        let node = rng.below(n);
        let factor = rng.uniform(0.1, 10.0);
        let mut scaled = xq.data().to_vec();
        for ci in 0..c {
            scaled[ci * n + node] *= factor;
        }
        let g2 = sigr::build_graph(&Tensor::new(vec![c, h, w], scaled).unwrap(), &sal).unwrap();
        worst = worst.max(common::max_abs_diff(g.a0.data(), g2.a0.data()));

        // Â fixes D̃^{1/2}·1: with degrees d_i of A0+I, the vector √d
        // is an eigenvector of D̃^{-1/2}(A0+I)D̃^{-1/2} at eigenvalue 1.
        let mut degree = vec![1.0; n];
        for i in 0..n {
            for j in 0..n {
                degree[i] += g.a0.at2(i, j);
            }
        }
        let sqrt_d: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g.a_hat.at2(i, j) * sqrt_d[j];
            }
            worst = worst.max((acc - sqrt_d[i]).abs());
        }
    }
    let ok = failures == 0 && worst <= 1e-9;
    report(
        "criterion 3 (salience/graph invariants)",
        ok,
        &format!("100 cases, {failures} violations, worst residual {worst:.3e}"),
    );
}

#[test]
fn criterion_4_zero_weight_association() {
    let mut rng = SplitMix64::new(44);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = 1 + rng.below(8);
        let (h, w) = (2 + rng.below(3), 2 + rng.below(3));
        let s = 1 + rng.below(3);
        let q0 = common::rand_tensor(&mut rng, vec![c, h, w]);
        let q1 = common::rand_tensor(&mut rng, vec![c, h, w]);
        let vs = common::rand_tensor(&mut rng, vec![c, s, s]);
        let mut tape = Tape::new();
        let v0 = tape.constant(q0.clone());
        let v1 = tape.constant(q1.clone());
        let si = tape.constant(vs);
        let (t0, t1) = ia::associate(&mut tape, v0, v1, si, 0.0, 0.0).unwrap();
        let half0 = q0.scale(0.5);
        let half1 = q1.scale(0.5);
        worst = worst.max(common::max_abs_diff(
            tape.value(t0).unwrap().data(),
            half0.data(),
        ));
        worst = worst.max(common::max_abs_diff(
            tape.value(t1).unwrap().data(),
            half1.data(),
        ));
    }
    report(
        "criterion 4 (zero-weight association halves inputs)",
        worst <= 1e-12,
        &format!("worst abs diff {worst:.3e}"),
    );
}

#[test]
fn criterion_5_overfit_seed_42() {
    let cfg = Config::default();
    let gen = GeneratorConfig::default();
    assert_eq!(
        (gen.channels, gen.height, gen.width, gen.shots),
        (8, 16, 16, 1)
    );
    let ep = generate_episode(42, &gen).unwrap();
    let start = Instant::now();
    let run = pipeline::overfit(&ep, &cfg, 500, 0.05, false).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let first = run.losses[0];
    let last = *run.losses.last().unwrap();
    let ok = (first - std::f64::consts::LN_2).abs() < 1e-9
        && last < 0.05
        && run.iou > 0.9
        && elapsed < 60.0;
    report(
        "criterion 5 (seed-42 overfit)",
        ok,
        &format!(
            "loss {first:.4} -> {last:.4}, IoU {:.3}, {elapsed:.1}s",
            run.iou
        ),
    );
}

#[test]
fn criterion_6_reasoning_beats_raw_features() {
    let cfg = Config::default();
    let gen = GeneratorConfig {
        sigma: 1.5,
        ..GeneratorConfig::default()
    };
    let steps = 40;
    let (mut full, mut raw) = (0.0f64, 0.0f64);
    for seed in 0..50u64 {
        let ep = generate_episode(seed, &gen).unwrap();
        full += pipeline::overfit(&ep, &cfg, steps, cfg.lr, false).unwrap().iou;
        raw += pipeline::overfit(&ep, &cfg, steps, cfg.lr, true).unwrap().iou;
    }
    let (full, raw) = (full / 50.0, raw / 50.0);
    report(
        "criterion 6 (graph+association beats raw features)",
        full > raw,
        &format!("mean IoU over 50 seeds: full {full:.4} vs ablated {raw:.4}"),
    );
}

#[test]
fn criterion_7_determinism() {
    // Tensor format round-trip must be exact to the bit.
    let dir = tempfile::tempdir().unwrap();
    let ep = generate_episode(9, &GeneratorConfig::default()).unwrap();
    let mut rng = SplitMix64::new(77);
    let extra = Tensor::from_fn(vec![3, 5, 4], |_| rng.gaussian() as f32 as f64);
    let mut bit_exact = true;
    for (i, t) in [&ep.query.feat_mid, &ep.support[0].feat_high, &extra]
        .iter()
        .enumerate()
    {
        let path = dir.path().join(format!("t{i}.stnsr"));
        sigcn::io::save_tensor(&path, t).unwrap();
        let back = sigcn::io::load_tensor(&path).unwrap();
        bit_exact &= back.dims() == t.dims()
            && back
                .data()
                .iter()
                .zip(t.data())
                .all(|(a, b)| a.to_bits() == b.to_bits());
    }

    // Inference twice over the same inputs must give identical bytes.
    let bin = env!("CARGO_BIN_EXE_sigcn");
    let ep_dir = dir.path().join("ep");
    let run = |args: &[&str]| {
        let out = std::process::Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&["gen", "--seed", "5", "--out", ep_dir.to_str().unwrap()]);
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");
    for out in [&out1, &out2] {
        run(&[
            "infer",
            "--episode",
            ep_dir.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let mut names: Vec<String> = std::fs::read_dir(&out1)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    let mut identical = !names.is_empty();
    for name in &names {
        let a = std::fs::read(out1.join(name)).unwrap();
        let b = std::fs::read(out2.join(name)).unwrap();
        identical &= a == b;
    }
    report(
        "criterion 7 (determinism)",
        bit_exact && identical,
        &format!(
            "tensor round-trips bit-exact, {} inference files byte-identical",
            names.len()
        ),
    );
}
