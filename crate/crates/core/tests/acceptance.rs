//! One PASS/FAIL line per acceptance criterion. Exits nonzero if any fails.

mod common;

use std::process::ExitCode;

use common::*;
use eraser_core::inpaint::{inpaint, BackendConfig, PatchMatchParams};
use eraser_core::metrics::{
    evaluate, incoherence, incoherence_from_edges, EdgeMap, EvalOptions, IncoherenceParams, MethodKind, MethodSpec,
    PsnrRegion,
};
use eraser_core::pipeline::{erase, PipelineConfig, Selection};
use eraser_core::synth::{demo_room, oblique_suite, write_suite};
use image::{Rgb, RgbImage};

fn geometry() -> Outcome {
    let ((ortho, det, map), _) = timed(|| rotation_errors(10_000, 1));
    let ((round_trip, done, failed), _) = timed(|| round_trip_error(10_000, 2));
    let checker = measure_checker(0.5, 0.9);
    let sides = checker.sides.len();
    let worst = checker.worst_relative_error();
    Outcome::check(
        ortho < 1e-9 && det < 1e-9 && map < 1e-9 && failed == 0 && round_trip < 1e-9 && sides > 50 && worst < 0.02,
        format!(
            "rotation ortho {ortho:.1e} |det-1| {det:.1e} n->z {map:.1e}; round trip {round_trip:.1e} over {done} planes \
             ({failed} failed); checker {sides} sides, worst {:.2}%",
            100.0 * worst
        ),
    )
}

fn patchmatch_oracle_criterion() -> Outcome {
    let s = patchmatch_oracle(100);
    Outcome::check(
        s.over_bound == 0 && s.non_monotone == 0,
        format!("worst ratio {:.3} (bound 1.2), {} over bound, {} non-monotone", s.worst_ratio, s.over_bound, s.non_monotone),
    )
}

fn inpaint_contract() -> Outcome {
    let (mut runs, mut leaks, mut nondeterministic, mut errors) = (0, 0, 0, 0);
    for seed in 0..50u64 {
        let req = request_fixture(1000 + seed);
        let outside = req.mask().not();
        for backend in backends(seed) {
            runs += 1;
            match (inpaint(&req, &backend), inpaint(&req, &backend)) {
                (Ok(a), Ok(b)) => {
                    leaks += usize::from(outside.iter_set().any(|(x, y)| a.get_pixel(x, y) != req.image().get_pixel(x, y)));
                    nondeterministic += usize::from(a != b);
                }
                _ => errors += 1,
            }
        }
    }
    Outcome::check(
        leaks + nondeterministic + errors == 0,
        format!("{runs} runs: {leaks} changed unmasked pixels, {nondeterministic} differed between runs, {errors} errors"),
    )
}

fn incoherence_fidelity() -> Outcome {
    let params = IncoherenceParams::default();
    let triples = incoherence_triples();
    let mut worst = 0.0f64;
    for t in &triples {
        let gt = EdgeMap::new(t.width, t.height, t.edge_gt.clone()).unwrap();
        let pred = EdgeMap::new(t.width, t.height, t.edge_pred.clone()).unwrap();
        let got = incoherence_from_edges(&gt, &pred, &t.mask, &params).unwrap();
        worst = worst.max((got - t.expected).abs());
    }
    let (gt, pred, mask, expected) = crafted_step_case();
    let crafted = incoherence(&gt, &pred, &mask, &params).unwrap();
    let crafted_err = (crafted - expected).abs();
    Outcome::check(
        triples.len() >= 10 && worst < 1e-6 && crafted_err < 1e-6,
        format!("{} triples, worst error {worst:.1e}; crafted step {crafted:.6} (expected {expected:.6})", triples.len()),
    )
}

fn rectification_benefit() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scenes = oblique_suite(320, 240, 7).unwrap();
    write_suite(&scenes, dir.path()).unwrap();
    let methods = vec![
        MethodSpec {
            label: "whole_image".into(),
            kind: MethodKind::WholeImage { backend: BackendConfig::PatchMatch(PatchMatchParams::default()) },
        },
        MethodSpec {
            label: "per_plane".into(),
            kind: MethodKind::PerPlane { pipeline: PipelineConfig { feather_px: 0, ..Default::default() } },
        },
    ];
    let options = EvalOptions { psnr_region: PsnrRegion::Mask, ..Default::default() };
    let report = match evaluate(dir.path(), &methods, &options) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("evaluate failed: {e}")),
    };
    let (whole, plane) = (&report.means[0], &report.means[1]);
    let (wp, pp) = (whole.psnr.unwrap_or(f64::NAN), plane.psnr.unwrap_or(f64::NAN));
    let (wi, pi) = (whole.incoherence.unwrap_or(f64::NAN), plane.incoherence.unwrap_or(f64::NAN));
    Outcome::check(
        report.failures.is_empty() && pp > wp && pi < wi && pp - wp >= 2.0,
        format!(
            "{} scenes; PSNR per-plane {pp:.2} vs whole-image {wp:.2} dB (gap {:.2}, need >= 2); \
             incoherence {pi:.4} vs {wi:.4}",
            report.scenes.len(),
            pp - wp
        ),
    )
}

fn end_to_end() -> Outcome {
    let rendered = demo_room(320, 240).render().unwrap();
    let result = match erase(&rendered.bundle, &Selection::All, &PipelineConfig::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::check(false, format!("erase failed: {e}")),
    };
    let psnr = masked_psnr(&result.final_image, &rendered.empty, &result.inpaint_mask);
    let inc = incoherence(&rendered.empty, &result.final_image, &result.inpaint_mask, &IncoherenceParams::default()).unwrap();
    let t = &result.timings;
    let stages_present = t.mask_ms > 0.0 && t.backend_ms > 0.0 && t.total_ms > 0.0;
    Outcome::check(
        psnr >= 22.0 && inc <= 0.02 && stages_present && t.total_ms < 60_000.0,
        format!(
            "{} planes, {} instances; masked PSNR {psnr:.2} dB (>= 22), incoherence {inc:.4} (<= 0.02); \
             timings mask {:.0} rectify {:.0} backend {:.0} composite {:.0} final {:.0} total {:.0} ms",
            rendered.bundle.planes.len(),
            rendered.bundle.instances.len(),
            t.mask_ms,
            t.rectify_ms,
            t.backend_ms,
            t.composite_ms,
            t.final_pass_ms,
            t.total_ms
        ),
    )
}

fn evaluate_harness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    for (name, color) in [("flat_a", [120u8, 80, 60]), ("flat_b", [30, 200, 90])] {
        let scene = dir.path().join(name);
        std::fs::create_dir_all(scene.join("masks")).unwrap();
        RgbImage::from_pixel(48, 36, Rgb(color)).save(scene.join("image.png")).unwrap();
        for (k, x0) in [(0, 4u32), (1, 20)] {
            eraser_core::raster::BinaryMask::from_fn(48, 36, |x, y| (x0..x0 + 14).contains(&x) && (6..24).contains(&y))
                .save_png(&scene.join(format!("masks/m{k}.png")))
                .unwrap();
        }
    }
    let methods = vec![
        MethodSpec { label: "identity".into(), kind: MethodKind::Identity },
        MethodSpec {
            label: "patchmatch".into(),
            kind: MethodKind::WholeImage { backend: BackendConfig::PatchMatch(PatchMatchParams::default()) },
        },
    ];
    let report = evaluate(dir.path(), &methods, &EvalOptions::default()).unwrap();
    let out = dir.path().join("report");
    report.write(&out).unwrap();

    let mut reader = csv::Reader::from_path(out.join("report.csv")).unwrap();
    let mut sums: std::collections::HashMap<String, (f64, f64, usize)> = Default::default();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let parse = |s: &str| if s == "inf" { f64::INFINITY } else { s.parse::<f64>().unwrap() };
        let e = sums.entry(rec[1].to_string()).or_default();
        e.0 += parse(&rec[3]);
        e.1 += parse(&rec[4]);
        e.2 += 1;
    }
    let mut worst = 0.0f64;
    for m in &report.means {
        let (si, sp, n) = sums[&m.method];
        let (inc, psnr) = (m.incoherence.unwrap(), m.psnr.unwrap());
        worst = worst.max((si / n as f64 - inc).abs());
        worst = worst.max(if psnr.is_finite() { (sp / n as f64 - psnr).abs() } else if sp.is_finite() { f64::INFINITY } else { 0.0 });
    }
    let id = &report.means[0];
    Outcome::check(
        worst <= 1e-9 && id.incoherence == Some(0.0) && id.psnr == Some(f64::INFINITY),
        format!(
            "{} records; worst CSV mean gap {worst:.1e}; identity incoherence {:?} psnr {:?}",
            report.records.len(),
            id.incoherence.unwrap(),
            id.psnr.unwrap()
        ),
    )
}

/// Name, check, and time budget in seconds.
type Criterion = (&'static str, fn() -> Outcome, f64);

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("geometry suite", geometry, 30.0),
        ("patchmatch oracle", patchmatch_oracle_criterion, 120.0),
        ("inpaint contract", inpaint_contract, f64::INFINITY),
        ("incoherence fidelity", incoherence_fidelity, f64::INFINITY),
        ("rectification benefit", rectification_benefit, 300.0),
        ("end-to-end synthetic room", end_to_end, 60.0),
        ("evaluate harness", evaluate_harness, f64::INFINITY),
    ];
    let mut failed = 0;
    for (name, run, budget) in criteria {
        let (outcome, secs) = timed(run);
        let in_time = secs < budget;
        let pass = outcome.passed && in_time;
        failed += usize::from(!pass);
        let limit = if budget.is_finite() { format!(" (limit {budget:.0} s)") } else { String::new() };
        println!("{} {name}: {} [{secs:.1} s{limit}]", if pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
