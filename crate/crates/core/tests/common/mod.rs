//! Fixtures and independent oracles shared by the integration tests and the
//! acceptance binary.
#![allow(dead_code)]

use std::time::Instant;

use eraser_core::geometry::{compute_rectification, rectifying_rotation, warp_image};
use eraser_core::adapter::AdapterConfig;
use eraser_core::inpaint::{nnf_search, BackendConfig, InpaintRequest, PatchMatchParams};
use eraser_core::metrics::IncoherenceParams;
use eraser_core::raster::BinaryMask;
use eraser_core::scene::{canonicalize_plane, CameraIntrinsics, Plane, PlaneKind};
use eraser_core::synth::{Camera, Room, RoomPlane, Texture};
use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_intrinsics(rng: &mut ChaCha8Rng) -> CameraIntrinsics {
    let width = rng.random_range(24..64);
    let height = rng.random_range(24..64);
    let f = rng.random_range(0.6..2.0) * width as f64;
    CameraIntrinsics {
        fx: f,
        fy: f * rng.random_range(0.9..1.1),
        cx: width as f64 / 2.0 + rng.random_range(-3.0..3.0),
        cy: height as f64 / 2.0 + rng.random_range(-3.0..3.0),
        width,
        height,
    }
}

/// A canonical plane facing the camera, with support on every pixel that
/// sees it comfortably in front of the horizon. `None` if no pixel does.
pub fn random_visible_plane(rng: &mut ChaCha8Rng, intr: &CameraIntrinsics) -> Option<Plane> {
    let raw = random_unit(rng) * rng.random_range(0.5..2.0);
    let (normal, offset) = canonicalize_plane(raw, rng.random_range(0.2..5.0)).ok()?;
    let support = BinaryMask::from_fn(intr.width, intr.height, |x, y| {
        let r = intr.ray(x as f64, y as f64);
        normal.dot(&r) / r.norm() > 0.1
    });
    (!support.is_empty()).then(|| Plane { id: "p".into(), normal, offset, support_mask: support, kind: PlaneKind::Other })
}

pub fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn check(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------- geometry

/// Worst errors over `n` random normals: orthonormality, `det - 1`, `|R n - z|`.
pub fn rotation_errors(n: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = rng(seed);
    let (mut ortho, mut det, mut map) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let normal = random_unit(&mut rng);
        let r = rectifying_rotation(&normal);
        ortho = ortho.max(max_abs(&(r.transpose() * r - Matrix3::identity())));
        det = det.max((r.determinant() - 1.0).abs());
        map = map.max((r * normal - Vector3::z()).norm());
    }
    (ortho, det, map)
}

/// Worst `|H · H⁻¹ - I|` over `n` random rectifications; also returns how many
/// planes failed to rectify.
pub fn round_trip_error(n: usize, seed: u64) -> (f64, usize, usize) {
    let mut rng = rng(seed);
    let (mut worst, mut done, mut failed) = (0.0f64, 0, 0);
    while done < n {
        let intr = random_intrinsics(&mut rng);
        let Some(plane) = random_visible_plane(&mut rng, &intr) else { continue };
        done += 1;
        match compute_rectification(&plane, &intr, 64) {
            Ok(frame) => {
                let h = frame.h_orig_to_rect;
                let id = h.compose(&h.inverse()).expect("regular");
                worst = worst.max(max_abs(&(id.matrix() - Matrix3::identity())));
            }
            Err(_) => failed += 1,
        }
    }
    (worst, done, failed)
}

/// Floor-only room seen obliquely from 1.5 m up, checker squares of `size` m.
pub fn checker_floor(size: f64, pitch: f64) -> Room {
    let (w, h) = (320, 240);
    let f = w as f64 / 2.0 / (35f64.to_radians()).tan();
    Room {
        camera: Camera {
            intrinsics: CameraIntrinsics { fx: f, fy: f, cx: w as f64 / 2.0 - 0.5, cy: h as f64 / 2.0 - 0.5, width: w, height: h },
            position: Vector3::new(0.0, -1.5, 0.0),
            yaw: 0.0,
            pitch,
        },
        planes: vec![RoomPlane::floor(Texture::Checker { size, a: [30, 30, 30], b: [220, 220, 220] })],
        furniture: Vec::new(),
        supersample: 3,
    }
}

/// Sub-pixel positions where `row` crosses `level`.
fn crossings(row: &[f64], level: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..row.len() {
        let (a, b) = (row[i - 1] - level, row[i] - level);
        if a * b < 0.0 {
            out.push(i as f64 - 1.0 + a / (a - b));
        }
    }
    out
}

pub struct CheckerMeasure {
    /// Every measured square side, in rectified pixels.
    pub sides: Vec<f64>,
    /// `size · pixels_per_meter`.
    pub expected: f64,
}

impl CheckerMeasure {
    pub fn worst_relative_error(&self) -> f64 {
        self.sides.iter().map(|s| (s / self.expected - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Rectify the checker floor and measure square sides along rows and columns
/// that lie entirely inside the valid region.
pub fn measure_checker(size: f64, pitch: f64) -> CheckerMeasure {
    let rendered = checker_floor(size, pitch).render().expect("renders");
    let bundle = rendered.bundle;
    let plane = &bundle.planes[0];
    let frame = compute_rectification(plane, &bundle.intrinsics, 512).expect("rectifies");
    let (rect, valid) = warp_image(&bundle.image, &frame.h_orig_to_rect, frame.dims());
    let (w, h) = frame.dims();
    let luma = |x: u32, y: u32| rect.get_pixel(x, y)[0] as f64;
    let mut sides = Vec::new();
    let mut scan = |line: Vec<(u32, u32)>| {
        for run in line.split(|&(x, y)| !valid.get(x, y)) {
            let values: Vec<f64> = run.iter().map(|&(x, y)| luma(x, y)).collect();
            let c = crossings(&values, 125.0);
            sides.extend(c.windows(2).map(|p| p[1] - p[0]));
        }
    };
    // stay clear of the outer rows/columns, where the valid region is ragged
    for y in (h / 4..3 * h / 4).step_by(7) {
        scan((w / 8..7 * w / 8).map(|x| (x, y)).collect());
    }
    for x in (w / 4..3 * w / 4).step_by(7) {
        scan((h / 8..7 * h / 8).map(|y| (x, y)).collect());
    }
    CheckerMeasure { sides, expected: size * frame.pixels_per_meter }
}

// -------------------------------------------------------------- patchmatch

pub struct NnfInstance {
    pub image: RgbImage,
    pub known: BinaryMask,
    pub targets: BinaryMask,
}

/// 16x16 image, noise or smooth-plus-noise, with a random rectangular hole.
pub fn nnf_instance(seed: u64) -> NnfInstance {
    let mut rng = rng(seed);
    let smooth = seed.is_multiple_of(2);
    let (fx, fy) = (rng.random_range(0.2..0.9), rng.random_range(0.2..0.9));
    let image = RgbImage::from_fn(16, 16, |x, y| {
        let mut px = [0u8; 3];
        for (c, v) in px.iter_mut().enumerate() {
            let noise: f64 = rng.random_range(0.0..255.0);
            *v = if smooth {
                let wave = 127.5 + 100.0 * (fx * x as f64 + fy * y as f64 + c as f64).sin();
                (0.8 * wave + 0.2 * noise) as u8
            } else {
                noise as u8
            };
        }
        Rgb(px)
    });
    // redraw until at least 8 fully known 7x7 source patches remain
    loop {
        let (hw, hh) = (rng.random_range(3..7), rng.random_range(3..7));
        let (x0, y0) = (rng.random_range(0..16 - hw), rng.random_range(0..16 - hh));
        let targets = BinaryMask::from_fn(16, 16, |x, y| (x0..x0 + hw).contains(&x) && (y0..y0 + hh).contains(&y));
        let overlaps = |c: u32, lo: u32, len: u32| c + 3 >= lo && c < lo + len + 3;
        let sources = (3..13u32)
            .flat_map(|y| (3..13u32).map(move |x| (x, y)))
            .filter(|&(x, y)| !(overlaps(x, x0, hw) && overlaps(y, y0, hh)))
            .count();
        if sources >= 8 {
            return NnfInstance { image, known: targets.not(), targets };
        }
    }
}

/// Exact nearest-neighbor field by exhaustive search; returns the mean best
/// distance over targets. Target patches are clipped to the image, sources
/// must be fully inside and fully known.
pub fn brute_force_mean(inst: &NnfInstance, patch: u32) -> f64 {
    let r = (patch / 2) as i64;
    let (w, h) = (inst.image.width() as i64, inst.image.height() as i64);
    let px = |x: i64, y: i64| inst.image.get_pixel(x as u32, y as u32).0.map(f64::from);
    let sources: Vec<(i64, i64)> = (r..h - r)
        .flat_map(|y| (r..w - r).map(move |x| (x, y)))
        .filter(|&(x, y)| (-r..=r).all(|dy| (-r..=r).all(|dx| inst.known.get((x + dx) as u32, (y + dy) as u32))))
        .collect();
    let mut total = 0.0;
    for (tx, ty) in inst.targets.iter_set() {
        let (tx, ty) = (tx as i64, ty as i64);
        let best = sources
            .iter()
            .map(|&(sx, sy)| {
                let mut d = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let (x, y) = (tx + dx, ty + dy);
                        if x < 0 || y < 0 || x >= w || y >= h {
                            continue;
                        }
                        let (a, b) = (px(x, y), px(sx + dx, sy + dy));
                        d += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
                    }
                }
                d
            })
            .fold(f64::INFINITY, f64::min);
        total += best;
    }
    total / inst.targets.count() as f64
}

pub struct OracleSummary {
    pub worst_ratio: f64,
    pub over_bound: usize,
    pub non_monotone: usize,
}

/// Sweeps after which every oracle instance has stopped improving.
pub const CONVERGED_SWEEPS: u32 = 20;

pub fn patchmatch_oracle(instances: u64) -> OracleSummary {
    let mut s = OracleSummary { worst_ratio: 0.0, over_bound: 0, non_monotone: 0 };
    for seed in 0..instances {
        let inst = nnf_instance(seed);
        let params = PatchMatchParams { seed, nnf_iters: CONVERGED_SWEEPS, ..PatchMatchParams::default() };
        let found = nnf_search(&inst.image, &inst.known, &inst.targets, &params, None).expect("instance has sources");
        let exact = brute_force_mean(&inst, params.patch_size);
        let ratio = if exact == 0.0 {
            if found.field.mean_distance() == 0.0 { 1.0 } else { f64::INFINITY }
        } else {
            found.field.mean_distance() / exact
        };
        s.worst_ratio = s.worst_ratio.max(ratio);
        s.over_bound += usize::from(ratio > 1.2);
        s.non_monotone += usize::from(found.sweep_means.windows(2).any(|p| p[1] > p[0]));
    }
    s
}

pub fn stripes(width: u32, height: u32, period: u32) -> RgbImage {
    RgbImage::from_fn(width, height, |_, y| {
        if (y % period) < period / 2 {
            Rgb([200, 60, 40])
        } else {
            Rgb([30, 90, 210])
        }
    })
}

/// Plain masked PSNR, written out independently of the metrics module.
pub fn masked_psnr(a: &RgbImage, b: &RgbImage, mask: &BinaryMask) -> f64 {
    let mut sse = 0.0;
    for (x, y) in mask.iter_set() {
        for c in 0..3 {
            sse += (a.get_pixel(x, y)[c] as f64 - b.get_pixel(x, y)[c] as f64).powi(2);
        }
    }
    let mse = sse / (3 * mask.count()) as f64;
    10.0 * (255.0f64 * 255.0 / mse).log10()
}

// ------------------------------------------------------------- incoherence

/// Incoherence written out directly: full 2-D Gaussian kernel, replicate
/// padding, then the two thresholds.
pub fn incoherence_oracle(edge_gt: &[f64], edge_pred: &[f64], mask: &BinaryMask, params: &IncoherenceParams) -> f64 {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let sigma = params.blur_sigma;
    let r = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            kernel.push(((dx * dx + dy * dy) as f64 / (-2.0 * sigma * sigma)).exp());
        }
    }
    let norm: f64 = kernel.iter().sum();
    let mut sum = 0.0;
    for (x, y) in mask.iter_set() {
        let (x, y) = (x as i64, y as i64);
        let mut g = 0.0;
        let mut k = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = (x + dx).clamp(0, w - 1);
                let sy = (y + dy).clamp(0, h - 1);
                g += kernel[k] * edge_gt[(sy * w + sx) as usize];
                k += 1;
            }
        }
        g /= norm;
        if g > params.gt_enhance_threshold {
            g = 1.0;
        }
        let mut d = edge_pred[(y * w + x) as usize] - g;
        if d <= params.residual_threshold {
            d = 0.0;
        }
        sum += d;
    }
    sum / mask.count() as f64
}

pub struct Triple {
    pub name: &'static str,
    pub width: u32,
    pub height: u32,
    pub edge_gt: Vec<f64>,
    pub edge_pred: Vec<f64>,
    pub mask: BinaryMask,
    /// Evaluated by hand from the pseudocode.
    pub expected: f64,
}

fn uniform_triple(name: &'static str, gt: f64, pred: f64, expected: f64) -> Triple {
    Triple {
        name,
        width: 10,
        height: 10,
        edge_gt: vec![gt; 100],
        edge_pred: vec![pred; 100],
        mask: BinaryMask::full(10, 10),
        expected,
    }
}

/// Hand-evaluated (edge_gt, edge_pred, mask) triples with default parameters.
pub fn incoherence_triples() -> Vec<Triple> {
    let mut t = vec![
        uniform_triple("all-zero pred edges", 0.3, 0.0, 0.0),
        uniform_triple("fully enhanced gt", 1.0, 1.0, 0.0),
        uniform_triple("enhanced gt above 0.1", 0.2, 0.9, 0.0),
        uniform_triple("false edge on empty gt", 0.0, 0.5, 0.5),
        uniform_triple("weak gt below 0.1 subtracts", 0.09, 0.5, 0.41),
        uniform_triple("residual just above 0.01", 0.0, 0.011, 0.011),
        uniform_triple("residual of exactly 0.01 suppressed", 0.0, 0.01, 0.0),
        uniform_triple("residual below 0.01 suppressed", 0.006, 0.015, 0.0),
        uniform_triple("negative residual suppressed", 0.09, 0.05, 0.0),
    ];
    // left half of the mask carries a full-strength false edge
    t.push(Triple {
        name: "half the mask at 1.0",
        width: 10,
        height: 10,
        edge_gt: vec![0.0; 100],
        edge_pred: (0..100).map(|i| if i % 10 < 5 { 1.0 } else { 0.0 }).collect(),
        mask: BinaryMask::full(10, 10),
        expected: 0.5,
    });
    // one gt edge pixel: blurred peak k0² with k0 = 1 / Σ_{i=-6..6} e^{-i²/8}
    let mut spike = vec![0.0; 21 * 21];
    spike[10 * 21 + 10] = 1.0;
    let mut pred = vec![0.0; 21 * 21];
    pred[10 * 21 + 10] = 1.0;
    t.push(Triple {
        name: "isolated gt edge blurred below 0.1",
        width: 21,
        height: 21,
        edge_gt: spike,
        edge_pred: pred,
        mask: BinaryMask::from_fn(21, 21, |x, y| (x, y) == (10, 10)),
        expected: 0.960_129_643_783_311_4,
    });
    // mask outside the false edge
    t.push(Triple {
        name: "mask excludes the false edge",
        width: 10,
        height: 10,
        edge_gt: vec![0.0; 100],
        edge_pred: (0..100).map(|i| if i % 10 == 0 { 1.0 } else { 0.0 }).collect(),
        mask: BinaryMask::from_fn(10, 10, |x, _| x >= 5),
        expected: 0.0,
    });
    t
}

/// The crafted case: constant gt, pred with a vertical 0→255 step whose Sobel
/// response (1/√2 on two columns) enters a 10x10 mask on one column.
pub fn crafted_step_case() -> (RgbImage, RgbImage, BinaryMask, f64) {
    let gt = RgbImage::from_pixel(20, 10, Rgb([0, 0, 0]));
    let pred = RgbImage::from_fn(20, 10, |x, _| if x < 10 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
    let mask = BinaryMask::from_fn(20, 10, |x, _| x >= 10);
    (gt, pred, mask, 10.0 * std::f64::consts::FRAC_1_SQRT_2 / 100.0)
}

/// Textured image with a few random rectangular holes.
pub fn request_fixture(seed: u64) -> InpaintRequest {
    let mut g = rng(seed);
    let (w, h) = (g.random_range(28..48), g.random_range(28..48));
    let (fx, fy) = (g.random_range(0.1..0.8), g.random_range(0.1..0.8));
    let img = RgbImage::from_fn(w, h, |x, y| {
        let v = 127.0 + 90.0 * (fx * x as f64).sin() * (fy * y as f64).cos();
        Rgb([v as u8, (255.0 - v) as u8, ((x * 5 + y * 3) % 256) as u8])
    });
    let mut mask = BinaryMask::new(w, h);
    for _ in 0..g.random_range(1..4) {
        let (rw, rh) = (g.random_range(2..w / 3), g.random_range(2..h / 3));
        let (x0, y0) = (g.random_range(0..w - rw), g.random_range(0..h - rh));
        mask = mask.or(&BinaryMask::from_fn(w, h, |x, y| (x0..x0 + rw).contains(&x) && (y0..y0 + rh).contains(&y)));
    }
    InpaintRequest::new(img, mask).unwrap()
}

/// Every backend, with a `cp` stand-in for the external adapter.
pub fn backends(seed: u64) -> Vec<BackendConfig> {
    vec![
        BackendConfig::PatchMatch(PatchMatchParams { seed, em_iters: 3, ..Default::default() }),
        BackendConfig::Diffusion,
        BackendConfig::External { adapter: AdapterConfig::command(["cp", "{input}", "{output}"]) },
    ]
}
