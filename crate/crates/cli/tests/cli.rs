use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};

use eraser_core::adapter::AdapterConfig;
use eraser_core::inpaint::{inpaint, BackendConfig, InpaintRequest, PatchMatchParams};
use eraser_core::raster::{load_rgb, save_rgb, BinaryMask};
use eraser_core::scene::save_scene;
use eraser_core::synth::{demo_room, oblique_suite, write_suite};

const FE: &str = env!("CARGO_BIN_EXE_fe");

fn fe(args: &[&str]) -> Output {
    Command::new(FE).args(args).output().unwrap()
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn room(dir: &Path) {
    save_scene(&demo_room(96, 72).render().unwrap().bundle, dir).unwrap();
}

fn write_config(dir: &Path, json: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn erase_all_writes_image_and_timings() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let cfg = write_config(tmp.path(), r#"{"backend": {"kind": "diffusion"}, "target_long_side": 96}"#);
    let out = tmp.path().join("out.png");
    let dump = tmp.path().join("dump");
    let o = fe(&["erase", "--scene", scene.to_str().unwrap(), "--all", "--config", &cfg,
        "--out", out.to_str().unwrap(), "--dump", dump.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(load_rgb(&out).unwrap().dimensions(), (96, 72));
    let timings: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(timings["total_ms"].as_f64().unwrap() > 0.0);
    assert!(dump.join("summary.json").exists());
    assert!(dump.join("floor_input.png").exists());
}

#[test]
fn erase_without_config_uses_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let out = tmp.path().join("out.png");
    let o = fe(&["erase", "--scene", scene.to_str().unwrap(), "--select", "sofa", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(out.exists());
}

#[test]
fn usage_and_validation_errors_exit_one() {
    let o = fe(&["erase", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("Usage"));
    assert!(o.stdout.is_empty());

    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let out = tmp.path().join("out.png");
    let o = fe(&["erase", "--scene", scene.to_str().unwrap(), "--select", "sofa99", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("sofa99"));
    assert!(!out.exists());

    let o = fe(&["erase", "--scene", tmp.path().join("missing").to_str().unwrap(), "--all", "--out", "x.png"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
}

#[test]
fn backend_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let cfg = write_config(tmp.path(), r#"{"backend": {"kind": "external", "adapter": {"kind": "command", "command": ["false"]}}, "target_long_side": 96}"#);
    let o = fe(&["erase", "--scene", scene.to_str().unwrap(), "--all", "--config", &cfg, "--out", "unused.png"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    assert!(text(&o.stderr).contains("external"));
}

#[test]
fn metrics_on_identical_images() {
    let tmp = tempfile::tempdir().unwrap();
    let img = RgbImage::from_pixel(32, 32, Rgb([90, 120, 30]));
    let mask = BinaryMask::from_fn(32, 32, |x, y| x > 8 && y > 8 && x < 20 && y < 24);
    let (gt, pred, m) = (tmp.path().join("gt.png"), tmp.path().join("pred.png"), tmp.path().join("m.png"));
    save_rgb(&img, &gt).unwrap();
    save_rgb(&img, &pred).unwrap();
    mask.save_png(&m).unwrap();
    let o = fe(&["metrics", "--gt", gt.to_str().unwrap(), "--pred", pred.to_str().unwrap(), "--mask", m.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert_eq!(text(&o.stdout), "incoherence 0.0\npsnr inf\n");
}

#[test]
fn rectify_emits_image_validity_and_homography() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let out = tmp.path().join("rect");
    let o = fe(&["rectify", "--scene", scene.to_str().unwrap(), "--plane", "floor", "--out", out.to_str().unwrap(), "--target-long-side", "128"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let rect = load_rgb(&out.join("rectified.png")).unwrap();
    let valid = BinaryMask::load_png(&out.join("valid.png")).unwrap();
    assert_eq!(rect.dimensions(), valid.dims());
    assert_eq!(rect.width().max(rect.height()), 128);
    let frame: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("frame.json")).unwrap()).unwrap();
    assert_eq!(frame["h_orig_to_rect"].as_array().unwrap().len(), 3);
    let h: [[f64; 3]; 3] = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(serde_json::to_value(h).unwrap(), frame["h_orig_to_rect"]);

    let o = fe(&["rectify", "--scene", scene.to_str().unwrap(), "--plane", "ceiling", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("floor"));
}

fn adapter_fixture() -> (RgbImage, BinaryMask) {
    let img = RgbImage::from_fn(48, 40, |x, y| Rgb([((x * 37 + y * 11) % 256) as u8, ((x ^ y) * 9 % 256) as u8, (y * 6) as u8]));
    let mask = BinaryMask::from_fn(48, 40, |x, y| (14..30).contains(&x) && (10..27).contains(&y));
    (img, mask)
}

#[test]
fn self_hosted_adapter_matches_in_process_backends() {
    let (img, mask) = adapter_fixture();
    let request = InpaintRequest::new(img, mask).unwrap();
    for (name, local) in [
        ("diffusion", BackendConfig::Diffusion),
        ("patchmatch", BackendConfig::PatchMatch(PatchMatchParams { seed: 5, ..Default::default() })),
    ] {
        let adapter = AdapterConfig::command([FE, "inpaint", "--input", "{input}", "--mask", "{mask}", "--output", "{output}", "--backend", name, "--seed", "5"]);
        let remote = inpaint(&request, &BackendConfig::External { adapter }).unwrap();
        assert_eq!(remote, inpaint(&request, &local).unwrap(), "{name}");
    }
}

#[test]
fn evaluate_writes_report_and_table() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("suite");
    write_suite(&oblique_suite(64, 48, 3).unwrap()[..2], &data).unwrap();
    let methods = tmp.path().join("methods.json");
    std::fs::write(&methods, r#"{"methods": [{"label": "gt", "kind": "identity"},
        {"label": "diffusion", "kind": "whole_image", "backend": {"kind": "diffusion"}}],
        "options": {"psnr_region": "mask"}}"#).unwrap();
    let report = tmp.path().join("report");
    let o = fe(&["evaluate", "--dataset", data.to_str().unwrap(), "--methods", methods.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
    assert!(text(&o.stdout).contains("diffusion"));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["options"]["psnr_region"], "mask");

    std::fs::write(&methods, "[]").unwrap();
    let o = fe(&["evaluate", "--dataset", data.to_str().unwrap(), "--methods", methods.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn demo_room_command_writes_a_loadable_scene() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("demo");
    let o = fe(&["demo", "room", "--out", out.to_str().unwrap(), "--width", "80", "--height", "60"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(out.join("empty.png").exists());
    let loaded = eraser_core::scene::load_scene(&out).unwrap();
    assert_eq!(loaded.bundle.dims(), (80, 60));
}

fn get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_honours_fe_port() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("room");
    room(&scene);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(FE)
        .args(["serve", "--scene", scene.to_str().unwrap(), "--port", "1"])
        .env("FE_PORT", port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Some(r) = get(port, "/api/scene") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"sofa\""));

    let o = Command::new(FE).args(["serve", "--scene", scene.to_str().unwrap()]).env("FE_PORT", "http").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("FE_PORT"));
}
