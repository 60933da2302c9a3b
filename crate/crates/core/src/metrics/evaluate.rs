//! Ablation harness: run every method on every (scene, mask) pair of a
//! dataset and report per-record and mean scores.

use std::path::{Path, PathBuf};

use image::RgbImage;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{incoherence, lpips_external, psnr, IncoherenceParams};
use crate::adapter::AdapterConfig;
use crate::error::{Error, Result};
use crate::inpaint::{inpaint, BackendConfig, InpaintRequest};
use crate::pipeline::{run_with_mask, PipelineConfig};
use crate::raster::{load_rgb, BinaryMask};
use crate::scene::{load_scene, SceneBundle, MANIFEST_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    /// Returns the ground truth; a sanity baseline.
    Identity,
    /// One backend call on the full image.
    WholeImage { backend: BackendConfig },
    /// The per-plane pipeline; needs the scene layout. Masks are used as
    /// given (no dilation). Feathering blends towards the hidden pixels, so
    /// exact masks call for `feather_px: 0`.
    PerPlane { pipeline: PipelineConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub label: String,
    #[serde(flatten)]
    pub kind: MethodKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsnrRegion {
    #[default]
    Image,
    Mask,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub incoherence: IncoherenceParams,
    pub psnr_region: PsnrRegion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lpips: Option<AdapterConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRecord {
    /// `<scene>/<mask file stem>`
    pub scene_id: String,
    pub method: String,
    pub lpips: Option<f64>,
    pub incoherence: f64,
    #[serde(serialize_with = "ser_db")]
    pub psnr: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalFailure {
    pub scene_id: String,
    pub method: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub records: usize,
    pub failures: usize,
    /// Present only when every record has an LPIPS score.
    pub lpips: Option<f64>,
    pub incoherence: Option<f64>,
    #[serde(serialize_with = "ser_opt_db")]
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub dataset: PathBuf,
    pub scenes: Vec<String>,
    pub methods: Vec<MethodSpec>,
    pub options: EvalOptions,
    pub records: Vec<EvalRecord>,
    pub failures: Vec<EvalFailure>,
    pub means: Vec<MethodSummary>,
}

/// JSON has no infinity; PSNR of identical images is written as "inf".
fn ser_db<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

fn ser_opt_db<S: serde::Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => ser_db(v, s),
        None => s.serialize_none(),
    }
}

/// Text form used in the CSV: shortest round-trip decimal, `inf` for infinity.
pub(crate) fn fmt_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

struct Case {
    scene: String,
    mask_id: String,
    gt: RgbImage,
    mask: BinaryMask,
    bundle: Option<SceneBundle>,
}

fn discover(dataset: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dataset).map_err(|e| Error::io(dataset, e))?;
    let mut scenes = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dataset, e))?;
        let path = entry.path();
        if path.join("image.png").is_file() {
            scenes.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    scenes.sort();
    if scenes.is_empty() {
        return Err(Error::InvalidRequest(format!(
            "{} contains no scene directories with an image.png",
            dataset.display()
        )));
    }
    Ok(scenes)
}

fn load_cases(name: &str, dir: &Path) -> Result<Vec<Case>> {
    let gt = load_rgb(&dir.join("image.png"))?;
    let bundle = if dir.join(MANIFEST_FILE).is_file() {
        let loaded = load_scene(dir)?;
        for w in &loaded.warnings {
            warn!("{name}: {w}");
        }
        Some(loaded.bundle)
    } else {
        None
    };
    let mask_dir = dir.join("masks");
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&mask_dir)
        .map_err(|e| Error::io(&mask_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let mask = BinaryMask::load_png(&p)?;
            crate::raster::check_dims(&format!("mask {}", p.display()), gt.dimensions(), mask.dims())?;
            Ok(Case {
                scene: name.to_owned(),
                mask_id: p.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
                gt: gt.clone(),
                mask,
                bundle: bundle.clone(),
            })
        })
        .collect()
}

fn predict(case: &Case, method: &MethodSpec) -> Result<RgbImage> {
    match &method.kind {
        MethodKind::Identity => Ok(case.gt.clone()),
        MethodKind::WholeImage { backend } => {
            // hide the ground truth under the mask from the backend
            let mut input = case.gt.clone();
            for (x, y) in case.mask.iter_set() {
                input.put_pixel(x, y, image::Rgb([0, 0, 0]));
            }
            inpaint(&InpaintRequest::new(input, case.mask.clone())?, backend)
        }
        MethodKind::PerPlane { pipeline } => {
            let bundle = case.bundle.as_ref().ok_or_else(|| {
                Error::InvalidRequest(format!("scene `{}` has no {MANIFEST_FILE} for per-plane inpainting", case.scene))
            })?;
            let mut hidden = bundle.clone();
            for (x, y) in case.mask.iter_set() {
                hidden.image.put_pixel(x, y, image::Rgb([0, 0, 0]));
            }
            Ok(run_with_mask(&hidden, &case.mask, pipeline)?.final_image)
        }
    }
}

fn score(case: &Case, method: &MethodSpec, options: &EvalOptions) -> Result<EvalRecord> {
    let pred = predict(case, method)?;
    let region = match options.psnr_region {
        PsnrRegion::Image => None,
        PsnrRegion::Mask => Some(&case.mask),
    };
    Ok(EvalRecord {
        scene_id: format!("{}/{}", case.scene, case.mask_id),
        method: method.label.clone(),
        lpips: options
            .lpips
            .as_ref()
            .map(|a| lpips_external(&case.gt, &pred, a))
            .transpose()?,
        incoherence: incoherence(&case.gt, &pred, &case.mask, &options.incoherence)?,
        psnr: psnr(&case.gt, &pred, region)?,
        coverage: case.mask.coverage(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate(dataset: &Path, methods: &[MethodSpec], options: &EvalOptions) -> Result<EvalReport> {
    options.incoherence.validate()?;
    if methods.is_empty() {
        return Err(Error::InvalidRequest("no methods to evaluate".into()));
    }
    let scenes = discover(dataset)?;
    let mut cases = Vec::new();
    for (name, dir) in &scenes {
        cases.extend(load_cases(name, dir)?);
    }
    info!("evaluating {} methods on {} cases", methods.len(), cases.len());

    let jobs: Vec<(&Case, &MethodSpec)> = methods
        .iter()
        .flat_map(|m| cases.iter().map(move |c| (c, m)))
        .collect();
    let outcomes: Vec<std::result::Result<EvalRecord, EvalFailure>> = jobs
        .par_iter()
        .map(|(case, method)| {
            score(case, method, options).map_err(|e| EvalFailure {
                scene_id: format!("{}/{}", case.scene, case.mask_id),
                method: method.label.clone(),
                error: e.to_string(),
            })
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => {
                warn!("{} / {}: {}", f.scene_id, f.method, f.error);
                failures.push(f);
            }
        }
    }

    let means = methods
        .iter()
        .map(|m| {
            let rs: Vec<&EvalRecord> = records.iter().filter(|r| r.method == m.label).collect();
            MethodSummary {
                method: m.label.clone(),
                records: rs.len(),
                failures: failures.iter().filter(|f| f.method == m.label).count(),
                lpips: if rs.iter().all(|r| r.lpips.is_some()) {
                    mean(rs.iter().filter_map(|r| r.lpips))
                } else {
                    None
                },
                incoherence: mean(rs.iter().map(|r| r.incoherence)),
                psnr: mean(rs.iter().map(|r| r.psnr)),
            }
        })
        .collect();

    Ok(EvalReport {
        dataset: dataset.to_path_buf(),
        scenes: scenes.into_iter().map(|(n, _)| n).collect(),
        methods: methods.to_vec(),
        options: options.clone(),
        records,
        failures,
        means,
    })
}

impl EvalReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(["scene_id", "method", "lpips", "incoherence", "psnr", "coverage"])
            .map_err(|e| csv_error(path, e))?;
        for r in &self.records {
            w.write_record([
                r.scene_id.clone(),
                r.method.clone(),
                r.lpips.map(fmt_value).unwrap_or_else(|| "—".into()),
                fmt_value(r.incoherence),
                fmt_value(r.psnr),
                fmt_value(r.coverage),
            ])
            .map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report is serializable");
        v["table"] = serde_json::Value::String(self.render_table());
        v
    }

    /// Write `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.write_csv(&dir.join("report.csv"))?;
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&self.to_json()).expect("report is serializable");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Methods in the order given, one row each.
    pub fn render_table(&self) -> String {
        let cell = |v: Option<f64>, digits: usize| match v {
            None => "—".to_string(),
            Some(v) if v.is_infinite() => "inf".to_string(),
            Some(v) => format!("{v:.digits$}"),
        };
        let rows: Vec<[String; 5]> = self
            .means
            .iter()
            .map(|m| {
                [
                    m.method.clone(),
                    cell(m.lpips, 4),
                    cell(m.incoherence, 4),
                    cell(m.psnr, 2),
                    m.failures.to_string(),
                ]
            })
            .collect();
        let header = ["Method", "LPIPS↓", "Incoherence↓", "PSNR↑", "Failed"].map(String::from);
        let widths: Vec<usize> = (0..5)
            .map(|i| rows.iter().chain([&header]).map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let line = |r: &[String; 5]| {
            r.iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}", w = *w))
                .collect::<Vec<_>>()
                .join(" | ")
                .trim_end()
                .to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
        for r in &rows {
            out.push('\n');
            out.push_str(&line(r));
        }
        out.push('\n');
        out
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
