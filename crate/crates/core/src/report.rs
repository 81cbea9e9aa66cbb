//! On-disk outputs: metric reports, comparison tables, per-image maps and figure panels.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{imageops, GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::data::{decode, image_to_gray, mask_to_gray, save_png};
use crate::experiments::ExperimentRow;
use crate::grid::Mask;
use crate::losses::write_csv;
use crate::metrics::{Evaluation, MetricsReport};
use crate::{Error, Result};

pub const TP: Rgb<u8> = Rgb([0, 200, 0]);
pub const FP: Rgb<u8> = Rgb([220, 0, 0]);
pub const FN: Rgb<u8> = Rgb([230, 230, 0]);
const PANEL_SCALE: u32 = 4;
const GAP: u32 = 4;

/// The columns shared by `metrics.csv` and the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub method: String,
    pub fid: Option<f64>,
    pub cv: Option<f64>,
    pub iou_mean: f64,
    pub best_threshold: f64,
    pub n_images: usize,
}

impl From<&MetricsReport> for MetricsSummary {
    fn from(r: &MetricsReport) -> Self {
        Self {
            method: r.method.clone(),
            fid: r.fid,
            cv: r.cv,
            iou_mean: r.iou_mean,
            best_threshold: r.best_threshold,
            n_images: r.n_images,
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    threshold: f64,
    mean_iou: f64,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// `metrics.json`, `metrics.csv`, `sweep.csv`, `per_image.csv` and `maps/<id>/*.png` under `dir`.
pub fn write_evaluation(dir: &Path, evaluation: &Evaluation) -> Result<()> {
    create_dir(dir)?;
    let report = &evaluation.report;
    write_json(&dir.join("metrics.json"), report)?;
    write_csv(&dir.join("metrics.csv"), &[MetricsSummary::from(report)])?;
    let sweep: Vec<SweepRow> = report.curve.iter().map(|&(threshold, mean_iou)| SweepRow { threshold, mean_iou }).collect();
    write_csv(&dir.join("sweep.csv"), &sweep)?;
    write_csv(&dir.join("per_image.csv"), &report.per_image)?;
    for record in &evaluation.maps {
        let sub = dir.join("maps").join(&record.id);
        create_dir(&sub)?;
        save_png(image_to_gray(&record.input), &sub.join("input.png"))?;
        save_png(image_to_gray(&record.map.clamp01()), &sub.join("map.png"))?;
        if let Some(cf) = &record.counterfactual {
            save_png(image_to_gray(cf), &sub.join("counterfactual.png"))?;
        }
        save_png(mask_to_gray(&record.prediction), &sub.join("prediction.png"))?;
        if let Some(gt) = &record.ground_truth {
            save_png(mask_to_gray(gt), &sub.join("ground_truth.png"))?;
        }
    }
    Ok(())
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Fixed-width text table; absent FID/CV render as `-`.
pub fn comparison_table(rows: &[MetricsSummary]) -> String {
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(0).max(6);
    let mut out = format!("{:<width$}  {:>8}  {:>6}  {:>6}  {:>9}\n", "method", "FID", "CV", "IoU", "threshold");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>6}  {:>6.3}  {:>9.2}",
            r.method,
            cell(r.fid, 4),
            cell(r.cv, 3),
            r.iou_mean,
            r.best_threshold
        );
    }
    out
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    method: &'a str,
    fid: String,
    cv: String,
    iou: f64,
    best_threshold: f64,
}

/// `comparison.csv` and `comparison.txt` under `dir`.
pub fn write_comparison(dir: &Path, rows: &[MetricsSummary]) -> Result<()> {
    create_dir(dir)?;
    let csv_rows: Vec<ComparisonRow> = rows
        .iter()
        .map(|r| ComparisonRow {
            method: &r.method,
            fid: cell(r.fid, 6),
            cv: cell(r.cv, 6),
            iou: r.iou_mean,
            best_threshold: r.best_threshold,
        })
        .collect();
    write_csv(&dir.join("comparison.csv"), &csv_rows)?;
    let path = dir.join("comparison.txt");
    fs::write(&path, comparison_table(rows)).map_err(|e| Error::io(&path, e))
}

/// Text rendering of an experiment table.
pub fn experiment_table(rows: &[ExperimentRow]) -> String {
    let mut out = format!(
        "{:<6}  {:>5}  {:>5}  {:>5}  {:>5}  {:>8}  {:>6}  {:>6}  {}\n",
        "id", "masks", "pert", "skips", "conds", "FID", "CV", "IoU", "description"
    );
    let tick = |b: bool| if b { "x" } else { "" };
    for r in rows {
        let _ = writeln!(
            out,
            "{:<6}  {:>5}  {:>5}  {:>5}  {:>5}  {:>8.4}  {:>6.3}  {:>6.3}  {}",
            r.id,
            tick(r.uses_masks),
            tick(r.perturbations),
            r.skip_connections,
            r.conditions,
            r.fid,
            r.cv,
            r.iou,
            r.description
        );
    }
    out
}

/// `<name>.csv` and `<name>.txt` under `dir`.
pub fn write_experiment_table(dir: &Path, name: &str, rows: &[ExperimentRow]) -> Result<()> {
    create_dir(dir)?;
    write_csv(&dir.join(format!("{name}.csv")), rows)?;
    let path = dir.join(format!("{name}.txt"));
    fs::write(&path, experiment_table(rows)).map_err(|e| Error::io(&path, e))
}

/// Prediction outcome per pixel over the dimmed input: TP green, FP red, FN yellow.
pub fn outcome_overlay(input: &GrayImage, prediction: &Mask, ground_truth: &Mask) -> Result<RgbImage> {
    let (h, w) = prediction.dims();
    ground_truth.check_same((h, w))?;
    if (input.height() as usize, input.width() as usize) != (h, w) {
        return Err(Error::Shape(format!("overlay input {}x{} vs mask {h}x{w}", input.height(), input.width())));
    }
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        match (prediction.get(r, c), ground_truth.get(r, c)) {
            (true, true) => TP,
            (true, false) => FP,
            (false, true) => FN,
            (false, false) => {
                let v = input.get_pixel(x, y)[0] / 2;
                Rgb([v, v, v])
            }
        }
    }))
}

fn gray_to_rgb(img: &GrayImage) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let v = img.get_pixel(x, y)[0];
        Rgb([v, v, v])
    })
}

/// Side-by-side panel: input, counterfactual or saliency, outcome overlay, ground truth.
pub fn render_panel(input: &GrayImage, shown: &GrayImage, prediction: &Mask, ground_truth: &Mask) -> Result<RgbImage> {
    let tiles = [
        gray_to_rgb(input),
        gray_to_rgb(shown),
        outcome_overlay(input, prediction, ground_truth)?,
        gray_to_rgb(&mask_to_gray(ground_truth)),
    ];
    let (w, h) = (input.width() * PANEL_SCALE, input.height() * PANEL_SCALE);
    let mut panel = RgbImage::new(4 * w + 3 * GAP, h);
    for (i, tile) in tiles.iter().enumerate() {
        let big = imageops::resize(tile, w, h, imageops::FilterType::Nearest);
        imageops::replace(&mut panel, &big, i64::from(i as u32 * (w + GAP)), 0);
    }
    Ok(panel)
}

fn read_gray(path: &Path) -> Result<GrayImage> {
    Ok(decode(path)?.to_luma8())
}

fn read_mask(path: &Path, dims: (u32, u32)) -> Result<Mask> {
    if !path.exists() {
        return Ok(Mask::empty(dims.1 as usize, dims.0 as usize));
    }
    let g = read_gray(path)?;
    Mask::new(g.height() as usize, g.width() as usize, g.into_raw().into_iter().map(|v| v > 127).collect())
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Render one panel per evaluated image for every method directory under `report_dir`
/// (a directory holding `maps/`, or whose subdirectories do). Returns the panel count.
pub fn render_figures(report_dir: &Path, out_dir: &Path) -> Result<usize> {
    if !report_dir.is_dir() {
        return Err(Error::Usage(format!("report directory {} does not exist", report_dir.display())));
    }
    let methods: Vec<PathBuf> = if report_dir.join("maps").is_dir() {
        vec![report_dir.to_owned()]
    } else {
        sorted_subdirs(report_dir)?.into_iter().filter(|d| d.join("maps").is_dir()).collect()
    };
    let mut count = 0;
    for method_dir in methods {
        let name = method_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "method".into());
        let target = out_dir.join(&name);
        create_dir(&target)?;
        for slice_dir in sorted_subdirs(&method_dir.join("maps"))? {
            let input = read_gray(&slice_dir.join("input.png"))?;
            let cf = slice_dir.join("counterfactual.png");
            let shown = read_gray(&if cf.exists() { cf } else { slice_dir.join("map.png") })?;
            let dims = input.dimensions();
            let prediction = read_mask(&slice_dir.join("prediction.png"), dims)?;
            let gt = read_mask(&slice_dir.join("ground_truth.png"), dims)?;
            let panel = render_panel(&input, &shown, &prediction, &gt)?;
            let id = slice_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let path = target.join(format!("{id}.png"));
            panel.save_with_format(&path, image::ImageFormat::Png).map_err(|e| Error::Image { path, message: e.to_string() })?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Usage(format!("no evaluation outputs under {}", report_dir.display())));
    }
    Ok(count)
}
