use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

use super::dataset::{stratified_split, Dataset, DatasetSplit, ScanSlice, VAL_FRACTION};
use crate::grid::{Image, Mask};
use crate::{Error, Result};

const IMAGES: &str = "images";
const ORGAN_MASKS: &str = "organ_masks";
const ANOMALY_MASKS: &str = "anomaly_masks";
const LABELS: &str = "labels.csv";
const SPLIT: &str = "split.json";

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: String,
    label: u8,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    train: Vec<String>,
    val: Vec<String>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn save_png(img: GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_owned(), message: e.to_string() })
}

pub fn image_to_gray(img: &Image) -> GrayImage {
    let (h, w) = img.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([(img.get(y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn mask_to_gray(mask: &Mask) -> GrayImage {
    let (h, w) = mask.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]))
}

/// Write the dataset directory layout: PNGs, `labels.csv` and `split.json`.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    for sub in [IMAGES, ORGAN_MASKS, ANOMALY_MASKS] {
        create_dir(&dir.join(sub))?;
    }
    let labels_path = dir.join(LABELS);
    let mut labels = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    for s in &dataset.slices {
        let name = format!("{}.png", s.id);
        save_png(image_to_gray(&s.image), &dir.join(IMAGES).join(&name))?;
        save_png(mask_to_gray(&s.organ_mask), &dir.join(ORGAN_MASKS).join(&name))?;
        if let Some(m) = &s.anomaly_mask {
            save_png(mask_to_gray(m), &dir.join(ANOMALY_MASKS).join(&name))?;
        }
        labels.serialize(LabelRow { id: s.id.clone(), label: s.label }).map_err(|e| csv_error(&labels_path, e))?;
    }
    labels.flush().map_err(|e| Error::io(&labels_path, e))?;
    write_split(dir, &dataset.split)
}

fn write_split(dir: &Path, split: &DatasetSplit) -> Result<()> {
    let path = dir.join(SPLIT);
    let body = serde_json::to_string_pretty(&SplitFile { train: split.train.clone(), val: split.val.clone() })
        .expect("split serializes");
    fs::write(&path, body + "\n").map_err(|e| Error::io(&path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn read_labels(dir: &Path) -> Result<BTreeMap<String, u8>> {
    let path = dir.join(LABELS);
    let mut reader = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    let mut labels = BTreeMap::new();
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| csv_error(&path, e))?;
        if row.label > 1 {
            return Err(Error::Data(format!("{}: label {} is not binary", row.id, row.label)));
        }
        labels.insert(row.id, row.label);
    }
    Ok(labels)
}

pub(crate) fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::Image { path: path.to_owned(), message: e.to_string() })
}

fn read_image(path: &Path, size: Option<usize>) -> Result<Image> {
    let gray = decode(path)?.to_luma32f();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let img = Image::new(h, w, gray.into_raw().into_iter().map(|v| f64::from(v).clamp(0.0, 1.0)).collect())?;
    Ok(match size {
        Some(s) if (h, w) != (s, s) => img.resize_bilinear(s, s).clamp01(),
        _ => img,
    })
}

fn read_mask(path: &Path, dims: (usize, usize)) -> Result<Mask> {
    let gray = decode(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mask = Mask::new(h, w, gray.into_raw().into_iter().map(|v| v > 127).collect())?;
    Ok(if (h, w) == dims { mask } else { mask.resize_nearest(dims.0, dims.1) })
}

fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_owned(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Read `images/` plus `labels.csv`, optionally with `anomaly_masks/` and `organ_masks/`.
/// Images are rescaled to `[0, 1]` and, when `size` is given, resized bilinearly to `size×size`.
/// Slices without an anomaly-mask file carry `anomaly_mask = None`; missing organ masks
/// default to the whole image.
pub fn load_image_folder(dir: &Path, with_masks: bool, size: Option<usize>) -> Result<Vec<ScanSlice>> {
    let labels = read_labels(dir)?;
    let mut slices = Vec::new();
    for (id, path) in list_images(&dir.join(IMAGES))? {
        let label = *labels.get(&id).ok_or_else(|| Error::Data(format!("no label row for id {id}")))?;
        let image = read_image(&path, size)?;
        let dims = image.dims();
        if let Some(first) = slices.first().map(|s: &ScanSlice| s.image.dims()) {
            if first != dims {
                return Err(Error::Shape(format!("{id}: {dims:?} differs from {first:?}; pass a target size")));
            }
        }
        let lookup = |sub: &str| {
            let p = dir.join(sub).join(format!("{id}.png"));
            p.is_file().then_some(p)
        };
        let organ_mask = match with_masks.then(|| lookup(ORGAN_MASKS)).flatten() {
            Some(p) => read_mask(&p, dims)?,
            None => Mask::full(dims.0, dims.1),
        };
        let anomaly_mask = match with_masks.then(|| lookup(ANOMALY_MASKS)).flatten() {
            Some(p) => Some(read_mask(&p, dims)?),
            None => None,
        };
        let slice = ScanSlice { id, image, organ_mask, anomaly_mask, label };
        slice.check_consistency()?;
        slices.push(slice);
    }
    Ok(slices)
}

pub fn read_split(dir: &Path) -> Result<Option<DatasetSplit>> {
    let path = dir.join(SPLIT);
    if !path.is_file() {
        return Ok(None);
    }
    let body = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let file: SplitFile =
        serde_json::from_str(&body).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(DatasetSplit { train: file.train, val: file.val, stratification_key: BTreeMap::new() }))
}

/// Load a dataset directory; a missing `split.json` is replaced by a fresh stratified split.
pub fn load_dataset_dir(dir: &Path, size: Option<usize>, split_seed: u64) -> Result<Dataset> {
    let slices = load_image_folder(dir, true, size)?;
    let keys: Vec<(String, usize)> = slices.iter().map(|s| (s.id.clone(), s.anomaly_area())).collect();
    let split = match read_split(dir)? {
        Some(mut split) => {
            split.stratification_key = keys.into_iter().collect();
            split
        }
        None => stratified_split(&keys, VAL_FRACTION, split_seed),
    };
    Dataset::new(slices, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_dataset, PhantomConfig};

    fn write_labels(dir: &Path, rows: &[(&str, u8)]) {
        let mut body = String::from("id,label\n");
        for (id, l) in rows {
            body += &format!("{id},{l}\n");
        }
        fs::write(dir.join(LABELS), body).unwrap();
    }

    #[test]
    fn folder_without_masks_has_no_iou_eligible_slices() {
        let dir = tempfile::tempdir().unwrap();
        create_dir(&dir.path().join(IMAGES)).unwrap();
        let mut rows = Vec::new();
        let ids: Vec<String> = (0..10).map(|i| format!("img{i}")).collect();
        for (i, id) in ids.iter().enumerate() {
            let img = Image::from_fn(20, 20, |r, c| ((r + c + i) % 7) as f64 / 6.0);
            save_png(image_to_gray(&img), &dir.path().join(IMAGES).join(format!("{id}.png"))).unwrap();
            rows.push((id.as_str(), (i % 2) as u8));
        }
        write_labels(dir.path(), &rows);
        let slices = load_image_folder(dir.path(), false, Some(16)).unwrap();
        assert_eq!(slices.len(), 10);
        assert_eq!(slices.iter().filter(|s| s.is_iou_eligible()).count(), 0);
    }

    #[test]
    fn large_inputs_are_resized_into_range() {
        let dir = tempfile::tempdir().unwrap();
        create_dir(&dir.path().join(IMAGES)).unwrap();
        let img = Image::from_fn(256, 256, |r, c| ((r * 256 + c) % 251) as f64 / 250.0);
        save_png(image_to_gray(&img), &dir.path().join(IMAGES).join("big.png")).unwrap();
        write_labels(dir.path(), &[("big", 0)]);
        let slices = load_image_folder(dir.path(), false, Some(64)).unwrap();
        assert_eq!(slices[0].image.dims(), (64, 64));
        assert!(slices[0].image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mask_with_normal_label_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for sub in [IMAGES, ANOMALY_MASKS] {
            create_dir(&dir.path().join(sub)).unwrap();
        }
        save_png(image_to_gray(&Image::zeros(16, 16)), &dir.path().join(IMAGES).join("a.png")).unwrap();
        let mask = Mask::from_fn(16, 16, |r, c| r < 4 && c < 4);
        save_png(mask_to_gray(&mask), &dir.path().join(ANOMALY_MASKS).join("a.png")).unwrap();
        write_labels(dir.path(), &[("a", 0)]);
        let err = load_image_folder(dir.path(), true, None).unwrap_err();
        assert!(err.to_string().contains("label is 0"), "{err}");
    }

    #[test]
    fn missing_label_names_the_id() {
        let dir = tempfile::tempdir().unwrap();
        create_dir(&dir.path().join(IMAGES)).unwrap();
        save_png(image_to_gray(&Image::zeros(16, 16)), &dir.path().join(IMAGES).join("orphan.png")).unwrap();
        write_labels(dir.path(), &[]);
        let err = load_image_folder(dir.path(), false, None).unwrap_err();
        assert!(err.to_string().contains("orphan"));
    }

    #[test]
    fn unreadable_image_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        create_dir(&dir.path().join(IMAGES)).unwrap();
        fs::write(dir.path().join(IMAGES).join("bad.png"), b"not a png").unwrap();
        write_labels(dir.path(), &[("bad", 0)]);
        assert!(matches!(load_image_folder(dir.path(), false, None), Err(Error::Image { .. })));
    }

    #[test]
    fn dataset_round_trip_and_byte_identical_rewrite() {
        let config = PhantomConfig { n_slices: 12, seed: 3, ..PhantomConfig::default() };
        let ds = build_dataset(&config).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_dataset(a.path(), &ds).unwrap();
        write_dataset(b.path(), &build_dataset(&config).unwrap()).unwrap();
        for (id, path) in list_images(&a.path().join(IMAGES)).unwrap() {
            let other = b.path().join(IMAGES).join(format!("{id}.png"));
            assert_eq!(fs::read(&path).unwrap(), fs::read(other).unwrap());
        }
        assert_eq!(fs::read(a.path().join(LABELS)).unwrap(), fs::read(b.path().join(LABELS)).unwrap());

        let loaded = load_dataset_dir(a.path(), None, 0).unwrap();
        assert_eq!(loaded.split.train, ds.split.train);
        assert_eq!(loaded.split.val, ds.split.val);
        for (x, y) in loaded.slices.iter().zip(&ds.slices) {
            assert_eq!(x.id, y.id);
            assert_eq!(x.label, y.label);
            assert_eq!(x.anomaly_mask, y.anomaly_mask);
            assert_eq!(x.organ_mask, y.organ_mask);
            assert!(x.image.data().iter().zip(y.image.data()).all(|(p, q)| (p - q).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}
