use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::phantom::{generate_phantom_background, inject_anomaly, PhantomConfig};
use crate::grid::{Image, Mask};
use crate::{seed, Error, Result};

/// Equal-count anomaly-area bins used for stratification (normal slices form an extra stratum).
const AREA_BINS: usize = 5;
pub const VAL_FRACTION: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSlice {
    pub id: String,
    /// Intensities in `[0, 1]`.
    pub image: Image,
    pub organ_mask: Mask,
    /// `None` when the source carries no pixel annotation.
    pub anomaly_mask: Option<Mask>,
    /// 1 = abnormal.
    pub label: u8,
}

impl ScanSlice {
    pub fn normal(id: impl Into<String>, image: Image, organ_mask: Mask) -> Self {
        let (h, w) = image.dims();
        Self { id: id.into(), image, organ_mask, anomaly_mask: Some(Mask::empty(h, w)), label: 0 }
    }

    pub fn is_abnormal(&self) -> bool {
        self.label == 1
    }

    pub fn anomaly_area(&self) -> usize {
        self.anomaly_mask.as_ref().map_or(0, Mask::area)
    }

    /// Abnormal slice with a usable ground-truth mask.
    pub fn is_iou_eligible(&self) -> bool {
        self.is_abnormal() && self.anomaly_mask.as_ref().is_some_and(|m| !m.is_empty())
    }

    /// Label must agree with the annotation whenever one is present.
    pub fn check_consistency(&self) -> Result<()> {
        if self.label > 1 {
            return Err(Error::Data(format!("{}: label {} is not binary", self.id, self.label)));
        }
        match &self.anomaly_mask {
            Some(m) if !m.is_empty() && self.label == 0 => {
                Err(Error::Data(format!("{}: anomaly mask present but label is 0", self.id)))
            }
            Some(m) if m.is_empty() && self.label == 1 => {
                Err(Error::Data(format!("{}: label is 1 but the anomaly mask is empty", self.id)))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    /// Anomaly area in pixels per id.
    pub stratification_key: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub slices: Vec<ScanSlice>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn new(slices: Vec<ScanSlice>, split: DatasetSplit) -> Result<Self> {
        let ids: BTreeMap<&str, ()> = slices.iter().map(|s| (s.id.as_str(), ())).collect();
        if ids.len() != slices.len() {
            return Err(Error::Data("duplicate slice ids".into()));
        }
        for id in split.train.iter().chain(&split.val) {
            if !ids.contains_key(id.as_str()) {
                return Err(Error::Data(format!("split references unknown id {id}")));
            }
        }
        Ok(Self { slices, split })
    }

    pub fn get(&self, id: &str) -> Option<&ScanSlice> {
        self.slices.iter().find(|s| s.id == id)
    }

    fn subset(&self, ids: &[String]) -> Vec<&ScanSlice> {
        let index: BTreeMap<&str, &ScanSlice> = self.slices.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter().filter_map(|id| index.get(id.as_str()).copied()).collect()
    }

    pub fn train(&self) -> Vec<&ScanSlice> {
        self.subset(&self.split.train)
    }

    pub fn val(&self) -> Vec<&ScanSlice> {
        self.subset(&self.split.val)
    }

    pub fn image_size(&self) -> Option<usize> {
        self.slices.first().map(|s| s.image.height())
    }
}

pub fn slice_id(index: usize) -> String {
    format!("slice_{index:05}")
}

/// Generate one slice; a pure function of the config, the run seed and the index.
fn generate_slice(config: &PhantomConfig, index: usize, abnormal: bool) -> Result<ScanSlice> {
    let s = seed::derive_index(seed::derive(config.seed, "slice"), index as u64);
    let (image, organ) = generate_phantom_background(config, s)?;
    let mut slice = if abnormal {
        inject_anomaly(&image, &organ, config, seed::derive(s, "anomaly"))?
    } else {
        ScanSlice::normal("", image, organ)
    };
    slice.id = slice_id(index);
    Ok(slice)
}

pub fn build_dataset(config: &PhantomConfig) -> Result<Dataset> {
    config.validate()?;
    let n = config.n_slices;
    let n_abnormal = (config.abnormal_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed::derive(config.seed, "labels")));
    let mut abnormal = vec![false; n];
    for &i in &order[..n_abnormal] {
        abnormal[i] = true;
    }
    let slices = (0..n).map(|i| generate_slice(config, i, abnormal[i])).collect::<Result<Vec<_>>>()?;
    let keys: Vec<(String, usize)> = slices.iter().map(|s| (s.id.clone(), s.anomaly_area())).collect();
    let split = stratified_split(&keys, VAL_FRACTION, seed::derive(config.seed, "split"));
    Dataset::new(slices, split)
}

/// Split `(id, anomaly_area)` items so the validation set holds `round(val_fraction·n)` items
/// spread proportionally over strata: area 0, then equal-count bins of increasing area.
pub fn stratified_split(items: &[(String, usize)], val_fraction: f64, seed: u64) -> DatasetSplit {
    let mut abnormal: Vec<&(String, usize)> = items.iter().filter(|(_, a)| *a > 0).collect();
    abnormal.sort_by(|x, y| x.1.cmp(&y.1).then_with(|| x.0.cmp(&y.0)));
    let mut normal: Vec<&(String, usize)> = items.iter().filter(|(_, a)| *a == 0).collect();
    normal.sort_by(|x, y| x.0.cmp(&y.0));

    let mut strata: Vec<Vec<&String>> = vec![normal.iter().map(|(id, _)| id).collect()];
    let bins = AREA_BINS.min(abnormal.len()).max(1);
    for b in 0..bins {
        let (lo, hi) = (b * abnormal.len() / bins, (b + 1) * abnormal.len() / bins);
        strata.push(abnormal[lo..hi].iter().map(|(id, _)| id).collect());
    }

    // Largest-remainder apportionment of the validation quota.
    let total_val = (val_fraction * items.len() as f64).round() as usize;
    let exact: Vec<f64> = strata.iter().map(|s| s.len() as f64 * val_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut rest: Vec<usize> = (0..strata.len()).collect();
    rest.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = total_val.saturating_sub(quota.iter().sum());
    for &i in rest.iter().cycle().take(strata.len() * 2) {
        if missing == 0 {
            break;
        }
        if quota[i] < strata[i].len() {
            quota[i] += 1;
            missing -= 1;
        }
    }

    let mut rng = seed::rng(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (stratum, q) in strata.iter().zip(quota) {
        let mut ids: Vec<String> = stratum.iter().map(|s| (*s).clone()).collect();
        ids.shuffle(&mut rng);
        val.extend(ids.drain(..q));
        train.extend(ids);
    }
    train.sort();
    val.sort();
    DatasetSplit { train, val, stratification_key: items.iter().cloned().collect() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, frac: f64) -> PhantomConfig {
        PhantomConfig { n_slices: n, abnormal_fraction: frac, seed: 42, ..PhantomConfig::default() }
    }

    #[test]
    fn counts_and_split_sizes() {
        let ds = build_dataset(&cfg(100, 0.5)).unwrap();
        assert_eq!(ds.slices.len(), 100);
        assert_eq!(ds.slices.iter().filter(|s| s.label == 1).count(), 50);
        assert_eq!(ds.split.train.len(), 80);
        assert_eq!(ds.split.val.len(), 20);
        for s in &ds.slices {
            s.check_consistency().unwrap();
        }
    }

    #[test]
    fn zero_fraction_gives_only_normals() {
        let ds = build_dataset(&cfg(20, 0.0)).unwrap();
        assert!(ds.slices.iter().all(|s| s.label == 0 && s.anomaly_area() == 0));
    }

    #[test]
    fn builds_are_deterministic() {
        let a = build_dataset(&cfg(30, 0.5)).unwrap();
        let b = build_dataset(&cfg(30, 0.5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_partitions_ids() {
        let ds = build_dataset(&cfg(50, 0.5)).unwrap();
        let mut all: Vec<String> = ds.split.train.iter().chain(&ds.split.val).cloned().collect();
        all.sort();
        let mut ids: Vec<String> = ds.slices.iter().map(|s| s.id.clone()).collect();
        ids.sort();
        assert_eq!(all, ids);
    }

    #[test]
    fn val_areas_cover_every_bin() {
        let items: Vec<(String, usize)> =
            (0..200).map(|i| (format!("s{i:03}"), if i % 2 == 0 { 0 } else { 10 + i })).collect();
        let split = stratified_split(&items, 0.2, 1);
        assert_eq!(split.val.len(), 40);
        let val_normals = split.val.iter().filter(|id| split.stratification_key[*id] == 0).count();
        assert_eq!(val_normals, 20);
        // Each of the five area bins (20 abnormal items each) contributes four validation items.
        let mut areas: Vec<usize> = split.val.iter().map(|id| split.stratification_key[id]).filter(|&a| a > 0).collect();
        areas.sort();
        for (b, chunk) in areas.chunks(4).enumerate() {
            assert!(chunk.iter().all(|&a| (10 + 40 * b..10 + 40 * (b + 1)).contains(&a)), "{chunk:?}");
        }
    }

    #[test]
    fn consistency_check() {
        let img = Image::zeros(4, 4);
        let mut s = ScanSlice::normal("x", img, Mask::full(4, 4));
        assert!(s.check_consistency().is_ok());
        s.anomaly_mask = Some(Mask::full(4, 4));
        assert!(s.check_consistency().is_err());
        s.anomaly_mask = None;
        s.label = 1;
        assert!(s.check_consistency().is_ok());
        assert!(!s.is_iou_eligible());
    }
}
