//! Counterfactual inference and conversion of difference maps into masks.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::grid::{Image, Mask};
use crate::metrics::iou;
use crate::models::{Classifier, Generator};
use crate::{Error, Result};

pub const SWEEP_STEPS: usize = 101;

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualResult {
    pub id: String,
    pub input: Image,
    pub counterfactual: Image,
    pub p_x: f64,
    pub p_cf: f64,
    /// `|X − X_cf|`.
    pub diff: Image,
}

/// Run the explainer and record both classifier probabilities.
///
/// Two-condition generators are conditioned on the flipped predicted class
/// (`1 − ŷ`); single-condition generators take no condition.
pub fn counterfactuals(
    generator: &Generator,
    classifier: &Classifier,
    items: &[(&str, &Image)],
) -> Result<Vec<CounterfactualResult>> {
    let images: Vec<&Image> = items.iter().map(|(_, img)| *img).collect();
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let p_x = classifier.classify(&images)?;
    let condition: Option<Vec<usize>> = (generator.spec().n_conditions == 2)
        .then(|| p_x.iter().map(|&p| usize::from(!classifier.is_abnormal(p))).collect());
    let cfs = generator.explain(&images, condition.as_deref())?;
    let cf_refs: Vec<&Image> = cfs.iter().collect();
    let p_cf = classifier.classify(&cf_refs)?;
    items
        .iter()
        .zip(cfs)
        .enumerate()
        .map(|(i, ((id, x), cf))| {
            let diff = x.zip_map(&cf, |a, b| (a - b).abs())?;
            Ok(CounterfactualResult {
                id: (*id).to_owned(),
                input: (*x).clone(),
                counterfactual: cf,
                p_x: p_x[i],
                p_cf: p_cf[i],
                diff,
            })
        })
        .collect()
}

pub fn counterfactual(generator: &Generator, classifier: &Classifier, x: &Image) -> Result<CounterfactualResult> {
    Ok(counterfactuals(generator, classifier, &[("", x)])?.remove(0))
}

/// Strict threshold: `diff > threshold`.
pub fn diff_to_mask(diff: &Image, threshold: f64) -> Mask {
    diff.threshold(threshold)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskPostprocessConfig {
    pub threshold: f64,
    /// Side of the square structuring element; 1 disables morphology.
    pub morph_kernel: usize,
    pub keep_largest: bool,
}

impl Default for MaskPostprocessConfig {
    fn default() -> Self {
        Self { threshold: 0.5, morph_kernel: 3, keep_largest: true }
    }
}

impl MaskPostprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::config("postprocess.threshold", "must lie in [0, 1]"));
        }
        if self.morph_kernel == 0 || self.morph_kernel % 2 == 0 {
            return Err(Error::config("postprocess.morph_kernel", "must be odd and at least 1"));
        }
        Ok(())
    }
}

/// Separable square dilation; pixels outside the image count as background.
pub fn dilate(mask: &Mask, kernel: usize) -> Mask {
    morph(mask, kernel, false)
}

/// Separable square erosion; pixels outside the image count as foreground, which
/// makes erosion the adjoint of [`dilate`] (closing is extensive, opening anti-extensive).
pub fn erode(mask: &Mask, kernel: usize) -> Mask {
    morph(mask, kernel, true)
}

fn morph(mask: &Mask, kernel: usize, erode: bool) -> Mask {
    let r = kernel / 2;
    if r == 0 {
        return mask.clone();
    }
    let (h, w) = mask.dims();
    let pass = |src: &Mask, horizontal: bool| {
        Mask::from_fn(h, w, |y, x| {
            let (pos, len) = if horizontal { (x, w) } else { (y, h) };
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(len - 1);
            let mut vals = (lo..=hi).map(|k| if horizontal { src.get(y, k) } else { src.get(k, x) });
            if erode {
                vals.all(|v| v)
            } else {
                vals.any(|v| v)
            }
        })
    };
    pass(&pass(mask, true), false)
}

/// Keep the largest 4-connected component; ties go to the component whose
/// first pixel in raster order comes first.
pub fn largest_component(mask: &Mask) -> Mask {
    let (h, w) = mask.dims();
    let mut seen = vec![false; h * w];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || !mask.data()[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut component = Vec::new();
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if !seen[j] && mask.data()[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        if component.len() > best.len() {
            best = component;
        }
    }
    let mut out = Mask::empty(h, w);
    for i in best {
        out.set(i / w, i % w, true);
    }
    out
}

/// Closing, then opening, then (optionally) the largest component.
pub fn postprocess_mask(mask: &Mask, kernel: usize, keep_largest: bool) -> Mask {
    let closed = erode(&dilate(mask, kernel), kernel);
    let opened = dilate(&erode(&closed, kernel), kernel);
    if keep_largest {
        largest_component(&opened)
    } else {
        opened
    }
}

/// Threshold then postprocess per `config`.
pub fn extract_mask(diff: &Image, config: &MaskPostprocessConfig) -> Mask {
    postprocess_mask(&diff_to_mask(diff, config.threshold), config.morph_kernel, config.keep_largest)
}

pub fn default_grid() -> Vec<f64> {
    (0..SWEEP_STEPS).map(|i| i as f64 / (SWEEP_STEPS - 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub best_threshold: f64,
    pub best_iou: f64,
    /// `(threshold, mean IoU)` for every grid value.
    pub curve: Vec<(f64, f64)>,
    /// IoU of each eligible map at the best threshold, in input order.
    pub per_image_iou: Vec<f64>,
}

/// Mean IoU over maps with nonempty ground truth for each grid threshold.
/// `postprocess` applies [`postprocess_mask`] with the given settings after thresholding.
pub fn threshold_sweep(
    maps: &[&Image],
    ground_truth: &[&Mask],
    grid: &[f64],
    postprocess: Option<(usize, bool)>,
) -> Result<SweepResult> {
    if maps.len() != ground_truth.len() {
        return Err(Error::Shape(format!("{} maps vs {} masks", maps.len(), ground_truth.len())));
    }
    if grid.is_empty() {
        return Err(Error::config("sweep grid", "must contain at least one threshold"));
    }
    let eligible: Vec<usize> = (0..maps.len()).filter(|&i| !ground_truth[i].is_empty()).collect();
    if eligible.is_empty() {
        return Err(Error::Data("threshold sweep: no slices with a nonempty ground-truth mask".into()));
    }
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for &t in grid {
        let ious = eligible
            .iter()
            .map(|&i| {
                let raw = diff_to_mask(maps[i], t);
                let mask = match postprocess {
                    Some((k, largest)) => postprocess_mask(&raw, k, largest),
                    None => raw,
                };
                iou(&mask, ground_truth[i])
            })
            .collect::<Result<Vec<f64>>>()?;
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        curve.push((t, mean));
        if best.as_ref().is_none_or(|(_, b, _)| mean > *b) {
            best = Some((t, mean, ious));
        }
    }
    let (best_threshold, best_iou, per_image_iou) = best.expect("nonempty grid");
    Ok(SweepResult { best_threshold, best_iou, curve, per_image_iou })
}
