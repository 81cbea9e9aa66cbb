//! Attribution baselines scored under the same sweep protocol as the
//! counterfactual difference maps.

use autograd::{Tape, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::grid::Image;
use crate::models::{batch_tensor, Classifier, INFERENCE_BATCH};
use crate::{seed, Error, Result};

/// Black-box access to `f(X)` for a batch of images.
pub trait Scorer {
    fn score(&self, images: &[&Image]) -> Result<Vec<f64>>;
}

impl Scorer for Classifier {
    fn score(&self, images: &[&Image]) -> Result<Vec<f64>> {
        self.classify(images)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiseConfig {
    pub n_masks: usize,
    pub cell_grid: usize,
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for RiseConfig {
    fn default() -> Self {
        Self { n_masks: 1000, cell_grid: 7, keep_prob: 0.5, seed: 0 }
    }
}

impl RiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_masks == 0 {
            return Err(Error::config("rise.n_masks", "must be at least 1"));
        }
        if self.cell_grid == 0 {
            return Err(Error::config("rise.cell_grid", "must be at least 1"));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob < 1.0) {
            return Err(Error::config("rise.keep_prob", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamConfig {
    /// Residual stage index; `None` selects the deepest stage.
    pub target_layer: Option<usize>,
}

/// Compensated (Neumaier) running sum, so the result does not depend on rounding order.
#[derive(Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// One RISE mask: a random binary cell grid, bilinearly upsampled to
/// `(grid + 1)·cell` pixels and cropped at a random sub-cell shift.
pub fn rise_mask(height: usize, width: usize, config: &RiseConfig, index: usize) -> Image {
    let mut rng = seed::rng(seed::derive_index(seed::derive(config.seed, "rise"), index as u64));
    let s = config.cell_grid;
    let cell_h = height.div_ceil(s);
    let cell_w = width.div_ceil(s);
    let cells: Vec<f64> = (0..s * s).map(|_| f64::from(u8::from(rng.gen::<f64>() < config.keep_prob))).collect();
    let grid = Image::new(s, s, cells).expect("grid");
    let up = grid.resize_bilinear((s + 1) * cell_h, (s + 1) * cell_w);
    let (dy, dx) = (rng.gen_range(0..cell_h), rng.gen_range(0..cell_w));
    Image::from_fn(height, width, |r, c| up.get(r + dy, c + dx))
}

/// Score-weighted average of random masks, normalised by `n_masks · keep_prob`.
pub fn rise_saliency(scorer: &dyn Scorer, x: &Image, config: &RiseConfig) -> Result<Image> {
    config.validate()?;
    let (h, w) = x.dims();
    let mut acc = vec![Neumaier::default(); h * w];
    let mut start = 0;
    while start < config.n_masks {
        let end = (start + INFERENCE_BATCH).min(config.n_masks);
        let masks: Vec<Image> = (start..end).map(|i| rise_mask(h, w, config, i)).collect();
        let masked = masks.iter().map(|m| x.zip_map(m, |a, b| a * b)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = masked.iter().collect();
        let scores = scorer.score(&refs)?;
        for (m, p) in masks.iter().zip(scores) {
            for (a, &v) in acc.iter_mut().zip(m.data()) {
                a.add(p * v);
            }
        }
        start = end;
    }
    let norm = config.n_masks as f64 * config.keep_prob;
    Image::new(h, w, acc.into_iter().map(|a| a.value() / norm).collect())
}

/// Target-stage activations (and optionally their logit gradients) as per-channel maps.
fn stage_maps(classifier: &Classifier, x: &Image, config: &CamConfig, with_grad: bool) -> Result<(Vec<Image>, Vec<Image>)> {
    let depth = classifier.spec().depth;
    let layer = config.target_layer.unwrap_or(depth - 1);
    if layer >= depth {
        return Err(Error::config("cam.target_layer", format!("stage {layer} does not exist (depth {depth})")));
    }
    let tape = Tape::new();
    let p = classifier.params().bind(&tape, false);
    let input = batch_tensor::<f32>(&[x])?;
    let xv = if with_grad { tape.leaf(input) } else { tape.constant(input) };
    let out = classifier.forward(&p, xv);
    let act = out.stages[layer];
    let split = |t: &Tensor<f32>| -> Vec<Image> {
        let (_, c, h, w) = t.dims4();
        (0..c)
            .map(|k| {
                let px = &t.data()[k * h * w..(k + 1) * h * w];
                Image::new(h, w, px.iter().map(|&v| f64::from(v)).collect()).expect("sized")
            })
            .collect()
    };
    let acts = split(&act.value());
    if acts.first().is_none_or(|a| a.height() < 1 || a.width() < 1) {
        return Err(Error::config("cam.target_layer", "layer has no spatial extent"));
    }
    let grads = if with_grad {
        let g = tape.backward(out.logit.sum_all());
        split(&g.get_or_zeros(act))
    } else {
        Vec::new()
    };
    Ok((acts, grads))
}

/// Score-CAM from per-channel activation maps: each normalised, upsampled map masks
/// the input, its weight is the score gain over an all-zero image, and the result is
/// the rectified weighted sum of the normalised maps.
pub fn scorecam_from_activations(scorer: &dyn Scorer, x: &Image, activations: &[Image]) -> Result<Image> {
    let (h, w) = x.dims();
    let baseline = scorer.score(&[&Image::zeros(h, w)])?[0];
    let maps: Vec<Image> = activations.iter().map(|a| a.resize_bilinear(h, w).min_max_normalized()).collect();
    let mut sal = Image::zeros(h, w);
    for chunk in maps.chunks(INFERENCE_BATCH) {
        let masked = chunk.iter().map(|m| x.zip_map(m, |a, b| a * b)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Image> = masked.iter().collect();
        for (m, score) in chunk.iter().zip(scorer.score(&refs)?) {
            let weight = score - baseline;
            sal = sal.zip_map(m, |s, v| s + weight * v)?;
        }
    }
    Ok(sal.map(|v| v.max(0.0)))
}

pub fn scorecam_saliency(classifier: &Classifier, x: &Image, config: &CamConfig) -> Result<Image> {
    let (acts, _) = stage_maps(classifier, x, config, false)?;
    scorecam_from_activations(classifier, x, &acts)
}

/// Layer-CAM from activations and gradients: `ReLU(Σ_c ReLU(∂y/∂A_c) ⊙ A_c)`, upsampled.
pub fn layercam_from_gradients(activations: &[Image], gradients: &[Image], height: usize, width: usize) -> Result<Image> {
    let first = activations.first().ok_or_else(|| Error::Shape("layercam: no channels".into()))?;
    if gradients.len() != activations.len() {
        return Err(Error::Shape("layercam: activation/gradient channel mismatch".into()));
    }
    let mut cam = Image::zeros(first.height(), first.width());
    for (a, g) in activations.iter().zip(gradients) {
        let term = a.zip_map(g, |av, gv| av * gv.max(0.0))?;
        cam = cam.zip_map(&term, |x, y| x + y)?;
    }
    Ok(cam.map(|v| v.max(0.0)).resize_bilinear(height, width).map(|v| v.max(0.0)))
}

pub fn layercam_saliency(classifier: &Classifier, x: &Image, config: &CamConfig) -> Result<Image> {
    let (acts, grads) = stage_maps(classifier, x, config, true)?;
    layercam_from_gradients(&acts, &grads, x.height(), x.width())
}
