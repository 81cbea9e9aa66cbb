use autograd::{Float, Tape, Var};
use serde::{Deserialize, Serialize};

use super::params::{Conv, Linear, ParamSet};
use super::{batch_tensor, check_input_size, INFERENCE_BATCH};
use crate::grid::Image;
use crate::{seed, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSpec {
    pub input_size: usize,
    pub base_channels: usize,
    /// Residual downsampling stages.
    pub depth: usize,
    /// `f(X) ≥ threshold_t` means abnormal.
    pub threshold_t: f64,
    pub feature_dim: usize,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        Self { input_size: 64, base_channels: 8, depth: 3, threshold_t: 0.5, feature_dim: 32 }
    }
}

impl ClassifierSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::config("classifier.depth", "must be at least 2"));
        }
        if !(self.threshold_t > 0.0 && self.threshold_t < 1.0) {
            return Err(Error::config("classifier.threshold_t", "must lie in (0, 1)"));
        }
        if self.base_channels == 0 || self.feature_dim == 0 {
            return Err(Error::config("classifier.base_channels", "channel counts must be positive"));
        }
        if self.input_size == 0 || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::config("classifier.input_size", "must be a positive multiple of 2^depth"));
        }
        Ok(())
    }

    pub fn stage_channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    shortcut: Conv,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: Conv,
    blocks: Vec<ResBlock>,
    fc: Linear,
    head: Linear,
}

/// Small residual CNN: stem, `depth` stride-2 residual blocks, global average
/// pooling, a ReLU feature layer and a single-logit head.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T = f32> {
    spec: ClassifierSpec,
    params: ParamSet<T>,
    layout: Layout,
}

pub struct ClassifierOutput<'t, T> {
    /// `[N, 1]`.
    pub logit: Var<'t, T>,
    /// Penultimate activations, `[N, feature_dim]`.
    pub features: Var<'t, T>,
    /// Output of each residual stage, `[N, C_i, H/2^(i+1), W/2^(i+1)]`.
    pub stages: Vec<Var<'t, T>>,
}

impl<T: Float> Classifier<T> {
    pub fn new(spec: ClassifierSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut p = ParamSet::default();
        let b = spec.base_channels;
        let stem = Conv::new(&mut p, "stem", (1, b, 3, 1), false, &mut rng);
        let mut blocks = Vec::with_capacity(spec.depth);
        let mut c_in = b;
        for i in 0..spec.depth {
            let c = spec.stage_channels(i);
            let name = format!("stage{i}");
            blocks.push(ResBlock {
                conv1: Conv::new(&mut p, &format!("{name}.conv1"), (c_in, c, 3, 2), false, &mut rng),
                conv2: Conv::new(&mut p, &format!("{name}.conv2"), (c, c, 3, 1), false, &mut rng),
                shortcut: Conv::new(&mut p, &format!("{name}.shortcut"), (c_in, c, 1, 2), false, &mut rng),
            });
            c_in = c;
        }
        let fc = Linear::new(&mut p, "fc", (c_in, spec.feature_dim), true, &mut rng);
        let head = Linear::new(&mut p, "head", (spec.feature_dim, 1), true, &mut rng);
        Ok(Self { spec, params: p, layout: Layout { stem, blocks, fc, head } })
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn cast<U: Float>(&self) -> Classifier<U> {
        Classifier { spec: self.spec.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// Forward pass on an `[N, 1, H, W]` model-range batch with bound parameters.
    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>) -> ClassifierOutput<'t, T> {
        let l = &self.layout;
        let mut h = l.stem.apply(p, x).relu();
        let mut stages = Vec::with_capacity(l.blocks.len());
        for block in &l.blocks {
            let y = block.conv1.apply(p, h).relu();
            let y = block.conv2.apply(p, y);
            h = y.add(block.shortcut.apply(p, h)).relu();
            stages.push(h);
        }
        let features = l.fc.apply(p, h.global_avg_pool()).relu();
        let logit = l.head.apply(p, features);
        ClassifierOutput { logit, features, stages }
    }

    /// Run a frozen forward pass over `images` in chunks and collect per-image rows of `pick(output)`.
    fn infer(&self, images: &[&Image], pick: impl Fn(&ClassifierOutput<'_, T>) -> Vec<f64>) -> Result<Vec<Vec<f64>>> {
        check_input_size(images, self.spec.input_size)?;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(INFERENCE_BATCH) {
            let tape = Tape::new();
            let p = self.params.bind(&tape, false);
            let x = tape.constant(batch_tensor(chunk)?);
            let values = pick(&self.forward(&p, x));
            let width = values.len() / chunk.len();
            out.extend(values.chunks(width).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn logits(&self, images: &[&Image]) -> Result<Vec<f64>> {
        Ok(self.infer(images, |o| to_f64(&o.logit))?.into_iter().map(|r| r[0]).collect())
    }

    /// `f(X)` for each image, in input order.
    pub fn classify(&self, images: &[&Image]) -> Result<Vec<f64>> {
        Ok(self.logits(images)?.into_iter().map(sigmoid).collect())
    }

    pub fn classify_one(&self, image: &Image) -> Result<f64> {
        Ok(self.classify(&[image])?[0])
    }

    pub fn extract_features(&self, images: &[&Image]) -> Result<Vec<Vec<f64>>> {
        self.infer(images, |o| to_f64(&o.features))
    }

    pub fn is_abnormal(&self, p: f64) -> bool {
        p >= self.spec.threshold_t
    }

    pub(super) fn from_parts(spec: ClassifierSpec, entries: Vec<(String, autograd::Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        model.params.load(entries)?;
        Ok(model)
    }
}

pub(crate) fn to_f64<T: Float>(v: &Var<'_, T>) -> Vec<f64> {
    v.value().data().iter().map(|x| x.as_f64()).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
