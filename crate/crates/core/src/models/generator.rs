use autograd::{Float, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::{Conv, ParamSet};
use super::{batch_tensor, check_input_size, tensor_images, INFERENCE_BATCH};
use crate::grid::Image;
use crate::{seed, Error, Result};

const SLOPE: f64 = 0.2;
/// Perturbations are `PERTURBATION_SCALE·tanh(·)`, enough to span the model range.
const PERTURBATION_SCALE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub input_size: usize,
    /// Skip connections, attached from the deepest stage outwards.
    pub n_skip: usize,
    /// Output a perturbation added to the input instead of a full image.
    pub perturbation_mode: bool,
    pub n_conditions: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Zero the final layer so an untrained perturbation generator is the identity.
    pub zero_init_output: bool,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            input_size: 64,
            n_skip: 4,
            perturbation_mode: true,
            n_conditions: 1,
            depth: 4,
            base_channels: 8,
            max_channels: 32,
            zero_init_output: true,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::config("generator.depth", "must be positive"));
        }
        if self.n_skip > self.depth {
            return Err(Error::config("generator.n_skip", "must not exceed depth"));
        }
        if !(1..=2).contains(&self.n_conditions) {
            return Err(Error::config("generator.n_conditions", "must be 1 or 2"));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::config("generator.base_channels", "need 0 < base_channels <= max_channels"));
        }
        if self.input_size == 0 || self.input_size % (1 << self.depth) != 0 {
            return Err(Error::config("generator.input_size", "must be a positive multiple of 2^depth"));
        }
        Ok(())
    }

    /// Channels of encoder level `i` (0 = full-resolution stem).
    fn channels(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    fn conditional(&self) -> bool {
        self.n_conditions == 2
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: Conv,
    down: Vec<Conv>,
    /// Decoder stages from the bottleneck outwards; the last one emits the output channel.
    up: Vec<Conv>,
}

/// Encoder–decoder explainer `ℰ(X) = G(E(X))`, optionally residual (`X + G(E(X))`).
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T = f32> {
    spec: GeneratorSpec,
    params: ParamSet<T>,
    layout: Layout,
}

impl<T: Float> Generator<T> {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut p = ParamSet::default();
        let stem = Conv::new(&mut p, "enc0", (1, spec.channels(0), 3, 1), false, &mut rng);
        let down = (1..=spec.depth)
            .map(|i| {
                let io = (spec.channels(i - 1), spec.channels(i), 3, 2);
                Conv::new(&mut p, &format!("enc{i}"), io, false, &mut rng)
            })
            .collect();
        let mut up = Vec::with_capacity(spec.depth);
        let mut c_in = spec.channels(spec.depth) + usize::from(spec.conditional());
        for j in 1..=spec.depth {
            let level = spec.depth - j;
            let skip = if j <= spec.n_skip { spec.channels(level) } else { 0 };
            let last = j == spec.depth;
            let c_out = if last { 1 } else { spec.channels(level) };
            let zero = last && spec.zero_init_output;
            up.push(Conv::new(&mut p, &format!("dec{j}"), (c_in + skip, c_out, 3, 1), zero, &mut rng));
            c_in = c_out;
        }
        Ok(Self { spec, params: p, layout: Layout { stem, down, up } })
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn check_condition(&self, condition: Option<&[usize]>, n: usize) -> Result<()> {
        match (self.spec.conditional(), condition) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::Usage("single-condition generator takes no condition".into())),
            (true, None) => Err(Error::Usage("two-condition generator needs a condition per image".into())),
            (true, Some(c)) if c.len() != n || c.iter().any(|&v| v > 1) => {
                Err(Error::Usage(format!("expected {n} conditions in {{0, 1}}, got {c:?}")))
            }
            (true, Some(_)) => Ok(()),
        }
    }

    /// `ℰ(X)` in model range for an `[N, 1, H, W]` batch; `condition` must match [`Self::check_condition`].
    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>, condition: Option<&[usize]>) -> Var<'t, T> {
        let slope = T::of(SLOPE);
        let l = &self.layout;
        let mut skips = vec![l.stem.apply(p, x).leaky_relu(slope)];
        for conv in &l.down {
            let h = conv.apply(p, *skips.last().expect("stem")).leaky_relu(slope);
            skips.push(h);
        }
        let mut h = skips.pop().expect("bottleneck");
        if let Some(c) = condition.filter(|_| self.spec.conditional()) {
            let (n, _, hh, ww) = h.value().dims4();
            let plane: Vec<T> =
                c.iter().flat_map(|&ci| std::iter::repeat_n(T::of(2.0 * ci as f64 - 1.0), hh * ww)).collect();
            h = h.concat_channels(x.tape().constant(Tensor::new(&[n, 1, hh, ww], plane)));
        }
        for (j, conv) in l.up.iter().enumerate() {
            h = h.upsample2x();
            if j < self.spec.n_skip {
                h = h.concat_channels(skips[skips.len() - 1 - j]);
            }
            h = conv.apply(p, h);
            if j + 1 < l.up.len() {
                h = h.leaky_relu(slope);
            }
        }
        if self.spec.perturbation_mode {
            x.add(h.tanh().scale(T::of(PERTURBATION_SCALE))).clamp(-T::one(), T::one())
        } else {
            h.tanh()
        }
    }

    /// Counterfactuals in `[0, 1]` for each image.
    pub fn explain(&self, images: &[&Image], condition: Option<&[usize]>) -> Result<Vec<Image>> {
        check_input_size(images, self.spec.input_size)?;
        self.check_condition(condition, images.len())?;
        let mut out = Vec::with_capacity(images.len());
        for (k, chunk) in images.chunks(INFERENCE_BATCH).enumerate() {
            let tape = Tape::new();
            let p = self.params.bind(&tape, false);
            let xt = batch_tensor(chunk)?;
            let seen = tensor_images(&xt);
            let x = tape.constant(xt);
            let cond = condition.map(|c| &c[k * INFERENCE_BATCH..k * INFERENCE_BATCH + chunk.len()]);
            let generated = tensor_images(&self.forward(&p, x, cond).value());
            // Apply the edit to the exact input so that precision loss in the
            // model range never shows up as a spurious difference.
            for ((orig, seen), gen) in chunk.iter().zip(&seen).zip(generated) {
                let data = orig
                    .data()
                    .iter()
                    .zip(seen.data())
                    .zip(gen.data())
                    .map(|((&o, &s), &g)| (o + (g - s)).clamp(0.0, 1.0))
                    .collect();
                out.push(Image::new(orig.dims().0, orig.dims().1, data)?);
            }
        }
        Ok(out)
    }

    pub(super) fn from_parts(spec: GeneratorSpec, entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        model.params.load(entries)?;
        Ok(model)
    }
}
