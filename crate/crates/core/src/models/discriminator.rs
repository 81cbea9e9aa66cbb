use autograd::{power_iteration, Float, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::params::{Conv, Linear, ParamSet};
use crate::{seed, Error, Result};

const SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub input_size: usize,
    /// Stride-2 stages after the full-resolution input layer.
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Projection conditioning on a binary condition.
    pub conditional: bool,
    pub spectral_norm_iters: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { input_size: 64, depth: 4, base_channels: 8, max_channels: 64, conditional: false, spectral_norm_iters: 1 }
    }
}

impl DiscriminatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spectral_norm_iters == 0 {
            return Err(Error::config("discriminator.spectral_norm_iters", "must be at least 1"));
        }
        if self.depth == 0 || self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::config("discriminator.depth", "need depth >= 1 and 0 < base_channels <= max_channels"));
        }
        if self.input_size % (1 << self.depth) != 0 {
            return Err(Error::config("discriminator.input_size", "must be a multiple of 2^depth"));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }
}

/// Singular-vector estimates for one normalised weight.
#[derive(Clone, Debug, PartialEq)]
struct SnState<T> {
    param: usize,
    u: Vec<T>,
    v: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    convs: Vec<Conv>,
    out: Linear,
    embed: Option<usize>,
}

/// SNGAN-style discriminator: every weight matrix is divided by its leading
/// singular value, estimated by persistent power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T = f32> {
    spec: DiscriminatorSpec,
    params: ParamSet<T>,
    layout: Layout,
    sn: Vec<SnState<T>>,
}

fn unit_vector<T: Float>(n: usize, rng: &mut impl Rng) -> Vec<T> {
    let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.into_iter().map(|x| T::of(x / norm)).collect()
}

impl<T: Float> Discriminator<T> {
    pub fn new(spec: DiscriminatorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seed::rng(seed);
        let mut p = ParamSet::default();
        let mut convs = vec![Conv::new(&mut p, "conv0", (1, spec.channels(0), 3, 1), false, &mut rng)];
        for i in 1..=spec.depth {
            convs.push(Conv::new(&mut p, &format!("conv{i}"), (spec.channels(i - 1), spec.channels(i), 3, 2), false, &mut rng));
        }
        let width = spec.channels(spec.depth);
        let out = Linear::new(&mut p, "out", (width, 1), true, &mut rng);
        let embed = spec.conditional.then(|| {
            let table: Vec<f64> = (0..2 * width).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.1).collect();
            p.push("embed.weight", Tensor::new(&[2, width], table.into_iter().map(T::of).collect()))
        });
        let mut weights: Vec<usize> = convs.iter().map(|c| c.w).collect();
        weights.push(out.w);
        weights.extend(embed);
        let sn = weights
            .into_iter()
            .map(|param| {
                let t = &p.tensors()[param];
                let rows = t.shape()[0];
                SnState { param, u: unit_vector(rows, &mut rng), v: unit_vector(t.numel() / rows, &mut rng) }
            })
            .collect();
        let mut d = Self { spec, params: p, layout: Layout { convs, out, embed }, sn };
        d.refresh_spectral_norm();
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Advance the power iteration for every normalised weight; returns the σ estimates.
    pub fn refresh_spectral_norm(&mut self) -> Vec<T> {
        let iters = self.spec.spectral_norm_iters;
        self.sn
            .iter_mut()
            .map(|s| power_iteration(&self.params.tensors()[s.param], &mut s.u, &mut s.v, iters))
            .collect()
    }

    /// Warm up the singular-vector estimates with extra iterations.
    pub fn warm_spectral_norm(&mut self, iters: usize) -> Vec<T> {
        self.sn
            .iter_mut()
            .map(|s| power_iteration(&self.params.tensors()[s.param], &mut s.u, &mut s.v, iters))
            .collect()
    }

    /// Raw logits `[N, 1]` for an `[N, 1, H, W]` model-range batch.
    pub fn forward<'t>(&self, p: &[Var<'t, T>], x: Var<'t, T>, condition: Option<&[usize]>) -> Var<'t, T> {
        let sn = |param: usize| {
            let s = self.sn.iter().find(|s| s.param == param).expect("normalised weight");
            p[param].spectral_normalize(&s.u, &s.v)
        };
        let mut h = x;
        for conv in &self.layout.convs {
            h = conv.apply_with(sn(conv.w), p, h).leaky_relu(T::of(SLOPE));
        }
        let pooled = h.global_sum_pool();
        let mut logit = self.layout.out.apply_with(sn(self.layout.out.w), p, pooled);
        if let (Some(e), Some(c)) = (self.layout.embed, condition) {
            logit = logit.add(pooled.embed_dot(sn(e), c));
        }
        logit
    }

    pub fn check_condition(&self, condition: Option<&[usize]>, n: usize) -> Result<()> {
        match (self.spec.conditional, condition) {
            (false, None) => Ok(()),
            (false, Some(_)) => Err(Error::Usage("unconditional discriminator takes no condition".into())),
            (true, None) => Err(Error::Usage("conditional discriminator needs a condition per image".into())),
            (true, Some(c)) if c.len() != n || c.iter().any(|&v| v > 1) => {
                Err(Error::Usage(format!("expected {n} conditions in {{0, 1}}, got {c:?}")))
            }
            (true, Some(_)) => Ok(()),
        }
    }

    pub(super) fn sn_tensors(&self) -> Vec<(String, Tensor<T>)> {
        self.sn
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                [
                    (format!("sn{i}.u"), Tensor::new(&[s.u.len()], s.u.clone())),
                    (format!("sn{i}.v"), Tensor::new(&[s.v.len()], s.v.clone())),
                ]
            })
            .collect()
    }

    pub(super) fn from_parts(spec: DiscriminatorSpec, mut entries: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(spec, 0)?;
        let n_params = model.params.len();
        if entries.len() != n_params + 2 * model.sn.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                n_params + 2 * model.sn.len(),
                entries.len()
            )));
        }
        let buffers = entries.split_off(n_params);
        model.params.load(entries)?;
        let expected = model.sn_tensors();
        for (i, ((name, t), (want, shape))) in buffers.into_iter().zip(expected).enumerate() {
            if name != want || t.shape() != shape.shape() {
                return Err(Error::Checkpoint(format!("spectral-norm buffer {i}: unexpected {name} {:?}", t.shape())));
            }
            let s = &mut model.sn[i / 2];
            if i % 2 == 0 {
                s.u = t.into_data();
            } else {
                s.v = t.into_data();
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use autograd::Tape;

    fn batch() -> Tensor<f64> {
        Tensor::new(&[2, 1, 64, 64], (0..2 * 64 * 64).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect())
    }

    fn score(d: &Discriminator<f64>, cond: Option<&[usize]>) -> Vec<f64> {
        let tape = Tape::new();
        let p = d.params().bind(&tape, false);
        let x = tape.constant(batch());
        d.forward(&p, x, cond).value().data().to_vec()
    }

    #[test]
    fn one_logit_per_image() {
        let d = Discriminator::<f64>::new(DiscriminatorSpec::default(), 1).unwrap();
        assert_eq!(score(&d, None).len(), 2);
    }

    #[test]
    fn scaling_a_weight_leaves_outputs_unchanged() {
        let mut d = Discriminator::<f64>::new(DiscriminatorSpec::default(), 2).unwrap();
        d.warm_spectral_norm(10);
        let mut scaled = d.clone();
        for t in scaled.params_mut().tensors_mut() {
            if t.shape().len() > 1 {
                *t = t.scale(10.0);
            }
        }
        d.refresh_spectral_norm();
        scaled.refresh_spectral_norm();
        for (a, b) in score(&d, None).iter().zip(&score(&scaled, None)) {
            assert!((a - b).abs() <= 1e-3 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn power_iteration_matches_svd() {
        let mut d = Discriminator::<f64>::new(DiscriminatorSpec::default(), 3).unwrap();
        let sigmas = d.warm_spectral_norm(10);
        for (s, sigma) in d.sn.iter().zip(sigmas) {
            let t = &d.params().tensors()[s.param];
            let rows = t.shape()[0];
            let m = nalgebra::DMatrix::from_row_slice(rows, t.numel() / rows, t.data());
            let top = m.singular_values().max();
            assert!((sigma - top).abs() <= 0.05 * top, "{sigma} vs {top}");
        }
    }

    #[test]
    fn projection_conditioning_changes_scores() {
        let spec = DiscriminatorSpec { conditional: true, ..Default::default() };
        let d = Discriminator::<f64>::new(spec, 4).unwrap();
        assert_ne!(score(&d, Some(&[0, 0])), score(&d, Some(&[1, 1])));
        assert!(d.check_condition(None, 2).is_err());
        let plain = Discriminator::<f64>::new(DiscriminatorSpec::default(), 4).unwrap();
        assert!(plain.check_condition(Some(&[0, 1]), 2).is_err());
    }

    #[test]
    fn zero_iterations_are_rejected() {
        assert!(DiscriminatorSpec { spectral_norm_iters: 0, ..Default::default() }.validate().is_err());
    }
}
