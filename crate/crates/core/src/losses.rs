//! Loss terms of the counterfactual objective. The free functions here are the
//! plain `f64` definitions used for reporting and as test oracles; training
//! evaluates the same quantities on the autodiff tape.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::grid::{Image, Mask};
use crate::{Error, Result};

/// Clamp applied to every probability inside a logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GanSide {
    Discriminator,
    Generator,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Logit BCE. Discriminator side averages the real→1 and fake→0 terms; generator side
/// is the non-saturating fake→1 form.
pub fn gan_loss(d_real: &[f64], d_fake: &[f64], side: GanSide) -> Result<f64> {
    match side {
        GanSide::Discriminator => {
            if d_real.is_empty() || d_fake.is_empty() {
                return Err(Error::Shape("gan_loss: empty batch".into()));
            }
            let real = mean(d_real.iter().map(|&z| softplus(-z)));
            let fake = mean(d_fake.iter().map(|&z| softplus(z)));
            Ok(0.5 * (real + fake))
        }
        GanSide::Generator => {
            if d_fake.is_empty() {
                return Err(Error::Shape("gan_loss: empty batch".into()));
            }
            Ok(mean(d_fake.iter().map(|&z| softplus(-z))))
        }
    }
}

/// `−ln(1 − p_cf)`: cross-entropy of the counterfactual toward the normal class.
pub fn classifier_consistency_coin(p_cf: f64) -> f64 {
    -(1.0 - p_cf).clamp(PROB_EPS, 1.0).ln()
}

/// `KL(Bernoulli(p_cf) ‖ Bernoulli(1 − p_x))`.
pub fn classifier_consistency_dual(p_cf: f64, p_x: f64) -> f64 {
    let p = p_cf.clamp(PROB_EPS, 1.0 - PROB_EPS);
    let q = (1.0 - p_x).clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()).max(0.0)
}

pub fn l1_mean(x: &Image, y: &Image) -> Result<f64> {
    Ok(x.zip_map(y, |a, b| (a - b).abs())?.mean())
}

pub fn self_consistency(x: &Image, e1: &Image, e2: &Image) -> Result<f64> {
    Ok(l1_mean(x, e1)? + l1_mean(x, e2)?)
}

/// `Σ_j Σ(S_j·|X − X'|) / ΣS_j`; masks without foreground are skipped.
pub fn masked_rec_loss(x: &Image, y: &Image, masks: &[Mask]) -> Result<f64> {
    let diff = x.zip_map(y, |a, b| (a - b).abs())?;
    let mut total = 0.0;
    for (j, mask) in masks.iter().enumerate() {
        mask.check_same(x.dims())?;
        let area = mask.area();
        if area == 0 {
            log::warn!("masked_rec_loss: mask {j} has no foreground; term skipped");
            continue;
        }
        let s: f64 = diff.data().iter().zip(mask.data()).filter(|(_, &m)| m).map(|(d, _)| d).sum();
        total += s / area as f64;
    }
    Ok(total)
}

/// Squared vertical and horizontal neighbour differences, divided by `H·W`.
pub fn tv_loss(map: &Image) -> f64 {
    let (h, w) = map.dims();
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = map.get(r, c);
            if r + 1 < h {
                s += (map.get(r + 1, c) - v).powi(2);
            }
            if c + 1 < w {
                s += (map.get(r, c + 1) - v).powi(2);
            }
        }
    }
    s / (h * w) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_gan: f64,
    pub lambda_f: f64,
    pub lambda_idt: f64,
    pub lambda_tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_gan: 1.0, lambda_f: 1.0, lambda_idt: 10.0, lambda_tv: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.named() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(name, "must be a finite non-negative number"));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("lambda_gan", self.lambda_gan),
            ("lambda_f", self.lambda_f),
            ("lambda_idt", self.lambda_idt),
            ("lambda_tv", self.lambda_tv),
        ]
    }
}

/// Unweighted generator-side loss terms for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub gan: f64,
    pub f: f64,
    pub idt: f64,
    pub tv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub weights: LossWeights,
    pub total: f64,
}

pub fn total_objective(terms: LossTerms, weights: LossWeights) -> Result<LossReport> {
    let named = [("gan", terms.gan), ("f", terms.f), ("idt", terms.idt), ("tv", terms.tv)];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite loss term {name}")));
    }
    let total = weights.lambda_gan * terms.gan
        + weights.lambda_f * terms.f
        + weights.lambda_idt * terms.idt
        + weights.lambda_tv * terms.tv;
    Ok(LossReport { terms, weights, total })
}

/// One row of the GAN training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanHistoryRow {
    pub step: usize,
    pub d_loss: f64,
    pub gan: f64,
    pub f: f64,
    pub idt: f64,
    pub tv: f64,
    pub total: f64,
}

impl GanHistoryRow {
    pub fn new(step: usize, d_loss: f64, report: &LossReport) -> Self {
        let t = report.terms;
        Self { step, d_loss, gan: t.gan, f: t.f, idt: t.idt, tv: t.tv, total: report.total }
    }
}

/// Write any serializable rows as CSV with a header.
pub fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for row in rows {
            w.serialize(row).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}
