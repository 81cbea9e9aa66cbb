//! Fused scalar losses. Every op reduces to a single-element tensor.

use super::{sigmoid, softplus};
use crate::{Float, Tensor, Var};

fn sign<T: Float>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<'t, T: Float> Var<'t, T> {
    /// Mean binary cross-entropy of logits against targets in `[0, 1]`.
    pub fn bce_with_logits(self, targets: &[T]) -> Var<'t, T> {
        let z = self.value();
        assert_eq!(z.numel(), targets.len(), "bce_with_logits: target count mismatch");
        assert!(!targets.is_empty(), "bce_with_logits: empty batch");
        let n = T::of(targets.len() as f64);
        let loss: T = z.data().iter().zip(targets).map(|(&zi, &t)| softplus(zi) - t * zi).sum::<T>() / n;
        let t = targets.to_vec();
        let id = self.id;
        self.tape.op(Tensor::scalar(loss), &[self], move |g| {
            let gs = g.data()[0] / n;
            let d: Vec<T> = z.data().iter().zip(&t).map(|(&zi, &ti)| (sigmoid(zi) - ti) * gs).collect();
            vec![(id, Tensor::new(z.shape(), d))]
        })
    }

    /// Mean Bernoulli KL divergence `KL(σ(z) ‖ q)` for per-sample target probabilities `q`.
    ///
    /// Targets are clamped into `[eps, 1 − eps]`.
    pub fn bernoulli_kl_with_logits(self, targets: &[T], eps: T) -> Var<'t, T> {
        let z = self.value();
        assert_eq!(z.numel(), targets.len(), "bernoulli_kl: target count mismatch");
        assert!(!targets.is_empty(), "bernoulli_kl: empty batch");
        let n = T::of(targets.len() as f64);
        let q: Vec<T> = targets.iter().map(|&q| q.max(eps).min(T::one() - eps)).collect();
        let loss: T = z
            .data()
            .iter()
            .zip(&q)
            .map(|(&zi, &qi)| {
                let p = sigmoid(zi);
                let (lp, lnp) = (-softplus(-zi), -softplus(zi));
                p * (lp - qi.ln()) + (T::one() - p) * (lnp - (T::one() - qi).ln())
            })
            .sum::<T>()
            / n;
        let id = self.id;
        self.tape.op(Tensor::scalar(loss), &[self], move |g| {
            let gs = g.data()[0] / n;
            let d: Vec<T> = z
                .data()
                .iter()
                .zip(&q)
                .map(|(&zi, &qi)| {
                    let p = sigmoid(zi);
                    let logit_q = qi.ln() - (T::one() - qi).ln();
                    p * (T::one() - p) * (zi - logit_q) * gs
                })
                .collect();
            vec![(id, Tensor::new(z.shape(), d))]
        })
    }

    /// Mean absolute difference over every element.
    pub fn l1_mean(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "l1_mean: shape mismatch");
        let n = T::of(a.numel() as f64);
        let loss = a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        let (ia, ib) = (self.id, other.id);
        self.tape.op(Tensor::scalar(loss), &[self, other], move |g| {
            let gs = g.data()[0] / n;
            let da = a.zip_map(&b, |x, y| sign(x - y) * gs);
            let db = da.scale(-T::one());
            vec![(ia, da), (ib, db)]
        })
    }

    /// Foreground-normalised L1 for NCHW tensors and a binary `[N, 1, H, W]` mask:
    /// per sample `Σ(m·|a − b|) / Σm`, averaged over samples whose mask is nonempty.
    /// Returns zero when every mask is empty.
    pub fn masked_l1(self, other: Var<'t, T>, mask: &Tensor<T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "masked_l1: shape mismatch");
        let (n, c, h, w) = a.dims4();
        assert_eq!(mask.shape(), &[n, 1, h, w], "masked_l1: mask must be [N,1,H,W]");
        let hw = h * w;
        let fg: Vec<T> = (0..n).map(|i| mask.data()[i * hw..(i + 1) * hw].iter().copied().sum()).collect();
        let valid = fg.iter().filter(|&&s| s > T::zero()).count();
        let mut loss = T::zero();
        for i in 0..n {
            if fg[i] <= T::zero() {
                continue;
            }
            let m = &mask.data()[i * hw..(i + 1) * hw];
            let mut s = T::zero();
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for p in 0..hw {
                    s += m[p] * (a.data()[off + p] - b.data()[off + p]).abs();
                }
            }
            loss += s / fg[i];
        }
        let denom = T::of(valid.max(1) as f64);
        loss /= denom;
        let mask = mask.clone();
        let (ia, ib) = (self.id, other.id);
        self.tape.op(Tensor::scalar(loss), &[self, other], move |g| {
            let gs = g.data()[0] / denom;
            let mut da = vec![T::zero(); n * c * hw];
            for i in 0..n {
                if fg[i] <= T::zero() {
                    continue;
                }
                let m = &mask.data()[i * hw..(i + 1) * hw];
                for ch in 0..c {
                    let off = (i * c + ch) * hw;
                    for p in 0..hw {
                        da[off + p] = m[p] * sign(a.data()[off + p] - b.data()[off + p]) * gs / fg[i];
                    }
                }
            }
            let da = Tensor::new(a.shape(), da);
            let db = da.scale(-T::one());
            vec![(ia, da), (ib, db)]
        })
    }

    /// Squared-difference total variation of each `H×W` plane divided by `H·W`,
    /// averaged over all planes of an NCHW tensor.
    pub fn total_variation(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let planes = T::of((n * c) as f64);
        let norm = T::of(hw as f64);
        let mut loss = T::zero();
        for p in 0..n * c {
            let s = &x.data()[p * hw..(p + 1) * hw];
            let mut acc = T::zero();
            for i in 0..h {
                for j in 0..w {
                    let v = s[i * w + j];
                    if i + 1 < h {
                        let d = s[(i + 1) * w + j] - v;
                        acc += d * d;
                    }
                    if j + 1 < w {
                        let d = s[i * w + j + 1] - v;
                        acc += d * d;
                    }
                }
            }
            loss += acc / norm;
        }
        loss /= planes;
        let id = self.id;
        self.tape.op(Tensor::scalar(loss), &[self], move |g| {
            let two = T::of(2.0);
            let gs = g.data()[0] * two / (norm * planes);
            let mut dx = vec![T::zero(); x.numel()];
            for p in 0..n * c {
                let s = &x.data()[p * hw..(p + 1) * hw];
                let d = &mut dx[p * hw..(p + 1) * hw];
                for i in 0..h {
                    for j in 0..w {
                        let v = s[i * w + j];
                        if i + 1 < h {
                            let diff = (s[(i + 1) * w + j] - v) * gs;
                            d[(i + 1) * w + j] += diff;
                            d[i * w + j] -= diff;
                        }
                        if j + 1 < w {
                            let diff = (s[i * w + j + 1] - v) * gs;
                            d[i * w + j + 1] += diff;
                            d[i * w + j] -= diff;
                        }
                    }
                }
            }
            vec![(id, Tensor::new(x.shape(), dx))]
        })
    }
}
