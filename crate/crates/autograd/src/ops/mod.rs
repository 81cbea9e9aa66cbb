//! Differentiable operations, exposed as methods on [`Var`].

pub(crate) mod conv;
mod loss;
mod spectral;

use std::rc::Rc;

use crate::float::gemm;
use crate::{Float, Tensor, Var};

pub use spectral::power_iteration;

impl<'t, T: Float> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
        let out = a.zip_map(&b, |x, y| x + y);
        let (ia, ib) = (self.id, other.id);
        self.tape.op(out, &[self, other], move |g| vec![(ia, g.clone()), (ib, g.clone())])
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "sub: shape mismatch");
        let out = a.zip_map(&b, |x, y| x - y);
        let (ia, ib) = (self.id, other.id);
        self.tape.op(out, &[self, other], move |g| vec![(ia, g.clone()), (ib, g.scale(-T::one()))])
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
        let out = a.zip_map(&b, |x, y| x * y);
        let (ia, ib) = (self.id, other.id);
        let (ga, gb) = (self.requires_grad(), other.requires_grad());
        self.tape.op(out, &[self, other], move |g| {
            let mut v = Vec::with_capacity(2);
            if ga {
                v.push((ia, g.zip_map(&b, |x, y| x * y)));
            }
            if gb {
                v.push((ib, g.zip_map(&a, |x, y| x * y)));
            }
            v
        })
    }

    /// `scale * x + shift`.
    pub fn affine(self, scale: T, shift: T) -> Var<'t, T> {
        let out = self.value().map(|x| x * scale + shift);
        let id = self.id;
        self.tape.op(out, &[self], move |g| vec![(id, g.scale(scale))])
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        self.affine(s, T::zero())
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| if v > T::zero() { v } else { v * slope });
        let id = self.id;
        self.tape.op(out, &[self], move |g| {
            vec![(id, g.zip_map(&x, |gv, xv| if xv > T::zero() { gv } else { gv * slope }))]
        })
    }

    pub fn relu(self) -> Var<'t, T> {
        self.leaky_relu(T::zero())
    }

    pub fn tanh(self) -> Var<'t, T> {
        let out = Rc::new(self.value().map(|v| v.tanh()));
        let y = Rc::clone(&out);
        let id = self.id;
        self.tape.op((*out).clone(), &[self], move |g| {
            vec![(id, g.zip_map(&y, |gv, yv| gv * (T::one() - yv * yv)))]
        })
    }

    pub fn sigmoid(self) -> Var<'t, T> {
        let out = Rc::new(self.value().map(sigmoid));
        let y = Rc::clone(&out);
        let id = self.id;
        self.tape.op((*out).clone(), &[self], move |g| {
            vec![(id, g.zip_map(&y, |gv, yv| gv * yv * (T::one() - yv)))]
        })
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the bound is active.
    pub fn clamp(self, lo: T, hi: T) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v.max(lo).min(hi));
        let id = self.id;
        self.tape.op(out, &[self], move |g| {
            vec![(id, g.zip_map(&x, |gv, xv| if xv < lo || xv > hi { T::zero() } else { gv }))]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape);
        let id = self.id;
        self.tape.op(out, &[self], move |g| vec![(id, g.clone().reshape(&old))])
    }

    /// Concatenate two NCHW tensors along the channel axis.
    pub fn concat_channels(self, other: Var<'t, T>) -> Var<'t, T> {
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4();
        let (nb, cb, hb, wb) = b.dims4();
        assert_eq!((n, h, w), (nb, hb, wb), "concat_channels: spatial/batch mismatch");
        let (pa, pb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(n * (pa + pb));
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * pa..(i + 1) * pa]);
            data.extend_from_slice(&b.data()[i * pb..(i + 1) * pb]);
        }
        let out = Tensor::new(&[n, ca + cb, h, w], data);
        let (ia, ib) = (self.id, other.id);
        self.tape.op(out, &[self, other], move |g| {
            let mut da = Vec::with_capacity(n * pa);
            let mut db = Vec::with_capacity(n * pb);
            for i in 0..n {
                let base = i * (pa + pb);
                da.extend_from_slice(&g.data()[base..base + pa]);
                db.extend_from_slice(&g.data()[base + pa..base + pa + pb]);
            }
            vec![(ia, Tensor::new(&[n, ca, h, w], da)), (ib, Tensor::new(&[n, cb, h, w], db))]
        })
    }

    /// Nearest-neighbour 2× spatial upsampling.
    pub fn upsample2x(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for i in 0..h2 {
                for j in 0..w2 {
                    dst[i * w2 + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let id = self.id;
        self.tape.op(Tensor::new(&[n, c, h2, w2], out), &[self], move |g| {
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let src = &g.data()[p * h2 * w2..(p + 1) * h2 * w2];
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for i in 0..h2 {
                    for j in 0..w2 {
                        dst[(i / 2) * w + j / 2] += src[i * w2 + j];
                    }
                }
            }
            vec![(id, Tensor::new(&[n, c, h, w], dx))]
        })
    }

    /// Spatial mean of an NCHW tensor, giving `[N, C]`.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let (_, _, h, w) = self.value().dims4();
        self.global_sum_pool().scale(T::one() / T::of((h * w) as f64))
    }

    /// Spatial sum of an NCHW tensor, giving `[N, C]`.
    pub fn global_sum_pool(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let out: Vec<T> = (0..n * c).map(|p| x.data()[p * hw..(p + 1) * hw].iter().copied().sum()).collect();
        let id = self.id;
        self.tape.op(Tensor::new(&[n, c], out), &[self], move |g| {
            let mut dx = Vec::with_capacity(n * c * hw);
            for &gv in g.data() {
                dx.extend(std::iter::repeat_n(gv, hw));
            }
            vec![(id, Tensor::new(&[n, c, h, w], dx))]
        })
    }

    /// Fully connected layer: `x [N, D] · wᵀ [D, O] + b [O]`.
    pub fn linear(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Var<'t, T> {
        let x = self.value();
        let w = weight.value();
        let (n, d) = x.dims2();
        let (o, dw) = w.dims2();
        assert_eq!(d, dw, "linear: input width {d} vs weight width {dw}");
        let mut out = vec![T::zero(); n * o];
        gemm(n, d, o, x.data(), false, w.data(), true, T::zero(), &mut out);
        if let Some(b) = bias {
            let bv = b.value();
            assert_eq!(bv.numel(), o);
            for row in out.chunks_mut(o) {
                for (y, &bb) in row.iter_mut().zip(bv.data()) {
                    *y += bb;
                }
            }
        }
        let (ix, iw) = (self.id, weight.id);
        let (gx, gw) = (self.requires_grad(), weight.requires_grad());
        let ib = bias.map(|b| (b.id, b.requires_grad()));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.op(Tensor::new(&[n, o], out), &parents, move |g| {
            let mut v = Vec::with_capacity(3);
            if gx {
                let mut dx = vec![T::zero(); n * d];
                gemm(n, o, d, g.data(), false, w.data(), false, T::zero(), &mut dx);
                v.push((ix, Tensor::new(&[n, d], dx)));
            }
            if gw {
                let mut dw = vec![T::zero(); o * d];
                gemm(o, n, d, g.data(), true, x.data(), false, T::zero(), &mut dw);
                v.push((iw, Tensor::new(&[o, d], dw)));
            }
            if let Some((ib, true)) = ib {
                let mut db = vec![T::zero(); o];
                for row in g.data().chunks(o) {
                    for (acc, &gv) in db.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                v.push((ib, Tensor::new(&[o], db)));
            }
            v
        })
    }

    /// Row-wise inner product of `self [N, D]` with rows `index[i]` of `table [K, D]`.
    pub fn embed_dot(self, table: Var<'t, T>, index: &[usize]) -> Var<'t, T> {
        let h = self.value();
        let e = table.value();
        let (n, d) = h.dims2();
        let (k, de) = e.dims2();
        assert_eq!(d, de);
        assert_eq!(index.len(), n);
        assert!(index.iter().all(|&i| i < k), "embed_dot: index out of range");
        let idx = index.to_vec();
        let out: Vec<T> = (0..n)
            .map(|i| (0..d).map(|j| h.data()[i * d + j] * e.data()[idx[i] * d + j]).sum())
            .collect();
        let (ih, ie) = (self.id, table.id);
        let (gh, ge) = (self.requires_grad(), table.requires_grad());
        self.tape.op(Tensor::new(&[n, 1], out), &[self, table], move |g| {
            let mut v = Vec::with_capacity(2);
            if gh {
                let mut dh = vec![T::zero(); n * d];
                for i in 0..n {
                    for j in 0..d {
                        dh[i * d + j] = g.data()[i] * e.data()[idx[i] * d + j];
                    }
                }
                v.push((ih, Tensor::new(&[n, d], dh)));
            }
            if ge {
                let mut de = vec![T::zero(); k * d];
                for i in 0..n {
                    for j in 0..d {
                        de[idx[i] * d + j] += g.data()[i] * h.data()[i * d + j];
                    }
                }
                v.push((ie, Tensor::new(&[k, d], de)));
            }
            v
        })
    }

    pub fn sum_all(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let id = self.id;
        self.tape.op(Tensor::scalar(x.sum()), &[self], move |g| vec![(id, Tensor::full(&shape, g.data()[0]))])
    }

    pub fn mean_all(self) -> Var<'t, T> {
        let n = self.value().numel();
        self.sum_all().scale(T::one() / T::of(n as f64))
    }
}

pub(crate) fn sigmoid<T: Float>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub(crate) fn softplus<T: Float>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}
