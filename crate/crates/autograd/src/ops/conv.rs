use crate::float::gemm_ld;
use crate::{Float, Tensor, Var};

/// Output columns unfolded per block; keeps the patch buffer cache-resident.
const BLOCK_BYTES: usize = 96 * 1024;

/// Geometry of a square-kernel 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    fn block_cols<T>(&self) -> usize {
        let per_col = self.rows() * std::mem::size_of::<T>();
        (BLOCK_BYTES / per_col).max(32).min(self.cols().max(1))
    }
}

/// Split output columns `start..start + len` into per-output-row segments
/// `(oh, ow_begin, ow_end, column offset)`.
fn segments(g: &ConvGeom, start: usize, len: usize) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let wo = g.out_width();
    let end = start + len;
    let mut pos = start;
    std::iter::from_fn(move || {
        if pos >= end {
            return None;
        }
        let (oh, ow) = (pos / wo, pos % wo);
        let ow_end = wo.min(ow + (end - pos));
        let seg = (oh, ow, ow_end, pos - start);
        pos += ow_end - ow;
        Some(seg)
    })
}

/// Output columns `ow` in `[lo, hi)` whose input column `ow·s + kj − pad` is inside the image.
#[inline]
fn valid_ow(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = if g.pad > kj { (g.pad - kj).div_ceil(g.stride) } else { 0 };
    let hi = if g.width + g.pad > kj { (g.width + g.pad - kj - 1) / g.stride + 1 } else { 0 };
    (lo, hi.min(g.out_width()))
}

fn im2col_block<T: Float>(x: &[T], g: &ConvGeom, start: usize, len: usize, cols: &mut [T]) {
    let k = g.kernel;
    let hw = g.height * g.width;
    for c in 0..g.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * len..(row + 1) * len];
                let (vlo, vhi) = valid_ow(g, kj);
                for (oh, ow0, ow1, off) in segments(g, start, len) {
                    let seg = &mut dst[off..off + (ow1 - ow0)];
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let a = vlo.max(ow0).min(ow1);
                    let b = vhi.min(ow1).max(a);
                    seg[..a - ow0].fill(T::zero());
                    seg[b - ow0..].fill(T::zero());
                    let base = (a * g.stride + kj) - g.pad;
                    if g.stride == 1 {
                        seg[a - ow0..b - ow0].copy_from_slice(&src[base..base + (b - a)]);
                    } else {
                        for (t, d) in seg[a - ow0..b - ow0].iter_mut().enumerate() {
                            *d = src[base + t * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_block<T: Float>(cols: &[T], g: &ConvGeom, start: usize, len: usize, x: &mut [T]) {
    let k = g.kernel;
    let hw = g.height * g.width;
    for c in 0..g.channels {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src_row = &cols[row * len..(row + 1) * len];
                let (vlo, vhi) = valid_ow(g, kj);
                for (oh, ow0, ow1, off) in segments(g, start, len) {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let (a, b) = (vlo.max(ow0), vhi.min(ow1));
                    if a >= b {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let seg = &src_row[off + (a - ow0)..off + (b - ow0)];
                    let base = (a * g.stride + kj) - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[base..base + (b - a)].iter_mut().zip(seg) {
                            *d += v;
                        }
                    } else {
                        for (t, &v) in seg.iter().enumerate() {
                            dst[base + t * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Unfold one `[C, H, W]` sample into a `[C·k·k, Ho·Wo]` patch matrix.
pub fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    assert_eq!(x.len(), g.channels * g.height * g.width);
    assert_eq!(cols.len(), g.rows() * g.cols());
    im2col_block(x, g, 0, g.cols(), cols);
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back into a `[C, H, W]` sample.
pub fn col2im<T: Float>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    assert_eq!(x.len(), g.channels * g.height * g.width);
    assert_eq!(cols.len(), g.rows() * g.cols());
    col2im_block(cols, g, 0, g.cols(), x);
}

impl<'t, T: Float> Var<'t, T> {
    /// 2-D convolution of an NCHW input with an `[O, C, k, k]` kernel.
    pub fn conv2d(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>, stride: usize, pad: usize) -> Var<'t, T> {
        let x = self.value();
        let w = weight.value();
        let (n, c, h, wd) = x.dims4();
        let (o, cw, k, k2) = w.dims4();
        assert_eq!(c, cw, "conv2d: input has {c} channels, kernel expects {cw}");
        assert_eq!(k, k2, "conv2d: kernel must be square");
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: k, stride, pad };
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let (rows, l) = (geom.rows(), geom.cols());
        let block = geom.block_cols::<T>();
        let in_per = c * h * wd;
        let out_per = o * l;

        let mut out = vec![T::zero(); n * out_per];
        let mut cols = vec![T::zero(); rows * block];
        for i in 0..n {
            let xs = &x.data()[i * in_per..(i + 1) * in_per];
            let ys = &mut out[i * out_per..(i + 1) * out_per];
            for start in (0..l).step_by(block) {
                let len = block.min(l - start);
                let cb = &mut cols[..rows * len];
                im2col_block(xs, &geom, start, len, cb);
                gemm_ld(o, rows, len, w.data(), rows, false, cb, len, false, T::zero(), &mut ys[start..], l);
            }
        }
        if let Some(b) = bias {
            let bv = b.value();
            assert_eq!(bv.numel(), o);
            for i in 0..n {
                for (oc, &bb) in bv.data().iter().enumerate() {
                    for y in &mut out[i * out_per + oc * l..i * out_per + (oc + 1) * l] {
                        *y += bb;
                    }
                }
            }
        }

        let (ix, iw) = (self.id, weight.id);
        let (gx, gw) = (self.requires_grad(), weight.requires_grad());
        let ib = bias.map(|b| (b.id, b.requires_grad()));
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.op(Tensor::new(&[n, o, ho, wo], out), &parents, move |g| {
            let mut grads = Vec::with_capacity(3);
            let mut cols = vec![T::zero(); rows * block];
            let mut dw = if gw { vec![T::zero(); o * rows] } else { Vec::new() };
            let mut dx = if gx { vec![T::zero(); n * in_per] } else { Vec::new() };
            for i in 0..n {
                let xs = &x.data()[i * in_per..(i + 1) * in_per];
                let gs = &g.data()[i * out_per..(i + 1) * out_per];
                for start in (0..l).step_by(block) {
                    let len = block.min(l - start);
                    let cb = &mut cols[..rows * len];
                    if gw {
                        im2col_block(xs, &geom, start, len, cb);
                        gemm_ld(o, len, rows, &gs[start..], l, false, cb, len, true, T::one(), &mut dw, rows);
                    }
                    if gx {
                        gemm_ld(rows, o, len, w.data(), rows, true, &gs[start..], l, false, T::zero(), cb, len);
                        col2im_block(cb, &geom, start, len, &mut dx[i * in_per..(i + 1) * in_per]);
                    }
                }
            }
            if gw {
                grads.push((iw, Tensor::new(&[o, c, k, k], dw)));
            }
            if gx {
                grads.push((ix, Tensor::new(&[n, c, h, wd], dx)));
            }
            if let Some((ib, true)) = ib {
                let mut db = vec![T::zero(); o];
                for i in 0..n {
                    for (oc, acc) in db.iter_mut().enumerate() {
                        *acc += g.data()[i * out_per + oc * l..i * out_per + (oc + 1) * l].iter().copied().sum();
                    }
                }
                grads.push((ib, Tensor::new(&[o], db)));
            }
            grads
        })
    }
}
