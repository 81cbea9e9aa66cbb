use crate::{Float, Tensor, Var};

fn normalize<T: Float>(v: &mut [T]) -> T {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    let d = norm.max(T::of(1e-12));
    for x in v.iter_mut() {
        *x /= d;
    }
    norm
}

/// Power-iteration refinement of the leading singular vectors of `w`, viewed
/// as a `rows × (numel / rows)` matrix. Returns the singular value estimate `uᵀ W v`.
pub fn power_iteration<T: Float>(w: &Tensor<T>, u: &mut [T], v: &mut [T], iters: usize) -> T {
    let rows = w.shape()[0];
    let cols = w.numel() / rows;
    assert_eq!(u.len(), rows);
    assert_eq!(v.len(), cols);
    let m = w.data();
    for _ in 0..iters {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = (0..rows).map(|i| m[i * cols + j] * u[i]).sum();
        }
        normalize(v);
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = (0..cols).map(|j| m[i * cols + j] * v[j]).sum();
        }
        normalize(u);
    }
    sigma_of(m, u, v)
}

fn sigma_of<T: Float>(m: &[T], u: &[T], v: &[T]) -> T {
    let cols = v.len();
    u.iter().enumerate().map(|(i, &ui)| ui * (0..cols).map(|j| m[i * cols + j] * v[j]).sum::<T>()).sum()
}

impl<'t, T: Float> Var<'t, T> {
    /// `W / σ` with `σ = uᵀ W v` for fixed singular-vector estimates `u`, `v`.
    /// The gradient flows through `σ`.
    pub fn spectral_normalize(self, u: &[T], v: &[T]) -> Var<'t, T> {
        let w = self.value();
        let rows = w.shape()[0];
        assert_eq!(u.len(), rows);
        assert_eq!(v.len(), w.numel() / rows);
        let sigma = sigma_of(w.data(), u, v);
        assert!(sigma.abs() > T::zero(), "spectral_normalize: zero singular value estimate");
        let out = w.scale(T::one() / sigma);
        let (u, v) = (u.to_vec(), v.to_vec());
        let id = self.id;
        self.tape.op(out, &[self], move |g| {
            let cols = v.len();
            let inner: T = g.data().iter().zip(w.data()).map(|(&a, &b)| a * b).sum();
            let coef = inner / (sigma * sigma);
            let mut d = g.scale(T::one() / sigma);
            for (i, &ui) in u.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    d.data_mut()[i * cols + j] -= coef * ui * vj;
                }
            }
            vec![(id, d)]
        })
    }
}
