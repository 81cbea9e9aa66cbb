//! Central-difference gradient probes shared by the gradient suite and the acceptance run.

#![allow(dead_code)]

use autograd::{Tape, Tensor, Var};
use cfseg::models::{Classifier, ClassifierSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;
pub const PROBES: usize = 12;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Largest relative error between the tape gradient of `f` at `x` and central
/// differences over `probes` random coordinates.
pub fn max_input_gradient_error<F>(x: &Tensor<f64>, f: F, probes: usize, seed: u64) -> f64
where
    F: for<'t> Fn(Var<'t, f64>) -> Var<'t, f64>,
{
    let tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(leaf);
    let grads = tape.backward(out);
    let analytic = grads.get_or_zeros(leaf);
    let eval = |t: Tensor<f64>| -> f64 {
        let tape = Tape::new();
        f(tape.constant(t)).item()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let i = rng.gen_range(0..x.numel());
        let mut plus = x.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= STEP;
        let numeric = (eval(plus) - eval(minus)) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    worst
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Offset every element by a random magnitude in `[0.05, 0.5)` with random sign,
/// keeping `|a − b|` far from the L1 kink.
pub fn offset_tensor(a: &Tensor<f64>, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = a
        .data()
        .iter()
        .map(|&v| {
            let d = rng.gen_range(0.05..0.5);
            if rng.gen::<bool>() {
                v + d
            } else {
                v - d
            }
        })
        .collect();
    Tensor::new(a.shape(), data)
}

fn logit<'t>(clf: &Classifier<f64>, v: Var<'t, f64>) -> Var<'t, f64> {
    let p = clf.params().bind(v.tape(), false);
    clf.forward(&p, v).logit
}

pub fn half_mask(n: usize, h: usize, w: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let organ: Vec<f64> = (0..n * h * w).map(|_| f64::from(u8::from(rng.gen::<bool>()))).collect();
    let background = organ.iter().map(|m| 1.0 - m).collect();
    (Tensor::new(&[n, 1, h, w], organ), Tensor::new(&[n, 1, h, w], background))
}

pub struct GradientReport {
    pub name: &'static str,
    pub probes: usize,
    pub max_error: f64,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.probes >= 10 && self.max_error <= TOLERANCE
    }
}

/// Every gradient target: classifier output, both consistency losses, L1,
/// masked reconstruction and total variation.
pub fn gradient_suite() -> Vec<GradientReport> {
    let spec = ClassifierSpec::default();
    let size = spec.input_size;
    let clf: Classifier<f64> = Classifier::new(spec, 11).expect("classifier");
    let x = random_tensor(&[2, 1, size, size], -1.0, 1.0, 1);
    let p_x = [0.93, 0.12];
    let targets: Vec<f64> = p_x.iter().map(|p| 1.0 - p).collect();
    let y = offset_tensor(&x, 2);
    let (organ, background) = half_mask(2, size, size, 3);
    let tv_input = random_tensor(&[2, 1, size, size], -1.0, 1.0, 4);

    let mut out = Vec::new();
    let mut add = |name: &'static str, max_error: f64| out.push(GradientReport { name, probes: PROBES, max_error });
    add("classifier output", max_input_gradient_error(&x, |v| logit(&clf, v).sum_all(), PROBES, 10));
    add(
        "L_f single condition",
        max_input_gradient_error(&x, |v| logit(&clf, v).bce_with_logits(&[0.0, 0.0]), PROBES, 11),
    );
    add(
        "L_f dual condition",
        max_input_gradient_error(&x, |v| logit(&clf, v).bernoulli_kl_with_logits(&targets, 1e-7), PROBES, 12),
    );
    add(
        "L1",
        max_input_gradient_error(&x, |v| v.l1_mean(v.tape().constant(y.clone())), PROBES, 13),
    );
    add(
        "masked reconstruction",
        max_input_gradient_error(
            &x,
            |v| {
                let t = v.tape().constant(y.clone());
                v.masked_l1(t, &organ).add(v.masked_l1(t, &background))
            },
            PROBES,
            14,
        ),
    );
    add("total variation", max_input_gradient_error(&tv_input, |v| v.total_variation(), PROBES, 15));
    out
}
