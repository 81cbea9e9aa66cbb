use std::path::PathBuf;

use autograd::{Adam, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::data::{Dataset, ScanSlice};
use crate::grid::{Image, Mask};
use crate::losses::{total_objective, GanHistoryRow, LossTerms, LossWeights, PROB_EPS};
use crate::models::{
    batch_tensor, save_checkpoint, Classifier, Discriminator, DiscriminatorSpec, Generator, GeneratorSpec,
};
use crate::{seed, Error, Result};

/// Model-range differences are twice the `[0, 1]` ones.
const L1_UNIT: f64 = 0.5;
const TV_UNIT: f64 = 0.25;

#[derive(Clone, Debug, Default)]
pub struct GanOptions {
    /// Replace plain L1 reconstruction with the organ/background masked form.
    pub use_masks: bool,
    /// Where periodic and final generator/discriminator checkpoints go.
    pub checkpoint_dir: Option<PathBuf>,
}

pub struct GanRun {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: Vec<GanHistoryRow>,
    pub classifier_checksum: String,
}

/// Class-balanced batch source cycling through shuffled pools.
struct Batcher<'a> {
    pools: [Vec<&'a ScanSlice>; 2],
    cursor: [usize; 2],
    rng: ChaCha8Rng,
}

impl<'a> Batcher<'a> {
    fn new(train: Vec<&'a ScanSlice>, seed: u64) -> Result<Self> {
        let (abnormal, normal): (Vec<_>, Vec<_>) = train.into_iter().partition(|s| s.is_abnormal());
        if normal.is_empty() || abnormal.is_empty() {
            return Err(Error::Data("GAN training split must contain both labels".into()));
        }
        let mut b = Self { pools: [normal, abnormal], cursor: [0, 0], rng: seed::rng(seed) };
        for k in 0..2 {
            b.pools[k].shuffle(&mut b.rng);
        }
        Ok(b)
    }

    fn draw(&mut self, k: usize) -> &'a ScanSlice {
        if self.cursor[k] == self.pools[k].len() {
            self.pools[k].shuffle(&mut self.rng);
            self.cursor[k] = 0;
        }
        self.cursor[k] += 1;
        self.pools[k][self.cursor[k] - 1]
    }

    fn next(&mut self, size: usize) -> Vec<&'a ScanSlice> {
        let normal = size / 2;
        let mut out: Vec<_> = (0..normal).map(|_| self.draw(0)).collect();
        out.extend((normal..size).map(|_| self.draw(1)));
        out
    }
}

fn mask_tensor(masks: &[Mask]) -> Tensor<f32> {
    let (h, w) = masks[0].dims();
    let data = masks.iter().flat_map(|m| m.data().iter().map(|&b| if b { 1.0 } else { 0.0 })).collect();
    Tensor::new(&[masks.len(), 1, h, w], data)
}

struct Batch {
    x: Tensor<f32>,
    /// Classifier probability of each input.
    p_x: Vec<f64>,
    /// Organ and background masks for the masked reconstruction.
    regions: Option<[Tensor<f32>; 2]>,
}

fn check_specs(dataset: &Dataset, g: &GeneratorSpec, d: &DiscriminatorSpec, c: &Classifier) -> Result<()> {
    let size = dataset.image_size().ok_or_else(|| Error::Data("empty dataset".into()))?;
    for (field, s) in [
        ("generator.input_size", g.input_size),
        ("discriminator.input_size", d.input_size),
        ("classifier.input_size", c.spec().input_size),
    ] {
        if s != size {
            return Err(Error::config(field, format!("{s} does not match the {size}-pixel dataset")));
        }
    }
    if d.conditional != (g.n_conditions == 2) {
        return Err(Error::config(
            "discriminator.conditional",
            "must be true exactly when the generator takes two conditions",
        ));
    }
    Ok(())
}

/// Adversarial training of the explainer against a frozen classifier.
///
/// Single-condition generators push every input toward the normal class;
/// two-condition generators flip the classifier's decision and reconstruct
/// the input when given its own predicted class.
pub fn train_gan(
    dataset: &Dataset,
    classifier: &Classifier,
    generator_spec: &GeneratorSpec,
    discriminator_spec: &DiscriminatorSpec,
    weights: &LossWeights,
    config: &TrainConfig,
    options: &GanOptions,
) -> Result<GanRun> {
    config.validate()?;
    weights.validate()?;
    check_specs(dataset, generator_spec, discriminator_spec, classifier)?;
    let frozen = classifier.params().checksum();
    let mut generator = Generator::new(generator_spec.clone(), seed::derive(config.seed, "generator.init"))?;
    let mut discriminator =
        Discriminator::new(discriminator_spec.clone(), seed::derive(config.seed, "discriminator.init"))?;
    discriminator.warm_spectral_norm(20);
    let mut g_opt = adam(generator.params().tensors(), config);
    let mut d_opt = adam(discriminator.params().tensors(), config);
    let mut batches = Batcher::new(dataset.train(), seed::derive(config.seed, "gan.batches"))?;
    let dual = generator_spec.n_conditions == 2;
    let mut history = Vec::with_capacity(config.gan_steps);

    let make_batch = |slices: &[&ScanSlice]| -> Result<Batch> {
        let images: Vec<&Image> = slices.iter().map(|s| &s.image).collect();
        let regions = options.use_masks.then(|| {
            let organ: Vec<Mask> = slices.iter().map(|s| s.organ_mask.clone()).collect();
            let background: Vec<Mask> = organ.iter().map(Mask::not).collect();
            [mask_tensor(&organ), mask_tensor(&background)]
        });
        Ok(Batch { x: batch_tensor(&images)?, p_x: classifier.classify(&images)?, regions })
    };
    let predicted = |b: &Batch| -> Vec<usize> { b.p_x.iter().map(|&p| usize::from(classifier.is_abnormal(p))).collect() };

    for step in 1..=config.gan_steps {
        for _ in 1..config.d_updates_per_g {
            let batch = make_batch(&batches.next(config.batch_size))?;
            let tape = Tape::new();
            let gp = generator.params().bind(&tape, false);
            let x = tape.constant(batch.x.clone());
            let y = predicted(&batch);
            let cf_cond: Option<Vec<usize>> = dual.then(|| y.iter().map(|&c| 1 - c).collect());
            let fake = generator.forward(&gp, x, cf_cond.as_deref());
            discriminator.refresh_spectral_norm();
            d_step(&mut discriminator, &mut d_opt, &batch.x, &fake.value(), dual.then_some(&y[..]), cf_cond.as_deref(), step)?;
        }

        let batch = make_batch(&batches.next(config.batch_size))?;
        let y = predicted(&batch);
        let cf_cond: Option<Vec<usize>> = dual.then(|| y.iter().map(|&c| 1 - c).collect());
        let tape = Tape::new();
        let gp = generator.params().bind(&tape, true);
        let x = tape.constant(batch.x.clone());
        let fake = generator.forward(&gp, x, cf_cond.as_deref());

        discriminator.refresh_spectral_norm();
        let d_loss =
            d_step(&mut discriminator, &mut d_opt, &batch.x, &fake.value(), dual.then_some(&y[..]), cf_cond.as_deref(), step)?;

        let dp = discriminator.params().bind(&tape, false);
        let cp = classifier.params().bind(&tape, false);
        let n = batch.p_x.len();
        let gan = discriminator.forward(&dp, fake, cf_cond.as_deref()).bce_with_logits(&vec![1.0; n]);
        let logit = classifier.forward(&cp, fake).logit;
        let f = if dual {
            let targets: Vec<f32> = batch.p_x.iter().map(|&p| (1.0 - p) as f32).collect();
            logit.bernoulli_kl_with_logits(&targets, PROB_EPS as f32)
        } else {
            logit.bce_with_logits(&vec![0.0; n])
        };
        // Identity and cycle reconstructions: ℰ(ℰ(X)) for one condition,
        // ℰ(X, ŷ) and ℰ(ℰ(X, 1−ŷ), ŷ) for two.
        let (first, second) = if dual {
            (generator.forward(&gp, x, Some(&y)), generator.forward(&gp, fake, Some(&y)))
        } else {
            (fake, generator.forward(&gp, fake, None))
        };
        let rec = |a| reconstruction(x, a, batch.regions.as_ref());
        let idt = rec(first).add(rec(second)).scale(L1_UNIT as f32);
        let tv = fake.sub(x).total_variation().scale(TV_UNIT as f32);

        let terms = LossTerms {
            gan: f64::from(gan.item()),
            f: f64::from(f.item()),
            idt: f64::from(idt.item()),
            tv: f64::from(tv.item()),
        };
        for (term, v) in [("gan", terms.gan), ("f", terms.f), ("idt", terms.idt), ("tv", terms.tv)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { term: term.into(), step });
            }
        }
        let report = total_objective(terms, *weights)?;
        let w = |v: f64| v as f32;
        let total = gan
            .scale(w(weights.lambda_gan))
            .add(f.scale(w(weights.lambda_f)))
            .add(idt.scale(w(weights.lambda_idt)))
            .add(tv.scale(w(weights.lambda_tv)));
        let grads = tape.backward(total);
        let g: Vec<_> = gp.iter().map(|&v| grads.get(v).cloned()).collect();
        drop(grads);
        g_opt.step(generator.params_mut().tensors_mut(), &g);

        let row = GanHistoryRow::new(step, d_loss, &report);
        if config.log_every > 0 && (step % config.log_every == 0 || step == config.gan_steps) {
            log::info!(
                "gan step {step}/{}: D {:.4} | gan {:.4} f {:.4} idt {:.4} tv {:.5} | total {:.4}",
                config.gan_steps,
                row.d_loss,
                row.gan,
                row.f,
                row.idt,
                row.tv,
                row.total
            );
        }
        history.push(row);
        if let Some(dir) = &options.checkpoint_dir {
            if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step < config.gan_steps {
                save_pair(dir, &format!("_step{step:06}"), &generator, &discriminator)?;
            }
        }
    }
    if classifier.params().checksum() != frozen {
        return Err(Error::Numerical("classifier parameters changed during GAN training".into()));
    }
    if let Some(dir) = &options.checkpoint_dir {
        save_pair(dir, "", &generator, &discriminator)?;
    }
    Ok(GanRun { generator, discriminator, history, classifier_checksum: frozen })
}

fn reconstruction<'t>(x: Var<'t, f32>, y: Var<'t, f32>, regions: Option<&[Tensor<f32>; 2]>) -> Var<'t, f32> {
    match regions {
        Some([organ, background]) => x.masked_l1(y, organ).add(x.masked_l1(y, background)),
        None => x.l1_mean(y),
    }
}

fn adam(params: &[Tensor<f32>], config: &TrainConfig) -> Adam<f32> {
    Adam::new(params, config.adam_alpha as f32, config.adam_beta1 as f32, config.adam_beta2 as f32)
}

/// One discriminator update on real `x` and detached `fake`; returns the loss before the update.
fn d_step(
    d: &mut Discriminator,
    opt: &mut Adam<f32>,
    x: &Tensor<f32>,
    fake: &Tensor<f32>,
    real_cond: Option<&[usize]>,
    fake_cond: Option<&[usize]>,
    step: usize,
) -> Result<f64> {
    let n = x.shape()[0];
    let tape = Tape::new();
    let p = d.params().bind(&tape, true);
    let real = d.forward(&p, tape.constant(x.clone()), real_cond).bce_with_logits(&vec![1.0; n]);
    let fake = d.forward(&p, tape.constant(fake.clone()), fake_cond).bce_with_logits(&vec![0.0; n]);
    let loss = real.add(fake).scale(0.5);
    let value = f64::from(loss.item());
    if !value.is_finite() {
        return Err(Error::NonFinite { term: "discriminator".into(), step });
    }
    let grads = tape.backward(loss);
    let g: Vec<_> = p.iter().map(|&v| grads.get(v).cloned()).collect();
    opt.step(d.params_mut().tensors_mut(), &g);
    Ok(value)
}

fn save_pair(dir: &std::path::Path, suffix: &str, g: &Generator, d: &Discriminator) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(g, &dir.join(format!("generator{suffix}.ckpt")))?;
    save_checkpoint(d, &dir.join(format!("discriminator{suffix}.ckpt")))
}
