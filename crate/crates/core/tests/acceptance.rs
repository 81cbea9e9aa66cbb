//! Acceptance run: every criterion is evaluated and reported as one PASS/FAIL
//! line; the process fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use cfseg::config::RunConfig;
use cfseg::data::{
    build_dataset, gaussian_blob, generate_phantom_background, inject_anomaly, stratified_split, Dataset, PhantomConfig,
    ScanSlice,
};
use cfseg::experiments::{architecture_ladder, loss_ablation, run_experiment, ExperimentOutcome};
use cfseg::explain::{diff_to_mask, largest_component, postprocess_mask, threshold_sweep};
use cfseg::losses::{
    classifier_consistency_coin, classifier_consistency_dual, gan_loss, l1_mean, masked_rec_loss, self_consistency,
    total_objective, tv_loss, GanSide, LossTerms, LossWeights,
};
use cfseg::metrics::{cv_score, evaluate_method, fid, iou, psd_matrix_sqrt, Evaluation, Method};
use cfseg::models::{load_checkpoint, save_checkpoint, Classifier, Generator};
use cfseg::training::{evaluate_classifier, train_classifier, train_gan, GanOptions, TrainConfig};
use cfseg::{Image, Mask};
use nalgebra::DMatrix;

/// Outcome of one criterion with its individual checks.
struct Criterion {
    id: usize,
    title: &'static str,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new(id: usize, title: &'static str) -> Self {
        Self { id, title, checks: Vec::new() }
    }

    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|(_, ok)| *ok)
    }

    fn report(&self) {
        let mut out = std::io::stdout().lock();
        for (name, ok) in &self.checks {
            let _ = writeln!(out, "    [{}] {name}", if *ok { "ok" } else { "FAIL" });
        }
        let _ = writeln!(
            out,
            "criterion {}: {} - {}",
            self.id,
            if self.passed() { "PASS" } else { "FAIL" },
            self.title
        );
        let _ = out.flush();
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn img(rows: &[&[f64]]) -> Image {
    Image::new(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
}

fn mask_from(h: usize, w: usize, f: impl FnMut(usize, usize) -> bool) -> Mask {
    Mask::from_fn(h, w, f)
}

/// Independent Bernoulli KL, written out from the definition.
fn kl_oracle(p: f64, q: f64) -> f64 {
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// Squared-difference TV written with explicit neighbour pairs.
fn tv_oracle(m: &Image) -> f64 {
    let (h, w) = m.dims();
    let mut s = 0.0;
    for r in 0..h {
        for c in 0..w {
            if r + 1 < h {
                s += (m.get(r + 1, c) - m.get(r, c)).powi(2);
            }
            if c + 1 < w {
                s += (m.get(r, c + 1) - m.get(r, c)).powi(2);
            }
        }
    }
    s / (h * w) as f64
}

fn criterion_oracles() -> Criterion {
    let mut c = Criterion::new(1, "metric, loss, explain and data oracles");
    let ln2 = std::f64::consts::LN_2;

    // metrics
    let s = mask_from(4, 4, |r, col| r < 2 && col < 2);
    let sc = mask_from(4, 4, |r, _| r < 2);
    c.check("iou half overlap = 0.5", iou(&s, &sc).unwrap() == 4.0 / 8.0);
    c.check("iou identical = 1", iou(&s, &s).unwrap() == 1.0);
    c.check("iou disjoint = 0", iou(&s, &s.not()).unwrap() == 0.0);
    c.check("iou symmetric", iou(&s, &sc).unwrap() == iou(&sc, &s).unwrap());
    c.check("cv (0.95, 0.05) flipped", cv_score(&[(0.95, 0.05)], 0.8).unwrap() == 1.0);
    c.check("cv (0.95, 0.20) not flipped", cv_score(&[(0.95, 0.20)], 0.8).unwrap() == 0.0);
    let pairs = [(0.95, 0.05), (0.99, 0.01), (0.9, 0.05), (0.95, 0.5)];
    let flipped = pairs.iter().filter(|(a, b)| a - b > 0.8).count() as f64 / pairs.len() as f64;
    c.check("cv three of four = 0.75", cv_score(&pairs, 0.8).unwrap() == flipped && flipped == 0.75);
    let id = DMatrix::<f64>::identity(3, 3);
    c.check("sqrt(I) = I", (psd_matrix_sqrt(&id).unwrap() - &id).abs().max() < 1e-12);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
    let want = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4f64.sqrt(), 9f64.sqrt()]));
    c.check("sqrt(diag(4, 9)) = diag(2, 3)", (psd_matrix_sqrt(&d).unwrap() - want).abs().max() < 1e-12);
    let feats = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
    let a = feats(&[-1.0, 1.0]);
    let b = feats(&[0.0, 2.0]);
    // Sample variance of {-1, 1} and {0, 2} is 2; closed form: (μ1 − μ2)² + σ1² + σ2² − 2σ1σ2.
    let (m1, m2, v1, v2) = (0.0f64, 1.0f64, 2.0f64, 2.0f64);
    let closed = (m1 - m2).powi(2) + v1 + v2 - 2.0 * (v1 * v2).sqrt();
    c.check("fid 1-D closed form = 1.0", close(fid(&a, &b).unwrap(), closed, 1e-9) && closed == 1.0);
    let unit = [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)];
    let sa: Vec<Vec<f64>> = unit.iter().map(|&(x, y)| vec![2.0 * x * 2f64.sqrt(), 2.0 * y * 2f64.sqrt()]).collect();
    let sb: Vec<Vec<f64>> = unit.iter().map(|&(x, y)| vec![x * 2f64.sqrt(), y * 2f64.sqrt()]).collect();
    // Covariances 16/3·I and 4/3·I with equal means: Tr(Σ1 + Σ2 − 2(Σ1Σ2)^½) = 2·(16/3 + 4/3 − 2·8/3).
    let closed2 = 2.0 * (16.0 / 3.0 + 4.0 / 3.0 - 2.0 * (64.0f64 / 9.0).sqrt());
    c.check("fid 2-D equal means, scaled identity covariances", close(fid(&sa, &sb).unwrap(), closed2, 1e-9));
    let g4: Vec<Vec<f64>> = unit.iter().map(|&(x, y)| vec![x * 6f64.sqrt(), y * 6f64.sqrt()]).collect();
    let g1: Vec<Vec<f64>> = unit.iter().map(|&(x, y)| vec![x * 1.5f64.sqrt(), y * 1.5f64.sqrt()]).collect();
    c.check("fid Σ1 = 4I, Σ2 = I → 2.0", close(fid(&g4, &g1).unwrap(), 2.0, 1e-9));
    c.check("fid identical sets = 0", fid(&sa, &sa).unwrap().abs() < 1e-9);

    // losses
    c.check("gan D loss at logits 0 = ln 2", close(gan_loss(&[0.0], &[0.0], GanSide::Discriminator).unwrap(), ln2, 1e-12));
    c.check("gan G loss at logit 0 = ln 2", close(gan_loss(&[], &[0.0], GanSide::Generator).unwrap(), ln2, 1e-12));
    c.check("gan D loss saturates", gan_loss(&[50.0], &[-50.0], GanSide::Discriminator).unwrap() < 1e-12);
    c.check("L_f coin p=0 → 0", classifier_consistency_coin(0.0) == 0.0);
    c.check("L_f coin p=0.5 → ln 2", close(classifier_consistency_coin(0.5), ln2, 1e-12));
    c.check("L_f coin p=0.9 → ln 10", close(classifier_consistency_coin(0.9), 10f64.ln(), 1e-12));
    c.check("L_f dual p_cf = 1 − p_x → 0", classifier_consistency_dual(0.3, 0.7).abs() < 1e-12);
    c.check("L_f dual 0.5, 0.5 → 0", classifier_consistency_dual(0.5, 0.5).abs() < 1e-12);
    c.check("L_f dual 0.9, 0.9 → 1.7578", close(classifier_consistency_dual(0.9, 0.9), kl_oracle(0.9, 0.1), 1e-12));
    let ones = Image::filled(3, 3, 1.0);
    let zeros = Image::zeros(3, 3);
    c.check("l1 identical → 0", l1_mean(&ones, &ones).unwrap() == 0.0);
    c.check("l1 ones vs zeros → 1", l1_mean(&ones, &zeros).unwrap() == 1.0);
    c.check("l1 one pixel off by 0.5 → 0.125", l1_mean(&img(&[&[0.5, 0.0], &[0.0, 0.0]]), &Image::zeros(2, 2)).unwrap() == 0.125);
    let x = Image::zeros(4, 4);
    let e1 = Image::filled(4, 4, 0.1);
    let e2 = Image::filled(4, 4, 0.2);
    c.check("self-consistency identity cycle → 0", self_consistency(&x, &x, &x).unwrap() == 0.0);
    c.check("self-consistency 0.1 + 0.2 → 0.3", close(self_consistency(&x, &e1, &e2).unwrap(), 0.3, 1e-12));
    c.check(
        "self-consistency symmetric",
        self_consistency(&x, &e1, &e2).unwrap() == self_consistency(&x, &e2, &e1).unwrap(),
    );
    let full = Mask::full(4, 4);
    let y = Image::from_fn(4, 4, |r, col| (r * 4 + col) as f64 / 20.0);
    c.check("masked rec, full mask = l1", close(masked_rec_loss(&x, &y, &[full]).unwrap(), l1_mean(&x, &y).unwrap(), 1e-12));
    let half = mask_from(4, 4, |r, _| r < 2);
    let diff_on_half = half.to_image();
    c.check("masked rec, diff 1 on half-image mask → 1", masked_rec_loss(&x, &diff_on_half, &[half.clone()]).unwrap() == 1.0);
    c.check("masked rec X = X' → 0", masked_rec_loss(&y, &y, &[half.clone(), half.not()]).unwrap() == 0.0);
    c.check("tv constant → 0", tv_loss(&Image::filled(5, 5, 0.3)) == 0.0);
    let m = img(&[&[0.0, 1.0], &[0.0, 1.0]]);
    c.check("tv [[0,1],[0,1]] → 0.5", tv_loss(&m) == 0.5 && tv_oracle(&m) == 0.5);
    let r = Image::from_fn(7, 5, |a, b| ((a * 31 + b * 17) % 11) as f64 / 10.0);
    c.check("tv transpose invariant", close(tv_loss(&r), tv_loss(&r.transpose()), 1e-12) && close(tv_loss(&r), tv_oracle(&r), 1e-12));
    let zero_w = LossWeights { lambda_gan: 0.0, lambda_f: 0.0, lambda_idt: 0.0, lambda_tv: 0.0 };
    let terms = LossTerms { gan: 0.7, f: 0.5, idt: 0.2, tv: 0.01 };
    c.check("objective all weights 0 → 0", total_objective(terms, zero_w).unwrap().total == 0.0);
    c.check(
        "objective λ_f = 2, L_f = 0.5 → 1",
        total_objective(terms, LossWeights { lambda_f: 2.0, ..zero_w }).unwrap().total == 1.0,
    );
    let w = LossWeights::default();
    let rep = total_objective(terms, w).unwrap();
    let manual = w.lambda_gan * terms.gan + w.lambda_f * terms.f + w.lambda_idt * terms.idt + w.lambda_tv * terms.tv;
    c.check("objective total = Σλ·term", close(rep.total, manual, 1e-9));

    // explain
    c.check("diff 0, threshold 0.1 → empty", diff_to_mask(&Image::zeros(4, 4), 0.1).is_empty());
    let d = Image::from_fn(4, 4, |r, col| (r + col) as f64 / 10.0);
    c.check("threshold 0 → diff > 0", diff_to_mask(&d, 0.0) == mask_from(4, 4, |r, col| r + col > 0));
    let blob = mask_from(6, 6, |r, col| (2..4).contains(&r) && (1..4).contains(&col));
    let two_level = Image::from_fn(6, 6, |r, col| if blob.get(r, col) { 0.5 } else { 0.3 });
    c.check("two-level diff at 0.4 → blob", diff_to_mask(&two_level, 0.4) == blob);
    c.check("postprocess empty → empty", postprocess_mask(&Mask::empty(5, 5), 3, true).is_empty());
    let comps = mask_from(8, 8, |r, col| (r == 1 && col < 5) || (r == 6 && col > 4));
    c.check("largest component keeps 5 px", largest_component(&comps) == mask_from(8, 8, |r, col| r == 1 && col < 5));
    let dot = mask_from(7, 7, |r, col| r == 3 && col == 3);
    c.check("isolated pixel removed by opening", postprocess_mask(&dot, 3, false).is_empty());
    let gt = mask_from(8, 8, |r, col| (2..5).contains(&r) && (2..6).contains(&col));
    let map = Image::from_fn(8, 8, |r, col| if gt.get(r, col) { 0.5 } else { 0.3 });
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let sweep = threshold_sweep(&[&map], &[&gt], &grid, None).unwrap();
    c.check("sweep finds 0.4 with IoU 1", close(sweep.best_threshold, 0.3, 1e-12) || close(sweep.best_threshold, 0.4, 1e-12));
    c.check("sweep best IoU = 1", sweep.best_iou == 1.0);
    c.check("sweep single-value grid", threshold_sweep(&[&map], &[&gt], &[0.4], None).unwrap().best_threshold == 0.4);
    c.check("sweep curve length = |grid|", sweep.curve.len() == grid.len());

    // data
    let cfg = PhantomConfig::default();
    let bad = PhantomConfig { min_organ_area: cfg.image_size * cfg.image_size + 1, ..cfg.clone() };
    c.check("impossible organ area rejected", bad.validate().is_err());
    let areas_ok = (0..1000u64).all(|s| generate_phantom_background(&cfg, s).unwrap().1.area() >= 32);
    c.check("1000 backgrounds have organ area ≥ 32", areas_ok);
    let g = gaussian_blob(16, 16, (8.0, 8.0), 2.0, 5.0, 1.0).unwrap();
    c.check("blob centre = amplitude", g.get(8, 8) == 1.0);
    c.check("blob beyond radius = 0", g.get(8, 14) == 0.0 && g.get(1, 1) == 0.0);
    c.check("blob σ=2, d=2 → exp(−0.5)", close(g.get(8, 10), (-0.5f64).exp(), 1e-15));
    let (bg, organ) = generate_phantom_background(&cfg, 5).unwrap();
    let bright = bg.map(|v| v.max(0.8));
    let loud = PhantomConfig { blob_amplitude_range: [0.4, 0.4], ..cfg.clone() };
    let s = inject_anomaly(&bright, &organ, &loud, 9).unwrap();
    c.check("injected slice has label 1 and a mask", s.label == 1 && !s.anomaly_mask.as_ref().unwrap().is_empty());
    c.check("injected pixels clamp to ≤ 1", s.image.data().iter().all(|&v| v <= 1.0));
    c.check("anomaly inside organ", s.anomaly_mask.as_ref().unwrap().is_subset_of(&organ));
    let small = PhantomConfig { n_slices: 100, abnormal_fraction: 0.5, ..cfg.clone() };
    let ds = build_dataset(&small).unwrap();
    let abnormal = ds.slices.iter().filter(|s| s.is_abnormal()).count();
    c.check("100 slices → 50 abnormal, 80/20 split", abnormal == 50 && ds.train().len() == 80 && ds.val().len() == 20);
    let normal_only = build_dataset(&PhantomConfig { n_slices: 20, abnormal_fraction: 0.0, ..cfg.clone() }).unwrap();
    c.check(
        "abnormal_fraction 0 → all normal",
        normal_only.slices.iter().all(|s| s.label == 0 && s.anomaly_mask.as_ref().is_none_or(Mask::is_empty)),
    );
    c.check("same config → identical dataset", build_dataset(&small).unwrap() == ds);
    let items: Vec<(String, usize)> = ds.slices.iter().map(|s| (s.id.clone(), s.anomaly_area())).collect();
    c.check("stratified split deterministic", stratified_split(&items, 0.2, 1) == stratified_split(&items, 0.2, 1));
    let mut inconsistent = ScanSlice::normal("x", Image::zeros(16, 16), Mask::full(16, 16));
    inconsistent.anomaly_mask = Some(mask_from(16, 16, |r, _| r == 0));
    c.check("mask on a label-0 slice is rejected", inconsistent.check_consistency().is_err());
    c
}

fn criterion_gradients() -> Criterion {
    let mut c = Criterion::new(2, "gradient suite (double precision, central differences)");
    for r in common::gradient_suite() {
        c.check(format!("{}: max rel error {:.2e} over {} probes", r.name, r.max_error, r.probes), r.passed());
    }
    c
}

struct PhantomRun {
    config: RunConfig,
    dataset: Dataset,
    classifier: Classifier,
    val_accuracy: f64,
    checksum_before: String,
    experiments: BTreeMap<String, ExperimentOutcome>,
    baselines: BTreeMap<&'static str, Evaluation>,
    seconds: f64,
}

fn log(msg: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "  .. {msg}");
    let _ = out.flush();
}

impl PhantomRun {
    fn execute() -> cfseg::Result<Self> {
        let start = Instant::now();
        let config = RunConfig::default();
        let dataset = build_dataset(&config.data)?;
        let (classifier, _) = train_classifier(&dataset, &config.classifier, &config.training)?;
        let (_, val_accuracy) = evaluate_classifier(&classifier, &dataset.val())?;
        log(&format!("classifier val accuracy {val_accuracy:.4} ({:.0}s)", start.elapsed().as_secs_f64()));
        let checksum_before = classifier.params().checksum();

        let mut plan = loss_ablation(&config);
        // The full objective and the ladder's COIN row are the same run.
        plan.extend(architecture_ladder(&config).into_iter().filter(|e| ["A", "B", "F", "G", "H"].contains(&e.id.as_str())));
        let mut experiments = BTreeMap::new();
        for exp in &plan {
            let t = Instant::now();
            let outcome = run_experiment(&dataset, &classifier, &config, exp)?;
            let r = &outcome.row;
            log(&format!(
                "{:<6} FID {:.4}  CV {:.3}  IoU {:.3}  ({:.0}s)",
                r.id,
                r.fid,
                r.cv,
                r.iou,
                t.elapsed().as_secs_f64()
            ));
            experiments.insert(exp.id.clone(), outcome);
        }

        let mut baselines = BTreeMap::new();
        for (name, method) in [
            ("rise", Method::Rise(config.rise.clone())),
            ("scorecam", Method::ScoreCam(config.cam)),
            ("layercam", Method::LayerCam(config.cam)),
        ] {
            let t = Instant::now();
            let e = evaluate_method(&dataset, &classifier, &method, &config.evaluation)?;
            log(&format!("{name:<8} IoU {:.3} ({:.0}s)", e.report.iou_mean, t.elapsed().as_secs_f64()));
            baselines.insert(name, e);
        }
        Ok(Self {
            config,
            dataset,
            classifier,
            val_accuracy,
            checksum_before,
            experiments,
            baselines,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    fn row(&self, id: &str) -> &cfseg::experiments::ExperimentRow {
        &self.experiments[id].row
    }
}

const BUDGET_SECONDS: f64 = 2.0 * 3600.0;

fn criterion_end_to_end(run: &PhantomRun) -> Criterion {
    let mut c = Criterion::new(3, "end-to-end phantom run at defaults");
    let coin = run.row("full");
    c.check(format!("classifier val accuracy {:.4} ≥ 0.95", run.val_accuracy), run.val_accuracy >= 0.95);
    c.check(format!("COIN CV {:.4} ≥ 0.90 at τ = 0.8", coin.cv), coin.cv >= 0.90);
    c.check(format!("COIN best-threshold IoU {:.4} ≥ 0.50", coin.iou), coin.iou >= 0.50);

    let cfg = &run.config.data;
    let (blank, _) = generate_phantom_background(cfg, 0xB1A4C).unwrap();
    let p_blank = run.classifier.classify_one(&blank).unwrap();
    c.check(format!("fresh normal slice p = {p_blank:.4} < t"), !run.classifier.is_abnormal(p_blank));
    let per_image = &run.experiments["full"].evaluation.report.per_image;
    let confident: Vec<_> = per_image.iter().filter(|p| run.classifier.is_abnormal(p.p_x.unwrap())).collect();
    let moved = confident.iter().filter(|p| !run.classifier.is_abnormal(p.p_cf.unwrap())).count();
    c.check(
        format!("COIN moves {moved}/{} abnormal-classified slices below t", confident.len()),
        !confident.is_empty() && moved * 10 >= confident.len() * 9,
    );
    c.check(
        format!("runtime {:.0}s within {:.0}s", run.seconds, BUDGET_SECONDS),
        run.seconds <= BUDGET_SECONDS,
    );
    c
}

fn criterion_ordering(run: &PhantomRun) -> Criterion {
    let mut c = Criterion::new(4, "COIN IoU beats the dual-condition baseline and attribution maps by ≥ 0.05");
    let coin = run.row("full").iou;
    let mut others: Vec<(String, f64)> = vec![("dual-condition (H)".into(), run.row("H").iou)];
    for (name, e) in &run.baselines {
        others.push(((*name).into(), e.report.iou_mean));
    }
    for (name, v) in others {
        c.check(format!("COIN {coin:.3} − {name} {v:.3} = {:.3} ≥ 0.05", coin - v), coin - v >= 0.05);
    }
    c
}

fn criterion_loss_ablation(run: &PhantomRun) -> Criterion {
    let mut c = Criterion::new(5, "loss ablation directions");
    let full = run.row("full");
    let no_f = run.row("no_f");
    let no_tv = run.row("no_tv");
    let no_idt = run.row("no_idt");
    c.check(format!("λ_f = 0: CV {:.3} → {:.3} (drop ≥ 0.20)", full.cv, no_f.cv), full.cv - no_f.cv >= 0.20);
    c.check(format!("λ_tv = 0: IoU {:.3} → {:.3} (drop ≥ 0.05)", full.iou, no_tv.iou), full.iou - no_tv.iou >= 0.05);
    c.check(format!("λ_idt = 0: IoU {:.3} → {:.3} (drop ≥ 0.05)", full.iou, no_idt.iou), full.iou - no_idt.iou >= 0.05);
    c
}

fn criterion_ladder(run: &PhantomRun) -> Criterion {
    let mut c = Criterion::new(6, "architecture ladder directions");
    let (a, b, f, g, coin) = (run.row("A"), run.row("B"), run.row("F"), run.row("G"), run.row("full"));
    c.check(format!("perturbations lower FID: B {:.4} < A {:.4}", b.fid, a.fid), b.fid < a.fid);
    c.check(format!("4 skips lower FID: F {:.4} < B {:.4}", f.fid, b.fid), f.fid < b.fid);
    c.check(format!("single condition raises IoU: COIN {:.3} > G {:.3}", coin.iou, g.iou), coin.iou > g.iou);
    c
}

fn criterion_determinism(run: &PhantomRun) -> Criterion {
    let mut c = Criterion::new(7, "determinism and contracts");
    c.check("dataset rebuilt bit-identically", build_dataset(&run.config.data).unwrap() == run.dataset);

    let coin = &run.experiments["full"];
    let method = Method::Counterfactual { name: "full".into(), generator: &coin.generator };
    let again = evaluate_method(&run.dataset, &run.classifier, &method, &run.config.evaluation).unwrap();
    c.check("metric report reproduced exactly", again.report == coin.evaluation.report);

    let short = TrainConfig { gan_steps: 3, classifier_epochs: 2, ..run.config.training.clone() };
    let h1 = train_classifier(&run.dataset, &run.config.classifier, &short).unwrap().1;
    let h2 = train_classifier(&run.dataset, &run.config.classifier, &short).unwrap().1;
    c.check("classifier history reproduced", h1 == h2);
    let gan = |cfg: &TrainConfig| {
        train_gan(
            &run.dataset,
            &run.classifier,
            &run.config.generator,
            &run.config.discriminator,
            &run.config.losses,
            cfg,
            &GanOptions::default(),
        )
        .unwrap()
    };
    let (r1, r2) = (gan(&short), gan(&short));
    c.check(
        "GAN history and weights reproduced",
        r1.history == r2.history && r1.generator.params().checksum() == r2.generator.params().checksum(),
    );
    c.check(
        "classifier checksum unchanged across all GAN training",
        run.classifier.params().checksum() == run.checksum_before && r1.classifier_checksum == run.checksum_before,
    );

    let dir = tempfile::tempdir().unwrap();
    let probe: Vec<&Image> = run.dataset.val().iter().take(8).map(|s| &s.image).collect();
    save_checkpoint(&run.classifier, &dir.path().join("c.ckpt")).unwrap();
    save_checkpoint(&coin.generator, &dir.path().join("g.ckpt")).unwrap();
    let clf2: Classifier = load_checkpoint(&dir.path().join("c.ckpt")).unwrap();
    let gen2: Generator = load_checkpoint(&dir.path().join("g.ckpt")).unwrap();
    c.check(
        "classifier checkpoint round trip: zero deviation",
        clf2.logits(&probe).unwrap() == run.classifier.logits(&probe).unwrap(),
    );
    c.check(
        "generator checkpoint round trip: zero deviation",
        gen2.explain(&probe, None).unwrap() == coin.generator.explain(&probe, None).unwrap(),
    );

    let identity = Generator::new(run.config.generator.clone(), 1).unwrap();
    let method = Method::Counterfactual { name: "identity".into(), generator: &identity };
    let e = evaluate_method(&run.dataset, &run.classifier, &method, &run.config.evaluation).unwrap();
    c.check(format!("identity generator CV = {}", e.report.cv.unwrap()), e.report.cv == Some(0.0));
    c.check(
        "identity generator: zero diffs and empty masks",
        e.maps.iter().all(|m| m.map.data().iter().all(|&v| v == 0.0) && m.prediction.is_empty()),
    );
    c
}

fn main() {
    // `cargo test -- --list` and filters are handled minimally: listing prints the single target.
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let mut results = Vec::new();
    for c in [criterion_oracles(), criterion_gradients()] {
        c.report();
        results.push(c.passed());
    }
    match PhantomRun::execute() {
        Ok(run) => {
            for c in [
                criterion_end_to_end(&run),
                criterion_ordering(&run),
                criterion_loss_ablation(&run),
                criterion_ladder(&run),
                criterion_determinism(&run),
            ] {
                c.report();
                results.push(c.passed());
            }
        }
        Err(e) => {
            println!("phantom run aborted: {e}");
            for (id, title) in [(3, "end-to-end"), (4, "ordering"), (5, "loss ablation"), (6, "ladder"), (7, "determinism")] {
                println!("criterion {id}: FAIL - {title} (not evaluated)");
            }
            results.extend([false; 5]);
        }
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {:.0}s",
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
