//! Experiment matrices: loss-term ablation and the architecture ladder that
//! walks from the dual-condition baseline to the single-condition explainer.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::Dataset;
use crate::losses::{GanHistoryRow, LossWeights};
use crate::metrics::{evaluate_method, Evaluation, Method};
use crate::models::{Classifier, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::training::{train_gan, GanOptions};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub id: String,
    pub description: String,
    pub generator: GeneratorSpec,
    pub use_masks: bool,
    pub weights: LossWeights,
}

impl Experiment {
    fn from_base(base: &RunConfig, id: &str, description: &str) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            generator: base.generator.clone(),
            use_masks: base.explainer.use_masks,
            weights: base.losses,
        }
    }

    pub fn discriminator(&self, base: &DiscriminatorSpec) -> DiscriminatorSpec {
        DiscriminatorSpec { conditional: self.generator.n_conditions == 2, ..base.clone() }
    }
}

/// Full objective plus one run per zeroed term.
pub fn loss_ablation(base: &RunConfig) -> Vec<Experiment> {
    let full = Experiment::from_base(base, "full", "all loss terms");
    let zero = |id: &str, description: &str, f: fn(&mut LossWeights)| {
        let mut e = Experiment::from_base(base, id, description);
        f(&mut e.weights);
        e
    };
    vec![
        full,
        zero("no_idt", "lambda_idt = 0", |w| w.lambda_idt = 0.0),
        zero("no_f", "lambda_f = 0", |w| w.lambda_f = 0.0),
        zero("no_tv", "lambda_tv = 0", |w| w.lambda_tv = 0.0),
    ]
}

/// Rows A-H of the iterative ladder followed by the single-condition explainer.
pub fn architecture_ladder(base: &RunConfig) -> Vec<Experiment> {
    let row = |id: &str, description: &str, masks: bool, perturbation: bool, n_skip: usize, n_conditions: usize| {
        let mut e = Experiment::from_base(base, id, description);
        e.use_masks = masks;
        e.generator.perturbation_mode = perturbation;
        e.generator.n_skip = n_skip.min(e.generator.depth);
        e.generator.n_conditions = n_conditions;
        e
    };
    vec![
        row("A", "dual condition, masks, full reconstruction", true, false, 0, 2),
        row("B", "+ perturbations", true, true, 0, 2),
        row("C", "+ skip connection", true, true, 1, 2),
        row("D", "+ skip connection", true, true, 2, 2),
        row("E", "+ skip connection", true, true, 3, 2),
        row("F", "+ skip connection", true, true, 4, 2),
        row("G", "- masks", false, true, 4, 2),
        row("H", "- perturbations", false, false, 4, 2),
        row("COIN", "single condition", false, true, 4, 1),
    ]
}

/// One line of an experiment table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub id: String,
    pub description: String,
    pub uses_masks: bool,
    pub perturbations: bool,
    pub skip_connections: usize,
    pub conditions: usize,
    pub lambda_gan: f64,
    pub lambda_f: f64,
    pub lambda_idt: f64,
    pub lambda_tv: f64,
    pub fid: f64,
    pub cv: f64,
    pub iou: f64,
    pub best_threshold: f64,
}

pub struct ExperimentOutcome {
    pub row: ExperimentRow,
    pub generator: Generator,
    pub history: Vec<GanHistoryRow>,
    pub evaluation: Evaluation,
}

/// Train and evaluate one experiment against a shared frozen classifier.
pub fn run_experiment(
    dataset: &Dataset,
    classifier: &Classifier,
    base: &RunConfig,
    experiment: &Experiment,
) -> Result<ExperimentOutcome> {
    let wrap = |e: Error| Error::Experiment { id: experiment.id.clone(), source: Box::new(e) };
    log::info!("experiment {}: {}", experiment.id, experiment.description);
    let options = GanOptions { use_masks: experiment.use_masks, checkpoint_dir: None };
    let run = train_gan(
        dataset,
        classifier,
        &experiment.generator,
        &experiment.discriminator(&base.discriminator),
        &experiment.weights,
        &base.training,
        &options,
    )
    .map_err(wrap)?;
    let method = Method::Counterfactual { name: experiment.id.clone(), generator: &run.generator };
    let evaluation = evaluate_method(dataset, classifier, &method, &base.evaluation).map_err(wrap)?;
    let r = &evaluation.report;
    let g = &experiment.generator;
    let w = &experiment.weights;
    let row = ExperimentRow {
        id: experiment.id.clone(),
        description: experiment.description.clone(),
        uses_masks: experiment.use_masks,
        perturbations: g.perturbation_mode,
        skip_connections: g.n_skip,
        conditions: g.n_conditions,
        lambda_gan: w.lambda_gan,
        lambda_f: w.lambda_f,
        lambda_idt: w.lambda_idt,
        lambda_tv: w.lambda_tv,
        fid: r.fid.unwrap_or(f64::NAN),
        cv: r.cv.unwrap_or(f64::NAN),
        iou: r.iou_mean,
        best_threshold: r.best_threshold,
    };
    log::info!("experiment {}: FID {:.4} CV {:.3} IoU {:.3}", row.id, row.fid, row.cv, row.iou);
    Ok(ExperimentOutcome { row, generator: run.generator, history: run.history, evaluation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_has_nine_rows_ending_in_the_single_condition_model() {
        let rows = architecture_ladder(&RunConfig::default());
        let ids: Vec<&str> = rows.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["A", "B", "C", "D", "E", "F", "G", "H", "COIN"]);
        let skips: Vec<usize> = rows[..6].iter().map(|e| e.generator.n_skip).collect();
        assert_eq!(skips, [0, 0, 1, 2, 3, 4]);
        assert!(rows[..8].iter().all(|e| e.generator.n_conditions == 2));
        let coin = &rows[8];
        assert_eq!((coin.generator.n_conditions, coin.use_masks, coin.generator.perturbation_mode), (1, false, true));
        assert!(rows.iter().all(|e| e.discriminator(&DiscriminatorSpec::default()).conditional == (e.generator.n_conditions == 2)));
    }

    #[test]
    fn loss_ablation_zeroes_one_term_each() {
        let rows = loss_ablation(&RunConfig::default());
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].weights.lambda_idt, 0.0);
        assert_eq!(rows[2].weights.lambda_f, 0.0);
        assert_eq!(rows[3].weights.lambda_tv, 0.0);
        assert_eq!(rows[0].weights, LossWeights::default());
    }
}
