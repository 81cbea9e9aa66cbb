use autograd::{Adam, Tape};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::data::{Dataset, ScanSlice};
use crate::grid::Image;
use crate::models::{batch_tensor, Classifier, ClassifierSpec};
use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

fn bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(crate::losses::PROB_EPS, 1.0 - crate::losses::PROB_EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean BCE and accuracy of `classifier` on `slices`.
pub fn evaluate_classifier(classifier: &Classifier, slices: &[&ScanSlice]) -> Result<(f64, f64)> {
    if slices.is_empty() {
        return Ok((0.0, 0.0));
    }
    let images: Vec<&Image> = slices.iter().map(|s| &s.image).collect();
    let probs = classifier.classify(&images)?;
    let n = slices.len() as f64;
    let loss = slices.iter().zip(&probs).map(|(s, &p)| bce(p, s.label)).sum::<f64>() / n;
    let correct = slices.iter().zip(&probs).filter(|(s, &p)| classifier.is_abnormal(p) == s.is_abnormal()).count();
    Ok((loss, correct as f64 / n))
}

/// Minimise BCE on image-level labels; the weights with the best validation
/// accuracy (ties: lower validation loss, then earlier epoch) are returned.
pub fn train_classifier(
    dataset: &Dataset,
    spec: &ClassifierSpec,
    config: &TrainConfig,
) -> Result<(Classifier, Vec<ClassifierHistoryRow>)> {
    config.validate()?;
    let train = dataset.train();
    let val = dataset.val();
    let positives = train.iter().filter(|s| s.is_abnormal()).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::Data("classifier training split must contain both labels".into()));
    }
    let mut model = Classifier::new(spec.clone(), seed::derive(config.seed, "classifier.init"))?;
    if config.classifier_epochs == 0 {
        return Ok((model, Vec::new()));
    }
    let mut adam = Adam::new(
        model.params().tensors(),
        config.adam_alpha as f32,
        config.adam_beta1 as f32,
        config.adam_beta2 as f32,
    );
    let mut rng = seed::rng(seed::derive(config.seed, "classifier.batches"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.classifier_epochs);
    let mut best: Option<(f64, f64, Classifier)> = None;
    for epoch in 1..=config.classifier_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Image> = chunk.iter().map(|&i| &train[i].image).collect();
            let targets: Vec<f32> = chunk.iter().map(|&i| f32::from(train[i].label)).collect();
            let tape = Tape::new();
            let p = model.params().bind(&tape, true);
            let x = tape.constant(batch_tensor(&batch)?);
            let out = model.forward(&p, x);
            let loss = out.logit.bce_with_logits(&targets);
            let value = f64::from(loss.item());
            if !value.is_finite() {
                return Err(Error::NonFinite { term: "classifier bce".into(), step: epoch });
            }
            loss_sum += value * chunk.len() as f64;
            correct += out
                .logit
                .value()
                .data()
                .iter()
                .zip(&targets)
                .filter(|(&z, &t)| model.is_abnormal(crate::models::sigmoid(f64::from(z))) == (t > 0.5))
                .count();
            let grads = tape.backward(loss);
            let g: Vec<_> = p.iter().map(|&v| grads.get(v).cloned()).collect();
            adam.step(model.params_mut().tensors_mut(), &g);
        }
        let (val_loss, val_acc) = evaluate_classifier(&model, &val)?;
        let row = ClassifierHistoryRow {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss,
            val_acc,
        };
        log::info!(
            "classifier epoch {epoch}: train loss {:.4} acc {:.3} | val loss {:.4} acc {:.3}",
            row.train_loss,
            row.train_acc,
            val_loss,
            val_acc
        );
        history.push(row);
        let better = best.as_ref().is_none_or(|(acc, loss, _)| val_acc > *acc || (val_acc == *acc && val_loss < *loss));
        if better {
            best = Some((val_acc, val_loss, model.clone()));
        }
    }
    let (_, _, model) = best.expect("at least one epoch");
    Ok((model, history))
}
