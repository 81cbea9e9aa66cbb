use serde::{Deserialize, Serialize};

use super::{cv_score, fid, CV_TAU};
use crate::baselines::{layercam_saliency, rise_saliency, scorecam_saliency, CamConfig, RiseConfig};
use crate::data::{Dataset, ScanSlice};
use crate::explain::{counterfactuals, default_grid, postprocess_mask, threshold_sweep};
use crate::grid::{Image, Mask};
use crate::models::{Classifier, Generator};
use crate::{Error, Result};

/// A method to score: a trained explainer or an attribution baseline.
pub enum Method<'a> {
    Counterfactual { name: String, generator: &'a Generator },
    Rise(RiseConfig),
    ScoreCam(CamConfig),
    LayerCam(CamConfig),
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Counterfactual { name, .. } => name.clone(),
            Method::Rise(_) => "rise".into(),
            Method::ScoreCam(_) => "scorecam".into(),
            Method::LayerCam(_) => "layercam".into(),
        }
    }

    pub fn is_counterfactual(&self) -> bool {
        matches!(self, Method::Counterfactual { .. })
    }
}

/// Settings shared by every evaluated method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub grid: Vec<f64>,
    pub morph_kernel: usize,
    pub keep_largest: bool,
    pub tau: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { grid: default_grid(), morph_kernel: 3, keep_largest: true, tau: CV_TAU }
    }
}

impl EvalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("evaluation.grid", "needs at least one threshold, all in [0, 1]"));
        }
        if self.morph_kernel == 0 || self.morph_kernel % 2 == 0 {
            return Err(Error::config("evaluation.morph_kernel", "must be odd and at least 1"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("evaluation.tau", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerImage {
    pub id: String,
    pub iou: f64,
    pub p_x: Option<f64>,
    pub p_cf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    /// Only for counterfactual methods.
    pub fid: Option<f64>,
    pub cv: Option<f64>,
    pub iou_mean: f64,
    pub best_threshold: f64,
    pub n_images: usize,
    pub per_image: Vec<PerImage>,
    /// `(threshold, mean IoU)` over the sweep grid.
    pub curve: Vec<(f64, f64)>,
}

/// Raw per-slice output kept for figures.
#[derive(Clone, Debug, PartialEq)]
pub struct MapRecord {
    pub id: String,
    pub input: Image,
    /// Difference map (counterfactual) or min-max normalised saliency.
    pub map: Image,
    pub counterfactual: Option<Image>,
    pub ground_truth: Option<Mask>,
    /// Mask extracted at the method's best threshold.
    pub prediction: Mask,
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub maps: Vec<MapRecord>,
}

/// Run `method` on every abnormal validation slice, sweep thresholds for IoU and,
/// for counterfactual methods, compute FID against real normal validation slices and CV.
pub fn evaluate_method(dataset: &Dataset, classifier: &Classifier, method: &Method, settings: &EvalSettings) -> Result<Evaluation> {
    let val = dataset.val();
    if val.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let abnormal: Vec<&ScanSlice> = val.iter().copied().filter(|s| s.is_abnormal()).collect();
    if abnormal.is_empty() {
        return Err(Error::Data("validation split has no abnormal slices".into()));
    }

    let (mut maps, fid_value, cv_value, probs) = match method {
        Method::Counterfactual { generator, .. } => {
            let items: Vec<(&str, &Image)> = abnormal.iter().map(|s| (s.id.as_str(), &s.image)).collect();
            let results = counterfactuals(generator, classifier, &items)?;
            let normals: Vec<&Image> = val.iter().filter(|s| !s.is_abnormal()).map(|s| &s.image).collect();
            let cf_refs: Vec<&Image> = results.iter().map(|r| &r.counterfactual).collect();
            let fid_value = fid(&classifier.extract_features(&normals)?, &classifier.extract_features(&cf_refs)?)?;
            let pairs: Vec<(f64, f64)> = results.iter().map(|r| (r.p_x, r.p_cf)).collect();
            let cv_value = cv_score(&pairs, settings.tau)?;
            let maps = results
                .into_iter()
                .zip(&abnormal)
                .map(|(r, s)| MapRecord {
                    id: r.id,
                    input: r.input,
                    map: r.diff,
                    counterfactual: Some(r.counterfactual),
                    ground_truth: s.anomaly_mask.clone(),
                    prediction: Mask::empty(0, 0),
                })
                .collect();
            (maps, Some(fid_value), Some(cv_value), Some(pairs))
        }
        _ => {
            let maps = abnormal
                .iter()
                .map(|s| {
                    let raw = match method {
                        Method::Rise(cfg) => rise_saliency(classifier, &s.image, cfg)?,
                        Method::ScoreCam(cfg) => scorecam_saliency(classifier, &s.image, cfg)?,
                        Method::LayerCam(cfg) => layercam_saliency(classifier, &s.image, cfg)?,
                        Method::Counterfactual { .. } => unreachable!(),
                    };
                    Ok(MapRecord {
                        id: s.id.clone(),
                        input: s.image.clone(),
                        map: raw.min_max_normalized(),
                        counterfactual: None,
                        ground_truth: s.anomaly_mask.clone(),
                        prediction: Mask::empty(0, 0),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (maps, None, None, None)
        }
    };

    let eligible: Vec<usize> = (0..abnormal.len()).filter(|&i| abnormal[i].is_iou_eligible()).collect();
    let map_refs: Vec<&Image> = eligible.iter().map(|&i| &maps[i].map).collect();
    let gt_refs: Vec<&Mask> = eligible.iter().map(|&i| abnormal[i].anomaly_mask.as_ref().expect("eligible")).collect();
    let postprocess = method.is_counterfactual().then_some((settings.morph_kernel, settings.keep_largest));
    let sweep = threshold_sweep(&map_refs, &gt_refs, &settings.grid, postprocess)?;
    for m in &mut maps {
        let raw = m.map.threshold(sweep.best_threshold);
        m.prediction = match postprocess {
            Some((k, largest)) => postprocess_mask(&raw, k, largest),
            None => raw,
        };
    }
    let per_image = eligible
        .iter()
        .zip(&sweep.per_image_iou)
        .map(|(&i, &iou)| PerImage {
            id: abnormal[i].id.clone(),
            iou,
            p_x: probs.as_ref().map(|p| p[i].0),
            p_cf: probs.as_ref().map(|p| p[i].1),
        })
        .collect::<Vec<_>>();
    let report = MetricsReport {
        method: method.name(),
        fid: fid_value,
        cv: cv_value,
        iou_mean: sweep.best_iou,
        best_threshold: sweep.best_threshold,
        n_images: per_image.len(),
        per_image,
        curve: sweep.curve,
    };
    Ok(Evaluation { report, maps })
}
