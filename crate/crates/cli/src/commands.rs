use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cfseg::config::RunConfig;
use cfseg::data::{build_dataset, load_dataset_dir, write_dataset, Dataset};
use cfseg::experiments::{architecture_ladder, loss_ablation, run_experiment, Experiment, ExperimentRow};
use cfseg::losses::write_csv;
use cfseg::metrics::{evaluate_method, Method};
use cfseg::models::{load_checkpoint, save_checkpoint, Classifier, Generator};
use cfseg::report::{
    comparison_table, experiment_table, render_figures, write_comparison, write_evaluation, write_experiment_table,
    MetricsSummary,
};
use cfseg::training::{train_classifier, train_gan, GanOptions};
use cfseg::Error;

use crate::{Common, Stage, Study};

/// 0 success, 2 configuration or usage, 3 I/O, 4 numerical abort.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config { .. } | Error::Usage(_) | Error::Shape(_)) => 2,
        Some(Error::Io { .. } | Error::Image { .. } | Error::Checkpoint(_) | Error::Data(_)) => 3,
        Some(Error::NonFinite { .. } | Error::Numerical(_)) => 4,
        Some(Error::Experiment { .. }) | None => 1,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.set_seed(seed);
    }
    config.validate()?;
    Ok(config)
}

fn save_effective_config(config: &RunConfig, out: &Path) -> Result<()> {
    Ok(config.save(&out.join("config.toml"))?)
}

fn load_data(dir: &Path, config: &RunConfig) -> Result<Dataset> {
    let ds = load_dataset_dir(dir, Some(config.data.image_size), config.data.seed)?;
    log::info!("loaded {} slices ({} train / {} val) from {}", ds.slices.len(), ds.train().len(), ds.val().len(), dir.display());
    Ok(ds)
}

fn classifier_path(arg: Option<&Path>, config: &RunConfig) -> Result<PathBuf> {
    arg.map(Path::to_owned).or_else(|| config.paths.classifier_checkpoint.clone()).ok_or_else(|| {
        Error::Usage("a classifier checkpoint is required (--classifier or paths.classifier_checkpoint)".into()).into()
    })
}

fn load_classifier(path: &Path) -> Result<Classifier> {
    Ok(load_checkpoint(path)?)
}

pub fn gen_data(common: &Common, out: &Path) -> Result<()> {
    let config = load_config(common)?;
    let ds = build_dataset(&config.data)?;
    write_dataset(out, &ds)?;
    save_effective_config(&config, out)?;
    let abnormal = ds.slices.iter().filter(|s| s.is_abnormal()).count();
    println!(
        "wrote {} slices to {}: {} normal, {} abnormal",
        ds.slices.len(),
        out.display(),
        ds.slices.len() - abnormal,
        abnormal
    );
    Ok(())
}

pub fn train(stage: Stage, common: &Common, data: &Path, out: &Path, classifier: Option<&Path>) -> Result<()> {
    let config = load_config(common)?;
    match stage {
        Stage::Classifier => {
            let ds = load_data(data, &config)?;
            let (model, history) = train_classifier(&ds, &config.classifier, &config.training)?;
            save_checkpoint(&model, &out.join("classifier.ckpt"))?;
            write_csv(&out.join("classifier_history.csv"), &history)?;
            save_effective_config(&config, out)?;
            let val = ds.val();
            let (loss, acc) = cfseg::training::evaluate_classifier(&model, &val)?;
            println!("classifier: val accuracy {acc:.4}, val loss {loss:.4} ({} epochs)", history.len());
        }
        Stage::Gan => {
            let path = classifier_path(classifier, &config)?;
            let clf = load_classifier(&path)?;
            let ds = load_data(data, &config)?;
            let options = GanOptions {
                use_masks: config.explainer.use_masks,
                checkpoint_dir: (config.training.checkpoint_every > 0).then(|| out.join("checkpoints")),
            };
            let run = train_gan(
                &ds,
                &clf,
                &config.generator,
                &config.discriminator,
                &config.losses,
                &config.training,
                &options,
            )?;
            save_checkpoint(&run.generator, &out.join("generator.ckpt"))?;
            save_checkpoint(&run.discriminator, &out.join("discriminator.ckpt"))?;
            write_csv(&out.join("gan_history.csv"), &run.history)?;
            save_effective_config(&config, out)?;
            match run.history.last() {
                Some(r) => println!(
                    "gan: step {} D {:.4} gan {:.4} f {:.4} idt {:.4} tv {:.5} total {:.4}",
                    r.step, r.d_loss, r.gan, r.f, r.idt, r.tv, r.total
                ),
                None => println!("gan: 0 steps, generator left at initialization"),
            }
        }
    }
    Ok(())
}

fn parse_generators(args: &[String], config: &RunConfig) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if let Some(p) = &config.paths.generator_checkpoint {
        out.insert("coin".to_string(), p.clone());
    }
    for arg in args {
        let (name, path) = match arg.split_once('=') {
            Some((name, path)) if !name.is_empty() => (name.to_string(), path),
            _ => ("coin".to_string(), arg.as_str()),
        };
        if ["rise", "scorecam", "layercam"].contains(&name.as_str()) {
            return Err(Error::Usage(format!("generator name {name:?} collides with an attribution method")).into());
        }
        out.insert(name, PathBuf::from(path));
    }
    Ok(out)
}

pub fn evaluate(
    common: &Common,
    data: &Path,
    out: &Path,
    classifier: Option<&Path>,
    generator_args: &[String],
    methods: &[String],
) -> Result<()> {
    let config = load_config(common)?;
    let generator_paths = parse_generators(generator_args, &config)?;
    for m in methods {
        if !["rise", "scorecam", "layercam"].contains(&m.as_str()) && !generator_paths.contains_key(m) {
            return Err(Error::Usage(format!(
                "unknown method {m:?}: expected rise, scorecam, layercam or a generator name given via --generator"
            ))
            .into());
        }
    }
    let clf = load_classifier(&classifier_path(classifier, &config)?)?;
    let ds = load_data(data, &config)?;
    let mut summaries = Vec::new();
    for name in methods {
        let generator: Option<Generator> = match generator_paths.get(name) {
            Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading generator {name}"))?),
            None => None,
        };
        let method = match name.as_str() {
            "rise" => Method::Rise(config.rise.clone()),
            "scorecam" => Method::ScoreCam(config.cam),
            "layercam" => Method::LayerCam(config.cam),
            _ => Method::Counterfactual { name: name.clone(), generator: generator.as_ref().expect("checked above") },
        };
        log::info!("evaluating {name}");
        let evaluation = evaluate_method(&ds, &clf, &method, &config.evaluation)?;
        write_evaluation(&out.join(name), &evaluation)?;
        summaries.push(MetricsSummary::from(&evaluation.report));
    }
    write_comparison(out, &summaries)?;
    save_effective_config(&config, out)?;
    print!("{}", comparison_table(&summaries));
    Ok(())
}

pub fn ablate(common: &Common, data: &Path, out: &Path, classifier: Option<&Path>, study: Study) -> Result<()> {
    let config = load_config(common)?;
    let ds = load_data(data, &config)?;
    let clf = match classifier.map(Path::to_owned).or_else(|| config.paths.classifier_checkpoint.clone()) {
        Some(path) => load_classifier(&path)?,
        None => {
            let (model, history) = train_classifier(&ds, &config.classifier, &config.training)?;
            save_checkpoint(&model, &out.join("classifier.ckpt"))?;
            write_csv(&out.join("classifier_history.csv"), &history)?;
            model
        }
    };
    save_effective_config(&config, out)?;
    let mut studies: Vec<(&str, Vec<Experiment>)> = Vec::new();
    if study != Study::Ladder {
        studies.push(("loss_ablation", loss_ablation(&config)));
    }
    if study != Study::Loss {
        studies.push(("ladder", architecture_ladder(&config)));
    }
    for (name, experiments) in studies {
        let mut rows: Vec<ExperimentRow> = Vec::with_capacity(experiments.len());
        for exp in &experiments {
            let outcome = run_experiment(&ds, &clf, &config, exp)?;
            let dir = out.join(name).join(&exp.id);
            write_evaluation(&dir, &outcome.evaluation)?;
            write_csv(&dir.join("gan_history.csv"), &outcome.history)?;
            save_checkpoint(&outcome.generator, &dir.join("generator.ckpt"))?;
            rows.push(outcome.row);
        }
        write_experiment_table(out, name, &rows)?;
        println!("{name}:");
        print!("{}", experiment_table(&rows));
    }
    Ok(())
}

pub fn figures(reports: &Path, out: &Path) -> Result<()> {
    let count = render_figures(reports, out)?;
    println!("rendered {count} panels into {}", out.display());
    Ok(())
}
