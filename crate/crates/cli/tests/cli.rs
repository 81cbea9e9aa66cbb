use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[data]
image_size = 32
n_slices = 40
min_organ_area = 24
blob_radius = 5.0
blob_sigma = 2.5

[training]
batch_size = 8
classifier_epochs = 2
gan_steps = 2
log_every = 1

[classifier]
input_size = 32

[generator]
input_size = 32

[discriminator]
input_size = 32

[rise]
n_masks = 16
"#;

fn cfseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfseg")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

fn write_config(dir: &Path, name: &str, extra: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Generate a small dataset and train a classifier; returns (config, data dir, classifier checkpoint).
fn prepared(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let config = write_config(dir, "run.toml", "");
    let data = dir.join("data");
    assert_eq!(code(&cfseg(&["gen-data", "-c", s(&config), "-o", s(&data)])), 0);
    let clf_dir = dir.join("clf");
    let out = cfseg(&["train", "classifier", "-c", s(&config), "-d", s(&data), "-o", s(&clf_dir)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    (config, data, clf_dir.join("classifier.ckpt"))
}

#[test]
fn gen_data_writes_one_label_per_slice_and_is_rerunnable() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "run.toml", "");
    let out = dir.path().join("data");
    let first = cfseg(&["gen-data", "-c", s(&config), "-o", s(&out)]);
    assert_eq!(code(&first), 0, "{}", text(&first.stderr));
    assert!(text(&first.stdout).contains("40 slices"));
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 40);
    assert!(out.join("config.toml").exists());

    let snapshot = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut files = Vec::new();
        for sub in ["images", "organ_masks", "anomaly_masks"] {
            for e in fs::read_dir(root.join(sub)).unwrap() {
                let p = e.unwrap().path();
                files.push((p.clone(), fs::read(&p).unwrap()));
            }
        }
        for f in ["labels.csv", "split.json"] {
            files.push((root.join(f), fs::read(root.join(f)).unwrap()));
        }
        files.sort();
        files
    };
    let before = snapshot(&out);
    assert_eq!(code(&cfseg(&["gen-data", "-c", s(&config), "-o", s(&out)])), 0);
    assert_eq!(before, snapshot(&out));
}

#[test]
fn negative_slice_count_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    fs::write(&config, "[data]\nn_slices = -4\n").unwrap();
    let out = cfseg(&["gen-data", "-c", s(&config), "-o", s(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(text(&out.stderr).contains("n_slices"), "{}", text(&out.stderr));
}

#[test]
fn unreadable_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = cfseg(&["train", "classifier", "-d", s(&missing), "-o", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3, "{}", text(&out.stderr));
    let out = cfseg(&["gen-data", "-c", s(&dir.path().join("missing.toml")), "-o", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_arguments_are_usage_errors() {
    assert_eq!(code(&cfseg(&["train", "everything"])), 2);
    assert_eq!(code(&cfseg(&["frobnicate"])), 2);
}

#[test]
fn pipeline_stages_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data, clf) = prepared(dir.path());
    let history = fs::read_to_string(dir.path().join("clf/classifier_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1 + 2);

    // The GAN stage needs a classifier.
    let gan_dir = dir.path().join("gan");
    let out = cfseg(&["train", "gan", "-c", s(&config), "-d", s(&data), "-o", s(&gan_dir)]);
    assert_eq!(code(&out), 2, "{}", text(&out.stderr));

    let out = cfseg(&["train", "gan", "-c", s(&config), "-d", s(&data), "-o", s(&gan_dir), "--classifier", s(&clf)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("gan: step 2"));
    assert_eq!(fs::read_to_string(gan_dir.join("gan_history.csv")).unwrap().lines().count(), 1 + 2);

    // Dual-condition configuration with masked reconstruction.
    let dual = write_config(
        dir.path(),
        "dual.toml",
        "",
    );
    let body = fs::read_to_string(&dual)
        .unwrap()
        .replace("[generator]\n", "[generator]\nn_conditions = 2\nperturbation_mode = true\n")
        .replace("[discriminator]\n", "[discriminator]\nconditional = true\n")
        + "\n[explainer]\nuse_masks = true\n";
    fs::write(&dual, body).unwrap();
    let dual_dir = dir.path().join("dual");
    let out = cfseg(&["train", "gan", "-c", s(&dual), "-d", s(&data), "-o", s(&dual_dir), "--classifier", s(&clf)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));

    // Evaluation: one report per method plus a comparison table.
    let eval = dir.path().join("eval");
    let generator = gan_dir.join("generator.ckpt");
    let out = cfseg(&[
        "evaluate", "-c", s(&config), "-d", s(&data), "-o", s(&eval), "--classifier", s(&clf),
        "--generator", s(&generator), "--methods", "coin,rise",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    assert!(eval.join("coin/metrics.json").exists());
    assert!(eval.join("rise/metrics.json").exists());
    let table = fs::read_to_string(eval.join("comparison.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "method,fid,cv,iou,best_threshold");
    let rise = table.lines().find(|l| l.starts_with("rise")).unwrap();
    assert!(rise.starts_with("rise,-,-,"), "{rise}");

    let out = cfseg(&[
        "evaluate", "-c", s(&config), "-d", s(&data), "-o", s(&eval), "--classifier", s(&clf), "--methods", "gradcam",
    ]);
    assert_eq!(code(&out), 2);

    // Figures: one panel per evaluated image per method.
    let figs = dir.path().join("figs");
    let out = cfseg(&["figures", "-r", s(&eval), "-o", s(&figs)]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    for method in ["coin", "rise"] {
        let maps = fs::read_dir(eval.join(method).join("maps")).unwrap().count();
        let panels = fs::read_dir(figs.join(method)).unwrap().count();
        assert_eq!(maps, panels);
        assert!(panels > 0);
    }
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(code(&cfseg(&["figures", "-r", s(&empty), "-o", s(&figs)])), 2);
}

#[test]
fn loss_ablation_has_four_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (config, data, clf) = prepared(dir.path());
    let out_dir = dir.path().join("ablate");
    let out = cfseg(&[
        "ablate", "-c", s(&config), "-d", s(&data), "-o", s(&out_dir), "--classifier", s(&clf), "--study", "loss",
    ]);
    assert_eq!(code(&out), 0, "{}", text(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("loss_ablation.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    for col in ["fid", "cv", "iou"] {
        assert!(header.split(',').any(|c| c == col), "{header}");
    }
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(!out_dir.join("ladder.csv").exists());
}
