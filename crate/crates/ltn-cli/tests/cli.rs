use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ltn(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltn"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    assert_eq!(
        out.status.code(),
        Some(want),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const SPEC: &str = "classes = 2\nembed_dim = 4\nimages = 6\nproposals_per_image = 8\nparts_per_whole = 1\n";

#[test]
fn gen_writes_dataset_and_sidecars_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.txt"), SPEC).unwrap();
    let out = ltn(
        &["gen", "--spec", "spec.txt", "--seed", "5", "--out", "a.txt"],
        dir.path(),
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("6 images"), "{stdout}");

    let dataset = fs::read_to_string(dir.path().join("a.txt")).unwrap();
    let classes = fs::read_to_string(dir.path().join("a.txt.classes")).unwrap();
    let ontology = fs::read_to_string(dir.path().join("a.txt.ontology")).unwrap();
    assert_eq!(classes, "c0\nc1\nc0_p0\nc1_p0\n");
    assert!(ontology.contains("c0: c0_p0"));
    ltn_core::data::Dataset::parse(&dataset).unwrap();

    let out = ltn(
        &["gen", "--spec", "spec.txt", "--seed", "5", "--out", "b.txt"],
        dir.path(),
    );
    assert_code(&out, 0);
    assert_eq!(dataset, fs::read_to_string(dir.path().join("b.txt")).unwrap());

    let out = ltn(
        &["gen", "--spec", "spec.txt", "--seed", "6", "--out", "c.txt"],
        dir.path(),
    );
    assert_code(&out, 0);
    assert_ne!(dataset, fs::read_to_string(dir.path().join("c.txt")).unwrap());
}

#[test]
fn preset_configs_need_paths_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let out = ltn(
        &["preset", "--name", "bg_alpha", "--out", "p.cfg"],
        dir.path(),
    );
    assert_code(&out, 0);
    let text = fs::read_to_string(dir.path().join("p.cfg")).unwrap();
    assert!(text.contains("variant = bg_alpha"));
    assert!(text.contains("epochs = 150"));
    assert!(text.contains("lr = 0.00001"));

    let out = ltn(&["train", "--config", "p.cfg"], dir.path());
    assert_code(&out, 1);

    let out = ltn(&["preset", "--name", "nope", "--out", "q.cfg"], dir.path());
    assert_code(&out, 1);
    assert!(!dir.path().join("q.cfg").exists());
}

#[test]
fn pipeline_trains_and_evaluates_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("spec.txt"), SPEC).unwrap();
    assert_code(
        &ltn(
            &["gen", "--spec", "spec.txt", "--seed", "3", "--out", "data.txt"],
            dir.path(),
        ),
        0,
    );
    let config = "dataset = data.txt\n\
                  classes = data.txt.classes\n\
                  epochs = 2\n\
                  lr = 0.001\n\
                  lr_drop_epoch = 1\n\
                  lr_after_drop = 0.0001\n\
                  batch_fg = 2\n\
                  batch_bg = 4\n\
                  kernels = 2\n\
                  checkpoint_out = model.bin\n\
                  metrics_out = metrics.tsv\n";
    fs::write(dir.path().join("run.cfg"), config).unwrap();

    let out = ltn(&["train", "--config", "run.cfg"], dir.path());
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("trained 2 epochs"), "{stdout}");

    let metrics = fs::read_to_string(dir.path().join("metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    for line in metrics.lines() {
        assert_eq!(line.split('\t').count(), 6);
    }
    let checkpoint = fs::read(dir.path().join("model.bin")).unwrap();

    // Same config, same bytes.
    assert_code(&ltn(&["train", "--config", "run.cfg"], dir.path()), 0);
    assert_eq!(checkpoint, fs::read(dir.path().join("model.bin")).unwrap());
    assert_eq!(
        metrics,
        fs::read_to_string(dir.path().join("metrics.tsv")).unwrap()
    );

    let out = ltn(
        &[
            "eval",
            "--checkpoint",
            "model.bin",
            "--data",
            "data.txt",
            "--report",
            "report.tsv",
        ],
        dir.path(),
    );
    assert_code(&out, 0);
    let report = fs::read_to_string(dir.path().join("report.tsv")).unwrap();
    let last = report.lines().last().unwrap();
    assert!(last.starts_with("mAP\t"), "{report}");
    assert_eq!(report.lines().count(), 5, "{report}");
    for line in report.lines() {
        let fields: Vec<&str> = line.split('\t').collect();
        if line.starts_with("mAP\t") {
            assert_eq!(fields.len(), 2);
        } else {
            assert_eq!(fields.len(), 4);
            assert!(fields[1].parse::<f64>().unwrap() >= 0.0);
        }
    }

    // Without --report the table lands on stdout.
    let out = ltn(
        &["eval", "--checkpoint", "model.bin", "--data", "data.txt"],
        dir.path(),
    );
    assert_code(&out, 0);
    assert_eq!(String::from_utf8_lossy(&out.stdout), report);
}

#[test]
fn failures_map_to_the_right_exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // Unreadable config is a validation failure.
    assert_code(&ltn(&["train", "--config", "missing.cfg"], dir.path()), 1);

    // Bad key in an existing config too.
    fs::write(dir.path().join("bad.cfg"), "dataset = d\nclasses = c\nnope = 1\n").unwrap();
    assert_code(&ltn(&["train", "--config", "bad.cfg"], dir.path()), 1);

    // Missing checkpoint at eval time is a runtime failure.
    fs::write(dir.path().join("spec.txt"), SPEC).unwrap();
    assert_code(
        &ltn(
            &["gen", "--spec", "spec.txt", "--seed", "1", "--out", "d.txt"],
            dir.path(),
        ),
        0,
    );
    assert_code(
        &ltn(
            &["eval", "--checkpoint", "none.bin", "--data", "d.txt"],
            dir.path(),
        ),
        2,
    );

    // Bad spec content is a validation failure, missing spec file runtime.
    fs::write(dir.path().join("bad_spec.txt"), "classes = 1\n").unwrap();
    assert_code(
        &ltn(
            &["gen", "--spec", "bad_spec.txt", "--seed", "1", "--out", "x.txt"],
            dir.path(),
        ),
        1,
    );
    assert_code(
        &ltn(
            &["gen", "--spec", "no_spec.txt", "--seed", "1", "--out", "x.txt"],
            dir.path(),
        ),
        2,
    );

    // Out-of-range threshold rejected before any file is touched.
    assert_code(
        &ltn(
            &["eval", "--checkpoint", "none.bin", "--data", "d.txt", "--iou", "1.5"],
            dir.path(),
        ),
        1,
    );

    // Usage errors are validation failures; help is a success.
    assert_code(&ltn(&[], dir.path()), 1);
    assert_code(&ltn(&["frobnicate"], dir.path()), 1);
    assert_code(&ltn(&["--help"], dir.path()), 0);
}
