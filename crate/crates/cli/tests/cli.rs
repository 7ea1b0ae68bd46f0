use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tflm_core::parse_program;
use tflm_core::spn::LeafDistribution;
use tflm_core::tflm::{validate_spec, TflmSpec, BUGGY};

fn tflm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tflm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("corpus-{count}-{seed}"));
    let o = tflm(&[
        "synth",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("manifest.json")
}

fn write_program(dir: &Path, source: &str, coverage: &str) -> (PathBuf, PathBuf) {
    let src = dir.join("prog.mc");
    let cov = dir.join("prog.coverage.json");
    std::fs::write(&src, source).unwrap();
    std::fs::write(&cov, coverage).unwrap();
    (src, cov)
}

const THREE_LINES: &str = "x = 1;\ny = x + 2;\nreturn y;\n";
const THREE_COVERAGE: &str = r#"{"tests": [
    {"id": "t1", "outcome": "fail", "lines": [1, 2]},
    {"id": "t2", "outcome": "pass", "lines": [1, 2, 3]},
    {"id": "t3", "outcome": "pass", "lines": [1]}
]}"#;

#[test]
fn train_writes_a_valid_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6, 1);
    let model = dir.path().join("model.json");
    let o = tflm(&[
        "train",
        "--manifest",
        s(&manifest),
        "--k",
        "2",
        "--iters",
        "20",
        "--out",
        s(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("final log score"));
    let spec = TflmSpec::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    validate_spec(&spec).unwrap();
    assert!(spec.subclass_count.iter().all(|&k| k == 2));
}

#[test]
fn train_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 6, 2);
    let run = |name: &str, seed: &str| {
        let model = dir.path().join(name);
        let o = tflm(&[
            "train",
            "--manifest",
            s(&manifest),
            "--k",
            "3",
            "--seed",
            seed,
            "--out",
            s(&model),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(&model).unwrap(), stdout(&o))
    };
    let a = run("a.json", "7");
    let b = run("b.json", "7");
    assert_eq!(a, b);
}

#[test]
fn missing_manifest_exits_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-manifest.json");
    let o = tflm(&[
        "train",
        "--manifest",
        s(&missing),
        "--out",
        s(&dir.path().join("m.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("no-such-manifest.json"),
        "{}",
        stderr(&o)
    );
    assert!(!dir.path().join("m.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(tflm(&["train"]).status.code(), Some(2));
    assert_eq!(tflm(&["frobnicate"]).status.code(), Some(2));
}

fn trained_model(dir: &Path, k: &str) -> PathBuf {
    let manifest = synth(dir, 5, 3);
    let model = dir.join(format!("model-k{k}.json"));
    let o = tflm(&[
        "train",
        "--manifest",
        s(&manifest),
        "--k",
        k,
        "--out",
        s(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    model
}

#[test]
fn localize_prints_one_row_per_executable_line() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path(), "2");
    let (src, cov) = write_program(dir.path(), THREE_LINES, THREE_COVERAGE);
    let o = tflm(&[
        "localize",
        "--model",
        s(&model),
        "--source",
        s(&src),
        "--coverage",
        s(&cov),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rank,line,score"));
    let rows: Vec<(usize, u32, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
            )
        })
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.0).collect::<Vec<_>>(), vec![1, 2, 3]);
    let mut seen: Vec<u32> = rows.iter().map(|r| r.1).collect();
    seen.sort();
    assert_eq!(seen, vec![1, 2, 3]);
    assert!(rows.windows(2).all(|w| w[0].2 >= w[1].2));
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.2)));
}

#[test]
fn single_subclass_model_without_joint_scores_priors() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path(), "1");
    let mut spec = TflmSpec::from_json(&std::fs::read_to_string(&model).unwrap()).unwrap();
    spec.attr_joint = None;
    let stripped = dir.path().join("stripped.json");
    std::fs::write(&stripped, spec.to_json()).unwrap();

    let (src, cov) = write_program(dir.path(), THREE_LINES, THREE_COVERAGE);
    let o = tflm(&[
        "localize",
        "--model",
        s(&stripped),
        "--source",
        s(&src),
        "--coverage",
        s(&cov),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let program = parse_program(THREE_LINES, &spec.grammar).unwrap();
    let finest = program.finest_enclosing_nodes();
    for row in stdout(&o).lines().skip(1) {
        let f: Vec<&str> = row.split(',').collect();
        let line: u32 = f[1].parse().unwrap();
        let score: f64 = f[2].parse().unwrap();
        let symbol = program.tree.node(finest[&line]).symbol;
        let a = spec.attribute_index(symbol, BUGGY).unwrap();
        let LeafDistribution::Bernoulli { p } = spec.attr_dist[symbol.0][0][a] else {
            panic!("buggy leaf is Bernoulli")
        };
        assert!(
            (score - p).abs() < 1e-12,
            "line {line}: {score} vs prior {p}"
        );
    }
}

#[test]
fn localize_reports_syntax_errors_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path(), "1");
    let (src, cov) = write_program(dir.path(), "x = 1;\ny = ;\n", THREE_COVERAGE);
    let o = tflm(&[
        "localize",
        "--model",
        s(&model),
        "--source",
        s(&src),
        "--coverage",
        s(&cov),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2:5"), "{}", stderr(&o));
}

#[test]
fn localize_rejects_a_broken_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    std::fs::write(&model, "{ not json").unwrap();
    let (src, cov) = write_program(dir.path(), THREE_LINES, THREE_COVERAGE);
    let o = tflm(&[
        "localize",
        "--model",
        s(&model),
        "--source",
        s(&src),
        "--coverage",
        s(&cov),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.json"));
}

#[test]
fn evaluate_two_versions_gives_two_folds() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 2, 4);
    let report = dir.path().join("report.json");
    let cdf = dir.path().join("cdf.csv");
    let o = tflm(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--k-min",
        "1",
        "--k-max",
        "2",
        "--report",
        s(&report),
        "--cdf",
        s(&cdf),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean fs tflm"));
    let r: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let folds = r["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 2);
    for (method, mean) in [
        ("fs_tflm", "mean_fs_tflm"),
        ("fs_tarantula", "mean_fs_tarantula"),
        ("fs_sbi", "mean_fs_sbi"),
    ] {
        let avg = folds
            .iter()
            .map(|f| f[method].as_f64().unwrap())
            .sum::<f64>()
            / 2.0;
        assert!((avg - r[mean].as_f64().unwrap()).abs() < 1e-12);
    }
    let csv = std::fs::read_to_string(&cdf).unwrap();
    assert_eq!(csv.lines().count(), 102);
}

#[test]
fn evaluate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 4, 5);
    let run = |tag: &str| {
        let report = dir.path().join(format!("r{tag}.json"));
        let cdf = dir.path().join(format!("c{tag}.csv"));
        let o = tflm(&[
            "evaluate",
            "--manifest",
            s(&manifest),
            "--k-max",
            "2",
            "--seed",
            "9",
            "--report",
            s(&report),
            "--cdf",
            s(&cdf),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        (
            std::fs::read(report).unwrap(),
            std::fs::read(cdf).unwrap(),
            stdout(&o),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn evaluate_needs_two_versions() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 1, 6);
    let report = dir.path().join("report.json");
    let o = tflm(&[
        "evaluate",
        "--manifest",
        s(&manifest),
        "--report",
        s(&report),
        "--cdf",
        s(&dir.path().join("c.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!report.exists());
}

#[test]
fn synth_output_is_deterministic_and_loadable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synth(a.path(), 3, 11);
    let mb = synth(b.path(), 3, 11);
    let corpus = tflm_core::load_corpus(&ma).unwrap();
    assert_eq!(corpus.programs.len(), 3);
    assert!(corpus.programs.iter().all(|p| !p.buggy_lines.is_empty()));
    let dir_a = ma.parent().unwrap();
    let dir_b = mb.parent().unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir_a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "truth.json"));
    for name in names {
        assert_eq!(
            std::fs::read(dir_a.join(&name)).unwrap(),
            std::fs::read(dir_b.join(&name)).unwrap()
        );
    }
}

#[test]
fn synth_accepts_a_generator_file() {
    let dir = tempfile::tempdir().unwrap();
    let generator = dir.path().join("gen.json");
    std::fs::write(&generator, tflm_core::corpus::builtin_generator().to_json()).unwrap();
    let out = dir.path().join("out");
    let o = tflm(&[
        "synth",
        "--generator",
        s(&generator),
        "--count",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = tflm(&[
        "synth",
        "--generator",
        s(&dir.path().join("missing.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
