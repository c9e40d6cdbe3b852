use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dtsc_cli::commands::{cmd_compare, SIMILARITY};
use dtsc_cli::ExperimentConfig;
use dtsc_core::metrics::paired_t_test;
use dtsc_core::trainer::Variant;

const SMALL: &str = r#"
[dataset]
train_per_class = 40
val_per_class = 10
test_per_class = 20
dim = 8

[split]
labeled_fraction = 0.2

[train]
epochs = 3
scatter_epochs = 1
hidden_dims = [16]
feature_dim = 8
rsp_capacity = 8
bank_capacity = 32
"#;

fn dtsc(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dtsc"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DTSC_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig::parse(SMALL).unwrap()
}

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[train]\nepochs = 3\nlamda_cl = 0.5\n").unwrap();
    let o = dtsc(&["train", "--config", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("lamda_cl"), "{err}");
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn invariant_violation_is_rejected_before_training() {
    let dir = setup();
    fs::write(dir.path().join("k.toml"), "[train]\nrsp_capacity = 4\n").unwrap();
    let o = dtsc(&["train", "--config", "k.toml", "--out", "run"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rsp_capacity"));
    assert!(!dir.path().join("run").exists());

    let o = dtsc(
        &["train", "--config", "small.toml", "--preset", "mean_teacher"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_with_one() {
    let dir = setup();
    let o = dtsc(&["plot", "nowhere"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    fs::write(
        dir.path().join("csv.toml"),
        "[dataset]\ngenerator = \"csv\"\npath = \"missing.csv\"\n",
    )
    .unwrap();
    let o = dtsc(&["train", "--config", "csv.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.csv"));
}

#[test]
fn generate_is_byte_identical() {
    let dir = setup();
    for name in ["a.csv", "b.csv"] {
        let o = dtsc(&["generate", "--config", "small.toml", "--out", name], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("a.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 1 + 4 * 70);
    assert!(text.starts_with("x_0,"));
}

#[test]
fn train_writes_identical_artifacts_and_echoes_config() {
    let dir = setup();
    for out in ["r1", "r2"] {
        let o = dtsc(
            &["train", "--config", "small.toml", "--seed", "3", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &str| fs::read_to_string(dir.path().join(p)).unwrap();
    assert_eq!(read("r1/metrics.csv"), read("r2/metrics.csv"));
    assert_eq!(read("r1/checkpoint.txt"), read("r2/checkpoint.txt"));
    let summary = read("r1/summary.txt");
    let mut cfg = small_config().reseeded(3).effective();
    cfg.output.dir = "r1".into();
    assert!(summary.contains(&format!("config_hash = \"{}\"", cfg.hash())));
    assert_eq!(cfg.hash(), small_config().reseeded(3).effective().hash());
    assert!(
        summary.contains(&cfg.to_toml()),
        "summary must echo the full effective config"
    );
    assert!(summary.contains("ema_scatter = 0.999"));
    assert_eq!(read("r1/metrics.csv").lines().count(), 1 + 3);
}

#[test]
fn baseline_preset_has_zero_consistency_losses() {
    let dir = setup();
    let o = dtsc(
        &["train", "--config", "small.toml", "--preset", "baseline", "--out", "b"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1], "consistency");
        assert_eq!(f[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[4].parse::<f64>().unwrap(), 0.0);
        assert_eq!(f[5], "");
    }
}

#[test]
fn out_root_env_relocates_relative_dirs() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_dtsc"))
        .args(["train", "--config", "small.toml", "--out", "rel"])
        .current_dir(dir.path())
        .env("DTSC_OUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("root/rel/metrics.csv").exists());
}

#[test]
fn ablate_runs_five_arms_on_one_dataset() {
    let dir = setup();
    let o = dtsc(&["ablate", "--config", "small.toml", "--out", "abl"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("abl/ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 5);
    let arms: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(arms, ["baseline", "pure_mt", "scmt", "dtsc", "upper_bound"]);
    assert!(rows.iter().all(|r| r[7] == rows[0][7]), "dataset hashes differ");
    let ub = fs::read_to_string(dir.path().join("abl/upper_bound/summary.txt")).unwrap();
    assert!(ub.contains("labeled_fraction = 1.0"));
    for arm in arms {
        let s = fs::read_to_string(dir.path().join(format!("abl/{arm}/summary.txt"))).unwrap();
        assert!(s.contains(&format!("dataset_hash = \"{}\"", rows[0][7])));
    }
}

#[test]
fn compare_needs_two_seeds() {
    let dir = setup();
    let o = dtsc(&["compare", "--config", "small.toml", "--seeds", "4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_accounting_and_oracle_p_values() {
    let cfg = small_config();
    let seeds = [0, 1, 2];
    let cmp = cmd_compare(&cfg, &seeds, &[Variant::Baseline, Variant::Dtsc]).unwrap();
    let base = cmp.column(Variant::Baseline, |r| r.accuracy);
    let full = cmp.column(Variant::Dtsc, |r| r.accuracy);
    assert_eq!((base.len(), full.len()), (3, 3));
    let own = paired_t_test(&base, &base).unwrap();
    assert_eq!((own.t, own.p), (0.0, 1.0));
    let oracle = paired_t_test(&full, &base).unwrap();
    let reported = &cmp.paired[0];
    assert_eq!(reported.other, Variant::Baseline);
    assert_eq!(reported.accuracy_p, oracle.p);
    assert!(cmp.report().contains("dtsc vs baseline"));
}

#[test]
fn compare_writes_report() {
    let dir = setup();
    let o = dtsc(
        &[
            "compare",
            "--config",
            "small.toml",
            "--seeds",
            "0,1",
            "--arms",
            "baseline,dtsc",
            "--out",
            "cmp",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("cmp/compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(fs::read_to_string(dir.path().join("cmp/report.txt"))
        .unwrap()
        .contains("paired t-tests"));
}

fn fills(svg: &str) -> Vec<u8> {
    svg.lines()
        .filter_map(|l| l.split("fill=\"rgb(").nth(1))
        .map(|rest| rest.split(',').next().unwrap().parse().unwrap())
        .collect()
}

#[test]
fn plot_is_a_pure_function_of_exports() {
    let dir = setup();
    let o = dtsc(
        &[
            "train",
            "--config",
            "small.toml",
            "--out",
            "p",
            "--export-similarity",
            "--export-scatter",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let run = dir.path().join("p");
    let before: Vec<Vec<u8>> = ["scatter_final.svg", "similarity.svg"]
        .iter()
        .map(|f| fs::read(run.join(f)).unwrap())
        .collect();
    for _ in 0..2 {
        let o = dtsc(&["plot", "p"], dir.path());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let sim_svg = fs::read_to_string(run.join("similarity.svg")).unwrap();
    let again = dtsc(&["plot", "p"], dir.path());
    assert!(again.status.success());
    assert_eq!(sim_svg, fs::read_to_string(run.join("similarity.svg")).unwrap());
    assert_eq!(before[0], fs::read(run.join("scatter_final.svg")).unwrap());

    // Scatter: one circle per test sample plus one legend dot per class.
    let scatter = fs::read_to_string(run.join("scatter_final.svg")).unwrap();
    assert_eq!(scatter.matches("<circle").count(), 4 * 20 + 4);
    assert!(scatter.contains(">PC1<") && scatter.contains(">PC2<"));

    // Heat map: darker cells for larger values, checked on every pair.
    let values: Vec<f64> = fs::read_to_string(run.join(format!("{SIMILARITY}.csv")))
        .unwrap()
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    let shades = fills(&sim_svg);
    assert_eq!(values.len(), shades.len());
    for i in 0..values.len() {
        for j in 0..values.len() {
            if values[i] < values[j] {
                assert!(
                    shades[i] >= shades[j],
                    "cell {i} ({}) vs {j} ({})",
                    values[i],
                    values[j]
                );
            }
        }
    }
}

#[test]
fn empty_similarity_export_is_named() {
    let dir = setup();
    fs::create_dir(dir.path().join("e")).unwrap();
    fs::write(dir.path().join("e/similarity.csv"), "").unwrap();
    let o = dtsc(&["plot", "e"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("similarity.csv"), "{}", stderr(&o));
}
