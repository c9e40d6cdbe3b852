use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use dtsc_core::datagen::Split;
use dtsc_core::metrics::paired_t_test;
use dtsc_core::numerics::pca_project_2d;
use dtsc_core::plot::{
    heatmap_svg, parse_scatter_csv, parse_similarity_csv, scatter_csv, scatter_svg, similarity_csv, ScatterPoint,
};
use dtsc_core::trainer::{run_experiment, RunResult, Variant};
use dtsc_core::Matrix;

use crate::config::{build_dataset, build_split, ExperimentConfig};
use crate::error::CliError;

pub const SCATTER_BOUNDARY: &str = "scatter_boundary";
pub const SCATTER_FINAL: &str = "scatter_final";
pub const SIMILARITY: &str = "similarity";

const SIMILARITY_TITLE: &str = "test features vs reference pool (cosine)";

/// Plot titles depend only on the export name so `plot` reproduces `train` output.
fn scatter_title(name: &str) -> &'static str {
    if name == SCATTER_BOUNDARY {
        "test features at the end of the scatter phase"
    } else {
        "test features after the final epoch"
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

/// Writes the dataset CSV and returns a one-line class-count summary.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<String, CliError> {
    cfg.validate()?;
    let ds = build_dataset(&cfg.dataset)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, &ds.to_csv(None))?;
    let counts = |s: Split| {
        ds.class_counts(s)
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("/")
    };
    Ok(format!(
        "wrote {} rows to {}: train {} val {} test {}",
        ds.len(),
        out.display(),
        counts(Split::Train),
        counts(Split::Val),
        counts(Split::Test)
    ))
}

/// One finished run together with the effective config that produced it.
pub struct TrainedRun {
    pub config: ExperimentConfig,
    pub result: RunResult,
}

/// Builds data and split from `cfg` (already effective) and trains.
pub fn run_config(cfg: &ExperimentConfig) -> Result<TrainedRun, CliError> {
    cfg.validate()?;
    let ds = build_dataset(&cfg.dataset)?;
    let split = build_split(&ds, &cfg.split)?;
    let result = run_experiment(&cfg.train, &ds, &split)?;
    Ok(TrainedRun {
        config: cfg.clone(),
        result,
    })
}

fn summary_text(run: &TrainedRun) -> String {
    let r = &run.result;
    let mut s = String::new();
    let _ = writeln!(s, "# run summary");
    let _ = writeln!(s, "preset = \"{}\"", r.config.variant);
    let _ = writeln!(s, "config_hash = \"{}\"", run.config.hash());
    let _ = writeln!(s, "train_config_hash = \"{}\"", r.config_hash);
    let _ = writeln!(s, "dataset_hash = \"{}\"", r.dataset_hash);
    let _ = writeln!(s, "steps = {}", r.state.steps);
    if let Some(p) = &r.state.rsp {
        let _ = writeln!(s, "rsp_skipped_zero_rows = {}", p.skipped());
    }
    s.push_str("\n[test]\n");
    s.push_str(&r.test_report.to_kv());
    s.push_str("\n# effective config\n");
    s.push_str(&run.config.to_toml());
    s
}

fn scatter_points(features: &Matrix, labels: &[usize]) -> Result<Vec<ScatterPoint>, CliError> {
    let p = pca_project_2d(features)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| ScatterPoint {
            x: p.points[(i, 0)],
            y: p.points[(i, 1)],
            label,
        })
        .collect())
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(run: &TrainedRun, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    let r = &run.result;
    write(&dir.join("metrics.csv"), &r.metrics_csv())?;
    write(&dir.join("summary.txt"), &summary_text(run))?;
    write(&dir.join("checkpoint.txt"), &r.checkpoint().to_text())?;
    if run.config.output.export_similarity {
        let m = r
            .similarity
            .as_ref()
            .ok_or_else(|| CliError::Runtime("no nonzero test features to build a similarity matrix".into()))?;
        write(&dir.join(format!("{SIMILARITY}.csv")), &similarity_csv(m))?;
        write(
            &dir.join(format!("{SIMILARITY}.svg")),
            &heatmap_svg(m, SIMILARITY_TITLE)?,
        )?;
    }
    if run.config.output.export_scatter {
        for (name, snap) in [
            (SCATTER_BOUNDARY, &r.boundary_snapshot),
            (SCATTER_FINAL, &r.final_snapshot),
        ] {
            let pts = scatter_points(&snap.features, &snap.labels)?;
            write(&dir.join(format!("{name}.csv")), &scatter_csv(&pts))?;
            write(
                &dir.join(format!("{name}.svg")),
                &scatter_svg(&pts, scatter_title(name))?,
            )?;
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainedRun, CliError> {
    let run = run_config(cfg)?;
    write_run(&run, dir)?;
    Ok(run)
}

/// Metrics of one arm in an ablation or comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmRow {
    pub arm: Variant,
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: Option<f64>,
    pub dataset_hash: String,
    pub config_hash: String,
    pub test_cosine_initial: Option<f64>,
    pub test_cosine_boundary: Option<f64>,
}

impl ArmRow {
    fn from_run(run: &TrainedRun, seed: u64, boundary_epoch: usize) -> Self {
        let r = &run.result;
        Self {
            arm: r.config.variant,
            seed,
            accuracy: r.test_report.accuracy,
            macro_f1: r.test_report.macro_f1,
            macro_auc: r.test_report.macro_auc(),
            dataset_hash: r.dataset_hash.clone(),
            config_hash: run.config.hash(),
            test_cosine_initial: r.test_cosine_initial,
            test_cosine_boundary: r.test_cosine_after(boundary_epoch),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:?}"))
}

pub const ARM_CSV_HEADER: &str =
    "arm,seed,accuracy,macro_f1,macro_auc,test_cosine_initial,test_cosine_boundary,dataset_hash,config_hash";

pub fn arm_csv(rows: &[ArmRow]) -> String {
    let mut s = String::from(ARM_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:?},{:?},{},{},{},{},{}",
            r.arm,
            r.seed,
            r.accuracy,
            r.macro_f1,
            opt(r.macro_auc),
            opt(r.test_cosine_initial),
            opt(r.test_cosine_boundary),
            r.dataset_hash,
            r.config_hash
        );
    }
    s
}

/// Epoch at which the scatter diagnostic is compared across arms: the end of
/// the scatter phase of the full method.
fn boundary_epoch(base: &ExperimentConfig) -> usize {
    base.train.with_variant(Variant::Dtsc).scatter_epochs
}

/// Runs all five presets on the same dataset, split seed and training seed.
///
/// On failure a `manifest.txt` listing completed arms and the error is written.
pub fn cmd_ablate(base: &ExperimentConfig, dir: &Path) -> Result<Vec<ArmRow>, CliError> {
    base.for_variant(Variant::Dtsc).validate()?;
    create_dir(dir)?;
    let b = boundary_epoch(base);
    let mut rows = Vec::new();
    for arm in Variant::ALL {
        let cfg = base.for_variant(arm);
        match run_config(&cfg) {
            Ok(run) => {
                write_run(&run, &dir.join(arm.name()))?;
                rows.push(ArmRow::from_run(&run, cfg.train.seed, b));
            }
            Err(e) => {
                let done: Vec<&str> = rows.iter().map(|r| r.arm.name()).collect();
                let manifest = format!(
                    "completed = {:?}\nfailed = \"{}\"\nerror = {:?}\n",
                    done,
                    arm,
                    e.to_string()
                );
                write(&dir.join("manifest.txt"), &manifest)?;
                write(&dir.join("ablation.csv"), &arm_csv(&rows))?;
                return Err(e);
            }
        }
    }
    write(&dir.join("ablation.csv"), &arm_csv(&rows))?;
    Ok(rows)
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Paired comparison of the full method against one other arm.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedResult {
    pub other: Variant,
    pub accuracy_diff: f64,
    pub accuracy_p: f64,
    pub f1_diff: f64,
    pub f1_p: f64,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub seeds: Vec<u64>,
    pub arms: Vec<Variant>,
    pub rows: Vec<ArmRow>,
    pub paired: Vec<PairedResult>,
}

impl Comparison {
    /// Per-seed values of `f` for `arm`, in seed order.
    pub fn column(&self, arm: Variant, f: impl Fn(&ArmRow) -> f64) -> Vec<f64> {
        self.seeds
            .iter()
            .map(|&s| {
                self.rows
                    .iter()
                    .find(|r| r.arm == arm && r.seed == s)
                    .map(&f)
                    .expect("every arm ran every seed")
            })
            .collect()
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seeds = {:?}", self.seeds);
        let _ = writeln!(s, "\n# arm: accuracy mean ± std | macro_f1 mean ± std");
        for &arm in &self.arms {
            let (am, asd) = mean_std(&self.column(arm, |r| r.accuracy));
            let (fm, fsd) = mean_std(&self.column(arm, |r| r.macro_f1));
            let _ = writeln!(s, "{:<12} {:.4} ± {:.4} | {:.4} ± {:.4}", arm.name(), am, asd, fm, fsd);
        }
        let _ = writeln!(s, "\n# paired t-tests, dtsc minus other arm");
        for p in &self.paired {
            let _ = writeln!(
                s,
                "dtsc vs {:<12} accuracy diff {:+.4} p = {:.6} | macro_f1 diff {:+.4} p = {:.6}",
                p.other.name(),
                p.accuracy_diff,
                p.accuracy_p,
                p.f1_diff,
                p.f1_p
            );
        }
        s
    }
}

/// Runs `arms` for every replicate seed (in parallel) and tests the full
/// method against each other arm with paired t-tests over seeds.
pub fn cmd_compare(base: &ExperimentConfig, seeds: &[u64], arms: &[Variant]) -> Result<Comparison, CliError> {
    if seeds.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs >= 2 seeds, got {}",
            seeds.len()
        )));
    }
    if arms.is_empty() {
        return Err(CliError::Config("compare needs at least one arm".into()));
    }
    for &arm in arms {
        base.for_variant(arm).validate()?;
    }
    let b = boundary_epoch(base);
    let jobs: Vec<(u64, Variant)> = seeds.iter().flat_map(|&s| arms.iter().map(move |&a| (s, a))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(seed, arm)| {
            let cfg = base.reseeded(seed).for_variant(arm);
            run_config(&cfg).map(|run| ArmRow::from_run(&run, seed, b))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut cmp = Comparison {
        seeds: seeds.to_vec(),
        arms: arms.to_vec(),
        rows,
        paired: Vec::new(),
    };
    if arms.contains(&Variant::Dtsc) {
        let dtsc_acc = cmp.column(Variant::Dtsc, |r| r.accuracy);
        let dtsc_f1 = cmp.column(Variant::Dtsc, |r| r.macro_f1);
        for &other in arms.iter().filter(|&&a| a != Variant::Dtsc) {
            let acc = paired_t_test(&dtsc_acc, &cmp.column(other, |r| r.accuracy))?;
            let f1 = paired_t_test(&dtsc_f1, &cmp.column(other, |r| r.macro_f1))?;
            cmp.paired.push(PairedResult {
                other,
                accuracy_diff: acc.mean_diff,
                accuracy_p: acc.p,
                f1_diff: f1.mean_diff,
                f1_p: f1.p,
            });
        }
    }
    Ok(cmp)
}

pub fn write_comparison(cmp: &Comparison, dir: &Path) -> Result<(), CliError> {
    create_dir(dir)?;
    write(&dir.join("compare.csv"), &arm_csv(&cmp.rows))?;
    write(&dir.join("report.txt"), &cmp.report())
}

fn read_export(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("missing export {}: {e}", path.display())))
}

/// Redraws the SVGs of a run directory from its exported CSVs. Returns the files written.
pub fn cmd_plot(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    let mut found = false;
    for name in [SCATTER_BOUNDARY, SCATTER_FINAL] {
        let csv = dir.join(format!("{name}.csv"));
        if !csv.exists() {
            continue;
        }
        found = true;
        let pts =
            parse_scatter_csv(&read_export(&csv)?).map_err(|e| CliError::Runtime(format!("{}: {e}", csv.display())))?;
        let svg =
            scatter_svg(&pts, scatter_title(name)).map_err(|e| CliError::Runtime(format!("{}: {e}", csv.display())))?;
        let out = dir.join(format!("{name}.svg"));
        write(&out, &svg)?;
        written.push(out);
    }
    let csv = dir.join(format!("{SIMILARITY}.csv"));
    if csv.exists() {
        found = true;
        let m = parse_similarity_csv(&read_export(&csv)?)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", csv.display())))?;
        let out = dir.join(format!("{SIMILARITY}.svg"));
        write(&out, &heatmap_svg(&m, SIMILARITY_TITLE)?)?;
        written.push(out);
    }
    if !found {
        return Err(CliError::Runtime(format!(
            "{} has no scatter or similarity exports",
            dir.display()
        )));
    }
    Ok(written)
}
