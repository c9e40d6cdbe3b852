//! Browser demo. Each exported function wraps a plain Rust function that
//! returns a serialisable view, so the logic is testable natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use dtsc_core::datagen::{make_blobs, split_semi};
use dtsc_core::numerics::{pca_project_2d, Matrix};
use dtsc_core::plot::{heatmap_svg, scatter_svg, ScatterPoint};
use dtsc_core::scatter::{info_nce, InfoNceVariant, MemoryBank};
use dtsc_core::trainer::{run_experiment, FeatureSnapshot, RunResult, TrainConfig, Variant};

const CLASSES: usize = 4;
const DIM: usize = 16;
const PER_CLASS: usize = 160;
const EPOCHS: usize = 20;

fn train(preset: &str, seed: u64, scatter_epochs: usize) -> Result<RunResult, String> {
    let variant = Variant::from_name(preset).map_err(|e| e.to_string())?;
    let mut ds = make_blobs(&[PER_CLASS; CLASSES], DIM, 0.3, 0.22, seed).map_err(|e| e.to_string())?;
    ds.assign_splits(0.125, 0.25, seed).map_err(|e| e.to_string())?;
    let mut cfg = TrainConfig {
        epochs: EPOCHS,
        seed,
        ..TrainConfig::default()
    }
    .with_variant(variant);
    if cfg.has_scatter_phase() {
        cfg.scatter_epochs = scatter_epochs.min(EPOCHS - 1);
    }
    let frac = if variant.forces_full_labels() { 1.0 } else { 0.1 };
    let split = split_semi(&ds, frac, seed).map_err(|e| e.to_string())?;
    cfg.validate().map_err(|e| e.to_string())?;
    run_experiment(&cfg, &ds, &split).map_err(|e| e.to_string())
}

fn scatter_plot(snap: &FeatureSnapshot, title: &str) -> Result<String, String> {
    let p = pca_project_2d(&snap.features).map_err(|e| e.to_string())?;
    let pts: Vec<ScatterPoint> = snap
        .labels
        .iter()
        .enumerate()
        .map(|(i, &label)| ScatterPoint {
            x: p.points[(i, 0)],
            y: p.points[(i, 1)],
            label,
        })
        .collect();
    scatter_svg(&pts, title).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct TrainView {
    pub preset: String,
    pub scatter_epochs: usize,
    pub accuracy: Vec<f64>,
    /// Mean pairwise test cosine at initialisation and after each epoch.
    pub cosine: Vec<Option<f64>>,
    pub test_accuracy: f64,
    pub boundary_svg: String,
    pub final_svg: String,
}

pub fn train_view(preset: &str, seed: u64, scatter_epochs: usize) -> Result<TrainView, String> {
    let r = train(preset, seed, scatter_epochs)?;
    let mut cosine = vec![r.test_cosine_initial];
    cosine.extend(r.test_cosine.iter().copied());
    Ok(TrainView {
        preset: r.config.variant.name().to_string(),
        scatter_epochs: r.config.scatter_epochs,
        accuracy: r.rows.iter().map(|row| row.accuracy).collect(),
        cosine,
        test_accuracy: r.test_report.accuracy,
        boundary_svg: scatter_plot(&r.boundary_snapshot, "after the scatter phase")?,
        final_svg: scatter_plot(&r.final_snapshot, "after the final epoch")?,
    })
}

#[derive(Debug, Serialize)]
pub struct SimilarityView {
    pub rows: usize,
    pub cols: usize,
    pub svg: String,
}

/// Cosine similarity of test features to the reference pool after a run of `preset`.
/// Presets without RL-c get a pool built from the consistency teacher.
pub fn similarity_view(preset: &str, seed: u64) -> Result<SimilarityView, String> {
    let r = train(preset, seed, 5)?;
    let m = r.similarity.ok_or_else(|| "every test feature is zero".to_string())?;
    Ok(SimilarityView {
        rows: m.rows(),
        cols: m.cols(),
        svg: heatmap_svg(&m, "test features vs reference pool (cosine)").map_err(|e| e.to_string())?,
    })
}

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub tau: f64,
    pub loss: f64,
}

/// InfoNCE of one query over a temperature sweep. The positive key sits at
/// cosine `pos_cos` to the query and all `bank_size` negatives at `neg_cos`.
pub fn info_nce_curve(pos_cos: f64, neg_cos: f64, bank_size: usize) -> Result<Vec<CurvePoint>, String> {
    if !(-1.0..=1.0).contains(&pos_cos) || !(-1.0..=1.0).contains(&neg_cos) {
        return Err("cosines must lie in [-1, 1]".into());
    }
    if bank_size == 0 {
        return Err("the bank needs at least one negative".into());
    }
    // Keys are built in the plane of e0 and a per-key orthogonal axis.
    let dim = bank_size + 2;
    let key = |cos: f64, axis: usize| {
        let mut v = vec![0.0; dim];
        v[0] = cos;
        v[axis] = (1.0 - cos * cos).max(0.0).sqrt();
        v
    };
    let mut q = vec![0.0; dim];
    q[0] = 1.0;
    let negatives: Vec<Vec<f64>> = (0..bank_size).map(|j| key(neg_cos, j + 2)).collect();
    let mut bank = MemoryBank::new(bank_size, dim).map_err(|e| e.to_string())?;
    bank.enqueue(&Matrix::from_rows(&negatives).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let pos = key(pos_cos, 1);
    (0..60)
        .map(|i| {
            let tau = 0.05 * (40.0f64).powf(i as f64 / 59.0);
            info_nce(&q, &pos, &bank, tau, InfoNceVariant::IncludePositive)
                .map(|(loss, _)| CurvePoint { tau, loss })
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn train_demo(preset: &str, seed: u32, scatter_epochs: u32) -> Result<String, JsError> {
    to_js(train_view(preset, seed as u64, scatter_epochs as usize))
}

#[wasm_bindgen]
pub fn similarity_demo(preset: &str, seed: u32) -> Result<String, JsError> {
    to_js(similarity_view(preset, seed as u64))
}

#[wasm_bindgen]
pub fn info_nce_demo(pos_cos: f64, neg_cos: f64, bank_size: u32) -> Result<String, JsError> {
    to_js(info_nce_curve(pos_cos, neg_cos, bank_size as usize))
}
