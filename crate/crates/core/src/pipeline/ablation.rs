//! Ablation grid runner: trains and evaluates every configuration with a
//! shared seed and emits one report row per entry. Entry failures are
//! recorded in the row; the grid keeps going.

use super::train::{eval_model, noisy_pretrain, train_coarse, train_e2e, EvalSummary};
use super::{EvalConfig, Schedule, TilingConfig, TrainScene};
use crate::dataio::{ReportTable, ReportValue};
use crate::error::Result;
use crate::models::{GduMode, ModelConfig, TileRefiner};
use crate::substrate::{ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AblationEntry {
    pub label: String,
    pub use_c2f: bool,
    pub gdu_mode: GduMode,
    /// Co-train the coarse branch; otherwise the refiner trains against a
    /// frozen coarse branch (staged).
    pub e2e: bool,
    /// Run noisy pretraining before the refinement phase.
    pub np: bool,
    /// Refiner encoder preset override (`s`/`m`/`l`).
    pub preset: Option<String>,
}

impl Default for AblationEntry {
    fn default() -> Self {
        AblationEntry {
            label: "full".into(),
            use_c2f: true,
            gdu_mode: GduMode::Full,
            e2e: true,
            np: true,
            preset: None,
        }
    }
}

/// The standard grid: residual decoder alone (staged), end-to-end training,
/// the denoising pass, noisy pretraining, and the two gate variants.
pub fn default_grid() -> Vec<AblationEntry> {
    vec![
        AblationEntry {
            label: "f2c".into(),
            use_c2f: false,
            e2e: false,
            np: false,
            ..AblationEntry::default()
        },
        AblationEntry {
            label: "f2c+e2e".into(),
            use_c2f: false,
            np: false,
            ..AblationEntry::default()
        },
        AblationEntry {
            label: "f2c+e2e+c2f".into(),
            np: false,
            ..AblationEntry::default()
        },
        AblationEntry {
            label: "full".into(),
            ..AblationEntry::default()
        },
        AblationEntry {
            label: "gdu_none".into(),
            gdu_mode: GduMode::None,
            np: false,
            ..AblationEntry::default()
        },
        AblationEntry {
            label: "gdu_f2c_style".into(),
            gdu_mode: GduMode::F2cStyle,
            np: false,
            ..AblationEntry::default()
        },
    ]
}

#[derive(Debug, Clone)]
pub struct AblationOutcome {
    pub label: String,
    pub summary: Option<EvalSummary>,
    pub error: Option<String>,
}

/// Train the shared coarse branch once; entries reuse it by name.
fn coarse_donor(
    base: &ModelConfig,
    schedule: &Schedule,
    train_scenes: &[TrainScene],
) -> Result<Vec<(String, Tensor<f32>)>> {
    let cfg = ModelConfig {
        use_c2f: false,
        ..base.clone()
    };
    let mut store = ParamStore::<f32>::new(schedule.seed);
    let model = TileRefiner::build(&mut store, &cfg)?;
    train_coarse(&model, &mut store, train_scenes, schedule)?;
    Ok(store
        .iter()
        .filter(|(_, name, _)| name.starts_with("coarse."))
        .map(|(_, name, t)| (name.to_string(), t.clone()))
        .collect())
}

fn run_entry(
    entry: &AblationEntry,
    base: &ModelConfig,
    schedule: &Schedule,
    tiling: &TilingConfig,
    eval_cfg: &EvalConfig,
    train_scenes: &[TrainScene],
    eval_scenes: &[TrainScene],
    coarse_params: &[(String, Tensor<f32>)],
) -> Result<EvalSummary> {
    let mut cfg = ModelConfig {
        use_c2f: entry.use_c2f,
        gdu_mode: entry.gdu_mode,
        ..base.clone()
    };
    if let Some(preset) = &entry.preset {
        cfg = cfg.with_preset(preset)?;
    }
    let mut store = ParamStore::<f32>::new(schedule.seed);
    let model = TileRefiner::build(&mut store, &cfg)?;
    for (name, tensor) in coarse_params {
        if let Some(id) = store.id_of(name) {
            store.get_mut(id).data_mut().copy_from_slice(tensor.data());
        }
    }
    if entry.np {
        noisy_pretrain(&model, &mut store, train_scenes, schedule)?;
    }
    train_e2e(&model, &mut store, train_scenes, schedule, !entry.e2e)?;
    eval_model(
        &model,
        &store,
        eval_scenes,
        tiling.rows,
        tiling.cols,
        eval_cfg,
    )
}

/// Run every entry with shared seeds; one row per entry.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    entries: &[AblationEntry],
    train_scenes: &[TrainScene],
    eval_scenes: &[TrainScene],
    base: &ModelConfig,
    schedule: &Schedule,
    tiling: &TilingConfig,
    eval_cfg: &EvalConfig,
) -> Result<(ReportTable, Vec<AblationOutcome>)> {
    let coarse_params = coarse_donor(base, schedule, train_scenes)?;
    let mut table = ReportTable::new(
        "ablation",
        [
            "label", "e2e", "c2f", "np", "gdu", "rmse", "delta1", "rel", "silog", "see", "f1",
            "status",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    table.meta.insert("seed".into(), serde_json::json!(schedule.seed));
    table.meta.insert(
        "edge_tau".into(),
        serde_json::json!(eval_cfg.edge_tau),
    );
    table.meta.insert(
        "boundary_theta".into(),
        serde_json::json!(eval_cfg.boundary_theta),
    );
    let mut outcomes = Vec::with_capacity(entries.len());
    for entry in entries {
        let result = run_entry(
            entry,
            base,
            schedule,
            tiling,
            eval_cfg,
            train_scenes,
            eval_scenes,
            &coarse_params,
        );
        let gdu = match entry.gdu_mode {
            GduMode::Full => "full",
            GduMode::None => "none",
            GduMode::F2cStyle => "f2c_style",
        };
        let flag = |b: bool| ReportValue::Text(if b { "yes" } else { "no" }.into());
        match result {
            Ok(summary) => {
                table.push_row(vec![
                    ReportValue::Text(entry.label.clone()),
                    flag(entry.e2e),
                    flag(entry.use_c2f),
                    flag(entry.np),
                    ReportValue::Text(gdu.into()),
                    ReportValue::Num(summary.rms),
                    ReportValue::Num(summary.delta1),
                    ReportValue::Num(summary.rel),
                    ReportValue::Num(summary.silog),
                    ReportValue::Num(summary.see),
                    ReportValue::Num(summary.f1),
                    ReportValue::Text("ok".into()),
                ])?;
                outcomes.push(AblationOutcome {
                    label: entry.label.clone(),
                    summary: Some(summary),
                    error: None,
                });
            }
            Err(e) => {
                let msg = e.to_string();
                table.push_row(vec![
                    ReportValue::Text(entry.label.clone()),
                    flag(entry.e2e),
                    flag(entry.use_c2f),
                    flag(entry.np),
                    ReportValue::Text(gdu.into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text("-".into()),
                    ReportValue::Text(msg.clone()),
                ])?;
                outcomes.push(AblationOutcome {
                    label: entry.label.clone(),
                    summary: None,
                    error: Some(msg),
                });
            }
        }
    }
    Ok((table, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::prepare_scenes;
    use crate::scenegen::{generate_scene, LoadedScene, SceneParams};

    #[test]
    fn grid_produces_one_row_per_entry_and_survives_failures() {
        let params = SceneParams {
            height: 32,
            width: 64,
            n_primitives: 3,
            ..SceneParams::default()
        };
        let loaded: Vec<LoadedScene> = (0..2)
            .map(|i| {
                let s = generate_scene(i, &params).unwrap();
                LoadedScene {
                    seed: s.seed,
                    rgb: s.rgb,
                    depth: s.depth,
                    clean_depth: None,
                }
            })
            .collect();
        let scenes = prepare_scenes(&loaded, 16, 32).unwrap();
        let base = ModelConfig {
            refiner_widths: vec![4, 8],
            coarse_widths: vec![4, 8],
            levels: 2,
            c2f_layers: 2,
            ..ModelConfig::default()
        };
        let schedule = Schedule {
            np_epochs: 1,
            coarse_epochs: 1,
            e2e_epochs: 1,
            transfer_epochs: 0,
            lr: 1e-3,
            patches_per_step: 1,
            seed: 11,
            freeze_coarse_e2e: false,
            coarse_lr_scale: 1.0,
        };
        let entries = vec![
            AblationEntry {
                label: "f2c".into(),
                use_c2f: false,
                e2e: false,
                np: false,
                ..AblationEntry::default()
            },
            AblationEntry {
                label: "full".into(),
                ..AblationEntry::default()
            },
            // bad preset: recorded as a failure, grid continues
            AblationEntry {
                label: "broken".into(),
                preset: Some("xxl".into()),
                ..AblationEntry::default()
            },
        ];
        let (table, outcomes) = run_ablation(
            &entries,
            &scenes,
            &scenes,
            &base,
            &schedule,
            &TilingConfig { rows: 2, cols: 2 },
            &EvalConfig::default(),
        )
        .unwrap();
        assert_eq!(table.rows.len(), 3);
        assert_eq!(outcomes.len(), 3);
        assert!(outcomes[0].summary.is_some());
        assert!(outcomes[1].summary.is_some());
        assert!(outcomes[2].error.is_some());
        let status_col = table.column_index("status").unwrap();
        assert_eq!(table.rows[0][status_col], ReportValue::Text("ok".into()));
        assert!(matches!(&table.rows[2][status_col], ReportValue::Text(s) if s != "ok"));
    }
}
