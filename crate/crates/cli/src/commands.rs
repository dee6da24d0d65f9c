use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use tilerefine::dataio::{
    load_checkpoint, read_report, save_checkpoint, save_depth, write_report, ReportFormat,
    ReportTable, ReportValue,
};
use tilerefine::depth::DepthMap;
use tilerefine::error::{Error, Result};
use tilerefine::models::TileRefiner;
use tilerefine::pipeline::{
    apply_override, attach_pseudo_labels, default_grid, eval_model, load_pseudo_labels,
    noisy_pretrain, prepare_scenes, run_ablation, train_coarse, train_e2e, transfer_finetune,
    write_pseudo_labels, AblationEntry, EvalSummary, ExperimentConfig, PseudoMode, PseudoSource,
    TrainScene,
};
use tilerefine::scenegen::{generate_dataset, load_manifest, load_split, DatasetConfig};
use tilerefine::substrate::ParamStore;
use tilerefine::tiling::{consistency_layouts, make_tile_layout};

use crate::plots;
use crate::{Cli, Command};

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut config = load_config(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    config.validate()?;
    match &cli.command {
        Command::GenData => gen_data(&config, cli.force),
        Command::Pretrain => pretrain(&config),
        Command::TrainCoarse => train_coarse_cmd(&config),
        Command::Train => train_cmd(&config),
        Command::Infer => infer_cmd(&config),
        Command::Eval { pred, gt } => eval_cmd(&mut config, pred, gt),
        Command::Transfer => transfer_cmd(&config),
        Command::Ablate { grid } => ablate_cmd(&config, grid.as_deref()),
        Command::Report { report, pred, gt } => report_cmd(&config, report, pred.as_deref(), gt.as_deref()),
    }
}

fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig> {
    let mut value = match path {
        Some(p) => serde_json::from_slice(&fs::read(p)?)?,
        None => serde_json::to_value(ExperimentConfig::default())?,
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override {item:?} must be KEY=VALUE")))?;
        apply_override(&mut value, key, raw)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut value, "schedule.seed", &seed.to_string())?;
    }
    Ok(serde_json::from_value(value)?)
}

fn runs_root() -> PathBuf {
    std::env::var_os("TILEREFINE_RUNS_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Create `runs/<command>-<timestamp>-s<seed>/` and snapshot the resolved
/// config into it.
fn make_run_dir(command: &str, config: &ExperimentConfig) -> Result<PathBuf> {
    let now = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let dir = runs_root().join(format!(
        "{command}-{}.{:09}-s{}",
        now.as_secs(),
        now.subsec_nanos(),
        config.schedule.seed
    ));
    fs::create_dir_all(&dir)?;
    let mut bytes = serde_json::to_vec_pretty(config)?;
    bytes.push(b'\n');
    fs::write(dir.join("config.json"), bytes)?;
    log::info!("run directory: {}", dir.display());
    Ok(dir)
}

fn gen_data(config: &ExperimentConfig, force: bool) -> Result<()> {
    let dataset_config = DatasetConfig {
        scene: config.scene.clone(),
        splits: config.gen_splits.clone(),
        degrade: config.degrade.clone(),
    };
    let root = PathBuf::from(&config.dataset.root);
    let manifest = generate_dataset(&dataset_config, &root, force)?;
    let total: usize = manifest.splits.iter().map(|s| s.entries.len()).sum();
    log::info!(
        "wrote {total} scenes ({} domain) under {}",
        manifest.domain,
        root.display()
    );
    Ok(())
}

fn patch_size(config: &ExperimentConfig) -> (usize, usize) {
    (
        config.scene.height / config.tiling.rows,
        config.scene.width / config.tiling.cols,
    )
}

fn load_scenes(config: &ExperimentConfig, split: &str) -> Result<Vec<TrainScene>> {
    let root = PathBuf::from(&config.dataset.root);
    let manifest = load_manifest(&root)?;
    let loaded = load_split(&root, &manifest, split)?;
    let (ph, pw) = patch_size(config);
    prepare_scenes(&loaded, ph, pw)
}

fn build_model(config: &ExperimentConfig) -> Result<(TileRefiner, ParamStore<f32>)> {
    let mut store = ParamStore::<f32>::new(config.schedule.seed);
    let model = TileRefiner::build(&mut store, &config.model)?;
    Ok((model, store))
}

fn apply_init(config: &ExperimentConfig, store: &mut ParamStore<f32>) -> Result<()> {
    if let Some(path) = &config.init.coarse_ckpt {
        let ck = load_checkpoint(Path::new(path))?;
        let n = ck.apply(store, Some("coarse."))?.len();
        log::info!("loaded {n} coarse parameters from {path}");
    }
    if let Some(path) = &config.init.refiner_ckpt {
        let ck = load_checkpoint(Path::new(path))?;
        let filter = config
            .init
            .refiner_filter
            .clone()
            .unwrap_or_else(|| "refiner.".to_string());
        let n = ck.apply(store, Some(&filter))?.len();
        log::info!("loaded {n} refiner parameters ({filter}*) from {path}");
    }
    Ok(())
}

fn save_model(dir: &Path, name: &str, store: &ParamStore<f32>, config: &ExperimentConfig) -> Result<PathBuf> {
    let path = dir.join(name);
    save_checkpoint(&path, store, &serde_json::to_value(config)?)?;
    log::info!("checkpoint: {}", path.display());
    Ok(path)
}

fn write_loss_log(dir: &Path, phase: &str, losses: &[f64]) -> Result<()> {
    let mut table = ReportTable::new(
        &format!("{phase} training loss"),
        vec!["epoch".into(), "loss".into()],
    );
    for (i, l) in losses.iter().enumerate() {
        table.push_row(vec![ReportValue::Num(i as f64), ReportValue::Num(*l)])?;
    }
    write_report(&table, &dir.join(format!("{phase}_loss.json")), ReportFormat::Json)?;
    write_report(&table, &dir.join(format!("{phase}_loss.csv")), ReportFormat::Csv)
}

fn pretrain(config: &ExperimentConfig) -> Result<()> {
    let dir = make_run_dir("pretrain", config)?;
    let scenes = load_scenes(config, &config.dataset.train_split)?;
    let (model, mut store) = build_model(config)?;
    apply_init(config, &mut store)?;
    let log = noisy_pretrain(&model, &mut store, &scenes, &config.schedule)?;
    write_loss_log(&dir, "np", &log.epoch_losses)?;
    save_model(&dir, "np.ckpt", &store, config)?;
    Ok(())
}

fn train_coarse_cmd(config: &ExperimentConfig) -> Result<()> {
    let dir = make_run_dir("train-coarse", config)?;
    let scenes = load_scenes(config, &config.dataset.train_split)?;
    let (model, mut store) = build_model(config)?;
    apply_init(config, &mut store)?;
    let log = train_coarse(&model, &mut store, &scenes, &config.schedule)?;
    write_loss_log(&dir, "coarse", &log.epoch_losses)?;
    save_model(&dir, "coarse.ckpt", &store, config)?;
    Ok(())
}

fn train_cmd(config: &ExperimentConfig) -> Result<()> {
    let dir = make_run_dir("train", config)?;
    let scenes = load_scenes(config, &config.dataset.train_split)?;
    let (model, mut store) = build_model(config)?;
    apply_init(config, &mut store)?;
    let log = train_e2e(
        &model,
        &mut store,
        &scenes,
        &config.schedule,
        config.schedule.freeze_coarse_e2e,
    )?;
    write_loss_log(&dir, "e2e", &log.epoch_losses)?;
    save_model(&dir, "model.ckpt", &store, config)?;

    let val = load_scenes(config, &config.dataset.val_split)?;
    let summary = eval_model(
        &model,
        &store,
        &val,
        config.tiling.rows,
        config.tiling.cols,
        &config.eval,
    )?;
    write_summary(&dir, "val_metrics", &summary, config)?;
    Ok(())
}

fn write_summary(
    dir: &Path,
    name: &str,
    summary: &EvalSummary,
    config: &ExperimentConfig,
) -> Result<()> {
    let mut table = ReportTable::new(
        name,
        vec![
            "delta1".into(),
            "rel".into(),
            "rms".into(),
            "silog".into(),
            "see".into(),
            "edge_acc".into(),
            "edge_comp".into(),
            "f1".into(),
            "scenes".into(),
        ],
    );
    table
        .meta
        .insert("edge_tau".into(), serde_json::json!(config.eval.edge_tau));
    table.meta.insert(
        "boundary_theta".into(),
        serde_json::json!(config.eval.boundary_theta),
    );
    table.meta.insert(
        "see_window".into(),
        serde_json::json!(config.eval.see_window),
    );
    table
        .meta
        .insert("seed".into(), serde_json::json!(config.schedule.seed));
    table.push_row(vec![
        ReportValue::Num(summary.delta1),
        ReportValue::Num(summary.rel),
        ReportValue::Num(summary.rms),
        ReportValue::Num(summary.silog),
        ReportValue::Num(summary.see),
        ReportValue::Num(summary.edge_acc),
        ReportValue::Num(summary.edge_comp),
        ReportValue::Num(summary.f1),
        ReportValue::Num(summary.scenes as f64),
    ])?;
    write_report(&table, &dir.join(format!("{name}.json")), ReportFormat::Json)?;
    write_report(&table, &dir.join(format!("{name}.csv")), ReportFormat::Csv)?;
    log::info!(
        "{name}: rms {:.4}, delta1 {:.2}, see {:.3}, f1 {:.2}",
        summary.rms,
        summary.delta1,
        summary.see,
        summary.f1
    );
    Ok(())
}

fn infer_cmd(config: &ExperimentConfig) -> Result<()> {
    let dir = make_run_dir("infer", config)?;
    let ckpt_path = config
        .infer
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::config("infer.checkpoint must point to a model checkpoint"))?;
    let scenes = load_scenes(config, &config.infer.split)?;
    let (model, mut store) = build_model(config)?;
    load_checkpoint(Path::new(ckpt_path))?.apply(&mut store, None)?;
    for scene in &scenes {
        let (h, w) = (scene.rgb.height(), scene.rgb.width());
        let layouts = if config.eval.consistency {
            consistency_layouts(h, w, config.tiling.rows, config.tiling.cols)?
        } else {
            vec![make_tile_layout(h, w, config.tiling.rows, config.tiling.cols, (0, 0))?]
        };
        let (pred, stats) = model.predict_full(&store, &scene.rgb, &layouts)?;
        save_depth(&dir.join(format!("pred_{}.f32", scene.seed)), &pred)?;
        log::info!(
            "scene {}: {} coarse + {} refiner passes",
            scene.seed,
            stats.coarse_passes,
            stats.refiner_passes
        );
    }
    log::info!("wrote {} predictions to {}", scenes.len(), dir.display());
    Ok(())
}

/// Match prediction files to ground-truth files by the trailing
/// `_<seed>.f32` suffix.
fn eval_cmd(config: &mut ExperimentConfig, pred_dir: &Path, gt_dir: &Path) -> Result<()> {
    let dir = make_run_dir("eval", config)?;
    let mut pairs: Vec<(u64, PathBuf, PathBuf)> = Vec::new();
    for entry in fs::read_dir(pred_dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !name.ends_with(".f32") {
            continue;
        }
        let Some(seed) = trailing_seed(name) else {
            continue;
        };
        let gt = ["depth_clean", "depth", "pred", "pseudo"]
            .iter()
            .map(|prefix| gt_dir.join(format!("{prefix}_{seed}.f32")))
            .find(|p| p.exists())
            .ok_or_else(|| {
                Error::config(format!("no ground-truth map for seed {seed} in {}", gt_dir.display()))
            })?;
        pairs.push((seed, path, gt));
    }
    if pairs.is_empty() {
        return Err(Error::config(format!(
            "no .f32 predictions found in {}",
            pred_dir.display()
        )));
    }
    pairs.sort();

    use tilerefine::metrics::{
        boundary_metrics, extract_edges, scale_metrics, soft_edge_error,
    };
    let mut table = ReportTable::new(
        "evaluation",
        vec![
            "seed".into(),
            "delta1".into(),
            "rel".into(),
            "rms".into(),
            "silog".into(),
            "see".into(),
            "edge_acc".into(),
            "edge_comp".into(),
            "f1".into(),
        ],
    );
    table
        .meta
        .insert("edge_tau".into(), serde_json::json!(config.eval.edge_tau));
    table.meta.insert(
        "boundary_theta".into(),
        serde_json::json!(config.eval.boundary_theta),
    );
    table.meta.insert(
        "see_window".into(),
        serde_json::json!(config.eval.see_window),
    );
    for (seed, pred_path, gt_path) in &pairs {
        let pred = tilerefine::dataio::load_depth(pred_path)?;
        let gt = tilerefine::dataio::load_depth(gt_path)?;
        let mask: Vec<bool> = pred
            .valid()
            .iter()
            .zip(gt.valid())
            .map(|(&a, &b)| a && b)
            .collect();
        let scale = scale_metrics(pred.values(), gt.values(), &mask)?;
        let pe = extract_edges(&pred, config.eval.edge_tau)?;
        let ge = extract_edges(&gt, config.eval.edge_tau)?;
        let boundary = boundary_metrics(&pe, &ge, config.eval.boundary_theta)?;
        let see = soft_edge_error(&pred, &gt, config.eval.see_window, config.eval.edge_tau)?;
        table.push_row(vec![
            ReportValue::Num(*seed as f64),
            ReportValue::Num(scale.delta1),
            ReportValue::Num(scale.rel),
            ReportValue::Num(scale.rms),
            ReportValue::Num(scale.silog),
            ReportValue::Num(see),
            ReportValue::Num(boundary.edge_acc),
            ReportValue::Num(boundary.edge_comp),
            ReportValue::Num(boundary.f1),
        ])?;
    }
    write_report(&table, &dir.join("eval.json"), ReportFormat::Json)?;
    write_report(&table, &dir.join("eval.csv"), ReportFormat::Csv)?;
    log::info!("evaluated {} maps; report in {}", pairs.len(), dir.display());
    Ok(())
}

fn trailing_seed(name: &str) -> Option<u64> {
    let stem = name.strip_suffix(".f32")?;
    let idx = stem.rfind('_')?;
    stem[idx + 1..].parse().ok()
}

fn transfer_cmd(config: &ExperimentConfig) -> Result<()> {
    let dir = make_run_dir("transfer", config)?;
    let mut scenes = load_scenes(config, &config.dataset.train_split)?;
    let (model, mut store) = build_model(config)?;
    if let Some(path) = &config.transfer.student_ckpt {
        load_checkpoint(Path::new(path))?.apply(&mut store, None)?;
    } else {
        return Err(Error::config("transfer.student_ckpt is required"));
    }

    if config.loss.lambda > 0.0 {
        let teacher_path = config
            .transfer
            .teacher_ckpt
            .as_ref()
            .ok_or_else(|| Error::config("transfer.teacher_ckpt is required when lambda > 0"))?;
        let mut teacher_store = ParamStore::<f32>::new(config.schedule.seed);
        let teacher = TileRefiner::build(&mut teacher_store, &config.model)?;
        load_checkpoint(Path::new(teacher_path))?.apply(&mut teacher_store, None)?;
        match config.transfer.pseudo_mode {
            PseudoMode::Offline => {
                let pseudo_dir = config
                    .transfer
                    .pseudo_dir
                    .as_ref()
                    .map(PathBuf::from)
                    .unwrap_or_else(|| dir.join("pseudo"));
                if !pseudo_dir.join(format!("pseudo_{}.f32", scenes[0].seed)).exists() {
                    write_pseudo_labels(
                        &teacher,
                        &teacher_store,
                        &scenes,
                        config.tiling.rows,
                        config.tiling.cols,
                        &pseudo_dir,
                    )?;
                }
                let maps = load_pseudo_labels(&pseudo_dir, &scenes)?;
                attach_pseudo_labels(&mut scenes, &PseudoSource::Offline(maps))?;
            }
            PseudoMode::Online => {
                let source = PseudoSource::Online {
                    teacher: &teacher,
                    store: &teacher_store,
                    rows: config.tiling.rows,
                    cols: config.tiling.cols,
                };
                attach_pseudo_labels(&mut scenes, &source)?;
            }
        }
    }

    let val = load_scenes(config, &config.dataset.val_split)?;
    let mut epoch_summaries = Vec::new();
    let log = transfer_finetune(
        &model,
        &mut store,
        &scenes,
        &config.loss,
        &config.schedule,
        |epoch, store| {
            let summary = eval_model(
                &model,
                store,
                &val,
                config.tiling.rows,
                config.tiling.cols,
                &config.eval,
            )?;
            log::info!(
                "transfer epoch {epoch}: rms {:.4}, f1 {:.2}",
                summary.rms,
                summary.f1
            );
            epoch_summaries.push(summary);
            Ok(())
        },
    )?;
    write_loss_log(&dir, "transfer", &log.epoch_losses)?;
    save_model(&dir, "transfer.ckpt", &store, config)?;
    if let Some(last) = epoch_summaries.last() {
        write_summary(&dir, "val_metrics", last, config)?;
    }
    Ok(())
}

fn ablate_cmd(config: &ExperimentConfig, grid: Option<&Path>) -> Result<()> {
    let dir = make_run_dir("ablate", config)?;
    let entries: Vec<AblationEntry> = match grid {
        Some(path) => serde_json::from_slice(&fs::read(path)?)?,
        None => default_grid(),
    };
    let train = load_scenes(config, &config.dataset.train_split)?;
    let eval = load_scenes(config, &config.dataset.val_split)?;
    let (table, _) = run_ablation(
        &entries,
        &train,
        &eval,
        &config.model,
        &config.schedule,
        &config.tiling,
        &config.eval,
    )?;
    write_report(&table, &dir.join("ablation.json"), ReportFormat::Json)?;
    write_report(&table, &dir.join("ablation.csv"), ReportFormat::Csv)?;
    plots::ablation_bars(&table, &dir)?;
    log::info!("{} grid rows; report in {}", table.rows.len(), dir.display());
    Ok(())
}

fn report_cmd(
    config: &ExperimentConfig,
    report: &Path,
    pred: Option<&Path>,
    gt: Option<&Path>,
) -> Result<()> {
    let dir = make_run_dir("report", config)?;
    let table = read_report(report)?;
    plots::ablation_bars(&table, &dir)?;
    if let Some(pred_dir) = pred {
        let mut count = 0;
        for entry in fs::read_dir(pred_dir)? {
            let path = entry?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            if !name.ends_with(".f32") {
                continue;
            }
            let map = tilerefine::dataio::load_depth(&path)?;
            let png = dir.join(format!("{}.png", name.trim_end_matches(".f32")));
            plots::depth_png(&map, config.scene.depth_min, config.scene.depth_max, &png)?;
            if let Some(gt_dir) = gt {
                if let Some(seed) = trailing_seed(name) {
                    for prefix in ["depth_clean", "depth"] {
                        let gt_path = gt_dir.join(format!("{prefix}_{seed}.f32"));
                        if gt_path.exists() {
                            let gt_map = tilerefine::dataio::load_depth(&gt_path)?;
                            let err_png = dir.join(format!(
                                "{}_error.png",
                                name.trim_end_matches(".f32")
                            ));
                            plots::error_png(&map, &gt_map, &err_png)?;
                            break;
                        }
                    }
                }
            }
            count += 1;
        }
        log::info!("rendered {count} depth maps");
    }
    log::info!("plots in {}", dir.display());
    Ok(())
}

// DepthMap import is used throughout signature-free helpers above.
#[allow(unused)]
fn _type_anchor(_: &DepthMap) {}
