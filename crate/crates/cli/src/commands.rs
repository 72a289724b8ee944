//! The six subcommands: dataset builds, mask inference, training runs,
//! report tables, raw solver runs, and imitation-parameter sweeps.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use spatial_psl_core::data::{
    build_dataset, load_manifest, load_questions, load_scenes, DataError, DataManifest, Split,
    SplitSpec,
};
use spatial_psl_core::ground::ground;
use spatial_psl_core::infer::{solve_map, SolverConfig};
use spatial_psl_core::matcher::{
    extract_mentions, match_mentions, render_mask, build_psl_problem, MatcherConfig,
};
use spatial_psl_core::nn::{
    load_checkpoint, save_checkpoint, train, train_iterative, DistillConfig,
    DistillMode, L2Kind, ModelConfig, OptimizerKind, QMode, Schedule, TrainConfig, TrainOutcome,
    Variant, VqaDataset,
};
use spatial_psl_core::pipeline::{assemble_split, MaskSource};
use spatial_psl_core::question::{QuestionRecord, ANSWER_VOCAB};
use spatial_psl_core::rule_lang::{parse_evidence, parse_program};
use spatial_psl_core::scene::{Scene, SceneMode};

use crate::config::{Config, ConfigError};

#[derive(Debug)]
pub enum CliError {
    /// exit code 2
    Config(String),
    /// exit code 3
    Input(String),
    /// exit code 4
    Strict(String),
    /// exit code 1
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Strict(_) => 4,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Strict(m) => write!(f, "strict mode: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn internal_err(e: impl std::fmt::Display) -> CliError {
    CliError::Internal(e.to_string())
}

/// Exclusive lock on an output directory; removed on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock, CliError> {
        fs::create_dir_all(dir).map_err(|e| {
            CliError::Input(format!("cannot create {}: {e}", dir.display()))
        })?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Input(
                format!("output directory is locked by another run: {}", path.display()),
            )),
            Err(e) => Err(CliError::Input(format!("cannot lock {}: {e}", path.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

// ---------------------------------------------------------------------------
// Shared config readers
// ---------------------------------------------------------------------------

fn scene_mode(cfg: &Config) -> Result<SceneMode, CliError> {
    match cfg.str_or("data.mode", "sort_of_clevr") {
        "sort_of_clevr" => Ok(SceneMode::SortOfClevr),
        "clevr_lite" => Ok(SceneMode::ClevrLite),
        other => Err(CliError::Config(format!(
            "data.mode: unknown mode `{other}` (expected sort_of_clevr or clevr_lite)"
        ))),
    }
}

fn split_spec(cfg: &Config) -> Result<SplitSpec, CliError> {
    Ok(SplitSpec {
        train: cfg.usize_or("data.train_scenes", 9800)?,
        val: cfg.usize_or("data.val_scenes", 200)?,
        test: cfg.usize_or("data.test_scenes", 200)?,
        questions_per_scene: cfg.usize_or("data.questions_per_scene", 10)?,
    })
}

fn solver_config(cfg: &Config) -> Result<SolverConfig, CliError> {
    Ok(SolverConfig {
        max_iters: cfg.usize_or("solver.max_iters", 20_000)?,
        tol: cfg.f64_or("solver.tol", 1e-7)?,
        step0: cfg.f64_or("solver.step0", 1.0)?,
        seed: None,
    })
}

fn matcher_config(cfg: &Config) -> Result<MatcherConfig, CliError> {
    Ok(MatcherConfig {
        w1: cfg.f64_or("rules.w1", 1.0)?,
        w2: cfg.f64_or("rules.w2", 1.0)?,
        w_conflict: cfg.f64_or("rules.w_conflict", 5.0)?,
        w_exclude: cfg.f64_or("rules.w_exclude", 5.0)?,
        w_prior: cfg.f64_or("rules.w_prior", 0.1)?,
        select_threshold: cfg.f64_or("mask.select_threshold", 0.5)?,
        decay_scale: cfg.f64_or("mask.decay_scale", 1.0)?,
        solver: solver_config(cfg)?,
    })
}

fn q_mode(cfg: &Config) -> Result<QMode, CliError> {
    match cfg.str_or("model.q_encoding", "onehot") {
        "onehot" => Ok(QMode::OneHot),
        "bow" => Ok(QMode::BagOfWords),
        other => Err(CliError::Config(format!(
            "model.q_encoding: unknown encoding `{other}` (expected onehot or bow)"
        ))),
    }
}

fn model_config(
    cfg: &Config,
    manifest: &DataManifest,
    attention: bool,
) -> Result<ModelConfig, CliError> {
    let grid = cfg.usize_or("model.feature_grid", 8)?;
    if grid == 0 || !manifest.image_size.is_multiple_of(grid) {
        return Err(CliError::Config(format!(
            "model.feature_grid: {grid} does not divide the image size {}",
            manifest.image_size
        )));
    }
    let mode = q_mode(cfg)?;
    let (q_dim, vocab_size) = match mode {
        QMode::OneHot => (manifest.onehot_dim, 0),
        QMode::BagOfWords => (
            cfg.usize_or("model.embed_dim", 32)?,
            manifest.token_vocab.len(),
        ),
    };
    let g = cfg.usize_list_or("model.g_widths", &[64, 64, 64, 64])?;
    if g.len() != 4 {
        return Err(CliError::Config(
            "model.g_widths: expected exactly 4 widths".into(),
        ));
    }
    let f = cfg.usize_list_or("model.f_widths", &[64, 64, 32])?;
    if f.len() != 3 {
        return Err(CliError::Config(
            "model.f_widths: expected exactly 3 hidden widths".into(),
        ));
    }
    Ok(ModelConfig {
        regions: grid * grid,
        feat_dim: 5,
        q_dim,
        q_mode: mode,
        vocab_size,
        g_widths: [g[0], g[1], g[2], g[3]],
        f_hidden: [f[0], f[1], f[2]],
        n_classes: ANSWER_VOCAB.len(),
        attention,
    })
}

fn train_config(cfg: &Config) -> Result<TrainConfig, CliError> {
    let optimizer = match cfg.str_or("train.optimizer", "adam") {
        "adam" => OptimizerKind::Adam,
        "sgd" => OptimizerKind::Sgd,
        other => {
            return Err(CliError::Config(format!(
                "train.optimizer: unknown optimizer `{other}`"
            )))
        }
    };
    Ok(TrainConfig {
        lr: cfg.f64_or("train.lr", 1e-4)?,
        batch: cfg.usize_or("train.batch", 64)?,
        epochs: cfg.usize_or("train.epochs", 50)?,
        seed: cfg.u64_or("train.seed", 0)?,
        chunks: cfg.usize_or("train.chunks", 8)?,
        optimizer,
    })
}

fn distill_config(cfg: &Config) -> Result<DistillConfig, CliError> {
    let schedule = match cfg.str_or("distill.schedule", "variable") {
        "fixed" => Schedule::Fixed,
        "variable" => Schedule::Variable,
        other => {
            return Err(CliError::Config(format!(
                "distill.schedule: unknown schedule `{other}`"
            )))
        }
    };
    let l2 = match cfg.str_or("distill.l2", "euclidean") {
        "euclidean" => L2Kind::Euclidean,
        "cross_entropy" => L2Kind::CrossEntropy,
        other => {
            return Err(CliError::Config(format!(
                "distill.l2: unknown loss `{other}`"
            )))
        }
    };
    let mode = match cfg.str_or("distill.mode", "sequential") {
        "sequential" => DistillMode::Sequential,
        "iterative" => DistillMode::Iterative,
        other => {
            return Err(CliError::Config(format!(
                "distill.mode: unknown mode `{other}`"
            )))
        }
    };
    let pi = cfg.f64_or("distill.pi", 0.575)?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(CliError::Config(format!(
            "distill.pi: {pi} outside [0,1]"
        )));
    }
    Ok(DistillConfig {
        pi,
        schedule,
        l2,
        mode,
    })
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

pub fn cmd_gen(cfg: &Config) -> Result<(), CliError> {
    let dir = cfg.path_or("data.dir", "data");
    let _lock = DirLock::acquire(&dir)?;
    let mode = scene_mode(cfg)?;
    let seed = cfg.u64_or("data.seed", 7)?;
    let split = split_spec(cfg)?;
    let manifest = build_dataset(&dir, mode, seed, split)?;
    println!(
        "gen: {} scenes ({} train / {} val / {} test), {} questions per scene -> {}",
        split.train + split.val + split.test,
        split.train,
        split.val,
        split.test,
        manifest.split.questions_per_scene,
        dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// masks
// ---------------------------------------------------------------------------

fn load_split(
    dir: &Path,
    split: Split,
) -> Result<(Vec<Scene>, Vec<QuestionRecord>), CliError> {
    let scenes = load_scenes(dir, split)?;
    let questions = load_questions(dir, split)?;
    Ok((scenes, questions))
}

pub fn cmd_masks(cfg: &Config, only_split: Option<Split>) -> Result<(), CliError> {
    use rayon::prelude::*;

    let data_dir = cfg.path_or("data.dir", "data");
    load_manifest(&data_dir)?;
    let masks_dir = cfg.path_or("mask.out", "masks");
    let _lock = DirLock::acquire(&masks_dir)?;
    let mcfg = matcher_config(cfg)?;
    let strict = cfg.bool_or("solver.strict", false)?;

    let splits: Vec<Split> = match only_split {
        Some(s) => vec![s],
        None => Split::ALL.to_vec(),
    };
    let mut any_nonconverged = 0usize;
    for split in splits {
        let (scenes, questions) = load_split(&data_dir, split)?;
        let by_id: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.scene_id, s)).collect();
        let out = masks_dir.join(split.dir_name());
        fs::create_dir_all(&out).map_err(input_err)?;

        struct Row {
            scene_id: u64,
            q_idx: usize,
            selected: Vec<String>,
            confidences: Vec<f64>,
            tp: usize,
            n_sel: usize,
            n_rel: usize,
            converged: bool,
        }
        let rows: Result<Vec<Row>, CliError> = questions
            .par_iter()
            .map(|q| {
                let scene = by_id
                    .get(&q.scene_id)
                    .ok_or_else(|| CliError::Input(format!("scene {} missing", q.scene_id)))?;
                let mentions = extract_mentions(q).map_err(input_err)?;
                let (problem, _, _) =
                    build_psl_problem(&mentions, scene, &mcfg).map_err(input_err)?;
                let result = match_mentions(&problem).map_err(internal_err)?;
                let selected = result.selected_union();
                let mask =
                    render_mask(scene, &selected, mcfg.decay_scale).map_err(internal_err)?;
                mask.write_pgm(&out.join(format!("{}_{}.pgm", q.scene_id, q.q_idx)))
                    .map_err(input_err)?;
                let relevant: std::collections::BTreeSet<String> =
                    q.relevant_objects.iter().cloned().collect();
                let confidences = selected
                    .iter()
                    .map(|id| {
                        let j = problem.object_ids.iter().position(|o| o == id).unwrap();
                        result
                            .confidence
                            .iter()
                            .map(|row| row[j])
                            .fold(0.0, f64::max)
                    })
                    .collect();
                Ok(Row {
                    scene_id: q.scene_id,
                    q_idx: q.q_idx,
                    tp: selected.intersection(&relevant).count(),
                    n_sel: selected.len(),
                    n_rel: relevant.len(),
                    selected: selected.into_iter().collect(),
                    confidences,
                    converged: result.converged,
                })
            })
            .collect();
        let rows = rows?;

        let csv_path = masks_dir.join(format!("{}_matching.csv", split.dir_name()));
        let mut csv = fs::File::create(&csv_path).map_err(input_err)?;
        writeln!(
            csv,
            "scene_id,q_idx,selected,confidences,tp,n_selected,n_relevant,converged"
        )
        .map_err(input_err)?;
        let (mut tp, mut n_sel, mut n_rel) = (0usize, 0usize, 0usize);
        for r in &rows {
            tp += r.tp;
            n_sel += r.n_sel;
            n_rel += r.n_rel;
            if !r.converged {
                any_nonconverged += 1;
            }
            let confs: Vec<String> = r.confidences.iter().map(|c| format!("{c:.4}")).collect();
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{}",
                r.scene_id,
                r.q_idx,
                r.selected.join("|"),
                confs.join("|"),
                r.tp,
                r.n_sel,
                r.n_rel,
                r.converged
            )
            .map_err(input_err)?;
        }
        let precision = if n_sel == 0 { 0.0 } else { tp as f64 / n_sel as f64 };
        let recall = if n_rel == 0 { 0.0 } else { tp as f64 / n_rel as f64 };
        writeln!(csv, "summary,,,,{tp},{n_sel},{n_rel},P={precision:.4};R={recall:.4}")
            .map_err(input_err)?;
        println!(
            "masks[{}]: {} questions, precision {:.4}, recall {:.4}",
            split.dir_name(),
            rows.len(),
            precision,
            recall
        );
    }
    if strict && any_nonconverged > 0 {
        return Err(CliError::Strict(format!(
            "{any_nonconverged} MAP solves did not converge"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn write_trace(path: &Path, outcome: &TrainOutcome) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(input_err)?;
    writeln!(f, "epoch,split,accuracy,loss").map_err(input_err)?;
    for m in &outcome.metrics {
        writeln!(f, "{},train,{},{}", m.epoch, m.train_acc, m.train_loss).map_err(input_err)?;
        writeln!(f, "{},val,{},{}", m.epoch, m.val_acc, m.val_loss).map_err(input_err)?;
    }
    writeln!(
        f,
        "{},test,{},",
        outcome.metrics.len(),
        outcome.test_acc
    )
    .map_err(input_err)?;
    Ok(())
}

fn assemble_all(
    cfg: &Config,
    data_dir: &Path,
    manifest: &DataManifest,
    with_masks: bool,
) -> Result<VqaDataset, CliError> {
    let grid = cfg.usize_or("model.feature_grid", 8)?;
    let mode = q_mode(cfg)?;
    let masks_dir = cfg.path_or("mask.out", "masks");
    let mut out = VqaDataset::default();
    for split in Split::ALL {
        let (scenes, questions) = load_split(data_dir, split)?;
        let split_masks = masks_dir.join(split.dir_name());
        let source = if with_masks {
            MaskSource::Dir(&split_masks)
        } else {
            MaskSource::None
        };
        let samples = assemble_split(
            &scenes,
            &questions,
            &source,
            grid,
            mode,
            &manifest.token_vocab,
        )
        .map_err(input_err)?;
        match split {
            Split::Train => out.train = samples,
            Split::Val => out.val = samples,
            Split::Test => out.test = samples,
        }
    }
    Ok(out)
}

pub fn cmd_train(cfg: &Config) -> Result<(), CliError> {
    let data_dir = cfg.path_or("data.dir", "data");
    let manifest = load_manifest(&data_dir)?;
    let out_dir = cfg.path_or("train.out", "runs/run");
    let _lock = DirLock::acquire(&out_dir)?;
    let tc = train_config(cfg)?;
    let variant = Variant::from_name(cfg.str_or("train.variant", "baseline")).ok_or_else(|| {
        CliError::Config(format!(
            "train.variant: unknown variant `{}`",
            cfg.str_or("train.variant", "baseline")
        ))
    })?;

    let distill = distill_config(cfg)?;
    if variant == Variant::Student && distill.mode == DistillMode::Iterative {
        let data = assemble_all(cfg, &data_dir, &manifest, true)?;
        let student_cfg = model_config(cfg, &manifest, false)?;
        let teacher_cfg = model_config(cfg, &manifest, false)?;
        let outcome = train_iterative(
            &student_cfg,
            &teacher_cfg,
            Variant::TeacherExternalMask,
            &tc,
            &data,
            &distill,
        )
        .map_err(internal_err)?;
        save_checkpoint(&outcome.student, Variant::Student.name(), &out_dir.join("model.ckpt"))
            .map_err(input_err)?;
        save_checkpoint(
            &outcome.teacher,
            Variant::TeacherExternalMask.name(),
            &out_dir.join("teacher.ckpt"),
        )
        .map_err(input_err)?;
        let mut f = fs::File::create(out_dir.join("trace.csv")).map_err(input_err)?;
        writeln!(f, "epoch,split,accuracy,loss").map_err(input_err)?;
        for m in &outcome.metrics {
            writeln!(f, "{},val,{},{}", m.epoch, m.val_acc, m.val_loss).map_err(input_err)?;
        }
        writeln!(f, "{},test,{},", outcome.metrics.len(), outcome.student_test_acc)
            .map_err(input_err)?;
        println!(
            "train[iterative student]: student test acc {:.4}, teacher test acc {:.4}",
            outcome.student_test_acc, outcome.teacher_test_acc
        );
        return Ok(());
    }

    let (needs_masks, attention) = match variant {
        Variant::Baseline => (false, false),
        Variant::TeacherExternalMask => (true, false),
        Variant::TeacherAttention => (false, true),
        Variant::Student => (true, false), // teacher consumes masked features
    };
    let data = assemble_all(cfg, &data_dir, &manifest, needs_masks)?;
    let mcfg = model_config(cfg, &manifest, attention)?;

    let teacher_loaded;
    let teacher: Option<(&_, Variant)> = if variant == Variant::Student {
        let path = cfg.path("train.teacher").map_err(|_| {
            CliError::Config("train.teacher: the student variant needs a teacher checkpoint".into())
        })?;
        let (model, tag) = load_checkpoint(&path).map_err(input_err)?;
        let tv = Variant::from_name(&tag)
            .ok_or_else(|| CliError::Input(format!("teacher checkpoint has unknown variant `{tag}`")))?;
        teacher_loaded = model;
        Some((&teacher_loaded, tv))
    } else {
        None
    };

    let outcome = train(
        &mcfg,
        &tc,
        variant,
        &data,
        teacher,
        (variant == Variant::Student).then_some(&distill),
    )
    .map_err(internal_err)?;
    save_checkpoint(&outcome.model, variant.name(), &out_dir.join("model.ckpt"))
        .map_err(input_err)?;
    write_trace(&out_dir.join("trace.csv"), &outcome)?;
    println!(
        "train[{}]: {} epochs, final val acc {:.4}, test acc {:.4}",
        variant.name(),
        outcome.metrics.len(),
        outcome.metrics.last().map(|m| m.val_acc).unwrap_or(0.0),
        outcome.test_acc
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn test_acc_from_trace(path: &Path) -> Result<f64, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut acc = None;
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() >= 3 && parts[1] == "test" {
            acc = Some(parts[2].parse::<f64>().map_err(|_| {
                CliError::Input(format!("{}: bad accuracy `{}`", path.display(), parts[2]))
            })?);
        }
    }
    acc.ok_or_else(|| CliError::Input(format!("{}: no test row", path.display())))
}

pub const REPORT_ROWS: [(&str, &str); 5] = [
    ("baseline", "Baseline"),
    ("teacher_external", "Teacher (external mask)"),
    ("teacher_attention", "Teacher (in-network attention)"),
    ("student_external", "Student (external-mask teacher)"),
    ("student_attention", "Student (attention teacher)"),
];

pub fn cmd_report(cfg: &Config) -> Result<(), CliError> {
    let baseline_path = cfg.path("report.baseline").map_err(|_| {
        CliError::Config("report.baseline: a baseline trace is required".into())
    })?;
    let baseline = test_acc_from_trace(&baseline_path)?;
    println!("{:<34} {:>10} {:>10}", "variant", "test acc", "delta");
    println!("{:<34} {:>9.2}% {:>10}", "Baseline", baseline * 100.0, "-");
    for (key, label) in REPORT_ROWS.iter().skip(1) {
        if cfg.raw(&format!("report.{key}")).is_some() {
            let path = cfg.path(&format!("report.{key}"))?;
            let acc = test_acc_from_trace(&path)?;
            println!(
                "{:<34} {:>9.2}% {:>+9.2}%",
                label,
                acc * 100.0,
                (acc - baseline) * 100.0
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// psl
// ---------------------------------------------------------------------------

pub fn cmd_psl(
    program_path: &Path,
    evidence_path: &Path,
    out_path: &Path,
    dump_ground: Option<&Path>,
    cfg: Option<&Config>,
) -> Result<(), CliError> {
    let program_text = fs::read_to_string(program_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", program_path.display())))?;
    let evidence_text = fs::read_to_string(evidence_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", evidence_path.display())))?;
    let program = parse_program(&program_text).map_err(input_err)?;
    let evidence = parse_evidence(&evidence_text).map_err(input_err)?;
    let ps = ground(&program, &evidence).map_err(input_err)?;
    if let Some(path) = dump_ground {
        fs::write(path, ps.dump())
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    }
    let (solver, strict) = match cfg {
        Some(c) => (solver_config(c)?, c.bool_or("solver.strict", false)?),
        None => (SolverConfig::default(), false),
    };
    let (interp, report) = solve_map(&ps, &solver).map_err(internal_err)?;

    let mut lines: Vec<String> = ps
        .free_atoms()
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{} {:.6}", a, interp.values[i]))
        .collect();
    lines.sort();
    let mut f = fs::File::create(out_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", out_path.display())))?;
    for line in &lines {
        writeln!(f, "{line}").map_err(input_err)?;
    }
    println!(
        "psl: {} potentials over {} free atoms, objective {:.6}, converged {}",
        ps.potentials.len(),
        ps.n_free(),
        report.objective,
        report.converged
    );
    if strict && !report.converged {
        return Err(CliError::Strict("MAP solve did not converge".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub fn cmd_sweep(cfg: &Config) -> Result<(), CliError> {
    let data_dir = cfg.path_or("data.dir", "data");
    let manifest = load_manifest(&data_dir)?;
    let out_dir = cfg.path_or("sweep.out", "runs/sweep");
    let _lock = DirLock::acquire(&out_dir)?;
    let pi_values = match cfg.raw("sweep.pi_values") {
        Some(_) => cfg.f64_list("sweep.pi_values")?,
        None => vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.575, 0.6, 0.7, 0.8, 0.9],
    };
    let teacher_path = cfg.path("train.teacher").map_err(|_| {
        CliError::Config("train.teacher: the sweep needs a teacher checkpoint".into())
    })?;
    let (teacher, tag) = load_checkpoint(&teacher_path).map_err(input_err)?;
    let tv = Variant::from_name(&tag)
        .ok_or_else(|| CliError::Input(format!("teacher checkpoint has unknown variant `{tag}`")))?;

    let data = assemble_all(cfg, &data_dir, &manifest, true)?;
    let mcfg = model_config(cfg, &manifest, false)?;
    let tc = train_config(cfg)?;
    let base_distill = distill_config(cfg)?;

    let mut results = Vec::new();
    for &pi in &pi_values {
        let distill = DistillConfig { pi, ..base_distill };
        let outcome = train(
            &mcfg,
            &tc,
            Variant::Student,
            &data,
            Some((&teacher, tv)),
            Some(&distill),
        )
        .map_err(internal_err)?;
        let run_dir = out_dir.join(format!("pi_{pi}"));
        fs::create_dir_all(&run_dir).map_err(input_err)?;
        save_checkpoint(&outcome.model, Variant::Student.name(), &run_dir.join("model.ckpt"))
            .map_err(input_err)?;
        write_trace(&run_dir.join("trace.csv"), &outcome)?;
        println!("sweep: pi = {pi} -> test acc {:.4}", outcome.test_acc);
        results.push((pi, outcome.test_acc));
    }
    let mut csv = fs::File::create(out_dir.join("sweep.csv")).map_err(input_err)?;
    writeln!(csv, "pi,test_accuracy").map_err(input_err)?;
    for (pi, acc) in &results {
        writeln!(csv, "{pi},{acc}").map_err(input_err)?;
    }
    if let Some((pi, acc)) = results
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    {
        println!("sweep: best pi = {pi} with test acc {acc:.4}");
    }
    Ok(())
}
