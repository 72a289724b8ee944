//! Mention-to-object matching via the soft-logic engine, spatial mask
//! rendering, and matching-quality evaluation.
//!
//! A question is inverted into mentions (attribute constraints plus
//! inter-mention relations), compiled into a weighted program over
//! `candidate(M,O)` atoms with observed `attr_o` / `attr_m` / `consistent`
//! evidence (explicit 0.0 negatives included), and solved with MAP
//! inference. Matched objects are rendered as a union of distance-decay
//! heatmaps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::ground;
use crate::img::{MaskGrid, RGBImage};
use crate::infer::{solve_map, SolverConfig};
use crate::question::{AttrKind, QuestionRecord};
use crate::rule_lang::{parse_evidence, parse_program, EvidenceSet, GroundAtom, Program};
use crate::scene::{spatial_relations, RelationTable, Scene};

#[derive(Debug, Error)]
pub enum MatchError {
    #[error("unknown template for question text `{0}`")]
    UnknownTemplate(String),
    #[error("unknown word `{word}` in mention phrase `{phrase}`")]
    UnknownWord { word: String, phrase: String },
    #[error("mention `{0}` has no constraints and no relations")]
    EmptyMention(String),
    #[error("mention `{mention}` references missing relation target `{target}`")]
    MissingRelationTarget { mention: String, target: String },
    #[error("unknown object id `{0}`")]
    UnknownObject(String),
    #[error("image is {iw}x{ih} but mask is {mw}x{mh}")]
    DimensionMismatch {
        iw: usize,
        ih: usize,
        mw: usize,
        mh: usize,
    },
    #[error("empty evaluation dataset")]
    EmptyDataset,
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Ground(#[from] crate::ground::GroundError),
    #[error(transparent)]
    Infer(#[from] crate::infer::InferError),
    #[error("internal program error: {0}")]
    Program(#[from] crate::rule_lang::ParseError),
}

/// Relations a mention can hold toward another mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelKind {
    LeftOf,
    RightOf,
    Above,
    Below,
    Closest,
    Furthest,
    SameShape,
}

impl RelKind {
    pub fn word(&self) -> &'static str {
        match self {
            RelKind::LeftOf => "left",
            RelKind::RightOf => "right",
            RelKind::Above => "above",
            RelKind::Below => "below",
            RelKind::Closest => "closest",
            RelKind::Furthest => "furthest",
            RelKind::SameShape => "same_shape",
        }
    }

    /// Whether the relation holds for objects `a`, `b` of the scene.
    fn holds(&self, scene: &Scene, table: &RelationTable, a: &str, b: &str) -> bool {
        match self {
            RelKind::LeftOf => table.left_of(a, b),
            RelKind::RightOf => table.right_of(a, b),
            RelKind::Above => table.above(a, b),
            RelKind::Below => table.below(a, b),
            RelKind::Closest => a != b && table.nearest(b) == a,
            RelKind::Furthest => a != b && table.furthest(b) == a,
            RelKind::SameShape => {
                scene.object(a).map(|o| o.shape) == scene.object(b).map(|o| o.shape)
            }
        }
    }

    /// Same-shape admits reflexive pairs (an object trivially shares its own
    /// shape); the spatial relations do not.
    fn reflexive(&self) -> bool {
        matches!(self, RelKind::SameShape)
    }

    /// The relation seen from the other mention, when one exists. Inverse
    /// edges let support flow both ways along a reference chain; nearest/
    /// furthest do not invert.
    fn inverse(&self) -> Option<RelKind> {
        match self {
            RelKind::LeftOf => Some(RelKind::RightOf),
            RelKind::RightOf => Some(RelKind::LeftOf),
            RelKind::Above => Some(RelKind::Below),
            RelKind::Below => Some(RelKind::Above),
            RelKind::SameShape => Some(RelKind::SameShape),
            RelKind::Closest | RelKind::Furthest => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    /// Referential mention: the best-scoring object, if above threshold.
    Argmax,
    /// Set-valued mention (count templates): all objects above threshold.
    ThresholdSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub id: String,
    pub constraints: Vec<(AttrKind, String)>,
    pub relations: Vec<(RelKind, String)>,
    pub select: SelectMode,
}

#[derive(Debug, Clone)]
pub struct MatcherConfig {
    pub w1: f64,
    pub w2: f64,
    /// Penalty for attribute-conflicting pairs (the object holds a different
    /// value for a constrained attribute).
    pub w_conflict: f64,
    /// Penalty for jointly asserting relationally inconsistent pairings;
    /// this is where the explicit 0.0 `consistent` negatives bite.
    pub w_exclude: f64,
    /// Weak negative prior that breaks the all-ones optimum.
    pub w_prior: f64,
    pub select_threshold: f64,
    /// Gaussian decay scale: sigma = decay_scale * object radius.
    pub decay_scale: f64,
    pub solver: SolverConfig,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            w1: 1.0,
            w2: 1.0,
            w_conflict: 5.0,
            w_exclude: 5.0,
            w_prior: 0.1,
            select_threshold: 0.5,
            decay_scale: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MatchProblem {
    pub mentions: Vec<Mention>,
    pub object_ids: Vec<String>,
    pub program: Program,
    pub evidence: EvidenceSet,
    pub select_threshold: f64,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    /// `confidence[m][o]` for mention m, object o (problem ordering).
    pub confidence: Vec<Vec<f64>>,
    pub selected: BTreeMap<String, BTreeSet<String>>,
    pub converged: bool,
}

impl MatchResult {
    pub fn selected_union(&self) -> BTreeSet<String> {
        self.selected.values().flatten().cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// Mention extraction (exact template inversion)
// ---------------------------------------------------------------------------

const COLOR_WORDS: [&str; 6] = ["red", "green", "blue", "yellow", "orange", "gray"];
const SHAPE_WORDS: [&str; 5] = ["circle", "rectangle", "cube", "sphere", "cylinder"];
const SIZE_WORDS: [&str; 2] = ["small", "large"];
const MATERIAL_WORDS: [&str; 2] = ["metal", "matte"];

fn classify_word(word: &str, phrase: &str) -> Result<(AttrKind, String), MatchError> {
    if COLOR_WORDS.contains(&word) {
        Ok((AttrKind::Color, word.to_string()))
    } else if SHAPE_WORDS.contains(&word) {
        Ok((AttrKind::Shape, word.to_string()))
    } else if SIZE_WORDS.contains(&word) {
        Ok((AttrKind::Size, word.to_string()))
    } else if MATERIAL_WORDS.contains(&word) {
        Ok((AttrKind::Material, word.to_string()))
    } else {
        Err(MatchError::UnknownWord {
            word: word.to_string(),
            phrase: phrase.to_string(),
        })
    }
}

fn parse_noun_phrase(phrase: &str) -> Result<Vec<(AttrKind, String)>, MatchError> {
    let mut constraints = Vec::new();
    for w in phrase.split_whitespace() {
        constraints.push(classify_word(w, phrase)?);
    }
    constraints.sort();
    Ok(constraints)
}

fn color_mention(id: &str, color_word: &str, text: &str) -> Result<Mention, MatchError> {
    if !COLOR_WORDS.contains(&color_word) {
        return Err(MatchError::UnknownTemplate(text.to_string()));
    }
    Ok(Mention {
        id: id.to_string(),
        constraints: vec![(AttrKind::Color, color_word.to_string())],
        relations: vec![],
        select: SelectMode::Argmax,
    })
}

/// Invert a generated question back into its mentions. Inversion is exact
/// because every question comes from a known template.
pub fn extract_mentions(q: &QuestionRecord) -> Result<Vec<Mention>, MatchError> {
    let text = q.text.as_str();

    if let Some(rest) = text.strip_prefix("What is the shape of the object closest to the ") {
        let color = rest.strip_suffix(" object?").ok_or_else(unknown(text))?;
        return Ok(vec![
            Mention {
                id: "x0".into(),
                constraints: vec![],
                relations: vec![(RelKind::Closest, "x1".into())],
                select: SelectMode::Argmax,
            },
            color_mention("x1", color, text)?,
        ]);
    }
    if let Some(rest) = text.strip_prefix("What is the shape of the object furthest from the ") {
        let color = rest.strip_suffix(" object?").ok_or_else(unknown(text))?;
        return Ok(vec![
            Mention {
                id: "x0".into(),
                constraints: vec![],
                relations: vec![(RelKind::Furthest, "x1".into())],
                select: SelectMode::Argmax,
            },
            color_mention("x1", color, text)?,
        ]);
    }
    if let Some(rest) = text.strip_prefix("What is the shape of the ") {
        let color = rest.strip_suffix(" object?").ok_or_else(unknown(text))?;
        return Ok(vec![color_mention("x0", color, text)?]);
    }
    if let Some(rest) = text.strip_prefix("How many objects have the same shape as the ") {
        let color = rest.strip_suffix(" object?").ok_or_else(unknown(text))?;
        return Ok(vec![
            Mention {
                id: "x0".into(),
                constraints: vec![],
                relations: vec![(RelKind::SameShape, "x1".into())],
                select: SelectMode::ThresholdSet,
            },
            color_mention("x1", color, text)?,
        ]);
    }
    if let Some(rest) = text.strip_prefix("Is the ") {
        let body = rest
            .strip_suffix(" on the left or right of the image?")
            .or_else(|| rest.strip_suffix(" on the top or bottom of the image?"))
            .ok_or_else(unknown(text))?;
        if !body.contains(" that is ") {
            let color = body.strip_suffix(" object").ok_or_else(unknown(text))?;
            return Ok(vec![color_mention("x0", color, text)?]);
        }
        // reference chain
        let segments: Vec<&str> = body.split(" that is ").collect();
        let mut mentions: Vec<Mention> = Vec::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            let (np, rel_to_here) = if i == 0 {
                (*seg, None)
            } else {
                let (rel, np) = [
                    ("left of the ", RelKind::LeftOf),
                    ("right of the ", RelKind::RightOf),
                    ("above the ", RelKind::Above),
                    ("below the ", RelKind::Below),
                ]
                .iter()
                .find_map(|(p, r)| seg.strip_prefix(p).map(|np| (*r, np)))
                .ok_or_else(unknown(text))?;
                (np, Some(rel))
            };
            let constraints = parse_noun_phrase(np)?;
            if let Some(rel) = rel_to_here {
                let prev = mentions.len() - 1;
                let this_id = format!("x{}", mentions.len());
                mentions[prev].relations.push((rel, this_id));
            }
            mentions.push(Mention {
                id: format!("x{i}"),
                constraints,
                relations: vec![],
                select: SelectMode::Argmax,
            });
        }
        return Ok(mentions);
    }
    Err(MatchError::UnknownTemplate(text.to_string()))
}

fn unknown(text: &str) -> impl Fn() -> MatchError + '_ {
    move || MatchError::UnknownTemplate(text.to_string())
}

// ---------------------------------------------------------------------------
// Problem construction
// ---------------------------------------------------------------------------

fn attr_value(obj: &crate::scene::SceneObject, kind: AttrKind) -> Option<String> {
    match kind {
        AttrKind::Shape => Some(obj.shape.word().to_string()),
        AttrKind::Color => Some(obj.color.word().to_string()),
        AttrKind::Size => obj.size.map(|s| s.word().to_string()),
        AttrKind::Material => obj.material.map(|m| m.word().to_string()),
    }
}

/// Compile mentions against a scene into a weighted program plus evidence.
/// `include_negatives` controls whether relationally inconsistent tuples are
/// written as explicit `consistent(...) = 0.0` observations (the default) or
/// left unobserved with `consistent` declared open, which is the ablation
/// the negative-evidence tests exercise.
pub fn build_psl_problem_with_options(
    mentions: &[Mention],
    scene: &Scene,
    cfg: &MatcherConfig,
    include_negatives: bool,
) -> Result<(MatchProblem, Program, EvidenceSet), MatchError> {
    if mentions.is_empty() {
        return Err(MatchError::EmptyMention("<none>".into()));
    }
    for m in mentions {
        if m.constraints.is_empty() && m.relations.is_empty() {
            return Err(MatchError::EmptyMention(m.id.clone()));
        }
        for (_, target) in &m.relations {
            if !mentions.iter().any(|o| &o.id == target) {
                return Err(MatchError::MissingRelationTarget {
                    mention: m.id.clone(),
                    target: target.clone(),
                });
            }
        }
    }
    let table = spatial_relations(scene)?;

    let mut ev = String::new();
    for obj in &scene.objects {
        writeln!(ev, "object({}) = 1.0", obj.id).unwrap();
        for kind in [AttrKind::Shape, AttrKind::Color, AttrKind::Size, AttrKind::Material] {
            if let Some(v) = attr_value(obj, kind) {
                writeln!(ev, "attr_o({},{},{}) = 1.0", obj.id, kind.word(), v).unwrap();
            }
        }
    }
    for m in mentions {
        writeln!(ev, "mention({}) = 1.0", m.id).unwrap();
        for (kind, v) in &m.constraints {
            writeln!(ev, "attr_m({},{},{}) = 1.0", m.id, kind.word(), v).unwrap();
        }
        // attribute conflicts: the object holds a different value
        for obj in &scene.objects {
            let conflicting = m.constraints.iter().any(|(kind, v)| {
                attr_value(obj, *kind).map(|ov| &ov != v).unwrap_or(false)
            });
            if conflicting {
                writeln!(ev, "conflict({},{}) = 1.0", m.id, obj.id).unwrap();
            }
        }
    }
    // attribute compatibility: a mention keeps an object as candidate unless
    // a constrained attribute conflicts
    let compatible = |m: &Mention, obj: &crate::scene::SceneObject| {
        !m.constraints
            .iter()
            .any(|(kind, v)| attr_value(obj, *kind).map(|ov| &ov != v).unwrap_or(false))
    };
    // relation edges, including the inverse view where the relation inverts
    let mut edges: Vec<(RelKind, &Mention, &Mention)> = Vec::new();
    for m in mentions {
        for (rel, target) in &m.relations {
            let tm = mentions.iter().find(|o| &o.id == target).unwrap();
            edges.push((*rel, m, tm));
            if let Some(inv) = rel.inverse() {
                edges.push((inv, tm, m));
            }
        }
    }
    for (rel, m, tm) in edges {
        writeln!(ev, "rel({},{},{}) = 1.0", rel.word(), m.id, tm.id).unwrap();
        // consistency scores are only stated for candidate object pairs
        // (both ends attribute-compatible); missing tuples stay 0 under
        // the closed world
        for a in scene.objects.iter().filter(|a| compatible(m, a)) {
            for b in scene.objects.iter().filter(|b| compatible(tm, b)) {
                if a.id == b.id && !rel.reflexive() {
                    continue;
                }
                let holds = rel.holds(scene, &table, &a.id, &b.id);
                if holds {
                    writeln!(
                        ev,
                        "consistent({},{},{},{},{}) = 1.0",
                        rel.word(),
                        a.id,
                        b.id,
                        m.id,
                        tm.id
                    )
                    .unwrap();
                } else if include_negatives {
                    writeln!(
                        ev,
                        "consistent({},{},{},{},{}) = 0.0",
                        rel.word(),
                        a.id,
                        b.id,
                        m.id,
                        tm.id
                    )
                    .unwrap();
                }
            }
        }
    }
    let evidence = parse_evidence(&ev)?;

    let consistent_decl = if include_negatives { "closed" } else { "open" };
    // With open `consistent`, the rules bind R/O1/M1 through relname/object/
    // mention instead of through the consistent observations.
    let (w2_body, excl_body) = if include_negatives {
        (
            "object(O) & mention(M) & candidate(M1,O1) & consistent(R,O,O1,M,M1)".to_string(),
            "object(O) & object(O1) & rel(R,M,M1) & candidate(M1,O1) & !consistent(R,O,O1,M,M1)"
                .to_string(),
        )
    } else {
        (
            "object(O) & mention(M) & object(O1) & rel(R,M,M1) & candidate(M1,O1) & consistent(R,O,O1,M,M1)"
                .to_string(),
            "object(O) & object(O1) & rel(R,M,M1) & candidate(M1,O1) & !consistent(R,O,O1,M,M1)"
                .to_string(),
        )
    };
    let program_text = format!(
        "\
predicate candidate/2 open.
predicate object/1 closed.
predicate mention/1 closed.
predicate attr_o/3 closed.
predicate attr_m/3 closed.
predicate consistent/5 {consistent_decl}.
predicate conflict/2 closed.
predicate rel/3 closed.
{w1}: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).
{w2}: candidate(M,O) <- {w2_body}.
{wc}: !candidate(M,O) <- conflict(M,O).
{we}: !candidate(M,O) <- {excl_body}.
{wp}: !candidate(M,O) <- object(O) & mention(M).
",
        w1 = cfg.w1,
        w2 = cfg.w2,
        wc = cfg.w_conflict,
        we = cfg.w_exclude,
        wp = cfg.w_prior,
    );
    let program = parse_program(&program_text)?;

    let problem = MatchProblem {
        mentions: mentions.to_vec(),
        object_ids: scene.objects.iter().map(|o| o.id.clone()).collect(),
        program: program.clone(),
        evidence: evidence.clone(),
        select_threshold: cfg.select_threshold,
        solver: cfg.solver.clone(),
    };
    Ok((problem, program, evidence))
}

pub fn build_psl_problem(
    mentions: &[Mention],
    scene: &Scene,
    cfg: &MatcherConfig,
) -> Result<(MatchProblem, Program, EvidenceSet), MatchError> {
    build_psl_problem_with_options(mentions, scene, cfg, true)
}

/// Ground the problem, run MAP inference, and read out the candidate
/// confidences and per-mention selections.
pub fn match_mentions(problem: &MatchProblem) -> Result<MatchResult, MatchError> {
    let ps = ground(&problem.program, &problem.evidence)?;
    let (interp, report) = solve_map(&ps, &problem.solver)?;

    let mut confidence = Vec::with_capacity(problem.mentions.len());
    for m in &problem.mentions {
        let mut row = Vec::with_capacity(problem.object_ids.len());
        for o in &problem.object_ids {
            let atom = GroundAtom::new("candidate", &[m.id.as_str(), o.as_str()]);
            let v = ps
                .index_of(&atom)
                .map(|i| interp.values[i])
                .unwrap_or(0.0);
            row.push(v);
        }
        confidence.push(row);
    }

    let mut selected = BTreeMap::new();
    for (mi, m) in problem.mentions.iter().enumerate() {
        let row = &confidence[mi];
        let mut set = BTreeSet::new();
        match m.select {
            SelectMode::Argmax => {
                let mut best = 0usize;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                if !row.is_empty() && row[best] >= problem.select_threshold {
                    set.insert(problem.object_ids[best].clone());
                }
            }
            SelectMode::ThresholdSet => {
                for (j, &v) in row.iter().enumerate() {
                    if v >= problem.select_threshold {
                        set.insert(problem.object_ids[j].clone());
                    }
                }
            }
        }
        selected.insert(m.id.clone(), set);
    }

    Ok(MatchResult {
        confidence,
        selected,
        converged: report.converged,
    })
}

// ---------------------------------------------------------------------------
// Masks
// ---------------------------------------------------------------------------

/// Union of per-object Gaussian heatmaps: value(p) = exp(-|p-c|^2 / (2 s^2))
/// with s = decay_scale * radius; the union takes the pointwise max.
pub fn render_mask(
    scene: &Scene,
    selected: &BTreeSet<String>,
    decay_scale: f64,
) -> Result<MaskGrid, MatchError> {
    let n = scene.image_size;
    let mut mask = MaskGrid::zeros(n, n);
    for id in selected {
        let obj = scene
            .object(id)
            .ok_or_else(|| MatchError::UnknownObject(id.clone()))?;
        let sigma = decay_scale * obj.radius as f64;
        let denom = 2.0 * sigma * sigma;
        let (cx, cy) = (obj.center.0 as f64, obj.center.1 as f64);
        for y in 0..n {
            for x in 0..n {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                let v = (-d2 / denom).exp();
                if v > mask.get(x, y) {
                    mask.set(x, y, v);
                }
            }
        }
    }
    Ok(mask)
}

/// Scale each channel by the mask value at that pixel, rounding to the
/// nearest 8-bit value.
pub fn apply_mask(image: &RGBImage, mask: &MaskGrid) -> Result<RGBImage, MatchError> {
    if image.width != mask.width || image.height != mask.height {
        return Err(MatchError::DimensionMismatch {
            iw: image.width,
            ih: image.height,
            mw: mask.width,
            mh: mask.height,
        });
    }
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let m = mask.get(x, y);
            let p = image.get(x, y);
            out.set(
                x,
                y,
                [
                    (p[0] as f64 * m).round() as u8,
                    (p[1] as f64 * m).round() as u8,
                    (p[2] as f64 * m).round() as u8,
                ],
            );
        }
    }
    Ok(out)
}

/// Full per-question pipeline: invert, compile, infer, mask.
pub fn question_mask(
    q: &QuestionRecord,
    scene: &Scene,
    cfg: &MatcherConfig,
) -> Result<(MatchResult, MaskGrid), MatchError> {
    let mentions = extract_mentions(q)?;
    let (problem, _, _) = build_psl_problem(&mentions, scene, cfg)?;
    let result = match_mentions(&problem)?;
    let mask = render_mask(scene, &result.selected_union(), cfg.decay_scale)?;
    Ok((result, mask))
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MatchRow {
    pub scene_id: u64,
    pub q_idx: usize,
    pub selected: BTreeSet<String>,
    /// max confidence over mentions, per selected object (same order)
    pub confidences: Vec<f64>,
    pub tp: usize,
    pub n_selected: usize,
    pub n_relevant: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub precision: f64,
    pub recall: f64,
    pub rows: Vec<MatchRow>,
}

/// Micro-averaged precision/recall of selected objects against the
/// ground-truth relevant sets. Precision over an empty selection is 0.
pub fn evaluate_matching(
    dataset: &[(QuestionRecord, Scene)],
    cfg: &MatcherConfig,
) -> Result<MatchReport, MatchError> {
    if dataset.is_empty() {
        return Err(MatchError::EmptyDataset);
    }
    let mut rows = Vec::with_capacity(dataset.len());
    let mut tp_total = 0usize;
    let mut sel_total = 0usize;
    let mut rel_total = 0usize;
    for (q, scene) in dataset {
        let mentions = extract_mentions(q)?;
        let (problem, _, _) = build_psl_problem(&mentions, scene, cfg)?;
        let result = match_mentions(&problem)?;
        let selected = result.selected_union();
        let relevant: BTreeSet<String> = q.relevant_objects.iter().cloned().collect();
        let tp = selected.intersection(&relevant).count();
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
        tp_total += tp;
        sel_total += selected.len();
        rel_total += relevant.len();
        rows.push(MatchRow {
            scene_id: q.scene_id,
            q_idx: q.q_idx,
            n_selected: selected.len(),
            n_relevant: relevant.len(),
            selected,
            confidences,
            tp,
            converged: result.converged,
        });
    }
    let precision = if sel_total == 0 {
        0.0
    } else {
        tp_total as f64 / sel_total as f64
    };
    let recall = if rel_total == 0 {
        0.0
    } else {
        tp_total as f64 / rel_total as f64
    };
    Ok(MatchReport {
        precision,
        recall,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::{
        generate_clevr_lite_questions, generate_questions, raster_text, TemplateId,
    };
    use crate::scene::{
        generate_scene, Color, GenConfig, Material, SceneMode, SceneObject, Shape, Size,
        IMAGE_SIZE,
    };

    fn record(text: &str) -> QuestionRecord {
        QuestionRecord {
            scene_id: 0,
            q_idx: 0,
            template: TemplateId::ShapeOfColor,
            kind: crate::question::QuestionKind::NonRelational,
            text: text.to_string(),
            anchor_color: None,
            chain: None,
            answer: String::new(),
            relevant_objects: vec![],
            onehot: None,
        }
    }

    #[test]
    fn invert_closest_template() {
        let q = record("What is the shape of the object closest to the red object?");
        let m = extract_mentions(&q).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].id, "x0");
        assert!(m[0].constraints.is_empty());
        assert_eq!(m[0].relations, vec![(RelKind::Closest, "x1".to_string())]);
        assert_eq!(m[1].constraints, vec![(AttrKind::Color, "red".to_string())]);
        assert!(m[1].relations.is_empty());
    }

    #[test]
    fn invert_chain_template() {
        let q = record("Is the sphere that is left of the red cube on the left or right of the image?");
        let m = extract_mentions(&q).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(
            m[0].constraints,
            vec![(AttrKind::Shape, "sphere".to_string())]
        );
        assert_eq!(m[0].relations, vec![(RelKind::LeftOf, "x1".to_string())]);
        assert_eq!(
            m[1].constraints,
            vec![
                (AttrKind::Color, "red".to_string()),
                (AttrKind::Shape, "cube".to_string()),
            ]
        );
    }

    #[test]
    fn invert_non_relational_template() {
        let q = record("What is the shape of the red object?");
        let m = extract_mentions(&q).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].constraints, vec![(AttrKind::Color, "red".to_string())]);
        assert!(m[0].relations.is_empty());
    }

    #[test]
    fn invert_count_template_selects_sets() {
        let q = record("How many objects have the same shape as the blue object?");
        let m = extract_mentions(&q).unwrap();
        assert_eq!(m[0].select, SelectMode::ThresholdSet);
        assert_eq!(m[0].relations, vec![(RelKind::SameShape, "x1".to_string())]);
    }

    #[test]
    fn unknown_template_is_rejected() {
        let q = record("Why is the sky blue?");
        assert!(matches!(
            extract_mentions(&q),
            Err(MatchError::UnknownTemplate(_))
        ));
    }

    fn sort_of_clevr_fixture() -> Scene {
        let mk = |id: &str, shape, color, center| SceneObject {
            id: id.into(),
            shape,
            color,
            size: None,
            material: None,
            center,
            radius: 5,
        };
        Scene {
            scene_id: 7,
            mode: SceneMode::SortOfClevr,
            image_size: IMAGE_SIZE,
            objects: vec![
                mk("o0", Shape::Circle, Color::Red, (10, 20)),
                mk("o1", Shape::Rectangle, Color::Green, (50, 22)),
                mk("o2", Shape::Rectangle, Color::Blue, (12, 55)),
                mk("o3", Shape::Rectangle, Color::Yellow, (40, 50)),
                mk("o4", Shape::Rectangle, Color::Orange, (58, 58)),
                mk("o5", Shape::Rectangle, Color::Gray, (25, 8)),
            ],
        }
    }

    #[test]
    fn problem_has_all_candidate_pairs_free() {
        let scene = sort_of_clevr_fixture();
        let q = record("What is the shape of the object closest to the red object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, program, evidence) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        assert_eq!(problem.mentions.len(), 2);
        let ps = ground(&program, &evidence).unwrap();
        // 2 mentions x 6 objects free candidate atoms
        assert_eq!(ps.n_free(), 12);
    }

    #[test]
    fn anchor_mention_matches_unique_color() {
        let scene = sort_of_clevr_fixture();
        let q = record("What is the shape of the red object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let result = match_mentions(&problem).unwrap();
        let sel = &result.selected["x0"];
        assert_eq!(sel.len(), 1);
        assert!(sel.contains("o0"));
        assert!(result.confidence[0][0] >= 0.9);
        for j in 1..6 {
            assert!(result.confidence[0][j] <= 0.1);
        }
    }

    #[test]
    fn closest_pipeline_selects_anchor_and_nearest() {
        let scene = sort_of_clevr_fixture();
        // nearest to red o0 is o5 (hand-computed distances in question tests)
        let q = record("What is the shape of the object closest to the red object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let result = match_mentions(&problem).unwrap();
        assert_eq!(
            result.selected_union(),
            ["o0", "o5"].iter().map(|s| s.to_string()).collect()
        );
    }

    #[test]
    fn count_template_selects_whole_set() {
        let scene = sort_of_clevr_fixture();
        let q = record("How many objects have the same shape as the green object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let result = match_mentions(&problem).unwrap();
        // all five rectangles incl. the anchor
        let want: BTreeSet<String> = ["o1", "o2", "o3", "o4", "o5"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(result.selected_union(), want);
    }

    fn clevr_fixture() -> Scene {
        let mk = |id: &str, shape, color, size, material, center| SceneObject {
            id: id.into(),
            shape,
            color,
            size: Some(size),
            material: Some(material),
            center,
            radius: 4,
        };
        Scene {
            scene_id: 9,
            mode: SceneMode::ClevrLite,
            image_size: IMAGE_SIZE,
            objects: vec![
                // two spheres, only one left of the red cube
                mk("o0", Shape::Sphere, Color::Blue, Size::Small, Material::Matte, (10, 11)),
                mk("o1", Shape::Cube, Color::Red, Size::Large, Material::Metal, (40, 40)),
                mk("o2", Shape::Sphere, Color::Green, Size::Small, Material::Matte, (50, 12)),
            ],
        }
    }

    #[test]
    fn chain_matching_prefers_consistent_assignment() {
        let scene = clevr_fixture();
        let q = record("Is the sphere that is left of the red cube on the left or right of the image?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let result = match_mentions(&problem).unwrap();
        // x0 must be o0 (left of the cube), not o2
        assert_eq!(
            result.selected["x0"],
            ["o0".to_string()].into_iter().collect::<BTreeSet<_>>()
        );
        assert_eq!(
            result.selected["x1"],
            ["o1".to_string()].into_iter().collect::<BTreeSet<_>>()
        );
        let i_o0 = 0;
        let i_o2 = 2;
        assert!(
            result.confidence[0][i_o0] > result.confidence[0][i_o2] + 0.5,
            "consistent assignment should score strictly higher: {} vs {}",
            result.confidence[0][i_o0],
            result.confidence[0][i_o2]
        );
    }

    #[test]
    fn supplementary_style_consistent_tuples_present() {
        let scene = clevr_fixture();
        let q = record("Is the sphere that is left of the red cube on the left or right of the image?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (_, _, evidence) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        assert_eq!(
            evidence.value(&GroundAtom::new(
                "consistent",
                &["left", "o0", "o1", "x0", "x1"]
            )),
            Some(1.0)
        );
        // inconsistent tuple explicitly 0.0
        assert_eq!(
            evidence.value(&GroundAtom::new(
                "consistent",
                &["left", "o2", "o1", "x0", "x1"]
            )),
            Some(0.0)
        );
    }

    #[test]
    fn negative_evidence_widens_the_confidence_gap() {
        let scene = clevr_fixture();
        let q = record("Is the sphere that is left of the red cube on the left or right of the image?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();

        let gap = |with_negatives: bool| {
            let (problem, _, _) =
                build_psl_problem_with_options(&mentions, &scene, &cfg, with_negatives).unwrap();
            let result = match_mentions(&problem).unwrap();
            result.confidence[0][0] - result.confidence[0][2]
        };
        let gap_with = gap(true);
        let gap_without = gap(false);
        assert!(
            gap_with >= gap_without,
            "negatives should not shrink the gap: {gap_with} vs {gap_without}"
        );
        assert!(gap_with > 0.5);
    }

    #[test]
    fn ambiguous_constraints_score_symmetrically() {
        // two objects match the mention equally; their confidences must tie
        let mut scene = sort_of_clevr_fixture();
        for o in &mut scene.objects {
            o.shape = Shape::Rectangle;
        }
        let q = record("How many objects have the same shape as the red object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let result = match_mentions(&problem).unwrap();
        let row = &result.confidence[0];
        for j in 1..row.len() {
            assert!((row[j] - row[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn confidences_are_permutation_equivariant() {
        let scene = sort_of_clevr_fixture();
        let mut permuted = scene.clone();
        permuted.objects.reverse();
        let q = record("What is the shape of the object closest to the red object?");
        let mentions = extract_mentions(&q).unwrap();
        let cfg = MatcherConfig::default();
        let (pa, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
        let (pb, _, _) = build_psl_problem(&mentions, &permuted, &cfg).unwrap();
        let ra = match_mentions(&pa).unwrap();
        let rb = match_mentions(&pb).unwrap();
        let n = scene.objects.len();
        for mi in 0..mentions.len() {
            for j in 0..n {
                assert!(
                    (ra.confidence[mi][j] - rb.confidence[mi][n - 1 - j]).abs() < 1e-6,
                    "mention {mi} object {j}"
                );
            }
        }
    }

    #[test]
    fn mask_gaussian_values() {
        let scene = Scene {
            scene_id: 0,
            mode: SceneMode::SortOfClevr,
            image_size: IMAGE_SIZE,
            objects: vec![SceneObject {
                id: "o0".into(),
                shape: Shape::Circle,
                color: Color::Red,
                size: None,
                material: None,
                center: (32, 32),
                radius: 5,
            }],
        };
        let selected: BTreeSet<String> = ["o0".to_string()].into_iter().collect();
        let mask = render_mask(&scene, &selected, 1.0).unwrap();
        assert_eq!(mask.get(32, 32), 1.0);
        assert!((mask.get(37, 32) - (-0.5f64).exp()).abs() < 1e-12);
        // monotone decay along a ray
        for x in 33..64 {
            assert!(mask.get(x, 32) <= mask.get(x - 1, 32));
        }
    }

    #[test]
    fn empty_selection_gives_zero_mask() {
        let scene = sort_of_clevr_fixture();
        let mask = render_mask(&scene, &BTreeSet::new(), 1.0).unwrap();
        assert!(mask.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn union_is_pointwise_max() {
        let scene = sort_of_clevr_fixture();
        let both: BTreeSet<String> = ["o0".to_string(), "o1".to_string()].into_iter().collect();
        let a: BTreeSet<String> = ["o0".to_string()].into_iter().collect();
        let b: BTreeSet<String> = ["o1".to_string()].into_iter().collect();
        let mu = render_mask(&scene, &both, 1.0).unwrap();
        let ma = render_mask(&scene, &a, 1.0).unwrap();
        let mb = render_mask(&scene, &b, 1.0).unwrap();
        for i in 0..mu.values.len() {
            assert_eq!(mu.values[i], ma.values[i].max(mb.values[i]));
        }
    }

    #[test]
    fn unknown_mask_id_is_rejected() {
        let scene = sort_of_clevr_fixture();
        let sel: BTreeSet<String> = ["nope".to_string()].into_iter().collect();
        assert!(matches!(
            render_mask(&scene, &sel, 1.0),
            Err(MatchError::UnknownObject(_))
        ));
    }

    #[test]
    fn apply_mask_identities() {
        let img = RGBImage::filled(8, 8, [220, 30, 30]);
        let ones = MaskGrid {
            width: 8,
            height: 8,
            values: vec![1.0; 64],
        };
        let zeros = MaskGrid::zeros(8, 8);
        assert_eq!(apply_mask(&img, &ones).unwrap(), img);
        assert!(apply_mask(&img, &zeros)
            .unwrap()
            .pixels
            .iter()
            .all(|&b| b == 0));
        let half = MaskGrid {
            width: 8,
            height: 8,
            values: vec![0.5; 64],
        };
        let got = apply_mask(&img, &half).unwrap();
        assert_eq!(got.get(0, 0), [110, 15, 15]);
        let bad = MaskGrid::zeros(4, 4);
        assert!(matches!(
            apply_mask(&img, &bad),
            Err(MatchError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn evaluation_boundaries() {
        let scene = sort_of_clevr_fixture();
        let mut q = record(&raster_text(TemplateId::ShapeOfColor, Color::Red));
        q.relevant_objects = vec!["o0".to_string()];
        let cfg = MatcherConfig::default();
        let report = evaluate_matching(&[(q, scene)], &cfg).unwrap();
        assert_eq!(report.precision, 1.0);
        assert_eq!(report.recall, 1.0);
        assert!(matches!(
            evaluate_matching(&[], &cfg),
            Err(MatchError::EmptyDataset)
        ));
    }

    #[test]
    fn end_to_end_anchor_exactness_sample() {
        let cfg_scene = GenConfig::default();
        let cfg = MatcherConfig::default();
        for seed in 0..10 {
            let scene = generate_scene(seed, SceneMode::SortOfClevr, &cfg_scene).unwrap();
            for q in generate_questions(&scene, seed + 555, 10).unwrap() {
                let anchor = scene
                    .object_by_color(q.anchor_color.unwrap())
                    .unwrap()
                    .id
                    .clone();
                let mentions = extract_mentions(&q).unwrap();
                let (problem, _, _) = build_psl_problem(&mentions, &scene, &cfg).unwrap();
                let result = match_mentions(&problem).unwrap();
                let anchor_mention = mentions.last().unwrap();
                let sel = &result.selected[&anchor_mention.id];
                assert_eq!(sel.len(), 1, "question {} scene {}", q.q_idx, seed);
                assert!(sel.contains(&anchor));
            }
        }
    }

    #[test]
    fn clevr_lite_matching_sample_meets_floor() {
        let cfg_scene = GenConfig::default();
        let cfg = MatcherConfig::default();
        let mut dataset = Vec::new();
        for seed in 0..10 {
            let scene = generate_scene(5000 + seed, SceneMode::ClevrLite, &cfg_scene).unwrap();
            for q in generate_clevr_lite_questions(&scene, seed, 2).unwrap() {
                dataset.push((q, scene.clone()));
            }
        }
        let report = evaluate_matching(&dataset, &cfg).unwrap();
        assert!(report.recall >= 0.75, "recall {}", report.recall);
        assert!(report.precision >= 0.70, "precision {}", report.precision);
    }
}
