//! Templated questions with answers, ground-truth relevant-object traces,
//! and encodings over a closed vocabulary.
//!
//! Six raster-scene families: three non-relational (shape of a color, left/
//! right position, top/bottom position) and three relational (shape of the
//! closest object, shape of the furthest object, count of same-shaped
//! objects). Graph-only scenes get 2-3 mention reference chains with a
//! unique referent, answered by the head object's left/right position.

use std::collections::BTreeSet;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{spatial_relations, Color, RelationTable, Scene, SceneMode, PALETTE};

#[derive(Debug, Error, PartialEq)]
pub enum QuestionError {
    #[error("scene {0} is not a raster scene")]
    NotRaster(u64),
    #[error("scene {0} is not a graph-only scene")]
    NotGraph(u64),
    #[error("scene {scene_id}: no reference chain with a unique referent after {retries} retries")]
    ChainUnsatisfiable { scene_id: u64, retries: usize },
    #[error("token `{0}` is outside the template vocabulary")]
    OutOfVocabulary(String),
    #[error("scene {0} has too few objects")]
    TooFewObjects(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    ShapeOfColor,
    PositionLeftRight,
    PositionTopBottom,
    ShapeOfClosest,
    ShapeOfFurthest,
    CountSameShape,
    ReferenceChain,
}

pub const RASTER_TEMPLATES: [TemplateId; 6] = [
    TemplateId::ShapeOfColor,
    TemplateId::PositionLeftRight,
    TemplateId::PositionTopBottom,
    TemplateId::ShapeOfClosest,
    TemplateId::ShapeOfFurthest,
    TemplateId::CountSameShape,
];

impl TemplateId {
    pub fn index(&self) -> usize {
        RASTER_TEMPLATES
            .iter()
            .position(|t| t == self)
            .unwrap_or(usize::MAX)
    }

    pub fn name(&self) -> &'static str {
        match self {
            TemplateId::ShapeOfColor => "shape_of_color",
            TemplateId::PositionLeftRight => "position_left_right",
            TemplateId::PositionTopBottom => "position_top_bottom",
            TemplateId::ShapeOfClosest => "shape_of_closest",
            TemplateId::ShapeOfFurthest => "shape_of_furthest",
            TemplateId::CountSameShape => "count_same_shape",
            TemplateId::ReferenceChain => "reference_chain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    NonRelational,
    Relational,
}

/// Attribute kinds a mention can constrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttrKind {
    Size,
    Color,
    Material,
    Shape,
}

impl AttrKind {
    pub fn word(&self) -> &'static str {
        match self {
            AttrKind::Size => "size",
            AttrKind::Color => "color",
            AttrKind::Material => "material",
            AttrKind::Shape => "shape",
        }
    }
}

/// Relation words usable inside reference chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRel {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl ChainRel {
    pub fn phrase(&self) -> &'static str {
        match self {
            ChainRel::LeftOf => "left of",
            ChainRel::RightOf => "right of",
            ChainRel::Above => "above",
            ChainRel::Below => "below",
        }
    }

    pub fn holds(&self, t: &RelationTable, a: &str, b: &str) -> bool {
        match self {
            ChainRel::LeftOf => t.left_of(a, b),
            ChainRel::RightOf => t.right_of(a, b),
            ChainRel::Above => t.above(a, b),
            ChainRel::Below => t.below(a, b),
        }
    }
}

/// One mention of a reference chain: attribute constraints plus the relation
/// to the next mention (absent on the tail).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionSpec {
    pub constraints: Vec<(AttrKind, String)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub relation_to_next: Option<ChainRel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub scene_id: u64,
    pub q_idx: usize,
    pub template: TemplateId,
    pub kind: QuestionKind,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub anchor_color: Option<Color>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chain: Option<Vec<MentionSpec>>,
    pub answer: String,
    pub relevant_objects: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub onehot: Option<Vec<u8>>,
}

/// Fixed answer classes; the index in this list is the class id.
pub const ANSWER_VOCAB: [&str; 12] = [
    "circle",
    "rectangle",
    "1",
    "2",
    "3",
    "4",
    "5",
    "6",
    "left",
    "right",
    "top",
    "bottom",
];

pub fn answer_class(answer: &str) -> Option<usize> {
    ANSWER_VOCAB.iter().position(|a| *a == answer)
}

pub const ONEHOT_DIM: usize = 36; // 6 anchor colors x 6 raster templates

fn onehot(color: Color, template: TemplateId) -> Vec<u8> {
    let mut v = vec![0u8; ONEHOT_DIM];
    v[color.index() * RASTER_TEMPLATES.len() + template.index()] = 1;
    v
}

fn midline(scene: &Scene) -> i32 {
    scene.image_size as i32 / 2
}

/// Functional evaluation of a raster template: answer plus the exact object
/// ids the program touches.
pub fn evaluate_raster(
    scene: &Scene,
    table: &RelationTable,
    template: TemplateId,
    anchor: Color,
) -> (String, Vec<String>) {
    let obj = scene
        .object_by_color(anchor)
        .expect("raster scenes hold every palette color");
    let mid = midline(scene);
    match template {
        TemplateId::ShapeOfColor => (obj.shape.word().into(), vec![obj.id.clone()]),
        TemplateId::PositionLeftRight => {
            let ans = if obj.center.0 < mid { "left" } else { "right" };
            (ans.into(), vec![obj.id.clone()])
        }
        TemplateId::PositionTopBottom => {
            let ans = if obj.center.1 < mid { "top" } else { "bottom" };
            (ans.into(), vec![obj.id.clone()])
        }
        TemplateId::ShapeOfClosest => {
            let near = table.nearest(&obj.id).to_string();
            let shape = scene.object(&near).unwrap().shape.word().to_string();
            let mut rel = vec![obj.id.clone(), near];
            rel.sort();
            (shape, rel)
        }
        TemplateId::ShapeOfFurthest => {
            let far = table.furthest(&obj.id).to_string();
            let shape = scene.object(&far).unwrap().shape.word().to_string();
            let mut rel = vec![obj.id.clone(), far];
            rel.sort();
            (shape, rel)
        }
        TemplateId::CountSameShape => {
            let mut rel: Vec<String> = scene
                .objects
                .iter()
                .filter(|o| o.shape == obj.shape)
                .map(|o| o.id.clone())
                .collect();
            rel.sort();
            (rel.len().to_string(), rel)
        }
        TemplateId::ReferenceChain => unreachable!("not a raster template"),
    }
}

pub fn raster_text(template: TemplateId, anchor: Color) -> String {
    let c = anchor.word();
    match template {
        TemplateId::ShapeOfColor => format!("What is the shape of the {c} object?"),
        TemplateId::PositionLeftRight => {
            format!("Is the {c} object on the left or right of the image?")
        }
        TemplateId::PositionTopBottom => {
            format!("Is the {c} object on the top or bottom of the image?")
        }
        TemplateId::ShapeOfClosest => {
            format!("What is the shape of the object closest to the {c} object?")
        }
        TemplateId::ShapeOfFurthest => {
            format!("What is the shape of the object furthest from the {c} object?")
        }
        TemplateId::CountSameShape => {
            format!("How many objects have the same shape as the {c} object?")
        }
        TemplateId::ReferenceChain => unreachable!("not a raster template"),
    }
}

/// Generate `k` question records for a raster scene, balanced between the
/// non-relational and relational families.
pub fn generate_questions(
    scene: &Scene,
    seed: u64,
    k: usize,
) -> Result<Vec<QuestionRecord>, QuestionError> {
    if scene.mode != SceneMode::SortOfClevr {
        return Err(QuestionError::NotRaster(scene.scene_id));
    }
    let table = spatial_relations(scene).map_err(|_| QuestionError::TooFewObjects(scene.scene_id))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let non_rel = [
        TemplateId::ShapeOfColor,
        TemplateId::PositionLeftRight,
        TemplateId::PositionTopBottom,
    ];
    let rel = [
        TemplateId::ShapeOfClosest,
        TemplateId::ShapeOfFurthest,
        TemplateId::CountSameShape,
    ];
    let n_rel = k / 2;
    let mut out = Vec::with_capacity(k);
    for q_idx in 0..k {
        let template = if q_idx < k - n_rel {
            non_rel[rng.gen_range(0..non_rel.len())]
        } else {
            rel[rng.gen_range(0..rel.len())]
        };
        let anchor = PALETTE[rng.gen_range(0..PALETTE.len())];
        let (answer, relevant) = evaluate_raster(scene, &table, template, anchor);
        let kind = if q_idx < k - n_rel {
            QuestionKind::NonRelational
        } else {
            QuestionKind::Relational
        };
        out.push(QuestionRecord {
            scene_id: scene.scene_id,
            q_idx,
            template,
            kind,
            text: raster_text(template, anchor),
            anchor_color: Some(anchor),
            chain: None,
            answer,
            relevant_objects: relevant,
            onehot: Some(onehot(anchor, template)),
        });
    }
    Ok(out)
}

fn noun_phrase(spec: &MentionSpec) -> String {
    let mut words = Vec::new();
    for kind in [AttrKind::Size, AttrKind::Color, AttrKind::Material, AttrKind::Shape] {
        if let Some((_, v)) = spec.constraints.iter().find(|(k, _)| *k == kind) {
            words.push(v.as_str());
        }
    }
    words.join(" ")
}

pub fn chain_text(chain: &[MentionSpec]) -> String {
    let mut s = String::from("Is the ");
    for (i, m) in chain.iter().enumerate() {
        if i > 0 {
            s.push_str(" that is ");
            s.push_str(chain[i - 1].relation_to_next.unwrap().phrase());
            s.push_str(" the ");
        }
        s.push_str(&noun_phrase(m));
    }
    s.push_str(" on the left or right of the image?");
    s
}

fn object_matches(obj: &crate::scene::SceneObject, constraints: &[(AttrKind, String)]) -> bool {
    constraints.iter().all(|(kind, v)| match kind {
        AttrKind::Shape => obj.shape.word() == v,
        AttrKind::Color => obj.color.word() == v,
        AttrKind::Size => obj.size.map(|s| s.word() == v).unwrap_or(false),
        AttrKind::Material => obj.material.map(|m| m.word() == v).unwrap_or(false),
    })
}

/// Count assignments of distinct objects to the chain satisfying all
/// constraints and relations; fills `found` with the first one.
fn count_assignments(
    scene: &Scene,
    table: &RelationTable,
    chain: &[MentionSpec],
    found: &mut Vec<usize>,
) -> usize {
    fn rec(
        scene: &Scene,
        table: &RelationTable,
        chain: &[MentionSpec],
        depth: usize,
        current: &mut Vec<usize>,
        found: &mut Vec<usize>,
        count: &mut usize,
    ) {
        if depth == chain.len() {
            *count += 1;
            if found.is_empty() {
                *found = current.clone();
            }
            return;
        }
        for (i, obj) in scene.objects.iter().enumerate() {
            if current.contains(&i) {
                continue;
            }
            if !object_matches(obj, &chain[depth].constraints) {
                continue;
            }
            if depth > 0 {
                let rel = chain[depth - 1].relation_to_next.unwrap();
                let prev = &scene.objects[current[depth - 1]];
                if !rel.holds(table, &prev.id, &obj.id) {
                    continue;
                }
            }
            current.push(i);
            rec(scene, table, chain, depth + 1, current, found, count);
            current.pop();
        }
    }
    let mut count = 0;
    let mut current = Vec::new();
    found.clear();
    rec(scene, table, chain, 0, &mut current, found, &mut count);
    count
}

fn attrs_of(obj: &crate::scene::SceneObject) -> Vec<(AttrKind, String)> {
    let mut v = vec![
        (AttrKind::Shape, obj.shape.word().to_string()),
        (AttrKind::Color, obj.color.word().to_string()),
    ];
    if let Some(s) = obj.size {
        v.push((AttrKind::Size, s.word().to_string()));
    }
    if let Some(m) = obj.material {
        v.push((AttrKind::Material, m.word().to_string()));
    }
    v
}

const CHAIN_RETRIES: usize = 80;

/// Generate `k` multi-hop reference-chain questions for a graph-only scene.
/// Every chain is checked to have exactly one satisfying assignment.
pub fn generate_clevr_lite_questions(
    scene: &Scene,
    seed: u64,
    k: usize,
) -> Result<Vec<QuestionRecord>, QuestionError> {
    if scene.mode != SceneMode::ClevrLite {
        return Err(QuestionError::NotGraph(scene.scene_id));
    }
    if scene.objects.len() < 2 {
        return Err(QuestionError::TooFewObjects(scene.scene_id));
    }
    let table = spatial_relations(scene).map_err(|_| QuestionError::TooFewObjects(scene.scene_id))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(k);
    let mid = midline(scene);

    for q_idx in 0..k {
        let mut built: Option<(Vec<MentionSpec>, Vec<usize>)> = None;
        for _ in 0..CHAIN_RETRIES {
            let max_len = 3.min(scene.objects.len());
            let len = rng.gen_range(2..=max_len);
            let mut indices: Vec<usize> = (0..scene.objects.len()).collect();
            indices.shuffle(&mut rng);
            let picked: Vec<usize> = indices[..len].to_vec();

            // relations that hold between consecutive picks
            let mut chain: Vec<MentionSpec> = Vec::with_capacity(len);
            let mut ok = true;
            for d in 0..len {
                let rel = if d + 1 < len {
                    let a = &scene.objects[picked[d]].id;
                    let b = &scene.objects[picked[d + 1]].id;
                    let options: Vec<ChainRel> = [
                        ChainRel::LeftOf,
                        ChainRel::RightOf,
                        ChainRel::Above,
                        ChainRel::Below,
                    ]
                    .into_iter()
                    .filter(|r| r.holds(&table, a, b))
                    .collect();
                    if options.is_empty() {
                        ok = false;
                        break;
                    }
                    Some(options[rng.gen_range(0..options.len())])
                } else {
                    None
                };
                chain.push(MentionSpec {
                    constraints: Vec::new(),
                    relation_to_next: rel,
                });
            }
            if !ok {
                continue;
            }

            // Tail mention: shape plus greedily-added attributes until the
            // tail is unique in the scene on attributes alone.
            let tail_obj = &scene.objects[picked[len - 1]];
            let mut tail_attrs = attrs_of(tail_obj);
            let shape = tail_attrs.remove(0);
            tail_attrs.shuffle(&mut rng);
            let mut constraints = vec![shape];
            let unique = loop {
                let n = scene
                    .objects
                    .iter()
                    .filter(|o| object_matches(o, &constraints))
                    .count();
                if n == 1 {
                    break true;
                }
                match tail_attrs.pop() {
                    Some(a) => constraints.push(a),
                    None => break false,
                }
            };
            if !unique {
                continue;
            }
            constraints.sort();
            chain[len - 1].constraints = constraints;

            // Non-tail mentions: shape plus each other attribute with
            // probability 1/3.
            for d in 0..len - 1 {
                let obj = &scene.objects[picked[d]];
                let mut cs = vec![(AttrKind::Shape, obj.shape.word().to_string())];
                for attr in attrs_of(obj).into_iter().skip(1) {
                    if rng.gen_bool(1.0 / 3.0) {
                        cs.push(attr);
                    }
                }
                cs.sort();
                chain[d].constraints = cs;
            }

            let mut found = Vec::new();
            let n = count_assignments(scene, &table, &chain, &mut found);
            if n == 1 && found == picked {
                built = Some((chain, picked));
                break;
            }
        }

        let (chain, picked) = built.ok_or(QuestionError::ChainUnsatisfiable {
            scene_id: scene.scene_id,
            retries: CHAIN_RETRIES,
        })?;
        let head = &scene.objects[picked[0]];
        let answer = if head.center.0 < mid { "left" } else { "right" };
        let mut relevant: Vec<String> = picked
            .iter()
            .map(|&i| scene.objects[i].id.clone())
            .collect();
        relevant.sort();
        out.push(QuestionRecord {
            scene_id: scene.scene_id,
            q_idx,
            template: TemplateId::ReferenceChain,
            kind: QuestionKind::Relational,
            text: chain_text(&chain),
            anchor_color: None,
            chain: Some(chain),
            answer: answer.into(),
            relevant_objects: relevant,
            onehot: None,
        });
    }
    Ok(out)
}

/// The closed token vocabulary: every word any template can emit.
pub fn token_vocabulary() -> Vec<String> {
    let mut words: BTreeSet<String> = BTreeSet::new();
    let template_words = [
        "what", "is", "the", "shape", "of", "object", "on", "left", "or", "right", "image",
        "top", "bottom", "closest", "to", "furthest", "from", "how", "many", "objects", "have",
        "same", "as", "that", "above", "below",
    ];
    for w in template_words {
        words.insert(w.to_string());
    }
    for c in PALETTE {
        words.insert(c.word().to_string());
    }
    // shape words only ever appear inside graph-scene reference chains
    for s in ["cube", "sphere", "cylinder"] {
        words.insert(s.to_string());
    }
    for s in ["small", "large", "metal", "matte"] {
        words.insert(s.to_string());
    }
    words.into_iter().collect()
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.trim_end_matches('?')
        .to_lowercase()
        .split_whitespace()
        .map(|s| s.to_string())
        .collect()
}

/// Lossless tokenization plus a normalized bag-of-words vector.
pub fn encode_question(
    text: &str,
    vocab: &[String],
) -> Result<(Vec<usize>, Vec<f64>), QuestionError> {
    let tokens = tokenize(text);
    let mut ids = Vec::with_capacity(tokens.len());
    let mut bow = vec![0.0; vocab.len()];
    for t in &tokens {
        let id = vocab
            .iter()
            .position(|v| v == t)
            .ok_or_else(|| QuestionError::OutOfVocabulary(t.clone()))?;
        ids.push(id);
        bow[id] += 1.0;
    }
    if !tokens.is_empty() {
        let n = tokens.len() as f64;
        for v in &mut bow {
            *v /= n;
        }
    }
    Ok((ids, bow))
}
