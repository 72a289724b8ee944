//! Glue between the dataset, the matcher, and the training stack: turn
//! (scene, question) pairs plus masks into training samples.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::img::MaskGrid;
use crate::matcher::{question_mask, MatchError, MatcherConfig};
use crate::nn::{extract_object_features, NnError, QInput, QMode, VqaSample};
use crate::question::{answer_class, encode_question, QuestionRecord};
use crate::scene::{render, Scene, SceneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene {0} not found for question")]
    SceneMissing(u64),
    #[error("question {scene_id}/{q_idx} has no one-hot encoding")]
    OnehotMissing { scene_id: u64, q_idx: usize },
    #[error("answer `{0}` is outside the answer vocabulary")]
    UnknownAnswer(String),
    #[error("mask file missing: {0}")]
    MaskMissing(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Question(#[from] crate::question::QuestionError),
    #[error(transparent)]
    Img(#[from] crate::img::ImgError),
}

/// Where the teacher's masks come from.
pub enum MaskSource<'a> {
    /// No masked features (baseline / attention runs).
    None,
    /// Run the matcher per question.
    Compute(&'a MatcherConfig),
    /// Read `<scene_id>_<q_idx>.pgm` files written by the mask command.
    Dir(&'a Path),
}

/// Build one training sample.
pub fn make_sample(
    scene: &Scene,
    q: &QuestionRecord,
    mask: Option<&MaskGrid>,
    grid: usize,
    q_mode: QMode,
    vocab: &[String],
) -> Result<VqaSample, PipelineError> {
    let image = render(scene)?;
    let flat = |feats: Vec<Vec<f64>>| feats.into_iter().flatten().collect::<Vec<f64>>();
    let features_raw = flat(extract_object_features(&image, grid, None)?);
    let features_masked = match mask {
        Some(m) => Some(flat(extract_object_features(&image, grid, Some(m))?)),
        None => None,
    };
    let qinput = match q_mode {
        QMode::OneHot => {
            let oh = q.onehot.as_ref().ok_or(PipelineError::OnehotMissing {
                scene_id: q.scene_id,
                q_idx: q.q_idx,
            })?;
            QInput::OneHot(oh.iter().map(|&b| b as f64).collect())
        }
        QMode::BagOfWords => {
            let (tokens, _) = encode_question(&q.text, vocab)?;
            QInput::Tokens(tokens)
        }
    };
    let label = answer_class(&q.answer).ok_or_else(|| PipelineError::UnknownAnswer(q.answer.clone()))?;
    Ok(VqaSample {
        features_raw,
        features_masked,
        q: qinput,
        label,
    })
}

/// Assemble every question of a split into samples, in question order.
pub fn assemble_split(
    scenes: &[Scene],
    questions: &[QuestionRecord],
    masks: &MaskSource,
    grid: usize,
    q_mode: QMode,
    vocab: &[String],
) -> Result<Vec<VqaSample>, PipelineError> {
    let by_id: BTreeMap<u64, &Scene> = scenes.iter().map(|s| (s.scene_id, s)).collect();
    questions
        .par_iter()
        .map(|q| {
            let scene = by_id
                .get(&q.scene_id)
                .copied()
                .ok_or(PipelineError::SceneMissing(q.scene_id))?;
            let mask = match masks {
                MaskSource::None => None,
                MaskSource::Compute(mcfg) => Some(question_mask(q, scene, mcfg)?.1),
                MaskSource::Dir(dir) => {
                    let path = dir.join(format!("{}_{}.pgm", q.scene_id, q.q_idx));
                    if !path.exists() {
                        return Err(PipelineError::MaskMissing(path.display().to_string()));
                    }
                    Some(MaskGrid::read_pgm(&path)?)
                }
            };
            make_sample(scene, q, mask.as_ref(), grid, q_mode, vocab)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::question::{generate_questions, token_vocabulary};
    use crate::scene::{generate_scene, GenConfig, SceneMode};

    #[test]
    fn samples_assemble_with_and_without_masks() {
        let scene = generate_scene(4, SceneMode::SortOfClevr, &GenConfig::default()).unwrap();
        let qs = generate_questions(&scene, 99, 4).unwrap();
        let vocab = token_vocabulary();
        let mcfg = MatcherConfig::default();
        let plain = assemble_split(
            std::slice::from_ref(&scene),
            &qs,
            &MaskSource::None,
            8,
            QMode::OneHot,
            &vocab,
        )
        .unwrap();
        assert_eq!(plain.len(), 4);
        assert!(plain.iter().all(|s| s.features_masked.is_none()));
        assert_eq!(plain[0].features_raw.len(), 64 * 5);

        let masked = assemble_split(
            std::slice::from_ref(&scene),
            &qs,
            &MaskSource::Compute(&mcfg),
            4,
            QMode::BagOfWords,
            &vocab,
        )
        .unwrap();
        assert!(masked.iter().all(|s| s.features_masked.is_some()));
        // masked features never exceed the raw ones (mask is in [0,1])
        for s in &masked {
            let m = s.features_masked.as_ref().unwrap();
            for (i, (&mv, &rv)) in m.iter().zip(&s.features_raw).enumerate() {
                // coordinates (indices 3,4 of each 5-chunk) are unchanged
                if i % 5 >= 3 {
                    assert_eq!(mv, rv);
                } else {
                    assert!(mv <= rv + 1e-9);
                }
            }
        }
    }

    #[test]
    fn missing_scene_is_reported() {
        let scene = generate_scene(4, SceneMode::SortOfClevr, &GenConfig::default()).unwrap();
        let mut qs = generate_questions(&scene, 99, 1).unwrap();
        qs[0].scene_id = 777;
        let vocab = token_vocabulary();
        assert!(matches!(
            assemble_split(&[scene], &qs, &MaskSource::None, 8, QMode::OneHot, &vocab),
            Err(PipelineError::SceneMissing(777))
        ));
    }
}
