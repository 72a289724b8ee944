//! Dataset builds: scenes + questions as JSON lines, rasters as binary PPM,
//! and a manifest recording vocabularies, palette, and split sizes.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! train/scenes.jsonl   train/questions.jsonl   train/images/<id>.ppm
//! val/...              test/...
//! ```
//!
//! Scene ids are global: train scenes first, then val, then test. Scene
//! `i` is generated from `seed + i` and its questions from a derived
//! stream, so regeneration with the same seed is byte-identical and scenes
//! can be produced in parallel.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::question::{
    generate_clevr_lite_questions, generate_questions, token_vocabulary, QuestionRecord,
    ANSWER_VOCAB, ONEHOT_DIM, RASTER_TEMPLATES,
};
use crate::scene::{generate_scene, render, GenConfig, Scene, SceneMode, PALETTE};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad json on line {line} of {path}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("manifest schema version {found} unsupported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Question(#[from] crate::question::QuestionError),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub questions_per_scene: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 9800,
            val: 200,
            test: 200,
            questions_per_scene: 10,
        }
    }
}

impl SplitSpec {
    pub fn scenes(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    /// Global scene-id range of a split.
    pub fn id_range(&self, split: Split) -> std::ops::Range<u64> {
        let (start, len) = match split {
            Split::Train => (0, self.train),
            Split::Val => (self.train, self.val),
            Split::Test => (self.train + self.val, self.test),
        };
        start as u64..(start + len) as u64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema_version: u32,
    pub mode: SceneMode,
    pub seed: u64,
    pub split: SplitSpec,
    pub image_size: usize,
    pub palette: Vec<(String, [u8; 3])>,
    pub templates: Vec<String>,
    pub answer_vocab: Vec<String>,
    pub token_vocab: Vec<String>,
    pub onehot_dim: usize,
}

/// Question generation gets an independent seeded stream per scene.
fn question_seed(base: u64, scene_id: u64) -> u64 {
    base ^ scene_id.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(0x51ed)
}

pub fn build_manifest(mode: SceneMode, seed: u64, split: SplitSpec) -> DataManifest {
    DataManifest {
        schema_version: SCHEMA_VERSION,
        mode,
        seed,
        split,
        image_size: crate::scene::IMAGE_SIZE,
        palette: PALETTE
            .iter()
            .map(|c| (c.word().to_string(), c.rgb()))
            .collect(),
        templates: RASTER_TEMPLATES.iter().map(|t| t.name().to_string()).collect(),
        answer_vocab: ANSWER_VOCAB.iter().map(|s| s.to_string()).collect(),
        token_vocab: token_vocabulary(),
        onehot_dim: ONEHOT_DIM,
    }
}

/// Generate one split in memory.
pub fn generate_split(
    mode: SceneMode,
    seed: u64,
    split_spec: SplitSpec,
    split: Split,
) -> Result<Vec<(Scene, Vec<QuestionRecord>)>, DataError> {
    let gen_cfg = GenConfig::default();
    let k = split_spec.questions_per_scene;
    let ids: Vec<u64> = split_spec.id_range(split).collect();
    ids.par_iter()
        .map(|&id| {
            let scene = generate_scene(seed + id, mode, &gen_cfg)?;
            let scene = Scene { scene_id: id, ..scene };
            let qs = match mode {
                SceneMode::SortOfClevr => generate_questions(&scene, question_seed(seed, id), k)?,
                SceneMode::ClevrLite => {
                    generate_clevr_lite_questions(&scene, question_seed(seed, id), k)?
                }
            };
            Ok((scene, qs))
        })
        .collect()
}

/// Build the full dataset on disk. Raster images are only written for
/// raster scenes.
pub fn build_dataset(
    out_dir: &Path,
    mode: SceneMode,
    seed: u64,
    split: SplitSpec,
) -> Result<DataManifest, DataError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let manifest = build_manifest(mode, seed, split);
    let manifest_path = out_dir.join("manifest.json");
    let mut f = fs::File::create(&manifest_path).map_err(io_err(&manifest_path))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(io_err(&manifest_path))?;

    for s in Split::ALL {
        let dir = out_dir.join(s.dir_name());
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let rows = generate_split(mode, seed, split, s)?;

        let scenes_path = dir.join("scenes.jsonl");
        let mut sf = std::io::BufWriter::new(
            fs::File::create(&scenes_path).map_err(io_err(&scenes_path))?,
        );
        let questions_path = dir.join("questions.jsonl");
        let mut qf = std::io::BufWriter::new(
            fs::File::create(&questions_path).map_err(io_err(&questions_path))?,
        );
        let images_dir = dir.join("images");
        if mode == SceneMode::SortOfClevr {
            fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
        }
        for (scene, questions) in &rows {
            writeln!(sf, "{}", serde_json::to_string(scene).unwrap())
                .map_err(io_err(&scenes_path))?;
            for q in questions {
                writeln!(qf, "{}", serde_json::to_string(q).unwrap())
                    .map_err(io_err(&questions_path))?;
            }
            if mode == SceneMode::SortOfClevr {
                let img = render(scene)?;
                let p = images_dir.join(format!("{}.ppm", scene.scene_id));
                img.write_ppm(&p).map_err(|e| DataError::Io {
                    path: p.clone(),
                    source: match e {
                        crate::img::ImgError::Io(io) => io,
                        other => std::io::Error::other(other.to_string()),
                    },
                })?;
            }
        }
    }
    Ok(manifest)
}

pub fn load_manifest(out_dir: &Path) -> Result<DataManifest, DataError> {
    let path = out_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: DataManifest =
        serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: path.clone(),
            line: 1,
            source,
        })?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(DataError::SchemaVersion {
            found: manifest.schema_version,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

fn load_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, DataError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DataError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn load_scenes(out_dir: &Path, split: Split) -> Result<Vec<Scene>, DataError> {
    load_jsonl(&out_dir.join(split.dir_name()).join("scenes.jsonl"))
}

pub fn load_questions(out_dir: &Path, split: Split) -> Result<Vec<QuestionRecord>, DataError> {
    load_jsonl(&out_dir.join(split.dir_name()).join("questions.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_id_ranges_are_contiguous() {
        let s = SplitSpec {
            train: 10,
            val: 2,
            test: 3,
            questions_per_scene: 4,
        };
        assert_eq!(s.id_range(Split::Train), 0..10);
        assert_eq!(s.id_range(Split::Val), 10..12);
        assert_eq!(s.id_range(Split::Test), 12..15);
    }

    #[test]
    fn dataset_counts_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec {
            train: 10,
            val: 2,
            test: 2,
            questions_per_scene: 10,
        };
        let manifest = build_dataset(dir.path(), SceneMode::SortOfClevr, 7, split).unwrap();
        assert_eq!(manifest.onehot_dim, 36);

        let mut total_scenes = 0;
        let mut total_qs = 0;
        let mut total_imgs = 0;
        for s in Split::ALL {
            let scenes = load_scenes(dir.path(), s).unwrap();
            let qs = load_questions(dir.path(), s).unwrap();
            total_scenes += scenes.len();
            total_qs += qs.len();
            total_imgs += fs::read_dir(dir.path().join(s.dir_name()).join("images"))
                .unwrap()
                .count();
            for q in &qs {
                assert!(split.id_range(s).contains(&q.scene_id));
            }
        }
        assert_eq!(total_scenes, 14);
        assert_eq!(total_qs, 140);
        assert_eq!(total_imgs, 14);
        assert!(load_manifest(dir.path()).is_ok());
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let split = SplitSpec {
            train: 6,
            val: 2,
            test: 2,
            questions_per_scene: 5,
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        build_dataset(d1.path(), SceneMode::SortOfClevr, 3, split).unwrap();
        build_dataset(d2.path(), SceneMode::SortOfClevr, 3, split).unwrap();
        for s in Split::ALL {
            for file in ["scenes.jsonl", "questions.jsonl"] {
                let a = fs::read(d1.path().join(s.dir_name()).join(file)).unwrap();
                let b = fs::read(d2.path().join(s.dir_name()).join(file)).unwrap();
                assert_eq!(a, b, "{file} differs for {s:?}");
            }
        }
        let a = fs::read(d1.path().join("train/images/0.ppm")).unwrap();
        let b = fs::read(d2.path().join("train/images/0.ppm")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn clevr_lite_dataset_has_no_images() {
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec {
            train: 3,
            val: 1,
            test: 1,
            questions_per_scene: 2,
        };
        build_dataset(dir.path(), SceneMode::ClevrLite, 11, split).unwrap();
        assert!(!dir.path().join("train/images").exists());
        let qs = load_questions(dir.path(), Split::Train).unwrap();
        assert_eq!(qs.len(), 6);
        assert!(qs.iter().all(|q| q.chain.is_some()));
    }

    #[test]
    fn schema_version_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let split = SplitSpec {
            train: 1,
            val: 1,
            test: 1,
            questions_per_scene: 1,
        };
        build_dataset(dir.path(), SceneMode::SortOfClevr, 1, split).unwrap();
        let p = dir.path().join("manifest.json");
        let text = fs::read_to_string(&p)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&p, text).unwrap();
        assert!(matches!(
            load_manifest(dir.path()),
            Err(DataError::SchemaVersion { found: 99, .. })
        ));
    }
}
