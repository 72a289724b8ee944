//! Soft-logic spatial matching for synthetic visual question answering,
//! plus a small self-contained neural stack for teacher-student experiments.
//!
//! The crate is organized around a pipeline:
//!
//! 1. [`rule_lang`]: a weighted-rule language (programs + evidence files).
//! 2. [`ground`]: instantiates rules over constants into hinge potentials.
//! 3. [`infer`]: minimizes the hinge energy over the unit box (plus a
//!    brute-force oracle for small instances).
//! 4. [`scene`] / [`question`]: synthetic scene graphs, rasters, and
//!    templated question/answer records.
//! 5. [`matcher`]: matches question mentions to scene objects via the
//!    soft-logic engine and renders distance-decay masks.
//! 6. [`nn`]: dense layers, a relational module, soft attention, losses,
//!    manual gradients, and training loops with distillation.
//! 7. [`data`]: dataset builds, manifests, and split handling.

pub mod data;
pub mod ground;
pub mod img;
pub mod infer;
pub mod matcher;
pub mod nn;
pub mod pipeline;
pub mod question;
pub mod rule_lang;
pub mod scene;
