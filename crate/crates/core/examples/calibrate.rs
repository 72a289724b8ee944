// scratch calibration harness (not part of the deliverable)
use spatial_psl_core::data::{generate_split, Split, SplitSpec};
use spatial_psl_core::matcher::MatcherConfig;
use spatial_psl_core::nn::*;
use spatial_psl_core::pipeline::{assemble_split, MaskSource};
use spatial_psl_core::question::{token_vocabulary, ANSWER_VOCAB, ONEHOT_DIM};
use spatial_psl_core::scene::SceneMode;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let grid: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let train_scenes: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let batch: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(64);

    let split = SplitSpec {
        train: train_scenes,
        val: 200,
        test: 200,
        questions_per_scene: 10,
    };
    let seed = 7;
    let t0 = Instant::now();
    let vocab = token_vocabulary();
    let mcfg = MatcherConfig::default();
    let mut data = VqaDataset::default();
    for s in Split::ALL {
        let rows = generate_split(SceneMode::SortOfClevr, seed, split, s).unwrap();
        let scenes: Vec<_> = rows.iter().map(|(sc, _)| sc.clone()).collect();
        let questions: Vec<_> = rows.iter().flat_map(|(_, qs)| qs.clone()).collect();
        let samples = assemble_split(
            &scenes, &questions, &MaskSource::Compute(&mcfg), grid, QMode::OneHot, &vocab,
        ).unwrap();
        match s {
            Split::Train => data.train = samples,
            Split::Val => data.val = samples,
            Split::Test => data.test = samples,
        }
    }
    println!("data ready in {:.0}s; grid={grid} lr={lr} batch={batch} epochs={epochs}", t0.elapsed().as_secs_f64());

    let mcfg_model = ModelConfig {
        regions: grid * grid,
        feat_dim: 5,
        q_dim: ONEHOT_DIM,
        q_mode: QMode::OneHot,
        vocab_size: 0,
        g_widths: [64, 64, 64, 64],
        f_hidden: [64, 64, 32],
        n_classes: ANSWER_VOCAB.len(),
        attention: false,
    };
    let tc = TrainConfig { lr, batch, epochs, seed, chunks: 8, optimizer: OptimizerKind::Adam };

    let t = Instant::now();
    let baseline = train(&mcfg_model, &tc, Variant::Baseline, &data, None, None).unwrap();
    println!("baseline: test {:.4} train {:.4} ({:.0}s)", baseline.test_acc,
        baseline.metrics.last().unwrap().train_acc, t.elapsed().as_secs_f64());
    let teacher = train(&mcfg_model, &tc, Variant::TeacherExternalMask, &data, None, None).unwrap();
    println!("teacher:  test {:.4} train {:.4} (+{:.4})", teacher.test_acc,
        teacher.metrics.last().unwrap().train_acc, teacher.test_acc - baseline.test_acc);

    for (pi, sched, l2) in [
        (0.575, Schedule::Variable, L2Kind::CrossEntropy),
        (0.9, Schedule::Variable, L2Kind::CrossEntropy),
        (0.575, Schedule::Variable, L2Kind::Euclidean),
    ] {
        let d = DistillConfig { pi, schedule: sched, l2, mode: DistillMode::Sequential };
        let student = train(&mcfg_model, &tc, Variant::Student, &data,
            Some((&teacher.model, Variant::TeacherExternalMask)), Some(&d)).unwrap();
        println!("student pi={pi} {sched:?} {l2:?}: test {:.4} (delta {:+.4})",
            student.test_acc, student.test_acc - baseline.test_acc);
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
