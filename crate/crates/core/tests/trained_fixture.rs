//! Measured properties of a tiny model trained on the procedural fixture.
//! One model is trained per test binary and shared.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::OnceLock;

use rand::SeedableRng;

use repmix::config::RunConfig;
use repmix::corruptions::CorruptionKind;
use repmix::dataset::{fingerprint_frequencies, generate_fixture, AugmentConfig, Dataset, FixtureConfig, Split};
use repmix::evaluation::{
    attribution_accuracy, attack_sweep, eval_input, evaluate, export_embeddings, gradcam_heatmap, intra_inter_distances,
    EvalCorruption,
};
use repmix::training::{fit, train_epoch, Adam, TrainConfig};
use repmix::Model;

struct Trained {
    data: Dataset,
    model: Model,
    cfg: TrainConfig,
    stored_val_accuracy: f64,
}

fn run_config() -> RunConfig {
    let mut rc = RunConfig::default();
    rc.merge_file(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/fixture.conf"))
        .unwrap();
    rc.set("seed", "1").unwrap();
    rc
}

fn fixture() -> Dataset {
    generate_fixture(&FixtureConfig::new(4, 6, 50), 1).unwrap()
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let rc = run_config();
        let data = fixture();
        let cfg = rc.train_config().unwrap();
        let mc = rc.model_config(data.manifest.header.sources.clone(), data.real_index()).unwrap();
        let mut model = Model::new(mc, rc.init_seed().unwrap()).unwrap();
        let outcome = fit(&mut model, &data, &cfg).unwrap();
        Trained {
            data,
            model,
            cfg,
            stored_val_accuracy: outcome.best.val_accuracy,
        }
    })
}

fn aug() -> &'static AugmentConfig {
    &trained().cfg.augment
}

#[test]
fn attributes_held_out_images_to_their_source() {
    let t = trained();
    let report = evaluate(&t.model, &t.data, Split::Test, aug(), None).unwrap();
    assert!(report.overall.attribution_accuracy >= 0.9, "{:?}", report.overall);
    assert!(report.overall.detection_accuracy >= report.overall.attribution_accuracy);
}

#[test]
fn stored_checkpoint_accuracy_matches_reevaluation() {
    let t = trained();
    let val = t.data.split_indices(Split::Val);
    let again = attribution_accuracy(&t.model, &t.data, &val, aug()).unwrap();
    assert_eq!(again, t.stored_val_accuracy);
}

#[test]
fn heavy_noise_does_not_help() {
    let t = trained();
    let clean = evaluate(&t.model, &t.data, Split::Test, aug(), None).unwrap();
    let noisy = EvalCorruption {
        kind: CorruptionKind::GaussianNoise,
        severity: 5,
        seed: 3,
    };
    let corrupted = evaluate(&t.model, &t.data, Split::Test, aug(), Some(&noisy)).unwrap();
    assert!(corrupted.overall.attribution_accuracy <= clean.overall.attribution_accuracy);
}

#[test]
fn attack_error_grows_with_budget() {
    let t = trained();
    let indices: Vec<usize> = t.data.split_indices(Split::Test).into_iter().step_by(10).collect();
    let eps: Vec<f64> = [2.0, 4.0, 8.0, 16.0, 24.0, 32.0].iter().map(|e| e / 255.0).collect();
    let results = attack_sweep(&t.model, &t.data, &indices, aug(), &eps, 20).unwrap();
    for w in results.windows(2) {
        assert!(w[1].attribution_error >= w[0].attribution_error, "{results:?}");
    }
    for r in &results {
        assert!(r.max_linf <= r.epsilon);
    }
}

#[test]
fn embeddings_cluster_by_source() {
    let t = trained();
    let rows = export_embeddings(&t.model, &t.data, Split::Test, aug()).unwrap();
    let (intra, inter) = intra_inter_distances(&rows);
    assert!(intra < inter, "intra {intra} inter {inter}");
}

#[test]
fn gradcam_concentrates_on_a_stamped_quadrant() {
    let t = trained();
    let source = 1;
    let (fx, fy) = fingerprint_frequencies(source).unwrap();
    let real = t.data.real_index();
    let index = t
        .data
        .split_indices(Split::Test)
        .into_iter()
        .find(|&i| t.data.items[i].source_label == real)
        .unwrap();
    let mut img = eval_input(&t.data, index, aug(), None).unwrap();
    let (w, h) = (img.width(), img.height());
    let (bw, bh) = (w / 2, h / 2);
    for y in 0..bh {
        for x in 0..bw {
            let v = 0.02 * (2.0 * PI * fx * x as f64).cos() * (2.0 * PI * fy * y as f64).cos();
            for c in 0..3 {
                img.set(x, y, c, (img.get(x, y, c) + v).clamp(0.0, 1.0));
            }
        }
    }
    let heat = gradcam_heatmap(&t.model, &img, source).unwrap();
    assert!(!heat.flat);
    let mut order: Vec<usize> = (0..heat.values.len()).collect();
    order.sort_by(|&a, &b| heat.values[b].total_cmp(&heat.values[a]));
    let top = &order[..heat.values.len() / 10];
    let total: f64 = top.iter().map(|&i| heat.values[i]).sum();
    let inside: f64 = top.iter().filter(|&&i| i % w < bw && i / w < bh).map(|&i| heat.values[i]).sum();
    assert!(inside / total >= 0.6, "{inside} of {total}");
}

#[test]
fn three_epochs_reduce_the_loss_in_most_seeds() {
    let mut decreasing = 0;
    let data = fixture();
    for seed in [1u64, 2, 3] {
        let mut rc = run_config();
        rc.set("seed", &seed.to_string()).unwrap();
        let cfg = rc.train_config().unwrap();
        let mc = rc.model_config(data.manifest.header.sources.clone(), data.real_index()).unwrap();
        let mut model = Model::new(mc, rc.init_seed().unwrap()).unwrap();
        let mut adam = Adam::new(&model, cfg.adam.clone());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        let losses: Vec<f64> = (0..3)
            .map(|e| train_epoch(&mut model, &data, &cfg, cfg.lr_at(e), &mut adam, &mut rng).unwrap().l_total)
            .collect();
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 2, "{decreasing} of 3 seeds");
}
