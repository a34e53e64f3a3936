//! Synthetic oracle experiment: corrupt a clean dataset, run the correction
//! pipeline, and compare the result with the ground truth.
//!
//! ```bash
//! cargo run --release -p denoise-fet --example recovery_experiment
//! ```

use std::time::Instant;

use denoise_fet::classifier::{forward, predict_sets, train_pretrain, LinearModel};
use denoise_fet::correction::{run_pipeline, PipelineConfig};
use denoise_fet::dataset::{
    corrupted_cells, inject_noise, make_synthetic_splits, Dataset, NoiseSpec,
};
use denoise_fet::metrics::{cell_agreement, detection_score, typing_score};

fn test_macro_f1(train: &Dataset, dev: &Dataset, test: &Dataset, config: &PipelineConfig) -> f64 {
    let mut model = LinearModel::zeros(train.n_types(), train.feature_dim());
    train_pretrain(&mut model, train, dev, &config.train_config()).unwrap();
    let predicted = predict_sets(&forward(&model, test).unwrap());
    typing_score(&predicted, &test.label_sets())
        .unwrap()
        .macro_f1
}

fn main() {
    let start = Instant::now();
    let splits = make_synthetic_splits(2000, 500, 1000, 30, 20, 1).unwrap();
    let (dev, test) = (splits.dev.unwrap(), splits.test.unwrap());
    let spec = NoiseSpec {
        false_negative_rate: 0.15,
        false_positive_rate: 0.05,
        seed: 7,
    };
    let (noisy, truth) = inject_noise(&splits.train, &spec).unwrap();
    let corrupted = corrupted_cells(&truth, &noisy).unwrap();
    let n_types = noisy.n_types();
    let cells = noisy.len() * n_types;

    let config = PipelineConfig::default();
    let out = run_pipeline(&noisy, &dev, &config).unwrap();
    let report = &out.report;
    println!(
        "pretrain: {} steps, best dev macro-F1 {:.4} at step {}",
        report.pretrain.steps_taken,
        report.pretrain.best_dev_metric.unwrap(),
        report.pretrain.best_step
    );

    let before = cell_agreement(&noisy.label_sets(), truth.labels(), n_types).unwrap();
    let after = cell_agreement(&out.dataset.label_sets(), truth.labels(), n_types).unwrap();
    println!(
        "corrupted cells {} / {} ({:.4})",
        corrupted.len(),
        cells,
        corrupted.len() as f64 / cells as f64
    );
    println!("agreement with truth: noisy {before:.4} -> denoised {after:.4}");

    let flagged = out.selection.mask.cells().collect();
    let detection = detection_score(&flagged, &corrupted);
    println!(
        "flagged {} cells: detection precision {:.4}, recall {:.4}, F1 {:.4}",
        report.flagged_cell_count, detection.precision, detection.recall, detection.f1
    );
    println!(
        "flips: 0->1 {}, 1->0 {}",
        report.flips.to_positive, report.flips.to_negative
    );

    let f1_noisy = test_macro_f1(&noisy, &dev, &test, &config);
    let f1_denoised = test_macro_f1(&out.dataset, &dev, &test, &config);
    let f1_clean = test_macro_f1(&splits.train, &dev, &test, &config);
    println!("test macro-F1: noisy {f1_noisy:.4}, denoised {f1_denoised:.4}, clean {f1_clean:.4}");
    println!("elapsed {:.2?}", start.elapsed());
}
