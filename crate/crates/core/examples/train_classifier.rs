//! Pretrain the linear typing model with early stopping and score it on a test split.
//!
//! ```bash
//! cargo run --release -p denoise-fet --example train_classifier
//! ```

use denoise_fet::classifier::{forward, predict_sets, train_pretrain, LinearModel, TrainConfig};
use denoise_fet::dataset::make_synthetic_splits;
use denoise_fet::metrics::typing_score;

fn main() -> denoise_fet::Result<()> {
    let splits = make_synthetic_splits(2000, 500, 1000, 30, 20, 1)?;
    let (dev, test) = (splits.dev.unwrap(), splits.test.unwrap());
    let config = TrainConfig::default();
    let mut model = LinearModel::zeros(splits.train.n_types(), splits.train.feature_dim());
    let report = train_pretrain(&mut model, &splits.train, &dev, &config)?;

    for e in &report.dev_metric_history {
        println!("step {:>5}  dev macro-F1 {:.4}", e.step, e.metric);
    }
    println!(
        "restored step {} of {} (stopped early: {})",
        report.best_step, report.steps_taken, report.stopped_early
    );

    let predicted = predict_sets(&forward(&model, &test)?);
    let score = typing_score(&predicted, &test.label_sets())?;
    println!(
        "test: macro P {:.4} R {:.4} F1 {:.4}, micro F1 {:.4}, strict acc {:.4}",
        score.macro_precision,
        score.macro_recall,
        score.macro_f1,
        score.micro_f1,
        score.strict_accuracy
    );
    Ok(())
}
