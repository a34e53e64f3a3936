use std::collections::BTreeSet;
use std::sync::Arc;

use denoise_fet::classifier::TrainConfig;
use denoise_fet::correction::{changed_cells, run_pipeline, PipelineConfig, PipelineOutput};
use denoise_fet::dataset::{
    inject_noise, make_separable_splits, make_synthetic_splits, Cell, Dataset, NoiseSpec, Sample,
    TypeVocabulary,
};
use denoise_fet::posterior::SelectionConfig;

fn quick_config() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            max_epochs: 8,
            eval_every: 25,
            finetune_steps: 150,
            ..TrainConfig::default()
        },
        seed: 5,
        ..PipelineConfig::default()
    }
}

fn noisy_problem() -> (Dataset, Dataset, Dataset) {
    let splits = make_synthetic_splits(300, 120, 0, 8, 6, 11).unwrap();
    let spec = NoiseSpec {
        false_negative_rate: 0.2,
        false_positive_rate: 0.05,
        seed: 3,
    };
    let (noisy, _) = inject_noise(&splits.train, &spec).unwrap();
    (splits.train, noisy, splits.dev.unwrap())
}

fn run(train: &Dataset, dev: &Dataset) -> PipelineOutput {
    run_pipeline(train, dev, &quick_config()).unwrap()
}

#[test]
fn only_flagged_cells_change_and_flips_are_bounded() {
    let (_, noisy, dev) = noisy_problem();
    let out = run(&noisy, &dev);
    assert!(!out.selection.mask.is_empty());
    let changed = changed_cells(&noisy, &out.dataset);
    assert!(changed
        .iter()
        .all(|c| out.selection.mask.contains(c.sample, c.type_index)));
    assert_eq!(out.report.flips.total(), changed.len());
    assert!(out.report.flips.total() <= out.report.flagged_cell_count);
    assert_eq!(out.report.flagged_cell_count, out.selection.mask.len());
    let per_type: usize = out.report.per_type.iter().map(|t| t.flagged).sum();
    assert_eq!(per_type, out.report.flagged_cell_count);
}

#[test]
fn features_ids_order_and_vocabulary_pass_through() {
    let (_, noisy, dev) = noisy_problem();
    let out = run(&noisy, &dev);
    assert_eq!(out.dataset.vocabulary(), noisy.vocabulary());
    assert_eq!(out.dataset.split(), noisy.split());
    assert_eq!(out.dataset.len(), noisy.len());
    for (a, b) in noisy.samples().iter().zip(out.dataset.samples()) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.features, b.features);
    }
}

#[test]
fn pipeline_is_deterministic() {
    let (_, noisy, dev) = noisy_problem();
    let a = run(&noisy, &dev);
    let b = run(&noisy, &dev);
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.selection.mask, b.selection.mask);
    assert_eq!(a.model, b.model);
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
}

fn permute_types(ds: &Dataset, vocab: &Arc<TypeVocabulary>, perm: &[usize]) -> Dataset {
    let samples = ds
        .samples()
        .iter()
        .map(|s| Sample {
            labels: s.labels.iter().map(|&t| perm[t]).collect(),
            ..s.clone()
        })
        .collect();
    Dataset::new(vocab.clone(), samples, ds.split()).unwrap()
}

#[test]
fn output_does_not_depend_on_type_order() {
    let (_, noisy, dev) = noisy_problem();
    let n = noisy.n_types();
    // Old type t moves to position perm[t].
    let perm: Vec<usize> = (0..n).map(|t| (t * 3 + 1) % n).collect();
    let mut names = vec![String::new(); n];
    for t in 0..n {
        names[perm[t]] = noisy.vocabulary().name(t).to_string();
    }
    let vocab = Arc::new(TypeVocabulary::new(names).unwrap());
    let base = run(&noisy, &dev);
    let moved = run(
        &permute_types(&noisy, &vocab, &perm),
        &permute_types(&dev, &vocab, &perm),
    );

    let expected_mask: BTreeSet<Cell> = base
        .selection
        .mask
        .cells()
        .map(|c| Cell::new(c.sample, perm[c.type_index]))
        .collect();
    assert_eq!(
        moved.selection.mask.cells().collect::<BTreeSet<_>>(),
        expected_mask
    );
    assert_eq!(moved.dataset, permute_types(&base.dataset, &vocab, &perm));
}

#[test]
fn empty_mask_returns_input_unchanged() {
    let splits = make_separable_splits(200, 80, 0, 5, 1.0, 2).unwrap();
    let config = PipelineConfig {
        selection: SelectionConfig {
            epsilon: 0.0,
            ..SelectionConfig::default()
        },
        ..quick_config()
    };
    let out = run_pipeline(&splits.train, splits.dev.as_ref().unwrap(), &config).unwrap();
    assert!(out.selection.mask.is_empty());
    assert_eq!(out.dataset, splits.train);
    assert!(out.report.finetune.is_none());
    assert!(out.report.note.is_some());
    assert_eq!(out.report.flips.total(), 0);
}

#[test]
fn denoising_moves_labels_toward_truth() {
    let (clean, noisy, dev) = noisy_problem();
    let out = run(&noisy, &dev);
    let wrong = |ds: &Dataset| changed_cells(&clean, ds).len();
    assert!(wrong(&out.dataset) < wrong(&noisy));
}

#[test]
fn incompatible_dev_set_is_rejected_before_training() {
    let (_, noisy, _) = noisy_problem();
    let other = make_synthetic_splits(50, 20, 0, 3, 6, 1)
        .unwrap()
        .dev
        .unwrap();
    let err = run_pipeline(&noisy, &other, &quick_config()).unwrap_err();
    assert_eq!(err.stage, denoise_fet::correction::Stage::Validate);
}
