//! Outlier filtering, Gaussian fitting and noisy-label selection on one type.
//!
//! ```bash
//! cargo run -p denoise-fet --example posterior_selection
//! ```

use denoise_fet::dataset::Cell;
use denoise_fet::posterior::{
    filter_obvious_noise, fit_gaussians, is_flagged, posterior_positive, LabeledLogit,
    SelectionConfig,
};

fn main() -> denoise_fet::Result<()> {
    // Logits of one type: annotated positives cluster high, negatives low, with a
    // few annotations that disagree with the model.
    #[rustfmt::skip]
    let column: Vec<(f64, bool)> = vec![
        (4.1, true), (3.6, true), (5.0, true), (4.4, true), (-3.9, true), (0.4, true),
        (-4.2, false), (-3.1, false), (-5.0, false), (-3.8, false), (-4.6, false),
        (3.8, false), (-0.2, false), (-4.0, false),
    ];
    let entries: Vec<LabeledLogit> = column
        .iter()
        .enumerate()
        .map(|(i, &(logit, annotation))| LabeledLogit {
            cell: Cell::new(i, 0),
            logit,
            annotation,
        })
        .collect();

    let config = SelectionConfig::default();
    let filtered = filter_obvious_noise(&entries, config.alpha)?;
    println!(
        "filter: {} positives and {} negatives kept after {} passes",
        filtered.positives.len(),
        filtered.negatives.len(),
        filtered.iterations
    );

    let g = fit_gaussians(
        &filtered.positive_logits(),
        &filtered.negative_logits(),
        &config,
    );
    println!(
        "fit: mu1 {:.3} delta1 {:.3} | mu0 {:.3} delta0 {:.3} | prior1 {:.3}",
        g.mu1, g.delta1, g.mu0, g.delta0, g.prior1
    );

    println!(
        "{:>6} {:>6} {:>10} {:>8}",
        "logit", "label", "p(y=1|l)", "flagged"
    );
    for e in &entries {
        let p = posterior_positive(e.logit, &g)?;
        let flag = is_flagged(e.annotation, p, config.epsilon);
        println!(
            "{:>6.1} {:>6} {:>10.4} {:>8}",
            e.logit,
            u8::from(e.annotation),
            p,
            if flag { "yes" } else { "" }
        );
    }
    Ok(())
}
