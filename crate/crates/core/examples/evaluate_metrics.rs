//! Typing and detection metrics on small hand-made inputs.
//!
//! ```bash
//! cargo run -p denoise-fet --example evaluate_metrics
//! ```

use std::collections::{BTreeMap, BTreeSet};

use denoise_fet::cli::{detection_table, typing_table};
use denoise_fet::metrics::{detection_score_stratified, typing_score};

fn set(labels: &[&'static str]) -> BTreeSet<&'static str> {
    labels.iter().copied().collect()
}

fn main() -> denoise_fet::Result<()> {
    let predicted = [
        set(&["person", "artist"]),
        set(&["location"]),
        set(&[]),
        set(&["org", "company", "team"]),
    ];
    let gold = [
        set(&["person", "musician"]),
        set(&["location"]),
        set(&["event"]),
        set(&["org", "company"]),
    ];
    println!("{}\n", typing_table(&typing_score(&predicted, &gold)?));

    // Cells keyed by (sample, type), valued by their noisy annotation.
    let flagged: BTreeMap<(u32, u32), bool> = [
        ((0, 1), true),
        ((0, 4), false),
        ((2, 2), false),
        ((3, 0), true),
    ]
    .into();
    let corrupted: BTreeMap<(u32, u32), bool> =
        [((0, 1), true), ((2, 2), false), ((5, 3), true)].into();
    println!(
        "{}",
        detection_table(&detection_score_stratified(&flagged, &corrupted))
    );
    Ok(())
}
