//! Generate a synthetic typing dataset, corrupt it, and inspect the flips.
//!
//! ```bash
//! cargo run -p denoise-fet --example synthetic_data
//! ```

use denoise_fet::dataset::{corrupted_cells, inject_noise, make_synthetic, NoiseSpec};

fn main() -> denoise_fet::Result<()> {
    let (clean, truth) = make_synthetic(500, 12, 8, 1)?;
    let positives: usize = clean.samples().iter().map(|s| s.labels.len()).sum();
    println!(
        "{} samples, {} types, dim {}, {} positive cells",
        clean.len(),
        clean.n_types(),
        clean.feature_dim(),
        positives
    );

    let spec = NoiseSpec {
        false_negative_rate: 0.15,
        false_positive_rate: 0.05,
        seed: 7,
    };
    let (noisy, _) = inject_noise(&clean, &spec)?;
    let flips = corrupted_cells(&truth, &noisy)?;
    let dropped = flips
        .iter()
        .filter(|c| truth.is_positive(c.sample, c.type_index))
        .count();
    println!(
        "flipped {} cells: {} dropped positives, {} added",
        flips.len(),
        dropped,
        flips.len() - dropped
    );

    for cell in flips.iter().take(5) {
        let sample = &noisy.samples()[cell.sample];
        println!(
            "  {} {}: {} -> {}",
            sample.id,
            noisy.vocabulary().name(cell.type_index),
            u8::from(truth.is_positive(cell.sample, cell.type_index)),
            u8::from(noisy.annotation(cell.sample, cell.type_index))
        );
    }
    Ok(())
}
