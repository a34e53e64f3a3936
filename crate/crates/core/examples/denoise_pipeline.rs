//! Run the full correction pipeline and write its artifacts to a run directory.
//!
//! ```bash
//! cargo run --release -p denoise-fet --example denoise_pipeline -- /tmp/denoise-run
//! ```

use std::path::PathBuf;

use denoise_fet::correction::{run_pipeline, write_run_artifacts, PipelineConfig};
use denoise_fet::dataset::{inject_noise, make_synthetic_splits, NoiseSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("denoise-fet-example"));
    let splits = make_synthetic_splits(1000, 300, 0, 20, 12, 3)?;
    let (noisy, _) = inject_noise(&splits.train, &NoiseSpec::default())?;

    let config = PipelineConfig::default();
    let output = run_pipeline(&noisy, splits.dev.as_ref().unwrap(), &config)?;
    let dir = root.join(config.run_dir_name());
    std::fs::create_dir_all(&dir)?;
    for path in write_run_artifacts(&output, &noisy, &dir)? {
        println!("wrote {}", path.display());
    }

    let r = &output.report;
    println!(
        "flagged {} cells, flips 0->1 {}, 1->0 {}",
        r.flagged_cell_count, r.flips.to_positive, r.flips.to_negative
    );
    for t in r.per_type.iter().filter(|t| t.flagged > 0).take(5) {
        println!("  {:<10} {:>4} flagged", t.type_name, t.flagged);
    }
    let t = &r.timings;
    println!(
        "timings ms: pretrain {:.1}, selection {:.1}, finetune {:.1}, relabel {:.1}",
        t.pretrain_ms, t.selection_ms, t.finetune_ms, t.relabel_ms
    );
    Ok(())
}
