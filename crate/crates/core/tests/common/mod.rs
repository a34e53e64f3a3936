//! Test-only oracles, kept independent of the library's computation paths.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;
use std::sync::Arc;

use denoise_fet::classifier::{loss_and_gradient, LinearModel, LogitMatrix, Objective};
use denoise_fet::dataset::{Cell, Dataset, Sample, Split, TypeVocabulary};
use denoise_fet::posterior::NoiseMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-cell scalar loop: `Σ_j w[t][j]·x[s][j] + b[t]`.
pub fn naive_logits(model: &LinearModel, dataset: &Dataset) -> Vec<Vec<f64>> {
    let d = model.feature_dim();
    let mut out = vec![vec![0.0; model.n_types()]; dataset.len()];
    for s in 0..dataset.len() {
        for t in 0..model.n_types() {
            let mut acc = 0.0;
            for j in 0..d {
                acc += model.weights()[t * d + j] * dataset.samples()[s].features[j];
            }
            out[s][t] = acc + model.biases()[t];
        }
    }
    out
}

/// Loss written out from the textbook formulas, without the library helpers.
pub fn reference_loss(
    model: &LinearModel,
    dataset: &Dataset,
    batch: &[usize],
    mask: Option<&NoiseMask>,
    beta: f64,
) -> f64 {
    let logits = naive_logits(model, dataset);
    let mut total = 0.0;
    for &s in batch {
        for t in 0..model.n_types() {
            let p = 1.0 / (1.0 + (-logits[s][t]).exp());
            if mask.is_some_and(|m| m.contains(s, t)) {
                total -= beta * (p * p.ln() + (1.0 - p) * (1.0 - p).ln());
            } else if dataset.annotation(s, t) {
                total -= p.ln();
            } else {
                total -= (1.0 - p).ln();
            }
        }
    }
    total / batch.len() as f64
}

/// Central finite differences of [`reference_loss`].
pub fn fd_gradient(
    model: &LinearModel,
    dataset: &Dataset,
    batch: &[usize],
    mask: Option<&NoiseMask>,
    beta: f64,
    h: f64,
) -> Vec<f64> {
    let params = model.parameters();
    let mut probe = model.clone();
    (0..params.len())
        .map(|i| {
            let mut p = params.clone();
            p[i] = params[i] + h;
            probe.set_parameters(&p);
            let up = reference_loss(&probe, dataset, batch, mask, beta);
            p[i] = params[i] - h;
            probe.set_parameters(&p);
            let down = reference_loss(&probe, dataset, batch, mask, beta);
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt())
        .max(1e-12);
    diff / scale
}

pub struct GradientInstance {
    pub model: LinearModel,
    pub dataset: Dataset,
    pub batch: Vec<usize>,
    pub mask: NoiseMask,
    pub beta: f64,
}

/// Small random problem with a non-empty mask.
pub fn random_instance(seed: u64) -> GradientInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(3..8);
    let n_types = rng.gen_range(2..5);
    let dim = rng.gen_range(2..5);
    let vocab = Arc::new(TypeVocabulary::new((0..n_types).map(|t| format!("t{t}"))).unwrap());
    let samples = (0..n)
        .map(|i| Sample {
            id: format!("s{i}"),
            features: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            labels: (0..n_types)
                .filter(|_| rng.gen_bool(0.4))
                .collect::<BTreeSet<_>>(),
        })
        .collect();
    let dataset = Dataset::new(vocab, samples, Split::Train).unwrap();
    let model = LinearModel::from_parts(
        n_types,
        dim,
        (0..n_types * dim)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
        (0..n_types).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let batch: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
    let batch = if batch.is_empty() { vec![0] } else { batch };
    let mut cells: Vec<Cell> = (0..n)
        .flat_map(|s| (0..n_types).map(move |t| Cell::new(s, t)))
        .filter(|_| rng.gen_bool(0.3))
        .collect();
    cells.push(Cell::new(batch[0], 0));
    let mask = NoiseMask::from_cells(n, n_types, cells).unwrap();
    GradientInstance {
        model,
        dataset,
        batch,
        mask,
        beta: rng.gen_range(0.1..2.0),
    }
}

/// Relative errors of the analytic gradients of L1 and L2 against finite differences.
pub fn gradient_errors(instance: &GradientInstance) -> (f64, f64) {
    let GradientInstance {
        model,
        dataset,
        batch,
        mask,
        beta,
    } = instance;
    let (_, g1) = loss_and_gradient(model, dataset, batch, Objective::Bce).unwrap();
    let fd1 = fd_gradient(model, dataset, batch, None, 0.0, 1e-4);
    let (_, g2) = loss_and_gradient(
        model,
        dataset,
        batch,
        Objective::Regularized { mask, beta: *beta },
    )
    .unwrap();
    let fd2 = fd_gradient(model, dataset, batch, Some(mask), *beta, 1e-4);
    (
        relative_error(&g1.flatten(), &fd1),
        relative_error(&g2.flatten(), &fd2),
    )
}

/// Annotated logit table for selection tests: clusters around ±2 with about
/// 10% of cells drawn from the wrong cluster.
pub fn selection_instance(seed: u64) -> (Dataset, LogitMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(20..60);
    let n_types = rng.gen_range(1..4);
    let vocab = Arc::new(TypeVocabulary::new((0..n_types).map(|t| format!("t{t}"))).unwrap());
    let mut values = Vec::with_capacity(n * n_types);
    let samples = (0..n)
        .map(|i| {
            let mut labels = BTreeSet::new();
            for t in 0..n_types {
                let positive = i < 2 && i % 2 == 0 || i >= 2 && rng.gen_bool(0.4);
                let flipped = i >= 2 && rng.gen_bool(0.1);
                if positive {
                    labels.insert(t);
                }
                let centre = if positive != flipped { 2.0 } else { -2.0 };
                values.push(centre + rng.gen_range(-1.5..1.5));
            }
            Sample {
                id: format!("s{i:03}"),
                features: vec![0.0],
                labels,
            }
        })
        .collect();
    let dataset = Dataset::new(vocab.clone(), samples, Split::Train).unwrap();
    let ids = dataset.samples().iter().map(|s| s.id.clone()).collect();
    (dataset, LogitMatrix::new(vocab, ids, values).unwrap())
}

/// `p(y=1|l)` from the Gaussian densities and priors directly, no log domain.
pub fn direct_posterior(l: f64, mu1: f64, d1: f64, mu0: f64, d0: f64, prior1: f64) -> f64 {
    let g = |mu: f64, d: f64| {
        (-(l - mu).powi(2) / (2.0 * d * d)).exp() / (d * (2.0 * std::f64::consts::PI).sqrt())
    };
    let a = g(mu1, d1) * prior1;
    let b = g(mu0, d0) * (1.0 - prior1);
    a / (a + b)
}
