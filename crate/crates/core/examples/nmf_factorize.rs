use chestsep::nmf_core::{self, Block, NmfConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Factorise a matrix built from four known parts and watch the objective fall.
fn main() -> chestsep::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w0 = Array2::from_shape_simple_fn((64, 4), || rng.random::<f64>());
    let h0 = Array2::from_shape_simple_fn((4, 48), || rng.random::<f64>() * 5.0);
    let v = w0.dot(&h0);

    let cfg = NmfConfig {
        sparsity: 0.0,
        max_iter: 400,
        seed: 11,
        ..NmfConfig::default()
    };
    let fit = nmf_core::factorize_blocks(&v, &[Block::new("a", 2), Block::new("b", 2)], &cfg)?;
    for e in fit.trace.entries.iter().step_by(50) {
        println!("iter {:4}  cost {:.6e}", e.iteration, e.cost);
    }
    let approx = fit.dictionary.matrix().dot(fit.activations.matrix());
    let rel = (&approx - &v).mapv(|x| x * x).sum().sqrt() / v.mapv(|x| x * x).sum().sqrt();
    println!("relative reconstruction error {rel:.2e}");
    println!("non-monotone steps: {}", fit.trace.non_monotone_steps(1e-9));
    Ok(())
}
