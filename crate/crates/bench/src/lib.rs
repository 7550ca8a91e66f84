//! Benchmark fixtures shared by the criterion benches.

use hybrid_ad::compile::Matrix;
use hybrid_ad::dpsgd::{Activation, LossKind, ModelSpec};
use hybrid_ad::parser::{parse_declarations, parse_with_declarations};
use hybrid_ad::{ExprGraph, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Layer layouts with 10, 100 and 1000 parameters.
pub const LAYOUTS: [(usize, &[usize]); 3] = [(10, &[1, 3, 1]), (100, &[9, 9, 1]), (1000, &[25, 37, 1])];

pub fn bmi() -> (ExprGraph, NodeId) {
    let decls = parse_declarations("a in [20, 80]\nw in [40, 150]\nh in [1.4, 2.1]\n").expect("valid declarations");
    parse_with_declarations("a*w/h^2", &decls).expect("valid expression")
}

pub fn tanh_mlp(layers: &[usize]) -> ModelSpec {
    ModelSpec::new(layers, Activation::Tanh, LossKind::Mse)
}

/// `rows` rows of uniform values in [-1, 1].
pub fn random_batch(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    Matrix::new(rows, cols, data).expect("shape matches")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_have_the_advertised_size() {
        for (p, layers) in LAYOUTS {
            assert_eq!(tanh_mlp(layers).parameter_count(), p);
        }
    }
}
