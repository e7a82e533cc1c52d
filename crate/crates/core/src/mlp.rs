//! Two-layer perceptron `O = W2·tanh(W1·x + b1) + b2`.
//!
//! Parameters live in one flat vector, in the order `w1` (row-major,
//! `hidden × input`), `b1`, `w2` (row-major, `output × hidden`), `b2`.
//! Checkpoints and the Levenberg-Marquardt solvers rely on this order.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MlpTopology {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl Default for MlpTopology {
    /// 9 features, 30 hidden units, 22 enrolled persons.
    fn default() -> Self {
        Self {
            input_dim: 9,
            hidden_dim: 30,
            output_dim: 22,
        }
    }
}

impl MlpTopology {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "topology dimensions must be >= 1, got {input_dim}x{hidden_dim}x{output_dim}"
            )));
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            output_dim,
        })
    }

    /// `H·P + H + N·H + N`
    pub fn param_count(&self) -> usize {
        let (p, h, n) = (self.input_dim, self.hidden_dim, self.output_dim);
        h * p + h + n * h + n
    }

    pub fn w1_range(&self) -> Range<usize> {
        0..self.hidden_dim * self.input_dim
    }

    pub fn b1_range(&self) -> Range<usize> {
        let s = self.w1_range().end;
        s..s + self.hidden_dim
    }

    pub fn w2_range(&self) -> Range<usize> {
        let s = self.b1_range().end;
        s..s + self.output_dim * self.hidden_dim
    }

    pub fn b2_range(&self) -> Range<usize> {
        let s = self.w2_range().end;
        s..s + self.output_dim
    }
}

impl std::fmt::Display for MlpTopology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}",
            self.input_dim, self.hidden_dim, self.output_dim
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    topology: MlpTopology,
    params: Vec<T>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Activations<T> {
    /// `tanh(W1·x + b1)`
    pub hidden: Vec<T>,
    pub output: Vec<T>,
}

impl<T: Real> MlpModel<T> {
    pub fn zeros(topology: MlpTopology) -> Self {
        Self {
            topology,
            params: vec![T::zero(); topology.param_count()],
        }
    }

    /// Inverse of [`MlpModel::flatten`].
    pub fn unflatten(topology: MlpTopology, params: Vec<T>) -> Result<Self> {
        if params.len() != topology.param_count() {
            return Err(Error::Dimension {
                expected: topology.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { topology, params })
    }

    pub fn topology(&self) -> MlpTopology {
        self.topology
    }

    pub fn flatten(&self) -> &[T] {
        &self.params
    }

    pub fn into_params(self) -> Vec<T> {
        self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn w1(&self) -> &[T] {
        &self.params[self.topology.w1_range()]
    }

    pub fn b1(&self) -> &[T] {
        &self.params[self.topology.b1_range()]
    }

    pub fn w2(&self) -> &[T] {
        &self.params[self.topology.w2_range()]
    }

    pub fn b2(&self) -> &[T] {
        &self.params[self.topology.b2_range()]
    }

    pub fn w1_mut(&mut self) -> &mut [T] {
        let r = self.topology.w1_range();
        &mut self.params[r]
    }

    pub fn b1_mut(&mut self) -> &mut [T] {
        let r = self.topology.b1_range();
        &mut self.params[r]
    }

    pub fn w2_mut(&mut self) -> &mut [T] {
        let r = self.topology.w2_range();
        &mut self.params[r]
    }

    pub fn b2_mut(&mut self) -> &mut [T] {
        let r = self.topology.b2_range();
        &mut self.params[r]
    }

    /// Sum of squared parameters (weights and biases).
    pub fn sum_squared_weights(&self) -> T {
        dot(&self.params, &self.params)
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let out = self.activations(x).output;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network output"));
        }
        Ok(out)
    }

    pub(crate) fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.topology.input_dim {
            return Err(Error::Dimension {
                expected: self.topology.input_dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    /// Forward pass without input validation.
    pub fn activations(&self, x: &[T]) -> Activations<T> {
        let MlpTopology {
            input_dim: p,
            hidden_dim: h,
            ..
        } = self.topology;
        let (w1, b1, w2, b2) = (self.w1(), self.b1(), self.w2(), self.b2());
        let hidden: Vec<T> = (0..h)
            .map(|i| (dot(&w1[i * p..(i + 1) * p], x) + b1[i]).tanh())
            .collect();
        let output = b2
            .iter()
            .enumerate()
            .map(|(j, &b)| dot(&w2[j * h..(j + 1) * h], &hidden) + b)
            .collect();
        Activations { hidden, output }
    }

    /// Analytic `∂O[j]/∂θ` as an `output × param_count` matrix; columns follow
    /// the flattening order.
    pub fn jacobian(&self, x: &[T]) -> Result<Matrix<T>> {
        self.check_input(x)?;
        let topo = self.topology;
        let (p, h, n) = (topo.input_dim, topo.hidden_dim, topo.output_dim);
        let act = self.activations(x);
        let w2 = self.w2();
        let mut jac = Matrix::zeros(n, topo.param_count());
        let (b1_off, w2_off, b2_off) = (
            topo.b1_range().start,
            topo.w2_range().start,
            topo.b2_range().start,
        );
        for j in 0..n {
            let row = jac.row_mut(j);
            for k in 0..h {
                // d tanh(a)/da = 1 - tanh(a)^2
                let g = w2[j * h + k] * (T::one() - act.hidden[k] * act.hidden[k]);
                for (i, &xi) in x.iter().enumerate() {
                    row[k * p + i] = g * xi;
                }
                row[b1_off + k] = g;
                row[w2_off + j * h + k] = act.hidden[k];
            }
            row[b2_off + j] = T::one();
        }
        Ok(jac)
    }
}

/// Uniform initialization in `[-a, a]` with `a = 1/sqrt(fan_in)` per layer,
/// biases included. Deterministic in `seed`.
pub fn init_weights<T: Real>(topology: MlpTopology, seed: u64) -> MlpModel<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a1 = 1.0 / (topology.input_dim as f64).sqrt();
    let a2 = 1.0 / (topology.hidden_dim as f64).sqrt();
    let mut model = MlpModel::zeros(topology);
    let first_layer_end = topology.b1_range().end;
    for (i, w) in model.params.iter_mut().enumerate() {
        let a = if i < first_layer_end { a1 } else { a2 };
        *w = T::lit(rng.random_range(-a..=a));
    }
    model
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count() {
        // 30*9 + 30 + 22*30 + 22
        assert_eq!(MlpTopology::default().param_count(), 982);
        assert_eq!(
            init_weights::<f64>(MlpTopology::default(), 1)
                .flatten()
                .len(),
            982
        );
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let topo = MlpTopology::new(4, 5, 3).unwrap();
        let a = init_weights::<f64>(topo, 7);
        assert_eq!(a, init_weights::<f64>(topo, 7));
        assert_ne!(a, init_weights::<f64>(topo, 8));
        assert!(a.w1().iter().all(|w| w.abs() <= 0.5));
        assert!(a.w2().iter().all(|w| w.abs() <= 1.0 / 5f64.sqrt()));
    }

    #[test]
    fn zero_hidden_weights_give_output_bias() {
        let topo = MlpTopology::new(3, 4, 2).unwrap();
        let mut m = init_weights::<f64>(topo, 3);
        m.w1_mut().fill(0.0);
        m.b1_mut().fill(0.0);
        let out = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out, m.b2().to_vec());

        let z = MlpModel::<f64>::zeros(topo);
        assert_eq!(z.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let m = MlpModel::<f64>::zeros(MlpTopology::new(2, 2, 2).unwrap());
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            m.forward(&[1.0, f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn jacobian_structure() {
        let topo = MlpTopology::new(3, 4, 2).unwrap();
        let mut m = init_weights::<f64>(topo, 5);
        let jac = m.jacobian(&[0.5, -0.2, 0.1]).unwrap();
        for j in 0..2 {
            for (k, col) in topo.b2_range().enumerate() {
                let want = if k == j { 1.0 } else { 0.0 };
                assert_eq!(jac[(j, col)], want);
            }
        }
        m.b1_mut().fill(0.0);
        let jac = m.jacobian(&[0.0, 0.0, 0.0]).unwrap();
        for j in 0..2 {
            assert!(topo.w1_range().all(|c| jac[(j, c)] == 0.0));
        }
    }
}
