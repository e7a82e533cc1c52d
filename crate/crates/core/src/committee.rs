//! Basic Ensemble Method: the committee output is the arithmetic mean of the
//! experts' raw outputs, taken before any argmax or threshold.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::gauss_newton::Batch;
use crate::mlp::{MlpModel, MlpTopology};
use crate::scalar::Real;
use crate::train::mse;

#[derive(Clone, Debug, PartialEq)]
pub struct Committee<T> {
    experts: Vec<MlpModel<T>>,
}

impl<T: Real> Committee<T> {
    pub fn new(experts: Vec<MlpModel<T>>) -> Result<Self> {
        let first = experts
            .first()
            .ok_or_else(|| Error::InvalidArgument("committee needs at least one expert".into()))?;
        let topo = first.topology();
        if let Some(m) = experts.iter().find(|m| m.topology() != topo) {
            return Err(Error::InvalidArgument(format!(
                "committee members must share one topology ({topo} vs {})",
                m.topology()
            )));
        }
        Ok(Self { experts })
    }

    pub fn experts(&self) -> &[MlpModel<T>] {
        &self.experts
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn topology(&self) -> MlpTopology {
        self.experts[0].topology()
    }

    /// `(1/M)·Σ F_i(x)`
    pub fn combine(&self, x: &[T]) -> Result<Vec<T>> {
        self.experts[0].check_input(x)?;
        Ok(self.combine_unchecked(x))
    }

    fn combine_unchecked(&self, x: &[T]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.topology().output_dim];
        for expert in &self.experts {
            for (a, o) in acc.iter_mut().zip(expert.activations(x).output) {
                *a += o;
            }
        }
        let m = T::from_usize_lossy(self.experts.len());
        acc.iter_mut().for_each(|a| *a /= m);
        acc
    }

    /// MSE of the combined output on `data`.
    pub fn mse(&self, data: &LabeledDataset<T>) -> Result<T> {
        let batch = Batch::from_dataset(data)?;
        batch.check_model(&self.experts[0])?;
        let mut sse = T::zero();
        for (x, t) in batch.inputs().iter().zip(batch.targets()) {
            let out = self.combine_unchecked(x);
            sse += out
                .iter()
                .zip(t)
                .map(|(&o, &y)| (y - o) * (y - o))
                .sum::<T>();
        }
        Ok(sse / T::from_usize_lossy(batch.residual_count()))
    }
}

/// `(1/M)·Σ_i MSE[F_i]`
pub fn average_expert_mse<T: Real>(experts: &[MlpModel<T>], data: &LabeledDataset<T>) -> Result<T> {
    if experts.is_empty() {
        return Err(Error::InvalidArgument("no experts".into()));
    }
    let mut total = T::zero();
    for e in experts {
        total += mse(e, data)?;
    }
    Ok(total / T::from_usize_lossy(experts.len()))
}

/// How the Monte-Carlo error streams relate to each other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamMode {
    /// M mutually independent zero-mean unit-variance streams.
    Independent,
    /// One stream repeated M times (fully correlated control).
    Duplicated,
}

/// Monte-Carlo estimate of `MSE[average error] / mean_i MSE[m_i]`.
///
/// Under independent zero-mean errors the ratio tends to `1/M`; with
/// duplicated streams it stays at 1.
pub fn bem_reduction_check(m: usize, n_draws: usize, seed: u64, mode: StreamMode) -> Result<f64> {
    if m == 0 || n_draws == 0 {
        return Err(Error::InvalidArgument(
            "bem_reduction_check needs m >= 1 and n_draws >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mf = m as f64;
    let mut committee_sq = 0.0;
    let mut member_sq = 0.0;
    for _ in 0..n_draws {
        let mut sum = 0.0;
        let mut sq = 0.0;
        let shared: f64 = StandardNormal.sample(&mut rng);
        for i in 0..m {
            let e: f64 = match mode {
                StreamMode::Independent if i == 0 => shared,
                StreamMode::Independent => StandardNormal.sample(&mut rng),
                StreamMode::Duplicated => shared,
            };
            sum += e;
            sq += e * e;
        }
        let avg = sum / mf;
        committee_sq += avg * avg;
        member_sq += sq / mf;
    }
    Ok(committee_sq / member_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::init_weights;

    fn topo() -> MlpTopology {
        MlpTopology::new(3, 4, 2).unwrap()
    }

    #[test]
    fn empty_or_mixed_committee_is_rejected() {
        assert!(Committee::<f64>::new(vec![]).is_err());
        let other = init_weights::<f64>(MlpTopology::new(3, 5, 2).unwrap(), 1);
        assert!(Committee::new(vec![init_weights::<f64>(topo(), 1), other]).is_err());
    }

    #[test]
    fn single_expert_and_clones() {
        let m = init_weights::<f64>(topo(), 4);
        let x = [0.2, -0.4, 1.1];
        assert_eq!(
            Committee::new(vec![m.clone()])
                .unwrap()
                .combine(&x)
                .unwrap(),
            m.forward(&x).unwrap()
        );
        let clones = Committee::new(vec![m.clone(), m.clone(), m.clone()]).unwrap();
        let got = clones.combine(&x).unwrap();
        for (a, b) in got.iter().zip(m.forward(&x).unwrap()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn two_expert_mean() {
        let t = MlpTopology::new(1, 1, 2).unwrap();
        let mut a = MlpModel::<f64>::zeros(t);
        a.b2_mut().copy_from_slice(&[1.0, -1.0]);
        let b = MlpModel::<f64>::zeros(t);
        let c = Committee::new(vec![a, b]).unwrap();
        assert_eq!(c.combine(&[3.0]).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn single_stream_ratio_is_exactly_one() {
        assert_eq!(
            bem_reduction_check(1, 1000, 9, StreamMode::Independent).unwrap(),
            1.0
        );
        assert!(bem_reduction_check(0, 10, 0, StreamMode::Independent).is_err());
    }
}
