//! Batch Levenberg-Marquardt training against ±1 targets.
//!
//! Two schemes share one loop:
//!
//! * [`Scheme::Mse`]: minimizes the sum of squared errors `E_D`.
//! * [`Scheme::MseReg`]: minimizes `β·E_D + α·E_W` (`E_W` the sum of squared
//!   parameters) and re-estimates `α`, `β` after every accepted step from the
//!   effective parameter count `γ = W − α·trace((β·JᵀJ + α·I)⁻¹)`.
//!
//! One epoch is one accepted update over the full batch. Within an epoch a
//! rejected candidate raises the damping and the step is retried until it is
//! accepted or the damping exceeds `mu_max`.

use std::io::Write;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::gauss_newton::{Batch, DenseSystem, FactoredSystem, NormalEquations};
use crate::mlp::{init_weights, MlpModel, MlpTopology};
use crate::scalar::{norm, Real};

/// Floor applied to `E_W` and `E_D` when re-estimating hyperparameters.
pub const HYPER_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Plain sum of squared errors.
    Mse,
    /// Bayesian-regularized objective.
    MseReg,
}

impl Scheme {
    pub fn default_epochs(self) -> usize {
        match self {
            Scheme::Mse => 10,
            Scheme::MseReg => 50,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Mse => "mse",
            Scheme::MseReg => "msereg",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Scheme::Mse),
            "msereg" => Ok(Scheme::MseReg),
            other => Err(Error::InvalidArgument(format!(
                "unknown scheme {other:?} (expected mse or msereg)"
            ))),
        }
    }
}

/// Which normal-equation route backs each LM step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SolverKind {
    #[default]
    Factored,
    Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub scheme: Scheme,
    pub epochs: usize,
    pub mu0: T,
    pub mu_up: T,
    pub mu_down: T,
    pub mu_max: T,
    /// Seed for [`fit`]'s weight initialization.
    pub seed: u64,
    pub solver: SolverKind,
}

impl<T: Real> TrainConfig<T> {
    pub fn new(scheme: Scheme) -> Self {
        Self {
            scheme,
            epochs: scheme.default_epochs(),
            mu0: T::lit(1e-3),
            mu_up: T::lit(10.0),
            mu_down: T::lit(0.1),
            mu_max: T::lit(1e10),
            seed: 0,
            solver: SolverKind::Factored,
        }
    }

    pub fn mse() -> Self {
        Self::new(Scheme::Mse)
    }

    pub fn msereg() -> Self {
        Self::new(Scheme::MseReg)
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.mu0 > T::zero()) {
            return bad("mu0 must be positive");
        }
        if !(self.mu_up > T::one()) {
            return bad("mu_up must exceed 1");
        }
        if !(self.mu_down > T::zero() && self.mu_down < T::one()) {
            return bad("mu_down must lie in (0, 1)");
        }
        if !(self.mu_max > self.mu0) {
            return bad("mu_max must exceed mu0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStatus {
    /// Ran the full epoch budget.
    Completed,
    /// The right-hand side vanished; the point is stationary.
    Converged,
    /// Damping exceeded `mu_max` without an accepted step.
    Stalled,
}

/// One attempted LM step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    /// 1-based epoch the attempt belongs to.
    pub epoch: usize,
    pub mu: T,
    /// Objective at the candidate; infinite when the system was not
    /// positive definite.
    pub objective: T,
    /// Objective at the current parameters, under the same hyperparameters.
    pub reference: T,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparameters<T> {
    pub alpha: T,
    pub beta: T,
    /// Effective number of parameters.
    pub gamma: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport<T> {
    pub scheme: Scheme,
    pub status: TrainStatus,
    pub initial_objective: T,
    /// Objective after each accepted step.
    pub epoch_objectives: Vec<T>,
    pub steps: Vec<StepRecord<T>>,
    pub final_mse: T,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub final_mu: T,
    /// Hyperparameters after each accepted step (regularized scheme only).
    pub hyper_trace: Vec<Hyperparameters<T>>,
}

impl<T: Real> TrainReport<T> {
    pub fn hyperparameters(&self) -> Option<Hyperparameters<T>> {
        self.hyper_trace.last().copied()
    }

    pub fn stalled(&self) -> bool {
        self.status == TrainStatus::Stalled
    }

    /// Every accepted step strictly lowered the objective it was judged by,
    /// and for the unregularized scheme the accepted sequence never rises.
    pub fn is_monotone(&self) -> bool {
        let per_step = self
            .steps
            .iter()
            .filter(|s| s.accepted)
            .all(|s| s.objective <= s.reference);
        let sequence = match self.scheme {
            Scheme::Mse => std::iter::once(&self.initial_objective)
                .chain(&self.epoch_objectives)
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[1] <= w[0]),
            Scheme::MseReg => true,
        };
        per_step && sequence
    }

    /// `epoch,objective,mu,accepted`, one row per attempted step.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["epoch", "objective", "mu", "accepted"])?;
        for s in &self.steps {
            wtr.write_record([
                s.epoch.to_string(),
                s.objective.to_string(),
                s.mu.to_string(),
                s.accepted.to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<train report>", e))?;
        Ok(())
    }
}

/// Mean over samples and outputs of `(target − output)²`.
pub fn mse<T: Real>(model: &MlpModel<T>, data: &LabeledDataset<T>) -> Result<T> {
    let batch = Batch::from_dataset(data)?;
    batch.check_model(model)?;
    Ok(batch.sse(model) / T::from_usize_lossy(batch.residual_count()))
}

pub fn train_lm<T: Real>(
    m0: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpModel<T>, TrainReport<T>)> {
    if cfg.scheme != Scheme::Mse {
        return Err(Error::InvalidArgument(
            "train_lm expects the mse scheme".into(),
        ));
    }
    train(m0, data, cfg)
}

pub fn train_lm_bayes<T: Real>(
    m0: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpModel<T>, TrainReport<T>)> {
    if cfg.scheme != Scheme::MseReg {
        return Err(Error::InvalidArgument(
            "train_lm_bayes expects the msereg scheme".into(),
        ));
    }
    train(m0, data, cfg)
}

/// Initializes from `cfg.seed` and trains.
pub fn fit<T: Real>(
    topology: MlpTopology,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpModel<T>, TrainReport<T>)> {
    train(&init_weights(topology, cfg.seed), data, cfg)
}

/// Trains under whichever scheme `cfg` names.
pub fn train<T: Real>(
    m0: &MlpModel<T>,
    data: &LabeledDataset<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpModel<T>, TrainReport<T>)> {
    let batch = Batch::from_dataset(data)?;
    train_batch(m0, &batch, cfg)
}

fn assemble<T: Real>(
    kind: SolverKind,
    model: &MlpModel<T>,
    batch: &Batch<T>,
) -> Result<Box<dyn NormalEquations<T>>> {
    Ok(match kind {
        SolverKind::Factored => Box::new(FactoredSystem::assemble(model, batch)?),
        SolverKind::Dense => Box::new(DenseSystem::assemble(model, batch)?),
    })
}

/// `γ = W − α·tr((β·JᵀJ + α·I)⁻¹)`, which lies in `(0, W)` for `α > 0`.
/// When β/α is large the factored form cancels badly, so a failed
/// factorization or an out-of-range γ is retried on the explicit matrix.
fn effective_params<T: Real>(
    kind: SolverKind,
    system: &dyn NormalEquations<T>,
    model: &MlpModel<T>,
    batch: &Batch<T>,
    beta: T,
    alpha: T,
) -> Result<T> {
    let w = T::from_usize_lossy(system.param_count());
    let gamma = |trace: T| {
        let g = w - alpha * trace;
        if g > T::zero() && g < w {
            Ok(g)
        } else {
            Err(Error::NotPositiveDefinite)
        }
    };
    match system.trace_inverse(beta, alpha).and_then(gamma) {
        Err(Error::NotPositiveDefinite) if kind == SolverKind::Factored => {
            DenseSystem::assemble(model, batch)?
                .trace_inverse(beta, alpha)
                .and_then(gamma)
        }
        other => other,
    }
}

pub fn train_batch<T: Real>(
    m0: &MlpModel<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig<T>,
) -> Result<(MlpModel<T>, TrainReport<T>)> {
    cfg.validate()?;
    batch.check_model(m0)?;
    let regularize = cfg.scheme == Scheme::MseReg;
    let w = T::from_usize_lossy(m0.topology().param_count());
    let n_res = T::from_usize_lossy(batch.residual_count());
    let floor = T::lit(HYPER_FLOOR);
    let two = T::lit(2.0);

    let mut model = m0.clone();
    let mut system = assemble(cfg.solver, &model, batch)?;
    let mut e_d = system.sse();
    let mut e_w: T;
    // first step is a plain LM step; hyperparameters start at α = 0, β = 1
    let (mut alpha, mut beta) = (T::zero(), T::one());
    let mut objective = e_d;
    let mut mu = cfg.mu0;

    let mut report = TrainReport {
        scheme: cfg.scheme,
        status: TrainStatus::Completed,
        initial_objective: objective,
        epoch_objectives: Vec::with_capacity(cfg.epochs),
        steps: Vec::new(),
        final_mse: T::zero(),
        accepted_steps: 0,
        rejected_steps: 0,
        final_mu: mu,
        hyper_trace: Vec::new(),
    };

    'epochs: for epoch in 1..=cfg.epochs {
        let rhs_norm = {
            let g = system.gradient();
            let r: Vec<T> = g
                .iter()
                .zip(model.flatten())
                .map(|(&gi, &wi)| beta * gi - alpha * wi)
                .collect();
            norm(&r)
        };
        if rhs_norm == T::zero() {
            report.status = TrainStatus::Converged;
            break;
        }

        loop {
            let candidate = match system.solve(beta, alpha, mu, model.flatten()) {
                Ok(delta) => {
                    let mut cand = model.clone();
                    for (wi, di) in cand.params_mut().iter_mut().zip(&delta) {
                        *wi += *di;
                    }
                    let cand_e_d = batch.sse(&cand);
                    let cand_e_w = cand.sum_squared_weights();
                    Some((cand, cand_e_d, cand_e_w, beta * cand_e_d + alpha * cand_e_w))
                }
                Err(Error::NotPositiveDefinite) => None,
                Err(e) => return Err(e),
            };
            let cand_objective = candidate.as_ref().map_or(T::infinity(), |c| c.3);
            let accepted = cand_objective.is_finite() && cand_objective < objective;
            report.steps.push(StepRecord {
                epoch,
                mu,
                objective: cand_objective,
                reference: objective,
                accepted,
            });
            if accepted {
                let (cand, cand_e_d, cand_e_w, cand_obj) =
                    candidate.expect("accepted step has a candidate");
                model = cand;
                e_d = cand_e_d;
                e_w = cand_e_w;
                objective = cand_obj;
                report.accepted_steps += 1;
                report.epoch_objectives.push(objective);
                mu *= cfg.mu_down;
                break;
            }
            report.rejected_steps += 1;
            mu *= cfg.mu_up;
            if mu > cfg.mu_max {
                report.status = TrainStatus::Stalled;
                break 'epochs;
            }
        }

        system = assemble(cfg.solver, &model, batch)?;
        if regularize {
            if alpha == T::zero() {
                // bootstrap from γ = W so the trace below runs with α > 0
                alpha = w / (two * e_w.max(floor));
                beta = (n_res - w).max(floor) / (two * e_d.max(floor));
            }
            let gamma = match effective_params(
                cfg.solver,
                system.as_ref(),
                &model,
                batch,
                beta,
                alpha,
            ) {
                Ok(g) => g,
                Err(Error::NotPositiveDefinite) => {
                    log::debug!(
                        "hyperparameter update failed at epoch {epoch}: alpha={alpha} beta={beta}"
                    );
                    report.status = TrainStatus::Stalled;
                    break;
                }
                Err(e) => return Err(e),
            };
            alpha = gamma.max(floor) / (two * e_w.max(floor));
            beta = (n_res - gamma).max(floor) / (two * e_d.max(floor));
            objective = beta * e_d + alpha * e_w;
            report
                .hyper_trace
                .push(Hyperparameters { alpha, beta, gamma });
        }
    }

    report.final_mu = mu;
    report.final_mse = e_d / n_res;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_train_test, Normalizer, SyntheticSpec};

    fn small_problem(seed: u64) -> (MlpModel<f64>, LabeledDataset<f64>) {
        let ds = generate_synthetic::<f64>(&SyntheticSpec {
            people: 3,
            trials: 6,
            dims: 4,
            seed,
            spread: 1.5,
        })
        .unwrap();
        let (train, _) = split_train_test(&ds, 3).unwrap();
        let train = Normalizer::fit(&train).apply_dataset(&train).unwrap();
        let topo = MlpTopology::new(4, 5, 3).unwrap();
        (init_weights(topo, seed), train)
    }

    #[test]
    fn mse_of_two_outputs() {
        let data = LabeledDataset::new(
            vec![crate::data::FeatureVector {
                person_id: 0,
                trial_id: 0,
                features: vec![0.7],
            }],
            crate::data::SplitTag::Train,
        )
        .unwrap();
        let data = LabeledDataset::new(
            vec![
                data.samples()[0].clone(),
                crate::data::FeatureVector {
                    person_id: 1,
                    trial_id: 0,
                    features: vec![0.1],
                },
            ],
            crate::data::SplitTag::Train,
        )
        .unwrap();
        let zero = MlpModel::<f64>::zeros(MlpTopology::new(1, 2, 2).unwrap());
        // outputs (0,0) against (+1,−1) and (−1,+1): every residual squared is 1
        assert_eq!(mse(&zero, &data).unwrap(), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::<f64>::mse().validate().is_ok());
        assert!(TrainConfig::<f64>::mse().with_epochs(0).validate().is_err());
        let mut c = TrainConfig::<f64>::mse();
        c.mu_down = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::<f64>::mse();
        c.mu_up = 0.5;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::<f64>::msereg().epochs, 50);
        assert_eq!(TrainConfig::<f64>::mse().epochs, 10);
    }

    #[test]
    fn scheme_guard() {
        let (m, d) = small_problem(1);
        assert!(train_lm(&m, &d, &TrainConfig::msereg()).is_err());
        assert!(train_lm_bayes(&m, &d, &TrainConfig::mse()).is_err());
    }

    #[test]
    fn mse_training_is_monotone_and_reproducible() {
        let (m, d) = small_problem(2);
        let (a, ra) = train_lm(&m, &d, &TrainConfig::mse()).unwrap();
        let (b, rb) = train_lm(&m, &d, &TrainConfig::mse()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert!(ra.is_monotone());
        assert!(ra.final_mse < mse(&m, &d).unwrap());
    }

    #[test]
    fn bayes_gamma_stays_inside_parameter_count() {
        let (m, d) = small_problem(3);
        let (_, r) = train_lm_bayes(&m, &d, &TrainConfig::msereg().with_epochs(15)).unwrap();
        assert!(r.is_monotone());
        assert!(!r.hyper_trace.is_empty());
        let w = m.topology().param_count() as f64;
        for h in &r.hyper_trace {
            assert!(h.gamma > 0.0 && h.gamma < w, "gamma {}", h.gamma);
            assert!(h.alpha > 0.0 && h.beta > 0.0);
        }
    }

    #[test]
    fn csv_report_has_one_row_per_attempt() {
        let (m, d) = small_problem(4);
        let (_, r) = train_lm(&m, &d, &TrainConfig::mse().with_epochs(3)).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,objective,mu,accepted\n"));
        assert_eq!(text.lines().count(), r.steps.len() + 1);
    }
}
