//! Normal equations of the stacked least-squares problem
//! `e = targets − outputs` over a batch of samples.
//!
//! Two interchangeable routes are provided:
//!
//! * [`FactoredSystem`] keeps `JᵀJ` in the factored form implied by the
//!   two-layer architecture and solves through a Schur complement on the
//!   first-layer block. Cost per solve is `O((H·(P+1))³)` instead of `O(W³)`.
//! * [`DenseSystem`] stacks the explicit per-sample Jacobians, forms `JᵀJ`
//!   densely and factorizes the full `W × W` matrix.
//!
//! Both solve the damped, optionally regularized system
//!
//! ```text
//! (β·JᵀJ + (α + μ)·I) δ = β·Jᵀe − α·θ
//! ```
//!
//! and expose `trace((β·JᵀJ + α·I)⁻¹)` for hyperparameter re-estimation.

#![allow(clippy::needless_range_loop)]

use crate::data::{encode_target, LabeledDataset};
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::mlp::{MlpModel, MlpTopology};
use crate::scalar::{axpy, dot, Real};

/// Normalized inputs with their ±1 target vectors.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    inputs: Vec<Vec<T>>,
    targets: Vec<Vec<T>>,
    output_dim: usize,
}

impl<T: Real> Batch<T> {
    /// Builds targets from person ids; `data` must already be normalized.
    pub fn from_dataset(data: &LabeledDataset<T>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidData("empty training data".into()));
        }
        let n = data.people_count();
        let mut inputs = Vec::with_capacity(data.len());
        let mut targets = Vec::with_capacity(data.len());
        for s in data.samples() {
            inputs.push(s.features.clone());
            targets.push(encode_target(s.person_id, n)?.into_vec());
        }
        Ok(Self {
            inputs,
            targets,
            output_dim: n,
        })
    }

    pub fn new(inputs: Vec<Vec<T>>, targets: Vec<Vec<T>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidData("empty training data".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                got: targets.len(),
            });
        }
        let output_dim = targets[0].len();
        if let Some(t) = targets.iter().find(|t| t.len() != output_dim) {
            return Err(Error::Dimension {
                expected: output_dim,
                got: t.len(),
            });
        }
        Ok(Self {
            inputs,
            targets,
            output_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vec<T>] {
        &self.targets
    }

    /// Number of stacked residuals, samples × outputs.
    pub fn residual_count(&self) -> usize {
        self.inputs.len() * self.output_dim
    }

    pub(crate) fn check_model(&self, model: &MlpModel<T>) -> Result<()> {
        let topo = model.topology();
        if topo.output_dim != self.output_dim {
            return Err(Error::Dimension {
                expected: topo.output_dim,
                got: self.output_dim,
            });
        }
        for x in &self.inputs {
            model.check_input(x)?;
        }
        Ok(())
    }

    /// Sum of squared residuals.
    pub fn sse(&self, model: &MlpModel<T>) -> T {
        self.inputs
            .iter()
            .zip(&self.targets)
            .map(|(x, t)| {
                let out = model.activations(x).output;
                out.iter()
                    .zip(t)
                    .map(|(&o, &y)| (y - o) * (y - o))
                    .sum::<T>()
            })
            .sum()
    }
}

/// Common interface of the two normal-equation routes.
pub trait NormalEquations<T: Real> {
    fn param_count(&self) -> usize;

    /// Sum of squared residuals at the assembly point.
    fn sse(&self) -> T;

    /// `Jᵀe` in flattening order.
    fn gradient(&self) -> Vec<T>;

    /// Solves `(β·JᵀJ + (α + μ)·I) δ = β·Jᵀe − α·θ`.
    fn solve(&self, beta: T, alpha: T, mu: T, theta: &[T]) -> Result<Vec<T>>;

    /// `trace((β·JᵀJ + α·I)⁻¹)`
    fn trace_inverse(&self, beta: T, alpha: T) -> Result<T>;

    /// Dense `JᵀJ`, for verification.
    fn jtj(&self) -> Matrix<T>;
}

/// Maps first-layer coordinates `(h, p̃)` and output-layer coordinates
/// `(j, q̃)` onto the flat parameter vector. `p̃ == P` is the hidden bias,
/// `q̃ == H` the output bias.
#[derive(Clone, Copy, Debug)]
struct Layout {
    topo: MlpTopology,
}

impl Layout {
    fn p1(&self) -> usize {
        self.topo.input_dim + 1
    }

    fn q1(&self) -> usize {
        self.topo.hidden_dim + 1
    }

    fn u_dim(&self) -> usize {
        self.topo.hidden_dim * self.p1()
    }

    fn v_dim(&self) -> usize {
        self.topo.output_dim * self.q1()
    }

    fn u_to_flat(&self, u: usize) -> usize {
        let (h, p) = (u / self.p1(), u % self.p1());
        if p < self.topo.input_dim {
            h * self.topo.input_dim + p
        } else {
            self.topo.b1_range().start + h
        }
    }

    fn v_to_flat(&self, v: usize) -> usize {
        let (j, q) = (v / self.q1(), v % self.q1());
        if q < self.topo.hidden_dim {
            self.topo.w2_range().start + j * self.topo.hidden_dim + q
        } else {
            self.topo.b2_range().start + j
        }
    }

    fn split<T2: Copy>(&self, flat: &[T2]) -> (Vec<T2>, Vec<T2>) {
        let u = (0..self.u_dim()).map(|i| flat[self.u_to_flat(i)]).collect();
        let v = (0..self.v_dim()).map(|i| flat[self.v_to_flat(i)]).collect();
        (u, v)
    }

    fn join<T2: Real>(&self, u: &[T2], v: &[T2]) -> Vec<T2> {
        let mut flat = vec![T2::zero(); self.topo.param_count()];
        for (i, &x) in u.iter().enumerate() {
            flat[self.u_to_flat(i)] = x;
        }
        for (i, &x) in v.iter().enumerate() {
            flat[self.v_to_flat(i)] = x;
        }
        flat
    }
}

/// `JᵀJ` and `Jᵀe` of a two-layer tanh/linear network in factored form.
///
/// With `u_s = d_s ⊗ (x_s, 1)` (`d` the tanh derivatives), `z̃_s = (z_s, 1)`
/// the augmented hidden activations and `C = W2ᵀ·W2`:
///
/// ```text
/// JᵀJ[u_a, u_b]       = C[h_a, h_b] · R[a, b],        R = Σ_s u_s u_sᵀ
/// JᵀJ[u_a, (j, q)]    = w2[j, h_a] · T[a, q],         T = Σ_s u_s z̃_sᵀ
/// JᵀJ[(j, q), (k, r)] = δ_jk · G[q, r],               G = Σ_s z̃_s z̃_sᵀ
/// ```
#[derive(Clone, Debug)]
pub struct FactoredSystem<T> {
    layout: Layout,
    r: Matrix<T>,
    t: Matrix<T>,
    g: Matrix<T>,
    c: Matrix<T>,
    w2: Vec<T>,
    grad_u: Vec<T>,
    grad_v: Vec<T>,
    sse: T,
}

impl<T: Real> FactoredSystem<T> {
    pub fn assemble(model: &MlpModel<T>, batch: &Batch<T>) -> Result<Self> {
        batch.check_model(model)?;
        let topo = model.topology();
        let layout = Layout { topo };
        let (p, h, n) = (topo.input_dim, topo.hidden_dim, topo.output_dim);
        let (p1, q1, ud) = (layout.p1(), layout.q1(), layout.u_dim());
        let w2 = model.w2().to_vec();

        let mut r = Matrix::zeros(ud, ud);
        let mut t = Matrix::zeros(ud, q1);
        let mut g = Matrix::zeros(q1, q1);
        let mut grad_u = vec![T::zero(); ud];
        let mut grad_v = vec![T::zero(); layout.v_dim()];
        let mut sse = T::zero();

        let mut u = vec![T::zero(); ud];
        let mut zt = vec![T::zero(); q1];
        let mut back = vec![T::zero(); h];
        for (x, target) in batch.inputs.iter().zip(&batch.targets) {
            let act = model.activations(x);
            zt[..h].copy_from_slice(&act.hidden);
            zt[h] = T::one();
            for k in 0..h {
                let d = T::one() - act.hidden[k] * act.hidden[k];
                let blk = &mut u[k * p1..(k + 1) * p1];
                for i in 0..p {
                    blk[i] = d * x[i];
                }
                blk[p] = d;
            }
            let e: Vec<T> = target
                .iter()
                .zip(&act.output)
                .map(|(&y, &o)| y - o)
                .collect();
            sse += dot(&e, &e);

            // upper triangle of R
            for a in 0..ud {
                let ua = u[a];
                if ua != T::zero() {
                    axpy(ua, &u[a..], &mut r.row_mut(a)[a..]);
                }
            }
            for a in 0..ud {
                axpy(u[a], &zt, t.row_mut(a));
            }
            for q in 0..q1 {
                axpy(zt[q], &zt[q..], &mut g.row_mut(q)[q..]);
            }
            // back[k] = (W2ᵀ e)[k]
            back.iter_mut().for_each(|b| *b = T::zero());
            for j in 0..n {
                axpy(e[j], &w2[j * h..(j + 1) * h], &mut back);
                axpy(e[j], &zt, &mut grad_v[j * q1..(j + 1) * q1]);
            }
            for k in 0..h {
                axpy(
                    back[k],
                    &u[k * p1..(k + 1) * p1],
                    &mut grad_u[k * p1..(k + 1) * p1],
                );
            }
        }
        r.fill_lower_from_upper();
        g.fill_lower_from_upper();

        let mut c = Matrix::zeros(h, h);
        for j in 0..n {
            let row = &w2[j * h..(j + 1) * h];
            for a in 0..h {
                axpy(row[a], row, c.row_mut(a));
            }
        }

        Ok(Self {
            layout,
            r,
            t,
            g,
            c,
            w2,
            grad_u,
            grad_v,
            sse,
        })
    }

    fn hidden_of(&self, a: usize) -> usize {
        a / self.layout.p1()
    }

    /// `K = (β·G + c·I)⁻¹` and the Schur complement
    /// `S = β·A + c·I − β²·Σ_j B_j K B_jᵀ`, plus `T·K`.
    fn schur(&self, beta: T, shift: T) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        let mut kinv = self.g.clone();
        kinv.scale(beta);
        kinv.add_diagonal(shift);
        let k = Cholesky::new(&kinv)?.inverse();
        let tk = self.t.matmul(&k);
        let ud = self.layout.u_dim();
        let mut s = Matrix::zeros(ud, ud);
        for a in 0..ud {
            let ha = self.hidden_of(a);
            for b in a..ud {
                let hb = self.hidden_of(b);
                let tkt = dot(tk.row(a), self.t.row(b));
                s[(a, b)] = self.c[(ha, hb)] * (beta * self.r[(a, b)] - beta * beta * tkt);
            }
            s[(a, a)] += shift;
        }
        s.fill_lower_from_upper();
        Ok((k, s, tk))
    }
}

impl<T: Real> NormalEquations<T> for FactoredSystem<T> {
    fn param_count(&self) -> usize {
        self.layout.topo.param_count()
    }

    fn sse(&self) -> T {
        self.sse
    }

    fn gradient(&self) -> Vec<T> {
        self.layout.join(&self.grad_u, &self.grad_v)
    }

    fn solve(&self, beta: T, alpha: T, mu: T, theta: &[T]) -> Result<Vec<T>> {
        if theta.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let layout = self.layout;
        let (h, n) = (layout.topo.hidden_dim, layout.topo.output_dim);
        let (p1, q1) = (layout.p1(), layout.q1());
        let (theta_u, theta_v) = layout.split(theta);
        let r_u: Vec<T> = self
            .grad_u
            .iter()
            .zip(&theta_u)
            .map(|(&g, &w)| beta * g - alpha * w)
            .collect();
        let r_v: Vec<T> = self
            .grad_v
            .iter()
            .zip(&theta_v)
            .map(|(&g, &w)| beta * g - alpha * w)
            .collect();

        let (k, s, _) = self.schur(beta, alpha + mu)?;
        // y_j = K r_v,j ; mixed[h] = Σ_j w2[j,h] y_j
        let y: Vec<Vec<T>> = (0..n)
            .map(|j| k.matvec(&r_v[j * q1..(j + 1) * q1]))
            .collect();
        let mut mixed = Matrix::zeros(h, q1);
        for j in 0..n {
            for hh in 0..h {
                axpy(self.w2[j * h + hh], &y[j], mixed.row_mut(hh));
            }
        }
        let rhs: Vec<T> = (0..layout.u_dim())
            .map(|a| r_u[a] - beta * dot(self.t.row(a), mixed.row(self.hidden_of(a))))
            .collect();
        let delta_u = Cholesky::new(&s)?.solve(&rhs);

        // m[h] = Σ_p̃ T[(h,p̃), :] δu[(h,p̃)]
        let mut m = Matrix::zeros(h, q1);
        for a in 0..layout.u_dim() {
            axpy(delta_u[a], self.t.row(a), m.row_mut(a / p1));
        }
        let mut delta_v = vec![T::zero(); layout.v_dim()];
        let mut bt = vec![T::zero(); q1];
        for j in 0..n {
            bt.iter_mut().for_each(|v| *v = T::zero());
            for hh in 0..h {
                axpy(self.w2[j * h + hh], m.row(hh), &mut bt);
            }
            let kb = k.matvec(&bt);
            let out = &mut delta_v[j * q1..(j + 1) * q1];
            for q in 0..q1 {
                out[q] = y[j][q] - beta * kb[q];
            }
        }
        Ok(layout.join(&delta_u, &delta_v))
    }

    fn trace_inverse(&self, beta: T, alpha: T) -> Result<T> {
        let (k, s, tk) = self.schur(beta, alpha)?;
        let s_inv = Cholesky::new(&s)?.inverse();
        let ud = self.layout.u_dim();
        let n = T::from_usize_lossy(self.layout.topo.output_dim);
        // Σ_j tr(S⁻¹ B_j K² B_jᵀ) = Σ_ab S⁻¹[a,b] C[h_a,h_b] (TK)(TK)ᵀ[a,b]
        let mut coupling = T::zero();
        for a in 0..ud {
            let ha = self.hidden_of(a);
            for b in 0..ud {
                let hb = self.hidden_of(b);
                coupling += s_inv[(a, b)] * self.c[(ha, hb)] * dot(tk.row(a), tk.row(b));
            }
        }
        Ok(s_inv.trace() + n * k.trace() + beta * beta * coupling)
    }

    fn jtj(&self) -> Matrix<T> {
        let layout = self.layout;
        let (h, n) = (layout.topo.hidden_dim, layout.topo.output_dim);
        let q1 = layout.q1();
        let w = self.param_count();
        let mut out = Matrix::zeros(w, w);
        for a in 0..layout.u_dim() {
            let fa = layout.u_to_flat(a);
            let ha = self.hidden_of(a);
            for b in 0..layout.u_dim() {
                let hb = self.hidden_of(b);
                out[(fa, layout.u_to_flat(b))] = self.c[(ha, hb)] * self.r[(a, b)];
            }
            for j in 0..n {
                for q in 0..q1 {
                    let v = j * q1 + q;
                    let val = self.w2[j * h + ha] * self.t[(a, q)];
                    let fv = layout.v_to_flat(v);
                    out[(fa, fv)] = val;
                    out[(fv, fa)] = val;
                }
            }
        }
        for j in 0..n {
            for q in 0..q1 {
                for r in 0..q1 {
                    out[(layout.v_to_flat(j * q1 + q), layout.v_to_flat(j * q1 + r))] =
                        self.g[(q, r)];
                }
            }
        }
        out
    }
}

/// Explicit `JᵀJ` and `Jᵀe` from stacked per-sample Jacobians.
#[derive(Clone, Debug)]
pub struct DenseSystem<T> {
    jtj: Matrix<T>,
    grad: Vec<T>,
    sse: T,
}

impl<T: Real> DenseSystem<T> {
    pub fn assemble(model: &MlpModel<T>, batch: &Batch<T>) -> Result<Self> {
        batch.check_model(model)?;
        let w = model.topology().param_count();
        let n = model.topology().output_dim;
        let mut stacked = Matrix::zeros(batch.residual_count(), w);
        let mut residuals = Vec::with_capacity(batch.residual_count());
        for (s, (x, target)) in batch.inputs.iter().zip(&batch.targets).enumerate() {
            let jac = model.jacobian(x)?;
            let out = model.activations(x).output;
            for j in 0..n {
                stacked.row_mut(s * n + j).copy_from_slice(jac.row(j));
                residuals.push(target[j] - out[j]);
            }
        }
        let jt = stacked.transpose();
        Ok(Self {
            jtj: stacked.gram(),
            grad: jt.matvec(&residuals),
            sse: dot(&residuals, &residuals),
        })
    }
}

impl<T: Real> NormalEquations<T> for DenseSystem<T> {
    fn param_count(&self) -> usize {
        self.grad.len()
    }

    fn sse(&self) -> T {
        self.sse
    }

    fn gradient(&self) -> Vec<T> {
        self.grad.clone()
    }

    fn solve(&self, beta: T, alpha: T, mu: T, theta: &[T]) -> Result<Vec<T>> {
        if theta.len() != self.param_count() {
            return Err(Error::Dimension {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let mut a = self.jtj.clone();
        a.scale(beta);
        a.add_diagonal(alpha + mu);
        let rhs: Vec<T> = self
            .grad
            .iter()
            .zip(theta)
            .map(|(&g, &w)| beta * g - alpha * w)
            .collect();
        Ok(Cholesky::new(&a)?.solve(&rhs))
    }

    fn trace_inverse(&self, beta: T, alpha: T) -> Result<T> {
        let mut a = self.jtj.clone();
        a.scale(beta);
        a.add_diagonal(alpha);
        Ok(Cholesky::new(&a)?.trace_inverse())
    }

    fn jtj(&self) -> Matrix<T> {
        self.jtj.clone()
    }
}
