//! Analytic backward pass for adapter parameters, a finite-difference
//! oracle, and the gradient-check harness that ties them together.
//!
//! With `G = xᵀ·Δ` (summed over the batch), `P_i = W1·…·W_{i-1}` and
//! `S_i = W_{i+1}·…·Wn`, the gradients of the loss with respect to the
//! trainable factors are
//!
//! ```text
//! dL/dA  = s · G · Bᵀ · (W1…Wn)ᵀ
//! dL/dB  = s · (W1…Wn)ᵀ · Aᵀ · G
//! dL/dWi = s · P_iᵀ · (Aᵀ · G · Bᵀ) · S_iᵀ
//! ```
//!
//! i.e. the prefix-product transpose multiplies the core on the left and
//! the suffix-product transpose on the right. Every gradient of one factor
//! contains all the other factors — the dependency structure that
//! `trace_dependencies` reports. The base weight `w0` is frozen and gets
//! no gradient. Correctness of the closed forms is established against
//! `finite_difference_grad`, which touches only the forward pass.

use serde::{Deserialize, Serialize};

use crate::adapters::AdaptedLinear;
use crate::error::{Error, Result};
use crate::linalg::{product, Matrix};

/// Per-parameter gradients, shaped exactly like the adapter's trainables.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_a: Matrix,
    pub d_chain: Vec<Matrix>,
    pub d_b: Matrix,
}

impl GradientSet {
    fn zeros_like(ad: &AdaptedLinear) -> GradientSet {
        GradientSet {
            d_a: Matrix::zeros(ad.a().rows(), ad.a().cols()),
            d_chain: ad
                .chain()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            d_b: Matrix::zeros(ad.b().rows(), ad.b().cols()),
        }
    }

    /// Gradients in parameter order: `A`, `W1` … `Wn`, `B`.
    pub fn as_vec(&self) -> Vec<&Matrix> {
        let mut v = vec![&self.d_a];
        v.extend(self.d_chain.iter());
        v.push(&self.d_b);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.as_vec().iter().all(|m| m.is_finite())
    }

    /// Frobenius norm per group, in parameter order.
    pub fn group_norms(&self) -> Vec<f64> {
        self.as_vec().iter().map(|m| m.frobenius_norm()).collect()
    }

    /// Largest absolute entrywise difference across all groups.
    pub fn max_abs_diff(&self, other: &GradientSet) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (a, b) in self.as_vec().iter().zip(other.as_vec()) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }
}

/// Scalar training objective paired with its targets.
///
/// * `Mse`: mean of squared errors over all `m·d_out` output entries.
/// * `SoftmaxCrossEntropy`: softmax over each output row, negative
///   log-likelihood of the integer label, averaged over the batch.
#[derive(Debug, Clone)]
pub enum LossSpec {
    Mse { target: Matrix },
    SoftmaxCrossEntropy { labels: Vec<usize> },
}

impl LossSpec {
    fn check_compatible(&self, y: &Matrix) -> Result<()> {
        match self {
            LossSpec::Mse { target } => {
                if target.shape() != y.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "mse loss",
                        lhs: y.shape(),
                        rhs: target.shape(),
                    });
                }
            }
            LossSpec::SoftmaxCrossEntropy { labels } => {
                if labels.len() != y.rows() {
                    return Err(Error::InvalidArgument(format!(
                        "{} labels for a batch of {} rows",
                        labels.len(),
                        y.rows()
                    )));
                }
                if let Some(&l) = labels.iter().find(|&&l| l >= y.cols()) {
                    return Err(Error::InvalidArgument(format!(
                        "label {} out of range for {} classes",
                        l,
                        y.cols()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Scalar loss value at outputs `y`.
    pub fn loss(&self, y: &Matrix) -> Result<f64> {
        self.check_compatible(y)?;
        match self {
            LossSpec::Mse { target } => {
                let m = y.rows() * y.cols();
                let sum: f64 = y
                    .as_slice()
                    .iter()
                    .zip(target.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                Ok(sum / m as f64)
            }
            LossSpec::SoftmaxCrossEntropy { labels } => {
                let mut total = 0.0;
                for (i, &label) in labels.iter().enumerate() {
                    let row = y.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
                    total += log_z - row[label];
                }
                Ok(total / labels.len() as f64)
            }
        }
    }

    /// `Δ = dL/dy`, same shape as `y`. For mse (mean over all entries)
    /// this is `2(y - target) / (m·d_out)`; for cross-entropy it is
    /// `(softmax(y) - onehot) / m`.
    pub fn output_delta(&self, y: &Matrix) -> Result<Matrix> {
        self.check_compatible(y)?;
        match self {
            LossSpec::Mse { target } => {
                let scale = 2.0 / (y.rows() * y.cols()) as f64;
                Ok(y.sub(target)?.scale(scale))
            }
            LossSpec::SoftmaxCrossEntropy { labels } => {
                let m = y.rows() as f64;
                let mut delta = Matrix::zeros(y.rows(), y.cols());
                for (i, &label) in labels.iter().enumerate() {
                    let row = y.row(i);
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    for (j, e) in exps.iter().enumerate() {
                        let p = e / z;
                        let indicator = if j == label { 1.0 } else { 0.0 };
                        delta.set(i, j, (p - indicator) / m);
                    }
                }
                Ok(delta)
            }
        }
    }
}

/// Deliberate defects for mutation-testing the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradFault {
    /// Multiply both the prefix and suffix transposes on the right of the
    /// chain-gradient core instead of sandwiching it. Only shape-valid for
    /// all-square chains; wrong for any chain of length >= 2 whose
    /// matrices do not commute.
    RightMultipliedSandwich,
}

/// Analytic gradients of the loss at `(x, Δ)` for every trainable matrix.
pub fn backward_analytic(ad: &AdaptedLinear, x: &Matrix, delta: &Matrix) -> Result<GradientSet> {
    backward_impl(ad, x, delta, None)
}

/// `backward_analytic` with an injected defect; diagnostic use only.
pub fn backward_with_fault(
    ad: &AdaptedLinear,
    x: &Matrix,
    delta: &Matrix,
    fault: GradFault,
) -> Result<GradientSet> {
    backward_impl(ad, x, delta, Some(fault))
}

fn backward_impl(
    ad: &AdaptedLinear,
    x: &Matrix,
    delta: &Matrix,
    fault: Option<GradFault>,
) -> Result<GradientSet> {
    if x.cols() != ad.config().d_in {
        return Err(Error::ShapeMismatch {
            op: "backward (x)",
            lhs: x.shape(),
            rhs: ad.w0().shape(),
        });
    }
    if delta.shape() != (x.rows(), ad.config().d_out) {
        return Err(Error::ShapeMismatch {
            op: "backward (delta)",
            lhs: delta.shape(),
            rhs: (x.rows(), ad.config().d_out),
        });
    }

    let scaling = ad.config().scaling;
    let chain = ad.chain();

    // Batched outer product, d_in × d_out.
    let g = x.transpose().matmul(delta)?;
    let chain_prod = ad.chain_product();

    let d_a = g
        .matmul(&ad.b().transpose())?
        .matmul(&chain_prod.transpose())?
        .scale(scaling);

    let a_t_g = ad.a().transpose().matmul(&g)?;
    let d_b = chain_prod.transpose().matmul(&a_t_g)?.scale(scaling);

    // Core shared by every chain gradient, r0 × rk.
    let core = a_t_g.matmul(&ad.b().transpose())?;

    let r0 = ad.config().rank_in();
    let mut d_chain = Vec::with_capacity(chain.len());
    for i in 0..chain.len() {
        let prefix: Vec<&Matrix> = chain[..i].iter().collect();
        let suffix: Vec<&Matrix> = chain[i + 1..].iter().collect();
        let p = product(&prefix, r0)?;
        let s = product(&suffix, chain[i].cols())?;
        let grad = match fault {
            None => p.transpose().matmul(&core)?.matmul(&s.transpose())?,
            Some(GradFault::RightMultipliedSandwich) => core
                .matmul(&s.transpose())?
                .matmul(&p.transpose())?,
        };
        d_chain.push(grad.scale(scaling));
    }

    Ok(GradientSet {
        d_a,
        d_chain,
        d_b,
    })
}

/// Independent gradient oracle: central finite differences of the scalar
/// loss, `(L(θ+h) - L(θ-h)) / 2h` with `h = 1e-6·max(1, |θ|)` per trainable
/// scalar. Shares nothing with the analytic path beyond `forward`.
pub fn finite_difference_grad(
    ad: &AdaptedLinear,
    x: &Matrix,
    loss: &LossSpec,
) -> Result<GradientSet> {
    // Validate shapes once up front via a forward evaluation.
    let y = ad.forward(x)?;
    loss.check_compatible(&y)?;

    let mut probe = ad.clone();
    let mut grads = GradientSet::zeros_like(ad);
    let n_groups = ad.params().len();
    for group in 0..n_groups {
        let n_entries = {
            let p = probe.params_mut().swap_remove(group) as &Matrix;
            p.rows() * p.cols()
        };
        for idx in 0..n_entries {
            let theta = probe.params_mut()[group].as_slice()[idx];
            let h = 1e-6 * theta.abs().max(1.0);

            probe.params_mut()[group].as_mut_slice()[idx] = theta + h;
            let loss_plus = loss.loss(&probe.forward(x)?)?;
            probe.params_mut()[group].as_mut_slice()[idx] = theta - h;
            let loss_minus = loss.loss(&probe.forward(x)?)?;
            probe.params_mut()[group].as_mut_slice()[idx] = theta;

            let g = (loss_plus - loss_minus) / (2.0 * h);
            let target = if group == 0 {
                &mut grads.d_a
            } else if group == n_groups - 1 {
                &mut grads.d_b
            } else {
                &mut grads.d_chain[group - 1]
            };
            target.as_mut_slice()[idx] = g;
        }
    }
    Ok(grads)
}

/// One parameter group's agreement between analytic and oracle gradients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupCheck {
    pub name: String,
    pub max_rel_error: f64,
}

/// Outcome of a gradient check. A failing check is a report, not an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
    pub max_rel_error: f64,
    pub pass: bool,
}

/// Floor coefficient for the relative-error denominator. Central
/// differences at `h ~ 1e-6` resolve a gradient entry to no better than
/// a few times `1e-9 * max(1, |L|)` in absolute terms (cancellation of
/// two nearly equal loss values), so entries below
/// `1e-3 * max(1, |L|)` carry no relative information; they are compared
/// at absolute resolution `tol * 1e-3 * max(1, |L|)`, comfortably above
/// that noise while still flagging any defect of real magnitude.
const REL_ERROR_FLOOR: f64 = 1e-3;

/// Relative error with an oracle-resolution floor:
/// `|a-b| / max(|a|, |b|, 1e-3 * max(1, |loss|))`.
fn rel_error(a: f64, b: f64, loss_scale: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR * loss_scale.max(1.0))
}

/// Compare `backward_analytic` (with loss-derived `Δ`) against the
/// finite-difference oracle, entry by entry, reporting the worst relative
/// error per parameter group.
pub fn grad_check(ad: &AdaptedLinear, x: &Matrix, loss: &LossSpec, tol: f64) -> Result<CheckReport> {
    grad_check_with_fault(ad, x, loss, tol, None)
}

/// `grad_check` with an optional injected defect in the analytic path,
/// for verifying that the check actually catches wrong gradients.
pub fn grad_check_with_fault(
    ad: &AdaptedLinear,
    x: &Matrix,
    loss: &LossSpec,
    tol: f64,
    fault: Option<GradFault>,
) -> Result<CheckReport> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let y = ad.forward(x)?;
    let loss_scale = loss.loss(&y)?.abs();
    let delta = loss.output_delta(&y)?;
    let analytic = backward_impl(ad, x, &delta, fault)?;
    let oracle = finite_difference_grad(ad, x, loss)?;

    let names = ad.param_names();
    let mut groups = Vec::with_capacity(names.len());
    let mut worst: f64 = 0.0;
    for ((name, ga), gf) in names.into_iter().zip(analytic.as_vec()).zip(oracle.as_vec()) {
        let group_worst = ga
            .as_slice()
            .iter()
            .zip(gf.as_slice())
            .map(|(a, f)| rel_error(*a, *f, loss_scale))
            .fold(0.0, f64::max);
        worst = worst.max(group_worst);
        groups.push(GroupCheck {
            name,
            max_rel_error: group_worst,
        });
    }
    Ok(CheckReport {
        tolerance: tol,
        groups,
        max_rel_error: worst,
        pass: worst <= tol,
    })
}

/// Which other parameter matrices appear as factors in one parameter's
/// gradient expression.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradientDependencies {
    pub param: String,
    pub depends_on: Vec<String>,
}

/// Dependency structure of the gradient expressions for a chain of
/// length `n`: every gradient contains all `n+1` other trainable
/// matrices as factors, for `(n+2)(n+1)` factor occurrences in total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DependencyReport {
    pub n: usize,
    pub dependencies: Vec<GradientDependencies>,
    pub total_factor_occurrences: usize,
}

/// Enumerate, for each trainable matrix of an n-chain adapter, the other
/// matrices its gradient depends on. Reads the closed forms at the top of
/// this module off directly; the count grows quadratically in `n`.
pub fn trace_dependencies(n: usize) -> DependencyReport {
    let chain_names: Vec<String> = (1..=n).map(|i| format!("W{i}")).collect();

    let mut dependencies = Vec::with_capacity(n + 2);

    let mut a_deps = vec!["B".to_string()];
    a_deps.extend(chain_names.iter().cloned());
    dependencies.push(GradientDependencies {
        param: "A".to_string(),
        depends_on: a_deps,
    });

    for i in 1..=n {
        let mut deps = vec!["A".to_string(), "B".to_string()];
        deps.extend(chain_names.iter().filter(|w| **w != format!("W{i}")).cloned());
        dependencies.push(GradientDependencies {
            param: format!("W{i}"),
            depends_on: deps,
        });
    }

    let mut b_deps = vec!["A".to_string()];
    b_deps.extend(chain_names.iter().cloned());
    dependencies.push(GradientDependencies {
        param: "B".to_string(),
        depends_on: b_deps,
    });

    let total = dependencies.iter().map(|d| d.depends_on.len()).sum();
    DependencyReport {
        n,
        dependencies,
        total_factor_occurrences: total,
    }
}
