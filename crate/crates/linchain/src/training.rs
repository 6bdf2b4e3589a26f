//! Synthetic tasks, optimizers, and training loops.
//!
//! The tasks are desk-scale stand-ins for real fine-tuning: the
//! target-recovery task plants a hidden low-rank perturbation `W*` on top
//! of a frozen base weight and asks the adapter to recover it, which makes
//! the optimum exactly realizable whenever `target_rank <= r`. Training is
//! fully deterministic given `(adapter config, data seed, optimizer, run
//! seed)`; the base weight is never touched by an update.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adapters::{init_adapter, AdaptedLinear, AdapterConfig};
use crate::error::{Error, Result};
use crate::gradients::{backward_analytic, GradientSet, LossSpec};
use crate::linalg::{combine_seeds, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    TargetRecovery,
    TeacherStudentClassification,
}

/// Declarative description of a synthetic task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub d_in: usize,
    pub d_out: usize,
    pub target_rank: usize,
    pub train_size: usize,
    pub eval_size: usize,
    pub data_seed: u64,
    #[serde(default)]
    pub noise_std: f64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidConfig("task dims must be positive".into()));
        }
        if self.target_rank == 0 || self.target_rank > self.d_in.min(self.d_out) {
            return Err(Error::InvalidConfig(format!(
                "target_rank must be in 1..=min(d_in, d_out), got {}",
                self.target_rank
            )));
        }
        if self.train_size == 0 || self.eval_size == 0 {
            return Err(Error::InvalidConfig(
                "train_size and eval_size must be positive".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_std must be a nonnegative real, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }
}

/// Regression targets or class labels, depending on the task.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Values(Matrix),
    Labels(Vec<usize>),
}

impl Targets {
    fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Values(m) => Targets::Values(m.select_rows(indices)),
            Targets::Labels(l) => Targets::Labels(indices.iter().map(|&i| l[i]).collect()),
        }
    }

    fn loss_spec(&self) -> LossSpec {
        match self {
            Targets::Values(m) => LossSpec::Mse { target: m.clone() },
            Targets::Labels(l) => LossSpec::SoftmaxCrossEntropy { labels: l.clone() },
        }
    }
}

/// A generated dataset plus the frozen base weight the adapter sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: TaskSpec,
    pub w0: Matrix,
    /// The planted low-rank perturbation (target-recovery only).
    pub hidden_delta: Option<Matrix>,
    pub train_x: Matrix,
    pub train_targets: Targets,
    pub eval_x: Matrix,
    pub eval_targets: Targets,
}

impl Dataset {
    pub fn train_loss_spec(&self) -> LossSpec {
        self.train_targets.loss_spec()
    }

    pub fn eval_loss_spec(&self) -> LossSpec {
        self.eval_targets.loss_spec()
    }
}

/// Generate a dataset from its spec. The entire dataset is a pure
/// function of `spec.data_seed`.
///
/// Target-recovery draws a hidden `W* = U·V` (Kaiming factors of rank
/// `target_rank`), a fixed Kaiming base weight `w0`, inputs uniform on
/// `[-1, 1]`, and labels `y = x·(w0 + W*) + noise`. Teacher-student
/// classification labels each input with the argmax output of the hidden
/// teacher `w0 + W*`.
pub fn make_task(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::new(spec.data_seed);

    let w0 = Matrix::kaiming_uniform(spec.d_in, spec.d_out, &mut rng);
    let u = Matrix::kaiming_uniform(spec.d_in, spec.target_rank, &mut rng);
    let v = Matrix::kaiming_uniform(spec.target_rank, spec.d_out, &mut rng);
    let hidden_delta = u.matmul(&v)?;
    let teacher = w0.add(&hidden_delta)?;

    let mut draw_split = |n: usize| -> Result<(Matrix, Targets)> {
        let x = Matrix::uniform(n, spec.d_in, -1.0, 1.0, &mut rng);
        let clean = x.matmul(&teacher)?;
        let targets = match spec.kind {
            TaskKind::TargetRecovery => {
                let mut y = clean;
                if spec.noise_std > 0.0 {
                    for v in y.as_mut_slice() {
                        *v += rng.normal(0.0, spec.noise_std);
                    }
                }
                Targets::Values(y)
            }
            TaskKind::TeacherStudentClassification => {
                let labels = (0..n)
                    .map(|i| {
                        let row = clean.row(i);
                        let mut best = 0;
                        for (j, v) in row.iter().enumerate() {
                            if *v > row[best] {
                                best = j;
                            }
                        }
                        best
                    })
                    .collect();
                Targets::Labels(labels)
            }
        };
        Ok((x, targets))
    };

    let (train_x, train_targets) = draw_split(spec.train_size)?;
    let (eval_x, eval_targets) = draw_split(spec.eval_size)?;

    Ok(Dataset {
        spec: spec.clone(),
        w0,
        hidden_delta: Some(hidden_delta),
        train_x,
        train_targets,
        eval_x,
        eval_targets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be a nonnegative real, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {v}"
                )));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-parameter optimizer state, aligned with the adapter's parameter
/// order (`A`, `W1` … `Wn`, `B`).
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd { velocity: Vec<Matrix> },
    Adam { m: Vec<Matrix>, v: Vec<Matrix>, t: u64 },
}

impl OptimizerState {
    pub fn new(cfg: &OptimizerConfig, ad: &AdaptedLinear) -> OptimizerState {
        let zeros: Vec<Matrix> = ad
            .params()
            .iter()
            .map(|p| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        match cfg.kind {
            OptimizerKind::Sgd => OptimizerState::Sgd { velocity: zeros },
            OptimizerKind::Adam => OptimizerState::Adam {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
        }
    }
}

/// One optimizer step over the trainable parameters; `w0` is untouched.
/// SGD with momentum: `v <- momentum·v + g; θ <- θ - lr·v`. Adam uses
/// bias-corrected first and second moments.
pub fn optimizer_step(
    ad: &mut AdaptedLinear,
    grads: &GradientSet,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let grad_list = grads.as_vec();
    let mut params = ad.params_mut();
    if grad_list.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient set has {} groups, adapter has {}",
            grad_list.len(),
            params.len()
        )));
    }
    for (p, g) in params.iter().zip(&grad_list) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
    }

    match state {
        OptimizerState::Sgd { velocity } => {
            for ((p, g), vel) in params.iter_mut().zip(&grad_list).zip(velocity.iter_mut()) {
                let pd = p.as_mut_slice();
                let vd = vel.as_mut_slice();
                for ((theta, v), grad) in pd.iter_mut().zip(vd).zip(g.as_slice()) {
                    *v = cfg.momentum * *v + grad;
                    *theta -= cfg.learning_rate * *v;
                }
            }
        }
        OptimizerState::Adam { m, v, t } => {
            *t += 1;
            let t_f = *t as f64;
            let bias1 = 1.0 - cfg.beta1.powf(t_f);
            let bias2 = 1.0 - cfg.beta2.powf(t_f);
            for (((p, g), mi), vi) in params
                .iter_mut()
                .zip(&grad_list)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let pd = p.as_mut_slice();
                let md = mi.as_mut_slice();
                let vd = vi.as_mut_slice();
                for (((theta, mm), vv), grad) in pd.iter_mut().zip(md).zip(vd).zip(g.as_slice()) {
                    *mm = cfg.beta1 * *mm + (1.0 - cfg.beta1) * grad;
                    *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * grad * grad;
                    let m_hat = *mm / bias1;
                    let v_hat = *vv / bias2;
                    *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
    }
    Ok(())
}

/// One epoch's telemetry. `train_loss` and `eval_loss` are evaluated on
/// the full train and eval sets at the end of the epoch (after its
/// updates), so they are independent of the minibatch partition;
/// `grad_norms` are the Frobenius norms per parameter group from the last
/// step of the epoch. `wall_time_s` is cumulative and excluded from all
/// determinism guarantees.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub grad_norms: BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

/// A finished (or aborted) training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub records: Vec<TrainRecord>,
    /// True when a non-finite loss aborted the run; the offending value
    /// is kept in the final record rather than silently dropped.
    pub diverged: bool,
    /// Hash of the minibatch index order, for paired-comparison audits.
    pub batch_order_hash: u64,
}

impl TrainRun {
    pub fn final_eval_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval_loss)
    }

    /// Mean per-epoch eval loss (discrete area under the loss curve,
    /// normalized by epoch count).
    pub fn auc(&self) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        Some(self.records.iter().map(|r| r.eval_loss).sum::<f64>() / self.records.len() as f64)
    }

    /// First epoch whose eval loss drops below `threshold`.
    pub fn epochs_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.eval_loss < threshold)
            .map(|r| r.epoch)
    }
}

fn fnv1a_update(hash: &mut u64, value: u64) {
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    for byte in value.to_le_bytes() {
        *hash ^= byte as u64;
        *hash = hash.wrapping_mul(FNV_PRIME);
    }
}

/// Train `ad` on `data`. Minibatch order is a pure function of
/// `run_seed` (and epoch), so two methods trained with the same run seed
/// see identical batches in identical order. Returns the per-epoch trace;
/// a non-finite loss aborts with a flagged final record. Epochs are
/// numbered from 1.
pub fn train(
    ad: &mut AdaptedLinear,
    data: &Dataset,
    opt: &OptimizerConfig,
    run_seed: u64,
) -> Result<TrainRun> {
    opt.validate()?;
    if ad.config().d_in != data.spec.d_in || ad.config().d_out != data.spec.d_out {
        return Err(Error::InvalidConfig(format!(
            "adapter is {}x{} but task is {}x{}",
            ad.config().d_in,
            ad.config().d_out,
            data.spec.d_in,
            data.spec.d_out
        )));
    }

    let start = Instant::now();
    let mut state = OptimizerState::new(opt, ad);
    let mut batch_rng = RngState::new(combine_seeds(run_seed, 0xBA7C4));
    let train_spec = data.train_loss_spec();
    let eval_spec = data.eval_loss_spec();

    let n = data.spec.train_size;
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(opt.epochs);
    let mut batch_order_hash: u64 = 0xCBF2_9CE4_8422_2325;
    let mut step = 0usize;

    for epoch in 1..=opt.epochs {
        batch_rng.shuffle(&mut order);
        let mut last_norms: Vec<f64> = Vec::new();
        let mut bad_loss: Option<f64> = None;

        for chunk in order.chunks(opt.batch_size) {
            for &i in chunk {
                fnv1a_update(&mut batch_order_hash, i as u64);
            }
            let x = data.train_x.select_rows(chunk);
            let batch_loss_spec = data.train_targets.select(chunk).loss_spec();

            let y = ad.forward(&x)?;
            let loss = batch_loss_spec.loss(&y)?;
            step += 1;

            if !loss.is_finite() {
                bad_loss = Some(loss);
                break;
            }

            let delta = batch_loss_spec.output_delta(&y)?;
            let grads = backward_analytic(ad, &x, &delta)?;
            last_norms = grads.group_norms();
            optimizer_step(ad, &grads, &mut state, opt)?;
        }

        let grad_norms: BTreeMap<String, f64> = ad
            .param_names()
            .into_iter()
            .zip(last_norms.iter().copied().chain(std::iter::repeat(f64::NAN)))
            .collect();
        let train_loss = train_spec.loss(&ad.forward(&data.train_x)?)?;
        let eval_loss = eval_spec.loss(&ad.forward(&data.eval_x)?)?;

        records.push(TrainRecord {
            epoch,
            step,
            train_loss: bad_loss.unwrap_or(train_loss),
            eval_loss,
            grad_norms,
            wall_time_s: start.elapsed().as_secs_f64(),
        });

        if bad_loss.is_some() {
            return Ok(TrainRun {
                records,
                diverged: true,
                batch_order_hash,
            });
        }
    }

    Ok(TrainRun {
        records,
        diverged: false,
        batch_order_hash,
    })
}

/// One (adapter config, run seed) cell of a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub method: String,
    pub config_index: usize,
    pub seed: u64,
    pub final_eval_loss: f64,
    pub auc: f64,
    pub epochs_to_threshold: Option<usize>,
    pub diverged: bool,
    pub batch_order_hash: u64,
}

/// Mean and standard deviation of a metric across seeds. The deviation
/// uses the population formula, so a single seed reports 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(values: &[f64]) -> MeanSd {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanSd {
        mean,
        sd: var.sqrt(),
    }
}

/// Per-config aggregate over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub config_index: usize,
    pub final_eval_loss: MeanSd,
    pub auc: MeanSd,
    /// Mean epochs-to-threshold over the seeds that reached it, if any.
    pub epochs_to_threshold_mean: Option<f64>,
    pub seeds_reaching_threshold: usize,
}

/// Cross-method comparison on one task: per-cell metrics plus per-config
/// aggregates, all under identical data and batch order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub threshold: f64,
    pub cells: Vec<ComparisonCell>,
    pub summaries: Vec<MethodSummary>,
}

/// Train every adapter config on the same task for every seed, under
/// paired data (one dataset per comparison) and paired batch order (a
/// shared run seed per cell row). The loss threshold for
/// epochs-to-threshold defaults to `1.05 × (best final eval loss across
/// all cells)` when not given. A diverged cell is reported, not fatal.
pub fn compare_methods(
    configs: &[AdapterConfig],
    task: &TaskSpec,
    opt: &OptimizerConfig,
    seeds: &[u64],
    threshold: Option<f64>,
) -> Result<ComparisonReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "compare needs at least one adapter config and one seed".into(),
        ));
    }
    for config in configs {
        if config.d_in != task.d_in || config.d_out != task.d_out {
            return Err(Error::InvalidConfig(format!(
                "adapter {} is {}x{} but task is {}x{}",
                config.label(),
                config.d_in,
                config.d_out,
                task.d_in,
                task.d_out
            )));
        }
    }
    let data = make_task(task)?;

    let mut runs: Vec<(usize, u64, TrainRun)> = Vec::with_capacity(configs.len() * seeds.len());
    for (ci, config) in configs.iter().enumerate() {
        for &seed in seeds {
            let mut init_rng = RngState::new(combine_seeds(config.seed, seed));
            let mut ad = init_adapter(config, data.w0.clone(), &mut init_rng)?;
            let run = train(&mut ad, &data, opt, seed)?;
            runs.push((ci, seed, run));
        }
    }

    let threshold = threshold.unwrap_or_else(|| {
        let best = runs
            .iter()
            .filter_map(|(_, _, run)| run.final_eval_loss())
            .filter(|l| l.is_finite())
            .fold(f64::INFINITY, f64::min);
        1.05 * best
    });

    let cells: Vec<ComparisonCell> = runs
        .iter()
        .map(|(ci, seed, run)| ComparisonCell {
            method: configs[*ci].label(),
            config_index: *ci,
            seed: *seed,
            final_eval_loss: run.final_eval_loss().unwrap_or(f64::NAN),
            auc: run.auc().unwrap_or(f64::NAN),
            epochs_to_threshold: run.epochs_to_threshold(threshold),
            diverged: run.diverged,
            batch_order_hash: run.batch_order_hash,
        })
        .collect();

    let summaries = (0..configs.len())
        .map(|ci| {
            let mine: Vec<&ComparisonCell> =
                cells.iter().filter(|c| c.config_index == ci).collect();
            let finals: Vec<f64> = mine.iter().map(|c| c.final_eval_loss).collect();
            let aucs: Vec<f64> = mine.iter().map(|c| c.auc).collect();
            let reached: Vec<f64> = mine
                .iter()
                .filter_map(|c| c.epochs_to_threshold.map(|e| e as f64))
                .collect();
            MethodSummary {
                method: configs[ci].label(),
                config_index: ci,
                final_eval_loss: mean_sd(&finals),
                auc: mean_sd(&aucs),
                epochs_to_threshold_mean: if reached.is_empty() {
                    None
                } else {
                    Some(reached.iter().sum::<f64>() / reached.len() as f64)
                },
                seeds_reaching_threshold: reached.len(),
            }
        })
        .collect();

    Ok(ComparisonReport {
        threshold,
        cells,
        summaries,
    })
}
