//! Implementations behind the CLI subcommands.
//!
//! Every command reads one config file, materializes a fresh run
//! directory `<output_root>/<command>-<config_hash>/` (suffixed `-2`,
//! `-3`, … instead of ever overwriting a previous run), writes the
//! effective config alongside its outputs, and returns a process exit
//! code: 0 success, 1 domain failure (failed check, diverged run),
//! 2 usage or config error. The output root is taken from `--output-dir`,
//! then the config's `output_dir`, then `LINCHAIN_OUTPUT_DIR`, then
//! `./runs`; concurrent runs on the same root are rejected via a lock
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::adapters::{init_adapter, AdapterConfig};
use crate::error::{Error, Result};
use crate::experiments::checkpoint::checkpoint_save;
use crate::experiments::config::ExperimentConfig;
use crate::experiments::trace::{comparison_to_csv, trace_to_csv};
use crate::gradients::{grad_check_with_fault, LossSpec};
use crate::linalg::{combine_seeds, Matrix, RngState};
use crate::training::{compare_methods, make_task, train};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Invocation options shared by all subcommands.
#[derive(Debug, Clone)]
pub struct RunnerOptions {
    pub config_path: PathBuf,
    /// Overrides the config's `output_dir` and the environment.
    pub output_dir: Option<PathBuf>,
    /// Replaces the config's `seeds` with a single seed.
    pub seed: Option<u64>,
    pub quiet: bool,
}

struct Prepared {
    config: ExperimentConfig,
    run_dir: PathBuf,
    _lock: DirLock,
    quiet: bool,
}

impl Prepared {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.run_dir.join(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::InvalidArgument(format!("report encode: {e}")))?;
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Lock file guarding an output root; removed on drop.
struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(root: &Path) -> Result<DirLock> {
        let path = root.join(".linchain-lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::OutputDirLocked(root.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn config_hash(effective_toml: &str) -> String {
    let digest = Sha256::digest(effective_toml.as_bytes());
    digest[..4].iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_output_root(opts: &RunnerOptions, config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &opts.output_dir {
        return dir.clone();
    }
    if let Some(dir) = &config.output_dir {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var("LINCHAIN_OUTPUT_DIR") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("runs")
}

/// Parse + override + validate the config, then materialize the run dir.
fn prepare(command: &str, opts: &RunnerOptions) -> Result<Prepared> {
    let mut config = ExperimentConfig::load(&opts.config_path)?;
    if let Some(seed) = opts.seed {
        config.seeds = vec![seed];
    }
    let effective = config.to_toml_string();

    let root = resolve_output_root(opts, &config);
    fs::create_dir_all(&root)?;
    let lock = DirLock::acquire(&root)?;

    let base = format!("{command}-{}", config_hash(&effective));
    let mut run_dir = root.join(&base);
    let mut suffix = 2;
    while run_dir.exists() {
        run_dir = root.join(format!("{base}-{suffix}"));
        suffix += 1;
    }
    fs::create_dir(&run_dir)?;
    fs::write(run_dir.join("config.toml"), &effective)?;

    let prepared = Prepared {
        config,
        run_dir,
        _lock: lock,
        quiet: opts.quiet,
    };
    for warning in prepared.config.adapter_warnings() {
        if !opts.quiet {
            eprintln!("warning: {warning}");
        }
    }
    Ok(prepared)
}

#[derive(Debug, Serialize)]
struct GradcheckCaseFailure {
    adapter: String,
    case: usize,
    loss: String,
    batch: usize,
    max_rel_error: f64,
}

#[derive(Debug, Serialize)]
struct GradcheckAdapterReport {
    adapter: String,
    cases: usize,
    max_rel_error: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct GradcheckRunReport {
    tolerance: f64,
    total_cases: usize,
    max_rel_error: f64,
    pass: bool,
    fault_injected: bool,
    adapters: Vec<GradcheckAdapterReport>,
    failures: Vec<GradcheckCaseFailure>,
}

/// Check analytic gradients against the finite-difference oracle over
/// randomized cases for every configured adapter.
pub fn run_gradcheck(opts: &RunnerOptions) -> Result<i32> {
    let prepared = prepare("gradcheck", opts)?;
    let gc = prepared.config.gradcheck.clone().unwrap_or_default();
    if gc.tolerance <= 0.0 || gc.cases == 0 || gc.batch_sizes.is_empty() {
        return Err(Error::ConfigParse(
            "[gradcheck] needs a positive tolerance, cases >= 1 and non-empty batch_sizes".into(),
        ));
    }
    let adapters = prepared.config.all_adapters();
    if adapters.is_empty() {
        return Err(Error::ConfigParse(
            "gradcheck needs an [adapter] section or [[adapters]] entries".into(),
        ));
    }

    let mut report = GradcheckRunReport {
        tolerance: gc.tolerance,
        total_cases: 0,
        max_rel_error: 0.0,
        pass: true,
        fault_injected: gc.inject_fault.is_some(),
        adapters: Vec::new(),
        failures: Vec::new(),
    };

    for (ai, config) in adapters.iter().enumerate() {
        let mut adapter_worst: f64 = 0.0;
        for case in 0..gc.cases {
            let case_id = ((ai as u64) << 32) | case as u64;
            let mut rng = RngState::new(combine_seeds(gc.case_seed, case_id));

            let w0 = Matrix::uniform(config.d_in, config.d_out, -1.0, 1.0, &mut rng);
            let mut ad = init_adapter(config, w0, &mut rng.derive())?;
            ad.randomize_uniform(-1.0, 1.0, &mut rng);

            let batch = gc.batch_sizes[case % gc.batch_sizes.len()];
            let x = Matrix::uniform(batch, config.d_in, -1.0, 1.0, &mut rng);
            let (loss_name, loss) = if case % 2 == 0 {
                let target = Matrix::uniform(batch, config.d_out, -1.0, 1.0, &mut rng);
                ("mse", LossSpec::Mse { target })
            } else {
                let labels = (0..batch)
                    .map(|_| (rng.next_u64() % config.d_out as u64) as usize)
                    .collect();
                ("softmax-cross-entropy", LossSpec::SoftmaxCrossEntropy { labels })
            };

            let check = grad_check_with_fault(&ad, &x, &loss, gc.tolerance, gc.inject_fault)?;
            report.total_cases += 1;
            adapter_worst = adapter_worst.max(check.max_rel_error);
            if !check.pass {
                report.failures.push(GradcheckCaseFailure {
                    adapter: config.label(),
                    case,
                    loss: loss_name.to_string(),
                    batch,
                    max_rel_error: check.max_rel_error,
                });
            }
        }
        let pass = adapter_worst <= gc.tolerance;
        report.max_rel_error = report.max_rel_error.max(adapter_worst);
        report.pass &= pass;
        prepared.say(format!(
            "gradcheck {}: {} cases, max rel error {:.3e} -> {}",
            config.label(),
            gc.cases,
            adapter_worst,
            if pass { "pass" } else { "FAIL" }
        ));
        report.adapters.push(GradcheckAdapterReport {
            adapter: config.label(),
            cases: gc.cases,
            max_rel_error: adapter_worst,
            pass,
        });
    }

    let path = prepared.write_json("report.json", &report)?;
    prepared.say(format!(
        "gradcheck: {} cases total, max rel error {:.3e}, tolerance {:.1e} -> {} ({})",
        report.total_cases,
        report.max_rel_error,
        report.tolerance,
        if report.pass { "PASS" } else { "FAIL" },
        path.display()
    ));
    Ok(if report.pass { EXIT_OK } else { EXIT_DOMAIN_FAILURE })
}

#[derive(Debug, Serialize)]
struct ParamCountEntry {
    adapter: String,
    d_in: usize,
    d_out: usize,
    chain_dims: Vec<usize>,
    params: usize,
    chain_params: usize,
    overhead_fraction: f64,
}

/// Report trainable-parameter counts and the chain overhead per adapter.
pub fn run_paramcount(opts: &RunnerOptions) -> Result<i32> {
    let prepared = prepare("paramcount", opts)?;
    let adapters = prepared.config.all_adapters();
    if adapters.is_empty() {
        return Err(Error::ConfigParse(
            "paramcount needs an [adapter] section or [[adapters]] entries".into(),
        ));
    }

    let entries: Vec<ParamCountEntry> = adapters
        .iter()
        .map(|config| {
            let params = config.param_count();
            let chain_params = config.chain_param_count();
            ParamCountEntry {
                adapter: config.label(),
                d_in: config.d_in,
                d_out: config.d_out,
                chain_dims: config.chain_dims.clone(),
                params,
                chain_params,
                overhead_fraction: chain_params as f64 / params as f64,
            }
        })
        .collect();

    prepared.say(format!(
        "{:<28} {:>8} {:>8} {:>12} {:>12} {:>10}",
        "adapter", "d_in", "d_out", "params", "chain", "overhead"
    ));
    for e in &entries {
        prepared.say(format!(
            "{:<28} {:>8} {:>8} {:>12} {:>12} {:>9.3}%",
            e.adapter,
            e.d_in,
            e.d_out,
            e.params,
            e.chain_params,
            100.0 * e.overhead_fraction
        ));
    }
    let path = prepared.write_json("report.json", &entries)?;
    prepared.say(format!("paramcount: wrote {}", path.display()));
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct TrainRunReport {
    adapter: String,
    run_seed: u64,
    epochs: usize,
    steps: usize,
    final_train_loss: f64,
    final_eval_loss: f64,
    auc: f64,
    diverged: bool,
    batch_order_hash: String,
}

/// Train one adapter on the configured task; writes `trace.csv` and
/// `checkpoint.ckpt`. A diverged run exits 1.
pub fn run_train(opts: &RunnerOptions) -> Result<i32> {
    let prepared = prepare("train", opts)?;
    let adapter_cfg = prepared.config.single_adapter()?.clone();
    let task = prepared.config.required_task()?.clone();
    let optimizer = prepared.config.required_optimizer()?.clone();
    let run_seed = prepared.config.seeds[0];

    let data = make_task(&task)?;
    let mut init_rng = RngState::new(combine_seeds(adapter_cfg.seed, run_seed));
    let mut ad = init_adapter(&adapter_cfg, data.w0.clone(), &mut init_rng)?;
    let run = train(&mut ad, &data, &optimizer, run_seed)?;

    let trace_path = prepared.run_dir.join("trace.csv");
    fs::write(
        &trace_path,
        trace_to_csv(&run.records, adapter_cfg.num_chain_matrices()),
    )?;
    let ckpt_path = prepared.run_dir.join("checkpoint.ckpt");
    checkpoint_save(&ad, &ckpt_path)?;

    let last = run.records.last();
    let report = TrainRunReport {
        adapter: adapter_cfg.label(),
        run_seed,
        epochs: run.records.len(),
        steps: last.map(|r| r.step).unwrap_or(0),
        final_train_loss: last.map(|r| r.train_loss).unwrap_or(f64::NAN),
        final_eval_loss: last.map(|r| r.eval_loss).unwrap_or(f64::NAN),
        auc: run.auc().unwrap_or(f64::NAN),
        diverged: run.diverged,
        batch_order_hash: format!("{:016x}", run.batch_order_hash),
    };
    prepared.write_json("report.json", &report)?;

    prepared.say(format!(
        "train {}: {} epochs, final train loss {:.6e}, final eval loss {:.6e}{}",
        report.adapter,
        report.epochs,
        report.final_train_loss,
        report.final_eval_loss,
        if run.diverged { " [DIVERGED]" } else { "" }
    ));
    prepared.say(format!(
        "train: wrote {} and {}",
        trace_path.display(),
        ckpt_path.display()
    ));
    Ok(if run.diverged {
        EXIT_DOMAIN_FAILURE
    } else {
        EXIT_OK
    })
}

/// Train every configured adapter on the same task and seeds, paired;
/// writes `compare.csv` and `report.json`. "A method lost" is a result,
/// not an error.
pub fn run_compare(opts: &RunnerOptions) -> Result<i32> {
    let prepared = prepare("compare", opts)?;
    let adapters: Vec<AdapterConfig> = prepared
        .config
        .all_adapters()
        .into_iter()
        .cloned()
        .collect();
    if adapters.len() < 2 {
        return Err(Error::ConfigParse(
            "compare needs at least two adapter configs ([[adapters]] entries)".into(),
        ));
    }
    let task = prepared.config.required_task()?.clone();
    let optimizer = prepared.config.required_optimizer()?.clone();
    let threshold = prepared
        .config
        .compare
        .as_ref()
        .and_then(|c| c.threshold);

    let report = compare_methods(
        &adapters,
        &task,
        &optimizer,
        &prepared.config.seeds,
        threshold,
    )?;

    let csv_path = prepared.run_dir.join("compare.csv");
    fs::write(&csv_path, comparison_to_csv(&report))?;
    prepared.write_json("report.json", &report)?;

    for s in &report.summaries {
        prepared.say(format!(
            "compare {}: final {:.6e} ± {:.1e}, auc {:.6e} ± {:.1e}, reached threshold {}/{}",
            s.method,
            s.final_eval_loss.mean,
            s.final_eval_loss.sd,
            s.auc.mean,
            s.auc.sd,
            s.seeds_reaching_threshold,
            prepared.config.seeds.len()
        ));
    }
    prepared.say(format!("compare: wrote {}", csv_path.display()));
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_root_precedence() {
        let config = ExperimentConfig::from_toml_str("output_dir = \"from-config\"").unwrap();
        let mut opts = RunnerOptions {
            config_path: PathBuf::new(),
            output_dir: Some(PathBuf::from("from-cli")),
            seed: None,
            quiet: true,
        };
        assert_eq!(resolve_output_root(&opts, &config), PathBuf::from("from-cli"));
        opts.output_dir = None;
        assert_eq!(
            resolve_output_root(&opts, &config),
            PathBuf::from("from-config")
        );
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = DirLock::acquire(dir.path()).unwrap();
        assert!(matches!(
            DirLock::acquire(dir.path()),
            Err(Error::OutputDirLocked(_))
        ));
        drop(lock);
        DirLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn config_hash_is_stable_and_short() {
        let h1 = config_hash("seeds = [1]");
        let h2 = config_hash("seeds = [1]");
        let h3 = config_hash("seeds = [2]");
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 8);
    }
}
