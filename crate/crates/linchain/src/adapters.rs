//! Low-rank adapters over a frozen linear layer.
//!
//! Three methods share one representation: the weight update is a product
//! of a down-projection `A` (`d_in × r0`), an optional chain of learnable
//! matrices `W1 … Wn` (`W_i: r_{i-1} × r_i`), and an up-projection `B`
//! (`r_k × d_out`):
//!
//! ```text
//! delta_w = scaling · A · W1 · … · Wn · B
//! y       = x · w0  +  x · delta_w
//! ```
//!
//! * `lora`     — empty chain (`chain_dims = [r]`, n = 0).
//! * `moslora`  — one square mixer (`chain_dims = [r, r]`, n = 1).
//! * `linchain` — any chain of length n >= 1, square or rectangular.
//!
//! A product of linear maps collapses to a single linear map, so at fixed
//! rank the three methods express the same functions; they differ in how
//! gradient descent moves through the factors. `collapse_to_lora` performs
//! that functional collapse explicitly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{product, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lora,
    Moslora,
    Linchain,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Lora => "lora",
            Method::Moslora => "moslora",
            Method::Linchain => "linchain",
        }
    }
}

/// How chain matrices are initialized. `Identity` is a diagnostic mode for
/// collapse experiments; the default is Kaiming uniform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChainInit {
    #[default]
    Kaiming,
    Identity,
}

/// Declarative description of an adapter.
///
/// `chain_dims = [r0, r1, …, rk]` fixes every trainable shape:
/// `A: d_in × r0`, `W_i: r_{i-1} × r_i`, `B: r_k × d_out`. The number of
/// chain matrices is `chain_dims.len() - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterConfig {
    pub method: Method,
    pub d_in: usize,
    pub d_out: usize,
    pub chain_dims: Vec<usize>,
    #[serde(default = "default_scaling")]
    pub scaling: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub chain_init: ChainInit,
}

fn default_scaling() -> f64 {
    1.0
}

impl AdapterConfig {
    pub fn new(method: Method, d_in: usize, d_out: usize, chain_dims: Vec<usize>) -> AdapterConfig {
        AdapterConfig {
            method,
            d_in,
            d_out,
            chain_dims,
            scaling: 1.0,
            seed: 0,
            chain_init: ChainInit::Kaiming,
        }
    }

    /// Rank on the `A` side (`r0`).
    pub fn rank_in(&self) -> usize {
        self.chain_dims[0]
    }

    /// Rank on the `B` side (`rk`).
    pub fn rank_out(&self) -> usize {
        *self.chain_dims.last().expect("chain_dims is never empty")
    }

    /// Number of chain matrices (0 for lora).
    pub fn num_chain_matrices(&self) -> usize {
        self.chain_dims.len() - 1
    }

    /// Exact count of trainable scalars:
    /// `d_in·r0 + sum_i r_{i-1}·r_i + rk·d_out`. With all dims equal to
    /// `r` and n chain matrices this reduces to `(d_in + d_out)·r + n·r²`.
    pub fn param_count(&self) -> usize {
        let chain: usize = self.chain_dims.windows(2).map(|w| w[0] * w[1]).sum();
        self.d_in * self.rank_in() + chain + self.rank_out() * self.d_out
    }

    /// Trainable scalars inside the chain alone (the overhead over lora).
    pub fn chain_param_count(&self) -> usize {
        self.chain_dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Hard-validate the config; returns human-readable warnings for
    /// regimes that are legal but outside the low-rank assumptions.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.d_in == 0 || self.d_out == 0 {
            return Err(Error::InvalidConfig(
                "d_in and d_out must be positive".to_string(),
            ));
        }
        if self.chain_dims.is_empty() || self.chain_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "chain_dims must be a non-empty list of positive integers".to_string(),
            ));
        }
        if !(self.scaling.is_finite() && self.scaling > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "scaling must be a positive real, got {}",
                self.scaling
            )));
        }
        let min_d = self.d_in.min(self.d_out);
        if let Some(&r) = self.chain_dims.iter().find(|&&r| r > min_d) {
            return Err(Error::InvalidConfig(format!(
                "chain dimension {} exceeds min(d_in, d_out) = {}",
                r, min_d
            )));
        }
        match self.method {
            Method::Lora => {
                if self.chain_dims.len() != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "lora takes chain_dims = [r]; got {:?}",
                        self.chain_dims
                    )));
                }
            }
            Method::Moslora => {
                if self.chain_dims.len() != 2 || self.chain_dims[0] != self.chain_dims[1] {
                    return Err(Error::InvalidConfig(format!(
                        "moslora takes chain_dims = [r, r] (one square mixer); got {:?}",
                        self.chain_dims
                    )));
                }
            }
            Method::Linchain => {
                if self.chain_dims.len() < 2 {
                    return Err(Error::InvalidConfig(format!(
                        "linchain needs at least one chain matrix (chain_dims length >= 2); got {:?}",
                        self.chain_dims
                    )));
                }
            }
        }

        let mut warnings = Vec::new();
        let max_r = *self.chain_dims.iter().max().unwrap();
        if max_r * 2 > min_d {
            warnings.push(format!(
                "rank {} is not small relative to min(d_in, d_out) = {}; \
                 the low-rank efficiency regime assumes n < r << min(d_in, d_out)",
                max_r, min_d
            ));
        }
        Ok(warnings)
    }

    /// A short human-readable label, e.g. `linchain[8,8,8,8]`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Lora => format!("lora[r={}]", self.rank_in()),
            _ => {
                let dims: Vec<String> = self.chain_dims.iter().map(|d| d.to_string()).collect();
                format!("{}[{}]", self.method.label(), dims.join(","))
            }
        }
    }
}

/// Exact count of trainable scalars for a config.
pub fn param_count(config: &AdapterConfig) -> usize {
    config.param_count()
}

/// A frozen base weight together with its trainable adapter factors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear {
    config: AdapterConfig,
    w0: Matrix,
    a: Matrix,
    chain: Vec<Matrix>,
    b: Matrix,
}

/// Construct an adapter over `w0` (`d_in × d_out`). `A` and every chain
/// matrix are drawn Kaiming uniform in a fixed order (`A` first, then the
/// chain left to right); `B` starts at zero, so the freshly built adapter
/// computes exactly `x · w0`.
pub fn init_adapter(config: &AdapterConfig, w0: Matrix, rng: &mut RngState) -> Result<AdaptedLinear> {
    config.validate()?;
    if w0.shape() != (config.d_in, config.d_out) {
        return Err(Error::ShapeMismatch {
            op: "init_adapter",
            lhs: (config.d_in, config.d_out),
            rhs: w0.shape(),
        });
    }
    let a = Matrix::kaiming_uniform(config.d_in, config.rank_in(), rng);
    let chain = config
        .chain_dims
        .windows(2)
        .map(|w| match config.chain_init {
            ChainInit::Kaiming => Matrix::kaiming_uniform(w[0], w[1], rng),
            ChainInit::Identity => Matrix::identity(w[0], w[1]),
        })
        .collect();
    let b = Matrix::zeros(config.rank_out(), config.d_out);
    Ok(AdaptedLinear {
        config: config.clone(),
        w0,
        a,
        chain,
        b,
    })
}

impl AdaptedLinear {
    /// Reassemble an adapter from stored matrices, re-checking every shape.
    pub fn from_parts(
        config: AdapterConfig,
        w0: Matrix,
        a: Matrix,
        chain: Vec<Matrix>,
        b: Matrix,
    ) -> Result<AdaptedLinear> {
        config.validate()?;
        let expect = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{what} does not match config {:?}",
                    config.chain_dims
                )))
            }
        };
        expect(w0.shape() == (config.d_in, config.d_out), "w0 shape")?;
        expect(a.shape() == (config.d_in, config.rank_in()), "A shape")?;
        expect(chain.len() == config.num_chain_matrices(), "chain length")?;
        for (i, (m, w)) in chain.iter().zip(config.chain_dims.windows(2)).enumerate() {
            expect(m.shape() == (w[0], w[1]), &format!("W{} shape", i + 1))?;
        }
        expect(b.shape() == (config.rank_out(), config.d_out), "B shape")?;
        Ok(AdaptedLinear {
            config,
            w0,
            a,
            chain,
            b,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn chain(&self) -> &[Matrix] {
        &self.chain
    }

    /// Trainable parameter group names in update order: `A`, `W1` … `Wn`, `B`.
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["A".to_string()];
        names.extend((1..=self.chain.len()).map(|i| format!("W{i}")));
        names.push("B".to_string());
        names
    }

    /// Trainable parameters in the same order as `param_names`.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut ps = vec![&self.a];
        ps.extend(self.chain.iter());
        ps.push(&self.b);
        ps
    }

    /// Mutable access for optimizers; `w0` is deliberately not included.
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut ps = vec![&mut self.a];
        ps.extend(self.chain.iter_mut());
        ps.push(&mut self.b);
        ps
    }

    /// Overwrite every trainable matrix with uniform draws from
    /// `[lo, hi)`. Used by gradient-check harnesses, which need a generic
    /// point in parameter space rather than the zero-`B` training init.
    pub fn randomize_uniform(&mut self, lo: f64, hi: f64, rng: &mut RngState) {
        for p in self.params_mut() {
            let (r, c) = p.shape();
            *p = Matrix::uniform(r, c, lo, hi, rng);
        }
    }

    /// The chain product `W1 · … · Wn` (`r0 × rk`); identity for lora.
    pub fn chain_product(&self) -> Matrix {
        let refs: Vec<&Matrix> = self.chain.iter().collect();
        product(&refs, self.config.rank_in()).expect("chain shapes are validated")
    }

    /// Materialized update `scaling · A · W1 … Wn · B` (`d_in × d_out`).
    pub fn delta_weight(&self) -> Matrix {
        let mut acc = self.a.clone();
        for w in &self.chain {
            acc = acc.matmul(w).expect("chain shapes are validated");
        }
        acc = acc.matmul(&self.b).expect("B shape is validated");
        acc.scale(self.config.scaling)
    }

    /// `x · w0 + scaling · (((x·A)·W1)·…)·B` for a batch `x`
    /// (`m × d_in`), computed along the low-rank path without
    /// materializing the update matrix.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.d_in {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: x.shape(),
                rhs: self.w0.shape(),
            });
        }
        let base = x.matmul(&self.w0)?;
        let mut h = x.matmul(&self.a)?;
        for w in &self.chain {
            h = h.matmul(w)?;
        }
        let update = h.matmul(&self.b)?.scale(self.config.scaling);
        base.add(&update)
    }

    /// Fold the adapter into the base weight: `w0 + delta_weight`. The
    /// merged matrix runs as a plain linear layer with no adapter cost.
    pub fn merge(&self) -> Matrix {
        self.w0
            .add(&self.delta_weight())
            .expect("delta_weight shape matches w0")
    }

    /// Collapse the chain into `B`: returns a lora adapter with
    /// `a' = a`, `b' = W1·…·Wn·b`, identical `w0` and scaling. The update
    /// matrix is unchanged up to floating-point association; only the
    /// trainable parametrization differs. On a lora adapter this is a
    /// plain clone.
    pub fn collapse_to_lora(&self) -> AdaptedLinear {
        if self.config.method == Method::Lora {
            return self.clone();
        }
        let b = self
            .chain_product()
            .matmul(&self.b)
            .expect("chain shapes are validated");
        let mut config = self.config.clone();
        config.method = Method::Lora;
        config.chain_dims = vec![self.config.rank_in()];
        AdaptedLinear {
            config,
            w0: self.w0.clone(),
            a: self.a.clone(),
            chain: Vec::new(),
            b,
        }
    }
}
