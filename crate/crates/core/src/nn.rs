//! Two-layer ReLU regression network with explicit reverse-mode gradients and AdamW.
//!
//! `h = relu(x·W1 + b1)`, `ŷ = h·W2 + b2`. The regularizers see either the
//! pre-activation `x·W1 + b1` (default) or the post-activation `h` as the
//! feature batch `Z`, selected by [`FeatureTap`].

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTap {
    PostActivation,
    #[default]
    PreActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Activations of one forward pass, kept for [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub yhat: Array2<f64>,
    pub tap: FeatureTap,
}

impl ForwardTrace {
    /// The feature batch handed to the regularizers.
    pub fn features(&self) -> &Array2<f64> {
        match self.tap {
            FeatureTap::PostActivation => &self.hidden,
            FeatureTap::PreActivation => &self.pre,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn scaled(&self, a: f64) -> Gradients {
        Gradients { w1: &self.w1 * a, b1: &self.b1 * a, w2: &self.w2 * a, b2: &self.b2 * a }
    }

    pub fn max_abs(&self) -> f64 {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl Mlp {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: Array2::zeros((d_in, hidden)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((hidden, d_out)),
            b2: Array1::zeros(d_out),
        }
    }

    /// Fan-in scaled uniform initialisation: every weight and bias of a layer
    /// with fan-in `k` is drawn from `U(-1/√k, 1/√k)`.
    pub fn init<R: Rng + ?Sized>(d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        if d_in == 0 || hidden == 0 || d_out == 0 {
            return Err(Error::invalid(format!("layer sizes must be positive, got {d_in}-{hidden}-{d_out}")));
        }
        let mut uniform = |shape: usize, fan_in: usize| -> Vec<f64> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..shape).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let w1 = Array2::from_shape_vec((d_in, hidden), uniform(d_in * hidden, d_in)).expect("shape");
        let b1 = Array1::from(uniform(hidden, d_in));
        let w2 = Array2::from_shape_vec((hidden, d_out), uniform(hidden * d_out, hidden)).expect("shape");
        let b2 = Array1::from(uniform(d_out, hidden));
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.b1.len() == self.w1.ncols() && self.w2.nrows() == self.w1.ncols() && self.b2.len() == self.w2.ncols();
        if ok { Ok(()) } else { Err(Error::invalid("inconsistent parameter shapes")) }
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, tap: FeatureTap) -> Result<ForwardTrace> {
        self.check_shapes()?;
        if x.ncols() != self.input_dim() {
            return Err(Error::invalid(format!("input has {} columns, model expects {}", x.ncols(), self.input_dim())));
        }
        let mut pre = x.dot(&self.w1);
        pre += &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let mut yhat = hidden.dot(&self.w2);
        yhat += &self.b2;
        Ok(ForwardTrace { pre, hidden, yhat, tap })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.forward(x, FeatureTap::PostActivation)?.yhat)
    }

    /// Parameter gradients of a loss whose gradients w.r.t. `ŷ` and the
    /// feature batch are `grad_yhat` and `grad_z`.
    pub fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        trace: &ForwardTrace,
        grad_yhat: ArrayView2<'_, f64>,
        grad_z: Option<ArrayView2<'_, f64>>,
    ) -> Result<Gradients> {
        let n = x.nrows();
        if grad_yhat.dim() != trace.yhat.dim() || trace.pre.nrows() != n {
            return Err(Error::invalid("gradient shapes do not match the forward trace"));
        }
        if let Some(gz) = grad_z {
            if gz.dim() != trace.pre.dim() {
                return Err(Error::invalid("feature gradient shape does not match the hidden layer"));
            }
        }

        let w2 = trace.hidden.t().dot(&grad_yhat);
        let b2 = grad_yhat.sum_axis(Axis(0));

        let mut grad_hidden = grad_yhat.dot(&self.w2.t());
        if let (Some(gz), FeatureTap::PostActivation) = (grad_z, trace.tap) {
            grad_hidden += &gz;
        }
        Zip::from(&mut grad_hidden).and(&trace.pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        if let (Some(gz), FeatureTap::PreActivation) = (grad_z, trace.tap) {
            grad_hidden += &gz;
        }

        let w1 = x.t().dot(&grad_hidden);
        let b1 = grad_hidden.sum_axis(Axis(0));
        Ok(Gradients { w1, b1, w2, b2 })
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// Writes the binary checkpoint: magic `PHREGMLP`, a little-endian `u32`
    /// version, three `u64` sizes `(d_in, hidden, d_out)`, then `W1`, `b1`,
    /// `W2`, `b2` as row-major little-endian `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        for size in [self.input_dim(), self.hidden_dim(), self.output_dim()] {
            w.write_all(&(size as u64).to_le_bytes())?;
        }
        for v in self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::invalid("not a phreg model checkpoint"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)?;
            *d = u64::from_le_bytes(buf) as usize;
        }
        let [d_in, hidden, d_out] = dims;
        let mut model = Mlp::zeros(d_in, hidden, d_out);
        for tensor in model.tensors_mut() {
            for v in tensor.iter_mut() {
                let mut buf = [0u8; 8];
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"PHREGMLP";
const CHECKPOINT_VERSION: u32 = 1;

/// Mean over samples of the squared L2 error, and its gradient `2(ŷ − y)/N`.
pub fn mse_loss(yhat: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if yhat.dim() != y.dim() || yhat.nrows() == 0 {
        return Err(Error::invalid(format!("prediction shape {:?} vs target shape {:?}", yhat.dim(), y.dim())));
    }
    let n = yhat.nrows() as f64;
    let diff = &yhat - &y;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((value, diff * (2.0 / n)))
}

/// Mean squared error only.
pub fn mse(yhat: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<f64> {
    if yhat.dim() != y.dim() || yhat.nrows() == 0 {
        return Err(Error::invalid(format!("prediction shape {:?} vs target shape {:?}", yhat.dim(), y.dim())));
    }
    Ok(Zip::from(&yhat).and(&y).fold(0.0, |acc, a, b| acc + (a - b) * (a - b)) / yhat.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay, applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: Mlp,
    second: Mlp,
    step: u64,
}

impl AdamW {
    pub fn new(model: &Mlp, config: AdamWConfig) -> Self {
        let zeros = Mlp::zeros(model.input_dim(), model.hidden_dim(), model.output_dim());
        Self { config, first: zeros.clone(), second: zeros, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &Gradients) -> Result<()> {
        if model.w1.dim() != self.first.w1.dim() || model.w2.dim() != self.first.w2.dim() || grads.w1.dim() != model.w1.dim()
        {
            return Err(Error::invalid("optimizer state does not match the model"));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let decay = 1.0 - c.lr * c.weight_decay;

        let grad_slices: [&[f64]; 4] = [
            grads.w1.as_slice().expect("standard layout"),
            grads.b1.as_slice().expect("standard layout"),
            grads.w2.as_slice().expect("standard layout"),
            grads.b2.as_slice().expect("standard layout"),
        ];
        let params = model.tensors_mut();
        let firsts = self.first.tensors_mut();
        let seconds = self.second.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad_slices).zip(firsts).zip(seconds) {
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                p[k] = p[k] * decay - c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
