//! Parameter containers and the small set of layers the network is built from.

use std::sync::Mutex;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{batch_norm, conv2d, ConvSpec, Tensor};

/// Forward-pass behaviour of stateful layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running averages updated.
    Train,
    /// Running statistics, nothing mutated.
    Eval,
}

/// Learnable tensor with a stable hierarchical name.
#[derive(Debug, Clone)]
pub struct Param {
    name: String,
    value: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Param {
            name: name.into(),
            value: Tensor::parameter(data, shape)?,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Replace the values, dropping any accumulated gradient.
    pub fn set_data(&mut self, data: Vec<f64>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::dims("set_data", self.shape(), &[data.len()]));
        }
        self.value = Tensor::parameter(data, self.value.shape())?;
        Ok(())
    }

    pub fn set_element(&mut self, i: usize, v: f64) {
        let mut data = self.value.data().to_vec();
        data[i] = v;
        self.value = Tensor::parameter(data, self.value.shape()).expect("same shape");
    }

    pub fn nudge(&mut self, i: usize, delta: f64) {
        let v = self.value.data()[i] + delta;
        self.set_element(i, v);
    }
}

/// Non-learnable state saved with the weights (running statistics).
#[derive(Debug)]
pub struct Buffer {
    name: String,
    data: Mutex<Vec<f64>>,
}

impl Buffer {
    pub fn new(name: impl Into<String>, data: Vec<f64>) -> Self {
        Buffer { name: name.into(), data: Mutex::new(data) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn get(&self) -> Vec<f64> {
        self.data.lock().expect("buffer lock").clone()
    }

    pub fn set(&self, data: Vec<f64>) -> Result<()> {
        let mut guard = self.data.lock().expect("buffer lock");
        if guard.len() != data.len() {
            return Err(Error::dims("buffer set", &[guard.len()], &[data.len()]));
        }
        *guard = data;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.data.lock().expect("buffer lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Clone for Buffer {
    fn clone(&self) -> Self {
        Buffer::new(self.name.clone(), self.get())
    }
}

/// Anything that owns parameters.
pub trait Module {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param));
    fn visit_buffers<'a>(&'a self, _f: &mut dyn FnMut(&'a Buffer)) {}

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.numel());
        n
    }

    fn zero_grad(&self) {
        self.visit_params(&mut |p| p.value().zero_grad());
    }
}

/// Deterministic parameter initialiser.
pub struct Init<'r, R: Rng> {
    pub rng: &'r mut R,
    pub std: f64,
}

impl<R: Rng> Init<'_, R> {
    /// Normal(0, std) truncated to ±2 std by rejection.
    pub fn trunc_normal(&mut self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| loop {
                let z: f64 = self.rng.sample(StandardNormal);
                if z.abs() <= 2.0 {
                    break z * self.std;
                }
            })
            .collect()
    }
}

/// Convolution layer owning its weight and optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub spec: ConvSpec,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        spec: ConvSpec,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        spec.validate(in_channels, out_channels)?;
        let shape = spec.weight_shape(in_channels, out_channels);
        let weight = Param::new(
            format!("{name}.weight"),
            init.trunc_normal(shape.iter().product()),
            &shape,
        )?;
        let bias = spec
            .has_bias
            .then(|| Param::new(format!("{name}.bias"), vec![0.0; out_channels], &[out_channels]))
            .transpose()?;
        Ok(Conv2d { weight, bias, spec, in_channels, out_channels })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, self.weight.value(), self.bias.as_ref().map(Param::value), self.spec)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.spec.macs(self.in_channels, self.out_channels, h, w)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        self.spec.output_hw(h, w).unwrap_or((0, 0))
    }

    /// Set every weight and bias to zero.
    pub fn zero(&mut self) {
        self.visit_params_mut(&mut |p| {
            let n = p.numel();
            p.set_data(vec![0.0; n]).expect("same length");
        });
    }
}

impl Module for Conv2d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.weight);
        if let Some(b) = &self.bias {
            f(b);
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        if let Some(b) = &mut self.bias {
            f(b);
        }
    }
}

/// Depthwise 3×3 followed by pointwise 1×1, both biased.
#[derive(Debug, Clone)]
pub struct SeparableConv {
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl SeparableConv {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        let dw = ConvSpec::new(kernel, stride, kernel / 2).with_groups(in_channels);
        Ok(SeparableConv {
            depthwise: Conv2d::new(&format!("{name}.dw"), in_channels, in_channels, dw, init)?,
            pointwise: Conv2d::new(&format!("{name}.pw"), in_channels, out_channels, ConvSpec::pointwise(), init)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.pointwise.forward(&self.depthwise.forward(x)?)
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (ho, wo) = self.depthwise.output_hw(h, w);
        self.depthwise.macs(h, w) + self.pointwise.macs(ho, wo)
    }
}

impl Module for SeparableConv {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.depthwise.visit_params(f);
        self.pointwise.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.depthwise.visit_params_mut(f);
        self.pointwise.visit_params_mut(f);
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation with learnable scale and shift.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param::new(format!("{name}.gamma"), vec![1.0; channels], &[channels])?,
            beta: Param::new(format!("{name}.beta"), vec![0.0; channels], &[channels])?,
            running_mean: Buffer::new(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: Buffer::new(format!("{name}.running_var"), vec![1.0; channels]),
            channels,
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let (y, stats) = batch_norm(x, self.gamma.value(), self.beta.value(), None, BN_EPS)?;
                let stats = stats.expect("training statistics");
                let blend = |old: Vec<f64>, new: &[f64]| -> Vec<f64> {
                    old.iter()
                        .zip(new)
                        .map(|(o, n)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * n)
                        .collect()
                };
                self.running_mean.set(blend(self.running_mean.get(), &stats.mean))?;
                self.running_var.set(blend(self.running_var.get(), &stats.var_unbiased))?;
                Ok(y)
            }
            Mode::Eval => {
                let (m, v) = (self.running_mean.get(), self.running_var.get());
                Ok(batch_norm(x, self.gamma.value(), self.beta.value(), Some((&m, &v)), BN_EPS)?.0)
            }
        }
    }
}

impl Module for BatchNorm2d {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        f(&self.running_mean);
        f(&self.running_var);
    }
}

/// One entry of a parameter/FLOP ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRow {
    pub name: String,
    pub params: u64,
    /// Floating-point operations, two per multiply-accumulate.
    pub flops: u64,
}

/// Per-layer accounting of learnable scalars and convolution FLOPs.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    pub rows: Vec<LedgerRow>,
}

impl Ledger {
    /// Record a layer applied `applications` times (both branches of a
    /// weight-shared pair count twice toward FLOPs, once toward params).
    pub fn push(&mut self, name: impl Into<String>, params: usize, macs: u64, applications: u64) {
        self.rows.push(LedgerRow {
            name: name.into(),
            params: params as u64,
            flops: 2 * macs * applications,
        });
    }

    pub fn conv(&mut self, conv: &Conv2d, h: usize, w: usize, applications: u64) {
        let name = conv.weight.name().trim_end_matches(".weight").to_string();
        self.push(name, conv.num_params(), conv.macs(h, w), applications);
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,params,flops\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.name, r.params, r.flops));
        }
        out
    }
}
