use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dct::{dct2, dct_basis};
use super::frequency::{select_frequencies, FrequencySpec, FrequencyStrategy};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Init, Ledger, Module, Param};
use crate::tensor::{
    bilinear_resize, conv2d, index_select, mul_channel, plane_mean, sigmoid, ConvSpec, Tensor,
};

/// Settings of one multi-frequency mixer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub channels: usize,
    pub heads: usize,
    pub p: usize,
    /// Width multiplier of the first projection (hidden width `expansion · C`).
    pub expansion: usize,
    /// Frequencies used by the heads. Under dynamic assignment this is only
    /// the strategy record; the actual indices are chosen on every pass.
    pub spec: FrequencySpec,
}

impl MixerConfig {
    pub fn new(
        channels: usize,
        heads: usize,
        p: usize,
        expansion: usize,
        strategy: FrequencyStrategy,
        seed: Option<u64>,
    ) -> Result<Self> {
        let spec = match strategy {
            FrequencyStrategy::DynamicAssignment => {
                if heads == 0 || heads > p * p {
                    return Err(Error::config(format!(
                        "cannot select {heads} frequencies from a {p}x{p} grid"
                    )));
                }
                FrequencySpec { strategy, p, indices: Vec::new(), seed }
            }
            _ => select_frequencies(strategy, heads, p, seed, None, None)?,
        };
        let cfg = MixerConfig { channels, heads, p, expansion, spec };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hidden(&self) -> usize {
        self.channels * self.expansion
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.expansion == 0 || self.p == 0 {
            return Err(Error::config("mixer needs positive channels, expansion and p"));
        }
        if self.heads == 0 || self.hidden() % self.heads != 0 {
            return Err(Error::config(format!(
                "{} mixer channels cannot be split into {} heads",
                self.hidden(),
                self.heads
            )));
        }
        if self.spec.strategy != FrequencyStrategy::DynamicAssignment {
            if self.spec.m() != self.heads || self.spec.p != self.p {
                return Err(Error::config("frequency spec does not match mixer heads"));
            }
            self.spec.validate()?;
        }
        Ok(())
    }

    /// Learnable scalars: two biased 1×1 projections, plus the 3×3 scorer
    /// under dynamic assignment.
    pub fn param_count(&self) -> usize {
        let (c, e) = (self.channels, self.hidden());
        let scorer = if self.spec.strategy == FrequencyStrategy::DynamicAssignment { 10 } else { 0 };
        c * e + e + e * c + c + scorer
    }
}

/// Depthwise weight `[hidden, 1, p, p]`: head `i` owns a contiguous block
/// of channels filtered by the basis at `indices[i]`.
pub fn head_kernels(hidden: usize, p: usize, indices: &[(usize, usize)]) -> Result<Tensor> {
    let per = hidden / indices.len();
    let mut w = Vec::with_capacity(hidden * p * p);
    for &(u, v) in indices {
        let k = dct_basis(p, u, v)?;
        for _ in 0..per {
            w.extend_from_slice(&k);
        }
    }
    Tensor::new(w, &[hidden, 1, p, p])
}

/// Parameter-free spectral token mixer between two learnable projections.
#[derive(Debug)]
pub struct FrequencyMixer {
    pub cfg: MixerConfig,
    pub proj_in: Conv2d,
    pub proj_out: Conv2d,
    /// Importance scorer for dynamic assignment.
    pub scorer: Option<Conv2d>,
    fixed_kernels: Option<Tensor>,
    last_selection: Mutex<Vec<(usize, usize)>>,
}

impl Clone for FrequencyMixer {
    fn clone(&self) -> Self {
        FrequencyMixer {
            cfg: self.cfg.clone(),
            proj_in: self.proj_in.clone(),
            proj_out: self.proj_out.clone(),
            scorer: self.scorer.clone(),
            fixed_kernels: self.fixed_kernels.clone(),
            last_selection: Mutex::new(self.last_selection()),
        }
    }
}

impl FrequencyMixer {
    pub fn new<R: Rng>(name: &str, cfg: MixerConfig, init: &mut Init<'_, R>) -> Result<Self> {
        cfg.validate()?;
        let (c, e) = (cfg.channels, cfg.hidden());
        let proj_in = Conv2d::new(&format!("{name}.proj_in"), c, e, ConvSpec::pointwise(), init)?;
        let proj_out = Conv2d::new(&format!("{name}.proj_out"), e, c, ConvSpec::pointwise(), init)?;
        let dynamic = cfg.spec.strategy == FrequencyStrategy::DynamicAssignment;
        let scorer = dynamic
            .then(|| Conv2d::new(&format!("{name}.scorer"), 1, 1, ConvSpec::new(3, 1, 1), init))
            .transpose()?;
        let fixed_kernels = (!dynamic)
            .then(|| head_kernels(e, cfg.p, &cfg.spec.indices))
            .transpose()?;
        let last = cfg.spec.indices.clone();
        Ok(FrequencyMixer {
            cfg,
            proj_in,
            proj_out,
            scorer,
            fixed_kernels,
            last_selection: Mutex::new(last),
        })
    }

    fn dct_spec(&self) -> ConvSpec {
        let p = self.cfg.p;
        ConvSpec::new(p, 1, p / 2).with_groups(self.cfg.hidden()).without_bias()
    }

    /// Frequencies used by the most recent forward pass.
    pub fn last_selection(&self) -> Vec<(usize, usize)> {
        self.last_selection.lock().expect("selection lock").clone()
    }

    /// `p × p` importance map (after sigmoid) for a projected feature map.
    pub fn importance(&self, projected: &Tensor) -> Result<Tensor> {
        let scorer = self
            .scorer
            .as_ref()
            .ok_or_else(|| Error::usage("importance map requested from a fixed-frequency mixer"))?;
        let p = self.cfg.p;
        let grid = bilinear_resize(&plane_mean(projected)?, p, p)?;
        let summary = dct2(&grid.reshape(&[p, p])?)?.reshape(&[1, 1, p, p])?;
        Ok(sigmoid(&scorer.forward(&summary)?))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = x.dims4("mixer")?;
        if c != self.cfg.channels {
            return Err(Error::config(format!(
                "mixer built for {} channels received {c}",
                self.cfg.channels
            )));
        }
        let a = self.proj_in.forward(x)?;
        let mixed = match &self.fixed_kernels {
            Some(k) => conv2d(&a, k, None, self.dct_spec())?,
            None => {
                let imp = self.importance(&a)?;
                let (p, m, e) = (self.cfg.p, self.cfg.heads, self.cfg.hidden());
                let spec = select_frequencies(
                    FrequencyStrategy::DynamicAssignment,
                    m,
                    p,
                    None,
                    Some(imp.data()),
                    None,
                )?;
                let kernels = head_kernels(e, p, &spec.indices)?;
                let per = e / m;
                let gather: Vec<usize> = spec
                    .indices
                    .iter()
                    .flat_map(|&(u, v)| std::iter::repeat(u * p + v).take(per))
                    .collect();
                let weights = index_select(&imp, &gather)?;
                *self.last_selection.lock().expect("selection lock") = spec.indices;
                mul_channel(&conv2d(&a, &kernels, None, self.dct_spec())?, &weights)?
            }
        };
        self.proj_out.forward(&mixed)
    }

    /// Ledger rows for one application at `h × w`, repeated `applications` times.
    pub fn ledger(&self, name: &str, h: usize, w: usize, applications: u64, ledger: &mut Ledger) {
        ledger.conv(&self.proj_in, h, w, applications);
        let e = self.cfg.hidden();
        ledger.push(format!("{name}.dct"), 0, self.dct_spec().macs(e, e, h, w), applications);
        if let Some(s) = &self.scorer {
            ledger.conv(s, self.cfg.p, self.cfg.p, applications);
        }
        ledger.conv(&self.proj_out, h, w, applications);
    }
}

impl Module for FrequencyMixer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.proj_in.visit_params(f);
        if let Some(s) = &self.scorer {
            s.visit_params(f);
        }
        self.proj_out.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.proj_in.visit_params_mut(f);
        if let Some(s) = &mut self.scorer {
            s.visit_params_mut(f);
        }
        self.proj_out.visit_params_mut(f);
    }
}
