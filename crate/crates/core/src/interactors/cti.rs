use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Ledger, Module, Param, SeparableConv};
use crate::tensor::{concat, mul, sigmoid, sub, Tensor};

/// Which difference each branch's gate sees next to its own features.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceMode {
    /// Branch `t` sees `F_t − F_other`; swapping the inputs swaps the outputs exactly.
    #[default]
    Relative,
    /// Both branches see `F1 − F2`.
    Signed,
}

/// Cross-temporal gating: each branch is rescaled by a sigmoid map computed
/// from itself and the bi-temporal difference.
#[derive(Debug, Clone)]
pub struct CtiBlock {
    pub channels: usize,
    /// Shared depthwise 3×3 on `2C` then pointwise `2C → C`.
    pub phi: SeparableConv,
    pub difference: DifferenceMode,
}

/// Every intermediate of one CTI pass.
#[derive(Debug, Clone)]
pub struct CtiOutput {
    pub r1: Tensor,
    pub r2: Tensor,
    /// Coarse change representation `F1 − F2`.
    pub rc: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

impl CtiBlock {
    pub fn new<R: Rng>(name: &str, channels: usize, difference: DifferenceMode, init: &mut Init<'_, R>) -> Result<Self> {
        Ok(CtiBlock {
            channels,
            phi: SeparableConv::new(&format!("{name}.phi"), 2 * channels, channels, 3, 1, init)?,
            difference,
        })
    }

    fn gate(&self, f: &Tensor, d: &Tensor) -> Result<Tensor> {
        Ok(sigmoid(&self.phi.forward(&concat(&[f, d], 1)?)?))
    }

    pub fn forward(&self, f1: &Tensor, f2: &Tensor) -> Result<CtiOutput> {
        if f1.shape() != f2.shape() {
            return Err(Error::dims("cti", f1.shape(), f2.shape()));
        }
        let (_, c, _, _) = f1.dims4("cti")?;
        if c != self.channels {
            return Err(Error::dims("cti channels", &[self.channels], &[c]));
        }
        let rc = sub(f1, f2)?;
        let w1 = self.gate(f1, &rc)?;
        let w2 = match self.difference {
            DifferenceMode::Relative => self.gate(f2, &sub(f2, f1)?)?,
            DifferenceMode::Signed => self.gate(f2, &rc)?,
        };
        Ok(CtiOutput { r1: mul(&w1, f1)?, r2: mul(&w2, f2)?, rc, w1, w2 })
    }

    pub fn ledger(&self, h: usize, w: usize, ledger: &mut Ledger) {
        ledger.conv(&self.phi.depthwise, h, w, 2);
        ledger.conv(&self.phi.pointwise, h, w, 2);
    }

    pub fn zero(&mut self) {
        self.phi.depthwise.zero();
        self.phi.pointwise.zero();
    }
}

impl Module for CtiBlock {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.phi.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.phi.visit_params_mut(f);
    }
}
