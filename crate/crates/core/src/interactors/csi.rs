use rand::Rng;

use super::block::{BaseBlock, BlockSettings};
use super::cti::{CtiBlock, CtiOutput, DifferenceMode};
use crate::error::{Error, Result};
use crate::nn::{Buffer, Conv2d, Init, Ledger, Mode, Module, Param, SeparableConv};
use crate::tensor::{bilinear_resize, concat, ConvSpec, Tensor};

/// Number of halvings between the input image and the deepest CSI level.
pub const BOTTOM_DOWNSAMPLE_LOG2: usize = 5;

/// Internal downsamplings performed by stage `s` (1-based).
pub fn stage_depth(stage: usize) -> usize {
    BOTTOM_DOWNSAMPLE_LOG2 - stage
}

/// Channels at each level of stage `s`: the stage's own width followed by
/// the later widths, holding the last one once the list runs out.
pub fn level_channels(stage_channels: &[usize], stage: usize) -> Vec<usize> {
    let last = *stage_channels.last().expect("non-empty channel list");
    stage_channels[stage - 1..]
        .iter()
        .copied()
        .chain(std::iter::repeat(last))
        .take(stage_depth(stage) + 1)
        .collect()
}

/// One U-shaped cross-spatial interactor with a CTI at its bottom.
#[derive(Debug, Clone)]
pub struct CsiStage {
    pub index: usize,
    pub channels: Vec<usize>,
    pub encoder: Vec<Vec<BaseBlock>>,
    pub down: Vec<SeparableConv>,
    pub cti: CtiBlock,
    pub fuse: Vec<Conv2d>,
    pub decoder: Vec<Vec<BaseBlock>>,
}

/// Outputs of a stage together with its bottom-level internals.
#[derive(Debug, Clone)]
pub struct StageOutput {
    pub g1: Tensor,
    pub g2: Tensor,
    /// Deepest encoder features of each branch before the CTI.
    pub bottom: (Tensor, Tensor),
    pub cti: CtiOutput,
}

impl CsiStage {
    pub fn new<R: Rng>(
        index: usize,
        stage_channels: &[usize],
        blocks: usize,
        settings: &BlockSettings,
        difference: DifferenceMode,
        init: &mut Init<'_, R>,
    ) -> Result<Self> {
        if index == 0 || index > stage_channels.len() || index >= BOTTOM_DOWNSAMPLE_LOG2 {
            return Err(Error::config(format!("no CSI stage {index}")));
        }
        let ch = level_channels(stage_channels, index);
        let d = ch.len() - 1;
        let name = format!("stage{index}");
        let make_blocks = |prefix: &str, c: usize, init: &mut Init<'_, R>| -> Result<Vec<BaseBlock>> {
            (0..blocks)
                .map(|b| BaseBlock::new(&format!("{prefix}.block{b}"), c, settings, init))
                .collect()
        };
        let mut encoder = Vec::with_capacity(d);
        let mut down = Vec::with_capacity(d);
        for l in 0..d {
            encoder.push(make_blocks(&format!("{name}.enc{l}"), ch[l], init)?);
            down.push(SeparableConv::new(&format!("{name}.down{l}"), ch[l], ch[l + 1], 3, 2, init)?);
        }
        let cti = CtiBlock::new(&format!("{name}.cti"), ch[d], difference, init)?;
        let mut fuse = Vec::with_capacity(d);
        let mut decoder = Vec::with_capacity(d);
        for l in 0..d {
            fuse.push(Conv2d::new(
                &format!("{name}.fuse{l}"),
                ch[l + 1] + ch[l],
                ch[l],
                ConvSpec::pointwise(),
                init,
            )?);
            decoder.push(make_blocks(&format!("{name}.dec{l}"), ch[l], init)?);
        }
        Ok(CsiStage { index, channels: ch, encoder, down, cti, fuse, decoder })
    }

    pub fn depth(&self) -> usize {
        self.channels.len() - 1
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4("csi stage")?;
        if c != self.channels[0] {
            return Err(Error::config(format!(
                "stage {} expects {} channels, got {c}",
                self.index, self.channels[0]
            )));
        }
        let k = 1usize << self.depth();
        if h % k != 0 || w % k != 0 {
            return Err(Error::config(format!(
                "stage {} input {h}x{w} is not divisible by {k}",
                self.index
            )));
        }
        Ok(())
    }

    fn encode(&self, x: &Tensor, mode: Mode) -> Result<(Vec<Tensor>, Tensor)> {
        let mut skips = Vec::with_capacity(self.depth());
        let mut cur = x.clone();
        for (l, (blocks, down)) in self.encoder.iter().zip(&self.down).enumerate() {
            for b in blocks {
                cur = b.forward(&cur, mode)?;
            }
            let (_, _, h, w) = cur.dims4("csi encoder")?;
            skips.push(cur.clone());
            cur = down.forward(&cur)?;
            debug_assert_eq!(cur.shape()[1..], [self.channels[l + 1], h / 2, w / 2]);
        }
        Ok((skips, cur))
    }

    fn decode(&self, bottom: &Tensor, skips: &[Tensor], mode: Mode) -> Result<Tensor> {
        let mut cur = bottom.clone();
        for l in (0..self.depth()).rev() {
            let (_, _, h, w) = skips[l].dims4("csi decoder")?;
            let up = bilinear_resize(&cur, h, w)?;
            cur = self.fuse[l].forward(&concat(&[&up, &skips[l]], 1)?)?;
            for b in &self.decoder[l] {
                cur = b.forward(&cur, mode)?;
            }
        }
        Ok(cur)
    }

    pub fn forward(&self, f1: &Tensor, f2: &Tensor, mode: Mode) -> Result<StageOutput> {
        if f1.shape() != f2.shape() {
            return Err(Error::dims("csi stage", f1.shape(), f2.shape()));
        }
        self.check_input(f1)?;
        let (skips1, b1) = self.encode(f1, mode)?;
        let (skips2, b2) = self.encode(f2, mode)?;
        let cti = self.cti.forward(&b1, &b2)?;
        let g1 = self.decode(&cti.r1, &skips1, mode)?;
        let g2 = self.decode(&cti.r2, &skips2, mode)?;
        Ok(StageOutput { g1, g2, bottom: (b1, b2), cti })
    }

    /// Ledger rows for both temporal branches at native size `h × w`.
    pub fn ledger(&self, h: usize, w: usize, ledger: &mut Ledger) {
        let d = self.depth();
        for l in 0..d {
            let (hl, wl) = (h >> l, w >> l);
            for b in &self.encoder[l] {
                b.ledger(hl, wl, 2, ledger);
            }
            ledger.conv(&self.down[l].depthwise, hl, wl, 2);
            ledger.conv(&self.down[l].pointwise, hl / 2, wl / 2, 2);
        }
        self.cti.ledger(h >> d, w >> d, ledger);
        for l in (0..d).rev() {
            let (hl, wl) = (h >> l, w >> l);
            ledger.conv(&self.fuse[l], hl, wl, 2);
            for b in &self.decoder[l] {
                b.ledger(hl, wl, 2, ledger);
            }
        }
    }
}

impl Module for CsiStage {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        for l in 0..self.depth() {
            self.encoder[l].iter().for_each(|b| b.visit_params(f));
            self.down[l].visit_params(f);
        }
        self.cti.visit_params(f);
        for l in (0..self.depth()).rev() {
            self.fuse[l].visit_params(f);
            self.decoder[l].iter().for_each(|b| b.visit_params(f));
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for l in 0..self.depth() {
            self.encoder[l].iter_mut().for_each(|b| b.visit_params_mut(f));
            self.down[l].visit_params_mut(f);
        }
        self.cti.visit_params_mut(f);
        for l in (0..self.depth()).rev() {
            self.fuse[l].visit_params_mut(f);
            self.decoder[l].iter_mut().for_each(|b| b.visit_params_mut(f));
        }
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        for l in 0..self.depth() {
            self.encoder[l].iter().for_each(|b| b.visit_buffers(f));
        }
        for l in (0..self.depth()).rev() {
            self.decoder[l].iter().for_each(|b| b.visit_buffers(f));
        }
    }
}
