use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::interactors::{CsiStage, StageOutput};
use crate::nn::{BatchNorm2d, Buffer, Conv2d, Init, Ledger, Mode, Module, Param};
use crate::tensor::{bilinear_resize, concat, gelu, ConvSpec, Tensor};

/// Stride-2 3×3 convolution followed by batch norm.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub conv: Conv2d,
    pub norm: BatchNorm2d,
}

impl PatchEmbed {
    pub fn new<R: rand::Rng>(name: &str, in_ch: usize, out_ch: usize, init: &mut Init<'_, R>) -> Result<Self> {
        Ok(PatchEmbed {
            conv: Conv2d::new(&format!("{name}.conv"), in_ch, out_ch, ConvSpec::new(3, 2, 1), init)?,
            norm: BatchNorm2d::new(&format!("{name}.norm"), out_ch)?,
        })
    }

    pub fn forward(&self, image: &Tensor, mode: Mode) -> Result<Tensor> {
        let (_, _, h, w) = image.dims4("patch_embed")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::config(format!("patch embedding needs even sides, got {h}x{w}")));
        }
        self.norm.forward(&self.conv.forward(image)?, mode)
    }
}

impl Module for PatchEmbed {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.conv.visit_params(f);
        self.norm.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.conv.visit_params_mut(f);
        self.norm.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.norm.visit_buffers(f);
    }
}

/// Per-stage 1×1 projections to a common width with a GELU, then a 1×1 classifier.
#[derive(Debug, Clone)]
pub struct MlpDecoder {
    pub stage_proj: Vec<Conv2d>,
    pub classifier: Conv2d,
}

impl MlpDecoder {
    pub fn new<R: rand::Rng>(stage_channels: &[usize], width: usize, classes: usize, init: &mut Init<'_, R>) -> Result<Self> {
        let stage_proj = stage_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| Conv2d::new(&format!("decoder.stage{}", i + 1), 2 * c, width, ConvSpec::pointwise(), init))
            .collect::<Result<_>>()?;
        let classifier = Conv2d::new(
            "decoder.classifier",
            width * stage_channels.len(),
            classes,
            ConvSpec::pointwise(),
            init,
        )?;
        Ok(MlpDecoder { stage_proj, classifier })
    }

    /// Logits at `out_h × out_w` from the bi-temporal features of every stage.
    pub fn forward(&self, features: &[(Tensor, Tensor)], out_h: usize, out_w: usize) -> Result<Tensor> {
        if features.len() != self.stage_proj.len() {
            return Err(Error::usage(format!(
                "decoder expects {} stage feature pairs, got {}",
                self.stage_proj.len(),
                features.len()
            )));
        }
        let (h2, w2) = (out_h / 2, out_w / 2);
        let maps = features
            .iter()
            .zip(&self.stage_proj)
            .map(|((g1, g2), proj)| bilinear_resize(&gelu(&proj.forward(&concat(&[g1, g2], 1)?)?), h2, w2))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = maps.iter().collect();
        let logits = self.classifier.forward(&concat(&refs, 1)?)?;
        bilinear_resize(&logits, out_h, out_w)
    }
}

impl Module for MlpDecoder {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.stage_proj.iter().for_each(|c| c.visit_params(f));
        self.classifier.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.stage_proj.iter_mut().for_each(|c| c.visit_params_mut(f));
        self.classifier.visit_params_mut(f);
    }
}

/// Full change-detection network.
#[derive(Debug, Clone)]
pub struct SteinFormer {
    pub cfg: ModelConfig,
    pub embed: PatchEmbed,
    pub stages: Vec<CsiStage>,
    /// `transitions[i]` maps stage `i + 1` outputs to stage `i + 2` inputs.
    pub transitions: Vec<Conv2d>,
    pub decoder: MlpDecoder,
}

/// Logits plus every stage's outputs and CTI internals.
#[derive(Debug, Clone)]
pub struct ModelOutput {
    /// `N × 2 × H × W` unnormalised class scores.
    pub logits: Tensor,
    pub stages: Vec<StageOutput>,
}

impl ModelOutput {
    pub fn features(&self) -> Vec<(Tensor, Tensor)> {
        self.stages.iter().map(|s| (s.g1.clone(), s.g2.clone())).collect()
    }
}

impl SteinFormer {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut init = Init { rng: &mut rng, std: cfg.init_std };
        let ch = &cfg.stage_channels;
        let settings = cfg.block_settings();
        let embed = PatchEmbed::new("embed", 3, ch[0], &mut init)?;
        let mut stages = Vec::with_capacity(ch.len());
        let mut transitions = Vec::with_capacity(ch.len() - 1);
        for s in 1..=ch.len() {
            if s > 1 {
                transitions.push(Conv2d::new(
                    &format!("transition{}", s - 1),
                    ch[s - 2],
                    ch[s - 1],
                    ConvSpec::new(3, 2, 1),
                    &mut init,
                )?);
            }
            stages.push(CsiStage::new(s, ch, cfg.blocks_per_level, &settings, cfg.cti_difference, &mut init)?);
        }
        let decoder = MlpDecoder::new(ch, cfg.decoder_channels, cfg.num_classes, &mut init)?;
        Ok(SteinFormer { cfg: cfg.clone(), embed, stages, transitions, decoder })
    }

    pub fn forward(&self, t1: &Tensor, t2: &Tensor, mode: Mode) -> Result<ModelOutput> {
        if t1.shape() != t2.shape() {
            return Err(Error::config(format!(
                "image pair shapes differ: {:?} vs {:?}",
                t1.shape(),
                t2.shape()
            )));
        }
        let (_, c, h, w) = t1.dims4("model")?;
        if c != 3 || h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "model input must be 3-channel with sides divisible by 32, got {:?}",
                t1.shape()
            )));
        }
        let mut x1 = self.embed.forward(t1, mode)?;
        let mut x2 = self.embed.forward(t2, mode)?;
        let mut outs = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                x1 = self.transitions[i - 1].forward(&x1)?;
                x2 = self.transitions[i - 1].forward(&x2)?;
            }
            let out = stage.forward(&x1, &x2, mode)?;
            x1 = out.g1.clone();
            x2 = out.g2.clone();
            outs.push(out);
        }
        let features: Vec<(Tensor, Tensor)> = outs.iter().map(|s| (s.g1.clone(), s.g2.clone())).collect();
        let logits = self.decoder.forward(&features, h, w)?;
        Ok(ModelOutput { logits, stages: outs })
    }

    /// Per-layer parameter and FLOP ledger for an `h × w` image pair.
    pub fn ledger(&self, h: usize, w: usize) -> Ledger {
        let mut l = Ledger::default();
        l.conv(&self.embed.conv, h, w, 2);
        l.push("embed.norm", self.embed.norm.num_params(), 0, 2);
        for (i, stage) in self.stages.iter().enumerate() {
            let s = i + 1;
            if i > 0 {
                l.conv(&self.transitions[i - 1], h >> (s - 1), w >> (s - 1), 2);
            }
            stage.ledger(h >> s, w >> s, &mut l);
        }
        for (i, proj) in self.decoder.stage_proj.iter().enumerate() {
            l.conv(proj, h >> (i + 1), w >> (i + 1), 1);
        }
        l.conv(&self.decoder.classifier, h / 2, w / 2, 1);
        l
    }
}

impl Module for SteinFormer {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param)) {
        self.embed.visit_params(f);
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                self.transitions[i - 1].visit_params(f);
            }
            s.visit_params(f);
        }
        self.decoder.visit_params(f);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.embed.visit_params_mut(f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            if i > 0 {
                self.transitions[i - 1].visit_params_mut(f);
            }
            s.visit_params_mut(f);
        }
        self.decoder.visit_params_mut(f);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&'a Buffer)) {
        self.embed.visit_buffers(f);
        self.stages.iter().for_each(|s| s.visit_buffers(f));
    }
}

/// Exact count of learnable scalars for a configuration.
pub fn count_params(cfg: &ModelConfig) -> Result<(u64, Ledger)> {
    let [h, w] = cfg.input_size;
    let ledger = SteinFormer::new(cfg)?.ledger(h, w);
    Ok((ledger.total_params(), ledger))
}

/// Convolution FLOPs (two per multiply-accumulate) of one forward pass on
/// an `h × w` image pair, with the per-layer ledger they sum from.
pub fn estimate_flops(cfg: &ModelConfig, h: usize, w: usize) -> Result<(u64, Ledger)> {
    if h % 32 != 0 || w % 32 != 0 || h == 0 || w == 0 {
        return Err(Error::config(format!("FLOP estimate needs sides divisible by 32, got {h}x{w}")));
    }
    let ledger = SteinFormer::new(cfg)?.ledger(h, w);
    Ok((ledger.total_flops(), ledger))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::count_macs;
    use rand::Rng;

    pub(crate) fn toy() -> ModelConfig {
        ModelConfig {
            stage_channels: vec![4, 4, 6, 8],
            heads: 2,
            p: 3,
            expansion: 1,
            decoder_channels: 4,
            input_size: [32, 32],
            init_std: 0.2,
            ..ModelConfig::default()
        }
    }

    fn image(n: usize, h: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new((0..n * 3 * h * h).map(|_| rng.gen_range(0.0..1.0)).collect(), &[n, 3, h, h]).unwrap()
    }

    #[test]
    fn patch_embed_shapes() {
        let m = SteinFormer::new(&ModelConfig { input_size: [64, 64], ..ModelConfig::default() }).unwrap();
        let y = m.embed.forward(&image(1, 64, 0), Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 32, 32, 32]);
        assert!(matches!(
            m.embed.forward(&Tensor::zeros(&[1, 3, 7, 8]), Mode::Eval),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let m = SteinFormer::new(&toy()).unwrap();
        let (a, b) = (image(2, 64, 1), image(2, 64, 2));
        let o1 = m.forward(&a, &b, Mode::Eval).unwrap();
        let o2 = m.forward(&a, &b, Mode::Eval).unwrap();
        assert_eq!(o1.logits.shape(), &[2, 2, 64, 64]);
        assert_eq!(o1.logits.data(), o2.logits.data());
        assert!(o1.logits.data().iter().all(|v| v.is_finite()));
        for (s, out) in o1.stages.iter().enumerate() {
            assert_eq!(out.g1.shape()[2], 64 >> (s + 1));
            assert_eq!(out.bottom.0.shape(), &[2, 8, 2, 2]);
        }
    }

    #[test]
    fn zero_features_give_classifier_bias() {
        let m = SteinFormer::new(&toy()).unwrap();
        let mut m = m;
        m.decoder.classifier.bias.as_mut().unwrap().set_data(vec![0.25, -1.5]).unwrap();
        for p in &mut m.decoder.stage_proj {
            p.bias.as_mut().unwrap().set_data(vec![0.0; 4]).unwrap();
        }
        let feats: Vec<(Tensor, Tensor)> = [4, 4, 6, 8]
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let s = 32 >> (i + 1);
                (Tensor::zeros(&[1, c, s, s]), Tensor::zeros(&[1, c, s, s]))
            })
            .collect();
        let logits = m.decoder.forward(&feats, 32, 32).unwrap();
        assert!(logits.data()[..1024].iter().all(|&v| v == 0.25));
        assert!(logits.data()[1024..].iter().all(|&v| v == -1.5));
        assert!(matches!(m.decoder.forward(&feats[..3], 32, 32), Err(Error::Usage(_))));
    }

    #[test]
    fn ledger_matches_model_and_instrumented_forward() {
        let m = SteinFormer::new(&toy()).unwrap();
        let ledger = m.ledger(64, 64);
        assert_eq!(ledger.total_params() as usize, m.num_params());
        let (_, macs) = count_macs(|| m.forward(&image(1, 64, 3), &image(1, 64, 4), Mode::Eval).unwrap());
        assert_eq!(ledger.total_flops(), 2 * macs);
    }

    #[test]
    fn flops_scale_with_area_params_do_not() {
        let cfg = toy();
        let (f1, _) = estimate_flops(&cfg, 64, 64).unwrap();
        let (f2, _) = estimate_flops(&cfg, 128, 128).unwrap();
        assert_eq!(f2, 4 * f1);
        let (p1, _) = count_params(&cfg).unwrap();
        let (p2, _) = count_params(&ModelConfig { input_size: [128, 128], ..cfg }).unwrap();
        assert_eq!(p1, p2);
    }
}
