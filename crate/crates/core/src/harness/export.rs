use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::data::{write_mask, BitemporalSample};
use super::metrics::{error_map, Confusion, MetricsReport};
use super::train::predict;
use crate::error::Result;
use crate::model::SteinFormer;

/// Files written for one pair.
#[derive(Debug, Clone)]
pub struct Exported {
    pub id: String,
    pub change_map: PathBuf,
    pub error_map: Option<PathBuf>,
    pub metrics: Option<MetricsReport>,
}

pub fn write_error_map(path: &Path, pred: &[u8], label: &[u8], h: usize, w: usize) -> Result<()> {
    let colors = error_map(pred, label)?;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| Rgb(colors[y as usize * w + x as usize]));
    img.save(path)?;
    Ok(())
}

/// Predict every pair and write `<id>_change.png` (0 or 255) plus, for
/// labelled pairs, `<id>_error.png`.
pub fn predict_export(model: &SteinFormer, samples: &[BitemporalSample], out_dir: &Path) -> Result<Vec<Exported>> {
    std::fs::create_dir_all(out_dir)?;
    let preds = predict(model, samples, 4)?;
    let mut out = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(&preds) {
        let change_map = out_dir.join(format!("{}_change.png", s.id));
        write_mask(&change_map, p, s.height, s.width)?;
        let (error_path, metrics) = if s.has_label() {
            let path = out_dir.join(format!("{}_error.png", s.id));
            write_error_map(&path, p, &s.label, s.height, s.width)?;
            (Some(path), Some(Confusion::from_maps(p, &s.label)?.report()))
        } else {
            (None, None)
        };
        out.push(Exported { id: s.id.clone(), change_map, error_map: error_path, metrics });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::{FN_COLOR, FP_COLOR, TN_COLOR, TP_COLOR};
    use crate::harness::synth::{synth_generate, SynthSpec};
    use crate::model::ModelConfig;
    use crate::nn::Mode;
    use crate::tensor::no_grad;

    #[test]
    fn exported_maps_agree_with_logits() {
        let cfg = ModelConfig {
            stage_channels: vec![4, 4, 6, 8],
            heads: 2,
            p: 3,
            expansion: 1,
            decoder_channels: 4,
            input_size: [32, 32],
            init_std: 0.5,
            ..ModelConfig::default()
        };
        let model = SteinFormer::new(&cfg).unwrap();
        let samples = synth_generate(&SynthSpec { size: 32, count: 2, ..SynthSpec::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ex = predict_export(&model, &samples, dir.path()).unwrap();
        for (s, e) in samples.iter().zip(&ex) {
            let (t1, t2, _) = crate::harness::data::stack(&[s]).unwrap();
            let z = no_grad(|| model.forward(&t1, &t2, Mode::Eval)).unwrap().logits;
            let plane = 32 * 32;
            let gray = image::open(&e.change_map).unwrap().to_luma8();
            let mut pred = vec![0u8; plane];
            for (k, px) in gray.pixels().enumerate() {
                assert!(px[0] == 0 || px[0] == 255);
                let want = z.data()[plane + k] > z.data()[k];
                assert_eq!(px[0] == 255, want);
                pred[k] = want as u8;
            }
            let c = Confusion::from_maps(&pred, &s.label).unwrap();
            let rgb = image::open(e.error_map.as_ref().unwrap()).unwrap().to_rgb8();
            let count = |col: [u8; 3]| rgb.pixels().filter(|p| p.0 == col).count() as u64;
            assert_eq!([count(TP_COLOR), count(FP_COLOR), count(FN_COLOR), count(TN_COLOR)], [c.tp, c.fp, c.fn_, c.tn]);
        }
    }
}
