use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Where a sample came from.
#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic { seed: u64, index: u64 },
    Files { a: PathBuf, b: PathBuf, label: Option<PathBuf> },
}

/// Co-registered image pair with its binary change label.
#[derive(Debug, Clone, PartialEq)]
pub struct BitemporalSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    /// `3 × H × W` values in `[0, 1]`.
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    /// `H × W` values in `{0, 1}`; empty for an unlabelled pair.
    pub label: Vec<u8>,
    pub provenance: Provenance,
}

impl BitemporalSample {
    pub fn validate(&self) -> Result<()> {
        let plane = self.height * self.width;
        let label_ok = self.label.is_empty() || self.label.len() == plane;
        if plane == 0 || self.t1.len() != 3 * plane || self.t2.len() != 3 * plane || !label_ok {
            return Err(Error::data(format!("sample {} has inconsistent sizes", self.id)));
        }
        if self.label.iter().any(|&v| v > 1) {
            return Err(Error::data(format!("sample {} has a non-binary label", self.id)));
        }
        Ok(())
    }

    pub fn has_label(&self) -> bool {
        !self.label.is_empty()
    }

    pub fn changed_pixels(&self) -> usize {
        self.label.iter().filter(|&&v| v == 1).count()
    }
}

/// Stack samples into `(T1, T2, labels)` batch tensors.
pub fn stack(samples: &[&BitemporalSample]) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let first = samples.first().ok_or_else(|| Error::usage("empty batch"))?;
    let (h, w) = (first.height, first.width);
    let mut t1 = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut t2 = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut y = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.height, s.width) != (h, w) {
            return Err(Error::data(format!("sample {} is {}x{}, batch is {h}x{w}", s.id, s.height, s.width)));
        }
        t1.extend_from_slice(&s.t1);
        t2.extend_from_slice(&s.t2);
        y.extend(s.label.iter().map(|&v| v as f64));
    }
    let shape = [samples.len(), 3, h, w];
    Ok((Tensor::new(t1, &shape)?, Tensor::new(t2, &shape)?, y))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_rgb(path: &Path, chw: &[f64], h: usize, w: usize) -> Result<()> {
    let plane = h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb([to_u8(chw[i]), to_u8(chw[plane + i]), to_u8(chw[2 * plane + i])])
    });
    img.save(path)?;
    Ok(())
}

/// Binary map as an 8-bit grayscale image (0 or 255).
pub fn write_mask(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<()> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([mask[y as usize * w + x as usize] * 255]));
    img.save(path)?;
    Ok(())
}

fn read_rgb(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = vec![0.0; 3 * h * w];
    for (x, y, p) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            out[c * h * w + i] = p[c] as f64 / 255.0;
        }
    }
    Ok((out, h, w))
}

fn read_label(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.pixels().map(|p| (p[0] >= 128) as u8).collect(), h, w))
}

/// Write `root/{A,B,label}/<id>.png` for each sample.
pub fn save_dataset(root: &Path, samples: &[BitemporalSample]) -> Result<()> {
    for dir in ["A", "B", "label"] {
        std::fs::create_dir_all(root.join(dir))?;
    }
    for s in samples {
        let name = format!("{}.png", s.id);
        write_rgb(&root.join("A").join(&name), &s.t1, s.height, s.width)?;
        write_rgb(&root.join("B").join(&name), &s.t2, s.height, s.width)?;
        write_mask(&root.join("label").join(&name), &s.label, s.height, s.width)?;
    }
    Ok(())
}

fn png_names(dir: &Path) -> Result<BTreeSet<String>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::Ingestion(format!("cannot read {}: {e}", dir.display())))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(n) = path.file_name().and_then(|n| n.to_str()) {
                names.insert(n.to_string());
            }
        }
    }
    Ok(names)
}

/// Load `root/{A,B,label}/*.png` triples in filename order.
pub fn load_dataset(root: &Path) -> Result<Vec<BitemporalSample>> {
    load_pairs(root, true)
}

/// Like [`load_dataset`], but a missing `label/` directory yields
/// unlabelled pairs unless `require_labels`.
pub fn load_pairs(root: &Path, require_labels: bool) -> Result<Vec<BitemporalSample>> {
    let dirs = ["A", "B", "label"].map(|d| root.join(d));
    let labelled = require_labels || dirs[2].exists();
    let names = [
        png_names(&dirs[0])?,
        png_names(&dirs[1])?,
        if labelled { png_names(&dirs[2])? } else { BTreeSet::new() },
    ];
    let used = if labelled { 3 } else { 2 };
    for (i, set) in names.iter().enumerate().take(used) {
        for n in set {
            if let Some(j) = (0..used).find(|&j| !names[j].contains(n)) {
                return Err(Error::Ingestion(format!(
                    "{} has no counterpart in {}",
                    dirs[i].join(n).display(),
                    dirs[j].display()
                )));
            }
        }
    }
    let mut out = Vec::with_capacity(names[0].len());
    for n in &names[0] {
        let paths = dirs.clone().map(|d| d.join(n));
        let (t1, h, w) = read_rgb(&paths[0])?;
        let (t2, h2, w2) = read_rgb(&paths[1])?;
        let (label, h3, w3) = if labelled { read_label(&paths[2])? } else { (Vec::new(), h, w) };
        if (h, w) != (h2, w2) || (h, w) != (h3, w3) {
            return Err(Error::data(format!(
                "{n}: sizes differ (A {h}x{w}, B {h2}x{w2}, label {h3}x{w3})"
            )));
        }
        let id = n.trim_end_matches(".png").trim_end_matches(".PNG").to_string();
        let [a, b, label_path] = paths;
        out.push(BitemporalSample {
            id,
            height: h,
            width: w,
            t1,
            t2,
            label,
            provenance: Provenance::Files { a, b, label: labelled.then_some(label_path) },
        });
    }
    Ok(out)
}
