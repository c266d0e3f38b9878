use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{BitemporalSample, Provenance};
use crate::error::{Error, Result};

/// Settings of the synthetic bi-temporal task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    /// Side length in pixels; a multiple of 32.
    pub size: usize,
    /// Inclusive range of objects of interest in the first image.
    pub shapes: [usize; 2],
    /// Inclusive range of objects added or removed in the second image.
    pub changes: [usize; 2],
    /// Maximum relative change of global brightness.
    pub illumination: f64,
    /// Maximum registration offset in pixels along each axis.
    pub max_offset: usize,
    /// Irrelevant objects present in both images.
    pub distractors: usize,
    /// Maximum per-channel colour jitter of distractors between the images.
    pub distractor_jitter: f64,
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            count: 8,
            size: 64,
            shapes: [1, 4],
            changes: [1, 3],
            illumination: 0.15,
            max_offset: 1,
            distractors: 3,
            distractor_jitter: 0.1,
            noise: 0.02,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 32 || self.size % 32 != 0 {
            return Err(Error::config(format!("synthetic size {} must be a multiple of 32", self.size)));
        }
        if self.shapes[0] > self.shapes[1] || self.changes[0] > self.changes[1] {
            return Err(Error::config("synthetic ranges must be [min, max] with min <= max"));
        }
        let amps = [self.illumination, self.distractor_jitter, self.noise];
        if amps.iter().any(|a| !a.is_finite() || *a < 0.0) || self.illumination >= 1.0 {
            return Err(Error::config("synthetic amplitudes must be non-negative (illumination below 1)"));
        }
        if self.max_offset >= self.size / 4 {
            return Err(Error::config("registration offset too large for the image size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rect,
    Ellipse,
}

/// Axis-aligned rectangle or ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub color: [f64; 3],
}

impl Shape {
    /// Whether the centre of pixel `(x, y)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        match self.kind {
            ShapeKind::Rect => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            ShapeKind::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }
}

/// Everything drawn for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub before: Vec<Shape>,
    pub after: Vec<Shape>,
    pub distractors: Vec<Shape>,
    pub offset: (i64, i64),
    pub illumination: f64,
}

const INTEREST: [f64; 3] = [0.85, 0.35, 0.25];
const DISTRACTOR_COLORS: [[f64; 3]; 4] = [[0.2, 0.3, 0.7], [0.15, 0.4, 0.15], [0.55, 0.55, 0.55], [0.8, 0.75, 0.45]];
const GROUND_COLORS: [[f64; 3]; 3] = [[0.35, 0.45, 0.3], [0.5, 0.45, 0.35], [0.4, 0.4, 0.38]];

fn random_shape(rng: &mut ChaCha8Rng, size: usize, color: [f64; 3]) -> Shape {
    let s = size as f64;
    let (lo, hi) = (s / 24.0, s / 8.0);
    let rx = rng.gen_range(lo..hi);
    let ry = rng.gen_range(lo..hi);
    Shape {
        kind: if rng.gen_bool(0.5) { ShapeKind::Rect } else { ShapeKind::Ellipse },
        cx: rng.gen_range(rx..s - rx),
        cy: rng.gen_range(ry..s - ry),
        rx,
        ry,
        color,
    }
}

fn jitter(rng: &mut ChaCha8Rng, c: [f64; 3], amp: f64) -> [f64; 3] {
    if amp == 0.0 {
        return c;
    }
    c.map(|v| (v + rng.gen_range(-amp..=amp)).clamp(0.0, 1.0))
}

/// Union mask of `shapes` on a `size × size` grid.
pub fn rasterize(shapes: &[Shape], size: usize) -> Vec<u8> {
    let mut m = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            m[y * size + x] = shapes.iter().any(|s| s.contains(x, y)) as u8;
        }
    }
    m
}

fn paint(img: &mut [f64], size: usize, shapes: &[Shape]) {
    let plane = size * size;
    for s in shapes {
        let x0 = (s.cx - s.rx).floor().max(0.0) as usize;
        let x1 = ((s.cx + s.rx).ceil() as usize).min(size);
        let y0 = (s.cy - s.ry).floor().max(0.0) as usize;
        let y1 = ((s.cy + s.ry).ceil() as usize).min(size);
        for y in y0..y1 {
            for x in x0..x1 {
                if s.contains(x, y) {
                    for c in 0..3 {
                        img[c * plane + y * size + x] = s.color[c];
                    }
                }
            }
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// Generate the scene and images for sample `index` of `spec`.
pub fn generate_one(spec: &SynthSpec, index: u64) -> Result<(BitemporalSample, SynthScene)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let size = spec.size;
    let plane = size * size;
    let s = size as f64;

    let ground = GROUND_COLORS[rng.gen_range(0..GROUND_COLORS.len())];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.5..4.0) * std::f64::consts::TAU / s,
                rng.gen_range(0.5..4.0) * std::f64::consts::TAU / s,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let mut background = vec![0.0; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let t: f64 = waves
                .iter()
                .map(|&(fx, fy, ph, a)| a * (fx * x as f64 + fy * y as f64 + ph).sin())
                .sum();
            for c in 0..3 {
                background[c * plane + y * size + x] = ground[c] + t;
            }
        }
    }

    let distractors: Vec<Shape> = (0..spec.distractors)
        .map(|_| {
            let color = DISTRACTOR_COLORS[rng.gen_range(0..DISTRACTOR_COLORS.len())];
            random_shape(&mut rng, size, color)
        })
        .collect();
    let n_before = rng.gen_range(spec.shapes[0]..=spec.shapes[1]);
    let before: Vec<Shape> = (0..n_before)
        .map(|_| {
            let color = jitter(&mut rng, INTEREST, 0.05);
            random_shape(&mut rng, size, color)
        })
        .collect();
    let mut after = before.clone();
    let n_changes = rng.gen_range(spec.changes[0]..=spec.changes[1]);
    for _ in 0..n_changes {
        if !after.is_empty() && rng.gen_bool(0.5) {
            let i = rng.gen_range(0..after.len());
            after.remove(i);
        } else {
            let color = jitter(&mut rng, INTEREST, 0.05);
            after.push(random_shape(&mut rng, size, color));
        }
    }
    let moved: Vec<Shape> = distractors
        .iter()
        .map(|d| Shape { color: jitter(&mut rng, d.color, spec.distractor_jitter), ..*d })
        .collect();
    let illumination = 1.0 + rng.gen_range(-1.0..=1.0) * spec.illumination;
    let k = spec.max_offset as i64;
    let offset = (rng.gen_range(-k..=k), rng.gen_range(-k..=k));

    let mut t1 = background.clone();
    paint(&mut t1, size, &distractors);
    paint(&mut t1, size, &before);
    let mut t2 = background;
    paint(&mut t2, size, &moved);
    paint(&mut t2, size, &after);

    let clamp = |v: i64| v.clamp(0, size as i64 - 1) as usize;
    let mut shifted = vec![0.0; 3 * plane];
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let sy = clamp(y as i64 - offset.1);
                let sx = clamp(x as i64 - offset.0);
                shifted[c * plane + y * size + x] = t2[c * plane + sy * size + sx] * illumination;
            }
        }
    }
    let mut t2 = shifted;
    for v in t1.iter_mut().chain(t2.iter_mut()) {
        *v = (*v + spec.noise * gaussian(&mut rng)).clamp(0.0, 1.0);
    }

    let label: Vec<u8> = rasterize(&before, size)
        .iter()
        .zip(rasterize(&after, size))
        .map(|(a, b)| a ^ b)
        .collect();
    let sample = BitemporalSample {
        id: format!("synth_{}_{:05}", spec.seed, index),
        height: size,
        width: size,
        t1,
        t2,
        label,
        provenance: Provenance::Synthetic { seed: spec.seed, index },
    };
    Ok((sample, SynthScene { before, after, distractors, offset, illumination }))
}

/// Samples `start .. start + count` of the stream defined by `spec.seed`.
pub fn generate_range(spec: &SynthSpec, start: u64, count: usize) -> Result<Vec<BitemporalSample>> {
    (start..start + count as u64).map(|i| generate_one(spec, i).map(|(s, _)| s)).collect()
}

/// `spec.count` samples from the start of the stream.
pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<BitemporalSample>> {
    generate_range(spec, 0, spec.count)
}
