use rand::Rng;

use super::data::BitemporalSample;
use crate::error::{Error, Result};

/// Element of the symmetry group of the square: a horizontal flip (when
/// `flip`) followed by `rot` counter-clockwise quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub rot: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    /// Element `e` in `0..8`: `rot = e % 4`, `flip = e >= 4`.
    pub fn from_index(e: u8) -> Dihedral {
        Dihedral { rot: e % 4, flip: e >= 4 }
    }

    pub fn index(self) -> u8 {
        self.rot + if self.flip { 4 } else { 0 }
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral::from_index)
    }

    pub fn random<R: Rng>(rng: &mut R) -> Dihedral {
        Dihedral::from_index(rng.gen_range(0..8))
    }

    pub fn inverse(self) -> Dihedral {
        if self.flip {
            self
        } else {
            Dihedral { rot: (4 - self.rot) % 4, flip: false }
        }
    }

    /// Output `(h, w)` for an `h × w` input.
    pub fn output_hw(self, h: usize, w: usize) -> (usize, usize) {
        if self.rot % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    fn check(self, h: usize, w: usize) -> Result<()> {
        if self.rot % 2 == 1 && h != w {
            return Err(Error::config(format!("quarter-turn augmentation needs a square image, got {h}x{w}")));
        }
        Ok(())
    }

    /// Transform one row-major `h × w` plane.
    pub fn apply_plane<T: Copy>(self, src: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        self.check(h, w)?;
        if src.len() != h * w {
            return Err(Error::dims("dihedral plane", &[h, w], &[src.len()]));
        }
        let mut cur: Vec<T> = src.to_vec();
        let (mut ch, mut cw) = (h, w);
        if self.flip {
            for row in cur.chunks_mut(cw) {
                row.reverse();
            }
        }
        for _ in 0..self.rot {
            // counter-clockwise: out[y][x] = in[x][cw - 1 - y], out is cw × ch
            let mut next = Vec::with_capacity(cur.len());
            for y in 0..cw {
                for x in 0..ch {
                    next.push(cur[x * cw + (cw - 1 - y)]);
                }
            }
            cur = next;
            std::mem::swap(&mut ch, &mut cw);
        }
        Ok(cur)
    }

    /// Transform a `c × h × w` image.
    pub fn apply_chw<T: Copy>(self, src: &[T], h: usize, w: usize) -> Result<Vec<T>> {
        let plane = h * w;
        if plane == 0 || src.len() % plane != 0 {
            return Err(Error::dims("dihedral image", &[h, w], &[src.len()]));
        }
        let mut out = Vec::with_capacity(src.len());
        for chunk in src.chunks(plane) {
            out.extend(self.apply_plane(chunk, h, w)?);
        }
        Ok(out)
    }

    /// Apply the same transform to both images and the label.
    pub fn apply(self, s: &BitemporalSample) -> Result<BitemporalSample> {
        let (h, w) = (s.height, s.width);
        let (oh, ow) = self.output_hw(h, w);
        Ok(BitemporalSample {
            id: s.id.clone(),
            height: oh,
            width: ow,
            t1: self.apply_chw(&s.t1, h, w)?,
            t2: self.apply_chw(&s.t2, h, w)?,
            label: self.apply_plane(&s.label, h, w)?,
            provenance: s.provenance.clone(),
        })
    }
}
