//! Top-k masks and the selection / scatter operators that split an image
//! into its low- and high-importance pixels and put them back.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, SaliencyMap};

/// Which pixels are removed first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemovalOrder {
    /// Most relevant first: the top-k pixels are removed.
    Morf,
    /// Least relevant first: only the top-k pixels are kept.
    Lerf,
}

impl RemovalOrder {
    /// The partition that survives removal for a top-k mask.
    pub fn kept_part(self) -> Part {
        match self {
            RemovalOrder::Morf => Part::Low,
            RemovalOrder::Lerf => Part::High,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RemovalOrder::Morf => "morf",
            RemovalOrder::Lerf => "lerf",
        }
    }
}

/// `Low` are the pixels outside the mask (bit 0), `High` those inside (bit 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Low,
    High,
}

impl Part {
    pub fn complement(self) -> Part {
        match self {
            Part::Low => Part::High,
            Part::High => Part::Low,
        }
    }

    fn bit(self) -> bool {
        matches!(self, Part::High)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
    k: usize,
}

impl BinaryMask {
    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                got: bits.len(),
            });
        }
        let k = bits.iter().filter(|&&b| b).count();
        Ok(Self {
            height,
            width,
            bits,
            k,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::from_bits(height, width, vec![false; height * width]).expect("sized")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Number of set bits.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, pixel: usize) -> bool {
        self.bits[pixel]
    }

    pub fn complement(&self) -> BinaryMask {
        Self::from_bits(
            self.height,
            self.width,
            self.bits.iter().map(|b| !b).collect(),
        )
        .expect("same size")
    }

    /// Ascending flat indices of the pixels belonging to `part`.
    pub fn indices(&self, part: Part) -> Vec<usize> {
        let want = part.bit();
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| (b == want).then_some(i))
            .collect()
    }

    pub fn count(&self, part: Part) -> usize {
        match part {
            Part::High => self.k,
            Part::Low => self.bits.len() - self.k,
        }
    }

    /// Bits as 0.0 / 1.0, the feature vector for mask-only classifiers.
    pub fn as_features(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn check_shape(&self, x: &ImageTensor) -> Result<()> {
        if x.height() != self.height || x.width() != self.width {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", x.height(), x.width()),
            ));
        }
        Ok(())
    }
}

/// Pixel values gathered from one side of a mask, in ascending pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source_indices: Vec<usize>,
}

/// Pixel indices sorted by descending score; ties go to the lower flat index.
pub fn rank_pixels(s: &SaliencyMap) -> Result<Vec<usize>> {
    rank_scores(s.scores())
}

pub fn rank_scores(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidSaliency(i));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable sort keeps ascending index among equal scores
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
    });
    Ok(order)
}

/// Mask with ones on the first `k` entries of `perm`.
pub fn topk_mask(perm: &[usize], k: usize, height: usize, width: usize) -> Result<BinaryMask> {
    let d = height * width;
    if perm.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            got: perm.len(),
        });
    }
    if k > d {
        return Err(Error::InvalidK { k, max: d });
    }
    let mut bits = vec![false; d];
    for &p in &perm[..k] {
        bits[p] = true;
    }
    BinaryMask::from_bits(height, width, bits)
}

/// `k = round(eta * pixels)`.
pub fn k_for_fraction(eta: f64, pixels: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Domain(format!("removal fraction {eta} outside [0, 1]")));
    }
    Ok((eta * pixels as f64).round() as usize)
}

pub fn select(m: &BinaryMask, x: &ImageTensor, part: Part) -> Result<FeatureVector> {
    m.check_shape(x)?;
    let source_indices = m.indices(part);
    let mut values = Vec::with_capacity(source_indices.len() * x.channels());
    for &p in &source_indices {
        values.extend_from_slice(x.pixel(p));
    }
    Ok(FeatureVector {
        values,
        source_indices,
    })
}

/// An image whose pixels in `unknown` still have to be filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Unknown pixels hold 0.0.
    pub data: Vec<f64>,
    pub unknown: Vec<usize>,
}

impl PartialImage {
    pub fn is_known(&self, pixel: usize) -> bool {
        self.unknown.binary_search(&pixel).is_err()
    }
}

/// Places `v` back at the positions of `part`; the complement is left unknown.
pub fn scatter(
    m: &BinaryMask,
    v: &FeatureVector,
    part: Part,
    channels: usize,
) -> Result<PartialImage> {
    let expected = m.count(part);
    if v.source_indices.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            got: v.source_indices.len(),
        });
    }
    if v.values.len() != expected * channels {
        return Err(Error::LengthMismatch {
            expected: expected * channels,
            got: v.values.len(),
        });
    }
    let mut data = vec![0.0; m.len() * channels];
    for (slot, &p) in v.source_indices.iter().enumerate() {
        if m.get(p) != part.bit() {
            return Err(Error::Config(format!(
                "pixel {p} of the feature vector is not on the {part:?} side of the mask"
            )));
        }
        data[p * channels..(p + 1) * channels]
            .copy_from_slice(&v.values[slot * channels..(slot + 1) * channels]);
    }
    Ok(PartialImage {
        height: m.height(),
        width: m.width(),
        channels,
        data,
        unknown: m.indices(part.complement()),
    })
}
