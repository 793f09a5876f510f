//! Image, saliency and dataset containers.
//!
//! All pixel data is stored as `f64` in row-major `(h, w, c)` order regardless of
//! the dtype it was loaded from.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    value_range: (f64, f64),
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite pixel value at index {i}")));
        }
        let value_range = value_range(&data);
        Ok(Self {
            height,
            width,
            channels,
            data,
            value_range,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("constant tensor is valid")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// `(min, max)` over all values; `(0, 0)` for an empty tensor.
    pub fn value_range(&self) -> (f64, f64) {
        self.value_range
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Values of one flat pixel across all channels.
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.channels)
    }
}

fn value_range(data: &[f64]) -> (f64, f64) {
    if data.is_empty() {
        return (0.0, 0.0);
    }
    data.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

/// Per-pixel importance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                got: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSaliency(i));
        }
        Ok(Self {
            height,
            width,
            scores,
        })
    }

    /// Collapses a per-channel attribution to per-pixel scores by summing channels.
    pub fn from_channels(t: &ImageTensor) -> Result<Self> {
        let scores = (0..t.pixels()).map(|p| t.pixel(p).iter().sum()).collect();
        Self::new(t.height(), t.width(), scores)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

/// Labelled images sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<ImageTensor>,
    labels: Vec<usize>,
    num_classes: usize,
    per_channel_mean: Vec<f64>,
}

impl Dataset {
    pub fn new(images: Vec<ImageTensor>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::LengthMismatch {
                expected: images.len(),
                got: labels.len(),
            });
        }
        if let Some(first) = images.first() {
            if let Some(bad) = images.iter().find(|im| !im.same_shape(first)) {
                return Err(Error::shape(first.shape_string(), bad.shape_string()));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Config(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        let per_channel_mean = channel_means(&images);
        Ok(Self {
            images,
            labels,
            num_classes,
            per_channel_mean,
        })
    }

    pub fn images(&self) -> &[ImageTensor] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn per_channel_mean(&self) -> &[f64] {
        &self.per_channel_mean
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// `(height, width, channels)` of the images, if any.
    pub fn image_shape(&self) -> Option<(usize, usize, usize)> {
        self.images
            .first()
            .map(|im| (im.height(), im.width(), im.channels()))
    }

    /// Deterministic 2:1 split by index: the first `ceil(2n/3)` samples train.
    pub fn split_point(&self) -> usize {
        (2 * self.len()).div_ceil(3)
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Result<Dataset> {
        Dataset::new(
            self.images[range.clone()].to_vec(),
            self.labels[range].to_vec(),
            self.num_classes,
        )
    }
}

fn channel_means(images: &[ImageTensor]) -> Vec<f64> {
    let Some(first) = images.first() else {
        return Vec::new();
    };
    let c = first.channels();
    let mut sums = vec![0.0; c];
    let mut count = 0usize;
    for im in images {
        for px in im.data().chunks_exact(c) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        count += im.pixels();
    }
    sums.iter().map(|s| s / count as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length() {
        assert!(matches!(
            ImageTensor::new(2, 2, 1, vec![0.0; 3]),
            Err(Error::LengthMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn constant_tensor_range() {
        let t = ImageTensor::filled(32, 32, 3, 0.0);
        assert_eq!(t.value_range(), (0.0, 0.0));
    }

    #[test]
    fn per_channel_mean_matches_naive_loop() {
        let mut images = Vec::new();
        let mut state = 17u64;
        for _ in 0..7 {
            let data: Vec<f64> = (0..4 * 3 * 2)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            images.push(ImageTensor::new(4, 3, 2, data).unwrap());
        }
        let ds = Dataset::new(images.clone(), vec![0; 7], 1).unwrap();
        for c in 0..2 {
            let mut total = 0.0;
            let mut n = 0.0;
            for im in &images {
                for r in 0..4 {
                    for col in 0..3 {
                        total += im.get(r, col, c);
                        n += 1.0;
                    }
                }
            }
            assert!((ds.per_channel_mean()[c] - total / n).abs() < 1e-12);
        }
    }

    #[test]
    fn saliency_rejects_nan() {
        assert!(matches!(
            SaliencyMap::new(1, 2, vec![0.0, f64::NAN]),
            Err(Error::InvalidSaliency(1))
        ));
    }

    #[test]
    fn channel_sum_collapses_attribution() {
        let t = ImageTensor::new(1, 2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let s = SaliencyMap::from_channels(&t).unwrap();
        assert_eq!(s.scores(), &[3.0, -0.5]);
    }
}
