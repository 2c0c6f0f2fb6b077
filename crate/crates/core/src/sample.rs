//! Multi-scale feature samples and row-layout batches.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Real, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        matches!(self, Label::Anomalous)
    }
}

/// Binary ground-truth mask at the finest feature resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    /// Row-major, one byte per position, 0 or 1.
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim("Mask::new", &[height, width], &[data.len()]));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Contract("mask values must be 0 or 1".into()));
        }
        Ok(Mask { height, width, data })
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Nearest-neighbour resample to `height × width`.
    pub fn resample(&self, height: usize, width: usize) -> Mask {
        let mut data = Vec::with_capacity(height * width);
        for m in 0..height {
            let sm = (m * self.height / height.max(1)).min(self.height - 1);
            for n in 0..width {
                let sn = (n * self.width / width.max(1)).min(self.width - 1);
                data.push(self.data[sm * self.width + sn]);
            }
        }
        Mask { height, width, data }
    }
}

/// One sample: a stack of channel-first feature maps `h_i ∈ [D_i, H_i, W_i]`,
/// finest first. `class_id` is bookkeeping for evaluation only; the model
/// never sees it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSample<T> {
    pub id: u32,
    pub class_id: u32,
    pub scales: Vec<Tensor<T>>,
    pub label: Label,
    pub mask: Option<Mask>,
}

impl<T: Real> FeatureSample<T> {
    /// Checks `H_{i+1} = H_i / 2` (same for `W`), and that a mask at the
    /// finest resolution is present exactly when the sample is anomalous.
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Contract(format!("sample {} has no feature scales", self.id)));
        }
        let dims = self.scales.iter().map(|s| s.chw()).collect::<Result<Vec<_>>>()?;
        for w in dims.windows(2) {
            let ((_, h0, w0), (_, h1, w1)) = (w[0], w[1]);
            if h1 != h0 / 2 || w1 != w0 / 2 {
                return Err(Error::Contract(format!(
                    "sample {}: spatial dims must halve per scale, got {}x{} then {}x{}",
                    self.id, h0, w0, h1, w1
                )));
            }
        }
        match (&self.mask, self.label) {
            (None, Label::Normal) => Ok(()),
            (Some(m), Label::Anomalous) => {
                let (_, h, w) = dims[0];
                if (m.height, m.width) != (h, w) {
                    return Err(Error::dim("sample mask", &[m.height, m.width], &[h, w]));
                }
                Ok(())
            }
            (Some(_), Label::Normal) => Err(Error::Contract(format!(
                "sample {} is normal but carries a mask",
                self.id
            ))),
            (None, Label::Anomalous) => Err(Error::Contract(format!(
                "sample {} is anomalous but has no mask",
                self.id
            ))),
        }
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    /// `(D, H, W)` of every scale.
    pub fn geometry(&self) -> Vec<(usize, usize, usize)> {
        self.scales.iter().map(|s| s.chw().unwrap_or((0, 0, 0))).collect()
    }

    pub fn cast<U: Real>(&self) -> FeatureSample<U> {
        FeatureSample {
            id: self.id,
            class_id: self.class_id,
            scales: self.scales.iter().map(|s| s.cast()).collect(),
            label: self.label,
            mask: self.mask.clone(),
        }
    }
}

/// Several samples stacked in row layout: scale `i` becomes a
/// `[B * H_i * W_i, D_i]` matrix, sample-major.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub size: usize,
    pub scales: Vec<Tensor<T>>,
    pub geometry: Vec<(usize, usize, usize)>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(samples: &[&FeatureSample<T>]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("empty batch".into()))?;
        let geometry = first.geometry();
        for s in samples {
            if s.geometry() != geometry {
                return Err(Error::Contract(format!(
                    "sample {} has geometry {:?}, batch expects {:?}",
                    s.id,
                    s.geometry(),
                    geometry
                )));
            }
        }
        let mut scales = Vec::with_capacity(geometry.len());
        for (i, &(d, h, w)) in geometry.iter().enumerate() {
            let mut data = Vec::with_capacity(samples.len() * d * h * w);
            for s in samples {
                data.extend_from_slice(s.scales[i].chw_to_rows()?.data());
            }
            scales.push(Tensor::new(alloc::vec![samples.len() * h * w, d], data)?);
        }
        Ok(Batch {
            size: samples.len(),
            scales,
            geometry,
        })
    }

    pub fn positions(&self, scale: usize) -> usize {
        let (_, h, w) = self.geometry[scale];
        h * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(label: Label, mask: Option<Mask>) -> FeatureSample<f32> {
        FeatureSample {
            id: 0,
            class_id: 0,
            scales: vec![Tensor::zeros(&[2, 4, 4]), Tensor::zeros(&[3, 2, 2])],
            label,
            mask,
        }
    }

    #[test]
    fn mask_presence_must_follow_label() {
        assert!(sample(Label::Normal, None).validate().is_ok());
        let m = Mask::new(4, 4, vec![0; 16]).unwrap();
        assert!(sample(Label::Anomalous, Some(m.clone())).validate().is_ok());
        assert!(sample(Label::Normal, Some(m)).validate().is_err());
        assert!(sample(Label::Anomalous, None).validate().is_err());
    }

    #[test]
    fn scales_must_halve() {
        let mut s = sample(Label::Normal, None);
        s.scales[1] = Tensor::zeros(&[3, 3, 2]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn mask_resample_nearest() {
        let m = Mask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let r = m.resample(4, 4);
        assert_eq!(r.data, vec![1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]);
    }
}
