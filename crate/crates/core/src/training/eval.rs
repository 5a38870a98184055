use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::resize_bilinear_forward;
use crate::mask::IndexMask;
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::network::AquaNet;
use crate::taxonomy::ClassTaxonomy;
use crate::tensor::Tensor;

use super::trainer::TrainPair;

/// Anything that maps an image to per-pixel class scores.
pub trait SegPredictor: Sync {
    /// Spatial sizes the predictor accepts must be multiples of this.
    fn stride(&self) -> usize {
        1
    }

    /// `K×H×W` scores for a `3×H×W` image.
    fn predict_logits(&self, image: &Tensor) -> Result<Tensor>;
}

impl SegPredictor for AquaNet {
    fn stride(&self) -> usize {
        32
    }

    fn predict_logits(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward(image)?.0)
    }
}

/// Nearest multiple of `stride` to `n`, at least `stride`.
pub fn stride_valid(n: usize, stride: usize) -> usize {
    (((n as f64) / stride as f64).round() as usize).max(1) * stride
}

/// Whole-image inference: resize to a stride-valid size, predict, take the
/// per-pixel argmax and bring it back to the original size by nearest
/// neighbour.
pub fn predict_mask(predictor: &dyn SegPredictor, image: &Tensor) -> Result<IndexMask> {
    let (_, h, w) = image.expect_chw("image")?;
    let s = predictor.stride();
    let (ph, pw) = (stride_valid(h, s), stride_valid(w, s));
    let input = resize_bilinear_forward(image, ph, pw);
    let logits = predictor.predict_logits(&input)?;
    let (_, lh, lw) = logits.expect_chw("logits")?;
    Ok(IndexMask::new(lh, lw, logits.argmax_channels())?.resize_nearest(h, w))
}

/// Confusion matrix of `predictor` over `data`, images processed in parallel.
pub fn confusion(predictor: &dyn SegPredictor, data: &[TrainPair], taxonomy: &ClassTaxonomy) -> Result<ConfusionMatrix> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("nothing to evaluate".into()));
    }
    let k = taxonomy.num_classes();
    let parts: Vec<Result<ConfusionMatrix>> = data
        .par_iter()
        .map(|pair| {
            let pred = predict_mask(predictor, &pair.image)?;
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&pred, &pair.mask, taxonomy.ignore_id())?;
            Ok(cm)
        })
        .collect();
    let mut cm = ConfusionMatrix::new(k);
    for p in parts {
        cm.merge(&p?)?;
    }
    Ok(cm)
}

pub fn evaluate(predictor: &dyn SegPredictor, data: &[TrainPair], taxonomy: &ClassTaxonomy) -> Result<MetricsReport> {
    MetricsReport::from_confusion(confusion(predictor, data, taxonomy)?, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_rounding() {
        assert_eq!(stride_valid(64, 32), 64);
        assert_eq!(stride_valid(70, 32), 64);
        assert_eq!(stride_valid(90, 32), 96);
        assert_eq!(stride_valid(5, 32), 32);
    }
}
