use ndarray::Array2;

use crate::data::Dataset;
use crate::discriminator::Discriminator;
use crate::metrics::{
    avg_hausdorff, binarize, classification_metrics, overlap_metrics, ssim, MetricReport,
};
use crate::nn::Mode;
use crate::segmentor::{tensor_to_maps, Segmentor};
use crate::{Error, Result};

use super::batch_images;

const EVAL_BATCH: usize = 16;

/// Probability maps and (with a discriminator) predicted classes for every
/// sample, in evaluation mode. The discriminator sees the predicted mask.
fn predict_all(
    seg: &Segmentor,
    disc: Option<&Discriminator>,
    data: &Dataset,
) -> Result<(Vec<Array2<f32>>, Option<Vec<usize>>)> {
    let mut maps = Vec::with_capacity(data.len());
    let mut classes = disc.map(|_| Vec::with_capacity(data.len()));
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let x = batch_images(data, chunk, seg)?;
        let out = seg.forward(&x, Mode::Eval)?;
        if let (Some(d), Some(classes)) = (disc, classes.as_mut()) {
            let dout = d.forward(&x, &out.final_map, Mode::Eval)?;
            classes.extend(dout.predicted_classes()?);
        }
        maps.extend(tensor_to_maps(&out.final_map)?);
    }
    Ok((maps, classes))
}

/// Metrics of `seg` (and optionally `disc`) on `data`.
pub fn evaluate(
    seg: &Segmentor,
    disc: Option<&Discriminator>,
    data: &Dataset,
    threshold: f64,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    let (maps, classes) = predict_all(seg, disc, data)?;
    evaluate_maps(data, &maps, classes.as_deref(), threshold)
}

/// Metrics of precomputed probability maps against the masks of `data`.
/// Segmentation metrics are means over images.
pub fn evaluate_maps(
    data: &Dataset,
    maps: &[Array2<f32>],
    classes: Option<&[usize]>,
    threshold: f64,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty split".into()));
    }
    if maps.len() != data.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} samples",
            maps.len(),
            data.len()
        )));
    }
    let mut sums = [0.0f64; 9];
    for (sample, map) in data.samples.iter().zip(maps) {
        let truth = sample
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample {} has no mask", sample.source_id)))?;
        let pred = binarize(map, threshold)?;
        let o = overlap_metrics(truth, &pred)?;
        let vals = [
            o.ds,
            o.ji,
            ssim(truth, &pred)?,
            o.f1,
            avg_hausdorff(truth, &pred)?,
            o.sn,
            o.sp,
            o.pr,
            o.rc,
        ];
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    let n = data.len() as f64;
    let [ds, ji, ssim, f1, hd, sn, sp, pr, rc] = sums.map(|s| s / n);
    let classification = match classes {
        Some(pred) => {
            let truth: Vec<usize> = data
                .samples
                .iter()
                .map(|s| {
                    s.class_label.ok_or_else(|| {
                        Error::Data(format!("sample {} has no class label", s.source_id))
                    })
                })
                .collect::<Result<_>>()?;
            Some(classification_metrics(pred, &truth, data.n_classes().max(1))?)
        }
        None => None,
    };
    Ok(MetricReport {
        ds,
        ji,
        ssim,
        f1,
        hd,
        sn,
        sp,
        pr,
        rc,
        classification,
    })
}

/// Mean Dice and, with a discriminator, classification accuracy.
pub fn validation_scores(
    seg: &Segmentor,
    disc: Option<&Discriminator>,
    data: &Dataset,
    threshold: f64,
) -> Result<(f64, Option<f64>)> {
    let (maps, classes) = predict_all(seg, disc, data)?;
    let mut dice = 0.0;
    for (sample, map) in data.samples.iter().zip(&maps) {
        let truth = sample
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("sample {} has no mask", sample.source_id)))?;
        dice += overlap_metrics(truth, &binarize(map, threshold)?)?.ds;
    }
    let acc = classes.map(|pred| {
        let hits = data
            .samples
            .iter()
            .zip(&pred)
            .filter(|(s, p)| s.class_label == Some(**p))
            .count();
        hits as f64 / data.len() as f64
    });
    Ok((dice / data.len() as f64, acc))
}
