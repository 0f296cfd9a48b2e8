//! Scoring, synthetic phantoms, overlays, and batch evaluation.

mod batch;
mod report;

use crate::error::{Error, Result};
use crate::geometry::{bbox_from_mask, bbox_iou};
use crate::ingest::SliceImage;
use crate::pipeline::{run_pipeline, DetectorBackend, PipelineOutput, SegmenterBackend};
use crate::preprocess::{BinaryMask, RgbImage};

pub use batch::{
    config_digest, evaluate_batch, load_manifest, BatchOptions, CaseSpec, DetectorChoice,
    SliceSelector,
};
pub use report::{Aggregates, CaseResult, Report, RunMetadata, SkippedCase, REPORT_SCHEMA};

/// Dice similarity coefficient: `2 |a ∩ b| / (|a| + |b|)`.
///
/// Two empty masks agree perfectly (1.0); an empty mask against a
/// non-empty one scores 0.0.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimMismatch {
            left_width: a.width(),
            left_height: a.height(),
            right_width: b.width(),
            right_height: b.height(),
        });
    }
    let mut overlap = 0usize;
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        overlap += (x & y) as usize;
    }
    let total = a.foreground_count() + b.foreground_count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / total as f64)
}

/// Synthetic disk case with exactly known ground truth: `bg_intensity`
/// everywhere, `fg_intensity` where `(r - cr)^2 + (c - cc)^2 <= radius^2`,
/// plus the matching mask.
pub fn phantom(
    width: usize,
    height: usize,
    disk_center: (usize, usize),
    radius: f64,
    fg_intensity: f64,
    bg_intensity: f64,
) -> Result<(SliceImage, BinaryMask)> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::GeometryError(format!(
            "disk radius must be positive, got {radius}"
        )));
    }
    for (name, v) in [("fg_intensity", fg_intensity), ("bg_intensity", bg_intensity)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::DomainError(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if fg_intensity == bg_intensity {
        return Err(Error::DomainError(
            "phantom foreground and background intensities must differ".to_string(),
        ));
    }
    let (cr, cc) = disk_center;
    if cr >= height || cc >= width {
        return Err(Error::GeometryError(format!(
            "disk center ({cr}, {cc}) outside {width}x{height} image"
        )));
    }
    let fits = cr as f64 - radius >= 0.0
        && cr as f64 + radius <= (height - 1) as f64
        && cc as f64 - radius >= 0.0
        && cc as f64 + radius <= (width - 1) as f64;
    if !fits {
        return Err(Error::GeometryError(format!(
            "disk of radius {radius} at ({cr}, {cc}) exceeds {width}x{height} bounds"
        )));
    }
    let r2 = radius * radius;
    let inside = |row: usize, col: usize| {
        let dr = row as f64 - cr as f64;
        let dc = col as f64 - cc as f64;
        dr * dr + dc * dc <= r2
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            pixels.push(if inside(row, col) {
                fg_intensity
            } else {
                bg_intensity
            });
        }
    }
    let slice = SliceImage::new(width, height, pixels)?;
    let mask = BinaryMask::from_fn(width, height, inside);
    Ok((slice, mask))
}

/// Run the cascade on one case and score it, keeping the raw pipeline
/// output for overlay rendering.
pub fn evaluate_case_with_output(
    case_id: &str,
    image: &RgbImage,
    gt: &BinaryMask,
    detector: &dyn DetectorBackend,
    segmenter: &dyn SegmenterBackend,
    threshold: f64,
) -> Result<(CaseResult, PipelineOutput)> {
    if gt.width() != image.width() || gt.height() != image.height() {
        return Err(Error::DimMismatch {
            left_width: gt.width(),
            left_height: gt.height(),
            right_width: image.width(),
            right_height: image.height(),
        }
        .for_case(case_id));
    }
    let output =
        run_pipeline(image, detector, segmenter, threshold).map_err(|e| e.for_case(case_id))?;
    let score = dice(&output.mask, gt)?;
    let gt_box = if gt.is_empty() {
        None
    } else {
        Some(bbox_from_mask(gt)?)
    };
    let iou = match (&output.detection, &gt_box) {
        (Some(d), Some(g)) => Some(bbox_iou(&d.bbox, g)),
        _ => None,
    };
    let result = CaseResult {
        case_id: case_id.to_string(),
        dice: score,
        detect_ms: output.timings.detect_ms,
        segment_ms: output.timings.segment_ms,
        total_ms: output.timings.total_ms,
        detection_missed: output.detection.is_none(),
        bbox_iou_vs_gt: iou,
        snr_used: None,
        seed_used: None,
    };
    Ok((result, output))
}

/// Run the cascade on one case and score it with DICE and per-stage
/// latency against the ground-truth mask.
pub fn evaluate_case(
    case_id: &str,
    image: &RgbImage,
    gt: &BinaryMask,
    detector: &dyn DetectorBackend,
    segmenter: &dyn SegmenterBackend,
    threshold: f64,
) -> Result<CaseResult> {
    evaluate_case_with_output(case_id, image, gt, detector, segmenter, threshold)
        .map(|(result, _)| result)
}

const PRED_COLOR: [u8; 3] = [230, 60, 60];
const GT_COLOR: [u8; 3] = [60, 200, 60];
const AGREE_COLOR: [u8; 3] = [240, 220, 60];

/// Foreground pixels with at least one 4-neighbor background pixel;
/// positions outside the image count as background.
fn boundary(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |row, col| {
        if !mask.get(row, col) {
            return false;
        }
        let (w, h) = (mask.width(), mask.height());
        let neighbors = [
            (row.wrapping_sub(1), col),
            (row + 1, col),
            (row, col.wrapping_sub(1)),
            (row, col + 1),
        ];
        neighbors
            .into_iter()
            .any(|(nr, nc)| nr >= h || nc >= w || !mask.get(nr, nc))
    })
}

/// Draw prediction and ground-truth boundaries over the base image:
/// prediction-only boundary pixels in red, ground-truth-only in green,
/// pixels on both boundaries in yellow.
pub fn render_overlay(image: &RgbImage, pred: &BinaryMask, gt: &BinaryMask) -> Result<RgbImage> {
    for mask in [pred, gt] {
        if mask.width() != image.width() || mask.height() != image.height() {
            return Err(Error::DimMismatch {
                left_width: image.width(),
                left_height: image.height(),
                right_width: mask.width(),
                right_height: mask.height(),
            });
        }
    }
    let pred_edge = boundary(pred);
    let gt_edge = boundary(gt);
    let mut out = image.clone();
    for row in 0..image.height() {
        for col in 0..image.width() {
            match (pred_edge.get(row, col), gt_edge.get(row, col)) {
                (true, true) => out.set(row, col, AGREE_COLOR),
                (true, false) => out.set(row, col, PRED_COLOR),
                (false, true) => out.set(row, col, GT_COLOR),
                (false, false) => {}
            }
        }
    }
    Ok(out)
}
