//! The detect → prompt → segment cascade over pluggable backends.
//!
//! A detector proposes boxes, the highest-confidence box is reduced to its
//! center coordinate, and that point prompts the segmenter, whose
//! probability mask is thresholded into the final binary prediction. The
//! classical backends here (oracle detector, region-growing segmenter) make
//! the cascade runnable and verifiable without any model files.

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::geometry::{bbox_center, bbox_from_mask, BBox, PromptPoint};
use crate::preprocess::{BinaryMask, RgbImage};

/// Pipeline stage labels used in failure reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Detect,
    Segment,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Detect => "detect",
            Stage::Segment => "segment",
        })
    }
}

/// One detector proposal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub confidence: f64,
    pub class_id: i64,
}

/// Per-pixel foreground probabilities emitted by a segmenter.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbabilityMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<ProbabilityMask> {
        if probs.len() != width * height {
            return Err(Error::DomainError(format!(
                "probability count {} does not match {width}x{height}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::DomainError(format!(
                "probability {bad} outside [0, 1]"
            )));
        }
        Ok(ProbabilityMask {
            width,
            height,
            probs,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Whether a backend may be invoked from several threads at once. The batch
/// runner serializes calls into single-threaded backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Concurrency {
    Concurrent,
    SingleThreaded,
}

/// Produces candidate tumor boxes for an image.
pub trait DetectorBackend: Send + Sync {
    fn name(&self) -> String;
    fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>>;
    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Produces a probability mask for an image given a point prompt.
pub trait SegmenterBackend: Send + Sync {
    fn name(&self) -> String;
    fn segment(&self, image: &RgbImage, prompt: PromptPoint) -> Result<ProbabilityMask>;
    fn concurrency(&self) -> Concurrency {
        Concurrency::Concurrent
    }
}

/// Wall-clock stage durations in milliseconds. `total_ms` covers the whole
/// cascade including orchestration, so it is at least `detect + segment`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageTimings {
    pub detect_ms: f64,
    pub segment_ms: f64,
    pub total_ms: f64,
}

/// Result of one cascade run. A detector that proposes nothing is data,
/// not an error: `detection` is `None` and the mask is empty.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub detection: Option<Detection>,
    pub probability: Option<ProbabilityMask>,
    pub mask: BinaryMask,
    pub timings: StageTimings,
}

/// The detection with maximum confidence; ties broken by larger box area,
/// then by smallest (row_min, col_min).
pub fn select_primary_detection(detections: &[Detection]) -> Result<Detection> {
    let mut best = detections.first().copied().ok_or(Error::NoDetection)?;
    for &candidate in &detections[1..] {
        let better = candidate.confidence > best.confidence
            || (candidate.confidence == best.confidence
                && (candidate.bbox.area() > best.bbox.area()
                    || (candidate.bbox.area() == best.bbox.area()
                        && (candidate.bbox.row_min, candidate.bbox.col_min)
                            < (best.bbox.row_min, best.bbox.col_min))));
        if better {
            best = candidate;
        }
    }
    Ok(best)
}

/// Binarize probabilities with the `>= threshold` rule.
pub fn threshold_mask(probs: &ProbabilityMask, threshold: f64) -> Result<BinaryMask> {
    check_threshold(threshold)?;
    let bits = probs.probs().iter().map(|&p| (p >= threshold) as u8).collect();
    BinaryMask::new(probs.width(), probs.height(), bits)
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::DomainError(format!(
            "threshold must lie strictly between 0 and 1, got {threshold}"
        )));
    }
    Ok(())
}

fn backend_failure(stage: Stage, backend: &str, err: Error) -> Error {
    Error::BackendFailure {
        stage,
        backend: backend.to_string(),
        message: err.to_string(),
    }
}

/// Run detect → select → center prompt → segment → threshold.
pub fn run_pipeline(
    image: &RgbImage,
    detector: &dyn DetectorBackend,
    segmenter: &dyn SegmenterBackend,
    threshold: f64,
) -> Result<PipelineOutput> {
    check_threshold(threshold)?;
    let started = Instant::now();

    let detect_started = Instant::now();
    let detections = detector
        .detect(image)
        .map_err(|e| backend_failure(Stage::Detect, &detector.name(), e))?;
    let detect_ms = detect_started.elapsed().as_secs_f64() * 1e3;

    for d in &detections {
        if !d.bbox.in_bounds(image.width(), image.height()) {
            return Err(Error::BackendFailure {
                stage: Stage::Detect,
                backend: detector.name(),
                message: format!(
                    "box {:?} out of bounds for {}x{} image",
                    d.bbox.as_array(),
                    image.width(),
                    image.height()
                ),
            });
        }
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::BackendFailure {
                stage: Stage::Detect,
                backend: detector.name(),
                message: format!("confidence {} outside [0, 1]", d.confidence),
            });
        }
    }

    if detections.is_empty() {
        return Ok(PipelineOutput {
            detection: None,
            probability: None,
            mask: BinaryMask::zeros(image.width(), image.height()),
            timings: StageTimings {
                detect_ms,
                segment_ms: 0.0,
                total_ms: started.elapsed().as_secs_f64() * 1e3,
            },
        });
    }

    let primary = select_primary_detection(&detections)?;
    let prompt = bbox_center(&primary.bbox);
    debug_assert!(primary.bbox.contains(prompt.row, prompt.col));

    let segment_started = Instant::now();
    let probability = segmenter
        .segment(image, prompt)
        .map_err(|e| backend_failure(Stage::Segment, &segmenter.name(), e))?;
    let segment_ms = segment_started.elapsed().as_secs_f64() * 1e3;

    if probability.width() != image.width() || probability.height() != image.height() {
        return Err(Error::BackendFailure {
            stage: Stage::Segment,
            backend: segmenter.name(),
            message: format!(
                "probability mask is {}x{}, image is {}x{}",
                probability.width(),
                probability.height(),
                image.width(),
                image.height()
            ),
        });
    }

    let mask = threshold_mask(&probability, threshold)?;
    Ok(PipelineOutput {
        detection: Some(primary),
        probability: Some(probability),
        mask,
        timings: StageTimings {
            detect_ms,
            segment_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Detector that always reports the ground-truth bounding box with
/// confidence 1. Isolates segmentation quality from detection quality.
#[derive(Debug, Clone)]
pub struct OracleDetector {
    bbox: BBox,
}

impl OracleDetector {
    pub fn new(gt_mask: &BinaryMask) -> Result<OracleDetector> {
        Ok(OracleDetector {
            bbox: bbox_from_mask(gt_mask)?,
        })
    }

    pub fn from_bbox(bbox: BBox) -> OracleDetector {
        OracleDetector { bbox }
    }
}

impl DetectorBackend for OracleDetector {
    fn name(&self) -> String {
        "oracle".to_string()
    }

    fn detect(&self, _image: &RgbImage) -> Result<Vec<Detection>> {
        Ok(vec![Detection {
            bbox: self.bbox,
            confidence: 1.0,
            class_id: 0,
        }])
    }
}

/// Segmenter that returns a fixed mask as hard probabilities, ignoring the
/// prompt. Used for identity-cascade checks.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    mask: BinaryMask,
}

impl OracleSegmenter {
    pub fn new(mask: BinaryMask) -> OracleSegmenter {
        OracleSegmenter { mask }
    }
}

impl SegmenterBackend for OracleSegmenter {
    fn name(&self) -> String {
        "mask-oracle".to_string()
    }

    fn segment(&self, _image: &RgbImage, _prompt: PromptPoint) -> Result<ProbabilityMask> {
        let probs = self.mask.bits().iter().map(|&b| b as f64).collect();
        ProbabilityMask::new(self.mask.width(), self.mask.height(), probs)
    }
}

/// Classical deterministic segmenter: 4-connected flood fill from the
/// prompt over pixels whose grayscale intensity stays within `tolerance`
/// of the seed intensity. Intensity is the channel mean mapped to [0, 1],
/// so region membership is invariant to monotonic rescaling of the image
/// when the tolerance is rescaled identically.
#[derive(Debug, Clone)]
pub struct RegionGrowSegmenter {
    tolerance: f64,
}

impl RegionGrowSegmenter {
    pub fn new(tolerance: f64) -> Result<RegionGrowSegmenter> {
        if !(tolerance.is_finite() && tolerance > 0.0) {
            return Err(Error::DomainError(format!(
                "region-grow tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(RegionGrowSegmenter { tolerance })
    }
}

impl SegmenterBackend for RegionGrowSegmenter {
    fn name(&self) -> String {
        format!("region-grow({})", self.tolerance)
    }

    fn segment(&self, image: &RgbImage, prompt: PromptPoint) -> Result<ProbabilityMask> {
        let (w, h) = (image.width(), image.height());
        if prompt.row >= h || prompt.col >= w {
            return Err(Error::PromptOutOfBounds {
                row: prompt.row,
                col: prompt.col,
                width: w,
                height: h,
            });
        }
        let seed = image.intensity(prompt.row, prompt.col);
        let mut inside = vec![0u8; w * h];
        let mut queue = VecDeque::new();
        inside[prompt.row * w + prompt.col] = 1;
        queue.push_back((prompt.row, prompt.col));
        while let Some((row, col)) = queue.pop_front() {
            let neighbors = [
                (row.wrapping_sub(1), col),
                (row + 1, col),
                (row, col.wrapping_sub(1)),
                (row, col + 1),
            ];
            for (nr, nc) in neighbors {
                if nr < h
                    && nc < w
                    && inside[nr * w + nc] == 0
                    && (image.intensity(nr, nc) - seed).abs() <= self.tolerance
                {
                    inside[nr * w + nc] = 1;
                    queue.push_back((nr, nc));
                }
            }
        }
        let probs = inside.into_iter().map(|b| b as f64).collect();
        ProbabilityMask::new(w, h, probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::phantom;
    use crate::preprocess::{colorize, normalize_intensity};

    fn det(conf: f64, bbox: BBox) -> Detection {
        Detection {
            bbox,
            confidence: conf,
            class_id: 0,
        }
    }

    #[test]
    fn select_single_detection() {
        let d = det(0.4, BBox::new(1, 1, 2, 2).unwrap());
        assert_eq!(select_primary_detection(&[d]).unwrap(), d);
    }

    #[test]
    fn select_argmax_confidence() {
        let dets = [
            det(0.3, BBox::new(0, 0, 1, 1).unwrap()),
            det(0.9, BBox::new(2, 2, 3, 3).unwrap()),
            det(0.5, BBox::new(4, 4, 5, 5).unwrap()),
        ];
        assert_eq!(select_primary_detection(&dets).unwrap().confidence, 0.9);
    }

    #[test]
    fn select_tie_break_by_area() {
        let small = det(0.8, BBox::new(0, 0, 2, 3).unwrap()); // area 12
        let large = det(0.8, BBox::new(5, 5, 9, 10).unwrap()); // area 30
        assert_eq!(
            select_primary_detection(&[small, large]).unwrap().bbox,
            large.bbox
        );
    }

    #[test]
    fn select_tie_break_by_origin() {
        let later = det(0.8, BBox::new(4, 4, 5, 5).unwrap());
        let earlier = det(0.8, BBox::new(0, 0, 1, 1).unwrap());
        assert_eq!(
            select_primary_detection(&[later, earlier]).unwrap().bbox,
            earlier.bbox
        );
    }

    #[test]
    fn select_empty_rejected() {
        assert!(matches!(
            select_primary_detection(&[]),
            Err(Error::NoDetection)
        ));
    }

    #[test]
    fn threshold_rules() {
        let probs = ProbabilityMask::new(2, 2, vec![0.6; 4]).unwrap();
        assert_eq!(threshold_mask(&probs, 0.5).unwrap().foreground_count(), 4);
        let probs = ProbabilityMask::new(2, 2, vec![0.5; 4]).unwrap();
        assert_eq!(threshold_mask(&probs, 0.5).unwrap().foreground_count(), 4);
        assert!(threshold_mask(&probs, 0.0).is_err());
        assert!(threshold_mask(&probs, 1.0).is_err());
    }

    #[test]
    fn threshold_matches_per_pixel_scan() {
        let probs: Vec<f64> = (0..64).map(|i| ((i * 37) % 101) as f64 / 100.0).collect();
        let pm = ProbabilityMask::new(8, 8, probs.clone()).unwrap();
        let mask = threshold_mask(&pm, 0.5).unwrap();
        for (i, &p) in probs.iter().enumerate() {
            assert_eq!(mask.bits()[i], (p >= 0.5) as u8);
        }
    }

    #[test]
    fn oracle_detector_reports_gt_box() {
        let gt = BinaryMask::from_fn(16, 16, |r, c| (r, c) == (3, 9));
        let oracle = OracleDetector::new(&gt).unwrap();
        let image = RgbImage::from_fn(16, 16, |_, _| [0, 0, 0]);
        let dets = oracle.detect(&image).unwrap();
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].bbox, BBox::new(3, 9, 3, 9).unwrap());
        assert_eq!(dets[0].confidence, 1.0);
        // Stateless: repeated calls agree.
        assert_eq!(oracle.detect(&image).unwrap(), dets);
        // The derived prompt lies inside the box.
        let p = bbox_center(&dets[0].bbox);
        assert!(dets[0].bbox.contains(p.row, p.col));
    }

    #[test]
    fn oracle_detector_rejects_empty_mask() {
        assert!(matches!(
            OracleDetector::new(&BinaryMask::zeros(4, 4)),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn region_grow_constant_image_covers_everything() {
        let image = RgbImage::from_fn(8, 8, |_, _| [100, 100, 100]);
        let seg = RegionGrowSegmenter::new(0.2).unwrap();
        let probs = seg
            .segment(&image, PromptPoint { row: 4, col: 4 })
            .unwrap();
        assert!(probs.probs().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn region_grow_recovers_phantom_disk() {
        let (slice, gt) = phantom(64, 64, (32, 32), 10.0, 0.8, 0.2).unwrap();
        let image = colorize(&normalize_intensity(&slice)).unwrap();
        let seg = RegionGrowSegmenter::new(0.2).unwrap();
        let probs = seg
            .segment(&image, PromptPoint { row: 32, col: 32 })
            .unwrap();
        let mask = threshold_mask(&probs, 0.5).unwrap();
        assert_eq!(mask, gt);
    }

    #[test]
    fn region_grow_tiny_tolerance_keeps_seed_only() {
        // Strictly varying ramp: every neighbor differs by more than the
        // tolerance, so only the seed pixel survives.
        let image = RgbImage::from_fn(8, 8, |r, c| {
            let v = (r * 8 + c) as u8 * 3;
            [v, v, v]
        });
        let seg = RegionGrowSegmenter::new(0.0001).unwrap();
        let probs = seg
            .segment(&image, PromptPoint { row: 3, col: 3 })
            .unwrap();
        let mask = threshold_mask(&probs, 0.5).unwrap();
        assert_eq!(mask.foreground_count(), 1);
        assert!(mask.get(3, 3));
    }

    #[test]
    fn region_grow_invariant_to_intensity_rescaling() {
        // Halving every channel and the tolerance together must keep the
        // region identical; the chosen values stay exact in f64.
        let image = RgbImage::from_fn(16, 16, |r, c| {
            let v = if (r as i32 - 8).pow(2) + (c as i32 - 8).pow(2) <= 16 {
                200
            } else {
                40
            };
            [v, v, v]
        });
        let halved = RgbImage::from_fn(16, 16, |r, c| {
            let [v, _, _] = image.get(r, c);
            [v / 2, v / 2, v / 2]
        });
        let prompt = PromptPoint { row: 8, col: 8 };
        let full = RegionGrowSegmenter::new(64.0 / 255.0)
            .unwrap()
            .segment(&image, prompt)
            .unwrap();
        let half = RegionGrowSegmenter::new(32.0 / 255.0)
            .unwrap()
            .segment(&halved, prompt)
            .unwrap();
        assert_eq!(full.probs(), half.probs());
    }

    #[test]
    fn region_grow_prompt_out_of_bounds() {
        let image = RgbImage::from_fn(8, 8, |_, _| [0, 0, 0]);
        let seg = RegionGrowSegmenter::new(0.1).unwrap();
        assert!(matches!(
            seg.segment(&image, PromptPoint { row: 8, col: 0 }),
            Err(Error::PromptOutOfBounds { .. })
        ));
    }

    #[test]
    fn identity_cascade_returns_gt_exactly() {
        let gt = BinaryMask::from_fn(32, 32, |r, c| (8..16).contains(&r) && (10..20).contains(&c));
        let image = RgbImage::from_fn(32, 32, |_, _| [50, 50, 50]);
        let out = run_pipeline(
            &image,
            &OracleDetector::new(&gt).unwrap(),
            &OracleSegmenter::new(gt.clone()),
            0.5,
        )
        .unwrap();
        assert_eq!(out.mask, gt);
        assert!(out.detection.is_some());
    }

    #[test]
    fn no_detection_is_data_not_error() {
        struct EmptyDetector;
        impl DetectorBackend for EmptyDetector {
            fn name(&self) -> String {
                "empty".to_string()
            }
            fn detect(&self, _image: &RgbImage) -> Result<Vec<Detection>> {
                Ok(Vec::new())
            }
        }
        let image = RgbImage::from_fn(16, 16, |_, _| [0, 0, 0]);
        let seg = RegionGrowSegmenter::new(0.2).unwrap();
        let out = run_pipeline(&image, &EmptyDetector, &seg, 0.5).unwrap();
        assert!(out.detection.is_none());
        assert!(out.probability.is_none());
        assert!(out.mask.is_empty());
        assert_eq!(out.timings.segment_ms, 0.0);
    }

    #[test]
    fn phantom_end_to_end_exact_at_infinite_snr() {
        let (slice, gt) = phantom(64, 64, (30, 34), 9.0, 0.8, 0.2).unwrap();
        let image = colorize(&normalize_intensity(&slice)).unwrap();
        let out = run_pipeline(
            &image,
            &OracleDetector::new(&gt).unwrap(),
            &RegionGrowSegmenter::new(0.2).unwrap(),
            0.5,
        )
        .unwrap();
        assert_eq!(out.mask, gt);
    }

    #[test]
    fn backend_failures_carry_stage_labels() {
        struct FailingDetector;
        impl DetectorBackend for FailingDetector {
            fn name(&self) -> String {
                "failing".to_string()
            }
            fn detect(&self, _image: &RgbImage) -> Result<Vec<Detection>> {
                Err(Error::ModelLoadError("weights missing".to_string()))
            }
        }
        let image = RgbImage::from_fn(8, 8, |_, _| [0, 0, 0]);
        let seg = RegionGrowSegmenter::new(0.2).unwrap();
        let err = run_pipeline(&image, &FailingDetector, &seg, 0.5).unwrap_err();
        match err {
            Error::BackendFailure { stage, .. } => assert_eq!(stage, Stage::Detect),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn out_of_bounds_detection_is_backend_failure() {
        struct BadBoxDetector;
        impl DetectorBackend for BadBoxDetector {
            fn name(&self) -> String {
                "bad-box".to_string()
            }
            fn detect(&self, _image: &RgbImage) -> Result<Vec<Detection>> {
                Ok(vec![Detection {
                    bbox: BBox::new(0, 0, 100, 100).unwrap(),
                    confidence: 0.9,
                    class_id: 0,
                }])
            }
        }
        let image = RgbImage::from_fn(8, 8, |_, _| [0, 0, 0]);
        let seg = RegionGrowSegmenter::new(0.2).unwrap();
        assert!(matches!(
            run_pipeline(&image, &BadBoxDetector, &seg, 0.5),
            Err(Error::BackendFailure {
                stage: Stage::Detect,
                ..
            })
        ));
    }

    #[test]
    fn rerun_is_bit_identical_excluding_timings() {
        let (slice, gt) = phantom(48, 48, (24, 24), 8.0, 0.9, 0.1).unwrap();
        let image = colorize(&normalize_intensity(&slice)).unwrap();
        let detector = OracleDetector::new(&gt).unwrap();
        let segmenter = RegionGrowSegmenter::new(0.2).unwrap();
        let a = run_pipeline(&image, &detector, &segmenter, 0.5).unwrap();
        let b = run_pipeline(&image, &detector, &segmenter, 0.5).unwrap();
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.detection, b.detection);
        assert_eq!(
            a.probability.as_ref().map(|p| p.probs()),
            b.probability.as_ref().map(|p| p.probs())
        );
    }
}
