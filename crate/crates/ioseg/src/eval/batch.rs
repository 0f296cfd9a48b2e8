//! Case manifests and the parallel batch runner.
//!
//! Cases are processed in deterministic order (sorted by case id) and all
//! per-case randomness derives from the manifest seed or the batch seed
//! plus the case index, so serial and parallel runs produce identical data.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{CaseResult, Report, RunMetadata, SkippedCase};
use super::{evaluate_case_with_output, render_overlay};
use crate::augment::{add_gaussian_noise, NoiseSpec, PRNG_NAME};
use crate::error::{Error, Result};
use crate::geometry::largest_component;
use crate::ingest::{
    brats_label_semantics, load_nifti, load_nifti_with_modality, LabelSemantics, Modality,
};
use crate::pipeline::{
    Concurrency, Detection, DetectorBackend, OracleDetector, SegmenterBackend,
};
use crate::preprocess::{
    colorize, extract_label_mask, normalize_intensity, resize_binary_mask, resize_image,
    save_png, BinaryMask, RgbImage,
};

/// Which axial plane to evaluate: an explicit index or the middle slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SliceSelector {
    Index(usize),
    Named(String),
}

impl Default for SliceSelector {
    fn default() -> Self {
        SliceSelector::Named("middle".to_string())
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSpec {
    pub case_id: String,
    pub image_path: PathBuf,
    pub gt_seg_path: PathBuf,
    #[serde(default)]
    pub modality: Option<Modality>,
    #[serde(default)]
    pub slice_index: SliceSelector,
    #[serde(default)]
    pub snr: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

/// Read a JSON case manifest: a list of [`CaseSpec`] rows with unique ids.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<CaseSpec>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let cases: Vec<CaseSpec> = serde_json::from_str(&text)
        .map_err(|e| Error::CaseManifest(format!("{}: {e}", path.display())))?;
    validate_cases(&cases)?;
    Ok(cases)
}

fn validate_cases(cases: &[CaseSpec]) -> Result<()> {
    if cases.is_empty() {
        return Err(Error::CaseManifest("manifest holds no cases".to_string()));
    }
    let mut ids = std::collections::BTreeSet::new();
    for case in cases {
        if !ids.insert(&case.case_id) {
            return Err(Error::CaseManifest(format!(
                "duplicate case id '{}'",
                case.case_id
            )));
        }
        if let SliceSelector::Named(name) = &case.slice_index {
            if name != "middle" {
                return Err(Error::CaseManifest(format!(
                    "case '{}': slice_index must be an integer or \"middle\", got \"{name}\"",
                    case.case_id
                )));
            }
        }
        if let Some(snr) = case.snr {
            if !(snr.is_finite() && snr > 0.0) {
                return Err(Error::CaseManifest(format!(
                    "case '{}': snr must be positive, got {snr}",
                    case.case_id
                )));
            }
        }
    }
    Ok(())
}

/// Detector selection for a batch. The oracle is constructed per case from
/// that case's ground-truth mask.
#[derive(Clone)]
pub enum DetectorChoice {
    Oracle,
    Backend(Arc<dyn DetectorBackend>),
}

impl DetectorChoice {
    fn identity(&self) -> String {
        match self {
            DetectorChoice::Oracle => "oracle".to_string(),
            DetectorChoice::Backend(b) => b.name(),
        }
    }
}

/// Batch configuration. `jobs = 0` uses the default thread pool; `strict`
/// turns per-case failures into batch failures instead of skip rows.
#[derive(Clone)]
pub struct BatchOptions {
    pub detector: DetectorChoice,
    pub segmenter: Arc<dyn SegmenterBackend>,
    pub threshold: f64,
    pub default_snr: Option<f64>,
    pub default_seed: u64,
    pub et_labels: Vec<u32>,
    pub semantics: LabelSemantics,
    pub eval_native: bool,
    pub per_component: bool,
    pub clamp: bool,
    pub target_size: usize,
    pub jobs: usize,
    pub strict: bool,
    pub overlay_dir: Option<PathBuf>,
}

impl BatchOptions {
    pub fn new(detector: DetectorChoice, segmenter: Arc<dyn SegmenterBackend>) -> BatchOptions {
        BatchOptions {
            detector,
            segmenter,
            threshold: 0.5,
            default_snr: None,
            default_seed: 0,
            et_labels: vec![4],
            semantics: brats_label_semantics(),
            eval_native: false,
            per_component: false,
            clamp: true,
            target_size: 256,
            jobs: 0,
            strict: false,
            overlay_dir: None,
        }
    }
}

/// Hex digest (first 16 chars of SHA-256) of any serializable value.
pub fn config_digest_of<T: Serialize>(value: &T) -> Result<String> {
    let json = serde_json::to_string(value)?;
    let hash = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(16);
    for byte in hash.iter().take(8) {
        hex.push_str(&format!("{byte:02x}"));
    }
    Ok(hex)
}

/// Stable hash of the resolved configuration. Execution-only knobs (jobs,
/// strictness, output locations) are excluded so that runs whose data
/// outputs must agree also agree on the digest.
pub fn config_digest(cases: &[CaseSpec], opts: &BatchOptions) -> Result<String> {
    #[derive(Serialize)]
    struct DigestInput<'a> {
        cases: &'a [CaseSpec],
        detector: String,
        segmenter: String,
        threshold: f64,
        default_snr: Option<f64>,
        default_seed: u64,
        et_labels: &'a [u32],
        eval_native: bool,
        per_component: bool,
        clamp: bool,
        target_size: usize,
        prng: &'static str,
    }
    config_digest_of(&DigestInput {
        cases,
        detector: opts.detector.identity(),
        segmenter: opts.segmenter.name(),
        threshold: opts.threshold,
        default_snr: opts.default_snr,
        default_seed: opts.default_seed,
        et_labels: &opts.et_labels,
        eval_native: opts.eval_native,
        per_component: opts.per_component,
        clamp: opts.clamp,
        target_size: opts.target_size,
        prng: PRNG_NAME,
    })
}

/// Detector used when the oracle has no ground truth to report: proposes
/// nothing, producing the defined no-detection path.
struct SilentDetector;

impl DetectorBackend for SilentDetector {
    fn name(&self) -> String {
        "oracle".to_string()
    }

    fn detect(&self, _image: &RgbImage) -> Result<Vec<Detection>> {
        Ok(Vec::new())
    }
}

struct SerializedDetector {
    inner: Arc<dyn DetectorBackend>,
    lock: Mutex<()>,
}

impl DetectorBackend for SerializedDetector {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn detect(&self, image: &RgbImage) -> Result<Vec<Detection>> {
        let _guard = self.lock.lock().expect("backend lock poisoned");
        self.inner.detect(image)
    }
}

struct SerializedSegmenter {
    inner: Arc<dyn SegmenterBackend>,
    lock: Mutex<()>,
}

impl SegmenterBackend for SerializedSegmenter {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn segment(
        &self,
        image: &RgbImage,
        prompt: crate::geometry::PromptPoint,
    ) -> Result<crate::pipeline::ProbabilityMask> {
        let _guard = self.lock.lock().expect("backend lock poisoned");
        self.inner.segment(image, prompt)
    }
}

/// The fully prepared inputs for one case.
struct PreparedCase {
    image: RgbImage,
    gt: BinaryMask,
    snr_used: Option<f64>,
    seed_used: Option<u64>,
}

fn prepare_case(spec: &CaseSpec, index: usize, opts: &BatchOptions) -> Result<PreparedCase> {
    let image_volume = match spec.modality {
        Some(m) => load_nifti_with_modality(&spec.image_path, m)?,
        None => load_nifti(&spec.image_path)?,
    };
    let seg_volume = load_nifti_with_modality(&spec.gt_seg_path, Modality::Seg)?;

    let z = match &spec.slice_index {
        SliceSelector::Index(i) => *i,
        SliceSelector::Named(_) => image_volume.middle_slice_index(),
    };
    let slice = image_volume.axial_slice(z)?;
    let label_mask = seg_volume.axial_mask(z, &opts.semantics)?;
    if slice.width() != label_mask.width() || slice.height() != label_mask.height() {
        return Err(Error::DimMismatch {
            left_width: slice.width(),
            left_height: slice.height(),
            right_width: label_mask.width(),
            right_height: label_mask.height(),
        });
    }
    let gt_native = extract_label_mask(&label_mask, &opts.et_labels);

    let normalized = normalize_intensity(&slice);
    let (snr_used, seed_used, degraded) = match spec.snr.or(opts.default_snr) {
        None => (None, None, normalized),
        Some(snr) => {
            let seed = spec
                .seed
                .unwrap_or_else(|| opts.default_seed.wrapping_add(index as u64));
            // The noise foreground is the ground-truth region; when there is
            // no tumor the whole slice stands in as signal.
            let fg = if gt_native.is_empty() {
                BinaryMask::filled(gt_native.width(), gt_native.height())
            } else {
                gt_native.clone()
            };
            let noise = NoiseSpec::new(snr, seed)?.with_clamp(opts.clamp);
            let noisy = add_gaussian_noise(&normalized, &fg, &noise)?;
            (Some(snr), Some(seed), noisy)
        }
    };

    let rgb = colorize(&degraded)?;
    let (image, gt) = if opts.eval_native {
        (rgb, gt_native)
    } else {
        (
            resize_image(&rgb, opts.target_size, opts.target_size),
            resize_binary_mask(&gt_native, opts.target_size, opts.target_size),
        )
    };
    Ok(PreparedCase {
        image,
        gt,
        snr_used,
        seed_used,
    })
}

fn process_case(
    spec: &CaseSpec,
    index: usize,
    opts: &BatchOptions,
    segmenter: &Arc<dyn SegmenterBackend>,
) -> Result<CaseResult> {
    let prepared = prepare_case(spec, index, opts)?;

    let detector: Arc<dyn DetectorBackend> = match &opts.detector {
        DetectorChoice::Backend(b) => b.clone(),
        DetectorChoice::Oracle if prepared.gt.is_empty() => Arc::new(SilentDetector),
        DetectorChoice::Oracle => {
            let basis = if opts.per_component {
                largest_component(&prepared.gt)?
            } else {
                prepared.gt.clone()
            };
            Arc::new(OracleDetector::new(&basis)?)
        }
    };

    let (mut result, output) = evaluate_case_with_output(
        &spec.case_id,
        &prepared.image,
        &prepared.gt,
        detector.as_ref(),
        segmenter.as_ref(),
        opts.threshold,
    )?;
    result.snr_used = prepared.snr_used;
    result.seed_used = prepared.seed_used;

    if let Some(dir) = &opts.overlay_dir {
        let overlay = render_overlay(&prepared.image, &output.mask, &prepared.gt)?;
        save_png(&overlay, dir.join(format!("{}.png", spec.case_id)))?;
    }
    Ok(result)
}

fn attach_case(err: Error, case_id: &str) -> Error {
    match err {
        already @ Error::CaseFailure { .. } => already,
        other => other.for_case(case_id),
    }
}

fn skip_reason(err: &Error) -> String {
    match err {
        Error::CaseFailure { source, .. } => source.to_string(),
        other => other.to_string(),
    }
}

/// Evaluate every manifest case and assemble the report.
///
/// Detection misses are data (DICE 0 rows, counted in the aggregates);
/// only hard failures abort, and then only under `strict` — otherwise they
/// become skip rows.
pub fn evaluate_batch(cases: &[CaseSpec], opts: &BatchOptions) -> Result<Report> {
    validate_cases(cases)?;
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::DomainError(format!(
            "threshold must lie strictly between 0 and 1, got {}",
            opts.threshold
        )));
    }
    if opts.et_labels.is_empty() {
        return Err(Error::DomainError(
            "the scored label set must not be empty".to_string(),
        ));
    }
    if let Some(dir) = &opts.overlay_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut sorted: Vec<CaseSpec> = cases.to_vec();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));

    let segmenter: Arc<dyn SegmenterBackend> = match opts.segmenter.concurrency() {
        Concurrency::Concurrent => opts.segmenter.clone(),
        Concurrency::SingleThreaded => Arc::new(SerializedSegmenter {
            inner: opts.segmenter.clone(),
            lock: Mutex::new(()),
        }),
    };
    let opts_run = {
        let mut o = opts.clone();
        if let DetectorChoice::Backend(b) = &opts.detector {
            if b.concurrency() == Concurrency::SingleThreaded {
                o.detector = DetectorChoice::Backend(Arc::new(SerializedDetector {
                    inner: b.clone(),
                    lock: Mutex::new(()),
                }));
            }
        }
        o
    };

    let run = || -> Vec<Result<CaseResult>> {
        sorted
            .par_iter()
            .enumerate()
            .map(|(index, spec)| process_case(spec, index, &opts_run, &segmenter))
            .collect()
    };
    let outcomes = if opts.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::DomainError(format!("cannot build thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let mut results = Vec::with_capacity(sorted.len());
    let mut skipped = Vec::new();
    for (spec, outcome) in sorted.iter().zip(outcomes) {
        match outcome {
            Ok(result) => results.push(result),
            Err(err) if opts.strict => return Err(attach_case(err, &spec.case_id)),
            Err(err) => skipped.push(SkippedCase {
                case_id: spec.case_id.clone(),
                reason: skip_reason(&err),
            }),
        }
    }

    let metadata = RunMetadata {
        timestamp_utc: chrono::Utc::now().to_rfc3339(),
        config_digest: config_digest(&sorted, opts)?,
        prng: PRNG_NAME.to_string(),
        detector: opts.detector.identity(),
        segmenter: opts.segmenter.name(),
    };
    Ok(Report::new(metadata, results, skipped))
}
