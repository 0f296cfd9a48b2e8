//! Per-case results, batch aggregates, and report serialization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Version of the report layout.
pub const REPORT_SCHEMA: u32 = 1;

/// One evaluated case: DICE, per-stage latency, and detection diagnostics.
///
/// `total_ms` covers the whole cascade including orchestration, so it is
/// always at least `detect_ms + segment_ms`. A missed detection on a
/// non-empty ground truth scores `dice = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub dice: f64,
    pub detect_ms: f64,
    pub segment_ms: f64,
    pub total_ms: f64,
    pub detection_missed: bool,
    pub bbox_iou_vs_gt: Option<f64>,
    pub snr_used: Option<f64>,
    pub seed_used: Option<u64>,
}

/// A case the batch runner could not evaluate (only recorded when the run
/// is not strict).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCase {
    pub case_id: String,
    pub reason: String,
}

/// Run provenance recorded alongside the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub timestamp_utc: String,
    pub config_digest: String,
    pub prng: String,
    pub detector: String,
    pub segmenter: String,
}

/// Batch statistics, all recomputable exactly from the per-case rows.
/// Means and the (population) std are 0 when there are no cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub case_count: usize,
    pub miss_count: usize,
    pub dice_mean: f64,
    pub dice_median: f64,
    pub dice_std: f64,
    pub detect_ms_mean: f64,
    pub segment_ms_mean: f64,
    pub total_ms_mean: f64,
}

impl Aggregates {
    pub fn from_cases(cases: &[CaseResult]) -> Aggregates {
        let n = cases.len();
        if n == 0 {
            return Aggregates {
                case_count: 0,
                miss_count: 0,
                dice_mean: 0.0,
                dice_median: 0.0,
                dice_std: 0.0,
                detect_ms_mean: 0.0,
                segment_ms_mean: 0.0,
                total_ms_mean: 0.0,
            };
        }
        let mean = |f: fn(&CaseResult) -> f64| cases.iter().map(f).sum::<f64>() / n as f64;
        let dice_mean = mean(|c| c.dice);
        let dice_var = cases
            .iter()
            .map(|c| (c.dice - dice_mean) * (c.dice - dice_mean))
            .sum::<f64>()
            / n as f64;
        let mut sorted: Vec<f64> = cases.iter().map(|c| c.dice).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("dice values are finite"));
        let dice_median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Aggregates {
            case_count: n,
            miss_count: cases.iter().filter(|c| c.detection_missed).count(),
            dice_mean,
            dice_median,
            dice_std: dice_var.sqrt(),
            detect_ms_mean: mean(|c| c.detect_ms),
            segment_ms_mean: mean(|c| c.segment_ms),
            total_ms_mean: mean(|c| c.total_ms),
        }
    }
}

/// Batch report: run metadata, per-case rows keyed and sorted by case id,
/// skipped cases, and the aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub metadata: RunMetadata,
    pub cases: Vec<CaseResult>,
    pub skipped: Vec<SkippedCase>,
    pub aggregates: Aggregates,
}

impl Report {
    pub fn new(
        metadata: RunMetadata,
        mut cases: Vec<CaseResult>,
        mut skipped: Vec<SkippedCase>,
    ) -> Report {
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        skipped.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        let aggregates = Aggregates::from_cases(&cases);
        Report {
            schema: REPORT_SCHEMA,
            metadata,
            cases,
            skipped,
            aggregates,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One row per case, columns matching the [`CaseResult`] fields.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        for case in &self.cases {
            writer.serialize(case)?;
        }
        writer.flush()?;
        Ok(())
    }
}
