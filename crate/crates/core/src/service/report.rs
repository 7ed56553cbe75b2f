use std::io::{Read, Write};

use super::analyzer::{Analyzer, SegmentOutcome};
use super::ServiceError;
use crate::audio::{multiple_split, AudioClip};
use crate::dataset::EmotionLabel;
use crate::nn::Prediction;

pub const CSV_HEADER: [&str; 8] = ["offset_s", "label", "p_neutral", "p_calm", "p_happy", "p_sad", "p_angry", "p_fearful"];
const TOO_SHORT: &str = "too_short";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRow {
    pub offset_s: f64,
    pub outcome: SegmentOutcome,
}

/// Per-segment classification of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub source: String,
    pub segment_s: f64,
    pub isolated: bool,
    pub rows: Vec<SegmentRow>,
}

impl SegmentReport {
    pub fn labels(&self) -> Vec<Option<EmotionLabel>> {
        self.rows.iter().map(|r| r.outcome.prediction().map(|p| p.label)).collect()
    }

    /// Numbers are written in shortest round-trip form, so parsing the CSV
    /// back recovers every value exactly.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), ServiceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            let mut record = vec![row.offset_s.to_string()];
            match row.outcome {
                SegmentOutcome::Predicted(p) => {
                    record.push(p.label.name().to_string());
                    record.extend(p.probabilities.iter().map(f32::to_string));
                }
                SegmentOutcome::TooShort => {
                    record.push(TOO_SHORT.to_string());
                    record.extend(std::iter::repeat_n(String::new(), EmotionLabel::COUNT));
                }
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses rows written by [`SegmentReport::write_csv`]. The CSV carries
    /// no source name, segment length or isolation flag; those are supplied.
    pub fn read_csv<R: Read>(input: R, source: &str, segment_s: f64, isolated: bool) -> Result<Self, ServiceError> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().ne(CSV_HEADER) {
            return Err(ServiceError::Report("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let bad = |what: &str| ServiceError::Report(format!("line {}: {what}", rows.len() + 2));
            let offset_s: f64 = rec[0].parse().map_err(|_| bad("offset"))?;
            let outcome = if &rec[1] == TOO_SHORT {
                SegmentOutcome::TooShort
            } else {
                let label: EmotionLabel = rec[1].parse().map_err(|_| bad("label"))?;
                let mut probabilities = [0f32; EmotionLabel::COUNT];
                for (i, p) in probabilities.iter_mut().enumerate() {
                    *p = rec[2 + i].parse().map_err(|_| bad("probability"))?;
                }
                SegmentOutcome::Predicted(Prediction { label, probabilities })
            };
            rows.push(SegmentRow { offset_s, outcome });
        }
        Ok(Self { source: source.to_string(), segment_s, isolated, rows })
    }
}

/// Splits `clip` into back-to-back segments of `segment_s` seconds (the last
/// may be shorter) and classifies each one.
pub fn predict_segments(
    analyzer: &Analyzer,
    clip: &AudioClip,
    segment_s: f64,
    isolate: bool,
    source: &str,
) -> Result<SegmentReport, ServiceError> {
    let segments = multiple_split(clip, segment_s)?;
    let rows = segments
        .iter()
        .enumerate()
        .map(|(i, seg)| {
            Ok(SegmentRow { offset_s: i as f64 * segment_s, outcome: analyzer.classify(seg, isolate)? })
        })
        .collect::<Result<Vec<_>, ServiceError>>()?;
    Ok(SegmentReport { source: source.to_string(), segment_s, isolated: isolate, rows })
}
