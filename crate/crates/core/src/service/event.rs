use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::analyzer::SegmentOutcome;
use crate::dataset::EmotionLabel;
use crate::nn::Prediction;

pub const SCHEMA_VERSION: u32 = 1;

/// One analysed window of a live session.
///
/// On the wire: `{"type":"event","v":1,"seq":0,"t":0.0,"window_s":3.0,
/// "label":"sad","probs":[...6],"melFrame":[...]}`. Windows too short to
/// classify carry `"label":"too_short"` and `"probs":null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub v: u32,
    pub seq: u64,
    /// Window start, in seconds from the beginning of the session.
    pub t: f64,
    pub window_s: f64,
    #[serde(with = "label_or_too_short")]
    pub label: Option<EmotionLabel>,
    pub probs: Option<[f32; EmotionLabel::COUNT]>,
    #[serde(rename = "melFrame", default, skip_serializing_if = "Option::is_none")]
    pub mel_frame: Option<Vec<f32>>,
}

impl PredictionEvent {
    pub fn new(seq: u64, t: f64, window_s: f64, outcome: SegmentOutcome) -> Self {
        let (label, probs) = match outcome {
            SegmentOutcome::Predicted(p) => (Some(p.label), Some(p.probabilities)),
            SegmentOutcome::TooShort => (None, None),
        };
        Self { v: SCHEMA_VERSION, seq, t, window_s, label, probs, mel_frame: None }
    }

    pub fn outcome(&self) -> SegmentOutcome {
        match (self.label, self.probs) {
            (Some(label), Some(probabilities)) => SegmentOutcome::Predicted(Prediction { label, probabilities }),
            _ => SegmentOutcome::TooShort,
        }
    }
}

/// Everything a subscriber can receive, tagged by `type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamMessage {
    Event(PredictionEvent),
    /// Messages were lost before this point: `missed_events` dropped from a
    /// slow subscriber's queue, or `dropped_audio_s` of capture overrun.
    Gap { missed_events: u64, dropped_audio_s: f64 },
    /// The session ended abnormally; nothing follows.
    Error { message: String },
    /// The session ended normally after `events` events.
    End { events: u64 },
    /// Reply to a history request: every event so far, in order.
    History { events: Vec<PredictionEvent> },
}

impl StreamMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stream messages serialize")
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, StreamMessage::Error { .. } | StreamMessage::End { .. })
    }
}

mod label_or_too_short {
    use super::*;

    const TOO_SHORT: &str = "too_short";

    pub fn serialize<S: Serializer>(label: &Option<EmotionLabel>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(label.map_or(TOO_SHORT, EmotionLabel::name))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<EmotionLabel>, D::Error> {
        let text = String::deserialize(d)?;
        if text == TOO_SHORT {
            Ok(None)
        } else {
            text.parse().map(Some).map_err(serde::de::Error::custom)
        }
    }
}
