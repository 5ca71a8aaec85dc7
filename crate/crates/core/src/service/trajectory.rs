//! `trajectory/1`: one JSON object per line. A header line, an initial
//! observation entry, one entry per action, and a terminal entry once the
//! episode has ended.

use serde::{Deserialize, Serialize};

use crate::action::ActionRequest;
use crate::driver::{StepStatus, StepTiming};
use crate::obs::ObservationDocument;

pub const TRAJECTORY_SCHEMA: &str = "trajectory/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHeader {
    pub schema: String,
    pub episode_id: String,
    pub task_id: String,
    /// Incremented by every episode reset.
    pub epoch: u32,
    pub start_url: String,
    pub endpoint: String,
}

/// Recorded as `approved`/`rejected`; `approve`/`reject` are accepted too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "approved", alias = "approve")]
    Approve,
    #[serde(rename = "rejected", alias = "reject")]
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EpisodeStatus {
    Active,
    Terminated {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
    Failed {
        reason: String,
    },
}

impl EpisodeStatus {
    pub fn is_active(&self) -> bool {
        matches!(self, EpisodeStatus::Active)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryEntry {
    Initial {
        index: u32,
        observation_digest: String,
        observation: ObservationDocument,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<StepStatus>,
    },
    Step {
        index: u32,
        action: ActionRequest,
        /// Absent when the action was rejected and never executed.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        status: Option<StepStatus>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        verdict: Option<Verdict>,
        observation_digest: String,
        observation: ObservationDocument,
        timing: StepTiming,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error_detail: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        answer: Option<String>,
    },
    Terminal {
        index: u32,
        status: EpisodeStatus,
    },
}

impl TrajectoryEntry {
    pub fn index(&self) -> u32 {
        match self {
            TrajectoryEntry::Initial { index, .. }
            | TrajectoryEntry::Step { index, .. }
            | TrajectoryEntry::Terminal { index, .. } => *index,
        }
    }

    pub fn observation(&self) -> Option<&ObservationDocument> {
        match self {
            TrajectoryEntry::Initial { observation, .. } | TrajectoryEntry::Step { observation, .. } => {
                Some(observation)
            }
            TrajectoryEntry::Terminal { .. } => None,
        }
    }

    pub fn observation_digest(&self) -> Option<&str> {
        match self {
            TrajectoryEntry::Initial { observation_digest, .. } | TrajectoryEntry::Step { observation_digest, .. } => {
                Some(observation_digest)
            }
            TrajectoryEntry::Terminal { .. } => None,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TrajectoryError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub header: TrajectoryHeader,
    pub entries: Vec<TrajectoryEntry>,
}

impl TrajectoryRecord {
    pub fn new(header: TrajectoryHeader) -> Self {
        TrajectoryRecord { header, entries: Vec::new() }
    }

    pub fn next_index(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn is_terminated(&self) -> bool {
        matches!(self.entries.last(), Some(TrajectoryEntry::Terminal { .. }))
    }

    pub fn steps(&self) -> impl Iterator<Item = &TrajectoryEntry> {
        self.entries.iter().filter(|e| matches!(e, TrajectoryEntry::Step { .. }))
    }

    /// Observation digests with this episode's endpoint factored out.
    pub fn portable_digests(&self) -> Vec<String> {
        self.entries.iter().filter_map(|e| e.observation()).map(|o| o.portable_digest(&self.header.endpoint)).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TrajectoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| TrajectoryError::Invalid("empty trajectory".into()))?;
        let header: TrajectoryHeader =
            serde_json::from_str(first).map_err(|e| TrajectoryError::Parse { line: 1, reason: e.to_string() })?;
        if header.schema != TRAJECTORY_SCHEMA {
            return Err(TrajectoryError::Invalid(format!("unsupported schema {:?}", header.schema)));
        }
        let mut entries = Vec::new();
        for (i, l) in lines {
            let e: TrajectoryEntry =
                serde_json::from_str(l).map_err(|e| TrajectoryError::Parse { line: i + 1, reason: e.to_string() })?;
            entries.push(e);
        }
        let t = TrajectoryRecord { header, entries };
        t.validate()?;
        Ok(t)
    }

    /// Gapless indices from 0, the initial entry first, at most one terminal
    /// entry and only at the end, and digests matching their observations.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |m: String| Err(TrajectoryError::Invalid(m));
        for (i, e) in self.entries.iter().enumerate() {
            if e.index() != i as u32 {
                return bad(format!("entry {i} has index {}", e.index()));
            }
            let initial = matches!(e, TrajectoryEntry::Initial { .. });
            if initial != (i == 0) {
                return bad(format!("initial entry must come first (entry {i})"));
            }
            if matches!(e, TrajectoryEntry::Terminal { .. }) && i + 1 != self.entries.len() {
                return bad(format!("terminal entry {i} is not last"));
            }
            if let (Some(o), Some(d)) = (e.observation(), e.observation_digest()) {
                if o.digest() != d {
                    return bad(format!("entry {i} digest does not match its observation"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::StepErrorCode;
    use crate::obs::SemanticId;

    fn obs(title: &str) -> ObservationDocument {
        ObservationDocument {
            html: format!("<body><h1>{title}</h1></body>"),
            clickables: vec![],
            hoverables: vec![],
            inputs: vec![],
            selects: vec![],
            url: "http://127.0.0.1:20001/".into(),
            title: title.into(),
        }
    }

    fn sample() -> TrajectoryRecord {
        let header = TrajectoryHeader {
            schema: TRAJECTORY_SCHEMA.into(),
            episode_id: "ep-1".into(),
            task_id: "t".into(),
            epoch: 0,
            start_url: "http://{endpoint}/".into(),
            endpoint: "127.0.0.1:20001".into(),
        };
        let mut t = TrajectoryRecord::new(header);
        let o = obs("Shop");
        t.entries.push(TrajectoryEntry::Initial {
            index: 0,
            observation_digest: o.digest(),
            observation: o.clone(),
            status: None,
        });
        t.entries.push(TrajectoryEntry::Step {
            index: 1,
            action: ActionRequest::ClickElement { target: SemanticId::new("add-mug").unwrap() },
            status: Some(StepStatus::Error(StepErrorCode::Timeout)),
            verdict: Some(Verdict::Approve),
            observation_digest: o.digest(),
            observation: o.clone(),
            timing: StepTiming { action_ms: 12.5, quiescence_ms: 30000.000001 },
            error_detail: Some("outstanding: req-1".into()),
            answer: None,
        });
        t.entries.push(TrajectoryEntry::Step {
            index: 2,
            action: ActionRequest::Back,
            status: None,
            verdict: Some(Verdict::Reject),
            observation_digest: o.digest(),
            observation: o,
            timing: StepTiming::default(),
            error_detail: None,
            answer: None,
        });
        t.entries.push(TrajectoryEntry::Terminal {
            index: 3,
            status: EpisodeStatus::Terminated { answer: Some("42".into()) },
        });
        t
    }

    #[test]
    fn jsonl_round_trip_is_byte_identical() {
        let t = sample();
        let text = t.to_jsonl();
        let back = TrajectoryRecord::from_jsonl(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().next().unwrap().contains(r#""schema":"trajectory/1""#));
        assert!(text.contains(r#""verdict":"rejected""#));
        assert_eq!(serde_json::from_str::<Verdict>(r#""reject""#).unwrap(), Verdict::Reject);
    }

    #[test]
    fn rejects_gaps_and_bad_digests() {
        let mut t = sample();
        t.entries.remove(1);
        assert!(TrajectoryRecord::from_jsonl(&t.to_jsonl()).is_err());

        let mut t = sample();
        if let TrajectoryEntry::Step { observation_digest, .. } = &mut t.entries[1] {
            *observation_digest = "00".into();
        }
        assert!(matches!(TrajectoryRecord::from_jsonl(&t.to_jsonl()), Err(TrajectoryError::Invalid(_))));
    }

    #[test]
    fn reports_the_bad_line() {
        let text = sample().to_jsonl().replace(r#""kind":"terminal""#, r#""kind":"bogus""#);
        assert!(matches!(TrajectoryRecord::from_jsonl(&text), Err(TrajectoryError::Parse { line: 5, .. })));
        assert!(TrajectoryRecord::from_jsonl("").is_err());
        let wrong = sample().to_jsonl().replace("trajectory/1", "trajectory/9");
        assert!(matches!(TrajectoryRecord::from_jsonl(&wrong), Err(TrajectoryError::Invalid(_))));
    }
}
