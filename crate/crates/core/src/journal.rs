//! Replay journals: the compact record from which a particle filter's entire
//! history can be regenerated.
//!
//! Instead of retaining every particle generation, each island keeps one
//! `SliceRecord` per filter invocation: the generator state immediately before
//! the invocation, what kind of invocation it was, the particle count, and the
//! time index. Re-running the same filter code from those states reproduces
//! the history bit for bit, so memory grows with the number of time slices
//! rather than with slices x particles.
//!
//! Journal life cycle mirrors the island life cycle:
//!
//! * `InitPf` opens a journal at time 0; `ExtendPf` appends one slice per
//!   subsequent observation.
//! * `FreshPf` (a from-scratch filter pass adopted by an accepted exchange or
//!   Metropolis move) collapses the journal to that single record and clears
//!   any pinned trajectory.
//! * `CsmcRegen` (a conditional regeneration around a retained trajectory)
//!   also collapses the journal, and stores the pinned trajectory because the
//!   regeneration cannot be replayed without it.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::state::StateMat;
use serde::{Deserialize, Serialize};

/// What kind of filter invocation a record captures. The serialized names are
/// part of the journal format and must stay stable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepTag {
    /// Filter initialization at time 0.
    #[serde(rename = "InitPF")]
    InitPf,
    /// One-step extension of an existing filter to the next time index.
    #[serde(rename = "ExtendPF")]
    ExtendPf,
    /// A complete from-scratch filter pass through times 0..=time_index.
    #[serde(rename = "FreshPF")]
    FreshPf,
    /// A complete conditional pass pinned to a stored trajectory.
    CsmcRegen,
}

/// One journaled filter invocation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    /// Generator state immediately before the invocation consumed any draws.
    pub rng_before: RngState,
    pub step_tag: StepTag,
    /// Particle count used by the invocation (>= 1).
    pub n_x: usize,
    /// For `InitPf`/`ExtendPf`: the time slice produced. For `FreshPf`/
    /// `CsmcRegen`: the final time of the full pass.
    pub time_index: usize,
}

/// Append-only record of filter invocations for one island, resettable by
/// whole-pass moves.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SliceJournal {
    records: Vec<SliceRecord>,
    pinned_trajectory: Option<StateMat>,
}

/// Envelope for the on-disk JSON form, versioned so a format change cannot be
/// misread silently.
#[derive(Serialize, Deserialize)]
struct JournalEnvelope {
    format: String,
    version: u32,
    journal: SliceJournal,
}

const JOURNAL_FORMAT: &str = "smc2-journal";
const JOURNAL_VERSION: u32 = 1;

impl SliceJournal {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends (or, for whole-pass tags, replaces the journal with) `rec`.
    ///
    /// `pinned` must be `Some` exactly for `CsmcRegen` records and carries the
    /// trajectory the conditional pass was pinned to (one row per time in
    /// 0..=time_index).
    pub fn record(&mut self, rec: SliceRecord, pinned: Option<StateMat>) -> Result<()> {
        if rec.n_x == 0 {
            return Err(Error::JournalCorrupt("record with zero particles".into()));
        }
        match rec.step_tag {
            StepTag::InitPf => {
                if !self.records.is_empty() {
                    return Err(Error::JournalCorrupt(
                        "initialization recorded into a non-empty journal".into(),
                    ));
                }
                if rec.time_index != 0 {
                    return Err(Error::JournalCorrupt(
                        "initialization must be at time 0".into(),
                    ));
                }
                if pinned.is_some() {
                    return Err(Error::JournalCorrupt(
                        "pinned trajectory only accompanies conditional passes".into(),
                    ));
                }
                self.records.push(rec);
            }
            StepTag::ExtendPf => {
                let last = self.records.last().ok_or_else(|| {
                    Error::JournalCorrupt("extension recorded into an empty journal".into())
                })?;
                let expected = last.time_index + 1;
                if rec.time_index != expected {
                    return Err(Error::JournalCorrupt(format!(
                        "extension to time {} but journal is at time {}",
                        rec.time_index, last.time_index
                    )));
                }
                if rec.n_x != last.n_x {
                    return Err(Error::JournalCorrupt(format!(
                        "extension changed particle count {} -> {}",
                        last.n_x, rec.n_x
                    )));
                }
                if pinned.is_some() {
                    return Err(Error::JournalCorrupt(
                        "pinned trajectory only accompanies conditional passes".into(),
                    ));
                }
                self.records.push(rec);
            }
            StepTag::FreshPf => {
                if pinned.is_some() {
                    return Err(Error::JournalCorrupt(
                        "a fresh pass clears the pinned trajectory; none may be supplied".into(),
                    ));
                }
                self.records.clear();
                self.records.push(rec);
                self.pinned_trajectory = None;
            }
            StepTag::CsmcRegen => {
                let path = pinned.ok_or_else(|| {
                    Error::JournalCorrupt("conditional pass requires a pinned trajectory".into())
                })?;
                if path.n_rows() != rec.time_index + 1 {
                    return Err(Error::JournalCorrupt(format!(
                        "pinned trajectory has {} rows but the pass covers times 0..={}",
                        path.n_rows(),
                        rec.time_index
                    )));
                }
                self.records.clear();
                self.records.push(rec);
                self.pinned_trajectory = Some(path);
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.records
    }

    pub fn pinned_trajectory(&self) -> Option<&StateMat> {
        self.pinned_trajectory.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Latest time index covered by the journal, if any.
    pub fn last_time(&self) -> Option<usize> {
        self.records.last().map(|r| r.time_index)
    }

    /// Particle count of the most recent invocation, if any.
    pub fn current_n_x(&self) -> Option<usize> {
        self.records.last().map(|r| r.n_x)
    }

    /// Heap footprint estimate used by the memory instrumentation.
    pub fn approx_bytes(&self) -> usize {
        std::mem::size_of::<Self>()
            + self.records.len() * std::mem::size_of::<SliceRecord>()
            + self
                .pinned_trajectory
                .as_ref()
                .map_or(0, StateMat::approx_bytes)
    }

    /// Serializes to the versioned JSON journal format.
    pub fn to_json(&self) -> Result<String> {
        let env = JournalEnvelope {
            format: JOURNAL_FORMAT.to_string(),
            version: JOURNAL_VERSION,
            journal: self.clone(),
        };
        Ok(serde_json::to_string(&env)?)
    }

    /// Parses the versioned JSON journal format, rejecting unknown versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let env: JournalEnvelope = serde_json::from_str(text)?;
        if env.format != JOURNAL_FORMAT {
            return Err(Error::Serialization(format!(
                "not a journal file (format {:?})",
                env.format
            )));
        }
        if env.version != JOURNAL_VERSION {
            return Err(Error::Serialization(format!(
                "unsupported journal version {} (this build reads version {})",
                env.version, JOURNAL_VERSION
            )));
        }
        Ok(env.journal)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::ReplayRng;

    fn snap(n: u64) -> RngState {
        ReplayRng::spawn_stream(n, 0, 0).snapshot()
    }

    fn rec(tag: StepTag, n_x: usize, t: usize) -> SliceRecord {
        SliceRecord {
            rng_before: snap(t as u64),
            step_tag: tag,
            n_x,
            time_index: t,
        }
    }

    #[test]
    fn init_then_extend_accumulates() {
        let mut j = SliceJournal::new();
        j.record(rec(StepTag::InitPf, 8, 0), None).unwrap();
        j.record(rec(StepTag::ExtendPf, 8, 1), None).unwrap();
        j.record(rec(StepTag::ExtendPf, 8, 2), None).unwrap();
        assert_eq!(j.records().len(), 3);
        assert_eq!(j.last_time(), Some(2));
        assert_eq!(j.current_n_x(), Some(8));
        assert!(j.pinned_trajectory().is_none());
    }

    #[test]
    fn ordering_violations_are_rejected() {
        let mut j = SliceJournal::new();
        // Extension before initialization.
        assert!(j.record(rec(StepTag::ExtendPf, 8, 0), None).is_err());
        j.record(rec(StepTag::InitPf, 8, 0), None).unwrap();
        // Double initialization.
        assert!(j.record(rec(StepTag::InitPf, 8, 0), None).is_err());
        // Time gap.
        assert!(j.record(rec(StepTag::ExtendPf, 8, 2), None).is_err());
        // Particle count drift without a whole-pass move.
        assert!(j.record(rec(StepTag::ExtendPf, 9, 1), None).is_err());
        // Zero particles.
        assert!(j.record(rec(StepTag::ExtendPf, 0, 1), None).is_err());
        // The journal is unchanged by rejected records.
        assert_eq!(j.records().len(), 1);
    }

    #[test]
    fn fresh_pass_collapses_journal_and_clears_pin() {
        let mut j = SliceJournal::new();
        let path = StateMat::from_rows(&[&[0.1], &[0.2], &[0.3]]).unwrap();
        j.record(rec(StepTag::CsmcRegen, 8, 2), Some(path)).unwrap();
        assert!(j.pinned_trajectory().is_some());
        j.record(rec(StepTag::ExtendPf, 8, 3), None).unwrap();
        assert_eq!(j.records().len(), 2);

        j.record(rec(StepTag::FreshPf, 16, 3), None).unwrap();
        assert_eq!(j.records().len(), 1);
        assert_eq!(j.current_n_x(), Some(16));
        assert!(
            j.pinned_trajectory().is_none(),
            "fresh pass must clear the pinned trajectory"
        );
    }

    #[test]
    fn conditional_pass_requires_matching_pin() {
        let mut j = SliceJournal::new();
        // Missing trajectory.
        assert!(j.record(rec(StepTag::CsmcRegen, 8, 2), None).is_err());
        // Wrong length: pass to time 2 needs rows for times 0, 1, 2.
        let short = StateMat::from_rows(&[&[0.0], &[1.0]]).unwrap();
        assert!(j.record(rec(StepTag::CsmcRegen, 8, 2), Some(short)).is_err());
        // Pins on ordinary records are rejected.
        let path = StateMat::from_rows(&[&[0.0]]).unwrap();
        assert!(j.record(rec(StepTag::InitPf, 8, 0), Some(path)).is_err());
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let mut j = SliceJournal::new();
        let path = StateMat::from_rows(&[&[0.5, -0.5], &[1.5, -1.5]]).unwrap();
        j.record(rec(StepTag::CsmcRegen, 4, 1), Some(path)).unwrap();
        j.record(rec(StepTag::ExtendPf, 4, 2), None).unwrap();
        let text = j.to_json().unwrap();
        // Serialized tags use the documented names.
        assert!(text.contains("CsmcRegen") && text.contains("ExtendPF"));
        let back = SliceJournal::from_json(&text).unwrap();
        assert_eq!(j, back);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let mut j = SliceJournal::new();
        j.record(rec(StepTag::InitPf, 2, 0), None).unwrap();
        let text = j.to_json().unwrap();
        let bad = text.replace("\"version\":1", "\"version\":2");
        assert_ne!(text, bad, "version field not found in envelope");
        let err = SliceJournal::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("version 2"));
    }

    #[test]
    fn journal_memory_is_slice_counted() {
        let mut j = SliceJournal::new();
        j.record(rec(StepTag::InitPf, 1000, 0), None).unwrap();
        for t in 1..=200 {
            j.record(rec(StepTag::ExtendPf, 1000, t), None).unwrap();
        }
        // Footprint must scale with the number of slices, not slices x particles.
        let per_slice = std::mem::size_of::<SliceRecord>();
        assert!(j.approx_bytes() >= 201 * per_slice);
        assert!(j.approx_bytes() < 4 * 201 * per_slice + 1024);
    }
}
