//! History reconstruction from replay journals.
//!
//! `rebuild_history` re-runs the exact filter code (`pf_init`, `pf_step`,
//! and the conditional variants) from the generator snapshots stored in a
//! journal. Because the filter functions consume draws and reduce weights in
//! frozen orders, the reconstruction is bit-for-bit identical to what the
//! live filter produced — there is no "replay implementation" that could
//! drift from the live one.

use crate::error::{Error, Result};
use crate::journal::{SliceJournal, StepTag};
use crate::models::Model;
use crate::pf::{pf_init, pf_step, run_csmc_pass, run_pf_pass, ParticleHistory};
use crate::rng::ReplayRng;
use crate::state::{Dataset, Theta};

/// Reconstructs the full particle history described by `journal` for the
/// given parameters and data.
///
/// Structural problems (empty journal, gaps, particle-count drift, data too
/// short, missing pinned trajectory) surface as `JournalCorrupt`.
pub fn rebuild_history(
    journal: &SliceJournal,
    model: &dyn Model,
    theta: &Theta,
    data: &Dataset,
) -> Result<ParticleHistory> {
    let records = journal.records();
    let first = records
        .first()
        .ok_or_else(|| Error::JournalCorrupt("journal is empty".into()))?;
    let last_time = records.last().unwrap().time_index;
    if last_time > data.t_max() {
        return Err(Error::JournalCorrupt(format!(
            "journal covers time {last_time} but data ends at {}",
            data.t_max()
        )));
    }

    let mut history = match first.step_tag {
        StepTag::InitPf => {
            if first.time_index != 0 {
                return Err(Error::JournalCorrupt(
                    "initialization record not at time 0".into(),
                ));
            }
            let mut rng = ReplayRng::restore(first.rng_before);
            let step = pf_init(model, theta, first.n_x, data.obs()[0], &mut rng)?;
            ParticleHistory::from_init(step)
        }
        StepTag::FreshPf => {
            let mut rng = ReplayRng::restore(first.rng_before);
            let (_, hist) = run_pf_pass(
                model,
                theta,
                data,
                first.time_index,
                first.n_x,
                &mut rng,
                true,
            )?;
            hist.unwrap()
        }
        StepTag::CsmcRegen => {
            let pinned = journal.pinned_trajectory().ok_or_else(|| {
                Error::JournalCorrupt("conditional record without a pinned trajectory".into())
            })?;
            if pinned.n_rows() != first.time_index + 1 {
                return Err(Error::JournalCorrupt(
                    "pinned trajectory length disagrees with the record".into(),
                ));
            }
            let mut rng = ReplayRng::restore(first.rng_before);
            let (_, hist) =
                run_csmc_pass(model, theta, data, first.n_x, pinned, &mut rng, true)?;
            hist.unwrap()
        }
        StepTag::ExtendPf => {
            return Err(Error::JournalCorrupt(
                "journal starts with an extension record".into(),
            ));
        }
    };

    for rec in &records[1..] {
        if rec.step_tag != StepTag::ExtendPf {
            return Err(Error::JournalCorrupt(
                "whole-pass record not at the start of a journal".into(),
            ));
        }
        if rec.time_index != history.t() + 1 {
            return Err(Error::JournalCorrupt(format!(
                "extension to time {} after time {}",
                rec.time_index,
                history.t()
            )));
        }
        if rec.n_x != history.n_x() {
            return Err(Error::JournalCorrupt("particle count drifted".into()));
        }
        let mut rng = ReplayRng::restore(rec.rng_before);
        let step = pf_step(
            model,
            theta,
            rec.time_index,
            history.states.last().unwrap(),
            history.norm_weights.last().unwrap(),
            data.obs()[rec.time_index],
            &mut rng,
        )?;
        history.push_step(step);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::journal::SliceRecord;
    use crate::models::{simulate, Lgssm};
    use crate::state::StateMat;

    fn setup() -> (Lgssm, Theta, Dataset) {
        let m = Lgssm::new(1.0, 0.5).unwrap();
        let th = Theta::new(vec![0.8]);
        let mut rng = ReplayRng::spawn_stream(900, 0, 0);
        let (_, data) = simulate(&m, &th, 25, &mut rng).unwrap();
        (m, th, data)
    }

    #[test]
    fn incremental_journal_replays_bit_for_bit() {
        let (m, th, data) = setup();
        // Live pass: journal the snapshots while also retaining eagerly.
        let mut live = ReplayRng::spawn_stream(1, 2, 3);
        let mut journal = SliceJournal::new();
        let snap = live.snapshot();
        let init = pf_init(&m, &th, 40, data.obs()[0], &mut live).unwrap();
        journal
            .record(
                SliceRecord {
                    rng_before: snap,
                    step_tag: StepTag::InitPf,
                    n_x: 40,
                    time_index: 0,
                },
                None,
            )
            .unwrap();
        let mut eager = ParticleHistory::from_init(init);
        for t in 1..=25 {
            let snap = live.snapshot();
            let step = pf_step(
                &m,
                &th,
                t,
                eager.states.last().unwrap(),
                eager.norm_weights.last().unwrap(),
                data.obs()[t],
                &mut live,
            )
            .unwrap();
            journal
                .record(
                    SliceRecord {
                        rng_before: snap,
                        step_tag: StepTag::ExtendPf,
                        n_x: 40,
                        time_index: t,
                    },
                    None,
                )
                .unwrap();
            eager.push_step(step);
        }
        let rebuilt = rebuild_history(&journal, &m, &th, &data).unwrap();
        assert_eq!(rebuilt, eager, "replay must be bit-for-bit identical");
    }

    #[test]
    fn journal_survives_serialization_before_replay() {
        let (m, th, data) = setup();
        let mut live = ReplayRng::spawn_stream(5, 6, 7);
        let mut journal = SliceJournal::new();
        let snap = live.snapshot();
        let init = pf_init(&m, &th, 16, data.obs()[0], &mut live).unwrap();
        journal
            .record(
                SliceRecord {
                    rng_before: snap,
                    step_tag: StepTag::InitPf,
                    n_x: 16,
                    time_index: 0,
                },
                None,
            )
            .unwrap();
        let mut eager = ParticleHistory::from_init(init);
        for t in 1..=10 {
            let snap = live.snapshot();
            let step = pf_step(
                &m,
                &th,
                t,
                eager.states.last().unwrap(),
                eager.norm_weights.last().unwrap(),
                data.obs()[t],
                &mut live,
            )
            .unwrap();
            journal
                .record(
                    SliceRecord {
                        rng_before: snap,
                        step_tag: StepTag::ExtendPf,
                        n_x: 16,
                        time_index: t,
                    },
                    None,
                )
                .unwrap();
            eager.push_step(step);
        }
        let reloaded = SliceJournal::from_json(&journal.to_json().unwrap()).unwrap();
        let rebuilt = rebuild_history(&reloaded, &m, &th, &data).unwrap();
        assert_eq!(rebuilt, eager);
    }

    #[test]
    fn corrupt_journals_are_rejected() {
        let (m, th, data) = setup();
        // Empty journal.
        let j = SliceJournal::new();
        assert!(matches!(
            rebuild_history(&j, &m, &th, &data),
            Err(Error::JournalCorrupt(_))
        ));
        // Journal reaching beyond the data.
        let mut j = SliceJournal::new();
        let snap = ReplayRng::spawn_stream(0, 0, 0).snapshot();
        j.record(
            SliceRecord {
                rng_before: snap,
                step_tag: StepTag::FreshPf,
                n_x: 8,
                time_index: 100,
            },
            None,
        )
        .unwrap();
        assert!(matches!(
            rebuild_history(&j, &m, &th, &data),
            Err(Error::JournalCorrupt(_))
        ));
        // Conditional record whose pin the journal no longer holds: the
        // journal type itself prevents this, so simulate by serializing and
        // tampering.
        let mut j = SliceJournal::new();
        let pin = StateMat::from_rows(&[&[0.0], &[0.1]]).unwrap();
        j.record(
            SliceRecord {
                rng_before: snap,
                step_tag: StepTag::CsmcRegen,
                n_x: 8,
                time_index: 1,
            },
            Some(pin),
        )
        .unwrap();
        let text = j.to_json().unwrap();
        let tampered = text.replace(
            "\"pinned_trajectory\":{\"dim\":1,\"data\":[0.0,0.1]}",
            "\"pinned_trajectory\":null",
        );
        assert_ne!(text, tampered);
        let bad = SliceJournal::from_json(&tampered).unwrap();
        assert!(matches!(
            rebuild_history(&bad, &m, &th, &data),
            Err(Error::JournalCorrupt(_))
        ));
    }
}
