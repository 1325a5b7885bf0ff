//! Per-participant schedule: two sessions of four single-quadrant blocks,
//! five trials each, every scheduled clip played twice.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::quadrant::EmotionQuadrant;

pub const SESSIONS: usize = 2;
pub const BLOCKS_PER_SESSION: usize = 4;
pub const TRIALS_PER_BLOCK: usize = 5;
pub const TRIALS_PER_SESSION: usize = BLOCKS_PER_SESSION * TRIALS_PER_BLOCK;
pub const TOTAL_TRIALS: usize = SESSIONS * TRIALS_PER_SESSION;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("quadrant {quadrant} has {have} selected clip(s), need {need}")]
    InsufficientClips {
        quadrant: EmotionQuadrant,
        have: usize,
        need: usize,
    },
    #[error("plan is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub participant_id: String,
    pub seed: u64,
    /// Eight entries, sessions in order; each quadrant appears once per
    /// session.
    pub block_quadrants: Vec<EmotionQuadrant>,
    /// Clip ids per block, five each.
    pub trial_clips: Vec<Vec<String>>,
}

/// Position of a trial within the plan. `trial_id` runs 0..40 across both
/// sessions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSlot {
    pub trial_id: u32,
    pub session: usize,
    /// Block index within the session.
    pub block: usize,
    pub trial: usize,
    pub clip_id: String,
    pub quadrant: EmotionQuadrant,
}

pub(crate) fn participant_seed(participant_id: &str, seed: u64) -> u64 {
    // FNV-1a over the id, folded into the user seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in participant_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed
}

/// Picks five clips per quadrant and lays them out so each is played once
/// in each session's block of that quadrant, in independently shuffled
/// order. Clip lists are sorted before sampling so the input order does
/// not matter.
pub fn build_plan(
    participant_id: &str,
    library: &BTreeMap<EmotionQuadrant, Vec<String>>,
    seed: u64,
) -> Result<SessionPlan, PlanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(participant_seed(participant_id, seed));
    let mut chosen: BTreeMap<EmotionQuadrant, Vec<String>> = BTreeMap::new();
    for q in EmotionQuadrant::ALL {
        let mut clips = library.get(&q).cloned().unwrap_or_default();
        clips.sort();
        clips.dedup();
        if clips.len() < TRIALS_PER_BLOCK {
            return Err(PlanError::InsufficientClips {
                quadrant: q,
                have: clips.len(),
                need: TRIALS_PER_BLOCK,
            });
        }
        clips.shuffle(&mut rng);
        clips.truncate(TRIALS_PER_BLOCK);
        chosen.insert(q, clips);
    }
    let mut block_quadrants = Vec::with_capacity(SESSIONS * BLOCKS_PER_SESSION);
    let mut trial_clips = Vec::with_capacity(SESSIONS * BLOCKS_PER_SESSION);
    for _ in 0..SESSIONS {
        let mut order = EmotionQuadrant::ALL;
        order.shuffle(&mut rng);
        for q in order {
            let mut clips = chosen[&q].clone();
            clips.shuffle(&mut rng);
            block_quadrants.push(q);
            trial_clips.push(clips);
        }
    }
    let plan = SessionPlan {
        participant_id: participant_id.to_string(),
        seed,
        block_quadrants,
        trial_clips,
    };
    plan.validate()?;
    Ok(plan)
}

impl SessionPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Invalid(m.to_string()));
        if self.block_quadrants.len() != SESSIONS * BLOCKS_PER_SESSION
            || self.trial_clips.len() != self.block_quadrants.len()
        {
            return bad("expected 8 blocks");
        }
        if self.trial_clips.iter().any(|b| b.len() != TRIALS_PER_BLOCK) {
            return bad("every block needs 5 trials");
        }
        for s in 0..SESSIONS {
            let mut qs =
                self.block_quadrants[s * BLOCKS_PER_SESSION..(s + 1) * BLOCKS_PER_SESSION].to_vec();
            qs.sort();
            if qs != EmotionQuadrant::ALL {
                return bad("each session must hold one block per quadrant");
            }
        }
        let mut counts: BTreeMap<(&String, EmotionQuadrant), usize> = BTreeMap::new();
        for (clips, q) in self.trial_clips.iter().zip(&self.block_quadrants) {
            for c in clips {
                *counts.entry((c, *q)).or_default() += 1;
            }
        }
        if counts.values().any(|&n| n != 2) {
            return bad("every clip must be scheduled exactly twice within one quadrant");
        }
        Ok(())
    }

    pub fn slot(&self, trial_id: u32) -> Option<TrialSlot> {
        let id = trial_id as usize;
        if id >= TOTAL_TRIALS {
            return None;
        }
        let global_block = id / TRIALS_PER_BLOCK;
        let trial = id % TRIALS_PER_BLOCK;
        Some(TrialSlot {
            trial_id,
            session: global_block / BLOCKS_PER_SESSION,
            block: global_block % BLOCKS_PER_SESSION,
            trial,
            clip_id: self.trial_clips[global_block][trial].clone(),
            quadrant: self.block_quadrants[global_block],
        })
    }

    pub fn slots(&self) -> impl Iterator<Item = TrialSlot> + '_ {
        (0..TOTAL_TRIALS as u32).filter_map(|i| self.slot(i))
    }
}

pub fn trial_id(session: usize, block: usize, trial: usize) -> u32 {
    (session * TRIALS_PER_SESSION + block * TRIALS_PER_BLOCK + trial) as u32
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn library(per_quadrant: usize) -> BTreeMap<EmotionQuadrant, Vec<String>> {
        EmotionQuadrant::ALL
            .iter()
            .map(|q| {
                (
                    *q,
                    (0..per_quadrant).map(|i| format!("{q}_{i:03}")).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn exact_library_uses_every_clip_twice() {
        let plan = build_plan("p01", &library(5), 7).unwrap();
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for s in plan.slots() {
            *counts.entry(s.clip_id.clone()).or_default() += 1;
            assert!(s.clip_id.starts_with(s.quadrant.as_str()));
        }
        assert_eq!(counts.len(), 20);
        assert!(counts.values().all(|&n| n == 2));
        assert_eq!(plan.slots().count(), 40);
    }

    #[test]
    fn seeded_and_participant_specific() {
        let lib = library(12);
        assert_eq!(
            build_plan("p01", &lib, 3).unwrap(),
            build_plan("p01", &lib, 3).unwrap()
        );
        assert_ne!(
            build_plan("p01", &lib, 3).unwrap(),
            build_plan("p01", &lib, 4).unwrap()
        );
        assert_ne!(
            build_plan("p01", &lib, 3).unwrap(),
            build_plan("p02", &lib, 3).unwrap()
        );
        let mut reversed = lib.clone();
        reversed.values_mut().for_each(|v| v.reverse());
        assert_eq!(
            build_plan("p01", &lib, 3).unwrap(),
            build_plan("p01", &reversed, 3).unwrap()
        );
    }

    #[test]
    fn blocks_are_homogeneous() {
        let plan = build_plan("x", &library(9), 1).unwrap();
        for (clips, q) in plan.trial_clips.iter().zip(&plan.block_quadrants) {
            assert!(clips.iter().all(|c| c.starts_with(q.as_str())));
        }
        for b in 0..4 {
            let q = plan.block_quadrants[b];
            let partner = 4 + plan.block_quadrants[4..]
                .iter()
                .position(|&x| x == q)
                .unwrap();
            let mut a = plan.trial_clips[b].clone();
            let mut c = plan.trial_clips[partner].clone();
            a.sort();
            c.sort();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn short_quadrant_named() {
        let mut lib = library(5);
        lib.get_mut(&EmotionQuadrant::HAHV).unwrap().pop();
        let err = build_plan("p", &lib, 0).unwrap_err();
        assert_eq!(
            err,
            PlanError::InsufficientClips {
                quadrant: EmotionQuadrant::HAHV,
                have: 4,
                need: 5
            }
        );
        assert!(err.to_string().contains("HAHV"));
    }

    #[test]
    fn slot_indexing() {
        let plan = build_plan("p", &library(5), 0).unwrap();
        let s = plan.slot(27).unwrap();
        assert_eq!((s.session, s.block, s.trial), (1, 1, 2));
        assert_eq!(trial_id(1, 1, 2), 27);
        assert!(plan.slot(40).is_none());
    }
}
