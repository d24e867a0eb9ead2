//! Simulated user study: a roster of learners, each taught every character
//! with one of the three methods.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::corpus::{builtin_character_set, load_character_set, CharacterSet, CharacterSpec};
use crate::report::{ExperimentReport, SessionSummary};
use crate::seed::derive_seed;
use crate::session::{run_session, Method, SessionError};
use crate::sim::LearnerModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub id: String,
    pub level: u8,
    pub seed: u64,
    /// Writing-speed multiplier.
    pub tempo: f64,
    /// RMS distance of the latent style from the reference, meters.
    pub distortion: f64,
}

/// One (learner, character, method) session to run.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assignment {
    pub master_seed: u64,
    pub learner: String,
    pub character: String,
    pub method: Method,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("session {learner}/{character}/{method}: {source}")]
    Session {
        learner: String,
        character: String,
        method: Method,
        source: SessionError,
    },
    #[error("unknown character {0:?}")]
    UnknownCharacter(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Learner(#[from] crate::sim::SimError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// `per_level` learners at each of the three levels, ids `P<level>-<index>`.
pub fn build_roster(cfg: &ExperimentConfig, master_seed: u64) -> Vec<LearnerProfile> {
    let mut out = Vec::new();
    for level in 0..3u8 {
        for j in 0..cfg.roster.per_level {
            let id = format!("P{level}-{j}");
            let seed = derive_seed(master_seed, &[b"learner", id.as_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b"tempo"]));
            let [lo, hi] = cfg.roster.tempo;
            let tempo = if hi > lo { rng.random_range(lo..hi) } else { lo };
            out.push(LearnerProfile {
                id,
                level,
                seed,
                tempo,
                distortion: cfg.roster.distortion[level as usize],
            });
        }
    }
    out
}

/// Within each stroke-count group the characters are shuffled per learner
/// and dealt to the methods in rotation, so every method sees every stroke
/// count when each group has three characters.
pub fn assign_methods(
    characters: &CharacterSet<f64>,
    learners: &[LearnerProfile],
    master_seed: u64,
) -> Vec<Assignment> {
    let mut out = Vec::new();
    for learner in learners {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(learner.seed, &[b"groups"]));
        let mut dealt = rng.random_range(0..Method::ALL.len());
        for ids in characters.groups_by_stroke_count().into_values() {
            let mut ids = ids;
            ids.shuffle(&mut rng);
            for character in ids {
                out.push(Assignment {
                    master_seed,
                    learner: learner.id.clone(),
                    character,
                    method: Method::ALL[dealt % Method::ALL.len()],
                });
                dealt += 1;
            }
        }
    }
    out.sort();
    out
}

/// A learner as they are before learning `character`.
pub fn prepare_learner(
    profile: &LearnerProfile,
    character: &CharacterSpec<f64>,
    cfg: &ExperimentConfig,
) -> Result<LearnerModel, ExperimentError> {
    let mut learner = LearnerModel::new(&profile.id, profile.level, cfg.roster.learner, profile.seed)?;
    let duration = cfg.stroke_duration * character.stroke_count() as f64 * profile.tempo;
    let reference = character.reference_waypoints(cfg.n, duration, cfg.workspace())?;
    learner.init_style(&character.id, &reference, profile.distortion);
    Ok(learner)
}

pub fn run_assignment(
    assignment: &Assignment,
    profile: &LearnerProfile,
    characters: &CharacterSet<f64>,
    cfg: &ExperimentConfig,
) -> Result<SessionSummary, ExperimentError> {
    let character = characters
        .get(&assignment.character)
        .ok_or_else(|| ExperimentError::UnknownCharacter(assignment.character.clone()))?;
    let learner = prepare_learner(profile, character, cfg)?;
    let seed = derive_seed(
        assignment.master_seed,
        &[b"session", profile.id.as_bytes(), character.id.as_bytes()],
    );
    let wrap = |source| ExperimentError::Session {
        learner: profile.id.clone(),
        character: character.id.clone(),
        method: assignment.method,
        source,
    };
    let (state, _) = run_session(learner, character, assignment.method, cfg, seed).map_err(wrap)?;
    SessionSummary::from_state(assignment, profile, &state).map_err(|e| wrap(SessionError::Dtw(e)))
}

pub fn load_characters(cfg: &ExperimentConfig) -> Result<CharacterSet<f64>, ExperimentError> {
    Ok(match &cfg.characters {
        Some(path) => load_character_set(path)?,
        None => builtin_character_set(),
    })
}

/// Every seed × learner × character session, run on `threads` worker
/// threads (the global pool when `None`). The result does not depend on the
/// thread count.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport, ExperimentError> {
    let characters = load_characters(cfg)?;
    let mut jobs = Vec::new();
    for &master in &cfg.seeds {
        let roster = build_roster(cfg, master);
        for a in assign_methods(&characters, &roster, master) {
            let profile = roster.iter().find(|p| p.id == a.learner).expect("assigned learner").clone();
            jobs.push((a, profile));
        }
    }
    let work = || {
        jobs.par_iter()
            .map(|(a, p)| run_assignment(a, p, &characters, cfg))
            .collect::<Result<Vec<_>, _>>()
    };
    let sessions = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    Ok(ExperimentReport::new(cfg.clone(), sessions))
}
