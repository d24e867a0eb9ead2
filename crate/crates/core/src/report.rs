//! Per-session scores, aggregates and the files written for an experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dtw::DtwError;
use crate::experiment::{Assignment, LearnerProfile};
use crate::metrics::{improvement_percent, mean, metric_m1, metric_m2, std_dev, trend_slope};
use crate::scalar::Point;
use crate::session::{Method, SessionState};
use crate::sim::InteractionRecord;
use crate::trajectory::WaypointSeq;

pub const REPORT_FORMAT: &str = "penmentor-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseScore {
    pub m1: f64,
    pub m2: f64,
}

/// Both metrics for one writing against the reference.
pub fn score_writing(writing: &[WaypointSeq<f64>], reference: &[WaypointSeq<f64>]) -> Result<(PhaseScore, bool), DtwError> {
    let flat = |s: &[WaypointSeq<f64>]| s.iter().flat_map(|w| w.points().iter().copied()).collect::<Vec<Point<f64>>>();
    let m1 = metric_m1(&flat(writing), &flat(reference))?;
    let m2 = metric_m2(writing, reference)?;
    Ok((PhaseScore { m1, m2: m2.value }, m2.stroke_count_mismatch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub master_seed: u64,
    pub learner: String,
    pub level: u8,
    pub character: String,
    pub stroke_count: usize,
    pub method: Method,
    pub pretest: Vec<PhaseScore>,
    pub evaluation: Vec<PhaseScore>,
    pub improvement_m1: Option<f64>,
    pub improvement_m2: Option<f64>,
    /// Mean learner force per waypoint over the guided iterations; `None`
    /// without guidance.
    pub mean_force: Option<f64>,
    /// Normalized DTW between each iteration's teaching trajectory and the reference.
    pub teaching_dtw: Vec<f64>,
    pub teaching_dtw_slope: Option<f64>,
    /// Commanded stiffness per iteration, N/m.
    pub k_d: Vec<[f64; 2]>,
    pub stroke_count_mismatch: bool,
    /// Dense records per (iteration, stroke) when the config keeps them.
    #[serde(skip)]
    pub records: Vec<(usize, usize, InteractionRecord)>,
}

impl SessionSummary {
    pub fn from_state(assignment: &Assignment, profile: &LearnerProfile, state: &SessionState) -> Result<Self, DtwError> {
        let mut mismatch = false;
        let mut score = |ws: &[Vec<WaypointSeq<f64>>]| -> Result<Vec<PhaseScore>, DtwError> {
            ws.iter()
                .map(|w| {
                    let (s, m) = score_writing(w, &state.reference)?;
                    mismatch |= m;
                    Ok(s)
                })
                .collect()
        };
        let pretest = score(&state.pretest)?;
        let evaluation = score(&state.evaluation)?;
        let improvement = |f: fn(&PhaseScore) -> f64| {
            improvement_percent(
                &pretest.iter().map(f).collect::<Vec<_>>(),
                &evaluation.iter().map(f).collect::<Vec<_>>(),
            )
        };
        let forces: Vec<f64> = state.history.iter().filter_map(|h| h.mean_learner_force).collect();
        let teaching_dtw: Vec<f64> = state.history.iter().map(|h| h.teaching_dtw).collect();
        let records = state
            .history
            .iter()
            .flat_map(|h| h.records.iter().enumerate().map(|(j, r)| (h.iteration, j, r.clone())))
            .collect();
        Ok(Self {
            master_seed: assignment.master_seed,
            learner: profile.id.clone(),
            level: profile.level,
            character: state.character.id.clone(),
            stroke_count: state.stroke_count(),
            method: state.method,
            improvement_m1: improvement(|s| s.m1),
            improvement_m2: improvement(|s| s.m2),
            pretest,
            evaluation,
            mean_force: mean(&forces),
            teaching_dtw_slope: trend_slope(&teaching_dtw),
            teaching_dtw,
            k_d: state.history.iter().map(|h| [h.impedance.k_d.x, h.impedance.k_d.y]).collect(),
            stroke_count_mismatch: mismatch,
            records,
        })
    }

    fn key(&self) -> (u64, &str, &str, Method) {
        (self.master_seed, &self.learner, &self.character, self.method)
    }
}

/// Mean and sample standard deviation of the values present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            n: values.len(),
            mean: mean(values)?,
            std: std_dev(values),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    /// `None` for the all-groups row.
    pub stroke_count: Option<usize>,
    pub sessions: usize,
    pub improvement_m1: Option<Stat>,
    pub improvement_m2: Option<Stat>,
    pub force: Option<Stat>,
}

/// Means over one master seed's sessions for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub master_seed: u64,
    pub method: Method,
    pub improvement_m1: Option<f64>,
    pub improvement_m2: Option<f64>,
    pub force: Option<f64>,
    /// Fraction of sessions whose teaching-trajectory DTW trend is non-increasing.
    pub converging_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    pub sessions: Vec<SessionSummary>,
    /// One row per (method, stroke count).
    pub aggregates: Vec<AggregateRow>,
    /// One row per method over all stroke counts.
    pub methods: Vec<AggregateRow>,
    pub seeds: Vec<SeedRow>,
}

fn aggregate(method: Method, stroke_count: Option<usize>, rows: &[&SessionSummary]) -> AggregateRow {
    let collect = |f: fn(&SessionSummary) -> Option<f64>| Stat::of(&rows.iter().filter_map(|s| f(s)).collect::<Vec<_>>());
    AggregateRow {
        method,
        stroke_count,
        sessions: rows.len(),
        improvement_m1: collect(|s| s.improvement_m1),
        improvement_m2: collect(|s| s.improvement_m2),
        force: collect(|s| s.mean_force),
    }
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig, mut sessions: Vec<SessionSummary>) -> Self {
        sessions.sort_by(|a, b| a.key().cmp(&b.key()));

        let mut by_group: BTreeMap<(Method, usize), Vec<&SessionSummary>> = BTreeMap::new();
        let mut by_method: BTreeMap<Method, Vec<&SessionSummary>> = BTreeMap::new();
        let mut by_seed: BTreeMap<(u64, Method), Vec<&SessionSummary>> = BTreeMap::new();
        for s in &sessions {
            by_group.entry((s.method, s.stroke_count)).or_default().push(s);
            by_method.entry(s.method).or_default().push(s);
            by_seed.entry((s.master_seed, s.method)).or_default().push(s);
        }
        let aggregates = by_group
            .iter()
            .map(|(&(m, k), rows)| aggregate(m, Some(k), rows))
            .collect();
        let methods = by_method.iter().map(|(&m, rows)| aggregate(m, None, rows)).collect();
        let seeds = by_seed
            .iter()
            .map(|(&(seed, method), rows)| {
                let avg = |f: fn(&SessionSummary) -> Option<f64>| mean(&rows.iter().filter_map(|s| f(s)).collect::<Vec<_>>());
                let slopes: Vec<f64> = rows.iter().filter_map(|s| s.teaching_dtw_slope).collect();
                let converging = slopes.iter().filter(|&&s| s <= 0.0).count() as f64;
                SeedRow {
                    master_seed: seed,
                    method,
                    improvement_m1: avg(|s| s.improvement_m1),
                    improvement_m2: avg(|s| s.improvement_m2),
                    force: avg(|s| s.mean_force),
                    converging_fraction: (!slopes.is_empty()).then(|| converging / slopes.len() as f64),
                }
            })
            .collect();
        Self {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config,
            sessions,
            aggregates,
            methods,
            seeds,
        }
    }

    pub fn method_row(&self, method: Method) -> Option<&AggregateRow> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn seed_row(&self, seed: u64, method: Method) -> Option<&SeedRow> {
        self.seeds.iter().find(|r| r.master_seed == seed && r.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

#[derive(Debug, thiserror::Error)]
#[error("writing {path}: {source}")]
pub struct ReportError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn stat_cols(s: &Option<Stat>) -> String {
    match s {
        Some(s) => format!("{},{},{}", s.n, s.mean, s.std),
        None => "0,,".into(),
    }
}

fn table(name: &str, header: &str) -> String {
    format!("# {REPORT_FORMAT} v{REPORT_VERSION} {name}\n{header}\n")
}

/// One row per (seed, learner, character, method, phase, trial).
pub fn sessions_csv(report: &ExperimentReport) -> String {
    let mut out = table("sessions", "master_seed,learner,level,character,stroke_count,method,phase,trial,m1,m2");
    for s in &report.sessions {
        for (phase, scores) in [("PRETEST", &s.pretest), ("EVALUATION", &s.evaluation)] {
            for (i, sc) in scores.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{phase},{i},{},{}",
                    s.master_seed, s.learner, s.level, s.character, s.stroke_count, s.method, sc.m1, sc.m2
                );
            }
        }
    }
    out
}

/// Improvement bars per method and stroke-count group.
pub fn improvement_csv(report: &ExperimentReport) -> String {
    let mut out = table(
        "improvement",
        "method,stroke_count,sessions,m1_n,m1_mean,m1_std,m2_n,m2_mean,m2_std",
    );
    for r in &report.aggregates {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            r.stroke_count.map(|k| k.to_string()).unwrap_or_default(),
            r.sessions,
            stat_cols(&r.improvement_m1),
            stat_cols(&r.improvement_m2)
        );
    }
    out
}

/// Force bars per method.
pub fn force_csv(report: &ExperimentReport) -> String {
    let mut out = table("force", "method,force_n,force_mean,force_std");
    for r in &report.methods {
        let _ = writeln!(out, "{},{}", r.method, stat_cols(&r.force));
    }
    out
}

/// Teaching-trajectory DTW and stiffness per iteration, averaged per method.
pub fn convergence_csv(report: &ExperimentReport) -> String {
    let mut out = table("convergence", "method,iteration,sessions,teaching_dtw_mean,k_d_x_mean,k_d_y_mean");
    let mut acc: BTreeMap<(Method, usize), (usize, f64, f64, f64)> = BTreeMap::new();
    for s in &report.sessions {
        for (m, (&d, k)) in s.teaching_dtw.iter().zip(&s.k_d).enumerate() {
            let e = acc.entry((s.method, m)).or_default();
            e.0 += 1;
            e.1 += d;
            e.2 += k[0];
            e.3 += k[1];
        }
    }
    for ((method, m), (n, d, kx, ky)) in acc {
        let c = n as f64;
        let _ = writeln!(out, "{method},{m},{n},{},{},{}", d / c, kx / c, ky / c);
    }
    out
}

/// Per-seed method means, the unit of the ordering checks.
pub fn seeds_csv(report: &ExperimentReport) -> String {
    let mut out = table(
        "seeds",
        "master_seed,method,improvement_m1,improvement_m2,force,converging_fraction",
    );
    for r in &report.seeds {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.master_seed,
            r.method,
            opt(r.improvement_m1),
            opt(r.improvement_m2),
            opt(r.force),
            opt(r.converging_fraction)
        );
    }
    out
}

/// Writes `report.json`, the plot tables and, when present, dense records.
/// Returns the paths written, in order.
pub fn emit_report(report: &ExperimentReport, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, ReportError> {
    let dir = out_dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ReportError { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut files = vec![
        ("report.json", report.to_json()),
        ("sessions.csv", sessions_csv(report)),
        ("plot_improvement.csv", improvement_csv(report)),
        ("plot_force.csv", force_csv(report)),
        ("plot_convergence.csv", convergence_csv(report)),
        ("plot_seeds.csv", seeds_csv(report)),
    ]
    .into_iter()
    .map(|(name, text)| (dir.join(name), text))
    .collect::<Vec<_>>();

    let with_records: Vec<&SessionSummary> = report.sessions.iter().filter(|s| !s.records.is_empty()).collect();
    if !with_records.is_empty() {
        let rec_dir = dir.join("records");
        std::fs::create_dir_all(&rec_dir).map_err(io(&rec_dir))?;
        for s in with_records {
            for (m, j, r) in &s.records {
                let name = format!("{}_{}_{}_{}_m{m}_s{j}.csv", s.master_seed, s.learner, s.character, s.method);
                files.push((rec_dir.join(name), r.to_csv()));
            }
        }
    }

    let mut written = Vec::with_capacity(files.len());
    for (path, text) in files {
        std::fs::write(&path, text).map_err(io(&path))?;
        written.push(path);
    }
    Ok(written)
}
