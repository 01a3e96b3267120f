//! Plan and answer metrics: LCS-based sequence overlap scores, replay-based
//! goal-satisfaction rate, exact-match accuracy, and complexity-binned
//! accuracy curves, plus the result container the evaluation commands write.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{goal_satisfied, replay, Action, GoalSpec, Location, WorldState};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("sequences must be non-empty")]
    EmptySequence,
    #[error("aligned lists have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("world error: {0}")]
    World(#[from] crate::world::WorldError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type MetricsResult<T> = Result<T, MetricsError>;

/// Longest common subsequence length by dynamic programming.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F measure over token sequences: precision `LCS/|cand|`, recall
/// `LCS/|ref|`, `F = 2PR/(P+R)` with zero when both miss entirely.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> MetricsResult<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    let lcs = lcs_len(candidate, reference) as f64;
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    Ok(if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    })
}

/// Recall-style path overlap: `LCS(candidate, reference) / |reference|`.
pub fn lcs_path_score<T: PartialEq>(candidate: &[T], reference: &[T]) -> MetricsResult<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(MetricsError::EmptySequence);
    }
    Ok(lcs_len(candidate, reference) as f64 / reference.len() as f64)
}

/// The location sequence an object visits while a plan replays, with
/// consecutive duplicates collapsed. Starts at the object's initial spot.
pub fn object_path(
    start: &WorldState,
    plan: &[Action],
    object: &str,
) -> MetricsResult<Vec<String>> {
    let states = replay(start, plan)?;
    let mut path: Vec<String> = Vec::new();
    for state in &states {
        let loc = match state.location_of(object) {
            Some(Location::Room(r)) => r.clone(),
            Some(Location::Object(o)) => o.clone(),
            Some(Location::Agent) => "agent".to_string(),
            None => return Err(MetricsError::World(crate::world::WorldError::UnknownEntity(
                object.to_string(),
            ))),
        };
        if path.last() != Some(&loc) {
            path.push(loc);
        }
    }
    Ok(path)
}

/// Fraction of plans that replay legally from their task's start state and
/// leave every goal predicate satisfied. Plans that fail to replay count as
/// failures, not errors.
pub fn success_rate(
    plans: &[Vec<Action>],
    tasks: &[(WorldState, GoalSpec)],
) -> MetricsResult<f64> {
    if plans.len() != tasks.len() {
        return Err(MetricsError::LengthMismatch(plans.len(), tasks.len()));
    }
    if plans.is_empty() {
        return Ok(0.0);
    }
    let mut ok = 0usize;
    for (plan, (start, goal)) in plans.iter().zip(tasks) {
        if plan_succeeds(start, plan, goal) {
            ok += 1;
        }
    }
    Ok(ok as f64 / plans.len() as f64)
}

/// One plan's outcome under replay; illegal actions are a plain failure.
pub fn plan_succeeds(start: &WorldState, plan: &[Action], goal: &GoalSpec) -> bool {
    match replay(start, plan) {
        Ok(states) => goal_satisfied(states.last().unwrap(), goal).unwrap_or(false),
        Err(_) => false,
    }
}

/// Accuracy per gold-plan-length bin; bins with no samples are omitted.
/// Per-bin counts always sum back to the input size.
pub fn complexity_curve(results: &[(usize, bool)]) -> BTreeMap<usize, (f64, usize)> {
    let mut bins: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (len, ok) in results {
        let e = bins.entry(*len).or_default();
        e.1 += 1;
        if *ok {
            e.0 += 1;
        }
    }
    bins.into_iter()
        .map(|(len, (ok, n))| (len, (ok as f64 / n as f64, n)))
        .collect()
}

/// Exact-match fraction over aligned answer indices.
pub fn multichoice_accuracy(preds: &[usize], gold: &[usize]) -> MetricsResult<f64> {
    if preds.len() != gold.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), gold.len()));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Scores for one metric over one model, optionally keyed by a bin (plan
/// length, theme name, ...). The aggregate mean always equals the mean of
/// the per-example scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub metric_name: String,
    pub model_tag: String,
    pub bin_key: Option<String>,
    pub per_example: Vec<f64>,
    pub mean: f64,
    pub count: usize,
}

impl EvalResult {
    pub fn new(
        metric_name: impl Into<String>,
        model_tag: impl Into<String>,
        bin_key: Option<String>,
        per_example: Vec<f64>,
    ) -> EvalResult {
        let count = per_example.len();
        let mean = if count == 0 {
            0.0
        } else {
            per_example.iter().sum::<f64>() / count as f64
        };
        EvalResult {
            metric_name: metric_name.into(),
            model_tag: model_tag.into(),
            bin_key,
            per_example,
            mean,
            count,
        }
    }
}

/// Result rows as CSV: `metric,model_tag,bin_key,value,n`.
pub fn write_results_csv(results: &[EvalResult], path: &Path) -> MetricsResult<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "metric,model_tag,bin_key,value,n")?;
    for r in results {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.metric_name,
            r.model_tag,
            r.bin_key.as_deref().unwrap_or(""),
            r.mean,
            r.count
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Full results (per-example scores included) as a JSON summary.
pub fn write_results_json(results: &[EvalResult], path: &Path) -> MetricsResult<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, results)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn act(s: &str) -> Action {
        Action::parse(s).unwrap()
    }

    fn goal(name: &str) -> GoalSpec {
        fixtures::apartment_goals()
            .into_iter()
            .find(|g| g.task_name == name)
            .unwrap()
    }

    #[test]
    fn identical_sequences_score_one() {
        let s = ["a", "b", "c"];
        assert_eq!(rouge_l(&s, &s).unwrap(), 1.0);
        assert_eq!(lcs_path_score(&s, &s).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_sequences_score_zero() {
        let a = ["a", "b"];
        let b = ["x", "y", "z"];
        assert_eq!(rouge_l(&a, &b).unwrap(), 0.0);
        assert_eq!(lcs_path_score(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn worked_rouge_case() {
        // "a b c" vs "a c d": LCS 2, P = R = 2/3, F = 2/3.
        let f = rouge_l(&["a", "b", "c"], &["a", "c", "d"]).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rouge_is_symmetric() {
        let a = ["a", "b", "c", "a"];
        let b = ["b", "a", "c"];
        assert_eq!(rouge_l(&a, &b).unwrap(), rouge_l(&b, &a).unwrap());
    }

    #[test]
    fn path_score_examples() {
        // LCS 3 against a length-4 reference.
        let cand = ["k", "a", "t", "x"];
        let refr = ["k", "a", "t", "f"];
        assert!((lcs_path_score(&cand, &refr).unwrap() - 0.75).abs() < 1e-15);
        // Reversed distinct-element path shares exactly one element.
        let fwd = ["p", "q", "r", "s"];
        let rev = ["s", "r", "q", "p"];
        assert!((lcs_path_score(&rev, &fwd).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_sequences_rejected() {
        let empty: [&str; 0] = [];
        assert!(matches!(
            rouge_l(&empty, &["a"]),
            Err(MetricsError::EmptySequence)
        ));
        assert!(matches!(
            lcs_path_score(&["a"], &empty),
            Err(MetricsError::EmptySequence)
        ));
    }

    #[test]
    fn object_path_tracks_moves() {
        let start = fixtures::apartment();
        let plan: Vec<Action> = ["walk kitchen", "grab cup", "walk living_room", "put cup table"]
            .iter()
            .map(|s| act(s))
            .collect();
        let path = object_path(&start, &plan, "cup").unwrap();
        assert_eq!(path, vec!["kitchen", "agent", "table"]);
    }

    #[test]
    fn gold_plans_succeed_and_corrupted_ones_fail() {
        let start = fixtures::apartment();
        let goals = [goal("tv_on"), goal("cup_on_table")];
        let gold: Vec<Vec<Action>> = goals
            .iter()
            .map(|g| crate::world::bfs_plan(&start, g, 10).unwrap().unwrap())
            .collect();
        let tasks: Vec<(WorldState, GoalSpec)> =
            goals.iter().map(|g| (start.clone(), g.clone())).collect();
        assert_eq!(success_rate(&gold, &tasks).unwrap(), 1.0);

        // Empty plans satisfy nothing; illegal plans count as failures.
        let broken = vec![vec![], vec![act("grab tv")]];
        assert_eq!(success_rate(&broken, &tasks).unwrap(), 0.0);

        let mixed = vec![gold[0].clone(), vec![]];
        assert_eq!(success_rate(&mixed, &tasks).unwrap(), 0.5);
    }

    #[test]
    fn success_rate_checks_alignment() {
        let start = fixtures::apartment();
        let tasks = vec![(start, goal("tv_on"))];
        assert!(matches!(
            success_rate(&[], &tasks),
            Err(MetricsError::LengthMismatch(0, 1))
        ));
    }

    #[test]
    fn curve_bins_by_exact_length() {
        // 3/4 correct at length 2, 1/4 at length 8.
        let mut results = Vec::new();
        for i in 0..4 {
            results.push((2usize, i < 3));
            results.push((8usize, i < 1));
        }
        let curve = complexity_curve(&results);
        assert_eq!(curve.len(), 2);
        assert_eq!(curve[&2], (0.75, 4));
        assert_eq!(curve[&8], (0.25, 4));
        let total: usize = curve.values().map(|(_, n)| n).sum();
        assert_eq!(total, results.len());
    }

    #[test]
    fn all_success_curve_is_flat_one() {
        let results: Vec<(usize, bool)> = (1..5).map(|l| (l, true)).collect();
        for (acc, _) in complexity_curve(&results).values() {
            assert_eq!(*acc, 1.0);
        }
    }

    #[test]
    fn multichoice_matches() {
        assert_eq!(multichoice_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(multichoice_accuracy(&[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(
            multichoice_accuracy(&[1, 0, 2, 2, 1], &[1, 1, 2, 2, 0]).unwrap(),
            0.6
        );
        assert!(matches!(
            multichoice_accuracy(&[1], &[1, 2]),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn eval_result_mean_is_exact() {
        let r = EvalResult::new("rouge_l", "strong", None, vec![0.25, 0.5, 1.0]);
        let expect = (0.25 + 0.5 + 1.0) / 3.0;
        assert!((r.mean - expect).abs() < 1e-12);
        assert_eq!(r.count, 3);
    }
}
