//! Benchmark metrics, aggregate statistics and trajectory/stat export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{step_separation, Episode, Outcome, TrajectoryRecord};

/// Mean over agents of time to goal minus the straight-line lower bound.
pub fn extra_time_metric(trajs: &[TrajectoryRecord]) -> Result<f64> {
    if trajs.is_empty() {
        return Err(Error::invalid("no trajectories"));
    }
    let mut sum = 0.0;
    for tr in trajs {
        match tr.extra_time() {
            Some(te) => sum += te,
            None => {
                return Err(Error::invalid(format!(
                    "agent {} did not reach its goal ({:?})",
                    tr.agent_id, tr.outcome
                )))
            }
        }
    }
    Ok(sum / trajs.len() as f64)
}

/// Per-case summary. `extra_time` is `None` when any agent collided or
/// timed out; such cases are counted separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub extra_time: Option<f64>,
    pub min_separation: f64,
    pub collision: bool,
    pub timeout: bool,
}

impl CaseMetrics {
    pub fn from_episode(ep: &Episode) -> Self {
        let collision = ep
            .trajectories
            .iter()
            .any(|t| matches!(t.outcome, Outcome::Collision { .. }));
        let timeout = ep.any_timeout();
        let extra_time = if collision || timeout {
            None
        } else {
            extra_time_metric(&ep.trajectories).ok()
        };
        Self {
            extra_time,
            min_separation: ep.min_separation,
            collision,
            timeout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    /// Cases that completed without collision or timeout.
    pub completed: usize,
    pub avg_extra_time: f64,
    pub p75_extra_time: f64,
    pub p90_extra_time: f64,
    /// Mean over cases of each case's minimum pairwise separation (m).
    pub avg_min_separation: f64,
    pub collisions: usize,
    pub timeouts: usize,
}

/// Nearest-rank percentile of sorted data: element at rank ceil(p/100 * n).
pub fn percentile_nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty data");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn aggregate_stats(cases: &[CaseMetrics]) -> Result<BenchmarkStats> {
    if cases.is_empty() {
        return Err(Error::invalid("no cases to aggregate"));
    }
    let mut te: Vec<f64> = cases.iter().filter_map(|c| c.extra_time).collect();
    te.sort_by(f64::total_cmp);
    let (avg, p75, p90) = if te.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        let mut sum = 0.0;
        for v in &te {
            sum += v;
        }
        (
            sum / te.len() as f64,
            percentile_nearest_rank(&te, 75.0),
            percentile_nearest_rank(&te, 90.0),
        )
    };
    // Sort before summing so the result does not depend on case order.
    let mut seps: Vec<f64> = cases
        .iter()
        .map(|c| c.min_separation)
        .filter(|s| s.is_finite())
        .collect();
    seps.sort_by(f64::total_cmp);
    let avg_sep = if seps.is_empty() {
        f64::NAN
    } else {
        seps.iter().sum::<f64>() / seps.len() as f64
    };
    Ok(BenchmarkStats {
        completed: te.len(),
        avg_extra_time: avg,
        p75_extra_time: p75,
        p90_extra_time: p90,
        avg_min_separation: avg_sep,
        collisions: cases.iter().filter(|c| c.collision).count(),
        timeouts: cases.iter().filter(|c| c.timeout).count(),
    })
}

/// Minimum pairwise separation recomputed from stored trajectories alone.
/// Agents that stopped early are held at their final state.
pub fn recompute_min_separation(ep: &Episode) -> f64 {
    let trs = &ep.trajectories;
    let steps = trs.iter().map(|t| t.states.len()).max().unwrap_or(0);
    let at = |t: &TrajectoryRecord, k: usize| t.states[k.min(t.states.len() - 1)];
    let mut best = f64::INFINITY;
    for k in 0..steps.saturating_sub(1) {
        for i in 0..trs.len() {
            for j in i + 1..trs.len() {
                let d = step_separation(&at(&trs[i], k), &at(&trs[i], k + 1), &at(&trs[j], k), &at(&trs[j], k + 1), ep.dt);
                best = best.min(d);
            }
        }
    }
    best
}

pub const TRAJECTORY_HEADER: [&str; 9] = ["case_id", "agent_id", "t", "px", "py", "vx", "vy", "theta", "radius"];

/// Writes one row per agent per stored step.
pub fn write_trajectory_csv<W: Write>(out: W, episodes: &[(usize, &Episode)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAJECTORY_HEADER)?;
    for (case_id, ep) in episodes {
        for tr in &ep.trajectories {
            for (t, s) in tr.times.iter().zip(&tr.states) {
                let v = s.velocity();
                let p = s.position();
                w.write_record(&[
                    case_id.to_string(),
                    tr.agent_id.to_string(),
                    format!("{t:.4}"),
                    format!("{:.6}", p.x),
                    format!("{:.6}", p.y),
                    format!("{:.6}", v.x),
                    format!("{:.6}", v.y),
                    format!("{:.6}", s.heading()),
                    format!("{:.4}", s.radius()),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(path: &Path, episodes: &[(usize, &Episode)]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_trajectory_csv(std::io::BufWriter::new(f), episodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(te: f64) -> CaseMetrics {
        CaseMetrics {
            extra_time: Some(te),
            min_separation: 0.1,
            collision: false,
            timeout: false,
        }
    }

    #[test]
    fn nearest_rank_on_hundred_cases() {
        let cases: Vec<_> = (1..=100).map(|i| case(i as f64 / 100.0)).collect();
        let s = aggregate_stats(&cases).unwrap();
        assert_eq!(s.p75_extra_time, 0.75);
        assert_eq!(s.p90_extra_time, 0.90);
        assert!((s.avg_extra_time - 0.505).abs() < 1e-12);
    }

    #[test]
    fn identical_cases_collapse() {
        let s = aggregate_stats(&vec![case(0.3); 7]).unwrap();
        assert_eq!(s.avg_extra_time, 0.3);
        assert_eq!(s.p75_extra_time, 0.3);
        assert_eq!(s.p90_extra_time, 0.3);
    }

    #[test]
    fn failures_counted_apart() {
        let mut c = vec![case(0.2), case(0.4)];
        c.push(CaseMetrics {
            extra_time: None,
            min_separation: -0.05,
            collision: true,
            timeout: false,
        });
        let s = aggregate_stats(&c).unwrap();
        assert_eq!(s.completed, 2);
        assert_eq!(s.collisions, 1);
        assert!((s.avg_extra_time - 0.3).abs() < 1e-12);
    }

    #[test]
    fn empty_rejected() {
        assert!(aggregate_stats(&[]).is_err());
    }
}
