use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use cadrl::metrics::{aggregate_stats, recompute_min_separation, save_trajectory_csv, BenchmarkStats, CaseMetrics};
use cadrl::net::{sidecar_path, ValueNetwork, WeightsMeta, DEFAULT_WIDTHS};
use cadrl::rng::substream;
use cadrl::scenario::{crossing_testcase, named_scenario, random_testcase, TestCase};
use cadrl::sim::{self, Episode, PolicyKind, SimConfig};
use cadrl::training::{
    default_eval_cases, generate_orca_dataset, load_dataset, rl_train, save_dataset, supervised_init,
};

use crate::config::RunConfig;
use crate::Common;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_resolved(common: &Common, command: &str, cfg: &RunConfig) -> Result<()> {
    write_json(
        &common.out_dir.join("config.json"),
        &json!({ "command": command, "config": cfg }),
    )
}

pub fn gen_dataset(common: &Common, cfg: &RunConfig) -> Result<()> {
    write_resolved(common, "gen-dataset", cfg)?;
    let started = Instant::now();
    let ds = generate_orca_dataset(&cfg.dataset())?;
    let path = common.out_dir.join("dataset.bin");
    save_dataset(&path, &ds.pairs)?;
    write_json(
        &common.out_dir.join("dataset.json"),
        &json!({
            "pairs": ds.pairs.len(),
            "trajectories_kept": ds.kept,
            "trajectories_discarded": ds.discarded,
            "seed": cfg.seed,
            "generator": "orca-vs-orca",
        }),
    )?;
    println!(
        "{} pairs from {} trajectories ({} discarded) -> {} [{:.1}s]",
        ds.pairs.len(),
        ds.kept,
        ds.discarded,
        path.display(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn save_weights(path: &Path, net: &ValueNetwork, cfg: &RunConfig, provenance: serde_json::Value) -> Result<()> {
    let meta = WeightsMeta {
        gamma: cfg.gamma,
        widths: net.widths(),
        provenance,
    };
    net.save_with_meta(path, &meta)
        .with_context(|| format!("writing {}", path.display()))
}

pub fn train(
    common: &Common,
    cfg: &RunConfig,
    dataset: Option<&Path>,
    from_scratch: bool,
    resume: Option<&Path>,
) -> Result<()> {
    write_resolved(common, "train", cfg)?;
    let out = &common.out_dir;
    let started = Instant::now();
    let pairs = match (dataset, from_scratch) {
        (Some(path), false) => load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?,
        (None, true) => {
            let ds = generate_orca_dataset(&cfg.dataset())?;
            save_dataset(&out.join("dataset.bin"), &ds.pairs)?;
            println!("generated {} pairs from {} trajectories", ds.pairs.len(), ds.kept);
            ds.pairs
        }
        (Some(_), true) => bail!("--dataset and --from-scratch are mutually exclusive"),
        (None, false) => bail!("no training data: pass --dataset <file> or --from-scratch"),
    };

    let (init, start_episode, supervised) = match resume {
        Some(path) => {
            let net = ValueNetwork::load_expecting(path, &DEFAULT_WIDTHS)
                .with_context(|| format!("loading checkpoint {}", path.display()))?;
            let meta: WeightsMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
            let episode = meta
                .provenance
                .get("episode")
                .and_then(|v| v.as_u64())
                .context("checkpoint metadata lacks an episode index")? as usize;
            println!("resuming from episode {episode}");
            (net, episode, serde_json::Value::Null)
        }
        None => {
            let rep = supervised_init(&pairs, &DEFAULT_WIDTHS, &cfg.supervised(), Some(&out.join("diverged.bin")))?;
            println!(
                "supervised: holdout rms {:.4}, train rms {:.4} [{:.1}s]",
                rep.holdout_rms,
                rep.train_rms,
                started.elapsed().as_secs_f64()
            );
            save_weights(
                &out.join("supervised.bin"),
                &rep.net,
                cfg,
                json!({ "stage": "supervised", "episode": 0, "holdout_rms": rep.holdout_rms, "seed": cfg.seed }),
            )?;
            let trace: Vec<_> = rep
                .trace
                .iter()
                .map(|(it, loss, lr)| json!({ "iteration": it, "loss": loss, "learning_rate": lr }))
                .collect();
            (
                rep.net,
                0,
                json!({ "holdout_rms": rep.holdout_rms, "train_rms": rep.train_rms, "trace": trace }),
            )
        }
    };

    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let rl_started = Instant::now();
    let outcome = rl_train(&cfg.train(), &init, &pairs, &default_eval_cases(), start_episode, |report, net| {
        let path = ckpt_dir.join(format!("episode-{:05}.bin", report.episode));
        save_weights(
            &path,
            net,
            cfg,
            json!({ "stage": "rl", "episode": report.episode, "seed": cfg.seed }),
        )
        .map_err(|e| cadrl::Error::Format(format!("{e:#}")))?;
        println!(
            "episode {:5}: values {:?} extra time {:?}",
            report.episode,
            report.values.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            report.avg_extra_time.map(|t| (t * 1e3).round() / 1e3),
        );
        Ok(())
    })?;
    save_weights(
        &out.join("weights.bin"),
        &outcome.net,
        cfg,
        json!({ "stage": "final", "episode": cfg.episodes.max(start_episode), "seed": cfg.seed }),
    )?;
    write_json(
        &out.join("train_log.json"),
        &json!({
            "supervised": supervised,
            "start_episode": start_episode,
            "episodes": outcome.log,
            "evaluations": outcome.trace,
        }),
    )?;
    println!(
        "trained {} episodes [{:.1}s rl, {:.1}s total] -> {}",
        cfg.episodes.saturating_sub(start_episode),
        rl_started.elapsed().as_secs_f64(),
        started.elapsed().as_secs_f64(),
        out.join("weights.bin").display()
    );
    Ok(())
}

fn load_net(weights: Option<&Path>) -> Result<ValueNetwork> {
    let path = weights.context("--weights is required for CADRL policies")?;
    ValueNetwork::load_expecting(path, &DEFAULT_WIDTHS).with_context(|| format!("loading {}", path.display()))
}

const BENCH_POLICIES: [PolicyKind; 3] = [PolicyKind::Orca, PolicyKind::Cadrl, PolicyKind::CadrlConstrained];

struct PolicyRun {
    episodes: Vec<Episode>,
    metrics: Vec<CaseMetrics>,
    seconds: f64,
    decisions: usize,
}

fn run_cases(cases: &[TestCase], kind: PolicyKind, net: &ValueNetwork, sim_cfg: &SimConfig, seed: u64) -> Result<PolicyRun> {
    let started = Instant::now();
    let episodes: Vec<Episode> = cases
        .par_iter()
        .enumerate()
        .map(|(i, case)| {
            let net = kind.uses_network().then_some(net);
            sim::simulate(case, &case.policies(kind), net, sim_cfg, cadrl::rng::substream_seed(seed, "bench-sim", i as u64))
        })
        .collect::<cadrl::Result<_>>()?;
    let seconds = started.elapsed().as_secs_f64();
    for (i, ep) in episodes.iter().enumerate() {
        let again = recompute_min_separation(ep);
        if (again - ep.min_separation).abs() > 1e-9 && !(again.is_infinite() && ep.min_separation.is_infinite()) {
            bail!("case {i}: recorded min separation {} != recomputed {again}", ep.min_separation);
        }
    }
    Ok(PolicyRun {
        metrics: episodes.iter().map(CaseMetrics::from_episode).collect(),
        decisions: episodes.iter().map(|e| e.network_decisions).sum(),
        episodes,
        seconds,
    })
}

#[derive(Serialize)]
struct PolicyStats {
    policy: &'static str,
    #[serde(flatten)]
    stats: BenchmarkStats,
    constraint_violations: usize,
}

#[derive(Serialize)]
struct SweepRecord {
    alpha_deg: f64,
    orca: Option<f64>,
    cadrl: Option<f64>,
    cadrl_constrained: Option<f64>,
}

pub fn benchmark(common: &Common, cfg: &RunConfig, weights: Option<&Path>, crossing_sweep: bool) -> Result<()> {
    write_resolved(common, if crossing_sweep { "benchmark --crossing-sweep" } else { "benchmark" }, cfg)?;
    let net = load_net(weights)?;
    let sim_cfg = cfg.sim();
    let out = &common.out_dir;

    if crossing_sweep {
        let alphas: Vec<f64> = (0..=12).map(|k| 15.0 * k as f64).collect();
        let cases: Vec<TestCase> = alphas.iter().map(|&a| crossing_testcase(a)).collect();
        let mut per_policy = Vec::new();
        for kind in BENCH_POLICIES {
            per_policy.push(run_cases(&cases, kind, &net, &sim_cfg, cfg.seed)?);
        }
        let records: Vec<SweepRecord> = alphas
            .iter()
            .enumerate()
            .map(|(i, &alpha_deg)| SweepRecord {
                alpha_deg,
                orca: per_policy[0].metrics[i].extra_time,
                cadrl: per_policy[1].metrics[i].extra_time,
                cadrl_constrained: per_policy[2].metrics[i].extra_time,
            })
            .collect();
        write_json(&out.join("crossing_sweep.json"), &records)?;
        for (kind, run) in BENCH_POLICIES.iter().zip(&per_policy) {
            let eps: Vec<(usize, &Episode)> = run.episodes.iter().enumerate().collect();
            save_trajectory_csv(&out.join(format!("sweep_{}.csv", kind.name())), &eps)?;
        }
        println!("{:>6} {:>9} {:>9} {:>12}", "alpha", "orca", "cadrl", "constrained");
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        for r in &records {
            println!(
                "{:>6.0} {:>9} {:>9} {:>12}",
                r.alpha_deg,
                fmt(r.orca),
                fmt(r.cadrl),
                fmt(r.cadrl_constrained)
            );
        }
        return Ok(());
    }

    let cases: Vec<TestCase> = (0..cfg.bench_cases)
        .map(|i| random_testcase(cfg.bench_agents, cfg.bench_domain, &mut substream(cfg.seed, "bench-case", i as u64)))
        .collect::<cadrl::Result<_>>()?;
    let mut rows = Vec::new();
    for kind in BENCH_POLICIES {
        let run = run_cases(&cases, kind, &net, &sim_cfg, cfg.seed)?;
        let stats = aggregate_stats(&run.metrics)?;
        let violations: usize = run.episodes.iter().map(|e| e.constraint_violations.len()).sum();
        let eps: Vec<(usize, &Episode)> = run.episodes.iter().enumerate().collect();
        save_trajectory_csv(&out.join(format!("trajectories_{}.csv", kind.name())), &eps)?;
        write_case_csv(&out.join(format!("cases_{}.csv", kind.name())), &run.metrics)?;
        println!(
            "{:<18} avg {:.3} p75 {:.3} p90 {:.3} sep {:.3} collisions {} timeouts {} violations {}",
            kind.name(),
            stats.avg_extra_time,
            stats.p75_extra_time,
            stats.p90_extra_time,
            stats.avg_min_separation,
            stats.collisions,
            stats.timeouts,
            violations
        );
        if run.decisions > 0 {
            println!(
                "{:<18} {:.3} ms per decision over {} decisions (wall clock, all threads)",
                "",
                1e3 * run.seconds / run.decisions as f64,
                run.decisions
            );
        }
        rows.push(PolicyStats {
            policy: kind.name(),
            stats,
            constraint_violations: violations,
        });
    }
    write_json(
        &out.join("stats.json"),
        &json!({
            "agents": cfg.bench_agents,
            "cases": cfg.bench_cases,
            "domain_side": cfg.bench_domain,
            "seed": cfg.seed,
            "policies": rows,
        }),
    )
}

fn write_case_csv(path: &Path, metrics: &[CaseMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "extra_time", "min_separation", "collision", "timeout"])?;
    for (i, m) in metrics.iter().enumerate() {
        w.write_record([
            i.to_string(),
            m.extra_time.map_or(String::new(), |t| format!("{t:.6}")),
            format!("{:.6}", m.min_separation),
            m.collision.to_string(),
            m.timeout.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn simulate(
    common: &Common,
    cfg: &RunConfig,
    scenario: &str,
    alpha: f64,
    policy: &str,
    weights: Option<&Path>,
) -> Result<()> {
    write_resolved(common, "simulate", cfg)?;
    let kind = match policy {
        "cadrl" => PolicyKind::Cadrl,
        "cadrl-constrained" => PolicyKind::CadrlConstrained,
        "orca" => PolicyKind::Orca,
        other => bail!("unknown policy '{other}'; available: cadrl, cadrl-constrained, orca"),
    };
    let case = named_scenario(scenario, alpha, &mut substream(cfg.seed, "scenario", 0))?;
    let net = if kind.uses_network() { Some(load_net(weights)?) } else { None };
    let ep = sim::simulate(&case, &case.policies(kind), net.as_ref(), &cfg.sim(), cfg.seed)?;
    let csv_path: PathBuf = common.out_dir.join("trajectory.csv");
    save_trajectory_csv(&csv_path, &[(0, &ep)])?;
    let m = CaseMetrics::from_episode(&ep);
    write_json(
        &common.out_dir.join("summary.json"),
        &json!({
            "scenario": case.label,
            "policy": kind.name(),
            "outcomes": ep.trajectories.iter().map(|t| json!({ "agent_id": t.agent_id, "policy": t.policy, "outcome": t.outcome })).collect::<Vec<_>>(),
            "extra_time": m.extra_time,
            "min_separation": ep.min_separation,
            "constraint_violations": ep.constraint_violations,
        }),
    )?;
    println!(
        "{}: extra time {:?}, min separation {:.3} -> {}",
        case.label,
        m.extra_time,
        ep.min_separation,
        csv_path.display()
    );
    Ok(())
}
