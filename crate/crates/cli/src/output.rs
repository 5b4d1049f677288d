//! Deterministic CSV formatting. Every number is rendered with 15
//! significant digits so repeated runs with the same inputs are
//! byte-identical.

use pollsys::analysis::{FirstMomentSolution, SecondMomentSolution};
use pollsys::fluid::FluidPE;
use pollsys::sim::{MomentSummary, StageSampleSet};

/// 15 significant digits in scientific notation.
pub fn sig15(x: f64) -> String {
    format!("{x:.14e}")
}

/// First-moment solution as `stage,queue,q` rows (1-based indices).
pub fn first_moment_csv(sol: &FirstMomentSolution) -> String {
    let mut out = String::from("stage,queue,q\n");
    for i in 0..sol.stage_count() {
        for k in 0..sol.queue_count() {
            out.push_str(&format!("{},{},{}\n", i + 1, k + 1, sig15(sol.q(i, k))));
        }
    }
    out
}

/// Second-moment solution as `stage,j,k,f` rows (1-based indices).
pub fn second_moment_csv(sol: &SecondMomentSolution) -> String {
    let mut out = String::from("stage,j,k,f\n");
    for i in 0..sol.stage_count() {
        for j in 0..sol.queue_count() {
            for k in 0..sol.queue_count() {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    i + 1,
                    j + 1,
                    k + 1,
                    sig15(sol.f(i, j, k))
                ));
            }
        }
    }
    out
}

/// PE trajectory breakpoints as `time,q_1,...,q_K` rows.
pub fn trajectory_csv(pe: &FluidPE) -> String {
    let k = pe.queue_count();
    let mut out = String::from("time");
    for q in 1..=k {
        out.push_str(&format!(",q_{q}"));
    }
    out.push('\n');
    for pt in pe.trajectory() {
        out.push_str(&sig15(pt.time));
        for v in &pt.levels {
            out.push(',');
            out.push_str(&sig15(*v));
        }
        out.push('\n');
    }
    out
}

/// PE summary: the period, then per-stage busy/switchover durations, then
/// the polling-epoch matrix.
pub fn pe_summary_csv(pe: &FluidPE) -> String {
    let mut out = String::from("key,stage,queue,value\n");
    out.push_str(&format!("period,,,{}\n", sig15(pe.period())));
    out.push_str(&format!("consistent,,,{}\n", pe.is_consistent()));
    for (i, &b) in pe.stage_busy().iter().enumerate() {
        out.push_str(&format!("stage_busy,{},,{}\n", i + 1, sig15(b)));
    }
    for (i, &s) in pe.stage_switch().iter().enumerate() {
        out.push_str(&format!("stage_switch,{},,{}\n", i + 1, sig15(s)));
    }
    for i in 0..pe.stage_count() {
        for k in 0..pe.queue_count() {
            out.push_str(&format!("q,{},{},{}\n", i + 1, k + 1, sig15(pe.q(i, k))));
        }
    }
    out
}

/// Raw sample dump: one row per (replication, cycle, stage, queue), with
/// the stage's busy time repeated on each of its queue rows.
pub fn samples_csv(replications: &[StageSampleSet]) -> String {
    let mut out = String::from("replication,cycle,stage,queue,q_at_poll,busy_time\n");
    for (rep, samples) in replications.iter().enumerate() {
        for stage in 0..samples.stage_count() {
            let busy = samples.busy_observations(stage);
            for (cycle, qs) in samples.queue_observations(stage).iter().enumerate() {
                for (k, &q) in qs.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        rep + 1,
                        cycle + 1,
                        stage + 1,
                        k + 1,
                        q,
                        sig15(busy[cycle])
                    ));
                }
            }
        }
    }
    out
}

/// Moment-estimate summary: `stage,queue,p,estimate,ci_halfwidth` rows,
/// with `queue = busy` for the busy-time rows.
pub fn summary_csv(summaries: &[MomentSummary]) -> String {
    let mut out = String::from("stage,queue,p,estimate,ci_halfwidth\n");
    for summary in summaries {
        for stage in 0..summary.stage_count() {
            for k in 0..summary.queue_count() {
                let est = summary.queue_moment(stage, k);
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    stage + 1,
                    k + 1,
                    summary.order,
                    sig15(est.point),
                    sig15(est.ci_halfwidth)
                ));
            }
            let est = summary.busy_moment(stage);
            out.push_str(&format!(
                "{},busy,{},{},{}\n",
                stage + 1,
                summary.order,
                sig15(est.point),
                sig15(est.ci_halfwidth)
            ));
        }
    }
    out
}
