use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::engine::SimMetrics;
use super::BudgetMode;

pub const TRACE_HEADER: &str = "step,effective_batch,accepted_per_round";
pub const REQUESTS_HEADER: &str = "request,problem_id,l,n_fwd,proposed,accepted,decoded,completed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: BudgetMode,
    pub epoch: u64,
    pub steps: usize,
    pub makespan_model_time: f64,
    pub makespan_accepted_only: f64,
    /// Makespan of mode `none` over this one's, when a `none` run exists.
    pub speedup_vs_none: Option<f64>,
    pub mean_accepted_per_round: f64,
    pub complete: bool,
}

/// One row per step.
pub fn write_trace_csv<W: Write>(m: &SimMetrics, mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for s in &m.trace {
        writeln!(out, "{},{},{:.6}", s.step, s.effective_batch, s.accepted_per_round())?;
    }
    Ok(())
}

pub fn write_requests_csv<W: Write>(m: &SimMetrics, mut out: W) -> io::Result<()> {
    writeln!(out, "{REQUESTS_HEADER}")?;
    for (i, r) in m.requests.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{}",
            r.problem_id, r.l, r.n_fwd, r.proposed, r.accepted, r.decoded, r.completed
        )?;
    }
    Ok(())
}

/// `index problem_id: t0 t1 ...`, one line per request.
pub fn write_token_dump<W: Write>(m: &SimMetrics, mut out: W) -> io::Result<()> {
    for (i, r) in m.requests.iter().enumerate() {
        write!(out, "{i} {}:", r.problem_id)?;
        for t in &r.tokens {
            write!(out, " {t}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Summaries for runs of the same epoch under different modes.
pub fn summarize(runs: &[SimMetrics]) -> Vec<ModeSummary> {
    runs.iter()
        .map(|m| {
            let none = runs
                .iter()
                .find(|o| o.mode == BudgetMode::None && o.epoch == m.epoch)
                .map(|o| o.makespan_model_time);
            ModeSummary {
                mode: m.mode,
                epoch: m.epoch,
                steps: m.n_fwd(),
                makespan_model_time: m.makespan_model_time,
                makespan_accepted_only: m.makespan_accepted_only,
                speedup_vs_none: none.map(|n| if m.makespan_model_time > 0.0 { n / m.makespan_model_time } else { 1.0 }),
                mean_accepted_per_round: m.mean_accepted_per_round(),
                complete: m.complete,
            }
        })
        .collect()
}

/// Machine-readable form of [`write_summary`]; `speedup_vs_none` is empty
/// when there was no `none` run.
pub fn write_summary_csv<W: Write>(summaries: &[ModeSummary], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> csv::Result<Vec<ModeSummary>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

pub fn write_summary<W: Write>(summaries: &[ModeSummary], mut out: W) -> io::Result<()> {
    for s in summaries {
        writeln!(out, "[{} epoch={}]", s.mode, s.epoch)?;
        writeln!(out, "steps={}", s.steps)?;
        writeln!(out, "makespan_model_time={:.6}", s.makespan_model_time)?;
        writeln!(out, "makespan_accepted_only={:.6}", s.makespan_accepted_only)?;
        match s.speedup_vs_none {
            Some(x) => writeln!(out, "speedup_vs_none={x:.6}")?,
            None => writeln!(out, "speedup_vs_none=n/a")?,
        }
        writeln!(out, "mean_accepted_per_round={:.6}", s.mean_accepted_per_round)?;
        writeln!(out, "complete={}", s.complete)?;
    }
    Ok(())
}
