//! Deterministic CSV and JSON emission.
//!
//! JSON numbers are written with 17 significant digits so every f64 survives
//! a round trip; NaN becomes `null` in JSON and `NaN` in CSV. All output is
//! UTF-8 with LF line endings, byte-identical for identical inputs.

use crate::analysis::SweepRow;
use crate::error::Result;
use crate::protocol::ProtocolReport;

/// Fixed sweep-table header.
pub const CSV_HEADER: &str =
    "alpha_sq,n_parties,max_rounds,exact_success,mc_success,mc_trials,mc_stderr,mean_rounds_to_success";

/// Shortest round-trip rendering for CSV cells.
pub fn csv_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x}")
    }
}

/// 17-significant-digit JSON number; non-finite values become null.
pub fn json_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".to_string()
    }
}

pub fn json_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

pub fn csv_row(row: &SweepRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        csv_f64(row.alpha_sq),
        row.n_parties,
        row.max_rounds,
        csv_f64(row.exact_success),
        csv_f64(row.mc_success),
        row.mc_trials,
        csv_f64(row.mc_stderr),
        csv_f64(row.mean_rounds_to_success),
    )
}

pub fn json_row(row: &SweepRow) -> String {
    format!(
        "{{\"alpha_sq\":{},\"n_parties\":{},\"max_rounds\":{},\"exact_success\":{},\"mc_success\":{},\"mc_trials\":{},\"mc_stderr\":{},\"mean_rounds_to_success\":{}}}",
        json_f64(row.alpha_sq),
        row.n_parties,
        row.max_rounds,
        json_f64(row.exact_success),
        json_f64(row.mc_success),
        row.mc_trials,
        json_f64(row.mc_stderr),
        json_f64(row.mean_rounds_to_success),
    )
}

/// Flattened view of one sampled run, ready for trace output.
#[derive(Debug, Clone)]
pub struct RunTrace {
    pub rounds: Vec<TraceRound>,
    pub messages: Vec<String>,
    pub succeeded: bool,
    pub rounds_used: u32,
    /// Fidelity of the finished state with the matching maximally entangled
    /// target; NaN when the run failed.
    pub final_fidelity: f64,
    pub final_state: Option<String>,
    pub cumulative_success_probability: f64,
}

#[derive(Debug, Clone)]
pub struct TraceRound {
    pub round: u32,
    pub charge: String,
    pub spin: Option<String>,
    pub branch_probability: f64,
    pub correction: String,
    pub state: String,
}

/// Builds the trace view, computing the finished state's fidelity against
/// the GHZ target on its own electron/mode slots.
pub fn trace_from_report(report: &ProtocolReport) -> Result<RunTrace> {
    let final_fidelity = match &report.final_state {
        Some(state) => {
            let assignment = state
                .mode_assignment()
                .expect("finished states have uniform mode assignments");
            let slots: Vec<_> = assignment.into_iter().collect();
            let target = crate::state::PureState::ghz(&slots)?;
            state.fidelity_up_to_phase(&target)?
        }
        None => f64::NAN,
    };
    Ok(RunTrace {
        rounds: report
            .rounds
            .iter()
            .enumerate()
            .map(|(i, outcome)| TraceRound {
                round: i as u32 + 1,
                charge: outcome.charge_result.to_string(),
                spin: outcome.spin_result.map(|s| s.to_string()),
                branch_probability: outcome.branch_probability,
                correction: outcome.correction_applied.to_string(),
                state: outcome.resulting_state.to_string(),
            })
            .collect(),
        messages: report.messages.iter().map(|m| m.to_string()).collect(),
        succeeded: report.succeeded,
        rounds_used: report.rounds_used,
        final_fidelity,
        final_state: report.final_state.as_ref().map(|s| s.to_string()),
        cumulative_success_probability: report.cumulative_success_probability,
    })
}

pub fn trace_comment_lines(trace: &RunTrace) -> Vec<String> {
    let mut lines = Vec::new();
    for round in &trace.rounds {
        lines.push(format!(
            "# trace round={} charge={} spin={} p_branch={} correction={} state={}",
            round.round,
            round.charge,
            round.spin.as_deref().unwrap_or("-"),
            csv_f64(round.branch_probability),
            round.correction,
            round.state,
        ));
    }
    for message in &trace.messages {
        lines.push(format!("# trace message {message}"));
    }
    lines.push(format!(
        "# trace succeeded={} rounds_used={} final_fidelity={}",
        trace.succeeded,
        trace.rounds_used,
        csv_f64(trace.final_fidelity),
    ));
    lines
}

pub fn trace_json(trace: &RunTrace) -> String {
    let rounds: Vec<String> = trace
        .rounds
        .iter()
        .map(|r| {
            format!(
                "{{\"round\":{},\"charge\":{},\"spin\":{},\"branch_probability\":{},\"correction\":{},\"state\":{}}}",
                r.round,
                json_string(&r.charge),
                r.spin
                    .as_deref()
                    .map(json_string)
                    .unwrap_or_else(|| "null".to_string()),
                json_f64(r.branch_probability),
                json_string(&r.correction),
                json_string(&r.state),
            )
        })
        .collect();
    let messages: Vec<String> = trace.messages.iter().map(|m| json_string(m)).collect();
    format!(
        "{{\"rounds\":[{}],\"messages\":[{}],\"succeeded\":{},\"rounds_used\":{},\"final_fidelity\":{},\"final_state\":{},\"cumulative_success_probability\":{}}}",
        rounds.join(","),
        messages.join(","),
        trace.succeeded,
        trace.rounds_used,
        json_f64(trace.final_fidelity),
        trace
            .final_state
            .as_deref()
            .map(json_string)
            .unwrap_or_else(|| "null".to_string()),
        json_f64(trace.cumulative_success_probability),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_render_nan_and_numbers() {
        assert_eq!(csv_f64(f64::NAN), "NaN");
        assert_eq!(csv_f64(0.32), "0.32");
        assert_eq!(json_f64(f64::NAN), "null");
        assert_eq!(json_f64(0.32), "3.2000000000000001e-1");
        // Round trip at full precision.
        let x: f64 = 0.0512 / 0.68;
        let parsed: f64 = json_f64(x).parse().unwrap();
        assert_eq!(parsed, x);
    }

    #[test]
    fn json_strings_escape_quotes_and_controls() {
        assert_eq!(json_string("a\"b"), "\"a\\\"b\"");
        assert_eq!(json_string("a\\b"), "\"a\\\\b\"");
        assert_eq!(json_string("↑a1"), "\"↑a1\"");
        assert_eq!(json_string("x\ny"), "\"x\\ny\"");
    }

    #[test]
    fn csv_row_shape_matches_the_header() {
        let row = SweepRow {
            alpha_sq: 0.8,
            n_parties: 2,
            max_rounds: 1,
            exact_success: 0.32,
            mc_success: f64::NAN,
            mc_trials: 0,
            mc_stderr: f64::NAN,
            mean_rounds_to_success: f64::NAN,
        };
        let line = csv_row(&row);
        assert_eq!(line.split(',').count(), CSV_HEADER.split(',').count());
        assert_eq!(line, "0.8,2,1,0.32,NaN,0,NaN,NaN");
    }
}
