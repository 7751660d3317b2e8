//! Command-line front end: single runs and parameter sweeps, CSV or JSON out.
//!
//! `run` simulates one configuration and emits one summary row; with trials
//! it adds a Monte Carlo estimate and a trace of a single sampled run.
//! `sweep` does the same across several alpha_sq values, one row per
//! (alpha_sq, rounds) pair, alpha_sq ascending. Whenever the round budget
//! reaches 2 the output also carries the round-2 comparison between the
//! exact recursion and the naive unrenormalized expression.
//!
//! Output is byte-identical for identical configurations, seed included.

use std::io::Write;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    monte_carlo_with, success_probability_exact, success_probability_naive, SweepRow,
};
use crate::error::{Error, Result};
use crate::output::{
    csv_row, json_f64, json_row, json_string, trace_comment_lines, trace_from_report, trace_json,
    RunTrace, CSV_HEADER,
};
use crate::protocol::{run_protocol, ProtocolOptions, SchmidtPair};

/// Environment variable consulted for the default seed; flags win.
pub const SEED_ENV_VAR: &str = "ECSIM_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl OutputFormat {
    fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

/// Validated run configuration shared by both subcommands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub alpha_sq: f64,
    pub n_parties: u32,
    pub max_rounds: u32,
    pub trials: u64,
    pub seed: u64,
    pub output_format: OutputFormat,
    pub sweep: Option<Vec<f64>>,
    pub ancilla_mismatch: f64,
}

impl RunConfig {
    /// Range checks with one-line diagnostics naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let check_alpha = |value: f64| -> Result<()> {
            if !value.is_finite() || value <= 0.0 || value >= 1.0 {
                return Err(Error::InvalidConfig {
                    field: "alpha_sq",
                    message: format!(
                        "degenerate Schmidt pair ({value} must lie strictly between 0 and 1)"
                    ),
                });
            }
            Ok(())
        };
        match &self.sweep {
            None => check_alpha(self.alpha_sq)?,
            Some(values) => {
                if values.is_empty() {
                    return Err(Error::InvalidConfig {
                        field: "sweep",
                        message: "empty sweep list".to_string(),
                    });
                }
                for &value in values {
                    check_alpha(value)?;
                }
                let mut sorted = values.clone();
                sorted.sort_by(f64::total_cmp);
                if sorted.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidConfig {
                        field: "sweep",
                        message: "sweep values must be distinct".to_string(),
                    });
                }
            }
        }
        if self.n_parties < 2 || self.n_parties > 99 {
            return Err(Error::InvalidConfig {
                field: "n_parties",
                message: format!("{} is outside 2..=99", self.n_parties),
            });
        }
        if self.max_rounds < 1 || self.max_rounds > 10_000 {
            return Err(Error::InvalidConfig {
                field: "max_rounds",
                message: format!("{} is outside 1..=10000", self.max_rounds),
            });
        }
        if !self.ancilla_mismatch.is_finite() || self.ancilla_mismatch.abs() >= 1.0 {
            return Err(Error::InvalidConfig {
                field: "ancilla_mismatch",
                message: format!("{} is outside (-1, 1)", self.ancilla_mismatch),
            });
        }
        Ok(())
    }

    fn options_for(&self, alpha_sq: f64, max_rounds: u32) -> Result<ProtocolOptions> {
        let mut opts = ProtocolOptions::new(
            SchmidtPair::from_alpha_sq(alpha_sq)?,
            self.n_parties,
            max_rounds,
        );
        opts.ancilla_mismatch = self.ancilla_mismatch;
        Ok(opts)
    }

    fn json_echo(&self) -> String {
        let sweep = match &self.sweep {
            Some(values) => {
                let items: Vec<String> = values.iter().map(|v| json_f64(*v)).collect();
                format!("[{}]", items.join(","))
            }
            None => "null".to_string(),
        };
        format!(
            "{{\"alpha_sq\":{},\"n_parties\":{},\"max_rounds\":{},\"trials\":{},\"seed\":{},\"output_format\":{},\"sweep\":{},\"ancilla_mismatch\":{}}}",
            json_f64(self.alpha_sq),
            self.n_parties,
            self.max_rounds,
            self.trials,
            self.seed,
            json_string(self.output_format.as_str()),
            sweep,
            json_f64(self.ancilla_mismatch),
        )
    }
}

/// Exact-vs-naive probabilities for the round-2 comparison report.
#[derive(Debug, Clone, Copy)]
pub struct Round2Comparison {
    pub exact: f64,
    pub naive_unnormalized: f64,
}

fn round2_comparison(config: &RunConfig, alpha_sq: f64) -> Result<Round2Comparison> {
    let coefficients = SchmidtPair::from_alpha_sq(alpha_sq)?;
    // Mismatch shifts the exact recursion; the naive expression has no
    // mismatch notion, so it keeps the matched-source value.
    let exact = if config.ancilla_mismatch == 0.0 {
        success_probability_exact(&coefficients, 2)?
    } else {
        crate::protocol::exact_success_by_round(&coefficients, 2, config.ancilla_mismatch)?[1]
    };
    Ok(Round2Comparison {
        exact,
        naive_unnormalized: success_probability_naive(&coefficients, 2),
    })
}

fn compute_row(config: &RunConfig, alpha_sq: f64, max_rounds: u32) -> Result<SweepRow> {
    let opts = config.options_for(alpha_sq, max_rounds)?;
    if config.trials >= 1 {
        monte_carlo_with(&opts, config.trials, config.seed)
    } else {
        SweepRow::exact_only(&opts)
    }
}

/// Trace run uses the first stream after the Monte Carlo trials.
fn sample_trace(config: &RunConfig, alpha_sq: f64) -> Result<RunTrace> {
    let opts = config.options_for(alpha_sq, config.max_rounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(config.trials);
    let report = run_protocol(&opts, &mut rng)?;
    trace_from_report(&report)
}

fn emit(
    config: &RunConfig,
    rows: &[SweepRow],
    comparison: Option<Round2Comparison>,
    trace: Option<&RunTrace>,
    out: &mut impl Write,
) -> std::io::Result<()> {
    match config.output_format {
        OutputFormat::Csv => {
            writeln!(out, "{CSV_HEADER}")?;
            for row in rows {
                writeln!(out, "{}", csv_row(row))?;
            }
            if let Some(cmp) = comparison {
                writeln!(
                    out,
                    "# round2_success exact={} naive_unnormalized={}",
                    json_f64(cmp.exact),
                    json_f64(cmp.naive_unnormalized),
                )?;
            }
            if let Some(trace) = trace {
                for line in trace_comment_lines(trace) {
                    writeln!(out, "{line}")?;
                }
            }
        }
        OutputFormat::Json => {
            let rows_json: Vec<String> = rows.iter().map(json_row).collect();
            let mut body = format!(
                "{{\"config\":{},\"rows\":[{}]",
                config.json_echo(),
                rows_json.join(","),
            );
            if let Some(cmp) = comparison {
                body.push_str(&format!(
                    ",\"round2_comparison\":{{\"exact\":{},\"naive_unnormalized\":{}}}",
                    json_f64(cmp.exact),
                    json_f64(cmp.naive_unnormalized),
                ));
            }
            if let Some(trace) = trace {
                body.push_str(&format!(",\"trace\":{}", trace_json(trace)));
            }
            body.push('}');
            writeln!(out, "{body}")?;
        }
    }
    Ok(())
}

/// `run`: one summary row for the configured point, optional Monte Carlo
/// estimate and sampled-run trace.
pub fn cmd_run(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    config.validate()?;
    let rows = vec![compute_row(config, config.alpha_sq, config.max_rounds)?];
    let comparison = if config.max_rounds >= 2 {
        Some(round2_comparison(config, config.alpha_sq)?)
    } else {
        None
    };
    let trace = if config.trials >= 1 {
        Some(sample_trace(config, config.alpha_sq)?)
    } else {
        None
    };
    emit(config, &rows, comparison, trace.as_ref(), out).map_err(io_error)
}

/// `sweep`: rows for every (alpha_sq, rounds) pair, alpha_sq ascending and
/// rounds from 1 to the configured budget.
pub fn cmd_sweep(config: &RunConfig, out: &mut impl Write) -> Result<()> {
    config.validate()?;
    let mut values = config.sweep.clone().ok_or(Error::InvalidConfig {
        field: "sweep",
        message: "sweep requires at least one alpha_sq value".to_string(),
    })?;
    values.sort_by(f64::total_cmp);

    let mut rows = Vec::with_capacity(values.len() * config.max_rounds as usize);
    for &alpha_sq in &values {
        for rounds in 1..=config.max_rounds {
            rows.push(compute_row(config, alpha_sq, rounds)?);
        }
    }
    let comparison = if config.max_rounds >= 2 {
        Some(round2_comparison(config, values[0])?)
    } else {
        None
    };
    emit(config, &rows, comparison, None, out).map_err(io_error)
}

fn io_error(err: std::io::Error) -> Error {
    Error::InvalidConfig {
        field: "output",
        message: err.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "ecsim",
    version,
    about = "Entanglement concentration simulator: charge-detection parity checks, \
             multi-round recycling, and N-party GHZ concentration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration and emit a summary row.
    Run(RunArgs),
    /// Sweep several alpha_sq values; one row per (alpha_sq, rounds) pair.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Number of parties sharing the state; Bob is party 2.
    #[arg(long, default_value_t = 2)]
    pub parties: u32,

    /// Maximum protocol rounds before giving up.
    #[arg(long, default_value_t = 1)]
    pub rounds: u32,

    /// Monte Carlo trials; 0 means exact analysis only.
    #[arg(long, default_value_t = 0)]
    pub trials: u64,

    /// RNG seed. Defaults to $ECSIM_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,

    /// Additive offset applied to each round's ancilla alpha_sq, for
    /// source-mismatch sensitivity studies.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub ancilla_mismatch: f64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Schmidt weight |alpha|^2 of the shared state, strictly inside (0, 1).
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_sq: f64,

    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated alpha_sq values to sweep.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub alpha_sq: Vec<f64>,

    #[command(flatten)]
    pub common: CommonArgs,
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var(SEED_ENV_VAR)
            .ok()
            .and_then(|raw| raw.parse().ok())
    })
    .unwrap_or(0)
}

fn config_from(common: &CommonArgs, alpha_sq: f64, sweep: Option<Vec<f64>>) -> RunConfig {
    RunConfig {
        alpha_sq,
        n_parties: common.parties,
        max_rounds: common.rounds,
        trials: common.trials,
        seed: resolve_seed(common.seed),
        output_format: common.format,
        sweep,
        ancilla_mismatch: common.ancilla_mismatch,
    }
}

/// Parses `args`, runs the requested command, and returns the exit code.
pub fn main_from_args<I, T>(args: I, out: &mut impl Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // clap renders its own help/version/error text.
            let _ = err.print();
            return if err.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(&config_from(&args.common, args.alpha_sq, None), out),
        Command::Sweep(args) => cmd_sweep(
            &config_from(&args.common, f64::NAN, Some(args.alpha_sq.clone())),
            out,
        ),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> RunConfig {
        RunConfig {
            alpha_sq: 0.8,
            n_parties: 2,
            max_rounds: 1,
            trials: 0,
            seed: 0,
            output_format: OutputFormat::Csv,
            sweep: None,
            ancilla_mismatch: 0.0,
        }
    }

    #[test]
    fn validation_names_the_offending_field() {
        let mut config = base_config();
        config.alpha_sq = 0.0;
        let err = config.validate().unwrap_err().to_string();
        assert!(err.starts_with("alpha_sq:"), "{err}");
        assert!(err.contains("degenerate Schmidt pair"), "{err}");

        let mut config = base_config();
        config.n_parties = 1;
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("n_parties:"));

        let mut config = base_config();
        config.max_rounds = 0;
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .starts_with("max_rounds:"));

        let mut config = base_config();
        config.sweep = Some(vec![]);
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("empty sweep list"));

        let mut config = base_config();
        config.sweep = Some(vec![0.5, 0.5]);
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("distinct"));
    }

    #[test]
    fn run_emits_header_and_exact_row() {
        let config = base_config();
        let mut out = Vec::new();
        cmd_run(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let row = lines.next().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        assert_eq!(fields[..3], ["0.8", "2", "1"]);
        let exact: f64 = fields[3].parse().unwrap();
        assert!((exact - 0.32).abs() < 1e-12);
        assert_eq!(fields[4], "NaN");
        assert_eq!(fields[5], "0");
        assert!(lines.next().is_none());
    }

    #[test]
    fn run_with_trials_appends_a_trace() {
        let mut config = base_config();
        config.trials = 50;
        config.seed = 7;
        let mut out = Vec::new();
        cmd_run(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("# trace round=1 charge="));
        assert!(text.contains("# trace message party-2 -> broadcast:"));
        assert!(text.contains("# trace succeeded="));
    }

    #[test]
    fn multi_round_run_reports_the_round2_comparison() {
        let mut config = base_config();
        config.max_rounds = 2;
        let mut out = Vec::new();
        cmd_run(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let line = text
            .lines()
            .find(|l| l.starts_with("# round2_success"))
            .expect("comparison line present");
        assert!(line.contains("exact="));
        assert!(line.contains("naive_unnormalized="));
    }

    #[test]
    fn sweep_emits_sorted_cross_product() {
        let mut config = base_config();
        config.sweep = Some(vec![0.9, 0.5, 0.7]);
        config.max_rounds = 2;
        let mut out = Vec::new();
        cmd_sweep(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let rows: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("alpha_sq"))
            .collect();
        assert_eq!(rows.len(), 6);
        let firsts: Vec<f64> = rows
            .iter()
            .map(|r| r.split(',').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(firsts, vec![0.5, 0.5, 0.7, 0.7, 0.9, 0.9]);
    }

    #[test]
    fn sweep_round1_column_matches_the_formula() {
        let mut config = base_config();
        config.sweep = Some(vec![0.5, 0.6, 0.7, 0.8, 0.9]);
        let mut out = Vec::new();
        cmd_sweep(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let exacts: Vec<f64> = text
            .lines()
            .skip(1)
            .map(|row| row.split(',').nth(3).unwrap().parse().unwrap())
            .collect();
        let expected = [0.5, 0.48, 0.42, 0.32, 0.18];
        assert_eq!(exacts.len(), expected.len());
        for (got, want) in exacts.iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn json_document_echoes_config_and_rows() {
        let mut config = base_config();
        config.output_format = OutputFormat::Json;
        config.sweep = Some(vec![0.5, 0.8]);
        let mut out = Vec::new();
        cmd_sweep(&config, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("{\"config\":{"));
        assert!(text.contains("\"rows\":[{"));
        assert!(text.contains("\"alpha_sq\":5.0000000000000000e-1"));
        assert!(text.trim_end().ends_with('}'));
    }

    #[test]
    fn identical_configs_produce_identical_bytes() {
        let mut config = base_config();
        config.trials = 200;
        config.seed = 99;
        config.max_rounds = 3;
        let mut a = Vec::new();
        let mut b = Vec::new();
        cmd_run(&config, &mut a).unwrap();
        cmd_run(&config, &mut b).unwrap();
        assert_eq!(a, b);
    }
}
