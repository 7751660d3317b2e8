//! Exact branch enumeration, Monte Carlo estimation, and the per-round
//! success-probability formulas they are checked against.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::elements::reroute_mode;
use crate::error::{Error, Result};
use crate::protocol::{
    ancilla_for, exact_cumulative_success, keep_rail, party_mode, prepare_shared_state,
    recycle_branches, round_branches, run_protocol, ProtocolOptions, SchmidtPair, BOB,
};
use crate::state::{ModeLabel, PureState};

/// Terminal classification of a branch-tree leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafOutcome {
    Success { rounds_used: u32 },
    Exhausted { rounds_used: u32 },
}

/// One measurement event in the exact expansion. `probability` is the
/// unconditional path probability; children of any node sum back to it.
#[derive(Debug, Clone)]
pub struct BranchNode {
    pub label: String,
    pub probability: f64,
    pub leaf: Option<LeafOutcome>,
    pub state: Option<PureState>,
    pub children: Vec<BranchNode>,
}

impl BranchNode {
    pub fn is_leaf(&self) -> bool {
        self.leaf.is_some()
    }
}

/// Exhaustive expansion of every measurement outcome of a protocol run.
#[derive(Debug, Clone)]
pub struct BranchTree {
    pub root: BranchNode,
}

impl BranchTree {
    pub fn leaves(&self) -> Vec<&BranchNode> {
        let mut out = Vec::new();
        fn walk<'a>(node: &'a BranchNode, out: &mut Vec<&'a BranchNode>) {
            if node.is_leaf() {
                out.push(node);
            }
            for child in &node.children {
                walk(child, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }

    /// Total probability of all success leaves.
    pub fn success_probability(&self) -> f64 {
        self.leaves()
            .iter()
            .filter(|n| matches!(n.leaf, Some(LeafOutcome::Success { .. })))
            .map(|n| n.probability)
            .sum()
    }

    /// Checks that every internal node's children sum to its probability.
    pub fn conservation_holds(&self, tolerance: f64) -> bool {
        fn walk(node: &BranchNode, tolerance: f64) -> bool {
            if node.children.is_empty() {
                return true;
            }
            let total: f64 = node.children.iter().map(|c| c.probability).sum();
            (total - node.probability).abs() <= tolerance
                && node.children.iter().all(|c| walk(c, tolerance))
        }
        walk(&self.root, tolerance)
    }
}

/// Expands every measurement outcome deterministically — no sampling. Leaf
/// probabilities sum to 1.
pub fn enumerate_branches(
    coefficients: &SchmidtPair,
    n_parties: u32,
    max_rounds: u32,
) -> Result<BranchTree> {
    enumerate_branches_with(&ProtocolOptions::new(*coefficients, n_parties, max_rounds))
}

pub fn enumerate_branches_with(opts: &ProtocolOptions) -> Result<BranchTree> {
    opts.validate()?;
    let modes: Vec<ModeLabel> = (1..=opts.n_parties).map(party_mode).collect();
    let shared = prepare_shared_state(&opts.coefficients, &modes)?;
    let children = expand_rounds(&shared, &opts.coefficients, 1, 1.0, opts)?;
    Ok(BranchTree {
        root: BranchNode {
            label: "run".to_string(),
            probability: 1.0,
            leaf: None,
            state: None,
            children,
        },
    })
}

fn expand_rounds(
    pair_state: &PureState,
    pair_coefficients: &SchmidtPair,
    round: u32,
    path_probability: f64,
    opts: &ProtocolOptions,
) -> Result<Vec<BranchNode>> {
    if pair_coefficients.is_degenerate() {
        // Deep failure chains square the coefficients toward a product
        // state; once the pair is degenerate at working precision no later
        // round can herald, so the branch terminates here.
        return Ok(vec![BranchNode {
            label: "stalled".to_string(),
            probability: path_probability,
            leaf: Some(LeafOutcome::Exhausted {
                rounds_used: round.saturating_sub(1),
            }),
            state: Some(pair_state.clone()),
            children: Vec::new(),
        }]);
    }
    let ancilla = ancilla_for(pair_coefficients, opts.ancilla_mismatch, round)?;
    let branches = round_branches(pair_state, &ancilla)?;

    let p_one = path_probability * branches.p_success;
    let charge_one = BranchNode {
        label: "charge=1".to_string(),
        probability: p_one,
        leaf: None,
        state: None,
        children: vec![
            BranchNode {
                label: "spin=up".to_string(),
                probability: p_one * branches.p_up_given_success,
                leaf: Some(LeafOutcome::Success { rounds_used: round }),
                state: branches.success_up,
                children: Vec::new(),
            },
            BranchNode {
                label: "spin=down".to_string(),
                probability: p_one * (1.0 - branches.p_up_given_success),
                leaf: Some(LeafOutcome::Success { rounds_used: round }),
                state: branches.success_down,
                children: Vec::new(),
            },
        ],
    };

    let p_zero = path_probability * branches.p_failure;
    let charge_zero = if round == opts.max_rounds {
        BranchNode {
            label: "charge=0".to_string(),
            probability: p_zero,
            leaf: Some(LeafOutcome::Exhausted { rounds_used: round }),
            state: branches.failure_state,
            children: Vec::new(),
        }
    } else {
        let bunched = branches.failure_state.as_ref().ok_or(Error::ZeroNorm)?;
        let recycled = recycle_branches(bunched)?;
        let spin_children = [
            ("spin=up", recycled.p_up, recycled.residual_up),
            ("spin=down", 1.0 - recycled.p_up, recycled.residual_down),
        ];
        let mut children = Vec::with_capacity(2);
        for (label, conditional, residual) in spin_children {
            let residual = residual.ok_or(Error::ZeroNorm)?;
            let rerouted = reroute_mode(&residual, &keep_rail(), &party_mode(BOB))?;
            let probability = p_zero * conditional;
            children.push(BranchNode {
                label: label.to_string(),
                probability,
                leaf: None,
                state: None,
                children: expand_rounds(
                    &rerouted,
                    &recycled.next_coefficients,
                    round + 1,
                    probability,
                    opts,
                )?,
            });
        }
        BranchNode {
            label: "charge=0".to_string(),
            probability: p_zero,
            leaf: None,
            state: None,
            children,
        }
    };

    Ok(vec![charge_one, charge_zero])
}

/// One summary line of a sweep: exact probability next to its Monte Carlo
/// estimate. `mc_*` fields are NaN when no trials were run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha_sq: f64,
    pub n_parties: u32,
    pub max_rounds: u32,
    pub exact_success: f64,
    pub mc_success: f64,
    pub mc_trials: u64,
    pub mc_stderr: f64,
    pub mean_rounds_to_success: f64,
}

impl SweepRow {
    /// Exact-only row (no Monte Carlo columns).
    pub fn exact_only(opts: &ProtocolOptions) -> Result<SweepRow> {
        opts.validate()?;
        Ok(SweepRow {
            alpha_sq: opts.coefficients.alpha_sq(),
            n_parties: opts.n_parties,
            max_rounds: opts.max_rounds,
            exact_success: exact_cumulative_success(
                &opts.coefficients,
                opts.max_rounds,
                opts.ancilla_mismatch,
            )?,
            mc_success: f64::NAN,
            mc_trials: 0,
            mc_stderr: f64::NAN,
            mean_rounds_to_success: f64::NAN,
        })
    }

    /// Whether the estimate sits within 4 standard errors of the exact value.
    pub fn is_consistent(&self) -> bool {
        if self.mc_trials == 0 {
            return true;
        }
        (self.exact_success - self.mc_success).abs() <= 4.0 * self.mc_stderr + 1e-12
    }
}

/// Runs `trials` independent protocol samples on counter-based RNG streams
/// derived from `seed` (stream i for trial i) and summarizes them next to
/// the exact probability.
pub fn monte_carlo(
    coefficients: &SchmidtPair,
    n_parties: u32,
    max_rounds: u32,
    trials: u64,
    seed: u64,
) -> Result<SweepRow> {
    monte_carlo_with(
        &ProtocolOptions::new(*coefficients, n_parties, max_rounds),
        trials,
        seed,
    )
}

pub fn monte_carlo_with(opts: &ProtocolOptions, trials: u64, seed: u64) -> Result<SweepRow> {
    if trials < 1 {
        return Err(Error::InvalidConfig {
            field: "trials",
            message: "at least one trial is required".to_string(),
        });
    }
    let mut row = SweepRow::exact_only(opts)?;

    let mut successes = 0u64;
    let mut rounds_in_successes = 0u64;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let report = run_protocol(opts, &mut rng)?;
        if report.succeeded {
            successes += 1;
            rounds_in_successes += u64::from(report.rounds_used);
        }
    }

    let p_hat = successes as f64 / trials as f64;
    row.mc_success = p_hat;
    row.mc_trials = trials;
    row.mc_stderr = (p_hat * (1.0 - p_hat) / trials as f64).sqrt();
    row.mean_rounds_to_success = if successes > 0 {
        rounds_in_successes as f64 / successes as f64
    } else {
        f64::NAN
    };
    Ok(row)
}

/// Exact unconditional success probability of round `round_k`, from the
/// coefficient recursion (α_k, β_k) = (α_{k−1}², β_{k−1}²) renormalized.
pub fn success_probability_exact(coefficients: &SchmidtPair, round_k: u32) -> Result<f64> {
    if round_k < 1 {
        return Err(Error::InvalidConfig {
            field: "round_k",
            message: "rounds are numbered from 1".to_string(),
        });
    }
    let per_round = crate::protocol::exact_success_by_round(coefficients, round_k, 0.0)?;
    Ok(*per_round.last().expect("round_k >= 1"))
}

/// The naive expression `2|αβ|^{2k}`: iterating the round-1 formula without
/// renormalizing the residual coefficients. Reported for comparison only —
/// the exact recursion is the ground truth.
pub fn success_probability_naive(coefficients: &SchmidtPair, round_k: u32) -> f64 {
    2.0 * (coefficients.alpha_sq() * coefficients.beta_sq()).powi(round_k as i32)
}
