//! The concentration protocol itself.
//!
//! One round: the source pair α|↑↑⟩ + β|↓↓⟩ is shared out, Bob receives a
//! matched single-electron ancilla, bit-flips it, and feeds his two electrons
//! through the parity-check gate. Charge "1" heralds the maximally entangled
//! branch, finished by a Hadamard and a Z measurement on the spare rail plus
//! a conditional phase flip. Charge "0" leaves a lesser-entangled residual
//! that the recombining PBS, Hadamard, and Z measurement convert back into a
//! pair with squared coefficients — ready for another round with a matched
//! ancilla. Only Bob ever sends classical messages.
//!
//! The N-party extension shares one electron per party; Bob (party 2) is
//! still the only operator and the round mechanics are unchanged.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;

use crate::elements::{
    apply_pbs, apply_spin_unitary, measure_charge, measure_spin_z, reroute_mode, ParityCheckGate,
    SpinUnitary,
};
use crate::error::{Error, Result};
use crate::state::{Configuration, ModeLabel, PureState, Spin};

/// Magnitudes-squared below this make a coefficient degenerate.
const DEGENERACY_TOLERANCE: f64 = 1e-12;
/// Constructor tolerance for |α|² + |β|² = 1.
const PAIR_NORM_TOLERANCE: f64 = 1e-12;

/// The (α, β) pair defining the shared state's entanglement and the ancilla
/// bias. Degenerate pairs (α or β ≈ 0) construct fine but refuse to run.
///
/// The squared magnitudes are carried alongside the amplitudes so a pair
/// built from an exact `alpha_sq` reports that value back without the
/// square-root round trip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchmidtPair {
    alpha: Complex64,
    beta: Complex64,
    alpha_sq: f64,
    beta_sq: f64,
}

impl SchmidtPair {
    pub fn new(alpha: Complex64, beta: Complex64) -> Result<SchmidtPair> {
        if (alpha.norm_sqr() + beta.norm_sqr() - 1.0).abs() > PAIR_NORM_TOLERANCE {
            return Err(Error::NotNormalizedPair);
        }
        Ok(SchmidtPair {
            alpha,
            beta,
            alpha_sq: alpha.norm_sqr(),
            beta_sq: beta.norm_sqr(),
        })
    }

    /// Positive real roots from the single probability |α|².
    pub fn from_alpha_sq(alpha_sq: f64) -> Result<SchmidtPair> {
        if !(0.0..=1.0).contains(&alpha_sq) {
            return Err(Error::AlphaSqOutOfRange(alpha_sq));
        }
        Ok(SchmidtPair {
            alpha: Complex64::new(alpha_sq.sqrt(), 0.0),
            beta: Complex64::new((1.0 - alpha_sq).sqrt(), 0.0),
            alpha_sq,
            beta_sq: 1.0 - alpha_sq,
        })
    }

    pub fn alpha(&self) -> Complex64 {
        self.alpha
    }

    pub fn beta(&self) -> Complex64 {
        self.beta
    }

    pub fn alpha_sq(&self) -> f64 {
        self.alpha_sq
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta_sq
    }

    pub fn is_degenerate(&self) -> bool {
        self.alpha_sq() < DEGENERACY_TOLERANCE || self.beta_sq() < DEGENERACY_TOLERANCE
    }

    /// Round-1 heralded success probability `2|αβ|²` with a matched ancilla.
    pub fn round_success_probability(&self) -> f64 {
        2.0 * self.alpha_sq() * self.beta_sq()
    }

    /// Heralded success probability `|αβ'|² + |βα'|²` with an arbitrary
    /// ancilla (α', β').
    pub fn success_probability_with(&self, ancilla: &SchmidtPair) -> f64 {
        self.alpha_sq() * ancilla.beta_sq() + self.beta_sq() * ancilla.alpha_sq()
    }

    /// Coefficients of the failure residual `(αα', ββ')` renormalized.
    pub fn residual_with(&self, ancilla: &SchmidtPair) -> Result<SchmidtPair> {
        let a = self.alpha * ancilla.alpha;
        let b = self.beta * ancilla.beta;
        let norm_sqr = a.norm_sqr() + b.norm_sqr();
        if norm_sqr <= f64::MIN_POSITIVE {
            return Err(Error::ZeroNorm);
        }
        let scale = 1.0 / norm_sqr.sqrt();
        SchmidtPair::new(a * scale, b * scale)
    }

    /// `(α², β²)` renormalized — the matched-ancilla failure residual.
    pub fn residual_after_failure(&self) -> Result<SchmidtPair> {
        self.residual_with(self)
    }
}

/// Parties are indexed 1..=N; Bob, the only operator, is party 2.
pub type PartyId = u32;
pub const ALICE: PartyId = 1;
pub const BOB: PartyId = 2;

/// Spatial mode of party `index`'s shared electron.
pub fn party_mode(index: PartyId) -> ModeLabel {
    match index {
        1 => ModeLabel::new("a1"),
        2 => ModeLabel::new("b1"),
        i => ModeLabel::new(format!("m{i:02}")),
    }
}

/// Rail holding Bob's ancilla after the bit flip, feeding the PBS.
pub fn ancilla_mode() -> ModeLabel {
    ModeLabel::new("b3")
}

/// Output rail where Bob's kept electron lands.
pub fn keep_rail() -> ModeLabel {
    ModeLabel::new("c1")
}

/// Output rail whose electron is Hadamard-rotated and Z-measured.
pub fn measure_rail() -> ModeLabel {
    ModeLabel::new("c2")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChargeOutcome {
    One,
    Zero,
}

impl fmt::Display for ChargeOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChargeOutcome::One => "1",
            ChargeOutcome::Zero => "0",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinOutcome {
    Up,
    Down,
}

impl fmt::Display for SpinOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpinOutcome::Up => "up",
            SpinOutcome::Down => "down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    None,
    PhaseFlip,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::None => "none",
            Correction::PhaseFlip => "phase-flip",
        })
    }
}

/// Record of one sampled round.
///
/// On charge "1" the spin result and any correction are filled in and
/// `resulting_state` is the finished maximally entangled state. On charge "0"
/// the round stops at the detector: `spin_result` is `None` and
/// `resulting_state` is the coherent bunched residual awaiting recycling.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub charge_result: ChargeOutcome,
    pub spin_result: Option<SpinOutcome>,
    /// Probability of this round's sampled outcome given the round was reached.
    pub branch_probability: f64,
    pub resulting_state: PureState,
    pub correction_applied: Correction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Party(PartyId),
    Broadcast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageContent {
    SuccessKeep,
    SuccessPhaseCorrected,
    FailureRound(u32),
}

impl fmt::Display for MessageContent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MessageContent::SuccessKeep => f.write_str("success-keep"),
            MessageContent::SuccessPhaseCorrected => f.write_str("success-phase-corrected"),
            MessageContent::FailureRound(k) => write!(f, "failure-round-{k}"),
        }
    }
}

/// One-way classical message. Constructed only via [`ClassicalMessage::from_bob`],
/// so every message originates at Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassicalMessage {
    pub from: PartyId,
    pub to: Recipient,
    pub content: MessageContent,
}

impl ClassicalMessage {
    pub fn from_bob(content: MessageContent) -> ClassicalMessage {
        ClassicalMessage {
            from: BOB,
            to: Recipient::Broadcast,
            content,
        }
    }
}

impl fmt::Display for ClassicalMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let to = match self.to {
            Recipient::Party(p) => format!("party-{p}"),
            Recipient::Broadcast => "broadcast".to_string(),
        };
        write!(f, "party-{} -> {}: {}", self.from, to, self.content)
    }
}

/// Full record of one protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolReport {
    pub rounds: Vec<RoundOutcome>,
    pub messages: Vec<ClassicalMessage>,
    pub succeeded: bool,
    pub rounds_used: u32,
    pub final_state: Option<PureState>,
    /// Exact cumulative success probability for this configuration and round
    /// budget, from branch bookkeeping — never from sampling.
    pub cumulative_success_probability: f64,
}

/// Everything a protocol run needs. `ancilla_mismatch` offsets each round's
/// ancilla alpha_sq by a fixed delta to probe source-matching sensitivity;
/// zero means perfectly matched sources.
#[derive(Debug, Clone, Copy)]
pub struct ProtocolOptions {
    pub coefficients: SchmidtPair,
    pub n_parties: u32,
    pub max_rounds: u32,
    pub ancilla_mismatch: f64,
}

impl ProtocolOptions {
    pub fn new(coefficients: SchmidtPair, n_parties: u32, max_rounds: u32) -> ProtocolOptions {
        ProtocolOptions {
            coefficients,
            n_parties,
            max_rounds,
            ancilla_mismatch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_parties < 2 {
            return Err(Error::InvalidConfig {
                field: "n_parties",
                message: "at least two parties must share the state".to_string(),
            });
        }
        if self.n_parties > 99 {
            return Err(Error::InvalidConfig {
                field: "n_parties",
                message: "mode naming supports at most 99 parties".to_string(),
            });
        }
        if self.max_rounds < 1 {
            return Err(Error::InvalidConfig {
                field: "max_rounds",
                message: "at least one round is required".to_string(),
            });
        }
        if self.coefficients.is_degenerate() {
            return Err(Error::DegenerateSchmidtPair);
        }
        Ok(())
    }
}

/// α|↑↑⟩ + β|↓↓⟩ on the two given modes, electrons 1 and 2.
pub fn prepare_pair(
    coefficients: &SchmidtPair,
    modes: (&ModeLabel, &ModeLabel),
) -> Result<PureState> {
    prepare_shared_state(coefficients, &[modes.0.clone(), modes.1.clone()])
}

/// α|↑…↑⟩ + β|↓…↓⟩ with one electron per mode, ids 1..=N.
pub fn prepare_shared_state(coefficients: &SchmidtPair, modes: &[ModeLabel]) -> Result<PureState> {
    let all_up = Configuration::from_slots(
        modes
            .iter()
            .enumerate()
            .map(|(i, m)| (i as u32 + 1, m.clone(), Spin::Up))
            .collect::<Vec<_>>(),
    )?;
    let all_down = Configuration::from_slots(
        modes
            .iter()
            .enumerate()
            .map(|(i, m)| (i as u32 + 1, m.clone(), Spin::Down))
            .collect::<Vec<_>>(),
    )?;
    PureState::from_terms([
        (all_up, coefficients.alpha()),
        (all_down, coefficients.beta()),
    ])
}

/// Single ancilla electron α|↑⟩ + β|↓⟩ in `mode` (electron id 1).
pub fn prepare_ancilla(coefficients: &SchmidtPair, mode: &ModeLabel) -> Result<PureState> {
    prepare_ancilla_as(coefficients, mode, 1)
}

fn prepare_ancilla_as(
    coefficients: &SchmidtPair,
    mode: &ModeLabel,
    electron: u32,
) -> Result<PureState> {
    PureState::single(
        electron,
        mode.clone(),
        coefficients.alpha(),
        coefficients.beta(),
    )
}

/// Reads (α, β) off a shared GHZ-form state: the amplitudes of the all-up and
/// all-down configurations. A one-sided state yields a degenerate pair.
pub fn shared_state_coefficients(state: &PureState) -> Result<SchmidtPair> {
    let mut alpha = Complex64::new(0.0, 0.0);
    let mut beta = Complex64::new(0.0, 0.0);
    for (config, amp) in state.terms() {
        if config.slots().iter().all(|s| s.spin == Spin::Up) {
            alpha = amp;
        } else if config.slots().iter().all(|s| s.spin == Spin::Down) {
            beta = amp;
        } else {
            return Err(Error::NotGhzForm);
        }
    }
    SchmidtPair::new(alpha, beta)
}

/// Deterministic expansion of one round: every branch with its exact
/// probability and post-state. Sampling and exhaustive enumeration are both
/// built on top of this.
#[derive(Debug, Clone)]
pub struct RoundBranches {
    /// P(charge = "1").
    pub p_success: f64,
    /// P(spin = "up" | charge = "1"); exactly 1/2 up to rounding.
    pub p_up_given_success: f64,
    /// Finished state after an "up" result (no correction needed).
    pub success_up: Option<PureState>,
    /// Finished state after a "down" result, phase flip already applied.
    pub success_down: Option<PureState>,
    /// P(charge = "0").
    pub p_failure: f64,
    /// Coherent bunched residual behind the "0" reading.
    pub failure_state: Option<PureState>,
}

/// Runs the physical sequence of one round without sampling:
/// ancilla preparation, bit flip, tensor, PBS, charge detection, and — on the
/// heralded branch — recombination, Hadamard, Z measurement, and correction.
pub fn round_branches(pair_state: &PureState, ancilla: &SchmidtPair) -> Result<RoundBranches> {
    if ancilla.is_degenerate() {
        return Err(Error::DegenerateSchmidtPair);
    }
    let gate = ParityCheckGate::standard();
    let fresh = pair_state.electron_ids().iter().max().copied().unwrap_or(0) + 1;

    let single = prepare_ancilla_as(ancilla, &ancilla_mode(), fresh)?;
    let flipped = apply_spin_unitary(&single, &SpinUnitary::pauli_x(fresh))?;
    let joint = pair_state.tensor(&flipped)?;
    let routed = apply_pbs(&joint, &gate.pbs_in)?;

    let charge = measure_charge(&routed, &gate.detector)?;
    let mut branches = RoundBranches {
        p_success: charge[0].probability,
        p_up_given_success: 0.0,
        success_up: None,
        success_down: None,
        p_failure: charge[1].probability,
        failure_state: charge[1].post_state.clone(),
    };

    if let Some(heralded) = &charge[0].post_state {
        let recombined = apply_pbs(heralded, &gate.pbs_out)?;
        let spare = recombined.electron_in_mode(&measure_rail())?;
        let rotated = apply_spin_unitary(&recombined, &SpinUnitary::hadamard(spare))?;
        let spin = measure_spin_z(&rotated, spare)?;
        branches.p_up_given_success = spin[0].probability;
        branches.success_up = spin[0].post_state.clone();
        branches.success_down = match &spin[1].post_state {
            Some(down) => {
                let bob = down.electron_in_mode(&keep_rail())?;
                Some(apply_spin_unitary(down, &SpinUnitary::phase_flip(bob))?)
            }
            None => None,
        };
    }
    Ok(branches)
}

/// Deterministic expansion of the recycling step applied to a bunched
/// charge-"0" residual.
#[derive(Debug, Clone)]
pub struct RecycleBranches {
    /// P(spin = "up") in the detaching measurement; exactly 1/2.
    pub p_up: f64,
    pub residual_up: Option<PureState>,
    /// "down" residual with the phase flip already applied; physically equal
    /// to `residual_up`.
    pub residual_down: Option<PureState>,
    /// Coefficients of the residual pair, read off the simulated state.
    pub next_coefficients: SchmidtPair,
}

/// Recombines a bunched residual one-electron-per-rail, detaches the spare
/// electron with a Hadamard and Z measurement, and corrects the "down" sign.
pub fn recycle_branches(bunched: &PureState) -> Result<RecycleBranches> {
    let gate = ParityCheckGate::standard();
    let split = apply_pbs(bunched, &gate.pbs_out)?;
    let spare = split.electron_in_mode(&measure_rail())?;
    let rotated = apply_spin_unitary(&split, &SpinUnitary::hadamard(spare))?;
    let spin = measure_spin_z(&rotated, spare)?;

    let residual_up = spin[0].post_state.clone();
    let residual_down = match &spin[1].post_state {
        Some(down) => {
            let bob = down.electron_in_mode(&keep_rail())?;
            Some(apply_spin_unitary(down, &SpinUnitary::phase_flip(bob))?)
        }
        None => None,
    };

    let reference = residual_up
        .as_ref()
        .or(residual_down.as_ref())
        .ok_or(Error::ZeroNorm)?;
    if let (Some(up), Some(down)) = (&residual_up, &residual_down) {
        debug_assert!(
            (up.fidelity_up_to_phase(down)? - 1.0).abs() < crate::state::FIDELITY_TOLERANCE,
            "corrected residuals must coincide"
        );
    }
    let next_coefficients = shared_state_coefficients(reference)?;
    Ok(RecycleBranches {
        p_up: spin[0].probability,
        residual_up,
        residual_down,
        next_coefficients,
    })
}

/// Samples one round. One uniform draw per measurement, thresholds in fixed
/// declaration order: "1" before "0", then "up" before "down".
pub fn run_round(
    pair_state: &PureState,
    ancilla: &SchmidtPair,
    rng: &mut impl Rng,
) -> Result<RoundOutcome> {
    let branches = round_branches(pair_state, ancilla)?;
    if rng.gen::<f64>() < branches.p_success {
        let up = rng.gen::<f64>() < branches.p_up_given_success;
        let (spin, state, correction, conditional) = if up {
            (
                SpinOutcome::Up,
                branches.success_up,
                Correction::None,
                branches.p_up_given_success,
            )
        } else {
            (
                SpinOutcome::Down,
                branches.success_down,
                Correction::PhaseFlip,
                1.0 - branches.p_up_given_success,
            )
        };
        Ok(RoundOutcome {
            charge_result: ChargeOutcome::One,
            spin_result: Some(spin),
            branch_probability: branches.p_success * conditional,
            resulting_state: state.expect("sampled branch has non-zero probability"),
            correction_applied: correction,
        })
    } else {
        Ok(RoundOutcome {
            charge_result: ChargeOutcome::Zero,
            spin_result: None,
            branch_probability: branches.p_failure,
            resulting_state: branches
                .failure_state
                .expect("sampled branch has non-zero probability"),
            correction_applied: Correction::None,
        })
    }
}

/// Converts a failed round's bunched residual into a fresh, lesser-entangled
/// pair and the coefficients any matched round-k+1 ancilla must carry.
/// Deterministic: the two detaching outcomes agree after correction.
pub fn recycle_failure(outcome: &RoundOutcome) -> Result<(PureState, SchmidtPair)> {
    if outcome.charge_result != ChargeOutcome::Zero {
        return Err(Error::RecycleOnSuccess);
    }
    let recycled = recycle_branches(&outcome.resulting_state)?;
    let residual = recycled.residual_up.ok_or(Error::ZeroNorm)?;
    Ok((residual, recycled.next_coefficients))
}

/// Ancilla coefficients for round `round`, given the pair's current
/// coefficients and the configured mismatch.
pub(crate) fn ancilla_for(pair: &SchmidtPair, mismatch: f64, round: u32) -> Result<SchmidtPair> {
    if mismatch == 0.0 {
        return Ok(*pair);
    }
    let shifted = pair.alpha_sq() + mismatch;
    if !(0.0..=1.0).contains(&shifted) {
        return Err(Error::MismatchOutOfRange {
            round,
            value: shifted,
        });
    }
    SchmidtPair::from_alpha_sq(shifted)
}

/// Unconditional success probability of each round 1..=max_rounds, from the
/// coefficient recursion — no simulation, no sampling.
pub fn exact_success_by_round(
    coefficients: &SchmidtPair,
    max_rounds: u32,
    ancilla_mismatch: f64,
) -> Result<Vec<f64>> {
    let mut pair = *coefficients;
    let mut survival = 1.0;
    let mut per_round = Vec::with_capacity(max_rounds as usize);
    for round in 1..=max_rounds {
        if pair.is_degenerate() {
            // Concentration has stalled; the remaining rounds cannot herald.
            per_round.push(0.0);
            continue;
        }
        let ancilla = ancilla_for(&pair, ancilla_mismatch, round)?;
        let p = pair.success_probability_with(&ancilla);
        per_round.push(survival * p);
        survival *= 1.0 - p;
        pair = pair.residual_with(&ancilla)?;
    }
    Ok(per_round)
}

/// Exact cumulative success probability over the round budget.
pub fn exact_cumulative_success(
    coefficients: &SchmidtPair,
    max_rounds: u32,
    ancilla_mismatch: f64,
) -> Result<f64> {
    Ok(
        exact_success_by_round(coefficients, max_rounds, ancilla_mismatch)?
            .iter()
            .sum(),
    )
}

/// Runs the full protocol for `opts`, sampling measurement outcomes with
/// `rng`. Fixed seed in, bit-identical report out.
pub fn run_protocol(opts: &ProtocolOptions, rng: &mut impl Rng) -> Result<ProtocolReport> {
    opts.validate()?;
    let modes: Vec<ModeLabel> = (1..=opts.n_parties).map(party_mode).collect();
    let mut pair_state = prepare_shared_state(&opts.coefficients, &modes)?;
    let mut pair_coefficients = opts.coefficients;

    let mut rounds: Vec<RoundOutcome> = Vec::new();
    let mut messages: Vec<ClassicalMessage> = Vec::new();
    let mut succeeded = false;
    let mut final_state: Option<PureState> = None;

    for round in 1..=opts.max_rounds {
        let ancilla = ancilla_for(&pair_coefficients, opts.ancilla_mismatch, round)?;
        let outcome = run_round(&pair_state, &ancilla, rng)?;
        match outcome.charge_result {
            ChargeOutcome::One => {
                let content = match outcome.correction_applied {
                    Correction::None => MessageContent::SuccessKeep,
                    Correction::PhaseFlip => MessageContent::SuccessPhaseCorrected,
                };
                messages.push(ClassicalMessage::from_bob(content));
                succeeded = true;
                final_state = Some(outcome.resulting_state.clone());
                rounds.push(outcome);
                break;
            }
            ChargeOutcome::Zero => {
                if round < opts.max_rounds {
                    let (residual, next) = recycle_failure(&outcome)?;
                    if next.is_degenerate() {
                        // Concentration has stalled: the residual is a
                        // product state at working precision and every
                        // remaining round would fail with certainty.
                        messages.push(ClassicalMessage::from_bob(MessageContent::FailureRound(
                            round,
                        )));
                        rounds.push(outcome);
                        break;
                    }
                    // Bob feeds his kept electron back into the gate input.
                    pair_state = reroute_mode(&residual, &keep_rail(), &party_mode(BOB))?;
                    pair_coefficients = next;
                } else {
                    messages.push(ClassicalMessage::from_bob(MessageContent::FailureRound(
                        round,
                    )));
                }
                rounds.push(outcome);
            }
        }
    }

    let cumulative =
        exact_cumulative_success(&opts.coefficients, opts.max_rounds, opts.ancilla_mismatch)?;
    Ok(ProtocolReport {
        rounds_used: rounds.len() as u32,
        rounds,
        messages,
        succeeded,
        final_state,
        cumulative_success_probability: cumulative,
    })
}

/// Bipartite multi-round concentration.
pub fn run_multi_round(
    coefficients: &SchmidtPair,
    max_rounds: u32,
    rng: &mut impl Rng,
) -> Result<ProtocolReport> {
    run_protocol(&ProtocolOptions::new(*coefficients, 2, max_rounds), rng)
}

/// N-party concentration; `n_parties = 2` reduces exactly to
/// [`run_multi_round`].
pub fn run_multipartite(
    coefficients: &SchmidtPair,
    n_parties: u32,
    max_rounds: u32,
    rng: &mut impl Rng,
) -> Result<ProtocolReport> {
    run_protocol(
        &ProtocolOptions::new(*coefficients, n_parties, max_rounds),
        rng,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{ElectronId, FIDELITY_TOLERANCE};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn pair(alpha_sq: f64) -> SchmidtPair {
        SchmidtPair::from_alpha_sq(alpha_sq).unwrap()
    }

    /// GHZ reference built on a finished state's own slots.
    fn ghz_reference(state: &PureState) -> PureState {
        let assignment = state.mode_assignment().expect("uniform mode assignment");
        let slots: Vec<(ElectronId, ModeLabel)> = assignment.into_iter().collect();
        PureState::ghz(&slots).unwrap()
    }

    #[test]
    fn schmidt_pair_construction_and_degeneracy() {
        let c = pair(0.8);
        assert!((c.alpha_sq() - 0.8).abs() < 1e-12);
        assert!((c.beta_sq() - 0.2).abs() < 1e-12);
        assert!(!c.is_degenerate());
        assert!(pair(1.0).is_degenerate());
        assert!(pair(0.0).is_degenerate());
        assert!(matches!(
            SchmidtPair::from_alpha_sq(1.5).unwrap_err(),
            Error::AlphaSqOutOfRange(_)
        ));
        assert!(matches!(
            SchmidtPair::new(Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)).unwrap_err(),
            Error::NotNormalizedPair
        ));
    }

    #[test]
    fn prepared_pair_matches_its_coefficients() {
        let c = pair(0.8);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        let (l1, l2) = state.schmidt_coefficients(&[1], &[2]).unwrap();
        assert!((l1 - 0.8f64.sqrt()).abs() < 1e-12);
        assert!((l2 - 0.2f64.sqrt()).abs() < 1e-12);

        // Fidelity with φ⁺ is |α+β|²/2 — brute-force inner product oracle.
        for alpha_sq in [0.1, 0.33, 0.5, 0.8, 0.97] {
            let c = pair(alpha_sq);
            let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
            let bell = PureState::ghz(&[(1, party_mode(ALICE)), (2, party_mode(BOB))]).unwrap();
            let direct: Complex64 = state
                .terms()
                .map(|(config, amp)| bell.amplitude(config).conj() * amp)
                .sum();
            let expected = (c.alpha() + c.beta()).norm_sqr() / 2.0;
            assert!((direct.norm_sqr() - expected).abs() < 1e-12);
            assert!((state.fidelity_up_to_phase(&bell).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn ancilla_amplitudes_are_square_roots() {
        let state = prepare_ancilla(&pair(0.8), &ancilla_mode()).unwrap();
        let up = Configuration::from_slots([(1, ancilla_mode(), Spin::Up)]).unwrap();
        let down = Configuration::from_slots([(1, ancilla_mode(), Spin::Down)]).unwrap();
        assert!((state.amplitude(&up).re - 0.8944271909999159).abs() < 1e-15);
        assert!((state.amplitude(&down).re - 0.4472135954999579).abs() < 1e-15);

        let basis = prepare_ancilla(&pair(1.0), &ancilla_mode()).unwrap();
        assert_eq!(basis.term_count(), 1);
    }

    #[test]
    fn round_branch_probabilities_match_the_formula() {
        for alpha_sq in [0.5, 0.65, 0.8, 0.9] {
            let c = pair(alpha_sq);
            let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
            let branches = round_branches(&state, &c).unwrap();
            let expected = 2.0 * alpha_sq * (1.0 - alpha_sq);
            assert!((branches.p_success - expected).abs() < 1e-12);
            assert!((branches.p_failure - (1.0 - expected)).abs() < 1e-12);
            assert!((branches.p_up_given_success - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn success_branches_finish_maximally_entangled() {
        let c = pair(0.8);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        let branches = round_branches(&state, &c).unwrap();
        for finished in [&branches.success_up, &branches.success_down] {
            let finished = finished.as_ref().unwrap();
            let target = ghz_reference(finished);
            assert!(
                (finished.fidelity_up_to_phase(&target).unwrap() - 1.0).abs() < FIDELITY_TOLERANCE
            );
            let (l1, l2) = finished.schmidt_coefficients(&[1], &[2]).unwrap();
            assert!((l1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
            assert!((l2 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_pairs_refuse_to_run() {
        let c = pair(1.0);
        let state = prepare_shared_state(&c, &[party_mode(ALICE), party_mode(BOB)]).unwrap();
        assert_eq!(
            round_branches(&state, &c).unwrap_err(),
            Error::DegenerateSchmidtPair
        );
        assert_eq!(
            run_protocol(&ProtocolOptions::new(c, 2, 1), &mut rng(1)).unwrap_err(),
            Error::DegenerateSchmidtPair
        );
    }

    #[test]
    fn recycle_produces_the_squared_coefficient_pair() {
        let c = pair(0.8);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        let branches = round_branches(&state, &c).unwrap();
        let recycled = recycle_branches(branches.failure_state.as_ref().unwrap()).unwrap();

        // (α², β²)/√(α⁴+β⁴) at α² = 0.8.
        let norm = 0.68f64.sqrt();
        assert!((recycled.next_coefficients.alpha().re - 0.8 / norm).abs() < 1e-12);
        assert!((recycled.next_coefficients.beta().re - 0.2 / norm).abs() < 1e-12);
        assert!((recycled.p_up - 0.5).abs() < 1e-12);

        let up = recycled.residual_up.as_ref().unwrap();
        let down = recycled.residual_down.as_ref().unwrap();
        assert!((up.fidelity_up_to_phase(down).unwrap() - 1.0).abs() < FIDELITY_TOLERANCE);
        let (l1, l2) = up.schmidt_coefficients(&[1], &[2]).unwrap();
        assert!((l1 - 0.8 / norm).abs() < 1e-12);
        assert!((l2 - 0.2 / norm).abs() < 1e-12);
    }

    #[test]
    fn balanced_pairs_recycle_to_balanced_pairs() {
        let c = pair(0.5);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        let branches = round_branches(&state, &c).unwrap();
        assert!((branches.p_success - 0.5).abs() < 1e-12);
        let recycled = recycle_branches(branches.failure_state.as_ref().unwrap()).unwrap();
        assert!(
            (recycled.next_coefficients.alpha_sq() - 0.5).abs() < 1e-12,
            "maximal entanglement is a fixed point of recycling"
        );
    }

    #[test]
    fn recycle_rejects_success_outcomes() {
        let c = pair(0.8);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        // Draw until a success shows up (seeded, deterministic).
        let mut r = rng(3);
        for _ in 0..64 {
            let outcome = run_round(&state, &c, &mut r).unwrap();
            if outcome.charge_result == ChargeOutcome::One {
                assert_eq!(
                    recycle_failure(&outcome).unwrap_err(),
                    Error::RecycleOnSuccess
                );
                return;
            }
        }
        panic!("no success sampled in 64 rounds at p = 0.32");
    }

    #[test]
    fn exact_recursion_matches_closed_forms() {
        // Round 1 is 2α²β²; round 2 is 2α⁴β⁴/(α⁴+β⁴).
        let per_round = exact_success_by_round(&pair(0.8), 2, 0.0).unwrap();
        assert!((per_round[0] - 0.32).abs() < 1e-15);
        assert!((per_round[1] - 0.0512 / 0.68).abs() < 1e-15);

        // Balanced input: conditional 1/2 each round, cumulative 1 − 2^{-k}.
        let per_round = exact_success_by_round(&pair(0.5), 10, 0.0).unwrap();
        let mut survival = 1.0;
        for p in per_round {
            assert!((p - survival * 0.5).abs() < 1e-15);
            survival *= 0.5;
        }
        let cumulative = exact_cumulative_success(&pair(0.5), 10, 0.0).unwrap();
        assert!((cumulative - (1.0 - 0.5f64.powi(10))).abs() < 1e-12);
    }

    #[test]
    fn cumulative_success_is_strictly_increasing_in_rounds() {
        // Strict growth holds while the per-round contribution is visible at
        // f64 scale; squaring drives deep-round contributions below that.
        for alpha_sq in [0.1, 0.35, 0.6, 0.9] {
            let c = pair(alpha_sq);
            let per_round = exact_success_by_round(&c, 8, 0.0).unwrap();
            let mut previous = 0.0;
            for k in 1..=8u32 {
                let cumulative = exact_cumulative_success(&c, k, 0.0).unwrap();
                assert!(cumulative >= previous, "alpha_sq={alpha_sq} k={k}");
                if per_round[k as usize - 1] > 1e-12 {
                    assert!(
                        cumulative > previous,
                        "cumulative must grow: alpha_sq={alpha_sq} k={k}"
                    );
                }
                previous = cumulative;
            }
        }
    }

    #[test]
    fn sampled_runs_are_seed_deterministic() {
        let opts = ProtocolOptions::new(pair(0.8), 2, 3);
        let a = run_protocol(&opts, &mut rng(42)).unwrap();
        let b = run_protocol(&opts, &mut rng(42)).unwrap();
        assert_eq!(a.succeeded, b.succeeded);
        assert_eq!(a.rounds_used, b.rounds_used);
        assert_eq!(a.messages, b.messages);
        for (x, y) in a.rounds.iter().zip(&b.rounds) {
            assert_eq!(x.charge_result, y.charge_result);
            assert_eq!(x.spin_result, y.spin_result);
            assert_eq!(x.branch_probability, y.branch_probability);
            assert_eq!(x.resulting_state, y.resulting_state);
        }
    }

    #[test]
    fn multipartite_with_two_parties_reduces_to_bipartite() {
        let c = pair(0.7);
        for seed in 0..20 {
            let a = run_multi_round(&c, 3, &mut rng(seed)).unwrap();
            let b = run_multipartite(&c, 2, 3, &mut rng(seed)).unwrap();
            assert_eq!(a.succeeded, b.succeeded);
            assert_eq!(a.rounds_used, b.rounds_used);
            assert_eq!(a.messages, b.messages);
        }
    }

    #[test]
    fn multipartite_success_probability_is_n_independent() {
        let c = pair(0.8);
        for n in 2..=6 {
            let modes: Vec<ModeLabel> = (1..=n).map(party_mode).collect();
            let state = prepare_shared_state(&c, &modes).unwrap();
            let branches = round_branches(&state, &c).unwrap();
            assert!((branches.p_success - 0.32).abs() < 1e-12, "n_parties = {n}");
        }
    }

    #[test]
    fn multipartite_success_is_an_n_party_ghz() {
        let c = pair(0.8);
        for n in [3, 5] {
            let modes: Vec<ModeLabel> = (1..=n).map(party_mode).collect();
            let state = prepare_shared_state(&c, &modes).unwrap();
            let branches = round_branches(&state, &c).unwrap();
            for finished in [&branches.success_up, &branches.success_down] {
                let finished = finished.as_ref().unwrap();
                assert_eq!(finished.electron_count(), n as usize);
                let target = ghz_reference(finished);
                assert!(
                    (finished.fidelity_up_to_phase(&target).unwrap() - 1.0).abs()
                        < FIDELITY_TOLERANCE
                );
            }
        }
    }

    #[test]
    fn multipartite_failure_recycles_like_the_bipartite_case() {
        let c = pair(0.8);
        let modes: Vec<ModeLabel> = (1..=4).map(party_mode).collect();
        let state = prepare_shared_state(&c, &modes).unwrap();
        let branches = round_branches(&state, &c).unwrap();
        let recycled = recycle_branches(branches.failure_state.as_ref().unwrap()).unwrap();
        let norm = 0.68f64.sqrt();
        assert!((recycled.next_coefficients.alpha().re - 0.8 / norm).abs() < 1e-12);
        let residual = recycled.residual_up.as_ref().unwrap();
        assert_eq!(residual.electron_count(), 4);
    }

    #[test]
    fn reports_log_exactly_one_terminal_bob_message() {
        let c = pair(0.6);
        for seed in 0..50 {
            let report = run_multipartite(&c, 3, 2, &mut rng(seed)).unwrap();
            assert_eq!(report.messages.len(), 1);
            let message = &report.messages[0];
            assert_eq!(message.from, BOB);
            assert_eq!(message.to, Recipient::Broadcast);
            match message.content {
                MessageContent::FailureRound(k) => {
                    assert!(!report.succeeded);
                    assert_eq!(k, report.rounds_used);
                }
                _ => assert!(report.succeeded),
            }
            assert_eq!(report.rounds_used as usize, report.rounds.len());
        }
    }

    #[test]
    fn report_cumulative_probability_is_exact_not_sampled() {
        let opts = ProtocolOptions::new(pair(0.8), 2, 2);
        let report = run_protocol(&opts, &mut rng(11)).unwrap();
        let expected = 0.32 + 0.0512 / 0.68;
        assert!((report.cumulative_success_probability - expected).abs() < 1e-12);
    }

    #[test]
    fn successful_reports_carry_the_corrected_state() {
        let opts = ProtocolOptions::new(pair(0.5), 2, 8);
        let report = run_protocol(&opts, &mut rng(5)).unwrap();
        assert!(
            report.succeeded,
            "p = 1 - 2^-8 makes failure unlikely at this seed"
        );
        let finished = report.final_state.as_ref().unwrap();
        let target = ghz_reference(finished);
        assert!((finished.fidelity_up_to_phase(&target).unwrap() - 1.0).abs() < FIDELITY_TOLERANCE);
    }

    #[test]
    fn mismatch_shifts_probabilities_and_costs_fidelity() {
        // Ancilla offset δ = 0.05 on top of α² = 0.8.
        let c = pair(0.8);
        let ancilla = pair(0.85);
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();
        let branches = round_branches(&state, &ancilla).unwrap();
        // P(1) = α²β'² + β²α'².
        let expected_p = 0.8 * 0.15 + 0.2 * 0.85;
        assert!((branches.p_success - expected_p).abs() < 1e-12);

        // Post-correction fidelity |αβ' + βα'|² / (2 P(1)) < 1.
        let finished = branches.success_down.as_ref().unwrap();
        let target = ghz_reference(finished);
        let ab = (0.8f64 * 0.15).sqrt();
        let ba = (0.2f64 * 0.85).sqrt();
        let expected_fidelity = (ab + ba).powi(2) / (2.0 * expected_p);
        let got = finished.fidelity_up_to_phase(&target).unwrap();
        assert!((got - expected_fidelity).abs() < 1e-12);
        assert!(got < 1.0 - 1e-4);

        // The exact recursion under mismatch agrees with simulation.
        let per_round = exact_success_by_round(&c, 1, 0.05).unwrap();
        assert!((per_round[0] - expected_p).abs() < 1e-12);
    }

    #[test]
    fn mismatch_out_of_range_is_reported() {
        let err = exact_success_by_round(&pair(0.9), 1, 0.2).unwrap_err();
        assert!(matches!(err, Error::MismatchOutOfRange { round: 1, .. }));
    }

    #[test]
    fn residual_coefficient_recursion_squares_each_round() {
        // After k failures the coefficients are (α^{2^k}, β^{2^k}) renormalized.
        let mut pair_k = pair(0.8);
        for _ in 0..4 {
            pair_k = pair_k.residual_after_failure().unwrap();
        }
        let alpha = 0.8f64.sqrt();
        let beta = 0.2f64.sqrt();
        let a16 = alpha.powi(16);
        let b16 = beta.powi(16);
        let norm = (a16 * a16 + b16 * b16).sqrt();
        assert!((pair_k.alpha().re - a16 / norm).abs() < 1e-12);
        assert!((pair_k.beta().re - b16 / norm).abs() < 1e-12);
    }

    #[test]
    fn complex_coefficients_concentrate_exactly() {
        // Phases ride along: the heralded branch carries a common factor αβ,
        // so the finished state is exactly Bell/GHZ for any phases, and the
        // failure residual squares the phases with the magnitudes.
        let c = SchmidtPair::new(
            Complex64::from_polar(0.75f64.sqrt(), 0.4),
            Complex64::from_polar(0.25f64.sqrt(), -1.1),
        )
        .unwrap();
        let modes: Vec<ModeLabel> = (1..=3).map(party_mode).collect();
        let shared = prepare_shared_state(&c, &modes).unwrap();
        let branches = round_branches(&shared, &c).unwrap();

        assert!((branches.p_success - 2.0 * 0.75 * 0.25).abs() < 1e-12);
        for finished in [&branches.success_up, &branches.success_down] {
            let finished = finished.as_ref().unwrap();
            let target = ghz_reference(finished);
            assert!(
                (finished.fidelity_up_to_phase(&target).unwrap() - 1.0).abs()
                    < FIDELITY_TOLERANCE
            );
        }

        let recycled = recycle_branches(branches.failure_state.as_ref().unwrap()).unwrap();
        let next = recycled.next_coefficients;
        let expected_alpha = c.alpha() * c.alpha();
        let expected_norm =
            (expected_alpha.norm_sqr() + (c.beta() * c.beta()).norm_sqr()).sqrt();
        // Residual phase is the squared input phase (up to the branch's
        // global phase, which cancels in the ratio).
        let got_ratio = next.beta() / next.alpha();
        let expected_ratio = (c.beta() * c.beta()) / expected_alpha;
        assert!((got_ratio - expected_ratio).norm() < 1e-10);
        assert!((next.alpha().norm() - expected_alpha.norm() / expected_norm).abs() < 1e-12);
    }

    /// Stub generator emitting a fixed sequence of already-uniform draws,
    /// for pinning the threshold/declaration-order sampling contract.
    struct ScriptedDraws {
        draws: Vec<f64>,
        next: usize,
    }

    impl rand::RngCore for ScriptedDraws {
        fn next_u32(&mut self) -> u32 {
            self.next_u64() as u32
        }

        // gen::<f64>() consumes next_u64() >> 11 scaled by 2^-53.
        fn next_u64(&mut self) -> u64 {
            let draw = self.draws[self.next];
            self.next += 1;
            ((draw * (1u64 << 53) as f64) as u64) << 11
        }

        fn fill_bytes(&mut self, dest: &mut [u8]) {
            for byte in dest.iter_mut() {
                *byte = 0;
            }
        }

        fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
            self.fill_bytes(dest);
            Ok(())
        }
    }

    #[test]
    fn sampling_follows_declaration_order_thresholds() {
        // "1" before "0" on the charge draw, "up" before "down" on the spin
        // draw: a draw below the threshold takes the earlier outcome.
        let c = pair(0.8); // p_success = 0.32, p_up|success = 0.5
        let state = prepare_pair(&c, (&party_mode(ALICE), &party_mode(BOB))).unwrap();

        let mut success_up = ScriptedDraws {
            draws: vec![0.3199, 0.4999],
            next: 0,
        };
        let outcome = run_round(&state, &c, &mut success_up).unwrap();
        assert_eq!(outcome.charge_result, ChargeOutcome::One);
        assert_eq!(outcome.spin_result, Some(SpinOutcome::Up));
        assert_eq!(outcome.correction_applied, Correction::None);
        assert!((outcome.branch_probability - 0.16).abs() < 1e-12);

        let mut success_down = ScriptedDraws {
            draws: vec![0.0, 0.5001],
            next: 0,
        };
        let outcome = run_round(&state, &c, &mut success_down).unwrap();
        assert_eq!(outcome.charge_result, ChargeOutcome::One);
        assert_eq!(outcome.spin_result, Some(SpinOutcome::Down));
        assert_eq!(outcome.correction_applied, Correction::PhaseFlip);

        let mut failure = ScriptedDraws {
            draws: vec![0.3201],
            next: 0,
        };
        let outcome = run_round(&state, &c, &mut failure).unwrap();
        assert_eq!(outcome.charge_result, ChargeOutcome::Zero);
        assert_eq!(outcome.spin_result, None);
        assert!((outcome.branch_probability - 0.68).abs() < 1e-12);
    }
}
