//! Circuit elements: PBS spatial routing, single-spin unitaries, Z-basis spin
//! measurement, coarse-grained QND charge detection, and mode rerouting.
//!
//! All elements are stateless pure functions over immutable states. The PBS
//! fully transmits spin-up and reflects spin-down; a routing table pins the
//! geometry. The charge detector distinguishes occupation 1 from {0, 2} and
//! leaves spin coherence intact: its "0" branch keeps the 0-occupation and
//! 2-occupation configurations in superposition.

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::state::{Configuration, ElectronId, MeasurementRecord, ModeLabel, PureState, Spin};

/// A polarizing beam splitter: total routing map (in_port, spin) → out_port.
///
/// The crossing geometry is enforced: spin-up from the two in-ports must land
/// on different out-ports, and likewise for spin-down.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PbsSpec {
    in_ports: (ModeLabel, ModeLabel),
    out_ports: (ModeLabel, ModeLabel),
    routing: BTreeMap<(ModeLabel, Spin), ModeLabel>,
}

impl PbsSpec {
    pub fn new(
        in_ports: (ModeLabel, ModeLabel),
        out_ports: (ModeLabel, ModeLabel),
        routes: [(ModeLabel, Spin, ModeLabel); 4],
    ) -> Result<PbsSpec> {
        let mut routing = BTreeMap::new();
        for (port, spin, out) in routes {
            if port != in_ports.0 && port != in_ports.1 {
                return Err(Error::InvalidPbs(format!("{port} is not an in-port")));
            }
            if out != out_ports.0 && out != out_ports.1 {
                return Err(Error::InvalidPbs(format!("{out} is not an out-port")));
            }
            if routing.insert((port.clone(), spin), out).is_some() {
                return Err(Error::InvalidPbs(format!(
                    "duplicate route for ({port}, {spin})"
                )));
            }
        }
        for spin in [Spin::Up, Spin::Down] {
            let a = routing.get(&(in_ports.0.clone(), spin));
            let b = routing.get(&(in_ports.1.clone(), spin));
            match (a, b) {
                (Some(a), Some(b)) if a != b => {}
                (Some(_), Some(_)) => {
                    return Err(Error::InvalidPbs(format!(
                        "both in-ports send {spin} to the same out-port"
                    )))
                }
                _ => return Err(Error::InvalidPbs(format!("missing route for spin {spin}"))),
            }
        }
        Ok(PbsSpec {
            in_ports,
            out_ports,
            routing,
        })
    }

    pub fn in_ports(&self) -> (&ModeLabel, &ModeLabel) {
        (&self.in_ports.0, &self.in_ports.1)
    }

    pub fn out_ports(&self) -> (&ModeLabel, &ModeLabel) {
        (&self.out_ports.0, &self.out_ports.1)
    }

    pub fn is_in_port(&self, mode: &ModeLabel) -> bool {
        mode == &self.in_ports.0 || mode == &self.in_ports.1
    }

    pub fn route(&self, mode: &ModeLabel, spin: Spin) -> Option<&ModeLabel> {
        self.routing.get(&(mode.clone(), spin))
    }
}

/// Coarse-grained charge detector on one rail: reports "1" for occupation 1
/// and "0" for occupations 0 and 2, which it cannot tell apart.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChargeDetectorSpec {
    pub monitored_mode: ModeLabel,
}

impl ChargeDetectorSpec {
    pub fn new(monitored_mode: ModeLabel) -> ChargeDetectorSpec {
        ChargeDetectorSpec { monitored_mode }
    }

    pub fn label_for(&self, occupation: usize) -> &'static str {
        if occupation == 1 {
            "1"
        } else {
            "0"
        }
    }
}

/// A 2×2 unitary acting on one electron's spin, in the (↑, ↓) basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinUnitary {
    matrix: [[Complex64; 2]; 2],
    pub acted_electron: ElectronId,
}

const UNITARITY_TOLERANCE: f64 = 1e-12;

impl SpinUnitary {
    pub fn from_matrix(matrix: [[Complex64; 2]; 2], electron: ElectronId) -> Result<SpinUnitary> {
        // U·U† = I within tolerance.
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                let got: Complex64 = (0..2).map(|k| matrix[i][k] * matrix[j][k].conj()).sum();
                if (got - Complex64::new(want, 0.0)).norm() > UNITARITY_TOLERANCE {
                    return Err(Error::NotUnitary(UNITARITY_TOLERANCE));
                }
            }
        }
        Ok(SpinUnitary {
            matrix,
            acted_electron: electron,
        })
    }

    /// Bit flip: ↑ ↔ ↓.
    pub fn pauli_x(electron: ElectronId) -> SpinUnitary {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        SpinUnitary {
            matrix: [[o, l], [l, o]],
            acted_electron: electron,
        }
    }

    /// ↑ → (↑+↓)/√2, ↓ → (↑−↓)/√2.
    pub fn hadamard(electron: ElectronId) -> SpinUnitary {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        SpinUnitary {
            matrix: [[h, h], [h, -h]],
            acted_electron: electron,
        }
    }

    /// Phase flip: diag(1, −1).
    pub fn phase_flip(electron: ElectronId) -> SpinUnitary {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        SpinUnitary {
            matrix: [[l, o], [o, -l]],
            acted_electron: electron,
        }
    }

    pub fn matrix(&self) -> &[[Complex64; 2]; 2] {
        &self.matrix
    }
}

/// The parity-check arrangement: input PBS, charge detector on one rail, and
/// a recombining PBS that returns bunched pairs to one electron per rail.
#[derive(Debug, Clone)]
pub struct ParityCheckGate {
    pub pbs_in: PbsSpec,
    pub detector: ChargeDetectorSpec,
    pub pbs_out: PbsSpec,
}

impl ParityCheckGate {
    /// Standard wiring on Bob's rails: (b1, b3) → (c1, c2), detector on c1,
    /// recombiner (c1, c2) → (c1, c2).
    ///
    /// With exactly two electrons at the PBS the occupation of c1 determines
    /// that of c2, so monitoring c1 loses nothing. The recombiner table is
    /// fixed by requiring that each bunched pair leaves one electron per rail
    /// while one-per-rail inputs stay one per rail.
    pub fn standard() -> ParityCheckGate {
        let m = ModeLabel::new;
        let pbs_in = PbsSpec::new(
            (m("b1"), m("b3")),
            (m("c1"), m("c2")),
            [
                (m("b1"), Spin::Up, m("c2")),
                (m("b1"), Spin::Down, m("c1")),
                (m("b3"), Spin::Up, m("c1")),
                (m("b3"), Spin::Down, m("c2")),
            ],
        )
        .expect("standard input PBS is valid");
        let pbs_out = PbsSpec::new(
            (m("c1"), m("c2")),
            (m("c1"), m("c2")),
            [
                (m("c1"), Spin::Up, m("c2")),
                (m("c1"), Spin::Down, m("c1")),
                (m("c2"), Spin::Up, m("c1")),
                (m("c2"), Spin::Down, m("c2")),
            ],
        )
        .expect("standard recombining PBS is valid");
        ParityCheckGate {
            pbs_in,
            detector: ChargeDetectorSpec::new(m("c1")),
            pbs_out,
        }
    }
}

/// Routes every electron sitting in a PBS in-port to its out-port; electrons
/// in other modes are untouched and amplitudes are unchanged. All moves apply
/// simultaneously, so a PBS whose out-ports coincide with its in-ports is
/// well-defined. Electron ids are re-derived canonically after the move.
pub fn apply_pbs(state: &PureState, pbs: &PbsSpec) -> Result<PureState> {
    let connected = state
        .terms()
        .any(|(config, _)| config.slots().iter().any(|s| pbs.is_in_port(&s.mode)));
    if !connected {
        return Err(Error::PbsNotConnected(
            pbs.in_ports.0.clone(),
            pbs.in_ports.1.clone(),
        ));
    }

    let ids = state.electron_ids().to_vec();
    let mut terms: BTreeMap<Configuration, Complex64> = BTreeMap::new();
    for (config, amp) in state.terms() {
        let occupancy: Vec<(ModeLabel, Spin)> = config
            .slots()
            .iter()
            .map(|slot| {
                let mode = pbs
                    .route(&slot.mode, slot.spin)
                    .cloned()
                    .unwrap_or_else(|| slot.mode.clone());
                (mode, slot.spin)
            })
            .collect();
        let routed = Configuration::canonical_for(&ids, occupancy);
        *terms.entry(routed).or_insert(Complex64::new(0.0, 0.0)) += amp;
    }
    PureState::from_terms_raw(terms)
}

/// Moves the electron(s) in `from` onto the unoccupied rail `to`.
/// This is circuit wiring, not an optical element.
pub fn reroute_mode(state: &PureState, from: &ModeLabel, to: &ModeLabel) -> Result<PureState> {
    let mut touched = false;
    for (config, _) in state.terms() {
        if config.occupation(to) > 0 {
            return Err(Error::ModeOccupied(to.clone()));
        }
        touched |= config.occupation(from) > 0;
    }
    if !touched {
        return Err(Error::ModeNotOccupied(from.clone()));
    }

    let ids = state.electron_ids().to_vec();
    let mut terms: BTreeMap<Configuration, Complex64> = BTreeMap::new();
    for (config, amp) in state.terms() {
        let occupancy: Vec<(ModeLabel, Spin)> = config
            .slots()
            .iter()
            .map(|slot| {
                let mode = if &slot.mode == from {
                    to.clone()
                } else {
                    slot.mode.clone()
                };
                (mode, slot.spin)
            })
            .collect();
        let moved = Configuration::canonical_for(&ids, occupancy);
        *terms.entry(moved).or_insert(Complex64::new(0.0, 0.0)) += amp;
    }
    PureState::from_terms_raw(terms)
}

/// Applies a single-spin unitary to its electron within each configuration.
pub fn apply_spin_unitary(state: &PureState, unitary: &SpinUnitary) -> Result<PureState> {
    let electron = unitary.acted_electron;
    if !state.electron_ids().contains(&electron) {
        return Err(Error::UnknownElectron(electron));
    }

    let m = unitary.matrix();
    let mut terms: BTreeMap<Configuration, Complex64> = BTreeMap::new();
    for (config, amp) in state.terms() {
        let col = config
            .spin_of(electron)
            .expect("electron present in every configuration")
            .index();
        for (row, spin) in [(0, Spin::Up), (1, Spin::Down)] {
            let weight = m[row][col];
            if weight.norm_sqr() == 0.0 {
                continue;
            }
            *terms
                .entry(config.with_spin(electron, spin))
                .or_insert(Complex64::new(0.0, 0.0)) += amp * weight;
        }
    }
    PureState::from_terms_raw(terms)
}

/// QND charge measurement on the detector's rail. Partitions configurations
/// by occupation through the {1 → "1", 0/2 → "0"} map; the "0" record keeps
/// both occupation classes coherently superposed.
pub fn measure_charge(
    state: &PureState,
    detector: &ChargeDetectorSpec,
) -> Result<Vec<MeasurementRecord>> {
    let mode = &detector.monitored_mode;
    let one = |config: &Configuration| detector.label_for(config.occupation(mode)) == "1";
    let zero = |config: &Configuration| detector.label_for(config.occupation(mode)) == "0";
    state.measure_projective(&[("1", &one), ("0", &zero)])
}

/// Z-basis spin measurement of one electron. The two records are labeled
/// "up" and "down" in that fixed order; post-states have the measured
/// electron removed and are renormalized.
pub fn measure_spin_z(state: &PureState, electron: ElectronId) -> Result<Vec<MeasurementRecord>> {
    if !state.electron_ids().contains(&electron) {
        return Err(Error::UnknownElectron(electron));
    }
    // The detector sits on one rail: the measured electron must occupy the
    // same mode in every configuration.
    let mut mode: Option<&ModeLabel> = None;
    for (config, _) in state.terms() {
        let here = config.mode_of(electron).expect("electron present");
        match mode {
            None => mode = Some(here),
            Some(m) if m != here => return Err(Error::AmbiguousElectronMode(electron)),
            Some(_) => {}
        }
    }

    let mut records = Vec::with_capacity(2);
    for (label, spin) in [("up", Spin::Up), ("down", Spin::Down)] {
        let mut probability = 0.0;
        let mut terms: BTreeMap<Configuration, Complex64> = BTreeMap::new();
        for (config, amp) in state.terms() {
            if config.spin_of(electron) == Some(spin) {
                probability += amp.norm_sqr();
                terms.insert(config.without(electron), amp);
            }
        }
        let post_state = if terms.is_empty() {
            None
        } else {
            Some(PureState::from_terms(terms)?)
        };
        records.push(MeasurementRecord {
            outcome: label.to_string(),
            probability,
            post_state,
        });
    }
    Ok(records)
}
