//! Sparse pure states of labeled electrons distributed over named spatial modes.
//!
//! A [`Configuration`] is one classical basis state: an assignment of every
//! electron to a (mode, spin) slot. A [`PureState`] is a sparse map from
//! configurations to complex amplitudes, kept normalized and pruned.
//!
//! Electrons are identical carriers; ids are canonical positional handles.
//! Within a configuration the slots are ordered by electron id, and whenever
//! an element moves electrons between modes (see [`crate::elements::apply_pbs`])
//! the ids are re-derived from the slot list sorted by (mode, spin). That is
//! what keeps a mode-addressed operation coherent across superposed
//! configurations that route different carriers onto the same rail.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Normalization tolerance: after any operation, `|1 - Σ|amp|²| ≤ NORM_TOLERANCE`.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Amplitudes with magnitude below this are pruned from the sparse map.
pub const AMPLITUDE_PRUNE_THRESHOLD: f64 = 1e-12;
/// Two states are considered equal up to global phase when
/// `1 - fidelity ≤ FIDELITY_TOLERANCE`.
pub const FIDELITY_TOLERANCE: f64 = 1e-10;

const C_ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Spin of a single electron. The `Up < Down` ordering is load-bearing: it
/// fixes the canonical slot order used when ids are re-derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }

    pub(crate) fn index(self) -> usize {
        match self {
            Spin::Up => 0,
            Spin::Down => 1,
        }
    }

    pub fn arrow(self) -> char {
        match self {
            Spin::Up => '↑',
            Spin::Down => '↓',
        }
    }
}

impl fmt::Display for Spin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.arrow())
    }
}

/// Name of a spatial mode ("a1", "b1", "c2", ...). Equality and ordering are
/// exact string comparisons; ordering also drives canonical id assignment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModeLabel(String);

impl ModeLabel {
    pub fn new(name: impl Into<String>) -> ModeLabel {
        let name = name.into();
        assert!(!name.is_empty(), "mode labels must be non-empty");
        ModeLabel(name)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModeLabel {
    fn from(s: &str) -> ModeLabel {
        ModeLabel::new(s)
    }
}

/// Identifier of a labeled electron within a state.
pub type ElectronId = u32;

/// One electron's slot in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Slot {
    pub electron: ElectronId,
    pub mode: ModeLabel,
    pub spin: Spin,
}

/// A classical basis state: every electron assigned to a (mode, spin) pair.
/// Canonical form keeps slots sorted by ascending electron id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration {
    slots: Vec<Slot>,
}

impl Configuration {
    pub fn new(mut slots: Vec<Slot>) -> Result<Configuration> {
        slots.sort_by_key(|s| s.electron);
        for pair in slots.windows(2) {
            if pair[0].electron == pair[1].electron {
                return Err(Error::DuplicateElectronId(pair[0].electron));
            }
        }
        Ok(Configuration { slots })
    }

    pub fn from_slots<I>(slots: I) -> Result<Configuration>
    where
        I: IntoIterator<Item = (ElectronId, ModeLabel, Spin)>,
    {
        Configuration::new(
            slots
                .into_iter()
                .map(|(electron, mode, spin)| Slot {
                    electron,
                    mode,
                    spin,
                })
                .collect(),
        )
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn electron_ids(&self) -> impl Iterator<Item = ElectronId> + '_ {
        self.slots.iter().map(|s| s.electron)
    }

    pub fn spin_of(&self, electron: ElectronId) -> Option<Spin> {
        self.slot_of(electron).map(|s| s.spin)
    }

    pub fn mode_of(&self, electron: ElectronId) -> Option<&ModeLabel> {
        self.slot_of(electron).map(|s| &s.mode)
    }

    fn slot_of(&self, electron: ElectronId) -> Option<&Slot> {
        self.slots.iter().find(|s| s.electron == electron)
    }

    /// Number of electrons occupying `mode`.
    pub fn occupation(&self, mode: &ModeLabel) -> usize {
        self.slots.iter().filter(|s| &s.mode == mode).count()
    }

    pub fn electrons_in_mode<'a>(
        &'a self,
        mode: &'a ModeLabel,
    ) -> impl Iterator<Item = ElectronId> + 'a {
        self.slots
            .iter()
            .filter(move |s| &s.mode == mode)
            .map(|s| s.electron)
    }

    pub(crate) fn with_spin(&self, electron: ElectronId, spin: Spin) -> Configuration {
        let slots = self
            .slots
            .iter()
            .map(|s| {
                if s.electron == electron {
                    Slot { spin, ..s.clone() }
                } else {
                    s.clone()
                }
            })
            .collect();
        Configuration { slots }
    }

    pub(crate) fn without(&self, electron: ElectronId) -> Configuration {
        Configuration {
            slots: self
                .slots
                .iter()
                .filter(|s| s.electron != electron)
                .cloned()
                .collect(),
        }
    }

    /// Rebinds `ids` (ascending) to the occupancy pattern sorted by
    /// (mode, spin). Used by elements that move electrons between modes.
    pub(crate) fn canonical_for(
        ids: &[ElectronId],
        mut occupancy: Vec<(ModeLabel, Spin)>,
    ) -> Configuration {
        debug_assert_eq!(ids.len(), occupancy.len());
        occupancy.sort();
        let slots = ids
            .iter()
            .zip(occupancy)
            .map(|(&electron, (mode, spin))| Slot {
                electron,
                mode,
                spin,
            })
            .collect();
        Configuration { slots }
    }

    /// Ket rendering such as `|↑a1 ↑c1 ↓c2⟩`, slots in electron-id order.
    pub fn ket(&self) -> String {
        let body: Vec<String> = self
            .slots
            .iter()
            .map(|s| format!("{}{}", s.spin.arrow(), s.mode))
            .collect();
        format!("|{}⟩", body.join(" "))
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.ket())
    }
}

/// Outcome of one projective measurement branch.
///
/// `post_state` is `None` for zero-probability branches; reporting those
/// keeps exhaustiveness checks honest.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub outcome: String,
    pub probability: f64,
    pub post_state: Option<PureState>,
}

/// One labeled outcome of a projective partition: the label plus the
/// predicate selecting its configurations.
pub type OutcomePredicate<'a> = (&'a str, &'a dyn Fn(&Configuration) -> bool);

/// Sparse normalized pure state over configurations of a fixed electron set.
///
/// Immutable after construction; every operation returns a new state.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    terms: BTreeMap<Configuration, Complex64>,
    electrons: Vec<ElectronId>,
}

impl PureState {
    /// Builds a state from (configuration, amplitude) terms. Duplicate
    /// configurations add coherently; the result is normalized then pruned.
    pub fn from_terms<I>(terms: I) -> Result<PureState>
    where
        I: IntoIterator<Item = (Configuration, Complex64)>,
    {
        let mut map: BTreeMap<Configuration, Complex64> = BTreeMap::new();
        for (config, amp) in terms {
            *map.entry(config).or_insert(C_ZERO) += amp;
        }
        PureState::build(map, true)
    }

    /// Like [`PureState::from_terms`] but trusts the caller's normalization.
    /// Reserved for norm-preserving internal operations.
    pub(crate) fn from_terms_raw(map: BTreeMap<Configuration, Complex64>) -> Result<PureState> {
        PureState::build(map, false)
    }

    fn build(mut map: BTreeMap<Configuration, Complex64>, normalize: bool) -> Result<PureState> {
        if normalize {
            let norm_sqr: f64 = map.values().map(|a| a.norm_sqr()).sum();
            if norm_sqr <= f64::MIN_POSITIVE {
                return Err(Error::ZeroNorm);
            }
            let scale = 1.0 / norm_sqr.sqrt();
            for amp in map.values_mut() {
                *amp *= scale;
            }
        }
        map.retain(|_, amp| amp.norm() >= AMPLITUDE_PRUNE_THRESHOLD);
        if map.is_empty() {
            return Err(Error::ZeroNorm);
        }

        let electrons: Vec<ElectronId> = map
            .keys()
            .next()
            .expect("non-empty")
            .electron_ids()
            .collect();
        for config in map.keys() {
            let found: Vec<ElectronId> = config.electron_ids().collect();
            if found != electrons {
                return Err(Error::InconsistentElectronSets {
                    expected: electrons,
                    found,
                });
            }
        }
        Ok(PureState {
            terms: map,
            electrons,
        })
    }

    /// The basis state `|configuration⟩`.
    pub fn basis_state(config: Configuration) -> Result<PureState> {
        PureState::from_terms([(config, Complex64::new(1.0, 0.0))])
    }

    /// Single electron in `mode` with spin amplitudes `(up, down)`.
    pub fn single(
        electron: ElectronId,
        mode: ModeLabel,
        up: Complex64,
        down: Complex64,
    ) -> Result<PureState> {
        PureState::from_terms([
            (
                Configuration::from_slots([(electron, mode.clone(), Spin::Up)])?,
                up,
            ),
            (
                Configuration::from_slots([(electron, mode, Spin::Down)])?,
                down,
            ),
        ])
    }

    /// `(|↑…↑⟩ + |↓…↓⟩)/√2` over the given (electron, mode) slots.
    pub fn ghz(slots: &[(ElectronId, ModeLabel)]) -> Result<PureState> {
        let up = Configuration::from_slots(
            slots
                .iter()
                .map(|(e, m)| (*e, m.clone(), Spin::Up))
                .collect::<Vec<_>>(),
        )?;
        let down = Configuration::from_slots(
            slots
                .iter()
                .map(|(e, m)| (*e, m.clone(), Spin::Down))
                .collect::<Vec<_>>(),
        )?;
        let amp = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        PureState::from_terms([(up, amp), (down, amp)])
    }

    /// Sorted electron ids common to every configuration.
    pub fn electron_ids(&self) -> &[ElectronId] {
        &self.electrons
    }

    pub fn electron_count(&self) -> usize {
        self.electrons.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Configuration, Complex64)> {
        self.terms.iter().map(|(c, a)| (c, *a))
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn amplitude(&self, config: &Configuration) -> Complex64 {
        self.terms.get(config).copied().unwrap_or(C_ZERO)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    /// The electron-to-mode map when it is identical in every configuration.
    pub fn mode_assignment(&self) -> Option<BTreeMap<ElectronId, ModeLabel>> {
        let mut assignment: BTreeMap<ElectronId, ModeLabel> = BTreeMap::new();
        for (config, _) in self.terms() {
            for slot in config.slots() {
                match assignment.get(&slot.electron) {
                    None => {
                        assignment.insert(slot.electron, slot.mode.clone());
                    }
                    Some(mode) if *mode != slot.mode => return None,
                    Some(_) => {}
                }
            }
        }
        Some(assignment)
    }

    /// The id of the single electron occupying `mode`, required to be the
    /// same electron in every configuration.
    pub fn electron_in_mode(&self, mode: &ModeLabel) -> Result<ElectronId> {
        let mut found: Option<ElectronId> = None;
        for (config, _) in self.terms() {
            let mut occupants = config.electrons_in_mode(mode);
            let first = occupants
                .next()
                .ok_or_else(|| Error::AmbiguousModeOccupant(mode.clone()))?;
            if occupants.next().is_some() {
                return Err(Error::AmbiguousModeOccupant(mode.clone()));
            }
            match found {
                None => found = Some(first),
                Some(prev) if prev != first => {
                    return Err(Error::AmbiguousModeOccupant(mode.clone()))
                }
                Some(_) => {}
            }
        }
        found.ok_or_else(|| Error::AmbiguousModeOccupant(mode.clone()))
    }

    /// Tensor product of two states over disjoint electron sets. Amplitudes
    /// multiply pairwise; the electron sets concatenate.
    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let mine: BTreeSet<ElectronId> = self.electrons.iter().copied().collect();
        let overlap: Vec<ElectronId> = other
            .electrons
            .iter()
            .copied()
            .filter(|e| mine.contains(e))
            .collect();
        if !overlap.is_empty() {
            return Err(Error::OverlappingElectronIds(overlap));
        }

        let mut map = BTreeMap::new();
        for (ca, aa) in self.terms() {
            for (cb, ab) in other.terms() {
                let mut slots = ca.slots().to_vec();
                slots.extend_from_slice(cb.slots());
                let merged = Configuration::new(slots)?;
                map.insert(merged, aa * ab);
            }
        }
        PureState::from_terms_raw(map)
    }

    /// Projective measurement over a labeled partition of configuration
    /// space. Predicates must be pairwise disjoint and jointly exhaustive
    /// over the state's support; zero-probability outcomes are still
    /// reported, with `post_state: None`.
    pub fn measure_projective(
        &self,
        partition: &[OutcomePredicate<'_>],
    ) -> Result<Vec<MeasurementRecord>> {
        let mut buckets: Vec<BTreeMap<Configuration, Complex64>> =
            partition.iter().map(|_| BTreeMap::new()).collect();

        for (config, amp) in self.terms() {
            let matches: Vec<usize> = partition
                .iter()
                .enumerate()
                .filter(|(_, (_, pred))| pred(config))
                .map(|(i, _)| i)
                .collect();
            match matches.as_slice() {
                [] => return Err(Error::NonExhaustivePartition(config.ket())),
                [i] => {
                    buckets[*i].insert(config.clone(), amp);
                }
                _ => return Err(Error::OverlappingPartition(config.ket())),
            }
        }

        partition
            .iter()
            .zip(buckets)
            .map(|((label, _), bucket)| {
                let probability: f64 = bucket.values().map(|a| a.norm_sqr()).sum();
                let post_state = if bucket.is_empty() {
                    None
                } else {
                    Some(PureState::from_terms(bucket)?)
                };
                Ok(MeasurementRecord {
                    outcome: (*label).to_string(),
                    probability,
                    post_state,
                })
            })
            .collect()
    }

    /// `|⟨self|other⟩|²` — equals 1 exactly when the states agree up to a
    /// global phase. Requires identical electron sets.
    pub fn fidelity_up_to_phase(&self, other: &PureState) -> Result<f64> {
        if self.electrons != other.electrons {
            return Err(Error::MismatchedElectronSets);
        }
        let mut overlap = C_ZERO;
        for (config, amp) in self.terms() {
            overlap += amp.conj() * other.amplitude(config);
        }
        Ok(overlap.norm_sqr())
    }

    /// Schmidt coefficients `(λ₁, λ₂)` with `λ₁ ≥ λ₂` and `λ₁² + λ₂² = 1`
    /// across the bipartition of the electron set. Errors when the cut has
    /// rank above 2, which no state of this protocol does.
    pub fn schmidt_coefficients(
        &self,
        party_a: &[ElectronId],
        party_b: &[ElectronId],
    ) -> Result<(f64, f64)> {
        let set_a: BTreeSet<ElectronId> = party_a.iter().copied().collect();
        let set_b: BTreeSet<ElectronId> = party_b.iter().copied().collect();
        let all: BTreeSet<ElectronId> = self.electrons.iter().copied().collect();
        let disjoint = set_a.intersection(&set_b).next().is_none();
        let covering = set_a.union(&set_b).copied().collect::<BTreeSet<_>>() == all;
        if set_a.is_empty() || set_b.is_empty() || !disjoint || !covering {
            return Err(Error::InvalidPartition);
        }

        // Coefficient matrix M[a_config][b_config], indexed by the distinct
        // sub-configurations of each half.
        let mut col_index: BTreeMap<Configuration, usize> = BTreeMap::new();
        let mut rows: BTreeMap<Configuration, Vec<(usize, Complex64)>> = BTreeMap::new();
        for (config, amp) in self.terms() {
            let half = |ids: &BTreeSet<ElectronId>| -> Configuration {
                Configuration {
                    slots: config
                        .slots()
                        .iter()
                        .filter(|s| ids.contains(&s.electron))
                        .cloned()
                        .collect(),
                }
            };
            let (ca, cb) = (half(&set_a), half(&set_b));
            let next = col_index.len();
            let col = *col_index.entry(cb).or_insert(next);
            rows.entry(ca).or_default().push((col, amp));
        }

        let n_cols = col_index.len();
        let dense: Vec<Vec<Complex64>> = rows
            .into_values()
            .map(|entries| {
                let mut row = vec![C_ZERO; n_cols];
                for (col, amp) in entries {
                    row[col] += amp;
                }
                row
            })
            .collect();

        // Gram-Schmidt on the rows: more than two independent directions
        // means the cut has Schmidt rank above 2.
        const RANK_TOLERANCE: f64 = 1e-9;
        let dot = |u: &[Complex64], v: &[Complex64]| -> Complex64 {
            u.iter().zip(v).map(|(x, y)| x.conj() * y).sum()
        };
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        let mut coeffs: Vec<[Complex64; 2]> = Vec::new();
        for row in &dense {
            let mut residual = row.clone();
            let mut c = [C_ZERO; 2];
            for (i, u) in basis.iter().enumerate() {
                let d = dot(u, &residual);
                c[i] = d;
                for (r, b) in residual.iter_mut().zip(u) {
                    *r -= d * b;
                }
            }
            let leftover = dot(&residual, &residual).re.max(0.0).sqrt();
            if leftover > RANK_TOLERANCE {
                if basis.len() == 2 {
                    return Err(Error::SchmidtRankTooHigh);
                }
                c[basis.len()] = Complex64::new(leftover, 0.0);
                for r in residual.iter_mut() {
                    *r /= leftover;
                }
                basis.push(residual);
            }
            coeffs.push(c);
        }

        // Singular values of the n×2 coefficient matrix via its 2×2 Gram form.
        let h00: f64 = coeffs.iter().map(|c| c[0].norm_sqr()).sum();
        let h11: f64 = coeffs.iter().map(|c| c[1].norm_sqr()).sum();
        let h01: Complex64 = coeffs.iter().map(|c| c[0].conj() * c[1]).sum();
        let trace = h00 + h11;
        let det = h00 * h11 - h01.norm_sqr();
        let disc = (trace * trace - 4.0 * det).max(0.0).sqrt();
        let l1 = ((trace + disc) / 2.0).max(0.0).sqrt();
        let l2 = ((trace - disc) / 2.0).max(0.0).sqrt();
        Ok((l1, l2))
    }
}

impl fmt::Display for PureState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (config, amp) in self.terms() {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            if amp.im.abs() < 1e-9 {
                write!(f, "{:+.6}{}", amp.re, config.ket())?;
            } else {
                write!(f, "({:+.6}{:+.6}i){}", amp.re, amp.im, config.ket())?;
            }
        }
        Ok(())
    }
}
