//! Dense statevector simulator: the exactness oracle for every other
//! backend, plus stochastic Pauli noise trajectories and shot sampling with
//! per-qubit readout confusion.
//!
//! Basis convention: site `i` is bit `i` of the amplitude index (site 0 is
//! the least significant bit); bit 0 means spin up. Rendered bitstrings put
//! site 0 leftmost.
//!
//! Noise semantics: after each CNOT, with probability `p2` a Pauli drawn
//! uniformly from all 16 two-qubit Paulis is applied (identity included),
//! which reproduces the two-qubit depolarizing channel
//! `rho -> (1-p2) rho + p2 I/4` exactly; 1-qubit gates analogously with
//! `p1` over the 4 single-qubit Paulis. Readout confusion acts at sampling
//! time only, never on the stored state.

use crate::circuits::{Circuit, FoldedCircuit, NativeGate};
use crate::model::BondTerm;
use crate::{C64, Error, Result};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

/// Default qubit cap for dense simulation (16 GiB of amplitudes at 24).
pub const DENSE_DEFAULT_CAP: usize = 24;

/// A normalized amplitude vector over `2^n` computational basis states.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    n_qubits: usize,
    amps: Vec<C64>,
}

impl DenseState {
    /// `|0...0>`.
    pub fn zero_state(n_qubits: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = C64::new(1.0, 0.0);
        Self { n_qubits, amps }
    }

    pub fn from_amplitudes(n_qubits: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != 1 << n_qubits {
            return Err(Error::Dimension(format!(
                "expected {} amplitudes for {n_qubits} qubits, got {}",
                1usize << n_qubits,
                amps.len()
            )));
        }
        let mut state = Self { n_qubits, amps };
        let norm = state.norm();
        if (norm - 1.0).abs() > 1e-10 {
            if norm < 1e-12 {
                return Err(Error::Argument("cannot normalize a zero vector".into()));
            }
            state.scale(1.0 / norm);
        }
        Ok(state)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    fn scale(&mut self, s: f64) {
        for a in &mut self.amps {
            *a *= s;
        }
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &DenseState) -> Result<C64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::Dimension(format!(
                "inner product between {} and {} qubits",
                self.n_qubits, other.n_qubits
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    fn apply_1q(&mut self, q: usize, m: &[C64; 4]) {
        let mask = 1usize << q;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + mask {
                let j = i | mask;
                let a = self.amps[i];
                let b = self.amps[j];
                self.amps[i] = m[0] * a + m[1] * b;
                self.amps[j] = m[2] * a + m[3] * b;
            }
            base += 2 * mask;
        }
    }

    fn apply_x(&mut self, q: usize) {
        let mask = 1usize << q;
        let dim = self.amps.len();
        let mut base = 0;
        while base < dim {
            for i in base..base + mask {
                self.amps.swap(i, i | mask);
            }
            base += 2 * mask;
        }
    }

    fn apply_rz(&mut self, q: usize, angle: f64) {
        let mask = 1usize << q;
        let lo = C64::from_polar(1.0, -angle / 2.0);
        let hi = C64::from_polar(1.0, angle / 2.0);
        for (i, a) in self.amps.iter_mut().enumerate() {
            *a *= if i & mask == 0 { lo } else { hi };
        }
    }

    fn apply_cnot(&mut self, c: usize, t: usize) {
        let mc = 1usize << c;
        let mt = 1usize << t;
        let (lo, hi) = (mc.min(mt), mc.max(mt));
        let dim = self.amps.len();
        // Walk only the quarter of indices with control set and target clear.
        let mut outer = 0;
        while outer < dim {
            let mut mid = outer;
            while mid < outer + hi {
                for i in mid..mid + lo {
                    let j = i | mc;
                    self.amps.swap(j, j | mt);
                }
                mid += 2 * lo;
            }
            outer += 2 * hi;
        }
    }

    /// Apply a 4x4 on the qubit pair `(a, b)`, row index `2 s_a + s_b`, in a
    /// single pass over the amplitudes.
    fn apply_2q(&mut self, a: usize, b: usize, m: &[C64; 16]) {
        let ma = 1usize << a;
        let mb = 1usize << b;
        let (lo, hi) = (ma.min(mb), ma.max(mb));
        let dim = self.amps.len();
        let mut outer = 0;
        while outer < dim {
            let mut mid = outer;
            while mid < outer + hi {
                for i in mid..mid + lo {
                    let i00 = i;
                    let i01 = i | mb;
                    let i10 = i | ma;
                    let i11 = i | ma | mb;
                    let v0 = self.amps[i00];
                    let v1 = self.amps[i01];
                    let v2 = self.amps[i10];
                    let v3 = self.amps[i11];
                    self.amps[i00] = m[0] * v0 + m[1] * v1 + m[2] * v2 + m[3] * v3;
                    self.amps[i01] = m[4] * v0 + m[5] * v1 + m[6] * v2 + m[7] * v3;
                    self.amps[i10] = m[8] * v0 + m[9] * v1 + m[10] * v2 + m[11] * v3;
                    self.amps[i11] = m[12] * v0 + m[13] * v1 + m[14] * v2 + m[15] * v3;
                }
                mid += 2 * lo;
            }
            outer += 2 * hi;
        }
    }

    /// Measurement probabilities `|amp|^2`.
    fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }
}

// Single-qubit constants as row-major 2x2 matrices.
const SX_MAT: [C64; 4] = [
    C64::new(0.5, 0.5),
    C64::new(0.5, -0.5),
    C64::new(0.5, -0.5),
    C64::new(0.5, 0.5),
];
const X_MAT: [C64; 4] = [
    C64::new(0.0, 0.0),
    C64::new(1.0, 0.0),
    C64::new(1.0, 0.0),
    C64::new(0.0, 0.0),
];
const Y_MAT: [C64; 4] = [
    C64::new(0.0, 0.0),
    C64::new(0.0, -1.0),
    C64::new(0.0, 1.0),
    C64::new(0.0, 0.0),
];
const Z_MAT: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 0.0),
    C64::new(0.0, 0.0),
    C64::new(-1.0, 0.0),
];
const ID_MAT: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 0.0),
    C64::new(0.0, 0.0),
    C64::new(1.0, 0.0),
];

fn rz_mat(angle: f64) -> [C64; 4] {
    [
        C64::from_polar(1.0, -angle / 2.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, angle / 2.0),
    ]
}

fn mul2(a: &[C64; 4], b: &[C64; 4]) -> [C64; 4] {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

fn pauli_mat(k: usize) -> &'static [C64; 4] {
    match k {
        0 => &ID_MAT,
        1 => &X_MAT,
        2 => &Y_MAT,
        _ => &Z_MAT,
    }
}

/// Per-qubit readout confusion: the column-stochastic matrix
/// `[[P(0|0), P(0|1)], [P(1|0), P(1|1)]]` parameterized by its two flip
/// probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// `P(read 1 | true 0)`.
    pub p10: f64,
    /// `P(read 0 | true 1)`.
    pub p01: f64,
}

impl Confusion {
    pub fn ideal() -> Self {
        Self { p10: 0.0, p01: 0.0 }
    }

    pub fn symmetric(flip: f64) -> Self {
        Self { p10: flip, p01: flip }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        [[1.0 - self.p10, self.p01], [self.p10, 1.0 - self.p01]]
    }

    fn validate(&self) -> Result<()> {
        for p in [self.p10, self.p01] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!(
                    "confusion probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Readout-error specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutNoise {
    Ideal,
    /// The same confusion on every qubit.
    Uniform(Confusion),
    /// Qubit `q` uses entry `q`.
    PerQubit(Vec<Confusion>),
}

/// Stochastic gate noise plus readout confusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Depolarizing probability per single-qubit gate.
    pub p1: f64,
    /// Depolarizing probability per CNOT.
    pub p2: f64,
    pub readout: ReadoutNoise,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            p1: 0.0,
            p2: 0.0,
            readout: ReadoutNoise::Ideal,
        }
    }

    pub fn depolarizing(p1: f64, p2: f64) -> Self {
        Self {
            p1,
            p2,
            readout: ReadoutNoise::Ideal,
        }
    }

    pub fn with_uniform_readout(mut self, flip: f64) -> Self {
        self.readout = ReadoutNoise::Uniform(Confusion::symmetric(flip));
        self
    }

    pub fn with_readout(mut self, readout: ReadoutNoise) -> Self {
        self.readout = readout;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for p in [self.p1, self.p2] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Argument(format!(
                    "depolarizing probability {p} outside [0, 1]"
                )));
            }
        }
        match &self.readout {
            ReadoutNoise::Ideal => Ok(()),
            ReadoutNoise::Uniform(c) => c.validate(),
            ReadoutNoise::PerQubit(v) => v.iter().try_for_each(Confusion::validate),
        }
    }

    /// True when gates are applied exactly (readout noise may still act).
    pub fn gates_are_exact(&self) -> bool {
        self.p1 == 0.0 && self.p2 == 0.0
    }

    pub fn confusion_for(&self, q: usize) -> Confusion {
        match &self.readout {
            ReadoutNoise::Ideal => Confusion::ideal(),
            ReadoutNoise::Uniform(c) => *c,
            ReadoutNoise::PerQubit(v) => v.get(q).copied().unwrap_or_else(Confusion::ideal),
        }
    }

    pub fn has_readout_noise(&self) -> bool {
        match &self.readout {
            ReadoutNoise::Ideal => false,
            ReadoutNoise::Uniform(c) => c.p10 != 0.0 || c.p01 != 0.0,
            ReadoutNoise::PerQubit(v) => v.iter().any(|c| c.p10 != 0.0 || c.p01 != 0.0),
        }
    }

    /// View for a two-qubit calibration circuit on the device pair `(a, b)`:
    /// same gate noise, readout confusion of qubits `a` and `b` mapped onto
    /// circuit qubits 0 and 1.
    pub fn restrict_to_pair(&self, pair: (usize, usize)) -> NoiseModel {
        NoiseModel {
            p1: self.p1,
            p2: self.p2,
            readout: ReadoutNoise::PerQubit(vec![
                self.confusion_for(pair.0),
                self.confusion_for(pair.1),
            ]),
        }
    }
}

/// Deterministic RNG for a derived stream: trajectories, shot batches and
/// bootstrap resamples all key off `(seed, stream)`.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lazily fused circuit application: single-qubit gates (and sampled noise
/// Paulis) accumulate into per-qubit 2x2 matrices that are flushed only at
/// CNOT boundaries, which is what makes deep trajectory runs affordable.
struct FusedEngine {
    pending: Vec<Option<[C64; 4]>>,
}

impl FusedEngine {
    fn new(n_qubits: usize) -> Self {
        Self {
            pending: vec![None; n_qubits],
        }
    }

    fn absorb(&mut self, q: usize, m: &[C64; 4]) {
        self.pending[q] = Some(match &self.pending[q] {
            Some(p) => mul2(m, p),
            None => *m,
        });
    }

    fn flush(&mut self, state: &mut DenseState, q: usize) {
        if let Some(m) = self.pending[q].take() {
            state.apply_1q(q, &m);
        }
    }

    fn flush_all(&mut self, state: &mut DenseState) {
        for q in 0..self.pending.len() {
            self.flush(state, q);
        }
    }

    /// Apply one gate, optionally sampling depolarizing noise.
    fn gate(
        &mut self,
        state: &mut DenseState,
        gate: &NativeGate,
        noise: Option<(&NoiseModel, &mut ChaCha12Rng)>,
    ) {
        match *gate {
            NativeGate::Rz { qubit, angle } => self.absorb(qubit, &rz_mat(angle)),
            NativeGate::Sx { qubit } => self.absorb(qubit, &SX_MAT),
            NativeGate::X { qubit } => self.absorb(qubit, &X_MAT),
            NativeGate::Cnot { control, target } => {
                match (self.pending[control].take(), self.pending[target].take()) {
                    (None, None) => state.apply_cnot(control, target),
                    (pc, pt) => {
                        // Fold the pending single-qubit matrices into the
                        // CNOT as one two-qubit pass.
                        let pc = pc.unwrap_or(ID_MAT);
                        let pt = pt.unwrap_or(ID_MAT);
                        let mut m = [C64::new(0.0, 0.0); 16];
                        // CNOT . (pc x pt): CNOT maps row (1, st) <- (1, 1-st).
                        for sc in 0..2 {
                            for st in 0..2 {
                                let row = if sc == 0 { 2 * sc + st } else { 2 * sc + (1 - st) };
                                for cc in 0..2 {
                                    for ct in 0..2 {
                                        m[row * 4 + 2 * cc + ct] =
                                            pc[sc * 2 + cc] * pt[st * 2 + ct];
                                    }
                                }
                            }
                        }
                        state.apply_2q(control, target, &m);
                    }
                }
            }
        }
        if let Some((model, rng)) = noise {
            self.sample_noise(gate, model, rng);
        }
    }

    /// Draw the depolarizing event for `gate` and absorb the sampled Paulis.
    /// Identity draws are included so that `p1`/`p2` equal the channel's
    /// depolarizing probability exactly.
    fn sample_noise(&mut self, gate: &NativeGate, model: &NoiseModel, rng: &mut ChaCha12Rng) {
        match *gate {
            NativeGate::Cnot { control, target } => {
                if model.p2 > 0.0 && rng.random::<f64>() < model.p2 {
                    let k = rng.random_range(0..16usize);
                    let (kc, kt) = (k / 4, k % 4);
                    if kc != 0 {
                        self.absorb(control, pauli_mat(kc));
                    }
                    if kt != 0 {
                        self.absorb(target, pauli_mat(kt));
                    }
                }
            }
            NativeGate::Rz { qubit, .. } | NativeGate::Sx { qubit } | NativeGate::X { qubit } => {
                if model.p1 > 0.0 && rng.random::<f64>() < model.p1 {
                    let k = rng.random_range(0..4usize);
                    if k != 0 {
                        self.absorb(qubit, pauli_mat(k));
                    }
                }
            }
        }
    }
}

fn check_cap(n_qubits: usize, cap: usize) -> Result<()> {
    if n_qubits > cap {
        return Err(Error::Capability(format!(
            "dense simulation capped at {cap} qubits (got {n_qubits}); use the mps backend"
        )));
    }
    Ok(())
}

/// Apply `c` exactly to `|0...0>`.
pub fn run_exact(c: &Circuit) -> Result<DenseState> {
    run_exact_with_cap(c, DENSE_DEFAULT_CAP)
}

pub fn run_exact_with_cap(c: &Circuit, cap: usize) -> Result<DenseState> {
    check_cap(c.n_qubits(), cap)?;
    let mut state = DenseState::zero_state(c.n_qubits());
    apply_exact(&mut state, c);
    Ok(state)
}

pub(crate) fn apply_exact(state: &mut DenseState, c: &Circuit) {
    let mut engine = FusedEngine::new(c.n_qubits());
    for g in c.gates() {
        engine.gate(state, g, None);
    }
    engine.flush_all(state);
}

/// One stochastic Pauli trajectory of `c`, deterministic in
/// `(seed, trajectory)`.
pub fn run_trajectory(
    c: &Circuit,
    noise: &NoiseModel,
    seed: u64,
    trajectory: u64,
) -> Result<DenseState> {
    run_trajectory_with_cap(c, noise, seed, trajectory, DENSE_DEFAULT_CAP)
}

pub fn run_trajectory_with_cap(
    c: &Circuit,
    noise: &NoiseModel,
    seed: u64,
    trajectory: u64,
    cap: usize,
) -> Result<DenseState> {
    check_cap(c.n_qubits(), cap)?;
    noise.validate()?;
    let mut rng = stream_rng(seed, trajectory);
    let mut state = DenseState::zero_state(c.n_qubits());
    let mut engine = FusedEngine::new(c.n_qubits());
    for g in c.gates() {
        engine.gate(&mut state, g, Some((noise, &mut rng)));
    }
    engine.flush_all(&mut state);
    Ok(state)
}

/// Inject the sampled Pauli for a noise event on `gate` into the engine.
fn inject_event(engine: &mut FusedEngine, gate: &NativeGate, rng: &mut ChaCha12Rng) {
    match gate {
        NativeGate::Cnot { control, target } => {
            let k = rng.random_range(0..16usize);
            let (kc, kt) = (k / 4, k % 4);
            if kc != 0 {
                engine.absorb(*control, pauli_mat(kc));
            }
            if kt != 0 {
                engine.absorb(*target, pauli_mat(kt));
            }
        }
        NativeGate::Rz { qubit, .. } | NativeGate::Sx { qubit } | NativeGate::X { qubit } => {
            let k = rng.random_range(0..4usize);
            if k != 0 {
                engine.absorb(*qubit, pauli_mat(k));
            }
        }
    }
}

/// Draw Bernoulli noise events gate by gate (without evolving) and return
/// the index of the first gate whose event fires.
pub(crate) fn scan_first_event(
    gates: &[NativeGate],
    noise: &NoiseModel,
    rng: &mut ChaCha12Rng,
) -> Option<usize> {
    for (i, g) in gates.iter().enumerate() {
        let fires = match g {
            NativeGate::Cnot { .. } => noise.p2 > 0.0 && rng.random::<f64>() < noise.p2,
            _ => noise.p1 > 0.0 && rng.random::<f64>() < noise.p1,
        };
        if fires {
            return Some(i);
        }
    }
    None
}

/// Apply a circuit with full noise sampling on every gate.
pub(crate) fn apply_circuit_noisy(
    state: &mut DenseState,
    c: &Circuit,
    noise: &NoiseModel,
    rng: &mut ChaCha12Rng,
) {
    let mut engine = FusedEngine::new(c.n_qubits());
    for g in c.gates() {
        engine.gate(state, g, Some((noise, rng)));
    }
    engine.flush_all(state);
}

/// Apply a circuit whose first noise event is already known to be at gate
/// `first` (as found by [`scan_first_event`]): the prefix applies cleanly,
/// the event's Pauli is drawn here, and the tail samples noise normally.
pub(crate) fn apply_circuit_with_event(
    state: &mut DenseState,
    c: &Circuit,
    noise: &NoiseModel,
    rng: &mut ChaCha12Rng,
    first: usize,
) {
    let mut engine = FusedEngine::new(c.n_qubits());
    for (i, g) in c.gates().iter().enumerate() {
        if i < first {
            engine.gate(state, g, None);
        } else if i == first {
            engine.gate(state, g, None);
            inject_event(&mut engine, g, rng);
        } else {
            engine.gate(state, g, Some((noise, rng)));
        }
    }
    engine.flush_all(state);
}

/// Result of a fast-forwarded trajectory: most trajectories at realistic
/// error rates see no event and borrow the cached noiseless state.
pub enum TrajectoryOutcome<'a> {
    Clean(&'a DenseState),
    Noisy(DenseState),
}

impl TrajectoryOutcome<'_> {
    pub fn state(&self) -> &DenseState {
        match self {
            TrajectoryOutcome::Clean(s) => s,
            TrajectoryOutcome::Noisy(s) => s,
        }
    }

    pub fn into_owned(self) -> DenseState {
        match self {
            TrajectoryOutcome::Clean(s) => s.clone(),
            TrajectoryOutcome::Noisy(s) => s,
        }
    }
}

/// Trajectory runner for folded circuits that skips the noiseless prefix.
///
/// Between noise events the folded circuit `U (U^-1 U)^n` only ever visits
/// two states, `|0...0>` and `U|0...0>`, so a trajectory can fast-forward to
/// the segment containing its first noise event and evolve from the cached
/// boundary state. The skipped prefix differs from literal evolution only by
/// accumulated roundoff (~1e-13) and a global phase.
pub struct FoldedTrajectoryRunner {
    segments: Vec<Circuit>,
    noise: NoiseModel,
    boundary_zero: DenseState,
    /// `U|0...0>`, which is also the final state of an event-free trajectory.
    boundary_psi: DenseState,
}

impl FoldedTrajectoryRunner {
    pub fn new(folded: &FoldedCircuit, noise: NoiseModel) -> Result<Self> {
        check_cap(folded.n_qubits(), DENSE_DEFAULT_CAP)?;
        noise.validate()?;
        Ok(Self {
            segments: folded.segments().cloned().collect(),
            noise,
            boundary_zero: DenseState::zero_state(folded.n_qubits()),
            boundary_psi: run_exact(folded.base())?,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.boundary_psi.n_qubits()
    }

    /// The event-free final state `U|0...0>`.
    pub fn clean_state(&self) -> &DenseState {
        &self.boundary_psi
    }

    /// Final state of one trajectory, deterministic in `(seed, index)`.
    pub fn trajectory_outcome(&self, seed: u64, index: u64) -> TrajectoryOutcome<'_> {
        if self.noise.gates_are_exact() {
            return TrajectoryOutcome::Clean(&self.boundary_psi);
        }
        let mut rng = stream_rng(seed, index);
        let mut first: Option<(usize, usize)> = None;
        'scan: for (si, seg) in self.segments.iter().enumerate() {
            if let Some(gi) = scan_first_event(seg.gates(), &self.noise, &mut rng) {
                first = Some((si, gi));
                break 'scan;
            }
        }
        let Some((first_seg, first_gate)) = first else {
            return TrajectoryOutcome::Clean(&self.boundary_psi);
        };

        // The noiseless state before segment k alternates |0...0> (even k)
        // and psi (odd k).
        let mut state = if first_seg % 2 == 0 {
            self.boundary_zero.clone()
        } else {
            self.boundary_psi.clone()
        };
        apply_circuit_with_event(
            &mut state,
            &self.segments[first_seg],
            &self.noise,
            &mut rng,
            first_gate,
        );
        for seg in &self.segments[first_seg + 1..] {
            apply_circuit_noisy(&mut state, seg, &self.noise, &mut rng);
        }
        TrajectoryOutcome::Noisy(state)
    }

    /// Owned-state convenience wrapper around [`Self::trajectory_outcome`].
    pub fn trajectory(&self, seed: u64, index: u64) -> DenseState {
        self.trajectory_outcome(seed, index).into_owned()
    }
}

/// Sum of `jx<XX> + jy<YY> + jz<ZZ>` over `bonds`.
pub fn expectation(state: &DenseState, bonds: &[BondTerm]) -> f64 {
    let amps = state.amplitudes();
    let mut total = 0.0;
    for bond in bonds {
        let (jx, jy, jz) = bond.coupling;
        let ma = 1usize << bond.site_a;
        let mb = 1usize << bond.site_b;
        let mask = ma | mb;
        let mut zz = 0.0;
        let mut hop_opp = 0.0; // <01|.|10> sector, coefficient jx + jy
        let mut hop_same = 0.0; // <00|.|11> sector, coefficient jx - jy
        for (i, a) in amps.iter().enumerate() {
            let za = i & ma == 0;
            let zb = i & mb == 0;
            let p = a.norm_sqr();
            zz += if za == zb { p } else { -p };
            if za && !zb {
                hop_opp += (a.conj() * amps[i ^ mask]).re;
            } else if za && zb {
                hop_same += (a.conj() * amps[i ^ mask]).re;
            }
        }
        total += jz * zz + 2.0 * (jx + jy) * hop_opp + 2.0 * (jx - jy) * hop_same;
    }
    total
}

/// Overlap magnitude `|<a|b>|`.
pub fn fidelity(a: &DenseState, b: &DenseState) -> Result<f64> {
    Ok(a.inner(b)?.norm())
}

/// Bitstring outcomes with counts, as produced by [`sample`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotRecord {
    pub n_qubits: usize,
    pub shots: u64,
    pub seed: u64,
    /// Outcome bit pattern (site `i` = bit `i`) to count.
    pub counts: BTreeMap<u64, u64>,
}

impl ShotRecord {
    /// Render a bit pattern with site 0 leftmost.
    pub fn bitstring(&self, pattern: u64) -> String {
        render_bits(pattern, self.n_qubits)
    }

    /// Iterate `(pattern, count)` pairs in ascending pattern order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&p, &c)| (p, c))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }
}

fn render_bits(pattern: u64, n: usize) -> String {
    (0..n)
        .map(|q| if pattern >> q & 1 == 0 { '0' } else { '1' })
        .collect()
}

fn parse_bits(s: &str) -> Option<u64> {
    let mut pattern = 0u64;
    for (q, ch) in s.chars().enumerate() {
        match ch {
            '0' => {}
            '1' => pattern |= 1u64 << q,
            _ => return None,
        }
    }
    Some(pattern)
}

impl Serialize for ShotRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr {
            n_qubits: usize,
            shots: u64,
            seed: u64,
            counts: BTreeMap<String, u64>,
        }
        let repr = Repr {
            n_qubits: self.n_qubits,
            shots: self.shots,
            seed: self.seed,
            counts: self
                .counts
                .iter()
                .map(|(&p, &c)| (render_bits(p, self.n_qubits), c))
                .collect(),
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ShotRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            n_qubits: usize,
            shots: u64,
            seed: u64,
            counts: BTreeMap<String, u64>,
        }
        let repr = Repr::deserialize(deserializer)?;
        let mut counts = BTreeMap::new();
        for (k, v) in repr.counts {
            let p = parse_bits(&k)
                .ok_or_else(|| D::Error::custom(format!("bad bitstring key {k:?}")))?;
            counts.insert(p, v);
        }
        Ok(ShotRecord {
            n_qubits: repr.n_qubits,
            shots: repr.shots,
            seed: repr.seed,
            counts,
        })
    }
}

/// Draw `shots` computational-basis outcomes from `state`, then flip each
/// bit independently per its readout confusion. Deterministic in `seed`.
pub fn sample(state: &DenseState, noise: &NoiseModel, shots: u64, seed: u64) -> Result<ShotRecord> {
    if shots == 0 {
        return Err(Error::Argument("sampling requires at least one shot".into()));
    }
    noise.validate()?;
    let mut rng = stream_rng(seed, u64::MAX);
    let mut record = sample_with_rng(state, noise, shots, &mut rng);
    record.seed = seed;
    Ok(record)
}

/// Cumulative measurement distribution of a state.
pub(crate) fn cumulative_probabilities(state: &DenseState) -> Vec<f64> {
    let mut cumulative = Vec::with_capacity(state.amps.len());
    let mut acc = 0.0;
    for a in &state.amps {
        acc += a.norm_sqr();
        cumulative.push(acc);
    }
    cumulative
}

/// Draw shots from a precomputed cumulative distribution, flipping bits per
/// confusion, accumulating into `counts`.
pub(crate) fn draw_into(
    cumulative: &[f64],
    confusions: &[Confusion],
    any_readout: bool,
    shots: u64,
    rng: &mut ChaCha12Rng,
    counts: &mut BTreeMap<u64, u64>,
) {
    let total = *cumulative.last().expect("non-empty distribution");
    for _ in 0..shots {
        let r = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let mut outcome = idx as u64;
        if any_readout {
            for (q, conf) in confusions.iter().enumerate() {
                let bit = outcome >> q & 1;
                let flip_p = if bit == 0 { conf.p10 } else { conf.p01 };
                if flip_p > 0.0 && rng.random::<f64>() < flip_p {
                    outcome ^= 1u64 << q;
                }
            }
        }
        *counts.entry(outcome).or_insert(0) += 1;
    }
}

/// Sampling core reused by samplers that manage their own RNG streams.
pub(crate) fn sample_with_rng(
    state: &DenseState,
    noise: &NoiseModel,
    shots: u64,
    rng: &mut ChaCha12Rng,
) -> ShotRecord {
    let n = state.n_qubits();
    let cumulative = cumulative_probabilities(state);
    let confusions: Vec<Confusion> = (0..n).map(|q| noise.confusion_for(q)).collect();
    let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
    draw_into(
        &cumulative,
        &confusions,
        noise.has_readout_noise(),
        shots,
        rng,
        &mut counts,
    );
    ShotRecord {
        n_qubits: n,
        shots,
        seed: 0,
        counts,
    }
}

/// Exact two-site reduced density matrix of sites `(a, b)`, in the basis
/// `|s_a s_b>` with row index `2 s_a + s_b`.
pub fn reduced_pair_density(state: &DenseState, a: usize, b: usize) -> nalgebra::Matrix4<C64> {
    let ma = 1usize << a;
    let mb = 1usize << b;
    let amps = state.amplitudes();
    let mut rho = nalgebra::Matrix4::<C64>::zeros();
    for (i, amp) in amps.iter().enumerate() {
        if amp.norm_sqr() == 0.0 {
            continue;
        }
        let r = ((i & ma != 0) as usize) * 2 + (i & mb != 0) as usize;
        let rest = i & !(ma | mb);
        for rp in 0..4 {
            let j = rest | if rp & 2 != 0 { ma } else { 0 } | if rp & 1 != 0 { mb } else { 0 };
            rho[(r, rp)] += amp * amps[j].conj();
        }
    }
    rho
}

/// Dense unitary of a small circuit (for verification; `n <= 10`).
pub fn circuit_unitary(c: &Circuit) -> Result<nalgebra::DMatrix<C64>> {
    let n = c.n_qubits();
    if n > 10 {
        return Err(Error::Capability(
            "circuit_unitary is intended for small circuits (n <= 10)".into(),
        ));
    }
    let dim = 1usize << n;
    let mut u = nalgebra::DMatrix::<C64>::zeros(dim, dim);
    for col in 0..dim {
        let mut amps = vec![C64::new(0.0, 0.0); dim];
        amps[col] = C64::new(1.0, 0.0);
        let mut state = DenseState { n_qubits: n, amps };
        apply_exact(&mut state, c);
        for row in 0..dim {
            u[(row, col)] = state.amps[row];
        }
    }
    Ok(u)
}

/// Frobenius distance between operators minimized over a global phase.
pub fn operator_distance_mod_phase(
    a: &nalgebra::DMatrix<C64>,
    b: &nalgebra::DMatrix<C64>,
) -> f64 {
    let tr: C64 = (b.adjoint() * a).trace();
    let phase = if tr.norm() > 1e-300 {
        tr / tr.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    (a - b * phase).norm()
}

/// Convenience: the singlet-product amplitudes for tests and references.
pub fn singlet_product_state(n_sites: usize) -> Result<DenseState> {
    let c = crate::circuits::singlet_init_circuit(n_sites)?;
    run_exact(&c)
}

#[allow(dead_code)]
fn unused_sqrt_half() -> f64 {
    FRAC_1_SQRT_2
}
