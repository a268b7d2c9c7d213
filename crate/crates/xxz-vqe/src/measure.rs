//! Energy-estimation protocols: Bell-basis readout on parallel bond groups,
//! XYZ correlator measurement, and pairwise state tomography, plus the
//! two-qubit concurrence.
//!
//! Protocols consume a [`StateSource`], which produces sampled counts for
//! the prepared state followed by a measurement suffix. Sources exist for
//! the dense trajectory backend (gate noise plus readout) and for the MPS
//! backend (noiseless gates, optional readout confusion), so the same
//! protocol code drives both.

use crate::circuits::{
    self, Circuit, FoldedCircuit, MeasurementBasis, NativeGate, Parity, PauliBasis,
};
use crate::dense::{self, Confusion, DenseState, FoldedTrajectoryRunner, NoiseModel, ShotRecord};
use crate::model::{self, ChainSpec};
use crate::mps::{self, MpsState};
use crate::{C64, Error, Result};
use nalgebra::{Matrix2, Matrix4};
use serde::Serialize;
use std::collections::BTreeMap;
use std::collections::HashMap;

/// Produces measurement counts for "prepared state, then `suffix`, then
/// computational readout". Implementations manage their own noise and RNG
/// streams; repeated calls advance deterministically from the seed.
pub trait StateSource {
    fn n_qubits(&self) -> usize;
    fn counts(&mut self, suffix: &Circuit, shots: u64) -> Result<ShotRecord>;
}

// Distinct stream domains for suffix noise and shot sampling.
const SUFFIX_SALT: u64 = 0x51ff_1c5a_17e0_0001;
const SAMPLE_SALT: u64 = 0x5a3b_1e5a_3b1e_0002;

/// Default number of noise trajectories a [`DenseSource`] spreads its shots
/// over per call.
pub const DEFAULT_TRAJECTORIES: u64 = 96;

/// Dense-backend source: stochastic Pauli trajectories of a (possibly
/// folded) circuit, shots split across trajectories, readout confusion at
/// sampling time.
pub struct DenseSource {
    runner: FoldedTrajectoryRunner,
    noise: NoiseModel,
    seed: u64,
    trajectories: u64,
    calls: u64,
    confusions: Vec<Confusion>,
    any_readout: bool,
    /// Cumulative distribution of `suffix(psi)` for event-free trajectories,
    /// keyed by the suffix's text form.
    clean_cache: HashMap<String, Vec<f64>>,
}

impl DenseSource {
    pub fn from_folded(folded: &FoldedCircuit, noise: NoiseModel, seed: u64) -> Result<Self> {
        noise.validate()?;
        let confusions = (0..folded.n_qubits())
            .map(|q| noise.confusion_for(q))
            .collect();
        let any_readout = noise.has_readout_noise();
        Ok(Self {
            runner: FoldedTrajectoryRunner::new(folded, noise.clone())?,
            noise,
            seed,
            trajectories: DEFAULT_TRAJECTORIES,
            calls: 0,
            confusions,
            any_readout,
            clean_cache: HashMap::new(),
        })
    }

    pub fn from_circuit(c: &Circuit, noise: NoiseModel, seed: u64) -> Result<Self> {
        Self::from_folded(&circuits::fold(c, 0), noise, seed)
    }

    /// Shots are split evenly over this many noise trajectories (capped by
    /// the shot count). Ignored when gates are exact.
    pub fn with_trajectories(mut self, trajectories: u64) -> Self {
        self.trajectories = trajectories.max(1);
        self
    }
}

impl StateSource for DenseSource {
    fn n_qubits(&self) -> usize {
        self.runner.n_qubits()
    }

    fn counts(&mut self, suffix: &Circuit, shots: u64) -> Result<ShotRecord> {
        if shots == 0 {
            return Err(Error::Argument("requested zero shots".into()));
        }
        if suffix.n_qubits() != self.n_qubits() {
            return Err(Error::Dimension("suffix qubit count mismatch".into()));
        }
        let call = self.calls;
        self.calls += 1;
        let trajectories = if self.noise.gates_are_exact() {
            1
        } else {
            self.trajectories.min(shots)
        };
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for k in 0..trajectories {
            let stream = (call << 32) | k;
            let batch = shots / trajectories + u64::from(k < shots % trajectories);
            if batch == 0 {
                continue;
            }
            let mut sample_rng = dense::stream_rng(self.seed ^ SAMPLE_SALT, stream);
            let outcome = self.runner.trajectory_outcome(self.seed, stream);
            let mut suffix_rng = dense::stream_rng(self.seed ^ SUFFIX_SALT, stream);
            match outcome {
                dense::TrajectoryOutcome::Clean(psi) => {
                    let event = if self.noise.gates_are_exact() {
                        None
                    } else {
                        dense::scan_first_event(suffix.gates(), &self.noise, &mut suffix_rng)
                    };
                    match event {
                        None => {
                            // Fully clean: sample from the cached distribution.
                            let key = suffix.to_text();
                            if !self.clean_cache.contains_key(&key) {
                                let mut final_state = psi.clone();
                                dense::apply_exact(&mut final_state, suffix);
                                self.clean_cache
                                    .insert(key.clone(), dense::cumulative_probabilities(&final_state));
                            }
                            let cumulative = &self.clean_cache[&key];
                            dense::draw_into(
                                cumulative,
                                &self.confusions,
                                self.any_readout,
                                batch,
                                &mut sample_rng,
                                &mut counts,
                            );
                        }
                        Some(gate_idx) => {
                            let mut state = psi.clone();
                            dense::apply_circuit_with_event(
                                &mut state,
                                suffix,
                                &self.noise,
                                &mut suffix_rng,
                                gate_idx,
                            );
                            let rec =
                                dense::sample_with_rng(&state, &self.noise, batch, &mut sample_rng);
                            merge_counts(&mut counts, &rec);
                        }
                    }
                }
                dense::TrajectoryOutcome::Noisy(mut state) => {
                    dense::apply_circuit_noisy(&mut state, suffix, &self.noise, &mut suffix_rng);
                    let rec = dense::sample_with_rng(&state, &self.noise, batch, &mut sample_rng);
                    merge_counts(&mut counts, &rec);
                }
            }
        }
        Ok(ShotRecord {
            n_qubits: self.n_qubits(),
            shots,
            seed: self.seed,
            counts,
        })
    }
}

fn merge_counts(into: &mut BTreeMap<u64, u64>, rec: &ShotRecord) {
    for (pattern, count) in rec.iter() {
        *into.entry(pattern).or_insert(0) += count;
    }
}

/// MPS-backend source: noiseless gate evolution (suffix applied to a copy of
/// the base state), shot sampling with optional readout confusion.
pub struct MpsSource {
    base: MpsState,
    noise: NoiseModel,
    seed: u64,
    calls: u64,
}

impl MpsSource {
    /// `noise` may only carry readout confusion; gate noise at MPS scale is
    /// out of scope and rejected.
    pub fn new(base: MpsState, noise: NoiseModel, seed: u64) -> Result<Self> {
        noise.validate()?;
        if !noise.gates_are_exact() {
            return Err(Error::Capability(
                "MPS sampling models readout confusion only; gate noise requires the dense \
                 backend or the synthetic folded source"
                    .into(),
            ));
        }
        Ok(Self {
            base,
            noise,
            seed,
            calls: 0,
        })
    }
}

/// 4x4 CNOT on an adjacent pair, in the `|s_first s_second>` basis.
fn cnot_matrix(control_is_first: bool) -> Matrix4<C64> {
    let one = C64::new(1.0, 0.0);
    let mut m = Matrix4::<C64>::zeros();
    if control_is_first {
        m[(0, 0)] = one;
        m[(1, 1)] = one;
        m[(3, 2)] = one;
        m[(2, 3)] = one;
    } else {
        m[(0, 0)] = one;
        m[(3, 1)] = one;
        m[(2, 2)] = one;
        m[(1, 3)] = one;
    }
    m
}

fn single_qubit_matrix(g: &NativeGate) -> Option<(usize, Matrix2<C64>)> {
    let z = C64::new(0.0, 0.0);
    match *g {
        NativeGate::Rz { qubit, angle } => Some((
            qubit,
            Matrix2::new(
                C64::from_polar(1.0, -angle / 2.0),
                z,
                z,
                C64::from_polar(1.0, angle / 2.0),
            ),
        )),
        NativeGate::Sx { qubit } => Some((
            qubit,
            Matrix2::new(
                C64::new(0.5, 0.5),
                C64::new(0.5, -0.5),
                C64::new(0.5, -0.5),
                C64::new(0.5, 0.5),
            ),
        )),
        NativeGate::X { qubit } => Some((
            qubit,
            Matrix2::new(z, C64::new(1.0, 0.0), C64::new(1.0, 0.0), z),
        )),
        NativeGate::Cnot { .. } => None,
    }
}

impl StateSource for MpsSource {
    fn n_qubits(&self) -> usize {
        self.base.n_sites()
    }

    fn counts(&mut self, suffix: &Circuit, shots: u64) -> Result<ShotRecord> {
        if shots == 0 {
            return Err(Error::Argument("requested zero shots".into()));
        }
        let call = self.calls;
        self.calls += 1;
        let mut state = self.base.clone();
        for g in suffix.gates() {
            match single_qubit_matrix(g) {
                Some((q, m)) => mps::apply_single_qubit(&mut state, q, &m)?,
                None => {
                    let NativeGate::Cnot { control, target } = *g else {
                        unreachable!()
                    };
                    let (a, b) = (control.min(target), control.max(target));
                    if b != a + 1 {
                        return Err(Error::Argument(format!(
                            "suffix CNOT ({control}, {target}) is not nearest-neighbor in the \
                             MPS ordering"
                        )));
                    }
                    mps::apply_gate(&mut state, &cnot_matrix(control < target), (a, b))?;
                }
            }
        }
        let mut rec = mps::sample_mps(&state, &self.noise, shots, self.seed ^ (call << 32))?;
        rec.seed = self.seed;
        Ok(rec)
    }
}

// ---------------------------------------------------------------------------
// Bell-basis energy estimation
// ---------------------------------------------------------------------------

/// Outcome index order for Bell-basis measurement: after the CNOT+H readout,
/// the bit pair `(b_first, b_second)` maps to
/// `00 -> PhiPlus, 10 -> PhiMinus, 01 -> PsiPlus, 11 -> PsiMinus`.
pub const BELL_OUTCOME_NAMES: [&str; 4] = ["phi_plus", "phi_minus", "psi_plus", "psi_minus"];

#[inline]
fn bell_code(bit_first: u64, bit_second: u64) -> usize {
    (bit_first + 2 * bit_second) as usize
}

/// Per-outcome bond energies at anisotropy `delta`, ordered as
/// [`BELL_OUTCOME_NAMES`]: `Phi+- -> delta`, `Psi+ -> 2 - delta`,
/// `Psi- -> -2 - delta`.
pub fn bell_outcome_energies(delta: f64) -> [f64; 4] {
    [delta, delta, 2.0 - delta, -2.0 - delta]
}

/// Per-bond Bell-outcome counts for one parity group.
#[derive(Debug, Clone, Serialize)]
pub struct BellHistogram {
    pub parity: Parity,
    /// Measured qubit pairs, in bond order.
    pub pairs: Vec<(usize, usize)>,
    /// `counts[bond][outcome]` over [`BELL_OUTCOME_NAMES`].
    pub counts: Vec<[u64; 4]>,
    pub shots: u64,
}

impl BellHistogram {
    /// Empirical outcome distribution on bond `k`.
    pub fn distribution(&self, k: usize) -> [f64; 4] {
        let total: u64 = self.counts[k].iter().sum();
        let mut p = [0.0; 4];
        if total > 0 {
            for (i, &c) in self.counts[k].iter().enumerate() {
                p[i] = c as f64 / total as f64;
            }
        }
        p
    }
}

/// Measure one parity group in the Bell basis.
pub fn bell_histogram(
    source: &mut dyn StateSource,
    spec: &ChainSpec,
    parity: Parity,
    shots: u64,
) -> Result<BellHistogram> {
    let pairs = circuits::measured_pairs(spec, parity)?;
    let basis = match parity {
        Parity::Odd => MeasurementBasis::BellOdd,
        Parity::Even => MeasurementBasis::BellEven,
    };
    let suffix = circuits::append_measurement_basis(&Circuit::new(spec.n_sites()), spec, basis)?;
    let record = source.counts(&suffix, shots)?;
    let mut counts = vec![[0u64; 4]; pairs.len()];
    for (pattern, count) in record.iter() {
        for (k, &(a, b)) in pairs.iter().enumerate() {
            let code = bell_code(pattern >> a & 1, pattern >> b & 1);
            counts[k][code] += count;
        }
    }
    Ok(BellHistogram {
        parity,
        pairs,
        counts,
        shots,
    })
}

/// Energy and stderr from per-bond Bell histograms: each bond contributes
/// the outcome-weighted energy; binomial variances add in quadrature.
pub fn energy_from_bell_histograms(histograms: &[&BellHistogram], delta: f64) -> (f64, f64) {
    let energies = bell_outcome_energies(delta);
    let mut total = 0.0;
    let mut variance = 0.0;
    for hist in histograms {
        for k in 0..hist.pairs.len() {
            let p = hist.distribution(k);
            let mean: f64 = p.iter().zip(&energies).map(|(pi, ei)| pi * ei).sum();
            let second: f64 = p.iter().zip(&energies).map(|(pi, ei)| pi * ei * ei).sum();
            total += mean;
            if hist.shots > 0 {
                variance += (second - mean * mean).max(0.0) / hist.shots as f64;
            }
        }
    }
    (total, variance.sqrt())
}

/// Bell-measurement energy estimate: two settings (odd and even bond
/// groups), `shots` each.
pub fn energy_bell(
    source: &mut dyn StateSource,
    spec: &ChainSpec,
    shots: u64,
) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::Argument("energy_bell requires shots >= 1".into()));
    }
    let odd = bell_histogram(source, spec, Parity::Odd, shots)?;
    let even = bell_histogram(source, spec, Parity::Even, shots)?;
    Ok(energy_from_bell_histograms(&[&odd, &even], spec.delta()))
}

// ---------------------------------------------------------------------------
// XYZ energy estimation
// ---------------------------------------------------------------------------

#[inline]
fn sign_of(pattern: u64, q: usize) -> f64 {
    if pattern >> q & 1 == 0 { 1.0 } else { -1.0 }
}

/// XYZ energy estimate: three settings (all qubits in the X, Y, Z basis),
/// `shots` each; per bond the `<sigma sigma>` correlators are averaged from
/// the +-1 outcome products. Works for any geometry.
pub fn energy_xyz(
    source: &mut dyn StateSource,
    spec: &ChainSpec,
    shots: u64,
) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::Argument("energy_xyz requires shots >= 1".into()));
    }
    let bonds = model::build_hamiltonian(spec);
    let settings = [
        MeasurementBasis::XBasis,
        MeasurementBasis::YBasis,
        MeasurementBasis::ZBasis,
    ];
    let mut total = 0.0;
    let mut variance = 0.0;
    for (axis, basis) in settings.into_iter().enumerate() {
        let suffix =
            circuits::append_measurement_basis(&Circuit::new(spec.n_sites()), spec, basis)?;
        let record = source.counts(&suffix, shots)?;
        for bond in &bonds {
            let coupling = [bond.coupling.0, bond.coupling.1, bond.coupling.2][axis];
            if coupling == 0.0 {
                continue;
            }
            let mut mean = 0.0;
            for (pattern, count) in record.iter() {
                mean += sign_of(pattern, bond.site_a) * sign_of(pattern, bond.site_b)
                    * count as f64;
            }
            mean /= shots as f64;
            total += coupling * mean;
            variance += coupling * coupling * (1.0 - mean * mean).max(0.0) / shots as f64;
        }
    }
    Ok((total, variance.sqrt()))
}

// ---------------------------------------------------------------------------
// Pairwise tomography
// ---------------------------------------------------------------------------

/// Reconstructed two-qubit density matrix for one bond, in the
/// `|s_a s_b>` basis (row `2 s_a + s_b`).
#[derive(Debug, Clone)]
pub struct PairDensityMatrix {
    pub pair: (usize, usize),
    pub matrix: Matrix4<C64>,
}

/// Result of a pairwise tomography pass over both parities.
#[derive(Debug, Clone)]
pub struct Tomography {
    pub pairs: Vec<PairDensityMatrix>,
    /// Set when the shot budget is low enough that linear inversion is
    /// poorly conditioned (fewer than 1000 shots per setting).
    pub low_statistics: bool,
}

fn pauli2(basis: PauliBasis) -> Matrix2<C64> {
    let z = C64::new(0.0, 0.0);
    match basis {
        PauliBasis::X => Matrix2::new(z, C64::new(1.0, 0.0), C64::new(1.0, 0.0), z),
        PauliBasis::Y => Matrix2::new(z, C64::new(0.0, -1.0), C64::new(0.0, 1.0), z),
        PauliBasis::Z => Matrix2::new(C64::new(1.0, 0.0), z, z, C64::new(-1.0, 0.0)),
    }
}

const BASES: [PauliBasis; 3] = [PauliBasis::X, PauliBasis::Y, PauliBasis::Z];

/// Nearest-PSD projection by eigenvalue clipping plus trace renormalization.
pub fn project_to_physical(rho: &Matrix4<C64>) -> Matrix4<C64> {
    let herm = (rho + rho.adjoint()).scale(0.5);
    let eig = herm.symmetric_eigen();
    let mut clipped = Matrix4::<C64>::zeros();
    let mut trace = 0.0;
    for k in 0..4 {
        let lam = eig.eigenvalues[k].max(0.0);
        trace += lam;
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            for r in 0..4 {
                for c in 0..4 {
                    clipped[(r, c)] += C64::new(lam, 0.0) * v[r] * v[c].conj();
                }
            }
        }
    }
    if trace <= f64::EPSILON {
        return Matrix4::identity().scale(0.25);
    }
    clipped.scale(1.0 / trace)
}

/// Parallel pairwise tomography: 9 Pauli settings per parity (18 circuits
/// total), linear-inversion reconstruction per bond, then projection to the
/// nearest PSD trace-one matrix.
pub fn pairwise_tomography(
    source: &mut dyn StateSource,
    spec: &ChainSpec,
    shots: u64,
) -> Result<Tomography> {
    if shots == 0 {
        return Err(Error::Argument("tomography requires shots >= 1".into()));
    }
    let mut out = Vec::new();
    for parity in [Parity::Odd, Parity::Even] {
        let pairs = circuits::measured_pairs(spec, parity)?;
        let n_pairs = pairs.len();
        // corr[pair][i][j], marg_a[pair][i] (averaged over the 3 j-settings),
        // marg_b[pair][j].
        let mut corr = vec![[[0.0f64; 3]; 3]; n_pairs];
        let mut marg_a = vec![[0.0f64; 3]; n_pairs];
        let mut marg_b = vec![[0.0f64; 3]; n_pairs];
        for (i, &ba) in BASES.iter().enumerate() {
            for (j, &bb) in BASES.iter().enumerate() {
                let suffix = circuits::append_measurement_basis(
                    &Circuit::new(spec.n_sites()),
                    spec,
                    MeasurementBasis::TomoSetting {
                        parity,
                        basis_a: ba,
                        basis_b: bb,
                    },
                )?;
                let record = source.counts(&suffix, shots)?;
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    let mut m_ab = 0.0;
                    let mut m_a = 0.0;
                    let mut m_b = 0.0;
                    for (pattern, count) in record.iter() {
                        let za = sign_of(pattern, a);
                        let zb = sign_of(pattern, b);
                        let w = count as f64;
                        m_ab += za * zb * w;
                        m_a += za * w;
                        m_b += zb * w;
                    }
                    let s = shots as f64;
                    corr[k][i][j] = m_ab / s;
                    marg_a[k][i] += m_a / s / 3.0;
                    marg_b[k][j] += m_b / s / 3.0;
                }
            }
        }
        for (k, &pair) in pairs.iter().enumerate() {
            let mut rho = Matrix4::<C64>::identity().scale(0.25);
            for (i, &ba) in BASES.iter().enumerate() {
                let pa = pauli2(ba).kronecker(&Matrix2::identity());
                rho += pa.scale(0.25 * marg_a[k][i]);
                let pb = Matrix2::identity().kronecker(&pauli2(ba));
                rho += pb.scale(0.25 * marg_b[k][i]);
                for (j, &bb) in BASES.iter().enumerate() {
                    let pab = pauli2(ba).kronecker(&pauli2(bb));
                    rho += pab.scale(0.25 * corr[k][i][j]);
                }
            }
            out.push(PairDensityMatrix {
                pair,
                matrix: project_to_physical(&rho),
            });
        }
    }
    Ok(Tomography {
        pairs: out,
        low_statistics: shots < 1000,
    })
}

/// Energy from the tomography correlators (18 settings), with binomial
/// error propagation on the diagonal `<sigma_a sigma_a>` terms.
pub fn energy_tomography(
    source: &mut dyn StateSource,
    spec: &ChainSpec,
    shots: u64,
) -> Result<(f64, f64)> {
    if shots == 0 {
        return Err(Error::Argument("tomography requires shots >= 1".into()));
    }
    let delta = spec.delta();
    let couplings = [1.0, 1.0, delta];
    let mut total = 0.0;
    let mut variance = 0.0;
    for parity in [Parity::Odd, Parity::Even] {
        let pairs = circuits::measured_pairs(spec, parity)?;
        for (axis, &basis) in BASES.iter().enumerate() {
            // Only the diagonal settings enter the energy; the off-diagonal
            // settings exist for full reconstruction.
            let suffix = circuits::append_measurement_basis(
                &Circuit::new(spec.n_sites()),
                spec,
                MeasurementBasis::TomoSetting {
                    parity,
                    basis_a: basis,
                    basis_b: basis,
                },
            )?;
            let record = source.counts(&suffix, shots)?;
            for &(a, b) in &pairs {
                let mut mean = 0.0;
                for (pattern, count) in record.iter() {
                    mean += sign_of(pattern, a) * sign_of(pattern, b) * count as f64;
                }
                mean /= shots as f64;
                total += couplings[axis] * mean;
                variance +=
                    couplings[axis] * couplings[axis] * (1.0 - mean * mean).max(0.0)
                        / shots as f64;
            }
        }
    }
    Ok((total, variance.sqrt()))
}

/// Energy implied by reconstructed pair density matrices:
/// `sum_bonds Tr(rho_bond h_bond)`.
pub fn tomography_energy_from_pairs(tomography: &Tomography, spec: &ChainSpec) -> f64 {
    let delta = spec.delta();
    let h = crate::linalg::xxz_bond_matrix(1.0, 1.0, delta);
    tomography
        .pairs
        .iter()
        .map(|p| (h * p.matrix).trace().re)
        .sum()
}

// ---------------------------------------------------------------------------
// Concurrence
// ---------------------------------------------------------------------------

/// Wootters' concurrence of a two-qubit density matrix:
/// `max(0, l1 - l2 - l3 - l4)` with `l_i` the descending square roots of the
/// eigenvalues of `rho (Y x Y) conj(rho) (Y x Y)`.
pub fn concurrence(rho: &Matrix4<C64>) -> Result<f64> {
    // Validate: Hermitian, unit trace, PSD.
    let herm_dev = (rho - rho.adjoint()).norm();
    if herm_dev > 1e-8 {
        return Err(Error::Argument(format!(
            "density matrix not Hermitian (deviation {herm_dev:.2e})"
        )));
    }
    let trace = rho.trace();
    if (trace.re - 1.0).abs() > 1e-8 || trace.im.abs() > 1e-8 {
        return Err(Error::Argument(format!(
            "density matrix trace {trace} is not 1"
        )));
    }
    let eig = rho.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-8) {
        return Err(Error::Argument("density matrix is not positive semidefinite".into()));
    }
    // sqrt(rho) via the spectral decomposition (clip tiny negatives).
    let mut sqrt_rho = Matrix4::<C64>::zeros();
    for k in 0..4 {
        let lam = eig.eigenvalues[k].max(0.0).sqrt();
        if lam > 0.0 {
            let v = eig.eigenvectors.column(k);
            for r in 0..4 {
                for c in 0..4 {
                    sqrt_rho[(r, c)] += C64::new(lam, 0.0) * v[r] * v[c].conj();
                }
            }
        }
    }
    let yy = pauli2(PauliBasis::Y).kronecker(&pauli2(PauliBasis::Y));
    let rho_tilde = yy * rho.conjugate() * yy;
    let core = sqrt_rho * rho_tilde * sqrt_rho;
    let core = (core + core.adjoint()).scale(0.5);
    let mut lambdas: Vec<f64> = core
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|&m| m.max(0.0).sqrt())
        .collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok((lambdas[0] - lambdas[1] - lambdas[2] - lambdas[3]).max(0.0))
}

/// Exact concurrence profile of a dense state over the chain's bonds.
pub fn concurrence_profile(state: &DenseState, spec: &ChainSpec) -> Result<Vec<(usize, f64)>> {
    let bonds = model::build_hamiltonian(spec);
    let mut out = Vec::with_capacity(bonds.len());
    for (idx, b) in bonds.iter().enumerate() {
        let rho = dense::reduced_pair_density(state, b.site_a, b.site_b);
        out.push((idx, concurrence(&rho)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::AnsatzParams;
    use crate::model::ChainSpec;

    fn noiseless_source(spec: &ChainSpec, params: &AnsatzParams, seed: u64) -> DenseSource {
        let u = circuits::build_ansatz(spec, params).unwrap();
        DenseSource::from_circuit(&u, NoiseModel::noiseless(), seed).unwrap()
    }

    #[test]
    fn bell_energy_of_singlets_is_exact() {
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let c = circuits::singlet_init_circuit(8).unwrap();
        let mut source = DenseSource::from_circuit(&c, NoiseModel::noiseless(), 7).unwrap();
        let (e, _sigma) = energy_bell(&mut source, &spec, 20_000).unwrap();
        // Odd bonds read Psi- deterministically (-3 each); even bonds are
        // uniform over the four outcomes with mean (1 + 1 + 1 - 3)/4 = 0,
        // so the sampled estimate is -12 up to even-bond fluctuations.
        assert!((e - (-12.0)).abs() < 0.15, "E = {e}");
    }

    #[test]
    fn bell_outcome_energy_table() {
        let e = bell_outcome_energies(0.5);
        assert_eq!(e, [0.5, 0.5, 1.5, -2.5]);
    }

    #[test]
    fn zero_state_bell_energy_is_all_phi() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let c = Circuit::new(4);
        let mut source = DenseSource::from_circuit(&c, NoiseModel::noiseless(), 3).unwrap();
        let hist = bell_histogram(&mut source, &spec, Parity::Odd, 4000).unwrap();
        // |0000>: every pair collapses onto Phi+- codes only.
        for k in 0..hist.pairs.len() {
            let d = hist.distribution(k);
            assert!(d[2] == 0.0 && d[3] == 0.0, "Psi weight on |0000>: {d:?}");
            assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
        }
        let (e, _) = energy_bell(&mut source, &spec, 4000).unwrap();
        assert!((e - 3.0).abs() < 1e-9, "E = {e}");
    }

    #[test]
    fn xyz_matches_bell_on_ansatz() {
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.138569, 0.216093);
        let shots = 60_000;
        let mut s1 = noiseless_source(&spec, &params, 11);
        let (e_bell, sig_bell) = energy_bell(&mut s1, &spec, shots).unwrap();
        let mut s2 = noiseless_source(&spec, &params, 12);
        let (e_xyz, sig_xyz) = energy_xyz(&mut s2, &spec, shots).unwrap();
        let combined = (sig_bell * sig_bell + sig_xyz * sig_xyz).sqrt();
        assert!(
            (e_bell - e_xyz).abs() < 3.0 * combined,
            "bell {e_bell}+-{sig_bell} vs xyz {e_xyz}+-{sig_xyz}"
        );
        assert!((e_bell - (-13.299823)).abs() < 4.0 * sig_bell.max(0.01));
    }

    #[test]
    fn singlet_pair_xyz_energy() {
        let spec = ChainSpec::open_chain(2, 0.0).unwrap();
        let c = circuits::singlet_init_circuit(2).unwrap();
        let mut source = DenseSource::from_circuit(&c, NoiseModel::noiseless(), 5).unwrap();
        let (e, _) = energy_xyz(&mut source, &spec, 40_000).unwrap();
        // XX and YY give -1 deterministically in expectation; delta = 0.
        assert!((e - (-2.0)).abs() < 0.05, "E = {e}");
    }

    #[test]
    fn tomography_reconstructs_singlet() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let c = circuits::singlet_init_circuit(4).unwrap();
        let mut source = DenseSource::from_circuit(&c, NoiseModel::noiseless(), 21).unwrap();
        let tomo = pairwise_tomography(&mut source, &spec, 20_000).unwrap();
        assert!(!tomo.low_statistics);
        // First odd pair should be near |Psi-><Psi-|.
        let rho = &tomo.pairs[0];
        assert_eq!(rho.pair, (0, 1));
        assert!((rho.matrix[(1, 1)].re - 0.5).abs() < 0.02);
        assert!((rho.matrix[(1, 2)].re + 0.5).abs() < 0.02);
        let c_val = concurrence(&rho.matrix).unwrap();
        assert!(c_val > 0.95, "concurrence {c_val}");
        // Even pair of the singlet product is maximally mixed.
        let even = tomo.pairs.iter().find(|p| p.pair == (1, 2)).unwrap();
        for r in 0..4 {
            assert!((even.matrix[(r, r)].re - 0.25).abs() < 0.02);
        }
        let c_even = concurrence(&even.matrix).unwrap();
        assert!(c_even < 0.05, "even concurrence {c_even}");
    }

    #[test]
    fn tomography_energy_consistent() {
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.138569, 0.216093);
        let shots = 40_000;
        let mut s1 = noiseless_source(&spec, &params, 31);
        let (e_tomo, sig_tomo) = energy_tomography(&mut s1, &spec, shots).unwrap();
        let mut s2 = noiseless_source(&spec, &params, 32);
        let (e_bell, sig_bell) = energy_bell(&mut s2, &spec, shots).unwrap();
        let combined = (sig_tomo * sig_tomo + sig_bell * sig_bell).sqrt();
        assert!(
            (e_tomo - e_bell).abs() < 3.0 * combined,
            "tomo {e_tomo} vs bell {e_bell} (sigma {combined})"
        );
    }

    #[test]
    fn concurrence_reference_values() {
        // |Psi-><Psi-| -> 1.
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let mut psi = nalgebra::Vector4::<C64>::zeros();
        psi[1] = C64::new(r, 0.0);
        psi[2] = C64::new(-r, 0.0);
        let rho = psi * psi.adjoint();
        assert!((concurrence(&rho).unwrap() - 1.0).abs() < 1e-10);
        // Product state -> 0.
        let mut prod = nalgebra::Vector4::<C64>::zeros();
        prod[0] = C64::new(1.0, 0.0);
        let rho0 = prod * prod.adjoint();
        assert!(concurrence(&rho0).unwrap() < 1e-10);
        // Maximally mixed -> 0.
        let mixed = Matrix4::<C64>::identity().scale(0.25);
        assert!(concurrence(&mixed).unwrap() < 1e-12);
        // Non-PSD rejected.
        let mut bad = Matrix4::<C64>::identity().scale(0.5);
        bad[(3, 3)] = C64::new(-0.5, 0.0);
        assert!(concurrence(&bad).is_err());
    }

    #[test]
    fn concurrence_invariant_under_local_unitaries() {
        use crate::linalg::rxyz_unitary;
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.138569, 0.216093);
        let u = circuits::build_ansatz(&spec, &params).unwrap();
        let state = dense::run_exact(&u).unwrap();
        let rho = dense::reduced_pair_density(&state, 0, 1);
        let base = concurrence(&rho).unwrap();
        // Conjugate by a local (single-qubit x single-qubit) unitary built
        // from RZ/SX products.
        let rz = |t: f64| {
            Matrix2::new(
                C64::from_polar(1.0, -t / 2.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::from_polar(1.0, t / 2.0),
            )
        };
        let sx = Matrix2::new(
            C64::new(0.5, 0.5),
            C64::new(0.5, -0.5),
            C64::new(0.5, -0.5),
            C64::new(0.5, 0.5),
        );
        let ua = rz(0.7) * sx * rz(-1.1);
        let ub = rz(-0.4) * sx * rz(2.2);
        let local = ua.kronecker(&ub);
        let rotated = local * rho * local.adjoint();
        let after = concurrence(&rotated).unwrap();
        assert!((base - after).abs() < 1e-8, "{base} vs {after}");
        let _ = rxyz_unitary(0.0, 0.0, 0.0);
    }

    #[test]
    fn mps_source_agrees_with_dense_source() {
        let spec = ChainSpec::open_chain(10, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.13710, 0.216102);
        let shots = 30_000;
        let mps_state = mps::ansatz_state(&spec, &params, 32).unwrap();
        let mut ms = MpsSource::new(mps_state, NoiseModel::noiseless(), 4).unwrap();
        let (e_mps, sig_mps) = energy_bell(&mut ms, &spec, shots).unwrap();
        let mut ds = noiseless_source(&spec, &params, 4);
        let (e_dense, sig_dense) = energy_bell(&mut ds, &spec, shots).unwrap();
        let combined = (sig_mps * sig_mps + sig_dense * sig_dense).sqrt();
        assert!(
            (e_mps - e_dense).abs() < 3.0 * combined,
            "mps {e_mps} vs dense {e_dense}"
        );
        assert!((e_mps - (-16.719307)).abs() < 4.0 * sig_mps.max(0.01));
    }

    #[test]
    fn shots_zero_rejected() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let c = Circuit::new(4);
        let mut source = DenseSource::from_circuit(&c, NoiseModel::noiseless(), 3).unwrap();
        assert!(energy_bell(&mut source, &spec, 0).is_err());
        assert!(energy_xyz(&mut source, &spec, 0).is_err());
        assert!(pairwise_tomography(&mut source, &spec, 0).is_err());
    }
}
