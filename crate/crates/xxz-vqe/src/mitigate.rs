//! Error-mitigation stack: pairwise readout and Bell-measurement assignment
//! matrices with simplex-constrained inversion, zero-noise extrapolation by
//! circuit folding, weighted exponential fits, reference-state rescaling,
//! and the quantum observable depth.
//!
//! The reference-state correction works off two fitted series
//! `f(m) = a exp(-b m) + c`: one for the ansatz circuit, one for the
//! zero-angle reference whose exact energy is known. The rescale factor `r`
//! solves `a_B r + c_B = E_bell`, and the mitigated ansatz energy is
//! `a_E r + c_E`. Only the decaying amplitude is rescaled; the fitted
//! residual offset `c` is kept free rather than pinned to the fully-mixed
//! energy.

use crate::circuits::{self, AnsatzParams, Circuit, FoldedCircuit, Parity};
use crate::dense::{self, NoiseModel};
use crate::measure::{
    bell_histogram, bell_outcome_energies, BellHistogram, DenseSource, StateSource,
};
use crate::model::{self, ChainSpec};
use crate::mps::MpsState;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, Matrix4};
use rand::RngExt;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// What a 4x4 assignment matrix calibrates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Computational-basis preparation and readout.
    Computational,
    /// Bell-state preparation and Bell-basis readout (captures the readout
    /// circuit's CNOT errors too).
    Bell,
}

/// Column-stochastic response matrix of a qubit pair:
/// `matrix[i][j] = P(outcome i | prepared j)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentMatrix {
    pub matrix: [[f64; 4]; 4],
    pub kind: MatrixKind,
    pub pair: (usize, usize),
}

impl AssignmentMatrix {
    pub fn new(matrix: [[f64; 4]; 4], kind: MatrixKind, pair: (usize, usize)) -> Result<Self> {
        for j in 0..4 {
            let col: f64 = (0..4).map(|i| matrix[i][j]).sum();
            if (col - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "assignment matrix column {j} sums to {col}, not 1"
                )));
            }
            for i in 0..4 {
                if !(0.0..=1.0 + 1e-12).contains(&matrix[i][j]) {
                    return Err(Error::Argument(format!(
                        "assignment matrix entry ({i},{j}) = {} outside [0,1]",
                        matrix[i][j]
                    )));
                }
            }
        }
        Ok(Self { matrix, kind, pair })
    }

    fn as_na(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.matrix[i][j])
    }

    pub fn condition_number(&self) -> f64 {
        let sv = self.as_na().svd(false, false).singular_values;
        let max = sv.iter().cloned().fold(0.0, f64::max);
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 { f64::INFINITY } else { max / min }
    }
}

/// Index of a two-qubit computational state: `2 * bit_first + bit_second`.
fn comp_index(pattern: u64, pair_in_circuit: (usize, usize)) -> usize {
    let (a, b) = pair_in_circuit;
    ((pattern >> a & 1) * 2 + (pattern >> b & 1)) as usize
}

/// Bell-code index after CNOT+H readout: `b_first + 2 * b_second`.
fn bell_index(pattern: u64, pair_in_circuit: (usize, usize)) -> usize {
    let (a, b) = pair_in_circuit;
    ((pattern >> a & 1) + 2 * (pattern >> b & 1)) as usize
}

fn empirical_matrix(
    columns: [[u64; 4]; 4],
    kind: MatrixKind,
    pair: (usize, usize),
) -> Result<AssignmentMatrix> {
    let mut m = [[0.0; 4]; 4];
    for (j, col) in columns.iter().enumerate() {
        let total: u64 = col.iter().sum();
        if total == 0 {
            return Err(Error::Argument(format!("empty calibration column {j}")));
        }
        for i in 0..4 {
            m[i][j] = col[i] as f64 / total as f64;
        }
    }
    AssignmentMatrix::new(m, kind, pair)
}

/// Computational-basis readout calibration for the device pair `pair`:
/// prepare each of the four computational states, measure, and tabulate the
/// outcome distribution per column.
pub fn calibrate_readout(
    pair: (usize, usize),
    shots: u64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<AssignmentMatrix> {
    if shots == 0 {
        return Err(Error::Argument("calibration requires shots >= 1".into()));
    }
    let local = noise.restrict_to_pair(pair);
    let mut columns = [[0u64; 4]; 4];
    for prep in 0..4usize {
        let mut c = Circuit::new(2);
        if prep & 2 != 0 {
            c.x(0);
        }
        if prep & 1 != 0 {
            c.x(1);
        }
        let mut source = DenseSource::from_circuit(&c, local.clone(), seed ^ (prep as u64) << 8)?
            .with_trajectories(shots);
        let record = source.counts(&Circuit::new(2), shots)?;
        for (pattern, count) in record.iter() {
            columns[prep][comp_index(pattern, (0, 1))] += count;
        }
    }
    empirical_matrix(columns, MatrixKind::Computational, pair)
}

/// Bell-state preparation circuit for code `k` in the order
/// `[Phi+, Phi-, Psi+, Psi-]`, on two circuit qubits.
fn bell_prep_circuit(k: usize) -> Circuit {
    let mut c = Circuit::new(2);
    if k == 1 || k == 3 {
        c.x(0);
    }
    if k == 2 || k == 3 {
        c.x(1);
    }
    c.hadamard(0);
    c.cnot(0, 1);
    c
}

/// Bell-measurement calibration: prepare the four Bell states and measure
/// immediately in the Bell basis. The two CNOTs involved put gate error into
/// the matrix, which is the point: inverting it mitigates the readout
/// circuit itself.
pub fn calibrate_bell(
    pair: (usize, usize),
    shots: u64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<AssignmentMatrix> {
    if shots == 0 {
        return Err(Error::Argument("calibration requires shots >= 1".into()));
    }
    let local = noise.restrict_to_pair(pair);
    let mut columns = [[0u64; 4]; 4];
    let mut suffix = Circuit::new(2);
    suffix.cnot(0, 1).hadamard(0);
    for prep in 0..4usize {
        let c = bell_prep_circuit(prep);
        let mut source = DenseSource::from_circuit(&c, local.clone(), seed ^ (prep as u64) << 8)?
            .with_trajectories(shots);
        let record = source.counts(&suffix, shots)?;
        for (pattern, count) in record.iter() {
            columns[prep][bell_index(pattern, (0, 1))] += count;
        }
    }
    empirical_matrix(columns, MatrixKind::Bell, pair)
}

/// Maximum condition number accepted by [`unfold_distribution`].
pub const MAX_CONDITION: f64 = 1e8;

/// Constrained unfolding: the probability vector `p` minimizing
/// `|| M p - measured ||_2` over the simplex (non-negative, sums to one).
///
/// Solved exactly by enumerating supports: for each non-empty subset of
/// outcomes the equality-constrained least-squares stationary point is
/// computed via its KKT system, and the best feasible candidate wins. With
/// four outcomes that is 15 tiny solves.
pub fn unfold_distribution(m: &AssignmentMatrix, measured: [f64; 4]) -> Result<[f64; 4]> {
    let total: f64 = measured.iter().sum();
    if measured.iter().any(|&p| p < -1e-9) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::Argument(format!(
            "measured vector {measured:?} is not a probability distribution"
        )));
    }
    let cond = m.condition_number();
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(Error::IllConditioned { condition: cond });
    }
    let mat = m.as_na();
    Ok(simplex_least_squares(&mat, &measured))
}

fn simplex_least_squares(mat: &Matrix4<f64>, q: &[f64; 4]) -> [f64; 4] {
    let qv = nalgebra::Vector4::from_column_slice(q);
    let mut best: Option<([f64; 4], f64)> = None;
    for support in 1usize..16 {
        let idx: Vec<usize> = (0..4).filter(|i| support >> i & 1 == 1).collect();
        let k = idx.len();
        // KKT system for min ||M_S p - q||^2 s.t. sum(p) = 1:
        // [2 A, 1; 1^T, 0] [p; nu] = [2 b; 1], A = M_S^T M_S, b = M_S^T q.
        let mut sys = DMatrix::<f64>::zeros(k + 1, k + 1);
        let mut rhs = DVector::<f64>::zeros(k + 1);
        for (r, &ir) in idx.iter().enumerate() {
            for (c, &ic) in idx.iter().enumerate() {
                let mut acc = 0.0;
                for row in 0..4 {
                    acc += mat[(row, ir)] * mat[(row, ic)];
                }
                sys[(r, c)] = 2.0 * acc;
            }
            sys[(r, k)] = 1.0;
            sys[(k, r)] = 1.0;
            let mut b = 0.0;
            for row in 0..4 {
                b += mat[(row, ir)] * qv[row];
            }
            rhs[r] = 2.0 * b;
        }
        rhs[k] = 1.0;
        let Some(solution) = sys.lu().solve(&rhs) else {
            continue;
        };
        let mut p = [0.0; 4];
        let mut feasible = true;
        for (r, &ir) in idx.iter().enumerate() {
            let v = solution[r];
            if v < -1e-12 {
                feasible = false;
                break;
            }
            p[ir] = v.max(0.0);
        }
        if !feasible {
            continue;
        }
        // Objective.
        let mut obj = 0.0;
        for row in 0..4 {
            let mut acc = -qv[row];
            for col in 0..4 {
                acc += mat[(row, col)] * p[col];
            }
            obj += acc * acc;
        }
        if best.as_ref().is_none_or(|&(_, b)| obj < b - 1e-15) {
            best = Some((p, obj));
        }
    }
    let (mut p, _) = best.expect("full support always yields a candidate");
    // Exact renormalization against accumulated roundoff.
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        for v in &mut p {
            *v /= s;
        }
    }
    p
}

/// Calibration matrices keyed by qubit pair.
#[derive(Debug, Clone, Default)]
pub struct CalibrationSet {
    matrices: HashMap<(usize, usize), AssignmentMatrix>,
}

impl CalibrationSet {
    pub fn insert(&mut self, m: AssignmentMatrix) {
        self.matrices.insert(m.pair, m);
    }

    pub fn get(&self, pair: (usize, usize)) -> Option<&AssignmentMatrix> {
        self.matrices.get(&pair)
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    /// Bell-calibrate every bond pair of both parities.
    pub fn calibrate_bell_for_chain(
        spec: &ChainSpec,
        shots: u64,
        noise: &NoiseModel,
        seed: u64,
    ) -> Result<Self> {
        let mut set = Self::default();
        for parity in [Parity::Odd, Parity::Even] {
            for (idx, pair) in circuits::measured_pairs(spec, parity)?.into_iter().enumerate() {
                let pair_seed = seed ^ ((pair.0 as u64) << 24) ^ ((idx as u64) << 48) ^ 0x9e37;
                set.insert(calibrate_bell(pair, shots, noise, pair_seed)?);
            }
        }
        Ok(set)
    }
}

/// Bootstrap settings for mitigated-energy uncertainties.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 200,
            seed: 0,
        }
    }
}

fn unfolded_energy(
    histograms: &[&BellHistogram],
    calibrations: &CalibrationSet,
    delta: f64,
    counts_override: Option<&[Vec<[u64; 4]>]>,
) -> Result<f64> {
    let energies = bell_outcome_energies(delta);
    let mut total = 0.0;
    for (h_idx, hist) in histograms.iter().enumerate() {
        for (k, &pair) in hist.pairs.iter().enumerate() {
            let matrix = calibrations
                .get(pair)
                .ok_or(Error::MissingCalibration(pair.0, pair.1))?;
            let counts = match counts_override {
                Some(o) => o[h_idx][k],
                None => hist.counts[k],
            };
            let shots: u64 = counts.iter().sum();
            if shots == 0 {
                continue;
            }
            let measured = [
                counts[0] as f64 / shots as f64,
                counts[1] as f64 / shots as f64,
                counts[2] as f64 / shots as f64,
                counts[3] as f64 / shots as f64,
            ];
            let p = unfold_distribution(matrix, measured)?;
            total += p.iter().zip(&energies).map(|(pi, ei)| pi * ei).sum::<f64>();
        }
    }
    Ok(total)
}

/// Assignment-matrix-mitigated Bell energy: per bond the measured outcome
/// distribution is unfolded through that bond's calibration before energy
/// weighting; the uncertainty is a multinomial bootstrap over shot counts.
pub fn mitigated_bell_energy(
    histograms: &[&BellHistogram],
    calibrations: &CalibrationSet,
    delta: f64,
    opts: &BootstrapOptions,
) -> Result<(f64, f64)> {
    let energy = unfolded_energy(histograms, calibrations, delta, None)?;
    if opts.resamples < 2 {
        return Ok((energy, 0.0));
    }
    let mut rng = dense::stream_rng(opts.seed, 0xb007_57a9);
    let mut resampled = Vec::with_capacity(opts.resamples);
    for _ in 0..opts.resamples {
        let boot: Vec<Vec<[u64; 4]>> = histograms
            .iter()
            .map(|hist| {
                hist.counts
                    .iter()
                    .map(|c| resample_multinomial(c, &mut rng))
                    .collect()
            })
            .collect();
        resampled.push(unfolded_energy(histograms, calibrations, delta, Some(&boot))?);
    }
    let mean = resampled.iter().sum::<f64>() / resampled.len() as f64;
    let var = resampled.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
        / (resampled.len() - 1) as f64;
    Ok((energy, var.sqrt()))
}

fn resample_multinomial(counts: &[u64; 4], rng: &mut rand_chacha::ChaCha12Rng) -> [u64; 4] {
    let total: u64 = counts.iter().sum();
    let mut out = [0u64; 4];
    let mut remaining = total;
    let mut mass: f64 = 1.0;
    for i in 0..3 {
        if remaining == 0 || mass <= 0.0 {
            break;
        }
        let p = (counts[i] as f64 / total as f64 / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, p)
            .map(|d| d.sample(rng))
            .unwrap_or(0);
        out[i] = draw;
        remaining -= draw;
        mass -= counts[i] as f64 / total as f64;
    }
    out[3] = remaining;
    out
}

// ---------------------------------------------------------------------------
// ZNE series and exponential fitting
// ---------------------------------------------------------------------------

/// One zero-noise-extrapolation data point at fold depth `m = 2n + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZnePoint {
    pub m: u32,
    pub energy: f64,
    pub stderr: f64,
}

/// The `(m, energy)` extrapolation series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZneSeries {
    pub points: Vec<ZnePoint>,
}

impl ZneSeries {
    pub fn new(points: Vec<ZnePoint>) -> Result<Self> {
        for w in points.windows(2) {
            if w[1].m <= w[0].m {
                return Err(Error::Argument(
                    "ZNE series m values must be strictly increasing".into(),
                ));
            }
        }
        if points.iter().any(|p| p.m % 2 == 0) {
            return Err(Error::Argument("ZNE series m values must be odd".into()));
        }
        Ok(Self { points })
    }

    /// CSV rendering `m,energy,stderr` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("m,energy,stderr\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.m, p.energy, p.stderr));
        }
        out
    }
}

/// Build the `(m, energy)` series by folding `base` for each entry of
/// `n_list` and running `estimator` on the folded circuit.
pub fn zne_series(
    base: &Circuit,
    n_list: &[usize],
    mut estimator: impl FnMut(&FoldedCircuit) -> Result<(f64, f64)>,
) -> Result<ZneSeries> {
    if n_list.is_empty() {
        return Err(Error::Argument("n_list must be non-empty".into()));
    }
    let mut points = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let folded = circuits::fold(base, n);
        let (energy, stderr) = estimator(&folded).map_err(|e| {
            Error::Fit(format!("estimator failed at m = {}: {e}", 2 * n + 1))
        })?;
        points.push(ZnePoint {
            m: (2 * n + 1) as u32,
            energy,
            stderr,
        });
    }
    ZneSeries::new(points)
}

/// Fitted decay `f(m) = a exp(-b m) + c` with covariance over `(a, b, c)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub covariance: [[f64; 3]; 3],
    /// Weighted residual norm at the optimum.
    pub residual_norm: f64,
}

impl ExpFit {
    pub fn eval(&self, m: f64) -> f64 {
        self.a * (-self.b * m).exp() + self.c
    }

    /// Standard error of the decay rate.
    pub fn b_sigma(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
}

/// Weighted nonlinear least squares for `a exp(-b m) + c`.
///
/// Initialization scans offsets `c` around the series tail, solving the
/// log-linearized problem for `(a, b)` at each candidate, then refines with
/// Levenberg-Marquardt. Degenerate (constant) series and non-decaying fits
/// (`b <= 0`) are rejected with diagnostics.
pub fn fit_exponential(series: &ZneSeries) -> Result<ExpFit> {
    let pts = &series.points;
    if pts.len() < 3 {
        return Err(Error::Argument(format!(
            "exponential fit needs at least 3 points, got {}",
            pts.len()
        )));
    }
    let e_min = pts.iter().map(|p| p.energy).fold(f64::INFINITY, f64::min);
    let e_max = pts.iter().map(|p| p.energy).fold(f64::NEG_INFINITY, f64::max);
    let scale = e_max.abs().max(e_min.abs()).max(1e-30);
    let range = e_max - e_min;
    if flat_within_errors(series) {
        return Err(Error::Fit(format!(
            "series is constant within its uncertainties (spread {range:.3e}); no decay to \
             extrapolate"
        )));
    }
    // Weights 1/sigma^2 with a floor so noiseless inputs stay finite.
    let sigma_floor = pts
        .iter()
        .map(|p| p.stderr)
        .filter(|s| *s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let sigma_floor = if sigma_floor.is_finite() {
        sigma_floor * 1e-3
    } else {
        1e-9 * scale
    };
    let weights: Vec<f64> = pts
        .iter()
        .map(|p| 1.0 / p.stderr.max(sigma_floor).powi(2))
        .collect();

    // Direction of approach: increasing series decays up to c >= max, and
    // vice versa.
    let increasing = pts.last().unwrap().energy > pts[0].energy;
    let tail = pts.last().unwrap().energy;
    let mut best: Option<(f64, f64, f64, f64)> = None; // (a, b, c, sse)
    for step in 0..120 {
        let frac = step as f64 / 119.0;
        let offset = range * (1e-4 + 2.0 * frac);
        let c = if increasing { tail + offset } else { tail - offset };
        // Log-linear regression of ln|E - c| against m.
        let mut sw = 0.0;
        let mut sm = 0.0;
        let mut sy = 0.0;
        let mut smm = 0.0;
        let mut smy = 0.0;
        let mut ok = true;
        for (p, &w) in pts.iter().zip(&weights) {
            let d = p.energy - c;
            if d == 0.0 || (d > 0.0) == increasing {
                ok = false;
                break;
            }
            let y = d.abs().ln();
            let m = p.m as f64;
            sw += w;
            sm += w * m;
            sy += w * y;
            smm += w * m * m;
            smy += w * m * y;
        }
        if !ok {
            continue;
        }
        let det = sw * smm - sm * sm;
        if det.abs() < 1e-30 {
            continue;
        }
        let slope = (sw * smy - sm * sy) / det;
        let intercept = (smm * sy - sm * smy) / det;
        let b = -slope;
        if b <= 0.0 || !b.is_finite() {
            continue;
        }
        let a = intercept.exp() * if increasing { -1.0 } else { 1.0 };
        let sse = sse_of(pts, &weights, a, b, c);
        if best.is_none_or(|(_, _, _, s)| sse < s) {
            best = Some((a, b, c, sse));
        }
    }
    let Some((a0, b0, c0, _)) = best else {
        return Err(Error::Fit(
            "no decaying initialization found (b <= 0 everywhere); series may not follow \
             a exponential approach"
                .into(),
        ));
    };
    let (a, b, c, sse) = levenberg_marquardt(pts, &weights, a0, b0, c0);
    if b <= 0.0 || !b.is_finite() || !a.is_finite() || !c.is_finite() {
        return Err(Error::Fit(format!(
            "fit did not converge to a decaying exponential (a={a:.3e}, b={b:.3e}, c={c:.3e})"
        )));
    }
    // Covariance from the linearization at the optimum.
    let mut jtj = nalgebra::Matrix3::<f64>::zeros();
    for (p, &w) in pts.iter().zip(&weights) {
        let m = p.m as f64;
        let e = (-b * m).exp();
        let row = [e, -a * m * e, 1.0];
        for r in 0..3 {
            for cidx in 0..3 {
                jtj[(r, cidx)] += w * row[r] * row[cidx];
            }
        }
    }
    let unweighted = pts.iter().all(|p| p.stderr == 0.0);
    let cov_scale = if unweighted && pts.len() > 3 {
        sse / (pts.len() - 3) as f64
    } else {
        1.0
    };
    let cov = jtj
        .try_inverse()
        .unwrap_or_else(nalgebra::Matrix3::zeros)
        .scale(cov_scale);
    let mut covariance = [[0.0; 3]; 3];
    for (r, row) in covariance.iter_mut().enumerate() {
        for (cidx, entry) in row.iter_mut().enumerate() {
            *entry = cov[(r, cidx)];
        }
    }
    Ok(ExpFit {
        a,
        b,
        c,
        covariance,
        residual_norm: sse.sqrt(),
    })
}

/// True when a constant explains the series: either the spread is at
/// floating-point scale, or the chi-squared of the weighted mean against
/// the reported uncertainties is unremarkable.
pub fn flat_within_errors(series: &ZneSeries) -> bool {
    let pts = &series.points;
    if pts.is_empty() {
        return true;
    }
    let e_min = pts.iter().map(|p| p.energy).fold(f64::INFINITY, f64::min);
    let e_max = pts.iter().map(|p| p.energy).fold(f64::NEG_INFINITY, f64::max);
    let scale = e_max.abs().max(e_min.abs()).max(1e-30);
    if e_max - e_min < 1e-10 * scale {
        return true;
    }
    if pts.iter().all(|p| p.stderr > 0.0) && pts.len() > 1 {
        let wsum: f64 = pts.iter().map(|p| 1.0 / (p.stderr * p.stderr)).sum();
        let wmean: f64 = pts
            .iter()
            .map(|p| p.energy / (p.stderr * p.stderr))
            .sum::<f64>()
            / wsum;
        let chi2: f64 = pts
            .iter()
            .map(|p| ((p.energy - wmean) / p.stderr).powi(2))
            .sum();
        let dof = (pts.len() - 1) as f64;
        return chi2 < dof + 3.0 * (2.0 * dof).sqrt();
    }
    false
}

/// Fit both series to `a exp(-b m) + c` with a shared decay rate `b`.
///
/// The ansatz and reference circuits have identical gate structure, so the
/// physical premise of the reference-state correction is that they decay at
/// the same rate; imposing that during fitting keeps the correction's
/// cancellation intact where four-point series cannot pin three parameters
/// each on their own. Returns `(fit_ansatz, fit_reference)` with equal `b`.
pub fn fit_joint_exponential(
    ansatz: &ZneSeries,
    reference: &ZneSeries,
) -> Result<(ExpFit, ExpFit)> {
    let prepare = |s: &ZneSeries| -> Result<(Vec<ZnePoint>, Vec<f64>)> {
        if s.points.len() < 3 {
            return Err(Error::Argument(format!(
                "exponential fit needs at least 3 points, got {}",
                s.points.len()
            )));
        }
        let scale = s
            .points
            .iter()
            .map(|p| p.energy.abs())
            .fold(1e-30, f64::max);
        let floor = s
            .points
            .iter()
            .map(|p| p.stderr)
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() {
            floor * 1e-3
        } else {
            1e-9 * scale
        };
        let w = s
            .points
            .iter()
            .map(|p| 1.0 / p.stderr.max(floor).powi(2))
            .collect();
        Ok((s.points.clone(), w))
    };
    let (pe, we) = prepare(ansatz)?;
    let (pb, wb) = prepare(reference)?;

    // For fixed b the per-series (a, c) are weighted linear solves; scan b.
    let linear_ac = |pts: &[ZnePoint], w: &[f64], b: f64| -> Option<(f64, f64, f64)> {
        let (mut s11, mut s1e, mut see, mut sy1, mut sye) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (p, &wi) in pts.iter().zip(w) {
            let e = (-b * p.m as f64).exp();
            s11 += wi;
            s1e += wi * e;
            see += wi * e * e;
            sy1 += wi * p.energy;
            sye += wi * p.energy * e;
        }
        let det = see * s11 - s1e * s1e;
        if det.abs() < 1e-30 {
            return None;
        }
        let a = (sye * s11 - sy1 * s1e) / det;
        let c = (see * sy1 - s1e * sye) / det;
        let sse: f64 = pts
            .iter()
            .zip(w)
            .map(|(p, &wi)| {
                let r = a * (-b * p.m as f64).exp() + c - p.energy;
                wi * r * r
            })
            .sum();
        Some((a, c, sse))
    };
    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None; // b, aE, cE, aB, cB, sse
    for step in 0..160 {
        let b = 0.01 * (400.0f64).powf(step as f64 / 159.0); // 0.01 ..= 4.0
        let (Some((ae, ce, sse_e)), Some((ab, cb, sse_b))) =
            (linear_ac(&pe, &we, b), linear_ac(&pb, &wb, b))
        else {
            continue;
        };
        let sse = sse_e + sse_b;
        if best.is_none_or(|(.., s)| sse < s) {
            best = Some((b, ae, ce, ab, cb, sse));
        }
    }
    let Some((b0, ae0, ce0, ab0, cb0, _)) = best else {
        return Err(Error::Fit("joint fit found no valid decay rate".into()));
    };
    // Joint Levenberg-Marquardt over (b, aE, cE, aB, cB).
    let mut x = [b0, ae0, ce0, ab0, cb0];
    let mut lambda = 1e-3;
    let joint_sse = |x: &[f64; 5]| {
        sse_of(&pe, &we, x[1], x[0], x[2]) + sse_of(&pb, &wb, x[3], x[0], x[4])
    };
    let mut sse = joint_sse(&x);
    for _ in 0..300 {
        let mut jtj = nalgebra::Matrix5::<f64>::zeros();
        let mut jtr = nalgebra::Vector5::<f64>::zeros();
        let mut accumulate = |pts: &[ZnePoint], w: &[f64], a: f64, c: f64, ia: usize, ic: usize, x: &[f64; 5]| {
            for (p, &wi) in pts.iter().zip(w) {
                let m = p.m as f64;
                let e = (-x[0] * m).exp();
                let r = a * e + c - p.energy;
                let mut row = [0.0; 5];
                row[0] = -a * m * e;
                row[ia] = e;
                row[ic] = 1.0;
                for i in 0..5 {
                    jtr[i] += wi * row[i] * r;
                    for j in 0..5 {
                        jtj[(i, j)] += wi * row[i] * row[j];
                    }
                }
            }
        };
        accumulate(&pe, &we, x[1], x[2], 1, 2, &x);
        accumulate(&pb, &wb, x[3], x[4], 3, 4, &x);
        let mut damped = jtj;
        for i in 0..5 {
            damped[(i, i)] *= 1.0 + lambda;
            damped[(i, i)] += 1e-30;
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            break;
        };
        let mut nx = x;
        for i in 0..5 {
            nx[i] += step[i];
        }
        let new_sse = joint_sse(&nx);
        if new_sse.is_finite() && new_sse < sse {
            let improvement = sse - new_sse;
            x = nx;
            sse = new_sse;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-14 * (1.0 + sse) && step.norm() < 1e-12 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let [b, ae, ce, ab, cb] = x;
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::Fit(format!(
            "joint fit did not converge to a decaying exponential (b = {b:.3e})"
        )));
    }
    // Covariance of the joint problem, marginalized into per-series
    // (a, b, c) blocks.
    let mut jtj = nalgebra::Matrix5::<f64>::zeros();
    let mut accumulate = |pts: &[ZnePoint], w: &[f64], a: f64, ia: usize, ic: usize| {
        for (p, &wi) in pts.iter().zip(w) {
            let m = p.m as f64;
            let e = (-b * m).exp();
            let mut row = [0.0; 5];
            row[0] = -a * m * e;
            row[ia] = e;
            row[ic] = 1.0;
            for i in 0..5 {
                for j in 0..5 {
                    jtj[(i, j)] += wi * row[i] * row[j];
                }
            }
        }
    };
    accumulate(&pe, &we, ae, 1, 2);
    accumulate(&pb, &wb, ab, 3, 4);
    let cov5 = jtj
        .try_inverse()
        .unwrap_or_else(nalgebra::Matrix5::zeros);
    let extract = |ia: usize, ic: usize| -> [[f64; 3]; 3] {
        // Order (a, b, c) to match ExpFit.
        let map = [ia, 0, ic];
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for cidx in 0..3 {
                out[r][cidx] = cov5[(map[r], map[cidx])];
            }
        }
        out
    };
    let fit_e = ExpFit {
        a: ae,
        b,
        c: ce,
        covariance: extract(1, 2),
        residual_norm: sse_of(&pe, &we, ae, b, ce).sqrt(),
    };
    let fit_b = ExpFit {
        a: ab,
        b,
        c: cb,
        covariance: extract(3, 4),
        residual_norm: sse_of(&pb, &wb, ab, b, cb).sqrt(),
    };
    Ok((fit_e, fit_b))
}

fn sse_of(pts: &[ZnePoint], weights: &[f64], a: f64, b: f64, c: f64) -> f64 {
    pts.iter()
        .zip(weights)
        .map(|(p, &w)| {
            let r = a * (-b * p.m as f64).exp() + c - p.energy;
            w * r * r
        })
        .sum()
}

fn levenberg_marquardt(
    pts: &[ZnePoint],
    weights: &[f64],
    mut a: f64,
    mut b: f64,
    mut c: f64,
) -> (f64, f64, f64, f64) {
    let mut lambda = 1e-3;
    let mut sse = sse_of(pts, weights, a, b, c);
    for _ in 0..300 {
        let mut jtj = nalgebra::Matrix3::<f64>::zeros();
        let mut jtr = nalgebra::Vector3::<f64>::zeros();
        for (p, &w) in pts.iter().zip(weights) {
            let m = p.m as f64;
            let e = (-b * m).exp();
            let r = a * e + c - p.energy;
            let row = [e, -a * m * e, 1.0];
            for i in 0..3 {
                jtr[i] += w * row[i] * r;
                for j in 0..3 {
                    jtj[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        let mut damped = jtj;
        for i in 0..3 {
            damped[(i, i)] *= 1.0 + lambda;
            damped[(i, i)] += 1e-30;
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            break;
        };
        let (na, nb, nc) = (a + step[0], b + step[1], c + step[2]);
        let new_sse = sse_of(pts, weights, na, nb, nc);
        if new_sse.is_finite() && new_sse < sse {
            let improvement = sse - new_sse;
            a = na;
            b = nb;
            c = nc;
            sse = new_sse;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-14 * (1.0 + sse) && step.norm() < 1e-12 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b, c, sse)
}

// ---------------------------------------------------------------------------
// Reference-state correction and QOD
// ---------------------------------------------------------------------------

/// Number of CNOT layers in one block `U` of the one-layer ansatz (singlet
/// initialization plus three per bond parity), the depth unit the QOD is
/// quoted in.
pub const CNOT_LAYERS_PER_U: f64 = 7.0;

/// Quantum observable depth `7 / b`: the number of CNOT layers over which
/// the fitted observable decays by `e`.
pub fn qod(b: f64) -> Result<f64> {
    if b <= 0.0 || !b.is_finite() {
        return Err(Error::Argument(format!(
            "QOD requires a positive decay rate, got {b}"
        )));
    }
    Ok(CNOT_LAYERS_PER_U / b)
}

/// QOD from both fits; the two values are averaged only when they agree
/// within three combined standard errors.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QodEstimate {
    pub ansatz: f64,
    pub reference: f64,
    /// Present when the two decay rates agree within 3 combined sigma.
    pub combined: Option<f64>,
}

/// Mitigated energy and diagnostics from the reference-state correction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationResult {
    /// `a_E r + c_E`, the reference-rescaled extrapolation.
    pub e_exp: f64,
    pub sigma: f64,
    /// Rescale factor `(E_bell - c_B) / a_B`.
    pub r: f64,
    /// Plain ratio correction `f_E(0) * E_bell / f_B(0)` kept for
    /// comparison.
    pub naive_extrapolation: f64,
    pub qod: QodEstimate,
}

/// Combine the ansatz and reference fits with the exact reference energy.
pub fn rzne_correct(
    fit_e: &ExpFit,
    fit_b: &ExpFit,
    e_bell_exact: f64,
) -> Result<MitigationResult> {
    let scale = e_bell_exact.abs().max(1.0);
    if fit_b.a.abs() < 1e-9 * scale {
        return Err(Error::Fit(format!(
            "rescale undefined: reference fit amplitude a_B = {:.3e} is consistent with zero",
            fit_b.a
        )));
    }
    let r = (e_bell_exact - fit_b.c) / fit_b.a;
    let e_exp = fit_e.a * r + fit_e.c;
    let f_e0 = fit_e.a + fit_e.c;
    let f_b0 = fit_b.a + fit_b.c;
    let naive_extrapolation = if f_b0.abs() > 1e-12 * scale {
        f_e0 * e_bell_exact / f_b0
    } else {
        f64::NAN
    };
    // First-order propagation through both fits' (a, c) covariance blocks.
    let ge = [r, 1.0]; // d/d(a_E), d/d(c_E)
    let gb = [-fit_e.a * r / fit_b.a, -fit_e.a / fit_b.a]; // d/d(a_B), d/d(c_B)
    let var_e = quad_form_ac(&fit_e.covariance, ge);
    let var_b = quad_form_ac(&fit_b.covariance, gb);
    let sigma = (var_e + var_b).max(0.0).sqrt();

    let qe = qod(fit_e.b)?;
    let qb = qod(fit_b.b)?;
    let db = (fit_e.b - fit_b.b).abs();
    let sigma_db = (fit_e.covariance[1][1].max(0.0) + fit_b.covariance[1][1].max(0.0)).sqrt();
    let combined = if db <= 3.0 * sigma_db {
        Some((qe + qb) / 2.0)
    } else {
        None
    };
    Ok(MitigationResult {
        e_exp,
        sigma,
        r,
        naive_extrapolation,
        qod: QodEstimate {
            ansatz: qe,
            reference: qb,
            combined,
        },
    })
}

/// Quadratic form over the (a, c) block of a 3x3 (a, b, c) covariance.
fn quad_form_ac(cov: &[[f64; 3]; 3], g: [f64; 2]) -> f64 {
    let idx = [0usize, 2];
    let mut acc = 0.0;
    for r in 0..2 {
        for c in 0..2 {
            acc += g[r] * cov[idx[r]][idx[c]] * g[c];
        }
    }
    acc
}

// ---------------------------------------------------------------------------
// End-to-end pipeline on the dense noisy backend
// ---------------------------------------------------------------------------

/// Configuration for [`run_rzne_pipeline`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RzneConfig {
    /// Fold counts; the series runs at `m = 2n + 1`.
    pub n_list: Vec<usize>,
    pub shots_per_point: u64,
    pub calibration_shots: u64,
    /// Trajectories per measurement setting (shots are split across them).
    pub trajectories: u64,
    /// Bootstrap resamples used by standalone mitigated-energy calls; the
    /// pipeline's per-point errors come from measurement groups instead.
    pub bootstrap_resamples: usize,
    /// Fit the two series with a shared decay rate (the reference-state
    /// premise: identical circuit structure, same noise exposure). When
    /// false, each series is fit independently.
    pub joint_decay: bool,
    pub seed: u64,
}

impl Default for RzneConfig {
    fn default() -> Self {
        Self {
            n_list: vec![0, 1, 2, 3],
            shots_per_point: 40_000,
            calibration_shots: 10_000,
            trajectories: 96,
            bootstrap_resamples: 200,
            joint_decay: true,
            seed: 0,
        }
    }
}

/// Everything the pipeline produces: per-m points for both series, the fits,
/// and the corrected energy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RzneOutcome {
    pub result: MitigationResult,
    pub ansatz_series: ZneSeries,
    pub reference_series: ZneSeries,
    pub ansatz_fit: Option<ExpFit>,
    pub reference_fit: Option<ExpFit>,
    /// Set when both series were flat (noiseless run) and the mitigated
    /// energy fell back to the weighted mean of the ansatz points.
    pub degenerate_noiseless: bool,
}

/// Measurement groups per ZNE point: the point estimate pools the groups and
/// the spread across them sets the error bar, so trajectory-sampling noise
/// (invisible to a per-histogram shot bootstrap) is accounted for.
const POINT_GROUPS: u64 = 8;

fn mitigated_series_point(
    folded: &FoldedCircuit,
    spec: &ChainSpec,
    noise: &NoiseModel,
    calibrations: &CalibrationSet,
    shots: u64,
    trajectories: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    let groups = POINT_GROUPS.min(shots).max(1);
    let mut source = DenseSource::from_folded(folded, noise.clone(), seed)?
        .with_trajectories(trajectories.div_ceil(groups).max(1));
    let no_boot = BootstrapOptions {
        resamples: 0,
        seed: 0,
    };
    let mut energies = Vec::with_capacity(groups as usize);
    for g in 0..groups {
        let batch = shots / groups + u64::from(g < shots % groups);
        if batch == 0 {
            continue;
        }
        let odd = bell_histogram(&mut source, spec, Parity::Odd, batch)?;
        let even = bell_histogram(&mut source, spec, Parity::Even, batch)?;
        let (e, _) = mitigated_bell_energy(&[&odd, &even], calibrations, spec.delta(), &no_boot)?;
        energies.push(e);
    }
    let k = energies.len() as f64;
    let mean = energies.iter().sum::<f64>() / k;
    let var = if energies.len() > 1 {
        energies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0) / k
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

/// Run the full reference-state ZNE pipeline on the dense noisy backend:
/// Bell-calibrate every bond, measure the mitigated Bell energy of the
/// folded ansatz and of the zero-angle reference at every `m`, fit both
/// series, and apply [`rzne_correct`] against the exact Bell-pair energy.
pub fn run_rzne_pipeline(
    spec: &ChainSpec,
    params: &AnsatzParams,
    noise: &NoiseModel,
    cfg: &RzneConfig,
) -> Result<RzneOutcome> {
    noise.validate()?;
    let calibrations =
        CalibrationSet::calibrate_bell_for_chain(spec, cfg.calibration_shots, noise, cfg.seed)?;
    let reference_params = params.zeroed();
    let mut series = Vec::with_capacity(2);
    for (which, p) in [(0u64, params), (1u64, &reference_params)] {
        let u = circuits::build_ansatz(spec, p)?;
        let s = zne_series(&u, &cfg.n_list, |folded| {
            let point_seed = cfg.seed ^ (which << 17) ^ ((folded.m() as u64) << 20);
            mitigated_series_point(
                folded,
                spec,
                noise,
                &calibrations,
                cfg.shots_per_point,
                cfg.trajectories,
                point_seed,
            )
        })?;
        series.push(s);
    }
    let reference_series = series.pop().expect("two series");
    let ansatz_series = series.pop().expect("two series");

    // A flat pair of series (noiseless run) carries nothing to extrapolate:
    // report the weighted mean of the ansatz points instead of fitting.
    if noise.gates_are_exact()
        || (flat_within_errors(&ansatz_series) && flat_within_errors(&reference_series))
    {
        let (mean, sigma) = weighted_mean(&ansatz_series);
        return Ok(RzneOutcome {
            result: MitigationResult {
                e_exp: mean,
                sigma,
                r: 1.0,
                naive_extrapolation: mean,
                qod: QodEstimate {
                    ansatz: f64::INFINITY,
                    reference: f64::INFINITY,
                    combined: None,
                },
            },
            ansatz_series,
            reference_series,
            ansatz_fit: None,
            reference_fit: None,
            degenerate_noiseless: true,
        });
    }
    let (fe, fb) = if cfg.joint_decay {
        fit_joint_exponential(&ansatz_series, &reference_series)?
    } else {
        (
            fit_exponential(&ansatz_series)?,
            fit_exponential(&reference_series)?,
        )
    };
    let result = rzne_correct(&fe, &fb, model::bell_pair_energy(spec))?;
    Ok(RzneOutcome {
        result,
        ansatz_series,
        reference_series,
        ansatz_fit: Some(fe),
        reference_fit: Some(fb),
        degenerate_noiseless: false,
    })
}

fn weighted_mean(series: &ZneSeries) -> (f64, f64) {
    let mut sw = 0.0;
    let mut swe = 0.0;
    for p in &series.points {
        let w = if p.stderr > 0.0 {
            1.0 / (p.stderr * p.stderr)
        } else {
            1.0
        };
        sw += w;
        swe += w * p.energy;
    }
    (swe / sw, (1.0 / sw).sqrt())
}

// ---------------------------------------------------------------------------
// Synthetic folded noise at MPS scale
// ---------------------------------------------------------------------------

/// Synthetic Bell-measurement sampler for chains beyond dense reach.
///
/// Gate noise is injected at the distribution level: each bond's ideal
/// Bell-outcome distribution (from the exact two-site reduced density matrix
/// of the MPS) is mixed toward uniform with weight `1 - exp(-lambda m)`,
/// where `lambda = -7 ln(1 - p2)` models the seven CNOT layers per `U`
/// block; readout confusion is applied as the exact 4x4 bit-flip map and
/// counts are drawn multinomially. The same model generates calibration
/// columns (two CNOTs' worth of depolarizing), so the mitigation stack runs
/// unchanged on top.
pub struct SyntheticNoisyBell {
    spec: ChainSpec,
    noise: NoiseModel,
    /// Depolarizing exponent per fold unit m.
    lambda_per_m: f64,
    ideal: HashMap<(usize, usize), [f64; 4]>,
    seed: u64,
}

impl SyntheticNoisyBell {
    pub fn new(spec: &ChainSpec, state: &MpsState, noise: &NoiseModel, seed: u64) -> Result<Self> {
        noise.validate()?;
        let lambda_per_m = -CNOT_LAYERS_PER_U * (1.0 - noise.p2).ln();
        let mut ideal = HashMap::new();
        let mut work = state.clone();
        for parity in [Parity::Odd, Parity::Even] {
            for pair in circuits::measured_pairs(spec, parity)? {
                let rho = work.pair_density(pair.0)?;
                ideal.insert(pair, bell_probabilities(&rho));
            }
        }
        Ok(Self {
            spec: *spec,
            noise: noise.clone(),
            lambda_per_m,
            ideal,
            seed,
        })
    }

    /// Readout-confusion map in Bell-code space for a pair.
    fn readout_map(&self, pair: (usize, usize)) -> [[f64; 4]; 4] {
        let ca = self.noise.confusion_for(pair.0).matrix();
        let cb = self.noise.confusion_for(pair.1).matrix();
        let mut m = [[0.0; 4]; 4];
        for out in 0..4usize {
            for inp in 0..4usize {
                let (oa, ob) = (out & 1, out >> 1);
                let (ia, ib) = (inp & 1, inp >> 1);
                m[out][inp] = ca[oa][ia] * cb[ob][ib];
            }
        }
        m
    }

    fn apply_map(m: &[[f64; 4]; 4], p: &[f64; 4]) -> [f64; 4] {
        let mut out = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i] += m[i][j] * p[j];
            }
        }
        out
    }

    /// Sampled histogram for one parity at fold depth `m`.
    pub fn histogram(&self, parity: Parity, m: u32, shots: u64, salt: u64) -> Result<BellHistogram> {
        let pairs = circuits::measured_pairs(&self.spec, parity)?;
        // One extra CNOT layer for the Bell readout itself.
        let survive = (-(self.lambda_per_m * m as f64) + (1.0 - self.noise.p2).ln()).exp();
        let mut rng = dense::stream_rng(self.seed ^ salt, m as u64);
        let mut counts = Vec::with_capacity(pairs.len());
        for &pair in &pairs {
            let ideal = self.ideal[&pair];
            let mut noisy = [0.0; 4];
            for i in 0..4 {
                noisy[i] = survive * ideal[i] + (1.0 - survive) * 0.25;
            }
            let readout = self.readout_map(pair);
            let p = Self::apply_map(&readout, &noisy);
            counts.push(sample_categorical(&p, shots, &mut rng));
        }
        Ok(BellHistogram {
            parity,
            pairs,
            counts,
            shots,
        })
    }

    /// Synthetic Bell calibration: the two CNOTs of preparation plus readout
    /// depolarize each prepared Bell state before the confusion map.
    pub fn calibration(&self, shots: u64) -> Result<CalibrationSet> {
        let survive_cal = (1.0 - self.noise.p2).powi(2);
        let mut set = CalibrationSet::default();
        for parity in [Parity::Odd, Parity::Even] {
            for (idx, pair) in circuits::measured_pairs(&self.spec, parity)?
                .into_iter()
                .enumerate()
            {
                let readout = self.readout_map(pair);
                let mut rng =
                    dense::stream_rng(self.seed ^ 0xca11_b007, (idx as u64) << 2 | parity_bit(parity));
                let mut columns = [[0u64; 4]; 4];
                for (prep, column) in columns.iter_mut().enumerate() {
                    let mut p = [(1.0 - survive_cal) * 0.25; 4];
                    p[prep] += survive_cal;
                    let p = Self::apply_map(&readout, &p);
                    *column = sample_categorical(&p, shots, &mut rng);
                }
                set.insert(empirical_matrix(columns, MatrixKind::Bell, pair)?);
            }
        }
        Ok(set)
    }

    /// Mitigated series over `n_list`, reusing the real fitting/correction
    /// machinery.
    pub fn mitigated_series(
        &self,
        n_list: &[usize],
        shots: u64,
        calibration_shots: u64,
        boot: &BootstrapOptions,
    ) -> Result<(ZneSeries, CalibrationSet)> {
        let calibrations = self.calibration(calibration_shots)?;
        let mut points = Vec::new();
        for &n in n_list {
            let m = (2 * n + 1) as u32;
            let odd = self.histogram(Parity::Odd, m, shots, 0x0dd)?;
            let even = self.histogram(Parity::Even, m, shots, 0xe7e4)?;
            let (e, sigma) =
                mitigated_bell_energy(&[&odd, &even], &calibrations, self.spec.delta(), boot)?;
            points.push(ZnePoint {
                m,
                energy: e,
                stderr: sigma,
            });
        }
        Ok((ZneSeries::new(points)?, calibrations))
    }
}

fn parity_bit(p: Parity) -> u64 {
    match p {
        Parity::Odd => 0,
        Parity::Even => 1,
    }
}

/// Bell-basis diagonal of a two-qubit density matrix, ordered
/// `[Phi+, Phi-, Psi+, Psi-]`.
fn bell_probabilities(rho: &Matrix4<crate::C64>) -> [f64; 4] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let states: [[(usize, f64); 2]; 4] = [
        [(0, r), (3, r)],
        [(0, r), (3, -r)],
        [(1, r), (2, r)],
        [(1, r), (2, -r)],
    ];
    let mut p = [0.0; 4];
    for (k, basis) in states.iter().enumerate() {
        let mut acc = crate::C64::new(0.0, 0.0);
        for &(i, wi) in basis {
            for &(j, wj) in basis {
                acc += rho[(i, j)] * wi * wj;
            }
        }
        p[k] = acc.re.max(0.0);
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        for v in &mut p {
            *v /= total;
        }
    }
    p
}

fn sample_categorical(p: &[f64; 4], shots: u64, rng: &mut rand_chacha::ChaCha12Rng) -> [u64; 4] {
    let mut out = [0u64; 4];
    let mut remaining = shots;
    let mut mass = 1.0f64;
    for i in 0..3 {
        if remaining == 0 || mass <= 1e-15 {
            break;
        }
        let cond = (p[i] / mass).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining, cond)
            .map(|d| d.sample(rng))
            .unwrap_or(0);
        out[i] = draw;
        remaining -= draw;
        mass -= p[i];
    }
    out[3] = remaining;
    let _ = rng.random::<u32>(); // decorrelate successive pairs cheaply
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuits::AnsatzParams;
    use crate::dense::ReadoutNoise;

    #[test]
    fn ideal_readout_calibration_is_identity() {
        let m = calibrate_readout((0, 1), 4000, &NoiseModel::noiseless(), 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((m.matrix[i][j] - expect).abs() < 1e-12);
            }
        }
        assert_eq!(m.kind, MatrixKind::Computational);
    }

    #[test]
    fn symmetric_flip_calibration_matches_tensor_product() {
        let flip = 0.1;
        let noise = NoiseModel::noiseless().with_uniform_readout(flip);
        let shots = 60_000;
        let m = calibrate_readout((0, 1), shots, &noise, 3).unwrap();
        let single = [[0.9, 0.1], [0.1, 0.9]];
        for i in 0..4 {
            for j in 0..4 {
                let expect = single[i >> 1][j >> 1] * single[i & 1][j & 1];
                let sigma = (expect * (1.0 - expect) / shots as f64).sqrt().max(1e-4);
                assert!(
                    (m.matrix[i][j] - expect).abs() < 4.0 * sigma,
                    "entry ({i},{j}): {} vs {expect}",
                    m.matrix[i][j]
                );
            }
        }
        // Columns sum to 1 exactly by construction.
        for j in 0..4 {
            let col: f64 = (0..4).map(|i| m.matrix[i][j]).sum();
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bell_calibration_noiseless_is_identity() {
        let m = calibrate_bell((0, 1), 3000, &NoiseModel::noiseless(), 5).unwrap();
        for i in 0..4 {
            assert!((m.matrix[i][i] - 1.0).abs() < 1e-12, "{:?}", m.matrix);
        }
    }

    #[test]
    fn bell_calibration_with_gate_noise_spreads_mass() {
        let noise = NoiseModel::depolarizing(0.0, 0.05);
        let m = calibrate_bell((0, 1), 30_000, &noise, 7).unwrap();
        for j in 0..4 {
            assert!(m.matrix[j][j] < 1.0);
            let off: f64 = (0..4).filter(|&i| i != j).map(|i| m.matrix[i][j]).sum();
            assert!(off > 0.0);
        }
    }

    #[test]
    fn fully_depolarizing_bell_calibration_is_uniform() {
        let noise = NoiseModel::depolarizing(0.0, 1.0);
        let shots = 40_000;
        let m = calibrate_bell((0, 1), shots, &noise, 11).unwrap();
        // Two CNOTs at p2 = 1 fully depolarize: each column is uniform.
        // (Density-matrix argument: one maximal depolarizing event already
        // maps any input to I/4, and I/4 is invariant under the rest.)
        let sigma = 3.0 * (0.25 * 0.75 / shots as f64).sqrt();
        for i in 0..4 {
            for j in 0..4 {
                assert!(
                    (m.matrix[i][j] - 0.25).abs() < sigma,
                    "entry ({i},{j}) = {}",
                    m.matrix[i][j]
                );
            }
        }
    }

    #[test]
    fn unfold_identity_is_identity() {
        let m = AssignmentMatrix::new(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ],
            MatrixKind::Computational,
            (0, 1),
        )
        .unwrap();
        let p = unfold_distribution(&m, [0.1, 0.2, 0.3, 0.4]).unwrap();
        for (a, b) in p.iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn flip_matrix(flip: f64) -> AssignmentMatrix {
        let single = [[1.0 - flip, flip], [flip, 1.0 - flip]];
        let mut m = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                m[i][j] = single[i >> 1][j >> 1] * single[i & 1][j & 1];
            }
        }
        AssignmentMatrix::new(m, MatrixKind::Computational, (0, 1)).unwrap()
    }

    #[test]
    fn unfold_recovers_exact_forward_model() {
        let m = flip_matrix(0.1);
        let truth = [0.55, 0.05, 0.25, 0.15];
        let mut measured = [0.0; 4];
        for i in 0..4 {
            for j in 0..4 {
                measured[i] += m.matrix[i][j] * truth[j];
            }
        }
        let rec = unfold_distribution(&m, measured).unwrap();
        for (a, b) in rec.iter().zip(truth) {
            assert!((a - b).abs() < 1e-10, "{rec:?}");
        }
    }

    #[test]
    fn unfold_clamps_outside_column_span() {
        let m = flip_matrix(0.2);
        // A distribution unreachable by the forward model still unfolds to a
        // valid probability vector.
        let rec = unfold_distribution(&m, [1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(rec.iter().all(|&p| p >= 0.0));
        assert!((rec.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(rec[0] > 0.9);
    }

    #[test]
    fn unfold_rejects_singular_matrix() {
        let mut m = [[0.25; 4]; 4];
        m[0][0] = 0.25;
        let m = AssignmentMatrix::new(m, MatrixKind::Bell, (0, 1)).unwrap();
        assert!(matches!(
            unfold_distribution(&m, [0.25, 0.25, 0.25, 0.25]),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn zne_series_folds_correctly() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let u = circuits::build_ansatz(&spec, &AnsatzParams::heisenberg_single(0.15, 0.21)).unwrap();
        let mut seen = Vec::new();
        let series = zne_series(&u, &[0, 1, 2, 3], |folded| {
            seen.push(folded.m());
            Ok((-(folded.m() as f64), 0.1))
        })
        .unwrap();
        assert_eq!(seen, vec![1, 3, 5, 7]);
        assert_eq!(
            series.points.iter().map(|p| p.m).collect::<Vec<_>>(),
            vec![1, 3, 5, 7]
        );
        assert!(zne_series(&u, &[], |_| Ok((0.0, 0.0))).is_err());
    }

    #[test]
    fn fit_recovers_synthetic_exponential() {
        let (a, b, c) = (-50.0, 0.5, -10.0);
        let points: Vec<ZnePoint> = [1u32, 3, 5, 7, 9]
            .iter()
            .map(|&m| ZnePoint {
                m,
                energy: a * (-b * m as f64).exp() + c,
                stderr: 0.0,
            })
            .collect();
        let fit = fit_exponential(&ZneSeries::new(points).unwrap()).unwrap();
        assert!((fit.a - a).abs() < 1e-6, "a = {}", fit.a);
        assert!((fit.b - b).abs() < 1e-6, "b = {}", fit.b);
        assert!((fit.c - c).abs() < 1e-6, "c = {}", fit.c);
    }

    #[test]
    fn fit_rejects_constant_series() {
        let points: Vec<ZnePoint> = [1u32, 3, 5, 7]
            .iter()
            .map(|&m| ZnePoint {
                m,
                energy: -42.0,
                stderr: 0.0,
            })
            .collect();
        let err = fit_exponential(&ZneSeries::new(points).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn rzne_pure_ratio_limit() {
        let fit = |a: f64, b: f64, c: f64| ExpFit {
            a,
            b,
            c,
            covariance: [[0.0; 3]; 3],
            residual_norm: 0.0,
        };
        let fe = fit(-60.0, 0.5, 0.0);
        let fb = fit(-50.0, 0.5, 0.0);
        let out = rzne_correct(&fe, &fb, -40.0).unwrap();
        // c = 0 on both sides reduces to the plain ratio rescale.
        assert!((out.e_exp - (-60.0 * -40.0 / -50.0)).abs() < 1e-12);
        assert!((out.e_exp - out.naive_extrapolation).abs() < 1e-12);
        assert!((out.r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rzne_rejects_vanishing_reference_amplitude() {
        let fit = |a: f64| ExpFit {
            a,
            b: 0.5,
            c: -10.0,
            covariance: [[0.0; 3]; 3],
            residual_norm: 0.0,
        };
        assert!(rzne_correct(&fit(-60.0), &fit(1e-13), -40.0).is_err());
    }

    #[test]
    fn qod_values() {
        assert!((qod(7.0).unwrap() - 1.0).abs() < 1e-12);
        let q = qod(0.567).unwrap();
        assert!((11.6..13.0).contains(&q), "qod {q}");
        let q2 = qod(0.53).unwrap();
        assert!((q2 - 13.2).abs() < 0.1);
        assert!(qod(0.0).is_err());
        assert!(qod(-1.0).is_err());
        // Strictly decreasing in b.
        let grid: Vec<f64> = (1..50).map(|i| i as f64 * 0.1).collect();
        for w in grid.windows(2) {
            assert!(qod(w[1]).unwrap() < qod(w[0]).unwrap());
        }
    }

    #[test]
    fn global_depolarizing_recovery_is_exact() {
        // Shared decay rate, c at the fully-mixed energy (zero): the
        // correction returns the noiseless ansatz energy exactly.
        let truth_e = -174.0;
        let truth_b = -153.0;
        let rate = 0.42;
        let mk = |amp: f64| {
            let points: Vec<ZnePoint> = [1u32, 3, 5, 7]
                .iter()
                .map(|&m| ZnePoint {
                    m,
                    energy: amp * (-rate * m as f64).exp(),
                    stderr: 0.0,
                })
                .collect();
            ZneSeries::new(points).unwrap()
        };
        let fe = fit_exponential(&mk(truth_e)).unwrap();
        let fb = fit_exponential(&mk(truth_b)).unwrap();
        let out = rzne_correct(&fe, &fb, truth_b).unwrap();
        assert!(
            (out.e_exp - truth_e).abs() < 1e-8,
            "recovered {} vs {truth_e}",
            out.e_exp
        );
        assert!((out.r - (-153.0 / fb.a)).abs() < 1e-6);
    }

    #[test]
    fn pipeline_noiseless_returns_raw_energy() {
        let spec = ChainSpec::open_chain(6, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.141671, 0.216088);
        let cfg = RzneConfig {
            n_list: vec![0, 1, 2],
            shots_per_point: 20_000,
            calibration_shots: 2_000,
            trajectories: 16,
            bootstrap_resamples: 50,
            joint_decay: true,
            seed: 5,
        };
        let out = run_rzne_pipeline(&spec, &params, &NoiseModel::noiseless(), &cfg).unwrap();
        assert!(out.degenerate_noiseless);
        let sigma = out.result.sigma.max(0.02);
        assert!(
            (out.result.e_exp - (-9.880996)).abs() < 4.0 * sigma,
            "e_exp {} sigma {sigma}",
            out.result.e_exp
        );
    }

    #[test]
    fn pipeline_mitigates_noisy_run() {
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.138569, 0.216093);
        let noise = NoiseModel::depolarizing(0.0, 0.01)
            .with_readout(ReadoutNoise::Uniform(crate::dense::Confusion::symmetric(0.03)));
        let cfg = RzneConfig {
            n_list: vec![0, 1, 2, 3],
            shots_per_point: 20_000,
            calibration_shots: 5_000,
            trajectories: 64,
            bootstrap_resamples: 60,
            joint_decay: true,
            seed: 42,
        };
        let truth = -13.299823;
        let out = run_rzne_pipeline(&spec, &params, &noise, &cfg).unwrap();
        assert!(!out.degenerate_noiseless);
        let raw_m1 = out.ansatz_series.points[0].energy;
        let err_mitigated = (out.result.e_exp - truth).abs();
        let err_raw = (raw_m1 - truth).abs();
        assert!(
            err_mitigated < err_raw,
            "mitigated {err_mitigated} vs raw {err_raw}"
        );
        assert!(err_mitigated / truth.abs() < 0.05, "rel err {err_mitigated}");
        assert!(out.result.qod.ansatz > 0.0);
    }

    #[test]
    fn mitigated_energy_requires_calibration() {
        let hist = BellHistogram {
            parity: Parity::Odd,
            pairs: vec![(0, 1)],
            counts: vec![[10, 10, 10, 10]],
            shots: 40,
        };
        let empty = CalibrationSet::default();
        assert!(matches!(
            mitigated_bell_energy(&[&hist], &empty, 1.0, &BootstrapOptions::default()),
            Err(Error::MissingCalibration(0, 1))
        ));
    }

    #[test]
    fn readout_only_corruption_recovered_on_singlets() {
        // Singlet product with pure readout noise: mitigation recovers the
        // exact -(2+delta) N/2 within statistics.
        let spec = ChainSpec::open_chain(8, 1.0).unwrap();
        let c = circuits::singlet_init_circuit(8).unwrap();
        let noise = NoiseModel::noiseless().with_uniform_readout(0.08);
        let mut source = DenseSource::from_circuit(&c, noise.clone(), 9).unwrap();
        let odd = bell_histogram(&mut source, &spec, Parity::Odd, 40_000).unwrap();
        let even = bell_histogram(&mut source, &spec, Parity::Even, 40_000).unwrap();
        let calibrations =
            CalibrationSet::calibrate_bell_for_chain(&spec, 40_000, &noise, 77).unwrap();
        let (e, sigma) = mitigated_bell_energy(
            &[&odd, &even],
            &calibrations,
            1.0,
            &BootstrapOptions {
                resamples: 100,
                seed: 3,
            },
        )
        .unwrap();
        assert!(
            (e - (-12.0)).abs() < 3.0 * sigma.max(0.05),
            "mitigated {e} +- {sigma}"
        );
    }

    #[test]
    fn synthetic_sampler_runs_pipeline_shape() {
        let spec = ChainSpec::open_chain(12, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.136248, 0.216110);
        let state = crate::mps::ansatz_state(&spec, &params, 16).unwrap();
        let noise = NoiseModel::depolarizing(0.0, 0.01).with_uniform_readout(0.02);
        let synth = SyntheticNoisyBell::new(&spec, &state, &noise, 13).unwrap();
        let boot = BootstrapOptions {
            resamples: 50,
            seed: 1,
        };
        let (series, _cal) = synth
            .mitigated_series(&[0, 1, 2, 3], 40_000, 10_000, &boot)
            .unwrap();
        let fe = fit_exponential(&series).unwrap();
        assert!(fe.b > 0.0);
        // The m=1 point is already mitigated for readout, so it should sit
        // near the true energy times one fold's depolarizing survival.
        let truth = -20.139037;
        assert!(series.points[0].energy > truth * 1.02 && series.points[0].energy < 0.0);
        let fb_series = {
            let singlets = crate::mps::mps_singlets(12, 8).unwrap();
            let synth_ref = SyntheticNoisyBell::new(&spec, &singlets, &noise, 14).unwrap();
            synth_ref
                .mitigated_series(&[0, 1, 2, 3], 40_000, 10_000, &boot)
                .unwrap()
                .0
        };
        let fb = fit_exponential(&fb_series).unwrap();
        let out = rzne_correct(&fe, &fb, model::bell_pair_energy(&spec)).unwrap();
        assert!(
            (out.e_exp - truth).abs() / truth.abs() < 0.03,
            "synthetic rZNE {} vs {truth}",
            out.e_exp
        );
    }
}
