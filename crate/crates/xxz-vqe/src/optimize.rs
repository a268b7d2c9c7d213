//! Derivative-free optimization of the ansatz angles (Nelder-Mead for
//! deterministic evaluators, SPSA for shot-noise ones), the per-layer-count
//! accuracy sweep, and the 1/N thermodynamic-limit fit.

use crate::circuits::{self, AnsatzParams, Tying};
use crate::dense;
use crate::model::{self, ChainSpec, Geometry};
use crate::mps;
use crate::{Error, Result};
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};

/// Best point found and how the search got there.
#[derive(Debug, Clone)]
pub struct OptimizationRecord {
    pub best_params: AnsatzParams,
    pub best_energy: f64,
    pub evaluations: usize,
    /// `(evaluation index, energy)` each time the accepted best improved;
    /// non-increasing in energy by construction.
    pub trajectory: Vec<(usize, f64)>,
    /// False when the evaluation budget ran out before the tolerance was
    /// met; the record still carries the best point seen.
    pub converged: bool,
}

/// SPSA gain-sequence parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SpsaConfig {
    pub iterations: usize,
    pub a: f64,
    pub c: f64,
    pub stability: f64,
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self {
            iterations: 400,
            a: 0.15,
            c: 0.06,
            stability: 40.0,
            alpha: 0.602,
            gamma: 0.101,
        }
    }
}

#[derive(Debug, Clone)]
pub enum OptimizerMethod {
    /// Nelder-Mead with deterministic restarts; for exact evaluators.
    NelderMead,
    /// Simultaneous-perturbation stochastic approximation; for sampled
    /// evaluators.
    Spsa(SpsaConfig),
}

#[derive(Debug, Clone)]
pub struct MinimizeConfig {
    pub method: OptimizerMethod,
    /// Energy-spread tolerance between simplex iterations.
    pub f_tol: f64,
    pub max_evaluations: usize,
    /// Deterministic restart count (Nelder-Mead only).
    pub restarts: usize,
    pub seed: u64,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self {
            method: OptimizerMethod::NelderMead,
            f_tol: 1e-9,
            max_evaluations: 40_000,
            restarts: 4,
            seed: 0,
        }
    }
}

/// Minimize an energy evaluator over the ansatz angles starting from `init`.
///
/// The evaluator is called with fully-assembled parameter sets (tying and
/// geometry constraints preserved). Evaluator errors abort the search.
pub fn minimize_energy(
    spec: &ChainSpec,
    init: &AnsatzParams,
    config: &MinimizeConfig,
    mut evaluator: impl FnMut(&AnsatzParams) -> Result<f64>,
) -> Result<OptimizationRecord> {
    if (spec.geometry() == Geometry::TwoLegLadder) != init.has_rung() {
        return Err(Error::Argument(
            "initial parameters do not match the lattice geometry".into(),
        ));
    }
    let tying = init.tying();
    let has_rung = init.has_rung();
    let n_layers = init.layer_count();
    let x0 = init.to_vector();

    let mut evaluations = 0usize;
    let mut trajectory: Vec<(usize, f64)> = Vec::new();
    let mut best_x = x0.clone();
    let mut best_f = f64::INFINITY;

    {
        // Shared evaluation wrapper tracking the accepted-best sequence.
        let mut eval_vec = |x: &[f64],
                            evaluations: &mut usize,
                            trajectory: &mut Vec<(usize, f64)>,
                            best_x: &mut Vec<f64>,
                            best_f: &mut f64|
         -> Result<f64> {
            let params = AnsatzParams::from_vector(tying, has_rung, n_layers, x)?;
            let f = evaluator(&params)?;
            *evaluations += 1;
            if f < *best_f {
                *best_f = f;
                *best_x = x.to_vec();
                trajectory.push((*evaluations, f));
            }
            Ok(f)
        };

        match &config.method {
            OptimizerMethod::NelderMead => {
                let restarts = config.restarts.max(1);
                let offsets = [0.0, 0.06, -0.045, 0.11, -0.09, 0.17];
                for k in 0..restarts {
                    let delta = offsets[k % offsets.len()];
                    let start: Vec<f64> = x0
                        .iter()
                        .enumerate()
                        .map(|(i, v)| v + delta * (1.0 + 0.07 * i as f64))
                        .collect();
                    nelder_mead(
                        &mut |x| eval_vec(x, &mut evaluations, &mut trajectory, &mut best_x, &mut best_f),
                        &start,
                        0.05,
                        config.f_tol,
                        config.max_evaluations / restarts,
                    )?;
                }
                // Polish from the running best with a shrinking simplex.
                for step in [0.01, 0.001] {
                    let from = best_x.clone();
                    nelder_mead(
                        &mut |x| eval_vec(x, &mut evaluations, &mut trajectory, &mut best_x, &mut best_f),
                        &from,
                        step,
                        config.f_tol * 0.1,
                        config.max_evaluations / 4,
                    )?;
                }
            }
            OptimizerMethod::Spsa(sc) => {
                spsa(
                    &mut |x| eval_vec(x, &mut evaluations, &mut trajectory, &mut best_x, &mut best_f),
                    &x0,
                    sc,
                    config.seed,
                )?;
            }
        }
    }

    let converged = evaluations < config.max_evaluations;
    let best_params =
        AnsatzParams::from_vector(tying, has_rung, n_layers, &best_x)?.normalized();
    // Normalization only shifts angles by exact gate periods, so the energy
    // is unchanged; keep the evaluated value.
    Ok(OptimizationRecord {
        best_params,
        best_energy: best_f,
        evaluations,
        trajectory,
        converged,
    })
}

/// Nelder-Mead with the dimension-adaptive coefficients; runs until the
/// simplex's value spread falls below `f_tol` (relative to the best value)
/// or the evaluation budget is spent.
fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    initial_step: f64,
    f_tol: f64,
    max_evals: usize,
) -> Result<()> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::Argument("cannot optimize zero parameters".into()));
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 1.0 / (2.0 * nf), 1.0 - 1.0 / nf);

    let mut used = 0usize;
    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    let mut spent = |used: &mut usize| {
        *used += 1;
        *used >= max_evals
    };
    {
        let fx = f(x0)?;
        simplex.push((fx, x0.to_vec()));
        let _ = spent(&mut used);
    }
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += initial_step;
        let fx = f(&x)?;
        simplex.push((fx, x));
        if spent(&mut used) {
            return Ok(());
        }
    }
    loop {
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let f_low = simplex[0].0;
        let f_high = simplex[n].0;
        if (f_high - f_low).abs() <= f_tol * (1.0 + f_low.abs()) {
            return Ok(());
        }
        // Centroid of all but the worst.
        let mut centroid = vec![0.0; n];
        for (_, x) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / nf;
            }
        }
        let worst = simplex[n].1.clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst)
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_reflect = f(&reflect)?;
        if spent(&mut used) {
            return Ok(());
        }
        if f_reflect < simplex[0].0 {
            // Try expanding.
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&reflect)
                .map(|(c, r)| c + beta * (r - c))
                .collect();
            let f_expand = f(&expand)?;
            simplex[n] = if f_expand < f_reflect {
                (f_expand, expand)
            } else {
                (f_reflect, reflect)
            };
            if spent(&mut used) {
                return Ok(());
            }
        } else if f_reflect < simplex[n - 1].0 {
            simplex[n] = (f_reflect, reflect);
        } else {
            // Contract (outside if the reflection helped at all).
            let (towards, f_towards) = if f_reflect < simplex[n].0 {
                (reflect.clone(), f_reflect)
            } else {
                (worst.clone(), simplex[n].0)
            };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&towards)
                .map(|(c, t)| c + gamma * (t - c))
                .collect();
            let f_contract = f(&contract)?;
            if spent(&mut used) {
                return Ok(());
            }
            if f_contract < f_towards {
                simplex[n] = (f_contract, contract);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&entry.1)
                        .map(|(b, v)| b + delta * (v - b))
                        .collect();
                    let fx = f(&x)?;
                    *entry = (fx, x);
                    if spent(&mut used) {
                        return Ok(());
                    }
                }
            }
        }
    }
}

/// SPSA loop for stochastic evaluators.
fn spsa(
    f: &mut impl FnMut(&[f64]) -> Result<f64>,
    x0: &[f64],
    cfg: &SpsaConfig,
    seed: u64,
) -> Result<()> {
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed ^ 0x5b5a_0001);
    let mut x = x0.to_vec();
    let n = x.len();
    for k in 0..cfg.iterations {
        let kf = k as f64;
        let ck = cfg.c / (kf + 1.0).powf(cfg.gamma);
        let ak = cfg.a / (kf + 1.0 + cfg.stability).powf(cfg.alpha);
        let signs: Vec<f64> = (0..n)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let plus: Vec<f64> = x.iter().zip(&signs).map(|(v, s)| v + ck * s).collect();
        let minus: Vec<f64> = x.iter().zip(&signs).map(|(v, s)| v - ck * s).collect();
        let fp = f(&plus)?;
        let fm = f(&minus)?;
        let scale = (fp - fm) / (2.0 * ck);
        for (xi, s) in x.iter_mut().zip(&signs) {
            *xi -= ak * scale / s;
        }
    }
    // Evaluate the terminal iterate so it can claim the best slot.
    f(&x)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Layer sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerSweepRow {
    pub layers: usize,
    pub energy: f64,
    /// Relative ground-state energy error `|E* - E_gs| / |E_gs|`.
    pub energy_error: f64,
    /// Ground-state overlap; absent when the ground state is degenerate or
    /// out of reach for the backend.
    pub fidelity: Option<f64>,
}

/// Sites at or below which the sweep runs on the dense backend.
pub const LAYER_SWEEP_DENSE_MAX: usize = 16;

/// Optimize one to `max_layers` layers, warm-starting each depth from the
/// previous optimum padded with a near-zero layer, and report energy error
/// and ground-state fidelity per depth.
///
/// Heisenberg tying is used at `delta == 1`, XXZ tying otherwise. Chains
/// beyond [`LAYER_SWEEP_DENSE_MAX`] sites run on the MPS backend at bond cap
/// `chi` (ladders stay dense-only).
pub fn layer_sweep(spec: &ChainSpec, max_layers: usize, chi: usize) -> Result<Vec<LayerSweepRow>> {
    layer_sweep_with_config(spec, max_layers, chi, &MinimizeConfig::default())
}

pub fn layer_sweep_with_config(
    spec: &ChainSpec,
    max_layers: usize,
    chi: usize,
    config: &MinimizeConfig,
) -> Result<Vec<LayerSweepRow>> {
    if max_layers == 0 {
        return Err(Error::Argument("layer sweep needs at least one layer".into()));
    }
    let dense_backend = spec.n_sites() <= LAYER_SWEEP_DENSE_MAX;
    if !dense_backend && spec.geometry() == Geometry::TwoLegLadder {
        return Err(Error::Capability(
            "ladder layer sweeps are limited to the dense backend".into(),
        ));
    }
    let heisenberg = spec.delta() == 1.0;
    let bonds = model::build_hamiltonian(spec);

    // Ground-state reference.
    let (e_gs, gs_dense, gs_mps, degenerate) = if dense_backend {
        let gs = model::exact_ground_state(spec)?;
        let degenerate = gs.gap().is_some_and(|g| g < 1e-10);
        let state = gs
            .ground_vector
            .clone()
            .map(|v| dense::DenseState::from_amplitudes(spec.n_sites(), v))
            .transpose()?;
        (gs.ground_energy(), state, None, degenerate)
    } else {
        let schedule = mps::TebdSchedule::default_for(spec.n_sites(), chi);
        let (state, report) = mps::itebd_ground_state(spec, chi, &schedule)?;
        (report.energy, None, Some(state), false)
    };

    let mut rows = Vec::with_capacity(max_layers);
    let mut warm: Option<AnsatzParams> = None;
    for layers in 1..=max_layers {
        let init = next_init(spec, heisenberg, layers, warm.as_ref())?;
        let record = if dense_backend {
            minimize_energy(spec, &init, config, |p| {
                let u = circuits::build_ansatz(spec, p)?;
                Ok(dense::expectation(&dense::run_exact(&u)?, &bonds))
            })?
        } else {
            minimize_energy(spec, &init, config, |p| {
                Ok(mps::mps_ansatz_energy(spec, p, chi)?.energy)
            })?
        };
        let fidelity = if degenerate {
            None
        } else if let Some(gs_state) = &gs_dense {
            let ansatz =
                dense::run_exact(&circuits::build_ansatz(spec, &record.best_params)?)?;
            Some(dense::fidelity(gs_state, &ansatz)?)
        } else if let Some(gs_state) = &gs_mps {
            let ansatz = mps::ansatz_state(spec, &record.best_params, chi)?;
            Some(mps::mps_overlap(gs_state, &ansatz)?)
        } else {
            None
        };
        rows.push(LayerSweepRow {
            layers,
            energy: record.best_energy,
            energy_error: (record.best_energy - e_gs).abs() / e_gs.abs(),
            fidelity,
        });
        warm = Some(record.best_params);
    }
    Ok(rows)
}

fn next_init(
    spec: &ChainSpec,
    heisenberg: bool,
    layers: usize,
    warm: Option<&AnsatzParams>,
) -> Result<AnsatzParams> {
    let ladder = spec.geometry() == Geometry::TwoLegLadder;
    let pad = 1e-3;
    if let Some(prev) = warm {
        let mut layer_list = prev.layers().to_vec();
        while layer_list.len() < layers {
            layer_list.push(circuits::LayerAngles {
                odd: [pad; 3],
                even: [pad; 3],
                rung: ladder.then_some([pad; 3]),
            });
        }
        return AnsatzParams::new(layer_list, prev.tying());
    }
    match (heisenberg, ladder) {
        (true, false) => Ok(AnsatzParams::heisenberg(&vec![(0.1, 0.2); layers])?),
        (true, true) => Ok(AnsatzParams::heisenberg_ladder(&vec![(0.1, 0.2, 0.15); layers])?),
        (false, false) => Ok(AnsatzParams::xxz(&vec![((0.1, 0.1), (0.2, 0.2)); layers])?),
        (false, true) => Ok(AnsatzParams::xxz_ladder(&vec![
            ((0.1, 0.1), (0.2, 0.2), (0.15, 0.15));
            layers
        ])?),
    }
}

// ---------------------------------------------------------------------------
// Thermodynamic-limit fit
// ---------------------------------------------------------------------------

/// Linear fit of the energy density against 1/N:
/// `E/N = e_inf + slope / N`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThermoFit {
    pub e_inf: f64,
    pub slope: f64,
    /// Per-point residuals `E_i/N_i - fit(1/N_i)`, in input order.
    pub residuals: Vec<f64>,
}

pub fn thermo_fit(points: &[(usize, f64)]) -> Result<ThermoFit> {
    let mut distinct: Vec<usize> = points.iter().map(|&(n, _)| n).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Argument(format!(
            "thermodynamic fit needs at least 3 distinct sizes, got {}",
            distinct.len()
        )));
    }
    if points.iter().any(|&(n, _)| n == 0) {
        return Err(Error::Argument("size 0 in thermodynamic fit".into()));
    }
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    let m = points.len() as f64;
    for &(n, e) in points {
        let x = 1.0 / n as f64;
        let y = e / n as f64;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = m * sxx - sx * sx;
    if det.abs() < 1e-30 {
        return Err(Error::Argument("degenerate size distribution".into()));
    }
    let slope = (m * sxy - sx * sy) / det;
    let e_inf = (sy - slope * sx) / m;
    let residuals = points
        .iter()
        .map(|&(n, e)| {
            let x = 1.0 / n as f64;
            e / n as f64 - (e_inf + slope * x)
        })
        .collect();
    Ok(ThermoFit {
        e_inf,
        slope,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_evaluator(
        spec: &ChainSpec,
    ) -> impl FnMut(&AnsatzParams) -> Result<f64> + use<'_> {
        let bonds = model::build_hamiltonian(spec);
        move |p: &AnsatzParams| {
            let u = circuits::build_ansatz(spec, p)?;
            Ok(dense::expectation(&dense::run_exact(&u)?, &bonds))
        }
    }

    #[test]
    fn n4_single_layer_reaches_table_optimum() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let init = AnsatzParams::heisenberg_single(0.1, 0.2);
        let record =
            minimize_energy(&spec, &init, &MinimizeConfig::default(), dense_evaluator(&spec))
                .unwrap();
        assert!(
            (record.best_energy - (-6.464102)).abs() / 6.464102 < 1e-6,
            "E = {}",
            record.best_energy
        );
        let v = record.best_params.to_vector();
        assert!((v[0] - 0.151748).abs() < 2e-4, "theta_even {}", v[0]);
        assert!((v[1] - 0.215765).abs() < 2e-4, "theta_odd {}", v[1]);
        assert!(record.converged);
        // Accepted-point energies never increase.
        for w in record.trajectory.windows(2) {
            assert!(w[1].1 <= w[0].1);
        }
    }

    #[test]
    fn n10_single_layer_energy() {
        let spec = ChainSpec::open_chain(10, 1.0).unwrap();
        let init = AnsatzParams::heisenberg_single(0.1, 0.2);
        let record =
            minimize_energy(&spec, &init, &MinimizeConfig::default(), dense_evaluator(&spec))
                .unwrap();
        assert!(
            (record.best_energy - (-16.719307)).abs() < 1e-4,
            "E = {}",
            record.best_energy
        );
    }

    #[test]
    fn constant_evaluator_returns_init() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let init = AnsatzParams::heisenberg_single(0.1, 0.2);
        let record = minimize_energy(&spec, &init, &MinimizeConfig::default(), |_| Ok(7.25))
            .unwrap();
        assert_eq!(record.best_energy, 7.25);
        let v = record.best_params.to_vector();
        assert!((v[0] - 0.1).abs() < 1e-12 && (v[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn evaluator_errors_propagate() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let init = AnsatzParams::heisenberg_single(0.1, 0.2);
        let out = minimize_energy(&spec, &init, &MinimizeConfig::default(), |_| {
            Err(Error::Argument("boom".into()))
        });
        assert!(out.is_err());
    }

    #[test]
    fn spsa_handles_noisy_objective() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let init = AnsatzParams::heisenberg_single(0.12, 0.18);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(9);
        let mut noisy = dense_evaluator(&spec);
        let cfg = MinimizeConfig {
            method: OptimizerMethod::Spsa(SpsaConfig {
                iterations: 600,
                ..Default::default()
            }),
            seed: 3,
            ..Default::default()
        };
        let record = minimize_energy(&spec, &init, &cfg, |p| {
            Ok(noisy(p)? + 0.02 * (rng.random::<f64>() - 0.5))
        })
        .unwrap();
        // Within a couple percent of the optimum despite the noise floor.
        assert!(
            record.best_energy < -6.33,
            "SPSA best {}",
            record.best_energy
        );
    }

    #[test]
    fn layer_sweep_improves_with_depth() {
        let spec = ChainSpec::open_chain(6, 1.0).unwrap();
        let rows = layer_sweep(&spec, 2, 32).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].energy_error < rows[0].energy_error);
        assert!(rows[1].fidelity.unwrap() > rows[0].fidelity.unwrap());
        // Two layers reach the N=6 exact ground state.
        assert!(
            rows[1].energy_error < 1e-6,
            "two-layer error {}",
            rows[1].energy_error
        );
        // One layer matches the published table row.
        assert!((rows[0].energy - (-9.880996)).abs() < 1e-4);
        assert!((rows[0].fidelity.unwrap() - 0.9923).abs() < 1e-3);
    }

    #[test]
    fn thermo_fit_recovers_exact_line() {
        let points: Vec<(usize, f64)> = [20usize, 30, 40, 60, 80, 102]
            .iter()
            .map(|&n| (n, n as f64 * (-1.713 + 0.393 / n as f64)))
            .collect();
        let fit = thermo_fit(&points).unwrap();
        assert!((fit.e_inf - (-1.713)).abs() < 1e-12);
        assert!((fit.slope - 0.393).abs() < 1e-12);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        // Permutation invariance.
        let mut reversed = points.clone();
        reversed.reverse();
        let fit2 = thermo_fit(&reversed).unwrap();
        assert!((fit.e_inf - fit2.e_inf).abs() < 1e-14);
        // Constant density means zero slope.
        let flat: Vec<(usize, f64)> = [10usize, 20, 40].iter().map(|&n| (n, -2.0 * n as f64)).collect();
        let fit3 = thermo_fit(&flat).unwrap();
        assert!(fit3.slope.abs() < 1e-12);
        assert!((fit3.e_inf - (-2.0)).abs() < 1e-12);
        // Too few sizes rejected.
        assert!(thermo_fit(&points[..2]).is_err());
    }
}
