use rand::{RngExt, SeedableRng};
use xxz_vqe::circuits::{build_ansatz, AnsatzParams};
use xxz_vqe::dense::{expectation, run_exact};
use xxz_vqe::model::{build_hamiltonian, exact_ground_state, ChainSpec};
use xxz_vqe::optimize::{minimize_energy, MinimizeConfig};

fn best_of(spec: &ChainSpec, layers: usize, trials: u64, heis: bool) -> f64 {
    let bonds = build_hamiltonian(spec);
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
    let mut best = f64::INFINITY;
    for _ in 0..trials {
        let init = if heis {
            let pairs: Vec<(f64, f64)> = (0..layers)
                .map(|_| (rng.random_range(0.0..1.2), rng.random_range(0.0..1.2)))
                .collect();
            AnsatzParams::heisenberg(&pairs).unwrap()
        } else {
            let quads: Vec<((f64, f64), (f64, f64))> = (0..layers)
                .map(|_| ((rng.random_range(0.0..1.2), rng.random_range(0.0..1.2)),
                          (rng.random_range(0.0..1.2), rng.random_range(0.0..1.2))))
                .collect();
            AnsatzParams::xxz(&quads).unwrap()
        };
        let rec = minimize_energy(spec, &init, &MinimizeConfig::default(), |p| {
            let u = build_ansatz(spec, p)?;
            Ok(expectation(&run_exact(&u)?, &bonds))
        })
        .unwrap();
        best = best.min(rec.best_energy);
    }
    best
}

fn main() {
    for (delta, layers, heis) in [(1.0, 3, true), (0.5, 2, false), (0.0, 2, false), (-0.5, 2, false), (1.0, 2, false)] {
        let spec = ChainSpec::open_chain(6, delta).unwrap();
        let e_gs = exact_ground_state(&spec).unwrap().ground_energy();
        let best = best_of(&spec, layers, 16, heis);
        println!(
            "delta={delta} layers={layers}: best={best:.9} gs={e_gs:.9} rel={:.2e}",
            (best - e_gs).abs() / e_gs.abs()
        );
    }
}
