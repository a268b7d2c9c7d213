//! Circuit intermediate representation over the native gate set
//! `{RZ, SX, X, CNOT}` and every construction used by the pipeline: singlet
//! initialization, the three-CNOT `Rxyz` two-qubit rotation, the layered
//! variational ansatz for chains and two-leg ladders, measurement-basis
//! suffixes, exact inversion, and forward-backward folding for zero-noise
//! extrapolation.
//!
//! Fixed expansions (all equalities up to global phase):
//! `H = RZ(pi/2) SX RZ(pi/2)` and `SX^-1 = X * SX` (emitted as `SX` then `X`).

use crate::model::{self, ChainSpec, Geometry};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

/// One gate from the native set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NativeGate {
    Rz { qubit: usize, angle: f64 },
    Sx { qubit: usize },
    X { qubit: usize },
    Cnot { control: usize, target: usize },
}

impl NativeGate {
    /// Qubits touched by the gate: `(first, second)` with `second` set only
    /// for CNOT.
    pub fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            NativeGate::Rz { qubit, .. }
            | NativeGate::Sx { qubit }
            | NativeGate::X { qubit } => (qubit, None),
            NativeGate::Cnot { control, target } => (control, Some(target)),
        }
    }
}

/// An ordered list of native gates over `n_qubits` abstract qubits.
///
/// Circuits are immutable once built by the constructors in this module and
/// are safe to share across worker threads.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit {
    n_qubits: usize,
    gates: Vec<NativeGate>,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Self {
            n_qubits,
            gates: Vec::new(),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn gates(&self) -> &[NativeGate] {
        &self.gates
    }

    pub fn len(&self) -> usize {
        self.gates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gates.is_empty()
    }

    pub fn cnot_count(&self) -> usize {
        self.gates
            .iter()
            .filter(|g| matches!(g, NativeGate::Cnot { .. }))
            .count()
    }

    fn check(&self, q: usize) {
        assert!(
            q < self.n_qubits,
            "qubit index {q} out of range for {} qubits",
            self.n_qubits
        );
    }

    pub fn rz(&mut self, qubit: usize, angle: f64) -> &mut Self {
        self.check(qubit);
        assert!(angle.is_finite(), "RZ angle must be finite");
        self.gates.push(NativeGate::Rz { qubit, angle });
        self
    }

    pub fn sx(&mut self, qubit: usize) -> &mut Self {
        self.check(qubit);
        self.gates.push(NativeGate::Sx { qubit });
        self
    }

    pub fn x(&mut self, qubit: usize) -> &mut Self {
        self.check(qubit);
        self.gates.push(NativeGate::X { qubit });
        self
    }

    pub fn cnot(&mut self, control: usize, target: usize) -> &mut Self {
        self.check(control);
        self.check(target);
        assert_ne!(control, target, "CNOT control and target must differ");
        self.gates.push(NativeGate::Cnot { control, target });
        self
    }

    /// Hadamard via the fixed expansion `RZ(pi/2), SX, RZ(pi/2)`.
    pub fn hadamard(&mut self, qubit: usize) -> &mut Self {
        self.rz(qubit, FRAC_PI_2).sx(qubit).rz(qubit, FRAC_PI_2)
    }

    /// Inverse square root of X: `SX` then `X` (equals `SX` adjoint exactly).
    pub fn sx_dagger(&mut self, qubit: usize) -> &mut Self {
        self.sx(qubit).x(qubit)
    }

    pub fn extend(&mut self, other: &Circuit) -> &mut Self {
        assert_eq!(self.n_qubits, other.n_qubits, "qubit counts differ");
        self.gates.extend_from_slice(&other.gates);
        self
    }

    /// Line-oriented text form: one gate per line (`RZ q angle`, `SX q`,
    /// `X q`, `CNOT control target`), preceded by a `QUBITS n` header.
    pub fn to_text(&self) -> String {
        let mut out = format!("QUBITS {}\n", self.n_qubits);
        for g in &self.gates {
            match *g {
                NativeGate::Rz { qubit, angle } => {
                    out.push_str(&format!("RZ {qubit} {angle}\n"));
                }
                NativeGate::Sx { qubit } => out.push_str(&format!("SX {qubit}\n")),
                NativeGate::X { qubit } => out.push_str(&format!("X {qubit}\n")),
                NativeGate::Cnot { control, target } => {
                    out.push_str(&format!("CNOT {control} {target}\n"));
                }
            }
        }
        out
    }

    /// Parse the format emitted by [`Circuit::to_text`]. Lines starting with
    /// `#` and blank lines are ignored; a missing `QUBITS` header infers the
    /// count from the largest index used.
    pub fn from_text(text: &str) -> Result<Self> {
        let bad =
            |line: &str, why: &str| Error::Serialization(format!("bad circuit line {line:?}: {why}"));
        let mut n_qubits: Option<usize> = None;
        let mut gates = Vec::new();
        let mut max_q = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap();
            let idx = |parts: &mut std::str::SplitWhitespace| -> Result<usize> {
                parts
                    .next()
                    .ok_or_else(|| bad(line, "missing qubit index"))?
                    .parse()
                    .map_err(|_| bad(line, "bad qubit index"))
            };
            match head {
                "QUBITS" => {
                    n_qubits = Some(idx(&mut parts)?);
                }
                "RZ" => {
                    let qb = idx(&mut parts)?;
                    let angle: f64 = parts
                        .next()
                        .ok_or_else(|| bad(line, "missing angle"))?
                        .parse()
                        .map_err(|_| bad(line, "bad angle"))?;
                    max_q = max_q.max(qb);
                    gates.push(NativeGate::Rz { qubit: qb, angle });
                }
                "SX" => {
                    let qb = idx(&mut parts)?;
                    max_q = max_q.max(qb);
                    gates.push(NativeGate::Sx { qubit: qb });
                }
                "X" => {
                    let qb = idx(&mut parts)?;
                    max_q = max_q.max(qb);
                    gates.push(NativeGate::X { qubit: qb });
                }
                "CNOT" => {
                    let c = idx(&mut parts)?;
                    let t = idx(&mut parts)?;
                    max_q = max_q.max(c).max(t);
                    gates.push(NativeGate::Cnot {
                        control: c,
                        target: t,
                    });
                }
                other => return Err(bad(line, &format!("unknown gate {other}"))),
            }
            if parts.next().is_some() {
                return Err(bad(line, "trailing tokens"));
            }
        }
        let n = n_qubits.unwrap_or(if gates.is_empty() { 0 } else { max_q + 1 });
        if max_q >= n && !gates.is_empty() {
            return Err(Error::Serialization(format!(
                "gate references qubit {max_q} but header declares {n} qubits"
            )));
        }
        Ok(Self { n_qubits: n, gates })
    }
}

impl fmt::Display for Circuit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Circuit preparing the product of singlets `(|01> - |10>)/sqrt(2)` on the
/// pairs `(0,1), (2,3), ...`: per pair, `X` on both qubits, Hadamard on the
/// first, CNOT from first to second.
pub fn singlet_init_circuit(n_sites: usize) -> Result<Circuit> {
    if n_sites < 2 || n_sites % 2 != 0 {
        return Err(Error::Geometry(format!(
            "singlet initialization needs an even number of sites, got {n_sites}"
        )));
    }
    let mut c = Circuit::new(n_sites);
    for j in 0..n_sites / 2 {
        let (a, b) = (2 * j, 2 * j + 1);
        c.x(a).x(b).hadamard(a).cnot(a, b);
    }
    Ok(c)
}

/// Two-qubit rotation `exp(-i(tx/2) XX - i(ty/2) YY - i(tz/2) ZZ)` on qubits
/// `(0, 1)`, decomposed with exactly three CNOTs.
///
/// The action is symmetric under swapping the two qubits, so the wire
/// assignment carries no physical meaning.
pub fn rxyz_native(theta_x: f64, theta_y: f64, theta_z: f64) -> Circuit {
    let mut c = Circuit::new(2);
    append_rxyz(&mut c, 0, 1, theta_x, theta_y, theta_z);
    c
}

/// Append the 3-CNOT `Rxyz` block acting on sites `(a, b)` of `c`.
fn append_rxyz(c: &mut Circuit, a: usize, b: usize, tx: f64, ty: f64, tz: f64) {
    // a rides on the target wire, b on the control wire.
    c.cnot(b, a);
    c.rz(a, tz);
    c.hadamard(b);
    c.rz(b, tx + FRAC_PI_2);
    c.cnot(b, a);
    c.rz(a, -ty);
    c.hadamard(b);
    c.cnot(b, a);
    // Rx(pi/2) on a, Rx(-pi/2) on b, up to global phase.
    c.sx(a);
    c.sx_dagger(b);
}

/// Parameter-tying scheme for the layered ansatz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tying {
    /// One angle per parity and layer: `Rxyz(2t, 2t, 2t)`.
    Heisenberg,
    /// XY and Z angles independent: `Rxyz(2t1, 2t1, 2t2)`.
    Xxz,
    /// All three angles free.
    Free,
}

/// Variational angles for one layer. Entries are the `theta` parameters;
/// gates receive the doubled angles. `rung` is present only for ladders.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerAngles {
    pub odd: [f64; 3],
    pub even: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rung: Option<[f64; 3]>,
}

/// The full variational parameter set `{theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    layers: Vec<LayerAngles>,
    tying: Tying,
}

impl AnsatzParams {
    pub fn new(layers: Vec<LayerAngles>, tying: Tying) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("ansatz needs at least one layer".into()));
        }
        let tied = |t: &[f64; 3]| match tying {
            Tying::Heisenberg => t[0] == t[1] && t[1] == t[2],
            Tying::Xxz => t[0] == t[1],
            Tying::Free => true,
        };
        let uniform_rung =
            layers.iter().all(|l| l.rung.is_some()) || layers.iter().all(|l| l.rung.is_none());
        if !uniform_rung {
            return Err(Error::Argument(
                "rung angles must be present on every layer or on none".into(),
            ));
        }
        for l in &layers {
            let mut records = vec![&l.odd, &l.even];
            if let Some(r) = &l.rung {
                records.push(r);
            }
            if records.into_iter().any(|r| !tied(r)) {
                return Err(Error::Argument(format!(
                    "layer angles violate the {tying:?} tying constraint"
                )));
            }
        }
        Ok(Self { layers, tying })
    }

    /// Heisenberg-tied chain layers from `(theta_even, theta_odd)` pairs.
    pub fn heisenberg(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(e, o)| LayerAngles {
                    odd: [o; 3],
                    even: [e; 3],
                    rung: None,
                })
                .collect(),
            Tying::Heisenberg,
        )
    }

    /// One Heisenberg-tied layer from Table-style `(theta_even, theta_odd)`.
    pub fn heisenberg_single(theta_even: f64, theta_odd: f64) -> Self {
        Self::heisenberg(&[(theta_even, theta_odd)]).expect("one layer is valid")
    }

    /// XXZ-tied chain layers from `((even_xy, even_z), (odd_xy, odd_z))`.
    pub fn xxz(layers: &[((f64, f64), (f64, f64))]) -> Result<Self> {
        Self::new(
            layers
                .iter()
                .map(|&((exy, ez), (oxy, oz))| LayerAngles {
                    odd: [oxy, oxy, oz],
                    even: [exy, exy, ez],
                    rung: None,
                })
                .collect(),
            Tying::Xxz,
        )
    }

    /// Heisenberg-tied ladder layers from `(even, odd, rung)` triples.
    pub fn heisenberg_ladder(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(e, o, r)| LayerAngles {
                    odd: [o; 3],
                    even: [e; 3],
                    rung: Some([r; 3]),
                })
                .collect(),
            Tying::Heisenberg,
        )
    }

    /// XXZ-tied ladder layers from `((e_xy, e_z), (o_xy, o_z), (r_xy, r_z))`.
    pub fn xxz_ladder(layers: &[((f64, f64), (f64, f64), (f64, f64))]) -> Result<Self> {
        Self::new(
            layers
                .iter()
                .map(|&((exy, ez), (oxy, oz), (rxy, rz))| LayerAngles {
                    odd: [oxy, oxy, oz],
                    even: [exy, exy, ez],
                    rung: Some([rxy, rxy, rz]),
                })
                .collect(),
            Tying::Xxz,
        )
    }

    pub fn layers(&self) -> &[LayerAngles] {
        &self.layers
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn tying(&self) -> Tying {
        self.tying
    }

    pub fn has_rung(&self) -> bool {
        self.layers[0].rung.is_some()
    }

    /// Same structure with every angle set to zero: the rZNE reference
    /// circuit (identical gate layout, identity action).
    pub fn zeroed(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerAngles {
                    odd: [0.0; 3],
                    even: [0.0; 3],
                    rung: l.rung.map(|_| [0.0; 3]),
                })
                .collect(),
            tying: self.tying,
        }
    }

    /// Free parameters per layer for a given tying/geometry combination.
    pub fn dof_per_layer(tying: Tying, has_rung: bool) -> usize {
        let per_record = match tying {
            Tying::Heisenberg => 1,
            Tying::Xxz => 2,
            Tying::Free => 3,
        };
        per_record * if has_rung { 3 } else { 2 }
    }

    /// Flatten to the optimizer vector. Per layer the order is
    /// `even, odd[, rung]`, each record contributing its free angles.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            let mut records = vec![l.even, l.odd];
            if let Some(r) = l.rung {
                records.push(r);
            }
            for rec in records {
                match self.tying {
                    Tying::Heisenberg => v.push(rec[0]),
                    Tying::Xxz => v.extend([rec[0], rec[2]]),
                    Tying::Free => v.extend(rec),
                }
            }
        }
        v
    }

    /// Inverse of [`AnsatzParams::to_vector`].
    pub fn from_vector(tying: Tying, has_rung: bool, n_layers: usize, v: &[f64]) -> Result<Self> {
        let dof = Self::dof_per_layer(tying, has_rung);
        if v.len() != dof * n_layers {
            return Err(Error::Dimension(format!(
                "expected {} parameters, got {}",
                dof * n_layers,
                v.len()
            )));
        }
        let record = |chunk: &[f64]| match tying {
            Tying::Heisenberg => [chunk[0]; 3],
            Tying::Xxz => [chunk[0], chunk[0], chunk[1]],
            Tying::Free => [chunk[0], chunk[1], chunk[2]],
        };
        let per = match tying {
            Tying::Heisenberg => 1,
            Tying::Xxz => 2,
            Tying::Free => 3,
        };
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let base = l * dof;
            let even = record(&v[base..base + per]);
            let odd = record(&v[base + per..base + 2 * per]);
            let rung = has_rung.then(|| record(&v[base + 2 * per..base + 3 * per]));
            layers.push(LayerAngles { odd, even, rung });
        }
        Self::new(layers, tying)
    }

    /// Canonical representative under the gate's angle periodicity:
    /// Heisenberg-tied angles live in `[0, pi/2)` (a joint shift by `pi/2`
    /// only changes the global phase), independent angles in `[0, pi)`.
    pub fn normalized(&self) -> Self {
        let period = match self.tying {
            Tying::Heisenberg => FRAC_PI_2,
            _ => PI,
        };
        let fold = |t: [f64; 3]| {
            [
                t[0].rem_euclid(period),
                t[1].rem_euclid(period),
                t[2].rem_euclid(period),
            ]
        };
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerAngles {
                    odd: fold(l.odd),
                    even: fold(l.even),
                    rung: l.rung.map(fold),
                })
                .collect(),
            tying: self.tying,
        }
    }
}

/// The layered variational circuit: singlet initialization, then per layer
/// `Rxyz(2 theta_even)` on all connector bonds followed by
/// `Rxyz(2 theta_odd)` on all singlet-hosting bonds. For the two-leg ladder
/// a layer runs horizontal odd bonds, horizontal even bonds, then all rungs.
///
/// The connector gates act first within each layer: the odd bonds start in
/// eigenstates of their own gates, so the opposite order would make the
/// first layer's odd angles pure phases, contradicting the optimized
/// one-layer angles this family is known to reach.
pub fn build_ansatz(spec: &ChainSpec, params: &AnsatzParams) -> Result<Circuit> {
    match (spec.geometry(), params.has_rung()) {
        (Geometry::Chain, true) => {
            return Err(Error::Argument(
                "chain ansatz parameters must not carry rung angles".into(),
            ));
        }
        (Geometry::TwoLegLadder, false) => {
            return Err(Error::Argument(
                "ladder ansatz parameters need rung angles on every layer".into(),
            ));
        }
        _ => {}
    }
    let mut c = singlet_init_circuit(spec.n_sites())?;
    let odd = model::odd_bonds(spec);
    let even = model::even_bonds(spec);
    let rungs = model::rung_bonds(spec);
    for layer in params.layers() {
        match spec.geometry() {
            Geometry::Chain => {
                for b in &even {
                    let t = layer.even;
                    append_rxyz(&mut c, b.site_a, b.site_b, 2.0 * t[0], 2.0 * t[1], 2.0 * t[2]);
                }
                for b in &odd {
                    let t = layer.odd;
                    append_rxyz(&mut c, b.site_a, b.site_b, 2.0 * t[0], 2.0 * t[1], 2.0 * t[2]);
                }
            }
            Geometry::TwoLegLadder => {
                for b in &odd {
                    let t = layer.odd;
                    append_rxyz(&mut c, b.site_a, b.site_b, 2.0 * t[0], 2.0 * t[1], 2.0 * t[2]);
                }
                for b in &even {
                    let t = layer.even;
                    append_rxyz(&mut c, b.site_a, b.site_b, 2.0 * t[0], 2.0 * t[1], 2.0 * t[2]);
                }
                let t = layer.rung.expect("validated above");
                for b in &rungs {
                    append_rxyz(&mut c, b.site_a, b.site_b, 2.0 * t[0], 2.0 * t[1], 2.0 * t[2]);
                }
            }
        }
    }
    Ok(c)
}

/// Exact inverse: reversed gate order with each gate replaced by its inverse
/// in native gates (`RZ(-t)`; `SX -> SX, X`; `X` and `CNOT` self-inverse).
pub fn invert(c: &Circuit) -> Circuit {
    let mut inv = Circuit::new(c.n_qubits());
    for g in c.gates().iter().rev() {
        match *g {
            NativeGate::Rz { qubit, angle } => {
                inv.rz(qubit, -angle);
            }
            NativeGate::Sx { qubit } => {
                inv.sx_dagger(qubit);
            }
            NativeGate::X { qubit } => {
                inv.x(qubit);
            }
            NativeGate::Cnot { control, target } => {
                inv.cnot(control, target);
            }
        }
    }
    inv
}

/// A circuit folded as `U (U^-1 U)^n` for zero-noise extrapolation.
#[derive(Debug, Clone)]
pub struct FoldedCircuit {
    base: Circuit,
    inverse: Circuit,
    n_folds: usize,
}

impl FoldedCircuit {
    pub fn base(&self) -> &Circuit {
        &self.base
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    /// Total number of `U`/`U^-1` blocks, `m = 2n + 1`.
    pub fn m(&self) -> usize {
        2 * self.n_folds + 1
    }

    /// The `m` alternating segments `U, U^-1, U, ...`.
    pub fn segments(&self) -> impl Iterator<Item = &Circuit> {
        (0..self.m()).map(move |i| if i % 2 == 0 { &self.base } else { &self.inverse })
    }

    /// Flatten into a single circuit.
    pub fn to_circuit(&self) -> Circuit {
        let mut c = Circuit::new(self.base.n_qubits());
        for seg in self.segments() {
            c.extend(seg);
        }
        c
    }

    pub fn n_qubits(&self) -> usize {
        self.base.n_qubits()
    }
}

/// Fold `c` with `n_folds` forward-backward repetitions.
pub fn fold(c: &Circuit, n_folds: usize) -> FoldedCircuit {
    FoldedCircuit {
        inverse: invert(c),
        base: c.clone(),
        n_folds,
    }
}

/// Bond parity group used by parallel pairwise measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

/// Single-qubit measurement basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PauliBasis {
    X,
    Y,
    Z,
}

/// Measurement suffix appended to a state-preparation circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementBasis {
    /// Bell-basis readout (CNOT then H per pair) on the odd-parity pairs.
    BellOdd,
    /// Bell-basis readout on the even-parity pairs.
    BellEven,
    /// Every qubit rotated into the X basis.
    XBasis,
    /// Every qubit rotated into the Y basis.
    YBasis,
    /// Computational readout; appends nothing.
    ZBasis,
    /// One of the 9 two-qubit Pauli settings applied in parallel to every
    /// pair of one parity.
    TomoSetting {
        parity: Parity,
        basis_a: PauliBasis,
        basis_b: PauliBasis,
    },
}

/// Qubit pairs measured together for a parity group (chains only).
pub fn measured_pairs(spec: &ChainSpec, parity: Parity) -> Result<Vec<(usize, usize)>> {
    if spec.geometry() != Geometry::Chain {
        return Err(Error::Geometry(
            "pairwise parity measurement is defined for chain geometry only".into(),
        ));
    }
    let bonds = match parity {
        Parity::Odd => model::odd_bonds(spec),
        Parity::Even => model::even_bonds(spec),
    };
    Ok(bonds.into_iter().map(|b| (b.site_a, b.site_b)).collect())
}

fn append_basis_rotation(c: &mut Circuit, q: usize, basis: PauliBasis) {
    match basis {
        PauliBasis::X => {
            c.hadamard(q);
        }
        // H * S^dagger == RZ(pi/2) * SX exactly.
        PauliBasis::Y => {
            c.sx(q).rz(q, FRAC_PI_2);
        }
        PauliBasis::Z => {}
    }
}

/// Append the readout rotations for `basis` to a copy of `c`.
pub fn append_measurement_basis(
    c: &Circuit,
    spec: &ChainSpec,
    basis: MeasurementBasis,
) -> Result<Circuit> {
    let mut out = c.clone();
    match basis {
        MeasurementBasis::BellOdd | MeasurementBasis::BellEven => {
            let parity = if basis == MeasurementBasis::BellOdd {
                Parity::Odd
            } else {
                Parity::Even
            };
            for (a, b) in measured_pairs(spec, parity)? {
                out.cnot(a, b).hadamard(a);
            }
        }
        MeasurementBasis::XBasis => {
            for q in 0..out.n_qubits() {
                append_basis_rotation(&mut out, q, PauliBasis::X);
            }
        }
        MeasurementBasis::YBasis => {
            for q in 0..out.n_qubits() {
                append_basis_rotation(&mut out, q, PauliBasis::Y);
            }
        }
        MeasurementBasis::ZBasis => {}
        MeasurementBasis::TomoSetting {
            parity,
            basis_a,
            basis_b,
        } => {
            for (a, b) in measured_pairs(spec, parity)? {
                append_basis_rotation(&mut out, a, basis_a);
                append_basis_rotation(&mut out, b, basis_b);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rxyz_has_exactly_three_cnots() {
        for (tx, ty, tz) in [(0.0, 0.0, 0.0), (0.3, -1.2, 2.5), (6.9, 0.1, -0.1)] {
            let c = rxyz_native(tx, ty, tz);
            assert_eq!(c.cnot_count(), 3);
            assert_eq!(c.n_qubits(), 2);
        }
    }

    #[test]
    fn singlet_init_structure() {
        let c = singlet_init_circuit(8).unwrap();
        assert_eq!(c.cnot_count(), 4);
        assert!(singlet_init_circuit(7).is_err());
    }

    #[test]
    fn ansatz_cnot_budget_matches_folding() {
        // One-layer 102-site ansatz: 51 init CNOTs + 3 per bond over 101
        // bonds = 354; at m = 9 the folded circuit carries 3186 CNOTs.
        let spec = ChainSpec::open_chain(102, 1.0).unwrap();
        let params = AnsatzParams::heisenberg_single(0.133316, 0.216146);
        let u = build_ansatz(&spec, &params).unwrap();
        assert_eq!(u.cnot_count(), 354);
        let folded = fold(&u, 4);
        assert_eq!(folded.m(), 9);
        assert_eq!(folded.to_circuit().cnot_count(), 3186);
    }

    #[test]
    fn fold_zero_is_identity_structure() {
        let spec = ChainSpec::open_chain(4, 1.0).unwrap();
        let u = build_ansatz(&spec, &AnsatzParams::heisenberg_single(0.1, 0.2)).unwrap();
        let f = fold(&u, 0);
        assert_eq!(f.m(), 1);
        assert_eq!(f.to_circuit(), u);
        let f1 = fold(&u, 1);
        assert_eq!(f1.m(), 3);
        assert_eq!(f1.to_circuit().cnot_count(), 3 * u.cnot_count());
    }

    #[test]
    fn invert_simple_gates() {
        let mut c = Circuit::new(2);
        c.cnot(0, 1);
        assert_eq!(invert(&c).gates(), c.gates());
        let mut r = Circuit::new(1);
        r.rz(0, 0.3);
        let ri = invert(&r);
        assert_eq!(
            ri.gates(),
            &[NativeGate::Rz {
                qubit: 0,
                angle: -0.3
            }]
        );
    }

    #[test]
    fn bell_even_pair_count_open_chain() {
        let spec = ChainSpec::open_chain(10, 1.0).unwrap();
        let base = Circuit::new(10);
        let with_bells = append_measurement_basis(&base, &spec, MeasurementBasis::BellEven).unwrap();
        assert_eq!(with_bells.cnot_count(), 10 / 2 - 1);
        let odd = append_measurement_basis(&base, &spec, MeasurementBasis::BellOdd).unwrap();
        assert_eq!(odd.cnot_count(), 5);
    }

    #[test]
    fn bell_measurement_rejected_on_ladder() {
        let spec = ChainSpec::two_leg_ladder(6, 1.0).unwrap();
        let base = Circuit::new(6);
        assert!(append_measurement_basis(&base, &spec, MeasurementBasis::BellOdd).is_err());
    }

    #[test]
    fn tying_violations_rejected() {
        let bad = AnsatzParams::new(
            vec![LayerAngles {
                odd: [0.1, 0.2, 0.1],
                even: [0.1; 3],
                rung: None,
            }],
            Tying::Heisenberg,
        );
        assert!(bad.is_err());
        assert!(AnsatzParams::heisenberg(&[]).is_err());
    }

    #[test]
    fn vector_roundtrip() {
        let p = AnsatzParams::xxz(&[((0.1, 0.2), (0.3, 0.4)), ((0.5, 0.6), (0.7, 0.8))]).unwrap();
        let v = p.to_vector();
        assert_eq!(v, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]);
        let back = AnsatzParams::from_vector(Tying::Xxz, false, 2, &v).unwrap();
        assert_eq!(back, p);

        let lp = AnsatzParams::heisenberg_ladder(&[(0.1, 0.2, 0.3)]).unwrap();
        let lv = lp.to_vector();
        assert_eq!(lv, vec![0.1, 0.2, 0.3]);
        assert_eq!(
            AnsatzParams::from_vector(Tying::Heisenberg, true, 1, &lv).unwrap(),
            lp
        );
    }

    #[test]
    fn normalization_folds_into_periodic_cell() {
        let p = AnsatzParams::heisenberg_single(0.1 + FRAC_PI_2, -0.05);
        let n = p.normalized();
        let v = n.to_vector();
        assert!((v[0] - 0.1).abs() < 1e-12);
        assert!((v[1] - (FRAC_PI_2 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn mismatched_geometry_params_rejected() {
        let chain = ChainSpec::open_chain(4, 1.0).unwrap();
        let ladder_params = AnsatzParams::heisenberg_ladder(&[(0.1, 0.2, 0.3)]).unwrap();
        assert!(build_ansatz(&chain, &ladder_params).is_err());
        let ladder = ChainSpec::two_leg_ladder(6, 1.0).unwrap();
        let chain_params = AnsatzParams::heisenberg_single(0.1, 0.2);
        assert!(build_ansatz(&ladder, &chain_params).is_err());
    }

    #[test]
    fn text_roundtrip() {
        let spec = ChainSpec::open_chain(4, 0.5).unwrap();
        let u = build_ansatz(&spec, &AnsatzParams::heisenberg_single(0.11, 0.27)).unwrap();
        let text = u.to_text();
        let back = Circuit::from_text(&text).unwrap();
        assert_eq!(back, u);
        assert!(Circuit::from_text("WAT 0").is_err());
        // Headerless form infers the qubit count.
        let inferred = Circuit::from_text("X 0\nCNOT 0 3\n").unwrap();
        assert_eq!(inferred.n_qubits(), 4);
    }

    #[test]
    fn emitted_circuits_use_native_set_only() {
        // The gate enum enforces this statically; spot-check every builder
        // path stays in range.
        let spec = ChainSpec::periodic_chain(8, -0.3).unwrap();
        let params = AnsatzParams::xxz(&[((0.1, 0.2), (0.3, 0.4))]).unwrap();
        let u = build_ansatz(&spec, &params).unwrap();
        for g in u.gates() {
            let (a, b) = g.qubits();
            assert!(a < 8);
            if let Some(b) = b {
                assert!(b < 8);
            }
        }
    }
}
