//! Gate-level circuits on a fixed time grid, and the circuit builders for
//! every protocol: surface-code syndrome-measurement cycles, CSS codeword
//! preparation with verification, and Steane/Knill CNOT extended rectangles.
//!
//! A circuit is a rectangular schedule: at every time step, every live qubit
//! carries exactly one operation (explicit `Idle` included), because every
//! location is a fault site under circuit-level noise. Qubits become live
//! through `PrepZ`/`PrepX`, by being an input qubit (live at step 0), or by
//! being declared as an injected block (a block prepared and verified in a
//! separate sub-circuit, spliced in at a given step). Measurement ends a
//! qubit's liveness until the next preparation.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::code::{gf2_rref, StabilizerCode};

/// Measurement or preparation basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// One operation occupying one circuit location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Cnot { control: usize, target: usize },
    PrepZ { qubit: usize },
    PrepX { qubit: usize },
    MeasZ { qubit: usize, label: String },
    MeasX { qubit: usize, label: String },
    Idle { qubit: usize },
}

impl Op {
    /// Qubits this operation touches (one, or two for CNOT).
    pub fn qubits(&self) -> (usize, Option<usize>) {
        match *self {
            Op::Cnot { control, target } => (control, Some(target)),
            Op::PrepZ { qubit }
            | Op::PrepX { qubit }
            | Op::MeasZ { qubit, .. }
            | Op::MeasX { qubit, .. }
            | Op::Idle { qubit } => (qubit, None),
        }
    }

    pub fn is_meas(&self) -> bool {
        matches!(self, Op::MeasZ { .. } | Op::MeasX { .. })
    }

    pub fn is_prep(&self) -> bool {
        matches!(self, Op::PrepZ { .. } | Op::PrepX { .. })
    }
}

/// A recorded measurement: position in the circuit plus its label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasInfo {
    pub label: String,
    pub step: usize,
    pub qubit: usize,
    pub basis: Basis,
}

/// Location counts per operation class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LocationCensus {
    pub cnot: usize,
    pub prep_z: usize,
    pub prep_x: usize,
    pub meas_z: usize,
    pub meas_x: usize,
    pub idle: usize,
}

impl LocationCensus {
    pub fn total(&self) -> usize {
        self.cnot + self.prep_z + self.prep_x + self.meas_z + self.meas_x + self.idle
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CircuitError {
    #[error("step {step}: qubit {qubit} is used by two operations")]
    QubitCollision { step: usize, qubit: usize },
    #[error("step {step}: qubit {qubit} out of range (circuit has {n})")]
    QubitOutOfRange { step: usize, qubit: usize, n: usize },
    #[error("step {step}: CNOT control equals target ({qubit})")]
    CnotSelfLoop { step: usize, qubit: usize },
    #[error("step {step}: qubit {qubit} is live but has no operation")]
    LivenessGap { step: usize, qubit: usize },
    #[error("step {step}: qubit {qubit} acts before being prepared or declared")]
    NotLive { step: usize, qubit: usize },
    #[error("step {step}: qubit {qubit} prepared while already live")]
    DoublePrep { step: usize, qubit: usize },
    #[error("duplicate measurement label {0:?}")]
    DuplicateLabel(String),
    #[error("line {line}: {err}")]
    Parse { line: usize, err: String },
    #[error("label {label:?} points at (step {step}, qubit {qubit}) which holds no measurement")]
    LabelMismatch { label: String, step: usize, qubit: usize },
    #[error("{0} is not laid out as a rotated surface code: {1}")]
    NotRotatedSurface(String, String),
}

/// A fixed-depth circuit over `n_qubits` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Circuit {
    n_qubits: usize,
    input_qubits: Vec<usize>,
    injected: Vec<(usize, usize)>, // (qubit, step at which it becomes live)
    steps: Vec<Vec<Op>>,
    meas: Vec<MeasInfo>,
    live: Vec<bool>, // builder state: liveness after the last pushed step
}

impl Circuit {
    /// A new empty circuit. `input_qubits` are live from step 0 (data blocks
    /// handed to the circuit already encoded).
    pub fn new(n_qubits: usize, input_qubits: impl IntoIterator<Item = usize>) -> Circuit {
        let input_qubits: Vec<usize> = input_qubits.into_iter().collect();
        let mut live = vec![false; n_qubits];
        for &q in &input_qubits {
            live[q] = true;
        }
        Circuit {
            n_qubits,
            input_qubits,
            injected: Vec::new(),
            steps: Vec::new(),
            meas: Vec::new(),
            live,
        }
    }

    /// Declare that `qubit` is spliced in already-prepared at the start of
    /// `step` (its state comes from a separately simulated sub-circuit).
    pub fn declare_injected(&mut self, qubit: usize, step: usize) {
        self.injected.push((qubit, step));
    }

    /// Append a step consisting of exactly `ops`.
    pub fn push_step(&mut self, ops: Vec<Op>) {
        let step = self.steps.len();
        for (q, s) in &self.injected {
            if *s == step {
                self.live[*q] = true;
            }
        }
        for op in &ops {
            if let Op::MeasZ { qubit, label } | Op::MeasX { qubit, label } = op {
                self.meas.push(MeasInfo {
                    label: label.clone(),
                    step,
                    qubit: *qubit,
                    basis: if matches!(op, Op::MeasZ { .. }) {
                        Basis::Z
                    } else {
                        Basis::X
                    },
                });
            }
        }
        for op in &ops {
            match op {
                Op::PrepZ { qubit } | Op::PrepX { qubit } => self.live[*qubit] = true,
                Op::MeasZ { qubit, .. } | Op::MeasX { qubit, .. } => self.live[*qubit] = false,
                _ => {}
            }
        }
        self.steps.push(ops);
    }

    /// Append a step, adding an explicit `Idle` for every live qubit that
    /// `ops` does not mention.
    pub fn push_step_autofilled(&mut self, mut ops: Vec<Op>) {
        let step = self.steps.len();
        let mut touched = vec![false; self.n_qubits];
        for op in &ops {
            let (a, b) = op.qubits();
            touched[a] = true;
            if let Some(b) = b {
                touched[b] = true;
            }
        }
        let mut live_now = self.live.clone();
        for (q, s) in &self.injected {
            if *s == step {
                live_now[*q] = true;
            }
        }
        for q in 0..self.n_qubits {
            if live_now[q] && !touched[q] {
                ops.push(Op::Idle { qubit: q });
            }
        }
        self.push_step(ops);
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    pub fn steps(&self) -> &[Vec<Op>] {
        &self.steps
    }

    pub fn input_qubits(&self) -> &[usize] {
        &self.input_qubits
    }

    pub fn injected_blocks(&self) -> &[(usize, usize)] {
        &self.injected
    }

    /// Measurements in circuit order (step-major); the outcome vector of a
    /// simulated shot uses these indices.
    pub fn measurements(&self) -> &[MeasInfo] {
        &self.meas
    }

    pub fn num_measurements(&self) -> usize {
        self.meas.len()
    }

    /// Index into the outcome vector for a measurement label.
    pub fn meas_index(&self, label: &str) -> Option<usize> {
        self.meas.iter().position(|m| m.label == label)
    }

    pub fn location_census(&self) -> LocationCensus {
        let mut c = LocationCensus::default();
        for step in &self.steps {
            for op in step {
                match op {
                    Op::Cnot { .. } => c.cnot += 1,
                    Op::PrepZ { .. } => c.prep_z += 1,
                    Op::PrepX { .. } => c.prep_x += 1,
                    Op::MeasZ { .. } => c.meas_z += 1,
                    Op::MeasX { .. } => c.meas_x += 1,
                    Op::Idle { .. } => c.idle += 1,
                }
            }
        }
        c
    }

    /// Check the full schedule contract: qubit bounds, one op per live qubit
    /// per step (no collisions, no gaps), preparation before use, measurement
    /// ending liveness, unique labels.
    pub fn validate(&self) -> Result<(), CircuitError> {
        let n = self.n_qubits;
        let mut live = vec![false; n];
        for &q in &self.input_qubits {
            live[q] = true;
        }
        let mut labels: HashMap<&str, ()> = HashMap::new();
        for m in &self.meas {
            if labels.insert(m.label.as_str(), ()).is_some() {
                return Err(CircuitError::DuplicateLabel(m.label.clone()));
            }
        }
        for (step, ops) in self.steps.iter().enumerate() {
            for (q, s) in &self.injected {
                if *s == step {
                    live[*q] = true;
                }
            }
            let mut seen = vec![false; n];
            for op in ops {
                let (a, b) = op.qubits();
                for q in [Some(a), b].into_iter().flatten() {
                    if q >= n {
                        return Err(CircuitError::QubitOutOfRange { step, qubit: q, n });
                    }
                    if seen[q] {
                        return Err(CircuitError::QubitCollision { step, qubit: q });
                    }
                    seen[q] = true;
                }
                if let Op::Cnot { control, target } = op {
                    if control == target {
                        return Err(CircuitError::CnotSelfLoop {
                            step,
                            qubit: *control,
                        });
                    }
                }
                if op.is_prep() {
                    if live[a] {
                        return Err(CircuitError::DoublePrep { step, qubit: a });
                    }
                } else {
                    for q in [Some(a), b].into_iter().flatten() {
                        if !live[q] {
                            return Err(CircuitError::NotLive { step, qubit: q });
                        }
                    }
                }
            }
            for q in 0..n {
                if live[q] && !seen[q] {
                    return Err(CircuitError::LivenessGap { step, qubit: q });
                }
            }
            for op in ops {
                match op {
                    Op::PrepZ { qubit } | Op::PrepX { qubit } => live[*qubit] = true,
                    Op::MeasZ { qubit, .. } | Op::MeasX { qubit, .. } => live[*qubit] = false,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Render the text format: header, one section per step, then labels.
    /// Qubit ids and step numbers are 1-based in text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "qubits: {}", self.n_qubits);
        if !self.input_qubits.is_empty() {
            let ids: Vec<String> = self.input_qubits.iter().map(|q| (q + 1).to_string()).collect();
            let _ = writeln!(out, "inputs: {}", ids.join(" "));
        }
        for (q, s) in &self.injected {
            let _ = writeln!(out, "injected: {} at {}", q + 1, s + 1);
        }
        for (i, ops) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "\nstep {}:", i + 1);
            for op in ops {
                match op {
                    Op::Cnot { control, target } => {
                        let _ = writeln!(out, "cnot {} {}", control + 1, target + 1);
                    }
                    Op::PrepZ { qubit } => {
                        let _ = writeln!(out, "prepz {}", qubit + 1);
                    }
                    Op::PrepX { qubit } => {
                        let _ = writeln!(out, "prepx {}", qubit + 1);
                    }
                    Op::MeasZ { qubit, .. } => {
                        let _ = writeln!(out, "measz {}", qubit + 1);
                    }
                    Op::MeasX { qubit, .. } => {
                        let _ = writeln!(out, "measx {}", qubit + 1);
                    }
                    Op::Idle { qubit } => {
                        let _ = writeln!(out, "idle {}", qubit + 1);
                    }
                }
            }
        }
        let _ = writeln!(out, "\nlabels:");
        for m in &self.meas {
            let _ = writeln!(out, "{} = ({}, {})", m.label, m.step + 1, m.qubit + 1);
        }
        out
    }

    /// Parse the format produced by [`Circuit::to_text`].
    pub fn from_text(text: &str) -> Result<Circuit, CircuitError> {
        let mut n_qubits = None;
        let mut inputs: Vec<usize> = Vec::new();
        let mut injected: Vec<(usize, usize)> = Vec::new();
        let mut steps: Vec<Vec<(usize, Op)>> = Vec::new(); // (line, op) with placeholder labels
        let mut labels: Vec<(String, usize, usize, usize)> = Vec::new(); // label, step, qubit, line
        let mut in_labels = false;

        let err = |line: usize, msg: String| CircuitError::Parse { line, err: msg };
        let parse_id = |tok: &str, line: usize| -> Result<usize, CircuitError> {
            let v: usize = tok
                .parse()
                .map_err(|e| err(line, format!("bad integer {tok:?}: {e}")))?;
            if v == 0 {
                return Err(err(line, "ids are 1-based".into()));
            }
            Ok(v - 1)
        };

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("qubits:") {
                n_qubits = Some(
                    rest.trim()
                        .parse::<usize>()
                        .map_err(|e| err(line_no, format!("bad qubit count: {e}")))?,
                );
                continue;
            }
            if let Some(rest) = line.strip_prefix("inputs:") {
                for tok in rest.split_whitespace() {
                    inputs.push(parse_id(tok, line_no)?);
                }
                continue;
            }
            if let Some(rest) = line.strip_prefix("injected:") {
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 || parts[1] != "at" {
                    return Err(err(line_no, format!("bad injected line {line:?}")));
                }
                injected.push((parse_id(parts[0], line_no)?, parse_id(parts[2], line_no)?));
                continue;
            }
            if line.starts_with("step") && line.ends_with(':') {
                in_labels = false;
                steps.push(Vec::new());
                continue;
            }
            if line == "labels:" {
                in_labels = true;
                continue;
            }
            if in_labels {
                let (name, loc) = line
                    .split_once('=')
                    .ok_or_else(|| err(line_no, format!("bad label line {line:?}")))?;
                let loc = loc.trim().trim_start_matches('(').trim_end_matches(')');
                let (s, q) = loc
                    .split_once(',')
                    .ok_or_else(|| err(line_no, format!("bad label location {loc:?}")))?;
                labels.push((
                    name.trim().to_string(),
                    parse_id(s.trim(), line_no)?,
                    parse_id(q.trim(), line_no)?,
                    line_no,
                ));
                continue;
            }
            let step_ops = steps
                .last_mut()
                .ok_or_else(|| err(line_no, format!("operation {line:?} before any step")))?;
            let mut toks = line.split_whitespace();
            let kind = toks.next().unwrap();
            let mut next_id = || -> Result<usize, CircuitError> {
                let tok = toks
                    .next()
                    .ok_or_else(|| err(line_no, format!("missing qubit in {line:?}")))?;
                parse_id(tok, line_no)
            };
            let op = match kind {
                "cnot" => Op::Cnot {
                    control: next_id()?,
                    target: next_id()?,
                },
                "prepz" => Op::PrepZ { qubit: next_id()? },
                "prepx" => Op::PrepX { qubit: next_id()? },
                "measz" => Op::MeasZ {
                    qubit: next_id()?,
                    label: String::new(),
                },
                "measx" => Op::MeasX {
                    qubit: next_id()?,
                    label: String::new(),
                },
                "idle" => Op::Idle { qubit: next_id()? },
                other => return Err(err(line_no, format!("unknown operation {other:?}"))),
            };
            step_ops.push((line_no, op));
        }

        let n_qubits = n_qubits.ok_or_else(|| err(0, "missing qubits: header".into()))?;
        // Attach labels to measurements by (step, qubit).
        let mut by_pos: HashMap<(usize, usize), String> = HashMap::new();
        for (name, s, q, line_no) in labels {
            if by_pos.insert((s, q), name.clone()).is_some() {
                return Err(err(line_no, format!("two labels at step {}, qubit {}", s + 1, q + 1)));
            }
        }
        let mut circuit = Circuit::new(n_qubits, inputs);
        for (q, s) in injected {
            circuit.declare_injected(q, s);
        }
        for (step_idx, ops) in steps.into_iter().enumerate() {
            let mut resolved = Vec::with_capacity(ops.len());
            for (line_no, mut op) in ops {
                if let Op::MeasZ { qubit, label } | Op::MeasX { qubit, label } = &mut op {
                    match by_pos.remove(&(step_idx, *qubit)) {
                        Some(name) => *label = name,
                        None => {
                            return Err(err(
                                line_no,
                                format!("measurement at step {}, qubit {} has no label", step_idx + 1, *qubit + 1),
                            ))
                        }
                    }
                }
                resolved.push(op);
            }
            circuit.push_step(resolved);
        }
        if let Some(((s, q), label)) = by_pos.into_iter().next() {
            return Err(CircuitError::LabelMismatch {
                label,
                step: s + 1,
                qubit: q + 1,
            });
        }
        circuit.validate()?;
        Ok(circuit)
    }
}

// ---------------------------------------------------------------------------
// Rotated surface code layout and syndrome measurement cycle
// ---------------------------------------------------------------------------

/// Corner roles of a plaquette, used to schedule CNOT sub-steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corner {
    Nw,
    Ne,
    Sw,
    Se,
}

impl Corner {
    fn index(self) -> usize {
        match self {
            Corner::Nw => 0,
            Corner::Ne => 1,
            Corner::Sw => 2,
            Corner::Se => 3,
        }
    }
}

/// Per-type CNOT coupling orders for the four sub-steps of a cycle.
///
/// The default pair (X: NW,NE,SW,SE; Z: NW,SW,NE,SE) is collision-free on the
/// rotated layout and aligns two-qubit hook errors so they stay correctable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CnotOrders {
    pub x_order: [Corner; 4],
    pub z_order: [Corner; 4],
}

impl Default for CnotOrders {
    fn default() -> Self {
        CnotOrders {
            x_order: [Corner::Nw, Corner::Ne, Corner::Sw, Corner::Se],
            z_order: [Corner::Nw, Corner::Sw, Corner::Ne, Corner::Se],
        }
    }
}

/// One stabilizer plaquette: its generator index (syndrome bit) and the data
/// qubits at its four corner roles (boundary halves have two).
#[derive(Debug, Clone)]
pub struct Plaquette {
    pub generator_index: usize,
    pub corners: [Option<usize>; 4], // NW, NE, SW, SE data qubit ids (0-based)
}

/// Geometry of a rotated surface code recovered from its generator supports:
/// data qubit `q` (0-based) sits at row `q / d`, column `q % d`.
#[derive(Debug, Clone)]
pub struct SurfaceLayout {
    pub d: usize,
    pub x_plaquettes: Vec<Plaquette>,
    pub z_plaquettes: Vec<Plaquette>,
}

/// Recover plaquette geometry from the code's generator supports.
pub fn surface_layout(code: &StabilizerCode) -> Result<SurfaceLayout, CircuitError> {
    let d = code.d();
    let bad = |why: String| CircuitError::NotRotatedSurface(code.name().to_string(), why);
    if d * d != code.n() {
        return Err(bad(format!("n = {} is not d^2 = {}", code.n(), d * d)));
    }
    let coord = |q: usize| (q / d, q % d);

    let classify = |support: Vec<usize>, is_x: bool| -> Result<[Option<usize>; 4], CircuitError> {
        let mut cs: Vec<(usize, usize)> = support.iter().map(|&q| coord(q)).collect();
        cs.sort();
        match cs.len() {
            4 => {
                let (r, c) = cs[0];
                if cs == [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)] {
                    Ok([
                        Some(r * d + c),
                        Some(r * d + c + 1),
                        Some((r + 1) * d + c),
                        Some((r + 1) * d + c + 1),
                    ])
                } else {
                    Err(bad(format!("support {cs:?} is not a 2x2 plaquette")))
                }
            }
            2 => {
                let (r0, c0) = cs[0];
                let (r1, c1) = cs[1];
                if is_x && r0 == r1 && c1 == c0 + 1 {
                    // Horizontal pair: half-plaquette above the top row or
                    // below the bottom row.
                    if r0 == 0 {
                        Ok([None, None, Some(r0 * d + c0), Some(r0 * d + c1)])
                    } else if r0 == d - 1 {
                        Ok([Some(r0 * d + c0), Some(r0 * d + c1), None, None])
                    } else {
                        Err(bad(format!("horizontal pair {cs:?} not on a boundary")))
                    }
                } else if !is_x && c0 == c1 && r1 == r0 + 1 {
                    // Vertical pair: half-plaquette left or right of the grid.
                    if c0 == 0 {
                        Ok([None, Some(r0 * d + c0), None, Some(r1 * d + c0)])
                    } else if c0 == d - 1 {
                        Ok([Some(r0 * d + c0), None, Some(r1 * d + c0), None])
                    } else {
                        Err(bad(format!("vertical pair {cs:?} not on a boundary")))
                    }
                } else {
                    Err(bad(format!(
                        "weight-2 generator {cs:?} has the wrong orientation"
                    )))
                }
            }
            w => Err(bad(format!("generator weight {w} is not 2 or 4"))),
        }
    };

    let mut z_plaquettes = Vec::new();
    for (i, g) in code.z_generators().iter().enumerate() {
        z_plaquettes.push(Plaquette {
            generator_index: i, // Z generators hold the low syndrome block
            corners: classify(g.support(), false)?,
        });
    }
    let mut x_plaquettes = Vec::new();
    for (j, g) in code.x_generators().iter().enumerate() {
        x_plaquettes.push(Plaquette {
            generator_index: code.x_syndrome_bits() + j,
            corners: classify(g.support(), true)?,
        });
    }
    Ok(SurfaceLayout {
        d,
        x_plaquettes,
        z_plaquettes,
    })
}

/// A multi-round surface-code syndrome measurement circuit plus the indexing
/// needed to read one syndrome word per round out of the outcome vector.
#[derive(Debug, Clone)]
pub struct SurfaceCycle {
    pub circuit: Circuit,
    pub rounds: usize,
    /// `meas_index[round][generator_index]` -> outcome vector index.
    pub meas_index: Vec<Vec<usize>>,
    /// Ancilla qubit id for each generator index.
    pub ancilla: Vec<usize>,
}

/// Build `rounds` rounds of the 6-step syndrome measurement cycle: ancilla
/// preparation, four CNOT sub-steps, transversal ancilla readout.
///
/// X-stabilizer ancillas are prepared in `|+>` and act as CNOT controls into
/// the data; Z-stabilizer ancillas are prepared in `|0>` and take CNOTs from
/// the data.
pub fn surface_cycle(
    code: &StabilizerCode,
    rounds: usize,
    orders: CnotOrders,
) -> Result<SurfaceCycle, CircuitError> {
    let layout = surface_layout(code)?;
    let n = code.n();
    let m = code.num_generators();
    let mut circuit = Circuit::new(n + m, 0..n);
    let ancilla: Vec<usize> = (0..m).map(|j| n + j).collect();
    let mut meas_index = Vec::with_capacity(rounds);

    for round in 0..rounds {
        // Ancilla preparation.
        let mut prep = Vec::with_capacity(m);
        for p in &layout.z_plaquettes {
            prep.push(Op::PrepZ {
                qubit: ancilla[p.generator_index],
            });
        }
        for p in &layout.x_plaquettes {
            prep.push(Op::PrepX {
                qubit: ancilla[p.generator_index],
            });
        }
        circuit.push_step_autofilled(prep);

        // Four CNOT sub-steps.
        for sub in 0..4 {
            let mut ops = Vec::new();
            for p in &layout.x_plaquettes {
                if let Some(data) = p.corners[orders.x_order[sub].index()] {
                    ops.push(Op::Cnot {
                        control: ancilla[p.generator_index],
                        target: data,
                    });
                }
            }
            for p in &layout.z_plaquettes {
                if let Some(data) = p.corners[orders.z_order[sub].index()] {
                    ops.push(Op::Cnot {
                        control: data,
                        target: ancilla[p.generator_index],
                    });
                }
            }
            circuit.push_step_autofilled(ops);
        }

        // Transversal readout.
        let mut meas = Vec::with_capacity(m);
        let mut this_round = vec![0usize; m];
        let base = circuit.num_measurements();
        let mut count = 0usize;
        for j in 0..m {
            let label = format!("r{round}_g{j}");
            let is_z_block = j < code.x_syndrome_bits();
            this_round[j] = base + count;
            count += 1;
            meas.push(if is_z_block {
                Op::MeasZ {
                    qubit: ancilla[j],
                    label,
                }
            } else {
                Op::MeasX {
                    qubit: ancilla[j],
                    label,
                }
            });
        }
        circuit.push_step_autofilled(meas);
        meas_index.push(this_round);
    }

    circuit.validate()?;
    Ok(SurfaceCycle {
        circuit,
        rounds,
        meas_index,
        ancilla,
    })
}

// ---------------------------------------------------------------------------
// CSS codeword preparation and verification
// ---------------------------------------------------------------------------

fn support_mask(p: &crate::pauli::Pauli) -> u64 {
    let mut mask = 0u64;
    for q in p.support() {
        mask |= 1 << q;
    }
    mask
}

/// Build the bare (unverified) preparation circuit for `|0>`-bar or `|+>`-bar.
///
/// Row-reduce the X-type span that stabilizes the target state (`H_X` for
/// `|0>`, `H_X` plus logical X for `|+>`); prepare each pivot qubit in `|+>`
/// and every other qubit in `|0>`, then fan CNOTs out from each pivot along
/// its row. All CNOTs commute (pivot columns are singletons), so they are
/// packed greedily into collision-free steps.
pub fn css_prep(code: &StabilizerCode, basis: Basis) -> Circuit {
    let n = code.n();
    let mut rows: Vec<u64> = code.x_generators().iter().map(support_mask).collect();
    if basis == Basis::X {
        rows.push(support_mask(code.logical_x()));
    }
    let rref = gf2_rref(&rows);
    let pivots: Vec<usize> = rref.iter().map(|r| r.trailing_zeros() as usize).collect();

    let mut circuit = Circuit::new(n, []);
    let mut prep = Vec::with_capacity(n);
    for q in 0..n {
        if pivots.contains(&q) {
            prep.push(Op::PrepX { qubit: q });
        } else {
            prep.push(Op::PrepZ { qubit: q });
        }
    }
    circuit.push_step(prep);

    // Greedy schedule: each CNOT goes to the earliest step where both qubits
    // are free. `free[q]` is the first step at or after which q is available.
    let mut free = vec![1usize; n];
    let mut step_ops: Vec<Vec<Op>> = Vec::new();
    for (row, &pivot) in rref.iter().zip(&pivots) {
        for target in 0..n {
            if target != pivot && row >> target & 1 == 1 {
                let at = free[pivot].max(free[target]);
                if at > step_ops.len() {
                    step_ops.resize(at, Vec::new());
                }
                if at == step_ops.len() {
                    step_ops.push(Vec::new());
                }
                step_ops[at - 1].push(Op::Cnot {
                    control: pivot,
                    target,
                });
                free[pivot] = at + 1;
                free[target] = at + 1;
            }
        }
    }
    for ops in step_ops {
        circuit.push_step_autofilled(ops);
    }
    circuit
}

/// A verified logical ancilla preparation: the ancilla block plus one verifier
/// copy, coupled transversally, with the verifier measured out.
///
/// The accept rule is: every stabilizer parity of the verifier outcomes is 0
/// and the logical parity is 0 (a -1 logical eigenvalue means a logical fault
/// leaked in, so the block is rejected and re-prepared).
#[derive(Debug, Clone)]
pub struct VerifiedPrep {
    pub circuit: Circuit,
    pub basis: Basis,
    /// Qubits of the output ancilla block, in code order.
    pub block: Vec<usize>,
    /// Outcome-vector indices of the verifier measurements, in code order.
    pub verifier_meas: Vec<usize>,
    /// Parity checks over the verifier outcomes: all must be even to accept.
    /// The last mask is the logical-operator support.
    pub accept_masks: Vec<u64>,
}

/// Build the verified preparation of a `|0>`-bar (`Basis::Z`) or `|+>`-bar
/// (`Basis::X`) ancilla block.
///
/// For `|+>` the verifier copy is the CNOT control (Z errors on the ancilla
/// copy onto it and are caught in its X-basis readout); for `|0>` the
/// verifier is the CNOT target (X errors copy onto it and are caught in Z).
/// Either way the encoded ancilla state is untouched by a fault-free check.
pub fn verified_prep(code: &StabilizerCode, basis: Basis) -> VerifiedPrep {
    let n = code.n();
    let ancilla = css_prep(code, basis);
    let verifier = css_prep(code, basis);
    let depth = ancilla.depth().max(verifier.depth());

    let mut circuit = Circuit::new(2 * n, []);
    for step in 0..depth {
        let mut ops = Vec::new();
        if let Some(a_ops) = ancilla.steps().get(step) {
            ops.extend(a_ops.iter().cloned());
        }
        if let Some(v_ops) = verifier.steps().get(step) {
            for op in v_ops {
                ops.push(shift_op(op, n));
            }
        }
        circuit.push_step_autofilled(ops);
    }

    // Transversal coupling.
    let mut couple = Vec::with_capacity(n);
    for q in 0..n {
        couple.push(match basis {
            Basis::X => Op::Cnot {
                control: n + q,
                target: q,
            },
            Basis::Z => Op::Cnot {
                control: q,
                target: n + q,
            },
        });
    }
    circuit.push_step_autofilled(couple);

    // Verifier readout.
    let meas_base = circuit.num_measurements();
    let mut meas = Vec::with_capacity(n);
    for q in 0..n {
        let label = format!("v{q}");
        meas.push(match basis {
            Basis::X => Op::MeasX {
                qubit: n + q,
                label,
            },
            Basis::Z => Op::MeasZ {
                qubit: n + q,
                label,
            },
        });
    }
    circuit.push_step_autofilled(meas);
    circuit.validate().expect("verified prep circuit is well formed");

    let checks = match basis {
        Basis::X => code.x_generators(),
        Basis::Z => code.z_generators(),
    };
    let logical = match basis {
        Basis::X => code.logical_x(),
        Basis::Z => code.logical_z(),
    };
    let mut accept_masks: Vec<u64> = checks.iter().map(support_mask).collect();
    accept_masks.push(support_mask(logical));

    VerifiedPrep {
        circuit,
        basis,
        block: (0..n).collect(),
        verifier_meas: (meas_base..meas_base + n).collect(),
        accept_masks,
    }
}

fn shift_op(op: &Op, by: usize) -> Op {
    match op {
        Op::Cnot { control, target } => Op::Cnot {
            control: control + by,
            target: target + by,
        },
        Op::PrepZ { qubit } => Op::PrepZ { qubit: qubit + by },
        Op::PrepX { qubit } => Op::PrepX { qubit: qubit + by },
        Op::MeasZ { qubit, label } => Op::MeasZ {
            qubit: qubit + by,
            label: label.clone(),
        },
        Op::MeasX { qubit, label } => Op::MeasX {
            qubit: qubit + by,
            label: label.clone(),
        },
        Op::Idle { qubit } => Op::Idle { qubit: qubit + by },
    }
}

// ---------------------------------------------------------------------------
// CNOT extended rectangles (Steane-EC and Knill-EC)
// ---------------------------------------------------------------------------

/// Which error-correction gadget an exRec uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcStyle {
    Steane,
    Knill,
}

/// Which logical block an ancilla serves and where.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcUnit {
    Lec1,
    Lec2,
    Tec1,
    Tec2,
}

impl EcUnit {
    pub const ALL: [EcUnit; 4] = [EcUnit::Lec1, EcUnit::Lec2, EcUnit::Tec1, EcUnit::Tec2];

    fn tag(self) -> &'static str {
        match self {
            EcUnit::Lec1 => "lec1",
            EcUnit::Lec2 => "lec2",
            EcUnit::Tec1 => "tec1",
            EcUnit::Tec2 => "tec2",
        }
    }
}

/// A slot where a verified ancilla block is spliced into the main circuit.
#[derive(Debug, Clone)]
pub struct PrepSlot {
    pub unit: EcUnit,
    pub basis: Basis,
    /// Main-circuit qubit ids of the block, in code order.
    pub block: Vec<usize>,
    /// Step at whose start the block becomes live.
    pub inject_step: usize,
}

/// Measurement indexing for one EC unit.
#[derive(Debug, Clone)]
pub struct EcMeas {
    pub unit: EcUnit,
    /// Steane: the `|+>` block's Z readout. Knill: the measured data block's
    /// X readout. Outcome indices in code order.
    pub first: Vec<usize>,
    /// Steane: the `|0>` block's X readout. Knill: the `|+>` (Bell) block's Z
    /// readout. Outcome indices in code order.
    pub second: Vec<usize>,
}

/// A full CNOT extended rectangle: leading EC on both blocks, transversal
/// logical CNOT, trailing EC on both blocks.
#[derive(Debug, Clone)]
pub struct ExRec {
    pub style: EcStyle,
    pub main: Circuit,
    pub preps: Vec<PrepSlot>,
    pub ec_meas: Vec<EcMeas>,
    /// Input data blocks (control, target).
    pub block1: Vec<usize>,
    pub block2: Vec<usize>,
    /// Output blocks after the trailing ECs (same as inputs for Steane;
    /// the final teleported blocks for Knill).
    pub out_block1: Vec<usize>,
    pub out_block2: Vec<usize>,
}

/// Build the CNOT-exRec main circuit for the given EC style.
///
/// Steane-EC (depth 6 per exRec): each EC couples a verified `|+>` block via
/// CNOT(data -> A+) for X-error readout in Z, then a verified `|0>` block via
/// CNOT(A0 -> data) for Z-error readout in X; the logical CNOT runs in
/// parallel with the leading-EC readouts.
///
/// Knill-EC (depth 8): each EC entangles A+ and A0 into a logical Bell pair,
/// couples CNOT(data -> A+), and measures data in X and A+ in Z, teleporting
/// the state onto A0 up to a Pauli byproduct; one step absorbs the byproduct
/// before the logical CNOT acts on the teleported blocks.
pub fn cnot_exrec(code: &StabilizerCode, style: EcStyle) -> ExRec {
    match style {
        EcStyle::Steane => steane_exrec(code),
        EcStyle::Knill => knill_exrec(code),
    }
}

fn block_range(i: usize, n: usize) -> Vec<usize> {
    (i * n..(i + 1) * n).collect()
}

fn transversal_cnot(from: &[usize], to: &[usize]) -> Vec<Op> {
    from.iter()
        .zip(to)
        .map(|(&control, &target)| Op::Cnot { control, target })
        .collect()
}

fn transversal_meas(block: &[usize], basis: Basis, tag: &str, ops: &mut Vec<Op>) {
    for (q, &qubit) in block.iter().enumerate() {
        let label = format!("{tag}_q{q}");
        ops.push(match basis {
            Basis::Z => Op::MeasZ { qubit, label },
            Basis::X => Op::MeasX { qubit, label },
        });
    }
}

fn steane_exrec(code: &StabilizerCode) -> ExRec {
    let n = code.n();
    let d1 = block_range(0, n);
    let d2 = block_range(1, n);
    // Per EC unit: a |+> block and a |0> block.
    let blocks: Vec<(EcUnit, Vec<usize>, Vec<usize>)> = EcUnit::ALL
        .iter()
        .enumerate()
        .map(|(i, &unit)| (unit, block_range(2 + 2 * i, n), block_range(3 + 2 * i, n)))
        .collect();

    let mut main = Circuit::new(10 * n, d1.iter().chain(&d2).copied());
    let mut preps = Vec::new();
    for (unit, plus, zero) in &blocks {
        let (couple_plus, couple_zero) = match unit {
            EcUnit::Lec1 | EcUnit::Lec2 => (0, 1),
            EcUnit::Tec1 | EcUnit::Tec2 => (3, 4),
        };
        preps.push(PrepSlot {
            unit: *unit,
            basis: Basis::X,
            block: plus.clone(),
            inject_step: couple_plus,
        });
        preps.push(PrepSlot {
            unit: *unit,
            basis: Basis::Z,
            block: zero.clone(),
            inject_step: couple_zero,
        });
    }
    for p in &preps {
        for &q in &p.block {
            main.declare_injected(q, p.inject_step);
        }
    }

    let data_of = |unit: EcUnit| -> &Vec<usize> {
        match unit {
            EcUnit::Lec1 | EcUnit::Tec1 => &d1,
            EcUnit::Lec2 | EcUnit::Tec2 => &d2,
        }
    };

    // t0: leading ECs couple the |+> blocks.
    let mut ops = Vec::new();
    for (unit, plus, _) in &blocks[..2] {
        ops.extend(transversal_cnot(data_of(*unit), plus));
    }
    main.push_step_autofilled(ops);

    // t1: leading ECs couple the |0> blocks.
    let mut ops = Vec::new();
    for (unit, _, zero) in &blocks[..2] {
        ops.extend(transversal_cnot(zero, data_of(*unit)));
    }
    main.push_step_autofilled(ops);

    // t2: leading-EC readout in parallel with the logical CNOT.
    let mut ops = transversal_cnot(&d1, &d2);
    let mut ec_meas = Vec::new();
    for (unit, plus, zero) in &blocks[..2] {
        let from = main.num_measurements() + ops.iter().filter(|o| o.is_meas()).count();
        transversal_meas(plus, Basis::Z, &format!("{}_p", unit.tag()), &mut ops);
        let mid = from + n;
        transversal_meas(zero, Basis::X, &format!("{}_z", unit.tag()), &mut ops);
        ec_meas.push(EcMeas {
            unit: *unit,
            first: (from..mid).collect(),
            second: (mid..mid + n).collect(),
        });
    }
    main.push_step_autofilled(ops);

    // t3: trailing ECs couple the |+> blocks.
    let mut ops = Vec::new();
    for (unit, plus, _) in &blocks[2..] {
        ops.extend(transversal_cnot(data_of(*unit), plus));
    }
    main.push_step_autofilled(ops);

    // t4: trailing ECs couple the |0> blocks.
    let mut ops = Vec::new();
    for (unit, _, zero) in &blocks[2..] {
        ops.extend(transversal_cnot(zero, data_of(*unit)));
    }
    main.push_step_autofilled(ops);

    // t5: trailing-EC readout.
    let mut ops: Vec<Op> = Vec::new();
    for (unit, plus, zero) in &blocks[2..] {
        let from = main.num_measurements() + ops.iter().filter(|o| o.is_meas()).count();
        transversal_meas(plus, Basis::Z, &format!("{}_p", unit.tag()), &mut ops);
        let mid = from + n;
        transversal_meas(zero, Basis::X, &format!("{}_z", unit.tag()), &mut ops);
        ec_meas.push(EcMeas {
            unit: *unit,
            first: (from..mid).collect(),
            second: (mid..mid + n).collect(),
        });
    }
    main.push_step_autofilled(ops);

    main.validate().expect("steane exrec circuit is well formed");
    ExRec {
        style: EcStyle::Steane,
        main,
        preps,
        ec_meas,
        out_block1: d1.clone(),
        out_block2: d2.clone(),
        block1: d1,
        block2: d2,
    }
}

fn knill_exrec(code: &StabilizerCode) -> ExRec {
    let n = code.n();
    let d1 = block_range(0, n);
    let d2 = block_range(1, n);
    // Per EC unit: A+ (Bell half that gets measured) and A0 (output half).
    let blocks: Vec<(EcUnit, Vec<usize>, Vec<usize>)> = EcUnit::ALL
        .iter()
        .enumerate()
        .map(|(i, &unit)| (unit, block_range(2 + 2 * i, n), block_range(3 + 2 * i, n)))
        .collect();

    let mut main = Circuit::new(10 * n, d1.iter().chain(&d2).copied());
    let mut preps = Vec::new();
    for (unit, plus, zero) in &blocks {
        let bell_step = match unit {
            EcUnit::Lec1 | EcUnit::Lec2 => 0,
            EcUnit::Tec1 | EcUnit::Tec2 => 5,
        };
        preps.push(PrepSlot {
            unit: *unit,
            basis: Basis::X,
            block: plus.clone(),
            inject_step: bell_step,
        });
        preps.push(PrepSlot {
            unit: *unit,
            basis: Basis::Z,
            block: zero.clone(),
            inject_step: bell_step,
        });
    }
    for p in &preps {
        for &q in &p.block {
            main.declare_injected(q, p.inject_step);
        }
    }

    let lec = |i: usize| (&blocks[i].1, &blocks[i].2);
    let tec = |i: usize| (&blocks[2 + i].1, &blocks[2 + i].2);

    // t0: leading Bell pairs; data idles.
    let mut ops = Vec::new();
    for i in 0..2 {
        let (plus, zero) = lec(i);
        ops.extend(transversal_cnot(plus, zero));
    }
    main.push_step_autofilled(ops);

    // t1: couple data into the Bell halves.
    let mut ops = Vec::new();
    ops.extend(transversal_cnot(&d1, lec(0).0));
    ops.extend(transversal_cnot(&d2, lec(1).0));
    main.push_step_autofilled(ops);

    // t2: Bell measurement (data in X, A+ in Z).
    let mut ops: Vec<Op> = Vec::new();
    let mut ec_meas = Vec::new();
    for i in 0..2 {
        let unit = blocks[i].0;
        let data = if i == 0 { &d1 } else { &d2 };
        let from = main.num_measurements() + ops.iter().filter(|o| o.is_meas()).count();
        transversal_meas(data, Basis::X, &format!("{}_d", unit.tag()), &mut ops);
        let mid = from + n;
        transversal_meas(lec(i).0, Basis::Z, &format!("{}_p", unit.tag()), &mut ops);
        ec_meas.push(EcMeas {
            unit,
            first: (from..mid).collect(),
            second: (mid..mid + n).collect(),
        });
    }
    main.push_step_autofilled(ops);

    // t3: byproduct absorption on the teleported blocks.
    main.push_step_autofilled(Vec::new());

    // t4: logical CNOT between the teleported blocks.
    main.push_step_autofilled(transversal_cnot(lec(0).1, lec(1).1));

    // t5: trailing Bell pairs; teleported blocks idle.
    let mut ops = Vec::new();
    for i in 0..2 {
        let (plus, zero) = tec(i);
        ops.extend(transversal_cnot(plus, zero));
    }
    main.push_step_autofilled(ops);

    // t6: couple the teleported blocks into the trailing Bell halves.
    let mut ops = Vec::new();
    for i in 0..2 {
        ops.extend(transversal_cnot(lec(i).1, tec(i).0));
    }
    main.push_step_autofilled(ops);

    // t7: trailing Bell measurement.
    let mut ops: Vec<Op> = Vec::new();
    for i in 0..2 {
        let unit = blocks[2 + i].0;
        let from = main.num_measurements() + ops.iter().filter(|o| o.is_meas()).count();
        transversal_meas(lec(i).1, Basis::X, &format!("{}_d", unit.tag()), &mut ops);
        let mid = from + n;
        transversal_meas(tec(i).0, Basis::Z, &format!("{}_p", unit.tag()), &mut ops);
        ec_meas.push(EcMeas {
            unit,
            first: (from..mid).collect(),
            second: (mid..mid + n).collect(),
        });
    }
    main.push_step_autofilled(ops);

    main.validate().expect("knill exrec circuit is well formed");
    ExRec {
        style: EcStyle::Knill,
        main,
        preps,
        ec_meas,
        out_block1: tec(0).1.clone(),
        out_block2: tec(1).1.clone(),
        block1: d1,
        block2: d2,
    }
}

/// One error-correction gadget on a single logical block, used for gadget
/// oracles and fault-tolerance checks outside the full exRec context.
#[derive(Debug, Clone)]
pub struct SingleEc {
    pub style: EcStyle,
    pub main: Circuit,
    /// Input data block (the output block too for Steane).
    pub data: Vec<usize>,
    /// The verified `|+>` block (Steane: X-readout ancilla; Knill: the Bell
    /// half that gets measured).
    pub plus_block: Vec<usize>,
    /// The verified `|0>` block (Steane: Z-readout ancilla; Knill: the
    /// teleported output block).
    pub zero_block: Vec<usize>,
    /// Outcome indices: Steane A+ MeasZ / Knill data MeasX, in code order.
    pub first: Vec<usize>,
    /// Outcome indices: Steane A0 MeasX / Knill A+ MeasZ, in code order.
    pub second: Vec<usize>,
    /// Block carrying the corrected state when the circuit ends.
    pub out_block: Vec<usize>,
}

/// Build a single EC gadget: depth 3 for Steane (couple `|+>`, couple `|0>`,
/// read both out), depth 4 for Knill (Bell pair, couple data, Bell
/// measurement, then the byproduct-absorption idle step on the output block).
pub fn single_ec(code: &StabilizerCode, style: EcStyle) -> SingleEc {
    let n = code.n();
    let data = block_range(0, n);
    let plus = block_range(1, n);
    let zero = block_range(2, n);
    let mut main = Circuit::new(3 * n, data.iter().copied());

    match style {
        EcStyle::Steane => {
            for &q in &plus {
                main.declare_injected(q, 0);
            }
            for &q in &zero {
                main.declare_injected(q, 1);
            }
            main.push_step_autofilled(transversal_cnot(&data, &plus));
            main.push_step_autofilled(transversal_cnot(&zero, &data));
            let mut ops = Vec::new();
            transversal_meas(&plus, Basis::Z, "p", &mut ops);
            transversal_meas(&zero, Basis::X, "z", &mut ops);
            main.push_step_autofilled(ops);
        }
        EcStyle::Knill => {
            for &q in plus.iter().chain(&zero) {
                main.declare_injected(q, 0);
            }
            main.push_step_autofilled(transversal_cnot(&plus, &zero));
            main.push_step_autofilled(transversal_cnot(&data, &plus));
            let mut ops = Vec::new();
            transversal_meas(&data, Basis::X, "d", &mut ops);
            transversal_meas(&plus, Basis::Z, "p", &mut ops);
            main.push_step_autofilled(ops);
            main.push_step_autofilled(Vec::new());
        }
    }
    main.validate().expect("single ec circuit is well formed");

    let (first, second, out_block) = match style {
        EcStyle::Steane => ((0..n).collect(), (n..2 * n).collect(), data.clone()),
        EcStyle::Knill => ((0..n).collect(), (n..2 * n).collect(), zero.clone()),
    };
    SingleEc {
        style,
        main,
        data,
        plus_block: plus,
        zero_block: zero,
        first,
        second,
        out_block,
    }
}
