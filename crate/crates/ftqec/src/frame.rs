//! Pauli-frame propagation of fault sets through a circuit.
//!
//! All circuits here are Clifford with Pauli noise, so a single Pauli frame
//! (the accumulated error) fully determines every measured bit's deviation
//! from its fault-free value. Stabilizer randomness of transversal
//! measurements never enters any decoded quantity, so outcomes are recorded
//! as deviations: a fault-free run measures all zeros.

use crate::circuit::{Circuit, Op};
use crate::noise::{Fault, Payload};
use crate::pauli::{Pauli, PauliKind};

/// Result of one simulated shot: packed measurement deviation bits (circuit
/// order) plus the final frame over all circuit qubits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimRecord {
    outcomes: Vec<u64>,
    num_meas: usize,
    frame: Pauli,
}

impl SimRecord {
    pub fn outcome(&self, index: usize) -> bool {
        debug_assert!(index < self.num_meas);
        self.outcomes[index / 64] >> (index % 64) & 1 == 1
    }

    /// Gather outcome bits at `indices` into one word, LSB first.
    pub fn extract(&self, indices: &[usize]) -> u64 {
        extract_bits(&self.outcomes, indices)
    }

    pub fn frame(&self) -> &Pauli {
        &self.frame
    }

    pub fn into_frame(self) -> Pauli {
        self.frame
    }
}

fn extract_bits(words: &[u64], indices: &[usize]) -> u64 {
    debug_assert!(indices.len() <= 64);
    let mut out = 0u64;
    for (i, &idx) in indices.iter().enumerate() {
        out |= (words[idx / 64] >> (idx % 64) & 1) << i;
    }
    out
}

/// A resumable frame propagation: run to a pause step, read outcomes so far,
/// fold in corrections, continue.
#[derive(Debug)]
pub struct FrameRun<'c> {
    circuit: &'c Circuit,
    frame: Pauli,
    outcomes: Vec<u64>,
    next_step: usize,
    location: u32,
    meas_count: usize,
    faults: &'c [Fault],
    fault_ptr: usize,
}

impl<'c> FrameRun<'c> {
    /// Start a run. `faults` must be sorted by location (as produced by the
    /// samplers and enumerators).
    pub fn new(circuit: &'c Circuit, faults: &'c [Fault]) -> FrameRun<'c> {
        debug_assert!(faults.windows(2).all(|w| w[0].location <= w[1].location));
        FrameRun {
            circuit,
            frame: Pauli::identity(circuit.n_qubits()),
            outcomes: vec![0; circuit.num_measurements().div_ceil(64)],
            next_step: 0,
            location: 0,
            meas_count: 0,
            faults,
            fault_ptr: 0,
        }
    }

    /// Multiply an error into the frame right now, mapping `err`'s qubit `i`
    /// onto circuit qubit `block[i]`. Used for input errors, injected
    /// ancilla-block residuals (which are safe to fold in up front since an
    /// injected block has no operations before its splice step), and decoded
    /// corrections at pause points.
    pub fn inject(&mut self, block: &[usize], err: &Pauli) {
        debug_assert_eq!(block.len(), err.n_qubits());
        for (i, &q) in block.iter().enumerate() {
            if err.x_bit(i) {
                self.frame.set_x_bit(q, !self.frame.x_bit(q));
            }
            if err.z_bit(i) {
                self.frame.set_z_bit(q, !self.frame.z_bit(q));
            }
        }
    }

    /// Execute steps up to (excluding) `step`.
    pub fn run_until(&mut self, step: usize) {
        let stop = step.min(self.circuit.depth());
        while self.next_step < stop {
            let ops = &self.circuit.steps()[self.next_step];
            for op in ops {
                self.apply_op(op);
                while let Some(f) = self.faults.get(self.fault_ptr) {
                    if f.location != self.location {
                        break;
                    }
                    self.apply_fault(op, f.payload);
                    self.fault_ptr += 1;
                }
                self.location += 1;
            }
            self.next_step += 1;
        }
    }

    /// Execute the remaining steps and return the record.
    pub fn finish(mut self) -> SimRecord {
        self.run_until(self.circuit.depth());
        SimRecord {
            outcomes: self.outcomes,
            num_meas: self.meas_count,
            frame: self.frame,
        }
    }

    /// Deviation bits recorded so far (only measurements already executed).
    pub fn extract(&self, indices: &[usize]) -> u64 {
        debug_assert!(indices.iter().all(|&i| i < self.meas_count));
        extract_bits(&self.outcomes, indices)
    }

    pub fn frame(&self) -> &Pauli {
        &self.frame
    }

    fn apply_op(&mut self, op: &Op) {
        match op {
            Op::Cnot { control, target } => {
                if self.frame.x_bit(*control) {
                    self.frame.set_x_bit(*target, !self.frame.x_bit(*target));
                }
                if self.frame.z_bit(*target) {
                    self.frame.set_z_bit(*control, !self.frame.z_bit(*control));
                }
            }
            Op::PrepZ { qubit } | Op::PrepX { qubit } => {
                self.frame.set_x_bit(*qubit, false);
                self.frame.set_z_bit(*qubit, false);
            }
            Op::MeasZ { qubit, .. } => {
                // X or Y on the qubit flips a Z-basis outcome.
                let bit = self.frame.x_bit(*qubit);
                self.record_meas(bit);
                self.frame.set_x_bit(*qubit, false);
                self.frame.set_z_bit(*qubit, false);
            }
            Op::MeasX { qubit, .. } => {
                // Z or Y flips an X-basis outcome.
                let bit = self.frame.z_bit(*qubit);
                self.record_meas(bit);
                self.frame.set_x_bit(*qubit, false);
                self.frame.set_z_bit(*qubit, false);
            }
            Op::Idle { .. } => {}
        }
    }

    fn record_meas(&mut self, bit: bool) {
        if bit {
            self.outcomes[self.meas_count / 64] |= 1 << (self.meas_count % 64);
        }
        self.meas_count += 1;
    }

    fn apply_fault(&mut self, op: &Op, payload: Payload) {
        match payload {
            Payload::Single(kind) => {
                let (q, _) = op.qubits();
                self.mul_kind(q, kind);
            }
            Payload::Pair(ck, tk) => {
                if let Op::Cnot { control, target } = op {
                    self.mul_kind(*control, ck);
                    self.mul_kind(*target, tk);
                } else {
                    debug_assert!(false, "pair payload on a non-CNOT location");
                }
            }
            Payload::Flip => {
                debug_assert!(op.is_meas(), "flip payload on a non-measurement");
                let idx = self.meas_count - 1;
                self.outcomes[idx / 64] ^= 1 << (idx % 64);
            }
        }
    }

    fn mul_kind(&mut self, q: usize, kind: PauliKind) {
        let (x, z) = match kind {
            PauliKind::I => (false, false),
            PauliKind::X => (true, false),
            PauliKind::Y => (true, true),
            PauliKind::Z => (false, true),
        };
        if x {
            self.frame.set_x_bit(q, !self.frame.x_bit(q));
        }
        if z {
            self.frame.set_z_bit(q, !self.frame.z_bit(q));
        }
    }
}

/// One-shot convenience wrapper.
pub fn run_circuit(circuit: &Circuit, faults: &[Fault]) -> SimRecord {
    FrameRun::new(circuit, faults).finish()
}
