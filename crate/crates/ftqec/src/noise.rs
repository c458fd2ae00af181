//! Circuit-level depolarizing noise: fault classes per location kind,
//! stochastic fault sampling, and exhaustive enumeration of small fault sets.
//!
//! Location classes and rates: a CNOT faults with probability `p`, drawing
//! uniformly from the 15 non-identity two-qubit Paulis; `PrepZ` suffers an X
//! flip and `PrepX` a Z flip with probability `2p/3`; measurements flip their
//! outcome with probability `2p/3`; an idle qubit suffers X, Y, or Z with
//! probability `p/3` each. Faults attach after gates and preparations;
//! measurement faults flip the recorded bit only.

use rand::Rng;

use crate::circuit::{Circuit, Op};
use crate::pauli::PauliKind;

/// Fault class of a circuit location.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocationClass {
    Cnot,
    PrepZ,
    PrepX,
    MeasZ,
    MeasX,
    Idle,
}

impl LocationClass {
    pub const ALL: [LocationClass; 6] = [
        LocationClass::Cnot,
        LocationClass::PrepZ,
        LocationClass::PrepX,
        LocationClass::MeasZ,
        LocationClass::MeasX,
        LocationClass::Idle,
    ];

    pub fn of(op: &Op) -> LocationClass {
        match op {
            Op::Cnot { .. } => LocationClass::Cnot,
            Op::PrepZ { .. } => LocationClass::PrepZ,
            Op::PrepX { .. } => LocationClass::PrepX,
            Op::MeasZ { .. } => LocationClass::MeasZ,
            Op::MeasX { .. } => LocationClass::MeasX,
            Op::Idle { .. } => LocationClass::Idle,
        }
    }

    fn index(self) -> usize {
        match self {
            LocationClass::Cnot => 0,
            LocationClass::PrepZ => 1,
            LocationClass::PrepX => 2,
            LocationClass::MeasZ => 3,
            LocationClass::MeasX => 4,
            LocationClass::Idle => 5,
        }
    }
}

/// What a fault does at its location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Payload {
    /// Single-qubit Pauli (prep and idle locations).
    Single(PauliKind),
    /// Two-qubit Pauli on (control, target) of a CNOT.
    Pair(PauliKind, PauliKind),
    /// Measurement outcome flip.
    Flip,
}

/// One sampled or enumerated fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fault {
    /// Location index in step-major operation order.
    pub location: u32,
    pub payload: Payload,
}

/// Number of distinct fault payloads at a location of this class.
pub fn payload_count(class: LocationClass) -> usize {
    match class {
        LocationClass::Cnot => 15,
        LocationClass::Idle => 3,
        _ => 1,
    }
}

fn kind_of(i: u32) -> PauliKind {
    match i {
        0 => PauliKind::I,
        1 => PauliKind::X,
        2 => PauliKind::Y,
        _ => PauliKind::Z,
    }
}

/// The `k`-th payload of a class, `k < payload_count(class)`.
pub fn payload(class: LocationClass, k: usize) -> Payload {
    match class {
        LocationClass::Cnot => {
            let i = (k + 1) as u32; // skip I (x) I
            Payload::Pair(kind_of(i & 3), kind_of(i >> 2))
        }
        LocationClass::Idle => Payload::Single(kind_of(k as u32 + 1)),
        LocationClass::PrepZ => Payload::Single(PauliKind::X),
        LocationClass::PrepX => Payload::Single(PauliKind::Z),
        LocationClass::MeasZ | LocationClass::MeasX => Payload::Flip,
    }
}

/// Per-circuit location index: class of every location plus per-class lists,
/// precomputed once so sampling can skip over clean locations.
#[derive(Debug, Clone)]
pub struct LocationMap {
    classes: Vec<LocationClass>,
    by_class: [Vec<u32>; 6],
}

impl LocationMap {
    pub fn new(circuit: &Circuit) -> LocationMap {
        let mut classes = Vec::new();
        let mut by_class: [Vec<u32>; 6] = Default::default();
        for step in circuit.steps() {
            for op in step {
                let class = LocationClass::of(op);
                by_class[class.index()].push(classes.len() as u32);
                classes.push(class);
            }
        }
        LocationMap { classes, by_class }
    }

    pub fn n_locations(&self) -> usize {
        self.classes.len()
    }

    pub fn class_of(&self, location: usize) -> LocationClass {
        self.classes[location]
    }

    pub fn locations_of(&self, class: LocationClass) -> &[u32] {
        &self.by_class[class.index()]
    }

    /// Total number of single-fault events (locations weighted by alphabet).
    pub fn single_fault_count(&self) -> usize {
        self.classes.iter().map(|&c| payload_count(c)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    p: f64,
}

impl NoiseModel {
    /// Panics unless `0 <= p <= 1` and the derived rate `2p/3` is a
    /// probability, which holds for all p in range.
    pub fn new(p: f64) -> NoiseModel {
        assert!((0.0..=1.0).contains(&p), "p = {p} out of range");
        NoiseModel { p }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Total fault probability of one location of the given class.
    pub fn class_prob(&self, class: LocationClass) -> f64 {
        match class {
            LocationClass::Cnot | LocationClass::Idle => self.p,
            _ => 2.0 * self.p / 3.0,
        }
    }

    /// Sample a fault set over the mapped locations into `out` (cleared
    /// first, returned sorted by location).
    ///
    /// Sampling walks each class list with geometric gaps between faulty
    /// locations, which is distribution-identical to independent per-location
    /// draws but costs O(#faults) RNG calls instead of O(#locations).
    pub fn sample_into(&self, map: &LocationMap, rng: &mut impl Rng, out: &mut Vec<Fault>) {
        out.clear();
        for class in LocationClass::ALL {
            let q = self.class_prob(class);
            if q <= 0.0 {
                continue;
            }
            let list = map.locations_of(class);
            let alphabet = payload_count(class);
            if q >= 1.0 {
                for &location in list {
                    let k = rng.gen_range(0..alphabet);
                    out.push(Fault {
                        location,
                        payload: payload(class, k),
                    });
                }
                continue;
            }
            let denom = (1.0 - q).ln();
            let mut pos = 0usize;
            loop {
                let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
                let skip = (u.ln() / denom).floor();
                if skip >= (list.len() - pos) as f64 {
                    break;
                }
                pos += skip as usize;
                let k = if alphabet == 1 {
                    0
                } else {
                    rng.gen_range(0..alphabet)
                };
                out.push(Fault {
                    location: list[pos],
                    payload: payload(class, k),
                });
                pos += 1;
                if pos >= list.len() {
                    break;
                }
            }
        }
        out.sort_unstable_by_key(|f| f.location);
    }
}

/// Call `f` with every fault set of exactly `size` distinct locations, each
/// location expanded over its full payload alphabet. Sets are emitted in
/// ascending location order; `size = 0` yields one empty set.
pub fn for_each_fault_set(map: &LocationMap, size: usize, f: &mut impl FnMut(&[Fault])) {
    let mut buf: Vec<Fault> = Vec::with_capacity(size);
    fn recurse(
        map: &LocationMap,
        from: usize,
        remaining: usize,
        buf: &mut Vec<Fault>,
        f: &mut impl FnMut(&[Fault]),
    ) {
        if remaining == 0 {
            f(buf);
            return;
        }
        // Leave room for the remaining choices.
        for loc in from..=map.n_locations().saturating_sub(remaining) {
            let class = map.class_of(loc);
            for k in 0..payload_count(class) {
                buf.push(Fault {
                    location: loc as u32,
                    payload: payload(class, k),
                });
                recurse(map, loc + 1, remaining - 1, buf, f);
                buf.pop();
            }
        }
    }
    if size == 0 {
        f(&buf);
        return;
    }
    recurse(map, 0, size, &mut buf, f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CnotOrders, Op};
    use crate::code::StabilizerCode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_circuit() -> Circuit {
        // One CNOT and one idle location.
        let mut c = Circuit::new(2, [0, 1]);
        c.push_step(vec![Op::Cnot {
            control: 0,
            target: 1,
        }]);
        c.push_step(vec![Op::Idle { qubit: 0 }, Op::Idle { qubit: 1 }]);
        c
    }

    #[test]
    fn payload_alphabets() {
        let mut pairs = std::collections::HashSet::new();
        for k in 0..15 {
            match payload(LocationClass::Cnot, k) {
                Payload::Pair(a, b) => {
                    assert!(!(a == PauliKind::I && b == PauliKind::I));
                    pairs.insert((a, b));
                }
                other => panic!("unexpected payload {other:?}"),
            }
        }
        assert_eq!(pairs.len(), 15);
        assert_eq!(payload(LocationClass::PrepZ, 0), Payload::Single(PauliKind::X));
        assert_eq!(payload(LocationClass::PrepX, 0), Payload::Single(PauliKind::Z));
        assert_eq!(payload(LocationClass::MeasZ, 0), Payload::Flip);
        let idles: Vec<Payload> = (0..3).map(|k| payload(LocationClass::Idle, k)).collect();
        assert_eq!(
            idles,
            vec![
                Payload::Single(PauliKind::X),
                Payload::Single(PauliKind::Y),
                Payload::Single(PauliKind::Z)
            ]
        );
    }

    #[test]
    fn p_zero_samples_nothing_and_p_one_faults_everything() {
        let c = tiny_circuit();
        let map = LocationMap::new(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut out = Vec::new();
        NoiseModel::new(0.0).sample_into(&map, &mut rng, &mut out);
        assert!(out.is_empty());
        // p = 1: the CNOT and both idles fault with certainty (class prob 1.0
        // for both classes is only true for CNOT/idle; preps/meas would be
        // 2/3). This circuit has only prob-p classes.
        NoiseModel::new(1.0).sample_into(&map, &mut rng, &mut out);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| !matches!(
            f.payload,
            Payload::Pair(PauliKind::I, PauliKind::I)
        )));
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let cycle = crate::circuit::surface_cycle(
            &StabilizerCode::surface17(),
            3,
            CnotOrders::default(),
        )
        .unwrap();
        let map = LocationMap::new(&cycle.circuit);
        let noise = NoiseModel::new(1e-3);
        let run = |seed: u64, stream: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut out = Vec::new();
            let mut all = Vec::new();
            for _ in 0..500 {
                noise.sample_into(&map, &mut rng, &mut out);
                all.extend(out.iter().copied());
            }
            all
        };
        assert_eq!(run(11, 0), run(11, 0));
        assert_ne!(run(11, 0), run(11, 1));
        assert_ne!(run(11, 0), run(12, 0));
    }

    #[test]
    fn marginal_rates_match_the_model() {
        // Single idle location at p = 1.2e-3 over 1e6 samples: the empirical
        // fault fraction sits within 5 sigma and the three Paulis are
        // uniform.
        let mut c = Circuit::new(1, [0]);
        c.push_step(vec![Op::Idle { qubit: 0 }]);
        let map = LocationMap::new(&c);
        let p = 1.2e-3;
        let noise = NoiseModel::new(p);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut out = Vec::new();
        let shots = 1_000_000u32;
        let mut hits = 0u32;
        let mut by_kind = [0u32; 3];
        for _ in 0..shots {
            noise.sample_into(&map, &mut rng, &mut out);
            if let Some(f) = out.first() {
                hits += 1;
                match f.payload {
                    Payload::Single(PauliKind::X) => by_kind[0] += 1,
                    Payload::Single(PauliKind::Y) => by_kind[1] += 1,
                    Payload::Single(PauliKind::Z) => by_kind[2] += 1,
                    other => panic!("unexpected payload {other:?}"),
                }
            }
        }
        let sigma = (p * (1.0 - p) * shots as f64).sqrt();
        let diff = (hits as f64 - p * shots as f64).abs();
        assert!(diff < 5.0 * sigma, "fault fraction off: {hits} hits, {diff:.1} > 5x{sigma:.1}");
        for k in by_kind {
            let frac = k as f64 / hits as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.05, "kind fraction {frac}");
        }
    }

    #[test]
    fn enumeration_counts_match_the_census() {
        let c = tiny_circuit();
        let map = LocationMap::new(&c);
        // 15 (CNOT) + 3 + 3 (idles).
        assert_eq!(map.single_fault_count(), 21);
        let mut n = 0;
        for_each_fault_set(&map, 1, &mut |fs| {
            assert_eq!(fs.len(), 1);
            n += 1;
        });
        assert_eq!(n, 21);

        // Size 0: exactly one empty set.
        let mut n = 0;
        for_each_fault_set(&map, 0, &mut |fs| {
            assert!(fs.is_empty());
            n += 1;
        });
        assert_eq!(n, 1);

        // Size 2: sum over location pairs of alphabet products.
        let mut n = 0;
        let mut seen = std::collections::HashSet::new();
        for_each_fault_set(&map, 2, &mut |fs| {
            assert!(fs[0].location < fs[1].location);
            assert!(seen.insert((fs[0].location, fs[0].payload, fs[1].location, fs[1].payload)));
            n += 1;
        });
        assert_eq!(n, 15 * 3 + 15 * 3 + 3 * 3);

        // Surface-17 cycle: single-fault census equals the closed form.
        let cycle = crate::circuit::surface_cycle(
            &StabilizerCode::surface17(),
            1,
            CnotOrders::default(),
        )
        .unwrap();
        let census = cycle.circuit.location_census();
        let map = LocationMap::new(&cycle.circuit);
        let expect = census.cnot * 15
            + census.prep_z
            + census.prep_x
            + census.meas_z
            + census.meas_x
            + census.idle * 3;
        assert_eq!(map.single_fault_count(), expect);
        let mut n = 0;
        for_each_fault_set(&map, 1, &mut |_| n += 1);
        assert_eq!(n, expect);
    }

    #[test]
    fn hashable_payload() {
        // Payload must be usable as a set key for dedup tests above.
        let set: std::collections::HashSet<Payload> =
            [Payload::Flip, Payload::Single(PauliKind::X)].into();
        assert_eq!(set.len(), 2);
    }
}
