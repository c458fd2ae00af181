//! Baseline decoders and decoding protocols: syndrome lookup tables
//! (min-weight base fill plus hook-error overwrites), the naive pure-error
//! decoder, the repeated-measurement state machines, Wilson intervals, and
//! pseudo-threshold fitting.

use std::collections::HashMap;

use thiserror::Error;

use crate::circuit::Circuit;
use crate::code::StabilizerCode;
use crate::frame::FrameRun;
use crate::noise::{for_each_fault_set, LocationMap};
use crate::pauli::Pauli;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(
        "lookup table for {name} needs 2^{bits} entries; dense tables stop being \
         storable well before that (a distance-nine color code would already \
         require 8.8 exabytes)"
    )]
    TableTooBig { name: String, bits: usize },
    #[error(
        "two fault-reachable residuals share syndrome {syndrome:#x} on the {side} side \
         but carry different logical classes; the measurement circuit's CNOT ordering \
         is not fault-tolerantly decodable"
    )]
    HookConflict { side: char, syndrome: u32 },
    #[error("pseudo-threshold fit needs at least {needed} usable points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("pseudo-threshold fit produced a non-positive coefficient {a}")]
    BadFit { a: f64 },
    #[error("lookup file: {0}")]
    BadFile(String),
}

/// One CSS side of the table: recoveries for one error type indexed by the
/// opposite-type generator syndrome block.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Side {
    /// Protocol recovery mask per syndrome (hook overwrites applied).
    recovery: Vec<u64>,
    /// Min-weight representative per syndrome (never overwritten).
    mwr: Vec<u64>,
    /// Weight of `mwr`.
    weight: Vec<u8>,
}

impl Side {
    /// Fill by enumerating error masks in (weight, numeric value) order, so
    /// every entry is the canonical minimum-weight representative.
    fn fill(n: usize, check_masks: &[u64]) -> Side {
        let bits = check_masks.len();
        let entries = 1usize << bits;
        let mut recovery = vec![0u64; entries];
        let mut mwr = vec![0u64; entries];
        let mut weight = vec![0u8; entries];
        let mut filled = vec![false; entries];
        filled[0] = true;
        let mut remaining = entries - 1;
        'outer: for w in 1..=n {
            // Gosper's hack: all n-bit masks of popcount w, ascending.
            let mut mask = (1u64 << w) - 1;
            let limit = 1u64 << n;
            while mask < limit {
                let s = syndrome_of(mask, check_masks);
                if !filled[s as usize] {
                    filled[s as usize] = true;
                    recovery[s as usize] = mask;
                    mwr[s as usize] = mask;
                    weight[s as usize] = w as u8;
                    remaining -= 1;
                    if remaining == 0 {
                        break 'outer;
                    }
                }
                let c = mask & mask.wrapping_neg();
                let r = mask + c;
                mask = (((r ^ mask) >> 2) / c) | r;
            }
        }
        debug_assert_eq!(remaining, 0, "single-type errors span every syndrome");
        Side {
            recovery,
            mwr,
            weight,
        }
    }
}

fn syndrome_of(error_mask: u64, check_masks: &[u64]) -> u32 {
    let mut s = 0u32;
    for (j, &m) in check_masks.iter().enumerate() {
        s |= (((error_mask & m).count_ones() & 1) as u32) << j;
    }
    s
}

/// Syndrome lookup decoder for one code: a pair of CSS sub-tables behind a
/// combined-syndrome API. `entry[0]` is the identity and every entry's
/// syndrome equals its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    code_name: String,
    n: usize,
    x_bits: usize,
    z_bits: usize,
    /// X-error recoveries indexed by the Z-generator syndrome block.
    x_side: Side,
    /// Z-error recoveries indexed by the X-generator syndrome block.
    z_side: Side,
}

/// Support masks of the Z-type generators (checks on X errors).
fn z_check_masks(code: &StabilizerCode) -> Vec<u64> {
    code.z_generators().iter().map(|g| g.z_words()[0]).collect()
}

/// Support masks of the X-type generators (checks on Z errors).
fn x_check_masks(code: &StabilizerCode) -> Vec<u64> {
    code.x_generators().iter().map(|g| g.x_words()[0]).collect()
}

impl LookupTable {
    /// Min-weight table with no hook overwrites.
    pub fn build(code: &StabilizerCode) -> Result<LookupTable, DecoderError> {
        let bits = code.num_generators();
        if bits > 26 || code.n() > 64 {
            return Err(DecoderError::TableTooBig {
                name: code.name().to_string(),
                bits,
            });
        }
        Ok(LookupTable {
            code_name: code.name().to_string(),
            n: code.n(),
            x_bits: code.x_syndrome_bits(),
            z_bits: code.z_syndrome_bits(),
            x_side: Side::fill(code.n(), &z_check_masks(code)),
            z_side: Side::fill(code.n(), &x_check_masks(code)),
        })
    }

    /// Min-weight table with hook-error overwrites: every fault set of at
    /// most `max_faults` faults in `measurement_circuit` is propagated; a
    /// residual data error of weight above `max_faults` overwrites its
    /// syndrome's entry when the stored recovery would leave a logical
    /// error on it. Two reachable residuals with equal syndrome but
    /// different logical class abort the build.
    ///
    /// The circuit's data block must occupy qubits `0..code.n()` (true for
    /// the syndrome measurement cycles built here).
    pub fn build_with_hooks(
        code: &StabilizerCode,
        measurement_circuit: &Circuit,
        max_faults: usize,
    ) -> Result<LookupTable, DecoderError> {
        let mut table = LookupTable::build(code)?;
        let n = code.n();
        let data_mask = (1u64 << n) - 1;
        let z_checks = z_check_masks(code);
        let x_checks = x_check_masks(code);
        let zl = code.logical_z().z_words()[0];
        let xl = code.logical_x().x_words()[0];
        let map = LocationMap::new(measurement_circuit);

        // Logical class already seen per syndrome, per side (2 = unseen).
        let mut seen_x = vec![2u8; 1 << table.x_bits];
        let mut seen_z = vec![2u8; 1 << table.z_bits];
        let mut conflict: Option<DecoderError> = None;

        for size in 1..=max_faults {
            for_each_fault_set(&map, size, &mut |faults| {
                if conflict.is_some() {
                    return;
                }
                let rec = FrameRun::new(measurement_circuit, faults).finish();
                let ex = rec.frame().x_words()[0] & data_mask;
                let ez = rec.frame().z_words()[0] & data_mask;
                for (mask, checks, logical, seen, side, tag) in [
                    (ex, &z_checks, zl, &mut seen_x, &mut table.x_side, 'X'),
                    (ez, &x_checks, xl, &mut seen_z, &mut table.z_side, 'Z'),
                ] {
                    let s = syndrome_of(mask, checks) as usize;
                    let class = ((mask & logical).count_ones() & 1) as u8;
                    match seen[s] {
                        2 => seen[s] = class,
                        c if c != class => {
                            conflict = Some(DecoderError::HookConflict {
                                side: tag,
                                syndrome: s as u32,
                            });
                            return;
                        }
                        _ => {}
                    }
                    let stored = ((side.recovery[s] & logical).count_ones() & 1) as u8;
                    if mask.count_ones() as usize > max_faults && class != stored {
                        side.recovery[s] = mask;
                    }
                }
            });
            if let Some(e) = conflict.take() {
                return Err(e);
            }
        }
        Ok(table)
    }

    pub fn code_name(&self) -> &str {
        &self.code_name
    }

    pub fn x_bits(&self) -> usize {
        self.x_bits
    }

    pub fn z_bits(&self) -> usize {
        self.z_bits
    }

    /// Protocol recovery masks for the two syndrome blocks: X-error support
    /// and Z-error support over the data qubits.
    pub fn recovery_masks(&self, s_x: u32, s_z: u32) -> (u64, u64) {
        (
            self.x_side.recovery[s_x as usize],
            self.z_side.recovery[s_z as usize],
        )
    }

    /// Min-weight representative masks (ignores hook overwrites).
    pub fn mwr_masks(&self, s_x: u32, s_z: u32) -> (u64, u64) {
        (self.x_side.mwr[s_x as usize], self.z_side.mwr[s_z as usize])
    }

    /// Protocol recovery as a Pauli.
    pub fn decode(&self, s_x: u32, s_z: u32) -> Pauli {
        let (ex, ez) = self.recovery_masks(s_x, s_z);
        pauli_from_masks(self.n, ex, ez)
    }

    /// Combined-syndrome query: low block indexes the X side.
    pub fn decode_combined(&self, s: u32) -> Pauli {
        let s_x = s & ((1 << self.x_bits) - 1);
        let s_z = s >> self.x_bits;
        self.decode(s_x, s_z)
    }

    /// Min-weight representative as a Pauli.
    pub fn min_weight_rep(&self, s_x: u32, s_z: u32) -> Pauli {
        let (ex, ez) = self.mwr_masks(s_x, s_z);
        pauli_from_masks(self.n, ex, ez)
    }

    pub fn split_syndrome(&self, s: u32) -> (u32, u32) {
        (s & ((1 << self.x_bits) - 1), s >> self.x_bits)
    }

    /// Logical class of `residual` after composing this table's own
    /// fault-free recovery for its syndrome: (needs logical X, needs
    /// logical Z). This is the decode a zero-fault run of the protocol
    /// would apply, so hook overwrites count as corrections, not failures.
    pub fn ideal_class(&self, code: &StabilizerCode, residual: &Pauli) -> (bool, bool) {
        let (s_x, s_z) = self.split_syndrome(code.syndrome(residual));
        let closed = residual.product(&self.decode(s_x, s_z));
        code.logical_class(&closed)
    }

    /// Serialize: text header, then little-endian entry blocks.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(
            format!(
                "ftqec-lut v1\ncode: {}\nn: {}\nx_bits: {}\nz_bits: {}\n\n",
                self.code_name, self.n, self.x_bits, self.z_bits
            )
            .as_bytes(),
        );
        for side in [&self.x_side, &self.z_side] {
            for i in 0..side.recovery.len() {
                out.extend_from_slice(&side.recovery[i].to_le_bytes());
                out.extend_from_slice(&side.mwr[i].to_le_bytes());
                out.push(side.weight[i]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LookupTable, DecoderError> {
        let bad = |m: &str| DecoderError::BadFile(m.to_string());
        let header_end = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| bad("missing header terminator"))?;
        let header = std::str::from_utf8(&bytes[..header_end])
            .map_err(|_| bad("header is not UTF-8"))?;
        let mut lines = header.lines();
        if lines.next() != Some("ftqec-lut v1") {
            return Err(bad("unknown format version"));
        }
        let mut fields: HashMap<&str, &str> = HashMap::new();
        for line in lines {
            let (k, v) = line.split_once(':').ok_or_else(|| bad("bad header line"))?;
            fields.insert(k.trim(), v.trim());
        }
        let get = |k: &str| -> Result<&str, DecoderError> {
            fields.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")))
        };
        let code_name = get("code")?.to_string();
        let n: usize = get("n")?.parse().map_err(|_| bad("bad n"))?;
        let x_bits: usize = get("x_bits")?.parse().map_err(|_| bad("bad x_bits"))?;
        let z_bits: usize = get("z_bits")?.parse().map_err(|_| bad("bad z_bits"))?;
        let mut pos = header_end + 2;
        let mut read_side = |bits: usize| -> Result<Side, DecoderError> {
            let entries = 1usize << bits;
            let mut side = Side {
                recovery: Vec::with_capacity(entries),
                mwr: Vec::with_capacity(entries),
                weight: Vec::with_capacity(entries),
            };
            for _ in 0..entries {
                if pos + 17 > bytes.len() {
                    return Err(bad("truncated entry block"));
                }
                side.recovery
                    .push(u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()));
                side.mwr
                    .push(u64::from_le_bytes(bytes[pos + 8..pos + 16].try_into().unwrap()));
                side.weight.push(bytes[pos + 16]);
                pos += 17;
            }
            Ok(side)
        };
        let x_side = read_side(x_bits)?;
        let z_side = read_side(z_bits)?;
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(LookupTable {
            code_name,
            n,
            x_bits,
            z_bits,
            x_side,
            z_side,
        })
    }
}

pub(crate) fn pauli_from_masks(n: usize, x_mask: u64, z_mask: u64) -> Pauli {
    let mut p = Pauli::identity(n);
    for q in 0..n {
        if x_mask >> q & 1 == 1 {
            p.set_x_bit(q, true);
        }
        if z_mask >> q & 1 == 1 {
            p.set_z_bit(q, true);
        }
    }
    p
}

/// Exact minimum weights of all errors with weight at most `max_w`, keyed by
/// combined syndrome. Answers "does the output differ from a codeword by an
/// error of weight <= s" exactly, including Y-overlap cases a per-side
/// decomposition would overcount.
#[derive(Debug, Clone)]
pub struct SmallWeightSyndromes {
    map: HashMap<u32, u8>,
    max_w: usize,
}

impl SmallWeightSyndromes {
    pub fn build(code: &StabilizerCode, max_w: usize) -> SmallWeightSyndromes {
        let n = code.n();
        let mut map: HashMap<u32, u8> = HashMap::new();
        map.insert(0, 0);
        let mut supports: Vec<Vec<usize>> = vec![Vec::new()];
        for w in 1..=max_w {
            let mut next = Vec::new();
            for sup in &supports {
                let start = sup.last().map_or(0, |&q| q + 1);
                for q in start..n {
                    let mut s = sup.clone();
                    s.push(q);
                    next.push(s);
                }
            }
            for sup in &next {
                // All 3^w non-identity kind assignments over the support.
                let mut kinds = vec![0u8; w];
                loop {
                    let mut p = Pauli::identity(n);
                    for (i, &q) in sup.iter().enumerate() {
                        let kind = match kinds[i] {
                            0 => crate::pauli::PauliKind::X,
                            1 => crate::pauli::PauliKind::Y,
                            _ => crate::pauli::PauliKind::Z,
                        };
                        p.set_kind(q, kind);
                    }
                    let s = code.syndrome(&p);
                    map.entry(s).or_insert(w as u8);
                    // Increment base-3 counter.
                    let mut i = 0;
                    loop {
                        if i == w {
                            break;
                        }
                        kinds[i] += 1;
                        if kinds[i] < 3 {
                            break;
                        }
                        kinds[i] = 0;
                        i += 1;
                    }
                    if i == w {
                        break;
                    }
                }
            }
            supports = next;
        }
        SmallWeightSyndromes { map, max_w }
    }

    /// Exact min weight over all errors with this combined syndrome, when it
    /// is at most `max_w`.
    pub fn min_weight(&self, syndrome: u32) -> Option<u8> {
        self.map.get(&syndrome).copied()
    }

    pub fn max_w(&self) -> usize {
        self.max_w
    }
}

/// Pure-error decoder: XOR of the pure errors for the set syndrome bits.
pub fn naive_decode(code: &StabilizerCode, syndrome: u32) -> Pauli {
    code.pure_error_product(syndrome)
}

/// Which decoder supplies the recovery operators during a protocol run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Baseline {
    /// Precomputed minimum-weight table (hook-aware where the protocol
    /// builds one).
    Lookup,
    /// Pure-error products, one generator per set syndrome bit.
    PureError,
}

impl Baseline {
    pub fn id(self) -> &'static str {
        match self {
            Baseline::Lookup => "lookup",
            Baseline::PureError => "pe",
        }
    }

    pub fn parse(s: &str) -> Option<Baseline> {
        match s {
            "lookup" => Some(Baseline::Lookup),
            "pe" => Some(Baseline::PureError),
            _ => None,
        }
    }
}

/// Majority-of-three syndrome vote; all distinct falls back to the last.
pub fn ft_decode_d3(syndromes: [u32; 3]) -> u32 {
    let [a, b, c] = syndromes;
    if a == b || a == c {
        a
    } else if b == c {
        b
    } else {
        c
    }
}

/// Decision returned by the adaptive repeated-measurement protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    MeasureAgain,
    DecodeNow(u32),
}

/// Adaptive repeated-measurement state machine: `n_diff` counts syndrome
/// changes (it may only increase in a round whose predecessor did not
/// increase it); decoding fires one round after `n_diff` reaches `t`, or as
/// soon as a syndrome repeats `t - n_diff + 1` times in a row.
#[derive(Debug, Clone)]
pub struct ProtocolState {
    t: usize,
    n_diff: usize,
    last: Option<u32>,
    repeat: usize,
    increased_last_round: bool,
    awaiting_final: bool,
    rounds: usize,
}

impl ProtocolState {
    pub fn new(t: usize) -> ProtocolState {
        assert!(t >= 1);
        ProtocolState {
            t,
            n_diff: 0,
            last: None,
            repeat: 0,
            increased_last_round: false,
            awaiting_final: false,
            rounds: 0,
        }
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn n_diff(&self) -> usize {
        self.n_diff
    }

    /// Greatest number of rounds any stream can consume: (t^2 + 3t + 2) / 2.
    pub fn max_rounds(t: usize) -> usize {
        (t * t + 3 * t + 2) / 2
    }

    pub fn feed(&mut self, syndrome: u32) -> Decision {
        self.rounds += 1;
        if self.awaiting_final {
            return Decision::DecodeNow(syndrome);
        }
        match self.last {
            None => {
                self.last = Some(syndrome);
                self.repeat = 1;
                Decision::MeasureAgain
            }
            Some(prev) if prev == syndrome => {
                self.repeat += 1;
                self.increased_last_round = false;
                if self.repeat == self.t - self.n_diff + 1 {
                    Decision::DecodeNow(syndrome)
                } else {
                    Decision::MeasureAgain
                }
            }
            Some(_) => {
                if self.increased_last_round {
                    self.increased_last_round = false;
                } else {
                    self.n_diff += 1;
                    self.increased_last_round = true;
                    if self.n_diff == self.t {
                        self.awaiting_final = true;
                    }
                }
                self.last = Some(syndrome);
                self.repeat = 1;
                Decision::MeasureAgain
            }
        }
    }
}

/// Wilson score interval for `k` events in `n` trials at confidence factor
/// `z` (1.96 for 95%).
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let phat = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (phat + z2 / (2.0 * n)) / denom;
    let half = z / denom * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Weighted least-squares fit of `p_L = a * p^order` through Monte Carlo
/// points `(p, p_L, stderr)`; weights are inverse variances. Returns
/// `(a, p_th)` with the pseudo-threshold solving `a * p^order = p`.
pub fn fit_pseudothreshold(
    points: &[(f64, f64, f64)],
    order: u32,
) -> Result<(f64, f64), DecoderError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut used = 0usize;
    for &(p, pl, se) in points {
        if p <= 0.0 || se <= 0.0 {
            continue;
        }
        let w = 1.0 / (se * se);
        let xo = p.powi(order as i32);
        num += w * pl * xo;
        den += w * xo * xo;
        used += 1;
    }
    if used < 3 {
        return Err(DecoderError::TooFewPoints { needed: 3, got: used });
    }
    let a = num / den;
    if !(a > 0.0) {
        return Err(DecoderError::BadFit { a });
    }
    let p_th = a.powf(-1.0 / (order as f64 - 1.0));
    Ok((a, p_th))
}
