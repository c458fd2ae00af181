//! Labeled training corpora: Monte Carlo generation of syndrome-bit rows
//! with logical-supplement labels, the cyclic train/test split, round
//! padding, and a self-describing container format with CSV export.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{Basis, EcStyle};
use crate::code::StabilizerCode;
use crate::decoder::Baseline;
use crate::noise::NoiseModel;
use crate::pauli::Pauli;
use crate::protocol::{ExRecSim, ShotScratch, SurfaceSim};

const MAGIC: &str = "ftqec-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    /// Physical rate outside (0, 1]: no faults means no nonzero samples.
    BadRate(f64),
    /// A protocol reported more rounds than the padding target, or none.
    RoundOverflow { rounds: usize, max: usize },
    /// Container bytes do not parse.
    Format(String),
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::BadRate(p) => {
                write!(f, "physical rate {p} outside (0, 1]: target unreachable")
            }
            DatasetError::RoundOverflow { rounds, max } => {
                write!(f, "{rounds} rounds cannot pad to {max}")
            }
            DatasetError::Format(msg) => write!(f, "dataset format: {msg}"),
        }
    }
}

impl std::error::Error for DatasetError {}

/// The six protocols training corpora are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolId {
    SteaneD3,
    SteaneD5,
    KnillD3,
    KnillD5,
    SurfaceD3,
    SurfaceD5,
}

impl ProtocolId {
    pub const ALL: [ProtocolId; 6] = [
        ProtocolId::SteaneD3,
        ProtocolId::SteaneD5,
        ProtocolId::KnillD3,
        ProtocolId::KnillD5,
        ProtocolId::SurfaceD3,
        ProtocolId::SurfaceD5,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ProtocolId::SteaneD3 => "steane-d3",
            ProtocolId::SteaneD5 => "steane-d5",
            ProtocolId::KnillD3 => "knill-d3",
            ProtocolId::KnillD5 => "knill-d5",
            ProtocolId::SurfaceD3 => "surface-d3",
            ProtocolId::SurfaceD5 => "surface-d5",
        }
    }

    pub fn parse(s: &str) -> Option<ProtocolId> {
        Self::ALL.into_iter().find(|p| p.id() == s)
    }

    pub fn code_name(self) -> &'static str {
        match self {
            ProtocolId::SteaneD3 | ProtocolId::KnillD3 => "steane",
            ProtocolId::SteaneD5 | ProtocolId::KnillD5 => "color19",
            ProtocolId::SurfaceD3 => "surface17",
            ProtocolId::SurfaceD5 => "surface49",
        }
    }

    pub fn code(self) -> StabilizerCode {
        StabilizerCode::builtin(self.code_name()).expect("built-in code")
    }

    pub fn distance(self) -> usize {
        match self {
            ProtocolId::SteaneD3 | ProtocolId::KnillD3 | ProtocolId::SurfaceD3 => 3,
            _ => 5,
        }
    }

    /// Sample bit widths: four EC units' worth of per-type syndrome bits for
    /// the extended rectangles, one block per round (padded to the maximum)
    /// for the surface memory protocols.
    pub fn geometry(self) -> SampleGeometry {
        let code = self.code();
        let per = code.z_generators().len();
        debug_assert_eq!(per, code.x_generators().len());
        let units = match self {
            ProtocolId::SurfaceD3 => 3,
            ProtocolId::SurfaceD5 => 6,
            _ => 4,
        };
        SampleGeometry {
            x_bits: per * units,
            z_bits: per * units,
        }
    }

    /// Rounds a surface sample is padded to; unused for the exRecs.
    fn max_rounds(self) -> usize {
        match self {
            ProtocolId::SurfaceD3 => 3,
            ProtocolId::SurfaceD5 => 6,
            _ => 0,
        }
    }
}

impl fmt::Display for ProtocolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Per-sample bit widths, one block per error type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleGeometry {
    pub x_bits: usize,
    pub z_bits: usize,
}

impl SampleGeometry {
    /// Stored row width: syndrome bits, two label bits, one basis bit,
    /// zero-padded to a byte boundary.
    pub fn row_bytes(&self) -> usize {
        (self.x_bits + self.z_bits + 3).div_ceil(8)
    }
}

/// One kept shot. The basis tags which logical state the shot notionally
/// prepared (Pauli-frame dynamics do not depend on it; it records which
/// logical readout a physical run of the same shot would have used).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    /// Syndrome bits relevant to X errors, packed low-to-high.
    pub x_word: u128,
    /// Syndrome bits relevant to Z errors.
    pub z_word: u128,
    /// Logical X correction must supplement the baseline recovery.
    pub b1: bool,
    /// Logical Z correction likewise.
    pub b2: bool,
    pub basis: Basis,
}

impl Sample {
    /// Zero syndrome and zero label: the shots generation drops.
    pub fn is_zero(&self) -> bool {
        self.x_word == 0 && self.z_word == 0 && !self.b1 && !self.b2
    }

    pub fn x_bit(&self, i: usize) -> bool {
        self.x_word >> i & 1 == 1
    }

    pub fn z_bit(&self, i: usize) -> bool {
        self.z_word >> i & 1 == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub protocol: ProtocolId,
    pub p: f64,
    pub baseline: Baseline,
    /// Every simulated shot, kept or dropped; the baseline logical rate is
    /// failures() over this count.
    pub total_shots: u64,
    pub kept: u64,
    pub seed: u64,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub samples: Vec<Sample>,
}

/// Generate a corpus by simulating the protocol at rate `p` until
/// `target_nonzero` samples with a nonzero syndrome or label are kept.
///
/// Shots alternate |0>-bar and |+>-bar preparations (even shot indices Z);
/// each shot runs on its own RNG stream so the output is a pure function of
/// the arguments regardless of how shots are scheduled.
pub fn generate(
    protocol: ProtocolId,
    p: f64,
    baseline: Baseline,
    target_nonzero: u64,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(DatasetError::BadRate(p));
    }
    let noise = NoiseModel::new(p);
    let runner = Runner::new(protocol, baseline);
    let mut samples = Vec::with_capacity(target_nonzero as usize);
    let mut scratch = ShotScratch::default();
    let base = ChaCha8Rng::seed_from_u64(seed);
    let mut shot: u64 = 0;
    while (samples.len() as u64) < target_nonzero {
        let mut rng = base.clone();
        rng.set_stream(shot);
        let basis = if shot % 2 == 0 { Basis::Z } else { Basis::X };
        let (sample, _) = runner.shot(&noise, &mut rng, &mut scratch, basis);
        shot += 1;
        if !sample.is_zero() {
            samples.push(sample);
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            protocol,
            p,
            baseline,
            total_shots: shot,
            kept: samples.len() as u64,
            seed,
            version: FORMAT_VERSION,
        },
        samples,
    })
}

/// The simulator behind one protocol id, plus the packing of its shots.
pub(crate) enum Runner {
    ExRec(ExRecSim),
    Surface(SurfaceSim, usize),
}

impl Runner {
    pub(crate) fn new(protocol: ProtocolId, baseline: Baseline) -> Runner {
        let code = protocol.code();
        match protocol {
            ProtocolId::SteaneD3 | ProtocolId::SteaneD5 => {
                Runner::ExRec(ExRecSim::with_baseline(&code, EcStyle::Steane, baseline))
            }
            ProtocolId::KnillD3 | ProtocolId::KnillD5 => {
                Runner::ExRec(ExRecSim::with_baseline(&code, EcStyle::Knill, baseline))
            }
            ProtocolId::SurfaceD3 | ProtocolId::SurfaceD5 => Runner::Surface(
                SurfaceSim::with_baseline(&code, baseline),
                protocol.max_rounds(),
            ),
        }
    }

    /// One Monte Carlo shot packed into a sample, with the residual the
    /// label summarizes (block 1 for the exRecs).
    pub(crate) fn shot(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        scratch: &mut ShotScratch,
        basis: Basis,
    ) -> (Sample, Pauli) {
        match self {
            Runner::ExRec(sim) => {
                let (shot, resid1, _) = sim.run_shot_full(noise, rng, scratch);
                let per = sim.lut.x_bits();
                debug_assert_eq!(per, sim.lut.z_bits());
                let mut x_word = 0u128;
                let mut z_word = 0u128;
                for (i, syn) in shot.syndromes.iter().enumerate() {
                    x_word |= (syn.sx as u128) << (i * per);
                    z_word |= (syn.sz as u128) << (i * per);
                }
                let sample = Sample {
                    x_word,
                    z_word,
                    b1: shot.class1.0,
                    b2: shot.class1.1,
                    basis,
                };
                (sample, resid1)
            }
            Runner::Surface(sim, max_rounds) => {
                let (shot, residual) = sim.run_shot_full(noise, rng, scratch);
                let padded = surface_round_padding(&shot.syndromes, *max_rounds)
                    .expect("protocol terminates within the padding target");
                let xb = sim.lut.x_bits();
                let zb = sim.lut.z_bits();
                let mut x_word = 0u128;
                let mut z_word = 0u128;
                for (i, &s) in padded.iter().enumerate() {
                    let (sx, sz) = sim.lut.split_syndrome(s);
                    x_word |= (sx as u128) << (i * xb);
                    z_word |= (sz as u128) << (i * zb);
                }
                let sample = Sample {
                    x_word,
                    z_word,
                    b1: shot.class.0,
                    b2: shot.class.1,
                    basis,
                };
                (sample, residual)
            }
        }
    }
}

/// Pad a terminated protocol's per-round syndromes to `max_rounds` rounds by
/// repeating the last measured one.
pub fn surface_round_padding(rounds: &[u32], max_rounds: usize) -> Result<Vec<u32>, DatasetError> {
    if rounds.is_empty() || rounds.len() > max_rounds {
        return Err(DatasetError::RoundOverflow {
            rounds: rounds.len(),
            max: max_rounds,
        });
    }
    let mut out = rounds.to_vec();
    let last = *out.last().expect("nonempty");
    out.resize(max_rounds, last);
    Ok(out)
}

impl Dataset {
    pub fn geometry(&self) -> SampleGeometry {
        self.meta.protocol.geometry()
    }

    /// Kept samples whose label calls for a logical supplement; dropped
    /// shots are all-clean by construction, so over total_shots this is the
    /// baseline decoder's logical failure count.
    pub fn failures(&self) -> u64 {
        self.samples.iter().filter(|s| s.b1 || s.b2).count() as u64
    }

    pub fn baseline_rate(&self) -> f64 {
        self.failures() as f64 / self.meta.total_shots as f64
    }

    /// Cyclic split: a seed-chosen start index, then the first
    /// `train_fraction` of the set cyclically as train indices, the
    /// remainder as test.
    pub fn split_cyclic(&self, train_fraction: f64, seed: u64) -> (Vec<u32>, Vec<u32>) {
        let n = self.samples.len();
        assert!(n > 0, "cannot split an empty dataset");
        assert!((0.0..=1.0).contains(&train_fraction));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = rng.gen_range(0..n);
        let train_len = (train_fraction * n as f64).floor() as usize;
        let idx = |i: usize| ((start + i) % n) as u32;
        let train = (0..train_len).map(idx).collect();
        let test = (train_len..n).map(idx).collect();
        (train, test)
    }

    /// Serialize: text header, blank line, then fixed-width packed rows
    /// (x bits, z bits, b1, b2, basis, zero padding; low bit first within
    /// each byte).
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.meta;
        let g = self.geometry();
        let mut out = format!(
            "{MAGIC} v{}\nprotocol: {}\ncode: {}\np: {}\nbaseline: {}\nx_bits: {}\nz_bits: {}\ntotal_shots: {}\nkept: {}\nseed: {}\n\n",
            m.version,
            m.protocol,
            m.protocol.code_name(),
            m.p,
            m.baseline.id(),
            g.x_bits,
            g.z_bits,
            m.total_shots,
            m.kept,
            m.seed,
        )
        .into_bytes();
        let row_bytes = g.row_bytes();
        for s in &self.samples {
            let mut row = vec![0u8; row_bytes];
            let mut pos = 0;
            let mut push = |row: &mut Vec<u8>, bit: bool| {
                if bit {
                    row[pos / 8] |= 1 << (pos % 8);
                }
                pos += 1;
            };
            for i in 0..g.x_bits {
                push(&mut row, s.x_bit(i));
            }
            for i in 0..g.z_bits {
                push(&mut row, s.z_bit(i));
            }
            push(&mut row, s.b1);
            push(&mut row, s.b2);
            push(&mut row, s.basis == Basis::X);
            out.extend_from_slice(&row);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Dataset, DatasetError> {
        let err = |msg: &str| DatasetError::Format(msg.to_string());
        let split = bytes
            .windows(2)
            .position(|w| w == b"\n\n")
            .ok_or_else(|| err("missing blank line after header"))?;
        let header = std::str::from_utf8(&bytes[..split])
            .map_err(|_| err("header is not UTF-8"))?;
        let body = &bytes[split + 2..];

        let mut lines = header.lines();
        let magic = lines.next().ok_or_else(|| err("empty header"))?;
        if magic != format!("{MAGIC} v{FORMAT_VERSION}") {
            return Err(DatasetError::Format(format!("unknown magic {magic:?}")));
        }
        let mut field = |key: &str| -> Result<String, DatasetError> {
            let line = lines
                .next()
                .ok_or_else(|| DatasetError::Format(format!("missing field {key}")))?;
            line.strip_prefix(&format!("{key}: "))
                .map(str::to_string)
                .ok_or_else(|| DatasetError::Format(format!("expected field {key}, got {line:?}")))
        };
        let protocol = ProtocolId::parse(&field("protocol")?)
            .ok_or_else(|| err("unknown protocol"))?;
        let code = field("code")?;
        if code != protocol.code_name() {
            return Err(DatasetError::Format(format!(
                "code {code} does not match protocol {protocol}"
            )));
        }
        let p: f64 = field("p")?.parse().map_err(|_| err("bad p"))?;
        let baseline =
            Baseline::parse(&field("baseline")?).ok_or_else(|| err("unknown baseline"))?;
        let g = protocol.geometry();
        let x_bits: usize = field("x_bits")?.parse().map_err(|_| err("bad x_bits"))?;
        let z_bits: usize = field("z_bits")?.parse().map_err(|_| err("bad z_bits"))?;
        if (x_bits, z_bits) != (g.x_bits, g.z_bits) {
            return Err(err("geometry does not match protocol"));
        }
        let total_shots: u64 = field("total_shots")?
            .parse()
            .map_err(|_| err("bad total_shots"))?;
        let kept: u64 = field("kept")?.parse().map_err(|_| err("bad kept"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| err("bad seed"))?;

        let row_bytes = g.row_bytes();
        if body.len() != row_bytes * kept as usize {
            return Err(DatasetError::Format(format!(
                "body is {} bytes, expected {} rows of {}",
                body.len(),
                kept,
                row_bytes
            )));
        }
        let mut samples = Vec::with_capacity(kept as usize);
        for row in body.chunks_exact(row_bytes) {
            let mut pos = 0;
            let mut pull = |row: &[u8]| {
                let bit = row[pos / 8] >> (pos % 8) & 1 == 1;
                pos += 1;
                bit
            };
            let mut x_word = 0u128;
            for i in 0..g.x_bits {
                x_word |= (pull(row) as u128) << i;
            }
            let mut z_word = 0u128;
            for i in 0..g.z_bits {
                z_word |= (pull(row) as u128) << i;
            }
            samples.push(Sample {
                x_word,
                z_word,
                b1: pull(row),
                b2: pull(row),
                basis: if pull(row) { Basis::X } else { Basis::Z },
            });
        }
        Ok(Dataset {
            meta: DatasetMeta {
                protocol,
                p,
                baseline,
                total_shots,
                kept,
                seed,
                version: FORMAT_VERSION,
            },
            samples,
        })
    }

    /// Lossless text export: one 0/1 column per bit, then the labels and
    /// the basis letter.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = self.geometry();
        let mut header = Vec::new();
        for i in 0..g.x_bits {
            header.push(format!("x{i}"));
        }
        for i in 0..g.z_bits {
            header.push(format!("z{i}"));
        }
        header.extend(["b1".into(), "b2".into(), "basis".into()]);
        writeln!(w, "{}", header.join(","))?;
        for s in &self.samples {
            let mut cols = Vec::with_capacity(header.len());
            for i in 0..g.x_bits {
                cols.push(if s.x_bit(i) { "1" } else { "0" });
            }
            for i in 0..g.z_bits {
                cols.push(if s.z_bit(i) { "1" } else { "0" });
            }
            cols.push(if s.b1 { "1" } else { "0" });
            cols.push(if s.b2 { "1" } else { "0" });
            cols.push(match s.basis {
                Basis::Z => "Z",
                Basis::X => "X",
            });
            writeln!(w, "{}", cols.join(","))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::LookupTable;

    #[test]
    fn geometries_match_the_protocol_table() {
        let want = [
            (ProtocolId::SteaneD3, 12, 4),
            (ProtocolId::SteaneD5, 36, 10),
            (ProtocolId::KnillD3, 12, 4),
            (ProtocolId::KnillD5, 36, 10),
            (ProtocolId::SurfaceD3, 12, 4),
            (ProtocolId::SurfaceD5, 72, 19),
        ];
        for (p, bits, row) in want {
            let g = p.geometry();
            assert_eq!((g.x_bits, g.z_bits), (bits, bits), "{p}");
            assert_eq!(g.row_bytes(), row, "{p}");
        }
    }

    #[test]
    fn protocol_ids_roundtrip() {
        for p in ProtocolId::ALL {
            assert_eq!(ProtocolId::parse(p.id()), Some(p));
        }
        assert_eq!(ProtocolId::parse("steane"), None);
    }

    #[test]
    fn zero_rate_refused() {
        for p in [0.0, -0.1, 1.5] {
            let got = generate(ProtocolId::SteaneD3, p, Baseline::Lookup, 1, 0);
            assert!(matches!(got, Err(DatasetError::BadRate(_))), "{p}");
        }
    }

    #[test]
    fn round_padding_repeats_the_last_syndrome() {
        assert_eq!(
            surface_round_padding(&[5, 9, 3], 6).unwrap(),
            vec![5, 9, 3, 3, 3, 3]
        );
        assert_eq!(surface_round_padding(&[1, 2, 3], 3).unwrap(), vec![1, 2, 3]);
        assert!(surface_round_padding(&[], 3).is_err());
        assert!(surface_round_padding(&[1, 2, 3, 4], 3).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_filters_zeros() {
        let a = generate(ProtocolId::SteaneD3, 1e-3, Baseline::Lookup, 40, 7).unwrap();
        assert_eq!(a.samples.len(), 40);
        assert_eq!(a.meta.kept, 40);
        assert!(a.meta.total_shots >= 40);
        assert!(a.samples.iter().all(|s| !s.is_zero()));

        let b = generate(ProtocolId::SteaneD3, 1e-3, Baseline::Lookup, 40, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_bytes(), b.to_bytes());

        let c = generate(ProtocolId::SteaneD3, 1e-3, Baseline::Lookup, 40, 8).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());

        // Even shot indices are Z preparations, odd are X; both survive
        // into the kept set.
        assert!(a.samples.iter().any(|s| s.basis == Basis::Z));
        assert!(a.samples.iter().any(|s| s.basis == Basis::X));
    }

    #[test]
    fn bytes_roundtrip_every_protocol() {
        for protocol in [
            ProtocolId::SteaneD3,
            ProtocolId::KnillD3,
            ProtocolId::SurfaceD3,
        ] {
            for baseline in [Baseline::Lookup, Baseline::PureError] {
                let d = generate(protocol, 2e-3, baseline, 12, 3).unwrap();
                let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
                assert_eq!(d, back, "{protocol}");
            }
        }
    }

    #[test]
    fn bytes_roundtrip_distance_five() {
        for protocol in [
            ProtocolId::SteaneD5,
            ProtocolId::KnillD5,
            ProtocolId::SurfaceD5,
        ] {
            let d = generate(protocol, 2e-3, Baseline::Lookup, 6, 3).unwrap();
            let back = Dataset::from_bytes(&d.to_bytes()).unwrap();
            assert_eq!(d, back, "{protocol}");
        }
    }

    #[test]
    fn from_bytes_rejects_tampering() {
        let d = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 5, 1).unwrap();
        let bytes = d.to_bytes();
        assert!(Dataset::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'x';
        assert!(Dataset::from_bytes(&wrong).is_err());
    }

    #[test]
    fn cyclic_split_covers_and_separates() {
        let d = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 50, 2).unwrap();
        let (train, test) = d.split_cyclic(0.9, 11);
        assert_eq!(train.len(), 45);
        assert_eq!(test.len(), 5);
        let mut all: Vec<u32> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<u32>>());
        assert_eq!(d.split_cyclic(0.9, 11), (train, test));
    }

    #[test]
    fn cyclic_split_matches_the_worked_shape() {
        // Hunt for a seed whose start lands on index 8 of a 10-sample set,
        // then the split must be train 8,9,0..6 and test 7.
        let d = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 10, 4).unwrap();
        let seed = (0..1000)
            .find(|&s| d.split_cyclic(0.9, s).0[0] == 8)
            .expect("some seed starts at 8");
        let (train, test) = d.split_cyclic(0.9, seed);
        assert_eq!(train, vec![8, 9, 0, 1, 2, 3, 4, 5, 6]);
        assert_eq!(test, vec![7]);
    }

    #[test]
    fn csv_export_is_lossless_text() {
        let d = generate(ProtocolId::SteaneD3, 2e-3, Baseline::Lookup, 8, 6).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert!(lines[0].starts_with("x0,") && lines[0].ends_with("b1,b2,basis"));
        for (line, s) in lines[1..].iter().zip(&d.samples) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols.len(), 27);
            assert_eq!(cols[24] == "1", s.b1);
            assert_eq!(cols[25] == "1", s.b2);
            let basis = if cols[26] == "X" { Basis::X } else { Basis::Z };
            assert_eq!(basis, s.basis);
            for (i, c) in cols[..12].iter().enumerate() {
                assert_eq!(*c == "1", s.x_bit(i));
            }
        }
    }

    /// Regenerate every shot from the stored seed and confirm the packed
    /// bits match and that applying the labeled logical supplement after
    /// the baseline recovery leaves no logical fault.
    #[test]
    fn labels_are_sound_against_replayed_residuals() {
        for (protocol, baseline) in [
            (ProtocolId::SteaneD3, Baseline::Lookup),
            (ProtocolId::KnillD3, Baseline::PureError),
            (ProtocolId::SurfaceD3, Baseline::Lookup),
        ] {
            let code = protocol.code();
            let lut = LookupTable::build(&code).unwrap();
            let d = generate(protocol, 2e-3, baseline, 30, 9).unwrap();
            let runner = Runner::new(protocol, baseline);
            let noise = NoiseModel::new(d.meta.p);
            let base = ChaCha8Rng::seed_from_u64(d.meta.seed);
            let mut scratch = ShotScratch::default();
            let mut kept = d.samples.iter();
            for shot in 0..d.meta.total_shots {
                let mut rng = base.clone();
                rng.set_stream(shot);
                let basis = if shot % 2 == 0 { Basis::Z } else { Basis::X };
                let (sample, residual) = runner.shot(&noise, &mut rng, &mut scratch, basis);
                if sample.is_zero() {
                    continue;
                }
                let stored = kept.next().expect("kept rows align with replay");
                assert_eq!(*stored, sample, "{protocol} shot {shot}");

                let mut fixed = residual.clone();
                if sample.b1 {
                    fixed.mul_assign(code.logical_x());
                }
                if sample.b2 {
                    fixed.mul_assign(code.logical_z());
                }
                let (sx, sz) = lut.split_syndrome(code.syndrome(&fixed));
                let closed = fixed.product(&lut.min_weight_rep(sx, sz));
                assert_eq!(
                    code.logical_class(&closed),
                    (false, false),
                    "{protocol} shot {shot}"
                );
            }
            assert!(kept.next().is_none());
        }
    }

    /// At small p the kept fraction is bracketed by the independent-location
    /// census 1-(1-p)^L: from above with L counting every location (a kept
    /// shot needs at least one fault, and many faults are invisible or die
    /// in a preparation rejection), from below with L counting only the
    /// exRec body (accepted preparation residuals light up the leading EC
    /// on top of body faults).
    #[test]
    fn kept_fraction_tracks_location_census() {
        let protocol = ProtocolId::SteaneD3;
        let p = 1e-4;
        let d = generate(protocol, p, Baseline::Lookup, 400, 13).unwrap();
        let runner = Runner::new(protocol, Baseline::Lookup);
        let (body, all) = match &runner {
            Runner::ExRec(sim) => {
                let body = sim.map.n_locations();
                let preps =
                    4 * sim.prep_x.map.n_locations() + 4 * sim.prep_z.map.n_locations();
                (body, body + preps)
            }
            Runner::Surface(sim, _) => (sim.map.n_locations(), sim.map.n_locations()),
        };
        let lo = 1.0 - (1.0 - p).powi(body as i32);
        let hi = 1.0 - (1.0 - p).powi(all as i32);
        let actual = d.meta.kept as f64 / d.meta.total_shots as f64;
        assert!(
            lo < actual && actual < hi,
            "kept {actual:.5} outside census bracket [{lo:.5}, {hi:.5}]"
        );
    }
}
