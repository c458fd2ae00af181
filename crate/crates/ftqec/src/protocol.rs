//! Protocol-level simulation: verified ancilla preparation with retry
//! semantics, single-EC gadgets, CNOT extended rectangles, surface-code
//! memory protocols, the fault-tolerance harness, and Monte Carlo sweeps.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{
    cnot_exrec, single_ec, surface_cycle, verified_prep, Basis, CnotOrders, EcStyle, ExRec,
    SingleEc, SurfaceCycle, VerifiedPrep,
};
use crate::code::StabilizerCode;
use crate::decoder::{
    ft_decode_d3, naive_decode, pauli_from_masks, Baseline, Decision, LookupTable, ProtocolState,
    SmallWeightSyndromes,
};
use crate::frame::FrameRun;
use crate::noise::{for_each_fault_set, payload, payload_count, Fault, LocationClass, LocationMap, NoiseModel};
use crate::pauli::Pauli;

fn parity(word: u64) -> bool {
    word.count_ones() & 1 == 1
}

/// Support masks of a CSS code's checks and logicals, for turning transversal
/// measurement words into syndrome blocks by mask-and-popcount.
#[derive(Debug, Clone)]
pub struct SyndromeMasks {
    z_rows: Vec<u64>,
    x_rows: Vec<u64>,
    xl: u64,
    zl: u64,
}

impl SyndromeMasks {
    pub fn new(code: &StabilizerCode) -> SyndromeMasks {
        SyndromeMasks {
            z_rows: code.z_generators().iter().map(|g| g.z_words()[0]).collect(),
            x_rows: code.x_generators().iter().map(|g| g.x_words()[0]).collect(),
            xl: code.logical_x().x_words()[0],
            zl: code.logical_z().z_words()[0],
        }
    }

    fn fold(word: u64, rows: &[u64]) -> u32 {
        let mut s = 0u32;
        for (j, &m) in rows.iter().enumerate() {
            s |= (((word & m).count_ones() & 1) as u32) << j;
        }
        s
    }

    /// X-error syndrome of a Z-basis measurement word: H_Z times the bits.
    pub fn sx(&self, meas_z_word: u64) -> u32 {
        Self::fold(meas_z_word, &self.z_rows)
    }

    /// Z-error syndrome of an X-basis measurement word: H_X times the bits.
    pub fn sz(&self, meas_x_word: u64) -> u32 {
        Self::fold(meas_x_word, &self.x_rows)
    }

    /// Parity of a measurement word over the logical X support.
    pub fn xl_parity(&self, word: u64) -> bool {
        parity(word & self.xl)
    }

    /// Parity of a measurement word over the logical Z support.
    pub fn zl_parity(&self, word: u64) -> bool {
        parity(word & self.zl)
    }
}

/// A verified preparation plus its fault-location map, runnable per shot.
#[derive(Debug)]
pub struct VerifiedPrepSim {
    pub prep: VerifiedPrep,
    pub map: LocationMap,
    n: usize,
}

impl VerifiedPrepSim {
    pub fn new(code: &StabilizerCode, basis: Basis) -> VerifiedPrepSim {
        let prep = verified_prep(code, basis);
        let map = LocationMap::new(&prep.circuit);
        VerifiedPrepSim {
            prep,
            map,
            n: code.n(),
        }
    }

    /// Run once with a fixed fault set. `None` means the verifier rejected.
    pub fn run(&self, faults: &[Fault]) -> Option<Pauli> {
        if faults.is_empty() {
            return Some(Pauli::identity(self.n));
        }
        let rec = FrameRun::new(&self.prep.circuit, faults).finish();
        let word = rec.extract(&self.prep.verifier_meas);
        if self.prep.accept_masks.iter().any(|&m| parity(word & m)) {
            return None;
        }
        Some(rec.frame().restrict(&self.prep.block))
    }

    /// Monte Carlo: resample the preparation until accepted. Returns the
    /// accepted block residual and the number of rejections on the way.
    pub fn sample(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        buf: &mut Vec<Fault>,
    ) -> (Pauli, u32) {
        let mut retries = 0;
        loop {
            noise.sample_into(&self.map, rng, buf);
            match self.run(buf) {
                Some(residual) => return (residual, retries),
                None => retries += 1,
            }
        }
    }
}

/// Syndrome pair extracted by one EC unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EcSyndrome {
    pub sx: u32,
    pub sz: u32,
}

/// One error-correction gadget wired for simulation.
#[derive(Debug)]
pub struct SingleEcSim {
    pub code: StabilizerCode,
    pub gadget: SingleEc,
    pub map: LocationMap,
    pub prep_plus: VerifiedPrepSim,
    pub prep_zero: VerifiedPrepSim,
    pub lut: LookupTable,
    masks: SyndromeMasks,
}

impl SingleEcSim {
    pub fn new(code: &StabilizerCode, style: EcStyle) -> SingleEcSim {
        let gadget = single_ec(code, style);
        let map = LocationMap::new(&gadget.main);
        SingleEcSim {
            gadget,
            map,
            prep_plus: VerifiedPrepSim::new(code, Basis::X),
            prep_zero: VerifiedPrepSim::new(code, Basis::Z),
            lut: LookupTable::build(code).expect("table fits for built-in codes"),
            masks: SyndromeMasks::new(code),
            code: code.clone(),
        }
    }

    /// Deterministic single case: fixed fault sets per sub-circuit. A
    /// rejected preparation is retried fault-free, which is exact under
    /// single-fault enumeration (the fault was consumed by the rejection).
    pub fn run_case(
        &self,
        input: &Pauli,
        plus_faults: &[Fault],
        zero_faults: &[Fault],
        main_faults: &[Fault],
    ) -> (EcSyndrome, Pauli) {
        let n = self.code.n();
        let rp = self
            .prep_plus
            .run(plus_faults)
            .unwrap_or_else(|| Pauli::identity(n));
        let rz = self
            .prep_zero
            .run(zero_faults)
            .unwrap_or_else(|| Pauli::identity(n));

        let mut run = FrameRun::new(&self.gadget.main, main_faults);
        run.inject(&self.gadget.data, input);
        run.inject(&self.gadget.plus_block, &rp);
        run.inject(&self.gadget.zero_block, &rz);
        let rec = run.finish();

        let first = rec.extract(&self.gadget.first);
        let second = rec.extract(&self.gadget.second);
        let mut residual = rec.frame().restrict(&self.gadget.out_block);
        let syn = match self.gadget.style {
            EcStyle::Steane => {
                let syn = EcSyndrome {
                    sx: self.masks.sx(first),
                    sz: self.masks.sz(second),
                };
                residual.mul_assign(&self.lut.decode(syn.sx, syn.sz));
                syn
            }
            EcStyle::Knill => {
                let syn = teleport_syndrome(&self.masks, first, second);
                let rec = self.lut.decode(syn.sx, syn.sz);
                let correction = teleport_byproduct(&self.code, &rec, &self.masks, first, second);
                residual.mul_assign(&correction);
                syn
            }
        };
        (syn, residual)
    }
}

/// Syndrome pair read off one Knill-EC teleportation: `meas_x_word` is the
/// measured-out input block (X basis), `meas_z_word` the Bell half (Z basis).
fn teleport_syndrome(masks: &SyndromeMasks, meas_x_word: u64, meas_z_word: u64) -> EcSyndrome {
    EcSyndrome {
        sx: masks.sx(meas_z_word),
        sz: masks.sz(meas_x_word),
    }
}

/// Classical side of one Knill-EC teleportation, given the recovery `rec`
/// chosen for its syndrome.
///
/// The teleported block physically carries the translated input error only
/// through the measurement record, so the frame update folds together the
/// recovery and the logical byproduct bits; the net effect on the frame is
/// purely logical.
fn teleport_byproduct(
    code: &StabilizerCode,
    rec: &Pauli,
    masks: &SyndromeMasks,
    meas_x_word: u64,
    meas_z_word: u64,
) -> Pauli {
    let bx = masks.zl_parity(meas_z_word) ^ !rec.commutes_with(code.logical_z());
    let bz = masks.xl_parity(meas_x_word) ^ !rec.commutes_with(code.logical_x());
    let mut correction = Pauli::identity(code.n());
    if bx {
        correction.mul_assign(code.logical_x());
    }
    if bz {
        correction.mul_assign(code.logical_z());
    }
    correction
}

/// Everything one simulated exRec shot reports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExRecShot {
    /// Per EC unit (LEC1, LEC2, TEC1, TEC2).
    pub syndromes: [EcSyndrome; 4],
    /// Logical class of the block-1 output after ideal closure.
    pub class1: (bool, bool),
    pub class2: (bool, bool),
    /// Preparation rejections consumed by this shot.
    pub retries: u32,
}

impl ExRecShot {
    fn clean(retries: u32) -> ExRecShot {
        ExRecShot {
            syndromes: [EcSyndrome::default(); 4],
            class1: (false, false),
            class2: (false, false),
            retries,
        }
    }

    pub fn failed(&self) -> bool {
        self.class1 != (false, false) || self.class2 != (false, false)
    }
}

/// Scratch buffers reused across Monte Carlo shots.
#[derive(Debug, Default)]
pub struct ShotScratch {
    prep_buf: Vec<Fault>,
    main_buf: Vec<Fault>,
}

/// A CNOT extended rectangle wired for simulation.
#[derive(Debug)]
pub struct ExRecSim {
    pub code: StabilizerCode,
    pub exrec: ExRec,
    pub map: LocationMap,
    pub prep_x: VerifiedPrepSim,
    pub prep_z: VerifiedPrepSim,
    pub lut: LookupTable,
    pub baseline: Baseline,
    masks: SyndromeMasks,
    /// Knill: the leading teleported blocks (corrections land here before the
    /// logical CNOT). Unused for Steane.
    teleported: [Vec<usize>; 2],
}

impl ExRecSim {
    pub fn new(code: &StabilizerCode, style: EcStyle) -> ExRecSim {
        Self::with_baseline(code, style, Baseline::Lookup)
    }

    pub fn with_baseline(code: &StabilizerCode, style: EcStyle, baseline: Baseline) -> ExRecSim {
        let exrec = cnot_exrec(code, style);
        let map = LocationMap::new(&exrec.main);
        let mut teleported = [Vec::new(), Vec::new()];
        for (i, slot) in exrec.preps.iter().enumerate().take(4) {
            if slot.basis == Basis::Z {
                teleported[i / 2] = slot.block.clone();
            }
        }
        ExRecSim {
            exrec,
            map,
            prep_x: VerifiedPrepSim::new(code, Basis::X),
            prep_z: VerifiedPrepSim::new(code, Basis::Z),
            lut: LookupTable::build(code).expect("table fits for built-in codes"),
            baseline,
            masks: SyndromeMasks::new(code),
            teleported,
            code: code.clone(),
        }
    }

    pub fn style(&self) -> EcStyle {
        self.exrec.style
    }

    /// Recovery the configured baseline decoder picks for one EC syndrome.
    fn recover(&self, syn: EcSyndrome) -> Pauli {
        match self.baseline {
            Baseline::Lookup => self.lut.decode(syn.sx, syn.sz),
            Baseline::PureError => {
                naive_decode(&self.code, syn.sx | (syn.sz << self.lut.x_bits()))
            }
        }
    }

    /// Deterministic core: run with fixed prep residuals and main faults.
    fn run_with(
        &self,
        input1: &Pauli,
        input2: &Pauli,
        prep_residuals: &[Pauli],
        main_faults: &[Fault],
        retries: u32,
    ) -> (ExRecShot, Pauli, Pauli) {
        let n = self.code.n();
        let mut run = FrameRun::new(&self.exrec.main, main_faults);
        run.inject(&self.exrec.block1, input1);
        run.inject(&self.exrec.block2, input2);
        for (slot, residual) in self.exrec.preps.iter().zip(prep_residuals) {
            run.inject(&slot.block, residual);
        }

        // Leading corrections fold in at the pause after the EC readouts,
        // before the trailing couplings can see the frames.
        run.run_until(3);
        let mut syndromes = [EcSyndrome::default(); 4];
        match self.exrec.style {
            EcStyle::Steane => {
                let mut recs = Vec::with_capacity(2);
                for i in 0..2 {
                    let m = &self.exrec.ec_meas[i];
                    let syn = EcSyndrome {
                        sx: self.masks.sx(run.extract(&m.first)),
                        sz: self.masks.sz(run.extract(&m.second)),
                    };
                    syndromes[i] = syn;
                    let r = self.recover(syn);
                    recs.push((r.x_words()[0], r.z_words()[0]));
                }
                // The recoveries target the blocks as the EC saw them, but
                // the frame has already passed the logical CNOT, so inject
                // the conjugated pair: control X copies to target, target Z
                // copies back to control.
                let c1 = pauli_from_masks(n, recs[0].0, recs[0].1 ^ recs[1].1);
                let c2 = pauli_from_masks(n, recs[1].0 ^ recs[0].0, recs[1].1);
                run.inject(&self.exrec.block1, &c1);
                run.inject(&self.exrec.block2, &c2);
            }
            EcStyle::Knill => {
                for i in 0..2 {
                    let m = &self.exrec.ec_meas[i];
                    let (first, second) = (run.extract(&m.first), run.extract(&m.second));
                    let syn = teleport_syndrome(&self.masks, first, second);
                    syndromes[i] = syn;
                    let rec = self.recover(syn);
                    let correction =
                        teleport_byproduct(&self.code, &rec, &self.masks, first, second);
                    run.inject(&self.teleported[i], &correction);
                }
            }
        }

        let rec = run.finish();
        let mut resid1 = rec.frame().restrict(&self.exrec.out_block1);
        let mut resid2 = rec.frame().restrict(&self.exrec.out_block2);
        for (i, resid) in [&mut resid1, &mut resid2].into_iter().enumerate() {
            let m = &self.exrec.ec_meas[2 + i];
            match self.exrec.style {
                EcStyle::Steane => {
                    let syn = EcSyndrome {
                        sx: self.masks.sx(rec.extract(&m.first)),
                        sz: self.masks.sz(rec.extract(&m.second)),
                    };
                    syndromes[2 + i] = syn;
                    resid.mul_assign(&self.recover(syn));
                }
                EcStyle::Knill => {
                    let (first, second) = (rec.extract(&m.first), rec.extract(&m.second));
                    let syn = teleport_syndrome(&self.masks, first, second);
                    syndromes[2 + i] = syn;
                    let r = self.recover(syn);
                    let correction =
                        teleport_byproduct(&self.code, &r, &self.masks, first, second);
                    resid.mul_assign(&correction);
                }
            }
        }

        let shot = ExRecShot {
            syndromes,
            class1: self.lut.ideal_class(&self.code, &resid1),
            class2: self.lut.ideal_class(&self.code, &resid2),
            retries,
        };
        (shot, resid1, resid2)
    }

    /// Deterministic single case with per-preparation fault sets (slot order
    /// follows `exrec.preps`); rejected preparations retry fault-free.
    pub fn run_case(
        &self,
        input1: &Pauli,
        input2: &Pauli,
        prep_faults: &[&[Fault]; 8],
        main_faults: &[Fault],
    ) -> (ExRecShot, Pauli, Pauli) {
        let n = self.code.n();
        let residuals: Vec<Pauli> = self
            .exrec
            .preps
            .iter()
            .zip(prep_faults)
            .map(|(slot, faults)| {
                let sim = match slot.basis {
                    Basis::X => &self.prep_x,
                    Basis::Z => &self.prep_z,
                };
                sim.run(faults).unwrap_or_else(|| Pauli::identity(n))
            })
            .collect();
        self.run_with(input1, input2, &residuals, main_faults, 0)
    }

    /// Monte Carlo shot with clean inputs.
    pub fn run_shot(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        scratch: &mut ShotScratch,
    ) -> ExRecShot {
        self.run_shot_full(noise, rng, scratch).0
    }

    /// Monte Carlo shot that also returns the two output-block residuals
    /// (after the trailing corrections).
    pub fn run_shot_full(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        scratch: &mut ShotScratch,
    ) -> (ExRecShot, Pauli, Pauli) {
        let mut retries = 0;
        let mut residuals: Vec<Pauli> = Vec::with_capacity(8);
        let mut all_clean = true;
        for slot in &self.exrec.preps {
            let sim = match slot.basis {
                Basis::X => &self.prep_x,
                Basis::Z => &self.prep_z,
            };
            let (residual, r) = sim.sample(noise, rng, &mut scratch.prep_buf);
            retries += r;
            all_clean &= residual.is_identity();
            residuals.push(residual);
        }
        noise.sample_into(&self.map, rng, &mut scratch.main_buf);
        let id = Pauli::identity(self.code.n());
        if all_clean && scratch.main_buf.is_empty() {
            return (ExRecShot::clean(retries), id.clone(), id);
        }
        self.run_with(&id, &id, &residuals, &scratch.main_buf, retries)
    }

    /// Monte Carlo sweep over physical error rates.
    pub fn sweep(&self, ps: &[f64], shots: u64, seed: u64) -> Vec<SweepPoint> {
        let mut scratch = ShotScratch::default();
        sweep_points(ps, shots, seed, |noise, rng| {
            self.run_shot(noise, rng, &mut scratch).failed()
        })
    }
}

/// One memory-protocol shot: the syndromes consumed round by round, how many
/// rounds the protocol used, and the residual class after ideal closure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceShot {
    pub syndromes: Vec<u32>,
    pub rounds: usize,
    pub class: (bool, bool),
}

impl SurfaceShot {
    pub fn failed(&self) -> bool {
        self.class != (false, false)
    }
}

/// A surface-code memory protocol wired for simulation: fixed 3-round
/// majority decoding at distance 3, the adaptive repeated-measurement
/// protocol at distance 5. Corrections come from the hook-aware lookup table
/// by default, or from the pure-error decoder.
#[derive(Debug)]
pub struct SurfaceSim {
    pub code: StabilizerCode,
    pub t: usize,
    pub cycle: SurfaceCycle,
    pub map: LocationMap,
    pub lut: &'static LookupTable,
    pub baseline: Baseline,
    data_map: Vec<usize>,
}

impl SurfaceSim {
    pub fn new(code: &StabilizerCode) -> SurfaceSim {
        Self::with_baseline(code, Baseline::Lookup)
    }

    pub fn with_baseline(code: &StabilizerCode, baseline: Baseline) -> SurfaceSim {
        let t = code.t();
        let rounds = if t == 1 {
            3
        } else {
            ProtocolState::max_rounds(t)
        };
        let cycle =
            surface_cycle(code, rounds, CnotOrders::default()).expect("rotated surface layout");
        let map = LocationMap::new(&cycle.circuit);
        SurfaceSim {
            t,
            map,
            lut: cached_surface_table(code),
            baseline,
            data_map: (0..code.n()).collect(),
            cycle,
            code: code.clone(),
        }
    }

    fn round_word(&self, run: &FrameRun, round: usize) -> u32 {
        run.extract(&self.cycle.meas_index[round]) as u32
    }

    /// Run the protocol on a fixed fault set, optionally with an input data
    /// error, returning the shot record and the corrected residual.
    pub fn run_case(&self, input: Option<&Pauli>, faults: &[Fault]) -> (SurfaceShot, Pauli) {
        let mut run = FrameRun::new(&self.cycle.circuit, faults);
        if let Some(e) = input {
            run.inject(&self.data_map, e);
        }
        let mut syndromes = Vec::new();
        let decoded = if self.t == 1 {
            for round in 0..3 {
                run.run_until((round + 1) * 6);
                syndromes.push(self.round_word(&run, round));
            }
            ft_decode_d3([syndromes[0], syndromes[1], syndromes[2]])
        } else {
            let mut state = ProtocolState::new(self.t);
            let mut decided = None;
            for round in 0..self.cycle.rounds {
                run.run_until((round + 1) * 6);
                let s = self.round_word(&run, round);
                syndromes.push(s);
                if let Decision::DecodeNow(s) = state.feed(s) {
                    decided = Some(s);
                    break;
                }
            }
            decided.expect("protocol decides within the built rounds")
        };
        let mut residual = run.frame().restrict(&self.data_map);
        let correction = match self.baseline {
            Baseline::Lookup => self.lut.decode_combined(decoded),
            Baseline::PureError => naive_decode(&self.code, decoded),
        };
        residual.mul_assign(&correction);
        let rounds = syndromes.len();
        // Failure is judged against the plain minimum-weight closure of the
        // final data error, not the protocol's hook-adjusted table: once the
        // run is over, the residual is a static error on the code.
        let (sx, sz) = self.lut.split_syndrome(self.code.syndrome(&residual));
        let closed = residual.product(&self.lut.min_weight_rep(sx, sz));
        (
            SurfaceShot {
                syndromes,
                rounds,
                class: self.code.logical_class(&closed),
            },
            residual,
        )
    }

    /// Monte Carlo shot with clean input.
    pub fn run_shot(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        scratch: &mut ShotScratch,
    ) -> SurfaceShot {
        self.run_shot_full(noise, rng, scratch).0
    }

    /// Monte Carlo shot that also returns the corrected data residual.
    pub fn run_shot_full(
        &self,
        noise: &NoiseModel,
        rng: &mut impl Rng,
        scratch: &mut ShotScratch,
    ) -> (SurfaceShot, Pauli) {
        noise.sample_into(&self.map, rng, &mut scratch.main_buf);
        if scratch.main_buf.is_empty() {
            // Matches run_case on an empty fault set: three zero syndromes
            // (fixed at d=3; the repetition branch at d=5).
            let shot = SurfaceShot {
                syndromes: vec![0; 3],
                rounds: 3,
                class: (false, false),
            };
            return (shot, Pauli::identity(self.code.n()));
        }
        self.run_case(None, &scratch.main_buf)
    }

    pub fn sweep(&self, ps: &[f64], shots: u64, seed: u64) -> Vec<SweepPoint> {
        let mut scratch = ShotScratch::default();
        sweep_points(ps, shots, seed, |noise, rng| {
            self.run_shot(noise, rng, &mut scratch).failed()
        })
    }
}

/// Hook-aware tables for the built-in surface codes, built once per process
/// (the distance-5 build enumerates every fault pair over a two-round cycle).
fn cached_surface_table(code: &StabilizerCode) -> &'static LookupTable {
    static D3: OnceLock<LookupTable> = OnceLock::new();
    static D5: OnceLock<LookupTable> = OnceLock::new();
    let (slot, rounds) = match code.name() {
        "surface17" => (&D3, 1),
        "surface49" => (&D5, 2),
        other => panic!("no cached table for code {other}"),
    };
    slot.get_or_init(|| {
        let cycle = surface_cycle(code, rounds, CnotOrders::default())
            .expect("rotated surface layout");
        LookupTable::build_with_hooks(code, &cycle.circuit, code.t())
            .expect("hook build succeeds for the default CNOT order")
    })
}

// ---------------------------------------------------------------------------
// Fault-tolerance harness
// ---------------------------------------------------------------------------

/// Tally from a fault-tolerance check.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FtReport {
    pub cases: u64,
    pub cond1_violations: u64,
    pub cond2_violations: u64,
    /// Largest amount by which a violating residual's distance from the
    /// codespace exceeded the fault count (0 when condition 2 never failed).
    pub cond2_max_excess: u64,
}

impl FtReport {
    pub fn clean(&self) -> bool {
        self.cond1_violations == 0 && self.cond2_violations == 0
    }
}

/// The two checks: output preserves the ideally-decoded codeword when input
/// weight plus fault count stays within t (condition 1); with any input, s
/// faults leave the output within weight s of some codeword (condition 2,
/// checked through the exact small-weight syndrome dictionary).
struct FtChecker<'a> {
    code: &'a StabilizerCode,
    lut: &'a LookupTable,
    sw: SmallWeightSyndromes,
    report: FtReport,
}

impl<'a> FtChecker<'a> {
    fn new(code: &'a StabilizerCode, lut: &'a LookupTable) -> FtChecker<'a> {
        FtChecker {
            code,
            lut,
            sw: SmallWeightSyndromes::build(code, code.t()),
            report: FtReport::default(),
        }
    }

    fn cond1(&mut self, input: &Pauli, residual: &Pauli) {
        self.report.cases += 1;
        let want = self.lut.ideal_class(self.code, input);
        if self.lut.ideal_class(self.code, residual) != want {
            self.report.cond1_violations += 1;
        }
    }

    fn cond2(&mut self, n_faults: usize, residual: &Pauli) {
        self.report.cases += 1;
        let s = self.code.syndrome(residual);
        // Distance from the codespace, capped at t+1 by the dictionary: a
        // miss means the residual is farther than any correctable error.
        let dist = match self.sw.min_weight(s) {
            Some(w) => w as u64,
            None => self.code.t() as u64 + 1,
        };
        if dist > n_faults as u64 {
            self.report.cond2_violations += 1;
            let excess = dist - n_faults as u64;
            self.report.cond2_max_excess = self.report.cond2_max_excess.max(excess);
        }
    }
}

fn weight_one_errors(n: usize) -> Vec<Pauli> {
    let mut out = Vec::with_capacity(3 * n);
    for q in 0..n {
        for kind in [
            crate::pauli::PauliKind::X,
            crate::pauli::PauliKind::Y,
            crate::pauli::PauliKind::Z,
        ] {
            out.push(Pauli::single(n, q, kind));
        }
    }
    out
}

/// Exhaustive single-fault check of the distance-3 surface memory protocol.
pub fn ft_check_surface_d3(sim: &SurfaceSim) -> FtReport {
    assert_eq!(sim.t, 1);
    let code = &sim.code;
    let mut chk = FtChecker::new(code, sim.lut);

    let id = Pauli::identity(code.n());
    let (_, residual) = sim.run_case(None, &[]);
    chk.cond1(&id, &residual);
    for e in weight_one_errors(code.n()) {
        let (_, residual) = sim.run_case(Some(&e), &[]);
        chk.cond1(&e, &residual);
    }
    for_each_fault_set(&sim.map, 1, &mut |faults| {
        let (_, residual) = sim.run_case(None, faults);
        chk.cond1(&id, &residual);
    });

    // Condition 2 quantifies over arbitrary input errors; the protocol sees
    // an input only through its syndrome, so one pure-error representative
    // per syndrome is exhaustive.
    for s0 in 0..1u32 << code.num_generators() {
        let e = code.pure_error_product(s0);
        let (_, residual) = sim.run_case(Some(&e), &[]);
        chk.cond2(0, &residual);
        for_each_fault_set(&sim.map, 1, &mut |faults| {
            let (_, residual) = sim.run_case(Some(&e), faults);
            chk.cond2(1, &residual);
        });
    }
    chk.report
}

/// Exhaustive single-fault check of one Steane-EC gadget, counting fault
/// locations in both verified preparations as well as the gadget body.
pub fn ft_check_steane_ec(sim: &SingleEcSim) -> FtReport {
    assert_eq!(sim.gadget.style, EcStyle::Steane);
    let code = &sim.code;
    assert_eq!(code.t(), 1);
    let mut chk = FtChecker::new(code, &sim.lut);
    let id = Pauli::identity(code.n());

    let run_slot = |slot: usize, faults: &[Fault], input: &Pauli| -> Pauli {
        let empty: &[Fault] = &[];
        let (fp, fz, fm) = match slot {
            0 => (faults, empty, empty),
            1 => (empty, faults, empty),
            _ => (empty, empty, faults),
        };
        sim.run_case(input, fp, fz, fm).1
    };

    chk.cond1(&id, &run_slot(2, &[], &id));
    for e in weight_one_errors(code.n()) {
        chk.cond1(&e, &run_slot(2, &[], &e));
    }
    let maps = [&sim.prep_plus.map, &sim.prep_zero.map, &sim.map];
    for (slot, map) in maps.iter().enumerate() {
        for_each_fault_set(map, 1, &mut |faults| {
            chk.cond1(&id, &run_slot(slot, faults, &id));
        });
    }

    for s0 in 0..1u32 << code.num_generators() {
        let e = code.pure_error_product(s0);
        chk.cond2(0, &run_slot(2, &[], &e));
        for (slot, map) in maps.iter().enumerate() {
            for_each_fault_set(map, 1, &mut |faults| {
                chk.cond2(1, &run_slot(slot, faults, &e));
            });
        }
    }
    chk.report
}

fn all_single_faults(map: &LocationMap) -> Vec<Fault> {
    let mut out = Vec::new();
    for class in LocationClass::ALL {
        for &location in map.locations_of(class) {
            for k in 0..payload_count(class) {
                out.push(Fault {
                    location,
                    payload: payload(class, k),
                });
            }
        }
    }
    out
}

fn random_error(n: usize, weight: usize, rng: &mut impl Rng) -> Pauli {
    let mut p = Pauli::identity(n);
    let mut qubits: Vec<usize> = (0..n).collect();
    for i in 0..weight {
        let j = rng.gen_range(i..n);
        qubits.swap(i, j);
        let kind = match rng.gen_range(0..3) {
            0 => crate::pauli::PauliKind::X,
            1 => crate::pauli::PauliKind::Y,
            _ => crate::pauli::PauliKind::Z,
        };
        p.set_kind(qubits[i], kind);
    }
    p
}

/// Sampled two-fault check of the distance-5 adaptive surface protocol.
/// Cases split across the weight mixes of condition 1 and arbitrary-input
/// condition 2, with faults drawn uniformly from the full payload alphabet.
pub fn ft_check_surface_d5(sim: &SurfaceSim, samples: u64, seed: u64) -> FtReport {
    assert_eq!(sim.t, 2);
    let code = &sim.code;
    let mut chk = FtChecker::new(code, sim.lut);
    let singles = all_single_faults(&sim.map);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = Pauli::identity(code.n());

    let draw_pair = |rng: &mut ChaCha8Rng| -> [Fault; 2] {
        loop {
            let a = singles[rng.gen_range(0..singles.len())];
            let b = singles[rng.gen_range(0..singles.len())];
            if a.location != b.location {
                let mut pair = [a, b];
                pair.sort_by_key(|f| f.location);
                return pair;
            }
        }
    };

    for i in 0..samples {
        match i % 10 {
            // Condition 1: (input weight, faults) = (2,0), (1,1), (0,2).
            0 => {
                let e = random_error(code.n(), 2, &mut rng);
                let (_, residual) = sim.run_case(Some(&e), &[]);
                chk.cond1(&e, &residual);
            }
            1 | 2 => {
                let e = random_error(code.n(), 1, &mut rng);
                let f = [singles[rng.gen_range(0..singles.len())]];
                let (_, residual) = sim.run_case(Some(&e), &f);
                chk.cond1(&e, &residual);
            }
            3 | 4 | 5 => {
                let pair = draw_pair(&mut rng);
                let (_, residual) = sim.run_case(None, &pair);
                chk.cond1(&id, &residual);
            }
            // Condition 2: arbitrary input class, two faults.
            _ => {
                let s0 = rng.gen_range(0..1u32 << code.num_generators());
                let e = code.pure_error_product(s0);
                let pair = draw_pair(&mut rng);
                let (_, residual) = sim.run_case(Some(&e), &pair);
                chk.cond2(2, &residual);
            }
        }
    }
    chk.report
}

// ---------------------------------------------------------------------------
// Monte Carlo sweeps
// ---------------------------------------------------------------------------

/// Failure tally at one physical error rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub p: f64,
    pub shots: u64,
    pub failures: u64,
}

impl SweepPoint {
    pub fn rate(&self) -> f64 {
        self.failures as f64 / self.shots as f64
    }

    /// Binomial standard error of the rate estimate.
    pub fn stderr(&self) -> f64 {
        let r = self.rate();
        (r * (1.0 - r) / self.shots as f64).sqrt()
    }

    pub fn wilson95(&self) -> (f64, f64) {
        crate::decoder::wilson_interval(self.failures, self.shots, 1.96)
    }

    /// Fit input tuple `(p, rate, stderr)`.
    pub fn fit_point(&self) -> (f64, f64, f64) {
        (self.p, self.rate(), self.stderr())
    }
}

/// Drive `shot` over every grid point. Each shot owns an RNG stream derived
/// from `(point index, shot index)`, so results do not depend on evaluation
/// order and repeat byte-identically for a fixed seed.
pub fn sweep_points(
    ps: &[f64],
    shots: u64,
    seed: u64,
    mut shot: impl FnMut(&NoiseModel, &mut ChaCha8Rng) -> bool,
) -> Vec<SweepPoint> {
    let base = ChaCha8Rng::seed_from_u64(seed);
    ps.iter()
        .enumerate()
        .map(|(pi, &p)| {
            let noise = NoiseModel::new(p);
            let mut failures = 0;
            for s in 0..shots {
                let mut rng = base.clone();
                rng.set_stream(((pi as u64) << 48) | s);
                if shot(&noise, &mut rng) {
                    failures += 1;
                }
            }
            SweepPoint { p, shots, failures }
        })
        .collect()
}

/// Geometric grid of `k` points from `lo` to `hi` inclusive.
pub fn geometric_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    assert!(k >= 2 && lo > 0.0 && hi > lo);
    let step = (hi / lo).powf(1.0 / (k - 1) as f64);
    (0..k).map(|i| lo * step.powi(i as i32)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::PauliKind;

    #[test]
    fn verified_prep_accepts_fault_free_and_screens_singles() {
        // The verifier readout only sees the error type that copies onto
        // it, so the single-fault screen is exactly as strong as the
        // encoding circuit is quiet in the other type. The [[7,1,3]] code
        // passes the full bound; that is the property the distance-3 EC
        // fault-tolerance check leans on.
        let code = StabilizerCode::steane();
        for basis in [Basis::Z, Basis::X] {
            let sim = VerifiedPrepSim::new(&code, basis);
            let clean = sim.run(&[]).expect("fault-free prep accepts");
            assert!(clean.is_identity());

            // Accepted single-fault residuals stay within one fault of
            // the exact target state (equal to a weight-<=1 error up to
            // the group stabilizing that state).
            let mut accepted = 0;
            let mut rejected = 0;
            for_each_fault_set(&sim.map, 1, &mut |faults| {
                match sim.run(faults) {
                    None => rejected += 1,
                    Some(residual) => {
                        accepted += 1;
                        assert!(
                            within_weight_of_state(&code, basis, &residual, 1),
                            "{} {:?}: accepted residual {} from {:?}",
                            code.name(),
                            basis,
                            residual,
                            faults
                        );
                    }
                }
            });
            assert!(accepted > 0 && rejected > 0);
        }
    }

    #[test]
    fn verified_prep_color19_accepts_clean_and_rejects_some_singles() {
        for basis in [Basis::Z, Basis::X] {
            let sim = VerifiedPrepSim::new(&StabilizerCode::color19(), basis);
            assert!(sim.run(&[]).expect("fault-free prep accepts").is_identity());
            let mut rejected = 0;
            for_each_fault_set(&sim.map, 1, &mut |faults| {
                if sim.run(faults).is_none() {
                    rejected += 1;
                }
            });
            assert!(rejected > 100, "rejected only {rejected} single faults");
        }
    }

    /// Is `residual` equal, modulo the group stabilizing the prepared
    /// state, to an error of weight at most `w`? A Z-basis state absorbs
    /// the logical Z (it stabilizes |0>), an X-basis state the logical X,
    /// so only the opposite logical counts as damage.
    fn within_weight_of_state(
        code: &StabilizerCode,
        basis: Basis,
        residual: &Pauli,
        w: usize,
    ) -> bool {
        let mut candidates = vec![Pauli::identity(code.n())];
        if w >= 1 {
            candidates.extend(weight_one_errors(code.n()));
        }
        candidates.iter().any(|e| {
            let d = residual.product(e);
            if code.syndrome(&d) != 0 {
                return false;
            }
            let (has_x, has_z) = code.logical_class(&d);
            match basis {
                Basis::Z => !has_x,
                Basis::X => !has_z,
            }
        })
    }

    #[test]
    fn steane_ec_oracle() {
        let code = StabilizerCode::steane();
        let sim = SingleEcSim::new(&code, EcStyle::Steane);
        let x4 = Pauli::parse(7, "X4").unwrap();
        let (syn, residual) = sim.run_case(&x4, &[], &[], &[]);
        assert_eq!(syn.sx, 0b001);
        assert_eq!(syn.sz, 0);
        assert!(residual.is_identity());

        // A Z error reads out on the other side.
        let z6 = Pauli::parse(7, "Z6").unwrap();
        let (syn, residual) = sim.run_case(&z6, &[], &[], &[]);
        assert_eq!(syn.sx, 0);
        assert_eq!(syn.sz, code.z_syndrome(&z6));
        assert!(residual.is_identity());
    }

    #[test]
    fn knill_ec_translates_and_corrects() {
        let code = StabilizerCode::steane();
        let sim = SingleEcSim::new(&code, EcStyle::Knill);
        for q in 0..7 {
            let e = Pauli::single(7, q, PauliKind::X);
            let (syn, residual) = sim.run_case(&e, &[], &[], &[]);
            assert_eq!(code.combine_syndrome(syn.sx, syn.sz), code.syndrome(&e));
            assert!(residual.is_identity(), "X on qubit {q}");
        }
        // Random inputs teleport to their own ideal-decode class.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let w = rng.gen_range(0..=4);
            let e = random_error(7, w, &mut rng);
            let (syn, residual) = sim.run_case(&e, &[], &[], &[]);
            assert_eq!(code.combine_syndrome(syn.sx, syn.sz), code.syndrome(&e));
            assert_eq!(code.syndrome(&residual), 0);
            assert_eq!(
                code.logical_class(&residual),
                sim.lut.ideal_class(&code, &e)
            );
        }
        // Logical inputs pass through with their class intact.
        let (_, residual) = sim.run_case(code.logical_x(), &[], &[], &[]);
        assert_eq!(code.logical_class(&residual), (true, false));
        let (_, residual) = sim.run_case(code.logical_z(), &[], &[], &[]);
        assert_eq!(code.logical_class(&residual), (false, true));
    }

    #[test]
    fn exrec_fault_free_input_flow() {
        let code = StabilizerCode::steane();
        for style in [EcStyle::Steane, EcStyle::Knill] {
            let sim = ExRecSim::new(&code, style);
            let id = Pauli::identity(7);
            let empty: [&[Fault]; 8] = [&[]; 8];

            let (shot, r1, r2) = sim.run_case(&id, &id, &empty, &[]);
            assert!(!shot.failed());
            assert!(r1.is_identity() && r2.is_identity());

            // Weight-1 inputs get corrected away entirely.
            for e in weight_one_errors(7) {
                let (shot, ..) = sim.run_case(&e, &id, &empty, &[]);
                assert!(!shot.failed(), "{style:?}: input {e} on block 1");
                let (shot, ..) = sim.run_case(&id, &e, &empty, &[]);
                assert!(!shot.failed(), "{style:?}: input {e} on block 2");
            }

            // Logical X on the control propagates to both outputs; logical Z
            // on the target propagates back to the control.
            let (shot, ..) = sim.run_case(code.logical_x(), &id, &empty, &[]);
            assert_eq!(shot.class1, (true, false));
            assert_eq!(shot.class2, (true, false));
            let (shot, ..) = sim.run_case(&id, code.logical_z(), &empty, &[]);
            assert_eq!(shot.class1, (false, true));
            assert_eq!(shot.class2, (false, true));
        }
    }

    #[test]
    fn exrec_single_main_faults_never_fail() {
        let code = StabilizerCode::steane();
        for style in [EcStyle::Steane, EcStyle::Knill] {
            let sim = ExRecSim::new(&code, style);
            let id = Pauli::identity(7);
            let empty: [&[Fault]; 8] = [&[]; 8];
            let mut cases = 0;
            for_each_fault_set(&sim.map, 1, &mut |faults| {
                let (shot, ..) = sim.run_case(&id, &id, &empty, faults);
                assert!(!shot.failed(), "{style:?}: fault {faults:?}");
                cases += 1;
            });
            assert!(cases > 500);
        }
    }

    #[test]
    fn exrec_single_prep_faults_never_fail() {
        let code = StabilizerCode::steane();
        for style in [EcStyle::Steane, EcStyle::Knill] {
            let sim = ExRecSim::new(&code, style);
            let id = Pauli::identity(7);
            for slot in 0..8 {
                let map = match sim.exrec.preps[slot].basis {
                    Basis::X => &sim.prep_x.map,
                    Basis::Z => &sim.prep_z.map,
                };
                for_each_fault_set(map, 1, &mut |faults| {
                    let mut prep_faults: [&[Fault]; 8] = [&[]; 8];
                    prep_faults[slot] = faults;
                    let (shot, ..) = sim.run_case(&id, &id, &prep_faults, &[]);
                    assert!(!shot.failed(), "{style:?}: slot {slot} fault {faults:?}");
                });
            }
        }
    }

    #[test]
    fn steane_ec_gadget_is_fault_tolerant() {
        let sim = SingleEcSim::new(&StabilizerCode::steane(), EcStyle::Steane);
        let report = ft_check_steane_ec(&sim);
        assert!(report.clean(), "{report:?}");
        assert!(report.cases > 40_000);
    }

    #[test]
    fn surface_d3_single_fault_census() {
        let sim = SurfaceSim::new(&StabilizerCode::surface17());
        let report = ft_check_surface_d3(&sim);

        // Condition 1 holds everywhere: a single fault never flips the
        // decoded logical state of a correctable input.
        assert_eq!(report.cond1_violations, 0, "{report:?}");
        assert_eq!(report.cases, 378_074, "{report:?}");

        // Condition 2 does not: the fixed three-round majority vote
        // discards hook errors that a CNOT fault deposits without any
        // visible flip in the first two rounds (the vote settles on the
        // quiet majority), leaving weight-2 data errors from one fault.
        // 52 fault/payload combinations do this for each of the 256
        // syndrome classes of input. Every such residual sits exactly
        // one unit past the single-fault budget, never worse.
        assert_eq!(report.cond2_violations, 52 * 256, "{report:?}");
        assert_eq!(report.cond2_max_excess, 1, "{report:?}");
    }

    #[test]
    fn surface_d5_protocol_sampled_fault_tolerance() {
        let sim = SurfaceSim::new(&StabilizerCode::surface49());
        let report = ft_check_surface_d5(&sim, 3000, 5);
        assert_eq!(report.cond1_violations, 0, "{report:?}");
        assert_eq!(report.cases, 3000);
        // The adaptive protocol re-measures whenever a syndrome changes,
        // so a fault pair only escapes with excess weight when both land
        // in the last executed round and neither flips a readout there.
        // None of the 3000 seeded samples hits that coincidence.
        assert_eq!(report.cond2_violations, 0, "{report:?}");
    }

    #[test]
    fn surface_shot_matches_case_on_empty_faults() {
        for code in [StabilizerCode::surface17(), StabilizerCode::surface49()] {
            let sim = SurfaceSim::new(&code);
            let mut scratch = ShotScratch::default();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let noise = NoiseModel::new(0.0);
            let shot = sim.run_shot(&noise, &mut rng, &mut scratch);
            let (case, residual) = sim.run_case(None, &[]);
            assert_eq!(shot, case);
            assert!(residual.is_identity());
        }
    }

    #[test]
    fn surface_d5_rounds_stay_in_bounds() {
        let sim = SurfaceSim::new(&StabilizerCode::surface49());
        let noise = NoiseModel::new(2e-3);
        let mut scratch = ShotScratch::default();
        let base = ChaCha8Rng::seed_from_u64(9);
        let mut seen_more_than_min = false;
        for s in 0..2000 {
            let mut rng = base.clone();
            rng.set_stream(s);
            let shot = sim.run_shot(&noise, &mut rng, &mut scratch);
            assert!(shot.rounds >= 3 && shot.rounds <= 6);
            assert_eq!(shot.syndromes.len(), shot.rounds);
            seen_more_than_min |= shot.rounds > 3;
        }
        assert!(seen_more_than_min);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let code = StabilizerCode::steane();
        let sim = ExRecSim::new(&code, EcStyle::Steane);
        let ps = [2e-3];
        let a = sim.sweep(&ps, 3000, 42);
        let b = sim.sweep(&ps, 3000, 42);
        assert_eq!(a, b);
        assert!(a[0].failures > 0, "expect visible failures at p=2e-3");
        assert!(a[0].rate() < 0.2);
        let c = sim.sweep(&ps, 3000, 43);
        assert_ne!(a[0].failures, c[0].failures);
    }

    #[test]
    fn geometric_grid_endpoints() {
        let g = geometric_grid(1e-4, 1e-3, 6);
        assert_eq!(g.len(), 6);
        assert!((g[0] - 1e-4).abs() < 1e-12);
        assert!((g[5] - 1e-3).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
