//! CSS stabilizer codes: generators, pure errors, logical operators,
//! syndromes, and the text format for code-definition files.
//!
//! Four codes ship built in: the [[7,1,3]] Steane code, the [[9,1,3]] and
//! [[25,1,5]] rotated surface codes, and the [[19,1,5]] color code.
//!
//! Syndrome bit order: the Z-type generators come first, then the X-type
//! generators. An X error therefore flips bits in the low block (its
//! "X syndrome") and a Z error in the high block. Pure errors are stored in
//! the matching order, X-type first, so that `pure_errors[j]` anticommutes
//! with `generators[j]` and with no other generator.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pauli::{Pauli, PauliParseError};

/// Reasons a code definition fails validation.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodeError {
    #[error("line {line}: {err}")]
    Parse { line: usize, err: String },
    #[error("expected {expected} generators for [[{n},{k}]], found {found}")]
    GeneratorCount { n: usize, k: usize, expected: usize, found: usize },
    #[error("pure error count {found} does not match generator count {expected}")]
    PureErrorCount { expected: usize, found: usize },
    #[error("x_generators[{0}] has a Z component")]
    XGeneratorNotXType(usize),
    #[error("z_generators[{0}] has an X component")]
    ZGeneratorNotZType(usize),
    #[error("generators {0} and {1} anticommute")]
    GeneratorsAnticommute(usize, usize),
    #[error("generators are not independent (rank {rank} < {expected})")]
    GeneratorsDependent { rank: usize, expected: usize },
    #[error("pure error {i} has syndrome {found:#b}, expected bit {i} only")]
    PureErrorPairing { i: usize, found: u32 },
    #[error("logical {0} anticommutes with generator {1}")]
    LogicalNotInNormalizer(&'static str, usize),
    #[error("logical X and logical Z commute; they must anticommute")]
    LogicalsCommute,
    #[error("missing section {0}")]
    MissingSection(&'static str),
    #[error("too many generators ({0}); syndromes are limited to 32 bits")]
    TooManyGenerators(usize),
}

/// A CSS stabilizer code with explicit pure errors and logical operators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StabilizerCode {
    name: String,
    n: usize,
    k: usize,
    d: usize,
    x_generators: Vec<Pauli>,
    z_generators: Vec<Pauli>,
    pure_errors_x: Vec<Pauli>,
    pure_errors_z: Vec<Pauli>,
    logical_x: Pauli,
    logical_z: Pauli,
    // Combined views in syndrome order: z-type generators first.
    generators: Vec<Pauli>,
    pure_errors: Vec<Pauli>,
}

impl StabilizerCode {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        n: usize,
        k: usize,
        d: usize,
        x_generators: Vec<Pauli>,
        z_generators: Vec<Pauli>,
        pure_errors_x: Vec<Pauli>,
        pure_errors_z: Vec<Pauli>,
        logical_x: Pauli,
        logical_z: Pauli,
    ) -> Result<Self, CodeError> {
        let mut generators = z_generators.clone();
        generators.extend(x_generators.iter().cloned());
        let mut pure_errors = pure_errors_x.clone();
        pure_errors.extend(pure_errors_z.iter().cloned());
        let code = StabilizerCode {
            name: name.into(),
            n,
            k,
            d,
            x_generators,
            z_generators,
            pure_errors_x,
            pure_errors_z,
            logical_x,
            logical_z,
            generators,
            pure_errors,
        };
        code.validate()?;
        Ok(code)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of correctable errors, floor((d-1)/2).
    pub fn t(&self) -> usize {
        (self.d - 1) / 2
    }

    pub fn num_generators(&self) -> usize {
        self.n - self.k
    }

    /// All generators in syndrome order (Z-type block, then X-type block).
    pub fn generators(&self) -> &[Pauli] {
        &self.generators
    }

    pub fn x_generators(&self) -> &[Pauli] {
        &self.x_generators
    }

    pub fn z_generators(&self) -> &[Pauli] {
        &self.z_generators
    }

    /// Pure errors in syndrome order (X-type block, then Z-type block);
    /// `pure_errors()[j]` anticommutes exactly with `generators()[j]`.
    pub fn pure_errors(&self) -> &[Pauli] {
        &self.pure_errors
    }

    pub fn logical_x(&self) -> &Pauli {
        &self.logical_x
    }

    pub fn logical_z(&self) -> &Pauli {
        &self.logical_z
    }

    /// Width in bits of the X-syndrome block (= number of Z-type generators).
    pub fn x_syndrome_bits(&self) -> usize {
        self.z_generators.len()
    }

    /// Width in bits of the Z-syndrome block (= number of X-type generators).
    pub fn z_syndrome_bits(&self) -> usize {
        self.x_generators.len()
    }

    /// Full syndrome of `p`: bit `j` is set iff `p` anticommutes with
    /// `generators()[j]`.
    pub fn syndrome(&self, p: &Pauli) -> u32 {
        let mut s = 0u32;
        for (j, g) in self.generators.iter().enumerate() {
            if !p.commutes_with(g) {
                s |= 1 << j;
            }
        }
        s
    }

    /// Low syndrome block only: the bits from Z-type generators, which detect
    /// the X component of `p`.
    pub fn x_syndrome(&self, p: &Pauli) -> u32 {
        self.syndrome(p) & ((1 << self.x_syndrome_bits()) - 1)
    }

    /// High syndrome block only (shifted down): the bits from X-type
    /// generators, which detect the Z component of `p`.
    pub fn z_syndrome(&self, p: &Pauli) -> u32 {
        self.syndrome(p) >> self.x_syndrome_bits()
    }

    /// Combine per-type blocks back into a full syndrome word.
    pub fn combine_syndrome(&self, x_block: u32, z_block: u32) -> u32 {
        x_block | z_block << self.x_syndrome_bits()
    }

    /// Product of pure errors selected by the set bits of `s`; its syndrome
    /// is exactly `s`.
    pub fn pure_error_product(&self, s: u32) -> Pauli {
        let mut p = Pauli::identity(self.n);
        for (j, t) in self.pure_errors.iter().enumerate() {
            if s >> j & 1 == 1 {
                p.mul_assign(t);
            }
        }
        p
    }

    /// Whether `p` commutes with every generator (trivial syndrome).
    pub fn in_normalizer(&self, p: &Pauli) -> bool {
        self.syndrome(p) == 0
    }

    /// Logical class `(b1, b2)` of a normalizer element: `b1` is set iff `p`
    /// carries a logical X component (anticommutes with logical Z), `b2` iff
    /// it carries a logical Z component (anticommutes with logical X).
    pub fn logical_class(&self, p: &Pauli) -> (bool, bool) {
        debug_assert!(self.in_normalizer(p), "logical class needs trivial syndrome");
        (
            !p.commutes_with(&self.logical_z),
            !p.commutes_with(&self.logical_x),
        )
    }

    /// Check every structural invariant; `new` and the text parser call this.
    pub fn validate(&self) -> Result<(), CodeError> {
        let m = self.n - self.k;
        if m > 32 {
            return Err(CodeError::TooManyGenerators(m));
        }
        if self.generators.len() != m {
            return Err(CodeError::GeneratorCount {
                n: self.n,
                k: self.k,
                expected: m,
                found: self.generators.len(),
            });
        }
        if self.pure_errors.len() != m {
            return Err(CodeError::PureErrorCount {
                expected: m,
                found: self.pure_errors.len(),
            });
        }
        if self.pure_errors_x.len() != self.z_generators.len() {
            return Err(CodeError::PureErrorCount {
                expected: self.z_generators.len(),
                found: self.pure_errors_x.len(),
            });
        }
        for (i, g) in self.x_generators.iter().enumerate() {
            if !g.z_part().is_identity() {
                return Err(CodeError::XGeneratorNotXType(i));
            }
        }
        for (i, g) in self.z_generators.iter().enumerate() {
            if !g.x_part().is_identity() {
                return Err(CodeError::ZGeneratorNotZType(i));
            }
        }
        for i in 0..m {
            for j in i + 1..m {
                if !self.generators[i].commutes_with(&self.generators[j]) {
                    return Err(CodeError::GeneratorsAnticommute(i, j));
                }
            }
        }
        let rank = gf2_symplectic_rank(&self.generators);
        if rank != m {
            return Err(CodeError::GeneratorsDependent { rank, expected: m });
        }
        for (i, t) in self.pure_errors.iter().enumerate() {
            let s = self.syndrome(t);
            if s != 1 << i {
                return Err(CodeError::PureErrorPairing { i, found: s });
            }
        }
        for (j, g) in self.generators.iter().enumerate() {
            if !self.logical_x.commutes_with(g) {
                return Err(CodeError::LogicalNotInNormalizer("X", j));
            }
            if !self.logical_z.commutes_with(g) {
                return Err(CodeError::LogicalNotInNormalizer("Z", j));
            }
        }
        if self.logical_x.commutes_with(&self.logical_z) {
            return Err(CodeError::LogicalsCommute);
        }
        Ok(())
    }

    /// Parse the code-definition text format (see the `data/` files for the
    /// shape: scalar fields, then one Pauli per line under each section).
    pub fn from_text(text: &str) -> Result<Self, CodeError> {
        let mut name = None;
        let mut n = None;
        let mut k = None;
        let mut d = None;
        let mut sections: [(&str, Vec<String>); 6] = [
            ("x_generators", Vec::new()),
            ("z_generators", Vec::new()),
            ("pure_errors_x", Vec::new()),
            ("pure_errors_z", Vec::new()),
            ("logical_x", Vec::new()),
            ("logical_z", Vec::new()),
        ];
        let mut current: Option<usize> = None;

        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some((key, value)) = line.split_once(':') {
                let key = key.trim();
                let value = value.trim();
                let parse_usize = |v: &str| {
                    v.parse::<usize>().map_err(|e| CodeError::Parse {
                        line: line_no,
                        err: format!("bad integer {v:?}: {e}"),
                    })
                };
                match key {
                    "name" => {
                        name = Some(value.to_string());
                        current = None;
                        continue;
                    }
                    "n" => {
                        n = Some(parse_usize(value)?);
                        current = None;
                        continue;
                    }
                    "k" => {
                        k = Some(parse_usize(value)?);
                        current = None;
                        continue;
                    }
                    "d" => {
                        d = Some(parse_usize(value)?);
                        current = None;
                        continue;
                    }
                    _ => {
                        if let Some(pos) = sections.iter().position(|(s, _)| *s == key) {
                            if !value.is_empty() {
                                sections[pos].1.push(value.to_string());
                            }
                            current = Some(pos);
                            continue;
                        }
                        return Err(CodeError::Parse {
                            line: line_no,
                            err: format!("unknown field {key:?}"),
                        });
                    }
                }
            }
            match current {
                Some(pos) => sections[pos].1.push(line.to_string()),
                None => {
                    return Err(CodeError::Parse {
                        line: line_no,
                        err: format!("Pauli line {line:?} outside any section"),
                    })
                }
            }
        }

        let name = name.ok_or(CodeError::MissingSection("name"))?;
        let n = n.ok_or(CodeError::MissingSection("n"))?;
        let k = k.ok_or(CodeError::MissingSection("k"))?;
        let d = d.ok_or(CodeError::MissingSection("d"))?;

        let parse_list = |lines: &[String]| -> Result<Vec<Pauli>, CodeError> {
            lines
                .iter()
                .map(|s| {
                    Pauli::parse(n, s).map_err(|e: PauliParseError| CodeError::Parse {
                        line: 0,
                        err: format!("{s:?}: {e}"),
                    })
                })
                .collect()
        };

        let x_generators = parse_list(&sections[0].1)?;
        let z_generators = parse_list(&sections[1].1)?;
        let pure_errors_x = parse_list(&sections[2].1)?;
        let pure_errors_z = parse_list(&sections[3].1)?;
        let logical_x = parse_list(&sections[4].1)?
            .pop()
            .ok_or(CodeError::MissingSection("logical_x"))?;
        let logical_z = parse_list(&sections[5].1)?
            .pop()
            .ok_or(CodeError::MissingSection("logical_z"))?;

        StabilizerCode::new(
            name,
            n,
            k,
            d,
            x_generators,
            z_generators,
            pure_errors_x,
            pure_errors_z,
            logical_x,
            logical_z,
        )
    }

    /// Render in the same text format accepted by [`StabilizerCode::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "name: {}", self.name);
        let _ = writeln!(out, "n: {}", self.n);
        let _ = writeln!(out, "k: {}", self.k);
        let _ = writeln!(out, "d: {}", self.d);
        let mut section = |title: &str, items: &[Pauli]| {
            let _ = writeln!(out, "\n{title}:");
            for p in items {
                let _ = writeln!(out, "{p}");
            }
        };
        section("x_generators", &self.x_generators);
        section("z_generators", &self.z_generators);
        section("pure_errors_x", &self.pure_errors_x);
        section("pure_errors_z", &self.pure_errors_z);
        section("logical_x", std::slice::from_ref(&self.logical_x));
        section("logical_z", std::slice::from_ref(&self.logical_z));
        out
    }

    /// The [[7,1,3]] Steane code.
    pub fn steane() -> StabilizerCode {
        StabilizerCode::from_text(include_str!("../data/steane.code"))
            .expect("built-in steane definition is valid")
    }

    /// The [[9,1,3]] rotated surface code.
    pub fn surface17() -> StabilizerCode {
        StabilizerCode::from_text(include_str!("../data/surface17.code"))
            .expect("built-in surface17 definition is valid")
    }

    /// The [[19,1,5]] color code.
    pub fn color19() -> StabilizerCode {
        StabilizerCode::from_text(include_str!("../data/color19.code"))
            .expect("built-in color19 definition is valid")
    }

    /// The [[25,1,5]] rotated surface code.
    pub fn surface49() -> StabilizerCode {
        StabilizerCode::from_text(include_str!("../data/surface49.code"))
            .expect("built-in surface49 definition is valid")
    }

    /// Look up a built-in code by name.
    pub fn builtin(name: &str) -> Option<StabilizerCode> {
        match name {
            "steane" => Some(Self::steane()),
            "surface17" => Some(Self::surface17()),
            "color19" => Some(Self::color19()),
            "surface49" => Some(Self::surface49()),
            _ => None,
        }
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["steane", "surface17", "color19", "surface49"]
    }
}

/// Rank of the generators as GF(2) row vectors in (x|z) symplectic form.
fn gf2_symplectic_rank(generators: &[Pauli]) -> usize {
    let mut rows: Vec<u128> = generators
        .iter()
        .map(|g| {
            let n = g.n_qubits();
            assert!(n <= 64, "symplectic rank helper limited to 64 qubits");
            let x = g.x_words().first().copied().unwrap_or(0) as u128;
            let z = g.z_words().first().copied().unwrap_or(0) as u128;
            x | z << n
        })
        .collect();
    let mut rank = 0;
    for bit in 0..128 {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r] >> bit & 1 == 1) else {
            continue;
        };
        rows.swap(rank, pivot);
        for r in 0..rows.len() {
            if r != rank && rows[r] >> bit & 1 == 1 {
                rows[r] ^= rows[rank];
            }
        }
        rank += 1;
        if rank == rows.len() {
            break;
        }
    }
    rank
}

/// Reduced row echelon form of GF(2) rows packed as u64 support masks
/// (bit q = qubit q). Zero rows are dropped; pivots ascend.
pub(crate) fn gf2_rref(rows: &[u64]) -> Vec<u64> {
    let mut rows: Vec<u64> = rows.to_vec();
    let mut out: Vec<u64> = Vec::new();
    let mut rank = 0usize;
    for bit in 0..64 {
        let Some(pivot) = (rank..rows.len()).find(|&r| rows[r] >> bit & 1 == 1) else {
            continue;
        };
        rows.swap(rank, pivot);
        let pivot_row = rows[rank];
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && *row >> bit & 1 == 1 {
                *row ^= pivot_row;
            }
        }
        rank += 1;
    }
    for r in rows.into_iter().take(rank) {
        out.push(r);
    }
    // Re-reduce upward so earlier pivots clear later rows' pivot columns.
    let mut reduced = out.clone();
    for i in 0..reduced.len() {
        let pivot_bit = reduced[i].trailing_zeros();
        for j in 0..reduced.len() {
            if j != i && reduced[j] >> pivot_bit & 1 == 1 {
                reduced[j] ^= reduced[i];
            }
        }
    }
    reduced.sort_by_key(|r| r.trailing_zeros());
    reduced
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Pauli;

    #[test]
    fn builtin_codes_validate() {
        for name in StabilizerCode::builtin_names() {
            let code = StabilizerCode::builtin(name).unwrap();
            assert_eq!(code.name(), *name);
            assert!(code.validate().is_ok(), "{name} failed validation");
            assert_eq!(code.generators().len(), code.n() - code.k());
        }
    }

    #[test]
    fn code_parameters_match_definitions() {
        let steane = StabilizerCode::steane();
        assert_eq!((steane.n(), steane.k(), steane.d(), steane.t()), (7, 1, 3, 1));
        assert_eq!(steane.x_syndrome_bits(), 3);
        assert_eq!(steane.z_syndrome_bits(), 3);

        let s17 = StabilizerCode::surface17();
        assert_eq!((s17.n(), s17.k(), s17.d()), (9, 1, 3));
        assert_eq!((s17.x_syndrome_bits(), s17.z_syndrome_bits()), (4, 4));

        let c19 = StabilizerCode::color19();
        assert_eq!((c19.n(), c19.k(), c19.d(), c19.t()), (19, 1, 5, 2));
        assert_eq!((c19.x_syndrome_bits(), c19.z_syndrome_bits()), (9, 9));

        let s49 = StabilizerCode::surface49();
        assert_eq!((s49.n(), s49.k(), s49.d()), (25, 1, 5));
        assert_eq!((s49.x_syndrome_bits(), s49.z_syndrome_bits()), (12, 12));
    }

    #[test]
    fn steane_syndromes_by_hand() {
        let code = StabilizerCode::steane();
        // X4 anticommutes with Z4Z5Z6Z7 only: low block bit 0.
        let x4 = Pauli::parse(7, "X4").unwrap();
        assert_eq!(code.syndrome(&x4), 0b000_001);
        assert_eq!(code.x_syndrome(&x4), 0b001);
        assert_eq!(code.z_syndrome(&x4), 0);
        // Z7 sits in every X generator: high block all ones.
        let z7 = Pauli::parse(7, "Z7").unwrap();
        assert_eq!(code.syndrome(&z7), 0b111_000);
        assert_eq!(code.z_syndrome(&z7), 0b111);
        // Y7 = X7 Z7 trips everything.
        let y7 = Pauli::parse(7, "Y7").unwrap();
        assert_eq!(code.syndrome(&y7), 0b111_111);
        // Stabilizer elements and logicals have trivial syndrome.
        assert_eq!(code.syndrome(code.logical_x()), 0);
        assert_eq!(code.syndrome(&code.generators()[0]), 0);
    }

    #[test]
    fn pure_error_products_hit_requested_syndrome() {
        for name in StabilizerCode::builtin_names() {
            let code = StabilizerCode::builtin(name).unwrap();
            let m = code.num_generators();
            for j in 0..m {
                let t = code.pure_error_product(1 << j);
                assert_eq!(code.syndrome(&t), 1 << j, "{name} pure error {j}");
            }
            // Linearity makes a few random combinations a sufficient check.
            let mut s = 0b1011u32 & ((1u32 << m) - 1);
            for _ in 0..8 {
                let t = code.pure_error_product(s);
                assert_eq!(code.syndrome(&t), s, "{name} syndrome {s:#b}");
                s = (s.wrapping_mul(0x9e37) ^ s >> 3) & ((1 << m) - 1);
            }
        }
    }

    #[test]
    fn logical_class_distinguishes_the_four_cosets() {
        let code = StabilizerCode::steane();
        let id = Pauli::identity(7);
        assert_eq!(code.logical_class(&id), (false, false));
        assert_eq!(code.logical_class(code.logical_x()), (true, false));
        assert_eq!(code.logical_class(code.logical_z()), (false, true));
        let y = code.logical_x().product(code.logical_z());
        assert_eq!(code.logical_class(&y), (true, true));
        // Multiplying by a stabilizer element leaves the class unchanged.
        let mut xl = code.logical_x().clone();
        xl.mul_assign(&code.generators()[2].clone());
        assert_eq!(code.logical_class(&xl), (true, false));
    }

    #[test]
    fn text_roundtrip_preserves_code() {
        for name in StabilizerCode::builtin_names() {
            let code = StabilizerCode::builtin(name).unwrap();
            let text = code.to_text();
            let parsed = StabilizerCode::from_text(&text).unwrap();
            assert_eq!(parsed, code, "{name} roundtrip");
        }
    }

    #[test]
    fn mutated_definitions_are_rejected() {
        // Break commutation: make one Z generator overlap an X generator oddly.
        let mut text = StabilizerCode::steane().to_text();
        text = text.replace("Z4Z5Z6Z7", "Z4Z5Z6");
        let err = StabilizerCode::from_text(&text).unwrap_err();
        assert!(
            matches!(
                err,
                CodeError::GeneratorsAnticommute(..) | CodeError::PureErrorPairing { .. }
            ),
            "got {err:?}"
        );

        // Break pure-error pairing.
        let mut text = StabilizerCode::steane().to_text();
        text = text.replace("\nX2\n", "\nX3\n");
        assert!(matches!(
            StabilizerCode::from_text(&text).unwrap_err(),
            CodeError::PureErrorPairing { .. }
        ));

        // Break logical commutation with the stabilizer.
        let mut text = StabilizerCode::surface17().to_text();
        text = text.replace("X3X5X7", "X3X5");
        assert!(matches!(
            StabilizerCode::from_text(&text).unwrap_err(),
            CodeError::LogicalNotInNormalizer(..)
        ));

        // Duplicate generator: dependent set.
        let mut text = StabilizerCode::steane().to_text();
        text = text.replace("X2X3X6X7", "X4X5X6X7");
        let err = StabilizerCode::from_text(&text).unwrap_err();
        assert!(
            matches!(
                err,
                CodeError::GeneratorsDependent { .. } | CodeError::PureErrorPairing { .. }
            ),
            "got {err:?}"
        );
    }

    #[test]
    fn rref_helper_produces_canonical_form() {
        // Rows of the Steane H_X as bit masks (1-based qubit q -> bit q-1).
        let rows = [
            0b1111000u64, // X4X5X6X7
            0b1100110,    // X2X3X6X7
            0b1010101,    // X1X3X5X7
        ];
        let rref = gf2_rref(&rows);
        assert_eq!(rref, vec![0b1010101, 0b1100110, 0b1111000]);
        // Pivots 0, 1, 3 (qubits 1, 2, 4).
        assert_eq!(rref[0] & 1, 1);
        assert_eq!(rref[1] >> 1 & 1, 1);
        assert_eq!(rref[2] >> 3 & 1, 1);
    }
}
