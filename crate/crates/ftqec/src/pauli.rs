//! Phaseless n-qubit Pauli operators in binary symplectic form.
//!
//! A Pauli is stored as two packed bit vectors (x, z) where qubit `q` carries
//! X iff `x[q]` is set, Z iff `z[q]` is set, and Y iff both are set. Global
//! phases are irrelevant for stabilizer bookkeeping and are not tracked, so
//! multiplication is plain XOR and every operator is its own inverse.
//!
//! Qubit labels are 1-based in text form (`X4X5X6X7`) and 0-based in the API.

use std::fmt;

use thiserror::Error;

/// The single-qubit Pauli at one tensor factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliKind {
    I,
    X,
    Y,
    Z,
}

/// Error from parsing a Pauli string.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum PauliParseError {
    #[error("unexpected character {0:?} in Pauli string")]
    BadChar(char),
    #[error("qubit label {0} out of range 1..={1}")]
    LabelOutOfRange(usize, usize),
    #[error("missing qubit label after {0:?}")]
    MissingLabel(char),
}

/// A phaseless Pauli operator on `n` qubits.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pauli {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
}

fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

impl Pauli {
    /// The identity on `n` qubits.
    pub fn identity(n: usize) -> Self {
        let w = words_for(n);
        Pauli {
            n,
            x: vec![0; w],
            z: vec![0; w],
        }
    }

    /// A single-qubit Pauli at 0-based qubit `q`.
    pub fn single(n: usize, q: usize, kind: PauliKind) -> Self {
        let mut p = Pauli::identity(n);
        p.set_kind(q, kind);
        p
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// Packed X-component words, qubit `q` at bit `q % 64` of word `q / 64`.
    pub fn x_words(&self) -> &[u64] {
        &self.x
    }

    /// Packed Z-component words, same layout as [`Pauli::x_words`].
    pub fn z_words(&self) -> &[u64] {
        &self.z
    }

    pub fn x_bit(&self, q: usize) -> bool {
        debug_assert!(q < self.n);
        self.x[q / 64] >> (q % 64) & 1 == 1
    }

    pub fn z_bit(&self, q: usize) -> bool {
        debug_assert!(q < self.n);
        self.z[q / 64] >> (q % 64) & 1 == 1
    }

    pub fn set_x_bit(&mut self, q: usize, v: bool) {
        debug_assert!(q < self.n);
        let (w, b) = (q / 64, q % 64);
        if v {
            self.x[w] |= 1 << b;
        } else {
            self.x[w] &= !(1 << b);
        }
    }

    pub fn set_z_bit(&mut self, q: usize, v: bool) {
        debug_assert!(q < self.n);
        let (w, b) = (q / 64, q % 64);
        if v {
            self.z[w] |= 1 << b;
        } else {
            self.z[w] &= !(1 << b);
        }
    }

    pub fn kind_at(&self, q: usize) -> PauliKind {
        match (self.x_bit(q), self.z_bit(q)) {
            (false, false) => PauliKind::I,
            (true, false) => PauliKind::X,
            (true, true) => PauliKind::Y,
            (false, true) => PauliKind::Z,
        }
    }

    pub fn set_kind(&mut self, q: usize, kind: PauliKind) {
        let (xb, zb) = match kind {
            PauliKind::I => (false, false),
            PauliKind::X => (true, false),
            PauliKind::Y => (true, true),
            PauliKind::Z => (false, true),
        };
        self.set_x_bit(q, xb);
        self.set_z_bit(q, zb);
    }

    /// Multiply `other` into `self` (phaseless, so this is XOR of components).
    pub fn mul_assign(&mut self, other: &Pauli) {
        assert_eq!(self.n, other.n, "Pauli size mismatch");
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a ^= b;
        }
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            *a ^= b;
        }
    }

    pub fn product(&self, other: &Pauli) -> Pauli {
        let mut p = self.clone();
        p.mul_assign(other);
        p
    }

    /// Whether the two operators commute (symplectic inner product is 0).
    pub fn commutes_with(&self, other: &Pauli) -> bool {
        assert_eq!(self.n, other.n, "Pauli size mismatch");
        let mut acc = 0u64;
        for i in 0..self.x.len() {
            acc ^= self.x[i] & other.z[i];
            acc ^= self.z[i] & other.x[i];
        }
        acc.count_ones() % 2 == 0
    }

    /// Number of qubits on which the operator is not the identity.
    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(x, z)| (x | z).count_ones() as usize)
            .sum()
    }

    pub fn is_identity(&self) -> bool {
        self.x.iter().all(|w| *w == 0) && self.z.iter().all(|w| *w == 0)
    }

    /// 0-based qubits in the support, ascending.
    pub fn support(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for w in 0..self.x.len() {
            let mut bits = self.x[w] | self.z[w];
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(w * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    /// The X-type part (Z component dropped), e.g. `Y1 Z2` -> `X1`.
    pub fn x_part(&self) -> Pauli {
        Pauli {
            n: self.n,
            x: self.x.clone(),
            z: vec![0; self.z.len()],
        }
    }

    /// The Z-type part (X component dropped), e.g. `Y1 X2` -> `Z1`.
    pub fn z_part(&self) -> Pauli {
        Pauli {
            n: self.n,
            x: vec![0; self.x.len()],
            z: self.z.clone(),
        }
    }

    /// Deterministic total order on (x_words, z_words), used for tie-breaks.
    pub fn packed_key(&self) -> (&[u64], &[u64]) {
        (&self.x, &self.z)
    }

    /// Copy this operator onto a larger register: qubit `q` of `self` lands on
    /// qubit `map[q]` of the result.
    pub fn embed(&self, n_total: usize, map: &[usize]) -> Pauli {
        assert_eq!(map.len(), self.n, "qubit map must cover every qubit");
        let mut out = Pauli::identity(n_total);
        for q in 0..self.n {
            if self.x_bit(q) {
                out.set_x_bit(map[q], true);
            }
            if self.z_bit(q) {
                out.set_z_bit(map[q], true);
            }
        }
        out
    }

    /// Extract the sub-operator on `map` (inverse of [`Pauli::embed`] when the
    /// operator is supported on the mapped qubits).
    pub fn restrict(&self, map: &[usize]) -> Pauli {
        let mut out = Pauli::identity(map.len());
        for (q, &g) in map.iter().enumerate() {
            if self.x_bit(g) {
                out.set_x_bit(q, true);
            }
            if self.z_bit(g) {
                out.set_z_bit(q, true);
            }
        }
        out
    }

    /// Parse `X4X5 Y2 Z7`-style text with 1-based labels; `I` (or an empty
    /// string) is the identity. Repeated labels multiply, so `X1Z1` is `Y1`.
    pub fn parse(n: usize, s: &str) -> Result<Self, PauliParseError> {
        let mut p = Pauli::identity(n);
        let mut chars = s.chars().peekable();
        while let Some(c) = chars.next() {
            if c.is_whitespace() || c == '*' {
                continue;
            }
            if c == 'I' {
                continue;
            }
            if !matches!(c, 'X' | 'Y' | 'Z') {
                return Err(PauliParseError::BadChar(c));
            }
            let mut label = 0usize;
            let mut digits = 0;
            while let Some(d) = chars.peek().and_then(|ch| ch.to_digit(10)) {
                label = label * 10 + d as usize;
                digits += 1;
                chars.next();
            }
            if digits == 0 {
                return Err(PauliParseError::MissingLabel(c));
            }
            if label == 0 || label > n {
                return Err(PauliParseError::LabelOutOfRange(label, n));
            }
            let q = label - 1;
            match c {
                'X' => p.set_x_bit(q, !p.x_bit(q)),
                'Y' => {
                    p.set_x_bit(q, !p.x_bit(q));
                    p.set_z_bit(q, !p.z_bit(q));
                }
                'Z' => p.set_z_bit(q, !p.z_bit(q)),
                _ => unreachable!(),
            }
        }
        Ok(p)
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "I");
        }
        for q in self.support() {
            let c = match self.kind_at(q) {
                PauliKind::X => 'X',
                PauliKind::Y => 'Y',
                PauliKind::Z => 'Z',
                PauliKind::I => unreachable!(),
            };
            write!(f, "{}{}", c, q + 1)?;
        }
        Ok(())
    }
}

impl PartialOrd for Pauli {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pauli {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.packed_key().cmp(&other.packed_key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display_roundtrip() {
        let p = Pauli::parse(7, "X4X5X6X7").unwrap();
        assert_eq!(p.to_string(), "X4X5X6X7");
        assert_eq!(p.weight(), 4);

        let q = Pauli::parse(9, "Z1 Y5 X9").unwrap();
        assert_eq!(q.to_string(), "Z1Y5X9");
        assert_eq!(q.kind_at(0), PauliKind::Z);
        assert_eq!(q.kind_at(4), PauliKind::Y);
        assert_eq!(q.kind_at(8), PauliKind::X);

        assert_eq!(Pauli::parse(3, "I").unwrap(), Pauli::identity(3));
        assert_eq!(Pauli::parse(3, "").unwrap(), Pauli::identity(3));
        assert_eq!(Pauli::identity(3).to_string(), "I");
    }

    #[test]
    fn parse_rejects_garbage() {
        assert_eq!(
            Pauli::parse(3, "A1"),
            Err(PauliParseError::BadChar('A'))
        );
        assert_eq!(
            Pauli::parse(3, "X4"),
            Err(PauliParseError::LabelOutOfRange(4, 3))
        );
        assert_eq!(
            Pauli::parse(3, "X0"),
            Err(PauliParseError::LabelOutOfRange(0, 3))
        );
        assert_eq!(Pauli::parse(3, "XZ1"), Err(PauliParseError::MissingLabel('X')));
    }

    #[test]
    fn phaseless_multiplication_is_xor() {
        let x1 = Pauli::parse(2, "X1").unwrap();
        let z1 = Pauli::parse(2, "Z1").unwrap();
        let y1 = Pauli::parse(2, "Y1").unwrap();

        assert_eq!(x1.product(&z1), y1);
        assert_eq!(x1.product(&x1), Pauli::identity(2));
        assert_eq!(y1.product(&x1), z1);

        let a = Pauli::parse(4, "X1X2").unwrap();
        let b = Pauli::parse(4, "X2X3").unwrap();
        assert_eq!(a.product(&b), Pauli::parse(4, "X1X3").unwrap());
    }

    #[test]
    fn commutation_follows_symplectic_product() {
        let n = 4;
        let x1 = Pauli::parse(n, "X1").unwrap();
        let z1 = Pauli::parse(n, "Z1").unwrap();
        let z2 = Pauli::parse(n, "Z2").unwrap();
        let y1 = Pauli::parse(n, "Y1").unwrap();

        assert!(!x1.commutes_with(&z1));
        assert!(x1.commutes_with(&z2));
        assert!(!x1.commutes_with(&y1));
        assert!(y1.commutes_with(&y1));

        // Two overlapping qubits with anticommuting factors each: overall commute.
        let a = Pauli::parse(n, "X1X2").unwrap();
        let b = Pauli::parse(n, "Z1Z2").unwrap();
        assert!(a.commutes_with(&b));
    }

    #[test]
    fn weight_support_and_parts() {
        let p = Pauli::parse(70, "X1Y64Z70").unwrap();
        assert_eq!(p.weight(), 3);
        assert_eq!(p.support(), vec![0, 63, 69]);
        assert_eq!(p.x_part().to_string(), "X1X64");
        assert_eq!(p.z_part().to_string(), "Z64Z70");
    }

    #[test]
    fn embed_and_restrict_are_inverse() {
        let p = Pauli::parse(3, "X1Z3").unwrap();
        let map = [4, 0, 2];
        let e = p.embed(6, &map);
        assert_eq!(e.to_string(), "Z3X5");
        assert_eq!(e.restrict(&map), p);
    }

    #[test]
    fn packed_order_is_total_and_deterministic() {
        let a = Pauli::parse(3, "X1").unwrap();
        let b = Pauli::parse(3, "X2").unwrap();
        let c = Pauli::parse(3, "Z1").unwrap();
        assert!(a < b);
        assert!(c < a); // z-only sorts before any x bit set
        let mut v = vec![b.clone(), c.clone(), a.clone()];
        v.sort();
        assert_eq!(v, vec![c, a, b]);
    }
}
