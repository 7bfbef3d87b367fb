//! CSS code construction: bivariate-bicycle and rotated surface codes.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{BitMatrix, BitVector, RowSpaceSolver};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodeError {
    #[error("invalid code parameters: {0}")]
    InvalidParams(String),
    #[error("surface code distance must be odd and at least 3, got {0}")]
    InvalidDistance(usize),
    #[error("CSS condition violated: H_X * H_Z^T != 0")]
    CssViolation,
    #[error("cannot parse code description `{text}`: {reason}")]
    Parse { text: String, reason: String },
    #[error("search needs {needed} candidates, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
}

/// One monomial `x^a y^b` of a bivariate polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct MonomialTerm {
    pub x_exp: usize,
    pub y_exp: usize,
}

impl MonomialTerm {
    pub fn new(x_exp: usize, y_exp: usize, l: usize, m: usize) -> Self {
        Self {
            x_exp: x_exp % l,
            y_exp: y_exp % m,
        }
    }

    /// Parses `1`, `x`, `y3`, `x2y1`, `x^2*y`.
    pub fn parse(term: &str, l: usize, m: usize) -> Result<Self, String> {
        let t: String = term
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '^' && *c != '*')
            .collect();
        if t == "1" {
            return Ok(Self::new(0, 0, l, m));
        }
        let (mut x, mut y) = (0usize, 0usize);
        let mut seen_x = false;
        let mut seen_y = false;
        let mut chars = t.chars().peekable();
        if chars.peek().is_none() {
            return Err("empty monomial".into());
        }
        while let Some(var) = chars.next() {
            let mut digits = String::new();
            while let Some(c) = chars.peek().filter(|c| c.is_ascii_digit()) {
                digits.push(*c);
                chars.next();
            }
            let exp = if digits.is_empty() {
                1
            } else {
                digits.parse().map_err(|_| format!("bad exponent in `{term}`"))?
            };
            match var {
                'x' if !seen_x => {
                    x = exp;
                    seen_x = true;
                }
                'y' if !seen_y => {
                    y = exp;
                    seen_y = true;
                }
                _ => return Err(format!("unexpected `{var}` in monomial `{term}`")),
            }
        }
        Ok(Self::new(x, y, l, m))
    }
}

impl fmt::Display for MonomialTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.x_exp, self.y_exp) {
            (0, 0) => write!(f, "1"),
            (a, 0) => write!(f, "x{a}"),
            (0, b) => write!(f, "y{b}"),
            (a, b) => write!(f, "x{a}y{b}"),
        }
    }
}

/// Parameters `(l, m, a, b)` of a bivariate-bicycle code. Term order is kept
/// as given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BbParams {
    pub l: usize,
    pub m: usize,
    pub a_terms: Vec<MonomialTerm>,
    pub b_terms: Vec<MonomialTerm>,
}

impl BbParams {
    pub fn new(l: usize, m: usize, a_terms: Vec<MonomialTerm>, b_terms: Vec<MonomialTerm>) -> Result<Self, CodeError> {
        if l == 0 || m == 0 {
            return Err(CodeError::InvalidParams("l and m must be at least 1".into()));
        }
        for (name, terms) in [("a", &a_terms), ("b", &b_terms)] {
            if terms.len() != 3 {
                return Err(CodeError::InvalidParams(format!(
                    "polynomial {name} needs exactly 3 terms, got {}",
                    terms.len()
                )));
            }
            let reduced: Vec<_> = terms
                .iter()
                .map(|t| MonomialTerm::new(t.x_exp, t.y_exp, l, m))
                .collect();
            if reduced[0] == reduced[1] || reduced[0] == reduced[2] || reduced[1] == reduced[2] {
                return Err(CodeError::InvalidParams(format!(
                    "polynomial {name} has repeated terms"
                )));
            }
        }
        let reduce = |ts: Vec<MonomialTerm>| {
            ts.into_iter()
                .map(|t| MonomialTerm::new(t.x_exp, t.y_exp, l, m))
                .collect()
        };
        Ok(Self {
            l,
            m,
            a_terms: reduce(a_terms),
            b_terms: reduce(b_terms),
        })
    }

    pub fn from_polynomials(l: usize, m: usize, a: &str, b: &str) -> Result<Self, CodeError> {
        let parse = |p: &str| -> Result<Vec<MonomialTerm>, CodeError> {
            p.split('+')
                .map(|t| MonomialTerm::parse(t, l.max(1), m.max(1)))
                .collect::<Result<_, _>>()
                .map_err(CodeError::InvalidParams)
        };
        Self::new(l, m, parse(a)?, parse(b)?)
    }

    /// `[[18,4,4]]`: l=3, m=3, a=1+x+y, b=1+x²+y².
    pub fn bb18() -> Self {
        Self::from_polynomials(3, 3, "1+x+y", "1+x2+y2").expect("valid preset")
    }

    /// `[[54,4,8]]`: l=3, m=9, a=x+y+y³, b=1+x²+y².
    pub fn bb54() -> Self {
        Self::from_polynomials(3, 9, "x+y+y3", "1+x2+y2").expect("valid preset")
    }

    /// `[[144,12,12]]`: l=12, m=6, a=x³+y+y², b=x+x²+y³.
    pub fn bb144() -> Self {
        Self::from_polynomials(12, 6, "x3+y+y2", "x+x2+y3").expect("valid preset")
    }

    fn poly_string(terms: &[MonomialTerm]) -> String {
        terms.iter().map(ToString::to_string).collect::<Vec<_>>().join("+")
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        (i % self.l) * self.m + (j % self.m)
    }

    /// Index of `g · x^a y^b`.
    #[inline]
    fn shift(&self, g: usize, t: MonomialTerm) -> usize {
        self.index(g / self.m + t.x_exp, g % self.m + t.y_exp)
    }

    /// Index of `g · (x^a y^b)^{-1}`.
    #[inline]
    fn unshift(&self, g: usize, t: MonomialTerm) -> usize {
        self.index(g / self.m + self.l - t.x_exp, g % self.m + self.m - t.y_exp)
    }

    fn poly_matrix(&self, terms: &[MonomialTerm]) -> BitMatrix {
        let size = self.l * self.m;
        let mut mat = BitMatrix::zeros(size, size);
        for g in 0..size {
            for &t in terms {
                mat.flip(g, self.shift(g, t));
            }
        }
        mat
    }
}

impl fmt::Display for BbParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "bb l={} m={} a={} b={}",
            self.l,
            self.m,
            Self::poly_string(&self.a_terms),
            Self::poly_string(&self.b_terms)
        )
    }
}

/// Per-tick data-qubit partner of every check during one extraction round.
///
/// `x_checks[c][t]` is the data qubit touched by X-check `c` at CNOT tick `t`,
/// if any; likewise for Z-checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckSchedule {
    pub depth: usize,
    pub x_checks: Vec<Vec<Option<usize>>>,
    pub z_checks: Vec<Vec<Option<usize>>>,
}

impl CheckSchedule {
    pub fn cnot_count(&self) -> usize {
        self.x_checks
            .iter()
            .chain(&self.z_checks)
            .map(|s| s.iter().flatten().count())
            .sum()
    }

    /// Each data qubit is touched at most once per tick.
    pub fn is_conflict_free(&self, n: usize) -> bool {
        (0..self.depth).all(|t| {
            let mut used = vec![false; n];
            self.x_checks
                .iter()
                .chain(&self.z_checks)
                .filter_map(|s| s[t])
                .all(|q| !std::mem::replace(&mut used[q], true))
        })
    }

    /// Every X/Z check pair interleaves on an even number of shared qubits,
    /// so the round measures the intended stabilizers.
    pub fn is_commutation_consistent(&self) -> bool {
        self.x_checks.iter().all(|xs| {
            self.z_checks.iter().all(|zs| {
                let mut x_first = 0usize;
                for (tx, qx) in xs.iter().enumerate() {
                    let Some(qx) = qx else { continue };
                    if let Some(tz) = zs.iter().position(|q| q == &Some(*qx)) {
                        if tx < tz {
                            x_first += 1;
                        }
                    }
                }
                x_first.is_multiple_of(2)
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeFamily {
    BivariateBicycle(BbParams),
    RotatedSurface { d: usize },
}

/// A CSS stabilizer code with logical representatives and a syndrome schedule.
#[derive(Debug, Clone)]
pub struct StabilizerCode {
    pub family: CodeFamily,
    pub n: usize,
    pub k: usize,
    pub d: Option<usize>,
    pub h_x: BitMatrix,
    pub h_z: BitMatrix,
    pub logical_z: Vec<BitVector>,
    pub logical_x: Vec<BitVector>,
    pub schedule: CheckSchedule,
}

impl StabilizerCode {
    pub fn check_count(&self) -> usize {
        self.h_x.rows() + self.h_z.rows()
    }

    pub fn is_bb(&self) -> bool {
        matches!(self.family, CodeFamily::BivariateBicycle(_))
    }

    pub fn name(&self) -> String {
        match self.d {
            Some(d) => format!("[[{},{},{}]]", self.n, self.k, d),
            None => format!("[[{},{}]]", self.n, self.k),
        }
    }

    pub fn descriptor(&self) -> String {
        match &self.family {
            CodeFamily::BivariateBicycle(p) => p.to_string(),
            CodeFamily::RotatedSurface { d } => format!("sc d={d}"),
        }
    }

    pub fn css_condition_holds(&self) -> bool {
        self.h_x.mul(&self.h_z.transpose()).is_zero()
    }

    pub fn report(&self) -> CodeReport {
        CodeReport {
            n: self.n,
            k: self.k,
            d_claimed: self.d,
            encoding_rate: Ratio::new(self.k as u64, (self.n + self.check_count()) as u64),
        }
    }

    /// Qubit permutation `pi` (data `i` pairs with data `pi[i]`) mapping the
    /// Z-check row space onto the X-check row space and back. A transversal
    /// CNOT between a Hadamard-transformed block and a plain block must pair
    /// qubits through it.
    pub fn hadamard_pairing(&self) -> Option<Vec<usize>> {
        let candidates: Vec<Vec<usize>> = match &self.family {
            CodeFamily::BivariateBicycle(p) => {
                let half = p.l * p.m;
                let neg = |g: usize| p.index(p.l - g / p.m, p.m - g % p.m);
                vec![(0..self.n)
                    .map(|q| if q < half { half + neg(q) } else { neg(q - half) })
                    .collect()]
            }
            CodeFamily::RotatedSurface { d } => {
                let d = *d;
                let maps: [fn(usize, usize, usize) -> (usize, usize); 8] = [
                    |r, c, _| (r, c),
                    |r, c, d| (c, d - 1 - r),
                    |r, c, d| (d - 1 - r, d - 1 - c),
                    |r, c, d| (d - 1 - c, r),
                    |r, c, _| (c, r),
                    |r, c, d| (d - 1 - c, d - 1 - r),
                    |r, c, d| (r, d - 1 - c),
                    |r, c, d| (d - 1 - r, c),
                ];
                maps.iter()
                    .map(|f| {
                        (0..self.n)
                            .map(|q| {
                                let (r, c) = f(q / d, q % d, d);
                                r * d + c
                            })
                            .collect()
                    })
                    .collect()
            }
        };
        candidates.into_iter().find(|pi| self.is_hadamard_pairing(pi))
    }

    pub fn is_hadamard_pairing(&self, pi: &[usize]) -> bool {
        let permute = |v: &BitVector| BitVector::from_indices(self.n, v.iter_ones().map(|i| pi[i]));
        let sx = RowSpaceSolver::new(&self.h_x);
        let sz = RowSpaceSolver::new(&self.h_z);
        (0..self.h_z.rows()).all(|r| sx.contains(&permute(&self.h_z.row(r))))
            && (0..self.h_x.rows()).all(|r| sz.contains(&permute(&self.h_x.row(r))))
    }

    /// Sparse row listing of both check matrices.
    pub fn dump_sparse(&self) -> String {
        let mut out = format!("# {} {}\n", self.name(), self.descriptor());
        for (label, m) in [("HX", &self.h_x), ("HZ", &self.h_z)] {
            for r in 0..m.rows() {
                let cols: Vec<String> = m.row(r).iter_ones().map(|c| c.to_string()).collect();
                out.push_str(&format!("{label} {r}: {}\n", cols.join(" ")));
            }
        }
        out
    }
}

/// Summary figures of a code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CodeReport {
    pub n: usize,
    pub k: usize,
    pub d_claimed: Option<usize>,
    #[serde(serialize_with = "ratio_as_string")]
    pub encoding_rate: Ratio<u64>,
}

fn ratio_as_string<S: serde::Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn logical_k(n: usize, h_x: &BitMatrix, h_z: &BitMatrix) -> usize {
    n - h_x.rank() - h_z.rank()
}

pub fn build_bb(params: &BbParams) -> Result<StabilizerCode, CodeError> {
    let params = BbParams::new(params.l, params.m, params.a_terms.clone(), params.b_terms.clone())?;
    let half = params.l * params.m;
    let n = 2 * half;
    let a = params.poly_matrix(&params.a_terms);
    let b = params.poly_matrix(&params.b_terms);
    let h_x = a.hstack(&b);
    let h_z = b.transpose().hstack(&a.transpose());
    if !h_x.mul(&h_z.transpose()).is_zero() {
        return Err(CodeError::CssViolation);
    }
    let k = logical_k(n, &h_x, &h_z);
    let (logical_z, logical_x) = logical_operators_of(&h_x, &h_z);

    // Directions 0..3 follow the A terms, 3..6 the B terms. X-check g touches
    // g·a_t (left) and g·b_t (right); Z-check g touches g·b_t⁻¹ (left) and
    // g·a_t⁻¹ (right).
    const SX: [Option<usize>; 7] = [None, Some(1), Some(4), Some(3), Some(5), Some(0), Some(2)];
    const SZ: [Option<usize>; 7] = [Some(3), Some(5), Some(0), Some(1), Some(2), Some(4), None];
    let x_checks = (0..half)
        .map(|g| {
            SX.iter()
                .map(|dir| {
                    dir.map(|t| {
                        if t < 3 {
                            params.shift(g, params.a_terms[t])
                        } else {
                            half + params.shift(g, params.b_terms[t - 3])
                        }
                    })
                })
                .collect()
        })
        .collect();
    let z_checks = (0..half)
        .map(|g| {
            SZ.iter()
                .map(|dir| {
                    dir.map(|t| {
                        if t < 3 {
                            params.unshift(g, params.b_terms[t])
                        } else {
                            half + params.unshift(g, params.a_terms[t - 3])
                        }
                    })
                })
                .collect()
        })
        .collect();

    let d = known_bb_distance(&params);
    Ok(StabilizerCode {
        family: CodeFamily::BivariateBicycle(params),
        n,
        k,
        d,
        h_x,
        h_z,
        logical_z,
        logical_x,
        schedule: CheckSchedule {
            depth: 7,
            x_checks,
            z_checks,
        },
    })
}

fn known_bb_distance(params: &BbParams) -> Option<usize> {
    [(BbParams::bb18(), 4), (BbParams::bb54(), 8), (BbParams::bb144(), 12)]
        .into_iter()
        .find(|(p, _)| p == params)
        .map(|(_, d)| d)
}

/// Rotated surface code on a `d × d` data lattice.
///
/// Data qubit `(r, c)` has index `r·d + c`. Plaquette `(i, j)` with
/// `0 ≤ i, j ≤ d` has corners `(i-1, j-1), (i-1, j), (i, j-1), (i, j)`; it is
/// X-type when `i + j` is even. X-type weight-2 plaquettes sit on the top and
/// bottom edges, Z-type ones on the left and right edges. Logical X runs down
/// column 0, logical Z along row 0.
pub fn build_rotated_sc(d: usize) -> Result<StabilizerCode, CodeError> {
    if d < 3 || d.is_multiple_of(2) {
        return Err(CodeError::InvalidDistance(d));
    }
    let n = d * d;
    let mut x_rows = Vec::new();
    let mut z_rows = Vec::new();
    let mut x_sched = Vec::new();
    let mut z_sched = Vec::new();
    for i in 0..=d {
        for j in 0..=d {
            let x_type = (i + j) % 2 == 0;
            let bulk = (1..d).contains(&i) && (1..d).contains(&j);
            let keep = bulk
                || (x_type && (i == 0 || i == d) && (1..d).contains(&j))
                || (!x_type && (j == 0 || j == d) && (1..d).contains(&i));
            if !keep {
                continue;
            }
            let corner = |di: usize, dj: usize| -> Option<usize> {
                let (r, c) = ((i + di).checked_sub(1)?, (j + dj).checked_sub(1)?);
                (r < d && c < d).then_some(r * d + c)
            };
            let (nw, ne, sw, se) = (corner(0, 0), corner(0, 1), corner(1, 0), corner(1, 1));
            let support: Vec<usize> = [nw, ne, sw, se].into_iter().flatten().collect();
            if x_type {
                x_rows.push(support);
                x_sched.push(vec![nw, ne, sw, se]);
            } else {
                z_rows.push(support);
                z_sched.push(vec![nw, sw, ne, se]);
            }
        }
    }
    let h_x = BitMatrix::from_supports(x_rows.len(), n, &x_rows);
    let h_z = BitMatrix::from_supports(z_rows.len(), n, &z_rows);
    if !h_x.mul(&h_z.transpose()).is_zero() {
        return Err(CodeError::CssViolation);
    }
    let k = logical_k(n, &h_x, &h_z);
    let logical_z = vec![BitVector::from_indices(n, 0..d)];
    let logical_x = vec![BitVector::from_indices(n, (0..d).map(|r| r * d))];
    Ok(StabilizerCode {
        family: CodeFamily::RotatedSurface { d },
        n,
        k,
        d: Some(d),
        h_x,
        h_z,
        logical_z,
        logical_x,
        schedule: CheckSchedule {
            depth: 4,
            x_checks: x_sched,
            z_checks: z_sched,
        },
    })
}

/// Kernel of `h` reduced modulo the row space of `stabilizers`.
fn independent_logicals(h: &BitMatrix, stabilizers: &BitMatrix) -> Vec<BitVector> {
    let n = h.cols();
    let mut span: Vec<BitVector> = (0..stabilizers.rows()).map(|r| stabilizers.row(r)).collect();
    let mut rank = stabilizers.rank();
    let mut out = Vec::new();
    for v in h.kernel_basis() {
        span.push(v.clone());
        let r = BitMatrix::from_rows(n, &span).rank();
        if r > rank {
            rank = r;
            out.push(v);
        } else {
            span.pop();
        }
    }
    out
}

fn logical_operators_of(h_x: &BitMatrix, h_z: &BitMatrix) -> (Vec<BitVector>, Vec<BitVector>) {
    let n = h_x.cols();
    let lz = independent_logicals(h_x, h_z);
    let lx = independent_logicals(h_z, h_x);
    let k = lz.len();
    assert_eq!(k, lx.len(), "X and Z logical counts differ");
    if k == 0 {
        return (lz, lx);
    }
    // Overlap matrix M[i][j] = lz_i · lx_j; replace lx by (M^-1)^T lx.
    let mut overlap = BitMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            overlap.set(i, j, lz[i].dot(&lx[j]));
        }
    }
    let paired = (0..k)
        .map(|j| {
            // Row j of (M^-1)^T is column j of M^-1, the solution of M c = e_j.
            let e = BitVector::from_indices(k, [j]);
            let c = overlap.solve(&e).expect("logical overlap matrix is invertible");
            let mut v = BitVector::zeros(n);
            for i in c.iter_ones() {
                v.xor_assign(&lx[i]);
            }
            v
        })
        .collect();
    (lz, paired)
}

/// Returns `(logical_z, logical_x)` with `logical_z[i] · logical_x[j] = δ_ij`.
pub fn logical_operators(code: &StabilizerCode) -> (Vec<BitVector>, Vec<BitVector>) {
    logical_operators_of(&code.h_x, &code.h_z)
}

fn binomial(n: usize, k: usize) -> u128 {
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

pub const DEFAULT_SEARCH_BUDGET: u128 = 50_000_000;

/// Smallest weight `≤ w_max` of a nontrivial logical operator, by exhaustive
/// enumeration of pure X and pure Z operators.
pub fn min_logical_weight_bruteforce(
    code: &StabilizerCode,
    w_max: usize,
    budget: u128,
) -> Result<Option<usize>, CodeError> {
    let n = code.n;
    let needed: u128 = 2 * (1..=w_max.min(n)).map(|w| binomial(n, w)).sum::<u128>();
    if needed > budget {
        return Err(CodeError::BudgetExceeded { needed, budget });
    }
    // X-type logicals live in ker(H_Z) outside rowspace(H_X), and vice versa.
    let sectors = [
        (code.h_z.transpose(), RowSpaceSolver::new(&code.h_x)),
        (code.h_x.transpose(), RowSpaceSolver::new(&code.h_z)),
    ];
    for w in 1..=w_max.min(n) {
        for (cols, stabs) in &sectors {
            let columns: Vec<BitVector> = (0..n).map(|q| cols.row(q)).collect();
            let mut chosen = Vec::with_capacity(w);
            let mut syndrome = BitVector::zeros(cols.cols());
            if search_weight(&columns, stabs, n, w, 0, &mut chosen, &mut syndrome) {
                return Ok(Some(w));
            }
        }
    }
    Ok(None)
}

fn search_weight(
    columns: &[BitVector],
    stabs: &RowSpaceSolver,
    n: usize,
    w: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    syndrome: &mut BitVector,
) -> bool {
    if chosen.len() == w {
        return syndrome.is_zero() && !stabs.contains(&BitVector::from_indices(n, chosen.iter().copied()));
    }
    let remaining = w - chosen.len();
    for q in start..=n - remaining {
        chosen.push(q);
        syndrome.xor_assign(&columns[q]);
        if search_weight(columns, stabs, n, w, q + 1, chosen, syndrome) {
            return true;
        }
        syndrome.xor_assign(&columns[q]);
        chosen.pop();
    }
    false
}

/// A parsed code description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeDescriptor {
    Bb(BbParams),
    Surface { d: usize },
}

impl CodeDescriptor {
    pub fn build(&self) -> Result<StabilizerCode, CodeError> {
        match self {
            CodeDescriptor::Bb(p) => build_bb(p),
            CodeDescriptor::Surface { d } => build_rotated_sc(*d),
        }
    }
}

impl FromStr for CodeDescriptor {
    type Err = CodeError;

    /// Accepts `bb l=3 m=3 a=1+x+y b=1+x2+y2`, `sc d=5`, and the shorthands
    /// `bb18`, `bb54`, `bb144`, `sc5`.
    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| CodeError::Parse {
            text: text.to_string(),
            reason: reason.to_string(),
        };
        let mut words = text.split_whitespace();
        let head = words.next().ok_or_else(|| err("empty description"))?.to_ascii_lowercase();
        let mut fields = std::collections::HashMap::new();
        for w in words {
            let (key, value) = w.split_once('=').ok_or_else(|| err("expected key=value"))?;
            if fields.insert(key.to_ascii_lowercase(), value.to_string()).is_some() {
                return Err(err(&format!("duplicate field `{key}`")));
            }
        }
        let int = |key: &str| -> Result<usize, CodeError> {
            fields
                .get(key)
                .ok_or_else(|| err(&format!("missing `{key}`")))?
                .parse()
                .map_err(|_| err(&format!("`{key}` is not a nonnegative integer")))
        };
        match head.as_str() {
            "bb18" | "bb54" | "bb144" if fields.is_empty() => Ok(CodeDescriptor::Bb(match head.as_str() {
                "bb18" => BbParams::bb18(),
                "bb54" => BbParams::bb54(),
                _ => BbParams::bb144(),
            })),
            "bb" => {
                if fields.len() != 4 {
                    return Err(err("bb needs exactly l, m, a, b"));
                }
                let (l, m) = (int("l")?, int("m")?);
                let poly = |key: &str| fields.get(key).cloned().ok_or_else(|| err(&format!("missing `{key}`")));
                Ok(CodeDescriptor::Bb(BbParams::from_polynomials(
                    l,
                    m,
                    &poly("a")?,
                    &poly("b")?,
                )?))
            }
            "sc" => {
                if fields.len() != 1 {
                    return Err(err("sc needs exactly d"));
                }
                Ok(CodeDescriptor::Surface { d: int("d")? })
            }
            s if s.starts_with("sc") && fields.is_empty() => s[2..]
                .parse()
                .map(|d| CodeDescriptor::Surface { d })
                .map_err(|_| err("bad surface-code shorthand")),
            _ => Err(err("unknown code family")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_rank(m: &BitMatrix) -> usize {
        let mut rows: Vec<Vec<u8>> = (0..m.rows())
            .map(|r| (0..m.cols()).map(|c| u8::from(m.get(r, c))).collect())
            .collect();
        let mut rank = 0;
        for c in 0..m.cols() {
            if let Some(p) = (rank..rows.len()).find(|&r| rows[r][c] == 1) {
                rows.swap(p, rank);
                for r in 0..rows.len() {
                    if r != rank && rows[r][c] == 1 {
                        let pivot = rows[rank].clone();
                        rows[r].iter_mut().zip(pivot).for_each(|(a, b)| *a ^= b);
                    }
                }
                rank += 1;
            }
        }
        rank
    }

    fn check_logicals(code: &StabilizerCode) {
        let (lz, lx) = (&code.logical_z, &code.logical_x);
        assert_eq!(lz.len(), code.k);
        assert_eq!(lx.len(), code.k);
        let sz = RowSpaceSolver::new(&code.h_z);
        let sx = RowSpaceSolver::new(&code.h_x);
        for i in 0..code.k {
            assert!(code.h_x.mul_vec(&lz[i]).is_zero());
            assert!(code.h_z.mul_vec(&lx[i]).is_zero());
            assert!(!sz.contains(&lz[i]));
            assert!(!sx.contains(&lx[i]));
            for j in 0..code.k {
                assert_eq!(lz[i].dot(&lx[j]), i == j);
            }
        }
    }

    #[test]
    fn monomial_parsing() {
        assert_eq!(MonomialTerm::parse("1", 3, 3).unwrap(), MonomialTerm::new(0, 0, 3, 3));
        assert_eq!(
            MonomialTerm::parse("x2y1", 3, 3).unwrap(),
            MonomialTerm::new(2, 1, 3, 3)
        );
        assert_eq!(MonomialTerm::parse("y^3", 3, 9).unwrap(), MonomialTerm::new(0, 3, 3, 9));
        assert_eq!(MonomialTerm::parse("x4", 3, 3).unwrap().x_exp, 1);
        assert!(MonomialTerm::parse("z", 3, 3).is_err());
        assert!(MonomialTerm::parse("xx", 3, 3).is_err());
    }

    #[test]
    fn bb_presets_have_table_parameters() {
        for (params, n, k) in [
            (BbParams::bb18(), 18, 4),
            (BbParams::bb54(), 54, 4),
            (BbParams::bb144(), 144, 12),
        ] {
            let code = build_bb(&params).unwrap();
            assert_eq!((code.n, code.k), (n, k));
            assert!(code.css_condition_holds());
            check_logicals(&code);
        }
    }

    #[test]
    fn bb18_ranks_match_dense_oracle() {
        let code = build_bb(&BbParams::bb18()).unwrap();
        assert_eq!(code.h_x.rank(), 7);
        assert_eq!(dense_rank(&code.h_x), 7);
        assert_eq!(code.h_x.kernel_basis().len(), 11);
    }

    #[test]
    fn bb_rows_have_weight_six_and_a_b_commute() {
        for params in [BbParams::bb18(), BbParams::bb54(), BbParams::bb144()] {
            let code = build_bb(&params).unwrap();
            for m in [&code.h_x, &code.h_z] {
                assert!((0..m.rows()).all(|r| m.row_weight(r) == 6));
            }
            let a = params.poly_matrix(&params.a_terms);
            let b = params.poly_matrix(&params.b_terms);
            assert_eq!(a.mul(&b), b.mul(&a));
        }
    }

    #[test]
    fn bb_schedule_matches_matrices() {
        let code = build_bb(&BbParams::bb144()).unwrap();
        let s = &code.schedule;
        assert_eq!(s.cnot_count(), 6 * code.check_count());
        assert!(s.is_conflict_free(code.n));
        assert!(s.is_commutation_consistent());
        for (m, checks) in [(&code.h_x, &s.x_checks), (&code.h_z, &s.z_checks)] {
            for (r, sched) in checks.iter().enumerate() {
                let mut touched: Vec<usize> = sched.iter().flatten().copied().collect();
                touched.sort_unstable();
                assert_eq!(touched, m.row_support(r));
            }
        }
    }

    #[test]
    fn surface_code_shapes() {
        for d in [3, 5, 7, 11] {
            let code = build_rotated_sc(d).unwrap();
            assert_eq!((code.n, code.k), (d * d, 1));
            assert!(code.css_condition_holds());
            check_logicals(&code);
            let weights: Vec<usize> = (0..code.h_x.rows())
                .map(|r| code.h_x.row_weight(r))
                .chain((0..code.h_z.rows()).map(|r| code.h_z.row_weight(r)))
                .collect();
            assert_eq!(weights.iter().filter(|&&w| w == 4).count(), (d - 1) * (d - 1));
            assert_eq!(weights.iter().filter(|&&w| w == 2).count(), 2 * (d - 1));
            assert_eq!(code.h_x.rows(), code.h_z.rows());
            assert!(code.schedule.is_conflict_free(code.n));
            assert!(code.schedule.is_commutation_consistent());
        }
        let d5 = build_rotated_sc(5).unwrap();
        assert_eq!(d5.schedule.cnot_count(), 80);
        assert_eq!(build_rotated_sc(3).unwrap().logical_z[0].weight(), 3);
    }

    #[test]
    fn surface_code_rejects_bad_distance() {
        assert_eq!(build_rotated_sc(4).unwrap_err(), CodeError::InvalidDistance(4));
        assert_eq!(build_rotated_sc(1).unwrap_err(), CodeError::InvalidDistance(1));
    }

    #[test]
    fn generic_logicals_on_bb18() {
        let code = build_bb(&BbParams::bb18()).unwrap();
        let (lz, lx) = logical_operators(&code);
        assert_eq!(lz.len(), 4);
        for v in &lz {
            assert!(code.h_x.mul_vec(v).is_zero());
        }
        assert_eq!(lx.len(), 4);
    }

    #[test]
    fn bruteforce_distances() {
        let bb18 = build_bb(&BbParams::bb18()).unwrap();
        assert_eq!(
            min_logical_weight_bruteforce(&bb18, 4, DEFAULT_SEARCH_BUDGET).unwrap(),
            Some(4)
        );
        assert_eq!(
            min_logical_weight_bruteforce(&bb18, 3, DEFAULT_SEARCH_BUDGET).unwrap(),
            None
        );
        let sc3 = build_rotated_sc(3).unwrap();
        assert_eq!(
            min_logical_weight_bruteforce(&sc3, 3, DEFAULT_SEARCH_BUDGET).unwrap(),
            Some(3)
        );
        assert!(matches!(
            min_logical_weight_bruteforce(&bb18, 4, 10),
            Err(CodeError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn hadamard_pairings_exist() {
        for code in [
            build_bb(&BbParams::bb18()).unwrap(),
            build_bb(&BbParams::bb54()).unwrap(),
            build_rotated_sc(3).unwrap(),
            build_rotated_sc(7).unwrap(),
        ] {
            let pi = code.hadamard_pairing().expect("pairing");
            let mut sorted = pi.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..code.n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn descriptor_parsing() {
        let parsed: CodeDescriptor = "bb l=12 m=6 a=x3+y+y2 b=x+x2+y3".parse().unwrap();
        assert_eq!(parsed, CodeDescriptor::Bb(BbParams::bb144()));
        assert_eq!(
            "sc d=5".parse::<CodeDescriptor>().unwrap(),
            CodeDescriptor::Surface { d: 5 }
        );
        assert_eq!(
            "bb18".parse::<CodeDescriptor>().unwrap(),
            CodeDescriptor::Bb(BbParams::bb18())
        );
        assert_eq!(
            "sc7".parse::<CodeDescriptor>().unwrap(),
            CodeDescriptor::Surface { d: 7 }
        );
        assert!("sc d=4".parse::<CodeDescriptor>().unwrap().build().is_err());
        assert!("qq d=3".parse::<CodeDescriptor>().is_err());
        assert!("bb l=3 m=3 a=1+x b=1+x2+y2".parse::<CodeDescriptor>().is_err());
        let round: CodeDescriptor = BbParams::bb54().to_string().parse().unwrap();
        assert_eq!(round, CodeDescriptor::Bb(BbParams::bb54()));
    }

    #[test]
    fn report_rate() {
        let r = build_bb(&BbParams::bb144()).unwrap().report();
        assert_eq!(r.encoding_rate, Ratio::new(1, 24));
        assert_eq!(build_rotated_sc(3).unwrap().report().encoding_rate, Ratio::new(1, 17));
    }

    #[test]
    fn sparse_dump_lists_every_row() {
        let code = build_rotated_sc(3).unwrap();
        let dump = code.dump_sparse();
        assert_eq!(dump.lines().filter(|l| l.starts_with("HX")).count(), 4);
        assert!(dump.contains("HZ 0:"));
    }

    fn arb_term() -> impl Strategy<Value = (usize, usize)> {
        (0usize..6, 0usize..6)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_bb_codes_satisfy_css_and_rank_formula(
            l in 2usize..6, m in 2usize..6,
            a in proptest::collection::vec(arb_term(), 3),
            b in proptest::collection::vec(arb_term(), 3),
        ) {
            let mk = |ts: &[(usize, usize)]| ts.iter().map(|&(x, y)| MonomialTerm::new(x, y, l, m)).collect::<Vec<_>>();
            if let Ok(params) = BbParams::new(l, m, mk(&a), mk(&b)) {
                let code = build_bb(&params).unwrap();
                prop_assert!(code.css_condition_holds());
                prop_assert_eq!(code.k, code.n - code.h_x.rank() - code.h_z.rank());
                prop_assert!(code.schedule.is_conflict_free(code.n));
                prop_assert!(code.schedule.is_commutation_consistent());
                check_logicals(&code);
            }
        }
    }
}
