//! Pauli-frame noise sampling and a symbolic stabilizer tableau.
//!
//! The sampler works from a table of precomputed flip signatures, one per
//! Pauli component of every noise channel. A shot is the XOR of the
//! signatures of the components that fired. The tableau is an independent
//! noiseless simulator used to certify detector determinism and to check
//! signatures by direct Pauli injection.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{CircuitProgram, Instruction};
use crate::linalg::{BitMatrix, BitVector};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("{kind} {index} is not deterministic in the noiseless circuit")]
    NonDeterministic { kind: &'static str, index: usize },
    #[error("{kind} {index} has noiseless value 1")]
    NonZeroReference { kind: &'static str, index: usize },
    #[error("event location {0} is not a noise channel")]
    NotANoiseChannel(usize),
    #[error("batch parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    fn bits(self) -> (bool, bool) {
        match self {
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];
}

/// A concrete Pauli applied right after the noise instruction at `location`.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliEvent {
    pub location: usize,
    pub component: Vec<(usize, Pauli)>,
    pub prob: f64,
}

/// Detectors and observables flipped by one event.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlipSignature {
    pub detectors: Vec<usize>,
    pub observables: Vec<usize>,
}

impl FlipSignature {
    pub fn is_empty(&self) -> bool {
        self.detectors.is_empty() && self.observables.is_empty()
    }

    /// Symmetric difference of two signatures.
    pub fn xor(&self, other: &FlipSignature) -> FlipSignature {
        fn sym(a: &[usize], b: &[usize]) -> Vec<usize> {
            let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
            out.sort_unstable();
            let mut res = Vec::with_capacity(out.len());
            let mut i = 0;
            while i < out.len() {
                if i + 1 < out.len() && out[i] == out[i + 1] {
                    i += 2;
                } else {
                    res.push(out[i]);
                    i += 1;
                }
            }
            res
        }
        FlipSignature {
            detectors: sym(&self.detectors, &other.detectors),
            observables: sym(&self.observables, &other.observables),
        }
    }
}

/// Signature of `event`, by pushing a Pauli frame forward through the rest
/// of the circuit.
pub fn propagate(program: &CircuitProgram, event: &PauliEvent) -> Result<FlipSignature, SimError> {
    let insts = program.instructions();
    if !insts.get(event.location).is_some_and(Instruction::is_noise) {
        return Err(SimError::NotANoiseChannel(event.location));
    }
    let n = program.qubit_count;
    let mut x = BitVector::zeros(n);
    let mut z = BitVector::zeros(n);
    for &(q, p) in &event.component {
        let (bx, bz) = p.bits();
        if bx {
            x.flip(q);
        }
        if bz {
            z.flip(q);
        }
    }
    let offsets = program.record_offsets();
    let mut flipped = BitVector::zeros(program.measurement_count());
    let mut sig = FlipSignature::default();
    let mut detector = 0;
    for (i, inst) in insts.iter().enumerate().skip(event.location + 1) {
        use Instruction::*;
        match inst {
            ResetZ(t) | ResetX(t) => {
                for &q in t {
                    x.set(q, false);
                    z.set(q, false);
                }
            }
            MeasureZ { targets, .. } => {
                for (k, &q) in targets.iter().enumerate() {
                    flipped.set(offsets[i] + k, x.get(q));
                    z.set(q, false);
                }
            }
            MeasureX { targets, .. } => {
                for (k, &q) in targets.iter().enumerate() {
                    flipped.set(offsets[i] + k, z.get(q));
                    x.set(q, false);
                }
            }
            H(t) => {
                for &q in t {
                    let (a, b) = (x.get(q), z.get(q));
                    x.set(q, b);
                    z.set(q, a);
                }
            }
            Cnot(pairs) => {
                for &(c, t) in pairs {
                    if x.get(c) {
                        x.flip(t);
                    }
                    if z.get(t) {
                        z.flip(c);
                    }
                }
            }
            CondX { record, qubit } => {
                if flipped.get(*record) {
                    x.flip(*qubit);
                }
            }
            CondZ { record, qubit } => {
                if flipped.get(*record) {
                    z.flip(*qubit);
                }
            }
            BellInit(pairs) => {
                for &(a, b) in pairs {
                    for q in [a, b] {
                        x.set(q, false);
                        z.set(q, false);
                    }
                }
            }
            Detector(recs) => {
                if recs.iter().filter(|&&r| flipped.get(r)).count() % 2 == 1 {
                    sig.detectors.push(detector);
                }
                detector += 1;
            }
            Observable { index, records } => {
                if records.iter().filter(|&&r| flipped.get(r)).count() % 2 == 1 {
                    match sig.observables.iter().position(|o| o == index) {
                        Some(k) => {
                            sig.observables.remove(k);
                        }
                        None => sig.observables.push(*index),
                    }
                }
            }
            PauliX(_)
            | PauliZ(_)
            | BitFlip { .. }
            | PhaseFlip { .. }
            | Depolarize1 { .. }
            | Depolarize2 { .. }
            | Tick => {}
        }
    }
    // Detectors before the event location are unaffected but still counted.
    let before = insts[..=event.location]
        .iter()
        .filter(|i| matches!(i, Instruction::Detector(_)))
        .count();
    sig.detectors.iter_mut().for_each(|d| *d += before);
    sig.observables.sort_unstable();
    Ok(sig)
}

/// One noise channel: a set of equally likely components.
#[derive(Debug, Clone)]
pub struct Channel {
    pub location: usize,
    pub targets: Vec<usize>,
    /// Probability that some non-identity component fires.
    pub prob: f64,
    /// Components as (Pauli per target, `None` for identity; signature index).
    pub components: Vec<(Vec<Option<Pauli>>, usize)>,
}

impl Channel {
    pub fn component_prob(&self) -> f64 {
        self.prob / self.components.len() as f64
    }
}

/// Precomputed signatures of every channel component of a program.
#[derive(Debug, Clone)]
pub struct SignatureTable {
    pub detector_count: usize,
    pub observable_count: usize,
    pub channels: Vec<Channel>,
    signatures: Vec<FlipSignature>,
    // Sparse output indices per signature; observables offset by detector_count.
    flat: Vec<Vec<u32>>,
}

fn sparse(v: &BitVector) -> Vec<u32> {
    v.iter_ones().map(|i| i as u32).collect()
}

impl SignatureTable {
    /// Backward sensitivity sweep. For every qubit it tracks which outputs an
    /// X or Z at the current point would flip, so each channel component's
    /// signature is read off in one pass.
    pub fn build(program: &CircuitProgram) -> Self {
        let d = program.detector_count();
        let o = program.observable_count();
        let width = d + o;
        let n = program.qubit_count;
        let mut sx = vec![BitVector::zeros(width); n];
        let mut sz = vec![BitVector::zeros(width); n];
        let mut rs = vec![BitVector::zeros(width); program.measurement_count()];
        let offsets = program.record_offsets();
        let insts = program.instructions();
        let mut det = d;
        let mut channels = Vec::new();
        let mut signatures = Vec::new();
        let mut flat = Vec::new();

        let mut record_channel = |loc: usize,
                                  targets: Vec<usize>,
                                  prob: f64,
                                  comps: Vec<Vec<Option<Pauli>>>,
                                  sx: &[BitVector],
                                  sz: &[BitVector]| {
            let mut components = Vec::new();
            for comp in comps {
                let mut acc = BitVector::zeros(width);
                for (&q, p) in targets.iter().zip(&comp) {
                    let Some(p) = p else { continue };
                    let (bx, bz) = p.bits();
                    if bx {
                        acc.xor_assign(&sx[q]);
                    }
                    if bz {
                        acc.xor_assign(&sz[q]);
                    }
                }
                let ones = sparse(&acc);
                signatures.push(FlipSignature {
                    detectors: ones
                        .iter()
                        .filter(|&&i| (i as usize) < d)
                        .map(|&i| i as usize)
                        .collect(),
                    observables: ones
                        .iter()
                        .filter(|&&i| (i as usize) >= d)
                        .map(|&i| i as usize - d)
                        .collect(),
                });
                flat.push(ones);
                components.push((comp, signatures.len() - 1));
            }
            channels.push(Channel {
                location: loc,
                targets,
                prob,
                components,
            });
        };

        for (i, inst) in insts.iter().enumerate().rev() {
            use Instruction::*;
            match inst {
                Detector(recs) => {
                    det -= 1;
                    for &r in recs {
                        rs[r].flip(det);
                    }
                }
                Observable { index, records } => {
                    for &r in records {
                        rs[r].flip(d + index);
                    }
                }
                MeasureZ { targets, .. } => {
                    for (k, &q) in targets.iter().enumerate() {
                        sz[q].clear();
                        let r = &rs[offsets[i] + k];
                        sx[q].xor_assign(r);
                    }
                }
                MeasureX { targets, .. } => {
                    for (k, &q) in targets.iter().enumerate() {
                        sx[q].clear();
                        let r = &rs[offsets[i] + k];
                        sz[q].xor_assign(r);
                    }
                }
                ResetZ(t) | ResetX(t) => {
                    for &q in t {
                        sx[q].clear();
                        sz[q].clear();
                    }
                }
                BellInit(pairs) => {
                    for &(a, b) in pairs {
                        for q in [a, b] {
                            sx[q].clear();
                            sz[q].clear();
                        }
                    }
                }
                H(t) => {
                    for &q in t {
                        std::mem::swap(&mut sx[q], &mut sz[q]);
                    }
                }
                Cnot(pairs) => {
                    for &(c, t) in pairs {
                        let tx = sx[t].clone();
                        sx[c].xor_assign(&tx);
                        let cz = sz[c].clone();
                        sz[t].xor_assign(&cz);
                    }
                }
                CondX { record, qubit } => {
                    let s = sx[*qubit].clone();
                    rs[*record].xor_assign(&s);
                }
                CondZ { record, qubit } => {
                    let s = sz[*qubit].clone();
                    rs[*record].xor_assign(&s);
                }
                BitFlip { p, targets } | PhaseFlip { p, targets } => {
                    let pauli = if matches!(inst, BitFlip { .. }) {
                        Pauli::X
                    } else {
                        Pauli::Z
                    };
                    for &q in targets {
                        record_channel(i, vec![q], *p, vec![vec![Some(pauli)]], &sx, &sz);
                    }
                }
                Depolarize1 { p, targets } => {
                    for &q in targets {
                        record_channel(
                            i,
                            vec![q],
                            *p,
                            Pauli::ALL.iter().map(|&a| vec![Some(a)]).collect(),
                            &sx,
                            &sz,
                        );
                    }
                }
                Depolarize2 { p, pairs } => {
                    let opts = [None, Some(Pauli::X), Some(Pauli::Y), Some(Pauli::Z)];
                    let comps: Vec<Vec<Option<Pauli>>> = opts
                        .iter()
                        .flat_map(|&a| opts.iter().map(move |&b| vec![a, b]))
                        .skip(1)
                        .collect();
                    for &(a, b) in pairs {
                        record_channel(i, vec![a, b], *p, comps.clone(), &sx, &sz);
                    }
                }
                PauliX(_) | PauliZ(_) | Tick => {}
            }
        }
        channels.reverse();
        Self {
            detector_count: d,
            observable_count: o,
            channels,
            signatures,
            flat,
        }
    }

    pub fn signature(&self, idx: usize) -> &FlipSignature {
        &self.signatures[idx]
    }

    pub fn signature_count(&self) -> usize {
        self.signatures.len()
    }

    /// All (probability, signature) pairs in program order.
    pub fn mechanisms(&self) -> impl Iterator<Item = (f64, &FlipSignature)> + '_ {
        self.channels.iter().flat_map(move |c| {
            c.components
                .iter()
                .map(move |(_, s)| (c.component_prob(), &self.signatures[*s]))
        })
    }

    /// Shots `start..start + count`, shot `s` drawn from its own stream.
    pub fn sample_range(&self, start: u64, count: usize, seed: u64) -> ShotBatch {
        let mut batch = ShotBatch::zeros(count, self.detector_count, self.observable_count);
        // Channels grouped by firing probability for geometric skipping.
        let mut groups: Vec<(f64, Vec<usize>)> = Vec::new();
        for (i, c) in self.channels.iter().enumerate() {
            if c.prob <= 0.0 {
                continue;
            }
            match groups.iter_mut().find(|(p, _)| *p == c.prob) {
                Some((_, v)) => v.push(i),
                None => groups.push((c.prob, vec![i])),
            }
        }
        let mut out = BitVector::zeros(self.detector_count + self.observable_count);
        for s in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start + s as u64);
            out.clear();
            for (p, members) in &groups {
                let mut pos = 0usize;
                loop {
                    let skip = if *p >= 1.0 {
                        0
                    } else {
                        let u: f64 = rng.gen();
                        ((1.0 - u).ln() / (1.0 - p).ln()).floor() as usize
                    };
                    pos = match pos.checked_add(skip) {
                        Some(v) if v < members.len() => v,
                        _ => break,
                    };
                    let ch = &self.channels[members[pos]];
                    let pick = rng.gen_range(0..ch.components.len());
                    for &b in &self.flat[ch.components[pick].1] {
                        out.flip(b as usize);
                    }
                    pos += 1;
                }
            }
            for b in out.iter_ones() {
                if b < self.detector_count {
                    batch.detector_bits.set(s, b, true);
                } else {
                    batch.observable_bits.set(s, b - self.detector_count, true);
                }
            }
        }
        batch
    }

    /// Parallel sampling over fixed-size shot chunks; output does not depend
    /// on the thread count.
    pub fn sample(&self, shots: usize, seed: u64) -> ShotBatch {
        const CHUNK: usize = 1024;
        let chunks: Vec<ShotBatch> = (0..shots.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let start = c * CHUNK;
                self.sample_range(start as u64, CHUNK.min(shots - start), seed)
            })
            .collect();
        ShotBatch::concat(self.detector_count, self.observable_count, &chunks)
    }
}

/// Sampled detector and observable outcomes, one row per shot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShotBatch {
    pub shots: usize,
    pub detector_bits: BitMatrix,
    pub observable_bits: BitMatrix,
}

impl ShotBatch {
    pub fn zeros(shots: usize, detectors: usize, observables: usize) -> Self {
        Self {
            shots,
            detector_bits: BitMatrix::zeros(shots, detectors),
            observable_bits: BitMatrix::zeros(shots, observables),
        }
    }

    pub fn concat(detectors: usize, observables: usize, parts: &[ShotBatch]) -> Self {
        let total = parts.iter().map(|b| b.shots).sum();
        let mut out = Self::zeros(total, detectors, observables);
        let mut row = 0;
        for part in parts {
            for s in 0..part.shots {
                for d in part.detector_bits.row(s).iter_ones() {
                    out.detector_bits.set(row, d, true);
                }
                for o in part.observable_bits.row(s).iter_ones() {
                    out.observable_bits.set(row, o, true);
                }
                row += 1;
            }
        }
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.detector_bits.is_zero() && self.observable_bits.is_zero()
    }

    /// `D: <hex> L: <hex>` per shot; bytes are little-endian bit packed and
    /// printed in order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let hex = |v: &BitVector| v.to_bytes().iter().map(|b| format!("{b:02x}")).collect::<String>();
        for s in 0..self.shots {
            let _ = writeln!(
                out,
                "D: {} L: {}",
                hex(&self.detector_bits.row(s)),
                hex(&self.observable_bits.row(s))
            );
        }
        out
    }

    pub fn from_text(text: &str, detectors: usize, observables: usize) -> Result<Self, SimError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut batch = Self::zeros(lines.len(), detectors, observables);
        let unhex = |s: &str, line: usize| -> Result<Vec<u8>, SimError> {
            if !s.len().is_multiple_of(2) {
                return Err(SimError::Parse(format!("line {line}: odd hex length")));
            }
            (0..s.len())
                .step_by(2)
                .map(|i| {
                    u8::from_str_radix(&s[i..i + 2], 16).map_err(|_| SimError::Parse(format!("line {line}: bad hex")))
                })
                .collect()
        };
        for (s, line) in lines.iter().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let (dh, lh) = match parts.as_slice() {
                ["D:", d, "L:", l] => (*d, *l),
                ["D:", "L:", l] => ("", *l),
                ["D:", d, "L:"] => (*d, ""),
                ["D:", "L:"] => ("", ""),
                _ => return Err(SimError::Parse(format!("line {}: expected `D: <hex> L: <hex>`", s + 1))),
            };
            let d = BitVector::from_bytes(detectors, &unhex(dh, s + 1)?);
            let l = BitVector::from_bytes(observables, &unhex(lh, s + 1)?);
            for i in d.iter_ones() {
                batch.detector_bits.set(s, i, true);
            }
            for i in l.iter_ones() {
                batch.observable_bits.set(s, i, true);
            }
        }
        Ok(batch)
    }

    /// Packed binary: per shot, detector bytes then observable bytes.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in 0..self.shots {
            out.extend(self.detector_bits.row(s).to_bytes());
            out.extend(self.observable_bits.row(s).to_bytes());
        }
        out
    }

    pub fn from_packed(bytes: &[u8], detectors: usize, observables: usize) -> Result<Self, SimError> {
        let (db, ob) = (detectors.div_ceil(8), observables.div_ceil(8));
        let stride = db + ob;
        if stride == 0 || !bytes.len().is_multiple_of(stride) {
            return Err(SimError::Parse(format!(
                "{} bytes is not a whole number of {stride}-byte shots",
                bytes.len()
            )));
        }
        let shots = bytes.len() / stride;
        let mut batch = Self::zeros(shots, detectors, observables);
        for s in 0..shots {
            let chunk = &bytes[s * stride..(s + 1) * stride];
            for i in BitVector::from_bytes(detectors, &chunk[..db]).iter_ones() {
                batch.detector_bits.set(s, i, true);
            }
            for i in BitVector::from_bytes(observables, &chunk[db..]).iter_ones() {
                batch.observable_bits.set(s, i, true);
            }
        }
        Ok(batch)
    }
}

pub fn sample(program: &CircuitProgram, shots: usize, seed: u64) -> ShotBatch {
    SignatureTable::build(program).sample(shots, seed)
}

/// Affine GF(2) expression over random measurement outcomes: a constant bit
/// plus a set of variables.
#[derive(Debug, Clone)]
struct Affine {
    constant: bool,
    vars: Vec<u64>,
}

impl Affine {
    fn zero(words: usize) -> Self {
        Self {
            constant: false,
            vars: vec![0; words],
        }
    }

    fn xor_assign(&mut self, other: &Affine, used: usize) {
        self.constant ^= other.constant;
        for (a, b) in self.vars[..used].iter_mut().zip(&other.vars[..used]) {
            *a ^= b;
        }
    }

    fn is_constant(&self) -> bool {
        self.vars.iter().all(|&w| w == 0)
    }
}

/// Aaronson-Gottesman tableau whose signs are affine in the outcomes of
/// random measurements.
struct SymbolicTableau {
    n: usize,
    words: usize,
    // Rows 0..n destabilizers, n..2n stabilizers, 2n scratch.
    x: Vec<u64>,
    z: Vec<u64>,
    sign: Vec<Affine>,
    var_words: usize,
    vars: usize,
}

impl SymbolicTableau {
    fn new(n: usize, max_vars: usize) -> Self {
        let words = n.div_ceil(64).max(1);
        let rows = 2 * n + 1;
        let var_words = max_vars.div_ceil(64).max(1);
        let mut t = Self {
            n,
            words,
            x: vec![0; rows * words],
            z: vec![0; rows * words],
            sign: vec![Affine::zero(var_words); rows],
            var_words,
            vars: 0,
        };
        for i in 0..n {
            t.x[i * words + i / 64] |= 1 << (i % 64);
            t.z[(n + i) * words + i / 64] |= 1 << (i % 64);
        }
        t
    }

    #[inline]
    fn xbit(&self, row: usize, q: usize) -> bool {
        (self.x[row * self.words + q / 64] >> (q % 64)) & 1 == 1
    }

    #[inline]
    fn zbit(&self, row: usize, q: usize) -> bool {
        (self.z[row * self.words + q / 64] >> (q % 64)) & 1 == 1
    }

    fn used_var_words(&self) -> usize {
        self.vars.div_ceil(64)
    }

    fn h(&mut self, q: usize) {
        let (w, m) = (q / 64, 1u64 << (q % 64));
        for r in 0..2 * self.n {
            let i = r * self.words + w;
            let (xb, zb) = (self.x[i] & m, self.z[i] & m);
            if xb != 0 && zb != 0 {
                self.sign[r].constant ^= true;
            }
            self.x[i] = (self.x[i] & !m) | zb;
            self.z[i] = (self.z[i] & !m) | xb;
        }
    }

    fn cnot(&mut self, c: usize, t: usize) {
        for r in 0..2 * self.n {
            let (xc, zc, xt, zt) = (self.xbit(r, c), self.zbit(r, c), self.xbit(r, t), self.zbit(r, t));
            if xc && zt && (xt == zc) {
                self.sign[r].constant ^= true;
            }
            if xc {
                self.x[r * self.words + t / 64] ^= 1 << (t % 64);
            }
            if zt {
                self.z[r * self.words + c / 64] ^= 1 << (c % 64);
            }
        }
    }

    /// Flips the sign of rows anticommuting with the applied Pauli by `by`.
    fn apply_pauli(&mut self, q: usize, pauli: Pauli, by: &Affine) {
        let (px, pz) = pauli.bits();
        let used = self.used_var_words();
        for r in 0..2 * self.n {
            let anti = (px && self.zbit(r, q)) ^ (pz && self.xbit(r, q));
            if anti {
                self.sign[r].xor_assign(by, used);
            }
        }
    }

    /// `row h ← row i · row h`, tracking the phase.
    fn rowsum(&mut self, h: usize, i: usize) {
        let w = self.words;
        let mut plus = 0u32;
        let mut minus = 0u32;
        for k in 0..w {
            let (x1, z1) = (self.x[i * w + k], self.z[i * w + k]);
            let (x2, z2) = (self.x[h * w + k], self.z[h * w + k]);
            let y1 = x1 & z1;
            let xo = x1 & !z1;
            let zo = !x1 & z1;
            plus += ((y1 & z2 & !x2) | (xo & x2 & z2) | (zo & x2 & !z2)).count_ones();
            minus += ((y1 & x2 & !z2) | (xo & z2 & !x2) | (zo & x2 & z2)).count_ones();
            self.x[h * w + k] = x2 ^ x1;
            self.z[h * w + k] = z2 ^ z1;
        }
        let phase = (plus as i64 - minus as i64).rem_euclid(4);
        debug_assert!(phase % 2 == 0);
        let used = self.used_var_words();
        let src = self.sign[i].clone();
        self.sign[h].xor_assign(&src, used);
        if phase == 2 {
            self.sign[h].constant ^= true;
        }
    }

    fn measure_z(&mut self, q: usize) -> Affine {
        let n = self.n;
        if let Some(p) = (n..2 * n).find(|&r| self.xbit(r, q)) {
            for r in 0..2 * n {
                if r != p && self.xbit(r, q) {
                    self.rowsum(r, p);
                }
            }
            let w = self.words;
            let (dst, src) = ((p - n) * w, p * w);
            self.x.copy_within(src..src + w, dst);
            self.z.copy_within(src..src + w, dst);
            self.sign[p - n] = self.sign[p].clone();
            for k in 0..w {
                self.x[src + k] = 0;
                self.z[src + k] = 0;
            }
            self.z[src + q / 64] |= 1 << (q % 64);
            assert!(self.vars < self.var_words * 64, "variable capacity exceeded");
            let mut v = Affine::zero(self.var_words);
            v.vars[self.vars / 64] |= 1 << (self.vars % 64);
            self.vars += 1;
            self.sign[p] = v.clone();
            v
        } else {
            let s = 2 * n;
            let w = self.words;
            for k in 0..w {
                self.x[s * w + k] = 0;
                self.z[s * w + k] = 0;
            }
            self.sign[s] = Affine::zero(self.var_words);
            for i in 0..n {
                if self.xbit(i, q) {
                    self.rowsum(s, i + n);
                }
            }
            self.sign[s].clone()
        }
    }

    fn reset_z(&mut self, q: usize) {
        let m = self.measure_z(q);
        self.apply_pauli(q, Pauli::X, &m);
    }

    fn constant(value: bool, words: usize) -> Affine {
        Affine {
            constant: value,
            vars: vec![0; words],
        }
    }
}

/// Noiseless detector and observable values with `injected` Paulis applied
/// after their locations. Errors if any value depends on random outcomes.
pub fn noiseless_outcomes(
    program: &CircuitProgram,
    injected: &[PauliEvent],
) -> Result<(BitVector, BitVector), SimError> {
    let insts = program.instructions();
    let max_vars = insts
        .iter()
        .map(|i| match i {
            Instruction::ResetZ(t) | Instruction::ResetX(t) => t.len(),
            Instruction::BellInit(p) => 2 * p.len(),
            other => other.measurement_count(),
        })
        .sum::<usize>();
    let mut t = SymbolicTableau::new(program.qubit_count, max_vars);
    let mut records: Vec<Affine> = Vec::with_capacity(program.measurement_count());
    let mut dets = BitVector::zeros(program.detector_count());
    let mut obs_expr: Vec<Affine> = vec![Affine::zero(t.var_words); program.observable_count()];
    let mut det = 0;
    for (i, inst) in insts.iter().enumerate() {
        use Instruction::*;
        match inst {
            ResetZ(q) => q.iter().for_each(|&q| t.reset_z(q)),
            ResetX(q) => {
                for &q in q {
                    t.h(q);
                    t.reset_z(q);
                    t.h(q);
                }
            }
            MeasureZ { targets, .. } => {
                for &q in targets {
                    records.push(t.measure_z(q));
                }
            }
            MeasureX { targets, .. } => {
                for &q in targets {
                    t.h(q);
                    records.push(t.measure_z(q));
                    t.h(q);
                }
            }
            H(q) => q.iter().for_each(|&q| t.h(q)),
            Cnot(pairs) => pairs.iter().for_each(|&(c, tq)| t.cnot(c, tq)),
            PauliX(q) | PauliZ(q) => {
                let p = if matches!(inst, PauliX(_)) { Pauli::X } else { Pauli::Z };
                let one = SymbolicTableau::constant(true, t.var_words);
                q.iter().for_each(|&q| t.apply_pauli(q, p, &one));
            }
            CondX { record, qubit } => {
                let r = records[*record].clone();
                t.apply_pauli(*qubit, Pauli::X, &r);
            }
            CondZ { record, qubit } => {
                let r = records[*record].clone();
                t.apply_pauli(*qubit, Pauli::Z, &r);
            }
            BellInit(pairs) => {
                for &(a, b) in pairs {
                    t.reset_z(a);
                    t.reset_z(b);
                    t.h(a);
                    t.cnot(a, b);
                }
            }
            Detector(recs) => {
                let mut acc = Affine::zero(t.var_words);
                for &r in recs {
                    acc.xor_assign(&records[r], t.var_words);
                }
                if !acc.is_constant() {
                    return Err(SimError::NonDeterministic {
                        kind: "detector",
                        index: det,
                    });
                }
                dets.set(det, acc.constant);
                det += 1;
            }
            Observable { index, records: recs } => {
                for &r in recs {
                    obs_expr[*index].xor_assign(&records[r], t.var_words);
                }
            }
            BitFlip { .. } | PhaseFlip { .. } | Depolarize1 { .. } | Depolarize2 { .. } | Tick => {}
        }
        for ev in injected.iter().filter(|e| e.location == i) {
            let one = SymbolicTableau::constant(true, t.var_words);
            for &(q, p) in &ev.component {
                t.apply_pauli(q, p, &one);
            }
        }
    }
    let mut obs = BitVector::zeros(program.observable_count());
    for (k, e) in obs_expr.iter().enumerate() {
        if !e.is_constant() {
            return Err(SimError::NonDeterministic {
                kind: "observable",
                index: k,
            });
        }
        obs.set(k, e.constant);
    }
    Ok((dets, obs))
}

/// Certifies that every detector and observable is deterministic and zero in
/// the noiseless circuit.
pub fn check_determinism(program: &CircuitProgram) -> Result<(), SimError> {
    let (d, o) = noiseless_outcomes(program, &[])?;
    if let Some(i) = d.iter_ones().next() {
        return Err(SimError::NonZeroReference {
            kind: "detector",
            index: i,
        });
    }
    if let Some(i) = o.iter_ones().next() {
        return Err(SimError::NonZeroReference {
            kind: "observable",
            index: i,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_nonlocal_cnot_experiment, build_teleportation_experiment, parse, NoiseParams};
    use crate::codes::{build_bb, build_rotated_sc, BbParams};
    use proptest::prelude::*;

    fn noisy(p: f64) -> NoiseParams {
        NoiseParams::new(p, p, true).unwrap()
    }

    fn event(location: usize, component: Vec<(usize, Pauli)>) -> PauliEvent {
        PauliEvent {
            location,
            component,
            prob: 0.1,
        }
    }

    #[test]
    fn single_measurement_signatures() {
        let prog = parse("X_ERROR(0.1) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        assert_eq!(
            propagate(&prog, &event(0, vec![(0, Pauli::X)])).unwrap().detectors,
            vec![0]
        );
        assert!(propagate(&prog, &event(0, vec![(0, Pauli::Z)])).unwrap().is_empty());
        assert_eq!(
            propagate(&prog, &event(1, vec![(0, Pauli::X)])),
            Err(SimError::NotANoiseChannel(1))
        );
    }

    #[test]
    fn built_programs_are_deterministic() {
        for code in [build_rotated_sc(3).unwrap(), build_bb(&BbParams::bb18()).unwrap()] {
            for prog in [
                build_nonlocal_cnot_experiment(&code, noisy(0.01)).unwrap(),
                build_teleportation_experiment(&code, noisy(0.01)).unwrap(),
            ] {
                check_determinism(&prog).unwrap();
            }
        }
    }

    #[test]
    fn tableau_detects_random_detector() {
        let prog = parse("H 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        assert_eq!(
            check_determinism(&prog),
            Err(SimError::NonDeterministic {
                kind: "detector",
                index: 0
            })
        );
        let prog = parse("X 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        assert!(matches!(
            check_determinism(&prog),
            Err(SimError::NonZeroReference { .. })
        ));
    }

    #[test]
    fn tableau_handles_conditionals_and_bell_pairs() {
        // Teleport |1> from qubit 0 to qubit 2.
        let text =
            "R 0\nX 0\nBELL 1 2\nCX 0 1\nH 0\nM 0 1\nCX rec[-1] 2\nCZ rec[-2] 2\nM 2\nOBSERVABLE_INCLUDE(0) rec[-1]\n";
        let prog = parse(text).unwrap();
        let (_, obs) = noiseless_outcomes(&prog, &[]).unwrap();
        assert!(obs.get(0));
    }

    /// Signatures from the sweep, forward propagation and tableau injection agree.
    fn cross_check(prog: &CircuitProgram, stride: usize) {
        let table = SignatureTable::build(prog);
        let (ref_d, ref_o) = noiseless_outcomes(prog, &[]).unwrap();
        for ch in table.channels.iter().step_by(stride) {
            for (paulis, idx) in &ch.components {
                let comp: Vec<(usize, Pauli)> = ch
                    .targets
                    .iter()
                    .zip(paulis)
                    .filter_map(|(&q, p)| p.map(|p| (q, p)))
                    .collect();
                let ev = event(ch.location, comp);
                let fwd = propagate(prog, &ev).unwrap();
                assert_eq!(&fwd, table.signature(*idx));
                let (d, o) = noiseless_outcomes(prog, &[ev]).unwrap();
                let d: Vec<usize> = d.xor(&ref_d).iter_ones().collect();
                let o: Vec<usize> = o.xor(&ref_o).iter_ones().collect();
                assert_eq!(fwd.detectors, d);
                assert_eq!(fwd.observables, o);
            }
        }
    }

    #[test]
    fn signatures_match_injection_oracle() {
        let sc3 = build_rotated_sc(3).unwrap();
        cross_check(&build_nonlocal_cnot_experiment(&sc3, noisy(0.01)).unwrap(), 7);
        cross_check(&build_teleportation_experiment(&sc3, noisy(0.01)).unwrap(), 11);
    }

    #[test]
    fn transversal_cnot_spreads_x_to_both_blocks() {
        let sc3 = build_rotated_sc(3).unwrap();
        let prog = build_nonlocal_cnot_experiment(&sc3, noisy(0.01)).unwrap();
        // The depolarizing layer right after Bell-pair creation precedes the
        // CNOT from block 0 into the ebits; inject X on block-0 data qubit 4.
        let loc = prog
            .instructions()
            .iter()
            .position(|i| matches!(i, Instruction::Depolarize2 { pairs, .. } if pairs.len() == sc3.n && pairs[0].0 >= 2 * (sc3.n + sc3.check_count())))
            .unwrap();
        let sig = propagate(&prog, &event(loc, vec![(4, Pauli::X)])).unwrap();
        let (ref_d, _) = noiseless_outcomes(&prog, &[]).unwrap();
        let (d, _) = noiseless_outcomes(&prog, &[event(loc, vec![(4, Pauli::X)])]).unwrap();
        assert_eq!(sig.detectors, d.xor(&ref_d).iter_ones().collect::<Vec<_>>());
        // Detectors of both blocks fire: the first post-CNOT layer of each.
        let per_layer = sc3.h_z.rows();
        let layer_of = |det: usize| det / (2 * per_layer);
        let block_of = |det: usize| (det / per_layer) % 2;
        assert!(sig.detectors.iter().any(|&d| block_of(d) == 0 && layer_of(d) == 4));
        assert!(sig.detectors.iter().any(|&d| block_of(d) == 1 && layer_of(d) == 4));
    }

    #[test]
    fn zero_noise_sampling_is_all_zero() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_teleportation_experiment(&code, NoiseParams::noiseless()).unwrap();
        assert!(sample(&prog, 2000, 3).is_all_zero());
    }

    #[test]
    fn bitflip_marginal() {
        let prog = parse("X_ERROR(0.1) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        let shots = 100_000;
        let b = sample(&prog, shots, 42);
        let ones = (0..shots).filter(|&s| b.detector_bits.get(s, 0)).count() as f64;
        let sigma = (shots as f64 * 0.1 * 0.9).sqrt();
        assert!((ones - 0.1 * shots as f64).abs() < 3.0 * sigma, "ones = {ones}");
    }

    #[test]
    fn sampling_is_split_invariant() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, noisy(0.02)).unwrap();
        let table = SignatureTable::build(&prog);
        let whole = table.sample(3000, 9);
        let parts = [
            table.sample_range(0, 1000, 9),
            table.sample_range(1000, 1500, 9),
            table.sample_range(2500, 500, 9),
        ];
        assert_eq!(
            ShotBatch::concat(table.detector_count, table.observable_count, &parts),
            whole
        );
        assert_eq!(table.sample(3000, 9), whole);
        assert_ne!(table.sample(3000, 10), whole);
    }

    #[test]
    fn different_seeds_decorrelate() {
        let prog = parse("X_ERROR(0.5) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        let a = sample(&prog, 4000, 1);
        let b = sample(&prog, 4000, 2);
        let mut table = [[0f64; 2]; 2];
        for s in 0..4000 {
            table[a.detector_bits.get(s, 0) as usize][b.detector_bits.get(s, 0) as usize] += 1.0;
        }
        let chi2: f64 = table.iter().flatten().map(|&o| (o - 1000.0).powi(2) / 1000.0).sum();
        // Three degrees of freedom, 99.9% quantile is about 16.3.
        assert!(chi2 < 16.3, "chi2 = {chi2}");
    }

    #[test]
    fn batch_text_and_packed_round_trip() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, noisy(0.05)).unwrap();
        let b = sample(&prog, 50, 1);
        let (d, o) = (prog.detector_count(), prog.observable_count());
        assert_eq!(ShotBatch::from_text(&b.to_text(), d, o).unwrap(), b);
        assert_eq!(ShotBatch::from_packed(&b.to_packed(), d, o).unwrap(), b);
        let one = ShotBatch::from_text("D: 0100 L: 01\n", 9, 1).unwrap();
        assert!(one.detector_bits.get(0, 0));
        assert!(one.observable_bits.get(0, 0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn signatures_are_linear(a in 0usize..400, b in 0usize..400, pa in 0usize..3, pb in 0usize..3) {
            let code = build_rotated_sc(3).unwrap();
            let prog = build_nonlocal_cnot_experiment(&code, noisy(0.01)).unwrap();
            let table = SignatureTable::build(&prog);
            let ch_a = &table.channels[a % table.channels.len()];
            let ch_b = &table.channels[b % table.channels.len()];
            let ea = event(ch_a.location, vec![(ch_a.targets[0], Pauli::ALL[pa])]);
            let eb = event(ch_b.location, vec![(ch_b.targets[0], Pauli::ALL[pb])]);
            let sa = propagate(&prog, &ea).unwrap();
            let sb = propagate(&prog, &eb).unwrap();
            let (r_d, r_o) = noiseless_outcomes(&prog, &[]).unwrap();
            let (d, o) = noiseless_outcomes(&prog, &[ea, eb]).unwrap();
            let joint = FlipSignature {
                detectors: d.xor(&r_d).iter_ones().collect(),
                observables: o.xor(&r_o).iter_ones().collect(),
            };
            prop_assert_eq!(joint, sa.xor(&sb));
        }
    }
}
