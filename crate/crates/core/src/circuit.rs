//! Circuit IR, experiment builders, gate census and the text format.

use std::collections::BTreeSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::codes::StabilizerCode;
use crate::linalg::{BitVector, RowSpaceSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CircuitError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("instruction {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("{what} is not deterministic: {reason}")]
    NonDeterministic { what: String, reason: String },
    #[error("code has no Hadamard pairing, teleportation needs one")]
    NoPairing,
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitKind {
    NonlocalCnot,
    Teleport,
}

impl fmt::Display for CircuitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CircuitKind::NonlocalCnot => "nonlocal-cnot",
            CircuitKind::Teleport => "teleport",
        })
    }
}

impl FromStr for CircuitKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nonlocal-cnot" | "cnot" => Ok(CircuitKind::NonlocalCnot),
            "teleport" | "teleportation" => Ok(CircuitKind::Teleport),
            _ => Err(format!(
                "unknown circuit kind `{s}` (expected nonlocal-cnot or teleport)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseParams {
    pub p: f64,
    pub p_ebit: f64,
    pub idle: bool,
}

impl NoiseParams {
    pub fn new(p: f64, p_ebit: f64, idle: bool) -> Result<Self, CircuitError> {
        for (name, value) in [("p", p), ("p_ebit", p_ebit)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(CircuitError::Probability { name, value });
            }
        }
        Ok(Self { p, p_ebit, idle })
    }

    pub fn noiseless() -> Self {
        Self {
            p: 0.0,
            p_ebit: 0.0,
            idle: false,
        }
    }
}

/// One circuit operation. Record references are absolute measurement indices.
#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    ResetZ(Vec<usize>),
    ResetX(Vec<usize>),
    /// `readout` marks the final destructive data measurement.
    MeasureZ {
        targets: Vec<usize>,
        readout: bool,
    },
    MeasureX {
        targets: Vec<usize>,
        readout: bool,
    },
    H(Vec<usize>),
    Cnot(Vec<(usize, usize)>),
    PauliX(Vec<usize>),
    PauliZ(Vec<usize>),
    CondX {
        record: usize,
        qubit: usize,
    },
    CondZ {
        record: usize,
        qubit: usize,
    },
    BellInit(Vec<(usize, usize)>),
    BitFlip {
        p: f64,
        targets: Vec<usize>,
    },
    PhaseFlip {
        p: f64,
        targets: Vec<usize>,
    },
    Depolarize1 {
        p: f64,
        targets: Vec<usize>,
    },
    Depolarize2 {
        p: f64,
        pairs: Vec<(usize, usize)>,
    },
    Tick,
    Detector(Vec<usize>),
    Observable {
        index: usize,
        records: Vec<usize>,
    },
}

impl Instruction {
    pub fn measurement_count(&self) -> usize {
        match self {
            Instruction::MeasureZ { targets, .. } | Instruction::MeasureX { targets, .. } => targets.len(),
            _ => 0,
        }
    }

    pub fn is_noise(&self) -> bool {
        matches!(
            self,
            Instruction::BitFlip { .. }
                | Instruction::PhaseFlip { .. }
                | Instruction::Depolarize1 { .. }
                | Instruction::Depolarize2 { .. }
        )
    }

    fn qubits(&self) -> Vec<usize> {
        use Instruction::*;
        match self {
            ResetZ(t) | ResetX(t) | H(t) | PauliX(t) | PauliZ(t) => t.clone(),
            MeasureZ { targets, .. } | MeasureX { targets, .. } => targets.clone(),
            BitFlip { targets, .. } | PhaseFlip { targets, .. } | Depolarize1 { targets, .. } => targets.clone(),
            Cnot(pairs) | BellInit(pairs) | Depolarize2 { pairs, .. } => {
                pairs.iter().flat_map(|&(a, b)| [a, b]).collect()
            }
            CondX { qubit, .. } | CondZ { qubit, .. } => vec![*qubit],
            Tick | Detector(_) | Observable { .. } => Vec::new(),
        }
    }

    fn records(&self) -> Vec<usize> {
        match self {
            Instruction::CondX { record, .. } | Instruction::CondZ { record, .. } => vec![*record],
            Instruction::Detector(r) | Instruction::Observable { records: r, .. } => r.clone(),
            _ => Vec::new(),
        }
    }

    fn probability(&self) -> Option<f64> {
        match self {
            Instruction::BitFlip { p, .. }
            | Instruction::PhaseFlip { p, .. }
            | Instruction::Depolarize1 { p, .. }
            | Instruction::Depolarize2 { p, .. } => Some(*p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub code: Option<String>,
    pub circuit: Option<CircuitKind>,
    pub noise: Option<NoiseParams>,
}

/// An ordered instruction list with running counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CircuitProgram {
    pub qubit_count: usize,
    instructions: Vec<Instruction>,
    measurement_count: usize,
    detector_count: usize,
    observable_count: usize,
    pub metadata: Metadata,
}

impl CircuitProgram {
    pub fn new(qubit_count: usize) -> Self {
        Self {
            qubit_count,
            ..Self::default()
        }
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn measurement_count(&self) -> usize {
        self.measurement_count
    }

    pub fn detector_count(&self) -> usize {
        self.detector_count
    }

    pub fn observable_count(&self) -> usize {
        self.observable_count
    }

    /// Appends an instruction after validating targets, records and
    /// probabilities. Returns the index of its first measurement record.
    pub fn push(&mut self, inst: Instruction) -> Result<usize, CircuitError> {
        let index = self.instructions.len();
        let bad = |reason: String| CircuitError::Invalid { index, reason };
        if let Some(q) = inst.qubits().into_iter().find(|&q| q >= self.qubit_count) {
            return Err(bad(format!(
                "qubit {q} out of range (qubit count {})",
                self.qubit_count
            )));
        }
        if let Some(r) = inst.records().into_iter().find(|&r| r >= self.measurement_count) {
            return Err(bad(format!("record {r} refers to a future measurement")));
        }
        if let Some(p) = inst.probability() {
            if !(0.0..=1.0).contains(&p) {
                return Err(bad(format!("probability {p} outside [0, 1]")));
            }
        }
        match &inst {
            Instruction::Cnot(pairs) | Instruction::BellInit(pairs) | Instruction::Depolarize2 { pairs, .. } => {
                if pairs.iter().any(|(a, b)| a == b) {
                    return Err(bad("two-qubit operation on a single qubit".into()));
                }
            }
            Instruction::Detector(_) => self.detector_count += 1,
            Instruction::Observable { index: i, .. } => self.observable_count = self.observable_count.max(i + 1),
            _ => {}
        }
        let first = self.measurement_count;
        self.measurement_count += inst.measurement_count();
        self.instructions.push(inst);
        Ok(first)
    }

    fn push_unchecked(&mut self, inst: Instruction) -> usize {
        self.push(inst).expect("builder emitted a valid instruction")
    }

    /// Record index of the first measurement of every instruction.
    pub fn record_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.instructions
            .iter()
            .map(|i| {
                let start = acc;
                acc += i.measurement_count();
                start
            })
            .collect()
    }

    /// Copy of this program with every noise probability set to zero.
    pub fn without_noise(&self) -> CircuitProgram {
        let mut out = self.clone();
        for inst in &mut out.instructions {
            match inst {
                Instruction::BitFlip { p, .. }
                | Instruction::PhaseFlip { p, .. }
                | Instruction::Depolarize1 { p, .. }
                | Instruction::Depolarize2 { p, .. } => *p = 0.0,
                _ => {}
            }
        }
        out.metadata.noise = out.metadata.noise.map(|n| NoiseParams {
            p: 0.0,
            p_ebit: 0.0,
            ..n
        });
        out
    }
}

/// Counts used by the gate tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GateCensus {
    pub oneq: usize,
    pub twoq: usize,
    pub meas_mid: usize,
    pub meas_total: usize,
}

/// H, conditional Paulis and Pauli gates count as single-qubit gates; CNOT
/// pairs as two-qubit gates. Bell-pair creation is free.
pub fn census(program: &CircuitProgram) -> GateCensus {
    let mut c = GateCensus::default();
    for inst in program.instructions() {
        match inst {
            Instruction::H(t) | Instruction::PauliX(t) | Instruction::PauliZ(t) => c.oneq += t.len(),
            Instruction::CondX { .. } | Instruction::CondZ { .. } => c.oneq += 1,
            Instruction::Cnot(pairs) => c.twoq += pairs.len(),
            Instruction::MeasureZ { targets, readout } | Instruction::MeasureX { targets, readout } => {
                c.meas_total += targets.len();
                if !readout {
                    c.meas_mid += targets.len();
                }
            }
            _ => {}
        }
    }
    c
}

/// Qubit offsets of one code block: data, then X-check ancillas, then
/// Z-check ancillas.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub offset: usize,
    pub n: usize,
    pub x_checks: usize,
    pub z_checks: usize,
}

impl BlockLayout {
    pub fn new(offset: usize, code: &StabilizerCode) -> Self {
        Self {
            offset,
            n: code.n,
            x_checks: code.h_x.rows(),
            z_checks: code.h_z.rows(),
        }
    }

    pub fn size(&self) -> usize {
        self.n + self.x_checks + self.z_checks
    }

    pub fn data(&self, q: usize) -> usize {
        self.offset + q
    }

    pub fn x_ancilla(&self, c: usize) -> usize {
        self.offset + self.n + c
    }

    pub fn z_ancilla(&self, c: usize) -> usize {
        self.offset + self.n + self.x_checks + c
    }

    pub fn data_qubits(&self) -> impl Iterator<Item = usize> {
        self.offset..self.offset + self.n
    }

    pub fn all_qubits(&self) -> impl Iterator<Item = usize> {
        self.offset..self.offset + self.size()
    }
}

/// Records of one block's syndrome round, indexed by check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyndromeLayer {
    /// Index of the last measurement instruction of the round.
    pub boundary: usize,
    pub block: usize,
    pub swapped: bool,
    pub hx_records: Vec<usize>,
    pub hz_records: Vec<usize>,
}

/// Starting point of a detector or observable for back-propagation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub instruction: usize,
    pub records: Vec<usize>,
}

/// Everything `place_detectors` needs besides the program.
#[derive(Debug, Clone, Default)]
pub struct DetectorPlan {
    pub blocks: Vec<BlockLayout>,
    pub layers: Vec<SyndromeLayer>,
    pub detectors: Vec<Anchor>,
    pub observables: Vec<Anchor>,
}

struct Builder<'a> {
    code: &'a StabilizerCode,
    noise: NoiseParams,
    prog: CircuitProgram,
    plan: DetectorPlan,
}

impl<'a> Builder<'a> {
    fn new(code: &'a StabilizerCode, noise: NoiseParams, blocks: usize, ebits: usize) -> Self {
        let layouts: Vec<BlockLayout> = (0..blocks)
            .map(|b| BlockLayout::new(b * (code.n + code.check_count()), code))
            .collect();
        let qubits = layouts.iter().map(BlockLayout::size).sum::<usize>() + 2 * ebits;
        Self {
            code,
            noise,
            prog: CircuitProgram::new(qubits),
            plan: DetectorPlan {
                blocks: layouts,
                ..DetectorPlan::default()
            },
        }
    }

    fn emit(&mut self, inst: Instruction) -> usize {
        self.prog.push_unchecked(inst)
    }

    fn ebit_base(&self) -> usize {
        self.plan.blocks.iter().map(BlockLayout::size).sum()
    }

    fn ebit_pairs(&self) -> Vec<(usize, usize)> {
        let base = self.ebit_base();
        (0..self.code.n).map(|i| (base + 2 * i, base + 2 * i + 1)).collect()
    }

    fn p(&self) -> f64 {
        self.noise.p
    }

    fn bitflip(&mut self, targets: Vec<usize>) {
        if !targets.is_empty() {
            let p = self.p();
            self.emit(Instruction::BitFlip { p, targets });
        }
    }

    fn phaseflip(&mut self, targets: Vec<usize>) {
        if !targets.is_empty() {
            let p = self.p();
            self.emit(Instruction::PhaseFlip { p, targets });
        }
    }

    fn dep1(&mut self, targets: Vec<usize>) {
        if !targets.is_empty() {
            let p = self.p();
            self.emit(Instruction::Depolarize1 { p, targets });
        }
    }

    fn dep2(&mut self, pairs: Vec<(usize, usize)>) {
        if !pairs.is_empty() {
            let p = self.p();
            self.emit(Instruction::Depolarize2 { p, pairs });
        }
    }

    fn tick(&mut self) {
        self.emit(Instruction::Tick);
    }

    fn init_data(&mut self, blocks: &[usize]) {
        let targets: Vec<usize> = blocks.iter().flat_map(|&b| self.plan.blocks[b].data_qubits()).collect();
        self.emit(Instruction::ResetZ(targets.clone()));
        self.bitflip(targets);
        self.tick();
    }

    /// One syndrome round on `blocks` in lockstep; `(block, swapped)`.
    fn syndrome_round(&mut self, blocks: &[(usize, bool)]) {
        let code = self.code;
        let schedule = &code.schedule;
        let idle = self.noise.idle;
        let layouts: Vec<(BlockLayout, bool)> = blocks.iter().map(|&(b, s)| (self.plan.blocks[b], s)).collect();

        // Ancilla resets in the measured basis.
        let (mut rz, mut rx) = (Vec::new(), Vec::new());
        for (l, swapped) in &layouts {
            let xs = (0..l.x_checks).map(|c| l.x_ancilla(c));
            let zs = (0..l.z_checks).map(|c| l.z_ancilla(c));
            if *swapped {
                rz.extend(xs);
                rx.extend(zs);
            } else {
                rx.extend(xs);
                rz.extend(zs);
            }
        }
        if !rz.is_empty() {
            self.emit(Instruction::ResetZ(rz.clone()));
        }
        if !rx.is_empty() {
            self.emit(Instruction::ResetX(rx.clone()));
        }
        self.bitflip(rz.clone());
        self.phaseflip(rx.clone());
        if idle {
            self.dep1(layouts.iter().flat_map(|(l, _)| l.data_qubits()).collect());
        }
        self.tick();

        for t in 0..schedule.depth {
            let mut pairs = Vec::new();
            let mut busy = vec![false; self.prog.qubit_count];
            for (l, swapped) in &layouts {
                for (c, s) in schedule.x_checks.iter().enumerate() {
                    if let Some(q) = s[t] {
                        let (a, d) = (l.x_ancilla(c), l.data(q));
                        pairs.push(if *swapped { (d, a) } else { (a, d) });
                    }
                }
                for (c, s) in schedule.z_checks.iter().enumerate() {
                    if let Some(q) = s[t] {
                        let (a, d) = (l.z_ancilla(c), l.data(q));
                        pairs.push(if *swapped { (a, d) } else { (d, a) });
                    }
                }
            }
            for &(a, b) in &pairs {
                busy[a] = true;
                busy[b] = true;
            }
            self.emit(Instruction::Cnot(pairs.clone()));
            self.dep2(pairs);
            if idle {
                let idle_qubits = layouts
                    .iter()
                    .flat_map(|(l, _)| l.all_qubits())
                    .filter(|&q| !busy[q])
                    .collect();
                self.dep1(idle_qubits);
            }
            self.tick();
        }

        // Measurement noise in the measured basis, then measurement.
        self.bitflip(rz.clone());
        self.phaseflip(rx.clone());
        if idle {
            self.dep1(layouts.iter().flat_map(|(l, _)| l.data_qubits()).collect());
        }
        let mut mz_start = None;
        let mut mx_start = None;
        if !rz.is_empty() {
            mz_start = Some(self.emit(Instruction::MeasureZ {
                targets: rz.clone(),
                readout: false,
            }));
        }
        if !rx.is_empty() {
            mx_start = Some(self.emit(Instruction::MeasureX {
                targets: rx.clone(),
                readout: false,
            }));
        }
        let boundary = self.prog.instructions().len() - 1;
        let record_of = |q: usize| -> usize {
            if let Some(i) = rz.iter().position(|&x| x == q) {
                mz_start.unwrap() + i
            } else {
                mx_start.unwrap() + rx.iter().position(|&x| x == q).expect("measured ancilla")
            }
        };
        for (i, (l, swapped)) in layouts.iter().enumerate() {
            let layer = SyndromeLayer {
                boundary,
                block: blocks[i].0,
                swapped: *swapped,
                hx_records: (0..l.x_checks).map(|c| record_of(l.x_ancilla(c))).collect(),
                hz_records: (0..l.z_checks).map(|c| record_of(l.z_ancilla(c))).collect(),
            };
            // Detectors sit on the Z-type measurements of the round.
            let anchors = if *swapped { &layer.hx_records } else { &layer.hz_records };
            for &r in anchors {
                self.plan.detectors.push(Anchor {
                    instruction: boundary,
                    records: vec![r],
                });
            }
            self.plan.layers.push(layer);
        }
        self.tick();
    }

    /// Non-local CNOT from `control` to `target` through `n` ebits. Data
    /// qubit `i` of the control pairs with data `pairing[i]` of the target.
    fn nonlocal_cnot(&mut self, control: usize, target: usize, pairing: &[usize]) {
        let n = self.code.n;
        let c = self.plan.blocks[control];
        let t = self.plan.blocks[target];
        let ebits = self.ebit_pairs();
        let e1: Vec<usize> = ebits.iter().map(|e| e.0).collect();
        let e2: Vec<usize> = ebits.iter().map(|e| e.1).collect();
        let p_ebit = self.noise.p_ebit;

        self.emit(Instruction::BellInit(ebits.clone()));
        self.emit(Instruction::Depolarize2 {
            p: p_ebit,
            pairs: ebits,
        });
        self.tick();

        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (c.data(i), e1[i])).collect();
        self.emit(Instruction::Cnot(pairs.clone()));
        self.dep2(pairs);
        self.tick();

        self.bitflip(e1.clone());
        let m1 = self.emit(Instruction::MeasureZ {
            targets: e1,
            readout: false,
        });
        self.tick();

        for (i, &q) in e2.iter().enumerate() {
            self.emit(Instruction::CondX {
                record: m1 + i,
                qubit: q,
            });
        }
        self.dep1(e2.clone());
        self.tick();

        let pairs: Vec<(usize, usize)> = (0..n).map(|i| (e2[i], t.data(pairing[i]))).collect();
        self.emit(Instruction::Cnot(pairs.clone()));
        self.dep2(pairs);
        self.tick();

        self.emit(Instruction::H(e2.clone()));
        self.dep1(e2.clone());
        self.tick();

        self.bitflip(e2.clone());
        let m2 = self.emit(Instruction::MeasureZ {
            targets: e2,
            readout: false,
        });
        self.tick();

        for i in 0..n {
            self.emit(Instruction::CondZ {
                record: m2 + i,
                qubit: c.data(i),
            });
        }
        self.dep1(c.data_qubits().collect());
        self.tick();
    }

    /// Final Z readout of the data of `blocks`. Adds one detector per
    /// Z-check of each block when `detect` holds, and returns the readout
    /// record of every data qubit per block.
    fn readout(&mut self, blocks: &[usize], detect: bool) -> Vec<Vec<usize>> {
        let targets: Vec<usize> = blocks.iter().flat_map(|&b| self.plan.blocks[b].data_qubits()).collect();
        self.bitflip(targets.clone());
        let start = self.emit(Instruction::MeasureZ { targets, readout: true });
        let at = self.prog.instructions().len() - 1;
        let n = self.code.n;
        let records: Vec<Vec<usize>> = (0..blocks.len())
            .map(|i| (0..n).map(|q| start + i * n + q).collect())
            .collect();
        if detect {
            for recs in &records {
                for r in 0..self.code.h_z.rows() {
                    self.plan.detectors.push(Anchor {
                        instruction: at,
                        records: self.code.h_z.row(r).iter_ones().map(|q| recs[q]).collect(),
                    });
                }
            }
        }
        records
    }

    fn observe(&mut self, readout: &[usize]) {
        let at = self.prog.instructions().len() - 1;
        for lz in &self.code.logical_z {
            self.plan.observables.push(Anchor {
                instruction: at,
                records: lz.iter_ones().map(|q| readout[q]).collect(),
            });
        }
    }

    fn finish(mut self, kind: CircuitKind) -> Result<CircuitProgram, CircuitError> {
        self.prog.metadata = Metadata {
            code: Some(format!("{} {}", self.code.name(), self.code.descriptor())),
            circuit: Some(kind),
            noise: Some(self.noise),
        };
        place_detectors(&mut self.prog, self.code, &self.plan)?;
        Ok(self.prog)
    }
}

fn noise_for(code: &StabilizerCode, noise: NoiseParams) -> NoiseParams {
    NoiseParams {
        idle: noise.idle && code.is_bb(),
        ..noise
    }
}

/// Transversal CNOT between two blocks on different nodes, 4 rounds before
/// and 3 after, Z readout of both blocks.
pub fn build_nonlocal_cnot_experiment(
    code: &StabilizerCode,
    noise: NoiseParams,
) -> Result<CircuitProgram, CircuitError> {
    let mut b = Builder::new(code, noise_for(code, noise), 2, code.n);
    b.init_data(&[0, 1]);
    for _ in 0..4 {
        b.syndrome_round(&[(0, false), (1, false)]);
    }
    let identity: Vec<usize> = (0..code.n).collect();
    b.nonlocal_cnot(0, 1, &identity);
    for _ in 0..3 {
        b.syndrome_round(&[(0, false), (1, false)]);
    }
    let reads = b.readout(&[0, 1], true);
    b.observe(&reads[0]);
    b.observe(&reads[1]);
    b.finish(CircuitKind::NonlocalCnot)
}

/// Logical teleportation of block 0 into block 2 using a Bell pair between
/// blocks 1 and 2 made by a non-local transversal CNOT.
pub fn build_teleportation_experiment(
    code: &StabilizerCode,
    noise: NoiseParams,
) -> Result<CircuitProgram, CircuitError> {
    let pairing = code.hadamard_pairing().ok_or(CircuitError::NoPairing)?;
    let mut b = Builder::new(code, noise_for(code, noise), 3, code.n);
    let (cb1, cb2, cb3) = (b.plan.blocks[0], b.plan.blocks[1], b.plan.blocks[2]);
    b.init_data(&[0, 1, 2]);
    for _ in 0..4 {
        b.syndrome_round(&[(0, false), (1, false), (2, false)]);
    }
    b.emit(Instruction::H(cb2.data_qubits().collect()));
    b.dep1(cb2.data_qubits().collect());
    b.tick();
    b.nonlocal_cnot(1, 2, &pairing);
    for _ in 0..3 {
        b.syndrome_round(&[(1, true), (2, false)]);
    }

    // Logical Bell measurement of blocks 0 and 1.
    let pairs: Vec<(usize, usize)> = (0..code.n).map(|i| (cb1.data(pairing[i]), cb2.data(i))).collect();
    b.emit(Instruction::Cnot(pairs.clone()));
    b.dep2(pairs);
    b.tick();
    b.emit(Instruction::H(cb1.data_qubits().collect()));
    b.dep1(cb1.data_qubits().collect());
    b.tick();
    let measured: Vec<usize> = cb1.data_qubits().chain(cb2.data_qubits()).collect();
    b.bitflip(measured.clone());
    let m = b.emit(Instruction::MeasureZ {
        targets: measured,
        readout: false,
    });
    b.tick();
    for i in 0..code.n {
        b.emit(Instruction::CondX {
            record: m + code.n + i,
            qubit: cb3.data(pairing[i]),
        });
    }
    b.dep1(cb3.data_qubits().collect());
    b.tick();
    for j in 0..code.n {
        b.emit(Instruction::CondZ {
            record: m + j,
            qubit: cb3.data(j),
        });
    }
    b.dep1(cb3.data_qubits().collect());
    b.tick();

    b.syndrome_round(&[(2, false)]);
    let reads = b.readout(&[2], true);
    b.observe(&reads[0]);
    b.finish(CircuitKind::Teleport)
}

/// Heisenberg-picture Pauli with a pending set of records that still have to
/// be folded in and the records already collected.
struct BackProp<'a> {
    x: BitVector,
    z: BitVector,
    pending: BTreeSet<usize>,
    collected: BTreeSet<usize>,
    offsets: &'a [usize],
}

impl BackProp<'_> {
    fn is_done(&self) -> bool {
        self.pending.is_empty() && self.x.is_zero() && self.z.is_zero()
    }

    fn fail(&self, what: &str, reason: String) -> CircuitError {
        CircuitError::NonDeterministic {
            what: what.to_string(),
            reason,
        }
    }

    fn step(&mut self, index: usize, inst: &Instruction, what: &str) -> Result<(), CircuitError> {
        use Instruction::*;
        match inst {
            MeasureZ { targets, .. } | MeasureX { targets, .. } => {
                let z_basis = matches!(inst, MeasureZ { .. });
                for (k, &q) in targets.iter().enumerate() {
                    let r = self.offsets[index] + k;
                    if self.pending.remove(&r) {
                        if z_basis {
                            self.z.flip(q);
                        } else {
                            self.x.flip(q);
                        }
                    }
                    let anti = if z_basis { self.x.get(q) } else { self.z.get(q) };
                    if anti {
                        return Err(self.fail(what, format!("anticommutes with measurement at instruction {index}")));
                    }
                }
            }
            ResetZ(t) | ResetX(t) => {
                let z_basis = matches!(inst, ResetZ(_));
                for &q in t {
                    let (keep, other) = if z_basis {
                        (&mut self.z, &self.x)
                    } else {
                        (&mut self.x, &self.z)
                    };
                    if other.get(q) {
                        return Err(self.fail(what, format!("anticommutes with reset at instruction {index}")));
                    }
                    keep.set(q, false);
                }
            }
            H(t) => {
                for &q in t {
                    let (a, b) = (self.x.get(q), self.z.get(q));
                    self.x.set(q, b);
                    self.z.set(q, a);
                }
            }
            Cnot(pairs) => {
                for &(c, t) in pairs {
                    if self.x.get(c) {
                        self.x.flip(t);
                    }
                    if self.z.get(t) {
                        self.z.flip(c);
                    }
                }
            }
            CondX { record, qubit } => {
                if self.z.get(*qubit) && !self.pending.remove(record) {
                    self.pending.insert(*record);
                }
            }
            CondZ { record, qubit } => {
                if self.x.get(*qubit) && !self.pending.remove(record) {
                    self.pending.insert(*record);
                }
            }
            BellInit(pairs) => {
                for &(a, b) in pairs {
                    if self.x.get(a) != self.x.get(b) || self.z.get(a) != self.z.get(b) {
                        return Err(self.fail(what, format!("not a Bell stabilizer at instruction {index}")));
                    }
                    for q in [a, b] {
                        self.x.set(q, false);
                        self.z.set(q, false);
                    }
                }
            }
            PauliX(_)
            | PauliZ(_)
            | BitFlip { .. }
            | PhaseFlip { .. }
            | Depolarize1 { .. }
            | Depolarize2 { .. }
            | Tick
            | Detector(_)
            | Observable { .. } => {}
        }
        Ok(())
    }

    /// Replaces the part of the operator on `block` by layer records when it
    /// lies in the span of the layer's measured checks.
    fn absorb(&mut self, layer: &SyndromeLayer, block: &BlockLayout, hx: &RowSpaceSolver, hz: &RowSpaceSolver) {
        for x_part in [true, false] {
            let src = if x_part { &self.x } else { &self.z };
            let local = BitVector::from_indices(
                block.n,
                block.data_qubits().filter(|&q| src.get(q)).map(|q| q - block.offset),
            );
            if local.is_zero() {
                continue;
            }
            // X-type measured ops are H_X rows unless the block is swapped.
            let use_hx = x_part != layer.swapped;
            let (solver, records) = if use_hx {
                (hx, &layer.hx_records)
            } else {
                (hz, &layer.hz_records)
            };
            if let Some(sel) = solver.express(&local) {
                for g in sel.iter_ones() {
                    let r = records[g];
                    if !self.collected.remove(&r) {
                        self.collected.insert(r);
                    }
                }
                let dst = if x_part { &mut self.x } else { &mut self.z };
                for q in block.data_qubits() {
                    dst.set(q, false);
                }
            }
        }
    }
}

fn back_propagate(
    program: &CircuitProgram,
    offsets: &[usize],
    anchor: &Anchor,
    plan: &DetectorPlan,
    solvers: Option<(&RowSpaceSolver, &RowSpaceSolver)>,
    what: &str,
) -> Result<Vec<usize>, CircuitError> {
    let mut bp = BackProp {
        x: BitVector::zeros(program.qubit_count),
        z: BitVector::zeros(program.qubit_count),
        pending: anchor.records.iter().copied().collect(),
        collected: anchor.records.iter().copied().collect(),
        offsets,
    };
    let insts = program.instructions();
    let mut layer_idx = plan.layers.len();
    for index in (0..=anchor.instruction).rev() {
        if let Some((hx, hz)) = solvers {
            if index < anchor.instruction {
                while layer_idx > 0 && plan.layers[layer_idx - 1].boundary > index {
                    layer_idx -= 1;
                }
                let mut j = layer_idx;
                while j > 0 && plan.layers[j - 1].boundary == index {
                    let layer = &plan.layers[j - 1];
                    bp.absorb(layer, &plan.blocks[layer.block], hx, hz);
                    j -= 1;
                }
            }
        }
        if bp.is_done() {
            break;
        }
        bp.step(index, &insts[index], what)?;
    }
    if !bp.pending.is_empty() {
        return Err(bp.fail(what, "unresolved record dependencies at program start".into()));
    }
    if !bp.x.is_zero() {
        return Err(bp.fail(what, "X component survives to the initial |0> state".into()));
    }
    Ok(bp.collected.into_iter().collect())
}

/// Adds detectors and observables described by `plan` to `program`, each
/// found by propagating its anchor back through the circuit until it becomes
/// a product of earlier measurement records.
pub fn place_detectors(
    program: &mut CircuitProgram,
    code: &StabilizerCode,
    plan: &DetectorPlan,
) -> Result<(), CircuitError> {
    let offsets = program.record_offsets();
    let hx = RowSpaceSolver::new(&code.h_x);
    let hz = RowSpaceSolver::new(&code.h_z);
    let mut inserts: Vec<Vec<Instruction>> = vec![Vec::new(); program.instructions().len()];
    for (i, anchor) in plan.detectors.iter().enumerate() {
        let recs = back_propagate(
            program,
            &offsets,
            anchor,
            plan,
            Some((&hx, &hz)),
            &format!("detector {i}"),
        )?;
        inserts[anchor.instruction].push(Instruction::Detector(recs));
    }
    for (i, anchor) in plan.observables.iter().enumerate() {
        let what = format!("observable {i}");
        let recs = back_propagate(program, &offsets, anchor, plan, None, &what)
            .or_else(|_| back_propagate(program, &offsets, anchor, plan, Some((&hx, &hz)), &what))?;
        inserts[anchor.instruction].push(Instruction::Observable {
            index: i,
            records: recs,
        });
    }
    let old = std::mem::replace(program, CircuitProgram::new(program.qubit_count));
    program.metadata = old.metadata.clone();
    for (inst, extra) in old.instructions.into_iter().zip(inserts) {
        program.push(inst)?;
        for e in extra {
            program.push(e)?;
        }
    }
    Ok(())
}

fn fmt_targets(out: &mut String, targets: &[usize]) {
    for t in targets {
        let _ = write!(out, " {t}");
    }
}

fn fmt_pairs(out: &mut String, pairs: &[(usize, usize)]) {
    for (a, b) in pairs {
        let _ = write!(out, " {a} {b}");
    }
}

/// Text form of a program. Record references are written relative to the
/// current measurement count, as `rec[-k]`.
pub fn serialize(program: &CircuitProgram) -> String {
    use Instruction::*;
    let mut out = String::new();
    if let Some(code) = &program.metadata.code {
        let _ = writeln!(out, "#!code {code}");
    }
    if let Some(kind) = program.metadata.circuit {
        let _ = writeln!(out, "#!circuit {kind}");
    }
    if let Some(n) = program.metadata.noise {
        let _ = writeln!(out, "#!noise p={} p_ebit={} idle={}", n.p, n.p_ebit, n.idle);
    }
    let _ = writeln!(out, "#!qubits {}", program.qubit_count);
    let mut measured = 0usize;
    let rec = |r: usize, m: usize| format!("rec[-{}]", m - r);
    for inst in program.instructions() {
        match inst {
            ResetZ(t) => {
                out.push('R');
                fmt_targets(&mut out, t);
            }
            ResetX(t) => {
                out.push_str("RX");
                fmt_targets(&mut out, t);
            }
            MeasureZ { targets, readout } | MeasureX { targets, readout } => {
                out.push_str(if matches!(inst, MeasureZ { .. }) { "M" } else { "MX" });
                fmt_targets(&mut out, targets);
                if *readout {
                    out.push_str(" #!readout");
                }
            }
            H(t) => {
                out.push('H');
                fmt_targets(&mut out, t);
            }
            Cnot(p) => {
                out.push_str("CX");
                fmt_pairs(&mut out, p);
            }
            PauliX(t) => {
                out.push('X');
                fmt_targets(&mut out, t);
            }
            PauliZ(t) => {
                out.push('Z');
                fmt_targets(&mut out, t);
            }
            CondX { record, qubit } => {
                let _ = write!(out, "CX {} {qubit}", rec(*record, measured));
            }
            CondZ { record, qubit } => {
                let _ = write!(out, "CZ {} {qubit}", rec(*record, measured));
            }
            BellInit(p) => {
                out.push_str("BELL");
                fmt_pairs(&mut out, p);
            }
            BitFlip { p, targets } => {
                let _ = write!(out, "X_ERROR({p})");
                fmt_targets(&mut out, targets);
            }
            PhaseFlip { p, targets } => {
                let _ = write!(out, "Z_ERROR({p})");
                fmt_targets(&mut out, targets);
            }
            Depolarize1 { p, targets } => {
                let _ = write!(out, "DEPOLARIZE1({p})");
                fmt_targets(&mut out, targets);
            }
            Depolarize2 { p, pairs } => {
                let _ = write!(out, "DEPOLARIZE2({p})");
                fmt_pairs(&mut out, pairs);
            }
            Tick => out.push_str("TICK"),
            Detector(r) => {
                out.push_str("DETECTOR");
                for &x in r {
                    let _ = write!(out, " {}", rec(x, measured));
                }
            }
            Observable { index, records } => {
                let _ = write!(out, "OBSERVABLE_INCLUDE({index})");
                for &x in records {
                    let _ = write!(out, " {}", rec(x, measured));
                }
            }
        }
        out.push('\n');
        measured += inst.measurement_count();
    }
    out
}

fn split_arg(token: &str) -> Result<(&str, Option<&str>), String> {
    match token.find('(') {
        None => Ok((token, None)),
        Some(i) => {
            let inner = token[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| format!("unclosed argument in `{token}`"))?;
            Ok((&token[..i], Some(inner)))
        }
    }
}

fn parse_metadata(meta: &mut Metadata, qubits: &mut Option<usize>, body: &str) -> Result<(), String> {
    let (key, rest) = body.split_once(' ').unwrap_or((body, ""));
    match key {
        "code" => meta.code = Some(rest.trim().to_string()),
        "circuit" => meta.circuit = Some(rest.trim().parse()?),
        "qubits" => *qubits = Some(rest.trim().parse().map_err(|_| "bad qubit count".to_string())?),
        "noise" => {
            let mut n = NoiseParams::noiseless();
            for kv in rest.split_whitespace() {
                let (k, v) = kv.split_once('=').ok_or("expected key=value in #!noise")?;
                match k {
                    "p" => n.p = v.parse().map_err(|_| format!("bad p `{v}`"))?,
                    "p_ebit" => n.p_ebit = v.parse().map_err(|_| format!("bad p_ebit `{v}`"))?,
                    "idle" => n.idle = v.parse().map_err(|_| format!("bad idle flag `{v}`"))?,
                    _ => return Err(format!("unknown noise key `{k}`")),
                }
            }
            meta.noise = Some(n);
        }
        _ => {}
    }
    Ok(())
}

/// Parses the text form produced by [`serialize`].
pub fn parse(text: &str) -> Result<CircuitProgram, CircuitError> {
    let mut meta = Metadata::default();
    let mut declared: Option<usize> = None;
    let mut insts: Vec<(usize, Instruction)> = Vec::new();
    let mut measured = 0usize;
    let mut max_qubit: Option<usize> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let perr = |reason: String| CircuitError::Parse { line: line_no, reason };
        let trimmed = raw.trim();
        if let Some(body) = trimmed.strip_prefix("#!") {
            parse_metadata(&mut meta, &mut declared, body).map_err(perr)?;
            continue;
        }
        let (content, comment) = match trimmed.find('#') {
            Some(i) => (trimmed[..i].trim(), Some(&trimmed[i..])),
            None => (trimmed, None),
        };
        if content.is_empty() {
            continue;
        }
        let readout = comment.is_some_and(|c| c.contains("#!readout"));
        let mut tokens = content.split_whitespace();
        let head = tokens.next().expect("nonempty line");
        let args: Vec<&str> = tokens.collect();
        let (name, param) = split_arg(head).map_err(perr)?;
        let name = name.to_ascii_uppercase();

        let qubit =
            |s: &str| -> Result<usize, CircuitError> { s.parse().map_err(|_| perr(format!("bad qubit `{s}`"))) };
        let record = |s: &str| -> Result<usize, CircuitError> {
            let k: usize = s
                .strip_prefix("rec[-")
                .and_then(|r| r.strip_suffix(']'))
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| perr(format!("bad record reference `{s}`")))?;
            if k == 0 || k > measured {
                return Err(perr(format!("record `{s}` out of range")));
            }
            Ok(measured - k)
        };
        let qubits = || args.iter().map(|a| qubit(a)).collect::<Result<Vec<_>, _>>();
        let pairs = || -> Result<Vec<(usize, usize)>, CircuitError> {
            let q = qubits()?;
            if q.len() % 2 != 0 {
                return Err(perr("odd number of targets for a two-qubit operation".into()));
            }
            Ok(q.chunks(2).map(|c| (c[0], c[1])).collect())
        };
        let prob = || -> Result<f64, CircuitError> {
            let s = param.ok_or_else(|| perr(format!("{name} needs a probability")))?;
            s.parse().map_err(|_| perr(format!("bad probability `{s}`")))
        };
        let no_param = |inst: Instruction| -> Result<Instruction, CircuitError> {
            if param.is_some() {
                return Err(perr(format!("{name} takes no argument")));
            }
            Ok(inst)
        };
        let inst = match name.as_str() {
            "R" => no_param(Instruction::ResetZ(qubits()?))?,
            "RX" => no_param(Instruction::ResetX(qubits()?))?,
            "M" => no_param(Instruction::MeasureZ {
                targets: qubits()?,
                readout,
            })?,
            "MX" => no_param(Instruction::MeasureX {
                targets: qubits()?,
                readout,
            })?,
            "H" => no_param(Instruction::H(qubits()?))?,
            "X" => no_param(Instruction::PauliX(qubits()?))?,
            "Z" => no_param(Instruction::PauliZ(qubits()?))?,
            "CX" | "CNOT" | "CZ" if args.first().is_some_and(|a| a.starts_with("rec[")) => {
                if args.len() != 2 {
                    return Err(perr(
                        "classically controlled gate takes one record and one qubit".into(),
                    ));
                }
                let (record, qubit) = (record(args[0])?, qubit(args[1])?);
                if name == "CZ" {
                    Instruction::CondZ { record, qubit }
                } else {
                    Instruction::CondX { record, qubit }
                }
            }
            "CX" | "CNOT" => no_param(Instruction::Cnot(pairs()?))?,
            "BELL" => no_param(Instruction::BellInit(pairs()?))?,
            "X_ERROR" => Instruction::BitFlip {
                p: prob()?,
                targets: qubits()?,
            },
            "Z_ERROR" => Instruction::PhaseFlip {
                p: prob()?,
                targets: qubits()?,
            },
            "DEPOLARIZE1" => Instruction::Depolarize1 {
                p: prob()?,
                targets: qubits()?,
            },
            "DEPOLARIZE2" => Instruction::Depolarize2 {
                p: prob()?,
                pairs: pairs()?,
            },
            "TICK" => no_param(Instruction::Tick)?,
            "DETECTOR" => Instruction::Detector(args.iter().map(|a| record(a)).collect::<Result<_, _>>()?),
            "OBSERVABLE_INCLUDE" => {
                let index = param
                    .ok_or_else(|| perr("OBSERVABLE_INCLUDE needs an index".into()))?
                    .parse()
                    .map_err(|_| perr("bad observable index".into()))?;
                Instruction::Observable {
                    index,
                    records: args.iter().map(|a| record(a)).collect::<Result<_, _>>()?,
                }
            }
            other => return Err(perr(format!("unknown instruction `{other}`"))),
        };
        measured += inst.measurement_count();
        if let Some(m) = inst.qubits().into_iter().max() {
            max_qubit = Some(max_qubit.map_or(m, |x: usize| x.max(m)));
        }
        insts.push((line_no, inst));
    }

    let qubit_count = declared.unwrap_or(max_qubit.map_or(0, |m| m + 1));
    let mut program = CircuitProgram::new(qubit_count);
    program.metadata = meta;
    for (line, inst) in insts {
        program.push(inst).map_err(|e| CircuitError::Parse {
            line,
            reason: e.to_string(),
        })?;
    }
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codes::{build_bb, build_rotated_sc, BbParams};

    fn noise(p: f64) -> NoiseParams {
        NoiseParams::new(p, p, true).unwrap()
    }

    fn count_cnots(prog: &CircuitProgram) -> usize {
        census(prog).twoq
    }

    #[test]
    fn single_round_counts() {
        for (code, cnots, meas) in [
            (build_bb(&BbParams::bb18()).unwrap(), 108, 18),
            (build_rotated_sc(5).unwrap(), 80, 24),
        ] {
            let mut b = Builder::new(&code, noise(0.001), 1, 0);
            b.syndrome_round(&[(0, false)]);
            assert_eq!(count_cnots(&b.prog), cnots);
            assert_eq!(b.prog.measurement_count(), meas);
            let mut s = Builder::new(&code, noise(0.001), 1, 0);
            s.syndrome_round(&[(0, true)]);
            assert_eq!(count_cnots(&s.prog), cnots);
            let resets = |p: &CircuitProgram| {
                p.instructions()
                    .iter()
                    .filter_map(|i| match i {
                        Instruction::ResetX(t) => Some((t.len(), 0)),
                        Instruction::ResetZ(t) => Some((0, t.len())),
                        _ => None,
                    })
                    .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            };
            let (x, z) = resets(&b.prog);
            assert_eq!(resets(&s.prog), (z, x));
        }
    }

    #[test]
    fn swapped_round_reverses_cnot_direction() {
        let code = build_rotated_sc(3).unwrap();
        let dirs = |swapped: bool| {
            let mut b = Builder::new(&code, noise(0.0), 1, 0);
            b.syndrome_round(&[(0, swapped)]);
            b.prog
                .instructions()
                .iter()
                .filter_map(|i| match i {
                    Instruction::Cnot(p) => Some(p.clone()),
                    _ => None,
                })
                .flatten()
                .collect::<Vec<_>>()
        };
        let flipped: Vec<(usize, usize)> = dirs(false).into_iter().map(|(a, b)| (b, a)).collect();
        assert_eq!(dirs(true), flipped);
    }

    #[test]
    fn census_of_small_experiments() {
        let bb18 = build_bb(&BbParams::bb18()).unwrap();
        let nl = build_nonlocal_cnot_experiment(&bb18, noise(0.001)).unwrap();
        let c = census(&nl);
        assert_eq!((c.oneq, c.twoq, c.meas_mid), (54, 1548, 288));
        assert_eq!(nl.detector_count(), 144);
        assert_eq!(nl.observable_count(), 8);

        let sc5 = build_rotated_sc(5).unwrap();
        let tp = build_teleportation_experiment(&sc5, noise(0.001)).unwrap();
        let c = census(&tp);
        assert_eq!((c.oneq, c.twoq, c.meas_mid), (175, 1595, 556));
        assert_eq!(tp.detector_count(), 240);
        assert_eq!(tp.observable_count(), 1);
        assert_eq!(census(&CircuitProgram::new(0)), GateCensus::default());
    }

    #[test]
    fn conditional_gates_follow_their_records() {
        let code = build_rotated_sc(3).unwrap();
        for prog in [
            build_nonlocal_cnot_experiment(&code, noise(0.01)).unwrap(),
            build_teleportation_experiment(&code, noise(0.01)).unwrap(),
        ] {
            let offsets = prog.record_offsets();
            for (i, inst) in prog.instructions().iter().enumerate() {
                if let Instruction::CondX { record, .. } | Instruction::CondZ { record, .. } = inst {
                    assert!(*record < offsets[i]);
                }
            }
        }
    }

    #[test]
    fn ebit_and_block_counts() {
        let code = build_rotated_sc(3).unwrap();
        let per_block = code.n + code.check_count();
        let nl = build_nonlocal_cnot_experiment(&code, noise(0.01)).unwrap();
        assert_eq!(nl.qubit_count, 2 * per_block + 2 * code.n);
        let tp = build_teleportation_experiment(&code, noise(0.01)).unwrap();
        assert_eq!(tp.qubit_count, 3 * per_block + 2 * code.n);
        let bells = |p: &CircuitProgram| {
            p.instructions()
                .iter()
                .map(|i| match i {
                    Instruction::BellInit(pairs) => pairs.len(),
                    _ => 0,
                })
                .sum::<usize>()
        };
        assert_eq!(bells(&nl), code.n);
        assert_eq!(bells(&tp), code.n);
    }

    #[test]
    fn noise_free_surface_code_has_no_idle_channels() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, noise(0.01)).unwrap();
        let dep1 = prog
            .instructions()
            .iter()
            .filter(|i| matches!(i, Instruction::Depolarize1 { .. }))
            .count();
        // H on ebits, two conditional layers.
        assert_eq!(dep1, 3);
    }

    #[test]
    fn parse_single_lines() {
        let p = parse("X_ERROR(0.1) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        assert_eq!(
            p.instructions()[0],
            Instruction::BitFlip {
                p: 0.1,
                targets: vec![0]
            }
        );
        assert_eq!(p.instructions()[2], Instruction::Detector(vec![0]));
        assert_eq!(p.detector_count(), 1);
        let c = parse("M 0 1\nCX rec[-2] 3\nCZ rec[-1] 2\n").unwrap();
        assert_eq!(c.instructions()[1], Instruction::CondX { record: 0, qubit: 3 });
        assert_eq!(c.instructions()[2], Instruction::CondZ { record: 1, qubit: 2 });
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = parse("R 0\nFOO 1\n").unwrap_err();
        assert_eq!(
            e,
            CircuitError::Parse {
                line: 2,
                reason: "unknown instruction `FOO`".into()
            }
        );
        assert!(matches!(
            parse("M 0\nDETECTOR rec[-2]\n"),
            Err(CircuitError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("X_ERROR(1.5) 0\n"),
            Err(CircuitError::Parse { line: 1, .. })
        ));
        assert!(matches!(parse("CX 0 1 2\n"), Err(CircuitError::Parse { line: 1, .. })));
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let code = build_bb(&BbParams::bb18()).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, noise(0.001)).unwrap();
        let text = serialize(&prog);
        let back = parse(&text).unwrap();
        assert_eq!(serialize(&back), text);
        assert_eq!(census(&back), census(&prog));
        assert_eq!(back, prog);
    }

    #[test]
    fn noiseless_copy_keeps_structure() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_teleportation_experiment(&code, noise(0.01)).unwrap();
        let quiet = prog.without_noise();
        assert_eq!(census(&quiet), census(&prog));
        assert!(quiet
            .instructions()
            .iter()
            .all(|i| i.probability().is_none_or(|p| p == 0.0)));
    }

    #[test]
    fn push_rejects_future_records_and_bad_qubits() {
        let mut p = CircuitProgram::new(2);
        assert!(p.push(Instruction::Detector(vec![0])).is_err());
        assert!(p.push(Instruction::H(vec![2])).is_err());
        assert!(p.push(Instruction::Cnot(vec![(1, 1)])).is_err());
        assert_eq!(
            p.push(Instruction::MeasureZ {
                targets: vec![0, 1],
                readout: false
            })
            .unwrap(),
            0
        );
        assert_eq!(
            p.push(Instruction::MeasureZ {
                targets: vec![0],
                readout: false
            })
            .unwrap(),
            2
        );
    }
}
