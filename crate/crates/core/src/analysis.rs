//! Logical-error statistics, threshold fits, distance extrapolation,
//! circuit-distance search and parameter sweeps.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::circuit::{build_nonlocal_cnot_experiment, build_teleportation_experiment, CircuitKind, NoiseParams};
use crate::codes::CodeDescriptor;
use crate::decoder::{BpConfig, BpOsdDecoder, OsdConfig};
use crate::dem::{dem_from_table, DetectorErrorModel};
use crate::sim::SignatureTable;
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("curves for d={d1} and d={d2} do not cross in the sampled range")]
    NoCrossing { d1: usize, d2: usize },
    #[error("p = {p} is not below the threshold {p_th}")]
    AboveThreshold { p: f64, p_th: f64 },
    #[error("no logical witness found within the search budget")]
    NoWitness,
}

/// Likelihood ratio defining the reported interval.
pub const BAYES_FACTOR: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LerEstimate<T> {
    pub shots: u64,
    pub fails: u64,
    pub point: T,
    pub interval_low: T,
    pub interval_high: T,
}

fn log_likelihood<T: Real>(fails: u64, shots: u64, q: T) -> T {
    let f = T::from_u64(fails).unwrap();
    let m = T::from_u64(shots - fails).unwrap();
    let term = |count: T, x: T| if count == T::zero() { T::zero() } else { count * x.ln() };
    term(f, q) + term(m, T::one() - q)
}

/// Points where the binomial likelihood is within `BAYES_FACTOR` of its
/// maximum, located by bisection on each side of the MLE.
pub fn ler_interval<T: Real>(fails: u64, shots: u64) -> Result<LerEstimate<T>, AnalysisError> {
    if shots == 0 || fails > shots {
        return Err(AnalysisError::InvalidInput(format!("fails={fails} shots={shots}")));
    }
    let mle = T::from_u64(fails).unwrap() / T::from_u64(shots).unwrap();
    let cut = log_likelihood(fails, shots, mle) - T::from_f64(BAYES_FACTOR.ln()).unwrap();
    let inside = |q: T| log_likelihood(fails, shots, q) >= cut;
    let half = T::from_f64(0.5).unwrap();
    let bisect = |mut good: T, mut bad: T| {
        for _ in 0..200 {
            let mid = (good + bad) * half;
            if mid == good || mid == bad {
                break;
            }
            if inside(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let low = if fails == 0 { T::zero() } else { bisect(mle, T::zero()) };
    let high = if fails == shots {
        T::one()
    } else {
        bisect(mle, T::one())
    };
    Ok(LerEstimate {
        shots,
        fails,
        point: mle,
        interval_low: low,
        interval_high: high,
    })
}

impl<T: Real> LerEstimate<T> {
    pub fn overlaps(&self, other: &Self) -> bool {
        self.interval_low <= other.interval_high && other.interval_low <= self.interval_high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint<T> {
    pub distance: usize,
    pub p: T,
    pub ler: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit<T> {
    pub p_th: T,
    pub alpha: T,
    /// Crossing estimate per successive distance pair.
    pub crossings: Vec<(usize, usize, T)>,
    /// Points used for the prefactor fit as `(d, ler, p)`.
    pub reference_points: Vec<(usize, T, T)>,
}

/// Model value `alpha · (p/p_th)^((d+1)/2)`.
pub fn scaling_law<T: Real>(alpha: T, p: T, p_th: T, d: usize) -> T {
    alpha * (p / p_th).powf(T::from_usize(d + 1).unwrap() / T::from_f64(2.0).unwrap())
}

/// Threshold as the mean log-log crossing of successive distance curves.
pub fn fit_threshold<T: Real>(points: &[CurvePoint<T>]) -> Result<ScalingFit<T>, AnalysisError> {
    let mut distances: Vec<usize> = points.iter().map(|c| c.distance).collect();
    distances.sort_unstable();
    distances.dedup();
    if distances.len() < 2 {
        return Err(AnalysisError::InvalidInput("need at least two distances".into()));
    }
    let curve = |d: usize| -> Vec<(T, T)> {
        let mut c: Vec<(T, T)> = points
            .iter()
            .filter(|c| c.distance == d && c.ler > T::zero() && c.p > T::zero())
            .map(|c| (c.p.ln(), c.ler.ln()))
            .collect();
        c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        c
    };
    for &d in &distances {
        if points.iter().filter(|c| c.distance == d).count() < 3 {
            return Err(AnalysisError::InvalidInput(format!(
                "need at least three points for d={d}"
            )));
        }
    }
    let mut crossings = Vec::new();
    for w in distances.windows(2) {
        let (a, b) = (curve(w[0]), curve(w[1]));
        // Difference log P(d2) - log P(d1) on the shared p grid.
        let diff: Vec<(T, T)> = a
            .iter()
            .filter_map(|&(x, ya)| {
                b.iter()
                    .find(|&&(xb, _)| (xb - x).abs() < T::from_f64(1e-9).unwrap())
                    .map(|&(_, yb)| (x, yb - ya))
            })
            .collect();
        let crossing = diff.windows(2).find_map(|s| {
            let ((x0, y0), (x1, y1)) = (s[0], s[1]);
            (y0 < T::zero() && y1 >= T::zero()).then(|| (x0 + (x1 - x0) * (-y0) / (y1 - y0)).exp())
        });
        match crossing {
            Some(p) => crossings.push((w[0], w[1], p)),
            None => return Err(AnalysisError::NoCrossing { d1: w[0], d2: w[1] }),
        }
    }
    let p_th = crossings.iter().fold(T::zero(), |s, c| s + c.2) / T::from_usize(crossings.len()).unwrap();

    // Least squares for log alpha with the exponent fixed by the model.
    let two = T::from_f64(2.0).unwrap();
    let used: Vec<&CurvePoint<T>> = points.iter().filter(|c| c.ler > T::zero() && c.p > T::zero()).collect();
    let log_alpha = used.iter().fold(T::zero(), |s, c| {
        s + c.ler.ln() - T::from_usize(c.distance + 1).unwrap() / two * (c.p / p_th).ln()
    }) / T::from_usize(used.len().max(1)).unwrap();
    Ok(ScalingFit {
        p_th,
        alpha: log_alpha.exp(),
        crossings,
        reference_points: used.iter().map(|c| (c.distance, c.ler, c.p)).collect(),
    })
}

/// Distance reaching `p_star` from the anchor `(d0, p0)` under the scaling law.
pub fn required_distance(
    p: f64,
    p_th: f64,
    d0: usize,
    p0: f64,
    p_star: f64,
    round_odd: bool,
) -> Result<usize, AnalysisError> {
    if !(p > 0.0 && p_th > 0.0) {
        return Err(AnalysisError::InvalidInput("probabilities must be positive".into()));
    }
    if p >= p_th {
        return Err(AnalysisError::AboveThreshold { p, p_th });
    }
    if !(p_star > 0.0 && p_star <= p0) {
        return Err(AnalysisError::InvalidInput(format!(
            "target {p_star} must lie in (0, {p0}]"
        )));
    }
    let exact = d0 as f64 + 2.0 * (p_star / p0).ln() / (p / p_th).ln();
    // Guard against 17.000000000000004-style rounding.
    let mut d = (exact - 1e-9).ceil().max(d0 as f64) as usize;
    if round_odd && d.is_multiple_of(2) {
        d += 1;
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistanceWitness {
    pub weight: usize,
    pub mechanisms: Vec<usize>,
    pub observables_flipped: Vec<usize>,
}

impl DistanceWitness {
    /// Re-checks both identities against the model.
    pub fn verify(&self, model: &DetectorErrorModel) -> bool {
        let flips = model.observables_of(self.mechanisms.iter().copied());
        self.weight == self.mechanisms.len()
            && model.syndrome_of(self.mechanisms.iter().copied()).is_zero()
            && !flips.is_zero()
            && flips.iter_ones().collect::<Vec<_>>() == self.observables_flipped
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{{\n  \"weight\": {},\n  \"mechanisms\": [", self.weight);
        for (i, m) in self.mechanisms.iter().enumerate() {
            let _ = write!(s, "{}{m}", if i > 0 { ", " } else { "" });
        }
        s.push_str("],\n  \"observables\": [");
        for (i, o) in self.observables_flipped.iter().enumerate() {
            let _ = write!(s, "{}{o}", if i > 0 { ", " } else { "" });
        }
        s.push_str("]\n}\n");
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceSearch {
    /// Prior assignments tried per mechanism; the first is uniform.
    pub passes: usize,
    /// Only every `stride`-th mechanism is used as a seed.
    pub stride: usize,
    pub bp: BpConfig,
    pub osd: OsdConfig,
    pub seed: u64,
}

impl Default for DistanceSearch {
    fn default() -> Self {
        Self {
            passes: 1,
            stride: 1,
            bp: BpConfig::default().with_max_iterations(50),
            osd: OsdConfig::default(),
            seed: 0,
        }
    }
}

/// Upper bound on the circuit distance: forces each mechanism on, decodes
/// its syndrome without it and keeps the lightest undetectable logical.
///
/// Besides the plain decode, each observable in turn is appended as an extra
/// check whose target value is flipped, steering the decoder towards a
/// logically inequivalent correction.
pub fn search_circuit_distance(
    model: &DetectorErrorModel,
    search: &DistanceSearch,
) -> Result<DistanceWitness, AnalysisError> {
    if model.observable_count == 0 {
        return Err(AnalysisError::InvalidInput("model has no observables".into()));
    }
    let n = model.mechanism_count();
    let d = model.detector_count;
    let mut augmented = model.clone();
    augmented.detector_count = d + model.observable_count;
    for c in augmented.columns.iter_mut() {
        let extra: Vec<usize> = c.observables.iter().map(|&l| d + l).collect();
        c.detectors.extend(extra);
    }
    let targets: Vec<Option<usize>> = std::iter::once(None)
        .chain((0..model.observable_count).map(Some))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..search.passes.max(1))
        .flat_map(|pass| (0..n).step_by(search.stride.max(1)).map(move |i| (pass, i)))
        .collect();
    let best = jobs
        .into_par_iter()
        .flat_map_iter(|(pass, i)| {
            let mut priors = vec![0.01; n];
            if pass > 0 {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(search.seed ^ (pass as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                rng.set_stream(i as u64);
                for p in priors.iter_mut() {
                    *p = 10f64.powf(rng.gen_range(-3.0..-1.0));
                }
            }
            priors[i] = 1e-300;
            let plain = BpOsdDecoder::<f64>::with_priors(model, &priors, search.bp, search.osd);
            let steered = BpOsdDecoder::<f64>::with_priors(&augmented, &priors, search.bp, search.osd);
            targets
                .iter()
                .filter_map(|&target| {
                    let estimate = match target {
                        None => plain.decode(&model.syndrome_of([i])).mechanism_estimate,
                        Some(l) => {
                            let mut s = augmented.syndrome_of([i]);
                            s.flip(d + l);
                            steered.decode(&s).mechanism_estimate
                        }
                    };
                    witness_from(model, estimate, i)
                })
                .collect::<Vec<_>>()
        })
        .min_by(|a, b| a.weight.cmp(&b.weight).then_with(|| a.mechanisms.cmp(&b.mechanisms)));
    best.ok_or(AnalysisError::NoWitness)
}

fn witness_from(model: &DetectorErrorModel, mut support: Vec<usize>, forced: usize) -> Option<DistanceWitness> {
    match support.binary_search(&forced) {
        Ok(k) => {
            support.remove(k);
        }
        Err(k) => support.insert(k, forced),
    }
    let flips = model.observables_of(support.iter().copied());
    (model.syndrome_of(support.iter().copied()).is_zero() && !flips.is_zero()).then(|| DistanceWitness {
        weight: support.len(),
        mechanisms: support,
        observables_flipped: flips.iter_ones().collect(),
    })
}

/// One `(code, circuit, p, p_ebit)` cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub code: String,
    pub circuit: CircuitKind,
    pub p: f64,
    pub p_ebit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub shots: u64,
    /// Stop a cell after the chunk in which this many failures accumulated.
    pub max_fails: Option<u64>,
    pub chunk: u64,
    pub seed: u64,
    pub bp: BpConfig,
    pub osd: OsdConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            shots: 10_000,
            max_fails: None,
            chunk: 1024,
            seed: 0,
            bp: BpConfig::default(),
            osd: OsdConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub code: String,
    pub circuit: String,
    pub p: f64,
    pub p_ebit: f64,
    pub seed: u64,
    pub result: Result<LerEstimate<f64>, String>,
}

pub const CSV_HEADER: &str = "code,circuit,p,p_ebit,shots,fails,ler,ler_lo,ler_hi,seed";

impl SweepRow {
    /// Failed cells keep the schema: zero counts, the message in `ler`.
    pub fn to_csv(&self) -> String {
        let head = format!("{},{},{},{}", csv_field(&self.code), self.circuit, self.p, self.p_ebit);
        match &self.result {
            Ok(e) => format!(
                "{head},{},{},{},{},{},{}",
                e.shots, e.fails, e.point, e.interval_low, e.interval_high, self.seed
            ),
            Err(msg) => format!("{head},0,0,{},,,{}", csv_field(&format!("error: {msg}")), self.seed),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Stable 64-bit seed for a named cell under a root seed.
pub fn child_seed(root: u64, cell: &str) -> u64 {
    // FNV-1a followed by a splitmix finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ root;
    for b in cell.bytes().chain(root.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^= h >> 30;
    h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h ^= h >> 27;
    h = h.wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl SweepCell {
    pub fn id(&self) -> String {
        format!("{}|{}|{}|{}", self.code, self.circuit, self.p, self.p_ebit)
    }

    /// Builds the circuit and its model.
    pub fn model(&self) -> Result<(SignatureTable, DetectorErrorModel), String> {
        let code = self
            .code
            .parse::<CodeDescriptor>()
            .map_err(|e| e.to_string())?
            .build()
            .map_err(|e| e.to_string())?;
        let noise = NoiseParams::new(self.p, self.p_ebit, code.is_bb()).map_err(|e| e.to_string())?;
        let prog = match self.circuit {
            CircuitKind::NonlocalCnot => build_nonlocal_cnot_experiment(&code, noise),
            CircuitKind::Teleport => build_teleportation_experiment(&code, noise),
        }
        .map_err(|e| e.to_string())?;
        let table = SignatureTable::build(&prog);
        let model = dem_from_table(&table);
        Ok((table, model))
    }
}

/// Samples and decodes one cell in fixed chunks.
pub fn run_cell(cell: &SweepCell, cfg: &SweepConfig) -> SweepRow {
    let seed = child_seed(cfg.seed, &cell.id());
    let result = cell.model().and_then(|(table, model)| {
        let dec = BpOsdDecoder::<f64>::new(&model, cfg.bp, cfg.osd);
        let (mut shots, mut fails) = (0u64, 0u64);
        while shots < cfg.shots {
            let count = cfg.chunk.max(1).min(cfg.shots - shots);
            let batch = table.sample_range(shots, count as usize, seed);
            fails += dec.decode_batch(&batch).0 as u64;
            shots += count;
            if cfg.max_fails.is_some_and(|m| fails >= m) {
                break;
            }
        }
        ler_interval(fails, shots.max(1)).map_err(|e| e.to_string())
    });
    SweepRow {
        code: cell.code.clone(),
        circuit: cell.circuit.to_string(),
        p: cell.p,
        p_ebit: cell.p_ebit,
        seed,
        result,
    }
}

pub fn sweep(cells: &[SweepCell], cfg: &SweepConfig) -> Vec<SweepRow> {
    cells.par_iter().map(|c| run_cell(c, cfg)).collect()
}

/// Cartesian product of codes, p values and ebit ratios.
pub fn grid(codes: &[&str], circuit: CircuitKind, ps: &[f64], ebit_ratios: &[f64]) -> Vec<SweepCell> {
    let mut cells = Vec::new();
    for code in codes {
        for &r in ebit_ratios {
            for &p in ps {
                cells.push(SweepCell {
                    code: code.to_string(),
                    circuit,
                    p,
                    p_ebit: (r * p).min(1.0),
                });
            }
        }
    }
    cells
}

pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}
