//! Belief propagation with ordered-statistics post-processing.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::dem::DetectorErrorModel;
use crate::linalg::{BitMatrix, BitVector};
use crate::sim::ShotBatch;
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BpVariant {
    ProductSum,
    MinSum { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BpSchedule {
    Parallel,
    Serial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BpConfig {
    pub max_iterations: usize,
    pub variant: BpVariant,
    pub schedule: BpSchedule,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            variant: BpVariant::ProductSum,
            schedule: BpSchedule::Parallel,
        }
    }
}

impl BpConfig {
    pub fn min_sum() -> Self {
        Self {
            variant: BpVariant::MinSum { scale: 0.625 },
            ..Self::default()
        }
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OsdMode {
    /// Weight-1 flips of every non-pivot column, weight-2 flips within the
    /// first `order` non-pivot columns.
    CombinationSweep,
    /// All `2^order` patterns on the first `order` non-pivot columns.
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OsdConfig {
    pub order: usize,
    pub mode: OsdMode,
}

impl Default for OsdConfig {
    fn default() -> Self {
        Self {
            order: 7,
            mode: OsdMode::CombinationSweep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub mechanism_estimate: Vec<usize>,
    pub predicted_obs_flips: BitVector,
    pub bp_converged: bool,
    pub iterations_used: usize,
}

/// Result of belief propagation alone.
#[derive(Debug, Clone)]
pub struct BpResult<T> {
    /// Posterior flip probabilities.
    pub posteriors: Vec<T>,
    pub llrs: Vec<T>,
    pub hard_decision: Vec<usize>,
    pub converged: bool,
    pub iterations: usize,
}

const LLR_CLAMP: f64 = 30.0;

/// Tanner graph of a detector error model plus channel LLRs.
#[derive(Debug, Clone)]
pub struct BpOsdDecoder<T: Real> {
    n_checks: usize,
    n_vars: usize,
    // Edges grouped by check; `check_start[c]..check_start[c+1]`.
    check_start: Vec<usize>,
    edge_var: Vec<usize>,
    // Edge indices grouped by variable.
    var_start: Vec<usize>,
    var_edges: Vec<usize>,
    channel: Vec<T>,
    weights: Vec<f64>,
    obs: Vec<Vec<usize>>,
    observable_count: usize,
    pub bp: BpConfig,
    pub osd: OsdConfig,
}

fn clamp<T: Real>(v: T) -> T {
    let c = T::from_f64(LLR_CLAMP).expect("representable clamp");
    if v > c {
        c
    } else if v < -c {
        -c
    } else {
        v
    }
}

fn prior_weight(p: f64) -> f64 {
    let p = p.clamp(1e-300, 1.0 - 1e-16);
    ((1.0 - p) / p).ln().clamp(-LLR_CLAMP, LLR_CLAMP)
}

impl<T: Real> BpOsdDecoder<T> {
    pub fn new(model: &DetectorErrorModel, bp: BpConfig, osd: OsdConfig) -> Self {
        Self::with_priors(model, &model.priors, bp, osd)
    }

    /// Uses `priors` in place of the model's own.
    pub fn with_priors(model: &DetectorErrorModel, priors: &[f64], bp: BpConfig, osd: OsdConfig) -> Self {
        assert_eq!(priors.len(), model.mechanism_count());
        let rows = model.detector_rows();
        let mut check_start = vec![0];
        let mut edge_var = Vec::new();
        for r in &rows {
            edge_var.extend_from_slice(r);
            check_start.push(edge_var.len());
        }
        let n_vars = model.mechanism_count();
        let mut per_var: Vec<Vec<usize>> = vec![Vec::new(); n_vars];
        for (e, &v) in edge_var.iter().enumerate() {
            per_var[v].push(e);
        }
        let mut var_start = vec![0];
        let mut var_edges = Vec::new();
        for v in per_var {
            var_edges.extend(v);
            var_start.push(var_edges.len());
        }
        let weights: Vec<f64> = priors.iter().map(|&p| prior_weight(p)).collect();
        let channel = weights
            .iter()
            .map(|&w| T::from_f64(w).expect("representable llr"))
            .collect();
        Self {
            n_checks: model.detector_count,
            n_vars,
            check_start,
            edge_var,
            var_start,
            var_edges,
            channel,
            weights,
            obs: model.columns.iter().map(|c| c.observables.clone()).collect(),
            observable_count: model.observable_count,
            bp,
            osd,
        }
    }

    pub fn mechanism_count(&self) -> usize {
        self.n_vars
    }

    fn syndrome_satisfied(&self, hard: &[bool], syndrome: &BitVector) -> bool {
        (0..self.n_checks).all(|c| {
            let parity = self.edge_var[self.check_start[c]..self.check_start[c + 1]]
                .iter()
                .filter(|&&v| hard[v])
                .count()
                % 2
                == 1;
            parity == syndrome.get(c)
        })
    }

    /// Check-to-variable messages for check `c` from incoming `q`.
    fn check_update(&self, c: usize, syndrome_bit: bool, q: &[T], r: &mut [T], scratch: &mut Vec<T>) {
        let (lo, hi) = (self.check_start[c], self.check_start[c + 1]);
        if lo == hi {
            return;
        }
        let flip = if syndrome_bit { -T::one() } else { T::one() };
        match self.bp.variant {
            BpVariant::ProductSum => {
                let half = T::from_f64(0.5).unwrap();
                let two = T::from_f64(2.0).unwrap();
                let limit = T::from_f64(1.0 - 1e-15).unwrap();
                // scratch holds tanh per edge, then prefix products.
                let k = hi - lo;
                scratch.clear();
                scratch.extend(q[lo..hi].iter().map(|&m| (m * half).tanh()));
                let mut acc = flip;
                for i in 0..k {
                    let t = scratch[i];
                    scratch.push(acc);
                    acc = acc * t;
                }
                let mut suffix = T::one();
                for i in (0..k).rev() {
                    let prod = (scratch[k + i] * suffix).max(-limit).min(limit);
                    suffix = suffix * scratch[i];
                    r[lo + i] = clamp(two * prod.atanh());
                }
            }
            BpVariant::MinSum { scale } => {
                let scale = T::from_f64(scale).unwrap();
                let mut sign = flip;
                let (mut min1, mut min2, mut arg) = (T::infinity(), T::infinity(), usize::MAX);
                for (i, &m) in q[lo..hi].iter().enumerate() {
                    if m < T::zero() {
                        sign = -sign;
                    }
                    let a = m.abs();
                    if a < min1 {
                        min2 = min1;
                        min1 = a;
                        arg = i;
                    } else if a < min2 {
                        min2 = a;
                    }
                }
                for (i, &m) in q[lo..hi].iter().enumerate() {
                    let s = if m < T::zero() { -sign } else { sign };
                    let mag = if i == arg { min2 } else { min1 };
                    r[lo + i] = clamp(s * scale * mag);
                }
            }
        }
    }

    pub fn bp_decode(&self, syndrome: &BitVector) -> BpResult<T> {
        assert_eq!(
            syndrome.len(),
            self.n_checks,
            "syndrome length must equal detector count"
        );
        let edges = self.edge_var.len();
        let mut q: Vec<T> = self.edge_var.iter().map(|&v| self.channel[v]).collect();
        let mut r: Vec<T> = vec![T::zero(); edges];
        let mut llrs = self.channel.clone();
        let mut hard: Vec<bool> = llrs.iter().map(|&l| l < T::zero()).collect();
        let mut scratch = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=self.bp.max_iterations {
            iterations = it;
            match self.bp.schedule {
                BpSchedule::Parallel => {
                    for c in 0..self.n_checks {
                        self.check_update(c, syndrome.get(c), &q, &mut r, &mut scratch);
                    }
                    for v in 0..self.n_vars {
                        let es = &self.var_edges[self.var_start[v]..self.var_start[v + 1]];
                        let total = es.iter().fold(self.channel[v], |acc, &e| acc + r[e]);
                        llrs[v] = total;
                        for &e in es {
                            q[e] = clamp(total - r[e]);
                        }
                    }
                }
                BpSchedule::Serial => {
                    for c in 0..self.n_checks {
                        let (lo, hi) = (self.check_start[c], self.check_start[c + 1]);
                        for e in lo..hi {
                            q[e] = clamp(llrs[self.edge_var[e]] - r[e]);
                        }
                        self.check_update(c, syndrome.get(c), &q, &mut r, &mut scratch);
                        for e in lo..hi {
                            llrs[self.edge_var[e]] = q[e] + r[e];
                        }
                    }
                }
            }
            for v in 0..self.n_vars {
                hard[v] = llrs[v] < T::zero();
            }
            if self.syndrome_satisfied(&hard, syndrome) {
                converged = true;
                break;
            }
        }
        let posteriors = llrs.iter().map(|&l| T::one() / (T::one() + l.exp())).collect();
        BpResult {
            posteriors,
            llrs,
            hard_decision: (0..self.n_vars).filter(|&v| hard[v]).collect(),
            converged,
            iterations,
        }
    }

    fn predict(&self, estimate: &[usize]) -> BitVector {
        let mut o = BitVector::zeros(self.observable_count);
        for &j in estimate {
            for &l in &self.obs[j] {
                o.flip(l);
            }
        }
        o
    }

    /// Ordered-statistics search over an information set chosen from the
    /// posterior LLRs; returns a syndrome-consistent estimate.
    pub fn osd_postprocess(&self, llrs: &[T], syndrome: &BitVector) -> Vec<usize> {
        let n = self.n_vars;
        if syndrome.is_zero() {
            return Vec::new();
        }
        // Most likely flipped first; ties by index.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            llrs[a]
                .partial_cmp(&llrs[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut h = BitMatrix::zeros(self.n_checks, n + 1);
        for (pos, &v) in order.iter().enumerate() {
            for &e in &self.var_edges[self.var_start[v]..self.var_start[v + 1]] {
                h.set(self.check_of_edge(e), pos, true);
            }
        }
        for c in syndrome.iter_ones() {
            h.set(c, n, true);
        }
        let pivot_order: Vec<usize> = (0..=n).collect();
        let red = h.row_reduce(&pivot_order);
        assert!(red.pivots.iter().all(|&p| p < n), "syndrome outside the column space");
        let pivots = red.pivots;
        let rank = pivots.len();
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let free: Vec<usize> = (0..n).filter(|&p| !is_pivot[p]).collect();
        let w: Vec<f64> = order.iter().map(|&v| self.weights[v]).collect();

        let mut bits: Vec<bool> = (0..rank).map(|i| red.reduced.get(i, n)).collect();
        // Cost change from toggling pivot row i of the OSD-0 solution.
        let delta: Vec<f64> = (0..rank)
            .map(|i| if bits[i] { -w[pivots[i]] } else { w[pivots[i]] })
            .collect();
        let column = |j: usize| -> Vec<usize> { (0..rank).filter(|&i| red.reduced.get(i, j)).collect() };

        let mut best_gain = 0.0;
        let mut best_flip: Vec<usize> = Vec::new();
        if self.osd.order > 0 && !free.is_empty() {
            let lim = self.osd.order.min(free.len());
            let cols: Vec<Vec<usize>> = free[..lim].iter().map(|&j| column(j)).collect();
            let mut in_col = vec![false; rank];
            match self.osd.mode {
                OsdMode::CombinationSweep => {
                    let mut gain: Vec<f64> = w.clone();
                    for i in 0..rank {
                        for (k, &word) in red.reduced.row_words(i).iter().enumerate() {
                            let mut word = word;
                            while word != 0 {
                                let j = k * 64 + word.trailing_zeros() as usize;
                                word &= word - 1;
                                if j < n {
                                    gain[j] += delta[i];
                                }
                            }
                        }
                    }
                    for &j in &free {
                        if gain[j] < best_gain {
                            best_gain = gain[j];
                            best_flip = vec![j];
                        }
                    }
                    for a in 0..lim {
                        for &i in &cols[a] {
                            in_col[i] = true;
                        }
                        for b in a + 1..lim {
                            let overlap: f64 = cols[b].iter().filter(|&&i| in_col[i]).map(|&i| delta[i]).sum();
                            let g = gain[free[a]] + gain[free[b]] - 2.0 * overlap;
                            if g < best_gain {
                                best_gain = g;
                                best_flip = vec![free[a], free[b]];
                            }
                        }
                        for &i in &cols[a] {
                            in_col[i] = false;
                        }
                    }
                }
                OsdMode::Exhaustive => {
                    for mask in 1u64..(1u64 << lim) {
                        let picked: Vec<usize> = (0..lim).filter(|&k| mask >> k & 1 == 1).collect();
                        let mut g: f64 = picked.iter().map(|&k| w[free[k]]).sum();
                        for &k in &picked {
                            for &i in &cols[k] {
                                in_col[i] = !in_col[i];
                            }
                        }
                        for (i, t) in in_col.iter_mut().enumerate() {
                            if *t {
                                g += delta[i];
                                *t = false;
                            }
                        }
                        if g < best_gain {
                            best_gain = g;
                            best_flip = picked.iter().map(|&k| free[k]).collect();
                        }
                    }
                }
            }
        }

        for &j in &best_flip {
            for i in column(j) {
                bits[i] = !bits[i];
            }
        }
        let mut estimate: Vec<usize> = (0..rank).filter(|&i| bits[i]).map(|i| order[pivots[i]]).collect();
        estimate.extend(best_flip.iter().map(|&j| order[j]));
        estimate.sort_unstable();
        estimate
    }

    fn check_of_edge(&self, e: usize) -> usize {
        self.check_start.partition_point(|&s| s <= e) - 1
    }

    pub fn decode(&self, syndrome: &BitVector) -> DecodeOutcome {
        if syndrome.is_zero() {
            return DecodeOutcome {
                mechanism_estimate: Vec::new(),
                predicted_obs_flips: BitVector::zeros(self.observable_count),
                bp_converged: true,
                iterations_used: 1,
            };
        }
        let bp = self.bp_decode(syndrome);
        let estimate = if bp.converged {
            bp.hard_decision
        } else {
            self.osd_postprocess(&bp.llrs, syndrome)
        };
        DecodeOutcome {
            predicted_obs_flips: self.predict(&estimate),
            mechanism_estimate: estimate,
            bp_converged: bp.converged,
            iterations_used: bp.iterations,
        }
    }

    /// Decodes every shot; a shot fails when any observable is mispredicted.
    pub fn decode_batch(&self, batch: &ShotBatch) -> (usize, Vec<bool>) {
        assert_eq!(
            batch.detector_bits.cols(),
            self.n_checks,
            "batch detector count mismatch"
        );
        const CHUNK: usize = 256;
        let flags: Vec<bool> = (0..batch.shots.div_ceil(CHUNK))
            .into_par_iter()
            .flat_map_iter(|c| {
                let mut cache: HashMap<BitVector, BitVector> = HashMap::new();
                let lo = c * CHUNK;
                let hi = (lo + CHUNK).min(batch.shots);
                (lo..hi)
                    .map(|s| {
                        let syn = batch.detector_bits.row(s);
                        let pred = match cache.get(&syn) {
                            Some(p) => p.clone(),
                            None => {
                                let p = self.decode(&syn).predicted_obs_flips;
                                cache.insert(syn, p.clone());
                                p
                            }
                        };
                        pred != batch.observable_bits.row(s)
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        (flags.iter().filter(|&&f| f).count(), flags)
    }
}

pub fn decode_batch<T: Real>(
    model: &DetectorErrorModel,
    batch: &ShotBatch,
    bp: BpConfig,
    osd: OsdConfig,
) -> (usize, Vec<bool>) {
    BpOsdDecoder::<T>::new(model, bp, osd).decode_batch(batch)
}
