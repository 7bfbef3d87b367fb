//! Detector error models: distinct fault signatures with merged priors.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::circuit::CircuitProgram;
use crate::linalg::BitVector;
use crate::sim::{FlipSignature, ShotBatch, SignatureTable};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DemError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Columns are error mechanisms; each flips a set of detectors and
/// observables with an independent prior probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorErrorModel {
    pub detector_count: usize,
    pub observable_count: usize,
    pub columns: Vec<FlipSignature>,
    pub priors: Vec<f64>,
}

/// Probability that exactly one of two independent events happens.
pub fn xor_probability(p: f64, q: f64) -> f64 {
    p + q - 2.0 * p * q
}

impl DetectorErrorModel {
    pub fn new(detector_count: usize, observable_count: usize) -> Self {
        Self {
            detector_count,
            observable_count,
            columns: Vec::new(),
            priors: Vec::new(),
        }
    }

    pub fn mechanism_count(&self) -> usize {
        self.columns.len()
    }

    /// Detector rows as lists of mechanism indices.
    pub fn detector_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.detector_count];
        for (j, c) in self.columns.iter().enumerate() {
            for &d in &c.detectors {
                rows[d].push(j);
            }
        }
        rows
    }

    pub fn syndrome_of<I: IntoIterator<Item = usize>>(&self, mechanisms: I) -> BitVector {
        let mut s = BitVector::zeros(self.detector_count);
        for j in mechanisms {
            for &d in &self.columns[j].detectors {
                s.flip(d);
            }
        }
        s
    }

    pub fn observables_of<I: IntoIterator<Item = usize>>(&self, mechanisms: I) -> BitVector {
        let mut o = BitVector::zeros(self.observable_count);
        for j in mechanisms {
            for &l in &self.columns[j].observables {
                o.flip(l);
            }
        }
        o
    }

    /// Adds a mechanism, merging it into an existing identical column.
    fn absorb(&mut self, index: &mut HashMap<FlipSignature, usize>, sig: &FlipSignature, p: f64) {
        if p <= 0.0 || sig.is_empty() {
            return;
        }
        match index.get(sig) {
            Some(&j) => self.priors[j] = xor_probability(self.priors[j], p),
            None => {
                index.insert(sig.clone(), self.columns.len());
                self.columns.push(sig.clone());
                self.priors.push(p);
            }
        }
    }
}

/// Every channel component becomes a mechanism; identical signatures merge.
pub fn extract_dem(program: &CircuitProgram) -> DetectorErrorModel {
    dem_from_table(&SignatureTable::build(program))
}

pub fn dem_from_table(table: &SignatureTable) -> DetectorErrorModel {
    let mut model = DetectorErrorModel::new(table.detector_count, table.observable_count);
    let mut index = HashMap::new();
    for (p, sig) in table.mechanisms() {
        model.absorb(&mut index, sig, p);
    }
    model
}

/// Independent Bernoulli draw per mechanism; shot `s` uses stream `s`.
pub fn sample_from_dem(model: &DetectorErrorModel, shots: usize, seed: u64) -> ShotBatch {
    let mut batch = ShotBatch::zeros(shots, model.detector_count, model.observable_count);
    for s in 0..shots {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut fired = Vec::new();
        for (j, &p) in model.priors.iter().enumerate() {
            if rng.gen::<f64>() < p {
                fired.push(j);
            }
        }
        for d in model.syndrome_of(fired.iter().copied()).iter_ones() {
            batch.detector_bits.set(s, d, true);
        }
        for l in model.observables_of(fired).iter_ones() {
            batch.observable_bits.set(s, l, true);
        }
    }
    batch
}

pub fn serialize_dem(model: &DetectorErrorModel) -> String {
    let mut out = format!(
        "dem detectors={} observables={}\n",
        model.detector_count, model.observable_count
    );
    for (c, p) in model.columns.iter().zip(&model.priors) {
        let _ = write!(out, "error({p})");
        for d in &c.detectors {
            let _ = write!(out, " D{d}");
        }
        for l in &c.observables {
            let _ = write!(out, " L{l}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_dem(text: &str) -> Result<DetectorErrorModel, DemError> {
    let mut model: Option<DetectorErrorModel> = None;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let err = |reason: String| DemError::Parse { line, reason };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let head = tokens.next().expect("nonempty line");
        if head == "dem" {
            if model.is_some() {
                return Err(err("duplicate header".into()));
            }
            let (mut d, mut o) = (None, None);
            for kv in tokens {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got `{kv}`")))?;
                let v: usize = v.parse().map_err(|_| err(format!("bad count `{v}`")))?;
                match k {
                    "detectors" => d = Some(v),
                    "observables" => o = Some(v),
                    _ => return Err(err(format!("unknown header key `{k}`"))),
                }
            }
            let (d, o) = d
                .zip(o)
                .ok_or_else(|| err("header needs detectors and observables".into()))?;
            model = Some(DetectorErrorModel::new(d, o));
            continue;
        }
        let m = model.as_mut().ok_or_else(|| err("missing `dem` header".into()))?;
        let p: f64 = head
            .strip_prefix("error(")
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| err(format!("expected error(<p>), got `{head}`")))?
            .parse()
            .map_err(|_| err("bad probability".into()))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(err(format!("probability {p} outside [0, 1]")));
        }
        let mut sig = FlipSignature::default();
        for t in tokens {
            let (kind, idx) = t.split_at(1);
            let idx: usize = idx.parse().map_err(|_| err(format!("bad target `{t}`")))?;
            match kind {
                "D" if idx < m.detector_count => sig.detectors.push(idx),
                "L" if idx < m.observable_count => sig.observables.push(idx),
                "D" | "L" => return Err(err(format!("target `{t}` out of range"))),
                _ => return Err(err(format!("unknown target `{t}`"))),
            }
        }
        m.columns.push(sig);
        m.priors.push(p);
    }
    model.ok_or(DemError::Parse {
        line: 0,
        reason: "empty model".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{build_nonlocal_cnot_experiment, parse, NoiseParams};
    use crate::codes::{build_bb, build_rotated_sc, BbParams};
    use crate::sim::{propagate, PauliEvent};
    use std::collections::HashSet;

    #[test]
    fn single_channel_model() {
        let prog = parse("X_ERROR(0.1) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        let m = extract_dem(&prog);
        assert_eq!(m.detector_count, 1);
        assert_eq!(m.mechanism_count(), 1);
        assert_eq!(m.priors, vec![0.1]);
    }

    #[test]
    fn identical_mechanisms_merge() {
        let prog = parse("X_ERROR(0.1) 0\nX_ERROR(0.1) 0\nZ_ERROR(0.2) 0\nM 0\nDETECTOR rec[-1]\n").unwrap();
        let m = extract_dem(&prog);
        assert_eq!(m.mechanism_count(), 1);
        assert!(serialize_dem(&m).contains("error(0.18) D0"));
    }

    #[test]
    fn parse_simple_line() {
        let m = parse_dem("dem detectors=1 observables=1\nerror(0.1) D0 L0\n").unwrap();
        assert_eq!(m.columns[0].detectors, vec![0]);
        assert_eq!(m.columns[0].observables, vec![0]);
        assert_eq!(m.priors[0], 0.1);
        assert!(matches!(
            parse_dem("error(0.1) D0\n"),
            Err(DemError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_dem("dem detectors=1 observables=0\nerror(0.1) D3\n"),
            Err(DemError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn bb18_model_round_trips_and_is_deduplicated() {
        let code = build_bb(&BbParams::bb18()).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, NoiseParams::new(0.001, 0.001, true).unwrap()).unwrap();
        let m = extract_dem(&prog);
        assert_eq!(m.detector_count, 144);
        let text = serialize_dem(&m);
        assert_eq!(parse_dem(&text).unwrap(), m);
        let distinct: HashSet<&FlipSignature> = m.columns.iter().collect();
        assert_eq!(distinct.len(), m.mechanism_count());
        assert!(m.priors.iter().all(|&p| p > 0.0 && p <= 0.5));
        assert!(m.columns.iter().all(|c| !c.is_empty()));
    }

    #[test]
    fn reinjection_reproduces_columns() {
        let code = build_rotated_sc(3).unwrap();
        let prog = build_nonlocal_cnot_experiment(&code, NoiseParams::new(0.01, 0.01, false).unwrap()).unwrap();
        let table = SignatureTable::build(&prog);
        let m = dem_from_table(&table);
        let cols: HashSet<&FlipSignature> = m.columns.iter().collect();
        for ch in table.channels.iter().step_by(5) {
            for (paulis, _) in &ch.components {
                let ev = PauliEvent {
                    location: ch.location,
                    component: ch
                        .targets
                        .iter()
                        .zip(paulis)
                        .filter_map(|(&q, p)| p.map(|p| (q, p)))
                        .collect(),
                    prob: ch.component_prob(),
                };
                let sig = propagate(&prog, &ev).unwrap();
                assert!(sig.is_empty() || cols.contains(&sig));
            }
        }
    }

    #[test]
    fn dem_sampling_basics() {
        let mut m = DetectorErrorModel::new(1, 0);
        m.columns.push(FlipSignature {
            detectors: vec![0],
            observables: vec![],
        });
        m.priors.push(0.1);
        let shots = 100_000;
        let b = sample_from_dem(&m, shots, 7);
        let ones = (0..shots).filter(|&s| b.detector_bits.get(s, 0)).count() as f64;
        assert!((ones - 10_000.0).abs() < 3.0 * (shots as f64 * 0.09).sqrt());
        m.priors[0] = 0.0;
        assert!(sample_from_dem(&m, 1000, 7).is_all_zero());
    }
}
