//! Supervised diagnosis model: symptom state in `[-1, 1]^N_S` to a distribution over diseases.
//!
//! Inputs use `+1` for an observed present symptom, `-1` for observed absent
//! and `0` for unobserved; at the end of a dialogue unobserved coordinates may
//! instead carry soft VAE imputations `2p - 1`.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::kb::PatientRecord;
use crate::nn::{clip_grad_norm, is_finite, Activation, Adam, Mlp};
use crate::vae::{random_mask, ObservationSet, PartialVae};

const CHECKPOINT_KIND: &str = "diagnoser";
/// Mixed into the softmax so no entry is exactly 0 or 1.
const PROB_EPS: f64 = 1e-9;

/// Probabilities over diseases; strictly inside (0, 1) and summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisDistribution(Vec<f64>);

impl DiagnosisDistribution {
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exp.iter().sum();
        let k = logits.len() as f64;
        DiagnosisDistribution(exp.iter().map(|e| e / total * (1.0 - k * PROB_EPS) + PROB_EPS).collect())
    }

    /// Wraps raw probabilities, e.g. from a stub model. Entries must be positive and sum to 1.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|&p| !(p > 0.0 && p <= 1.0)) || (total - 1.0).abs() > 1e-6 {
            return Err(Error::Usage(format!("not a probability distribution: {probs:?}")));
        }
        Ok(DiagnosisDistribution(probs))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Disease indices sorted by decreasing probability (stable on ties).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[b].total_cmp(&self.0[a]).then(a.cmp(&b)));
        idx
    }

    /// 1-based rank of `disease` under [`ranking`](Self::ranking).
    pub fn rank_of(&self, disease: usize) -> usize {
        self.ranking().iter().position(|&d| d == disease).map(|r| r + 1).unwrap_or(usize::MAX)
    }
}

/// Anything that maps a state vector to a disease distribution.
pub trait Diagnose {
    fn num_symptoms(&self) -> usize;
    fn predict(&self, state: &[f64]) -> Result<DiagnosisDistribution>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoserConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_mask: f64,
    pub max_mask: f64,
    /// Share of training samples shown with every symptom observed.
    pub full_observation_prob: f64,
    pub seed: u64,
}

impl Default for DiagnoserConfig {
    fn default() -> Self {
        DiagnoserConfig {
            hidden: vec![256, 256],
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-3,
            min_mask: 0.1,
            max_mask: 0.9,
            full_observation_prob: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnoserEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnoser {
    pub symptoms: Vec<String>,
    pub diseases: Vec<String>,
    pub net: Mlp,
}

impl Diagnoser {
    pub fn new<R: Rng + ?Sized>(symptoms: Vec<String>, diseases: Vec<String>, hidden: &[usize], rng: &mut R) -> Self {
        let mut sizes = vec![symptoms.len()];
        sizes.extend_from_slice(hidden);
        sizes.push(diseases.len());
        let net = Mlp::new(&sizes, Activation::Relu, rng);
        Diagnoser { symptoms, diseases, net }
    }

    pub fn num_diseases(&self) -> usize {
        self.diseases.len()
    }

    /// Row-wise distributions for a batch of state vectors.
    pub fn predict_batch(&self, states: &Array2<f64>) -> Vec<DiagnosisDistribution> {
        let logits = self.net.forward(states.view());
        logits
            .rows()
            .into_iter()
            .map(|row| DiagnosisDistribution::from_logits(row.as_slice().expect("contiguous row")))
            .collect()
    }

    /// Final diagnosis: VAE-impute unobserved symptoms, then predict.
    pub fn diagnose_final(&self, obs: &ObservationSet, vae: &PartialVae) -> Result<DiagnosisDistribution> {
        self.check_compatible(vae)?;
        self.predict(&vae.impute(obs))
    }

    pub fn check_compatible(&self, vae: &PartialVae) -> Result<()> {
        if self.symptoms != vae.symptoms {
            return Err(Error::Compatibility(
                "diagnoser and VAE were trained on different symptom orderings".into(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        checkpoint::fingerprint(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let d: Diagnoser = checkpoint::load(path, CHECKPOINT_KIND)?;
        if d.net.inputs() != d.symptoms.len() || d.net.outputs() != d.diseases.len() {
            return Err(Error::Compatibility(format!("{}: inconsistent diagnoser dimensions", path.display())));
        }
        Ok(d)
    }
}

impl Diagnose for Diagnoser {
    fn num_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    fn predict(&self, state: &[f64]) -> Result<DiagnosisDistribution> {
        if state.len() != self.symptoms.len() {
            return Err(Error::Usage(format!(
                "state has {} coordinates, diagnoser expects {}",
                state.len(),
                self.symptoms.len()
            )));
        }
        let input = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        Ok(self.predict_batch(&input).remove(0))
    }
}

/// `±1` encoding of a record restricted to `observed`; everything else 0.
pub fn encode_observed(record: &PatientRecord, observed: &[usize], n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &i in observed {
        x[i] = if record.has(i) { 1.0 } else { -1.0 };
    }
    x
}

/// Complete `±1` encoding of a record.
pub fn encode_full(record: &PatientRecord, n: usize) -> Vec<f64> {
    (0..n).map(|i| if record.has(i) { 1.0 } else { -1.0 }).collect()
}

fn training_input<R: Rng + ?Sized>(record: &PatientRecord, n: usize, config: &DiagnoserConfig, rng: &mut R) -> Vec<f64> {
    if rng.gen::<f64>() < config.full_observation_prob {
        encode_full(record, n)
    } else {
        encode_observed(record, &random_mask(n, config.min_mask, config.max_mask, rng), n)
    }
}

/// Top-1 accuracy over fixed-seed masked inputs drawn like the training inputs.
pub fn masked_accuracy(diag: &Diagnoser, records: &[PatientRecord], config: &DiagnoserConfig, seed: u64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let n = diag.num_symptoms();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = records.iter().map(|r| training_input(r, n, config, &mut rng)).collect();
    accuracy_on(diag, records, &inputs)
}

/// Top-1 accuracy of `diag` on pre-built input rows.
pub fn accuracy_on(diag: &Diagnoser, records: &[PatientRecord], inputs: &[Vec<f64>]) -> f64 {
    let n = diag.num_symptoms();
    let mut hits = 0usize;
    for (chunk_r, chunk_x) in records.chunks(1024).zip(inputs.chunks(1024)) {
        let flat: Vec<f64> = chunk_x.iter().flatten().copied().collect();
        let x = Array2::from_shape_vec((chunk_x.len(), n), flat).expect("input batch");
        for (r, d) in chunk_r.iter().zip(diag.predict_batch(&x)) {
            hits += (d.argmax() == r.disease) as usize;
        }
    }
    hits as f64 / records.len() as f64
}

/// Cross-entropy training on masked `±1` encodings of the records.
pub fn train_diagnoser(
    symptoms: Vec<String>,
    diseases: Vec<String>,
    train: &[PatientRecord],
    valid: &[PatientRecord],
    config: &DiagnoserConfig,
) -> Result<(Diagnoser, Vec<DiagnoserEpoch>)> {
    if train.is_empty() {
        return Err(Error::Usage("diagnoser training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut diag = Diagnoser::new(symptoms, diseases, &config.hidden, &mut rng);
    let n = diag.num_symptoms();
    let k = diag.num_diseases();
    let mut adam = Adam::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, n));
            for (row, &i) in chunk.iter().enumerate() {
                let input = training_input(&train[i], n, config, &mut rng);
                x.row_mut(row).assign(&ndarray::ArrayView1::from(&input));
            }
            let (logits, trace) = diag.net.forward_traced(x.view());
            let mut grad = Array2::zeros((b, k));
            let mut loss = 0.0;
            for (row, &i) in chunk.iter().enumerate() {
                let l = logits.row(row);
                let max = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + l.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                let y = train[i].disease;
                loss += lse - l[y];
                for c in 0..k {
                    grad[[row, c]] = ((l[c] - lse).exp() - (c == y) as u8 as f64) / b as f64;
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("diagnoser epoch {epoch}: loss {loss}")));
            }
            total += loss;
            let mut grads = diag.net.zeros_like();
            diag.net.backward(&trace, grad, &mut grads);
            if !is_finite(&grads.tensors()) {
                return Err(Error::Divergence(format!("diagnoser epoch {epoch}: non-finite gradient")));
            }
            clip_grad_norm(grads.tensors_mut(), 5.0);
            adam.step(config.learning_rate, diag.net.tensors_mut(), grads.tensors());
        }
        let valid_accuracy = masked_accuracy(&diag, valid, config, config.seed ^ 0xacc);
        let entry = DiagnoserEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            valid_accuracy,
        };
        info!(epoch, train_loss = entry.train_loss, valid_accuracy, "diagnoser epoch");
        log.push(entry);
    }
    Ok((diag, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{generate_dataset, KnowledgeBase};

    #[test]
    fn distribution_is_normalised_and_interior() {
        let d = DiagnosisDistribution::from_logits(&[1000.0, -1000.0, 0.0]);
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.probs().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(d.argmax(), 0);
        // Both small entries collapse to the floor; the tie keeps index order.
        assert_eq!(d.ranking(), vec![0, 1, 2]);
        assert_eq!(DiagnosisDistribution::from_logits(&[3.0, -2.0, 0.0]).ranking(), vec![0, 2, 1]);
        let tie = DiagnosisDistribution::from_logits(&[0.0, 0.0]);
        assert_eq!(tie.argmax(), 0);
    }

    #[test]
    fn predict_rejects_wrong_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Diagnoser::new(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], &[4], &mut rng);
        assert!(matches!(d.predict(&[0.0]), Err(Error::Usage(_))));
        let p = d.predict(&[1.0, -1.0]).unwrap();
        assert!((p.probs().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn tied_unobserved_weights_are_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = Diagnoser::new((0..4).map(|i| format!("s{i}")).collect(), vec!["x".into(), "y".into()], &[5], &mut rng);
        let row1 = d.net.layers[0].weight.row(1).to_owned();
        d.net.layers[0].weight.row_mut(2).assign(&row1);
        let a = d.predict(&[1.0, 0.0, 0.5, -1.0]).unwrap();
        let b = d.predict(&[1.0, 0.5, 0.0, -1.0]).unwrap();
        let c = d.predict(&[1.0, 0.0, 0.0, -1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(c, d.predict(&[1.0, 0.0, 0.0, -1.0]).unwrap());
    }

    #[test]
    fn separable_kb_is_learned() {
        let kb = KnowledgeBase::new([("a", vec![("s", 1.0), ("t", 0.5)]), ("b", vec![("t", 1.0)])]).unwrap();
        let data = generate_dataset(&kb, 2000, 200, 0, 3).unwrap();
        let config = DiagnoserConfig { hidden: vec![16, 16], epochs: 10, batch_size: 64, ..DiagnoserConfig::default() };
        let (d, log) = train_diagnoser(kb.symptoms().to_vec(), kb.diseases().to_vec(), &data.train, &data.valid, &config).unwrap();
        let s = kb.symptom_index("s").unwrap();
        let mut x = vec![0.0; 2];
        x[s] = 1.0;
        assert!(d.predict(&x).unwrap().probs()[0] > 0.9);
        assert!(log.last().unwrap().valid_accuracy > 0.5);
    }

    #[test]
    fn symptom_order_mismatch_is_incompatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Diagnoser::new(vec!["a".into(), "b".into()], vec!["x".into(), "y".into()], &[4], &mut rng);
        let vae = PartialVae::new(vec!["b".into(), "a".into()], &crate::vae::VaeConfig::default(), &mut rng);
        assert!(matches!(d.diagnose_final(&ObservationSet::new(), &vae), Err(Error::Compatibility(_))));
    }
}
