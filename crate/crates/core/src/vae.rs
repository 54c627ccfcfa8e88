//! Product-of-experts VAE over binary symptom vectors.
//!
//! Each observed symptom `i` with value `x_i` is encoded by a shared network
//! from `[x_i, e_i]` (`e_i` a learned embedding) into one diagonal Gaussian
//! expert. Experts and a standard-normal prior multiply into the posterior,
//! so any subset of observations can be conditioned on. The decoder maps a
//! latent vector to independent Bernoulli probabilities for every symptom.

use std::path::Path;

use ndarray::{s, Array2};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::kb::PatientRecord;
use crate::nn::{clip_grad_norm, is_finite, sigmoid, softplus, Activation, Adam, Mlp};

pub const PROB_FLOOR: f64 = 1e-6;
const VARIANCE_FLOOR: f64 = 1e-4;
const CHECKPOINT_KIND: &str = "partial_vae";

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLatent {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl GaussianLatent {
    pub fn standard(dim: usize) -> Self {
        GaussianLatent {
            mean: vec![0.0; dim],
            variance: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Closed-form `KL(self || N(0, I))`.
    pub fn kl_to_standard(&self) -> f64 {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| 0.5 * (v + m * m - 1.0 - v.ln()))
            .sum()
    }
}

/// Product of the prior with every expert; precisions add.
pub fn poe_combine(prior: &GaussianLatent, experts: &[GaussianLatent]) -> GaussianLatent {
    let dim = prior.dim();
    let mut precision: Vec<f64> = prior.variance.iter().map(|v| 1.0 / v).collect();
    let mut weighted: Vec<f64> = prior.mean.iter().zip(&prior.variance).map(|(m, v)| m / v).collect();
    for e in experts {
        assert_eq!(e.dim(), dim, "expert dimension mismatch");
        for k in 0..dim {
            precision[k] += 1.0 / e.variance[k];
            weighted[k] += e.mean[k] / e.variance[k];
        }
    }
    let variance: Vec<f64> = precision.iter().map(|p| 1.0 / p).collect();
    let mean = weighted.iter().zip(&variance).map(|(w, v)| w * v).collect();
    GaussianLatent { mean, variance }
}

/// Observed symptoms: `(symptom index, present)` with unique indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    entries: Vec<(usize, bool)>,
}

impl ObservationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (usize, bool)>) -> Result<Self> {
        let mut set = Self::new();
        for (s, v) in entries {
            set.insert(s, v)?;
        }
        Ok(set)
    }

    /// Observations encoded in a `{+1, 0, -1}` state vector.
    pub fn from_state(state: &[i8]) -> Self {
        ObservationSet {
            entries: state
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0)
                .map(|(i, &v)| (i, v > 0))
                .collect(),
        }
    }

    pub fn insert(&mut self, symptom: usize, present: bool) -> Result<()> {
        if self.contains(symptom) {
            return Err(Error::Usage(format!("symptom {symptom} observed twice")));
        }
        self.entries.push((symptom, present));
        Ok(())
    }

    pub fn contains(&self, symptom: usize) -> bool {
        self.entries.iter().any(|&(s, _)| s == symptom)
    }

    pub fn entries(&self) -> &[(usize, bool)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub hidden: usize,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub min_mask: f64,
    pub max_mask: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 32,
            embedding_dim: 16,
            hidden: 64,
            beta: 1.0,
            epochs: 10,
            batch_size: 256,
            learning_rate: 1e-3,
            min_mask: 0.1,
            max_mask: 0.9,
            seed: 0,
        }
    }
}

/// Per-epoch training log entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialVae {
    pub symptoms: Vec<String>,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub beta: f64,
    pub embeddings: Array2<f64>,
    pub encoder: Mlp,
    pub decoder: Mlp,
    /// Expert for `(symptom, value)` at row `2 * symptom + value`; rebuilt from the weights.
    #[serde(skip)]
    experts: Vec<GaussianLatent>,
}

/// Gradients with the same layout as the trainable parts of [`PartialVae`].
#[derive(Debug, Clone)]
pub struct VaeGrads {
    pub embeddings: Array2<f64>,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl VaeGrads {
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = vec![&self.embeddings];
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = vec![&mut self.embeddings];
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }
}

/// One training example: the complete record and which coordinates the encoder sees.
#[derive(Debug, Clone)]
pub struct MaskedRecord {
    pub full: Vec<f64>,
    pub observed: Vec<usize>,
}

impl PartialVae {
    pub fn new<R: Rng + ?Sized>(symptoms: Vec<String>, config: &VaeConfig, rng: &mut R) -> Self {
        let n = symptoms.len();
        let (l, e, h) = (config.latent_dim, config.embedding_dim, config.hidden);
        let embeddings = Array2::from_shape_simple_fn((n, e), || rng.sample::<f64, _>(StandardNormal) * 0.1);
        let encoder = Mlp::new(&[1 + e, h, h, 2 * l], Activation::Tanh, rng);
        let decoder = Mlp::new(&[l, h, h, n], Activation::Tanh, rng);
        let mut vae = PartialVae {
            symptoms,
            latent_dim: l,
            embedding_dim: e,
            beta: config.beta,
            embeddings,
            encoder,
            decoder,
            experts: Vec::new(),
        };
        vae.refresh_experts();
        vae
    }

    pub fn num_symptoms(&self) -> usize {
        self.symptoms.len()
    }

    fn encoder_inputs(&self) -> Array2<f64> {
        let n = self.num_symptoms();
        let mut x = Array2::zeros((2 * n, 1 + self.embedding_dim));
        for i in 0..n {
            for v in 0..2 {
                let mut row = x.row_mut(2 * i + v);
                row[0] = v as f64;
                row.slice_mut(s![1..]).assign(&self.embeddings.row(i));
            }
        }
        x
    }

    fn split_expert_output(&self, out: &Array2<f64>) -> Vec<GaussianLatent> {
        let l = self.latent_dim;
        out.rows()
            .into_iter()
            .map(|row| GaussianLatent {
                mean: row.slice(s![..l]).to_vec(),
                variance: row.slice(s![l..]).iter().map(|&r| softplus(r) + VARIANCE_FLOOR).collect(),
            })
            .collect()
    }

    /// Recomputes the cached expert table. Call after changing encoder weights or embeddings.
    pub fn refresh_experts(&mut self) {
        let out = self.encoder.forward(self.encoder_inputs().view());
        self.experts = self.split_expert_output(&out);
    }

    /// One Gaussian expert for a symptom value and embedding.
    pub fn encode_expert(&self, present: bool, embedding: &[f64]) -> GaussianLatent {
        assert_eq!(embedding.len(), self.embedding_dim, "embedding length mismatch");
        let mut input = Array2::zeros((1, 1 + self.embedding_dim));
        input[[0, 0]] = if present { 1.0 } else { 0.0 };
        for (k, &v) in embedding.iter().enumerate() {
            input[[0, k + 1]] = v;
        }
        let out = self.encoder.forward(input.view());
        self.split_expert_output(&out).remove(0)
    }

    pub fn expert(&self, symptom: usize, present: bool) -> &GaussianLatent {
        &self.experts[2 * symptom + present as usize]
    }

    pub fn posterior(&self, obs: &ObservationSet) -> GaussianLatent {
        let experts: Vec<GaussianLatent> = obs
            .entries()
            .iter()
            .map(|&(s, v)| self.expert(s, v).clone())
            .collect();
        poe_combine(&GaussianLatent::standard(self.latent_dim), &experts)
    }

    /// Bernoulli probabilities for every symptom, clamped to `[1e-6, 1 - 1e-6]`.
    pub fn decode(&self, z: &[f64]) -> Vec<f64> {
        let input = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("latent row");
        self.decoder
            .forward(input.view())
            .iter()
            .map(|&l| sigmoid(l).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
            .collect()
    }

    /// Batched [`decode`](Self::decode) over rows of `z`.
    pub fn decode_batch(&self, z: &Array2<f64>) -> Array2<f64> {
        self.decoder
            .forward(z.view())
            .mapv(|l| sigmoid(l).clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
    }

    /// `p(x_target = 1 | obs)` decoded at the posterior mean.
    pub fn conditional_prob(&self, obs: &ObservationSet, target: usize) -> Result<f64> {
        if obs.contains(target) {
            return Err(Error::Usage(format!("symptom {target} is already observed")));
        }
        if target >= self.num_symptoms() {
            return Err(Error::Usage(format!("symptom {target} out of range")));
        }
        Ok(self.decode(&self.posterior(obs).mean)[target])
    }

    /// Monte Carlo variant of [`conditional_prob`](Self::conditional_prob) averaging over posterior samples.
    pub fn conditional_prob_sampled<R: Rng + ?Sized>(
        &self,
        obs: &ObservationSet,
        target: usize,
        samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if obs.contains(target) {
            return Err(Error::Usage(format!("symptom {target} is already observed")));
        }
        let post = self.posterior(obs);
        let mut total = 0.0;
        for _ in 0..samples.max(1) {
            let z: Vec<f64> = post
                .mean
                .iter()
                .zip(&post.variance)
                .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            total += self.decode(&z)[target];
        }
        Ok(total / samples.max(1) as f64)
    }

    /// Observed coordinates become exactly `±1`; the rest are `2p - 1` under the posterior mean.
    pub fn impute(&self, obs: &ObservationSet) -> Vec<f64> {
        let probs = self.decode(&self.posterior(obs).mean);
        let mut out: Vec<f64> = probs.iter().map(|p| 2.0 * p - 1.0).collect();
        for &(s, v) in obs.entries() {
            out[s] = if v { 1.0 } else { -1.0 };
        }
        out
    }

    /// Negative ELBO averaged over the batch, with its gradient.
    ///
    /// `noise[b]` is the standard-normal draw for the reparameterised sample of record `b`.
    /// The reconstruction term covers every coordinate of the complete record.
    pub fn elbo_grad(&self, batch: &[MaskedRecord], noise: &Array2<f64>, beta: f64) -> (f64, VaeGrads) {
        let n = self.num_symptoms();
        let l = self.latent_dim;
        let b = batch.len();
        assert_eq!(noise.dim(), (b, l), "noise shape");
        let scale = 1.0 / b as f64;

        let inputs = self.encoder_inputs();
        let (raw, enc_trace) = self.encoder.forward_traced(inputs.view());
        let mu_tab = raw.slice(s![.., ..l]);
        let var_tab = raw.slice(s![.., l..]).mapv(|r| softplus(r) + VARIANCE_FLOOR);

        let mut means = Array2::zeros((b, l));
        let mut vars = Array2::zeros((b, l));
        let mut weighted = Array2::zeros((b, l));
        let mut z = Array2::zeros((b, l));
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(b);
        for (k, rec) in batch.iter().enumerate() {
            let r: Vec<usize> = rec
                .observed
                .iter()
                .map(|&s| 2 * s + (rec.full[s] > 0.5) as usize)
                .collect();
            for j in 0..l {
                let mut prec = 1.0;
                let mut w = 0.0;
                for &row in &r {
                    prec += 1.0 / var_tab[[row, j]];
                    w += mu_tab[[row, j]] / var_tab[[row, j]];
                }
                let v = 1.0 / prec;
                vars[[k, j]] = v;
                weighted[[k, j]] = w;
                means[[k, j]] = w * v;
                z[[k, j]] = w * v + v.sqrt() * noise[[k, j]];
            }
            rows.push(r);
        }

        let (logits, dec_trace) = self.decoder.forward_traced(z.view());
        let mut recon = 0.0;
        let mut g_logits = Array2::zeros((b, n));
        for k in 0..b {
            for i in 0..n {
                let lg = logits[[k, i]];
                let x = batch[k].full[i];
                recon += softplus(lg) - x * lg;
                g_logits[[k, i]] = (sigmoid(lg) - x) * scale;
            }
        }
        let mut kl = 0.0;
        for (m, v) in means.iter().zip(vars.iter()) {
            kl += 0.5 * (v + m * m - 1.0 - v.ln());
        }
        let loss = (recon + beta * kl) * scale;

        let mut grads = VaeGrads {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            encoder: self.encoder.zeros_like(),
            decoder: self.decoder.zeros_like(),
        };
        let g_z = self.decoder.backward(&dec_trace, g_logits, &mut grads.decoder);

        let mut g_raw = Array2::<f64>::zeros(raw.raw_dim());
        for k in 0..b {
            for j in 0..l {
                let (m, v, w) = (means[[k, j]], vars[[k, j]], weighted[[k, j]]);
                let g_m = g_z[[k, j]] + beta * m * scale;
                let g_v = g_z[[k, j]] * noise[[k, j]] / (2.0 * v.sqrt()) + beta * 0.5 * (1.0 - 1.0 / v) * scale;
                let g_w = g_m * v;
                let g_prec = -v * v * (g_v + g_m * w);
                for &row in &rows[k] {
                    let (mu_r, var_r) = (mu_tab[[row, j]], var_tab[[row, j]]);
                    g_raw[[row, j]] += g_w / var_r;
                    g_raw[[row, l + j]] += -(g_w * mu_r + g_prec) / (var_r * var_r);
                }
            }
        }
        // Softplus derivative on the variance head.
        for row in 0..raw.nrows() {
            for j in 0..l {
                g_raw[[row, l + j]] *= sigmoid(raw[[row, l + j]]);
            }
        }
        let g_in = self.encoder.backward(&enc_trace, g_raw, &mut grads.encoder);
        for i in 0..n {
            for v in 0..2 {
                let g = g_in.slice(s![2 * i + v, 1..]);
                let mut dst = grads.embeddings.row_mut(i);
                dst += &g;
            }
        }
        (loss, grads)
    }

    /// Negative ELBO of a single record with one reparameterised sample.
    pub fn elbo<R: Rng + ?Sized>(&self, full: &[f64], observed: &[usize], beta: f64, rng: &mut R) -> f64 {
        let noise = Array2::from_shape_simple_fn((1, self.latent_dim), || rng.sample(StandardNormal));
        let rec = MaskedRecord {
            full: full.to_vec(),
            observed: observed.to_vec(),
        };
        self.elbo_grad(std::slice::from_ref(&rec), &noise, beta).0
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = vec![&self.embeddings];
        t.extend(self.encoder.tensors());
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = vec![&mut self.embeddings];
        t.extend(self.encoder.tensors_mut());
        t.extend(self.decoder.tensors_mut());
        t
    }

    /// Hash of the encoder-side parameters (embeddings and expert network).
    pub fn encoder_fingerprint(&self) -> String {
        checkpoint::fingerprint(&(&self.embeddings, &self.encoder))
    }

    pub fn fingerprint(&self) -> String {
        checkpoint::fingerprint(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, CHECKPOINT_KIND, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut vae: PartialVae = checkpoint::load(path, CHECKPOINT_KIND)?;
        let n = vae.symptoms.len();
        if vae.embeddings.dim() != (n, vae.embedding_dim)
            || vae.encoder.inputs() != 1 + vae.embedding_dim
            || vae.encoder.outputs() != 2 * vae.latent_dim
            || vae.decoder.inputs() != vae.latent_dim
            || vae.decoder.outputs() != n
        {
            return Err(Error::Compatibility(format!("{}: inconsistent VAE dimensions", path.display())));
        }
        vae.refresh_experts();
        Ok(vae)
    }
}

/// Drops a uniformly drawn fraction of coordinates; at least one stays observed.
pub fn random_mask<R: Rng + ?Sized>(n: usize, min_frac: f64, max_frac: f64, rng: &mut R) -> Vec<usize> {
    let frac = if max_frac > min_frac { rng.gen_range(min_frac..max_frac) } else { min_frac };
    let dropped = ((frac * n as f64).round() as usize).min(n - 1);
    let mut kept = index::sample(rng, n, n - dropped).into_vec();
    kept.sort_unstable();
    kept
}

fn masked_batch<R: Rng + ?Sized>(
    records: &[&PatientRecord],
    n: usize,
    config: &VaeConfig,
    rng: &mut R,
) -> (Vec<MaskedRecord>, Array2<f64>) {
    let batch: Vec<MaskedRecord> = records
        .iter()
        .map(|r| MaskedRecord {
            full: r.full_vector(n),
            observed: random_mask(n, config.min_mask, config.max_mask, rng),
        })
        .collect();
    let noise = Array2::from_shape_simple_fn((batch.len(), config.latent_dim), || rng.sample(StandardNormal));
    (batch, noise)
}

/// Mean negative ELBO over `records` with masks and noise drawn from a fixed seed.
pub fn evaluate_elbo(vae: &PartialVae, records: &[PatientRecord], config: &VaeConfig, seed: u64) -> f64 {
    if records.is_empty() {
        return f64::NAN;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = vae.num_symptoms();
    let mut total = 0.0;
    for chunk in records.chunks(config.batch_size.max(1)) {
        let refs: Vec<&PatientRecord> = chunk.iter().collect();
        let (batch, noise) = masked_batch(&refs, n, config, &mut rng);
        total += vae.elbo_grad(&batch, &noise, vae.beta).0 * chunk.len() as f64;
    }
    total / records.len() as f64
}

/// Pretrains the VAE on randomly masked records. Zero epochs returns the initial parameters.
pub fn train_vae(
    symptoms: Vec<String>,
    train: &[PatientRecord],
    valid: &[PatientRecord],
    config: &VaeConfig,
) -> Result<(PartialVae, Vec<VaeEpoch>)> {
    if train.is_empty() {
        return Err(Error::Usage("VAE training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut vae = PartialVae::new(symptoms, config, &mut rng);
    let n = vae.num_symptoms();
    let mut adam = Adam::default();
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let refs: Vec<&PatientRecord> = chunk.iter().map(|&i| &train[i]).collect();
            let (batch, noise) = masked_batch(&refs, n, config, &mut rng);
            let (loss, mut grads) = vae.elbo_grad(&batch, &noise, vae.beta);
            if !loss.is_finite() || !is_finite(&grads.tensors()) {
                return Err(Error::Divergence(format!("VAE epoch {epoch}: loss {loss}")));
            }
            clip_grad_norm(grads.tensors_mut(), 5.0);
            total += loss * chunk.len() as f64;
            adam.step(config.learning_rate, vae.tensors_mut(), grads.tensors());
        }
        vae.refresh_experts();
        let valid_loss = if valid.is_empty() {
            f64::NAN
        } else {
            evaluate_elbo(&vae, valid, config, config.seed ^ 0x5eed)
        };
        let entry = VaeEpoch {
            epoch,
            train_loss: total / train.len() as f64,
            valid_loss,
        };
        info!(epoch, train_loss = entry.train_loss, valid_loss, "vae epoch");
        log.push(entry);
    }
    Ok((vae, log))
}
