//! Toy physics-informed acoustic model.
//!
//! Synthetic clipped tones stand in for call audio. Each frame's magnitude
//! spectrum passes through a two-layer tanh encoder to a latent `h_t`;
//! attention pooling over the latents feeds a linear emotion head, and the
//! shared [`PressureOperator`] maps every latent to a pressure sample whose
//! Westervelt residual is penalized. Training minimizes
//! `cross-entropy + λ · L_phys` with momentum gradient descent.

use std::f64::consts::TAU;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asl::EmotionLabel;
use crate::physics::{
    grad_phys_loss, phys_loss, AcousticConstants, LatentTrajectory, PhysicsError, PressureOperator,
};
use crate::scalar::Scalar;
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PiamError {
    #[error("{got} frames; at least 3 are required")]
    TooFewFrames { got: usize },
    #[error("dataset covers fewer than two emotion classes")]
    DegenerateDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("bad model file: {0}")]
    BadModelFile(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWaveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
    pub true_emotion: EmotionLabel,
    pub clip_level: T,
}

impl<T: Scalar> ToyWaveform<T> {
    pub fn clipped_fraction(&self) -> f64 {
        let c = self.clip_level;
        let n = self.samples.iter().filter(|s| s.abs() >= c).count();
        n as f64 / self.samples.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveConfig {
    pub duration_s: f64,
    pub sample_rate: u32,
    pub clip_level: f64,
    /// Scales every emotion's tone amplitude.
    pub amplitude: f64,
    pub noise_sd: f64,
}

impl Default for WaveConfig {
    fn default() -> Self {
        Self {
            duration_s: 0.5,
            sample_rate: 8000,
            clip_level: 0.5,
            amplitude: 0.9,
            noise_sd: 0.05,
        }
    }
}

impl WaveConfig {
    pub fn validate(&self) -> Result<(), PiamError> {
        let bad = |m: &str| Err(PiamError::InvalidConfig(m.to_string()));
        if !(self.duration_s > 0.0) || self.sample_rate == 0 {
            return bad("duration and sample rate must be positive");
        }
        if !(self.clip_level > 0.0 && self.clip_level <= 1.0) {
            return bad("clip_level must lie in (0, 1]");
        }
        if !(self.amplitude >= 0.0) || !(self.noise_sd >= 0.0) {
            return bad("amplitude and noise_sd must be nonnegative");
        }
        Ok(())
    }
}

/// (fundamental Hz, relative jitter, relative amplitude) per emotion.
const TONES: [(f64, f64, f64); 7] = [
    (250.0, 0.010, 0.90),
    (500.0, 0.030, 1.00),
    (750.0, 0.005, 0.60),
    (1000.0, 0.010, 0.50),
    (1250.0, 0.040, 0.80),
    (1500.0, 0.020, 1.00),
    (1750.0, 0.015, 0.70),
];

/// Jittered emotion-specific tone plus Gaussian noise, hard-clipped.
pub fn synth_waveform<T: Scalar>(emotion: EmotionLabel, seed: u64, cfg: &WaveConfig) -> ToyWaveform<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (f0, jitter, amp) = TONES[emotion.index()];
    let n = (cfg.duration_s * cfg.sample_rate as f64).round() as usize;
    let noise = Normal::new(0.0, cfg.noise_sd).expect("noise_sd is finite and nonnegative");
    let mut phase = rng.random_range(0.0..TAU);
    let mut drift = 0.0f64;
    let clip = cfg.clip_level.min(1.0);
    let samples = (0..n)
        .map(|_| {
            // slowly wandering pitch: AR(1) drift scaled by the jitter level
            drift = 0.99 * drift + 0.1 * rng.random_range(-1.0..1.0);
            phase += TAU * f0 * (1.0 + jitter * drift) / cfg.sample_rate as f64;
            let x = cfg.amplitude * amp * phase.sin() + noise.sample(&mut rng);
            T::lit(x.clamp(-clip, clip))
        })
        .collect();
    ToyWaveform {
        samples,
        sample_rate: cfg.sample_rate,
        true_emotion: emotion,
        clip_level: T::lit(clip),
    }
}

/// `n` waveforms cycling through the emotions, each from a derived seed.
pub fn synth_dataset<T: Scalar>(n: usize, seed: u64, cfg: &WaveConfig) -> Vec<ToyWaveform<T>> {
    (0..n)
        .map(|i| {
            let e = EmotionLabel::from_index(i % EmotionLabel::COUNT).unwrap();
            synth_waveform(e, derive_seed(seed, i as u64), cfg)
        })
        .collect()
}

/// Number of whole frames of `frame` samples advancing by `hop`.
pub fn frame_count(n_samples: usize, frame: usize, hop: usize) -> usize {
    if n_samples < frame || hop == 0 {
        0
    } else {
        (n_samples - frame) / hop + 1
    }
}

/// Per-frame magnitude spectrum (bins `0..=frame/2`, scaled by `2/frame`),
/// time-major.
pub fn frame_spectra<T: Scalar>(samples: &[T], frame: usize, hop: usize) -> Result<(Vec<T>, usize), PiamError> {
    let t_len = frame_count(samples.len(), frame, hop);
    if t_len < 3 {
        return Err(PiamError::TooFewFrames { got: t_len });
    }
    let bins = frame / 2 + 1;
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..bins * frame)
        .map(|i| {
            let (k, n) = (i / frame, i % frame);
            let w = TAU * (k * n) as f64 / frame as f64;
            (w.cos(), w.sin())
        })
        .unzip();
    let scale = 2.0 / frame as f64;
    let mut out = Vec::with_capacity(t_len * bins);
    for t in 0..t_len {
        let x = &samples[t * hop..t * hop + frame];
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, s) in x.iter().enumerate() {
                let s = s.to_f64_lossy();
                re += s * cos[k * frame + n];
                im -= s * sin[k * frame + n];
            }
            out.push(T::lit(scale * re.hypot(im)));
        }
    }
    Ok((out, t_len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_in: usize,
    pub enc_hidden: usize,
    pub latent: usize,
    pub op_hidden: usize,
}

impl ModelShape {
    pub fn for_frame(frame: usize) -> Self {
        Self {
            n_in: frame / 2 + 1,
            enc_hidden: 16,
            latent: 8,
            op_hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel<T> {
    pub shape: ModelShape,
    /// `enc_hidden × n_in`
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `latent × enc_hidden`
    pub w2: Vec<T>,
    pub b2: Vec<T>,
    /// Attention scoring vector over latents.
    pub attn: Vec<T>,
    /// `7 × latent`
    pub wo: Vec<T>,
    pub bo: Vec<T>,
    pub pressure_op: PressureOperator<T>,
}

const N_CLASSES: usize = EmotionLabel::COUNT;

fn matvec<T: Scalar>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        *o = w[j * cols..(j + 1) * cols].iter().zip(x).fold(b[j], |acc, (&w, &x)| acc + w * x);
    }
}

fn softmax<T: Scalar>(s: &[T]) -> Vec<T> {
    let m = s.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = s.iter().map(|&x| (x - m).exp()).collect();
    let z: T = e.iter().copied().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub trajectory: LatentTrajectory<T>,
    pub attention: Vec<T>,
    pub probabilities: Vec<T>,
    pub pressure: Vec<T>,
}

struct Cache<T> {
    z1: Vec<T>,
    h: Vec<T>,
    alpha: Vec<T>,
    pooled: Vec<T>,
    probs: Vec<T>,
}

impl<T: Scalar> ToyModel<T> {
    pub fn new(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| -> Vec<T> {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            (0..rows * cols).map(|_| T::lit(rng.random_range(-s..s))).collect()
        };
        let w1 = glorot(shape.enc_hidden, shape.n_in);
        let w2 = glorot(shape.latent, shape.enc_hidden);
        let attn = glorot(1, shape.latent);
        let wo = glorot(N_CLASSES, shape.latent);
        let pressure_op = PressureOperator::random(shape.latent, shape.op_hidden, 1.0, &mut rng);
        Self {
            shape,
            w1,
            b1: vec![T::zero(); shape.enc_hidden],
            w2,
            b2: vec![T::zero(); shape.latent],
            attn,
            wo,
            bo: vec![T::zero(); N_CLASSES],
            pressure_op,
        }
    }

    pub fn n_params(&self) -> usize {
        self.w1.len()
            + self.b1.len()
            + self.w2.len()
            + self.b2.len()
            + self.attn.len()
            + self.wo.len()
            + self.bo.len()
            + self.pressure_op.n_params()
    }

    /// Encoder, attention, head, then pressure-operator parameters.
    pub fn params(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.n_params());
        for part in [&self.w1, &self.b1, &self.w2, &self.b2, &self.attn, &self.wo, &self.bo] {
            v.extend_from_slice(part);
        }
        v.extend(self.pressure_op.params());
        v
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<(), PiamError> {
        if p.len() != self.n_params() {
            return Err(PiamError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                p.len()
            )));
        }
        let mut rest = p;
        for part in [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.attn,
            &mut self.wo,
            &mut self.bo,
        ] {
            let (a, b) = rest.split_at(part.len());
            part.copy_from_slice(a);
            rest = b;
        }
        self.pressure_op.set_params(rest)?;
        Ok(())
    }

    fn run(&self, feats: &[T], t_len: usize) -> Cache<T> {
        let s = self.shape;
        let mut z1 = vec![T::zero(); t_len * s.enc_hidden];
        let mut h = vec![T::zero(); t_len * s.latent];
        for t in 0..t_len {
            let zt = &mut z1[t * s.enc_hidden..(t + 1) * s.enc_hidden];
            matvec(&self.w1, &self.b1, &feats[t * s.n_in..(t + 1) * s.n_in], zt);
            zt.iter_mut().for_each(|v| *v = v.tanh());
            let ht = &mut h[t * s.latent..(t + 1) * s.latent];
            matvec(&self.w2, &self.b2, zt, ht);
            ht.iter_mut().for_each(|v| *v = v.tanh());
        }
        let scores: Vec<T> = (0..t_len)
            .map(|t| {
                h[t * s.latent..(t + 1) * s.latent]
                    .iter()
                    .zip(&self.attn)
                    .map(|(&a, &b)| a * b)
                    .sum()
            })
            .collect();
        let alpha = softmax(&scores);
        let mut pooled = vec![T::zero(); s.latent];
        for t in 0..t_len {
            for k in 0..s.latent {
                pooled[k] += alpha[t] * h[t * s.latent + k];
            }
        }
        let mut logits = vec![T::zero(); N_CLASSES];
        matvec(&self.wo, &self.bo, &pooled, &mut logits);
        let probs = softmax(&logits);
        Cache {
            z1,
            h,
            alpha,
            pooled,
            probs,
        }
    }

    /// Forward pass on precomputed frame features (`t_len × n_in`, time-major).
    pub fn forward_features(&self, feats: &[T], t_len: usize) -> Result<Forward<T>, PiamError> {
        if t_len < 3 {
            return Err(PiamError::TooFewFrames { got: t_len });
        }
        if feats.len() != t_len * self.shape.n_in {
            return Err(PiamError::InvalidConfig("feature block does not match model input width".into()));
        }
        let c = self.run(feats, t_len);
        let trajectory = LatentTrajectory::new(c.h, t_len, self.shape.latent)?;
        let pressure = self.pressure_op.pressure(&trajectory)?;
        Ok(Forward {
            trajectory,
            attention: c.alpha,
            probabilities: c.probs,
            pressure,
        })
    }

    pub fn forward(&self, wave: &ToyWaveform<T>, frame: usize, hop: usize) -> Result<Forward<T>, PiamError> {
        let (feats, t_len) = frame_spectra(&wave.samples, frame, hop)?;
        self.forward_features(&feats, t_len)
    }

    /// Loss `−log p_label + λ · L_phys` and its gradient in [`ToyModel::params`] order.
    pub fn loss_grad(
        &self,
        feats: &[T],
        t_len: usize,
        label: EmotionLabel,
        lambda: T,
        k: &AcousticConstants<T>,
    ) -> Result<(LossParts<T>, Vec<T>), PiamError> {
        if t_len < 3 {
            return Err(PiamError::TooFewFrames { got: t_len });
        }
        let s = self.shape;
        let c = self.run(feats, t_len);
        let traj = LatentTrajectory::new(c.h.clone(), t_len, s.latent)?;
        let phys = grad_phys_loss(&traj, &self.pressure_op, k)?;
        let task = -c.probs[label.index()].max(T::min_positive_value()).ln();

        let mut gw1 = vec![T::zero(); self.w1.len()];
        let mut gb1 = vec![T::zero(); self.b1.len()];
        let mut gw2 = vec![T::zero(); self.w2.len()];
        let mut gb2 = vec![T::zero(); self.b2.len()];
        let mut gattn = vec![T::zero(); s.latent];
        let mut gwo = vec![T::zero(); self.wo.len()];
        let mut gbo = vec![T::zero(); N_CLASSES];

        // head
        let mut dpooled = vec![T::zero(); s.latent];
        for c_i in 0..N_CLASSES {
            let dl = c.probs[c_i] - if c_i == label.index() { T::one() } else { T::zero() };
            gbo[c_i] = dl;
            for k2 in 0..s.latent {
                gwo[c_i * s.latent + k2] = dl * c.pooled[k2];
                dpooled[k2] += dl * self.wo[c_i * s.latent + k2];
            }
        }
        // attention pooling
        let mut dh: Vec<T> = phys.h.iter().map(|&g| lambda * g).collect();
        let dalpha: Vec<T> = (0..t_len)
            .map(|t| (0..s.latent).map(|k2| dpooled[k2] * c.h[t * s.latent + k2]).sum())
            .collect();
        let mean_da: T = (0..t_len).map(|t| c.alpha[t] * dalpha[t]).sum();
        for t in 0..t_len {
            let ds = c.alpha[t] * (dalpha[t] - mean_da);
            for k2 in 0..s.latent {
                let i = t * s.latent + k2;
                dh[i] += c.alpha[t] * dpooled[k2] + ds * self.attn[k2];
                gattn[k2] += ds * c.h[i];
            }
        }
        // encoder
        let mut da2 = vec![T::zero(); s.latent];
        let mut dz1 = vec![T::zero(); s.enc_hidden];
        for t in 0..t_len {
            let ht = &c.h[t * s.latent..(t + 1) * s.latent];
            let zt = &c.z1[t * s.enc_hidden..(t + 1) * s.enc_hidden];
            let xt = &feats[t * s.n_in..(t + 1) * s.n_in];
            for k2 in 0..s.latent {
                da2[k2] = dh[t * s.latent + k2] * (T::one() - ht[k2] * ht[k2]);
            }
            dz1.iter_mut().for_each(|v| *v = T::zero());
            for k2 in 0..s.latent {
                gb2[k2] += da2[k2];
                for j in 0..s.enc_hidden {
                    gw2[k2 * s.enc_hidden + j] += da2[k2] * zt[j];
                    dz1[j] += da2[k2] * self.w2[k2 * s.enc_hidden + j];
                }
            }
            for j in 0..s.enc_hidden {
                let da1 = dz1[j] * (T::one() - zt[j] * zt[j]);
                gb1[j] += da1;
                for i in 0..s.n_in {
                    gw1[j * s.n_in + i] += da1 * xt[i];
                }
            }
        }

        let mut grad = Vec::with_capacity(self.n_params());
        for part in [gw1, gb1, gw2, gb2, gattn, gwo, gbo] {
            grad.extend(part);
        }
        grad.extend(phys.op.flat().into_iter().map(|g| lambda * g));
        Ok((
            LossParts {
                task,
                phys: phys.loss,
                probabilities: c.probs,
            },
            grad,
        ))
    }

    /// Maximum relative error between [`ToyModel::loss_grad`] and symmetric
    /// finite differences over every parameter.
    pub fn finite_diff_check(
        &self,
        feats: &[T],
        t_len: usize,
        label: EmotionLabel,
        lambda: T,
        k: &AcousticConstants<T>,
        step: T,
    ) -> Result<T, PiamError> {
        let (_, analytic) = self.loss_grad(feats, t_len, label, lambda, k)?;
        let total = |m: &ToyModel<T>| -> Result<T, PiamError> {
            let f = m.forward_features(feats, t_len)?;
            let task = -f.probabilities[label.index()].ln();
            Ok(task + lambda * phys_loss(&f.trajectory, &m.pressure_op, k)?)
        };
        let theta = self.params();
        let mut probe = self.clone();
        let mut th = theta.clone();
        let mut worst = T::zero();
        for i in 0..theta.len() {
            th[i] = theta[i] + step;
            probe.set_params(&th)?;
            let up = total(&probe)?;
            th[i] = theta[i] - step;
            probe.set_params(&th)?;
            let dn = total(&probe)?;
            th[i] = theta[i];
            let num = (up - dn) / (step + step);
            let den = analytic[i].abs().max(num.abs()).max(T::lit(1e-12));
            worst = worst.max((analytic[i] - num).abs() / den);
        }
        Ok(worst)
    }

    /// Argmax of the emotion probabilities; ties go to the lowest label index.
    pub fn classify(&self, wave: &ToyWaveform<T>, frame: usize, hop: usize) -> Result<EmotionLabel, PiamError> {
        Ok(argmax_label(&self.forward(wave, frame, hop)?.probabilities))
    }

    const MAGIC: &'static [u8; 4] = b"PIAM";
    const VERSION: u32 = 1;

    /// Header `PIAM`, version and the four shape sizes as little-endian u32,
    /// encoder/attention/head parameters as little-endian f64, then the
    /// pressure operator in its own parameter format.
    pub fn write_params<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(Self::MAGIC)?;
        let s = self.shape;
        for v in [Self::VERSION, s.n_in as u32, s.enc_hidden as u32, s.latent as u32, s.op_hidden as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        let n_own = self.n_params() - self.pressure_op.n_params();
        for p in &self.params()[..n_own] {
            w.write_all(&p.to_f64_lossy().to_le_bytes())?;
        }
        self.pressure_op.write_params(w)
    }

    pub fn read_params<R: Read>(mut r: R) -> Result<Self, PiamError> {
        let bad = |m: &str| PiamError::BadModelFile(m.to_string());
        let mut head = [0u8; 24];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if &head[..4] != Self::MAGIC {
            return Err(bad("magic"));
        }
        let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap()) as usize;
        if word(4) != Self::VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let shape = ModelShape {
            n_in: word(8),
            enc_hidden: word(12),
            latent: word(16),
            op_hidden: word(20),
        };
        let mut model = Self::new(shape, 0);
        let n_own = model.n_params() - model.pressure_op.n_params();
        let mut vals = Vec::with_capacity(model.n_params());
        let mut buf = [0u8; 8];
        for _ in 0..n_own {
            r.read_exact(&mut buf).map_err(|_| bad("truncated parameters"))?;
            vals.push(T::lit(f64::from_le_bytes(buf)));
        }
        let op = PressureOperator::<T>::read_params(r)?;
        if op.dim != shape.latent || op.hidden != shape.op_hidden {
            return Err(bad("pressure operator shape disagrees with header"));
        }
        vals.extend(op.params());
        model.set_params(&vals)?;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts<T> {
    pub task: T,
    pub phys: T,
    pub probabilities: Vec<T>,
}

pub fn argmax_label<T: Scalar>(probs: &[T]) -> EmotionLabel {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    EmotionLabel::from_index(best).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
    pub frame: usize,
    pub hop: usize,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch: 16,
            seed: 0,
            frame: 64,
            hop: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub l_task: f64,
    pub l_phys: f64,
    pub l_total: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Set when the total loss rose by more than 10% between consecutive epochs.
    pub diverged: bool,
}

impl TrainReport {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|e| serde_json::to_string(e).expect("plain numbers serialize") + "\n")
            .collect()
    }

    pub fn last(&self) -> Option<&EpochStats> {
        self.epochs.last()
    }
}

/// Mean task loss, physics loss and accuracy over a dataset.
pub fn evaluate<T: Scalar>(
    model: &ToyModel<T>,
    data: &[(Vec<T>, usize, EmotionLabel)],
    k: &AcousticConstants<T>,
) -> Result<(f64, f64, f64), PiamError> {
    let (mut task, mut phys, mut hits) = (0.0, 0.0, 0usize);
    for (feats, t_len, label) in data {
        let f = model.forward_features(feats, *t_len)?;
        task -= f.probabilities[label.index()].to_f64_lossy().max(f64::MIN_POSITIVE).ln();
        phys += phys_loss(&f.trajectory, &model.pressure_op, k)?.to_f64_lossy();
        hits += usize::from(argmax_label(&f.probabilities) == *label);
    }
    let n = data.len() as f64;
    Ok((task / n, phys / n, hits as f64 / n))
}

pub fn featurize<T: Scalar>(
    waves: &[ToyWaveform<T>],
    frame: usize,
    hop: usize,
) -> Result<Vec<(Vec<T>, usize, EmotionLabel)>, PiamError> {
    waves
        .iter()
        .map(|w| frame_spectra(&w.samples, frame, hop).map(|(f, t)| (f, t, w.true_emotion)))
        .collect()
}

/// Mini-batch momentum descent on `cross-entropy + λ · L_phys`.
pub fn train<T: Scalar>(
    dataset: &[ToyWaveform<T>],
    hyper: &TrainHyper,
    k: &AcousticConstants<T>,
) -> Result<(ToyModel<T>, TrainReport), PiamError> {
    let mut classes: Vec<EmotionLabel> = dataset.iter().map(|w| w.true_emotion).collect();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(PiamError::DegenerateDataset);
    }
    if hyper.batch == 0 || hyper.frame == 0 || hyper.hop == 0 || !(hyper.lambda >= 0.0) || !(hyper.lr > 0.0) {
        return Err(PiamError::InvalidConfig("batch, frame, hop and lr must be positive; lambda nonnegative".into()));
    }
    k.validate()?;
    let data = featurize(dataset, hyper.frame, hyper.hop)?;
    let mut model = ToyModel::new(ModelShape::for_frame(hyper.frame), hyper.seed);
    let mut report = TrainReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(hyper.seed, 1));
    let lambda = T::lit(hyper.lambda);
    let (lr, mu) = (T::lit(hyper.lr), T::lit(hyper.momentum));
    let mut theta = model.params();
    let mut velocity = vec![T::zero(); theta.len()];
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let mut g = vec![T::zero(); theta.len()];
            for &i in chunk {
                let (feats, t_len, label) = &data[i];
                let (_, gi) = model.loss_grad(feats, *t_len, *label, lambda, k)?;
                g.iter_mut().zip(gi).for_each(|(a, b)| *a += b);
            }
            let scale = T::one() / T::from_count(chunk.len());
            for ((th, v), gi) in theta.iter_mut().zip(velocity.iter_mut()).zip(&g) {
                *v = mu * *v - lr * *gi * scale;
                *th += *v;
            }
            model.set_params(&theta)?;
        }
        let (l_task, l_phys, accuracy) = evaluate(&model, &data, k)?;
        let l_total = l_task + hyper.lambda * l_phys;
        if let Some(prev) = report.epochs.last() {
            if l_total > 1.1 * prev.l_total {
                report.diverged = true;
            }
        }
        report.epochs.push(EpochStats {
            epoch,
            l_task,
            l_phys,
            l_total,
            accuracy,
        });
    }
    Ok((model, report))
}
