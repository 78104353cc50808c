//! Latent state representation: a dense autoencoder whose encoder is also
//! shaped by the critic's value-prediction error.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::approximator::{Activation, AdamState, DenseNet, GradientSet};
use crate::error::{Error, Result};
use crate::replay::PixelTransition;

#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationConfig {
    pub obs_len: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub lr: f64,
    pub lambda_rec: f64,
    pub lambda_critic: f64,
}

impl Default for RepresentationConfig {
    fn default() -> Self {
        Self {
            obs_len: crate::grasp_env::OBS_LEN,
            hidden: 64,
            latent_dim: 16,
            lr: 1e-3,
            lambda_rec: 0.1,
            lambda_critic: 1.0,
        }
    }
}

/// Batch-mean losses of one combined update.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CombinedLoss {
    pub reconstruction: f64,
    pub critic: f64,
    pub combined: f64,
    /// `|y − V(f(s))|` per sample, for priority refresh.
    pub td_abs: Vec<f64>,
}

pub fn combine(lambda_rec: f64, lambda_critic: f64, reconstruction: f64, critic: f64) -> f64 {
    lambda_rec * reconstruction + lambda_critic * critic
}

#[derive(Clone, Debug)]
pub struct EncoderDecoder {
    encoder: DenseNet,
    decoder: DenseNet,
    target_encoder: DenseNet,
    encoder_adam: AdamState,
    decoder_adam: AdamState,
    pub lambda_rec: f64,
    pub lambda_critic: f64,
}

impl EncoderDecoder {
    /// Encoder `obs → hidden → latent` (relu, relu, linear); the decoder
    /// mirrors it and ends in a sigmoid so reconstructions stay in `[0,1]`.
    pub fn new<R: Rng + ?Sized>(config: &RepresentationConfig, rng: &mut R) -> Result<Self> {
        if config.lambda_rec < 0.0 || config.lambda_critic < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        let encoder = DenseNet::new(
            config.obs_len,
            &[
                (config.hidden, Activation::Relu),
                (config.latent_dim, Activation::Linear),
            ],
            rng,
        )?;
        let decoder = DenseNet::new(
            config.latent_dim,
            &[(config.hidden, Activation::Relu), (config.obs_len, Activation::Sigmoid)],
            rng,
        )?;
        Self::from_parts(encoder, decoder, config.lr, config.lambda_rec, config.lambda_critic)
    }

    pub fn from_parts(
        encoder: DenseNet,
        decoder: DenseNet,
        lr: f64,
        lambda_rec: f64,
        lambda_critic: f64,
    ) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() || decoder.output_dim() != encoder.input_dim() {
            return Err(Error::ShapeMismatch(
                "encoder and decoder do not mirror each other".into(),
            ));
        }
        Ok(Self {
            target_encoder: encoder.clone(),
            encoder_adam: AdamState::new(&encoder, lr),
            decoder_adam: AdamState::new(&decoder, lr),
            encoder,
            decoder,
            lambda_rec,
            lambda_critic,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn obs_len(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encoder(&self) -> &DenseNet {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut DenseNet {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &DenseNet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut DenseNet {
        &mut self.decoder
    }

    pub fn target_encoder(&self) -> &DenseNet {
        &self.target_encoder
    }

    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        if obs.len() != self.obs_len() {
            return Err(Error::dims("observation", self.obs_len(), obs.len()));
        }
        self.encoder.forward(obs)
    }

    pub fn reconstruct(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(&self.encode(obs)?)
    }

    fn stack<'a>(&self, rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Result<Array2<f64>> {
        let n = rows.len();
        let width = self.obs_len();
        let mut data = Vec::with_capacity(n * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::dims("observation", width, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Array2::from_shape_vec((n, width), data).expect("stacked rows"))
    }

    /// Losses and encoder/decoder gradients of
    /// `λ_rec·‖g(f(s)) − s‖² + λ_critic·(y − V(f(s)))²` with
    /// `y = r + γ·V′(f′(s′))` (no bootstrap on terminal transitions),
    /// importance-weighted and averaged over the batch. The critic is read
    /// but receives no gradient.
    pub fn combined_loss_and_grads(
        &self,
        critic: &DenseNet,
        target_critic: &DenseNet,
        batch: &[&PixelTransition],
        weights: &[f64],
        gamma: f64,
    ) -> Result<(CombinedLoss, GradientSet, GradientSet)> {
        if batch.len() != weights.len() {
            return Err(Error::dims("importance weights", batch.len(), weights.len()));
        }
        if batch.is_empty() {
            return Ok((
                CombinedLoss::default(),
                GradientSet::zeros_like(&self.encoder),
                GradientSet::zeros_like(&self.decoder),
            ));
        }
        let n = batch.len() as f64;
        let obs = self.stack(batch.iter().map(|t| t.obs.as_slice()))?;
        let next_obs = self.stack(batch.iter().map(|t| t.next_obs.as_slice()))?;

        let next_values = target_critic.forward_batch(self.target_encoder.forward_batch(next_obs.view())?.view())?;
        let targets: Array1<f64> = batch
            .iter()
            .zip(next_values.column(0))
            .map(|(t, &v)| if t.terminal { t.reward } else { t.reward + gamma * v })
            .collect();

        let enc = self.encoder.forward_cached(obs.view())?;
        let dec = self.decoder.forward_cached(enc.output().view())?;
        let crit = critic.forward_cached(enc.output().view())?;

        let w = Array1::from(weights.to_vec());
        let residual = dec.output() - &obs;
        let rec_per: Array1<f64> = residual.map_axis(Axis(1), |r| r.dot(&r));
        let td: Array1<f64> = &crit.output().column(0) - &targets;
        let reconstruction = w.dot(&rec_per) / n;
        let critic_loss = w.dot(&td.mapv(|d| d * d)) / n;

        let row_scale = w.mapv(|wi| 2.0 * wi / n);
        let d_rec = residual * row_scale.view().insert_axis(Axis(1)) * self.lambda_rec;
        let (dec_grads, d_latent_rec) = self.decoder.backward(&dec, d_rec.view())?;
        let d_value = (&td * &row_scale * self.lambda_critic).insert_axis(Axis(1));
        let d_latent_critic = critic.input_gradient(&crit, d_value.view())?;
        let d_latent = d_latent_rec + d_latent_critic;
        let enc_grads = self.encoder.param_gradient(&enc, d_latent.view())?;

        let loss = CombinedLoss {
            reconstruction,
            critic: critic_loss,
            combined: combine(self.lambda_rec, self.lambda_critic, reconstruction, critic_loss),
            td_abs: td.iter().map(|d| d.abs()).collect(),
        };
        Ok((loss, enc_grads, dec_grads))
    }

    /// One Adam step on encoder and decoder parameters. Returns the
    /// pre-update losses. An empty batch changes nothing.
    pub fn combined_loss_step(
        &mut self,
        critic: &DenseNet,
        target_critic: &DenseNet,
        batch: &[&PixelTransition],
        weights: &[f64],
        gamma: f64,
    ) -> Result<CombinedLoss> {
        let (loss, enc_grads, dec_grads) =
            self.combined_loss_and_grads(critic, target_critic, batch, weights, gamma)?;
        if batch.is_empty() {
            return Ok(loss);
        }
        self.encoder.adam_update(&enc_grads, &mut self.encoder_adam)?;
        self.decoder.adam_update(&dec_grads, &mut self.decoder_adam)?;
        Ok(loss)
    }

    /// `ω′ ← τ·ω + (1 − τ)·ω′`.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.target_encoder.soft_update_from(&self.encoder, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::Dense;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> RepresentationConfig {
        RepresentationConfig {
            obs_len: 6,
            hidden: 5,
            latent_dim: 3,
            ..RepresentationConfig::default()
        }
    }

    fn zero_critic(latent: usize) -> DenseNet {
        DenseNet::from_layers(vec![Dense {
            weights: Array2::zeros((1, latent)),
            bias: Array1::zeros(1),
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn default_latent_has_sixteen_components() {
        let ed = EncoderDecoder::new(&RepresentationConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let obs = vec![0.25; ed.obs_len()];
        let phi = ed.encode(&obs).unwrap();
        assert_eq!(phi.len(), 16);
        assert_eq!(phi, ed.encode(&obs).unwrap());
    }

    #[test]
    fn same_seed_same_encoder() {
        let cfg = RepresentationConfig::default();
        let a = EncoderDecoder::new(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = EncoderDecoder::new(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let obs: Vec<f64> = (0..cfg.obs_len).map(|i| (i % 7) as f64 / 7.0).collect();
        assert_eq!(a.encode(&obs).unwrap(), b.encode(&obs).unwrap());
    }

    #[test]
    fn encode_rejects_wrong_length() {
        let ed = EncoderDecoder::new(&small_config(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(ed.encode(&[0.0; 5]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn combined_is_weighted_sum() {
        assert!((combine(0.1, 1.0, 2.0, 3.0) - 3.2).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_is_a_no_op() {
        let mut ed = EncoderDecoder::new(&small_config(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = ed.encoder().fingerprint();
        let critic = zero_critic(3);
        let loss = ed.combined_loss_step(&critic, &critic, &[], &[], 0.99).unwrap();
        assert_eq!(loss, CombinedLoss::default());
        assert_eq!(ed.encoder().fingerprint(), before);
    }

    #[test]
    fn perfect_autoencoder_has_zero_losses() {
        // Sigmoid(0) = 0.5, so zeroing the decoder output layer reconstructs
        // the constant 0.5 frame exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ed = EncoderDecoder::new(&small_config(), &mut rng).unwrap();
        let out = ed.decoder.layers_mut().last_mut().unwrap();
        out.weights.fill(0.0);
        out.bias.fill(0.0);
        let t = PixelTransition {
            obs: vec![0.5; 6],
            action: vec![0.0, 0.0],
            reward: 0.0,
            next_obs: vec![0.5; 6],
            terminal: false,
        };
        let critic = zero_critic(3);
        let (loss, enc, dec) = ed
            .combined_loss_and_grads(&critic, &critic, &[&t, &t], &[1.0, 1.0], 0.99)
            .unwrap();
        assert_eq!((loss.reconstruction, loss.critic, loss.combined), (0.0, 0.0, 0.0));
        assert!(enc.is_zero() && dec.is_zero());
    }

    #[test]
    fn combined_equals_weighted_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ed = EncoderDecoder::new(&small_config(), &mut rng).unwrap();
        let critic = DenseNet::new(3, &[(4, Activation::Relu), (1, Activation::Linear)], &mut rng).unwrap();
        let t = PixelTransition {
            obs: (0..6).map(|i| i as f64 / 6.0).collect(),
            action: vec![0.1, 0.2],
            reward: 1.0,
            next_obs: vec![0.3; 6],
            terminal: false,
        };
        let (loss, _, _) = ed
            .combined_loss_and_grads(&critic, &critic, &[&t], &[1.0], 0.9)
            .unwrap();
        assert_eq!(loss.combined, 0.1 * loss.reconstruction + 1.0 * loss.critic);
    }
}
