use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::diffengine::{bind_all, forward_mlp, Activation, BoundLayer, DenseLayer, Graph, ParamSet, Var};
use crate::error::{Error, Result};

/// Bounds applied to every log-variance head.
pub const LOG_VAR_MIN: f64 = -10.0;
pub const LOG_VAR_MAX: f64 = 10.0;

pub const CHECKPOINT_FORMAT: &str = "hcv-checkpoint/1";

/// Mean-field amortised posterior `q(u|x) q(v|x)` with a Gaussian decoder
/// `p(x | u, v)`.
///
/// The encoder's last layer emits `[mu_u, log_var_u, mu_v, log_var_v]`. The
/// decoder reads `[u, v]` and emits `[mu_x, log_var_x]`, or only `mu_x` when
/// the decoder log-variance is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalModel {
    pub encoder: Vec<DenseLayer>,
    pub decoder: Vec<DenseLayer>,
    pub latent_u: usize,
    pub latent_v: usize,
    pub data_dim: usize,
    pub decoder_log_var: Option<f64>,
}

/// Encoder outputs for a batch, log-variances already clamped.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub mu_u: DMatrix<f64>,
    pub log_var_u: DMatrix<f64>,
    pub mu_v: DMatrix<f64>,
    pub log_var_v: DMatrix<f64>,
}

/// Graph handles of the encoder outputs.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub mu_u: Var,
    pub log_var_u: Var,
    pub mu_v: Var,
    pub log_var_v: Var,
}

/// A model's parameters placed on a graph.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<BoundLayer>,
    pub decoder: Vec<BoundLayer>,
    pub latent_u: usize,
    pub latent_v: usize,
    pub data_dim: usize,
    pub decoder_log_var: Option<f64>,
}

fn mlp<R: Rng + ?Sized>(input: usize, widths: &[usize], output: usize, rng: &mut R) -> Vec<DenseLayer> {
    let mut layers = Vec::with_capacity(widths.len() + 1);
    let mut prev = input;
    for &w in widths {
        layers.push(DenseLayer::glorot(prev, w, Activation::Tanh, rng));
        prev = w;
    }
    layers.push(DenseLayer::glorot(prev, output, Activation::Identity, rng));
    layers
}

fn activations(hidden: usize) -> Vec<Activation> {
    let mut acts = vec![Activation::Tanh; hidden];
    acts.push(Activation::Identity);
    acts
}

fn dense_forward(layers: &[DenseLayer], input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut h = input.clone();
    for layer in layers {
        if h.ncols() != layer.inputs() {
            return Err(Error::DimensionMismatch {
                context: "mlp layer chain",
                expected: layer.inputs(),
                found: h.ncols(),
            });
        }
        let mut z = &h * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += &layer.bias;
        }
        h = match layer.activation {
            Activation::Identity => z,
            Activation::Tanh => z.map(f64::tanh),
            Activation::Softplus => z.map(|x| x.max(0.0) + (-x.abs()).exp().ln_1p()),
        };
    }
    Ok(h)
}

fn clamp_log_var(m: DMatrix<f64>) -> DMatrix<f64> {
    m.map(|x| x.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: TrainConfig,
    data_dim: usize,
    params: ParamSet,
}

impl VariationalModel {
    /// Glorot-initialised model for `data_dim`-dimensional observations.
    pub fn init<R: Rng + ?Sized>(config: &TrainConfig, data_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        if data_dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        let latent = config.latent_u + config.latent_v;
        let encoder = mlp(data_dim, &config.encoder_widths, 2 * latent, rng);
        let dec_out = if config.decoder_log_var.is_some() { data_dim } else { 2 * data_dim };
        let decoder = mlp(latent, &config.decoder_widths, dec_out, rng);
        Ok(Self {
            encoder,
            decoder,
            latent_u: config.latent_u,
            latent_v: config.latent_v,
            data_dim,
            decoder_log_var: config.decoder_log_var,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(|p| p.len()).sum()
    }

    /// Parameters in checkpoint order: encoder then decoder, each layer's
    /// weights before its bias.
    pub fn params(&self) -> impl Iterator<Item = &DMatrix<f64>> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weights, &l.bias])
    }

    pub fn params_mut(&mut self) -> Vec<&mut DMatrix<f64>> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weights, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        Ok(BoundModel {
            encoder: bind_all(&self.encoder, g)?,
            decoder: bind_all(&self.decoder, g)?,
            latent_u: self.latent_u,
            latent_v: self.latent_v,
            data_dim: self.data_dim,
            decoder_log_var: self.decoder_log_var,
        })
    }

    pub fn encode(&self, x: &DMatrix<f64>) -> Result<EncoderOutput> {
        let out = dense_forward(&self.encoder, x)?;
        let (u, v) = (self.latent_u, self.latent_v);
        Ok(EncoderOutput {
            mu_u: out.columns(0, u).into_owned(),
            log_var_u: clamp_log_var(out.columns(u, u).into_owned()),
            mu_v: out.columns(2 * u, v).into_owned(),
            log_var_v: clamp_log_var(out.columns(2 * u + v, v).into_owned()),
        })
    }

    /// Decoder mean and log-variance for latent rows `u`, `v`.
    pub fn decode(&self, u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let mut z = DMatrix::zeros(u.nrows(), u.ncols() + v.ncols());
        z.columns_mut(0, u.ncols()).copy_from(u);
        z.columns_mut(u.ncols(), v.ncols()).copy_from(v);
        let out = dense_forward(&self.decoder, &z)?;
        let d = self.data_dim;
        Ok(match self.decoder_log_var {
            Some(lv) => (out, DMatrix::from_element(u.nrows(), d, lv)),
            None => (
                out.columns(0, d).into_owned(),
                clamp_log_var(out.columns(d, d).into_owned()),
            ),
        })
    }

    pub fn to_checkpoint_json(&self, config: &TrainConfig) -> Result<String> {
        let mut params = ParamSet::default();
        params.push_layers("encoder", &self.encoder);
        params.push_layers("decoder", &self.decoder);
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: config.clone(),
            data_dim: self.data_dim,
            params,
        };
        Ok(serde_json::to_string_pretty(&ck)?)
    }

    /// Restores a model and the configuration it was trained with.
    pub fn from_checkpoint_json(json: &str) -> Result<(Self, TrainConfig)> {
        let ck: Checkpoint = serde_json::from_str(json)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unsupported checkpoint format {:?}", ck.format)));
        }
        ck.config.validate()?;
        let encoder = ck
            .params
            .layers("encoder", &activations(ck.config.encoder_widths.len()))?;
        let decoder = ck
            .params
            .layers("decoder", &activations(ck.config.decoder_widths.len()))?;
        let model = Self {
            encoder,
            decoder,
            latent_u: ck.config.latent_u,
            latent_v: ck.config.latent_v,
            data_dim: ck.data_dim,
            decoder_log_var: ck.config.decoder_log_var,
        };
        model.check_shapes()?;
        Ok((model, ck.config))
    }

    fn check_shapes(&self) -> Result<()> {
        let latent = self.latent_u + self.latent_v;
        let dec_out = if self.decoder_log_var.is_some() { self.data_dim } else { 2 * self.data_dim };
        let chain = |layers: &[DenseLayer], input: usize, output: usize| {
            let mut prev = input;
            for l in layers {
                if l.inputs() != prev {
                    return false;
                }
                prev = l.outputs();
            }
            prev == output
        };
        if !chain(&self.encoder, self.data_dim, 2 * latent) || !chain(&self.decoder, latent, dec_out) {
            return Err(Error::Format("checkpoint layer shapes do not chain".into()));
        }
        Ok(())
    }
}

impl BoundModel {
    pub fn encode(&self, g: &mut Graph, x: Var) -> Result<EncoderVars> {
        let out = forward_mlp(g, &self.encoder, x)?;
        let (u, v) = (self.latent_u, self.latent_v);
        let mu_u = g.columns(out, 0, u)?;
        let lv_u = g.columns(out, u, u)?;
        let log_var_u = g.clamp(lv_u, LOG_VAR_MIN, LOG_VAR_MAX)?;
        let mu_v = g.columns(out, 2 * u, v)?;
        let lv_v = g.columns(out, 2 * u + v, v)?;
        let log_var_v = g.clamp(lv_v, LOG_VAR_MIN, LOG_VAR_MAX)?;
        Ok(EncoderVars {
            mu_u,
            log_var_u,
            mu_v,
            log_var_v,
        })
    }

    pub fn decode(&self, g: &mut Graph, u: Var, v: Var) -> Result<(Var, Var)> {
        let z = g.concat_cols(&[u, v])?;
        let out = forward_mlp(g, &self.decoder, z)?;
        let d = self.data_dim;
        match self.decoder_log_var {
            Some(lv) => {
                let rows = g.shape(out).0;
                let fixed = g.input(DMatrix::from_element(rows, d, lv))?;
                Ok((out, fixed))
            }
            None => {
                let mu = g.columns(out, 0, d)?;
                let lv = g.columns(out, d, d)?;
                let lv = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX)?;
                Ok((mu, lv))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> TrainConfig {
        TrainConfig {
            latent_u: 2,
            latent_v: 3,
            encoder_widths: vec![7],
            decoder_widths: vec![6, 5],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn graph_and_plain_forward_agree() {
        let cfg = small_config();
        let model = VariationalModel::init(&cfg, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let plain = model.encode(&x).unwrap();
        let mut g = Graph::new();
        let bound = model.bind(&mut g).unwrap();
        let xv = g.input(x).unwrap();
        let enc = bound.encode(&mut g, xv).unwrap();
        assert_eq!(g.value(enc.mu_u), &plain.mu_u);
        assert_eq!(g.value(enc.log_var_v), &plain.log_var_v);
        let (mu, lv) = bound.decode(&mut g, enc.mu_u, enc.mu_v).unwrap();
        let (pmu, plv) = model.decode(&plain.mu_u, &plain.mu_v).unwrap();
        assert_eq!(g.value(mu), &pmu);
        assert_eq!(g.value(lv), &plv);
        assert_eq!(pmu.shape(), (3, 4));
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = TrainConfig {
            decoder_log_var: Some(0.0),
            ..small_config()
        };
        let model = VariationalModel::init(&cfg, 4, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let json = model.to_checkpoint_json(&cfg).unwrap();
        let (back, back_cfg) = VariationalModel::from_checkpoint_json(&json).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
        let broken = json.replace(CHECKPOINT_FORMAT, "other/9");
        assert!(VariationalModel::from_checkpoint_json(&broken).is_err());
    }

    #[test]
    fn log_variances_are_clamped() {
        let cfg = small_config();
        let mut model = VariationalModel::init(&cfg, 4, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let last = model.encoder.last_mut().unwrap();
        last.bias.fill(50.0);
        let out = model.encode(&DMatrix::zeros(2, 4)).unwrap();
        assert!(out.log_var_u.iter().all(|&v| v == LOG_VAR_MAX));
    }
}
