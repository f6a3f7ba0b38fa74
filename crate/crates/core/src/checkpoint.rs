//! On-disk snapshots of parameter collections: a `manifest.json` with names,
//! shapes, offsets, configuration and training state next to `params.bin`,
//! the values as one little-endian `f64` blob.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aed::{is_encoder_param, AedDims, AedParams, CharAedParams};
use crate::autodiff::Tensor;
use crate::data::{read_f64s, Lexicon};
use crate::error::{contract, Error, Result};
use crate::params::ParamSet;
use crate::train::Optimizer;

pub const CHECKPOINT_VERSION: u32 = 1;
const ADAM_PREFIX: &str = "adam.";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SI-WSU")]
    SiWsu,
    #[serde(rename = "SD-WSU")]
    SdWsu,
    #[serde(rename = "CHAR")]
    Char,
    #[serde(rename = "DISC")]
    Disc,
}

/// Where a run stands. Epoch shuffles derive from `(seed, epoch)`, so
/// `seed` and `epochs_done` are the whole RNG state needed to resume.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub seed: u64,
    pub epochs_done: usize,
    /// Adam step count when Adam moments are stored.
    pub adam_t: Option<u64>,
    /// Mean loss per epoch so far.
    pub history: Vec<f64>,
    /// Discriminator loss per epoch (adversarial adaptation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disc_history: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Index of the first value in `params.bin`, in `f64` units.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    kind: ModelKind,
    config: Value,
    lexicon: Option<Lexicon>,
    state: TrainState,
    entries: Vec<EntryInfo>,
}

/// Discriminator architecture, the configuration of a `DISC` checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscDims {
    pub input: usize,
    pub hidden: usize,
    pub layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    /// Architecture: [`AedDims`] for model kinds, [`DiscDims`] for `DISC`.
    pub config: Value,
    pub lexicon: Option<Lexicon>,
    pub state: TrainState,
    pub params: ParamSet,
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

impl Checkpoint {
    pub fn for_model(kind: ModelKind, model: &AedParams, lexicon: &Lexicon, state: TrainState) -> Result<Self> {
        if !matches!(kind, ModelKind::SiWsu | ModelKind::SdWsu) {
            return contract("WSU model checkpoints are SI-WSU or SD-WSU");
        }
        Ok(Checkpoint {
            kind,
            config: to_value(&model.dims),
            lexicon: Some(lexicon.clone()),
            state,
            params: model.params.clone(),
        })
    }

    /// Character branch plus a copy of the encoder it was trained on.
    pub fn for_char(char_model: &CharAedParams, si: &AedParams, lexicon: &Lexicon, state: TrainState) -> Result<Self> {
        char_model.check_encoder(&si.dims)?;
        let mut params = char_model.params.clone();
        params.extend_from(&si.params.select(is_encoder_param));
        Ok(Checkpoint {
            kind: ModelKind::Char,
            config: to_value(&char_model.dims),
            lexicon: Some(lexicon.clone()),
            state,
            params,
        })
    }

    pub fn for_disc(params: &ParamSet, dims: DiscDims, state: TrainState) -> Self {
        Checkpoint {
            kind: ModelKind::Disc,
            config: to_value(&dims),
            lexicon: None,
            state,
            params: params.clone(),
        }
    }

    /// Stores Adam moments next to the parameters; SGD has no state.
    pub fn set_optimizer(&mut self, opt: &Optimizer) -> Result<()> {
        let names: Vec<String> = self.params.names().filter(|n| n.starts_with(ADAM_PREFIX)).cloned().collect();
        for n in names {
            self.params.remove(&n);
        }
        self.state.adam_t = None;
        if let Optimizer::Adam(a) = opt {
            let model = self.params.clone();
            for (name, t) in a.state_tensors(&model)? {
                self.params.insert(name, t);
            }
            self.state.adam_t = Some(a.t);
        }
        Ok(())
    }

    /// `fresh` with any stored Adam state restored into it.
    pub fn restore_optimizer(&self, fresh: Optimizer) -> Result<Optimizer> {
        match (fresh, self.state.adam_t) {
            (Optimizer::Adam(mut a), Some(t)) => {
                a.restore(t, &self.params);
                Ok(Optimizer::Adam(a))
            }
            (Optimizer::Adam(_), None) if self.state.epochs_done > 0 => {
                contract("checkpoint holds no Adam state to resume from")
            }
            (o, _) => Ok(o),
        }
    }

    fn model_params(&self) -> ParamSet {
        self.params.select(|n| !n.starts_with(ADAM_PREFIX))
    }

    pub fn dims(&self) -> Result<AedDims> {
        if self.kind == ModelKind::Disc {
            return contract("a discriminator checkpoint has no model dimensions");
        }
        Ok(serde_json::from_value(self.config.clone())?)
    }

    pub fn model(&self) -> Result<AedParams> {
        if !matches!(self.kind, ModelKind::SiWsu | ModelKind::SdWsu) {
            return Err(Error::Format(format!("expected a WSU model checkpoint, found {:?}", self.kind)));
        }
        AedParams::from_params(self.dims()?, self.model_params())
    }

    /// The character branch and the encoder copy stored with it.
    pub fn char_model(&self) -> Result<(CharAedParams, ParamSet)> {
        if self.kind != ModelKind::Char {
            return Err(Error::Format(format!("expected a CHAR checkpoint, found {:?}", self.kind)));
        }
        let p = self.model_params();
        let chr = CharAedParams::from_params(self.dims()?, p.select(|n| !is_encoder_param(n)))?;
        Ok((chr, p.select(is_encoder_param)))
    }

    pub fn disc(&self) -> Result<(ParamSet, DiscDims)> {
        if self.kind != ModelKind::Disc {
            return Err(Error::Format(format!("expected a DISC checkpoint, found {:?}", self.kind)));
        }
        Ok((self.params.clone(), serde_json::from_value(self.config.clone())?))
    }

    /// Refuses a checkpoint built for a different architecture.
    pub fn check_dims(&self, expected: &AedDims) -> Result<()> {
        let got = self.dims()?;
        if &got != expected {
            return Err(Error::Format(format!(
                "checkpoint architecture {got:?} does not match configured {expected:?}"
            )));
        }
        Ok(())
    }

    pub fn check_lexicon(&self, lexicon: &Lexicon) -> Result<()> {
        match &self.lexicon {
            Some(l) if l == lexicon => Ok(()),
            Some(_) => Err(Error::Format("checkpoint was trained on a different lexicon".into())),
            None => Err(Error::Format("checkpoint records no lexicon".into())),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.params.len());
        let mut blob = Vec::with_capacity(self.params.num_values() * 8);
        let mut offset = 0;
        for (name, t) in self.params.iter() {
            entries.push(EntryInfo {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            lexicon: self.lexicon.clone(),
            state: self.state.clone(),
            entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        fs::write(dir.join("params.bin"), blob)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        if m.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {} (expected {CHECKPOINT_VERSION})",
                m.format_version
            )));
        }
        let values = read_f64s(&fs::read(dir.join("params.bin"))?)?;
        let mut params = ParamSet::new();
        let mut expected_offset = 0;
        for e in &m.entries {
            let n: usize = e.shape.iter().product();
            if e.offset != expected_offset || e.offset + n > values.len() {
                return Err(Error::Format(format!("entry {} does not fit params.bin", e.name)));
            }
            params.insert(e.name.clone(), Tensor::new(e.shape.clone(), values[e.offset..e.offset + n].to_vec())?);
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(Error::Format(format!(
                "params.bin holds {} values, manifest lists {expected_offset}",
                values.len()
            )));
        }
        let ck = Checkpoint {
            kind: m.kind,
            config: m.config,
            lexicon: m.lexicon,
            state: m.state,
            params,
        };
        // Shapes must agree with the recorded architecture.
        match ck.kind {
            ModelKind::SiWsu | ModelKind::SdWsu => {
                ck.model()?;
            }
            ModelKind::Char => {
                let (chr, enc) = ck.char_model()?;
                let wsu = AedDims { vocab: 3, ..chr.dims.clone() };
                let mut want: Vec<(String, Vec<usize>)> =
                    AedParams::expected_shapes(&wsu).into_iter().filter(|(n, _)| is_encoder_param(n)).collect();
                want.sort();
                let got: Vec<(String, Vec<usize>)> = enc.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
                if got != want {
                    return Err(Error::Format("stored encoder copy does not match the character model".into()));
                }
            }
            ModelKind::Disc => {
                let (p, d) = ck.disc()?;
                let mut want = ParamSet::new();
                crate::nn::init_discriminator(&mut want, d.input, d.hidden, d.layers, 0.0, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
                let shapes = |s: &ParamSet| s.iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>();
                if shapes(&p) != shapes(&want) {
                    return Err(Error::Format("discriminator entries do not match its dimensions".into()));
                }
            }
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests;
