//! JSON checkpoints. Every float is written with 17 significant digits in
//! exponent form, so save -> load -> save reproduces the same bytes.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nets::AnchorSet;
use crate::tensor::Tensor;
use crate::train::ModelBundle;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub step: usize,
    pub anchors: NamedTensor,
    pub params: Vec<NamedTensor>,
}

/// Compact JSON with `{:.16e}` floats.
struct ExactFloats;

impl Formatter for ExactFloats {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

fn named(name: &str, t: &Tensor) -> NamedTensor {
    NamedTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        data: t.data().to_vec(),
    }
}

impl NamedTensor {
    fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.shape.clone(), self.data.clone())
    }
}

impl Checkpoint {
    pub fn capture(config: &RunConfig, bundle: &ModelBundle, step: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            seed: config.seed,
            step,
            anchors: named("anchors", bundle.head.anchors.points()),
            params: bundle.named_params().into_iter().map(|(n, t)| named(&n, t)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats);
        self.serialize(&mut ser).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_slice(bytes).map_err(|e| Error::Config(format!("checkpoint: {e}")))?;
        if ckpt.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the model: architecture from the config echo, values from the
    /// stored tensors. Names and shapes must match exactly.
    pub fn restore(&self) -> Result<ModelBundle> {
        let anchors = AnchorSet::custom(self.anchors.to_tensor()?)?;
        let mut bundle = ModelBundle::with_anchors(&self.config.model, anchors, self.seed)?;
        let names: Vec<(String, Vec<usize>)> = bundle
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != self.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, the configured model has {}",
                self.params.len(),
                names.len()
            )));
        }
        for ((name, shape), stored) in names.iter().zip(&self.params) {
            if *name != stored.name || *shape != stored.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor {} {:?} does not match model tensor {name} {shape:?}",
                    stored.name, stored.shape
                )));
            }
        }
        for (p, stored) in bundle.params_mut().into_iter().zip(&self.params) {
            *p = stored.to_tensor()?;
        }
        if !bundle.head.iacnn.is_nonneg() {
            return Err(Error::Contract("checkpoint holds negative A^(z) entries".into()));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip_exactly() {
        let cfg = RunConfig::default();
        let bundle = ModelBundle::new(&cfg.model, 3).unwrap();
        let ckpt = Checkpoint::capture(&cfg, &bundle, 17);
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes(), bytes);
        let restored = back.restore().unwrap();
        assert_eq!(
            restored.named_params().iter().map(|(_, t)| (*t).clone()).collect::<Vec<_>>(),
            bundle.named_params().iter().map(|(_, t)| (*t).clone()).collect::<Vec<_>>()
        );
        assert_eq!(restored.head.anchors.points(), bundle.head.anchors.points());
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        let t = NamedTensor {
            name: "x".into(),
            shape: vec![1, 2],
            data: vec![0.1, 0.5],
        };
        let mut out = Vec::new();
        t.serialize(&mut serde_json::Serializer::with_formatter(&mut out, ExactFloats)).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("5.0000000000000000e-1"), "{text}");
    }

    #[test]
    fn rejects_other_versions_and_shapes() {
        let cfg = RunConfig::default();
        let bundle = ModelBundle::new(&cfg.model, 3).unwrap();
        let mut ckpt = Checkpoint::capture(&cfg, &bundle, 0);
        ckpt.format_version = 99;
        assert!(Checkpoint::from_bytes(&ckpt.to_bytes()).is_err());
        ckpt.format_version = FORMAT_VERSION;
        ckpt.params[0].shape = vec![1, 1];
        ckpt.params[0].data = vec![0.0];
        assert!(ckpt.restore().is_err());
    }
}
