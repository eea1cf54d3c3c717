//! Trainable merge scorers: the 3D CNN over evidence cubes, the fusion SVM
//! over all scores and features, and the `model.aprf` container.

mod cnn;
mod fusion;
mod scalar;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cnn::{
    bce_with_logit, cnn_forward, cnn_train, grad_check, random_params, sigmoid, train_log_csv, CnnConfig, CnnParams,
    ConvBlock, EpochLog, Network, TrainHyper,
};
pub use fusion::{
    best_bias, fusion_input, fusion_train, hinge_train, platt_fit, svm_objective, FusionParams, DEFAULT_LAMBDA,
    FUSION_DIM, HOLDOUT_EVERY,
};
pub use scalar::Scalar;

use crate::error::{Error, Result};
use crate::evidence::EvidenceTensor;

pub const MODEL_MAGIC: &[u8; 4] = b"APRF";
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Version of the fusion input layout `[cnn, baseline, shape(32), connectivity(28)]`.
pub const FEATURE_LAYOUT_VERSION: u32 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub cnn_config: CnnConfig,
    pub cnn: CnnParams,
    /// `None` until the fusion stage has been trained.
    pub fusion: Option<FusionParams>,
    pub feature_layout_version: u32,
    /// Hex digest identifying the training data and seeds.
    pub train_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    cnn: CnnConfig,
    fusion: Option<FusionParams>,
    feature_layout_version: u32,
    train_fingerprint: String,
    tensor_lengths: Vec<usize>,
}

/// Streaming digest for [`ModelBundle::train_fingerprint`].
#[derive(Clone, Default)]
pub struct Fingerprint(Sha256);

impl Fingerprint {
    pub fn new() -> Self {
        Fingerprint::default()
    }

    pub fn add(&mut self, bytes: &[u8]) -> &mut Self {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn add_u64(&mut self, v: u64) -> &mut Self {
        self.add(&v.to_le_bytes())
    }

    /// First 16 hex digits of the digest.
    pub fn finish(&self) -> String {
        hex::encode(&self.0.clone().finalize()[..8])
    }
}

/// Per-candidate scores from a bundle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub cnn: f64,
    pub fusion: f64,
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.cnn.check(&self.cnn_config)?;
        let header = Header {
            cnn: self.cnn_config.clone(),
            fusion: self.fusion.clone(),
            feature_layout_version: self.feature_layout_version,
            train_fingerprint: self.train_fingerprint.clone(),
            tensor_lengths: self.cnn.tensors.iter().map(Vec::len).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidModel(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.cnn.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.cnn.tensors.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidModel(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MODEL_MAGIC {
            return Err(bad("missing APRF magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported model format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::InvalidModel(e.to_string()))?;
        if header.tensor_lengths != header.cnn.param_lengths() {
            return Err(bad("tensor lengths disagree with the network configuration"));
        }
        let mut rest = &bytes[12 + hlen..];
        let total: usize = header.tensor_lengths.iter().sum();
        if rest.len() != 4 * total {
            return Err(Error::InvalidModel(format!(
                "expected {} parameter bytes, found {}",
                4 * total,
                rest.len()
            )));
        }
        let mut tensors = Vec::with_capacity(header.tensor_lengths.len());
        for &n in &header.tensor_lengths {
            let (head, tail) = rest.split_at(4 * n);
            tensors.push(head.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect());
            rest = tail;
        }
        let bundle = ModelBundle {
            cnn_config: header.cnn,
            cnn: CnnParams { tensors },
            fusion: header.fusion,
            feature_layout_version: header.feature_layout_version,
            train_fingerprint: header.train_fingerprint,
        };
        bundle.cnn.check(&bundle.cnn_config)?;
        if let Some(f) = &bundle.fusion {
            f.validate(FUSION_DIM)?;
        }
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn network(&self) -> Result<Network<f32>> {
        Network::new(&self.cnn_config, &self.cnn)
    }

    /// `source` string for decisions taken by this model.
    pub fn source(&self) -> crate::workflow::DecisionSource {
        crate::workflow::DecisionSource::Auto(self.train_fingerprint.clone())
    }
}

/// Scores one candidate. `shape` and `connectivity` are required; a missing
/// or short vector is an error.
pub fn score(
    bundle: &ModelBundle,
    net: &Network<f32>,
    tensor: &EvidenceTensor,
    baseline: f64,
    shape: Option<&[f64]>,
    connectivity: Option<&[f64]>,
) -> Result<Scores> {
    if bundle.feature_layout_version != FEATURE_LAYOUT_VERSION {
        return Err(Error::LayoutMismatch(format!(
            "model uses feature layout {}, this build reads {}",
            bundle.feature_layout_version, FEATURE_LAYOUT_VERSION
        )));
    }
    let (Some(shape), Some(conn)) = (shape, connectivity) else {
        return Err(Error::MissingFeatures("shape and connectivity features are required".into()));
    };
    let fusion = bundle
        .fusion
        .as_ref()
        .ok_or_else(|| Error::InvalidModel("model has no trained fusion stage".into()))?;
    let cnn = net.probability(tensor)?;
    let x = fusion_input(cnn, baseline, shape, conn)?;
    Ok(Scores {
        cnn,
        fusion: fusion.probability(&x)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::{CONN_LEN, SHAPE_LEN};
    use crate::volume::Voxel;

    fn bundle() -> ModelBundle {
        let cfg = CnnConfig {
            input_edge: 5,
            in_channels: 4,
            conv_blocks: vec![ConvBlock::new(2)],
            fc_widths: vec![3],
            seed: 9,
        };
        let data: Vec<(Vec<f64>, bool)> = (0..20)
            .map(|i| ((0..FUSION_DIM).map(|j| ((i * j) % 7) as f64).collect(), i % 2 == 0))
            .collect();
        ModelBundle {
            cnn: CnnParams::init(&cfg).unwrap(),
            cnn_config: cfg,
            fusion: Some(fusion_train(&data, 1e-2, 0).unwrap()),
            feature_layout_version: FEATURE_LAYOUT_VERSION,
            train_fingerprint: Fingerprint::new().add(b"x").finish(),
        }
    }

    fn tensor() -> EvidenceTensor {
        let gray = (0..125).map(|i| (i * 2) as u8).collect();
        let masks = (0..125).map(|i| [0u8, 1, 2, 4][i % 4]).collect();
        EvidenceTensor::from_parts(5, Voxel::new(2, 2, 2), gray, masks).unwrap()
    }

    #[test]
    fn bundle_round_trip_is_bit_identical() {
        let b = bundle();
        let bytes = b.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"APRF");
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(ModelBundle::from_bytes(&truncated).is_err());
        assert!(ModelBundle::from_bytes(b"NOPE00000000").is_err());
    }

    #[test]
    fn scoring_contract() {
        let b = bundle();
        let net = b.network().unwrap();
        let t = tensor();
        let (s, c) = (vec![0.1; SHAPE_LEN], vec![1.0; CONN_LEN]);
        let x = score(&b, &net, &t, 0.3, Some(&s), Some(&c)).unwrap();
        assert!((0.0..=1.0).contains(&x.cnn) && (0.0..=1.0).contains(&x.fusion));
        assert_eq!(score(&b, &net, &t.clone(), 0.3, Some(&s), Some(&c)).unwrap(), x);
        assert!(matches!(score(&b, &net, &t, 0.3, None, Some(&c)), Err(Error::MissingFeatures(_))));
        let reloaded = ModelBundle::from_bytes(&b.to_bytes().unwrap()).unwrap();
        assert_eq!(score(&reloaded, &reloaded.network().unwrap(), &t, 0.3, Some(&s), Some(&c)).unwrap(), x);
        let mut old = b.clone();
        old.feature_layout_version = 0;
        assert!(matches!(score(&old, &net, &t, 0.3, Some(&s), Some(&c)), Err(Error::LayoutMismatch(_))));
        let mut cnn_only = b.clone();
        cnn_only.fusion = None;
        assert_eq!(ModelBundle::from_bytes(&cnn_only.to_bytes().unwrap()).unwrap(), cnn_only);
        assert!(matches!(score(&cnn_only, &net, &t, 0.3, Some(&s), Some(&c)), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn fingerprint_is_length_prefixed() {
        let a = Fingerprint::new().add(b"ab").add(b"c").finish();
        let b = Fingerprint::new().add(b"a").add(b"bc").finish();
        assert_ne!(a, b);
        assert_eq!(a.len(), 16);
    }
}
