//! Versioned binary container for checkpoints and datasets.
//!
//! Layout: an eight-byte magic, a format version, a metadata section of
//! typed key-value pairs, then named row-major float64 matrices. Everything
//! is little-endian and written in a fixed order, so identical contents
//! produce identical bytes and round-trips are byte-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::failure::{Calibration, CalibrationEntry};
use crate::nets::{
    CriticNet, DenseLayer, GeneratorNet, LinearClassifier, ModelBundle, SelectionMatrix,
};
use crate::objective::LossWeights;
use crate::simdata::{Scenario, ScenarioConfig, SensorBatch};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MMFUSE\x00\x01";
const VERSION: u32 = 1;

/// Typed metadata value.
#[derive(Debug, Clone, PartialEq)]
pub enum MetaValue {
    U64(u64),
    F64(f64),
    Str(String),
    U64List(Vec<u64>),
    F64List(Vec<f64>),
}

impl MetaValue {
    pub fn as_u64(&self) -> Result<u64> {
        match self {
            MetaValue::U64(v) => Ok(*v),
            other => Err(Error::Format(format!("expected u64 metadata, got {other:?}"))),
        }
    }

    pub fn as_f64(&self) -> Result<f64> {
        match self {
            MetaValue::F64(v) => Ok(*v),
            other => Err(Error::Format(format!("expected f64 metadata, got {other:?}"))),
        }
    }

    pub fn as_str(&self) -> Result<&str> {
        match self {
            MetaValue::Str(v) => Ok(v),
            other => Err(Error::Format(format!("expected string metadata, got {other:?}"))),
        }
    }

    pub fn as_u64_list(&self) -> Result<&[u64]> {
        match self {
            MetaValue::U64List(v) => Ok(v),
            other => Err(Error::Format(format!("expected u64 list metadata, got {other:?}"))),
        }
    }

    pub fn as_f64_list(&self) -> Result<&[f64]> {
        match self {
            MetaValue::F64List(v) => Ok(v),
            other => Err(Error::Format(format!("expected f64 list metadata, got {other:?}"))),
        }
    }
}

/// In-memory container: ordered metadata plus named matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, MetaValue>,
    pub matrices: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        let mut c = Container::default();
        c.meta.insert("kind".to_string(), MetaValue::Str(kind.to_string()));
        c
    }

    pub fn kind(&self) -> Result<&str> {
        self.require("kind")?.as_str()
    }

    pub fn require(&self, key: &str) -> Result<&MetaValue> {
        self.meta
            .get(key)
            .ok_or_else(|| Error::Format(format!("missing metadata key '{key}'")))
    }

    pub fn matrix(&self, name: &str) -> Result<&Tensor> {
        self.matrices
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing matrix '{name}'")))
    }

    pub fn insert_matrix(&mut self, name: &str, t: &Tensor) -> Result<()> {
        if t.rank() != 2 {
            return Err(Error::Contract(format!(
                "container matrices are rank-2, '{name}' has shape {:?}",
                t.shape()
            )));
        }
        self.matrices.insert(name.to_string(), t.clone());
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;

        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        for (key, value) in &self.meta {
            write_str(w, key)?;
            match value {
                MetaValue::U64(v) => {
                    w.write_all(&[0u8])?;
                    w.write_all(&v.to_le_bytes())?;
                }
                MetaValue::F64(v) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&v.to_bits().to_le_bytes())?;
                }
                MetaValue::Str(v) => {
                    w.write_all(&[2u8])?;
                    write_str(w, v)?;
                }
                MetaValue::U64List(v) => {
                    w.write_all(&[3u8])?;
                    w.write_all(&(v.len() as u32).to_le_bytes())?;
                    for item in v {
                        w.write_all(&item.to_le_bytes())?;
                    }
                }
                MetaValue::F64List(v) => {
                    w.write_all(&[4u8])?;
                    w.write_all(&(v.len() as u32).to_le_bytes())?;
                    for item in v {
                        w.write_all(&item.to_bits().to_le_bytes())?;
                    }
                }
            }
        }

        w.write_all(&(self.matrices.len() as u32).to_le_bytes())?;
        for (name, t) in &self.matrices {
            write_str(w, name)?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Container> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic: not a container file".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!(
                "unsupported container version {version}, expected {VERSION}"
            )));
        }

        let mut meta = BTreeMap::new();
        let meta_count = read_u32(r)?;
        for _ in 0..meta_count {
            let key = read_str(r)?;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            let value = match tag[0] {
                0 => MetaValue::U64(read_u64(r)?),
                1 => MetaValue::F64(f64::from_bits(read_u64(r)?)),
                2 => MetaValue::Str(read_str(r)?),
                3 => {
                    let n = read_u32(r)? as usize;
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        v.push(read_u64(r)?);
                    }
                    MetaValue::U64List(v)
                }
                4 => {
                    let n = read_u32(r)? as usize;
                    let mut v = Vec::with_capacity(n);
                    for _ in 0..n {
                        v.push(f64::from_bits(read_u64(r)?));
                    }
                    MetaValue::F64List(v)
                }
                t => return Err(Error::Format(format!("unknown metadata tag {t}"))),
            };
            meta.insert(key, value);
        }

        let mut matrices = BTreeMap::new();
        let matrix_count = read_u32(r)?;
        for _ in 0..matrix_count {
            let name = read_str(r)?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let count = rows.checked_mul(cols).ok_or_else(|| {
                Error::Format(format!("matrix '{name}' dimensions overflow"))
            })?;
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f64::from_bits(read_u64(r)?));
            }
            let t = Tensor::from_vec(vec![rows, cols], data)
                .map_err(|e| Error::Format(format!("matrix '{name}': {e}")))?;
            matrices.insert(name, t);
        }

        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after container".into()));
        }
        Ok(Container { meta, matrices })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Container> {
        let bytes = std::fs::read(path)?;
        Container::read_from(&mut bytes.as_slice())
    }
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 20 {
        return Err(Error::Format(format!("unreasonable string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(format!("invalid utf8: {e}")))
}

// --- checkpoint encoding -------------------------------------------------

/// Packs a model bundle (and optional detector calibration) into a container.
pub fn checkpoint_to_container(
    bundle: &ModelBundle,
    calibration: Option<&Calibration>,
) -> Result<Container> {
    let mut c = Container::new("checkpoint");
    let meta = &mut c.meta;
    meta.insert("seed".into(), MetaValue::U64(bundle.seed));
    meta.insert("epoch".into(), MetaValue::U64(bundle.epoch as u64));
    meta.insert("modalities".into(), MetaValue::U64(bundle.modalities() as u64));
    meta.insert(
        "gen_body_layers".into(),
        MetaValue::U64(bundle.generators[0].body.len() as u64),
    );
    meta.insert(
        "critic_layers".into(),
        MetaValue::U64(bundle.critic.layers.len() as u64),
    );
    meta.insert("gamma1".into(), MetaValue::F64(bundle.hyper.gamma1));
    meta.insert("gamma2".into(), MetaValue::F64(bundle.hyper.gamma2));
    meta.insert("gamma3".into(), MetaValue::F64(bundle.hyper.gamma3));
    meta.insert("clamp_box".into(), MetaValue::F64(bundle.hyper.clamp_box));
    meta.insert("mu_g".into(), MetaValue::F64(bundle.hyper.mu_g));
    meta.insert("mu_d".into(), MetaValue::F64(bundle.hyper.mu_d));
    meta.insert(
        "train_accuracy".into(),
        MetaValue::F64List(bundle.train_accuracy.clone()),
    );

    for (l, g) in bundle.generators.iter().enumerate() {
        for (i, layer) in g.body.iter().enumerate() {
            c.insert_matrix(&format!("gen{l}.layer{i}.weight"), &layer.w)?;
            c.insert_matrix(&format!("gen{l}.layer{i}.bias"), &layer.b)?;
        }
        c.insert_matrix(&format!("gen{l}.square_op"), &g.out_op)?;
    }
    for (l, s) in bundle.selectors.iter().enumerate() {
        c.insert_matrix(&format!("sel{l}"), &s.s)?;
    }
    for (l, cls) in bundle.classifiers.iter().enumerate() {
        c.insert_matrix(&format!("cls{l}.weight"), &cls.w)?;
        c.insert_matrix(&format!("cls{l}.bias"), &cls.b)?;
    }
    for (i, layer) in bundle.critic.layers.iter().enumerate() {
        c.insert_matrix(&format!("critic.layer{i}.weight"), &layer.w)?;
        c.insert_matrix(&format!("critic.layer{i}.bias"), &layer.b)?;
    }

    if let Some(cal) = calibration {
        let n = cal.entries.len();
        let mut data = Vec::with_capacity(5 * n);
        for e in &cal.entries {
            data.push(e.snr_db);
            data.push(e.est_snr_db);
            data.push(e.threshold);
            data.push(e.youden_j);
            data.push(if e.low_confidence { 1.0 } else { 0.0 });
        }
        // Non-finite SNR keys (clean grid points) are legal; store bits via
        // a finite encoding to honor the tensor invariant.
        let encoded: Vec<f64> = data
            .iter()
            .map(|v| if v.is_finite() { *v } else { v.signum() * 1e300 })
            .collect();
        c.insert_matrix("calibration", &Tensor::from_vec(vec![n, 5], encoded)?)?;
    }
    Ok(c)
}

/// Rebuilds a model bundle (and calibration, when present) from a container.
pub fn checkpoint_from_container(c: &Container) -> Result<(ModelBundle, Option<Calibration>)> {
    if c.kind()? != "checkpoint" {
        return Err(Error::Format(format!("expected checkpoint, got '{}'", c.kind()?)));
    }
    let modalities = c.require("modalities")?.as_u64()? as usize;
    let body_layers = c.require("gen_body_layers")?.as_u64()? as usize;
    let critic_layers = c.require("critic_layers")?.as_u64()? as usize;

    let param = |name: &str| -> Result<Tensor> {
        Ok(c.matrix(name)?.clone().into_param(name))
    };

    let mut generators = Vec::with_capacity(modalities);
    let mut selectors = Vec::with_capacity(modalities);
    let mut classifiers = Vec::with_capacity(modalities);
    for l in 0..modalities {
        let mut body = Vec::with_capacity(body_layers);
        for i in 0..body_layers {
            body.push(DenseLayer {
                w: param(&format!("gen{l}.layer{i}.weight"))?,
                b: param(&format!("gen{l}.layer{i}.bias"))?,
            });
        }
        generators.push(GeneratorNet {
            body,
            out_op: param(&format!("gen{l}.square_op"))?,
        });
        selectors.push(SelectionMatrix {
            s: param(&format!("sel{l}"))?,
        });
        classifiers.push(LinearClassifier {
            w: param(&format!("cls{l}.weight"))?,
            b: param(&format!("cls{l}.bias"))?,
        });
    }
    let mut dlayers = Vec::with_capacity(critic_layers);
    for i in 0..critic_layers {
        dlayers.push(DenseLayer {
            w: param(&format!("critic.layer{i}.weight"))?,
            b: param(&format!("critic.layer{i}.bias"))?,
        });
    }

    let hyper = LossWeights {
        gamma1: c.require("gamma1")?.as_f64()?,
        gamma2: c.require("gamma2")?.as_f64()?,
        gamma3: c.require("gamma3")?.as_f64()?,
        clamp_box: c.require("clamp_box")?.as_f64()?,
        mu_g: c.require("mu_g")?.as_f64()?,
        mu_d: c.require("mu_d")?.as_f64()?,
    };

    let bundle = ModelBundle {
        generators,
        selectors,
        classifiers,
        critic: CriticNet { layers: dlayers },
        hyper,
        seed: c.require("seed")?.as_u64()?,
        epoch: c.require("epoch")?.as_u64()? as usize,
        train_accuracy: c.require("train_accuracy")?.as_f64_list()?.to_vec(),
    };

    let calibration = match c.matrices.get("calibration") {
        None => None,
        Some(t) => {
            let mut entries = Vec::with_capacity(t.rows());
            for r in 0..t.rows() {
                let decode = |v: f64| {
                    if v.abs() >= 1e300 {
                        v.signum() * f64::INFINITY
                    } else {
                        v
                    }
                };
                entries.push(CalibrationEntry {
                    snr_db: decode(t.at(r, 0)),
                    est_snr_db: decode(t.at(r, 1)),
                    threshold: t.at(r, 2),
                    youden_j: t.at(r, 3),
                    low_confidence: t.at(r, 4) != 0.0,
                });
            }
            Some(Calibration { entries })
        }
    };

    Ok((bundle, calibration))
}

// --- dataset encoding ----------------------------------------------------

/// Packs a generated scenario into a container.
pub fn scenario_to_container(s: &Scenario) -> Result<Container> {
    let mut c = Container::new("dataset");
    let cfg = &s.config;
    let meta = &mut c.meta;
    meta.insert("seed".into(), MetaValue::U64(cfg.seed));
    meta.insert("modalities".into(), MetaValue::U64(cfg.modalities as u64));
    meta.insert("classes".into(), MetaValue::U64(cfg.classes as u64));
    meta.insert("latent_dim".into(), MetaValue::U64(cfg.latent_dim as u64));
    meta.insert(
        "private_dims".into(),
        MetaValue::U64List(cfg.private_dims.iter().map(|&v| v as u64).collect()),
    );
    meta.insert(
        "obs_dims".into(),
        MetaValue::U64List(cfg.obs_dims.iter().map(|&v| v as u64).collect()),
    );
    meta.insert("train_samples".into(), MetaValue::U64(cfg.train_samples as u64));
    meta.insert("test_samples".into(), MetaValue::U64(cfg.test_samples as u64));
    meta.insert("class_separation".into(), MetaValue::F64(cfg.class_separation));
    meta.insert(
        "nonlinear".into(),
        MetaValue::U64(if cfg.nonlinear { 1 } else { 0 }),
    );

    let encode_split = |c: &mut Container, tag: &str, batches: &[SensorBatch]| -> Result<()> {
        for (l, b) in batches.iter().enumerate() {
            c.insert_matrix(&format!("{tag}.x{l}"), &b.x)?;
        }
        c.insert_matrix(&format!("{tag}.labels"), &batches[0].labels)?;
        c.insert_matrix(&format!("{tag}.latent"), &batches[0].true_latent)?;
        Ok(())
    };
    encode_split(&mut c, "train", &s.train)?;
    if !s.test.is_empty() && s.test[0].samples() > 0 {
        encode_split(&mut c, "test", &s.test)?;
    }
    Ok(c)
}

/// Rebuilds a scenario from a container. Per-sample SNR and damage flags
/// reset to clean; damage is injected downstream of loading.
pub fn scenario_from_container(c: &Container) -> Result<Scenario> {
    if c.kind()? != "dataset" {
        return Err(Error::Format(format!("expected dataset, got '{}'", c.kind()?)));
    }
    let modalities = c.require("modalities")?.as_u64()? as usize;
    let config = ScenarioConfig {
        modalities,
        classes: c.require("classes")?.as_u64()? as usize,
        latent_dim: c.require("latent_dim")?.as_u64()? as usize,
        private_dims: c
            .require("private_dims")?
            .as_u64_list()?
            .iter()
            .map(|&v| v as usize)
            .collect(),
        obs_dims: c
            .require("obs_dims")?
            .as_u64_list()?
            .iter()
            .map(|&v| v as usize)
            .collect(),
        train_samples: c.require("train_samples")?.as_u64()? as usize,
        test_samples: c.require("test_samples")?.as_u64()? as usize,
        class_separation: c.require("class_separation")?.as_f64()?,
        nonlinear: c.require("nonlinear")?.as_u64()? != 0,
        seed: c.require("seed")?.as_u64()?,
    };

    let decode_split = |tag: &str| -> Result<Vec<SensorBatch>> {
        let labels = c.matrix(&format!("{tag}.labels"))?.clone();
        let latent = c.matrix(&format!("{tag}.latent"))?.clone();
        let n = labels.cols();
        (0..modalities)
            .map(|l| {
                Ok(SensorBatch {
                    x: c.matrix(&format!("{tag}.x{l}"))?.clone(),
                    labels: labels.clone(),
                    true_latent: latent.clone(),
                    snr_db: vec![f64::INFINITY; n],
                    damaged: vec![false; n],
                })
            })
            .collect()
    };

    let train = decode_split("train")?;
    let test = if c.matrices.contains_key("test.labels") {
        decode_split("test")?
    } else {
        Vec::new()
    };
    Ok(Scenario { config, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{init_params, NetConfig};
    use crate::simdata::generate_scenario;

    #[test]
    fn container_round_trip_is_byte_exact() {
        let mut c = Container::new("test");
        c.meta.insert("answer".into(), MetaValue::U64(42));
        c.meta.insert("pi".into(), MetaValue::F64(std::f64::consts::PI));
        c.meta.insert("note".into(), MetaValue::Str("hello".into()));
        c.meta.insert("dims".into(), MetaValue::U64List(vec![3, 4, 5]));
        c.meta.insert("grid".into(), MetaValue::F64List(vec![0.5, -1.25]));
        c.insert_matrix(
            "m",
            &Tensor::from_vec(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 5.0, -6.25]).unwrap(),
        )
        .unwrap();

        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();
        let back = Container::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(c, back);

        let mut bytes2 = Vec::new();
        back.write_to(&mut bytes2).unwrap();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn rejects_bad_magic_and_trailing_garbage() {
        let mut c = Container::new("test");
        c.insert_matrix("m", &Tensor::zeros(vec![1, 1])).unwrap();
        let mut bytes = Vec::new();
        c.write_to(&mut bytes).unwrap();

        let mut corrupted = bytes.clone();
        corrupted[0] = b'X';
        assert!(Container::read_from(&mut corrupted.as_slice()).is_err());

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(Container::read_from(&mut trailing.as_slice()).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_bundle() {
        let bundle = init_params(
            &NetConfig {
                obs_dims: vec![6, 5],
                hidden_dim: 4,
                feature_dim: 3,
                classes: 3,
                gen_width: 5,
                gen_layers: 3,
                critic_width: 4,
                critic_layers: 2,
            },
            77,
        )
        .unwrap();
        let cal = Calibration {
            entries: vec![CalibrationEntry {
                snr_db: 0.0,
                est_snr_db: -1.5,
                threshold: 0.4,
                youden_j: 0.9,
                low_confidence: false,
            }],
        };
        let c = checkpoint_to_container(&bundle, Some(&cal)).unwrap();
        let (back, cal_back) = checkpoint_from_container(&c).unwrap();
        assert_eq!(bundle.seed, back.seed);
        assert_eq!(bundle.hyper, back.hyper);
        assert_eq!(cal_back.unwrap(), cal);
        for (a, b) in bundle.all_params().iter().zip(back.all_params()) {
            assert_eq!(a.data(), b.data());
            assert_eq!(a.shape(), b.shape());
        }
    }

    #[test]
    fn dataset_round_trip_preserves_scenario() {
        let scenario = generate_scenario(&ScenarioConfig {
            modalities: 2,
            classes: 2,
            latent_dim: 3,
            private_dims: vec![1, 0],
            obs_dims: vec![6, 5],
            train_samples: 20,
            test_samples: 8,
            class_separation: 2.0,
            nonlinear: false,
            seed: 5,
        })
        .unwrap();
        let c = scenario_to_container(&scenario).unwrap();
        let back = scenario_from_container(&c).unwrap();
        assert_eq!(scenario, back);
    }
}
