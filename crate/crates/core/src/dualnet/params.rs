//! Named parameter tensors, their layout for a given config, and the binary
//! params file.

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::io::{Read, Write};
use std::ops::{Index, IndexMut};
use std::path::Path;

use super::{ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"FPPARAMS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct LnIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct BlockIds {
    pub ln1: LnIds,
    pub q: LinearIds,
    pub k: LinearIds,
    pub v: LinearIds,
    pub o: LinearIds,
    pub ln2: LnIds,
    pub ff1: LinearIds,
    pub ff2: LinearIds,
}

/// Where every tensor of a model lives in its [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ModelIds {
    pub aspect_mean: ParamId,
    pub aspect_std: ParamId,
    pub aspect_proj: LinearIds,
    pub key_proj: LinearIds,
    pub entity: Vec<BlockIds>,
    pub tok_emb: ParamId,
    pub tok_box: LinearIds,
    pub token: Vec<BlockIds>,
    pub pe_linear: ParamId,
    pub level_emb: ParamId,
    pub dual: Vec<BlockIds>,
    pub scorer_e: ParamId,
    pub scorer_a: ParamId,
    pub scorer_k: ParamId,
    pub scorer_b: ParamId,
    pub scorer_v: ParamId,
    pub null_w: ParamId,
    pub null_b: ParamId,
    pub null_v: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform with Glorot bounds from the tensor's shape.
    Glorot,
    Normal(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<S>>,
    pub trainable: Vec<bool>,
}

impl<S> Default for ParamStore<S> {
    fn default() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), trainable: Vec::new() }
    }
}

impl<S: Scalar> Index<ParamId> for ParamStore<S> {
    type Output = Tensor<S>;
    fn index(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }
}

impl<S: Scalar> IndexMut<ParamId> for ParamStore<S> {
    fn index_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.id(name).map(|i| &self.tensors[i.0])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zero tensors of the same shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> ParamStore<S> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.rows, t.cols)).collect(),
            trainable: self.trainable.clone(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::fill_zero);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            trainable: self.trainable.clone(),
        }
    }
}

struct Builder<'a, S> {
    store: ParamStore<S>,
    rng: &'a mut ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init, trainable: bool) -> ParamId {
        let data: Vec<S> = match init {
            Init::Zeros => vec![S::zero(); rows * cols],
            Init::Ones => vec![S::one(); rows * cols],
            Init::Glorot => {
                let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
                (0..rows * cols).map(|_| S::lit(self.rng.random_range(-a..=a))).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..rows * cols).map(|_| S::lit(dist.sample(self.rng))).collect()
            }
        };
        self.store.names.push(name);
        self.store.tensors.push(Tensor::from_vec(rows, cols, data));
        self.store.trainable.push(trainable);
        ParamId(self.store.len() - 1)
    }

    fn linear(&mut self, name: &str, inp: usize, out: usize, init: Init) -> LinearIds {
        LinearIds { w: self.add(format!("{name}.w"), inp, out, init, true), b: self.add(format!("{name}.b"), 1, out, Init::Zeros, true) }
    }

    fn ln(&mut self, name: &str, d: usize) -> LnIds {
        LnIds { g: self.add(format!("{name}.g"), 1, d, Init::Ones, true), b: self.add(format!("{name}.b"), 1, d, Init::Zeros, true) }
    }

    fn block(&mut self, name: &str, cfg: &ModelConfig) -> BlockIds {
        let d = cfg.d_model;
        BlockIds {
            ln1: self.ln(&format!("{name}.ln1"), d),
            q: self.linear(&format!("{name}.attn.q"), d, d, Init::Glorot),
            k: self.linear(&format!("{name}.attn.k"), d, d, Init::Glorot),
            v: self.linear(&format!("{name}.attn.v"), d, d, Init::Glorot),
            o: self.linear(&format!("{name}.attn.o"), d, d, Init::Glorot),
            ln2: self.ln(&format!("{name}.ln2"), d),
            ff1: self.linear(&format!("{name}.ffn.in"), d, cfg.ffn_dim, Init::Glorot),
            ff2: self.linear(&format!("{name}.ffn.out"), cfg.ffn_dim, d, Init::Glorot),
        }
    }
}

/// Builds the parameter layout for `cfg` with seeded random initial values.
/// Aspect standardization starts at mean 0, std 1 and is not trainable.
pub fn init_params<S: Scalar>(cfg: &ModelConfig) -> (ParamStore<S>, ModelIds) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut b = Builder { store: ParamStore::default(), rng: &mut rng };
    let d = cfg.d_model;
    let f = cfg.feature_dim();
    let h = cfg.scorer_hidden;
    let ids = ModelIds {
        aspect_mean: b.add("aspect.mean".into(), 1, f, Init::Zeros, false),
        aspect_std: b.add("aspect.std".into(), 1, f, Init::Ones, false),
        aspect_proj: b.linear("entity.aspect_proj", f, d, Init::Glorot),
        key_proj: b.linear("entity.key_proj", cfg.aspect_layout.d_t, d, Init::Glorot),
        entity: (0..cfg.entity_encoder_depth).map(|i| b.block(&format!("entity.{i}"), cfg)).collect(),
        tok_emb: b.add("token.embed".into(), cfg.token_buckets, d, Init::Normal(0.1), true),
        tok_box: b.linear("token.box_proj", 4, d, Init::Glorot),
        token: (0..cfg.token_encoder_depth).map(|i| b.block(&format!("token.{i}"), cfg)).collect(),
        pe_linear: b.add("pe.linear".into(), 4, d, Init::Glorot, true),
        level_emb: b.add("dual.level".into(), 3, d, Init::Normal(0.1), true),
        dual: (0..cfg.dual_layers).map(|i| b.block(&format!("dual.{i}"), cfg)).collect(),
        scorer_e: b.add("scorer.w_entity".into(), d, h, Init::Glorot, true),
        scorer_a: b.add("scorer.w_aspect".into(), f, h, Init::Glorot, true),
        scorer_k: b.add("scorer.w_key".into(), d, h, Init::Glorot, true),
        scorer_b: b.add("scorer.b".into(), 1, h, Init::Zeros, true),
        scorer_v: b.add("scorer.v".into(), h, 1, Init::Glorot, true),
        null_w: b.add("scorer.null_w".into(), d, h, Init::Glorot, true),
        null_b: b.add("scorer.null_b".into(), 1, h, Init::Zeros, true),
        null_v: b.add("scorer.null_v".into(), h, 1, Init::Glorot, true),
    };
    (b.store, ids)
}

/// Trained or initialized model: config, tensors and their layout.
#[derive(Debug, Clone)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub store: ParamStore<S>,
    pub ids: ModelIds,
}

impl<S: Scalar> ModelParams<S> {
    pub fn init(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (store, ids) = init_params(config);
        Ok(ModelParams { config: config.clone(), store, ids })
    }

    /// Sets the aspect standardization statistics. Near-constant columns get
    /// std 1 so that zero-filled aspects stay zero.
    pub fn set_standardization(&mut self, mean: &[f64], std: &[f64]) {
        let f = self.config.feature_dim();
        assert_eq!((mean.len(), std.len()), (f, f));
        for j in 0..f {
            self.store[self.ids.aspect_mean].data[j] = S::lit(mean[j]);
            self.store[self.ids.aspect_std].data[j] = S::lit(if std[j] > 1e-6 { std[j] } else { 1.0 });
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for ((name, t), &tr) in self.store.names.iter().zip(&self.store.tensors).zip(&self.store.trainable) {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            out.push(u8::from(tr));
            for &x in &t.data {
                out.extend_from_slice(&(x.to_f64_lossy() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(ModelError::Format("not a params file (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(ModelError::Format(format!("unsupported params version {version}")));
        }
        let cfg_len = read_u32(&mut r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        read_exact(&mut r, &mut cfg_bytes)?;
        let config: ModelConfig = serde_json::from_slice(&cfg_bytes).map_err(|e| ModelError::Format(format!("config header: {e}")))?;
        let mut model = ModelParams::<S>::init(&config)?;
        let count = read_u32(&mut r)? as usize;
        if count != model.store.len() {
            return Err(ModelError::ShapeMismatch(format!("file has {count} tensors, config expects {}", model.store.len())));
        }
        for i in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name).map_err(|_| ModelError::Format("tensor name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut flag = [0u8; 1];
            read_exact(&mut r, &mut flag)?;
            let expected = &model.store.names[i];
            let t = &model.store.tensors[i];
            if &name != expected || (rows, cols) != t.shape() {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {i}: file has {name} {rows}x{cols}, config expects {expected} {}x{}",
                    t.rows, t.cols
                )));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let mut b = [0u8; 4];
                read_exact(&mut r, &mut b)?;
                let x = f32::from_le_bytes(b);
                if !x.is_finite() {
                    return Err(ModelError::Format(format!("tensor {name} holds a non-finite value")));
                }
                data.push(S::lit(f64::from(x)));
            }
            model.store.tensors[i] = Tensor::from_vec(rows, cols, data);
        }
        if !r.is_empty() {
            return Err(ModelError::Format(format!("{} trailing bytes", r.len())));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        f.write_all(&self.to_bytes()).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized params, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|_| ModelError::Format("params file is truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::tiny();
        let a = ModelParams::<f32>::init(&cfg).unwrap();
        let b = ModelParams::<f32>::init(&cfg).unwrap();
        assert_eq!(a.store, b.store);
        let c = ModelParams::<f32>::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.store, c.store);
        assert!(a.store.get("scorer.v").is_some());
        assert!(!a.store.trainable[a.ids.aspect_mean.0]);
    }

    #[test]
    fn names_are_unique() {
        let p = ModelParams::<f32>::init(&ModelConfig::default()).unwrap();
        let mut names = p.store.names.clone();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), p.store.len());
    }

    #[test]
    fn bytes_round_trip() {
        let p = ModelParams::<f32>::init(&ModelConfig::tiny()).unwrap();
        let q = ModelParams::<f32>::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(p.store, q.store);
        assert_eq!(p.config, q.config);
        assert_eq!(p.hash(), q.hash());
        let dir = tempfile::tempdir().unwrap();
        p.save(dir.path().join("m.bin")).unwrap();
        assert_eq!(ModelParams::<f32>::load(dir.path().join("m.bin")).unwrap().store, p.store);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = ModelParams::<f32>::init(&ModelConfig::tiny()).unwrap();
        let bytes = p.to_bytes();
        assert!(matches!(ModelParams::<f32>::from_bytes(&bytes[..bytes.len() - 3]), Err(ModelError::Format(_))));
        assert!(matches!(ModelParams::<f32>::from_bytes(b"NOTPARAMS"), Err(ModelError::Format(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(ModelParams::<f32>::from_bytes(&extra).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        // Rewrite the config header so it no longer matches the tensors.
        let p = ModelParams::<f32>::init(&ModelConfig::tiny()).unwrap();
        let mut other = ModelConfig::tiny();
        other.scorer_hidden = 7;
        let cfg = serde_json::to_vec(&other).unwrap();
        let old_len = serde_json::to_vec(&p.config).unwrap().len();
        let bytes = p.to_bytes();
        let mut forged = bytes[..12].to_vec();
        forged[8..12].copy_from_slice(&VERSION.to_le_bytes());
        forged.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        forged.extend_from_slice(&cfg);
        forged.extend_from_slice(&bytes[16 + old_len..]);
        match ModelParams::<f32>::from_bytes(&forged) {
            Err(ModelError::ShapeMismatch(m)) => assert!(m.contains("scorer"), "{m}"),
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn standardization_guards_constant_columns() {
        let mut p = ModelParams::<f64>::init(&ModelConfig::tiny()).unwrap();
        let f = p.config.feature_dim();
        let mut std = vec![2.0; f];
        std[0] = 0.0;
        p.set_standardization(&vec![0.5; f], &std);
        assert_eq!(p.store[p.ids.aspect_std].data[0], 1.0);
        assert_eq!(p.store[p.ids.aspect_std].data[1], 2.0);
    }
}
