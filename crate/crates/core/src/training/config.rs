use std::path::{Path, PathBuf};

use crate::config::{KeyValueWriter, KeyValues};
use crate::corpus::{check_probability, DEFAULT_SHUFFLE_PROB};
use crate::error::{Error, Result};
use crate::hybrid::{check_lambda, DEFAULT_LAMBDA};
use crate::model::ModelDims;
use crate::phoneset::InventoryMode;

/// Everything the three-stage pipeline needs. Corpus paths are kept as
/// written and resolved against `base_dir` when used.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub inventory_mode: InventoryMode,
    pub phones: PathBuf,
    pub l1_manifest: PathBuf,
    pub cp_manifest: PathBuf,
    pub mp_manifest: PathBuf,
    pub dev_manifest: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub epochs: [usize; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub shuffle_prob: f64,
    pub clip_norm: f64,
    pub dims: ModelDims,
    /// Worker threads for per-utterance gradients; results do not depend on it.
    pub threads: usize,
    /// Directory relative paths are resolved against. Not serialized.
    pub base_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            inventory_mode: InventoryMode::PerPhoneAnti,
            phones: "phones.txt".into(),
            l1_manifest: "l1_train.tsv".into(),
            cp_manifest: "cp_train.tsv".into(),
            mp_manifest: "mp_train.tsv".into(),
            dev_manifest: Some("dev.tsv".into()),
            output_dir: "run".into(),
            epochs: [10, 10, 10],
            learning_rate: 1e-3,
            batch_size: 8,
            lambda: DEFAULT_LAMBDA,
            shuffle_prob: DEFAULT_SHUFFLE_PROB,
            clip_norm: 5.0,
            dims: ModelDims::default(),
            threads: 1,
            base_dir: PathBuf::from("."),
        }
    }
}

impl TrainConfig {
    /// A config whose corpus paths point at a generated corpus root.
    pub fn for_corpus(corpus_root: &Path, output_dir: &Path) -> Self {
        TrainConfig {
            output_dir: output_dir.to_owned(),
            base_dir: corpus_root.to_owned(),
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        check_lambda(self.lambda)?;
        check_probability(self.shuffle_prob)
            .map_err(|e| Error::config("shuffle_prob", e.to_string()))?;
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be positive"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be positive"));
        }
        self.dims.validate()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn from_key_values(mut kv: KeyValues, base_dir: &Path) -> Result<Self> {
        let d = TrainConfig::default();
        let dd = ModelDims::default();
        let path = |kv: &mut KeyValues, key: &str, default: PathBuf| -> PathBuf {
            kv.raw(key).map(PathBuf::from).unwrap_or(default)
        };
        let dev_manifest = match kv.raw("dev_manifest") {
            None => d.dev_manifest.clone(),
            Some(s) if s.is_empty() || s == "none" => None,
            Some(s) => Some(PathBuf::from(s)),
        };
        let cfg = TrainConfig {
            seed: kv.get_or("seed", d.seed)?,
            inventory_mode: kv.get_or("inventory_mode", d.inventory_mode)?,
            phones: path(&mut kv, "phones", d.phones),
            l1_manifest: path(&mut kv, "l1_manifest", d.l1_manifest),
            cp_manifest: path(&mut kv, "cp_manifest", d.cp_manifest),
            mp_manifest: path(&mut kv, "mp_manifest", d.mp_manifest),
            dev_manifest,
            output_dir: path(&mut kv, "output_dir", d.output_dir),
            epochs: [
                kv.get_or("epochs_stage1", d.epochs[0])?,
                kv.get_or("epochs_stage2", d.epochs[1])?,
                kv.get_or("epochs_stage3", d.epochs[2])?,
            ],
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lambda: kv.get_or("lambda", d.lambda)?,
            shuffle_prob: kv.get_or("shuffle_prob", d.shuffle_prob)?,
            clip_norm: kv.get_or("clip_norm", d.clip_norm)?,
            dims: ModelDims {
                feat_dim: kv.get_or("feat_dim", dd.feat_dim)?,
                enc_layers: kv.get_or("enc_layers", dd.enc_layers)?,
                enc_hidden: kv.get_or("enc_hidden", dd.enc_hidden)?,
                subsample_layers: kv.get_or("subsample_layers", dd.subsample_layers)?,
                att_dim: kv.get_or("att_dim", dd.att_dim)?,
                conv_filters: kv.get_or("conv_filters", dd.conv_filters)?,
                conv_width: kv.get_or("conv_width", dd.conv_width)?,
                dec_hidden: kv.get_or("dec_hidden", dd.dec_hidden)?,
                embed_dim: kv.get_or("embed_dim", dd.embed_dim)?,
            },
            threads: kv.get_or("threads", d.threads)?,
            base_dir: base_dir.to_owned(),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text, base_dir.join("<config>"))?, base_dir)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn read(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_key_values(KeyValues::read(path)?, base)
    }

    /// Serialized form. `threads` is omitted since it cannot change results.
    pub fn to_text(&self) -> String {
        let p = |p: &Path| p.display().to_string();
        let mut w = KeyValueWriter::new();
        w.put("seed", self.seed)
            .put("inventory_mode", self.inventory_mode.as_str())
            .put("phones", p(&self.phones))
            .put("l1_manifest", p(&self.l1_manifest))
            .put("cp_manifest", p(&self.cp_manifest))
            .put("mp_manifest", p(&self.mp_manifest))
            .put(
                "dev_manifest",
                self.dev_manifest.as_deref().map_or("none".into(), p),
            )
            .put("output_dir", p(&self.output_dir))
            .put("epochs_stage1", self.epochs[0])
            .put("epochs_stage2", self.epochs[1])
            .put("epochs_stage3", self.epochs[2])
            .put("learning_rate", self.learning_rate)
            .put("batch_size", self.batch_size)
            .put("lambda", self.lambda)
            .put("shuffle_prob", self.shuffle_prob)
            .put("clip_norm", self.clip_norm);
        let dm = &self.dims;
        w.put("feat_dim", dm.feat_dim)
            .put("enc_layers", dm.enc_layers)
            .put("enc_hidden", dm.enc_hidden)
            .put("subsample_layers", dm.subsample_layers)
            .put("att_dim", dm.att_dim)
            .put("conv_filters", dm.conv_filters)
            .put("conv_width", dm.conv_width)
            .put("dec_hidden", dm.dec_hidden)
            .put("embed_dim", dm.embed_dim);
        w.finish()
    }
}
