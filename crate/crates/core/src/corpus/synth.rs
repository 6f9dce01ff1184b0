//! Seeded synthetic L2 corpus: Gaussian phone prototypes, categorical
//! substitutions and "in between" distortions toward foreign prototypes.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use super::formats::{write_features, write_manifest, Features, ManifestEntry};
use crate::config::{KeyValueWriter, KeyValues, Range};
use crate::error::{Error, Result};
use crate::phoneset::{InventoryMode, PhoneInventory, ANTI_MARKER};
use crate::seeding::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub phones: Vec<String>,
    pub native_utterances: usize,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub phones_per_utterance: Range<usize>,
    pub frames_per_phone: Range<usize>,
    pub feature_dim: usize,
    pub categorical_rate: f64,
    pub anti_rate: f64,
    /// Weight on the phone's own prototype in a distortion.
    pub blend: Range<f64>,
    pub noise: f64,
    /// Number of foreign prototypes distortions are pulled toward.
    pub l1_prototypes: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            phones: ["aa", "iy", "uw", "eh", "s", "t", "m", "n"]
                .map(String::from)
                .to_vec(),
            native_utterances: 1000,
            train_utterances: 2000,
            dev_utterances: 100,
            test_utterances: 200,
            phones_per_utterance: Range { lo: 3, hi: 8 },
            frames_per_phone: Range { lo: 5, hi: 9 },
            feature_dim: 8,
            categorical_rate: 0.1,
            anti_rate: 0.1,
            blend: Range { lo: 0.2, hi: 0.5 },
            noise: 0.3,
            l1_prototypes: 4,
            seed: 42,
        }
    }
}

fn rate(key: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::config(key, format!("{v} outside [0, 1]")));
    }
    Ok(())
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        PhoneInventory::build(&self.phones, InventoryMode::PerPhoneAnti)
            .map_err(|e| Error::config("phones", e.to_string()))?;
        if self.phones.len() < 2 {
            return Err(Error::config(
                "phones",
                "at least two phones are needed for substitution draws",
            ));
        }
        rate("categorical_rate", self.categorical_rate)?;
        rate("anti_rate", self.anti_rate)?;
        if self.categorical_rate + self.anti_rate > 1.0 {
            return Err(Error::config(
                "anti_rate",
                "categorical_rate + anti_rate exceeds 1",
            ));
        }
        if self.phones_per_utterance.lo == 0 {
            return Err(Error::config("phones_per_utterance", "must be at least 1"));
        }
        if self.frames_per_phone.lo == 0 {
            return Err(Error::config("frames_per_phone", "must be at least 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.blend.lo) || !(0.0..=1.0).contains(&self.blend.hi) {
            return Err(Error::config("blend", "bounds must lie in [0, 1]"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and non-negative"));
        }
        if self.anti_rate > 0.0 && self.l1_prototypes == 0 {
            return Err(Error::config(
                "l1_prototypes",
                "distortions need at least one foreign prototype",
            ));
        }
        Ok(())
    }

    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = SynthSpec::default();
        let phones = match kv.raw("phones") {
            Some(s) => s.split_whitespace().map(String::from).collect(),
            None => d.phones,
        };
        let spec = SynthSpec {
            phones,
            native_utterances: kv.get_or("native_utterances", d.native_utterances)?,
            train_utterances: kv.get_or("train_utterances", d.train_utterances)?,
            dev_utterances: kv.get_or("dev_utterances", d.dev_utterances)?,
            test_utterances: kv.get_or("test_utterances", d.test_utterances)?,
            phones_per_utterance: kv.get_or("phones_per_utterance", d.phones_per_utterance)?,
            frames_per_phone: kv.get_or("frames_per_phone", d.frames_per_phone)?,
            feature_dim: kv.get_or("feature_dim", d.feature_dim)?,
            categorical_rate: kv.get_or("categorical_rate", d.categorical_rate)?,
            anti_rate: kv.get_or("anti_rate", d.anti_rate)?,
            blend: kv.get_or("blend", d.blend)?,
            noise: kv.get_or("noise", d.noise)?,
            l1_prototypes: kv.get_or("l1_prototypes", d.l1_prototypes)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::parse(text, path)?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::read(path)?)
    }

    pub fn to_text(&self) -> String {
        KeyValueWriter::new()
            .put("phones", self.phones.join(" "))
            .put("native_utterances", self.native_utterances)
            .put("train_utterances", self.train_utterances)
            .put("dev_utterances", self.dev_utterances)
            .put("test_utterances", self.test_utterances)
            .put("phones_per_utterance", self.phones_per_utterance)
            .put("frames_per_phone", self.frames_per_phone)
            .put("feature_dim", self.feature_dim)
            .put("categorical_rate", self.categorical_rate)
            .put("anti_rate", self.anti_rate)
            .put("blend", self.blend)
            .put("noise", self.noise)
            .put("l1_prototypes", self.l1_prototypes)
            .put("seed", self.seed)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Split {
    Native,
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Native => "l1",
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    const ALL: [Split; 4] = [Split::Native, Split::Train, Split::Dev, Split::Test];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Realization {
    Correct,
    Categorical,
    Distorted,
}

#[derive(Clone, Debug)]
pub struct SynthUtterance {
    pub split: Split,
    pub id: String,
    pub features: Features,
    pub canonical: Vec<String>,
    pub annotated: Vec<String>,
    pub realizations: Vec<Realization>,
}

impl SynthUtterance {
    pub fn is_correct(&self) -> bool {
        self.realizations.iter().all(|r| *r == Realization::Correct)
    }

    pub fn feature_path(&self) -> String {
        format!("feats/{}.mddf", self.id)
    }

    pub fn entry(&self) -> ManifestEntry {
        ManifestEntry {
            id: self.id.clone(),
            feature_path: self.feature_path(),
            canonical: self.canonical.clone(),
            annotated: (self.split != Split::Native).then(|| self.annotated.clone()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticCorpus {
    pub spec: SynthSpec,
    /// One mean vector per canonical phone, in phone-list order.
    pub prototypes: Vec<Vec<f64>>,
    pub l1_prototypes: Vec<Vec<f64>>,
    pub utterances: Vec<SynthUtterance>,
}

fn normal_vec(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn other_index(own: usize, n: usize, rng: &mut impl Rng) -> usize {
    let j = rng.random_range(0..n - 1);
    if j >= own {
        j + 1
    } else {
        j
    }
}

pub fn generate_synthetic_corpus(spec: &SynthSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let n = spec.phones.len();
    let dim = spec.feature_dim;
    let mut proto_rng = rng_for(spec.seed, "prototypes", 0);
    let prototypes: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(dim, &mut proto_rng)).collect();
    let l1: Vec<Vec<f64>> = (0..spec.l1_prototypes)
        .map(|_| normal_vec(dim, &mut proto_rng))
        .collect();

    let mut utterances = Vec::new();
    for split in Split::ALL {
        let count = match split {
            Split::Native => spec.native_utterances,
            Split::Train => spec.train_utterances,
            Split::Dev => spec.dev_utterances,
            Split::Test => spec.test_utterances,
        };
        for i in 0..count {
            let mut rng = rng_for(spec.seed, split.as_str(), i as u64);
            let id = format!("{}-{i:05}", split.as_str());
            utterances.push(generate_one(spec, split, id, &prototypes, &l1, &mut rng));
        }
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        prototypes,
        l1_prototypes: l1,
        utterances,
    })
}

fn generate_one(
    spec: &SynthSpec,
    split: Split,
    id: String,
    prototypes: &[Vec<f64>],
    l1: &[Vec<f64>],
    rng: &mut impl Rng,
) -> SynthUtterance {
    let n = prototypes.len();
    let dim = spec.feature_dim;
    let len = rng.random_range(spec.phones_per_utterance.lo..=spec.phones_per_utterance.hi);
    // Canonical strings avoid immediate repeats.
    let mut phones = Vec::with_capacity(len);
    for k in 0..len {
        let p = if k == 0 {
            rng.random_range(0..n)
        } else {
            other_index(phones[k - 1], n, rng)
        };
        phones.push(p);
    }
    let errors_allowed = split != Split::Native;
    let mut canonical = Vec::with_capacity(len);
    let mut annotated = Vec::with_capacity(len);
    let mut realizations = Vec::with_capacity(len);
    let mut data = Vec::new();
    let mut mean = vec![0.0; dim];
    for &p in &phones {
        let name = &spec.phones[p];
        canonical.push(name.clone());
        let u: f64 = rng.random();
        let kind = if !errors_allowed {
            Realization::Correct
        } else if u < spec.categorical_rate {
            Realization::Categorical
        } else if u < spec.categorical_rate + spec.anti_rate {
            Realization::Distorted
        } else {
            Realization::Correct
        };
        match kind {
            Realization::Correct => {
                mean.copy_from_slice(&prototypes[p]);
                annotated.push(name.clone());
            }
            Realization::Categorical => {
                let q = other_index(p, n, rng);
                mean.copy_from_slice(&prototypes[q]);
                annotated.push(spec.phones[q].clone());
            }
            Realization::Distorted => {
                let alpha = rng.random_range(spec.blend.lo..=spec.blend.hi);
                let foreign = &l1[rng.random_range(0..l1.len())];
                for ((m, &own), &f) in mean.iter_mut().zip(&prototypes[p]).zip(foreign) {
                    *m = alpha * own + (1.0 - alpha) * f;
                }
                annotated.push(format!("{ANTI_MARKER}{name}"));
            }
        }
        realizations.push(kind);
        let frames = rng.random_range(spec.frames_per_phone.lo..=spec.frames_per_phone.hi);
        for _ in 0..frames {
            for &m in &mean {
                let z: f64 = rng.sample(StandardNormal);
                data.push((m + spec.noise * z) as f32);
            }
        }
    }
    let frames = data.len() / dim;
    SynthUtterance {
        split,
        id,
        features: Features::new(frames, dim, data).expect("whole frames generated"),
        canonical,
        annotated,
        realizations,
    }
}

/// Manifest files written next to `manifest.tsv`, each holding one subset.
pub const SUBSET_MANIFESTS: [&str; 9] = [
    "l1_train.tsv",
    "cp_train.tsv",
    "mp_train.tsv",
    "cp_dev.tsv",
    "mp_dev.tsv",
    "dev.tsv",
    "cp_test.tsv",
    "mp_test.tsv",
    "test.tsv",
];

impl SyntheticCorpus {
    pub fn inventory(&self, mode: InventoryMode) -> Result<PhoneInventory> {
        PhoneInventory::build(&self.spec.phones, mode)
    }

    fn subset(&self, name: &str) -> Vec<ManifestEntry> {
        let pick = |u: &SynthUtterance| match name {
            "l1_train.tsv" => u.split == Split::Native,
            "cp_train.tsv" => u.split == Split::Train && u.is_correct(),
            "mp_train.tsv" => u.split == Split::Train && !u.is_correct(),
            "cp_dev.tsv" => u.split == Split::Dev && u.is_correct(),
            "mp_dev.tsv" => u.split == Split::Dev && !u.is_correct(),
            "dev.tsv" => u.split == Split::Dev,
            "cp_test.tsv" => u.split == Split::Test && u.is_correct(),
            "mp_test.tsv" => u.split == Split::Test && !u.is_correct(),
            "test.tsv" => u.split == Split::Test,
            _ => false,
        };
        self.utterances
            .iter()
            .filter(|u| pick(u))
            .map(SynthUtterance::entry)
            .collect()
    }

    pub fn prototype_table(&self) -> String {
        let mut out = String::from("# kind\tname\tmean...\n");
        let row = |kind: &str, name: &str, v: &[f64]| {
            let vals: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            format!("{kind}\t{name}\t{}\n", vals.join("\t"))
        };
        for (name, v) in self.spec.phones.iter().zip(&self.prototypes) {
            out.push_str(&row("phone", name, v));
        }
        for (i, v) in self.l1_prototypes.iter().enumerate() {
            out.push_str(&row("l1", &format!("L1_{i}"), v));
        }
        out
    }

    /// Writes `phones.txt`, `spec.txt`, `prototypes.tsv`, `feats/`,
    /// `manifest.tsv` and the subset manifests under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let feats = root.join("feats");
        std::fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
        let put = |name: &str, body: String| {
            let path = root.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        put("phones.txt", self.inventory(InventoryMode::PerPhoneAnti)?.to_phone_file())?;
        put("spec.txt", self.spec.to_text())?;
        put("prototypes.tsv", self.prototype_table())?;
        for u in &self.utterances {
            write_features(&root.join(u.feature_path()), &u.features)?;
        }
        let all: Vec<ManifestEntry> = self.utterances.iter().map(SynthUtterance::entry).collect();
        write_manifest(&root.join("manifest.tsv"), &all)?;
        for name in SUBSET_MANIFESTS {
            write_manifest(&root.join(name), &self.subset(name))?;
        }
        Ok(())
    }
}
