//! Binary feature files, TSV manifests and utterance loading.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::phoneset::{PhoneInventory, SymbolId};

pub const FEATURE_MAGIC: &[u8; 4] = b"MDDF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// A T×F feature matrix stored in single precision, as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Features {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames.checked_mul(dim) != Some(data.len()) {
            return Err(Error::shape(format!(
                "{frames}x{dim} features need {} values, got {}",
                frames.saturating_mul(dim),
                data.len()
            )));
        }
        Ok(Features { frames, dim, data })
    }

    /// Narrows a double-precision matrix to storage precision.
    pub fn from_matrix(m: &Matrix) -> Self {
        Features {
            frames: m.rows(),
            dim: m.cols(),
            data: m.data().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.frames, self.dim, data).expect("shape checked at construction")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes a feature file image; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Format {
            path: path.to_owned(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!(
                "truncated header: {} of {HEADER_LEN} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != FEATURE_MAGIC {
            return Err(fail(format!("bad magic at byte 0: {:02x?}", &bytes[0..4])));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != FEATURE_VERSION {
            return Err(fail(format!("unsupported version {version} at byte 4")));
        }
        let frames = word(8) as usize;
        let dim = word(12) as usize;
        let expected = frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| fail(format!("header shape {frames}x{dim} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(fail(format!(
                "header shape {frames}x{dim} needs {expected} payload bytes from byte {HEADER_LEN}, found {}",
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Features { frames, dim, data })
    }
}

pub fn write_features(path: &Path, features: &Features) -> Result<()> {
    std::fs::write(path, features.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Features> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Features::from_bytes(&bytes, path)
}

/// One manifest line, symbols kept as text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub feature_path: String,
    pub canonical: Vec<String>,
    pub annotated: Option<Vec<String>>,
}

fn split_symbols(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |reason: String| Error::Parse {
            path: path.to_owned(),
            line: line_no,
            reason,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(fail(format!(
                "expected 4 tab-separated fields (id, features, canonical, annotated), found {}",
                fields.len()
            )));
        }
        let id = fields[0].trim();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(fail(format!("invalid utterance id `{}`", fields[0])));
        }
        if fields[1].trim().is_empty() {
            return Err(fail("empty feature path".into()));
        }
        let canonical = split_symbols(fields[2]);
        if canonical.is_empty() {
            return Err(fail("empty canonical transcript".into()));
        }
        let annotated = split_symbols(fields[3]);
        if !seen.insert(id.to_owned()) {
            return Err(fail(format!("duplicate utterance id `{id}`")));
        }
        entries.push(ManifestEntry {
            id: id.to_owned(),
            feature_path: fields[1].trim().to_owned(),
            canonical,
            annotated: (!annotated.is_empty()).then_some(annotated),
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.id);
        out.push('\t');
        out.push_str(&e.feature_path);
        out.push('\t');
        out.push_str(&e.canonical.join(" "));
        out.push('\t');
        if let Some(a) = &e.annotated {
            out.push_str(&a.join(" "));
        }
        out.push('\n');
    }
    out
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    std::fs::write(path, format_manifest(entries)).map_err(|e| Error::io(path, e))
}

/// An utterance resolved against an inventory.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    /// As written in the manifest, relative to the manifest's directory.
    pub feature_path: String,
    pub features: Arc<Features>,
    pub canonical: Vec<SymbolId>,
    pub annotated: Option<Vec<SymbolId>>,
}

impl Utterance {
    pub fn new(
        id: impl Into<String>,
        feature_path: impl Into<String>,
        features: Arc<Features>,
        canonical: Vec<SymbolId>,
        annotated: Option<Vec<SymbolId>>,
        inv: &PhoneInventory,
    ) -> Result<Self> {
        let id = id.into();
        if canonical.is_empty() {
            return Err(Error::Corpus(format!("{id}: empty canonical transcript")));
        }
        for &s in &canonical {
            if !inv.is_canonical(s) {
                return Err(Error::Corpus(format!(
                    "{id}: canonical transcript contains non-canonical symbol `{}`",
                    inv.format_transcript(&[s])
                )));
            }
        }
        if let Some(a) = &annotated {
            if let Some(&s) = a.iter().find(|&&s| !inv.is_phone(s)) {
                return Err(Error::Corpus(format!(
                    "{id}: annotated transcript contains special symbol id {}",
                    s.0
                )));
            }
        }
        if features.frames() < canonical.len() {
            return Err(Error::Corpus(format!(
                "{id}: {} frames cannot carry {} phones",
                features.frames(),
                canonical.len()
            )));
        }
        Ok(Utterance {
            id,
            feature_path: feature_path.into(),
            features,
            canonical,
            annotated,
        })
    }

    /// True when there is no annotation or it matches the canonical string.
    pub fn is_correctly_pronounced(&self) -> bool {
        self.annotated.as_ref().is_none_or(|a| *a == self.canonical)
    }

    /// Recognition target: the annotation when present, else the canonical string.
    pub fn target(&self) -> &[SymbolId] {
        self.annotated.as_deref().unwrap_or(&self.canonical)
    }

    pub fn to_entry(&self, inv: &PhoneInventory) -> ManifestEntry {
        let names = |ids: &[SymbolId]| split_symbols(&inv.format_transcript(ids));
        ManifestEntry {
            id: self.id.clone(),
            feature_path: self.feature_path.clone(),
            canonical: names(&self.canonical),
            annotated: self.annotated.as_deref().map(names),
        }
    }
}

fn resolve_entry(
    entry: &ManifestEntry,
    features: Arc<Features>,
    inv: &PhoneInventory,
) -> Result<Utterance> {
    let canonical = entry
        .canonical
        .iter()
        .map(|s| {
            let id = inv.id_of(s)?;
            if inv.is_canonical(id) {
                Ok(id)
            } else {
                Err(Error::NotCanonical(s.clone()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let annotated = entry
        .annotated
        .as_ref()
        .map(|a| a.iter().map(|s| inv.parse_label(s)).collect::<Result<Vec<_>>>())
        .transpose()?;
    Utterance::new(
        entry.id.clone(),
        entry.feature_path.clone(),
        features,
        canonical,
        annotated,
        inv,
    )
}

/// Reads a manifest and every feature file it names. Files referenced by
/// several lines are loaded once and shared.
pub fn load_corpus(manifest: &Path, inv: &PhoneInventory) -> Result<Vec<Utterance>> {
    let entries = read_manifest(manifest)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let mut cache: BTreeMap<PathBuf, Arc<Features>> = BTreeMap::new();
    let mut dim = None;
    let mut out = Vec::with_capacity(entries.len());
    for (idx, entry) in entries.iter().enumerate() {
        let path = root.join(&entry.feature_path);
        let features = match cache.get(&path) {
            Some(f) => f.clone(),
            None => {
                let f = Arc::new(read_features(&path)?);
                cache.insert(path.clone(), f.clone());
                f
            }
        };
        match dim {
            None => dim = Some(features.dim()),
            Some(d) if d != features.dim() => {
                return Err(Error::Corpus(format!(
                    "{}: feature dimension {} differs from {d} used by earlier utterances",
                    entry.id,
                    features.dim()
                )))
            }
            _ => {}
        }
        let utt = resolve_entry(entry, features, inv).map_err(|e| match e {
            Error::Corpus(_) => e,
            other => Error::Parse {
                path: manifest.to_owned(),
                line: idx + 1,
                reason: format!("{}: {other}", entry.id),
            },
        })?;
        out.push(utt);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneset::InventoryMode;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn features_round_trip_bit_exact() {
        let f = Features::new(1, 1, vec![f32::from_bits(0x3f80_0001)]).unwrap();
        let back = Features::from_bytes(&f.to_bytes(), p()).unwrap();
        assert_eq!(back.data()[0].to_bits(), 0x3f80_0001);
        let g = Features::new(3, 2, vec![1.0, -2.5, 0.0, -0.0, 1e-30, 7.0]).unwrap();
        let back = Features::from_bytes(&g.to_bytes(), p()).unwrap();
        let bits = |x: &Features| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&g));
    }

    #[test]
    fn feature_header_errors() {
        let f = Features::new(2, 2, vec![0.0; 4]).unwrap();
        let mut bytes = f.to_bytes();
        bytes.truncate(bytes.len() - 4);
        let err = Features::from_bytes(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("payload"), "{err}");

        let mut bytes = f.to_bytes();
        bytes[0] = b'X';
        let err = Features::from_bytes(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("magic"), "{err}");

        let mut bytes = f.to_bytes();
        bytes[4] = 9;
        let err = Features::from_bytes(&bytes, p()).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");

        assert!(Features::from_bytes(b"MDDF", p()).is_err());
        assert!(Features::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let text = "u1\tfeats/u1.mddf\thh iy\t#hh iy\nu2\tfeats/u2.mddf\taa\t\n";
        let entries = parse_manifest(text, p()).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].annotated.as_ref().unwrap()[0], "#hh");
        assert_eq!(entries[1].annotated, None);
        assert_eq!(format_manifest(&entries), text);
    }

    #[test]
    fn manifest_missing_field_names_line() {
        let text = "u1\tf\taa\t\nu2\tf\taa\n";
        match parse_manifest(text, p()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        let dup = "u1\tf\taa\t\nu1\tg\taa\t\n";
        assert!(matches!(
            parse_manifest(dup, p()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse_manifest("u1\tf\t\t\n", p()).is_err());
    }

    #[test]
    fn utterance_validation() {
        let inv = PhoneInventory::build(&["aa", "iy"], InventoryMode::PerPhoneAnti).unwrap();
        let f = Arc::new(Features::new(4, 1, vec![0.0; 4]).unwrap());
        let aa = inv.id_of("aa").unwrap();
        let anti = inv.id_of("#aa").unwrap();
        assert!(Utterance::new("u", "f", f.clone(), vec![], None, &inv).is_err());
        assert!(Utterance::new("u", "f", f.clone(), vec![anti], None, &inv).is_err());
        assert!(Utterance::new("u", "f", f.clone(), vec![aa; 5], None, &inv).is_err());
        assert!(Utterance::new("u", "f", f.clone(), vec![aa], Some(vec![inv.blank()]), &inv).is_err());
        let u = Utterance::new("u", "f", f, vec![aa], Some(vec![anti]), &inv).unwrap();
        assert!(!u.is_correctly_pronounced());
        assert_eq!(u.target(), &[anti]);
    }

    #[test]
    fn load_corpus_shares_features_and_maps_unk() {
        let dir = tempfile::tempdir().unwrap();
        let f = Features::new(3, 2, vec![0.5; 6]).unwrap();
        write_features(&dir.path().join("a.mddf"), &f).unwrap();
        std::fs::write(
            dir.path().join("m.tsv"),
            "u1\ta.mddf\taa iy\taa #iy\nu2\ta.mddf\tiy\tiy\n",
        )
        .unwrap();
        let inv = PhoneInventory::build(&["aa", "iy"], InventoryMode::SingleUnk).unwrap();
        let utts = load_corpus(&dir.path().join("m.tsv"), &inv).unwrap();
        assert!(Arc::ptr_eq(&utts[0].features, &utts[1].features));
        assert_eq!(
            inv.format_transcript(utts[0].annotated.as_ref().unwrap()),
            "aa Unk"
        );

        std::fs::write(dir.path().join("bad.tsv"), "u1\ta.mddf\taa zz\t\n").unwrap();
        let err = load_corpus(&dir.path().join("bad.tsv"), &inv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        std::fs::write(dir.path().join("missing.tsv"), "u1\tnope.mddf\taa\t\n").unwrap();
        assert!(matches!(
            load_corpus(&dir.path().join("missing.tsv"), &inv),
            Err(Error::Io { .. })
        ));
    }
}
