//! Binary checkpoints: `MDCK`, version, stage, embedded config and
//! inventory, model shape, then every parameter as a little-endian f64 in
//! declared order.

use std::fmt;
use std::path::Path;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelDims, ModelParams};
use crate::phoneset::{parse_phone_list, InventoryMode, PhoneInventory};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    AccentFree,
    Stage2,
    Final,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::AccentFree, Stage::Stage2, Stage::Final];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::AccentFree => "accent-free",
            Stage::Stage2 => "stage2",
            Stage::Final => "final",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn tag(self) -> u8 {
        self as u8 + 1
    }

    fn from_tag(t: u8) -> Option<Stage> {
        Stage::ALL.get((t as usize).wrapping_sub(1)).copied()
    }

    pub fn file_name(self) -> String {
        format!("{}.mdck", self.as_str())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub config: TrainConfig,
    pub model: Model,
}

fn inventory_text(inv: &PhoneInventory) -> String {
    format!("{}\n{}", inv.mode().as_str(), inv.to_phone_file())
}

fn dims_words(d: &ModelDims) -> [usize; 9] {
    [
        d.feat_dim,
        d.enc_layers,
        d.enc_hidden,
        d.subsample_layers,
        d.att_dim,
        d.conv_filters,
        d.conv_width,
        d.dec_hidden,
        d.embed_dim,
    ]
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_owned(),
            reason: format!("byte {}: {}", self.pos, reason.into()),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated, wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail("invalid UTF-8"))
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.stage.tag());
        put_text(&mut out, &self.config.to_text());
        put_text(&mut out, &inventory_text(&self.model.inventory));
        for w in dims_words(&self.model.dims) {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        let flat = self.model.params.to_flat();
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// `base_dir` becomes the restored config's base directory.
    pub fn from_bytes(bytes: &[u8], path: &Path, base_dir: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != CHECKPOINT_MAGIC {
            r.pos = 0;
            return Err(r.fail("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let tag = r.take(1)?[0];
        let stage = Stage::from_tag(tag).ok_or_else(|| r.fail(format!("unknown stage tag {tag}")))?;
        let config = TrainConfig::parse(&r.text()?, base_dir)?;
        let inv_text = r.text()?;
        let (mode_line, phones) = inv_text
            .split_once('\n')
            .ok_or_else(|| r.fail("inventory block has no mode line"))?;
        let mode: InventoryMode = mode_line.parse()?;
        let inventory = PhoneInventory::build(&parse_phone_list(phones), mode)?;
        let mut w = [0usize; 9];
        for slot in &mut w {
            *slot = r.u32()? as usize;
        }
        let dims = ModelDims {
            feat_dim: w[0],
            enc_layers: w[1],
            enc_hidden: w[2],
            subsample_layers: w[3],
            att_dim: w[4],
            conv_filters: w[5],
            conv_width: w[6],
            dec_hidden: w[7],
            embed_dim: w[8],
        };
        dims.validate()?;
        let count = r.u64()? as usize;
        let mut params = ModelParams::zeros(&dims, inventory.num_phones());
        if count != params.num_params() {
            return Err(r.fail(format!(
                "parameter count {count} does not match the declared shape ({})",
                params.num_params()
            )));
        }
        let raw = r.take(count.checked_mul(8).ok_or_else(|| r.fail("count overflows"))?)?;
        let flat: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.load_flat(&flat)?;
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes"));
        }
        Ok(Checkpoint {
            stage,
            config,
            model: Model {
                inventory,
                dims,
                params,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("mdck.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_bytes(&bytes, path, base)
    }

    /// Fails with `InventoryMismatch` unless the embedded inventory equals `inv`.
    pub fn check_inventory(&self, inv: &PhoneInventory) -> Result<()> {
        let own = &self.model.inventory;
        if own != inv {
            return Err(Error::InventoryMismatch(format!(
                "checkpoint has {} phones [{}] in `{}` mode, expected {} [{}] in `{}` mode",
                own.num_canonical(),
                own.canonical().join(" "),
                own.mode(),
                inv.num_canonical(),
                inv.canonical().join(" "),
                inv.mode()
            )));
        }
        Ok(())
    }
}
