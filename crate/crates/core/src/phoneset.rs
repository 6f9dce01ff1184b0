//! Phone inventories: canonical phones, their derived anti-phones and the
//! special symbols used by the two decoding branches.
//!
//! Symbol ids are contiguous and assigned in a fixed order: canonical phones
//! in input order, then anti-phones in the same order (or the single `Unk`
//! symbol), then `<blank>`, `<sos>`, `<eos>`. Because of that order the id of
//! every output symbol doubles as its row in the CTC output layer, with the
//! blank occupying the last row.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Prefix marking an anti-phone in every file format.
pub const ANTI_MARKER: char = '#';
/// Catch-all anti symbol used by [`InventoryMode::SingleUnk`].
pub const UNK: &str = "Unk";
pub const BLANK: &str = "<blank>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";

/// Comment marker in phone-set files.
const PHONE_FILE_COMMENT: char = ';';

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub u32);

impl SymbolId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for SymbolId {
    fn from(i: usize) -> Self {
        SymbolId(i as u32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InventoryMode {
    /// One anti-phone `#p` per canonical phone `p`.
    PerPhoneAnti,
    /// A single `Unk` symbol absorbs every non-categorical realization.
    SingleUnk,
}

impl InventoryMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InventoryMode::PerPhoneAnti => "anti",
            InventoryMode::SingleUnk => "unk",
        }
    }
}

impl std::str::FromStr for InventoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anti" | "per-phone-anti" => Ok(InventoryMode::PerPhoneAnti),
            "unk" | "single-unk" => Ok(InventoryMode::SingleUnk),
            other => Err(Error::config(
                "inventory_mode",
                format!("expected `anti` or `unk`, got `{other}`"),
            )),
        }
    }
}

impl fmt::Display for InventoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct PhoneInventory {
    mode: InventoryMode,
    canonical: Vec<String>,
    anti: Vec<String>,
    symbols: Vec<String>,
    ids: HashMap<String, SymbolId>,
}

impl PartialEq for PhoneInventory {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode && self.canonical == other.canonical
    }
}

impl Eq for PhoneInventory {}

impl PhoneInventory {
    pub fn build<S: AsRef<str>>(canonical: &[S], mode: InventoryMode) -> Result<Self> {
        if canonical.is_empty() {
            return Err(Error::PhoneSet("canonical phone set is empty".into()));
        }
        let canonical: Vec<String> = canonical.iter().map(|s| s.as_ref().to_owned()).collect();
        for sym in &canonical {
            validate_canonical(sym, mode)?;
        }

        let anti: Vec<String> = match mode {
            InventoryMode::PerPhoneAnti => canonical
                .iter()
                .map(|p| format!("{ANTI_MARKER}{p}"))
                .collect(),
            InventoryMode::SingleUnk => vec![UNK.to_owned()],
        };

        let symbols: Vec<String> = canonical
            .iter()
            .chain(anti.iter())
            .cloned()
            .chain([BLANK, SOS, EOS].map(String::from))
            .collect();

        let mut ids = HashMap::with_capacity(symbols.len());
        for (i, sym) in symbols.iter().enumerate() {
            if ids.insert(sym.clone(), SymbolId::from(i)).is_some() {
                return Err(Error::PhoneSet(format!("duplicate symbol `{sym}`")));
            }
        }

        Ok(PhoneInventory {
            mode,
            canonical,
            anti,
            symbols,
            ids,
        })
    }

    pub fn mode(&self) -> InventoryMode {
        self.mode
    }

    pub fn canonical(&self) -> &[String] {
        &self.canonical
    }

    pub fn anti(&self) -> &[String] {
        &self.anti
    }

    pub fn num_canonical(&self) -> usize {
        self.canonical.len()
    }

    /// |U|: canonical plus anti symbols, i.e. every symbol a transcript may hold.
    pub fn num_phones(&self) -> usize {
        self.canonical.len() + self.anti.len()
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn blank(&self) -> SymbolId {
        SymbolId::from(self.num_phones())
    }

    pub fn sos(&self) -> SymbolId {
        SymbolId::from(self.num_phones() + 1)
    }

    pub fn eos(&self) -> SymbolId {
        SymbolId::from(self.num_phones() + 2)
    }

    pub fn id_of(&self, symbol: &str) -> Result<SymbolId> {
        self.ids
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownSymbol(symbol.to_owned()))
    }

    pub fn symbol_of(&self, id: SymbolId) -> Result<&str> {
        self.symbols
            .get(id.index())
            .map(String::as_str)
            .ok_or_else(|| Error::UnknownSymbol(format!("id {}", id.0)))
    }

    pub fn is_canonical(&self, id: SymbolId) -> bool {
        id.index() < self.canonical.len()
    }

    pub fn is_anti(&self, id: SymbolId) -> bool {
        (self.canonical.len()..self.num_phones()).contains(&id.index())
    }

    /// True for members of U (phones a transcript may contain).
    pub fn is_phone(&self, id: SymbolId) -> bool {
        id.index() < self.num_phones()
    }

    pub fn anti_of(&self, phone: &str) -> Result<&str> {
        let id = self.id_of(phone)?;
        let anti = self.anti_id_of(id)?;
        Ok(&self.symbols[anti.index()])
    }

    pub fn anti_id_of(&self, phone: SymbolId) -> Result<SymbolId> {
        if !self.is_canonical(phone) {
            let name = self.symbol_of(phone).unwrap_or("?").to_owned();
            return Err(Error::NotCanonical(name));
        }
        Ok(match self.mode {
            InventoryMode::PerPhoneAnti => SymbolId::from(self.canonical.len() + phone.index()),
            InventoryMode::SingleUnk => SymbolId::from(self.canonical.len()),
        })
    }

    /// Canonical phone behind `symbol`; `None` for `Unk`.
    pub fn base_of(&self, symbol: &str) -> Result<Option<&str>> {
        let id = self.id_of(symbol)?;
        if !self.is_phone(id) {
            return Err(Error::UnknownSymbol(symbol.to_owned()));
        }
        Ok(self
            .base_id(id)
            .map(|base| self.symbols[base.index()].as_str()))
    }

    pub fn base_id(&self, id: SymbolId) -> Option<SymbolId> {
        if self.is_canonical(id) {
            Some(id)
        } else if self.is_anti(id) && self.mode == InventoryMode::PerPhoneAnti {
            Some(SymbolId::from(id.index() - self.canonical.len()))
        } else {
            None
        }
    }

    /// Resolves a transcript label to a phone id. Anti-phones written as
    /// `#p` are accepted in either mode; under `SingleUnk` they collapse to
    /// `Unk`, so one annotated corpus serves both inventory variants.
    pub fn parse_label(&self, label: &str) -> Result<SymbolId> {
        if let Ok(id) = self.id_of(label) {
            if self.is_phone(id) {
                return Ok(id);
            }
            return Err(Error::UnknownSymbol(label.to_owned()));
        }
        if let Some(base) = label.strip_prefix(ANTI_MARKER) {
            let base_id = self
                .id_of(base)
                .map_err(|_| Error::UnknownSymbol(label.to_owned()))?;
            return self
                .anti_id_of(base_id)
                .map_err(|_| Error::UnknownSymbol(label.to_owned()));
        }
        Err(Error::UnknownSymbol(label.to_owned()))
    }

    pub fn parse_transcript(&self, text: &str) -> Result<Vec<SymbolId>> {
        text.split_whitespace().map(|t| self.parse_label(t)).collect()
    }

    pub fn format_transcript(&self, ids: &[SymbolId]) -> String {
        ids.iter()
            .map(|&id| self.symbols.get(id.index()).map_or("?", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Phone-set file body: the canonical phones, one per line.
    pub fn to_phone_file(&self) -> String {
        let mut out = String::new();
        for p in &self.canonical {
            out.push_str(p);
            out.push('\n');
        }
        out
    }
}

fn validate_canonical(sym: &str, mode: InventoryMode) -> Result<()> {
    if sym.is_empty() {
        return Err(Error::PhoneSet("empty phone symbol".into()));
    }
    if sym.chars().any(char::is_whitespace) {
        return Err(Error::PhoneSet(format!("phone `{sym}` contains whitespace")));
    }
    if sym.starts_with(ANTI_MARKER) {
        return Err(Error::PhoneSet(format!(
            "phone `{sym}` starts with the reserved anti-phone marker"
        )));
    }
    if [BLANK, SOS, EOS].contains(&sym) {
        return Err(Error::PhoneSet(format!("phone `{sym}` is a special symbol")));
    }
    if mode == InventoryMode::SingleUnk && sym == UNK {
        return Err(Error::PhoneSet(format!("phone `{sym}` is reserved")));
    }
    Ok(())
}

/// Parses a phone-set file body: one symbol per line, `;` starts a comment.
pub fn parse_phone_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|line| match line.find(PHONE_FILE_COMMENT) {
            Some(pos) => &line[..pos],
            None => line,
        })
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

pub fn read_phone_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_phone_list(&text))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv(phones: &[&str], mode: InventoryMode) -> PhoneInventory {
        PhoneInventory::build(phones, mode).unwrap()
    }

    #[test]
    fn anti_set_from_single_phone() {
        let inv = inv(&["hh"], InventoryMode::PerPhoneAnti);
        assert_eq!(inv.anti(), ["#hh"]);
    }

    #[test]
    fn per_phone_anti_layout() {
        let inv = inv(&["a", "b"], InventoryMode::PerPhoneAnti);
        assert_eq!(inv.num_phones(), 4);
        let phones: Vec<_> = (0..4).map(|i| inv.symbol_of(SymbolId(i)).unwrap()).collect();
        assert_eq!(phones, ["a", "b", "#a", "#b"]);
        assert_eq!(inv.symbol_of(inv.blank()).unwrap(), BLANK);
        assert_eq!(inv.symbol_of(inv.sos()).unwrap(), SOS);
        assert_eq!(inv.symbol_of(inv.eos()).unwrap(), EOS);
        assert_eq!(inv.len(), 7);
    }

    #[test]
    fn single_unk_layout() {
        let inv = inv(&["a", "b"], InventoryMode::SingleUnk);
        assert_eq!(inv.num_phones(), 3);
        assert_eq!(inv.symbol_of(SymbolId(2)).unwrap(), UNK);
        assert_eq!(inv.anti_of("a").unwrap(), UNK);
        assert_eq!(inv.anti_of("b").unwrap(), UNK);
    }

    #[test]
    fn anti_of_examples() {
        let inv = inv(&["hh", "aa", "n", "d"], InventoryMode::PerPhoneAnti);
        assert_eq!(inv.anti_of("hh").unwrap(), "#hh");
        assert_eq!(inv.anti_of("aa").unwrap(), "#aa");
        assert!(matches!(inv.anti_of("#hh"), Err(Error::NotCanonical(_))));
        assert!(inv.anti_of(BLANK).is_err());
        assert!(inv.anti_of("zz").is_err());
    }

    #[test]
    fn base_of_examples() {
        let anti = inv(&["hh", "iy"], InventoryMode::PerPhoneAnti);
        assert_eq!(anti.base_of("#hh").unwrap(), Some("hh"));
        assert_eq!(anti.base_of("hh").unwrap(), Some("hh"));
        assert!(anti.base_of("xx").is_err());
        assert!(anti.base_of(EOS).is_err());
        let unk = inv(&["hh", "iy"], InventoryMode::SingleUnk);
        assert_eq!(unk.base_of(UNK).unwrap(), None);
    }

    #[test]
    fn rejects_bad_phone_sets() {
        let empty: [&str; 0] = [];
        assert!(PhoneInventory::build(&empty, InventoryMode::PerPhoneAnti).is_err());
        assert!(PhoneInventory::build(&["a", "a"], InventoryMode::PerPhoneAnti).is_err());
        assert!(PhoneInventory::build(&["#a"], InventoryMode::PerPhoneAnti).is_err());
        assert!(PhoneInventory::build(&["a b"], InventoryMode::PerPhoneAnti).is_err());
        assert!(PhoneInventory::build(&[SOS], InventoryMode::PerPhoneAnti).is_err());
        assert!(PhoneInventory::build(&[UNK], InventoryMode::SingleUnk).is_err());
        // `Unk` is an ordinary token when no Unk symbol is created.
        assert!(PhoneInventory::build(&[UNK], InventoryMode::PerPhoneAnti).is_ok());
    }

    #[test]
    fn parse_label_collapses_anti_under_unk() {
        let unk = inv(&["hh", "iy"], InventoryMode::SingleUnk);
        assert_eq!(unk.parse_label("#hh").unwrap(), unk.id_of(UNK).unwrap());
        assert!(unk.parse_label("#zz").is_err());
        assert!(unk.parse_label(BLANK).is_err());
        let anti = inv(&["hh", "iy"], InventoryMode::PerPhoneAnti);
        assert_eq!(anti.parse_label("#iy").unwrap(), SymbolId(3));
    }

    #[test]
    fn phone_file_comments() {
        let text = "; header\nhh\n  iy ; vowel\n\nsil\n";
        assert_eq!(parse_phone_list(text), ["hh", "iy", "sil"]);
    }

    #[test]
    fn transcript_round_trip() {
        let inv = inv(&["hh", "iy", "ow"], InventoryMode::PerPhoneAnti);
        let ids = inv.parse_transcript("#hh iy ow").unwrap();
        assert_eq!(inv.format_transcript(&ids), "#hh iy ow");
    }
}
