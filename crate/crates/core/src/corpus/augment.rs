//! Label-shuffling augmentation for correctly pronounced training data.

use rand::Rng;

use super::formats::Utterance;
use crate::error::{Error, Result};
use crate::phoneset::{InventoryMode, PhoneInventory, SymbolId};
use crate::seeding::rng_for;

pub const DEFAULT_SHUFFLE_PROB: f64 = 0.3;

/// Suffix appended to the id of each shuffled copy.
pub const SHUFFLED_SUFFIX: &str = "-shuf";

pub fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "shuffle probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Replaces each phone, with probability `p`, by an anti-phone other than its
/// own. Under `SingleUnk` the replacement is always `Unk`.
///
/// One uniform draw is made per position, plus one more per substitution,
/// so the stream consumed depends only on the transcript and the outcomes.
pub fn shuffle_labels_with(
    transcript: &[SymbolId],
    p: f64,
    inv: &PhoneInventory,
    rng: &mut impl Rng,
) -> Result<Vec<SymbolId>> {
    check_probability(p)?;
    let n = inv.num_canonical();
    let mut out = Vec::with_capacity(transcript.len());
    for &sym in transcript {
        if !inv.is_canonical(sym) {
            return Err(Error::NotCanonical(
                inv.symbol_of(sym).unwrap_or("?").to_owned(),
            ));
        }
        let hit = rng.random::<f64>() < p;
        if !hit {
            out.push(sym);
            continue;
        }
        let replacement = match inv.mode() {
            InventoryMode::SingleUnk => inv.anti_id_of(sym)?,
            // A lone phone has no admissible anti-phone; it stays as is.
            InventoryMode::PerPhoneAnti if n < 2 => sym,
            InventoryMode::PerPhoneAnti => {
                let own = sym.index();
                let mut j = rng.random_range(0..n - 1);
                if j >= own {
                    j += 1;
                }
                inv.anti_id_of(SymbolId(j as u32))?
            }
        };
        out.push(replacement);
    }
    Ok(out)
}

pub fn shuffle_labels(
    transcript: &[SymbolId],
    p: f64,
    inv: &PhoneInventory,
    seed: u64,
) -> Result<Vec<SymbolId>> {
    shuffle_labels_with(transcript, p, inv, &mut rng_for(seed, "shuffle", 0))
}

/// Returns the inputs followed by one shuffled-label copy of each. Copies
/// share the original feature buffer and carry the shuffled string as
/// their annotation.
pub fn augment_corpus(
    utterances: &[Utterance],
    p: f64,
    inv: &PhoneInventory,
    seed: u64,
) -> Result<Vec<Utterance>> {
    check_probability(p)?;
    if let Some(u) = utterances.iter().find(|u| !u.is_correctly_pronounced()) {
        return Err(Error::Corpus(format!(
            "{}: augmentation requires correctly pronounced utterances, found a mispronunciation annotation",
            u.id
        )));
    }
    let mut out = utterances.to_vec();
    for (i, u) in utterances.iter().enumerate() {
        let mut rng = rng_for(seed, "augment", i as u64);
        let shuffled = shuffle_labels_with(&u.canonical, p, inv, &mut rng)?;
        out.push(Utterance {
            id: format!("{}{SHUFFLED_SUFFIX}", u.id),
            feature_path: u.feature_path.clone(),
            features: u.features.clone(),
            canonical: u.canonical.clone(),
            annotated: Some(shuffled),
        });
    }
    Ok(out)
}
