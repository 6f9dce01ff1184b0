//! Mispronunciation detection and diagnosis with a hybrid CTC/attention
//! phone recognizer over an anti-phone augmented vocabulary.
//!
//! The crate is organized bottom-up:
//!
//! * [`phoneset`]: canonical phones, anti-phones and symbol ids
//! * [`numerics`]: dense layers with hand-written backward passes
//! * [`encdec`], [`ctc`], [`hybrid`]: the two recognition branches and their combination
//! * [`corpus`]: file formats, label-shuffling augmentation, synthetic data
//! * [`training`]: optimizer, checkpoints and the three-stage curriculum
//! * [`evaluation`]: alignment, confusion classification and MDD metrics

pub mod config;
pub mod corpus;
pub mod ctc;
pub mod encdec;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod hybrid;
pub mod model;
pub mod numerics;
pub mod phoneset;
pub mod seeding;
pub mod selftest;
pub mod training;

pub use error::{Error, Result};
pub use model::{Model, ModelDims, ModelParams};
pub use phoneset::{InventoryMode, PhoneInventory, SymbolId};
