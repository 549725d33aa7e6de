//! Attentive recurrent tensor model (RTM) for answer selection.
//!
//! The crate covers the whole pipeline: dataset loading and tokenization,
//! frozen word vectors, a siamese biLSTM encoder with phrase- or token-level
//! attention over the answer, 51 handcrafted IR/readability/embedding
//! features, a three-way bilinear tensor interaction, a point-wise
//! cross-entropy trainer and the ranking/triggering evaluation protocol.
//!
//! Numeric code is generic over [`numkit::Scalar`] (`f32` and `f64`); the
//! aliases below fix it to `f64`, which is what training and gradient
//! checking use.

/// `Display`/`FromStr` for a fieldless enum from a variant ↔ text table.
macro_rules! string_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }

        impl std::str::FromStr for $name {
            type Err = $crate::Error;
            fn from_str(s: &str) -> $crate::Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err($crate::Error::Config(format!(
                        "unknown {} `{other}`", stringify!($name).to_lowercase()
                    ))),
                }
            }
        }
    };
}

pub mod attention;
pub mod corpus;
pub mod embeddings;
pub mod encoder;
mod error;
pub mod evalkit;
pub mod features;
pub mod interaction;
pub mod numkit;
pub mod synthetic;
pub mod trainer;

pub use error::{Checkpoint, Error, Result};
pub use numkit::Scalar;

/// Dense 64-bit tensor.
pub type Tensor = numkit::Tensor<f64>;
/// Dense 32-bit tensor.
pub type Tensor32 = numkit::Tensor<f32>;
/// Trainable parameter in 64-bit precision.
pub type Param = numkit::Param<f64>;
/// Word-vector store in 64-bit precision.
pub type EmbeddingStore = embeddings::EmbeddingStore<f64>;
/// Model state in 64-bit precision.
pub type ModelState = trainer::ModelState<f64>;
/// Model state in 32-bit precision.
pub type ModelState32 = trainer::ModelState<f32>;
