//! Few-shot relation classification with prototype networks whose class
//! prototypes are fused with encoded relation descriptions.
//!
//! The pipeline: sample an N-way K-shot [`Episode`](model::Episode), encode
//! support and query sentences as entity-start vector pairs, average each
//! class's support into a prototype, add the class's relation embedding
//! (`cls ⊕ mean` view), and classify queries by dot product. Four alternative
//! fusion rules are provided for ablation, and every differentiable path
//! has an exact analytic gradient.
//!
//! See the crate's `examples/` directory for one runnable program per
//! capability.

pub mod checkpoint;
pub mod cli;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod ingest;
pub mod model;
pub mod optim;
pub mod protonet;
pub mod report;
pub mod sampler;
pub mod synthetic;

pub use encoder::{EncoderContract, PrecomputedProvider, ToyEncoder};
pub use error::{Error, Result};
pub use experiments::{Model, RunResult, Setting, Task, TrainConfig};
pub use model::{Episode, InstanceEmbedding, RelationEmbedding, RelationInfo, TokenizedInstance};
pub use protonet::{FusionKind, FusionStrategy};
