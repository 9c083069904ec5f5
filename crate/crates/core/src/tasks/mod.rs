//! The three spatial self-supervision objectives and their shared plumbing.

mod batch;
mod crsc;
mod diagnostics;
mod gmp;
mod rbcs;
mod routes;
mod total;

pub use batch::{encode_all, encode_batch, EncodedBatch, Embedding};
pub use crsc::{crsc_infer, crsc_loss, crsc_similarity, unit_embeddings, CrscInference, SimilarityTensor, UnitEmbeddings};
pub use diagnostics::{GapPoint, IterationRecord, RouteArrow};
pub use gmp::{gmp_loss, predicted_gaps};
pub use rbcs::{endpoint_errors, rbcs_delta, rbcs_loss, RouteMode};
pub use routes::{enumerate_routes, factorial, validate_route, RouteSet};
pub use total::{batch_losses, total_loss, BatchLosses, BatchTargets, LossWeights, TaskConfig};
