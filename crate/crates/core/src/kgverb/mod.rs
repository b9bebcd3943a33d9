//! Demonstration workload: weighted KG triples → template sentences → masked
//! LM pairs, driven through an early-stopped epoch loop that reports to the
//! sampler over the event protocol.

mod early_stop;
mod mask;
mod templates;
mod triples;
mod workload;

pub use early_stop::{brute_force_stop_epoch, EarlyStopping};
pub use mask::{mask_tokens, tokenize, MaskedPair, MaskedToken, DEFAULT_MASK_P};
pub use templates::{verbalize, verbalize_all, TemplateError, TemplateTable};
pub use triples::{parse_triples, select_top, ParseOutcome, RowError, Scope, WeightedTriple};
pub use workload::{
    build_corpus, default_loss_schedule, run_workload, EventWriter, WorkloadConfig, WorkloadError,
    WorkloadSummary,
};
