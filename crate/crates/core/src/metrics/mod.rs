//! Classification and per-identity-term bias metrics.

mod auc;
mod bootstrap;
mod f1;
mod files;
mod report;

pub use auc::{auc, bnsp_auc, bpsn_auc, roc_auc, subgroup_auc, term_auc, AucKind, ScoredInstance};
pub use bootstrap::{bootstrap_significance, BootstrapConfig};
pub use f1::{f1_from_predictions, f1_scores, F1Metric, F1Scores};
pub use files::{load_terms, read_scores, write_scores, ScoreRow, SCORES_HEADER};
pub(crate) use report::csv_field;
pub use report::{bias_report, term_memberships, BiasReport, TermAucs, UndefinedAuc};
