//! Countermeasures: what the sentinel *does* about what it saw.
//!
//! Four responses, one submodule each:
//!
//! - [`rewrite`] — appends `NOT LIKE` filters to catalog listings so
//!   objects under the protected prefix never show up in results;
//! - [`backup`] — plans `RENAME` statements that move tables slated for
//!   destruction into the hidden storage space instead;
//! - [`report`] — assembles an incident report from an alert's token
//!   provenance;
//! - [`notify`] — delivers reports to a file, stderr, or an HTTP webhook.

pub mod backup;
pub mod notify;
pub mod report;
pub mod rewrite;

pub use backup::{backup_plan, BackupNamer, BackupPlan, RenameStep};
pub use notify::{notify, render_message, NotifyError, NotifySink};
pub use report::{build_report, IncidentReport};
pub use rewrite::{is_rewritable_listing, rewrite_listing, Rewrite, RewriteError};
