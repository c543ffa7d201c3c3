mod add_model;
mod pipeline;
mod serve;
mod srcc;
mod synth;

pub use crate::report::Rankings;
pub use add_model::{cmd_add_model, continuation_settings, AddModelArgs, AddModelOutcome};
pub use pipeline::{cmd_rank, cmd_select, cmd_stats, read_stats, RankArgs, SelectArgs, SelectSummary, StatsArgs};
pub use serve::{cmd_serve, open_session, ServeArgs};
pub use srcc::{cmd_srcc, read_ranking, srcc_of, SrccArgs};
pub use synth::{cmd_synth, palette, SynthArgs};
