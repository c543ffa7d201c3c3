//! Two-alternative forced-choice annotation over a MAD set.
//!
//! A [`Session`] turns every MAD record into one trial per repeat, shows the
//! two competing predictions on seeded random sides, and appends each choice
//! to a JSON Lines log before acknowledging it. [`router`] exposes the
//! session over HTTP:
//!
//! | route | |
//! |---|---|
//! | `GET /api/session` | progress summary |
//! | `GET /api/trial/next?rater=ID` | next pending trial, or `{"status":"done"}` |
//! | `GET /assets/image/{image_id}` | the source image |
//! | `GET /assets/pred/{side}/{trial_id}` | a prediction, addressed by side |
//! | `POST /api/choice` | `{trial_id, side, rater}` |
//! | `GET /api/export` | the log and the win-ratio matrices |

mod server;
pub mod session;

pub use server::{router, serve};
pub use session::{
    defender_on_left, export_log, Ack, Export, MatrixExport, NextTrial, Progress, Session, SessionConfig,
    SessionSummary, SubmitStatus, Trial, TrialView,
};

use mad_core::choices::{ChoiceError, Side};

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("unknown trial `{0}`")]
    UnknownTrial(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("trial `{trial_id}` already answered with side {}", chosen_side.as_str())]
    Conflict { trial_id: String, chosen_side: Side },
    #[error("{0}")]
    BadRequest(String),
    #[error("no choices recorded yet")]
    EmptyLog,
    #[error("choice log is inconsistent with the MAD set: {0}")]
    CorruptLog(String),
    #[error("asset: {0}")]
    Asset(String),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
