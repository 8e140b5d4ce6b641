//! Live session: paced segment production, streaming efficiency, rolling
//! reconstruction and a websocket/HTTP front end.
//!
//! Endpoints:
//!
//! * `GET /session` (websocket): server messages are `{kind, seq, t_ms, payload}`
//!   with kinds `quad-batch`, `eta-update`, `recon-update`, `rate-update`,
//!   `knob-ack`, `snapshot` and `error`. Clients send
//!   `{"kind": "set-knob", "name": .., "value": ..}` or `{"kind": "snapshot-request"}`.
//! * `GET /state`: knobs, derived efficiencies and the latest estimate.
//! * `GET /report`: the latest run summary, or 503 before the first reconstruction.

mod engine;
mod http;
mod telemetry;

pub use engine::{
    AlignmentKnobs, Derived, KnobAck, Pacing, Session, SessionConfig, StateView, BASE_GAMMA_SQ, KNOB_NAMES,
    TARGET_SEGMENT_RATE,
};
pub use http::{router, serve};
pub use telemetry::{kind, Envelope, Subscription, Telemetry};
