//! Live consultation sessions over HTTP.
//!
//! A session starts from the patient's self-reported symptoms and alternates
//! greedy inquiries from a trained agent with yes/no answers until the agent
//! stops or the turn cap is reached, at which point the ranked diagnosis is
//! returned. Sessions are persisted after every change.

pub mod http;
pub mod models;
pub mod session;
pub mod store;

pub use http::{router, serve};
pub use models::ModelBundle;
pub use session::{Report, ServiceError, SessionService, SessionView, YesNo};
pub use store::{FileStore, MemoryStore, SessionStore};
