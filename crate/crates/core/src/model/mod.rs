//! Shared event vocabulary, canonical record codec and the append-only session log.

mod log;
mod record;
mod types;

pub use log::{log_file_name, LogError, SessionLog};
pub use record::{canonical_serialize, parse_record, plan_id, record_id, CodecError, LogRecord, RecordBody, Stream};
pub use types::*;
