//! Injectable wall clock (milliseconds since the Unix epoch) so TTL and
//! token logic is testable with synthetic time.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .expect("clock before epoch")
            .as_millis() as u64
    })
}

pub fn fixed_clock(now_ms: u64) -> Clock {
    Arc::new(move || now_ms)
}
