//! Long-running role processes: sockets in, protocol state machines
//! behind a lock, frames out. Per the communication topology, clients
//! talk to the encryption server bidirectionally, push updates one-way
//! to the aggregation server, and the two servers talk to each other.

mod aggregation_server;
mod client;
mod encryption_server;

pub use aggregation_server::run_aggregation_server;
pub use client::{run_client, run_client_pool};
pub use encryption_server::run_encryption_server;

use std::net::TcpStream;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Result};

pub(crate) fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Connects with exponential backoff: 100ms doubling to a 2s cap.
pub(crate) fn connect_with_backoff(addr: &str, max_attempts: u32) -> Result<TcpStream> {
    let mut delay = Duration::from_millis(100);
    for attempt in 1..=max_attempts {
        match TcpStream::connect(addr) {
            Ok(stream) => {
                stream.set_nodelay(true).ok();
                return Ok(stream);
            }
            Err(e) => {
                log::warn!("connect to {addr} failed (attempt {attempt}/{max_attempts}): {e}");
                std::thread::sleep(delay);
                delay = (delay * 2).min(Duration::from_secs(2));
            }
        }
    }
    bail!("could not reach {addr} after {max_attempts} attempts")
}
