//! Aggregation server runner: accepts one-way update streams from
//! clients, keeps a persistent link to the encryption server for
//! aggregation requests and epoch notifications, and never opens
//! connections to clients.

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use anyhow::{Context, Result};

use ppa_afl_core::protocol::{AggregationServer, ReceiveOutcome};

use crate::config::Config;
use crate::wire::{read_frame, write_frame, Envelope, WireError, DEFAULT_MAX_FRAME};

use super::connect_with_backoff;

pub fn run_aggregation_server(cfg: &Config) -> Result<()> {
    let listen_addr = cfg
        .listen_addr
        .as_deref()
        .context("aggregation server needs listen_addr")?;
    let es_addr = cfg
        .es_addr
        .as_deref()
        .context("aggregation server needs es_addr")?
        .to_string();

    let state = Arc::new(Mutex::new(AggregationServer::new(cfg.model_len)));
    let (outbound_tx, outbound_rx) = mpsc::channel::<Envelope>();

    // Server-to-server link, re-established with backoff if it drops.
    {
        let state = Arc::clone(&state);
        let outbound_tx = outbound_tx.clone();
        thread::spawn(move || loop {
            let stream = match connect_with_backoff(&es_addr, u32::MAX) {
                Ok(s) => s,
                Err(e) => {
                    log::error!("encryption server unreachable: {e}");
                    return;
                }
            };
            log::info!("linked to encryption server at {es_addr}");
            let mut reader = match stream.try_clone() {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("link clone failed: {e}");
                    continue;
                }
            };
            let writer = Arc::new(Mutex::new(stream));
            let writer_for_sender = Arc::clone(&writer);
            let (link_closed_tx, link_closed_rx) = mpsc::channel::<()>();

            let state_reader = Arc::clone(&state);
            let outbound_for_reader = outbound_tx.clone();
            let reader_thread = thread::spawn(move || {
                loop {
                    match read_frame(&mut reader, DEFAULT_MAX_FRAME) {
                        Ok(Envelope::Notification { notification, public_key }) => {
                            log::info!(
                                "notification: tag={} threshold={} kind={:?}",
                                notification.tag,
                                notification.threshold,
                                notification.kind
                            );
                            let mut guard = state_reader.lock().unwrap();
                            guard.observe_notification(&notification, public_key);
                            if let Some(request) = guard.try_aggregate_live() {
                                log::info!(
                                    "aggregating tag {} with {} updates",
                                    request.tag,
                                    request.shares.len()
                                );
                                outbound_for_reader
                                    .send(Envelope::AggregationRequest(request))
                                    .ok();
                            }
                        }
                        Ok(Envelope::AggregationResult { tag, accepted, reason, .. }) => {
                            if accepted {
                                log::info!("aggregation for tag {tag} accepted");
                            } else {
                                log::warn!(
                                    "aggregation for tag {tag} rejected: {}",
                                    reason.map(|r| r.as_str()).unwrap_or("unknown")
                                );
                            }
                        }
                        Ok(other) => {
                            log::warn!("unexpected {} on server link", other.msg_type());
                        }
                        Err(WireError::Truncated) => break,
                        Err(e) => {
                            log::warn!("server link read failed: {e}");
                            break;
                        }
                    }
                }
                link_closed_tx.send(()).ok();
            });

            // drain outbound requests until the link dies
            loop {
                if link_closed_rx.try_recv().is_ok() {
                    break;
                }
                match outbound_rx.recv_timeout(std::time::Duration::from_millis(200)) {
                    Ok(envelope) => {
                        let mut w = writer_for_sender.lock().unwrap();
                        if let Err(e) = write_frame(&mut *w, &envelope) {
                            log::warn!("server link write failed: {e}");
                            break;
                        }
                    }
                    Err(mpsc::RecvTimeoutError::Timeout) => continue,
                    Err(mpsc::RecvTimeoutError::Disconnected) => return,
                }
            }
            reader_thread.join().ok();
            log::warn!("server link lost; reconnecting");
        });
    }

    let listener = TcpListener::bind(listen_addr)
        .with_context(|| format!("binding {listen_addr}"))?;
    log::info!("aggregation server listening on {listen_addr}");
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let state = Arc::clone(&state);
                let outbound_tx = outbound_tx.clone();
                thread::spawn(move || handle_client(stream, state, outbound_tx));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

/// Client connections are ingest-only: anything but `update` frames is
/// answered with an error and the connection dropped.
fn handle_client(
    stream: TcpStream,
    state: Arc<Mutex<AggregationServer>>,
    outbound_tx: mpsc::Sender<Envelope>,
) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "<unknown>".into());
    stream.set_nodelay(true).ok();
    let mut reader = match stream.try_clone() {
        Ok(s) => s,
        Err(_) => return,
    };
    let mut writer = stream;
    loop {
        match read_frame(&mut reader, DEFAULT_MAX_FRAME) {
            Ok(Envelope::Update(update)) => {
                let mut guard = state.lock().unwrap();
                let tag = update.tag;
                match guard.receive_update(update) {
                    ReceiveOutcome::Buffered => {
                        log::debug!(
                            "{peer}: buffered update for tag {tag} ({} in buffer)",
                            guard.buffered_count(tag)
                        );
                    }
                    ReceiveOutcome::DroppedStale => {
                        log::info!("{peer}: dropped stale update for tag {tag}");
                    }
                    ReceiveOutcome::Rejected(reason) => {
                        log::warn!("{peer}: rejected malformed update: {reason}");
                    }
                }
                if let Some(request) = guard.try_aggregate_live() {
                    log::info!(
                        "aggregating tag {} with {} updates",
                        request.tag,
                        request.shares.len()
                    );
                    outbound_tx.send(Envelope::AggregationRequest(request)).ok();
                }
            }
            Ok(other) => {
                log::warn!("{peer}: refused {} frame on client link", other.msg_type());
                write_frame(
                    &mut writer,
                    &Envelope::Error {
                        message: format!("only update frames are accepted, got {}", other.msg_type()),
                    },
                )
                .ok();
                break;
            }
            Err(WireError::Truncated) => break,
            Err(e) => {
                log::warn!("{peer}: bad frame: {e}");
                break;
            }
        }
    }
}
