//! Encryption server runner: serves client requests, verifies and
//! decrypts aggregates, and broadcasts epoch notifications to every
//! connected party.

use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use anyhow::{Context, Result};
use rand::rngs::StdRng;
use rand::SeedableRng;

use ppa_afl_core::paillier::PaillierParams;
use ppa_afl_core::protocol::{
    AggregationOutcome, EncryptionServer, EncryptionServerConfig, NotificationKind,
};
use ppa_afl_core::shamir::FieldParams;

use crate::config::Config;
use crate::wire::{read_frame, write_frame, Envelope, WireError, DEFAULT_MAX_FRAME};

use super::now_ms;

struct Shared {
    server: EncryptionServer,
    rng: StdRng,
}

type Registry = Arc<Mutex<Vec<mpsc::Sender<Envelope>>>>;

fn broadcast(registry: &Registry, envelope: &Envelope) {
    let mut sinks = registry.lock().unwrap();
    sinks.retain(|tx| tx.send(envelope.clone()).is_ok());
}

pub fn run_encryption_server(cfg: &Config) -> Result<()> {
    let listen_addr = cfg
        .listen_addr
        .as_deref()
        .context("encryption server needs listen_addr")?;
    let es_config = EncryptionServerConfig {
        params: PaillierParams::new(cfg.key_bits).map_err(|e| anyhow::anyhow!("{e}"))?,
        field: FieldParams::default(),
        encoding: cfg.encoding()?,
        threshold: cfg.threshold,
        share_budget: cfg.share_budget,
        model_len: cfg.model_len,
        rate_limit_count: cfg.rate_limit_count,
        rate_limit_window_ms: cfg.rate_limit_window_secs * 1000,
    };
    let mut rng = StdRng::from_os_rng();
    let server = EncryptionServer::new(es_config, &mut rng)?;
    log::info!(
        "encryption server: tag={} threshold={} key_bits={} listening on {listen_addr}",
        server.current_tag(),
        server.threshold(),
        cfg.key_bits
    );
    let shared = Arc::new(Mutex::new(Shared { server, rng }));
    let registry: Registry = Arc::new(Mutex::new(Vec::new()));

    let listener = TcpListener::bind(listen_addr)
        .with_context(|| format!("binding {listen_addr}"))?;
    for stream in listener.incoming() {
        match stream {
            Ok(stream) => {
                let shared = Arc::clone(&shared);
                let registry = Arc::clone(&registry);
                thread::spawn(move || handle_connection(stream, shared, registry));
            }
            Err(e) => log::warn!("accept failed: {e}"),
        }
    }
    Ok(())
}

fn handle_connection(stream: TcpStream, shared: Arc<Mutex<Shared>>, registry: Registry) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "<unknown>".into());
    stream.set_nodelay(true).ok();
    let mut reader = match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            log::warn!("{peer}: clone failed: {e}");
            return;
        }
    };

    // dedicated writer per connection; handlers and broadcasts enqueue
    let (tx, rx) = mpsc::channel::<Envelope>();
    let mut writer = stream;
    let writer_peer = peer.clone();
    thread::spawn(move || {
        while let Ok(envelope) = rx.recv() {
            if let Err(e) = write_frame(&mut writer, &envelope) {
                log::debug!("{writer_peer}: write ended: {e}");
                break;
            }
        }
    });
    registry.lock().unwrap().push(tx.clone());

    // greet with the live epoch so the aggregation server can proceed
    {
        let guard = shared.lock().unwrap();
        let greeting = Envelope::Notification {
            notification: guard.server.notification(NotificationKind::EpochOpen),
            public_key: guard.server.public_key().clone(),
        };
        tx.send(greeting).ok();
    }

    loop {
        let envelope = match read_frame(&mut reader, DEFAULT_MAX_FRAME) {
            Ok(e) => e,
            Err(WireError::Truncated) => break,
            Err(e) => {
                log::warn!("{peer}: bad frame: {e}");
                break;
            }
        };
        match envelope {
            Envelope::ClientRequest { client_id } => {
                let mut guard = shared.lock().unwrap();
                match guard.server.handle_request(&client_id, now_ms()) {
                    Ok(response) => {
                        log::debug!(
                            "{peer}: served {client_id} share {} tag {}",
                            response.share.index,
                            response.tag
                        );
                        tx.send(Envelope::ClientResponse(response)).ok();
                    }
                    Err(e) => {
                        log::warn!("{peer}: request from {client_id} refused: {e}");
                        tx.send(Envelope::Error { message: e.to_string() }).ok();
                    }
                }
            }
            Envelope::AggregationRequest(request) => {
                let mut guard = shared.lock().unwrap();
                let Shared { server, rng } = &mut *guard;
                match server.handle_aggregation(&request, rng) {
                    Ok(AggregationOutcome::Accepted { closed_tag, new_tag, update_count }) => {
                        log::info!(
                            "aggregation accepted: tag {closed_tag} closed with \
                             {update_count} updates, epoch {new_tag} open"
                        );
                        tx.send(Envelope::AggregationResult {
                            tag: closed_tag,
                            accepted: true,
                            reason: None,
                            new_tag,
                            update_count,
                        })
                        .ok();
                        let notification = Envelope::Notification {
                            notification: server
                                .notification(NotificationKind::AggregationSucceeded),
                            public_key: server.public_key().clone(),
                        };
                        drop(guard);
                        broadcast(&registry, &notification);
                    }
                    Ok(AggregationOutcome::Rejected { tag, reason }) => {
                        log::warn!("aggregation for tag {} rejected: {reason}", request.tag);
                        tx.send(Envelope::AggregationResult {
                            tag: request.tag,
                            accepted: false,
                            reason: Some(reason),
                            new_tag: tag,
                            update_count: 0,
                        })
                        .ok();
                        let notification = Envelope::Notification {
                            notification: server
                                .notification(NotificationKind::AggregationFailed(reason)),
                            public_key: server.public_key().clone(),
                        };
                        drop(guard);
                        broadcast(&registry, &notification);
                    }
                    Err(e) => {
                        log::error!("aggregation handling failed: {e}");
                        tx.send(Envelope::Error { message: e.to_string() }).ok();
                    }
                }
            }
            other => {
                log::warn!("{peer}: unexpected {} frame", other.msg_type());
                tx.send(Envelope::Error {
                    message: format!("unexpected message type {}", other.msg_type()),
                })
                .ok();
            }
        }
    }
    log::debug!("{peer}: connection closed");
}
