//! Socket front-end for a [`Bus`].
//!
//! Clients speak plain envelope frames. An ordinary envelope is a publish
//! request; the server answers each request with an envelope on
//! [`ACK_TOPIC`] (seq field = assigned sequence number) or [`NACK_TOPIC`]
//! (payload = UTF-8 error text), in request order. A request on
//! [`SUBSCRIBE_TOPIC`] carries `depth u32 LE, reliability u8, topic UTF-8`
//! and opens a forwarding stream of that topic's envelopes to the client.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use crate::bus::Bus;
use crate::endpoint::{Endpoint, Listener, Stream};
use crate::envelope::{ContentType, Envelope};
use crate::qos::{QosProfile, Reliability};
use crate::wire::{decode_envelope, encode_envelope, read_frame, write_frame, ENVELOPE_OVERHEAD};
use crate::{Result, Transport};

pub const SUBSCRIBE_TOPIC: &str = "/_transport/subscribe";
pub const ACK_TOPIC: &str = "/_transport/ack";
pub const NACK_TOPIC: &str = "/_transport/nack";

pub(crate) fn control(topic: &str, seq: u64, payload: &[u8]) -> Envelope {
    Envelope {
        topic: Arc::from(topic),
        seq,
        source_ts: 0,
        publish_ts: 0,
        content_type: ContentType::RawBytes,
        payload: Arc::from(payload),
    }
}

pub(crate) fn encode_subscribe(topic: &str, qos: QosProfile) -> Vec<u8> {
    let mut p = Vec::with_capacity(5 + topic.len());
    p.extend_from_slice(&(qos.history_depth.min(u32::MAX as usize) as u32).to_le_bytes());
    p.push(match qos.reliability {
        Reliability::Reliable => 0,
        Reliability::BestEffort => 1,
    });
    p.extend_from_slice(topic.as_bytes());
    p
}

fn decode_subscribe(p: &[u8]) -> Option<(String, QosProfile)> {
    if p.len() < 5 {
        return None;
    }
    let depth = u32::from_le_bytes(p[..4].try_into().unwrap()) as usize;
    let mut qos = QosProfile::keep_last(depth);
    if p[4] == 1 {
        qos = qos.best_effort();
    }
    let topic = std::str::from_utf8(&p[5..]).ok()?.to_string();
    Some((topic, qos))
}

pub(crate) fn send(writer: &Mutex<Stream>, env: &Envelope) -> std::io::Result<()> {
    let body = encode_envelope(env).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    write_frame(&mut *writer.lock().unwrap(), &body)
}

pub struct BusServer {
    endpoint: Endpoint,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl BusServer {
    pub fn bind(endpoint: &Endpoint, bus: Arc<Bus>) -> Result<Self> {
        let listener = Listener::bind(endpoint)?;
        listener.set_nonblocking(true)?;
        let endpoint = listener.local_endpoint()?;
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let stop = stop.clone();
            thread::Builder::new()
                .name("bus-accept".into())
                .spawn(move || accept_loop(listener, bus, stop))?
        };
        Ok(Self { endpoint, stop, accept: Some(accept) })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BusServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: Listener, bus: Arc<Bus>, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok(stream) => {
                let bus = bus.clone();
                let stop = stop.clone();
                let _ = thread::Builder::new().name("bus-conn".into()).spawn(move || {
                    if let Err(e) = serve_connection(stream, bus, stop) {
                        debug!("bus connection ended: {e}");
                    }
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                warn!("bus accept failed: {e}");
                thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn serve_connection(stream: Stream, bus: Arc<Bus>, stop: Arc<AtomicBool>) -> std::io::Result<()> {
    let mut reader = stream.try_clone()?;
    let writer = Arc::new(Mutex::new(stream));
    let closed = Arc::new(AtomicBool::new(false));
    let max = bus.max_payload() + ENVELOPE_OVERHEAD + u16::MAX as usize;
    let result = loop {
        let body = match read_frame(&mut reader, max) {
            Ok(Some(b)) => b,
            Ok(None) => break Ok(()),
            Err(e) => break Err(std::io::Error::other(e)),
        };
        let env = match decode_envelope(&body) {
            Ok(e) => e,
            Err(e) => {
                send(&writer, &control(NACK_TOPIC, 0, e.to_string().as_bytes()))?;
                continue;
            }
        };
        if &*env.topic == SUBSCRIBE_TOPIC {
            let Some((topic, qos)) = decode_subscribe(&env.payload) else {
                send(&writer, &control(NACK_TOPIC, 0, b"malformed subscribe request"))?;
                continue;
            };
            match bus.subscribe(&topic, qos) {
                Ok(sub) => {
                    let (writer2, closed2, stop2) = (writer.clone(), closed.clone(), stop.clone());
                    thread::Builder::new().name("bus-forward".into()).spawn(move || loop {
                        if closed2.load(Ordering::SeqCst) || stop2.load(Ordering::SeqCst) {
                            break;
                        }
                        match sub.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(env)) => {
                                if send(&writer2, &env).is_err() {
                                    break;
                                }
                            }
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    })?;
                    send(&writer, &control(ACK_TOPIC, 0, &[]))?;
                }
                Err(e) => send(&writer, &control(NACK_TOPIC, 0, e.to_string().as_bytes()))?,
            }
            continue;
        }
        match bus.publish(&env.topic, &env.payload, env.content_type, env.source_ts) {
            Ok(r) => send(&writer, &control(ACK_TOPIC, r.seq, &[]))?,
            Err(e) => send(&writer, &control(NACK_TOPIC, 0, e.to_string().as_bytes()))?,
        }
    };
    closed.store(true, Ordering::SeqCst);
    writer.lock().unwrap().shutdown();
    result
}
