//! Socket client for a remote [`crate::server::BusServer`].

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread;

use log::debug;

use crate::bus::{SubQueue, Subscription};
use crate::endpoint::{Endpoint, Stream};
use crate::envelope::{ContentType, DEFAULT_MAX_PAYLOAD};
use crate::qos::QosProfile;
use crate::server::{control, encode_subscribe, ACK_TOPIC, NACK_TOPIC, SUBSCRIBE_TOPIC};
use crate::wire::{decode_envelope, read_frame, ENVELOPE_OVERHEAD};
use crate::{PublishReceipt, Result, Transport, TransportError};

type AckResult = std::result::Result<u64, String>;

struct Shared {
    // Pending acknowledgements are queued under the writer lock so that
    // their order matches the request order on the wire.
    writer: Mutex<(Stream, VecDeque<SyncSender<AckResult>>)>,
    routes: Mutex<HashMap<String, Vec<Arc<SubQueue>>>>,
    shut: AtomicBool,
    max_payload: usize,
}

/// Transport backed by a bus in another process.
pub struct RemoteBus {
    shared: Arc<Shared>,
}

impl RemoteBus {
    pub fn connect(endpoint: &Endpoint) -> Result<Self> {
        let stream = Stream::connect(endpoint)?;
        let reader = stream.try_clone()?;
        let shared = Arc::new(Shared {
            writer: Mutex::new((stream, VecDeque::new())),
            routes: Mutex::new(HashMap::new()),
            shut: AtomicBool::new(false),
            max_payload: DEFAULT_MAX_PAYLOAD,
        });
        let s = shared.clone();
        thread::Builder::new().name("bus-client-rx".into()).spawn(move || read_loop(reader, s))?;
        Ok(Self { shared })
    }

    fn request(&self, env: &crate::Envelope) -> Result<u64> {
        if self.is_shut_down() {
            return Err(TransportError::ShutDown);
        }
        let (tx, rx) = sync_channel(1);
        {
            let mut w = self.shared.writer.lock().unwrap();
            let body = crate::wire::encode_envelope(env)?;
            crate::wire::write_frame(&mut w.0, &body).map_err(|_| TransportError::ShutDown)?;
            w.1.push_back(tx);
        }
        match rx.recv() {
            Ok(Ok(seq)) => Ok(seq),
            Ok(Err(msg)) => Err(TransportError::Io(std::io::Error::other(msg))),
            Err(_) => Err(TransportError::ShutDown),
        }
    }
}

fn read_loop(mut reader: Stream, shared: Arc<Shared>) {
    let max = shared.max_payload + ENVELOPE_OVERHEAD + u16::MAX as usize;
    loop {
        let body = match read_frame(&mut reader, max) {
            Ok(Some(b)) => b,
            Ok(None) => break,
            Err(e) => {
                debug!("bus client read failed: {e}");
                break;
            }
        };
        let Ok(env) = decode_envelope(&body) else { break };
        match &*env.topic {
            ACK_TOPIC | NACK_TOPIC => {
                let pending = shared.writer.lock().unwrap().1.pop_front();
                if let Some(tx) = pending {
                    let res = if &*env.topic == ACK_TOPIC {
                        Ok(env.seq)
                    } else {
                        Err(String::from_utf8_lossy(&env.payload).into_owned())
                    };
                    let _ = tx.send(res);
                }
            }
            topic => {
                let mut routes = shared.routes.lock().unwrap();
                if let Some(queues) = routes.get_mut(topic) {
                    queues.retain(|q| !q.is_detached());
                    for q in queues.iter() {
                        q.push(env.clone());
                    }
                }
            }
        }
    }
    shared.shut.store(true, Ordering::SeqCst);
    shared.writer.lock().unwrap().1.clear();
    for queues in shared.routes.lock().unwrap().values() {
        for q in queues {
            q.close();
        }
    }
}

impl Transport for RemoteBus {
    fn publish(&self, topic: &str, payload: &[u8], content_type: ContentType, source_ts: u64) -> Result<PublishReceipt> {
        if topic.is_empty() {
            return Err(TransportError::EmptyTopic);
        }
        if payload.len() > self.shared.max_payload {
            return Err(TransportError::PayloadTooLarge { len: payload.len(), max: self.shared.max_payload });
        }
        let mut env = control(topic, 0, payload);
        env.content_type = content_type;
        env.source_ts = source_ts;
        let seq = self.request(&env)?;
        Ok(PublishReceipt { seq, delivered: 0 })
    }

    fn subscribe(&self, topic: &str, qos: QosProfile) -> Result<Subscription> {
        if topic.is_empty() {
            return Err(TransportError::EmptyTopic);
        }
        qos.validate()?;
        let queue = Arc::new(SubQueue::new(qos.history_depth));
        let first = {
            let mut routes = self.shared.routes.lock().unwrap();
            let entry = routes.entry(topic.to_string()).or_default();
            entry.push(queue.clone());
            entry.len() == 1
        };
        if first {
            self.request(&control(SUBSCRIBE_TOPIC, 0, &encode_subscribe(topic, qos)))?;
        }
        Ok(Subscription::new(Arc::from(topic), qos, queue))
    }

    fn shutdown(&self) {
        self.shared.shut.store(true, Ordering::SeqCst);
        let w = self.shared.writer.lock().unwrap();
        w.0.shutdown();
    }

    fn is_shut_down(&self) -> bool {
        self.shared.shut.load(Ordering::SeqCst)
    }
}

impl Drop for RemoteBus {
    fn drop(&mut self) {
        self.shutdown();
    }
}
