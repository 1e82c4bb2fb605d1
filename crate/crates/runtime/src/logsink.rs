//! Host to orchestrator channel: logs and status leave the execution thread
//! through a bounded queue drained by one writer thread.

use std::io::Write;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use lambda_proto::{write_control, ControlEnvelope, ControlType, HostStatus, LogLevel, LogRecord};
use lambda_transport::endpoint::Stream;
use lambda_transport::{monotonic_ns, Endpoint};

pub const DEFAULT_LOG_QUEUE: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Log(LogRecord),
    Status(HostStatus),
}

/// Where the writer thread sends outbound records.
pub enum LogSink {
    /// Human-readable lines on stdout (standalone mode).
    Stdout,
    /// Length-prefixed control envelopes on stdout, read by a supervising
    /// orchestrator.
    StdioFramed,
    /// Length-prefixed control envelopes over a stream socket.
    Endpoint(Endpoint),
    /// Length-prefixed control envelopes into any writer.
    Writer(Box<dyn Write + Send>),
    /// Kept in memory; used by in-process hosts.
    Collect(Arc<Mutex<Vec<Outbound>>>),
    Discard,
}

impl LogSink {
    /// `none` is stdout lines, `stdio` is framed stdout, anything else an endpoint.
    pub fn parse(spec: &str) -> Result<LogSink, String> {
        match spec {
            "none" | "stdout" => Ok(LogSink::Stdout),
            "stdio" => Ok(LogSink::StdioFramed),
            other => other.parse::<Endpoint>().map(LogSink::Endpoint).map_err(|e| e.to_string()),
        }
    }
}

enum Writer {
    Lines(std::io::Stdout),
    Framed(Box<dyn Write + Send>),
    Collect(Arc<Mutex<Vec<Outbound>>>),
    Discard,
}

impl Writer {
    fn open(sink: LogSink) -> std::io::Result<Writer> {
        Ok(match sink {
            LogSink::Stdout => Writer::Lines(std::io::stdout()),
            LogSink::StdioFramed => Writer::Framed(Box::new(std::io::stdout())),
            LogSink::Endpoint(ep) => Writer::Framed(Box::new(Stream::connect(&ep)?)),
            LogSink::Writer(w) => Writer::Framed(w),
            LogSink::Collect(v) => Writer::Collect(v),
            LogSink::Discard => Writer::Discard,
        })
    }

    fn send(&mut self, item: Outbound, id: u64) -> std::io::Result<()> {
        match self {
            Writer::Lines(out) => {
                let mut out = out.lock();
                match &item {
                    Outbound::Log(r) => writeln!(out, "{} [{}] {}: {}", r.ts, r.level, r.function, r.message),
                    Outbound::Status(s) => writeln!(
                        out,
                        "status {}: {:?} invocations={} failures={} coalesced={}",
                        s.function, s.state, s.invocations, s.failures, s.coalesced
                    ),
                }
            }
            Writer::Framed(w) => {
                let env = match &item {
                    Outbound::Log(r) => ControlEnvelope::new(ControlType::Log, id, r),
                    Outbound::Status(s) => ControlEnvelope::new(ControlType::Status, id, s),
                };
                write_control(w, &env).map_err(std::io::Error::other)?;
                w.flush()
            }
            Writer::Collect(v) => {
                v.lock().unwrap().push(item);
                Ok(())
            }
            Writer::Discard => Ok(()),
        }
    }
}

/// Cheap handle used on the execution thread.
#[derive(Clone)]
pub struct LogSender {
    function: Arc<str>,
    tx: SyncSender<Outbound>,
    dropped: Arc<AtomicU64>,
}

impl LogSender {
    /// Never blocks; a full queue drops the record and counts it.
    pub fn log(&self, level: LogLevel, message: &str) {
        self.push(Outbound::Log(LogRecord::new(level, monotonic_ns(), &self.function, message)));
    }

    pub fn status(&self, status: HostStatus) {
        self.push(Outbound::Status(status));
    }

    fn push(&self, item: Outbound) {
        if let Err(TrySendError::Full(_) | TrySendError::Disconnected(_)) = self.tx.try_send(item) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

pub struct LogWriter {
    sender: Option<LogSender>,
    closed: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl LogWriter {
    /// Opens the sink and starts the writer thread. `heartbeat` is invoked
    /// whenever the queue stays idle for `interval` and may return a status
    /// to send.
    pub fn start(
        function: &str,
        sink: LogSink,
        capacity: usize,
        interval: Duration,
        heartbeat: Box<dyn FnMut() -> Option<HostStatus> + Send>,
    ) -> std::io::Result<LogWriter> {
        let writer = Writer::open(sink)?;
        let (tx, rx) = mpsc::sync_channel(capacity.max(1));
        let sender = LogSender { function: function.into(), tx, dropped: Arc::new(AtomicU64::new(0)) };
        let closed = Arc::new(AtomicBool::new(false));
        let flag = closed.clone();
        let thread = thread::Builder::new()
            .name(format!("log:{function}"))
            .spawn(move || write_loop(writer, rx, interval, heartbeat, flag))?;
        Ok(LogWriter { sender: Some(sender), closed, thread: Some(thread) })
    }

    pub fn sender(&self) -> LogSender {
        self.sender.clone().expect("writer is open")
    }

    /// Drains everything queued so far and stops the thread. Senders that
    /// outlive the writer count their records as dropped.
    pub fn close(&mut self) {
        self.sender.take();
        self.closed.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        self.close();
    }
}

fn write_loop(
    mut writer: Writer,
    rx: Receiver<Outbound>,
    interval: Duration,
    mut heartbeat: Box<dyn FnMut() -> Option<HostStatus> + Send>,
    closed: Arc<AtomicBool>,
) {
    const POLL: Duration = Duration::from_millis(20);
    let mut id = 0u64;
    let mut broken = false;
    let mut last_beat = Instant::now();
    loop {
        let item = match rx.recv_timeout(POLL.min(interval)) {
            Ok(item) => item,
            Err(RecvTimeoutError::Timeout) if closed.load(Ordering::SeqCst) => break,
            Err(RecvTimeoutError::Timeout) if last_beat.elapsed() >= interval => {
                last_beat = Instant::now();
                match heartbeat() {
                    Some(s) => Outbound::Status(s),
                    None => continue,
                }
            }
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        id += 1;
        if broken {
            continue;
        }
        if let Err(e) = writer.send(item, id) {
            // Keep draining so senders never block on a dead channel.
            log::warn!("orchestrator channel write failed: {e}");
            broken = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collects_in_order() {
        let out = Arc::new(Mutex::new(Vec::new()));
        let mut w = LogWriter::start("f", LogSink::Collect(out.clone()), 16, Duration::from_secs(60), Box::new(|| None))
            .unwrap();
        let s = w.sender();
        s.log(LogLevel::Info, "a");
        s.log(LogLevel::Warn, "b");
        drop(s);
        w.close();
        let got = out.lock().unwrap();
        let msgs: Vec<_> = got
            .iter()
            .map(|o| match o {
                Outbound::Log(r) => (r.level, r.function.clone(), r.message.clone()),
                _ => panic!(),
            })
            .collect();
        assert_eq!(msgs, vec![(LogLevel::Info, "f".into(), "a".into()), (LogLevel::Warn, "f".into(), "b".into())]);
    }

    #[test]
    fn framed_writer_emits_control_envelopes() {
        #[derive(Clone, Default)]
        struct Shared(Arc<Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(b);
                Ok(b.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let buf = Shared::default();
        let mut w =
            LogWriter::start("f", LogSink::Writer(Box::new(buf.clone())), 4, Duration::from_secs(60), Box::new(|| None))
                .unwrap();
        w.sender().log(LogLevel::Error, "boom");
        w.close();
        let bytes = buf.0.lock().unwrap().clone();
        let env = lambda_proto::read_control(&mut &bytes[..]).unwrap().unwrap();
        assert_eq!(env.kind, ControlType::Log);
        assert_eq!(env.parse::<LogRecord>().unwrap().message, "boom");
    }

    #[test]
    fn sink_spec_parsing() {
        assert!(matches!(LogSink::parse("none"), Ok(LogSink::Stdout)));
        assert!(matches!(LogSink::parse("stdio"), Ok(LogSink::StdioFramed)));
        assert!(matches!(LogSink::parse("tcp://127.0.0.1:9"), Ok(LogSink::Endpoint(_))));
    }
}
