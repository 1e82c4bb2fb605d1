use std::sync::Arc;
use std::thread;
use std::time::Duration;

use lambda_transport::server::BusServer;
use lambda_transport::{connect, Bus, ContentType, Endpoint, QosProfile, Transport, TransportError};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn concurrent_producers_account_for_every_message() {
    const PRODUCERS: usize = 4;
    const MESSAGES: usize = 20_000;
    let bus = Arc::new(Bus::new());
    let sub = bus.subscribe("stress", QosProfile::keep_last(64)).unwrap();
    let handles: Vec<_> = (0..PRODUCERS)
        .map(|p| {
            let bus = bus.clone();
            thread::spawn(move || {
                let mut rng = rand::thread_rng();
                for i in 0..MESSAGES {
                    let payload = [(p as u8), (i % 251) as u8];
                    bus.publish("stress", &payload, ContentType::RawBytes, 0).unwrap();
                    if rng.gen_ratio(1, 1000) {
                        thread::yield_now();
                    }
                }
            })
        })
        .collect();

    let mut consumed = 0u64;
    let mut last_seq = 0u64;
    let mut check = |env: lambda_transport::Envelope| {
        assert!(env.seq > last_seq, "reordered delivery");
        last_seq = env.seq;
        consumed += 1;
    };
    while handles.iter().any(|h| !h.is_finished()) {
        if let Some(env) = sub.recv_timeout(Duration::from_millis(1)).unwrap() {
            check(env);
        }
    }
    for h in handles {
        h.join().unwrap();
    }
    for env in sub.drain() {
        check(env);
    }
    assert_eq!(consumed + sub.dropped(), (PRODUCERS * MESSAGES) as u64);
    assert_eq!(last_seq, (PRODUCERS * MESSAGES) as u64);
}

proptest! {
    /// Received is always the undropped suffix of each overflow burst: the
    /// union of received and dropped seqs is exactly what was published.
    #[test]
    fn keep_last_accounting(depth in 1usize..8, ops in prop::collection::vec(prop::bool::ANY, 1..120)) {
        let bus = Bus::new();
        let sub = bus.subscribe("t", QosProfile::keep_last(depth)).unwrap();
        let mut published = 0u64;
        let mut received = Vec::new();
        for publish in ops {
            if publish {
                bus.publish("t", &[], ContentType::RawBytes, 0).unwrap();
                published += 1;
            } else {
                received.extend(sub.drain().into_iter().map(|e| e.seq));
            }
        }
        received.extend(sub.drain().into_iter().map(|e| e.seq));
        prop_assert!(received.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(received.len() as u64 + sub.dropped(), published);
        if published > 0 {
            prop_assert_eq!(*received.last().unwrap(), published);
        }
    }
}

fn round_trip(endpoint: Endpoint) {
    let bus = Arc::new(Bus::new());
    let server = BusServer::bind(&endpoint, bus.clone()).unwrap();
    let remote = connect(server.endpoint()).unwrap();

    let local_sub = bus.subscribe("/imu", QosProfile::default()).unwrap();
    let remote_sub = remote.subscribe("/imu", QosProfile::default()).unwrap();

    let r1 = remote.publish("/imu", b"abc", ContentType::ImuSample, 99).unwrap();
    let r2 = bus.publish("/imu", b"def", ContentType::ImuSample, 100).unwrap();
    assert_eq!(r2.seq, r1.seq + 1);

    let e = local_sub.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
    assert_eq!((&*e.payload, e.source_ts, e.content_type), (&b"abc"[..], 99, ContentType::ImuSample));

    let got: Vec<_> = (0..2)
        .map(|_| remote_sub.recv_timeout(Duration::from_secs(2)).unwrap().unwrap())
        .collect();
    assert_eq!(got[0].seq, r1.seq);
    assert_eq!(&*got[1].payload, b"def");
    assert_eq!(got[1].source_ts, 100);

    remote.shutdown();
    assert!(matches!(
        remote.publish("/imu", b"x", ContentType::RawBytes, 0),
        Err(TransportError::ShutDown)
    ));
}

#[test]
fn tcp_round_trip() {
    round_trip("tcp://127.0.0.1:0".parse().unwrap());
}

#[test]
fn unix_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    round_trip(Endpoint::Unix(dir.path().join("bus.sock")));
}

#[test]
fn remote_errors_surface() {
    let bus = Arc::new(Bus::with_max_payload(8));
    let server = BusServer::bind(&"tcp://127.0.0.1:0".parse().unwrap(), bus).unwrap();
    let remote = connect(server.endpoint()).unwrap();
    assert!(remote.publish("t", &[0; 9], ContentType::RawBytes, 0).is_err());
    assert!(remote.publish("t", &[0; 8], ContentType::RawBytes, 0).is_ok());
}

#[test]
fn remote_subscription_closes_with_server_connection() {
    let bus = Arc::new(Bus::new());
    let mut server = BusServer::bind(&"tcp://127.0.0.1:0".parse().unwrap(), bus.clone()).unwrap();
    let remote = connect(server.endpoint()).unwrap();
    let sub = remote.subscribe("t", QosProfile::default()).unwrap();
    server.stop();
    bus.shutdown();
    remote.shutdown();
    let deadline = std::time::Instant::now() + Duration::from_secs(2);
    loop {
        match sub.recv_timeout(Duration::from_millis(50)) {
            Err(TransportError::ShutDown) => break,
            _ if std::time::Instant::now() > deadline => panic!("subscription never closed"),
            _ => {}
        }
    }
}
