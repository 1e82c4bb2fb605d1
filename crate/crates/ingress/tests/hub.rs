use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use lambda_ingress::{ChannelSpec, IngressError, IngressHub, Item, SlotPool, TriggerOutcome};
use lambda_transport::{Bus, ContentType, QosProfile, Transport};
use proptest::prelude::*;

fn wait_for(mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !cond() {
        assert!(Instant::now() < deadline, "condition not reached");
        thread::sleep(Duration::from_millis(1));
    }
}

fn received(hub: &IngressHub, topic: &str) -> u64 {
    hub.counters().into_iter().find(|c| c.topic == topic).unwrap().received
}

#[test]
fn ring_keeps_newest_depth() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/imu", QosProfile::keep_last(128)).unwrap(), ChannelSpec::low_volume(64)).unwrap();
    for i in 1..=70u64 {
        bus.publish("/imu", &i.to_le_bytes(), ContentType::ImuSample, i).unwrap();
    }
    wait_for(|| received(&hub, "/imu") == 70);
    let w = hub.window("/imu", 100).unwrap();
    assert_eq!(w.len(), 64);
    assert_eq!(w[0].source_ts, 7);
    match hub.latest("/imu").unwrap() {
        Some(Item::Record(r)) => assert_eq!(r.source_ts, 70),
        other => panic!("{other:?}"),
    }
}

#[test]
fn latest_is_empty_before_arrival_and_errors_on_unknown() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/a", QosProfile::default()).unwrap(), ChannelSpec::low_volume(4)).unwrap();
    assert!(hub.latest("/a").unwrap().is_none());
    assert_eq!(hub.latest("/b").unwrap_err(), IngressError::UnknownTopic("/b".into()));
}

#[test]
fn duplicate_topic_rejected() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/a", QosProfile::default()).unwrap(), ChannelSpec::low_volume(4)).unwrap();
    let err = hub.attach(bus.subscribe("/a", QosProfile::default()).unwrap(), ChannelSpec::low_volume(4));
    assert_eq!(err.unwrap_err(), IngressError::DuplicateTopic("/a".into()));
}

#[test]
fn window_on_frame_topic_is_wrong_class() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/cam", QosProfile::default()).unwrap(), ChannelSpec::high_volume(2).with_slot_size(64))
        .unwrap();
    assert!(matches!(hub.window("/cam", 1), Err(IngressError::WrongClass(_))));
}

#[test]
fn exhausted_pool_drops_newest_and_keeps_leases() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/cam", QosProfile::default()).unwrap(), ChannelSpec::high_volume(2).with_slot_size(16))
        .unwrap();
    let lease = |hub: &IngressHub| match hub.latest("/cam").unwrap() {
        Some(Item::Frame(l)) => l,
        other => panic!("{other:?}"),
    };
    bus.publish("/cam", &[1; 16], ContentType::ImageFrame, 1).unwrap();
    wait_for(|| received(&hub, "/cam") == 1);
    let a = lease(&hub);
    bus.publish("/cam", &[2; 16], ContentType::ImageFrame, 2).unwrap();
    wait_for(|| received(&hub, "/cam") == 2);
    let b = lease(&hub);
    // Both slots are held by the consumer; the pool's own lease moved to b.
    bus.publish("/cam", &[3; 16], ContentType::ImageFrame, 3).unwrap();
    wait_for(|| received(&hub, "/cam") == 3);
    let pool = hub.pool("/cam").unwrap();
    assert_eq!(pool.counters().dropped, 1);
    assert_eq!((&*a.bytes(), &*b.bytes()), (&[1u8; 16][..], &[2u8; 16][..]));
    assert_eq!(pool.lease_count(a.slot_index()), 1);
    assert_eq!(pool.lease_count(b.slot_index()), 2);
}

#[test]
fn two_latest_calls_share_a_slot() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(None);
    hub.attach(bus.subscribe("/cam", QosProfile::default()).unwrap(), ChannelSpec::high_volume(3).with_slot_size(8))
        .unwrap();
    bus.publish("/cam", b"frame", ContentType::ImageFrame, 5).unwrap();
    wait_for(|| received(&hub, "/cam") == 1);
    let (Some(Item::Frame(x)), Some(Item::Frame(y))) = (hub.latest("/cam").unwrap(), hub.latest("/cam").unwrap())
    else {
        panic!("expected frames")
    };
    assert_eq!(x.slot_index(), y.slot_index());
    // Two consumer leases plus the pool's hold on the newest frame.
    assert_eq!(hub.pool("/cam").unwrap().lease_count(x.slot_index()), 3);
    drop((x, y));
    assert_eq!(hub.pool("/cam").unwrap().total_leases(), 1);
}

#[test]
fn trigger_single_coalesced_and_timeout() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(Some("/t".into()));
    hub.attach(bus.subscribe("/t", QosProfile::keep_last(16)).unwrap(), ChannelSpec::low_volume(16)).unwrap();
    bus.publish("/t", &[], ContentType::RawBytes, 11).unwrap();
    match hub.await_trigger(Duration::from_secs(2)).unwrap() {
        TriggerOutcome::Triggered { count, cause_seq, cause_source_ts } => assert_eq!((count, cause_seq, cause_source_ts), (1, 1, 11)),
        other => panic!("{other:?}"),
    }
    for ts in 0..5 {
        bus.publish("/t", &[], ContentType::RawBytes, 100 + ts).unwrap();
    }
    wait_for(|| hub.trigger_arrivals() == 6);
    assert!(matches!(
        hub.await_trigger(Duration::from_secs(1)).unwrap(),
        TriggerOutcome::Triggered { count: 5, cause_seq: 6, cause_source_ts: 104 }
    ));
    assert_eq!(hub.await_trigger(Duration::from_millis(20)).unwrap(), TriggerOutcome::TimedOut);
}

#[test]
fn await_without_trigger_topic_errors() {
    let hub = IngressHub::new(None);
    assert_eq!(hub.await_trigger(Duration::ZERO).unwrap_err(), IngressError::NoTriggerTopic);
}

#[test]
fn transport_shutdown_marks_hub_and_wakes_waiter() {
    let bus = Bus::new();
    let mut hub = IngressHub::new(Some("/t".into()));
    hub.attach(bus.subscribe("/t", QosProfile::default()).unwrap(), ChannelSpec::low_volume(4)).unwrap();
    bus.shutdown();
    assert_eq!(hub.await_trigger(Duration::from_secs(5)).unwrap(), TriggerOutcome::Closed);
    wait_for(|| hub.transport_lost());
}

/// P publishers on P topics, one consumer polling every ring.
#[test]
fn mpsc_stress_accounts_for_every_message() {
    const PRODUCERS: usize = 4;
    const MESSAGES: u64 = 100_000;
    let bus = Arc::new(Bus::new());
    let mut hub = IngressHub::new(None);
    let topics: Vec<String> = (0..PRODUCERS).map(|p| format!("/s{p}")).collect();
    for t in &topics {
        hub.attach(bus.subscribe(t, QosProfile::keep_last(256)).unwrap(), ChannelSpec::low_volume(256).with_record_max(16))
            .unwrap();
    }
    let producers: Vec<_> = topics
        .iter()
        .cloned()
        .map(|t| {
            let bus = bus.clone();
            thread::spawn(move || {
                for i in 1..=MESSAGES {
                    bus.publish(&t, &i.to_le_bytes(), ContentType::RawBytes, i).unwrap();
                }
            })
        })
        .collect();

    let mut cursors = vec![0u64; PRODUCERS];
    let mut last = vec![0u64; PRODUCERS];
    let mut consumed = vec![0u64; PRODUCERS];
    let mut missed = vec![0u64; PRODUCERS];
    let mut poll = |hub: &IngressHub| {
        for (p, t) in topics.iter().enumerate() {
            let (recs, m) = hub.ring(t).unwrap().read_since(&mut cursors[p]);
            for r in recs {
                assert!(r.seq > last[p], "topic {t}: seq {} after {}", r.seq, last[p]);
                assert_eq!(r.payload, r.source_ts.to_le_bytes());
                last[p] = r.seq;
                consumed[p] += 1;
            }
            missed[p] += m;
        }
    };
    while producers.iter().any(|h| !h.is_finished()) {
        poll(&hub);
    }
    for h in producers {
        h.join().unwrap();
    }
    let settled = |hub: &IngressHub| hub.counters().iter().all(|c| c.received + c.transport_dropped == MESSAGES);
    wait_for(|| settled(&hub));
    poll(&hub);
    for c in hub.counters() {
        let p = topics.iter().position(|t| *t == c.topic).unwrap();
        assert_eq!(c.rejected, 0);
        assert_eq!(consumed[p] + missed[p] + c.transport_dropped, MESSAGES, "{c:?}");
    }
}

#[test]
fn pool_counters_hold_at_every_sample() {
    const FRAMES: u64 = 50_000;
    let (pool, mut writer) = SlotPool::new(4, 256).unwrap();
    let done = Arc::new(AtomicBool::new(false));
    let sampler = {
        let (pool, done) = (pool.clone(), done.clone());
        thread::spawn(move || {
            let mut samples = 0u64;
            while !done.load(Ordering::Acquire) {
                let c = pool.counters();
                assert_eq!(c.frames_ingested, c.frames_stored + c.dropped, "{c:?}");
                samples += 1;
            }
            samples
        })
    };
    let consumer = {
        let (pool, done) = (pool.clone(), done.clone());
        thread::spawn(move || {
            let mut held = Vec::new();
            while !done.load(Ordering::Acquire) {
                if let Some(l) = pool.latest() {
                    let bytes = l.bytes();
                    let expect = (l.seq() % 251) as u8;
                    assert!(bytes.iter().all(|&b| b == expect), "torn frame at seq {}", l.seq());
                    drop(bytes);
                    held.push(l);
                    if held.len() > 3 {
                        held.remove(0);
                    }
                }
            }
        })
    };
    let big = [0u8; 300];
    for seq in 1..=FRAMES {
        if seq % 1000 == 0 {
            let _ = writer.ingest(seq, seq, &big);
        } else {
            let _ = writer.ingest(seq, seq, &[(seq % 251) as u8; 200]);
        }
    }
    done.store(true, Ordering::Release);
    assert!(sampler.join().unwrap() > 0);
    consumer.join().unwrap();
    let c = pool.counters();
    assert_eq!(c.frames_ingested, FRAMES);
    assert_eq!(c.frames_ingested, c.frames_stored + c.dropped);
    assert_eq!(c.oversize, FRAMES / 1000);
    assert_eq!(pool.total_leases(), 1);
}

proptest! {
    #[test]
    fn window_is_suffix_of_published(cap in 1usize..16, n in 0u64..64, ask in 1usize..32) {
        let (ring, mut w) = lambda_ingress::RingBuffer::new(cap, 8).unwrap();
        for i in 1..=n {
            w.push(i, i, &i.to_le_bytes()).unwrap();
        }
        let got: Vec<u64> = ring.window(ask).iter().map(|r| r.seq).collect();
        let k = (ask.min(cap) as u64).min(n);
        let expect: Vec<u64> = (n - k + 1..=n).collect();
        prop_assert_eq!(got, expect);
    }

    /// Releasing every consumer lease leaves only the pool's hold on the newest frame.
    #[test]
    fn leases_balance(ops in prop::collection::vec(0u8..3, 1..80)) {
        let (pool, mut w) = SlotPool::new(3, 8).unwrap();
        let mut held = Vec::new();
        let mut seq = 0;
        for op in ops {
            match op {
                0 => { seq += 1; let _ = w.ingest(seq, seq, &[seq as u8; 8]); }
                1 => if let Some(l) = pool.latest() { held.push(l) },
                _ => { held.pop(); }
            }
            for l in &held {
                prop_assert!(l.bytes().iter().all(|&b| b == l.seq() as u8));
            }
        }
        drop(held);
        prop_assert_eq!(pool.total_leases(), u32::from(seq > 0 && pool.counters().frames_stored > 0));
    }
}
