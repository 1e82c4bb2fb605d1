//! The three reference lambdas replayed over a bag, next to an offline
//! recomputation of their decision rules.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::Duration;

use lambda_core::{nms, roughness_score, RoughnessConfig64};
use lambda_proto::{
    ActionKind, DataClass, Entry, FunctionManifest, ImuSample, Mode, QosSpec, SubscriptionSpec, TriggerAction,
};
use lambda_runtime::builtins::DEFAULT_START_THRESHOLD;
use lambda_runtime::inference::decode_mock_frame;
use lambda_transport::{Bus, QosProfile, Transport, ACTIONS_TOPIC};

use crate::bag::Bag;
use crate::replay::{replay, ReplayOptions};
use crate::run::{start_host, stop_all};
use crate::BenchError;

/// One decision, keyed by the bag record that caused it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub function: String,
    pub action: ActionKind,
    pub label: String,
    pub record: usize,
}

fn sub(topic: &str, class: DataClass, depth: usize, slot_size: Option<usize>) -> SubscriptionSpec {
    SubscriptionSpec { topic: topic.into(), class, depth_or_slots: depth, qos: QosSpec { history_depth: 64, ..Default::default() }, slot_size }
}

fn manifest(name: &str, trigger: &str, subs: Vec<SubscriptionSpec>, params: &[(&str, &str)]) -> FunctionManifest {
    FunctionManifest {
        name: name.into(),
        version: "1.0.0".into(),
        mode: Mode::Event { trigger_topic: trigger.into() },
        subscriptions: subs,
        params: params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        autostart: true,
        entry: Entry::Native(name.into()),
    }
}

/// `echo` on a low-volume trigger topic, sleeping `sleep_ms` per call.
pub fn echo_manifest(name: &str, topic: &str, sleep_ms: f64) -> FunctionManifest {
    let mut m = manifest(name, topic, vec![sub(topic, DataClass::LowVolume, 16, None)], &[("sleep_ms", &sleep_ms.to_string())]);
    m.entry = Entry::Native("echo".into());
    m
}

/// Manifests for `imu_fft` on `/imu` and `brake_dark`/`detector` on
/// `/camera`, with frames up to `frame_bytes`.
pub fn reference_manifests(frame_bytes: usize) -> Vec<FunctionManifest> {
    let imu = |depth| sub("/imu", DataClass::LowVolume, depth, None);
    let cam = || sub("/camera", DataClass::HighVolume, 4, Some(frame_bytes));
    vec![
        manifest("imu_fft", "/imu", vec![imu(512)], &[]),
        manifest("brake_dark", "/camera", vec![cam(), imu(64)], &[]),
        manifest("detector", "/camera", vec![cam()], &[]),
    ]
}

fn luma(frame: &[u8]) -> f64 {
    let px = frame.chunks_exact(3);
    let n = px.len() as f64;
    px.map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).sum::<f64>() / n
}

/// Decisions the reference lambdas make on `bag` with default params,
/// assuming every invocation sees exactly the data published before its
/// trigger.
pub fn expected_decisions(bag: &Bag) -> Result<Vec<Decision>, BenchError> {
    let imu_t = bag.topic_index("/imu").ok_or_else(|| BenchError::Config("bag has no /imu".into()))?;
    let cam_t = bag.topic_index("/camera").ok_or_else(|| BenchError::Config("bag has no /camera".into()))?;
    let cfg = RoughnessConfig64::with_start_threshold(DEFAULT_START_THRESHOLD);
    let mut out = Vec::new();
    let mut imu: Vec<ImuSample> = Vec::new();
    let mut rough = false;
    let mut braking_dark = false;
    let push = |out: &mut Vec<Decision>, f: &str, action, label: &str, record| {
        out.push(Decision { function: f.into(), action, label: label.into(), record })
    };
    for (i, r) in bag.records.iter().enumerate() {
        if r.topic == imu_t {
            imu.push(ImuSample::decode(r.ts, &r.payload)?);
            if imu.len() >= cfg.window_size {
                let z: Vec<f64> = imu[imu.len() - cfg.window_size..].iter().map(|s| s.accel[2]).collect();
                let score = roughness_score(&z, &cfg).map_err(|e| BenchError::Config(e.to_string()))?;
                if !rough && score > cfg.start_threshold {
                    rough = true;
                    push(&mut out, "imu_fft", ActionKind::StartRecording, "rough_road", i);
                } else if rough && score < cfg.stop_threshold {
                    rough = false;
                    push(&mut out, "imu_fft", ActionKind::StopRecording, "rough_road", i);
                }
            }
        } else if r.topic == cam_t {
            if imu.len() >= 10 {
                let ax = imu[imu.len() - 10..].iter().map(|s| s.accel[0]).sum::<f64>() / 10.0;
                let cond = ax <= -3.0 && luma(&r.payload) < 50.0;
                if cond != braking_dark {
                    braking_dark = cond;
                    let a = if cond { ActionKind::StartRecording } else { ActionKind::StopRecording };
                    push(&mut out, "brake_dark", a, "brake_dark", i);
                }
            }
            let dets: Vec<_> = decode_mock_frame(&r.payload)
                .map_err(|e| BenchError::Config(e.to_string()))?
                .into_iter()
                .filter(|d| d.is_valid())
                .collect();
            if nms(&dets, 0.45).iter().any(|d| d.class_id <= 1 && d.confidence > 0.5) {
                push(&mut out, "detector", ActionKind::Mark, "target_object", i);
            }
        }
    }
    Ok(out)
}

/// Replays `bag` once at `speed` through hosts for `manifests` and maps
/// every published action back to its cause record.
pub fn observed_decisions(bag: &Bag, manifests: &[FunctionManifest], speed: f64) -> Result<Vec<Decision>, BenchError> {
    let bus: Arc<dyn Transport> = Arc::new(Bus::new());
    let actions = bus.subscribe(ACTIONS_TOPIC, QosProfile::keep_last(1 << 16))?;
    let mut hosts = Vec::new();
    for m in manifests {
        match start_host(m.clone(), bus.clone(), None, false) {
            Ok(h) => hosts.push(h),
            Err(e) => {
                stop_all(hosts);
                return Err(e);
            }
        }
    }
    let opts = ReplayOptions { speed, record_sends: true, ..Default::default() };
    let report = replay(bag, &*bus, &opts);
    std::thread::sleep(Duration::from_millis(300));
    stop_all(hosts);
    let report = report?;
    let index: HashMap<(&str, u64), usize> =
        report.sent.iter().flatten().enumerate().map(|(i, s)| ((s.topic.as_str(), s.seq), i)).collect();
    let trigger_of: BTreeMap<&str, &str> = manifests.iter().filter_map(|m| Some((m.name.as_str(), m.trigger_topic()?))).collect();
    let mut out = Vec::new();
    for env in actions.drain() {
        let a = TriggerAction::from_payload(&env.payload)?;
        let topic = trigger_of.get(a.function.as_str()).copied().unwrap_or_default();
        let record = a
            .cause_seq
            .and_then(|s| index.get(&(topic, s)).copied())
            .ok_or_else(|| BenchError::Config(format!("action {a:?} has no known cause")))?;
        out.push(Decision { function: a.function, action: a.action, label: a.label, record });
    }
    bus.shutdown();
    Ok(out)
}

/// Decisions of one function in record order.
pub fn of_function<'a>(d: &'a [Decision], f: &str) -> Vec<&'a Decision> {
    let mut v: Vec<&Decision> = d.iter().filter(|x| x.function == f).collect();
    v.sort_by_key(|x| x.record);
    v
}
