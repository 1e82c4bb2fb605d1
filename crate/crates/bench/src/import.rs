//! Converts a JSON-lines interchange index into a bag.
//!
//! One object per line:
//!
//! ```text
//! {"topic": "/camera", "ts_ns": 1000, "content_type": "image_frame",
//!  "metadata": {"height": 48, "width": 64, "channels": 3}, "file": "frames/0001.raw"}
//! {"topic": "/imu", "ts_ns": 1200, "content_type": "imu_sample",
//!  "imu": {"accel": [0, 0, 9.81], "gyro": [0, 0, 0]}}
//! ```
//!
//! `file` paths are relative to the index. `metadata` is taken from the first
//! line of each topic. Blank lines and lines starting with `#` are skipped.
//! Records are stably sorted by timestamp.

use std::collections::HashMap;
use std::path::Path;

use lambda_proto::ImuSample;
use lambda_transport::ContentType;
use serde::Deserialize;
use serde_json::Value;

use crate::bag::{Bag, BagRecord, BagTopic};
use crate::BenchError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImuFields {
    accel: [f64; 3],
    gyro: [f64; 3],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexLine {
    topic: String,
    ts_ns: u64,
    content_type: String,
    #[serde(default)]
    metadata: Option<Value>,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    imu: Option<ImuFields>,
}

pub fn import_index(index: &Path) -> Result<Bag, BenchError> {
    let text = std::fs::read_to_string(index)?;
    let base = index.parent().unwrap_or(Path::new("."));
    let mut bag = Bag::default();
    let mut by_name: HashMap<String, u32> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |m: String| BenchError::Import { line: i + 1, reason: m };
        let l: IndexLine = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if l.topic.is_empty() {
            return Err(bad("empty topic".into()));
        }
        let ct = ContentType::from_name(&l.content_type).ok_or_else(|| bad(format!("unknown content_type {:?}", l.content_type)))?;
        let topic = match by_name.get(&l.topic) {
            Some(&t) => {
                if bag.topics[t as usize].content_type != ct {
                    return Err(bad(format!("topic {} changes content type", l.topic)));
                }
                t
            }
            None => {
                let t = bag.topics.len() as u32;
                let meta = l.metadata.clone().unwrap_or_else(|| Value::Object(Default::default()));
                bag.topics.push(BagTopic::new(&l.topic, ct, meta));
                by_name.insert(l.topic.clone(), t);
                t
            }
        };
        let payload = match (l.file, l.imu) {
            (Some(f), None) => std::fs::read(base.join(&f)).map_err(|e| bad(format!("{f}: {e}")))?,
            (None, Some(imu)) => ImuSample { ts: l.ts_ns, accel: imu.accel, gyro: imu.gyro }.encode().to_vec(),
            _ => return Err(bad("exactly one of file or imu is required".into())),
        };
        bag.records.push(BagRecord { topic, ts: l.ts_ns, payload });
    }
    bag.records.sort_by_key(|r| r.ts);
    bag.validate()?;
    Ok(bag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imports_and_sorts() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.raw"), [7u8; 12]).unwrap();
        let idx = dir.path().join("index.jsonl");
        std::fs::write(
            &idx,
            concat!(
                "# header\n",
                r#"{"topic":"/cam","ts_ns":500,"content_type":"image_frame","metadata":{"height":2,"width":2,"channels":3},"file":"f.raw"}"#,
                "\n\n",
                r#"{"topic":"/imu","ts_ns":100,"content_type":"imu_sample","imu":{"accel":[0,0,9.81],"gyro":[0,0,0]}}"#,
                "\n"
            ),
        )
        .unwrap();
        let bag = import_index(&idx).unwrap();
        assert_eq!(bag.topics.len(), 2);
        assert_eq!(bag.records.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![100, 500]);
        assert_eq!(bag.records[0].payload.len(), 48);
        assert_eq!(bag.topics[0].metadata["width"], 2);
    }

    #[test]
    fn reports_line_of_error() {
        let dir = tempfile::tempdir().unwrap();
        let idx = dir.path().join("index.jsonl");
        std::fs::write(&idx, "\n{\"topic\":\"/x\",\"ts_ns\":1,\"content_type\":\"nope\",\"file\":\"a\"}\n").unwrap();
        match import_index(&idx) {
            Err(BenchError::Import { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
