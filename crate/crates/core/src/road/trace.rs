//! Newline-delimited JSON traces of world states, one record per vehicle per tick.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::world::{World, WorldEvent};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub tick: u64,
    pub vehicle: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub lane: usize,
    #[serde(default)]
    pub ego: bool,
    #[serde(default)]
    pub crashed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<String>,
}

fn describe(e: &WorldEvent) -> String {
    match e {
        WorldEvent::Collision { a, b } => format!("collision:{a}:{b}"),
        WorldEvent::OffRoad { vehicle } => format!("off_road:{vehicle}"),
    }
}

/// One record per active vehicle, tagged with the events that involve it.
pub fn snapshot(world: &World, events: &[WorldEvent]) -> Vec<TraceRecord> {
    world
        .vehicles()
        .iter()
        .filter(|v| v.active)
        .map(|v| TraceRecord {
            tick: world.tick(),
            vehicle: v.id,
            x: v.state.position.x,
            y: v.state.position.y,
            heading: v.state.heading,
            speed: v.state.speed,
            lane: v.state.lane.0,
            ego: v.state.is_ego,
            crashed: v.crashed,
            events: events
                .iter()
                .filter(|e| e.involves(v.id))
                .map(describe)
                .collect(),
        })
        .collect()
}

pub fn write_records<W: Write>(out: &mut W, records: &[TraceRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses a trace, reporting the 1-based line of the first malformed record.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: TraceRecord = serde_json::from_str(line).map_err(|e| Error::Trace {
            line: i + 1,
            message: e.to_string(),
        })?;
        if let Some(prev) = records.last().map(|p: &TraceRecord| p.tick) {
            if r.tick < prev {
                return Err(Error::Trace {
                    line: i + 1,
                    message: format!("tick {} follows tick {prev}", r.tick),
                });
            }
        }
        records.push(r);
    }
    Ok(records)
}

/// Groups consecutive records by tick.
pub fn frames(records: &[TraceRecord]) -> Vec<&[TraceRecord]> {
    records.chunk_by(|a, b| a.tick == b.tick).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlInput;
    use crate::road::{ScenarioConfig, Task};

    #[test]
    fn round_trip() {
        let mut w = World::build(&ScenarioConfig::new(Task::UTurn).with_count(5)).unwrap();
        let mut buf = Vec::new();
        for _ in 0..3 {
            let ev = w.step(ControlInput::default(), 1.0 / 15.0).unwrap();
            write_records(&mut buf, &snapshot(&w, &ev)).unwrap();
        }
        let text = String::from_utf8(buf).unwrap();
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(parsed.len(), 18);
        assert_eq!(frames(&parsed).len(), 3);
        assert!(parsed[0].ego);
    }

    #[test]
    fn reports_line_number() {
        let good = r#"{"tick":0,"vehicle":0,"x":0.0,"y":0.0,"heading":0.0,"speed":1.0,"lane":0}"#;
        let text = format!("{good}\n{good}\n{{\"tick\": oops}}\n");
        match parse_trace(&text) {
            Err(Error::Trace { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
