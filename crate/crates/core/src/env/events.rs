use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Collected { row: i32, col: i32 },
    Fired,
    Hit { by: usize },
    Returned { row: i32, col: i32 },
    AppleRespawned { row: i32, col: i32 },
    EpisodeReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub step: u64,
    pub agent: Option<usize>,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn new(step: u64, agent: Option<usize>, kind: EventKind) -> Self {
        Event { step, agent, kind }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn extend(&mut self, other: EventLog) {
        self.events.extend(other.events);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn terminated(&self) -> bool {
        self.events.iter().any(|e| e.kind == EventKind::EpisodeReset)
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<EventLog> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(EventLog { events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let mut log = EventLog::default();
        log.push(Event::new(3, Some(1), EventKind::Collected { row: 2, col: 5 }));
        log.push(Event::new(3, None, EventKind::EpisodeReset));
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with(r#"{"step":3,"agent":1,"kind":"collected""#), "{text}");
        assert_eq!(EventLog::read_jsonl(&text).unwrap(), log);
    }
}
