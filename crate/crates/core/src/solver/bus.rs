//! In-process round-based message bus with a traffic audit log.

use std::collections::BTreeSet;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use super::SolveError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Copy holders send their values to the owner.
    Gather,
    /// Owners broadcast consensus values back to copy holders.
    Scatter,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Gather => "gather",
            Phase::Scatter => "scatter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    /// `(global variable index, value)`.
    pub payload: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub round: usize,
    pub phase: Phase,
    pub from: usize,
    pub to: usize,
    pub values: usize,
}

/// Delivers messages only along allowed directed edges. Each phase is a
/// barrier: messages sent during a phase become readable once it closes.
#[derive(Debug, Clone)]
pub struct MessageBus {
    edges: BTreeSet<(usize, usize)>,
    pending: Vec<Message>,
    inbox: Vec<Vec<Message>>,
    log: Vec<TrafficRecord>,
    round: usize,
    phase: Phase,
}

impl MessageBus {
    pub fn new(agents: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self {
            edges: edges.into_iter().collect(),
            pending: Vec::new(),
            inbox: vec![Vec::new(); agents],
            log: Vec::new(),
            round: 0,
            phase: Phase::Gather,
        }
    }

    pub fn begin(&mut self, round: usize, phase: Phase) {
        self.round = round;
        self.phase = phase;
        for q in &mut self.inbox {
            q.clear();
        }
    }

    pub fn send(&mut self, msg: Message) -> Result<(), SolveError> {
        if !self.edges.contains(&(msg.from, msg.to)) {
            return Err(SolveError::Locality {
                from: msg.from,
                to: msg.to,
            });
        }
        self.pending.push(msg);
        Ok(())
    }

    /// Closes the phase, logging and delivering everything sent during it.
    /// Messages are delivered in (sender, receiver) order regardless of send
    /// order, so results do not depend on thread scheduling.
    pub fn close(&mut self) -> Result<(), SolveError> {
        let mut msgs = std::mem::take(&mut self.pending);
        msgs.sort_by_key(|m| (m.from, m.to));
        for pair in msgs.windows(2) {
            if (pair[0].from, pair[0].to) == (pair[1].from, pair[1].to) {
                return Err(SolveError::Numerical(format!(
                    "two messages on edge {}->{} in one phase",
                    pair[0].from, pair[0].to
                )));
            }
        }
        for m in msgs {
            self.log.push(TrafficRecord {
                round: self.round,
                phase: self.phase,
                from: m.from,
                to: m.to,
                values: m.payload.len(),
            });
            let to = m.to;
            self.inbox[to].push(m);
        }
        Ok(())
    }

    pub fn inbox(&self, agent: usize) -> &[Message] {
        &self.inbox[agent]
    }

    pub fn log(&self) -> &[TrafficRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<TrafficRecord> {
        self.log
    }
}

pub fn write_traffic_csv<W: Write>(records: &[TrafficRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "round,phase,from,to,values")?;
    for r in records {
        writeln!(w, "{},{},{},{},{}", r.round, r.phase.as_str(), r.from, r.to, r.values)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_edges_and_logs_in_order() {
        let mut bus = MessageBus::new(3, [(0, 1), (1, 0), (2, 1)]);
        bus.begin(0, Phase::Gather);
        let m = |from, to| Message {
            from,
            to,
            payload: vec![(0, 1.0), (1, 2.0)],
        };
        assert!(matches!(bus.send(m(0, 2)), Err(SolveError::Locality { from: 0, to: 2 })));
        bus.send(m(2, 1)).unwrap();
        bus.send(m(0, 1)).unwrap();
        bus.close().unwrap();
        assert_eq!(bus.inbox(1).len(), 2);
        assert_eq!(bus.inbox(1)[0].from, 0);
        assert_eq!(bus.log().len(), 2);
        assert_eq!(bus.log()[1].values, 2);
        let mut out = Vec::new();
        write_traffic_csv(bus.log(), &mut out).unwrap();
        assert!(String::from_utf8(out).unwrap().contains("0,gather,2,1,2"));
    }

    #[test]
    fn duplicate_edge_in_phase_is_an_error() {
        let mut bus = MessageBus::new(2, [(0, 1)]);
        bus.begin(0, Phase::Scatter);
        for _ in 0..2 {
            bus.send(Message {
                from: 0,
                to: 1,
                payload: vec![],
            })
            .unwrap();
        }
        assert!(bus.close().is_err());
    }
}
