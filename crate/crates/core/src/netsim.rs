//! Synchronous-round message delivery between caches, with communication
//! accounting against a full-vector consensus baseline.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};

/// One directed delivery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LogEntry {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RoundTotals {
    pub messages: usize,
    pub scalars: usize,
}

#[derive(Debug, Clone, Default)]
pub struct MessageLog {
    /// Scalars a full-consensus message would carry (`N W`).
    pub full_payload: usize,
    rounds: Vec<RoundTotals>,
    entries: Vec<LogEntry>,
    keep_entries: bool,
    sent: usize,
    received: usize,
}

impl MessageLog {
    pub fn rounds(&self) -> &[RoundTotals] {
        &self.rounds
    }

    /// Per-delivery entries; empty unless detailed logging was requested.
    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn sent(&self) -> usize {
        self.sent
    }

    pub fn received(&self) -> usize {
        self.received
    }

    pub fn total_scalars(&self) -> usize {
        self.rounds.iter().map(|r| r.scalars).sum()
    }

    /// Columns: `round,sender,receiver,scalars,total_messages,total_scalars`,
    /// the last two cumulative over the log.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "round",
            "sender",
            "receiver",
            "scalars",
            "total_messages",
            "total_scalars",
        ])?;
        let mut total = 0;
        for (i, e) in self.entries.iter().enumerate() {
            total += e.scalars;
            w.write_record(&[
                e.round.to_string(),
                e.sender.to_string(),
                e.receiver.to_string(),
                e.scalars.to_string(),
                (i + 1).to_string(),
                total.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Messages delivered to one cache in a round, keyed by sender.
pub type Inbox = BTreeMap<usize, Vec<f64>>;

/// In-process network over a fixed undirected cache graph.
#[derive(Debug, Clone)]
pub struct Network {
    neighbors: Vec<Vec<usize>>,
    log: MessageLog,
}

impl Network {
    pub fn new(neighbors: Vec<Vec<usize>>, full_payload: usize) -> Self {
        Self {
            neighbors,
            log: MessageLog {
                full_payload,
                ..Default::default()
            },
        }
    }

    /// Keep one [`LogEntry`] per delivery in addition to round totals.
    pub fn with_detailed_log(mut self) -> Self {
        self.log.keep_entries = true;
        self
    }

    pub fn log(&self) -> &MessageLog {
        &self.log
    }

    pub fn into_log(self) -> MessageLog {
        self.log
    }

    /// Delivers one synchronous round. `outgoing[c]` must hold exactly one
    /// payload per neighbor of `c` and nothing else.
    pub fn exchange_round(&mut self, outgoing: Vec<Vec<(usize, Vec<f64>)>>) -> Result<Vec<Inbox>> {
        let c = self.neighbors.len();
        if outgoing.len() != c {
            return Err(Error::Protocol(format!(
                "{} senders in a network of {c} caches",
                outgoing.len()
            )));
        }
        let round = self.log.rounds.len();
        let mut inboxes = vec![Inbox::new(); c];
        let mut totals = RoundTotals::default();
        for (sender, msgs) in outgoing.into_iter().enumerate() {
            let mut targets: Vec<usize> = msgs.iter().map(|(to, _)| *to).collect();
            targets.sort_unstable();
            if targets != self.neighbors[sender] {
                return Err(Error::Protocol(format!(
                    "round {round}: cache {sender} addressed {targets:?} but its neighbors are {:?}",
                    self.neighbors[sender]
                )));
            }
            for (receiver, payload) in msgs {
                let scalars = payload.len();
                totals.messages += 1;
                totals.scalars += scalars;
                self.log.sent += 1;
                if self.log.keep_entries {
                    self.log.entries.push(LogEntry {
                        round,
                        sender,
                        receiver,
                        scalars,
                    });
                }
                inboxes[receiver].insert(sender, payload);
                self.log.received += 1;
            }
        }
        self.log.rounds.push(totals);
        Ok(inboxes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommReport {
    pub iterations: usize,
    pub messages: usize,
    pub scalars: usize,
    pub bytes: usize,
    /// Scalars the same message pattern would move with full `N W` payloads.
    pub full_consensus_scalars: usize,
    /// `full_consensus_scalars / scalars`; `None` when nothing was sent.
    pub reduction_ratio: Option<f64>,
}

pub const BYTES_PER_SCALAR: usize = 8;

/// Totals for `iterations` rounds at the log's per-round rate.
pub fn comm_report(log: &MessageLog, iterations: usize) -> CommReport {
    comm_report_with(log, iterations, BYTES_PER_SCALAR)
}

pub fn comm_report_with(
    log: &MessageLog,
    iterations: usize,
    bytes_per_scalar: usize,
) -> CommReport {
    let per_round = log.rounds.last().copied().unwrap_or_default();
    let messages = per_round.messages * iterations;
    let scalars = per_round.scalars * iterations;
    let full = messages * log.full_payload;
    CommReport {
        iterations,
        messages,
        scalars,
        bytes: scalars * bytes_per_scalar,
        full_consensus_scalars: full,
        reduction_ratio: (scalars > 0).then(|| full as f64 / scalars as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(c: usize) -> Vec<Vec<usize>> {
        (0..c)
            .map(|i| (0..c).filter(|&j| j != i).collect())
            .collect()
    }

    fn anchor_round(neighbors: &[Vec<usize>], len: usize) -> Vec<Vec<(usize, Vec<f64>)>> {
        neighbors
            .iter()
            .enumerate()
            .map(|(c, list)| list.iter().map(|&d| (d, vec![c as f64; len])).collect())
            .collect()
    }

    #[test]
    fn two_caches_one_edge() {
        let nb = complete(2);
        let mut net = Network::new(nb.clone(), 400).with_detailed_log();
        let inbox = net.exchange_round(anchor_round(&nb, 5 * 4)).unwrap();
        assert_eq!(
            net.log().rounds()[0],
            RoundTotals {
                messages: 2,
                scalars: 40
            }
        );
        assert_eq!(inbox[0][&1], vec![1.0; 20]);
        assert_eq!(inbox[1][&0], vec![0.0; 20]);
        assert_eq!(net.log().entries().len(), 2);

        net.exchange_round(anchor_round(&nb, 20)).unwrap();
        let mut buf = Vec::new();
        net.log().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "round,sender,receiver,scalars,total_messages,total_scalars"
        );
        assert_eq!(
            lines[1..],
            [
                "0,0,1,20,1,20",
                "0,1,0,20,2,40",
                "1,0,1,20,3,60",
                "1,1,0,20,4,80"
            ]
        );
    }

    #[test]
    fn complete_graph_message_count() {
        let nb = complete(4);
        let mut net = Network::new(nb.clone(), 400);
        for _ in 0..3 {
            net.exchange_round(anchor_round(&nb, 100)).unwrap();
        }
        assert!(net
            .log()
            .rounds()
            .iter()
            .all(|r| r.messages == 12 && r.scalars == 1200));
        assert_eq!(net.log().sent(), net.log().received());
        assert!(net.log().entries().is_empty());
    }

    #[test]
    fn missing_or_extra_messages_are_rejected() {
        let nb = complete(3);
        let mut net = Network::new(nb.clone(), 10);
        let mut round = anchor_round(&nb, 2);
        round[1].pop();
        assert!(matches!(net.exchange_round(round), Err(Error::Protocol(_))));
        let mut round = anchor_round(&nb, 2);
        round[0].push((0, vec![0.0]));
        assert!(matches!(net.exchange_round(round), Err(Error::Protocol(_))));
        assert!(net.exchange_round(vec![]).is_err());
    }

    #[test]
    fn report_arithmetic() {
        let nb = complete(2);
        let mut net = Network::new(nb.clone(), 100 * 4);
        let empty = comm_report(net.log(), 0);
        assert_eq!(
            (empty.messages, empty.scalars, empty.reduction_ratio),
            (0, 0, None)
        );

        net.exchange_round(anchor_round(&nb, 25 * 4)).unwrap();
        let rep = comm_report(net.log(), 1500);
        assert_eq!(rep.scalars, 2 * 25 * 4 * 1500);
        assert_eq!(rep.bytes, rep.scalars * 8);
        assert_eq!(rep.full_consensus_scalars, 2 * 400 * 1500);
        assert_eq!(rep.reduction_ratio, Some(4.0));
        assert_eq!(comm_report(net.log(), 0).scalars, 0);
    }

    #[test]
    fn reduction_ratio_is_n_over_q() {
        for (n, q, w, k) in [(100, 25, 4, 7), (100, 10, 1, 3), (64, 16, 8, 1)] {
            let nb = complete(4);
            let mut net = Network::new(nb.clone(), n * w);
            net.exchange_round(anchor_round(&nb, q * w)).unwrap();
            assert_eq!(
                comm_report(net.log(), k).reduction_ratio,
                Some(n as f64 / q as f64)
            );
        }
    }
}
