//! Offline correctness checking. A captured history is replayed into a
//! direct serialization graph whose acyclicity decides conflict
//! serializability; for snapshot protocols the begin/commit stamps
//! additionally pin every read to the latest commit at or before the
//! reader's begin.
//!
//! Every write in a history carries a per-key tag that is unique among that
//! key's writers, so version order is explicit and no write collapsing
//! happens. The initial database state is modeled as loader transaction 0,
//! which precedes everything.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use crate::capture::{CapturedTxn, LOADER_TXN};

/// A validated log of committed transactions, in the order they appear in
/// the input.
#[derive(Clone, Debug, Default)]
pub struct History {
    txns: Vec<CapturedTxn>,
}

impl History {
    /// Wraps an in-memory log, rejecting duplicate and reserved ids.
    pub fn from_txns(txns: Vec<CapturedTxn>) -> Result<History, HistoryError> {
        let mut seen = HashSet::with_capacity(txns.len());
        for txn in &txns {
            if txn.id == LOADER_TXN {
                return Err(HistoryError::ReservedLoaderId);
            }
            if !seen.insert(txn.id) {
                return Err(HistoryError::DuplicateTxn { id: txn.id });
            }
        }
        Ok(History { txns })
    }

    pub fn txns(&self) -> &[CapturedTxn] {
        &self.txns
    }

    pub fn len(&self) -> usize {
        self.txns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txns.is_empty()
    }

    /// True when every transaction carries begin/commit stamps, which the
    /// snapshot-read check requires.
    pub fn fully_stamped(&self) -> bool {
        self.txns.iter().all(|t| t.ts.is_some())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HistoryError {
    Syntax { line: usize, reason: String },
    ReservedLoaderId,
    DuplicateTxn { id: u64 },
    DanglingWriter { txn: u64, key: u64, writer: u64 },
    DuplicateTag { key: u64, tag: u64 },
    MissingStamps { txn: u64 },
}

impl fmt::Display for HistoryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HistoryError::Syntax { line, reason } => write!(f, "line {line}: {reason}"),
            HistoryError::ReservedLoaderId => {
                write!(f, "txn id {LOADER_TXN} is reserved for the loader")
            }
            HistoryError::DuplicateTxn { id } => write!(f, "txn {id} appears twice"),
            HistoryError::DanglingWriter { txn, key, writer } => write!(
                f,
                "txn {txn} reads key {key} from txn {writer}, which never wrote it"
            ),
            HistoryError::DuplicateTag { key, tag } => write!(
                f,
                "key {key} has two writes tagged {tag}, so version order is ambiguous"
            ),
            HistoryError::MissingStamps { txn } => {
                write!(f, "txn {txn} has no begin/commit stamps")
            }
        }
    }
}

impl std::error::Error for HistoryError {}

fn syntax(line: usize, reason: String) -> HistoryError {
    HistoryError::Syntax { line, reason }
}

fn number(tok: Option<&str>, line: usize) -> Result<u64, HistoryError> {
    let t = tok.ok_or_else(|| syntax(line, "line ends where a number was expected".into()))?;
    t.parse()
        .map_err(|_| syntax(line, format!("`{t}` is not a number")))
}

fn keyword(tok: Option<&str>, want: &str, line: usize) -> Result<(), HistoryError> {
    match tok {
        Some(t) if t == want => Ok(()),
        Some(t) => Err(syntax(line, format!("expected `{want}`, got `{t}`"))),
        None => Err(syntax(line, format!("line ends where `{want}` was expected"))),
    }
}

fn key_value(tok: &str, line: usize) -> Result<(u64, u64), HistoryError> {
    let pair = tok
        .strip_prefix("k:")
        .and_then(|body| body.split_once('='))
        .ok_or_else(|| syntax(line, format!("expected `k:<key>=<value>`, got `{tok}`")))?;
    let key = pair
        .0
        .parse()
        .map_err(|_| syntax(line, format!("`{}` is not a number", pair.0)))?;
    let value = pair
        .1
        .parse()
        .map_err(|_| syntax(line, format!("`{}` is not a number", pair.1)))?;
    Ok((key, value))
}

/// Parses the line format produced by [`crate::capture::write_history`]:
/// one `txn` line per commit, plus a `ts` line for stamped transactions.
/// Blank lines are skipped; anything else is an error.
pub fn parse_history(input: &str) -> Result<History, HistoryError> {
    let mut txns: Vec<CapturedTxn> = Vec::new();
    let mut index: HashMap<u64, usize> = HashMap::new();
    for (i, raw) in input.lines().enumerate() {
        let line = i + 1;
        let mut tok = raw.split_ascii_whitespace();
        match tok.next() {
            None => continue,
            Some("txn") => {
                let id = number(tok.next(), line)?;
                if id == LOADER_TXN {
                    return Err(HistoryError::ReservedLoaderId);
                }
                keyword(tok.next(), "worker", line)?;
                let worker = number(tok.next(), line)? as usize;
                keyword(tok.next(), "pos", line)?;
                let pos = number(tok.next(), line)?;
                let mut txn = CapturedTxn {
                    id,
                    worker,
                    pos,
                    reads: Vec::new(),
                    writes: Vec::new(),
                    ts: None,
                };
                enum Section {
                    Reads,
                    Writes,
                }
                let mut section = None;
                for t in tok {
                    match t {
                        "R" => section = Some(Section::Reads),
                        "W" => section = Some(Section::Writes),
                        pair => {
                            let (key, value) = key_value(pair, line)?;
                            match section {
                                Some(Section::Reads) => txn.reads.push((key, value)),
                                Some(Section::Writes) => txn.writes.push((key, value)),
                                None => {
                                    return Err(syntax(
                                        line,
                                        format!("`{pair}` before an R or W marker"),
                                    ))
                                }
                            }
                        }
                    }
                }
                if index.insert(id, txns.len()).is_some() {
                    return Err(HistoryError::DuplicateTxn { id });
                }
                txns.push(txn);
            }
            Some("ts") => {
                let id = number(tok.next(), line)?;
                keyword(tok.next(), "begin", line)?;
                let begin = number(tok.next(), line)?;
                keyword(tok.next(), "commit", line)?;
                let commit = number(tok.next(), line)?;
                if let Some(t) = tok.next() {
                    return Err(syntax(line, format!("trailing `{t}`")));
                }
                let slot = *index
                    .get(&id)
                    .ok_or_else(|| syntax(line, format!("stamps for unknown txn {id}")))?;
                if txns[slot].ts.is_some() {
                    return Err(syntax(line, format!("txn {id} is stamped twice")));
                }
                txns[slot].ts = Some((begin, commit));
            }
            Some(other) => {
                return Err(syntax(line, format!("expected `txn` or `ts`, got `{other}`")))
            }
        }
    }
    Ok(History { txns })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Wr,
    Ww,
    Rw,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Wr => "wr",
            EdgeKind::Ww => "ww",
            EdgeKind::Rw => "rw",
        }
    }
}

/// One dependency: `from` must precede `to` in any equivalent serial order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: u64,
    pub to: u64,
    pub kind: EdgeKind,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}->{})", self.kind.name(), self.from, self.to)
    }
}

/// Direct serialization graph: nodes are committed transactions (plus the
/// loader when referenced), edges are sorted and deduplicated, so equal
/// histories build equal graphs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Dsg {
    nodes: Vec<u64>,
    edges: Vec<Edge>,
}

impl Dsg {
    pub fn nodes(&self) -> &[u64] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
}

/// Per key, the committed writers ordered by value tag.
fn key_chains(history: &History) -> Result<BTreeMap<u64, Vec<(u64, u64)>>, HistoryError> {
    let mut chains: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    for txn in &history.txns {
        for &(key, tag) in &txn.writes {
            chains.entry(key).or_default().push((tag, txn.id));
        }
    }
    for (&key, chain) in &mut chains {
        chain.sort_unstable();
        for pair in chain.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(HistoryError::DuplicateTag { key, tag: pair[0].0 });
            }
        }
    }
    Ok(chains)
}

fn push_edge(edges: &mut BTreeSet<Edge>, from: u64, to: u64, kind: EdgeKind) {
    if from != to {
        edges.insert(Edge { from, to, kind });
    }
}

/// Builds the dependency graph: `wr` from writer to reader, `ww` between
/// successive writers of a key in tag order, `rw` from reader to the writer
/// that overwrote the version it read. A transaction overwriting its own
/// read orders nothing, so self-edges are dropped.
pub fn dsg_build(history: &History) -> Result<Dsg, HistoryError> {
    let chains = key_chains(history)?;
    let mut slot: HashMap<(u64, u64), usize> = HashMap::new();
    for (&key, chain) in &chains {
        for (i, &(_, writer)) in chain.iter().enumerate() {
            slot.insert((key, writer), i);
        }
    }

    let mut edges: BTreeSet<Edge> = BTreeSet::new();
    for txn in &history.txns {
        for &(key, writer) in &txn.reads {
            let chain = chains.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let overwriter = if writer == LOADER_TXN {
                chain.first()
            } else {
                let at = *slot
                    .get(&(key, writer))
                    .ok_or(HistoryError::DanglingWriter { txn: txn.id, key, writer })?;
                chain.get(at + 1)
            };
            push_edge(&mut edges, writer, txn.id, EdgeKind::Wr);
            if let Some(&(_, over)) = overwriter {
                push_edge(&mut edges, txn.id, over, EdgeKind::Rw);
            }
        }
    }
    for chain in chains.values() {
        let mut prev = LOADER_TXN;
        for &(_, writer) in chain {
            push_edge(&mut edges, prev, writer, EdgeKind::Ww);
            prev = writer;
        }
    }

    let mut nodes: BTreeSet<u64> = history.txns.iter().map(|t| t.id).collect();
    for e in &edges {
        nodes.insert(e.from);
        nodes.insert(e.to);
    }
    Ok(Dsg {
        nodes: nodes.into_iter().collect(),
        edges: edges.into_iter().collect(),
    })
}

/// Outcome of the acyclicity check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Acyclic,
    /// A concrete witness: each edge's `to` is the next edge's `from`, and
    /// the last edge closes back on the first.
    Cycle(Vec<Edge>),
}

impl Verdict {
    pub fn is_acyclic(&self) -> bool {
        matches!(self, Verdict::Acyclic)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Acyclic => write!(f, "acyclic"),
            Verdict::Cycle(edges) => {
                write!(f, "cycle:")?;
                for e in edges {
                    write!(f, " {e}")?;
                }
                Ok(())
            }
        }
    }
}

/// Depth-first cycle detection. Nodes and adjacency lists are visited in
/// sorted order, so the same graph always yields the same verdict and the
/// same witness.
pub fn check_serializable(dsg: &Dsg) -> Verdict {
    let index: HashMap<u64, usize> = dsg.nodes.iter().enumerate().map(|(i, &n)| (n, i)).collect();
    let mut adjacent: Vec<Vec<usize>> = vec![Vec::new(); dsg.nodes.len()];
    for (ei, e) in dsg.edges.iter().enumerate() {
        adjacent[index[&e.from]].push(ei);
    }

    const WHITE: u8 = 0;
    const GREY: u8 = 1;
    const BLACK: u8 = 2;
    let mut color = vec![WHITE; dsg.nodes.len()];
    // In-progress path: (node, cursor into its adjacency, edge that entered it).
    let mut stack: Vec<(usize, usize, Option<usize>)> = Vec::new();

    for start in 0..dsg.nodes.len() {
        if color[start] != WHITE {
            continue;
        }
        color[start] = GREY;
        stack.push((start, 0, None));
        while let Some(frame) = stack.last_mut() {
            let node = frame.0;
            let Some(&ei) = adjacent[node].get(frame.1) else {
                color[node] = BLACK;
                stack.pop();
                continue;
            };
            frame.1 += 1;
            let next = index[&dsg.edges[ei].to];
            match color[next] {
                WHITE => {
                    color[next] = GREY;
                    stack.push((next, 0, Some(ei)));
                }
                GREY => {
                    let entry = stack.iter().position(|&(n, _, _)| n == next).unwrap();
                    let mut cycle: Vec<Edge> = stack[entry + 1..]
                        .iter()
                        .map(|&(_, _, entered)| dsg.edges[entered.unwrap()])
                        .collect();
                    cycle.push(dsg.edges[ei]);
                    return Verdict::Cycle(cycle);
                }
                _ => {}
            }
        }
    }
    Verdict::Acyclic
}

/// One snapshot-consistency failure, with enough context to locate it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotViolation {
    pub reader: u64,
    pub begin: u64,
    pub key: u64,
    pub observed_writer: u64,
    pub observed_commit: u64,
    pub expected_writer: u64,
    pub expected_commit: u64,
}

impl fmt::Display for SnapshotViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "txn {} began at {} and read key {} from txn {} (commit {}); \
             the latest commit at or before its begin was txn {} (commit {})",
            self.reader,
            self.begin,
            self.key,
            self.observed_writer,
            self.observed_commit,
            self.expected_writer,
            self.expected_commit,
        )
    }
}

/// For every read, the observed writer must hold the greatest commit stamp
/// at or before the reader's begin among that key's writers; the loader
/// counts as committing at 0. Every transaction in the history must carry
/// stamps.
pub fn check_snapshot_reads(history: &History) -> Result<Vec<SnapshotViolation>, HistoryError> {
    let mut commit_of: HashMap<u64, u64> = HashMap::new();
    commit_of.insert(LOADER_TXN, 0);
    for txn in &history.txns {
        let Some((_, commit)) = txn.ts else {
            return Err(HistoryError::MissingStamps { txn: txn.id });
        };
        commit_of.insert(txn.id, commit);
    }

    let mut writers: BTreeMap<u64, Vec<(u64, u64)>> = BTreeMap::new();
    for txn in &history.txns {
        for &(key, _) in &txn.writes {
            writers
                .entry(key)
                .or_default()
                .push((commit_of[&txn.id], txn.id));
        }
    }
    for chain in writers.values_mut() {
        chain.sort_unstable();
    }

    let mut violations = Vec::new();
    for txn in &history.txns {
        let begin = txn.ts.unwrap().0;
        for &(key, writer) in &txn.reads {
            let chain = writers.get(&key).map(Vec::as_slice).unwrap_or(&[]);
            let known = writer == LOADER_TXN || chain.iter().any(|&(_, w)| w == writer);
            if !known {
                return Err(HistoryError::DanglingWriter { txn: txn.id, key, writer });
            }
            // A transaction may always observe its own earlier write,
            // regardless of where that write lands in the commit order.
            if writer == txn.id {
                continue;
            }
            let observed_commit = commit_of[&writer];
            let visible = chain.partition_point(|&(commit, _)| commit <= begin);
            let (expected_commit, expected_writer) = chain[..visible]
                .iter()
                .rev()
                .find(|&&(_, w)| w != txn.id)
                .copied()
                .unwrap_or((0, LOADER_TXN));
            if observed_commit != expected_commit {
                violations.push(SnapshotViolation {
                    reader: txn.id,
                    begin,
                    key,
                    observed_writer: writer,
                    observed_commit,
                    expected_writer,
                    expected_commit,
                });
            }
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{txn_id, write_history};

    fn txn(id: u64, pos: u64) -> CapturedTxn {
        CapturedTxn {
            id,
            worker: (id & 0xff) as usize,
            pos,
            reads: Vec::new(),
            writes: Vec::new(),
            ts: None,
        }
    }

    fn edge(from: u64, to: u64, kind: EdgeKind) -> Edge {
        Edge { from, to, kind }
    }

    #[test]
    fn parse_roundtrips_capture_output() {
        let mut a = txn(txn_id(0, 0), 0);
        a.writes = vec![(3, 1)];
        a.ts = Some((1, 2));
        let mut b = txn(txn_id(1, 0), 1);
        b.reads = vec![(3, a.id), (6, LOADER_TXN)];
        b.writes = vec![(3, 2), (6, 1)];
        b.ts = Some((3, 4));
        let original = vec![a, b];

        let mut bytes = Vec::new();
        write_history(&original, &mut bytes).unwrap();
        let parsed = parse_history(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(parsed.txns(), original.as_slice());
    }

    #[test]
    fn parse_flags_each_kind_of_damage() {
        let cases = [
            ("commit 256 worker 0 pos 0", "expected `txn` or `ts`"),
            ("txn x worker 0 pos 0", "is not a number"),
            ("txn 256 pos 0", "expected `worker`"),
            ("txn 256 worker 0", "line ends where `pos`"),
            ("txn 256 worker 0 pos 0 k:1=2", "before an R or W marker"),
            ("txn 256 worker 0 pos 0 R 1=2", "expected `k:<key>=<value>`"),
            ("ts 256 begin 1 commit 2", "stamps for unknown txn 256"),
            ("ts 256 begin 1 commit 2 extra", "trailing `extra`"),
        ];
        for (input, want) in cases {
            let err = parse_history(input).unwrap_err().to_string();
            assert!(err.contains(want), "{input:?} gave {err:?}");
        }

        let twice = "txn 256 worker 0 pos 0\ntxn 256 worker 0 pos 1\n";
        assert_eq!(
            parse_history(twice).unwrap_err(),
            HistoryError::DuplicateTxn { id: 256 }
        );
        let stamped_twice = "txn 256 worker 0 pos 0\nts 256 begin 1 commit 2\nts 256 begin 1 commit 2\n";
        assert!(matches!(
            parse_history(stamped_twice).unwrap_err(),
            HistoryError::Syntax { line: 3, .. }
        ));
        assert_eq!(
            parse_history("txn 0 worker 0 pos 0").unwrap_err(),
            HistoryError::ReservedLoaderId
        );
    }

    #[test]
    fn wr_edges_follow_read_attribution() {
        let mut t1 = txn(256, 0);
        t1.writes = vec![(7, 1)];
        let mut t2 = txn(257, 1);
        t2.reads = vec![(7, 256)];
        let dsg = dsg_build(&History::from_txns(vec![t1, t2]).unwrap()).unwrap();
        assert!(dsg.edges().contains(&edge(256, 257, EdgeKind::Wr)));
        assert!(check_serializable(&dsg).is_acyclic());
    }

    #[test]
    fn rw_edges_point_at_the_overwriter() {
        let mut t1 = txn(256, 0);
        t1.reads = vec![(7, LOADER_TXN)];
        let mut t2 = txn(257, 1);
        t2.writes = vec![(7, 1)];
        let dsg = dsg_build(&History::from_txns(vec![t1, t2]).unwrap()).unwrap();
        assert!(dsg.edges().contains(&edge(256, 257, EdgeKind::Rw)));
        assert!(dsg.edges().contains(&edge(LOADER_TXN, 256, EdgeKind::Wr)));
        assert!(dsg.edges().contains(&edge(LOADER_TXN, 257, EdgeKind::Ww)));
    }

    #[test]
    fn ww_edges_chain_writers_in_tag_order() {
        let mut a = txn(256, 0);
        a.writes = vec![(5, 20)];
        let mut b = txn(257, 1);
        b.writes = vec![(5, 10)];
        let mut c = txn(258, 2);
        c.writes = vec![(5, 30)];
        let dsg = dsg_build(&History::from_txns(vec![a, b, c]).unwrap()).unwrap();
        let ww: Vec<Edge> = dsg
            .edges()
            .iter()
            .copied()
            .filter(|e| e.kind == EdgeKind::Ww)
            .collect();
        assert_eq!(
            ww,
            vec![
                edge(LOADER_TXN, 257, EdgeKind::Ww),
                edge(256, 258, EdgeKind::Ww),
                edge(257, 256, EdgeKind::Ww),
            ]
        );
    }

    #[test]
    fn overwriting_your_own_read_is_not_an_edge() {
        let mut rmw = txn(256, 0);
        rmw.reads = vec![(7, LOADER_TXN)];
        rmw.writes = vec![(7, 1)];
        let dsg = dsg_build(&History::from_txns(vec![rmw]).unwrap()).unwrap();
        assert!(dsg.edges().iter().all(|e| e.from != e.to));
        assert!(!dsg.edges().iter().any(|e| e.kind == EdgeKind::Rw));
        assert!(check_serializable(&dsg).is_acyclic());
    }

    #[test]
    fn dangling_writers_are_flagged() {
        let mut t = txn(256, 0);
        t.reads = vec![(7, 999)];
        let err = dsg_build(&History::from_txns(vec![t]).unwrap()).unwrap_err();
        assert_eq!(
            err,
            HistoryError::DanglingWriter { txn: 256, key: 7, writer: 999 }
        );

        // The id exists but never wrote this key.
        let mut w = txn(256, 0);
        w.writes = vec![(1, 1)];
        let mut r = txn(257, 1);
        r.reads = vec![(2, 256)];
        let err = dsg_build(&History::from_txns(vec![w, r]).unwrap()).unwrap_err();
        assert_eq!(
            err,
            HistoryError::DanglingWriter { txn: 257, key: 2, writer: 256 }
        );
    }

    #[test]
    fn colliding_tags_are_flagged() {
        let mut a = txn(256, 0);
        a.writes = vec![(7, 4)];
        let mut b = txn(257, 1);
        b.writes = vec![(7, 4)];
        assert_eq!(
            dsg_build(&History::from_txns(vec![a, b]).unwrap()).unwrap_err(),
            HistoryError::DuplicateTag { key: 7, tag: 4 }
        );
    }

    #[test]
    fn empty_histories_are_acyclic() {
        let dsg = dsg_build(&History::default()).unwrap();
        assert!(dsg.nodes().is_empty());
        assert_eq!(check_serializable(&dsg), Verdict::Acyclic);
    }

    #[test]
    fn write_skew_reduces_to_the_rw_cycle() {
        let mut t1 = txn(256, 0);
        t1.reads = vec![(1, LOADER_TXN), (2, LOADER_TXN)];
        t1.writes = vec![(1, 1)];
        t1.ts = Some((1, 2));
        let mut t2 = txn(257, 1);
        t2.reads = vec![(1, LOADER_TXN), (2, LOADER_TXN)];
        t2.writes = vec![(2, 1)];
        t2.ts = Some((1, 3));
        let history = History::from_txns(vec![t1, t2]).unwrap();

        let dsg = dsg_build(&history).unwrap();
        let Verdict::Cycle(witness) = check_serializable(&dsg) else {
            panic!("write skew must cycle");
        };
        assert_eq!(
            witness,
            vec![edge(256, 257, EdgeKind::Rw), edge(257, 256, EdgeKind::Rw)]
        );

        // Both reads came from the latest commit at begin, so the snapshot
        // check stays clean: this anomaly is invisible to it by design.
        assert_eq!(check_snapshot_reads(&history).unwrap(), vec![]);
    }

    #[test]
    fn a_swapped_read_attribution_creates_a_cycle() {
        let mut t1 = txn(256, 0);
        t1.writes = vec![(1, 1)];
        let mut t2 = txn(257, 1);
        t2.reads = vec![(1, 256)];
        t2.writes = vec![(2, 1)];
        let mut t3 = txn(258, 2);
        t3.reads = vec![(2, 257)];
        t3.writes = vec![(1, 2)];

        let clean = History::from_txns(vec![t1.clone(), t2.clone(), t3.clone()]).unwrap();
        assert!(check_serializable(&dsg_build(&clean).unwrap()).is_acyclic());

        // Claim t2 read t3's write instead: now each reads from the other.
        t2.reads[0] = (1, 258);
        let corrupt = History::from_txns(vec![t1, t2, t3]).unwrap();
        let Verdict::Cycle(witness) = check_serializable(&dsg_build(&corrupt).unwrap()) else {
            panic!("corruption must be flagged");
        };
        assert_eq!(witness.len(), 2);
        assert!(witness.contains(&edge(257, 258, EdgeKind::Wr)));
        assert!(witness.contains(&edge(258, 257, EdgeKind::Wr)));
    }

    /// Single-threaded executor over a key -> last-writer map: every read
    /// observes the latest commit, begins and commits never interleave.
    fn serial_history(seed: u64, txns: u64, keys: u64) -> History {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut last_writer: HashMap<u64, u64> = HashMap::new();
        let mut next_tag: HashMap<u64, u64> = HashMap::new();
        let mut log = Vec::new();
        for seq in 0..txns {
            let id = txn_id((seq % 4) as usize, seq / 4);
            let mut t = txn(id, seq);
            t.ts = Some((2 * seq + 1, 2 * seq + 2));
            for _ in 0..rng.gen_range(1..=4) {
                let key = rng.gen_range(0..keys);
                let touched = |set: &[(u64, u64)]| set.iter().any(|&(k, _)| k == key);
                if rng.gen_bool(0.5) {
                    if !touched(&t.reads) && !touched(&t.writes) {
                        let writer = last_writer.get(&key).copied().unwrap_or(LOADER_TXN);
                        t.reads.push((key, writer));
                    }
                } else if !touched(&t.writes) {
                    let tag = next_tag.entry(key).or_insert(0);
                    *tag += 1;
                    t.writes.push((key, *tag));
                }
            }
            for &(key, _) in &t.writes {
                last_writer.insert(key, id);
            }
            log.push(t);
        }
        History::from_txns(log).unwrap()
    }

    #[test]
    fn serial_histories_are_acyclic_and_snapshot_clean() {
        for seed in 0..8 {
            let history = serial_history(seed, 400, 16);
            let dsg = dsg_build(&history).unwrap();
            assert_eq!(check_serializable(&dsg), Verdict::Acyclic, "seed {seed}");
            assert_eq!(check_snapshot_reads(&history).unwrap(), vec![], "seed {seed}");
        }
    }

    #[test]
    fn the_graph_is_a_function_of_the_history() {
        let history = serial_history(42, 300, 12);
        let once = dsg_build(&history).unwrap();
        let twice = dsg_build(&history).unwrap();
        assert_eq!(once, twice);
        assert_eq!(check_serializable(&once), check_serializable(&twice));

        let mut bytes = Vec::new();
        write_history(history.txns(), &mut bytes).unwrap();
        let reparsed = parse_history(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(reparsed.txns(), history.txns());
        assert_eq!(dsg_build(&reparsed).unwrap(), once);
    }

    #[test]
    fn snapshot_reads_pick_the_latest_commit_at_begin() {
        let commits = [3, 5, 9];
        let mut log: Vec<CapturedTxn> = commits
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut w = txn(txn_id(0, i as u64), i as u64);
                w.writes = vec![(7, c)];
                w.ts = Some((c - 1, c));
                w
            })
            .collect();
        let mut reader = txn(txn_id(1, 0), 3);
        reader.reads = vec![(7, txn_id(0, 1))];
        reader.ts = Some((7, 7));
        log.push(reader);

        let history = History::from_txns(log.clone()).unwrap();
        assert_eq!(check_snapshot_reads(&history).unwrap(), vec![]);

        // Reading the commit-3 version instead skips the commit-5 one.
        log[3].reads[0].1 = txn_id(0, 0);
        let stale = History::from_txns(log).unwrap();
        assert_eq!(
            check_snapshot_reads(&stale).unwrap(),
            vec![SnapshotViolation {
                reader: txn_id(1, 0),
                begin: 7,
                key: 7,
                observed_writer: txn_id(0, 0),
                observed_commit: 3,
                expected_writer: txn_id(0, 1),
                expected_commit: 5,
            }]
        );
    }

    #[test]
    fn reads_that_begin_before_any_writer_expect_the_loader() {
        let mut w = txn(256, 0);
        w.writes = vec![(7, 1)];
        w.ts = Some((4, 5));
        let mut r = txn(257, 1);
        r.reads = vec![(7, LOADER_TXN)];
        r.ts = Some((2, 2));
        let history = History::from_txns(vec![w.clone(), r.clone()]).unwrap();
        assert_eq!(check_snapshot_reads(&history).unwrap(), vec![]);

        // Observing the future writer is flagged.
        r.reads[0].1 = 256;
        let bad = History::from_txns(vec![w, r]).unwrap();
        let violations = check_snapshot_reads(&bad).unwrap();
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].observed_commit, 5);
        assert_eq!(violations[0].expected_writer, LOADER_TXN);
    }

    #[test]
    fn readers_may_observe_their_own_writes() {
        let mut base = txn(256, 0);
        base.writes = vec![(7, 256)];
        base.ts = Some((2, 3));

        // The write lands after begin, but reading it back within the
        // same transaction is still consistent.
        let mut rmw = txn(257, 1);
        rmw.reads = vec![(7, 257)];
        rmw.writes = vec![(7, 257)];
        rmw.ts = Some((5, 9));

        // Timestamp stamps (begin == commit): the read observed the
        // predecessor, and the reader's own write at the same stamp
        // must not shadow it.
        let mut stamped = txn(258, 2);
        stamped.reads = vec![(7, 256)];
        stamped.writes = vec![(7, 258)];
        stamped.ts = Some((6, 6));

        let history = History::from_txns(vec![base, rmw, stamped]).unwrap();
        assert_eq!(check_snapshot_reads(&history).unwrap(), vec![]);
    }

    #[test]
    fn snapshot_checking_needs_stamps() {
        let mut r = txn(256, 0);
        r.reads = vec![(7, LOADER_TXN)];
        let history = History::from_txns(vec![r]).unwrap();
        assert_eq!(
            check_snapshot_reads(&history).unwrap_err(),
            HistoryError::MissingStamps { txn: 256 }
        );
    }

    #[test]
    fn a_live_run_replays_clean_through_the_full_pipeline() {
        use crate::protocols::{Protocol, Silo, Toggles, TxnCtx};
        use crate::storage::{EpochManager, StorageKind, Table};
        use rand::{Rng, SeedableRng};
        use std::sync::Arc;
        use std::time::Duration;

        let table = Arc::new(Table::build(16, 16, StorageKind::Single, true));
        let epochs = Arc::new(EpochManager::new(1, Duration::from_millis(40)));
        let cap = Arc::new(crate::capture::Capture::new(1));
        let p = Silo::new(table, epochs, Toggles::default(), Some(Arc::clone(&cap)));

        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
        let mut ctx = TxnCtx::new(0, 16, 4);
        for _ in 0..80 {
            p.begin(&mut ctx);
            for _ in 0..3 {
                let key = rng.gen_range(0..16);
                if rng.gen_bool(0.5) {
                    p.read(&mut ctx, key, false).unwrap();
                } else {
                    p.write(&mut ctx, key).unwrap();
                }
            }
            p.commit(&mut ctx).unwrap();
        }

        let log = cap.drain_sorted();
        assert_eq!(log.len(), 80);
        let mut bytes = Vec::new();
        write_history(&log, &mut bytes).unwrap();
        let history = parse_history(std::str::from_utf8(&bytes).unwrap()).unwrap();
        assert_eq!(history.txns(), log.as_slice());
        assert!(!history.fully_stamped(), "silo leaves no snapshot stamps");
        let dsg = dsg_build(&history).unwrap();
        assert_eq!(check_serializable(&dsg), Verdict::Acyclic);
    }
}
