//! History capture: every committed transaction appends its read set
//! (key, writer txn id) and write set (key, value tag) to a per-worker
//! lane; lanes merge into one position-ordered log that serializes to the
//! line format the oracle consumes.
//!
//! Writers are attributed through the data itself: every write payload
//! starts with the writer's transaction id in the first 8 bytes (little
//! endian), so a reader learns the writer id from the bytes it copied.
//! Capture therefore requires `payload_size >= 8`.

use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::align::CacheAligned;

/// Transaction id of the initial database loader. Reads of never-written
/// keys attribute to it.
pub const LOADER_TXN: u64 = 0;

/// Committed-transaction ids: `((local_seq + 1) << 8) | worker`. Strictly
/// positive, unique across workers, and never colliding with [`LOADER_TXN`].
pub fn txn_id(worker: usize, local_seq: u64) -> u64 {
    assert!(worker < 256, "id encoding reserves 8 bits for the worker");
    ((local_seq + 1) << 8) | worker as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CapturedTxn {
    pub id: u64,
    pub worker: usize,
    /// Global commit position, drawn at the instant the commit became
    /// visible to other transactions.
    pub pos: u64,
    /// `(key, writer txn id)` per read, in read order.
    pub reads: Vec<(u64, u64)>,
    /// `(key, value tag)` per write. Tags order a key's writers: the
    /// version timestamp under multi-version storage, an install sequence
    /// drawn under the record lock under single-version storage.
    pub writes: Vec<(u64, u64)>,
    /// Snapshot stamps, for protocols that have them.
    pub ts: Option<(u64, u64)>,
}

/// Shared sink. Lanes are per-worker so the only cross-thread touch on the
/// hot path is the position counter.
pub struct Capture {
    pos: CacheAligned<AtomicU64>,
    lanes: Box<[Mutex<Vec<CapturedTxn>>]>,
}

impl Capture {
    pub fn new(workers: usize) -> Capture {
        Capture {
            pos: CacheAligned::new(AtomicU64::new(0)),
            lanes: (0..workers).map(|_| Mutex::new(Vec::new())).collect(),
        }
    }

    /// Draws the next commit position. Callers invoke this at the point
    /// their commit becomes visible (under write locks, or at the status
    /// flip), so positions respect the key-local version order.
    pub fn next_pos(&self) -> u64 {
        self.pos.fetch_add(1, Ordering::SeqCst)
    }

    pub fn push(&self, txn: CapturedTxn) {
        self.lanes[txn.worker].lock().unwrap().push(txn);
    }

    pub fn len(&self) -> usize {
        self.lanes.iter().map(|l| l.lock().unwrap().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Merges all lanes into one log ordered by commit position.
    pub fn drain_sorted(&self) -> Vec<CapturedTxn> {
        let mut all: Vec<CapturedTxn> = Vec::new();
        for lane in self.lanes.iter() {
            all.append(&mut lane.lock().unwrap());
        }
        all.sort_unstable_by_key(|t| t.pos);
        all
    }
}

/// One `txn` line, and one `ts` line for transactions that carry stamps.
pub fn format_txn(txn: &CapturedTxn, out: &mut String) {
    use std::fmt::Write;
    write!(out, "txn {} worker {} pos {}", txn.id, txn.worker, txn.pos).unwrap();
    if !txn.reads.is_empty() {
        out.push_str(" R");
        for &(key, writer) in &txn.reads {
            write!(out, " k:{key}={writer}").unwrap();
        }
    }
    if !txn.writes.is_empty() {
        out.push_str(" W");
        for &(key, tag) in &txn.writes {
            write!(out, " k:{key}={tag}").unwrap();
        }
    }
    out.push('\n');
    if let Some((begin, commit)) = txn.ts {
        writeln!(out, "ts {} begin {begin} commit {commit}", txn.id).unwrap();
    }
}

/// Writes the whole log in position order.
pub fn write_history(txns: &[CapturedTxn], out: &mut dyn io::Write) -> io::Result<()> {
    let mut line = String::new();
    for txn in txns {
        line.clear();
        format_txn(txn, &mut line);
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_clear_the_loader_and_encode_the_worker() {
        assert_eq!(txn_id(0, 0), 256);
        assert_eq!(txn_id(3, 0), 259);
        assert_eq!(txn_id(3, 1), 515);
        assert!(txn_id(255, 0) > LOADER_TXN);
        assert_eq!(txn_id(7, 41) & 0xFF, 7);
    }

    #[test]
    #[should_panic(expected = "8 bits")]
    fn ids_reject_wide_worker_indices() {
        txn_id(256, 0);
    }

    fn txn(id: u64, worker: usize, pos: u64) -> CapturedTxn {
        CapturedTxn {
            id,
            worker,
            pos,
            reads: vec![],
            writes: vec![],
            ts: None,
        }
    }

    #[test]
    fn drain_merges_lanes_by_position() {
        let cap = Capture::new(2);
        cap.push(txn(txn_id(0, 0), 0, cap.next_pos()));
        cap.push(txn(txn_id(1, 0), 1, cap.next_pos()));
        cap.push(txn(txn_id(0, 1), 0, cap.next_pos()));
        assert_eq!(cap.len(), 3);
        let order: Vec<u64> = cap.drain_sorted().iter().map(|t| t.id).collect();
        assert_eq!(order, vec![256, 257, 512]);
        assert!(cap.is_empty(), "drain consumes the lanes");
    }

    #[test]
    fn line_format_is_stable() {
        let mut t = txn(259, 3, 17);
        t.reads = vec![(3, 0), (9, 514)];
        t.writes = vec![(3, 1201)];
        let mut line = String::new();
        format_txn(&t, &mut line);
        assert_eq!(line, "txn 259 worker 3 pos 17 R k:3=0 k:9=514 W k:3=1201\n");
    }

    #[test]
    fn read_only_lines_omit_the_write_marker() {
        let mut t = txn(256, 0, 0);
        t.reads = vec![(1, 0)];
        let mut line = String::new();
        format_txn(&t, &mut line);
        assert_eq!(line, "txn 256 worker 0 pos 0 R k:1=0\n");
        t.reads.clear();
        t.writes = vec![(1, 9)];
        line.clear();
        format_txn(&t, &mut line);
        assert_eq!(line, "txn 256 worker 0 pos 0 W k:1=9\n");
    }

    #[test]
    fn stamped_txns_get_a_ts_line() {
        let mut t = txn(256, 0, 0);
        t.writes = vec![(1, 9)];
        t.ts = Some((5, 9));
        let mut out = Vec::new();
        write_history(&[t], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "txn 256 worker 0 pos 0 W k:1=9\nts 256 begin 5 commit 9\n"
        );
    }
}
