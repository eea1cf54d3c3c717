//! Review task service behind the HTTP API: scored task queues with leases,
//! decision submission into the log, live stats and candidate context slices.

use std::collections::{BTreeMap, HashMap};
use std::ops::RangeInclusive;
use std::sync::{Arc, Mutex, MutexGuard};

use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::adjacency::{CandidateId, MergeCandidate, Workflow};
use crate::error::{Error, Result};
use crate::evalkit::PrCurve;
use crate::evidence::{extract_evidence, EvidenceTensor};
use crate::synapse::SiteIndex;
use crate::volume::{GrayVolume, LabelVolume, Voxel};
use crate::workflow::{BodySnapshot, BodyState, Clock, DecisionLog, DecisionSource, Verdict};

pub const DEFAULT_PORT: u16 = 7700;
pub const LEASE_TTL_SECS: i64 = 300;

/// A reviewable candidate with its model scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskCandidate {
    pub candidate: MergeCandidate,
    pub baseline: f64,
    pub cnn: f64,
    pub fusion: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLease {
    pub candidate_id: CandidateId,
    pub lease_holder: String,
    pub expires_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub candidate_id: CandidateId,
    pub workflow: Workflow,
    pub a: u64,
    pub b: u64,
    pub rep_location: Voxel,
    pub contact_voxels: u64,
    pub baseline: f64,
    pub cnn: f64,
    pub fusion: f64,
    pub lease: TaskLease,
}

/// Response of `next_task`; `task` is `None` when the queue is empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextTask {
    pub empty: bool,
    pub task: Option<TaskDescriptor>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub candidate_id: CandidateId,
    pub sequence: u64,
    /// True when the candidate was already decided with the same verdict;
    /// the original sequence is echoed and the log is unchanged.
    pub duplicate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub total: usize,
    pub decided: usize,
    pub pending: usize,
    pub merges: usize,
    pub no_merges: usize,
    pub indeterminate: usize,
    /// `merges / decided`; `None` before the first decision.
    pub merge_rate: Option<f64>,
}

/// Volume data needed to cut context slices.
pub struct SliceSource {
    pub gray: GrayVolume,
    pub labels: LabelVolume,
    pub sites: SiteIndex,
    pub edge: u32,
    pub prox_radius_nm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(Error::OutOfRange(format!("axis must be x, y or z, got {other:?}"))),
        }
    }
}

/// One slice through an evidence cube. Masks are `[start, length]` runs
/// over the row-major pixels of the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Slice {
    pub candidate_id: CandidateId,
    pub axis: Axis,
    pub index: u32,
    pub width: u32,
    pub height: u32,
    /// For axis z rows follow y and columns x; for y rows follow z and
    /// columns x; for x rows follow z and columns y.
    pub pixels: Vec<u8>,
    pub mask_a: Vec<[u32; 2]>,
    pub mask_b: Vec<[u32; 2]>,
    pub synapse: Vec<[u32; 2]>,
}

/// JSON body of the slices endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceResponse {
    pub candidate_id: CandidateId,
    pub axis: Axis,
    pub index: u32,
    pub width: u32,
    pub height: u32,
    pub png_base64: String,
    pub mask_a: Vec<[u32; 2]>,
    pub mask_b: Vec<[u32; 2]>,
    pub synapse: Vec<[u32; 2]>,
}

/// `[start, length]` runs of set entries.
pub fn rle_encode(bits: &[bool]) -> Vec<[u32; 2]> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < bits.len() {
        if bits[i] {
            let start = i;
            while i < bits.len() && bits[i] {
                i += 1;
            }
            runs.push([start as u32, (i - start) as u32]);
        } else {
            i += 1;
        }
    }
    runs
}

pub fn rle_decode(runs: &[[u32; 2]], len: usize) -> Result<Vec<bool>> {
    let mut bits = vec![false; len];
    for &[start, n] in runs {
        let (s, e) = (start as usize, start as usize + n as usize);
        if e > len {
            return Err(Error::OutOfRange(format!("run [{start}, {n}] exceeds {len} pixels")));
        }
        bits[s..e].iter_mut().for_each(|b| *b = true);
    }
    Ok(bits)
}

/// Cuts slice `index` along `axis` out of an evidence cube.
pub fn slice_tensor(id: CandidateId, t: &EvidenceTensor, axis: Axis, index: u32) -> Result<Slice> {
    let e = t.edge();
    if index >= e {
        return Err(Error::OutOfRange(format!("slice index {index} outside 0..{e}")));
    }
    let eu = e as usize;
    let k = index as usize;
    let n = eu * eu;
    let (mut pixels, mut a, mut b, mut s) = (vec![0u8; n], vec![false; n], vec![false; n], vec![false; n]);
    for row in 0..eu {
        for col in 0..eu {
            let (x, y, z) = match axis {
                Axis::Z => (col, row, k),
                Axis::Y => (col, k, row),
                Axis::X => (k, col, row),
            };
            let i = x + eu * (y + eu * z);
            let p = row * eu + col;
            pixels[p] = (t.value(0, i) * 255.0).round() as u8;
            a[p] = t.value(1, i) > 0.0;
            b[p] = t.value(2, i) > 0.0;
            s[p] = t.value(3, i) > 0.0;
        }
    }
    Ok(Slice {
        candidate_id: id,
        axis,
        index,
        width: e,
        height: e,
        pixels,
        mask_a: rle_encode(&a),
        mask_b: rle_encode(&b),
        synapse: rle_encode(&s),
    })
}

/// 8-bit grayscale PNG of a slice.
pub fn encode_png(slice: &Slice) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, slice.width, slice.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png header: {e}")))?;
        w.write_image_data(&slice.pixels)
            .map_err(|e| Error::InvalidArgument(format!("png data: {e}")))?;
    }
    Ok(out)
}

impl SliceResponse {
    pub fn new(slice: &Slice) -> Result<Self> {
        Ok(SliceResponse {
            candidate_id: slice.candidate_id,
            axis: slice.axis,
            index: slice.index,
            width: slice.width,
            height: slice.height,
            png_base64: base64::engine::general_purpose::STANDARD.encode(encode_png(slice)?),
            mask_a: slice.mask_a.clone(),
            mask_b: slice.mask_b.clone(),
            synapse: slice.synapse.clone(),
        })
    }
}

struct State {
    log: DecisionLog,
    bodies: BodyState,
    leases: HashMap<CandidateId, TaskLease>,
    /// Candidate -> (verdict, sequence) of its first decision.
    decided: HashMap<CandidateId, (Verdict, u64)>,
}

/// Task queues over a fixed candidate set. Log appends and lease changes
/// serialize through one mutex.
pub struct TaskService {
    candidates: Vec<TaskCandidate>,
    index: HashMap<CandidateId, usize>,
    /// Candidate positions by fusion score descending, ties by id.
    order: Vec<usize>,
    orphan_weight: RangeInclusive<u64>,
    lease_ttl: Duration,
    clock: Arc<dyn Clock>,
    slices: Option<SliceSource>,
    pr: Option<PrCurve>,
    state: Mutex<State>,
}

impl TaskService {
    /// `log` may already hold decisions; they are replayed onto `initial`.
    pub fn new(
        candidates: Vec<TaskCandidate>,
        initial: BodyState,
        log: DecisionLog,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, c) in candidates.iter().enumerate() {
            if !c.fusion.is_finite() {
                return Err(Error::InvalidArgument(format!("candidate {} has a non-finite score", c.candidate.id)));
            }
            if index.insert(c.candidate.id, i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate candidate {}", c.candidate.id)));
            }
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&x, &y| {
            let (cx, cy) = (&candidates[x], &candidates[y]);
            cy.fusion.total_cmp(&cx.fusion).then(cx.candidate.id.cmp(&cy.candidate.id))
        });
        let mut bodies = initial;
        let mut decided = HashMap::new();
        for d in log.entries() {
            let &i = index
                .get(&d.candidate_id)
                .ok_or_else(|| Error::UnknownCandidate(d.candidate_id.to_string()))?;
            if d.verdict == Verdict::Merge {
                let e = &candidates[i].candidate.edge;
                bodies.union(e.a, e.b)?;
            }
            decided.entry(d.candidate_id).or_insert((d.verdict, d.sequence));
        }
        Ok(TaskService {
            candidates,
            index,
            order,
            orphan_weight: 10..=100,
            lease_ttl: Duration::seconds(LEASE_TTL_SECS),
            clock,
            slices: None,
            pr: None,
            state: Mutex::new(State {
                log,
                bodies,
                leases: HashMap::new(),
                decided,
            }),
        })
    }

    pub fn with_lease_ttl(mut self, ttl: Duration) -> Self {
        self.lease_ttl = ttl;
        self
    }

    pub fn with_orphan_weight(mut self, range: RangeInclusive<u64>) -> Self {
        self.orphan_weight = range;
        self
    }

    pub fn with_slices(mut self, source: SliceSource) -> Self {
        self.slices = Some(source);
        self
    }

    pub fn with_pr_curve(mut self, pr: PrCurve) -> Self {
        self.pr = Some(pr);
        self
    }

    pub fn pr_curve(&self) -> Option<&PrCurve> {
        self.pr.as_ref()
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn candidate(&self, id: CandidateId) -> Result<&TaskCandidate> {
        self.index
            .get(&id)
            .map(|&i| &self.candidates[i])
            .ok_or_else(|| Error::UnknownCandidate(id.to_string()))
    }

    /// Whether the candidate belongs to `workflow`'s queue in the current body state.
    fn in_queue(&self, st: &State, c: &TaskCandidate, workflow: Workflow) -> Result<bool> {
        let (ra, rb) = (st.bodies.root(c.candidate.edge.a)?, st.bodies.root(c.candidate.edge.b)?);
        if ra == rb {
            return Ok(false);
        }
        Ok(match workflow {
            Workflow::Focused => true,
            Workflow::Orphan => {
                let orphan = match (st.bodies.is_identified(ra)?, st.bodies.is_identified(rb)?) {
                    (false, true) => ra,
                    (true, false) => rb,
                    _ => return Ok(false),
                };
                self.orphan_weight.contains(&st.bodies.weight(orphan)?)
            }
        })
    }

    fn descriptor(&self, c: &TaskCandidate, workflow: Workflow, lease: TaskLease) -> TaskDescriptor {
        let e = &c.candidate.edge;
        TaskDescriptor {
            candidate_id: c.candidate.id,
            workflow,
            a: e.a,
            b: e.b,
            rep_location: e.rep_location,
            contact_voxels: e.contact_voxels,
            baseline: c.baseline,
            cnn: c.cnn,
            fusion: c.fusion,
            lease,
        }
    }

    /// Highest-scoring undecided candidate not leased to someone else. A
    /// reviewer re-polling before deciding gets the same candidate with its
    /// lease renewed.
    pub fn next_task(&self, workflow: Workflow, reviewer: &str) -> Result<NextTask> {
        if reviewer.is_empty() {
            return Err(Error::InvalidArgument("reviewer is required".into()));
        }
        let now = self.clock.now();
        let mut st = self.lock();
        let expires_at = now + self.lease_ttl;
        let held: Option<CandidateId> = st
            .leases
            .values()
            .filter(|l| l.lease_holder == reviewer && l.expires_at > now)
            .map(|l| l.candidate_id)
            .min_by_key(|id| self.index[id]);
        if let Some(id) = held {
            let c = &self.candidates[self.index[&id]];
            if !st.decided.contains_key(&id) && self.in_queue(&st, c, workflow)? {
                let lease = TaskLease {
                    candidate_id: id,
                    lease_holder: reviewer.to_string(),
                    expires_at,
                };
                st.leases.insert(id, lease.clone());
                return Ok(NextTask {
                    empty: false,
                    task: Some(self.descriptor(c, workflow, lease)),
                });
            }
        }
        for &i in &self.order {
            let c = &self.candidates[i];
            let id = c.candidate.id;
            if st.decided.contains_key(&id) {
                continue;
            }
            if st.leases.get(&id).is_some_and(|l| l.expires_at > now) {
                continue;
            }
            if !self.in_queue(&st, c, workflow)? {
                continue;
            }
            // One active lease per reviewer: drop whatever it held before.
            st.leases.retain(|_, l| l.lease_holder != reviewer);
            let lease = TaskLease {
                candidate_id: id,
                lease_holder: reviewer.to_string(),
                expires_at,
            };
            st.leases.insert(id, lease.clone());
            return Ok(NextTask {
                empty: false,
                task: Some(self.descriptor(c, workflow, lease)),
            });
        }
        Ok(NextTask { empty: true, task: None })
    }

    /// Appends a human decision. A repeat of an existing decision with the
    /// same verdict echoes the original sequence; a different verdict is a
    /// conflict. A candidate leased to another reviewer cannot be decided
    /// until that lease expires.
    pub fn submit_decision(&self, id: CandidateId, verdict: Verdict, reviewer: &str) -> Result<SubmitOutcome> {
        if reviewer.is_empty() {
            return Err(Error::InvalidArgument("reviewer is required".into()));
        }
        let c = self.candidate(id)?;
        let now = self.clock.now();
        let mut st = self.lock();
        if let Some(&(v, seq)) = st.decided.get(&id) {
            if v == verdict {
                return Ok(SubmitOutcome {
                    candidate_id: id,
                    sequence: seq,
                    duplicate: true,
                });
            }
            return Err(Error::Conflict(format!("candidate {id} already decided at sequence {seq}")));
        }
        if let Some(l) = st.leases.get(&id) {
            if l.lease_holder != reviewer && l.expires_at > now {
                return Err(Error::Conflict(format!("candidate {id} is leased to {}", l.lease_holder)));
            }
        }
        let seq = st
            .log
            .append(id, verdict, DecisionSource::Human(reviewer.to_string()), now)?
            .sequence;
        if verdict == Verdict::Merge {
            st.bodies.union(c.candidate.edge.a, c.candidate.edge.b)?;
        }
        st.decided.insert(id, (verdict, seq));
        st.leases.remove(&id);
        Ok(SubmitOutcome {
            candidate_id: id,
            sequence: seq,
            duplicate: false,
        })
    }

    /// Counts recomputed from the log.
    pub fn stats(&self) -> Stats {
        let st = self.lock();
        let mut first: BTreeMap<CandidateId, Verdict> = BTreeMap::new();
        for d in st.log.entries() {
            first.entry(d.candidate_id).or_insert(d.verdict);
        }
        let count = |v: Verdict| first.values().filter(|&&x| x == v).count();
        let decided = first.len();
        let merges = count(Verdict::Merge);
        Stats {
            total: self.candidates.len(),
            decided,
            pending: self.candidates.len() - decided,
            merges,
            no_merges: count(Verdict::NoMerge),
            indeterminate: count(Verdict::Indeterminate),
            merge_rate: (decided > 0).then(|| merges as f64 / decided as f64),
        }
    }

    pub fn active_leases(&self) -> Vec<TaskLease> {
        let now = self.clock.now();
        let st = self.lock();
        let mut v: Vec<TaskLease> = st.leases.values().filter(|l| l.expires_at > now).cloned().collect();
        v.sort_by_key(|l| l.candidate_id);
        v
    }

    pub fn log_entries(&self) -> Vec<crate::workflow::Decision> {
        self.lock().log.entries().to_vec()
    }

    pub fn bodies_snapshot(&self) -> BodySnapshot {
        self.lock().bodies.snapshot()
    }

    /// Candidate id -> fragment pair, for replaying the log.
    pub fn pairs(&self) -> HashMap<CandidateId, (u64, u64)> {
        self.candidates
            .iter()
            .map(|c| (c.candidate.id, (c.candidate.edge.a, c.candidate.edge.b)))
            .collect()
    }

    pub fn evidence(&self, id: CandidateId) -> Result<EvidenceTensor> {
        let c = self.candidate(id)?;
        let src = self
            .slices
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no volume loaded for slices".into()))?;
        extract_evidence(&src.gray, &src.labels, &src.sites, &c.candidate, src.edge, src.prox_radius_nm)
    }

    pub fn slice(&self, id: CandidateId, axis: Axis, index: u32) -> Result<Slice> {
        slice_tensor(id, &self.evidence(id)?, axis, index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjacency::AdjacencyEdge;
    use crate::volume::{Grid3, DEFAULT_VOXEL_SIZE_NM};
    use crate::workflow::{replay, validate_sequence, LogicalClock};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::atomic::{AtomicI64, Ordering};

    /// A clock the test moves by hand.
    struct ManualClock(AtomicI64);

    impl Clock for ManualClock {
        fn now(&self) -> DateTime<Utc> {
            DateTime::from_timestamp(self.0.load(Ordering::SeqCst), 0).unwrap()
        }
    }

    fn cand(a: u64, b: u64, fusion: f64) -> TaskCandidate {
        TaskCandidate {
            candidate: MergeCandidate::new(
                AdjacencyEdge {
                    a,
                    b,
                    contact_voxels: 4,
                    rep_location: Voxel::new(2, 2, 2),
                    factor: 1,
                },
                Workflow::Focused,
            ),
            baseline: 0.5,
            cnn: fusion,
            fusion,
        }
    }

    fn service(n: u64, clock: Arc<dyn Clock>) -> TaskService {
        let cands: Vec<TaskCandidate> = (1..n).map(|i| cand(i, i + 1, (i % 7) as f64 / 7.0)).collect();
        TaskService::new(cands, BodyState::new(1..=n), DecisionLog::in_memory(), clock).unwrap()
    }

    fn manual() -> Arc<ManualClock> {
        Arc::new(ManualClock(AtomicI64::new(1_700_000_000)))
    }

    #[test]
    fn leases_are_exclusive_and_renewed() {
        let clock = manual();
        let s = service(10, clock.clone());
        let a = s.next_task(Workflow::Focused, "alice").unwrap().task.unwrap();
        let b = s.next_task(Workflow::Focused, "bob").unwrap().task.unwrap();
        assert_ne!(a.candidate_id, b.candidate_id);
        assert!(a.fusion >= b.fusion);
        clock.0.fetch_add(100, Ordering::SeqCst);
        let again = s.next_task(Workflow::Focused, "alice").unwrap().task.unwrap();
        assert_eq!(again.candidate_id, a.candidate_id);
        assert!(again.lease.expires_at > a.lease.expires_at);
        // Bob cannot decide Alice's task while her lease is live.
        assert!(matches!(s.submit_decision(a.candidate_id, Verdict::Merge, "bob"), Err(Error::Conflict(_))));
        // After expiry the candidate is reclaimable.
        clock.0.fetch_add(LEASE_TTL_SECS + 1, Ordering::SeqCst);
        let carol = s.next_task(Workflow::Focused, "carol").unwrap().task.unwrap();
        assert_eq!(carol.candidate_id, a.candidate_id);
    }

    #[test]
    fn submit_duplicate_and_empty_queue() {
        let s = service(4, manual());
        let mut seen = Vec::new();
        loop {
            let next = s.next_task(Workflow::Focused, "r").unwrap();
            let Some(t) = next.task else {
                assert!(next.empty);
                break;
            };
            assert!(!seen.contains(&t.candidate_id));
            seen.push(t.candidate_id);
            let out = s.submit_decision(t.candidate_id, Verdict::NoMerge, "r").unwrap();
            assert_eq!(out.sequence, seen.len() as u64);
        }
        assert_eq!(seen.len(), 3);
        let dup = s.submit_decision(seen[0], Verdict::NoMerge, "other").unwrap();
        assert_eq!((dup.sequence, dup.duplicate), (1, true));
        assert!(matches!(s.submit_decision(seen[0], Verdict::Merge, "r"), Err(Error::Conflict(_))));
        assert_eq!(s.log_entries().len(), 3);
        assert!(matches!(s.submit_decision(CandidateId(42), Verdict::Merge, "r"), Err(Error::UnknownCandidate(_))));
        let st = s.stats();
        assert_eq!((st.decided, st.pending, st.merge_rate), (3, 0, Some(0.0)));
    }

    #[test]
    fn merged_pairs_leave_the_queue_and_stats_recount() {
        let s = service(4, manual());
        // Candidates (1,2), (2,3), (3,4). Merge (1,2) and (2,3): (1,3)-style
        // redundancy does not arise, but a merged pair is never offered again.
        let ids: Vec<CandidateId> = (1..4).map(|i| cand(i, i + 1, 0.0).candidate.id).collect();
        s.submit_decision(ids[0], Verdict::Merge, "r").unwrap();
        s.submit_decision(ids[1], Verdict::Indeterminate, "r").unwrap();
        let st = s.stats();
        assert_eq!((st.decided, st.merges, st.indeterminate, st.merge_rate), (2, 1, 1, Some(0.5)));
        let t = s.next_task(Workflow::Focused, "r").unwrap().task.unwrap();
        assert_eq!(t.candidate_id, ids[2]);
    }

    #[test]
    fn orphan_queue_follows_body_state() {
        let cands = vec![cand(1, 2, 0.9), cand(2, 3, 0.8), cand(3, 4, 0.1)];
        let mut bodies = BodyState::new(1..=4);
        bodies.set_identified(1, true).unwrap();
        bodies.add_synapse_counts(2, 10, 5).unwrap();
        bodies.add_synapse_counts(3, 1, 0).unwrap();
        let s = TaskService::new(cands.clone(), bodies, DecisionLog::in_memory(), manual()).unwrap();
        let t = s.next_task(Workflow::Orphan, "r").unwrap().task.unwrap();
        assert_eq!(t.candidate_id, cands[0].candidate.id);
        s.submit_decision(t.candidate_id, Verdict::Merge, "r").unwrap();
        // Body {1,2} is identified now; 3 has weight 1 < 10 so (2,3) is not an orphan task.
        assert!(s.next_task(Workflow::Orphan, "r").unwrap().empty);
        assert!(!s.next_task(Workflow::Focused, "r").unwrap().empty);
    }

    #[test]
    fn concurrent_submissions_keep_the_log_gap_free() {
        let s = Arc::new(service(400, Arc::new(LogicalClock::from_unix(1_700_000_000))));
        let handles: Vec<_> = (0..8)
            .map(|r| {
                let s = Arc::clone(&s);
                std::thread::spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(r);
                    let name = format!("r{r}");
                    while let Some(t) = s.next_task(Workflow::Focused, &name).unwrap().task {
                        let v = [Verdict::Merge, Verdict::NoMerge, Verdict::Indeterminate][rng.random_range(0..3)];
                        s.submit_decision(t.candidate_id, v, &name).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let log = s.log_entries();
        validate_sequence(&log).unwrap();
        let replayed = replay(&log, &s.pairs(), BodyState::new(1..=400)).unwrap();
        assert_eq!(replayed.snapshot(), s.bodies_snapshot());
    }

    fn slice_service() -> (TaskService, TaskCandidate) {
        let d = 12;
        let mut g = Grid3::new([d; 3]);
        let mut gray = Grid3::new([d; 3]);
        for z in 0..d {
            for y in 0..d {
                for x in 0..d {
                    g.set(x, y, z, if x < 6 { 1u64 } else { 2 });
                    gray.set(x, y, z, (x * 20) as u8);
                }
            }
        }
        let labels = LabelVolume::from_grid(&g, [DEFAULT_VOXEL_SIZE_NM; 3], 8).unwrap();
        let gray = GrayVolume::from_grid(&gray, [DEFAULT_VOXEL_SIZE_NM; 3], 8).unwrap();
        let mut c = cand(1, 2, 0.5);
        c.candidate.edge.rep_location = Voxel::new(0, 0, 0);
        let s = TaskService::new(vec![c.clone()], BodyState::new([1, 2]), DecisionLog::in_memory(), manual())
            .unwrap()
            .with_slices(SliceSource {
                gray,
                labels,
                sites: SiteIndex::new(&[], 8),
                edge: 9,
                prox_radius_nm: 80.0,
            });
        (s, c)
    }

    #[test]
    fn corner_slice_is_zero_filled_and_masks_decode_to_tensor() {
        let (s, c) = slice_service();
        let id = c.candidate.id;
        let t = s.evidence(id).unwrap();
        let sl = s.slice(id, Axis::Z, 4).unwrap();
        // Centre (0,0,0): cube columns/rows 0..4 lie outside the volume.
        for row in 0..9 {
            for col in 0..9 {
                let p = sl.pixels[row * 9 + col];
                if row < 4 || col < 4 {
                    assert_eq!(p, 0);
                } else {
                    assert_eq!(p, ((col - 4) * 20) as u8);
                }
            }
        }
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            for k in 0..9 {
                let sl = s.slice(id, axis, k).unwrap();
                let a = rle_decode(&sl.mask_a, 81).unwrap();
                let b = rle_decode(&sl.mask_b, 81).unwrap();
                for row in 0..9 {
                    for col in 0..9 {
                        let (x, y, z) = match axis {
                            Axis::Z => (col, row, k as usize),
                            Axis::Y => (col, k as usize, row),
                            Axis::X => (k as usize, col, row),
                        };
                        let i = x + 9 * (y + 9 * z);
                        assert_eq!(a[row * 9 + col], t.value(1, i) > 0.0);
                        assert_eq!(b[row * 9 + col], t.value(2, i) > 0.0);
                    }
                }
            }
        }
        assert!(matches!(s.slice(id, Axis::Z, 9), Err(Error::OutOfRange(_))));
        let r1 = serde_json::to_vec(&SliceResponse::new(&sl).unwrap()).unwrap();
        let r2 = serde_json::to_vec(&SliceResponse::new(&s.slice(id, Axis::Z, 4).unwrap()).unwrap()).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn png_round_trips() {
        let (s, c) = slice_service();
        let sl = s.slice(c.candidate.id, Axis::Y, 6).unwrap();
        let bytes = encode_png(&sl).unwrap();
        let dec = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = dec.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (9, 9));
        assert_eq!(&buf[..81], sl.pixels.as_slice());
    }

    #[test]
    fn rle_round_trip() {
        let bits = [true, true, false, true, false, false, true];
        let runs = rle_encode(&bits);
        assert_eq!(runs, vec![[0, 2], [3, 1], [6, 1]]);
        assert_eq!(rle_decode(&runs, 7).unwrap(), bits);
        assert!(rle_decode(&[[5, 3]], 7).is_err());
    }
}
