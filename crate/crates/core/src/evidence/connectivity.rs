use std::collections::{BTreeMap, HashMap};

use crate::error::Result;
use crate::synapse::SynapseRecord;
use crate::workflow::BodyState;

pub const CONN_LEN: usize = 28;
pub const DEFAULT_TOP_K: usize = 3;

/// Synaptic connections resolved to current bodies: for each body root, the
/// partner roots of its inputs and outputs, one entry per T-bar/PSD pair.
#[derive(Clone, Debug, Default)]
pub struct SynapseGraph {
    inputs: HashMap<u64, Vec<u64>>,
    outputs: HashMap<u64, Vec<u64>>,
}

impl SynapseGraph {
    pub fn new(synapses: &[SynapseRecord], bodies: &BodyState) -> Result<Self> {
        let mut g = SynapseGraph::default();
        for s in synapses {
            let pre = bodies.root(s.pre_fragment)?;
            for &post in &s.post_fragments {
                let post = bodies.root(post)?;
                if post == pre {
                    continue;
                }
                g.outputs.entry(pre).or_default().push(post);
                g.inputs.entry(post).or_default().push(pre);
            }
        }
        Ok(g)
    }

    fn partners(&self, inputs: bool, body: u64) -> &[u64] {
        let m = if inputs { &self.inputs } else { &self.outputs };
        m.get(&body).map_or(&[], |v| v.as_slice())
    }
}

fn counts<K: Ord + Copy>(keys: impl Iterator<Item = K>) -> BTreeMap<K, u64> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Overlap of the top-k common partners: partners are ranked by combined
/// count, ties to the smaller key, and each side sums its own counts.
fn top_k_overlap<K: Ord + Copy>(ca: &BTreeMap<K, u64>, cb: &BTreeMap<K, u64>, k: usize) -> (u64, u64) {
    let mut common: Vec<(u64, K, u64, u64)> = ca
        .iter()
        .filter_map(|(key, &na)| cb.get(key).map(|&nb| (na + nb, *key, na, nb)))
        .collect();
    common.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    common.iter().take(k).fold((0, 0), |(sa, sb), c| (sa + c.2, sb + c.3))
}

fn frac(n: u64, total: u64) -> f64 {
    if total == 0 {
        0.0
    } else {
        n as f64 / total as f64
    }
}

/// Connectivity comparison of the bodies holding `a` and `b`. Layout, each
/// entry an `(a, b)` pair:
///
/// | index | entry |
/// |-------|-------|
/// | 0-3 | total inputs, total outputs |
/// | 4-7 | inputs from and outputs to identified bodies |
/// | 8-11 | top-k common input and output partner overlap, by body |
/// | 12-15 | the same overlap by cell type of identified partners |
/// | 16-27 | entries 4-15 as fractions of the matching total |
///
/// `types` maps fragment ids (body roots) to cell types. The two candidate
/// bodies are never counted as partners of each other in overlaps.
pub fn connectivity_features(
    graph: &SynapseGraph,
    bodies: &BodyState,
    types: &HashMap<u64, u32>,
    a: u64,
    b: u64,
    top_k: usize,
) -> Result<[f64; CONN_LEN]> {
    let (ra, rb) = (bodies.root(a)?, bodies.root(b)?);
    let mut raw = [0u64; 16];
    for (dir, inputs) in [true, false].into_iter().enumerate() {
        let pa = graph.partners(inputs, ra);
        let pb = graph.partners(inputs, rb);
        raw[2 * dir] = pa.len() as u64;
        raw[2 * dir + 1] = pb.len() as u64;
        let ident = |p: &[u64]| -> Result<u64> {
            let mut n = 0;
            for &x in p {
                n += u64::from(bodies.is_identified(x)?);
            }
            Ok(n)
        };
        raw[4 + 2 * dir] = ident(pa)?;
        raw[4 + 2 * dir + 1] = ident(pb)?;

        let others = |p: &[u64]| p.iter().copied().filter(|&x| x != ra && x != rb).collect::<Vec<_>>();
        let (oa, ob) = (others(pa), others(pb));
        let (ba, bb) = top_k_overlap(&counts(oa.iter().copied()), &counts(ob.iter().copied()), top_k);
        raw[8 + 2 * dir] = ba;
        raw[8 + 2 * dir + 1] = bb;

        let typed = |p: &[u64]| -> Result<BTreeMap<u32, u64>> {
            let mut ts = Vec::new();
            for &x in p {
                if bodies.is_identified(x)? {
                    if let Some(&t) = types.get(&x) {
                        ts.push(t);
                    }
                }
            }
            Ok(counts(ts.into_iter()))
        };
        let (ta, tb) = top_k_overlap(&typed(&oa)?, &typed(&ob)?, top_k);
        raw[12 + 2 * dir] = ta;
        raw[12 + 2 * dir + 1] = tb;
    }
    let mut out = [0.0; CONN_LEN];
    for (i, &v) in raw.iter().enumerate() {
        out[i] = v as f64;
    }
    // Entries 4..16 over their totals: inputs at even offsets within each
    // group of four, outputs at odd.
    for i in 4..16 {
        let total = raw[(i % 4 / 2) * 2 + i % 2];
        out[12 + i] = frac(raw[i], total);
    }
    Ok(out)
}

/// Swaps the per-segment slots, giving the features of `(b, a)`.
pub fn swap_sides(f: &[f64; CONN_LEN]) -> [f64; CONN_LEN] {
    let mut out = *f;
    for i in (0..CONN_LEN).step_by(2) {
        out.swap(i, i + 1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Voxel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn syn(pre: u64, posts: &[u64]) -> SynapseRecord {
        SynapseRecord {
            tbar: Voxel::new(0, 0, 0),
            psds: posts.iter().map(|_| Voxel::new(1, 0, 0)).collect(),
            pre_fragment: pre,
            post_fragments: posts.to_vec(),
        }
    }

    fn features(s: &[SynapseRecord], b: &BodyState, t: &HashMap<u64, u32>, x: u64, y: u64) -> [f64; CONN_LEN] {
        connectivity_features(&SynapseGraph::new(s, b).unwrap(), b, t, x, y, DEFAULT_TOP_K).unwrap()
    }

    #[test]
    fn no_shared_partners() {
        let b = BodyState::new(1..=4);
        let s = vec![syn(1, &[3]), syn(2, &[4])];
        let f = features(&s, &b, &HashMap::new(), 1, 2);
        assert_eq!(&f[8..16], &[0.0; 8]);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[3], 1.0);
    }

    #[test]
    fn one_shared_output() {
        let b = BodyState::new(1..=3);
        let s = vec![syn(1, &[3]), syn(2, &[3])];
        let f = features(&s, &b, &HashMap::new(), 1, 2);
        assert_eq!(f[10], 1.0);
        assert_eq!(f[11], 1.0);
        // output overlap fractions
        assert_eq!(f[12 + 10], 1.0);
        assert_eq!(f[12 + 11], 1.0);
        assert_eq!(f[8], 0.0);
    }

    #[test]
    fn type_level_overlap_uses_identified_partners() {
        let mut b = BodyState::new(1..=5);
        b.set_identified(3, true).unwrap();
        b.set_identified(4, true).unwrap();
        let types = HashMap::from([(3, 7), (4, 7), (5, 7)]);
        // a -> 3, b -> 4: different bodies, same type. b -> 5 is untyped (not identified).
        let s = vec![syn(1, &[3]), syn(2, &[4, 5])];
        let f = features(&s, &b, &types, 1, 2);
        assert_eq!(&f[10..12], &[0.0, 0.0]);
        assert_eq!(&f[14..16], &[1.0, 1.0]);
        assert_eq!(&f[6..8], &[1.0, 1.0]);
        assert_eq!(f[12 + 7], 0.5);
    }

    /// Independent recount straight from the synapse table.
    fn recount(s: &[SynapseRecord], b: &BodyState, t: &HashMap<u64, u32>, x: u64, y: u64) -> [f64; CONN_LEN] {
        let (rx, ry) = (b.root(x).unwrap(), b.root(y).unwrap());
        let mut conns = Vec::new();
        for r in s {
            for &p in &r.post_fragments {
                let (u, v) = (b.root(r.pre_fragment).unwrap(), b.root(p).unwrap());
                if u != v {
                    conns.push((u, v));
                }
            }
        }
        let mut out = [0.0; CONN_LEN];
        for (dir, inputs) in [true, false].into_iter().enumerate() {
            for (side, body) in [rx, ry].into_iter().enumerate() {
                let partners: Vec<u64> = conns
                    .iter()
                    .filter_map(|&(u, v)| if inputs { (v == body).then_some(u) } else { (u == body).then_some(v) })
                    .collect();
                let total = partners.len() as f64;
                let ident = partners.iter().filter(|&&p| b.is_identified(p).unwrap()).count() as f64;
                out[2 * dir + side] = total;
                out[4 + 2 * dir + side] = ident;
                out[16 + 2 * dir + side] = if total > 0.0 { ident / total } else { 0.0 };
            }
            // Overlaps: brute force over all keys.
            let list = |body: u64| -> Vec<u64> {
                conns
                    .iter()
                    .filter_map(|&(u, v)| if inputs { (v == body).then_some(u) } else { (u == body).then_some(v) })
                    .filter(|&p| p != rx && p != ry)
                    .collect()
            };
            let (la, lb) = (list(rx), list(ry));
            let mut keys: Vec<u64> = la.iter().chain(&lb).copied().collect();
            keys.sort();
            keys.dedup();
            let mut ranked: Vec<(usize, u64, usize, usize)> = keys
                .iter()
                .map(|&k| {
                    let na = la.iter().filter(|&&p| p == k).count();
                    let nb = lb.iter().filter(|&&p| p == k).count();
                    (na + nb, k, na, nb)
                })
                .filter(|r| r.2 > 0 && r.3 > 0)
                .collect();
            ranked.sort_by(|p, q| q.0.cmp(&p.0).then(p.1.cmp(&q.1)));
            let sa: usize = ranked.iter().take(3).map(|r| r.2).sum();
            let sb: usize = ranked.iter().take(3).map(|r| r.3).sum();
            out[8 + 2 * dir] = sa as f64;
            out[9 + 2 * dir] = sb as f64;
            let ty = |l: &[u64]| -> Vec<u64> {
                l.iter()
                    .filter(|&&p| b.is_identified(p).unwrap())
                    .filter_map(|p| t.get(p).map(|&x| x as u64))
                    .collect()
            };
            let (tla, tlb) = (ty(&la), ty(&lb));
            let mut tk: Vec<u64> = tla.iter().chain(&tlb).copied().collect();
            tk.sort();
            tk.dedup();
            let mut tr: Vec<(usize, u64, usize, usize)> = tk
                .iter()
                .map(|&k| {
                    let na = tla.iter().filter(|&&p| p == k).count();
                    let nb = tlb.iter().filter(|&&p| p == k).count();
                    (na + nb, k, na, nb)
                })
                .filter(|r| r.2 > 0 && r.3 > 0)
                .collect();
            tr.sort_by(|p, q| q.0.cmp(&p.0).then(p.1.cmp(&q.1)));
            out[12 + 2 * dir] = tr.iter().take(3).map(|r| r.2).sum::<usize>() as f64;
            out[13 + 2 * dir] = tr.iter().take(3).map(|r| r.3).sum::<usize>() as f64;
            for side in 0..2 {
                let total = out[2 * dir + side];
                for group in [8, 12] {
                    let v = out[group + 2 * dir + side];
                    out[12 + group + 2 * dir + side] = if total > 0.0 { v / total } else { 0.0 };
                }
            }
        }
        out
    }

    #[test]
    fn matches_recount_on_random_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(3..25u64);
            let mut b = BodyState::new(1..=n);
            for _ in 0..rng.random_range(0..5) {
                b.union(rng.random_range(1..=n), rng.random_range(1..=n)).unwrap();
            }
            for id in 1..=n {
                if rng.random::<f64>() < 0.4 {
                    b.set_identified(id, true).unwrap();
                }
            }
            let types: HashMap<u64, u32> = (1..=n).map(|id| (id, rng.random_range(0..3))).collect();
            let s: Vec<SynapseRecord> = (0..rng.random_range(0..80))
                .map(|_| {
                    let posts: Vec<u64> = (0..rng.random_range(1..4)).map(|_| rng.random_range(1..=n)).collect();
                    syn(rng.random_range(1..=n), &posts)
                })
                .collect();
            let x = rng.random_range(1..=n);
            let y = rng.random_range(1..=n);
            let f = features(&s, &b, &types, x, y);
            assert_eq!(f, recount(&s, &b, &types, x, y));
            assert_eq!(features(&s, &b, &types, y, x), swap_sides(&f));
            assert!(f[16..].iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
