use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClosedChain, PassengerChains};
use crate::model::{Network, StopId, Zone};
use crate::{Error, Result};

/// Usage shares of the five most used chains, zero padded.
pub fn behavior_vector(chains: &[ClosedChain]) -> [f64; 5] {
    let mut usage: Vec<usize> = chains.iter().map(|c| c.usage).collect();
    usage.sort_unstable_by(|a, b| b.cmp(a));
    let total: usize = usage.iter().sum();
    let mut v = [0.0; 5];
    if total > 0 {
        for (slot, u) in v.iter_mut().zip(&usage) {
            *slot = *u as f64 / total as f64;
        }
    }
    v
}

/// Covariance eigenpairs sorted by descending eigenvalue.
pub fn covariance_eigen(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n == 0 || d == 0 {
        return (Vec::new(), Vec::new());
    }
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov /= (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let col: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // fix the sign so the largest component is positive
            let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            col.into_iter().map(|x| if big < 0.0 { -x } else { x }).collect()
        })
        .collect();
    (values, vectors)
}

/// Projects rows onto the top two principal components, each scaled to unit variance.
pub fn pca_2d(rows: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let (values, vectors) = covariance_eigen(rows);
    let mut out = vec![[0.0; 2]; n];
    for (k, slot) in (0..2).zip([0usize, 1]) {
        let Some(v) = vectors.get(k) else { break };
        let sd = values[k].max(0.0).sqrt();
        for (i, r) in rows.iter().enumerate() {
            let p: f64 = r.iter().zip(&mean).zip(v).map(|((x, m), w)| (x - m) * w).sum();
            out[i][slot] = if sd > 1e-12 { p / sd } else { 0.0 };
        }
    }
    out
}

/// Density clustering; `None` marks noise.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    if n < min_pts {
        return vec![Some(0); n];
    }
    let near = |i: usize| -> Vec<usize> {
        (0..n)
            .filter(|&j| {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                (dx * dx + dy * dy).sqrt() <= eps
            })
            .collect()
    };
    let mut label: Vec<Option<usize>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0;
    for i in 0..n {
        if visited[i] {
            continue;
        }
        visited[i] = true;
        let nb = near(i);
        if nb.len() < min_pts {
            continue;
        }
        label[i] = Some(next);
        let mut queue = nb;
        let mut q = 0;
        while q < queue.len() {
            let j = queue[q];
            q += 1;
            if label[j].is_none() {
                label[j] = Some(next);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb2 = near(j);
            if nb2.len() >= min_pts {
                queue.extend(nb2);
            }
        }
        next += 1;
    }
    label
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BehaviorPoint {
    pub card: crate::model::CardId,
    pub shares: [f64; 5],
    pub embedding: [f64; 2],
    pub cluster: Option<usize>,
}

/// Behavior vectors of passengers with chains, embedded and density-clustered.
pub fn behavior_clusters(passengers: &[PassengerChains], eps: f64, min_pts: usize) -> Vec<BehaviorPoint> {
    let with: Vec<&PassengerChains> = passengers.iter().filter(|p| !p.chains.is_empty()).collect();
    let shares: Vec<[f64; 5]> = with.iter().map(|p| behavior_vector(&p.chains)).collect();
    let rows: Vec<Vec<f64>> = shares.iter().map(|s| s.to_vec()).collect();
    let emb = pca_2d(&rows);
    let labels = dbscan(&emb, eps, min_pts);
    with.iter()
        .zip(shares)
        .zip(emb.iter().zip(labels))
        .map(|((p, shares), (e, cluster))| BehaviorPoint {
            card: p.card.clone(),
            shares,
            embedding: *e,
            cluster,
        })
        .collect()
}

/// Downtown stops form one region; suburban stops split into four compass sectors around the network centroid.
pub fn default_regions(net: &Network) -> HashMap<StopId, String> {
    let n = net.stops().len().max(1) as f64;
    let lat = net.stops().iter().map(|s| s.lat).sum::<f64>() / n;
    let lon = net.stops().iter().map(|s| s.lon).sum::<f64>() / n;
    net.stops()
        .iter()
        .map(|s| {
            let r = match s.zone {
                Zone::Downtown => "downtown".to_string(),
                Zone::Suburb => {
                    let (dy, dx) = (s.lat - lat, s.lon - lon);
                    let sector = match (dy >= 0.0, dx >= 0.0) {
                        (true, true) => "ne",
                        (true, false) => "nw",
                        (false, true) => "se",
                        (false, false) => "sw",
                    };
                    format!("suburb-{sector}")
                }
            };
            (s.id.clone(), r)
        })
        .collect()
}

/// Usage-weighted shares of chains that are inter-region, intra-home-region, or entirely outside it.
pub fn region_vector(
    p: &PassengerChains,
    home: &StopId,
    regions: &HashMap<StopId, String>,
) -> Result<[f64; 3]> {
    let region = |s: &StopId| {
        regions
            .get(s)
            .ok_or_else(|| Error::InvalidInput(format!("stop {s} missing from region map")))
    };
    let home_r = region(home)?;
    let mut v = [0.0; 3];
    let total: usize = p.chains.iter().map(|c| c.usage).sum();
    if total == 0 {
        return Ok(v);
    }
    for c in &p.chains {
        let stops: BTreeSet<&StopId> = c.vertices.iter().flat_map(|&k| p.clusters[k].stops.iter()).collect();
        let mut inside = 0;
        for s in &stops {
            if region(s)? == home_r {
                inside += 1;
            }
        }
        let slot = if inside == stops.len() {
            1
        } else if inside > 0 {
            0
        } else {
            2
        };
        v[slot] += c.usage as f64 / total as f64;
    }
    Ok(v)
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sum of squared distances to assigned centers.
pub fn kmeans_objective(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let (centers, _) = centroids(points, labels, k);
    points.iter().zip(labels).map(|(p, &l)| sq(p, &centers[l])).sum()
}

/// k-means with ++ seeding, best of ten restarts; returns labels in 0..k.
pub fn kmeans_pp(points: &[Vec<f64>], k: usize, seed: u64, iters: usize) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    let k = k.min(points.len()).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..10 {
        let mut labels = lloyd(points, k, &mut rng, iters);
        hartigan(points, k, &mut labels);
        let obj = kmeans_objective(points, &labels, k);
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, labels));
        }
    }
    best.unwrap().1
}

fn centroids(points: &[Vec<f64>], labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = points[0].len();
    let mut centers = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (c, x) in centers[l].iter_mut().zip(p) {
            *c += x;
        }
    }
    for (c, n) in centers.iter_mut().zip(&counts) {
        if *n > 0 {
            c.iter_mut().for_each(|x| *x /= *n as f64);
        }
    }
    (centers, counts)
}

/// Single-point moves that lower the objective, until none remain.
fn hartigan(points: &[Vec<f64>], k: usize, labels: &mut [usize]) {
    let (mut centers, mut counts) = centroids(points, labels, k);
    let mut improved = true;
    while improved {
        improved = false;
        for (i, p) in points.iter().enumerate() {
            let a = labels[i];
            if counts[a] <= 1 {
                continue;
            }
            let na = counts[a] as f64;
            let loss = na / (na - 1.0) * sq(p, &centers[a]);
            let mut pick = None;
            let mut gain = 1e-12;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let g = loss - nb / (nb + 1.0) * sq(p, &centers[b]);
                if g > gain {
                    gain = g;
                    pick = Some(b);
                }
            }
            if let Some(b) = pick {
                let (na, nb) = (counts[a] as f64, counts[b] as f64);
                for (j, x) in p.iter().enumerate() {
                    centers[a][j] = (centers[a][j] * na - x) / (na - 1.0);
                    centers[b][j] = (centers[b][j] * nb + x) / (nb + 1.0);
                }
                counts[a] -= 1;
                counts[b] += 1;
                labels[i] = b;
                improved = true;
            }
        }
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng, iters: usize) -> Vec<usize> {
    let n = points.len();
    let mut centers: Vec<Vec<f64>> = vec![points[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| sq(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            centers.push(points[rng.random_range(0..n)].clone());
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, w) in d2.iter().enumerate() {
            if r < *w {
                pick = i;
                break;
            }
            r -= w;
        }
        centers.push(points[pick].clone());
    }
    let mut labels = vec![0usize; n];
    for _ in 0..iters {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let best = (0..k).min_by(|&a, &b| sq(p, &centers[a]).total_cmp(&sq(p, &centers[b]))).unwrap();
            if best != labels[i] {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for (j, x) in center.iter_mut().enumerate() {
                *x = members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorridorSegment {
    pub from: StopId,
    pub to: StopId,
    /// Fraction of chain-holding passengers whose covering chains use the segment.
    pub weight: f64,
}

/// Smallest prefix of usage-sorted chains covering `coverage` of a passenger's chained trips.
pub fn covering_prefix(chains: &[ClosedChain], coverage: f64) -> usize {
    let total: usize = chains.iter().map(|c| c.usage * c.vertices.len()).sum();
    if total == 0 {
        return 0;
    }
    let mut sorted: Vec<usize> = chains.iter().map(|c| c.usage * c.vertices.len()).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut acc = 0;
    for (i, t) in sorted.iter().enumerate() {
        acc += t;
        if acc as f64 >= coverage * total as f64 - 1e-9 {
            return i + 1;
        }
    }
    sorted.len()
}

/// Route segments of each passenger's covering chains, weighted by passenger fraction.
pub fn extract_corridors(passengers: &[PassengerChains], coverage: f64, net: &Network) -> Vec<CorridorSegment> {
    let with: Vec<&PassengerChains> = passengers.iter().filter(|p| !p.chains.is_empty()).collect();
    let mut count: BTreeMap<(StopId, StopId), usize> = BTreeMap::new();
    for p in &with {
        let k = covering_prefix(&p.chains, coverage);
        let mut chains: Vec<&ClosedChain> = p.chains.iter().collect();
        chains.sort_by(|a, b| (b.usage * b.vertices.len()).cmp(&(a.usage * a.vertices.len())));
        let mut segs: BTreeSet<(StopId, StopId)> = BTreeSet::new();
        for c in chains.into_iter().take(k) {
            for &v in &c.vertices {
                for leg in &p.clusters[v].legs {
                    let (Some(route), Some((i, j))) = (net.route(&leg.route), net.leg_positions(leg)) else {
                        continue;
                    };
                    for w in route.stops[i..=j].windows(2) {
                        segs.insert((w[0].clone(), w[1].clone()));
                    }
                }
            }
        }
        for s in segs {
            *count.entry(s).or_default() += 1;
        }
    }
    let n = with.len().max(1) as f64;
    count
        .into_iter()
        .map(|((from, to), c)| CorridorSegment {
            from,
            to,
            weight: c as f64 / n,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(usage: usize, len: usize) -> ClosedChain {
        ClosedChain {
            vertices: (0..len).collect(),
            closure_m: 0.0,
            usage,
            diameter_m: 0.0,
        }
    }

    #[test]
    fn behavior_vector_cases() {
        assert_eq!(behavior_vector(&[chain(7, 2)]), [1.0, 0.0, 0.0, 0.0, 0.0]);
        let v = behavior_vector(&(1..=7).map(|u| chain(u, 2)).collect::<Vec<_>>());
        assert!(v.iter().sum::<f64>() <= 1.0);
        assert!((v[0] - 7.0 / 28.0).abs() < 1e-12);
    }

    #[test]
    fn prefix_rule() {
        let cs = vec![chain(6, 1), chain(3, 1), chain(1, 1)];
        assert_eq!(covering_prefix(&cs, 0.85), 2);
        assert_eq!(covering_prefix(&cs[..1], 0.85), 1);
    }

    #[test]
    fn dbscan_small_and_separated() {
        assert_eq!(dbscan(&[[0.0, 0.0]], 0.1, 3), vec![Some(0)]);
        let mut pts = Vec::new();
        for i in 0..5 {
            pts.push([i as f64 * 0.01, 0.0]);
            pts.push([5.0 + i as f64 * 0.01, 5.0]);
        }
        pts.push([10.0, -10.0]);
        let l = dbscan(&pts, 0.05, 3);
        assert_eq!(l[0], Some(0));
        assert_eq!(l[1], Some(1));
        assert!(l.iter().step_by(2).take(5).all(|x| *x == Some(0)));
        assert_eq!(l[10], None);
    }

    /// Cyclic Jacobi rotations on a symmetric matrix.
    fn jacobi(mut a: Vec<Vec<f64>>) -> Vec<f64> {
        let n = a.len();
        for _ in 0..100 {
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-15 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = c * akp - s * akq;
                        a[k][q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut d: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        d.sort_by(|x, y| y.total_cmp(x));
        d
    }

    proptest! {
        #[test]
        fn eigen_matches_jacobi(rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 3..50)) {
            let (values, vectors) = covariance_eigen(&rows);
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..5).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let mut cov = vec![vec![0.0; 5]; 5];
            for r in &rows {
                for i in 0..5 { for j in 0..5 { cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / (n - 1.0); } }
            }
            let oracle = jacobi(cov.clone());
            for (a, b) in values.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
            // A v = λ v
            for (l, v) in values.iter().zip(&vectors) {
                for i in 0..5 {
                    let av: f64 = (0..5).map(|j| cov[i][j] * v[j]).sum();
                    prop_assert!((av - l * v[i]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn kmeans_beats_random(pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 6..40), seed in any::<u64>()) {
            let labels = kmeans_pp(&pts, 3, seed, 100);
            let obj = kmeans_objective(&pts, &labels, 3);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            for _ in 0..100 {
                let r: Vec<usize> = (0..pts.len()).map(|_| rand::Rng::random_range(&mut rng, 0..3)).collect();
                prop_assert!(obj <= kmeans_objective(&pts, &r, 3) + 1e-9);
            }
        }
    }
}
