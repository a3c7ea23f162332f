//! Reference implementations written without any of the library's helpers:
//! full sorts, queue-based flood fill, direct sums, pairwise counting.
#![allow(dead_code)]

use std::collections::VecDeque;

/// 8-connected components by BFS, each sorted, ordered by first member.
pub fn bfs_components(h: usize, w: usize, mask: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (r, c) = ((p / w) as i64, (p % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if mask[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q);
                    }
                }
            }
        }
        comp.sort();
        out.push(comp);
    }
    out
}

/// Smallest m with m >= pct/100 * n, at least 1.
pub fn count_for(pct: f64, n: usize) -> usize {
    let mut m = 1;
    while (m as f64) * 100.0 < pct * n as f64 - 1e-7 {
        m += 1;
    }
    m.min(n)
}

pub struct BruteAds {
    pub mask: Vec<bool>,
    pub blob_mass: f64,
    pub entropy: f64,
    pub ads: f64,
}

/// Normalize, full sort, flood fill, drop small blobs, base-2 entropy of the rest.
pub fn brute_ads(h: usize, w: usize, raw: &[f64], x_pct: f64, tau: usize) -> BruteAds {
    let n = h * w;
    let total: f64 = raw.iter().sum();
    let a: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap().then(i.cmp(&j)));
    let mut mask = vec![false; n];
    for &i in &order[..count_for(x_pct, n)] {
        mask[i] = true;
    }
    let mut blob_mass = 0.0;
    for comp in bfs_components(h, w, &mask) {
        if comp.len() >= tau {
            blob_mass += comp.iter().map(|&p| a[p]).sum::<f64>();
        }
    }
    let blob_mass = blob_mass.clamp(0.0, 1.0);
    let bg: Vec<f64> = (0..n).filter(|&p| !mask[p]).map(|p| a[p]).collect();
    let bg_total: f64 = bg.iter().sum();
    let entropy = if bg_total <= 0.0 || n < 2 {
        0.0
    } else {
        let mut s = 0.0;
        for v in bg {
            let q = v / bg_total;
            if q > 0.0 {
                s -= q * q.log2();
            }
        }
        s / (n as f64).log2()
    };
    BruteAds {
        mask,
        blob_mass,
        entropy,
        ads: (1.0 - blob_mass) * entropy,
    }
}

pub fn naive_cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        na += a[i] as f64 * a[i] as f64;
        nb += b[i] as f64 * b[i] as f64;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Sort descending and average the first ceil(k% * n) entries.
pub fn sorted_top_mean(values: &[f64], k_pct: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let m = count_for(k_pct, v.len());
    v[..m].iter().sum::<f64>() / m as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties count half.
pub fn pairwise_auc(labels: &[bool], scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for i in 0..labels.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..labels.len() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
