//! Independent reference implementations used by the integration suites.
//! Each one is a plain loop over the definition, sharing no code with the
//! library.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol * max(|b|, 1e-300)`, with exact zero treated as zero.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * b.abs().max(a.abs()).max(1e-300)
}

/// Shannon entropy in bits of the token multiset.
pub fn entropy_oracle(tokens: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    let n = tokens.len() as f64;
    let mut h = 0.0;
    for &c in counts.values() {
        let p = c as f64 / n;
        h -= p * p.ln() / std::f64::consts::LN_2;
    }
    h.max(0.0)
}

/// Two-pass population standard deviation.
pub fn std_oracle(px: &[u8]) -> f64 {
    let n = px.len() as f64;
    let mean = px.iter().map(|&v| v as f64).sum::<f64>() / n;
    (px.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// 4-neighbour Laplacian with clamped coordinates, then two-pass variance.
pub fn laplacian_oracle(w: usize, h: usize, px: &[u8]) -> f64 {
    let at = |x: isize, y: isize| -> f64 {
        let x = x.clamp(0, w as isize - 1) as usize;
        let y = y.clamp(0, h as isize - 1) as usize;
        px[y * w + x] as f64
    };
    let mut resp = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            resp.push(at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y));
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n
}

pub fn image_entropy_oracle(px: &[u8]) -> f64 {
    let mut counts = BTreeMap::new();
    for &v in px {
        *counts.entry(v).or_insert(0u64) += 1;
    }
    let n = px.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln() / std::f64::consts::LN_2
        })
        .sum::<f64>()
        .max(0.0)
}

pub fn dot_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn l2_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Term-by-term contrastive loss with the logistic written out.
pub fn sigmoid_loss_oracle(img: &[Vec<f64>], txt: &[Vec<f64>], tau: f64, b: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..img.len() {
        for j in 0..txt.len() {
            let s = dot_oracle(&img[i], &txt[j]) / tau + b;
            loss -= if i == j { sigmoid(s).ln() } else { (1.0 - sigmoid(s)).ln() };
        }
    }
    loss
}

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Connected components of the graph with an edge wherever cosine
/// distance is below `beta`, by breadth-first search over the full
/// adjacency matrix. Components are sorted, singletons included.
pub fn components_oracle(vs: &[&[f64]], beta: f64) -> Vec<Vec<usize>> {
    let n = vs.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| i != j && (1.0 - dot_oracle(vs[i], vs[j])).max(0.0) < beta).collect())
        .collect();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = vec![s];
        let mut q = VecDeque::from([s]);
        while let Some(u) = q.pop_front() {
            for v in 0..n {
                if adj[u][v] && !seen[v] {
                    seen[v] = true;
                    comp.push(v);
                    q.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out.sort();
    out
}

/// Vectors scattered around a few centres with noise on several scales,
/// so that some pairs sit near the duplicate threshold and chains form.
pub fn clustered_vectors(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    let centres: Vec<Vec<f64>> = (0..(n / 4).max(1)).map(|_| random_unit(rng, dim)).collect();
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            let scale = [0.05, 0.2, 0.35, 0.5, 2.0][rng.random_range(0..5)];
            let v: Vec<f64> = c.iter().map(|x| x + scale * rng.random_range(-1.0..1.0) / (dim as f64).sqrt()).collect();
            normalized(&v)
        })
        .collect()
}
