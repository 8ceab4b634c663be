//! Gram checks, rank and the seesaw probe.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::SparseState;

/// Largest `|<x|y>| / (|x| |y|)` over distinct pairs, found by accumulating
/// only over shared basis indices.
pub fn max_normalized_overlap(states: &[&[(u64, Complex64)]]) -> (f64, Option<(usize, usize)>) {
    let n = states.len();
    if n < 2 {
        return (0.0, None);
    }
    let norms: Vec<f64> = states
        .iter()
        .map(|s| s.iter().map(|(_, a)| a.norm_sqr()).sum::<f64>().sqrt())
        .collect();
    let mut entries: Vec<(u64, u32, Complex64)> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        entries.extend(s.iter().map(|&(k, a)| (k, i as u32, a)));
    }
    entries.sort_by_key(|e| (e.0, e.1));
    let mut gram = vec![Complex64::default(); n * n];
    let mut start = 0;
    while start < entries.len() {
        let key = entries[start].0;
        let mut end = start;
        while end < entries.len() && entries[end].0 == key {
            end += 1;
        }
        let group = &entries[start..end];
        for (p, &(_, i, ai)) in group.iter().enumerate() {
            for &(_, j, aj) in &group[p + 1..] {
                gram[i as usize * n + j as usize] += ai.conj() * aj;
            }
        }
        start = end;
    }
    let mut best = 0.0;
    let mut pair = None;
    for i in 0..n {
        for j in i + 1..n {
            let g = gram[i * n + j];
            if g.norm() == 0.0 {
                continue;
            }
            let denom = norms[i] * norms[j];
            let v = if denom == 0.0 { 0.0 } else { g.norm() / denom };
            if v > best {
                best = v;
                pair = Some((i, j));
            }
        }
    }
    (best, pair)
}

fn dense(s: &SparseState) -> Vec<Complex64> {
    let mut v = vec![Complex64::default(); s.layout().size() as usize];
    for &(k, a) in s.keyed() {
        v[k as usize] = a;
    }
    v
}

fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Returns true
/// and appends the normalized residual when it exceeds `tol`.
fn push_orthogonal(basis: &mut Vec<Vec<Complex64>>, mut v: Vec<Complex64>, tol: f64) -> bool {
    let n0 = norm(&v);
    if n0 == 0.0 {
        return false;
    }
    for a in v.iter_mut() {
        *a /= n0;
    }
    for _ in 0..2 {
        for q in basis.iter() {
            let coef = dot(q, &v);
            if coef.norm() == 0.0 {
                continue;
            }
            for (a, b) in v.iter_mut().zip(q) {
                *a -= coef * b;
            }
        }
    }
    let r = norm(&v);
    if r <= tol {
        return false;
    }
    for a in v.iter_mut() {
        *a /= r;
    }
    basis.push(v);
    true
}

fn orthonormal_span(states: &[&SparseState], tol: f64) -> Vec<Vec<Complex64>> {
    let mut basis = Vec::with_capacity(states.len());
    for s in states {
        push_orthogonal(&mut basis, dense(s), tol);
    }
    basis
}

pub fn span_rank(states: &[&SparseState], tol: f64) -> usize {
    orthonormal_span(states, tol).len()
}

/// Orthonormal basis of the orthogonal complement of the span, as dense
/// vectors over the joint index.
pub fn complement_basis(states: &[&SparseState]) -> Vec<Vec<Complex64>> {
    let Some(first) = states.first() else {
        return Vec::new();
    };
    let total = first.layout().size() as usize;
    let mut basis = orthonormal_span(states, 1e-9);
    let rank = basis.len();
    for x in 0..total {
        if basis.len() == total {
            break;
        }
        let mut e = vec![Complex64::default(); total];
        e[x] = Complex64::new(1.0, 0.0);
        push_orthogonal(&mut basis, e, 1e-6);
    }
    basis.split_off(rank)
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        })
        .collect();
    let nv = norm(&v);
    for a in v.iter_mut() {
        *a /= nv;
    }
    v
}

/// Squared norm of the projection of `a (x) b (x) c` onto the span of `comp`.
fn overlap(dims: [usize; 3], comp: &[Vec<Complex64>], f: &[Vec<Complex64>; 3]) -> f64 {
    let [_, db, dc] = dims;
    comp.iter()
        .map(|ck| {
            let mut s = Complex64::default();
            for (x, ax) in f[0].iter().enumerate() {
                for (y, by) in f[1].iter().enumerate() {
                    let base = (x * db + y) * dc;
                    let ab = ax * by;
                    for (z, cz) in f[2].iter().enumerate() {
                        s += ck[base + z].conj() * ab * cz;
                    }
                }
            }
            s.norm_sqr()
        })
        .sum()
}

/// Optimal factor `which` with the other two fixed: top eigenvector of the
/// reduced PSD form, reached by power iteration from the current factor.
fn improve(dims: [usize; 3], comp: &[Vec<Complex64>], f: &mut [Vec<Complex64>; 3], which: usize) {
    let [da, db, dc] = dims;
    let n = dims[which];
    let us: Vec<Vec<Complex64>> = comp
        .iter()
        .map(|ck| {
            let mut u = vec![Complex64::default(); n];
            for x in 0..da {
                for y in 0..db {
                    for z in 0..dc {
                        let coef = ck[(x * db + y) * dc + z].conj();
                        let (slot, w) = match which {
                            0 => (x, f[1][y] * f[2][z]),
                            1 => (y, f[0][x] * f[2][z]),
                            _ => (z, f[0][x] * f[1][y]),
                        };
                        u[slot] += coef * w;
                    }
                }
            }
            u
        })
        .collect();
    let mut v = f[which].clone();
    for _ in 0..30 {
        // H v with H = sum_k conj(u_k) u_k^T
        let mut hv = vec![Complex64::default(); n];
        for u in &us {
            let s: Complex64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (h, a) in hv.iter_mut().zip(u) {
                *h += a.conj() * s;
            }
        }
        let nh = norm(&hv);
        if nh == 0.0 {
            return;
        }
        for (a, h) in v.iter_mut().zip(&hv) {
            *a = h / nh;
        }
    }
    f[which] = v;
}

/// Alternating maximization over product vectors. Returns the best value
/// found, 0 for an empty complement.
pub fn seesaw_probe(
    dims: [usize; 3],
    comp: &[Vec<Complex64>],
    restarts: usize,
    iters: usize,
    seed: u64,
) -> f64 {
    if comp.is_empty() {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: f64 = 0.0;
    for _ in 0..restarts {
        let mut f = [
            random_unit(&mut rng, dims[0]),
            random_unit(&mut rng, dims[1]),
            random_unit(&mut rng, dims[2]),
        ];
        let mut last = overlap(dims, comp, &f);
        for _ in 0..iters {
            for w in 0..3 {
                improve(dims, comp, &mut f, w);
            }
            let now = overlap(dims, comp, &f);
            if (now - last).abs() < 1e-15 {
                last = now;
                break;
            }
            last = now;
        }
        best = best.max(last);
    }
    best.min(1.0)
}

/// Seesaw probe against the complement of an arbitrary set of tripartite states.
pub fn product_set_probe(
    dims: [usize; 3],
    states: &[&SparseState],
    restarts: usize,
    iters: usize,
    seed: u64,
) -> f64 {
    seesaw_probe(dims, &complement_basis(states), restarts, iters, seed)
}
