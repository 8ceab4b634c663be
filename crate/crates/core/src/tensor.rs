//! Sparse states over labelled qudit registers.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Amplitudes with modulus below this are never stored.
pub const PRUNE_THRESHOLD: f64 = 1e-12;
/// Orthogonality and unitarity tolerance.
pub const TOLERANCE: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `exp(2 pi i p / n)`.
pub fn root_of_unity(n: usize, p: usize) -> Complex64 {
    if n == 0 {
        return c(1.0, 0.0);
    }
    let p = p % n;
    // exact values on the axes keep the amplitudes clean
    if (4 * p).is_multiple_of(n) {
        return match 4 * p / n {
            0 => c(1.0, 0.0),
            1 => c(0.0, 1.0),
            2 => c(-1.0, 0.0),
            _ => c(0.0, -1.0),
        };
    }
    Complex64::from_polar(1.0, 2.0 * PI * p as f64 / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lab {
    Alice,
    Bob,
    Charlie,
}

impl fmt::Display for Lab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Lab::Alice => "Alice",
            Lab::Bob => "Bob",
            Lab::Charlie => "Charlie",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Register {
    pub id: String,
    pub dim: usize,
    pub owner: Lab,
}

impl Register {
    pub fn new(id: impl Into<String>, dim: usize, owner: Lab) -> Self {
        Register {
            id: id.into(),
            dim,
            owner,
        }
    }
}

/// Ordered registers. Basis indices are packed mixed-radix with the first
/// register most significant, so key order is lexicographic index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterLayout {
    registers: Vec<Register>,
    strides: Vec<u64>,
    size: u64,
}

impl RegisterLayout {
    pub fn new(registers: Vec<Register>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for r in &registers {
            if r.dim == 0 {
                return Err(Error::BadDimension(r.dim));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::LayoutConflict(r.id.clone()));
            }
        }
        let mut strides = vec![0u64; registers.len()];
        let mut size: u64 = 1;
        for (i, r) in registers.iter().enumerate().rev() {
            strides[i] = size;
            size = size
                .checked_mul(r.dim as u64)
                .ok_or(Error::DimensionOverflow)?;
        }
        Ok(RegisterLayout {
            registers,
            strides,
            size,
        })
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn len(&self) -> usize {
        self.registers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.registers.is_empty()
    }

    /// Number of joint basis states.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.registers.iter().position(|r| r.id == id)
    }

    pub fn register(&self, id: &str) -> Option<&Register> {
        self.registers.iter().find(|r| r.id == id)
    }

    pub fn owner(&self, id: &str) -> Option<Lab> {
        self.register(id).map(|r| r.owner)
    }

    pub fn stride(&self, pos: usize) -> u64 {
        self.strides[pos]
    }

    pub fn pack(&self, index: &[usize]) -> Result<u64> {
        if index.len() != self.registers.len() {
            return Err(Error::IndexArity {
                expected: self.registers.len(),
                found: index.len(),
            });
        }
        let mut key = 0u64;
        for ((r, &i), &s) in self.registers.iter().zip(index).zip(&self.strides) {
            if i >= r.dim {
                return Err(Error::IndexOutOfRange {
                    register: r.id.clone(),
                    index: i,
                    dim: r.dim,
                });
            }
            key += i as u64 * s;
        }
        Ok(key)
    }

    pub fn unpack(&self, key: u64) -> Vec<usize> {
        (0..self.registers.len()).map(|p| self.digit(key, p)).collect()
    }

    #[inline]
    pub fn digit(&self, key: u64, pos: usize) -> usize {
        ((key / self.strides[pos]) % self.registers[pos].dim as u64) as usize
    }

    /// Layout of `self` followed by `other`.
    pub fn concat(&self, other: &RegisterLayout) -> Result<RegisterLayout> {
        let mut regs = self.registers.clone();
        regs.extend(other.registers.iter().cloned());
        RegisterLayout::new(regs)
    }

    pub fn with_owner(&self, id: &str, owner: Lab) -> Result<RegisterLayout> {
        let pos = self
            .position(id)
            .ok_or_else(|| Error::UnknownRegister(id.to_string()))?;
        let mut out = self.clone();
        out.registers[pos].owner = owner;
        Ok(out)
    }

    /// Same ids and dimensions in the same order; ownership may differ.
    pub fn same_shape(&self, other: &RegisterLayout) -> bool {
        self.registers.len() == other.registers.len()
            && self
                .registers
                .iter()
                .zip(&other.registers)
                .all(|(a, b)| a.id == b.id && a.dim == b.dim)
    }
}

/// Unnormalized pure state stored as sorted `(packed index, amplitude)` pairs.
#[derive(Clone, Debug)]
pub struct SparseState {
    layout: Arc<RegisterLayout>,
    amps: Vec<(u64, Complex64)>,
}

impl PartialEq for SparseState {
    fn eq(&self, other: &Self) -> bool {
        self.layout.same_shape(&other.layout) && self.amps == other.amps
    }
}

impl SparseState {
    pub fn new<I>(layout: Arc<RegisterLayout>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, Complex64)>,
    {
        let mut acc: BTreeMap<u64, Complex64> = BTreeMap::new();
        for (idx, a) in entries {
            if !a.re.is_finite() || !a.im.is_finite() {
                return Err(Error::NonFinite);
            }
            let key = layout.pack(&idx)?;
            *acc.entry(key).or_default() += a;
        }
        Ok(SparseState {
            layout,
            amps: acc
                .into_iter()
                .filter(|(_, a)| a.norm() >= PRUNE_THRESHOLD)
                .collect(),
        })
    }

    /// Build from packed keys; keys may repeat and need not be sorted.
    pub fn from_keyed(layout: Arc<RegisterLayout>, mut amps: Vec<(u64, Complex64)>) -> Self {
        amps.sort_by_key(|e| e.0);
        let mut out: Vec<(u64, Complex64)> = Vec::with_capacity(amps.len());
        for (k, a) in amps {
            match out.last_mut() {
                Some(last) if last.0 == k => last.1 += a,
                _ => out.push((k, a)),
            }
        }
        out.retain(|(_, a)| a.norm() >= PRUNE_THRESHOLD);
        SparseState { layout, amps: out }
    }

    /// Keys must be strictly increasing and amplitudes above the prune threshold.
    fn from_sorted(layout: Arc<RegisterLayout>, amps: Vec<(u64, Complex64)>) -> Self {
        debug_assert!(amps.windows(2).all(|w| w[0].0 < w[1].0));
        SparseState { layout, amps }
    }

    pub fn zero(layout: Arc<RegisterLayout>) -> Self {
        SparseState {
            layout,
            amps: Vec::new(),
        }
    }

    pub fn basis(layout: Arc<RegisterLayout>, index: &[usize]) -> Result<Self> {
        let key = layout.pack(index)?;
        Ok(SparseState::from_sorted(layout, vec![(key, c(1.0, 0.0))]))
    }

    /// Single-register ket with the given dense amplitudes.
    pub fn single(id: &str, owner: Lab, amps: &[Complex64]) -> Result<Self> {
        let layout = Arc::new(RegisterLayout::new(vec![Register::new(id, amps.len(), owner)])?);
        SparseState::new(
            layout,
            amps.iter().enumerate().map(|(i, &a)| (vec![i], a)),
        )
    }

    pub fn layout(&self) -> &RegisterLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<RegisterLayout> {
        &self.layout
    }

    pub fn keyed(&self) -> &[(u64, Complex64)] {
        &self.amps
    }

    pub fn len(&self) -> usize {
        self.amps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amps.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Vec<usize>, Complex64)> + '_ {
        self.amps.iter().map(|&(k, a)| (self.layout.unpack(k), a))
    }

    pub fn amplitude(&self, index: &[usize]) -> Result<Complex64> {
        let key = self.layout.pack(index)?;
        Ok(self
            .amps
            .binary_search_by_key(&key, |e| e.0)
            .map(|i| self.amps[i].1)
            .unwrap_or_default())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|(_, a)| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> SparseState {
        let n = self.norm_sqr().sqrt();
        if n == 0.0 {
            return self.clone();
        }
        self.scale(c(1.0 / n, 0.0))
    }

    pub fn scale(&self, s: Complex64) -> SparseState {
        SparseState::from_keyed(
            self.layout.clone(),
            self.amps.iter().map(|&(k, a)| (k, a * s)).collect(),
        )
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: Complex64, other: &SparseState) -> Result<SparseState> {
        if !self.layout.same_shape(&other.layout) {
            return Err(Error::LayoutMismatch);
        }
        let mut v = self.amps.clone();
        v.extend(other.amps.iter().map(|&(k, a)| (k, a * s)));
        Ok(SparseState::from_keyed(self.layout.clone(), v))
    }

    /// Same amplitudes on a layout of identical shape (ownership changes).
    pub fn relocated(&self, layout: Arc<RegisterLayout>) -> Result<SparseState> {
        if !self.layout.same_shape(&layout) {
            return Err(Error::LayoutMismatch);
        }
        Ok(SparseState {
            layout,
            amps: self.amps.clone(),
        })
    }

    /// Values taken by register `pos` across the support.
    pub fn support_values(&self, pos: usize) -> BTreeSet<usize> {
        self.amps
            .iter()
            .map(|&(k, _)| self.layout.digit(k, pos))
            .collect()
    }
}

pub fn tensor_product(factors: &[SparseState]) -> Result<SparseState> {
    let mut iter = factors.iter();
    let first = match iter.next() {
        Some(f) => f.clone(),
        None => {
            let layout = Arc::new(RegisterLayout::new(vec![])?);
            return Ok(SparseState::from_sorted(layout, vec![(0, c(1.0, 0.0))]));
        }
    };
    iter.try_fold(first, |acc, f| tensor_pair(&acc, f))
}

fn tensor_pair(x: &SparseState, y: &SparseState) -> Result<SparseState> {
    let layout = Arc::new(x.layout.concat(&y.layout)?);
    let ny = y.layout.size();
    let mut amps = Vec::with_capacity(x.len() * y.len());
    for &(kx, ax) in &x.amps {
        for &(ky, ay) in &y.amps {
            let a = ax * ay;
            if a.norm() >= PRUNE_THRESHOLD {
                amps.push((kx * ny + ky, a));
            }
        }
    }
    Ok(SparseState::from_sorted(layout, amps))
}

/// `<x|y>`, conjugate-linear in `x`.
pub fn inner_product(x: &SparseState, y: &SparseState) -> Result<Complex64> {
    if !x.layout.same_shape(&y.layout) {
        return Err(Error::LayoutMismatch);
    }
    Ok(sparse_dot(&x.amps, &y.amps))
}

pub(crate) fn sparse_dot(x: &[(u64, Complex64)], y: &[(u64, Complex64)]) -> Complex64 {
    let (mut i, mut j) = (0, 0);
    let mut acc = Complex64::default();
    while i < x.len() && j < y.len() {
        match x[i].0.cmp(&y[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += x[i].1.conj() * y[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

/// One term of a diagonal projector: allowed values per register.
/// Registers that do not appear are unconstrained.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub constraints: BTreeMap<String, BTreeSet<usize>>,
}

impl Pattern {
    pub fn any() -> Self {
        Pattern::default()
    }

    pub fn with<I: IntoIterator<Item = usize>>(mut self, reg: &str, values: I) -> Self {
        self.constraints
            .insert(reg.to_string(), values.into_iter().collect());
        self
    }

    pub fn eq(self, reg: &str, value: usize) -> Self {
        self.with(reg, [value])
    }

    /// Constrain to the closed interval `[lo, hi]`; empty when `lo > hi`.
    pub fn range(self, reg: &str, lo: usize, hi: usize) -> Self {
        self.with(reg, lo..=hi)
    }

    pub fn registers(&self) -> impl Iterator<Item = &str> {
        self.constraints.keys().map(String::as_str)
    }

    pub fn is_empty_set(&self) -> bool {
        self.constraints.values().any(BTreeSet::is_empty)
    }

    pub fn disjoint(&self, other: &Pattern) -> bool {
        if self.is_empty_set() || other.is_empty_set() {
            return true;
        }
        self.constraints.iter().any(|(r, s)| {
            other
                .constraints
                .get(r)
                .is_some_and(|t| s.is_disjoint(t))
        })
    }

    pub fn matches(&self, layout: &RegisterLayout, key: u64) -> Result<bool> {
        for (r, s) in &self.constraints {
            let pos = layout
                .position(r)
                .ok_or_else(|| Error::UnknownRegister(r.clone()))?;
            if !s.contains(&layout.digit(key, pos)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Apply `f` to the allowed values of register `reg`.
    pub fn map_values(&self, reg: &str, f: impl Fn(usize) -> usize) -> Pattern {
        let mut out = self.clone();
        if let Some(s) = out.constraints.get_mut(reg) {
            *s = s.iter().map(|&v| f(v)).collect();
        }
        out
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("P[")?;
        let mut first = true;
        for (r, s) in &self.constraints {
            if !first {
                f.write_str("; ")?;
            }
            first = false;
            let vals: Vec<String> = s.iter().map(|v| v.to_string()).collect();
            write!(f, "({})_{}", vals.join(","), r)?;
        }
        if first {
            f.write_str("I")?;
        }
        f.write_str("]")
    }
}

/// Sum of pairwise disjoint pattern projectors.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagonalProjector {
    patterns: Vec<Pattern>,
}

impl DiagonalProjector {
    pub fn new(patterns: Vec<Pattern>) -> Result<Self> {
        for (i, p) in patterns.iter().enumerate() {
            for q in &patterns[i + 1..] {
                if !p.disjoint(q) {
                    return Err(Error::OverlappingPatterns);
                }
            }
        }
        Ok(DiagonalProjector {
            patterns: patterns.into_iter().filter(|p| !p.is_empty_set()).collect(),
        })
    }

    pub fn identity() -> Self {
        DiagonalProjector {
            patterns: vec![Pattern::any()],
        }
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn registers(&self) -> BTreeSet<String> {
        self.patterns
            .iter()
            .flat_map(|p| p.constraints.keys().cloned())
            .collect()
    }

    pub fn matches(&self, layout: &RegisterLayout, key: u64) -> Result<bool> {
        for p in &self.patterns {
            if p.matches(layout, key)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// `I - sum(others)` restricted to `universe`, as disjoint boxes.
    pub fn complement(
        universe: &[(String, usize)],
        others: &[&DiagonalProjector],
    ) -> DiagonalProjector {
        let full: Vec<BTreeSet<usize>> = universe.iter().map(|(_, d)| (0..*d).collect()).collect();
        let mut boxes = vec![full.clone()];
        for proj in others {
            for p in &proj.patterns {
                let cut: Vec<Option<&BTreeSet<usize>>> = universe
                    .iter()
                    .map(|(r, _)| p.constraints.get(r))
                    .collect();
                let mut next = Vec::new();
                for b in boxes {
                    subtract_box(b, &cut, &mut next);
                }
                boxes = next;
            }
        }
        let patterns = boxes
            .into_iter()
            .map(|b| {
                let mut p = Pattern::any();
                for (i, s) in b.into_iter().enumerate() {
                    if s != full[i] {
                        p.constraints.insert(universe[i].0.clone(), s);
                    }
                }
                p
            })
            .collect();
        DiagonalProjector { patterns }
    }

    /// Apply a value map on one register to every pattern.
    pub fn map_values(&self, reg: &str, f: impl Fn(usize) -> usize + Copy) -> DiagonalProjector {
        DiagonalProjector {
            patterns: self.patterns.iter().map(|p| p.map_values(reg, f)).collect(),
        }
    }
}

fn subtract_box(
    mut b: Vec<BTreeSet<usize>>,
    cut: &[Option<&BTreeSet<usize>>],
    out: &mut Vec<Vec<BTreeSet<usize>>>,
) {
    let overlaps = b
        .iter()
        .zip(cut)
        .all(|(s, c)| c.is_none_or(|c| !s.is_disjoint(c)));
    if !overlaps || cut.iter().any(|c| c.is_some_and(BTreeSet::is_empty)) {
        out.push(b);
        return;
    }
    for i in 0..b.len() {
        if let Some(c) = cut[i] {
            let outside: BTreeSet<usize> = b[i].difference(c).copied().collect();
            if !outside.is_empty() {
                let mut piece = b.clone();
                piece[i] = outside;
                out.push(piece);
            }
            b[i] = b[i].intersection(c).copied().collect();
        }
    }
}

impl fmt::Display for DiagonalProjector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.patterns.is_empty() {
            return f.write_str("0");
        }
        let parts: Vec<String> = self.patterns.iter().map(|p| p.to_string()).collect();
        f.write_str(&parts.join(" + "))
    }
}

/// Per-pattern register positions resolved against one layout.
pub(crate) struct CompiledProjector {
    terms: Vec<Vec<(usize, Vec<bool>)>>,
}

impl CompiledProjector {
    pub(crate) fn new(p: &DiagonalProjector, layout: &RegisterLayout) -> Result<Self> {
        let mut terms = Vec::with_capacity(p.patterns.len());
        for pat in &p.patterns {
            let mut t = Vec::new();
            for (r, s) in &pat.constraints {
                let pos = layout
                    .position(r)
                    .ok_or_else(|| Error::UnknownRegister(r.clone()))?;
                let dim = layout.registers()[pos].dim;
                let mut mask = vec![false; dim];
                for &v in s {
                    if v < dim {
                        mask[v] = true;
                    }
                }
                t.push((pos, mask));
            }
            terms.push(t);
        }
        Ok(CompiledProjector { terms })
    }

    #[inline]
    pub(crate) fn matches(&self, layout: &RegisterLayout, key: u64) -> bool {
        self.terms
            .iter()
            .any(|t| t.iter().all(|(pos, mask)| mask[layout.digit(key, *pos)]))
    }

    pub(crate) fn filter(&self, s: &SparseState) -> SparseState {
        let amps = s
            .amps
            .iter()
            .filter(|(k, _)| self.matches(&s.layout, *k))
            .copied()
            .collect();
        SparseState::from_sorted(s.layout.clone(), amps)
    }
}

/// Filter `s` through `p`; the weight is the retained fraction of the squared norm.
pub fn apply_projector(s: &SparseState, p: &DiagonalProjector) -> Result<(SparseState, f64)> {
    let out = CompiledProjector::new(p, &s.layout)?.filter(s);
    let n = s.norm_sqr();
    let w = if n == 0.0 { 0.0 } else { out.norm_sqr() / n };
    Ok((out, w))
}

/// Dense row-major complex square matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for r in 0..n {
            for col in 0..n {
                data.push(f(r, col));
            }
        }
        DenseMatrix { n, data }
    }

    pub fn identity(n: usize) -> Self {
        DenseMatrix::from_fn(n, |r, col| if r == col { c(1.0, 0.0) } else { c(0.0, 0.0) })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, r: usize, col: usize) -> Complex64 {
        self.data[r * self.n + col]
    }

    pub fn adjoint(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, |r, col| self.get(col, r).conj())
    }

    /// Max entry deviation of `U^dagger U` from the identity.
    pub fn unitarity_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                let mut s = Complex64::default();
                for k in 0..self.n {
                    s += self.get(k, i).conj() * self.get(k, j);
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((s - c(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Embed `block` on the consecutive indices starting at `offset`, identity elsewhere.
    pub fn embed(n: usize, offset: usize, block: &DenseMatrix) -> DenseMatrix {
        DenseMatrix::from_fn(n, |r, col| {
            let inside = |x: usize| x >= offset && x < offset + block.n;
            if inside(r) && inside(col) {
                block.get(r - offset, col - offset)
            } else if r == col {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        })
    }
}

/// Entry `(r, c)` is `omega_n^(rc) / sqrt(n)`.
pub fn dft_matrix(n: usize) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::InvalidParameter("DFT size must be positive".into()));
    }
    let s = 1.0 / (n as f64).sqrt();
    Ok(DenseMatrix::from_fn(n, |r, col| root_of_unity(n, r * col) * s))
}

/// Apply `unitary` to register `reg`: new amplitude at `r'` is `sum_r U[r'][r] a[r]`.
pub fn apply_local_basis(s: &SparseState, reg: &str, unitary: &DenseMatrix) -> Result<SparseState> {
    let pos = s
        .layout
        .position(reg)
        .ok_or_else(|| Error::UnknownRegister(reg.to_string()))?;
    let dim = s.layout.registers()[pos].dim;
    if unitary.dim() != dim {
        return Err(Error::DimensionMismatch {
            register: reg.to_string(),
            expected: dim,
            found: unitary.dim(),
        });
    }
    let err = unitary.unitarity_error();
    if err > TOLERANCE {
        return Err(Error::NotUnitary(err));
    }
    let stride = s.layout.stride(pos);
    let mut out = Vec::with_capacity(s.len() * 2);
    for &(k, a) in &s.amps {
        let v = s.layout.digit(k, pos);
        let base = k - v as u64 * stride;
        for r in 0..dim {
            let u = unitary.get(r, v);
            if u.norm() > 0.0 {
                out.push((base + r as u64 * stride, u * a));
            }
        }
    }
    Ok(SparseState::from_keyed(s.layout.clone(), out))
}
