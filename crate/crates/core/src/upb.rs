//! The layered product bases `U_d` and their structural checks.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::{c, root_of_unity, Lab, Register, RegisterLayout, SparseState, TOLERANCE};

/// `ceil(d/2)`.
pub fn half_up(d: usize) -> usize {
    d.div_ceil(2)
}

/// Number of layers `ceil(d/2) - 1`; layer indices run over `0..layers(d)`.
pub fn layers(d: usize) -> usize {
    half_up(d).saturating_sub(1)
}

/// `d^3 - 8 ceil(d/2 - 1)`.
pub fn cardinality(d: usize) -> usize {
    d * d * d - 8 * layers(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    Amiddle,
    Stopper,
}

/// Identity of a subset, without the state parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsetKey {
    pub family: Family,
    pub position: Option<u8>,
    pub layer: Option<usize>,
}

impl SubsetKey {
    pub const MIDDLE: SubsetKey = SubsetKey {
        family: Family::Amiddle,
        position: None,
        layer: None,
    };
    pub const STOPPER: SubsetKey = SubsetKey {
        family: Family::Stopper,
        position: None,
        layer: None,
    };

    pub fn a(position: u8, layer: usize) -> Self {
        SubsetKey {
            family: Family::A,
            position: Some(position),
            layer: Some(layer),
        }
    }

    pub fn b(position: u8, layer: usize) -> Self {
        SubsetKey {
            family: Family::B,
            position: Some(position),
            layer: Some(layer),
        }
    }

    pub fn is_stopper(&self) -> bool {
        self.family == Family::Stopper
    }
}

impl fmt::Display for SubsetKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.family, self.position, self.layer) {
            (Family::A, Some(p), Some(k)) => write!(f, "A{p}[k={k}]"),
            (Family::B, Some(p), Some(k)) => write!(f, "B{p}[k={k}]"),
            (Family::Amiddle, _, _) => f.write_str("A0"),
            _ => f.write_str("S"),
        }
    }
}

impl FromStr for SubsetKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("bad subset name `{s}`"));
        match s {
            "A0" => return Ok(SubsetKey::MIDDLE),
            "S" => return Ok(SubsetKey::STOPPER),
            _ => {}
        }
        let (head, rest) = s.split_once("[k=").ok_or_else(bad)?;
        let layer: usize = rest.strip_suffix(']').ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let mut chars = head.chars();
        let fam = chars.next().ok_or_else(bad)?;
        let pos: u8 = chars.as_str().parse().map_err(|_| bad())?;
        if !(1..=3).contains(&pos) {
            return Err(bad());
        }
        match fam {
            'A' => Ok(SubsetKey::a(pos, layer)),
            'B' => Ok(SubsetKey::b(pos, layer)),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubsetLabel {
    pub subset: SubsetKey,
    /// `(i, j)` for the A/B families, `(r, s, t)` for the middle block.
    pub params: Vec<usize>,
}

impl fmt::Display for SubsetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.subset)?;
        if !self.params.is_empty() {
            let p: Vec<String> = self.params.iter().map(|v| v.to_string()).collect();
            write!(f, "({})", p.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for SubsetLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (head, params) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::InvalidParameter(format!("bad label `{s}`")))?;
                let params = inner
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|_| Error::InvalidParameter(format!("bad label `{s}`")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
                (&s[..i], params)
            }
            None => (s, vec![]),
        };
        Ok(SubsetLabel {
            subset: head.parse()?,
            params,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledState {
    pub label: SubsetLabel,
    pub state: SparseState,
}

#[derive(Clone, Debug)]
pub struct UPBSet {
    pub d: usize,
    pub states: Vec<LabeledState>,
}

fn check_layer(d: usize, k: usize) -> Result<usize> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("d must be >= 3, got {d}")));
    }
    if k >= layers(d) {
        return Err(Error::InvalidParameter(format!(
            "layer {k} out of range for d = {d}"
        )));
    }
    Ok(d - 1 - 2 * k)
}

/// Dense amplitudes of `eta_i` on the window `[k, d-2-k]`.
pub fn eta_amplitudes(d: usize, k: usize, i: usize) -> Result<Vec<Complex64>> {
    let n = check_layer(d, k)?;
    if i >= n {
        return Err(Error::InvalidParameter(format!("i = {i} not in Z_{n}")));
    }
    let mut v = vec![c(0.0, 0.0); d];
    for (off, slot) in v[k..=d - 2 - k].iter_mut().enumerate() {
        *slot = root_of_unity(n, i * off);
    }
    Ok(v)
}

/// Dense amplitudes of `xi_j`: the `eta_j` coefficients shifted up by one.
pub fn xi_amplitudes(d: usize, k: usize, j: usize) -> Result<Vec<Complex64>> {
    let e = eta_amplitudes(d, k, j)?;
    let mut v = vec![c(0.0, 0.0); d];
    v[1..].copy_from_slice(&e[..d - 1]);
    Ok(v)
}

pub fn eta(d: usize, k: usize, i: usize) -> Result<SparseState> {
    SparseState::single("q", Lab::Alice, &eta_amplitudes(d, k, i)?)
}

pub fn xi(d: usize, k: usize, j: usize) -> Result<SparseState> {
    SparseState::single("q", Lab::Alice, &xi_amplitudes(d, k, j)?)
}

fn ket(d: usize, v: usize) -> Vec<Complex64> {
    let mut out = vec![c(0.0, 0.0); d];
    out[v] = c(1.0, 0.0);
    out
}

/// Layout of the data registers `A`, `B`, `C` held by Alice, Bob and Charlie.
pub fn data_layout(d: usize) -> Result<Arc<RegisterLayout>> {
    Ok(Arc::new(RegisterLayout::new(vec![
        Register::new("A", d, Lab::Alice),
        Register::new("B", d, Lab::Bob),
        Register::new("C", d, Lab::Charlie),
    ])?))
}

/// `|a>_A |b>_B |c>_C` from dense factors.
pub fn product_state(
    layout: &Arc<RegisterLayout>,
    a: &[Complex64],
    b: &[Complex64],
    cc: &[Complex64],
) -> Result<SparseState> {
    let mut entries = Vec::new();
    for (x, &ax) in a.iter().enumerate() {
        if ax.norm() == 0.0 {
            continue;
        }
        for (y, &by) in b.iter().enumerate() {
            if by.norm() == 0.0 {
                continue;
            }
            for (z, &cz) in cc.iter().enumerate() {
                if cz.norm() == 0.0 {
                    continue;
                }
                entries.push((vec![x, y, z], ax * by * cz));
            }
        }
    }
    SparseState::new(layout.clone(), entries)
}

pub fn build_upb(d: usize) -> Result<UPBSet> {
    if d < 3 {
        return Err(Error::InvalidParameter(format!("d must be >= 3, got {d}")));
    }
    let layout = data_layout(d)?;
    let mut states = Vec::with_capacity(cardinality(d));
    for k in 0..layers(d) {
        let n = d - 1 - 2 * k;
        let lo = ket(d, k);
        let hi = ket(d, d - 1 - k);
        for (family, pos) in [
            (Family::A, 1u8),
            (Family::A, 2),
            (Family::A, 3),
            (Family::B, 1),
            (Family::B, 2),
            (Family::B, 3),
        ] {
            for i in 0..n {
                for j in 0..n {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let e = eta_amplitudes(d, k, i)?;
                    let x = xi_amplitudes(d, k, j)?;
                    let (fa, fb, fc) = match (family, pos) {
                        (Family::A, 1) => (&x, &lo, &e),
                        (Family::A, 2) => (&x, &e, &hi),
                        (Family::A, 3) => (&hi, &x, &e),
                        (Family::B, 1) => (&e, &hi, &x),
                        (Family::B, 2) => (&e, &x, &lo),
                        _ => (&lo, &e, &x),
                    };
                    states.push(LabeledState {
                        label: SubsetLabel {
                            subset: SubsetKey {
                                family,
                                position: Some(pos),
                                layer: Some(k),
                            },
                            params: vec![i, j],
                        },
                        state: product_state(&layout, fa, fb, fc)?,
                    });
                }
            }
        }
    }
    if d.is_multiple_of(2) {
        let phi = |r: usize| {
            let mut v = vec![c(0.0, 0.0); d];
            v[d / 2 - 1] = c(1.0, 0.0);
            v[d / 2] = c(if r == 0 { 1.0 } else { -1.0 }, 0.0);
            v
        };
        for r in 0..2 {
            for s in 0..2 {
                for t in 0..2 {
                    if r + s + t == 0 {
                        continue;
                    }
                    states.push(LabeledState {
                        label: SubsetLabel {
                            subset: SubsetKey::MIDDLE,
                            params: vec![r, s, t],
                        },
                        state: product_state(&layout, &phi(r), &phi(s), &phi(t))?,
                    });
                }
            }
        }
    }
    let ones = vec![c(1.0, 0.0); d];
    states.push(LabeledState {
        label: SubsetLabel {
            subset: SubsetKey::STOPPER,
            params: vec![],
        },
        state: product_state(&layout, &ones, &ones, &ones)?,
    });
    Ok(UPBSet { d, states })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub max_overlap: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub pass: bool,
}

impl UPBSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn stopper_index(&self) -> Option<usize> {
        self.states
            .iter()
            .position(|s| s.label.subset.is_stopper())
    }

    pub fn verify_orthogonality(&self) -> OrthogonalityReport {
        let amps: Vec<&[(u64, Complex64)]> = self.states.iter().map(|s| s.state.keyed()).collect();
        let (max_overlap, worst_pair) = linalg::max_normalized_overlap(&amps);
        OrthogonalityReport {
            max_overlap,
            worst_pair,
            pass: max_overlap < TOLERANCE,
        }
    }

    pub fn span_rank(&self) -> usize {
        let states: Vec<&SparseState> = self.states.iter().map(|s| &s.state).collect();
        linalg::span_rank(&states, TOLERANCE)
    }

    /// `d^3` minus the rank of the span.
    pub fn complement_dimension(&self) -> usize {
        self.d.pow(3) - self.span_rank()
    }

    /// Best squared overlap between a product state and the complement.
    /// Values near 1 falsify unextendibility; smaller values prove nothing.
    pub fn seesaw_unextendibility_probe(&self, restarts: usize, iters: usize, seed: u64) -> f64 {
        let states: Vec<&SparseState> = self.states.iter().map(|s| &s.state).collect();
        let comp = linalg::complement_basis(&states);
        linalg::seesaw_probe([self.d; 3], &comp, restarts, iters, seed)
    }
}
