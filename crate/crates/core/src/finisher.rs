//! Leaf finisher: identify the exact state inside an isolated subset with
//! local measurements drawn from a small basis catalog.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::Serialize;

use crate::linalg::max_normalized_overlap;
use crate::tensor::{
    apply_local_basis, dft_matrix, DenseMatrix, Lab, RegisterLayout, SparseState, TOLERANCE,
};
use crate::upb::{layers, SubsetLabel};

const DATA: [&str; 3] = ["A", "B", "C"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BasisChoice {
    Computational,
    /// DFT on the window `[k, d-2-k]`.
    EtaWindow { k: usize },
    /// DFT on the window `[k+1, d-1-k]`.
    XiWindow { k: usize },
    /// Two-point DFT on `{d/2-1, d/2}` for even `d`.
    MiddleWindow,
    /// Full DFT on an ancilla of dimension `n`.
    Fourier { n: usize },
}

impl BasisChoice {
    /// Unitary whose columns are the basis vectors.
    pub fn basis_matrix(&self, dim: usize) -> DenseMatrix {
        let window = |offset: usize, len: usize| {
            DenseMatrix::embed(dim, offset, &dft_matrix(len).expect("positive window"))
        };
        match *self {
            BasisChoice::Computational => DenseMatrix::identity(dim),
            BasisChoice::EtaWindow { k } => window(k, dim - 1 - 2 * k),
            BasisChoice::XiWindow { k } => window(k + 1, dim - 1 - 2 * k),
            BasisChoice::MiddleWindow => window(dim / 2 - 1, 2),
            BasisChoice::Fourier { n } => dft_matrix(n).expect("positive size"),
        }
    }

    /// Catalog for a data register of dimension `d`.
    pub fn catalog(d: usize) -> Vec<BasisChoice> {
        let mut out = vec![BasisChoice::Computational];
        for k in 0..layers(d) {
            out.push(BasisChoice::EtaWindow { k });
            out.push(BasisChoice::XiWindow { k });
        }
        if d.is_multiple_of(2) && d >= 2 {
            out.push(BasisChoice::MiddleWindow);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LocalMeasurement {
    pub lab: Lab,
    pub register: String,
    pub basis: BasisChoice,
    /// Ancilla outcomes that fix the phase correction applied before this step.
    pub corrections_from: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Strategy {
    pub ancilla_round: Vec<LocalMeasurement>,
    pub data_round: Vec<LocalMeasurement>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum FinisherVerdict {
    Resolved {
        strategy: Strategy,
        stopper_collision: bool,
    },
    Unresolved {
        reason: String,
    },
}

impl FinisherVerdict {
    pub fn is_resolved(&self) -> bool {
        matches!(self, FinisherVerdict::Resolved { .. })
    }
}

struct AncillaMap {
    pos: usize,
    source: usize,
    map: BTreeMap<usize, usize>,
}

pub fn leaf_finisher(survivors: &[(SubsetLabel, SparseState)]) -> FinisherVerdict {
    let unresolved = |reason: String| FinisherVerdict::Unresolved { reason };
    let Some((_, first)) = survivors.first() else {
        return FinisherVerdict::Resolved {
            strategy: Strategy::default(),
            stopper_collision: false,
        };
    };
    let layout = first.layout();
    let (data, stopper): (Vec<_>, Vec<_>) =
        survivors.iter().partition(|(l, _)| !l.subset.is_stopper());
    if data.len() <= 1 {
        return FinisherVerdict::Resolved {
            strategy: Strategy::default(),
            stopper_collision: data.len() == 1 && !stopper.is_empty(),
        };
    }
    let amps: Vec<&[(u64, Complex64)]> = survivors.iter().map(|(_, s)| s.keyed()).collect();
    let (worst, pair) = max_normalized_overlap(&amps);
    if worst >= TOLERANCE {
        let (i, j) = pair.expect("overlapping pair");
        return unresolved(format!(
            "survivors {} and {} overlap ({worst:.3e})",
            survivors[i].0, survivors[j].0
        ));
    }
    let mut data_pos = Vec::with_capacity(3);
    for id in DATA {
        match layout.position(id) {
            Some(p) => data_pos.push(p),
            None => return unresolved(format!("data register `{id}` missing")),
        }
    }

    let mut constants = BTreeMap::new();
    let mut ancillas = Vec::new();
    for (pos, reg) in layout.registers().iter().enumerate() {
        if data_pos.contains(&pos) {
            continue;
        }
        let values: BTreeSet<usize> = data
            .iter()
            .flat_map(|(_, s)| s.keyed().iter().map(move |&(k, _)| layout.digit(k, pos)))
            .collect();
        if values.len() == 1 {
            constants.insert(pos, *values.first().expect("one value"));
            continue;
        }
        let found = data_pos.iter().find_map(|&src| {
            let mut map = BTreeMap::new();
            for (_, s) in &data {
                for &(k, _) in s.keyed() {
                    let x = layout.digit(k, src);
                    let v = layout.digit(k, pos);
                    if *map.entry(x).or_insert(v) != v {
                        return None;
                    }
                }
            }
            Some(AncillaMap {
                pos,
                source: src,
                map,
            })
        });
        match found {
            Some(m) => ancillas.push(m),
            None => {
                return unresolved(format!(
                    "ancilla `{}` is not a function of a single data register",
                    reg.id
                ))
            }
        }
    }

    let data_layout = match RegisterLayout::new(
        data_pos
            .iter()
            .map(|&p| layout.registers()[p].clone())
            .collect(),
    ) {
        Ok(l) => std::sync::Arc::new(l),
        Err(e) => return unresolved(e.to_string()),
    };
    let strip = |s: &SparseState| -> Option<SparseState> {
        let mut out = Vec::with_capacity(s.len());
        for &(k, a) in s.keyed() {
            for (&pos, &v) in &constants {
                if layout.digit(k, pos) != v {
                    return None;
                }
            }
            for m in &ancillas {
                let x = layout.digit(k, m.source);
                if m.map.get(&x) != Some(&layout.digit(k, m.pos)) {
                    return None;
                }
            }
            let idx: Vec<usize> = data_pos.iter().map(|&p| layout.digit(k, p)).collect();
            out.push((data_layout.pack(&idx).ok()?, a));
        }
        Some(SparseState::from_keyed(data_layout.clone(), out))
    };
    let stripped: Vec<SparseState> = data
        .iter()
        .map(|(_, s)| strip(s).expect("data survivors conform by construction"))
        .collect();
    let stopper_stripped: Vec<Option<SparseState>> =
        stopper.iter().map(|(_, s)| strip(s)).collect();

    let d = layout.registers()[data_pos[0]].dim;
    let catalog = BasisChoice::catalog(d);
    let measurements: Vec<DenseMatrix> = catalog
        .iter()
        .map(|b| b.basis_matrix(d).adjoint())
        .collect();

    let greedy: Vec<usize> = (0..3)
        .map(|r| {
            let sharp = |m: &DenseMatrix| {
                stripped
                    .iter()
                    .filter(|s| {
                        let t = apply_local_basis(s, DATA[r], m).expect("catalog fits");
                        let vals: BTreeSet<usize> =
                            support(&t).iter().map(|&k| data_layout.digit(k, r)).collect();
                        vals.len() == 1
                    })
                    .count()
            };
            let mut best = (0, sharp(&measurements[0]));
            for (ci, m) in measurements.iter().enumerate().skip(1) {
                let score = sharp(m);
                if score > best.1 {
                    best = (ci, score);
                }
            }
            best.0
        })
        .collect();

    let evaluate = |choice: &[usize], states: &[SparseState]| -> Vec<BTreeSet<u64>> {
        states
            .iter()
            .map(|s| {
                let mut t = s.clone();
                for r in 0..3 {
                    t = apply_local_basis(&t, DATA[r], &measurements[choice[r]])
                        .expect("catalog unitaries fit the data registers");
                }
                support(&t)
            })
            .collect()
    };
    let separated = |sets: &[BTreeSet<u64>]| -> Option<(usize, usize)> {
        for i in 0..sets.len() {
            for j in i + 1..sets.len() {
                if !sets[i].is_disjoint(&sets[j]) {
                    return Some((i, j));
                }
            }
        }
        None
    };

    let mut chosen = None;
    let greedy_sets = evaluate(&greedy, &stripped);
    let greedy_clash = separated(&greedy_sets);
    if greedy_clash.is_none() {
        chosen = Some((greedy.clone(), greedy_sets));
    } else {
        'search: for a in 0..catalog.len() {
            for b in 0..catalog.len() {
                for cc in 0..catalog.len() {
                    let choice = [a, b, cc];
                    let sets = evaluate(&choice, &stripped);
                    if separated(&sets).is_none() {
                        chosen = Some((choice.to_vec(), sets));
                        break 'search;
                    }
                }
            }
        }
    }
    let Some((choice, sets)) = chosen else {
        let (i, j) = greedy_clash.expect("greedy failed");
        return unresolved(format!(
            "no catalog basis separates {} and {}",
            data[i].0, data[j].0
        ));
    };

    let union: BTreeSet<u64> = sets.iter().flatten().copied().collect();
    let stopper_collision = stopper_stripped.iter().any(|s| match s {
        None => true,
        Some(s) => evaluate(&choice, std::slice::from_ref(s))[0]
            .iter()
            .any(|k| union.contains(k)),
    });

    let ancilla_round = ancillas
        .iter()
        .map(|m| {
            let reg = &layout.registers()[m.pos];
            LocalMeasurement {
                lab: reg.owner,
                register: reg.id.clone(),
                basis: BasisChoice::Fourier { n: reg.dim },
                corrections_from: vec![],
            }
        })
        .collect();
    let data_round = (0..3)
        .map(|r| {
            let reg = &layout.registers()[data_pos[r]];
            LocalMeasurement {
                lab: reg.owner,
                register: reg.id.clone(),
                basis: catalog[choice[r]],
                corrections_from: ancillas
                    .iter()
                    .filter(|m| m.source == data_pos[r])
                    .map(|m| layout.registers()[m.pos].id.clone())
                    .collect(),
            }
        })
        .collect();
    FinisherVerdict::Resolved {
        strategy: Strategy {
            ancilla_round,
            data_round,
        },
        stopper_collision,
    }
}

fn support(s: &SparseState) -> BTreeSet<u64> {
    let cut = s.norm_sqr() * 1e-12;
    s.keyed()
        .iter()
        .filter(|(_, a)| a.norm_sqr() > cut)
        .map(|&(k, _)| k)
        .collect()
}
