//! Branching execution of LOCC protocols over lab-owned registers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::finisher::{leaf_finisher, FinisherVerdict};
use crate::linalg::max_normalized_overlap;
use crate::tensor::{
    c, CompiledProjector, DiagonalProjector, Lab, Register, RegisterLayout, SparseState,
    PRUNE_THRESHOLD, TOLERANCE,
};
use crate::upb::{SubsetKey, SubsetLabel, UPBSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ResourceKind {
    Bipartite,
    Tripartite,
}

/// A maximally entangled resource `sum_r |r..r>` on fresh registers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceSpec {
    pub kind: ResourceKind,
    pub dim: usize,
    pub parties: Vec<Lab>,
    pub registers: Vec<String>,
    pub count: f64,
}

impl ResourceSpec {
    pub fn bipartite(dim: usize, first: (Lab, &str), second: (Lab, &str)) -> Self {
        ResourceSpec {
            kind: ResourceKind::Bipartite,
            dim,
            parties: vec![first.0, second.0],
            registers: vec![first.1.to_string(), second.1.to_string()],
            count: 1.0,
        }
    }

    pub fn tripartite(dim: usize, holders: [(Lab, &str); 3]) -> Self {
        ResourceSpec {
            kind: ResourceKind::Tripartite,
            dim,
            parties: holders.iter().map(|h| h.0).collect(),
            registers: holders.iter().map(|h| h.1.to_string()).collect(),
            count: 1.0,
        }
    }

    /// Unnormalized ket on the resource registers; empty layout when `dim == 1`.
    pub fn ket(&self) -> Result<SparseState> {
        if self.dim == 1 {
            let layout = Arc::new(RegisterLayout::new(vec![])?);
            return Ok(SparseState::from_keyed(layout, vec![(0, c(1.0, 0.0))]));
        }
        let regs = self
            .registers
            .iter()
            .zip(&self.parties)
            .map(|(r, &l)| Register::new(r.clone(), self.dim, l))
            .collect();
        let layout = Arc::new(RegisterLayout::new(regs)?);
        let m = self.registers.len();
        SparseState::new(
            layout,
            (0..self.dim).map(|r| (vec![r; m], c(1.0, 0.0))),
        )
    }

    /// `count * log2(dim)` for bipartite resources; tripartite ones carry none.
    pub fn ebits(&self) -> Option<f64> {
        match self.kind {
            ResourceKind::Bipartite => Some(self.count * (self.dim as f64).log2()),
            ResourceKind::Tripartite => None,
        }
    }

    pub fn party_string(&self) -> String {
        party_string(&self.parties)
    }

    pub fn descriptor(&self) -> String {
        match self.kind {
            ResourceKind::Bipartite => format!("|phi+({})>_{}", self.dim, self.party_string()),
            ResourceKind::Tripartite => format!("|GHZ({})>_{}", self.dim, self.party_string()),
        }
    }
}

/// Party initials in lab order, e.g. `BC`.
fn party_string(labs: &[Lab]) -> String {
    let mut v = labs.to_vec();
    v.sort();
    v.iter()
        .map(|l| match l {
            Lab::Alice => 'A',
            Lab::Bob => 'B',
            Lab::Charlie => 'C',
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Outcome {
    pub label: String,
    pub projector: DiagonalProjector,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PovmStage {
    pub lab: Lab,
    pub outcomes: Vec<Outcome>,
}

impl PovmStage {
    pub fn new(lab: Lab, outcomes: Vec<(String, DiagonalProjector)>) -> Self {
        PovmStage {
            lab,
            outcomes: outcomes
                .into_iter()
                .map(|(label, projector)| Outcome { label, projector })
                .collect(),
        }
    }

    /// Registers constrained anywhere in the stage, in layout order when known.
    pub fn registers(&self) -> BTreeSet<String> {
        self.outcomes
            .iter()
            .flat_map(|o| o.projector.registers())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProtocolNode {
    Attach {
        resource: ResourceSpec,
        step: String,
        next: Arc<ProtocolNode>,
    },
    Teleport {
        register: String,
        to: Lab,
        dim: usize,
        next: Arc<ProtocolNode>,
    },
    Measure {
        step: String,
        stage: PovmStage,
        children: Vec<Arc<ProtocolNode>>,
    },
    Leaf {
        expected: BTreeSet<SubsetKey>,
    },
}

/// Value permutations applied per register.
pub type Relabeling = BTreeMap<String, Vec<usize>>;

pub fn cyclic_shift(n: usize, s: usize) -> Vec<usize> {
    (0..n).map(|v| (v + s) % n).collect()
}

impl ProtocolNode {
    pub fn leaf<I: IntoIterator<Item = SubsetKey>>(keys: I) -> Arc<ProtocolNode> {
        Arc::new(ProtocolNode::Leaf {
            expected: keys.into_iter().collect(),
        })
    }

    /// Copy of the tree with register values permuted in every pattern.
    /// Fails if an attached resource would not be invariant under the map.
    pub fn relabel(&self, map: &Relabeling) -> Result<ProtocolNode> {
        Ok(match self {
            ProtocolNode::Attach {
                resource,
                step,
                next,
            } => {
                let perms: Vec<Option<&Vec<usize>>> =
                    resource.registers.iter().map(|r| map.get(r)).collect();
                if perms.iter().any(|p| p != &perms[0]) {
                    return Err(Error::InvalidParameter(format!(
                        "relabeling breaks the symmetry of {}",
                        resource.descriptor()
                    )));
                }
                ProtocolNode::Attach {
                    resource: resource.clone(),
                    step: step.clone(),
                    next: Arc::new(next.relabel(map)?),
                }
            }
            ProtocolNode::Teleport {
                register,
                to,
                dim,
                next,
            } => ProtocolNode::Teleport {
                register: register.clone(),
                to: *to,
                dim: *dim,
                next: Arc::new(next.relabel(map)?),
            },
            ProtocolNode::Measure {
                step,
                stage,
                children,
            } => {
                let outcomes = stage
                    .outcomes
                    .iter()
                    .map(|o| {
                        let mut p = o.projector.clone();
                        for (reg, perm) in map {
                            p = p.map_values(reg, |v| perm.get(v).copied().unwrap_or(v));
                        }
                        Outcome {
                            label: o.label.clone(),
                            projector: p,
                        }
                    })
                    .collect();
                ProtocolNode::Measure {
                    step: step.clone(),
                    stage: PovmStage {
                        lab: stage.lab,
                        outcomes,
                    },
                    children: children
                        .iter()
                        .map(|ch| ch.relabel(map).map(Arc::new))
                        .collect::<Result<_>>()?,
                }
            }
            ProtocolNode::Leaf { expected } => ProtocolNode::Leaf {
                expected: expected.clone(),
            },
        })
    }

    /// Every resource attached anywhere in the tree, keyed by its registers.
    pub fn attached_resources(&self) -> BTreeMap<Vec<String>, ResourceSpec> {
        let mut out = BTreeMap::new();
        self.collect_resources(&mut out);
        out
    }

    fn collect_resources(&self, out: &mut BTreeMap<Vec<String>, ResourceSpec>) {
        match self {
            ProtocolNode::Attach { resource, next, .. } => {
                out.insert(resource.registers.clone(), resource.clone());
                next.collect_resources(out);
            }
            ProtocolNode::Teleport { next, .. } => next.collect_resources(out),
            ProtocolNode::Measure { children, .. } => {
                for ch in children {
                    ch.collect_resources(out);
                }
            }
            ProtocolNode::Leaf { .. } => {}
        }
    }

    /// Visit every measurement stage with its outcome path.
    pub fn for_each_stage(&self, f: &mut impl FnMut(&str, &str, &PovmStage)) {
        self.walk_stages(String::new(), f)
    }

    fn walk_stages(&self, path: String, f: &mut impl FnMut(&str, &str, &PovmStage)) {
        match self {
            ProtocolNode::Attach { next, .. } | ProtocolNode::Teleport { next, .. } => {
                next.walk_stages(path, f)
            }
            ProtocolNode::Measure {
                step,
                stage,
                children,
            } => {
                f(&path, step, stage);
                for (o, ch) in stage.outcomes.iter().zip(children) {
                    ch.walk_stages(join_path(&path, &o.label), f);
                }
            }
            ProtocolNode::Leaf { .. } => {}
        }
    }
}

fn join_path(path: &str, label: &str) -> String {
    if path.is_empty() {
        label.to_string()
    } else {
        format!("{path} > {label}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageCheck {
    pub path: String,
    pub step: String,
    pub lab: Lab,
    pub outcomes: usize,
    pub complete: bool,
    pub local: bool,
    pub message: Option<String>,
}

impl StageCheck {
    pub fn pass(&self) -> bool {
        self.complete && self.local
    }
}

/// Completeness (every local basis index covered exactly once) and locality
/// (only registers owned by the measuring lab are constrained).
pub fn check_stage(stage: &PovmStage, layout: &RegisterLayout) -> StageCheck {
    let mut check = StageCheck {
        path: String::new(),
        step: String::new(),
        lab: stage.lab,
        outcomes: stage.outcomes.len(),
        complete: true,
        local: true,
        message: None,
    };
    let regs = stage.registers();
    for r in &regs {
        match layout.register(r) {
            None => {
                check.local = false;
                check.complete = false;
                check.message = Some(format!("register `{r}` is not in the layout"));
                return check;
            }
            Some(reg) if reg.owner != stage.lab => {
                check.local = false;
                check.message = Some(format!(
                    "register `{r}` is held by {}, not {}",
                    reg.owner, stage.lab
                ));
                break;
            }
            _ => {}
        }
    }
    let mut universe: Vec<&Register> = layout
        .registers()
        .iter()
        .filter(|r| regs.contains(&r.id))
        .collect();
    universe.sort_by_key(|r| layout.position(&r.id));
    let sub = match RegisterLayout::new(universe.iter().map(|&r| r.clone()).collect()) {
        Ok(l) => l,
        Err(e) => {
            check.complete = false;
            check.message = Some(e.to_string());
            return check;
        }
    };
    let compiled: Vec<CompiledProjector> = match stage
        .outcomes
        .iter()
        .map(|o| CompiledProjector::new(&o.projector, &sub))
        .collect::<Result<_>>()
    {
        Ok(c) => c,
        Err(e) => {
            check.complete = false;
            check.message = Some(e.to_string());
            return check;
        }
    };
    for key in 0..sub.size() {
        let hits = compiled.iter().filter(|p| p.matches(&sub, key)).count();
        if hits != 1 {
            check.complete = false;
            let idx = sub.unpack(key);
            let shown: Vec<String> = sub
                .registers()
                .iter()
                .zip(&idx)
                .map(|(r, v)| format!("{}={}", r.id, v))
                .collect();
            let msg = format!(
                "basis index ({}) covered {hits} times",
                shown.join(", ")
            );
            check.message = Some(match check.message.take() {
                Some(m) => format!("{m}; {msg}"),
                None => msg,
            });
            break;
        }
    }
    check
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub input: usize,
    pub label: SubsetLabel,
    pub state: SparseState,
    /// Squared norm of the unfiltered input times the attached resources.
    pub reference: f64,
}

/// Survivors of one outcome with their conditional weights.
#[derive(Clone, Debug)]
pub struct Child {
    pub label: String,
    pub survivors: Vec<Candidate>,
    pub weights: Vec<f64>,
}

pub fn measure(candidates: &[Candidate], stage: &PovmStage) -> Result<Vec<Child>> {
    let Some(first) = candidates.first() else {
        return Ok(stage
            .outcomes
            .iter()
            .map(|o| Child {
                label: o.label.clone(),
                survivors: vec![],
                weights: vec![],
            })
            .collect());
    };
    let layout = first.state.layout();
    let mut out = Vec::with_capacity(stage.outcomes.len());
    for o in &stage.outcomes {
        let cp = CompiledProjector::new(&o.projector, layout)?;
        let mut survivors = Vec::new();
        let mut weights = Vec::new();
        for cand in candidates {
            let filtered = cp.filter(&cand.state);
            let total = cand.state.norm_sqr();
            let w = if total == 0.0 {
                0.0
            } else {
                filtered.norm_sqr() / total
            };
            if w > PRUNE_THRESHOLD {
                survivors.push(Candidate {
                    input: cand.input,
                    label: cand.label.clone(),
                    state: filtered,
                    reference: cand.reference,
                });
                weights.push(w);
            }
        }
        out.push(Child {
            label: o.label.clone(),
            survivors,
            weights,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrthogonalityViolation {
    pub path: String,
    pub first: String,
    pub second: String,
    pub overlap: f64,
}

pub fn check_orthogonality_preserving(
    path: &str,
    children: &[Child],
) -> Vec<OrthogonalityViolation> {
    let mut out = Vec::new();
    for ch in children {
        let amps: Vec<&[(u64, Complex64)]> =
            ch.survivors.iter().map(|s| s.state.keyed()).collect();
        let (worst, pair) = max_normalized_overlap(&amps);
        if worst >= TOLERANCE {
            let (i, j) = pair.expect("pair exists when overlap is positive");
            out.push(OrthogonalityViolation {
                path: join_path(path, &ch.label),
                first: ch.survivors[i].label.to_string(),
                second: ch.survivors[j].label.to_string(),
                overlap: worst,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchRecord {
    pub path: String,
    pub probability: f64,
    pub leaf: String,
    pub resources: Vec<String>,
    pub ebits: f64,
    pub epr_pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputRecord {
    pub label: String,
    pub total_probability: f64,
    pub expected_ebits: f64,
    pub max_ebits: f64,
    pub expected_epr_pairs: f64,
    pub max_epr_pairs: usize,
    pub branches: Vec<BranchRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LabelViolation {
    pub input: String,
    pub path: String,
    pub expected: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafRecord {
    pub path: String,
    pub expected: String,
    pub survivors: Vec<String>,
    pub pure: bool,
    pub finisher: Option<FinisherVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub descriptor: String,
    pub purpose: String,
    pub ebits_per_use: Option<f64>,
    /// Average number of uses over the uniform prior on inputs.
    pub average_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Ledger {
    pub entries: Vec<LedgerEntry>,
    pub expected_ebits: f64,
    pub max_ebits: f64,
    pub configuration: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub inputs: Vec<InputRecord>,
    pub stage_checks: Vec<StageCheck>,
    pub orthogonality_violations: Vec<OrthogonalityViolation>,
    pub label_violations: Vec<LabelViolation>,
    pub probability_violations: Vec<String>,
    pub leaves: Vec<LeafRecord>,
    pub leaves_without_stopper: usize,
    pub wasteful_teleports: Vec<String>,
    pub ledger: Ledger,
    pub trace: Vec<String>,
}

impl ProtocolReport {
    pub fn stages_pass(&self) -> bool {
        self.stage_checks.iter().all(StageCheck::pass)
    }

    pub fn orthogonality_pass(&self) -> bool {
        self.orthogonality_violations.is_empty()
    }

    pub fn labels_pass(&self) -> bool {
        self.label_violations.is_empty() && self.leaves.iter().all(|l| l.pure)
    }

    pub fn probabilities_pass(&self) -> bool {
        self.probability_violations.is_empty()
    }

    pub fn passed(&self) -> bool {
        self.stages_pass()
            && self.orthogonality_pass()
            && self.labels_pass()
            && self.probabilities_pass()
    }

    pub fn unresolved_leaves(&self) -> Vec<&LeafRecord> {
        self.leaves
            .iter()
            .filter(|l| matches!(l.finisher, Some(FinisherVerdict::Unresolved { .. })))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub finisher: bool,
    pub trace: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum EprAccounting {
    /// Branch-probability weighted average for every input.
    BranchWeighted,
    /// As above, except the stopper is charged its most expensive branch.
    StopperWorstCase,
}

#[derive(Clone, Debug)]
struct Spend {
    descriptor: String,
    purpose: String,
    ebits: Option<f64>,
    epr: bool,
}

struct Walker<'a> {
    opts: RunOptions,
    upb: &'a UPBSet,
    branches: Vec<Vec<(BranchRecord, Vec<Spend>)>>,
    report: ProtocolReport,
}

pub fn run_protocol(protocol: &ProtocolNode, upb: &UPBSet, opts: RunOptions) -> Result<ProtocolReport> {
    let layout = upb
        .states
        .first()
        .map(|s| s.state.layout_arc().clone())
        .ok_or_else(|| Error::InvalidParameter("empty input set".into()))?;
    let candidates: Vec<Candidate> = upb
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| Candidate {
            input: i,
            label: s.label.clone(),
            state: s.state.clone(),
            reference: s.state.norm_sqr(),
        })
        .collect();
    let mut w = Walker {
        opts,
        upb,
        branches: vec![Vec::new(); upb.len()],
        report: ProtocolReport {
            inputs: vec![],
            stage_checks: vec![],
            orthogonality_violations: vec![],
            label_violations: vec![],
            probability_violations: vec![],
            leaves: vec![],
            leaves_without_stopper: 0,
            wasteful_teleports: vec![],
            ledger: Ledger {
                entries: vec![],
                expected_ebits: 0.0,
                max_ebits: 0.0,
                configuration: String::new(),
            },
            trace: vec![],
        },
    };
    w.walk(protocol, layout, candidates, String::new(), Vec::new())?;
    Ok(w.finish())
}

impl Walker<'_> {
    fn walk(
        &mut self,
        node: &ProtocolNode,
        layout: Arc<RegisterLayout>,
        cands: Vec<Candidate>,
        path: String,
        spent: Vec<Spend>,
    ) -> Result<()> {
        match node {
            ProtocolNode::Teleport {
                register,
                to,
                dim,
                next,
            } => {
                let reg = layout
                    .register(register)
                    .ok_or_else(|| Error::UnknownRegister(register.clone()))?;
                if *dim < reg.dim {
                    return Err(Error::InvalidParameter(format!(
                        "resource of dimension {dim} cannot carry register `{register}` of dimension {}",
                        reg.dim
                    )));
                }
                let from = reg.owner;
                if from == *to {
                    self.report
                        .wasteful_teleports
                        .push(format!("{register} already held by {to} at `{path}`"));
                }
                let new_layout = Arc::new(layout.with_owner(register, *to)?);
                let moved = cands
                    .into_iter()
                    .map(|cd| {
                        Ok(Candidate {
                            state: cd.state.relocated(new_layout.clone())?,
                            ..cd
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let parties = party_string(&[from, *to]);
                let mut spent = spent;
                spent.push(Spend {
                    descriptor: format!("|phi+({dim})>_{parties}"),
                    purpose: format!("teleport {register} to {to}"),
                    ebits: Some((*dim as f64).log2()),
                    epr: false,
                });
                if self.opts.trace {
                    self.report.trace.push(format!(
                        "[{}] teleport {register}: {from} -> {to} using |phi+({dim})>",
                        display_path(&path)
                    ));
                }
                self.walk(next, new_layout, moved, path, spent)
            }
            ProtocolNode::Attach {
                resource,
                step,
                next,
            } => {
                let ket = resource.ket()?;
                let new_layout = Arc::new(layout.concat(ket.layout())?);
                let size = ket.layout().size();
                let rnorm = ket.norm_sqr();
                let attached = cands
                    .into_iter()
                    .map(|cd| {
                        let mut amps = Vec::with_capacity(cd.state.len() * ket.len());
                        for &(k, a) in cd.state.keyed() {
                            for &(kr, ar) in ket.keyed() {
                                amps.push((k * size + kr, a * ar));
                            }
                        }
                        Candidate {
                            state: SparseState::from_keyed(new_layout.clone(), amps),
                            reference: cd.reference * rnorm,
                            ..cd
                        }
                    })
                    .collect();
                let mut spent = spent;
                spent.push(Spend {
                    descriptor: resource.descriptor(),
                    purpose: format!("shared on ({})", resource.registers.join(",")),
                    ebits: resource.ebits(),
                    epr: resource.kind == ResourceKind::Bipartite && resource.dim == 2,
                });
                if self.opts.trace {
                    self.report.trace.push(format!(
                        "[{}] {step}: attach {} on ({})",
                        display_path(&path),
                        resource.descriptor(),
                        resource.registers.join(",")
                    ));
                }
                self.walk(next, new_layout, attached, path, spent)
            }
            ProtocolNode::Measure {
                step,
                stage,
                children,
            } => {
                if stage.outcomes.len() != children.len() {
                    return Err(Error::InvalidParameter(format!(
                        "stage at `{path}` has {} outcomes but {} children",
                        stage.outcomes.len(),
                        children.len()
                    )));
                }
                let mut check = check_stage(stage, &layout);
                check.path = path.clone();
                check.step = step.clone();
                self.report.stage_checks.push(check);
                let results = measure(&cands, stage)?;
                self.report
                    .orthogonality_violations
                    .extend(check_orthogonality_preserving(&path, &results));
                for (child, node) in results.into_iter().zip(children) {
                    if child.survivors.is_empty() {
                        continue;
                    }
                    let p = join_path(&path, &child.label);
                    if self.opts.trace {
                        let names: BTreeSet<String> = child
                            .survivors
                            .iter()
                            .map(|s| s.label.subset.to_string())
                            .collect();
                        self.report.trace.push(format!(
                            "[{}] {step} ({}): outcome {} keeps {} states in {}",
                            display_path(&path),
                            stage.lab,
                            child.label,
                            child.survivors.len(),
                            names.into_iter().collect::<Vec<_>>().join(" ")
                        ));
                    }
                    self.walk(node, layout.clone(), child.survivors, p, spent.clone())?;
                }
                Ok(())
            }
            ProtocolNode::Leaf { expected } => {
                self.leaf(expected, cands, path, spent);
                Ok(())
            }
        }
    }

    fn leaf(
        &mut self,
        expected: &BTreeSet<SubsetKey>,
        cands: Vec<Candidate>,
        path: String,
        spent: Vec<Spend>,
    ) {
        let shown = if expected.is_empty() {
            "{}".to_string()
        } else {
            let v: Vec<String> = expected.iter().map(|k| k.to_string()).collect();
            format!("{{{}}}", v.join(","))
        };
        let subsets: BTreeSet<SubsetKey> = cands
            .iter()
            .map(|c| c.label.subset)
            .filter(|k| !k.is_stopper())
            .collect();
        let pure = subsets.len() <= 1;
        let has_stopper = cands.iter().any(|c| c.label.subset.is_stopper());
        if !has_stopper {
            self.report.leaves_without_stopper += 1;
        }
        let ebits: f64 = spent.iter().filter_map(|s| s.ebits).sum();
        let epr = spent.iter().filter(|s| s.epr).count();
        let descriptors: Vec<String> = spent
            .iter()
            .map(|s| format!("{} ({})", s.descriptor, s.purpose))
            .collect();
        for cd in &cands {
            if !cd.label.subset.is_stopper() && !expected.contains(&cd.label.subset) {
                self.report.label_violations.push(LabelViolation {
                    input: cd.label.to_string(),
                    path: path.clone(),
                    expected: shown.clone(),
                });
            }
            let probability = cd.state.norm_sqr() / cd.reference;
            self.branches[cd.input].push((
                BranchRecord {
                    path: path.clone(),
                    probability,
                    leaf: shown.clone(),
                    resources: descriptors.clone(),
                    ebits,
                    epr_pairs: epr,
                },
                spent.clone(),
            ));
        }
        let finisher = if self.opts.finisher {
            let surv: Vec<(SubsetLabel, SparseState)> = cands
                .iter()
                .map(|c| (c.label.clone(), c.state.clone()))
                .collect();
            Some(leaf_finisher(&surv))
        } else {
            None
        };
        if self.opts.trace {
            self.report.trace.push(format!(
                "[{}] leaf {shown}: {} survivors{}",
                display_path(&path),
                cands.len(),
                if has_stopper { " (with stopper)" } else { "" }
            ));
        }
        self.report.leaves.push(LeafRecord {
            path,
            expected: shown,
            survivors: cands.iter().map(|c| c.label.to_string()).collect(),
            pure,
            finisher,
        });
    }

    fn finish(mut self) -> ProtocolReport {
        let n = self.upb.len() as f64;
        let mut usage: BTreeMap<(String, String), (Option<f64>, f64)> = BTreeMap::new();
        let mut expected_ebits = 0.0;
        let mut max_ebits: f64 = 0.0;
        for (i, list) in self.branches.iter().enumerate() {
            let label = self.upb.states[i].label.to_string();
            let total: f64 = list.iter().map(|(b, _)| b.probability).sum();
            if (total - 1.0).abs() > TOLERANCE {
                self.report
                    .probability_violations
                    .push(format!("{label}: branch probabilities sum to {total:.12}"));
            }
            let e: f64 = list.iter().map(|(b, _)| b.probability * b.ebits).sum();
            let m = list.iter().map(|(b, _)| b.ebits).fold(0.0, f64::max);
            let epr: f64 = list
                .iter()
                .map(|(b, _)| b.probability * b.epr_pairs as f64)
                .sum();
            let max_epr = list.iter().map(|(b, _)| b.epr_pairs).max().unwrap_or(0);
            for (b, spends) in list {
                for s in spends {
                    let entry = usage
                        .entry((s.descriptor.clone(), s.purpose.clone()))
                        .or_insert((s.ebits, 0.0));
                    entry.1 += b.probability / n;
                }
            }
            expected_ebits += e / n;
            max_ebits = max_ebits.max(m);
            self.report.inputs.push(InputRecord {
                label,
                total_probability: total,
                expected_ebits: e,
                max_ebits: m,
                expected_epr_pairs: epr,
                max_epr_pairs: max_epr,
                branches: list.iter().map(|(b, _)| b.clone()).collect(),
            });
        }
        let entries: Vec<LedgerEntry> = usage
            .into_iter()
            .map(|((descriptor, purpose), (ebits, count))| LedgerEntry {
                descriptor,
                purpose,
                ebits_per_use: ebits,
                average_count: count,
            })
            .collect();
        self.report.ledger = Ledger {
            configuration: configuration(&entries),
            entries,
            expected_ebits,
            max_ebits,
        };
        self.report
    }
}

fn display_path(path: &str) -> &str {
    if path.is_empty() {
        "root"
    } else {
        path
    }
}

/// `{(N, |phi+(n)>_XY); ...}` with average counts, resources merged by type.
fn configuration(entries: &[LedgerEntry]) -> String {
    let mut merged: BTreeMap<&str, f64> = BTreeMap::new();
    for e in entries {
        *merged.entry(e.descriptor.as_str()).or_default() += e.average_count;
    }
    let parts: Vec<String> = merged
        .iter()
        .map(|(d, n)| format!("({}, {d})", trim_float(*n)))
        .collect();
    format!("{{{}}}", parts.join("; "))
}

fn trim_float(x: f64) -> String {
    if (x - x.round()).abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.6}")
    }
}

/// Average EPR pairs consumed over the uniform prior on inputs.
pub fn expected_epr_consumption(report: &ProtocolReport, policy: EprAccounting) -> f64 {
    if report.inputs.is_empty() {
        return 0.0;
    }
    let total: f64 = report
        .inputs
        .iter()
        .map(|i| match policy {
            EprAccounting::StopperWorstCase if i.label == "S" => i.max_epr_pairs as f64,
            _ => i.expected_epr_pairs,
        })
        .sum();
    total / report.inputs.len() as f64
}

impl fmt::Display for StageCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: complete={} local={}",
            display_path(&self.path),
            self.step,
            self.lab,
            self.complete,
            self.local
        )?;
        if let Some(m) = &self.message {
            write!(f, " ({m})")?;
        }
        Ok(())
    }
}
