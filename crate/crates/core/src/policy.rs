//! Policy reasoner: a small decision tree over the argmax class, the
//! fixed-point confidence and boolean context flags, mapped to a closed
//! action schema.
//!
//! Trees compile to per-leaf conjunctions of linear comparisons over
//! committed quantities; [`crate::zkp::circuit`] embeds those comparisons in
//! the decision-correctness family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::zkp::sponge::hash_bytes;
use crate::zkp::Felt;

/// Confidence quantum: `u_q` counts steps of `1 / CONF_SCALE`.
pub const CONF_SCALE: u32 = 128;

pub const DEFAULT_MAX_DEPTH: usize = 8;

/// Smallest `u_q` with `u_q / CONF_SCALE >= u`, so that `u_q >= to_fixed(t)`
/// holds exactly when the dequantized confidence reaches `t`.
pub fn to_fixed(u: f64) -> Result<u32> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Compile(format!("confidence {u} outside [0, 1]")));
    }
    Ok((u * CONF_SCALE as f64 - 1e-9).ceil().max(0.0) as u32)
}

pub fn from_fixed(u_q: u32) -> f64 {
    u_q as f64 / CONF_SCALE as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Allow,
    Deny,
    Alarm,
    Abstain,
}

impl Decision {
    pub const ALL: [Decision; 4] = [Decision::Allow, Decision::Deny, Decision::Alarm, Decision::Abstain];

    /// Field encoding used in statements.
    pub fn code(self) -> u64 {
        match self {
            Decision::Allow => 0,
            Decision::Deny => 1,
            Decision::Alarm => 2,
            Decision::Abstain => 3,
        }
    }

    pub fn from_code(code: u64) -> Option<Decision> {
        Decision::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Allow => "allow",
            Decision::Deny => "deny",
            Decision::Alarm => "alarm",
            Decision::Abstain => "abstain",
        }
    }
}

/// Action emitted per window. Field order is the canonical JSON order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRecord {
    pub zone: String,
    pub target: String,
    pub decision: Decision,
    pub basis: Vec<String>,
    pub confidence: f64,
}

impl ActionRecord {
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("action record serializes")
    }
}

/// Schema check on a typed record.
pub fn validate_action(r: &ActionRecord) -> bool {
    !r.zone.is_empty() && r.confidence.is_finite() && (0.0..=1.0).contains(&r.confidence)
}

/// Schema check on raw JSON: closed field set, decision enum, ranges.
pub fn validate_action_json(text: &str) -> bool {
    serde_json::from_str::<ActionRecord>(text).is_ok_and(|r| validate_action(&r))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Argmax class equals `class`.
    ClassEq { class: usize },
    /// `u_q >= threshold_fp` (fixed point, [`CONF_SCALE`] steps).
    ConfidenceGe { threshold_fp: u32 },
    /// Context flag `flag` equals `value`.
    FlagEq { flag: usize, value: bool },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        decision: Decision,
        basis: Vec<String>,
    },
    Split {
        predicate: Predicate,
        if_true: Box<Node>,
        if_false: Box<Node>,
    },
}

impl Node {
    pub fn leaf(decision: Decision, basis: &[&str]) -> Node {
        Node::Leaf { decision, basis: basis.iter().map(|s| s.to_string()).collect() }
    }

    pub fn split(predicate: Predicate, if_true: Node, if_false: Node) -> Node {
        Node::Split { predicate, if_true: Box::new(if_true), if_false: Box::new(if_false) }
    }

    fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { if_true, if_false, .. } => 1 + if_true.depth().max(if_false.depth()),
        }
    }
}

/// Inputs the policy reads besides the model outputs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Context {
    pub zone: String,
    pub target: String,
    pub flags: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub root: Node,
    pub n_classes: usize,
    pub n_flags: usize,
    pub max_depth: usize,
}

impl PolicyTree {
    pub fn new(root: Node, n_classes: usize, n_flags: usize) -> Result<Self> {
        let tree = PolicyTree { root, n_classes, n_flags, max_depth: DEFAULT_MAX_DEPTH };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Policy("tree needs at least two classes".into()));
        }
        if self.root.depth() > self.max_depth {
            return Err(Error::Policy(format!(
                "path of {} predicates exceeds depth limit {}",
                self.root.depth(),
                self.max_depth
            )));
        }
        fn walk(n: &Node, t: &PolicyTree) -> Result<()> {
            match n {
                Node::Leaf { basis, .. } => {
                    if basis.iter().any(String::is_empty) {
                        return Err(Error::Policy("empty basis string".into()));
                    }
                    Ok(())
                }
                Node::Split { predicate, if_true, if_false } => {
                    match predicate {
                        Predicate::ClassEq { class } if *class >= t.n_classes => {
                            return Err(Error::Policy(format!("class {class} out of range")));
                        }
                        Predicate::FlagEq { flag, .. } if *flag >= t.n_flags => {
                            return Err(Error::Policy(format!("flag {flag} out of range")));
                        }
                        _ => {}
                    }
                    walk(if_true, t)?;
                    walk(if_false, t)
                }
            }
        }
        walk(&self.root, self)
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("tree serializes")
    }

    pub fn tree_hash(&self) -> Felt {
        hash_bytes(&self.canonical_bytes())
    }

    /// Leaf reached by walking the predicates.
    pub fn walk(&self, class: usize, u_q: u32, flags: &[bool]) -> (Decision, &[String]) {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { decision, basis } => return (*decision, basis),
                Node::Split { predicate, if_true, if_false } => {
                    let holds = match *predicate {
                        Predicate::ClassEq { class: c } => class == c,
                        Predicate::ConfidenceGe { threshold_fp } => u_q >= threshold_fp,
                        Predicate::FlagEq { flag, value } => flags.get(flag).copied().unwrap_or(false) == value,
                    };
                    node = if holds { if_true } else { if_false };
                }
            }
        }
    }
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax<T: PartialOrd + Copy>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Maps model outputs and context to an action; abstains below `tau_fp`.
pub fn decide(logits_q: &[i32], u_q: u32, tau_fp: u32, ctx: &Context, tree: &PolicyTree) -> Result<ActionRecord> {
    tree.validate()?;
    if logits_q.len() != tree.n_classes {
        return Err(Error::Policy(format!(
            "{} logits for a {}-class tree",
            logits_q.len(),
            tree.n_classes
        )));
    }
    if u_q > CONF_SCALE {
        return Err(Error::Policy(format!("u_q {u_q} exceeds {CONF_SCALE}")));
    }
    let (decision, basis) = if u_q < tau_fp {
        (Decision::Abstain, vec!["below-threshold".to_string()])
    } else {
        let (d, b) = tree.walk(argmax(logits_q), u_q, &ctx.flags);
        (d, b.to_vec())
    };
    Ok(ActionRecord {
        zone: ctx.zone.clone(),
        target: ctx.target.clone(),
        decision,
        basis,
        confidence: from_fixed(u_q),
    })
}

/// Operand of a compiled comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Operand {
    /// 1 when the argmax class is the given index, else 0.
    ClassIndicator(usize),
    /// `u_q`.
    Confidence,
    Flag(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    EqZero,
    GeZero,
}

/// `coeff * operand + constant (= 0 | >= 0)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub operand: Operand,
    pub coeff: i64,
    pub constant: i64,
    pub relation: Relation,
}

impl Comparison {
    pub fn holds(&self, class: usize, u_q: u32, flags: &[bool]) -> bool {
        let x = match self.operand {
            Operand::ClassIndicator(c) => (class == c) as i64,
            Operand::Confidence => u_q as i64,
            Operand::Flag(i) => flags.get(i).copied().unwrap_or(false) as i64,
        };
        let v = self.coeff * x + self.constant;
        match self.relation {
            Relation::EqZero => v == 0,
            Relation::GeZero => v >= 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafFragment {
    pub decision: Decision,
    pub basis: Vec<String>,
    pub comparisons: Vec<Comparison>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompiledPolicy {
    pub leaves: Vec<LeafFragment>,
    pub n_classes: usize,
    pub n_flags: usize,
}

impl CompiledPolicy {
    /// Index of the unique leaf whose conjunction holds.
    pub fn leaf_index(&self, class: usize, u_q: u32, flags: &[bool]) -> Option<usize> {
        self.leaves
            .iter()
            .position(|l| l.comparisons.iter().all(|c| c.holds(class, u_q, flags)))
    }

    /// Compiled counterpart of [`decide`]'s decision.
    pub fn evaluate(&self, class: usize, u_q: u32, tau_fp: u32, flags: &[bool]) -> Option<Decision> {
        if u_q < tau_fp {
            return Some(Decision::Abstain);
        }
        self.leaf_index(class, u_q, flags).map(|i| self.leaves[i].decision)
    }
}

fn predicate_comparison(p: &Predicate, holds: bool) -> Result<Comparison> {
    Ok(match (p.clone(), holds) {
        (Predicate::ClassEq { class }, true) => Comparison {
            operand: Operand::ClassIndicator(class),
            coeff: 1,
            constant: -1,
            relation: Relation::EqZero,
        },
        (Predicate::ClassEq { class }, false) => Comparison {
            operand: Operand::ClassIndicator(class),
            coeff: 1,
            constant: 0,
            relation: Relation::EqZero,
        },
        (Predicate::ConfidenceGe { threshold_fp }, _) if threshold_fp > CONF_SCALE => {
            return Err(Error::Compile(format!(
                "confidence threshold {threshold_fp} beyond fixed-point range {CONF_SCALE}"
            )))
        }
        (Predicate::ConfidenceGe { threshold_fp }, true) => Comparison {
            operand: Operand::Confidence,
            coeff: 1,
            constant: -(threshold_fp as i64),
            relation: Relation::GeZero,
        },
        (Predicate::ConfidenceGe { threshold_fp }, false) => Comparison {
            operand: Operand::Confidence,
            coeff: -1,
            constant: threshold_fp as i64 - 1,
            relation: Relation::GeZero,
        },
        (Predicate::FlagEq { flag, value }, holds) => Comparison {
            operand: Operand::Flag(flag),
            coeff: 1,
            constant: -((value == holds) as i64),
            relation: Relation::EqZero,
        },
    })
}

/// Per-leaf path conjunctions, leaves in depth-first (true branch first) order.
pub fn compile_tree(tree: &PolicyTree) -> Result<CompiledPolicy> {
    tree.validate()?;
    fn walk(n: &Node, path: &mut Vec<Comparison>, out: &mut Vec<LeafFragment>) -> Result<()> {
        match n {
            Node::Leaf { decision, basis } => {
                out.push(LeafFragment { decision: *decision, basis: basis.clone(), comparisons: path.clone() });
                Ok(())
            }
            Node::Split { predicate, if_true, if_false } => {
                path.push(predicate_comparison(predicate, true)?);
                walk(if_true, path, out)?;
                path.pop();
                path.push(predicate_comparison(predicate, false)?);
                walk(if_false, path, out)?;
                path.pop();
                Ok(())
            }
        }
    }
    let mut leaves = Vec::new();
    walk(&tree.root, &mut Vec::new(), &mut leaves)?;
    Ok(CompiledPolicy { leaves, n_classes: tree.n_classes, n_flags: tree.n_flags })
}
