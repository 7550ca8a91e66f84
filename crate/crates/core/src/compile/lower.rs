use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::expr::{ExprGraph, Node, NodeId};

use super::kernel::{Guard, Instr, KernelProgram};
use super::passes::{constant_fold, dead_code};
use super::simplify::{simplify_roots, RuleSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pass {
    ConstantFold,
    AlgebraicSimplify,
    Cse,
    DeadCode,
}

impl Pass {
    pub const ALL: [Pass; 4] = [Pass::ConstantFold, Pass::AlgebraicSimplify, Pass::Cse, Pass::DeadCode];

    pub fn name(self) -> &'static str {
        match self {
            Pass::ConstantFold => "constant-fold",
            Pass::AlgebraicSimplify => "algebraic-simplify",
            Pass::Cse => "cse",
            Pass::DeadCode => "dead-code",
        }
    }

    pub fn from_name(s: &str) -> Option<Pass> {
        Pass::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Jit,
    Aot,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompileOptions {
    pub mode: Mode,
    pub passes: BTreeSet<Pass>,
    pub batch_hint: Option<usize>,
}

impl CompileOptions {
    /// Fast lowering: shared subterms only.
    pub fn jit() -> Self {
        CompileOptions { mode: Mode::Jit, passes: [Pass::Cse].into_iter().collect(), batch_hint: None }
    }

    /// Fully optimized lowering.
    pub fn aot() -> Self {
        CompileOptions { mode: Mode::Aot, passes: Pass::ALL.into_iter().collect(), batch_hint: None }
    }

    /// Naive tree expansion without any pass.
    pub fn unoptimized() -> Self {
        CompileOptions { mode: Mode::Jit, passes: BTreeSet::new(), batch_hint: None }
    }

    pub fn with_passes(mut self, passes: impl IntoIterator<Item = Pass>) -> Self {
        self.passes = passes.into_iter().collect();
        self
    }

    pub fn has(&self, p: Pass) -> bool {
        self.passes.contains(&p)
    }
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self::jit()
    }
}

/// Lowers `roots` with outputs labelled `out0`, `out1`, ...
pub fn lower(graph: &ExprGraph, roots: &[NodeId], opts: &CompileOptions) -> KernelProgram {
    let labelled: Vec<(String, NodeId)> = roots.iter().enumerate().map(|(i, r)| (format!("out{i}"), *r)).collect();
    lower_labeled(graph, &labelled, opts)
}

/// Lowers labelled roots. The input layout is every declared variable of
/// the graph in declaration order.
pub fn lower_labeled(graph: &ExprGraph, roots: &[(String, NodeId)], opts: &CompileOptions) -> KernelProgram {
    let mut ids: Vec<NodeId> = roots.iter().map(|r| r.1).collect();
    let simplified;
    let source = if opts.has(Pass::AlgebraicSimplify) {
        let mut g = graph.clone();
        ids = simplify_roots(&mut g, &ids, RuleSet::Exact).expect("simplification of interned nodes");
        simplified = g;
        &simplified
    } else {
        graph
    };
    let (instructions, slots, slot_count) =
        if opts.has(Pass::Cse) { emit_dag(source, &ids) } else { emit_tree(source, &ids) };
    let mut k = KernelProgram {
        inputs: graph.vars().iter().map(|v| v.name.clone()).collect(),
        outputs: roots.iter().zip(slots).map(|((l, _), s)| (l.clone(), s)).collect(),
        slot_count,
        instructions,
    };
    if opts.has(Pass::ConstantFold) {
        constant_fold(&mut k);
    }
    if opts.has(Pass::DeadCode) {
        dead_code(&mut k);
    }
    k
}

struct Code {
    code: Vec<Instr>,
    next: u32,
}

impl Code {
    fn slot(&mut self) -> u32 {
        self.next += 1;
        self.next - 1
    }

    /// Emits a non-piecewise node whose operands live in `args`.
    fn simple(&mut self, node: Node, args: &[u32]) -> u32 {
        let dest = self.slot();
        self.code.push(match node {
            Node::Const(value) => Instr::Const { dest, value },
            Node::Var(v) => Instr::Input { dest, index: v.index() as u32 },
            Node::Unary(op, _) => Instr::Unary { dest, op, arg: args[0] },
            Node::Binary(op, _, _) => Instr::Binary { dest, op, lhs: args[0], rhs: args[1] },
            Node::Piecewise { .. } => unreachable!("piecewise lowered separately"),
        });
        dest
    }

    fn patch(&mut self, pc: usize) {
        let here = self.code.len() as u32;
        match &mut self.code[pc] {
            Instr::Branch { target, .. } | Instr::Jump { target } => *target = here,
            _ => unreachable!("patching a non-jump"),
        }
    }
}

struct Regions {
    parent: Vec<usize>,
    depth: Vec<usize>,
    /// Arm pairs of the piecewise instances emitted in each region.
    pieces: Vec<Vec<(usize, usize)>>,
}

impl Regions {
    fn add(&mut self, parent: usize) -> usize {
        self.parent.push(parent);
        self.depth.push(self.depth[parent] + 1);
        self.pieces.push(Vec::new());
        self.parent.len() - 1
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b];
        }
        while a != b {
            a = self.parent[a];
            b = self.parent[b];
        }
        a
    }

    fn ancestor_at(&self, mut r: usize, depth: usize) -> usize {
        while self.depth[r] > depth {
            r = self.parent[r];
        }
        r
    }

    /// Whether every execution of `r` reaches one of the uses `us`.
    fn anticipated(&self, r: usize, us: &[usize]) -> bool {
        if us.contains(&r) {
            return true;
        }
        let d = self.depth[r] + 1;
        self.pieces[r].iter().any(|&(t, o)| {
            let ut: Vec<usize> = us.iter().copied().filter(|&u| self.ancestor_at(u, d) == t).collect();
            let uo: Vec<usize> = us.iter().copied().filter(|&u| self.ancestor_at(u, d) == o).collect();
            !ut.is_empty() && !uo.is_empty() && self.anticipated(t, &ut) && self.anticipated(o, &uo)
        })
    }

    /// Regions in which to compute a node used in `us`: the common ancestor
    /// when every path through it needs the value, otherwise one instance
    /// per arm, so nothing runs on a path that does not use it.
    fn place(&self, us: &[usize]) -> Vec<usize> {
        let l = us.iter().copied().reduce(|a, b| self.lca(a, b)).expect("at least one use");
        if self.anticipated(l, us) {
            return vec![l];
        }
        let d = self.depth[l] + 1;
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &u in us {
            groups.entry(self.ancestor_at(u, d)).or_default().push(u);
        }
        groups.values().flat_map(|g| self.place(g)).collect()
    }
}

struct Dag<'a> {
    graph: &'a ExprGraph,
    regions: Regions,
    members: Vec<Vec<NodeId>>,
    arms: HashMap<(NodeId, usize), (usize, usize)>,
    slots: HashMap<(NodeId, usize), u32>,
    out: Code,
}

/// Shared-subterm lowering. Every node is computed once per region it is
/// placed in; conditional work runs only on the paths that need it.
fn emit_dag(graph: &ExprGraph, roots: &[NodeId]) -> (Vec<Instr>, Vec<u32>, u32) {
    let order = graph.topo_order_multi(roots);
    let size = order.last().map_or(0, |n| n.index() + 1);
    let mut uses: Vec<Vec<usize>> = vec![Vec::new(); size];
    let mut regions = Regions { parent: vec![0], depth: vec![0], pieces: vec![Vec::new()] };
    let mut placed: Vec<(NodeId, usize)> = Vec::new();
    let mut arms = HashMap::new();
    for r in roots {
        uses[r.index()].push(0);
    }
    for &n in order.iter().rev() {
        let mut us = std::mem::take(&mut uses[n.index()]);
        us.sort_unstable();
        us.dedup();
        for r in regions.place(&us) {
            placed.push((n, r));
            match graph.node(n) {
                Node::Piecewise { lhs, rhs, then, otherwise, .. } => {
                    let t = regions.add(r);
                    let o = regions.add(r);
                    regions.pieces[r].push((t, o));
                    arms.insert((n, r), (t, o));
                    uses[lhs.index()].push(r);
                    uses[rhs.index()].push(r);
                    uses[then.index()].push(t);
                    uses[otherwise.index()].push(o);
                }
                node => {
                    for c in node.children() {
                        uses[c.index()].push(r);
                    }
                }
            }
        }
    }
    let mut members: Vec<Vec<NodeId>> = vec![Vec::new(); regions.parent.len()];
    for &(n, r) in placed.iter().rev() {
        members[r].push(n);
    }
    let mut dag = Dag { graph, regions, members, arms, slots: HashMap::new(), out: Code { code: Vec::new(), next: 0 } };
    dag.emit(0);
    let outputs = roots.iter().map(|&r| dag.slot(r, 0)).collect();
    (dag.out.code, outputs, dag.out.next)
}

impl Dag<'_> {
    fn slot(&self, n: NodeId, mut r: usize) -> u32 {
        loop {
            if let Some(&s) = self.slots.get(&(n, r)) {
                return s;
            }
            assert!(r != 0, "operand placed on the path to its use");
            r = self.regions.parent[r];
        }
    }

    fn emit(&mut self, r: usize) {
        for i in 0..self.members[r].len() {
            let n = self.members[r][i];
            let node = self.graph.node(n);
            let dest = match node {
                Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                    let guard = Guard { lhs: self.slot(lhs, r), rel, rhs: self.slot(rhs, r) };
                    let (t, o) = self.arms[&(n, r)];
                    match (self.members[t].is_empty(), self.members[o].is_empty()) {
                        (true, true) => {}
                        (false, true) => {
                            let br = self.out.code.len();
                            self.out.code.push(Instr::Branch { guard, when: false, target: 0 });
                            self.emit(t);
                            self.out.patch(br);
                        }
                        (true, false) => {
                            let br = self.out.code.len();
                            self.out.code.push(Instr::Branch { guard, when: true, target: 0 });
                            self.emit(o);
                            self.out.patch(br);
                        }
                        (false, false) => {
                            let br = self.out.code.len();
                            self.out.code.push(Instr::Branch { guard, when: false, target: 0 });
                            self.emit(t);
                            let jump = self.out.code.len();
                            self.out.code.push(Instr::Jump { target: 0 });
                            self.out.patch(br);
                            self.emit(o);
                            self.out.patch(jump);
                        }
                    }
                    let dest = self.out.slot();
                    let (then, otherwise) = (self.slot(then, t), self.slot(otherwise, o));
                    self.out.code.push(Instr::Select { dest, guard, then, otherwise });
                    dest
                }
                _ => {
                    let args: Vec<u32> = node.children().map(|c| self.slot(c, r)).collect();
                    self.out.simple(node, &args)
                }
            };
            self.slots.insert((n, r), dest);
        }
    }
}

enum Task {
    Visit(NodeId),
    Emit(NodeId),
    Branch,
    Jump,
    Else,
    Select,
}

/// Tree-expansion lowering: every use of a node recomputes it.
fn emit_tree(graph: &ExprGraph, roots: &[NodeId]) -> (Vec<Instr>, Vec<u32>, u32) {
    let mut out = Code { code: Vec::new(), next: 0 };
    let mut outputs = Vec::with_capacity(roots.len());
    for &root in roots {
        let mut tasks = vec![Task::Visit(root)];
        let mut values: Vec<u32> = Vec::new();
        let mut guards: Vec<Guard> = Vec::new();
        let mut pending: Vec<usize> = Vec::new();
        let mut rels = Vec::new();
        while let Some(task) = tasks.pop() {
            match task {
                Task::Visit(n) => match graph.node(n) {
                    Node::Piecewise { lhs, rel, rhs, then, otherwise } => {
                        rels.push(rel);
                        tasks.extend([
                            Task::Select,
                            Task::Visit(otherwise),
                            Task::Else,
                            Task::Jump,
                            Task::Visit(then),
                            Task::Branch,
                            Task::Visit(rhs),
                            Task::Visit(lhs),
                        ]);
                    }
                    node => {
                        tasks.push(Task::Emit(n));
                        let children: Vec<NodeId> = node.children().collect();
                        tasks.extend(children.into_iter().rev().map(Task::Visit));
                    }
                },
                Task::Emit(n) => {
                    let node = graph.node(n);
                    let k = node.children().count();
                    let args = values.split_off(values.len() - k);
                    let dest = out.simple(node, &args);
                    values.push(dest);
                }
                Task::Branch => {
                    let rhs = values.pop().expect("guard rhs");
                    let lhs = values.pop().expect("guard lhs");
                    let rel = rels.pop().expect("piecewise relation");
                    let guard = Guard { lhs, rel, rhs };
                    guards.push(guard);
                    pending.push(out.code.len());
                    out.code.push(Instr::Branch { guard, when: false, target: 0 });
                }
                Task::Jump => {
                    let br = pending.pop().expect("open branch");
                    pending.push(out.code.len());
                    out.code.push(Instr::Jump { target: 0 });
                    pending.push(br);
                }
                Task::Else => {
                    let br = pending.pop().expect("open branch");
                    out.patch(br);
                }
                Task::Select => {
                    let jump = pending.pop().expect("open jump");
                    out.patch(jump);
                    let otherwise = values.pop().expect("else value");
                    let then = values.pop().expect("then value");
                    let guard = guards.pop().expect("open guard");
                    let dest = out.slot();
                    out.code.push(Instr::Select { dest, guard, then, otherwise });
                    values.push(dest);
                }
            }
        }
        outputs.push(values.pop().expect("root value"));
    }
    (out.code, outputs, out.next)
}
