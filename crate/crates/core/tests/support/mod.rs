//! Generators and brute-force oracles shared by the property tests and the
//! acceptance target.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stp_core::lang::EdgeKind;
use stp_core::tree::{ExecTree, Link, NodeId, TreeError};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference listings with the statement kinds each must produce.
pub const CORPUS: &[(&str, &str, &[&str])] = &[
    ("comments", include_str!("../corpus/comments.stp"), &["action_step"; 4]),
    ("assignments", include_str!("../corpus/assignments.stp"), &["assignment"; 3]),
    ("interpolation", include_str!("../corpus/interpolation.stp"), &["action_step", "assignment"]),
    ("list", include_str!("../corpus/list.stp"), &["assignment"]),
    ("object", include_str!("../corpus/object.stp"), &["assignment", "action_step"]),
    ("table", include_str!("../corpus/table.stp"), &["assignment"]),
    (
        "conditionals",
        include_str!("../corpus/conditionals.stp"),
        &["assignment", "assignment", "if", "action_step", "else_if", "action_step", "else", "action_step"],
    ),
    ("repeat", include_str!("../corpus/repeat.stp"), &["repeat_n", "action_step"]),
    ("iterate", include_str!("../corpus/iterate.stp"), &["for_each", "action_step"]),
    ("while", include_str!("../corpus/while.stp"), &["while", "action_step", "action_step"]),
    (
        "function_def",
        include_str!("../corpus/function_def.stp"),
        &["function_def", "function_inputs", "assignment", "function_returns"],
    ),
    ("function_call", include_str!("../corpus/function_call.stp"), &["function_call", "action_step"]),
    (
        "tools",
        include_str!("../corpus/tools.stp"),
        &["assignment", "action_step", "action_step", "action_step", "action_step", "action_step", "assignment"],
    ),
];

/// Kind of a generated statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum K {
    Action,
    Assign,
    If,
    ElseIf,
    Else,
    Repeat,
    ForEach,
    While,
    Def(String),
    Inputs,
    Returns,
    Call(String),
    /// An action step that owns an indented block.
    Block,
}

impl K {
    fn is_loop(&self) -> bool {
        matches!(self, K::Repeat | K::ForEach | K::While)
    }
}

#[derive(Debug, Clone)]
pub struct G {
    pub kind: K,
    pub children: Vec<G>,
}

fn leaf(kind: K) -> G {
    G { kind, children: Vec::new() }
}

fn line(k: &K, n: usize) -> String {
    match k {
        K::Action => format!("tap the item number {n}"),
        K::Assign => format!("set {{v{n}}} to {n}"),
        K::If => format!("if {{v{n}}} > 3:"),
        K::ElseIf => format!("else, if {{v{n}}} < 2:"),
        K::Else => "else:".into(),
        K::Repeat => format!("repeat {} times:", n % 4 + 1),
        K::ForEach => format!("for each {{item{n}}} in {{items}}:"),
        K::While => format!("while {{flag{n}}} is \"on\":"),
        K::Def(name) => format!("define function named \"{name}\":"),
        K::Inputs => "function inputs: {x} (number)".into(),
        K::Returns => "function returns {x}".into(),
        K::Call(name) => format!("execute function \"{name}\", with {{x}} as {n}, save result as {{r{n}}}"),
        K::Block => format!("execute on device \"Phone{n}\":"),
    }
}

pub fn render(program: &[G]) -> String {
    fn go(gs: &[G], depth: usize, n: &mut usize, out: &mut String) {
        for g in gs {
            *n += 1;
            out.push_str(&"    ".repeat(depth));
            out.push_str(&line(&g.kind, *n));
            out.push('\n');
            go(&g.children, depth + 1, n, out);
        }
    }
    let mut out = String::new();
    go(program, 0, &mut 0, &mut out);
    out
}

pub fn count(program: &[G]) -> usize {
    program.iter().map(|g| 1 + count(&g.children)).sum()
}

pub fn depth(program: &[G]) -> usize {
    program.iter().map(|g| 1 + depth(&g.children)).max().unwrap_or(0)
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    max_depth: usize,
}

impl Gen<'_> {
    fn simple(&mut self, callable: &[String]) -> G {
        match self.rng.random_range(0..5) {
            0 | 1 => leaf(K::Action),
            2 | 3 => leaf(K::Assign),
            _ if !callable.is_empty() => {
                let f = callable[self.rng.random_range(0..callable.len())].clone();
                leaf(K::Call(f))
            }
            _ => leaf(K::Action),
        }
    }

    /// A non-empty statement list whose statements sit at `depth` (1-based).
    fn block(&mut self, depth: usize, callable: &[String]) -> Vec<G> {
        let mut out = Vec::new();
        for _ in 0..self.rng.random_range(1..=3) {
            if depth >= self.max_depth || !self.rng.random_bool(0.4) {
                out.push(self.simple(callable));
                continue;
            }
            let kind = match self.rng.random_range(0..6) {
                0 | 1 => K::If,
                2 => K::Repeat,
                3 => K::ForEach,
                4 => K::While,
                _ => K::Block,
            };
            let is_if = kind == K::If;
            out.push(G { kind, children: self.block(depth + 1, callable) });
            if is_if {
                while self.rng.random_bool(0.3) {
                    out.push(G { kind: K::ElseIf, children: self.block(depth + 1, callable) });
                }
                if self.rng.random_bool(0.4) {
                    out.push(G { kind: K::Else, children: self.block(depth + 1, callable) });
                }
            }
        }
        out
    }

    fn program(&mut self) -> Vec<G> {
        let mut program = Vec::new();
        let mut defined: Vec<String> = Vec::new();
        for i in 0..self.rng.random_range(0..=2) {
            let name = format!("f{i}");
            let mut body = vec![leaf(K::Inputs)];
            body.extend(self.block(2, &defined));
            if self.rng.random_bool(0.7) {
                body.push(leaf(K::Returns));
            }
            program.push(G { kind: K::Def(name.clone()), children: body });
            defined.push(name);
        }
        program.extend(self.block(1, &defined));
        program
    }
}

/// A random program of at most `max_statements` statements nested at most
/// `max_depth` deep. Functions are top level and only call earlier ones.
pub fn random_program(rng: &mut ChaCha8Rng, max_depth: usize, max_statements: usize) -> Vec<G> {
    let mut g = Gen { rng, max_depth };
    loop {
        let p = g.program();
        if count(&p) <= max_statements && depth(&p) <= max_depth {
            return p;
        }
    }
}

pub type EdgeSet = BTreeSet<(EdgeKind, String)>;

/// Successors computed straight from the generated structure.
pub struct CfgOracle<'a> {
    program: &'a [G],
    calls: BTreeMap<String, Vec<Vec<usize>>>,
    defs: BTreeMap<String, Vec<usize>>,
}

pub fn id_of(path: &[usize]) -> String {
    path.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(".")
}

impl<'a> CfgOracle<'a> {
    pub fn new(program: &'a [G]) -> Self {
        let mut o = CfgOracle { program, calls: BTreeMap::new(), defs: BTreeMap::new() };
        for p in o.paths() {
            match &o.node(&p).kind {
                K::Call(f) => o.calls.entry(f.clone()).or_default().push(p.clone()),
                K::Def(f) => {
                    o.defs.insert(f.clone(), p.clone());
                }
                _ => {}
            }
        }
        o
    }

    /// Every statement path in document order.
    pub fn paths(&self) -> Vec<Vec<usize>> {
        fn go(gs: &[G], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            for (i, g) in gs.iter().enumerate() {
                prefix.push(i);
                out.push(prefix.clone());
                go(&g.children, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        go(self.program, &mut Vec::new(), &mut out);
        out
    }

    pub fn node(&self, path: &[usize]) -> &'a G {
        let mut gs = self.program;
        let mut node = None;
        for &i in path {
            node = Some(&gs[i]);
            gs = &gs[i].children;
        }
        node.expect("non-empty path")
    }

    fn siblings(&self, path: &[usize]) -> &'a [G] {
        if path.len() == 1 {
            self.program
        } else {
            &self.node(&path[..path.len() - 1]).children
        }
    }

    fn edge(kind: EdgeKind, path: &[usize]) -> (EdgeKind, String) {
        (kind, id_of(path))
    }

    fn relabel(kind: EdgeKind, set: EdgeSet) -> EdgeSet {
        set.into_iter().map(|(k, t)| if k == EdgeKind::Return { (k, t) } else { (kind, t) }).collect()
    }

    /// Where control goes once `path` has completed.
    fn after(&self, path: &[usize], visiting: &mut Vec<String>) -> EdgeSet {
        let sibs = self.siblings(path);
        let last = *path.last().unwrap();
        if let Some(j) = (last + 1..sibs.len()).find(|&j| !matches!(sibs[j].kind, K::ElseIf | K::Else)) {
            let mut next = path.to_vec();
            *next.last_mut().unwrap() = j;
            return [Self::edge(EdgeKind::NextSequential, &next)].into();
        }
        if path.len() == 1 {
            return [(EdgeKind::Terminate, "END".to_string())].into();
        }
        let parent = &path[..path.len() - 1];
        match &self.node(parent).kind {
            k if k.is_loop() => [Self::edge(EdgeKind::LoopBack, parent)].into(),
            K::Def(f) => self.returns(f, visiting),
            _ => self.after(parent, visiting),
        }
    }

    fn returns(&self, f: &str, visiting: &mut Vec<String>) -> EdgeSet {
        if visiting.iter().any(|v| v == f) {
            return EdgeSet::new();
        }
        visiting.push(f.to_string());
        let mut out = EdgeSet::new();
        for site in self.calls.get(f).into_iter().flatten() {
            out.extend(Self::relabel(EdgeKind::Return, self.after(site, visiting)));
        }
        visiting.pop();
        out
    }

    pub fn successors(&self, path: &[usize]) -> EdgeSet {
        let g = self.node(path);
        let mut visiting = Vec::new();
        let first_child = || {
            let mut c = path.to_vec();
            c.push(0);
            c
        };
        match &g.kind {
            K::If | K::ElseIf => {
                let mut out: EdgeSet = [Self::edge(EdgeKind::TakeBranch, &first_child())].into();
                let sibs = self.siblings(path);
                let next = path.last().unwrap() + 1;
                if next < sibs.len() && matches!(sibs[next].kind, K::ElseIf | K::Else) {
                    let mut n = path.to_vec();
                    *n.last_mut().unwrap() = next;
                    out.insert(Self::edge(EdgeKind::SkipBranch, &n));
                } else {
                    out.extend(Self::relabel(EdgeKind::SkipBranch, self.after(path, &mut visiting)));
                }
                out
            }
            K::Else => [Self::edge(EdgeKind::TakeBranch, &first_child())].into(),
            k if k.is_loop() => {
                let mut out: EdgeSet = [Self::edge(EdgeKind::EnterBlock, &first_child())].into();
                out.extend(Self::relabel(EdgeKind::ExitLoop, self.after(path, &mut visiting)));
                out
            }
            K::Call(f) => match self.defs.get(f) {
                Some(def) => {
                    let mut body = def.clone();
                    body.push(0);
                    [Self::edge(EdgeKind::Call, &body)].into()
                }
                None => self.after(path, &mut visiting),
            },
            K::Returns => {
                let f = (1..path.len()).rev().find_map(|n| match &self.node(&path[..n]).kind {
                    K::Def(f) => Some(f.clone()),
                    _ => None,
                });
                match f {
                    Some(f) => self.returns(&f, &mut visiting),
                    None => self.after(path, &mut visiting),
                }
            }
            K::Block => [Self::edge(EdgeKind::EnterBlock, &first_child())].into(),
            _ => self.after(path, &mut visiting),
        }
    }
}

/// Builds a random tree through the public API while keeping a shadow
/// model, then checks the invariants. Returns the number of nodes.
pub fn check_random_tree(seed: u64, max_nodes: usize) -> Result<usize, String> {
    let mut r = rng(seed);
    let mut tree = ExecTree::new();
    // Shadow: parent, conditional flag, has-branch flag.
    let mut parent: Vec<Option<NodeId>> = vec![None];
    let mut conditional = vec![false];
    let mut has_branch = vec![false];
    let target = r.random_range(1..=max_nodes);
    let mut appended = 0;
    let mut guard = 0;
    while appended < target && guard < max_nodes * 10 {
        guard += 1;
        // Bias towards recent nodes so trees get deep.
        let n = parent.len();
        let p = if r.random_bool(0.6) { n - 1 - r.random_range(0..n.min(4)) } else { r.random_range(0..n) };
        let link = match r.random_range(0..4) {
            0 => Link::Branch,
            1 => Link::Iteration,
            _ => Link::Sequential,
        };
        let cond = r.random_bool(0.3);
        let step = stp_core::StepId::new(format!("{}", r.random_range(1..9)));
        let expect_ok = link != Link::Branch || (conditional[p] && !has_branch[p]);
        match tree.append(p, link, step, cond) {
            Ok(id) => {
                if !expect_ok {
                    return Err(format!("seed {seed}: second branch under {p} was accepted"));
                }
                if id != parent.len() {
                    return Err(format!("seed {seed}: unexpected id {id}"));
                }
                parent.push(Some(p));
                conditional.push(cond);
                has_branch.push(false);
                if link == Link::Branch {
                    has_branch[p] = true;
                }
                appended += 1;
            }
            Err(TreeError::StructureViolation(_)) if !expect_ok => {}
            Err(e) => return Err(format!("seed {seed}: unexpected error {e}")),
        }
        if tree.current() != parent.len() - 1 && appended > 0 && tree.current() != 0 {
            return Err(format!("seed {seed}: current is {} not the newest node", tree.current()));
        }
        if tree.active_path() != dfs_path(&tree, tree.current()) {
            return Err(format!("seed {seed}: active path differs from the oracle"));
        }
        let naive = naive_chain(&parent, tree.current());
        if tree.active_path() != naive {
            return Err(format!("seed {seed}: active path differs from the shadow chain"));
        }
    }
    for node in tree.nodes() {
        let branches = node.children.iter().filter(|c| tree.nodes()[**c].link == Link::Branch).count();
        if branches > 1 {
            return Err(format!("seed {seed}: node {} has {branches} branch subtrees", node.id));
        }
        if node.conditional && node.children.iter().any(|c| tree.nodes()[*c].link == Link::Branch) != has_branch[node.id]
        {
            return Err(format!("seed {seed}: branch bookkeeping mismatch at {}", node.id));
        }
    }
    if !tree.branches_well_formed() {
        return Err(format!("seed {seed}: branches_well_formed is false"));
    }
    // Every node's path, not only the current one.
    for id in 0..tree.len() {
        if tree.path_to(id) != naive_chain(&parent, id) {
            return Err(format!("seed {seed}: path_to({id}) differs from the shadow chain"));
        }
    }
    Ok(tree.len())
}

/// Path from the root to `target` found by depth-first search over children.
pub fn dfs_path(tree: &ExecTree, target: NodeId) -> Vec<NodeId> {
    fn go(tree: &ExecTree, at: NodeId, target: NodeId, path: &mut Vec<NodeId>) -> bool {
        path.push(at);
        if at == target {
            return true;
        }
        for &c in &tree.nodes()[at].children {
            if go(tree, c, target, path) {
                return true;
            }
        }
        path.pop();
        false
    }
    let mut path = Vec::new();
    go(tree, 0, target, &mut path);
    path
}

/// Parent pointers followed up from `id`, reversed.
pub fn naive_chain(parent: &[Option<NodeId>], id: NodeId) -> Vec<NodeId> {
    let mut out = vec![id];
    let mut cur = id;
    while let Some(p) = parent[cur] {
        out.push(p);
        cur = p;
    }
    out.reverse();
    out
}

/// Mangles a source text: random indentation, dropped colons, tabs, blank
/// and junk lines.
pub fn mangle(src: &str, r: &mut ChaCha8Rng) -> String {
    const JUNK: &[&str] = &["", ":", "{", "}", "{{}}", "{a.b.}", "else:", "else, if :", "\t", "#", "\"", "{x", "repeat times:", "for each in:", "é✓ {ü}"];
    let mut out = String::new();
    for l in src.lines() {
        let body = l.trim_start();
        let indent = match r.random_range(0..6) {
            0 => " ".repeat(r.random_range(0..13)),
            1 => "\t".repeat(r.random_range(0..3)),
            2 => " \t ".into(),
            _ => l[..l.len() - body.len()].to_string(),
        };
        let mut body = body.to_string();
        if r.random_bool(0.15) {
            body = body.trim_end_matches(':').to_string();
        }
        if r.random_bool(0.1) {
            body.push(':');
        }
        if r.random_bool(0.05) {
            let cut = r.random_range(0..=body.len());
            let cut = (0..=cut).rev().find(|c| body.is_char_boundary(*c)).unwrap_or(0);
            body.truncate(cut);
        }
        out.push_str(&indent);
        out.push_str(&body);
        out.push('\n');
        if r.random_bool(0.1) {
            let j = JUNK[r.random_range(0..JUNK.len())];
            out.push_str(&" ".repeat(r.random_range(0..9)));
            out.push_str(j);
            out.push('\n');
        }
    }
    out
}

/// The fuzz corpus: mangled reference listings and mangled random programs.
pub fn fuzz_corpus(cases: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    (0..cases)
        .map(|i| {
            let base = if i % 2 == 0 {
                CORPUS[r.random_range(0..CORPUS.len())].1.to_string()
            } else {
                render(&random_program(&mut r, 4, 40))
            };
            mangle(&base, &mut r)
        })
        .collect()
}

/// Parses and builds the graph; reports whether anything panicked.
pub fn survives(src: &str) -> bool {
    std::panic::catch_unwind(|| {
        if let Ok(p) = stp_core::parse_program(src) {
            let g = stp_core::lang::build_cfg(&p);
            let _ = g.render();
            let _ = stp_core::lang::print_program(&p);
        }
    })
    .is_ok()
}
