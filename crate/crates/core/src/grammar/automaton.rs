//! Acyclic word-labeled acceptors: compilation, counting, sampling, membership.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use rand::Rng as _;

use super::parse::{Expr, Grammar};
use super::GrammarError;
use crate::command::Command;
use crate::util::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Arc {
    pub label: u32,
    pub to: u32,
}

/// How [`Automaton::sample`] chooses among the alternatives at a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleMode {
    /// Uniform over outgoing arcs plus "stop" at accepting states.
    #[default]
    ProductionUniform,
    /// Alternatives weighted by downstream path counts; every string equiprobable.
    LanguageUniform,
}

impl std::str::FromStr for SampleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "production-uniform" | "production" => Ok(SampleMode::ProductionUniform),
            "language-uniform" | "language" => Ok(SampleMode::LanguageUniform),
            _ => Err(format!(
                "unknown sampling mode `{s}` (expected production-uniform or language-uniform)"
            )),
        }
    }
}

/// An epsilon-free acyclic acceptor over words. States are dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Automaton {
    symbols: Vec<String>,
    arcs: Vec<Vec<Arc>>,
    start: u32,
    accept: Vec<bool>,
}

struct SymbolTable {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    fn new() -> Self {
        SymbolTable {
            words: Vec::new(),
            ids: HashMap::new(),
        }
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.ids.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.ids.insert(w.to_string(), id);
        id
    }
}

struct EpsNfa {
    eps: Vec<Vec<u32>>,
    arcs: Vec<Vec<Arc>>,
}

impl EpsNfa {
    fn add_state(&mut self) -> u32 {
        self.eps.push(Vec::new());
        self.arcs.push(Vec::new());
        (self.eps.len() - 1) as u32
    }

    fn build(&mut self, g: &Grammar, e: &Expr, from: u32, to: u32, syms: &mut SymbolTable) {
        match e {
            Expr::Word(w) => {
                let label = syms.intern(w);
                self.arcs[from as usize].push(Arc { label, to });
            }
            Expr::Rule(r) => {
                let body = g.rule(r).expect("references are resolved at parse time");
                self.build(g, body, from, to, syms);
            }
            Expr::Seq(xs) => {
                let mut cur = from;
                for (i, x) in xs.iter().enumerate() {
                    let next = if i + 1 == xs.len() {
                        to
                    } else {
                        self.add_state()
                    };
                    self.build(g, x, cur, next, syms);
                    cur = next;
                }
            }
            Expr::Alt(xs) => {
                for x in xs {
                    self.build(g, x, from, to, syms);
                }
            }
            Expr::Opt(x) => {
                self.eps[from as usize].push(to);
                self.build(g, x, from, to, syms);
            }
        }
    }

    fn closure(&self, set: &mut Vec<u32>) {
        let mut stack = set.clone();
        while let Some(s) = stack.pop() {
            for &t in &self.eps[s as usize] {
                if !set.contains(&t) {
                    set.push(t);
                    stack.push(t);
                }
            }
        }
        set.sort_unstable();
    }
}

/// Subset construction over arbitrary (possibly epsilon-bearing) transition structure.
fn subset_construction(
    start: Vec<u32>,
    closure: impl Fn(&mut Vec<u32>),
    arcs_of: impl Fn(u32) -> Vec<Arc>,
    is_final: impl Fn(u32) -> bool,
) -> (Vec<Vec<Arc>>, Vec<bool>) {
    let mut init = start;
    closure(&mut init);
    let mut index: HashMap<Vec<u32>, u32> = HashMap::new();
    let mut sets = vec![init.clone()];
    index.insert(init, 0);
    let mut arcs: Vec<Vec<Arc>> = Vec::new();
    let mut accept = Vec::new();
    let mut i = 0;
    while i < sets.len() {
        let set = sets[i].clone();
        accept.push(set.iter().any(|&s| is_final(s)));
        let mut by_label: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &s in &set {
            for a in arcs_of(s) {
                by_label.entry(a.label).or_default().push(a.to);
            }
        }
        let mut out = Vec::with_capacity(by_label.len());
        for (label, mut targets) in by_label {
            targets.sort_unstable();
            targets.dedup();
            closure(&mut targets);
            let next = match index.get(&targets) {
                Some(&id) => id,
                None => {
                    let id = sets.len() as u32;
                    index.insert(targets.clone(), id);
                    sets.push(targets);
                    id
                }
            };
            out.push(Arc { label, to: next });
        }
        arcs.push(out);
        i += 1;
    }
    (arcs, accept)
}

impl Automaton {
    /// Compiles a validated grammar into a trimmed, deterministic, minimal acceptor.
    pub fn compile(g: &Grammar) -> Automaton {
        let mut syms = SymbolTable::new();
        let mut nfa = EpsNfa {
            eps: Vec::new(),
            arcs: Vec::new(),
        };
        let s = nfa.add_state();
        let f = nfa.add_state();
        nfa.build(
            g,
            g.rule(g.start()).expect("start rule exists"),
            s,
            f,
            &mut syms,
        );
        let (arcs, accept) = subset_construction(
            vec![s],
            |set| nfa.closure(set),
            |q| nfa.arcs[q as usize].clone(),
            |q| q == f,
        );
        Automaton {
            symbols: syms.words,
            arcs,
            start: 0,
            accept,
        }
        .minimize()
    }

    /// Builds an acceptor for exactly the distinct commands of a corpus.
    pub fn from_commands(commands: &[Command]) -> Automaton {
        let mut syms = SymbolTable::new();
        let mut arcs: Vec<Vec<Arc>> = vec![Vec::new()];
        let mut accept = vec![false];
        for c in commands {
            let mut cur = 0usize;
            for w in c.words() {
                let label = syms.intern(w);
                cur = match arcs[cur].iter().find(|a| a.label == label) {
                    Some(a) => a.to as usize,
                    None => {
                        let to = arcs.len() as u32;
                        arcs.push(Vec::new());
                        accept.push(false);
                        arcs[cur].push(Arc { label, to });
                        to as usize
                    }
                };
            }
            accept[cur] = true;
        }
        for out in &mut arcs {
            out.sort_unstable();
        }
        Automaton {
            symbols: syms.words,
            arcs,
            start: 0,
            accept,
        }
        .minimize()
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_transitions(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn is_accept(&self, state: u32) -> bool {
        self.accept[state as usize]
    }

    pub fn word(&self, label: u32) -> &str {
        &self.symbols[label as usize]
    }

    pub fn arcs(&self, state: u32) -> &[Arc] {
        &self.arcs[state as usize]
    }

    /// Distinct words appearing on transitions.
    pub fn words(&self) -> Vec<&str> {
        let mut used = vec![false; self.symbols.len()];
        for a in self.arcs.iter().flatten() {
            used[a.label as usize] = true;
        }
        let mut out: Vec<&str> = self
            .symbols
            .iter()
            .zip(used)
            .filter(|(_, u)| *u)
            .map(|(w, _)| w.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn is_deterministic(&self) -> bool {
        self.arcs.iter().all(|out| {
            let mut labels: Vec<u32> = out.iter().map(|a| a.label).collect();
            labels.sort_unstable();
            labels.windows(2).all(|w| w[0] != w[1])
        })
    }

    /// States in topological order, or `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<u32>> {
        let n = self.arcs.len();
        let mut indeg = vec![0usize; n];
        for a in self.arcs.iter().flatten() {
            indeg[a.to as usize] += 1;
        }
        let mut queue: VecDeque<u32> = (0..n as u32).filter(|&s| indeg[s as usize] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for a in &self.arcs[s as usize] {
                indeg[a.to as usize] -= 1;
                if indeg[a.to as usize] == 0 {
                    queue.push_back(a.to);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    fn topo(&self) -> Vec<u32> {
        self.topological_order()
            .expect("automaton invariant: transition graph is acyclic")
    }

    pub fn determinize(&self) -> Automaton {
        if self.is_deterministic() {
            return self.clone();
        }
        let (arcs, accept) = subset_construction(
            vec![self.start],
            |set| set.sort_unstable(),
            |q| self.arcs[q as usize].clone(),
            |q| self.accept[q as usize],
        );
        Automaton {
            symbols: self.symbols.clone(),
            arcs,
            start: 0,
            accept,
        }
    }

    /// Removes states that are unreachable from the start or cannot reach an
    /// accepting state. The start state is always kept.
    pub fn trim(&self) -> Automaton {
        let n = self.arcs.len();
        let mut fwd = vec![false; n];
        let mut stack = vec![self.start];
        fwd[self.start as usize] = true;
        while let Some(s) = stack.pop() {
            for a in &self.arcs[s as usize] {
                if !fwd[a.to as usize] {
                    fwd[a.to as usize] = true;
                    stack.push(a.to);
                }
            }
        }
        let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (s, out) in self.arcs.iter().enumerate() {
            for a in out {
                rev[a.to as usize].push(s as u32);
            }
        }
        let mut bwd = vec![false; n];
        let mut stack: Vec<u32> = (0..n as u32).filter(|&s| self.accept[s as usize]).collect();
        for &s in &stack {
            bwd[s as usize] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &rev[s as usize] {
                if !bwd[p as usize] {
                    bwd[p as usize] = true;
                    stack.push(p);
                }
            }
        }
        let keep: Vec<bool> = (0..n)
            .map(|s| (fwd[s] && bwd[s]) || s == self.start as usize)
            .collect();
        self.restrict(&keep)
    }

    fn restrict(&self, keep: &[bool]) -> Automaton {
        let mut map = vec![u32::MAX; keep.len()];
        let mut next = 0u32;
        for (s, &k) in keep.iter().enumerate() {
            if k {
                map[s] = next;
                next += 1;
            }
        }
        let mut arcs = Vec::with_capacity(next as usize);
        let mut accept = Vec::with_capacity(next as usize);
        for (s, &k) in keep.iter().enumerate() {
            if !k {
                continue;
            }
            arcs.push(
                self.arcs[s]
                    .iter()
                    .filter(|a| keep[a.to as usize])
                    .map(|a| Arc {
                        label: a.label,
                        to: map[a.to as usize],
                    })
                    .collect(),
            );
            accept.push(self.accept[s]);
        }
        Automaton {
            symbols: self.symbols.clone(),
            arcs,
            start: map[self.start as usize],
            accept,
        }
    }

    /// Determinizes, trims, merges equivalent states and renumbers canonically.
    /// Two automata with the same language minimize to equal values.
    pub fn minimize(&self) -> Automaton {
        let dfa = self.determinize().trim();
        let order = dfa.topo();
        let n = dfa.arcs.len();
        let mut class = vec![u32::MAX; n];
        let mut sigs: HashMap<(bool, Vec<(u32, u32)>), u32> = HashMap::new();
        let mut reps: Vec<u32> = Vec::new();
        for &s in order.iter().rev() {
            let mut sig: Vec<(u32, u32)> = dfa.arcs[s as usize]
                .iter()
                .map(|a| (a.label, class[a.to as usize]))
                .collect();
            sig.sort_unstable();
            let key = (dfa.accept[s as usize], sig);
            let c = *sigs.entry(key).or_insert_with(|| {
                reps.push(s);
                (reps.len() - 1) as u32
            });
            class[s as usize] = c;
        }
        let arcs = reps
            .iter()
            .map(|&r| {
                dfa.arcs[r as usize]
                    .iter()
                    .map(|a| Arc {
                        label: a.label,
                        to: class[a.to as usize],
                    })
                    .collect()
            })
            .collect();
        let accept = reps.iter().map(|&r| dfa.accept[r as usize]).collect();
        Automaton {
            symbols: dfa.symbols.clone(),
            arcs,
            start: class[dfa.start as usize],
            accept,
        }
        .canonicalize()
    }

    /// Renumbers states breadth-first from the start, visiting arcs in word
    /// order, and rebuilds the symbol table in sorted order.
    fn canonicalize(&self) -> Automaton {
        let mut words: Vec<&str> = self.words();
        words.sort_unstable();
        let relabel: HashMap<&str, u32> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (*w, i as u32))
            .collect();
        let n = self.arcs.len();
        let mut map = vec![u32::MAX; n];
        let mut visit = Vec::with_capacity(n);
        let mut queue = VecDeque::from([self.start]);
        map[self.start as usize] = 0;
        let mut next = 1u32;
        let sorted_arcs = |s: u32| {
            let mut out: Vec<Arc> = self.arcs[s as usize]
                .iter()
                .map(|a| Arc {
                    label: relabel[self.symbols[a.label as usize].as_str()],
                    to: a.to,
                })
                .collect();
            out.sort_unstable();
            out
        };
        while let Some(s) = queue.pop_front() {
            visit.push(s);
            for a in sorted_arcs(s) {
                if map[a.to as usize] == u32::MAX {
                    map[a.to as usize] = next;
                    next += 1;
                    queue.push_back(a.to);
                }
            }
        }
        let mut arcs = vec![Vec::new(); visit.len()];
        let mut accept = vec![false; visit.len()];
        for &s in &visit {
            let id = map[s as usize] as usize;
            let mut out: Vec<Arc> = sorted_arcs(s)
                .into_iter()
                .map(|a| Arc {
                    label: a.label,
                    to: map[a.to as usize],
                })
                .collect();
            out.sort_unstable();
            arcs[id] = out;
            accept[id] = self.accept[s as usize];
        }
        Automaton {
            symbols: words.into_iter().map(str::to_string).collect(),
            arcs,
            start: 0,
            accept,
        }
    }

    /// Number of paths from each state to acceptance, on a deterministic automaton.
    fn path_counts(&self) -> Result<Vec<u128>, GrammarError> {
        let mut counts = vec![0u128; self.arcs.len()];
        for &s in self.topo().iter().rev() {
            let mut c = u128::from(self.accept[s as usize]);
            for a in &self.arcs[s as usize] {
                c = c
                    .checked_add(counts[a.to as usize])
                    .ok_or(GrammarError::CountOverflow)?;
            }
            counts[s as usize] = c;
        }
        Ok(counts)
    }

    /// Exact number of distinct accepted word sequences.
    pub fn count_language(&self) -> Result<u128, GrammarError> {
        let dfa = self.determinize();
        Ok(dfa.path_counts()?[dfa.start as usize])
    }

    /// All accepted sequences in lexicographic word order, or `None` if there
    /// are more than `limit`.
    pub fn enumerate(&self, limit: usize) -> Option<Vec<Vec<String>>> {
        fn go(
            a: &Automaton,
            s: u32,
            prefix: &mut Vec<String>,
            out: &mut Vec<Vec<String>>,
            limit: usize,
        ) -> bool {
            if a.accept[s as usize] {
                if out.len() == limit {
                    return false;
                }
                out.push(prefix.clone());
            }
            let mut arcs = a.arcs[s as usize].clone();
            arcs.sort_by(|x, y| a.word(x.label).cmp(a.word(y.label)));
            for arc in arcs {
                prefix.push(a.word(arc.label).to_string());
                let ok = go(a, arc.to, prefix, out, limit);
                prefix.pop();
                if !ok {
                    return false;
                }
            }
            true
        }
        let dfa = self.determinize();
        let mut out = Vec::new();
        go(&dfa, dfa.start, &mut Vec::new(), &mut out, limit).then_some(out)
    }

    /// Membership test. Works on nondeterministic automata too.
    pub fn accepts<S: AsRef<str>>(&self, words: &[S]) -> bool {
        let mut current = vec![self.start];
        for w in words {
            let w = w.as_ref();
            let mut next: Vec<u32> = current
                .iter()
                .flat_map(|&s| self.arcs[s as usize].iter())
                .filter(|a| self.symbols[a.label as usize] == w)
                .map(|a| a.to)
                .collect();
            if next.is_empty() {
                return false;
            }
            next.sort_unstable();
            next.dedup();
            current = next;
        }
        current.iter().any(|&s| self.accept[s as usize])
    }

    pub fn accepts_command(&self, c: &Command) -> bool {
        self.accepts(c.words())
    }

    /// Draws `n` commands i.i.d. Deterministic given `seed`.
    pub fn sample(
        &self,
        n: usize,
        seed: u64,
        mode: SampleMode,
    ) -> Result<Vec<Command>, GrammarError> {
        let dfa = self.determinize();
        let counts = dfa.path_counts()?;
        if counts[dfa.start as usize] == 0 {
            return Err(GrammarError::EmptyLanguage);
        }
        let mut rng = rng_from_seed(seed);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = dfa.start;
            let mut words = Vec::new();
            loop {
                let arcs: Vec<Arc> = dfa.arcs[s as usize]
                    .iter()
                    .copied()
                    .filter(|a| counts[a.to as usize] > 0)
                    .collect();
                let stop = dfa.accept[s as usize];
                let choice = match mode {
                    SampleMode::ProductionUniform => {
                        let k = rng.gen_range(0..arcs.len() + usize::from(stop));
                        arcs.get(k).copied()
                    }
                    SampleMode::LanguageUniform => {
                        let mut r = rng.gen_range(0..counts[s as usize]);
                        if stop && r == 0 {
                            None
                        } else {
                            r -= u128::from(stop);
                            let mut pick = None;
                            for a in &arcs {
                                let c = counts[a.to as usize];
                                if r < c {
                                    pick = Some(*a);
                                    break;
                                }
                                r -= c;
                            }
                            pick
                        }
                    }
                };
                match choice {
                    Some(a) => {
                        words.push(dfa.word(a.label).to_string());
                        s = a.to;
                    }
                    None => break,
                }
            }
            out.push(Command::from_words(words).map_err(|_| GrammarError::EmptyLanguage)?);
        }
        Ok(out)
    }

    /// Line-oriented text form: `states N start S`, then `T from word to` and `A state` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "states {} start {}", self.arcs.len(), self.start);
        for (s, arcs) in self.arcs.iter().enumerate() {
            for a in arcs {
                let _ = writeln!(out, "T {} {} {}", s, self.word(a.label), a.to);
            }
        }
        for (s, &acc) in self.accept.iter().enumerate() {
            if acc {
                let _ = writeln!(out, "A {s}");
            }
        }
        out
    }

    /// Parses the text form. The result is trimmed; acyclicity is enforced.
    pub fn from_text(text: &str) -> Result<Automaton, GrammarError> {
        let bad = |line: usize, message: &str| GrammarError::AutomatonFormat {
            line,
            message: message.to_string(),
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hline, header) = lines.next().ok_or_else(|| bad(1, "missing header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (n, start) = match h.as_slice() {
            ["states", n, "start", s] => (
                n.parse::<u32>().map_err(|_| bad(hline, "invalid state count"))?,
                s.parse::<u32>().map_err(|_| bad(hline, "invalid start state"))?,
            ),
            _ => return Err(bad(hline, "expected `states N start S`")),
        };
        if start >= n {
            return Err(bad(hline, "start state out of range"));
        }
        let mut syms = SymbolTable::new();
        let mut arcs = vec![Vec::new(); n as usize];
        let mut accept = vec![false; n as usize];
        let state = |tok: &str, line: usize| -> Result<u32, GrammarError> {
            let s = tok.parse::<u32>().map_err(|_| bad(line, "invalid state id"))?;
            if s >= n {
                return Err(bad(line, "state id out of range"));
            }
            Ok(s)
        };
        for (ln, l) in lines {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                ["T", from, word, to] => {
                    let from = state(from, ln)?;
                    let to = state(to, ln)?;
                    let label = syms.intern(word);
                    arcs[from as usize].push(Arc { label, to });
                }
                ["A", s] => accept[state(s, ln)? as usize] = true,
                _ => return Err(bad(ln, "expected `T from word to` or `A state`")),
            }
        }
        let a = Automaton {
            symbols: syms.words,
            arcs,
            start,
            accept,
        };
        if a.topological_order().is_none() {
            return Err(GrammarError::Cyclic);
        }
        let a = a.trim();
        Ok(if a.is_deterministic() {
            a.canonicalize()
        } else {
            a
        })
    }
}
