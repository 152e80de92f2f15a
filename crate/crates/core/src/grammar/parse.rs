//! Grammar DSL parser.
//!
//! ```text
//! # comment
//! command = move direction ["now"] ;
//! move = "turn" | "move" ;
//! direction = ("left" | "right") ;
//! ```
//!
//! Juxtaposition is sequence, `|` alternation, `( )` grouping, `[ ]` optional.
//! Terminals are double-quoted; a quoted string with spaces is a word sequence.
//! The rule named `command` is the start symbol; without one, the first rule is.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::GrammarError;

pub const START_RULE: &str = "command";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Word(String),
    Rule(String),
    Seq(Vec<Expr>),
    Alt(Vec<Expr>),
    Opt(Box<Expr>),
}

impl Expr {
    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Seq(xs) | Expr::Alt(xs) => xs.iter().for_each(|x| x.visit(f)),
            Expr::Opt(x) => x.visit(f),
            Expr::Word(_) | Expr::Rule(_) => {}
        }
    }

    /// Number of alternation nodes in this expression.
    pub fn alternations(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if matches!(e, Expr::Alt(_)) {
                n += 1
            }
        });
        n
    }

    pub fn optionals(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| {
            if matches!(e, Expr::Opt(_)) {
                n += 1
            }
        });
        n
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Word(w) => write!(f, "\"{w}\""),
            Expr::Rule(r) => f.write_str(r),
            Expr::Seq(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    match x {
                        Expr::Alt(_) => write!(f, "({x})")?,
                        _ => write!(f, "{x}")?,
                    }
                }
                Ok(())
            }
            Expr::Alt(xs) => {
                for (i, x) in xs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" | ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            Expr::Opt(x) => write!(f, "[{x}]"),
        }
    }
}

/// A parsed grammar whose rule graph is known to be resolved and acyclic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    rules: BTreeMap<String, Expr>,
    order: Vec<String>,
    start: String,
}

impl Grammar {
    pub fn rules(&self) -> &BTreeMap<String, Expr> {
        &self.rules
    }

    pub fn rule(&self, name: &str) -> Option<&Expr> {
        self.rules.get(name)
    }

    pub fn start(&self) -> &str {
        &self.start
    }

    /// Rule names in definition order.
    pub fn rule_names(&self) -> &[String] {
        &self.order
    }

    /// Builds and validates a grammar from already-constructed rules.
    pub fn from_rules(
        rules: Vec<(String, Expr)>,
        start: Option<&str>,
    ) -> Result<Self, GrammarError> {
        let mut map = BTreeMap::new();
        let mut order = Vec::new();
        for (name, expr) in rules {
            if map.contains_key(&name) {
                return Err(GrammarError::DuplicateRule(name));
            }
            order.push(name.clone());
            map.insert(name, expr);
        }
        let start = match start {
            Some(s) => s.to_string(),
            None if map.contains_key(START_RULE) => START_RULE.to_string(),
            None => order.first().cloned().ok_or(GrammarError::NoRules)?,
        };
        if !map.contains_key(&start) {
            return Err(GrammarError::UndefinedRule {
                name: start,
                referenced_from: "<start>".into(),
            });
        }
        let g = Grammar {
            rules: map,
            order,
            start,
        };
        g.check_references()?;
        g.check_acyclic()?;
        for (name, expr) in &g.rules {
            let mut bad = None;
            expr.visit(&mut |e| {
                if let Expr::Word(w) = e {
                    if !valid_word(w) {
                        bad = Some(w.clone());
                    }
                }
            });
            if let Some(word) = bad {
                return Err(GrammarError::InvalidTerminal {
                    rule: name.clone(),
                    word,
                });
            }
        }
        if g.nullable(&g.rules[&g.start]) {
            return Err(GrammarError::EmptyCommand(g.start.clone()));
        }
        Ok(g)
    }

    fn check_references(&self) -> Result<(), GrammarError> {
        for name in &self.order {
            let mut missing = None;
            self.rules[name].visit(&mut |e| {
                if let Expr::Rule(r) = e {
                    if missing.is_none() && !self.rules.contains_key(r) {
                        missing = Some(r.clone());
                    }
                }
            });
            if let Some(r) = missing {
                return Err(GrammarError::UndefinedRule {
                    name: r,
                    referenced_from: name.clone(),
                });
            }
        }
        Ok(())
    }

    fn check_acyclic(&self) -> Result<(), GrammarError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        fn dfs<'a>(
            g: &'a Grammar,
            name: &'a str,
            marks: &mut HashMap<&'a str, Mark>,
            stack: &mut Vec<&'a str>,
        ) -> Result<(), GrammarError> {
            match marks.get(name).copied().unwrap_or(Mark::Fresh) {
                Mark::Done => return Ok(()),
                Mark::Active => {
                    let at = stack.iter().position(|s| *s == name).unwrap_or(0);
                    let mut cycle: Vec<String> =
                        stack[at..].iter().map(|s| s.to_string()).collect();
                    cycle.push(name.to_string());
                    return Err(GrammarError::RecursiveRule(cycle));
                }
                Mark::Fresh => {}
            }
            marks.insert(name, Mark::Active);
            stack.push(name);
            let mut refs = Vec::new();
            g.rules[name].visit(&mut |e| {
                if let Expr::Rule(r) = e {
                    refs.push(r.as_str());
                }
            });
            for r in refs {
                dfs(g, r, marks, stack)?;
            }
            stack.pop();
            marks.insert(name, Mark::Done);
            Ok(())
        }
        let mut marks = HashMap::new();
        for name in &self.order {
            dfs(self, name, &mut marks, &mut Vec::new())?;
        }
        Ok(())
    }

    fn nullable(&self, e: &Expr) -> bool {
        match e {
            Expr::Word(_) => false,
            Expr::Rule(r) => self.nullable(&self.rules[r]),
            Expr::Seq(xs) => xs.iter().all(|x| self.nullable(x)),
            Expr::Alt(xs) => xs.iter().any(|x| self.nullable(x)),
            Expr::Opt(_) => true,
        }
    }

    /// Every word sequence the grammar derives, deduplicated and sorted.
    /// Returns `None` when more than `limit` derivations would be produced.
    pub fn expand(&self, limit: usize) -> Option<Vec<Vec<String>>> {
        let mut all = self.expand_expr(&self.rules[&self.start], limit)?;
        all.sort();
        all.dedup();
        Some(all)
    }

    fn expand_expr(&self, e: &Expr, limit: usize) -> Option<Vec<Vec<String>>> {
        let out = match e {
            Expr::Word(w) => vec![vec![w.clone()]],
            Expr::Rule(r) => self.expand_expr(&self.rules[r], limit)?,
            Expr::Alt(xs) => {
                let mut out = Vec::new();
                for x in xs {
                    out.extend(self.expand_expr(x, limit)?);
                    if out.len() > limit {
                        return None;
                    }
                }
                out
            }
            Expr::Opt(x) => {
                let mut out = vec![Vec::new()];
                out.extend(self.expand_expr(x, limit)?);
                out
            }
            Expr::Seq(xs) => {
                let mut acc = vec![Vec::new()];
                for x in xs {
                    let part = self.expand_expr(x, limit)?;
                    if acc.len().saturating_mul(part.len()) > limit {
                        return None;
                    }
                    let mut next = Vec::with_capacity(acc.len() * part.len());
                    for a in &acc {
                        for p in &part {
                            let mut s = a.clone();
                            s.extend(p.iter().cloned());
                            next.push(s);
                        }
                    }
                    acc = next;
                }
                acc
            }
        };
        (out.len() <= limit).then_some(out)
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for name in &self.order {
            writeln!(f, "{name} = {} ;", self.rules[name])?;
        }
        Ok(())
    }
}

fn valid_word(w: &str) -> bool {
    !w.is_empty() && !w.chars().any(char::is_whitespace) && w.to_lowercase() == w
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Eq,
    Semi,
    Bar,
    LParen,
    RParen,
    LBracket,
    RBracket,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Str(s) => write!(f, "string \"{s}\""),
            Tok::Eq => f.write_str("`=`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    col: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line: pos.line,
        column: pos.col,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, GrammarError> {
    let mut toks = Vec::new();
    let mut chars = text.chars().peekable();
    let mut pos = Pos { line: 1, col: 1 };
    let advance = |c: char, pos: &mut Pos| {
        if c == '\n' {
            pos.line += 1;
            pos.col = 1;
        } else {
            pos.col += 1;
        }
    };
    while let Some(&c) = chars.peek() {
        let here = pos;
        if c.is_whitespace() {
            chars.next();
            advance(c, &mut pos);
            continue;
        }
        if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                chars.next();
                advance(c, &mut pos);
            }
            continue;
        }
        let single = match c {
            '=' => Some(Tok::Eq),
            ';' => Some(Tok::Semi),
            '|' => Some(Tok::Bar),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            _ => None,
        };
        if let Some(t) = single {
            chars.next();
            advance(c, &mut pos);
            toks.push((t, here));
            continue;
        }
        if c == '"' {
            chars.next();
            advance(c, &mut pos);
            let mut s = String::new();
            loop {
                match chars.next() {
                    None | Some('\n') => return Err(syntax(here, "unterminated string")),
                    Some('"') => {
                        advance('"', &mut pos);
                        break;
                    }
                    Some('\\') => {
                        advance('\\', &mut pos);
                        match chars.next() {
                            Some(e @ ('"' | '\\')) => {
                                advance(e, &mut pos);
                                s.push(e);
                            }
                            _ => return Err(syntax(pos, "invalid escape in string")),
                        }
                    }
                    Some(ch) => {
                        advance(ch, &mut pos);
                        s.push(ch);
                    }
                }
            }
            toks.push((Tok::Str(s), here));
            continue;
        }
        if c.is_alphanumeric() || c == '_' {
            let mut s = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_alphanumeric() || ch == '_' || ch == '-' {
                    s.push(ch);
                    chars.next();
                    advance(ch, &mut pos);
                } else {
                    break;
                }
            }
            toks.push((Tok::Ident(s), here));
            continue;
        }
        return Err(syntax(here, format!("unexpected character `{c}`")));
    }
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    end: Pos,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn expect(&mut self, want: Tok) -> Result<(), GrammarError> {
        match self.toks.get(self.at) {
            Some((t, _)) if *t == want => {
                self.at += 1;
                Ok(())
            }
            Some((t, p)) => Err(syntax(*p, format!("expected {want}, found {t}"))),
            None => Err(syntax(self.end, format!("expected {want}, found end of input"))),
        }
    }

    fn rule(&mut self) -> Result<(String, Expr), GrammarError> {
        let name = match self.toks.get(self.at) {
            Some((Tok::Ident(s), _)) => s.clone(),
            Some((t, p)) => return Err(syntax(*p, format!("expected rule name, found {t}"))),
            None => unreachable!("rule() called at end of input"),
        };
        self.at += 1;
        self.expect(Tok::Eq)?;
        let e = self.alt()?;
        self.expect(Tok::Semi)?;
        Ok((name, e))
    }

    fn alt(&mut self) -> Result<Expr, GrammarError> {
        let mut arms = vec![self.seq()?];
        while self.peek() == Some(&Tok::Bar) {
            self.at += 1;
            arms.push(self.seq()?);
        }
        Ok(if arms.len() == 1 {
            arms.pop().unwrap()
        } else {
            Expr::Alt(arms)
        })
    }

    fn seq(&mut self) -> Result<Expr, GrammarError> {
        let mut items = Vec::new();
        while let Some(t) = self.peek() {
            match t {
                Tok::Str(_) | Tok::Ident(_) | Tok::LParen | Tok::LBracket => {
                    items.push(self.atom()?)
                }
                _ => break,
            }
        }
        match items.len() {
            0 => {
                let found = self
                    .peek()
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "end of input".into());
                Err(syntax(self.pos(), format!("expected an expression, found {found}")))
            }
            1 => Ok(items.pop().unwrap()),
            _ => Ok(Expr::Seq(items)),
        }
    }

    fn atom(&mut self) -> Result<Expr, GrammarError> {
        let (tok, pos) = self.toks[self.at].clone();
        self.at += 1;
        match tok {
            Tok::Str(s) => {
                let words: Vec<Expr> = s
                    .split_whitespace()
                    .map(|w| Expr::Word(w.to_lowercase()))
                    .collect();
                match words.len() {
                    0 => Err(syntax(pos, "empty terminal")),
                    1 => Ok(words.into_iter().next().unwrap()),
                    _ => Ok(Expr::Seq(words)),
                }
            }
            Tok::Ident(name) => Ok(Expr::Rule(name)),
            Tok::LParen => {
                let e = self.alt()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::LBracket => {
                let e = self.alt()?;
                self.expect(Tok::RBracket)?;
                Ok(Expr::Opt(Box::new(e)))
            }
            other => Err(syntax(pos, format!("unexpected {other}"))),
        }
    }
}

/// Parses grammar DSL source into a validated [`Grammar`].
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    let toks = lex(text)?;
    let end = {
        let line = text.lines().count().max(1);
        let col = text.lines().last().map(|l| l.chars().count() + 1).unwrap_or(1);
        Pos { line, col }
    };
    let mut p = Parser { toks, at: 0, end };
    let mut rules = Vec::new();
    while p.at < p.toks.len() {
        let pos = p.pos();
        let (name, expr) = p.rule()?;
        if rules.iter().any(|(n, _): &(String, Expr)| *n == name) {
            return Err(syntax(pos, format!("rule `{name}` defined twice")));
        }
        rules.push((name, expr));
    }
    Grammar::from_rules(rules, None)
}
