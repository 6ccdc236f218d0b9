//! A JSGF subset and a backtracking recursive-descent matcher.
//!
//! Supported: `public <name> = expansion;`, `|`, `[...]`, `(...)`, `<ref>`,
//! `{role}` / `{role=value}` tags after any unit, `//` and `/* */` comments,
//! and a leading `#JSGF` header line.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_GRAMMAR: &str = include_str!("../../data/default.gram");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("rule <{rule}> references undefined <{reference}>")]
    Unresolved { rule: String, reference: String },
    #[error("left recursion through <{0}>")]
    LeftRecursion(String),
    #[error("rule <{0}> defined twice")]
    Duplicate(String),
    #[error("expected exactly one public rule, found {0}")]
    Root(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tag {
    /// `{role}`: the role takes the words the tagged unit matched.
    Capture(String),
    /// `{role=value}`
    Assign(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Expr {
    Word(String),
    Ref(String),
    Seq(Vec<Expr>),
    Alt(Vec<Expr>),
    Opt(Box<Expr>),
    Tagged(Box<Expr>, Tag),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandGrammar {
    rules: BTreeMap<String, Expr>,
    root: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Fetch,
    Stop,
    Hello,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub action: Action,
    pub object: Option<String>,
}

impl Intent {
    pub fn fetch(object: &str) -> Self {
        Self { action: Action::Fetch, object: Some(object.to_string()) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Public,
    Rule(String),
    Word(String),
    Tag(String),
    Punct(char),
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, message: impl Into<String>) -> GrammarError {
        GrammarError::Syntax { line: self.line, column: self.column, message: message.into() }
    }

    fn until(&mut self, close: char, what: &str) -> Result<String, GrammarError> {
        let mut s = String::new();
        loop {
            match self.bump() {
                Some(c) if c == close => return Ok(s.trim().to_string()),
                Some('\n') | None => return Err(self.error(format!("unterminated {what}"))),
                Some(c) => s.push(c),
            }
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize, usize)>, GrammarError> {
        let mut out = Vec::new();
        let mut at_line_start = true;
        while let Some(&c) = self.chars.peek() {
            let (line, column) = (self.line, self.column);
            if c.is_whitespace() {
                if c == '\n' {
                    at_line_start = true;
                }
                self.bump();
                continue;
            }
            if c == '#' && at_line_start {
                while self.chars.peek().is_some_and(|&c| c != '\n') {
                    self.bump();
                }
                continue;
            }
            at_line_start = false;
            self.bump();
            let tok = match c {
                '/' => match self.chars.peek() {
                    Some('/') => {
                        while self.chars.peek().is_some_and(|&c| c != '\n') {
                            self.bump();
                        }
                        continue;
                    }
                    Some('*') => {
                        self.bump();
                        let mut prev = ' ';
                        loop {
                            match self.bump() {
                                Some('/') if prev == '*' => break,
                                Some(c) => prev = c,
                                None => return Err(self.error("unterminated comment")),
                            }
                        }
                        continue;
                    }
                    _ => return Err(self.error("unexpected '/'")),
                },
                '<' => {
                    let name = self.until('>', "rule name")?;
                    if name.is_empty() || !name.chars().all(is_word_char) {
                        return Err(GrammarError::Syntax { line, column, message: format!("bad rule name <{name}>") });
                    }
                    Tok::Rule(name)
                }
                '{' => Tok::Tag(self.until('}', "tag")?),
                '=' | ';' | '|' | '[' | ']' | '(' | ')' => Tok::Punct(c),
                c if is_word_char(c) => {
                    let mut w = String::from(c);
                    while let Some(&c) = self.chars.peek() {
                        if !is_word_char(c) {
                            break;
                        }
                        w.push(c);
                        self.bump();
                    }
                    if w == "public" {
                        Tok::Public
                    } else {
                        Tok::Word(w.to_lowercase())
                    }
                }
                c => return Err(GrammarError::Syntax { line, column, message: format!("unexpected '{c}'") }),
            };
            out.push((tok, line, column));
        }
        Ok(out)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '\'' | '.')
}

struct Parser {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
    end: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn error(&self, message: impl Into<String>) -> GrammarError {
        let (line, column) = self.toks.get(self.pos).map_or(self.end, |t| (t.1, t.2));
        GrammarError::Syntax { line, column, message: message.into() }
    }

    fn expect(&mut self, c: char) -> Result<(), GrammarError> {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected '{c}'")))
        }
    }

    fn rule(&mut self) -> Result<(bool, String, Expr), GrammarError> {
        let public = self.peek() == Some(&Tok::Public);
        if public {
            self.pos += 1;
        }
        let name = match self.peek() {
            Some(Tok::Rule(n)) => n.clone(),
            _ => return Err(self.error("expected a rule name")),
        };
        self.pos += 1;
        self.expect('=')?;
        let body = self.alternatives()?;
        self.expect(';')?;
        Ok((public, name, body))
    }

    fn alternatives(&mut self) -> Result<Expr, GrammarError> {
        let mut alts = vec![self.sequence()?];
        while self.peek() == Some(&Tok::Punct('|')) {
            self.pos += 1;
            alts.push(self.sequence()?);
        }
        Ok(if alts.len() == 1 { alts.pop().unwrap() } else { Expr::Alt(alts) })
    }

    fn sequence(&mut self) -> Result<Expr, GrammarError> {
        let mut items = Vec::new();
        loop {
            let mut unit = match self.peek().cloned() {
                Some(Tok::Word(w)) => {
                    self.pos += 1;
                    Expr::Word(w)
                }
                Some(Tok::Rule(r)) => {
                    self.pos += 1;
                    Expr::Ref(r)
                }
                Some(Tok::Punct('(')) => {
                    self.pos += 1;
                    let e = self.alternatives()?;
                    self.expect(')')?;
                    e
                }
                Some(Tok::Punct('[')) => {
                    self.pos += 1;
                    let e = self.alternatives()?;
                    self.expect(']')?;
                    Expr::Opt(Box::new(e))
                }
                _ => break,
            };
            while let Some(Tok::Tag(t)) = self.peek().cloned() {
                self.pos += 1;
                let tag = match t.split_once('=') {
                    Some((role, value)) => Tag::Assign(role.trim().to_string(), value.trim().to_lowercase()),
                    None => Tag::Capture(t),
                };
                unit = Expr::Tagged(Box::new(unit), tag);
            }
            items.push(unit);
        }
        match items.len() {
            0 => Err(self.error("empty expansion")),
            1 => Ok(items.pop().unwrap()),
            _ => Ok(Expr::Seq(items)),
        }
    }
}

pub fn compile_grammar(source: &str) -> Result<CommandGrammar, GrammarError> {
    let lexer = Lexer { chars: source.chars().peekable(), line: 1, column: 1 };
    let end = (lexer.line, lexer.column);
    let toks = lexer.tokens()?;
    let end = toks.last().map_or(end, |t| (t.1, t.2 + 1));
    let mut p = Parser { toks, pos: 0, end };
    let mut rules = BTreeMap::new();
    let mut roots = Vec::new();
    while p.peek().is_some() {
        let (public, name, body) = p.rule()?;
        if public {
            roots.push(name.clone());
        }
        if rules.insert(name.clone(), body).is_some() {
            return Err(GrammarError::Duplicate(name));
        }
    }
    if roots.len() != 1 {
        return Err(GrammarError::Root(roots.len()));
    }
    for (name, body) in &rules {
        let mut refs = BTreeSet::new();
        references(body, &mut refs);
        if let Some(missing) = refs.into_iter().find(|r| !rules.contains_key(r)) {
            return Err(GrammarError::Unresolved { rule: name.clone(), reference: missing });
        }
    }
    check_left_recursion(&rules)?;
    Ok(CommandGrammar { rules, root: roots.pop().unwrap() })
}

fn references(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Word(_) => {}
        Expr::Ref(r) => {
            out.insert(r.clone());
        }
        Expr::Seq(v) | Expr::Alt(v) => v.iter().for_each(|e| references(e, out)),
        Expr::Opt(e) | Expr::Tagged(e, _) => references(e, out),
    }
}

fn nullable(e: &Expr, rules: &BTreeMap<String, bool>) -> bool {
    match e {
        Expr::Word(_) => false,
        Expr::Ref(r) => rules[r],
        Expr::Seq(v) => v.iter().all(|e| nullable(e, rules)),
        Expr::Alt(v) => v.iter().any(|e| nullable(e, rules)),
        Expr::Opt(_) => true,
        Expr::Tagged(e, _) => nullable(e, rules),
    }
}

/// Rules that can be entered before any word is consumed.
fn left_refs(e: &Expr, null: &BTreeMap<String, bool>, out: &mut BTreeSet<String>) {
    match e {
        Expr::Word(_) => {}
        Expr::Ref(r) => {
            out.insert(r.clone());
        }
        Expr::Seq(v) => {
            for e in v {
                left_refs(e, null, out);
                if !nullable(e, null) {
                    break;
                }
            }
        }
        Expr::Alt(v) => v.iter().for_each(|e| left_refs(e, null, out)),
        Expr::Opt(e) | Expr::Tagged(e, _) => left_refs(e, null, out),
    }
}

fn check_left_recursion(rules: &BTreeMap<String, Expr>) -> Result<(), GrammarError> {
    let mut null: BTreeMap<String, bool> = rules.keys().map(|k| (k.clone(), false)).collect();
    loop {
        let next: BTreeMap<_, _> = rules.iter().map(|(k, e)| (k.clone(), nullable(e, &null))).collect();
        if next == null {
            break;
        }
        null = next;
    }
    let edges: BTreeMap<&String, BTreeSet<String>> = rules
        .iter()
        .map(|(k, e)| {
            let mut s = BTreeSet::new();
            left_refs(e, &null, &mut s);
            (k, s)
        })
        .collect();
    // a rule is left recursive iff it can reach itself through left edges
    for start in rules.keys() {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<&String> = edges[start].iter().collect();
        while let Some(r) = stack.pop() {
            if r == start {
                return Err(GrammarError::LeftRecursion(start.clone()));
            }
            if seen.insert(r) {
                stack.extend(edges[r].iter());
            }
        }
    }
    Ok(())
}

type Slots = Vec<(String, String)>;

impl CommandGrammar {
    pub fn default_commands() -> Self {
        compile_grammar(DEFAULT_GRAMMAR).expect("shipped grammar compiles")
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn rules(&self) -> &BTreeMap<String, Expr> {
        &self.rules
    }

    pub fn vocabulary(&self) -> BTreeSet<String> {
        fn walk(e: &Expr, out: &mut BTreeSet<String>) {
            match e {
                Expr::Word(w) => {
                    out.insert(w.clone());
                }
                Expr::Ref(_) => {}
                Expr::Seq(v) | Expr::Alt(v) => v.iter().for_each(|e| walk(e, out)),
                Expr::Opt(e) | Expr::Tagged(e, _) => walk(e, out),
            }
        }
        let mut out = BTreeSet::new();
        self.rules.values().for_each(|e| walk(e, &mut out));
        out
    }

    /// Every way `e` can match starting at `pos`, as (end, slots) pairs:
    /// longest first, declaration order among equal lengths, one per end.
    fn candidates(&self, e: &Expr, words: &[String], pos: usize) -> Vec<(usize, Slots)> {
        let mut out: Vec<(usize, Slots)> = match e {
            Expr::Word(w) => {
                if words.get(pos) == Some(w) {
                    vec![(pos + 1, Vec::new())]
                } else {
                    Vec::new()
                }
            }
            Expr::Ref(r) => self.candidates(&self.rules[r], words, pos),
            Expr::Alt(v) => v.iter().flat_map(|e| self.candidates(e, words, pos)).collect(),
            Expr::Opt(inner) => {
                let mut c = self.candidates(inner, words, pos);
                c.push((pos, Vec::new()));
                c
            }
            Expr::Tagged(inner, tag) => self
                .candidates(inner, words, pos)
                .into_iter()
                .map(|(end, mut slots)| {
                    slots.push(match tag {
                        Tag::Capture(role) => (role.clone(), words[pos..end].join(" ")),
                        Tag::Assign(role, value) => (role.clone(), value.clone()),
                    });
                    (end, slots)
                })
                .collect(),
            Expr::Seq(items) => {
                let mut partial = vec![(pos, Vec::new())];
                for item in items {
                    let mut next = Vec::new();
                    for (p, slots) in &partial {
                        for (end, more) in self.candidates(item, words, *p) {
                            let mut s = slots.clone();
                            s.extend(more);
                            next.push((end, s));
                        }
                    }
                    partial = dedup(next);
                    if partial.is_empty() {
                        break;
                    }
                }
                partial
            }
        };
        out = dedup(out);
        out
    }

    fn match_words(&self, words: &[String]) -> Option<BTreeMap<String, String>> {
        self.candidates(&self.rules[&self.root], words, 0)
            .into_iter()
            .find(|(end, _)| *end == words.len())
            .map(|(_, slots)| slots.into_iter().collect())
    }

    pub fn accepts(&self, utterance: &str) -> bool {
        self.match_words(&tokenize(utterance)).is_some()
    }

    /// Slot assignments of the preferred derivation, if the utterance is in
    /// the language.
    pub fn slots(&self, utterance: &str) -> Option<BTreeMap<String, String>> {
        self.match_words(&tokenize(utterance))
    }
}

fn dedup(mut v: Vec<(usize, Slots)>) -> Vec<(usize, Slots)> {
    v.sort_by(|a, b| b.0.cmp(&a.0));
    v.dedup_by(|later, earlier| later.0 == earlier.0);
    v
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// `None` when the utterance is outside the grammar or its derivation does
/// not name a known action (a fetch also needs an object).
pub fn parse_command(grammar: &CommandGrammar, utterance: &str) -> Option<Intent> {
    let slots = grammar.slots(utterance)?;
    let action = match slots.get("action")?.as_str() {
        "fetch" => Action::Fetch,
        "stop" => Action::Stop,
        "hello" => Action::Hello,
        _ => return None,
    };
    let object = slots.get("object").cloned();
    if action == Action::Fetch && object.is_none() {
        return None;
    }
    Some(Intent { action, object })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compiles_two_rule_example() {
        let g = compile_grammar("public <cmd> = (bring|fetch|get) [me] [the] <obj>; <obj> = medicine|water|cup;").unwrap();
        assert_eq!(g.rules().len(), 2);
        assert_eq!(g.root(), "cmd");
        assert!(g.accepts("get me the cup"));
        assert!(g.accepts("Fetch water"));
        assert!(!g.accepts("get me me cup"));
        // untagged grammars match but carry no intent
        assert_eq!(parse_command(&g, "get cup"), None);
    }

    #[test]
    fn compile_errors() {
        let e = compile_grammar("public <cmd> = fetch <objj>; <obj> = cup;").unwrap_err();
        assert_eq!(e, GrammarError::Unresolved { rule: "cmd".into(), reference: "objj".into() });
        let e = compile_grammar("public <s> = <a>; <a> = <a> x;").unwrap_err();
        assert_eq!(e, GrammarError::LeftRecursion("a".into()));
        // hidden behind a nullable prefix
        let e = compile_grammar("public <s> = [y] <s> x | z;").unwrap_err();
        assert_eq!(e, GrammarError::LeftRecursion("s".into()));
        // right recursion is fine
        assert!(compile_grammar("public <s> = x [<s>];").is_ok());
        assert_eq!(compile_grammar("<a> = x;").unwrap_err(), GrammarError::Root(0));
        assert_eq!(compile_grammar("public <a> = x; public <b> = y;").unwrap_err(), GrammarError::Root(2));
        match compile_grammar("public <a> = x;\n<b> = (y | z;").unwrap_err() {
            GrammarError::Syntax { line, column, .. } => assert_eq!((line, column), (2, 13)),
            e => panic!("{e:?}"),
        }
        assert!(matches!(compile_grammar("public <a> = x y"), Err(GrammarError::Syntax { .. })));
        assert!(matches!(compile_grammar("public <a> = x; <a> = y;"), Err(GrammarError::Duplicate(_))));
    }

    #[test]
    fn default_grammar_intents() {
        let g = CommandGrammar::default_commands();
        assert_eq!(parse_command(&g, "fetch the water"), Some(Intent::fetch("water")));
        assert_eq!(parse_command(&g, "BRING ME MEDICINE"), Some(Intent::fetch("medicine")));
        assert_eq!(parse_command(&g, "  get   cup please "), Some(Intent::fetch("cup")));
        assert_eq!(parse_command(&g, "dance for me"), None);
        assert_eq!(parse_command(&g, "fetch the"), None);
        assert_eq!(parse_command(&g, ""), None);
        assert_eq!(parse_command(&g, "halt now").map(|i| i.action), Some(Action::Stop));
        assert_eq!(parse_command(&g, "hi robot").map(|i| i.action), Some(Action::Hello));
    }

    #[test]
    fn longest_alternative_wins_then_first_declared() {
        let g = compile_grammar("public <s> = (a {k=short} | a b {k=long}) [b] c;").unwrap();
        assert_eq!(g.slots("a b c").unwrap()["k"], "long");
        assert_eq!(g.slots("a c").unwrap()["k"], "short");
        let g = compile_grammar("public <s> = (x {k=first} | x {k=second});").unwrap();
        assert_eq!(g.slots("x").unwrap()["k"], "first");
    }

    #[test]
    fn backtracks_out_of_greedy_optional() {
        let g = compile_grammar("public <s> = [the] the cup;").unwrap();
        assert!(g.accepts("the cup"));
        assert!(g.accepts("the the cup"));
    }

    /// Language of `e` restricted to sentences of at most `max` words, by
    /// set expansion of the rule graph.
    fn expand(e: &Expr, rules: &BTreeMap<String, Expr>, max: usize) -> BTreeSet<Vec<String>> {
        match e {
            Expr::Word(w) => [vec![w.clone()]].into_iter().filter(|s| s.len() <= max).collect(),
            Expr::Ref(r) => expand(&rules[r], rules, max),
            Expr::Alt(v) => v.iter().flat_map(|e| expand(e, rules, max)).collect(),
            Expr::Opt(e) => {
                let mut s = expand(e, rules, max);
                s.insert(Vec::new());
                s
            }
            Expr::Tagged(e, _) => expand(e, rules, max),
            Expr::Seq(v) => v.iter().fold([Vec::new()].into_iter().collect(), |acc, e| {
                let tails = expand(e, rules, max);
                acc.iter()
                    .flat_map(|a| tails.iter().map(move |t| [a.clone(), t.clone()].concat()))
                    .filter(|s| s.len() <= max)
                    .collect()
            }),
        }
    }

    #[test]
    fn accepts_exactly_the_expanded_language() {
        let g = CommandGrammar::default_commands();
        let language = expand(&g.rules()[g.root()], g.rules(), 5);
        let vocab: Vec<String> = g.vocabulary().into_iter().collect();
        let mut sentence: Vec<usize> = Vec::new();
        let mut checked = 0usize;
        for len in 0..=5u32 {
            for code in 0..vocab.len().pow(len) {
                sentence.clear();
                let mut c = code;
                for _ in 0..len {
                    sentence.push(c % vocab.len());
                    c /= vocab.len();
                }
                let words: Vec<String> = sentence.iter().map(|i| vocab[*i].clone()).collect();
                assert_eq!(g.match_words(&words).is_some(), language.contains(&words), "{words:?}");
                checked += 1;
            }
        }
        assert!(checked > 700_000);
        assert!(language.len() > 50);
    }
}
