//! A small rule language shared by the inference engines.
//!
//! ```text
//! # comment
//! HYPOTHESIS h1 FOR 2 WHEN cape IN [1500, 9999] CONFIDENCE 0.7
//! NECESSARY  n1 WHEN dewpoint >= 50 AND NOT (cap_strength > 2)
//! SUFFICIENT s1 WHEN shear_kt > 30 OR w_max >= 25
//! MODIFIER   m1 WHEN upslope = 1 SCALE {1: 1.2, 2: 1.5}
//! ```
//!
//! The full grammar is in `docs/rules.ebnf`. Keywords are upper case;
//! everything else that looks like a word is a feature or rule name.
//! Predicates evaluate in three-valued (Kleene) logic so that a missing
//! feature yields `Unknown` unless the other operands force the result.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{FeatureMap, FeatureRegistry, WeatherCategory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuleError {
    #[error("syntax error at {line}:{column}: found {found}, expected {}", expected.join(" or "))]
    Syntax { line: usize, column: usize, found: String, expected: Vec<String> },
    #[error("unknown feature `{name}` at {line}:{column}")]
    UnknownFeature { line: usize, column: usize, name: String },
    #[error("duplicate rule id `{id}` at {line}:{column}")]
    DuplicateRuleId { line: usize, column: usize, id: String },
}

impl RuleError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            RuleError::Syntax { line, column, .. }
            | RuleError::UnknownFeature { line, column, .. }
            | RuleError::DuplicateRuleId { line, column, .. } => (*line, *column),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
        }
    }

    fn apply(self, lhs: f64, rhs: f64) -> bool {
        match self {
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    Compare { feature: String, op: CmpOp, value: f64 },
    Within { feature: String, lo: f64, hi: f64 },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
    Not(Box<Predicate>),
}

impl Predicate {
    pub fn cmp(feature: &str, op: CmpOp, value: f64) -> Self {
        Predicate::Compare { feature: feature.to_string(), op, value }
    }

    pub fn within(feature: &str, lo: f64, hi: f64) -> Self {
        Predicate::Within { feature: feature.to_string(), lo, hi }
    }

    pub fn and(self, other: Predicate) -> Self {
        Predicate::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Predicate) -> Self {
        Predicate::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Predicate::Not(Box::new(self))
    }

    /// Feature names referenced anywhere in the expression.
    pub fn features(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_features(&mut out);
        out
    }

    fn collect_features<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Predicate::Compare { feature, .. } | Predicate::Within { feature, .. } => {
                out.insert(feature);
            }
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                a.collect_features(out);
                b.collect_features(out);
            }
            Predicate::Not(a) => a.collect_features(out),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Predicate::Or(..) => 1,
            Predicate::And(..) => 2,
            _ => 3,
        }
    }

    fn render_into(&self, out: &mut String) {
        let child = |p: &Predicate, parens: bool, out: &mut String| {
            if parens {
                out.push('(');
                p.render_into(out);
                out.push(')');
            } else {
                p.render_into(out);
            }
        };
        match self {
            Predicate::Compare { feature, op, value } => {
                let _ = write!(out, "{feature} {} {}", op.symbol(), fmt_num(*value));
            }
            Predicate::Within { feature, lo, hi } => {
                let _ = write!(out, "{feature} IN [{}, {}]", fmt_num(*lo), fmt_num(*hi));
            }
            // both connectives parse left-associatively, so a right operand of
            // equal precedence needs parentheses
            Predicate::Or(a, b) => {
                child(a, a.precedence() < 1, out);
                out.push_str(" OR ");
                child(b, b.precedence() <= 1, out);
            }
            Predicate::And(a, b) => {
                child(a, a.precedence() < 2, out);
                out.push_str(" AND ");
                child(b, b.precedence() <= 2, out);
            }
            Predicate::Not(a) => {
                out.push_str("NOT ");
                child(a, true, out);
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.render_into(&mut s);
        f.write_str(&s)
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x}")
}

/// Three-valued truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tri {
    True,
    False,
    Unknown,
}

impl Tri {
    pub fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }

    pub fn negate(self) -> Tri {
        match self {
            Tri::True => Tri::False,
            Tri::False => Tri::True,
            Tri::Unknown => Tri::Unknown,
        }
    }

    pub fn is_true(self) -> bool {
        self == Tri::True
    }
}

impl From<bool> for Tri {
    fn from(b: bool) -> Self {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }
}

pub fn eval_predicate(p: &Predicate, features: &FeatureMap) -> Tri {
    let lookup = |name: &str| features.get(name).copied().filter(|v| !v.is_nan());
    match p {
        Predicate::Compare { feature, op, value } => match lookup(feature) {
            Some(x) => op.apply(x, *value).into(),
            None => Tri::Unknown,
        },
        Predicate::Within { feature, lo, hi } => match lookup(feature) {
            Some(x) => (x >= *lo && x <= *hi).into(),
            None => Tri::Unknown,
        },
        Predicate::And(a, b) => eval_predicate(a, features).and(eval_predicate(b, features)),
        Predicate::Or(a, b) => eval_predicate(a, features).or(eval_predicate(b, features)),
        Predicate::Not(a) => eval_predicate(a, features).negate(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Hypothesis,
    Necessary,
    Sufficient,
    Modifier,
}

impl Stage {
    pub fn keyword(self) -> &'static str {
        match self {
            Stage::Hypothesis => "HYPOTHESIS",
            Stage::Necessary => "NECESSARY",
            Stage::Sufficient => "SUFFICIENT",
            Stage::Modifier => "MODIFIER",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

/// Stage-specific payload of a rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RuleKind {
    Hypothesis {
        category: WeatherCategory,
        confidence: f64,
    },
    Necessary,
    Sufficient,
    /// Per-category multiplicative factors, all positive.
    Modifier {
        scale: BTreeMap<WeatherCategory, f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub kind: RuleKind,
    pub when: Predicate,
}

impl Rule {
    pub fn stage(&self) -> Stage {
        match self.kind {
            RuleKind::Hypothesis { .. } => Stage::Hypothesis,
            RuleKind::Necessary => Stage::Necessary,
            RuleKind::Sufficient => Stage::Sufficient,
            RuleKind::Modifier { .. } => Stage::Modifier,
        }
    }

    pub fn hypothesis(&self) -> Option<WeatherCategory> {
        match self.kind {
            RuleKind::Hypothesis { category, .. } => Some(category),
            _ => None,
        }
    }

    fn render_into(&self, out: &mut String) {
        out.push_str(self.stage().keyword());
        out.push(' ');
        out.push_str(&self.id);
        if let RuleKind::Hypothesis { category, .. } = &self.kind {
            let _ = write!(out, " FOR {category}");
        }
        out.push_str(" WHEN ");
        self.when.render_into(out);
        match &self.kind {
            RuleKind::Hypothesis { confidence, .. } => {
                let _ = write!(out, " CONFIDENCE {}", fmt_num(*confidence));
            }
            RuleKind::Modifier { scale } => {
                out.push_str(" SCALE {");
                for (i, (cat, factor)) in scale.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    let _ = write!(out, "{cat}: {}", fmt_num(*factor));
                }
                out.push('}');
            }
            _ => {}
        }
        out.push('\n');
    }
}

/// An ordered list of rules with unique ids. `source_hash` is the SHA-256
/// of the canonical rendering, so structurally equal sets hash equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    rules: Vec<Rule>,
    source_hash: String,
}

impl RuleSet {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RuleError> {
        let mut ids = BTreeSet::new();
        for r in &rules {
            if !ids.insert(r.id.as_str()) {
                return Err(RuleError::DuplicateRuleId { line: 0, column: 0, id: r.id.clone() });
            }
        }
        Ok(RuleSet::from_unique(rules))
    }

    fn from_unique(rules: Vec<Rule>) -> Self {
        let text = render_list(&rules);
        let source_hash = hex::encode(Sha256::digest(text.as_bytes()));
        RuleSet { rules, source_hash }
    }

    pub fn empty() -> Self {
        RuleSet::from_unique(Vec::new())
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn source_hash(&self) -> &str {
        &self.source_hash
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn by_stage(&self, stage: Stage) -> impl Iterator<Item = &Rule> {
        self.rules.iter().filter(move |r| r.stage() == stage)
    }
}

fn render_list(rules: &[Rule]) -> String {
    let mut out = String::new();
    for r in rules {
        r.render_into(&mut out);
    }
    out
}

/// Canonical text for a rule set; `parse_rules(render_rules(r))` equals `r`.
pub fn render_rules(rules: &RuleSet) -> String {
    render_list(&rules.rules)
}

/// Parses rule-language source. With a registry, every referenced feature
/// must be registered.
pub fn parse_rules(text: &str, registry: Option<&FeatureRegistry>) -> Result<RuleSet, RuleError> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0, registry };
    let mut rules = Vec::new();
    let mut ids = BTreeSet::new();
    while !p.at_eof() {
        let (rule, id_pos) = p.rule()?;
        if !ids.insert(rule.id.clone()) {
            return Err(RuleError::DuplicateRuleId { line: id_pos.0, column: id_pos.1, id: rule.id });
        }
        rules.push(rule);
    }
    Ok(RuleSet::from_unique(rules))
}

/// Parses a bare predicate expression (used for inhibition conditions).
pub fn parse_predicate(text: &str, registry: Option<&FeatureRegistry>) -> Result<Predicate, RuleError> {
    let tokens = lex(text)?;
    let mut p = Parser { tokens, pos: 0, registry };
    let pred = p.or_expr()?;
    if !p.at_eof() {
        return Err(p.unexpected(&["AND", "OR", "end of input"]));
    }
    Ok(pred)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Keyword {
    Hypothesis,
    Necessary,
    Sufficient,
    Modifier,
    For,
    When,
    Confidence,
    Scale,
    And,
    Or,
    Not,
    In,
}

impl Keyword {
    fn from_word(w: &str) -> Option<Keyword> {
        Some(match w {
            "HYPOTHESIS" => Keyword::Hypothesis,
            "NECESSARY" => Keyword::Necessary,
            "SUFFICIENT" => Keyword::Sufficient,
            "MODIFIER" => Keyword::Modifier,
            "FOR" => Keyword::For,
            "WHEN" => Keyword::When,
            "CONFIDENCE" => Keyword::Confidence,
            "SCALE" => Keyword::Scale,
            "AND" => Keyword::And,
            "OR" => Keyword::Or,
            "NOT" => Keyword::Not,
            "IN" => Keyword::In,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Kw(Keyword),
    Ident(String),
    Num(f64, String),
    Op(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    LBrace,
    RBrace,
    Comma,
    Colon,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Kw(k) => format!("keyword {}", format!("{k:?}").to_uppercase()),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Num(_, raw) => format!("number {raw}"),
            Tok::Op(op) => format!("`{}`", op.symbol()),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::LBracket => "`[`".into(),
            Tok::RBracket => "`]`".into(),
            Tok::LBrace => "`{`".into(),
            Tok::RBrace => "`}`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, RuleError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok: Tok| out.push(Spanned { tok, line: start_line, column: start_col });
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            col += i - start;
            match Keyword::from_word(&word) {
                Some(k) => push(&mut out, Tok::Kw(k)),
                None => push(&mut out, Tok::Ident(word)),
            }
            continue;
        }
        if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let raw: String = chars[start..i].iter().collect();
            col += i - start;
            let value: f64 = raw.parse().map_err(|_| RuleError::Syntax {
                line: start_line,
                column: start_col,
                found: format!("`{raw}`"),
                expected: vec!["number".into()],
            })?;
            push(&mut out, Tok::Num(value, raw));
            continue;
        }
        let two: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let (tok, width) = match (c, two.as_str()) {
            (_, "<=") => (Tok::Op(CmpOp::Le), 2),
            (_, ">=") => (Tok::Op(CmpOp::Ge), 2),
            ('<', _) => (Tok::Op(CmpOp::Lt), 1),
            ('>', _) => (Tok::Op(CmpOp::Gt), 1),
            ('=', _) => (Tok::Op(CmpOp::Eq), 1),
            ('≤', _) => (Tok::Op(CmpOp::Le), 1),
            ('≥', _) => (Tok::Op(CmpOp::Ge), 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('[', _) => (Tok::LBracket, 1),
            (']', _) => (Tok::RBracket, 1),
            ('{', _) => (Tok::LBrace, 1),
            ('}', _) => (Tok::RBrace, 1),
            (',', _) => (Tok::Comma, 1),
            (':', _) => (Tok::Colon, 1),
            _ => {
                return Err(RuleError::Syntax {
                    line,
                    column: col,
                    found: format!("character `{c}`"),
                    expected: vec!["a token".into()],
                })
            }
        };
        push(&mut out, tok);
        i += width;
        col += width;
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser<'r> {
    tokens: Vec<Spanned>,
    pos: usize,
    registry: Option<&'r FeatureRegistry>,
}

impl Parser<'_> {
    fn peek(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn at_eof(&self) -> bool {
        self.peek().tok == Tok::Eof
    }

    fn bump(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &[&str]) -> RuleError {
        let t = self.peek();
        RuleError::Syntax {
            line: t.line,
            column: t.column,
            found: t.tok.describe(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn invalid_at(t: &Spanned, expected: &str) -> RuleError {
        RuleError::Syntax { line: t.line, column: t.column, found: t.tok.describe(), expected: vec![expected.into()] }
    }

    fn keyword(&mut self, k: Keyword, name: &str) -> Result<(), RuleError> {
        if self.peek().tok == Tok::Kw(k) {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[name]))
        }
    }

    fn punct(&mut self, tok: Tok, name: &str) -> Result<(), RuleError> {
        if self.peek().tok == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(&[name]))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, (usize, usize)), RuleError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                let t = self.bump();
                Ok((s, (t.line, t.column)))
            }
            _ => Err(self.unexpected(&[what])),
        }
    }

    fn number(&mut self) -> Result<(f64, Spanned), RuleError> {
        match self.peek().tok {
            Tok::Num(v, _) => {
                let t = self.bump();
                Ok((v, t))
            }
            _ => Err(self.unexpected(&["number"])),
        }
    }

    fn category(&mut self) -> Result<WeatherCategory, RuleError> {
        const EXPECTED: &str = "category 0, 1 or 2";
        let (v, t) = self.number().map_err(|_| self.unexpected(&[EXPECTED]))?;
        match v {
            0.0 => Ok(WeatherCategory::Nonsignificant),
            1.0 => Ok(WeatherCategory::Significant),
            2.0 => Ok(WeatherCategory::Severe),
            _ => Err(Parser::invalid_at(&t, EXPECTED)),
        }
    }

    fn rule(&mut self) -> Result<(Rule, (usize, usize)), RuleError> {
        let stage = match self.peek().tok {
            Tok::Kw(Keyword::Hypothesis) => Stage::Hypothesis,
            Tok::Kw(Keyword::Necessary) => Stage::Necessary,
            Tok::Kw(Keyword::Sufficient) => Stage::Sufficient,
            Tok::Kw(Keyword::Modifier) => Stage::Modifier,
            _ => return Err(self.unexpected(&["HYPOTHESIS", "NECESSARY", "SUFFICIENT", "MODIFIER"])),
        };
        self.bump();
        let (id, id_pos) = self.ident("rule id")?;
        let category = if stage == Stage::Hypothesis {
            self.keyword(Keyword::For, "FOR")?;
            Some(self.category()?)
        } else {
            None
        };
        self.keyword(Keyword::When, "WHEN")?;
        let when = self.or_expr()?;
        let kind = match stage {
            Stage::Hypothesis => {
                self.keyword(Keyword::Confidence, "CONFIDENCE")?;
                let (c, t) = self.number()?;
                if !(c > 0.0 && c <= 1.0) {
                    return Err(Parser::invalid_at(&t, "confidence in (0, 1]"));
                }
                RuleKind::Hypothesis { category: category.expect("parsed above"), confidence: c }
            }
            Stage::Necessary => RuleKind::Necessary,
            Stage::Sufficient => RuleKind::Sufficient,
            Stage::Modifier => RuleKind::Modifier { scale: self.scale()? },
        };
        Ok((Rule { id, kind, when }, id_pos))
    }

    fn scale(&mut self) -> Result<BTreeMap<WeatherCategory, f64>, RuleError> {
        self.keyword(Keyword::Scale, "SCALE")?;
        self.punct(Tok::LBrace, "`{`")?;
        let mut scale = BTreeMap::new();
        loop {
            let cat_tok = self.peek().clone();
            let cat = self.category()?;
            self.punct(Tok::Colon, "`:`")?;
            let (factor, t) = self.number()?;
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Parser::invalid_at(&t, "positive scale factor"));
            }
            if scale.insert(cat, factor).is_some() {
                return Err(Parser::invalid_at(&cat_tok, "a category not already scaled"));
            }
            match self.peek().tok {
                Tok::Comma => {
                    self.bump();
                }
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                _ => return Err(self.unexpected(&["`,`", "`}`"])),
            }
        }
        Ok(scale)
    }

    fn or_expr(&mut self) -> Result<Predicate, RuleError> {
        let mut lhs = self.and_expr()?;
        while self.peek().tok == Tok::Kw(Keyword::Or) {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Predicate::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Predicate, RuleError> {
        let mut lhs = self.unary()?;
        while self.peek().tok == Tok::Kw(Keyword::And) {
            self.bump();
            let rhs = self.unary()?;
            lhs = Predicate::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Predicate, RuleError> {
        match self.peek().tok {
            Tok::Kw(Keyword::Not) => {
                self.bump();
                Ok(Predicate::Not(Box::new(self.unary()?)))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.or_expr()?;
                self.punct(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(_) => self.atom(),
            _ => Err(self.unexpected(&["feature name", "NOT", "`(`"])),
        }
    }

    fn atom(&mut self) -> Result<Predicate, RuleError> {
        let (feature, (line, column)) = self.ident("feature name")?;
        if let Some(reg) = self.registry {
            if !reg.contains(&feature) {
                return Err(RuleError::UnknownFeature { line, column, name: feature });
            }
        }
        match self.peek().tok {
            Tok::Op(op) => {
                self.bump();
                let (value, _) = self.number()?;
                Ok(Predicate::Compare { feature, op, value })
            }
            Tok::Kw(Keyword::In) => {
                self.bump();
                self.punct(Tok::LBracket, "`[`")?;
                let (lo, _) = self.number()?;
                self.punct(Tok::Comma, "`,`")?;
                let (hi, hi_tok) = self.number()?;
                if lo > hi {
                    return Err(Parser::invalid_at(&hi_tok, "upper bound >= lower bound"));
                }
                self.punct(Tok::RBracket, "`]`")?;
                Ok(Predicate::Within { feature, lo, hi })
            }
            _ => Err(self.unexpected(&["comparison operator", "IN"])),
        }
    }
}
