//! Decision-rule induction and hierarchical interviews.
//!
//! Trees are grown with ID3: each node splits on the attribute with the
//! largest information gain. Numeric attributes get a binary threshold at the
//! midpoint between consecutive distinct values (`x <= t` goes left).
//! Modules each own one tree; an attribute named after another module is
//! answered by evaluating that module, which makes the modules a hierarchy.
//! [`interview`] walks the hierarchy lazily and only asks for inputs on the
//! realized path.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gains at or below this are treated as zero.
const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum InductError {
    #[error("entropy of an empty count set")]
    EmptyCounts,
    #[error("no attribute yields positive information gain")]
    NoInformativeSplit,
    #[error("no answer available for `{0}`")]
    UnansweredCritical(String),
    #[error("attribute `{attribute}` expects a {expected} value, got `{found}`")]
    WrongValueKind { attribute: String, expected: &'static str, found: String },
    #[error("invalid example set: {0}")]
    InvalidExamples(String),
    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),
    #[error("tree text line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttrKind {
    Categorical,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub kind: AttrKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Cat(String),
    Num(f64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Cat(s) => f.write_str(s),
            Value::Num(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub values: Vec<Value>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleSet {
    pub attributes: Vec<Attribute>,
    pub rows: Vec<Example>,
}

impl ExampleSet {
    pub fn new(attributes: Vec<Attribute>, rows: Vec<Example>) -> Result<Self, InductError> {
        for (i, row) in rows.iter().enumerate() {
            if row.values.len() != attributes.len() {
                return Err(InductError::InvalidExamples(format!(
                    "row {i} has {} values for {} attributes",
                    row.values.len(),
                    attributes.len()
                )));
            }
            for (a, v) in attributes.iter().zip(&row.values) {
                let ok =
                    matches!((a.kind, v), (AttrKind::Categorical, Value::Cat(_)) | (AttrKind::Numeric, Value::Num(_)));
                if !ok {
                    return Err(InductError::InvalidExamples(format!("row {i}: wrong value kind for `{}`", a.name)));
                }
            }
            if row.label.is_empty() {
                return Err(InductError::InvalidExamples(format!("row {i} has no class label")));
            }
        }
        Ok(ExampleSet { attributes, rows })
    }

    /// Reads a CSV whose column named `class_column` holds labels. Columns
    /// whose every value parses as a number are numeric.
    pub fn from_csv<R: Read>(reader: R, class_column: &str) -> Result<Self, InductError> {
        let bad = |m: String| InductError::InvalidExamples(m);
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let class_idx =
            headers.iter().position(|h| h == class_column).ok_or_else(|| bad(format!("no `{class_column}` column")))?;
        let records: Vec<csv::StringRecord> =
            rdr.records().collect::<Result<_, _>>().map_err(|e| bad(e.to_string()))?;
        let attr_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != class_idx).collect();
        let attributes: Vec<Attribute> = attr_cols
            .iter()
            .map(|&i| {
                let numeric = !records.is_empty() && records.iter().all(|r| r[i].parse::<f64>().is_ok());
                Attribute {
                    name: headers[i].to_string(),
                    kind: if numeric { AttrKind::Numeric } else { AttrKind::Categorical },
                }
            })
            .collect();
        let rows = records
            .iter()
            .map(|r| Example {
                values: attr_cols
                    .iter()
                    .zip(&attributes)
                    .map(|(&i, a)| match a.kind {
                        AttrKind::Numeric => Value::Num(r[i].parse().expect("checked numeric")),
                        AttrKind::Categorical => Value::Cat(r[i].to_string()),
                    })
                    .collect(),
                label: r[class_idx].to_string(),
            })
            .collect();
        ExampleSet::new(attributes, rows)
    }

    fn attr_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

/// Shannon entropy in bits.
pub fn entropy<I: IntoIterator<Item = usize>>(counts: I) -> Result<f64, InductError> {
    let counts: Vec<usize> = counts.into_iter().collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(InductError::EmptyCounts);
    }
    let n = total as f64;
    Ok(counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum())
}

fn label_counts<'a>(rows: impl IntoIterator<Item = &'a Example>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in rows {
        *counts.entry(r.label.clone()).or_insert(0) += 1;
    }
    counts
}

fn entropy_of(rows: &[&Example]) -> f64 {
    entropy(label_counts(rows.iter().copied()).into_values()).unwrap_or(0.0)
}

/// Result of [`best_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub attribute: String,
    pub threshold: Option<f64>,
    pub gain: f64,
}

fn numeric_thresholds(rows: &[&Example], idx: usize) -> Vec<f64> {
    let mut xs: Vec<f64> = rows
        .iter()
        .filter_map(|r| match r.values[idx] {
            Value::Num(x) => Some(x),
            _ => None,
        })
        .collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn weighted_child_entropy<'a>(groups: impl Iterator<Item = &'a Vec<&'a Example>>, n: f64) -> f64 {
    groups.filter(|g| !g.is_empty()).map(|g| g.len() as f64 / n * entropy_of(g)).sum()
}

fn split_gain(rows: &[&Example], idx: usize, kind: AttrKind, parent: f64) -> (Option<f64>, f64) {
    let n = rows.len() as f64;
    match kind {
        AttrKind::Categorical => {
            let mut groups: BTreeMap<&str, Vec<&Example>> = BTreeMap::new();
            for r in rows {
                if let Value::Cat(v) = &r.values[idx] {
                    groups.entry(v.as_str()).or_default().push(r);
                }
            }
            (None, parent - weighted_child_entropy(groups.values(), n))
        }
        AttrKind::Numeric => {
            let mut best: Option<(f64, f64)> = None;
            for t in numeric_thresholds(rows, idx) {
                let (lo, hi): (Vec<&Example>, Vec<&Example>) =
                    rows.iter().partition(|r| matches!(r.values[idx], Value::Num(x) if x <= t));
                let gain = parent - weighted_child_entropy([lo, hi].iter(), n);
                if best.is_none_or(|(_, g)| gain > g + GAIN_EPS) {
                    best = Some((t, gain));
                }
            }
            match best {
                Some((t, g)) => (Some(t), g),
                None => (None, 0.0),
            }
        }
    }
}

fn best_split_rows(attributes: &[Attribute], rows: &[&Example], candidates: &[String]) -> Result<Split, InductError> {
    let parent = entropy_of(rows);
    let mut best: Option<Split> = None;
    for name in candidates {
        let Some(idx) = attributes.iter().position(|a| &a.name == name) else {
            continue;
        };
        let (threshold, gain) = split_gain(rows, idx, attributes[idx].kind, parent);
        if best.as_ref().is_none_or(|b| gain > b.gain + GAIN_EPS) {
            best = Some(Split { attribute: name.clone(), threshold, gain });
        }
    }
    match best {
        Some(s) if s.gain > GAIN_EPS => Ok(Split { gain: s.gain.max(0.0), ..s }),
        _ => Err(InductError::NoInformativeSplit),
    }
}

/// The information-gain-maximizing split among `candidates`. Ties go to the
/// earlier candidate (and, within a numeric attribute, the lower threshold).
pub fn best_split(examples: &ExampleSet, candidates: &[String]) -> Result<Split, InductError> {
    let rows: Vec<&Example> = examples.rows.iter().collect();
    best_split_rows(&examples.attributes, &rows, candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        label: String,
        counts: BTreeMap<String, usize>,
    },
    Categorical {
        attribute: String,
        branches: BTreeMap<String, Node>,
        /// Label for values not seen in training.
        default: String,
    },
    Threshold {
        attribute: String,
        threshold: f64,
        below: Box<Node>,
        above: Box<Node>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub root: Node,
}

/// Most frequent label; ties go to the smallest label.
fn majority(counts: &BTreeMap<String, usize>) -> String {
    let mut best: Option<(&String, usize)> = None;
    for (label, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((label, c));
        }
    }
    best.map(|(l, _)| l.clone()).unwrap_or_default()
}

fn grow(attributes: &[Attribute], rows: &[&Example], candidates: &[String]) -> Node {
    let counts = label_counts(rows.iter().copied());
    if counts.len() <= 1 || candidates.is_empty() {
        return Node::Leaf { label: majority(&counts), counts };
    }
    let Ok(split) = best_split_rows(attributes, rows, candidates) else {
        return Node::Leaf { label: majority(&counts), counts };
    };
    let idx = attributes.iter().position(|a| a.name == split.attribute).expect("candidate exists");
    match split.threshold {
        Some(t) => {
            let (lo, hi): (Vec<&Example>, Vec<&Example>) =
                rows.iter().partition(|r| matches!(r.values[idx], Value::Num(x) if x <= t));
            Node::Threshold {
                attribute: split.attribute,
                threshold: t,
                below: Box::new(grow(attributes, &lo, candidates)),
                above: Box::new(grow(attributes, &hi, candidates)),
            }
        }
        None => {
            let remaining: Vec<String> = candidates.iter().filter(|c| **c != split.attribute).cloned().collect();
            let mut groups: BTreeMap<String, Vec<&Example>> = BTreeMap::new();
            for r in rows {
                if let Value::Cat(v) = &r.values[idx] {
                    groups.entry(v.clone()).or_default().push(r);
                }
            }
            let branches = groups.into_iter().map(|(v, g)| (v, grow(attributes, &g, &remaining))).collect();
            Node::Categorical { attribute: split.attribute, branches, default: majority(&counts) }
        }
    }
}

/// Grows an unpruned ID3 tree over all attributes.
pub fn induce_tree(examples: &ExampleSet) -> DecisionTree {
    let rows: Vec<&Example> = examples.rows.iter().collect();
    let candidates: Vec<String> = examples.attributes.iter().map(|a| a.name.clone()).collect();
    DecisionTree { root: grow(&examples.attributes, &rows, &candidates) }
}

impl DecisionTree {
    pub fn leaf(label: &str) -> Self {
        DecisionTree { root: Node::Leaf { label: label.to_string(), counts: BTreeMap::new() } }
    }

    /// Classifies by querying attribute values on demand.
    pub fn classify_with<F>(&self, mut lookup: F) -> Result<String, InductError>
    where
        F: FnMut(&str) -> Result<Value, InductError>,
    {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { label, .. } => return Ok(label.clone()),
                Node::Categorical { attribute, branches, default } => {
                    let v = match lookup(attribute)? {
                        Value::Cat(s) => s,
                        Value::Num(x) => x.to_string(),
                    };
                    match branches.get(&v) {
                        Some(child) => node = child,
                        None => return Ok(default.clone()),
                    }
                }
                Node::Threshold { attribute, threshold, below, above } => {
                    let x = match lookup(attribute)? {
                        Value::Num(x) => x,
                        Value::Cat(s) => s.trim().parse::<f64>().map_err(|_| InductError::WrongValueKind {
                            attribute: attribute.clone(),
                            expected: "numeric",
                            found: s.clone(),
                        })?,
                    };
                    node = if x <= *threshold { below } else { above };
                }
            }
        }
    }

    pub fn classify_example(&self, examples: &ExampleSet, row: &Example) -> Result<String, InductError> {
        self.classify_with(|name| {
            examples
                .attr_index(name)
                .map(|i| row.values[i].clone())
                .ok_or_else(|| InductError::UnansweredCritical(name.to_string()))
        })
    }

    /// Attribute names tested anywhere in the tree.
    pub fn attributes(&self) -> BTreeSet<String> {
        fn walk(n: &Node, out: &mut BTreeSet<String>) {
            match n {
                Node::Leaf { .. } => {}
                Node::Categorical { attribute, branches, .. } => {
                    out.insert(attribute.clone());
                    branches.values().for_each(|c| walk(c, out));
                }
                Node::Threshold { attribute, below, above, .. } => {
                    out.insert(attribute.clone());
                    walk(below, out);
                    walk(above, out);
                }
            }
        }
        let mut out = BTreeSet::new();
        walk(&self.root, &mut out);
        out
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Categorical { branches, .. } => 1 + branches.values().map(d).max().unwrap_or(0),
                Node::Threshold { below, above, .. } => 1 + d(below).max(d(above)),
            }
        }
        d(&self.root)
    }
}

// ---------------------------------------------------------------------------
// Text format
//
//   leaf <label> {<label>:<n>,...}
//   cat <attribute> default <label>
//     [<value>] <child node>
//   num <attribute> <threshold>
//     [<=] <child node>
//     [>] <child node>
//
// Children are indented two spaces deeper than their parent. Names and
// values are single tokens without whitespace or any of `[]{}:,`.

fn check_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || "[]{}:,".contains(c))
}

fn write_node(node: &Node, depth: usize, prefix: &str, out: &mut String) -> Result<(), InductError> {
    let pad = "  ".repeat(depth);
    let bad = |s: &str| InductError::Parse { line: 0, message: format!("`{s}` cannot be written as a token") };
    match node {
        Node::Leaf { label, counts } => {
            if !check_token(label) {
                return Err(bad(label));
            }
            let counts: Vec<String> = counts.iter().map(|(l, c)| format!("{l}:{c}")).collect();
            let _ = writeln!(out, "{pad}{prefix}leaf {label} {{{}}}", counts.join(","));
        }
        Node::Categorical { attribute, branches, default } => {
            for s in [attribute, default] {
                if !check_token(s) {
                    return Err(bad(s));
                }
            }
            let _ = writeln!(out, "{pad}{prefix}cat {attribute} default {default}");
            for (v, child) in branches {
                if !check_token(v) {
                    return Err(bad(v));
                }
                write_node(child, depth + 1, &format!("[{v}] "), out)?;
            }
        }
        Node::Threshold { attribute, threshold, below, above } => {
            if !check_token(attribute) {
                return Err(bad(attribute));
            }
            let _ = writeln!(out, "{pad}{prefix}num {attribute} {threshold}");
            write_node(below, depth + 1, "[<=] ", out)?;
            write_node(above, depth + 1, "[>] ", out)?;
        }
    }
    Ok(())
}

impl DecisionTree {
    pub fn to_text(&self) -> Result<String, InductError> {
        let mut out = String::new();
        write_node(&self.root, 0, "", &mut out)?;
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, InductError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .collect();
        let mut pos = 0;
        let root = parse_node(&lines, &mut pos, 0)?.1;
        if let Some((line, _)) = lines.get(pos) {
            return Err(InductError::Parse { line: *line, message: "trailing content after tree".into() });
        }
        Ok(DecisionTree { root })
    }
}

fn indent_of(line: &str) -> usize {
    (line.len() - line.trim_start_matches(' ').len()) / 2
}

fn parse_node(lines: &[(usize, &str)], pos: &mut usize, depth: usize) -> Result<(Option<String>, Node), InductError> {
    let &(line_no, raw) =
        lines.get(*pos).ok_or(InductError::Parse { line: 0, message: "unexpected end of tree".into() })?;
    let err = |message: String| InductError::Parse { line: line_no, message };
    if indent_of(raw) != depth {
        return Err(err(format!("expected indentation depth {depth}")));
    }
    *pos += 1;
    let mut body = raw.trim();
    let mut edge = None;
    if let Some(rest) = body.strip_prefix('[') {
        let close = rest.find(']').ok_or_else(|| err("unterminated `[`".into()))?;
        edge = Some(rest[..close].to_string());
        body = rest[close + 1..].trim_start();
    }
    let toks: Vec<&str> = body.split_whitespace().collect();
    let node = match toks.as_slice() {
        ["leaf", label, counts] => {
            let inner = counts
                .strip_prefix('{')
                .and_then(|c| c.strip_suffix('}'))
                .ok_or_else(|| err("counts must be in braces".into()))?;
            let mut map = BTreeMap::new();
            for part in inner.split(',').filter(|p| !p.is_empty()) {
                let (l, c) = part.split_once(':').ok_or_else(|| err(format!("bad count `{part}`")))?;
                map.insert(l.to_string(), c.parse().map_err(|_| err(format!("bad count `{part}`")))?);
            }
            Node::Leaf { label: label.to_string(), counts: map }
        }
        ["leaf", label] => Node::Leaf { label: label.to_string(), counts: BTreeMap::new() },
        ["cat", attribute, "default", default] => {
            let mut branches = BTreeMap::new();
            while lines.get(*pos).is_some_and(|(_, l)| indent_of(l) == depth + 1) {
                let (value, child) = parse_node(lines, pos, depth + 1)?;
                let value = value.ok_or_else(|| err("categorical child needs a [value] edge".into()))?;
                branches.insert(value, child);
            }
            Node::Categorical { attribute: attribute.to_string(), branches, default: default.to_string() }
        }
        ["num", attribute, threshold] => {
            let threshold: f64 = threshold.parse().map_err(|_| err(format!("bad threshold `{threshold}`")))?;
            let (e1, below) = parse_node(lines, pos, depth + 1)?;
            let (e2, above) = parse_node(lines, pos, depth + 1)?;
            if e1.as_deref() != Some("<=") || e2.as_deref() != Some(">") {
                return Err(err("numeric node needs [<=] then [>] children".into()));
            }
            Node::Threshold {
                attribute: attribute.to_string(),
                threshold,
                below: Box::new(below),
                above: Box::new(above),
            }
        }
        _ => return Err(err(format!("cannot parse `{body}`"))),
    };
    Ok((edge, node))
}

// ---------------------------------------------------------------------------
// Hierarchy

/// Immediate answer when a critical input is unfavorable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalFactor {
    pub attribute: String,
    pub unfavorable: BTreeSet<String>,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Module {
    pub name: String,
    pub tree: DecisionTree,
    pub critical: Option<CriticalFactor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleHierarchy {
    modules: BTreeMap<String, Module>,
    root: String,
}

impl ModuleHierarchy {
    pub fn new(modules: Vec<Module>, root: &str) -> Result<Self, InductError> {
        let mut map = BTreeMap::new();
        for m in modules {
            let name = m.name.clone();
            if map.insert(name.clone(), m).is_some() {
                return Err(InductError::InvalidHierarchy(format!("duplicate module `{name}`")));
            }
        }
        if !map.contains_key(root) {
            return Err(InductError::InvalidHierarchy(format!("root module `{root}` not defined")));
        }
        let h = ModuleHierarchy { modules: map, root: root.to_string() };
        h.check_acyclic()?;
        Ok(h)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn modules(&self) -> impl Iterator<Item = &Module> {
        self.modules.values()
    }

    pub fn module(&self, name: &str) -> Option<&Module> {
        self.modules.get(name)
    }

    /// Modules whose outputs `name` consumes.
    pub fn children(&self, name: &str) -> Vec<&str> {
        let Some(m) = self.modules.get(name) else {
            return Vec::new();
        };
        let mut attrs = m.tree.attributes();
        if let Some(c) = &m.critical {
            attrs.insert(c.attribute.clone());
        }
        attrs.iter().filter_map(|a| self.modules.get_key_value(a).map(|(k, _)| k.as_str())).collect()
    }

    fn check_acyclic(&self) -> Result<(), InductError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Active,
            Done,
        }
        fn visit<'a>(
            h: &'a ModuleHierarchy,
            n: &'a str,
            marks: &mut BTreeMap<&'a str, Mark>,
        ) -> Result<(), InductError> {
            match marks.get(n) {
                Some(Mark::Done) => return Ok(()),
                Some(Mark::Active) => return Err(InductError::InvalidHierarchy(format!("cycle through module `{n}`"))),
                None => {}
            }
            marks.insert(n, Mark::Active);
            for c in h.children(n) {
                visit(h, c, marks)?;
            }
            marks.insert(n, Mark::Done);
            Ok(())
        }
        let mut marks = BTreeMap::new();
        for name in self.modules.keys() {
            visit(self, name, &mut marks)?;
        }
        Ok(())
    }

    /// Every question (non-module attribute) any module could ask.
    pub fn all_questions(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for m in self.modules.values() {
            let mut attrs = m.tree.attributes();
            if let Some(c) = &m.critical {
                attrs.insert(c.attribute.clone());
            }
            out.extend(attrs.into_iter().filter(|a| !self.modules.contains_key(a)));
        }
        out
    }

    pub fn to_text(&self) -> Result<String, InductError> {
        let mut out = format!("hierarchy root {}\n", self.root);
        for m in self.modules.values() {
            let _ = writeln!(out, "module {}", m.name);
            if let Some(c) = &m.critical {
                let vals: Vec<&str> = c.unfavorable.iter().map(String::as_str).collect();
                let _ = writeln!(out, "critical {} {{{}}} {}", c.attribute, vals.join(","), c.class);
            }
            out.push_str(&m.tree.to_text()?);
            out.push_str("end\n");
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, InductError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut root = None;
        let mut modules = Vec::new();
        while let Some((no, line)) = lines.next() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let err = |m: String| InductError::Parse { line: no, message: m };
            let toks: Vec<&str> = t.split_whitespace().collect();
            match toks.as_slice() {
                ["hierarchy", "root", r] => root = Some(r.to_string()),
                ["module", name] => {
                    let mut critical = None;
                    let mut body = String::new();
                    let mut first_line = None;
                    loop {
                        let (n, l) = lines.next().ok_or_else(|| err(format!("module `{name}` missing `end`")))?;
                        let lt = l.trim();
                        if lt == "end" {
                            break;
                        }
                        if let Some(rest) = lt.strip_prefix("critical ") {
                            let ctoks: Vec<&str> = rest.split_whitespace().collect();
                            let [attr, vals, class] = ctoks.as_slice() else {
                                return Err(InductError::Parse {
                                    line: n,
                                    message: "critical <attr> {v,..} <class>".into(),
                                });
                            };
                            let inner = vals
                                .strip_prefix('{')
                                .and_then(|v| v.strip_suffix('}'))
                                .ok_or(InductError::Parse { line: n, message: "values must be in braces".into() })?;
                            critical = Some(CriticalFactor {
                                attribute: attr.to_string(),
                                unfavorable: inner.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect(),
                                class: class.to_string(),
                            });
                            continue;
                        }
                        first_line.get_or_insert(n);
                        body.push_str(l);
                        body.push('\n');
                    }
                    let offset = first_line.unwrap_or(no) - 1;
                    let tree = DecisionTree::from_text(&body).map_err(|e| match e {
                        InductError::Parse { line, message } => InductError::Parse { line: line + offset, message },
                        other => other,
                    })?;
                    modules.push(Module { name: name.to_string(), tree, critical });
                }
                _ => return Err(err(format!("unexpected `{t}`"))),
            }
        }
        let root = root.ok_or(InductError::Parse { line: 1, message: "missing `hierarchy root <name>`".into() })?;
        ModuleHierarchy::new(modules, &root)
    }
}

/// What the question source returns.
#[derive(Debug, Clone, PartialEq)]
pub enum OracleAnswer {
    Answer(Value),
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TrailStep {
    Asked { question: String, answer: String },
    Entered { module: String },
    ShortCircuit { module: String, attribute: String, class: String },
    Concluded { module: String, class: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterviewOutcome {
    pub label: String,
    pub questions_asked: u32,
    pub trail: Vec<TrailStep>,
}

struct Interview<'h, F> {
    h: &'h ModuleHierarchy,
    oracle: F,
    answers: BTreeMap<String, Value>,
    outputs: BTreeMap<String, String>,
    trail: Vec<TrailStep>,
}

impl<F: FnMut(&str) -> OracleAnswer> Interview<'_, F> {
    fn value(&mut self, attribute: &str) -> Result<Value, InductError> {
        if self.h.modules.contains_key(attribute) {
            return Ok(Value::Cat(self.run_module(attribute)?));
        }
        if let Some(v) = self.answers.get(attribute) {
            return Ok(v.clone());
        }
        match (self.oracle)(attribute) {
            OracleAnswer::Answer(v) => {
                self.trail.push(TrailStep::Asked { question: attribute.to_string(), answer: v.to_string() });
                self.answers.insert(attribute.to_string(), v.clone());
                Ok(v)
            }
            OracleAnswer::Unavailable => Err(InductError::UnansweredCritical(attribute.to_string())),
        }
    }

    fn run_module(&mut self, name: &str) -> Result<String, InductError> {
        if let Some(out) = self.outputs.get(name) {
            return Ok(out.clone());
        }
        let h = self.h;
        let module = &h.modules[name];
        self.trail.push(TrailStep::Entered { module: name.to_string() });
        if let Some(c) = &module.critical {
            let v = self.value(&c.attribute)?;
            if c.unfavorable.contains(&v.to_string()) {
                self.trail.push(TrailStep::ShortCircuit {
                    module: name.to_string(),
                    attribute: c.attribute.clone(),
                    class: c.class.clone(),
                });
                self.outputs.insert(name.to_string(), c.class.clone());
                return Ok(c.class.clone());
            }
        }
        let class = module.tree.classify_with(|a| self.value(a))?;
        self.trail.push(TrailStep::Concluded { module: name.to_string(), class: class.clone() });
        self.outputs.insert(name.to_string(), class.clone());
        Ok(class)
    }
}

/// Evaluates the hierarchy from the root, asking `oracle` only for inputs on
/// the realized path. Each distinct question is asked at most once.
pub fn interview<F>(h: &ModuleHierarchy, oracle: F) -> Result<InterviewOutcome, InductError>
where
    F: FnMut(&str) -> OracleAnswer,
{
    let mut iv = Interview { h, oracle, answers: BTreeMap::new(), outputs: BTreeMap::new(), trail: Vec::new() };
    let label = iv.run_module(&h.root)?;
    Ok(InterviewOutcome { label, questions_asked: iv.answers.len() as u32, trail: iv.trail })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(s: &str) -> Value {
        Value::Cat(s.into())
    }

    fn set(attrs: &[(&str, AttrKind)], rows: &[(&[Value], &str)]) -> ExampleSet {
        ExampleSet::new(
            attrs.iter().map(|(n, k)| Attribute { name: n.to_string(), kind: *k }).collect(),
            rows.iter().map(|(v, l)| Example { values: v.to_vec(), label: l.to_string() }).collect(),
        )
        .unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy([4]).unwrap(), 0.0);
        assert!((entropy([2, 2]).unwrap() - 1.0).abs() < 1e-15);
        // -(9/14) log2(9/14) - (5/14) log2(5/14)
        assert!((entropy([9, 5]).unwrap() - 0.9403).abs() < 1e-4);
        assert_eq!(entropy([0, 0]), Err(InductError::EmptyCounts));
    }

    #[test]
    fn perfect_and_constant_attributes() {
        use AttrKind::*;
        let ex = set(
            &[("k", Categorical), ("good", Categorical)],
            &[
                (&[cat("c"), cat("x")], "A"),
                (&[cat("c"), cat("x")], "A"),
                (&[cat("c"), cat("y")], "B"),
                (&[cat("c"), cat("y")], "B"),
            ],
        );
        let s = best_split(&ex, &["k".into(), "good".into()]).unwrap();
        assert_eq!(s.attribute, "good");
        assert!((s.gain - 1.0).abs() < 1e-15);
        assert_eq!(best_split(&ex, &["k".into()]), Err(InductError::NoInformativeSplit));
    }

    #[test]
    fn numeric_threshold_is_midpoint() {
        let ex = set(
            &[("x", AttrKind::Numeric)],
            &[(&[Value::Num(1.0)], "a"), (&[Value::Num(2.0)], "a"), (&[Value::Num(4.0)], "b")],
        );
        let s = best_split(&ex, &["x".into()]).unwrap();
        assert_eq!(s.threshold, Some(3.0));
    }

    #[test]
    fn single_class_is_a_leaf() {
        let ex = set(&[("x", AttrKind::Numeric)], &[(&[Value::Num(1.0)], "a"), (&[Value::Num(2.0)], "a")]);
        let t = induce_tree(&ex);
        assert!(matches!(t.root, Node::Leaf { ref label, .. } if label == "a"));
    }

    #[test]
    fn contradictory_rows_take_majority_with_low_tie_break() {
        let ex = set(
            &[("m", AttrKind::Categorical)],
            &[
                (&[cat("wet")], "2"),
                (&[cat("wet")], "2"),
                (&[cat("wet")], "1"),
                (&[cat("dry")], "1"),
                (&[cat("dry")], "0"),
            ],
        );
        let t = induce_tree(&ex);
        let Node::Categorical { branches, .. } = &t.root else { panic!("expected split") };
        assert!(matches!(&branches["wet"], Node::Leaf { label, .. } if label == "2"));
        assert!(matches!(&branches["dry"], Node::Leaf { label, .. } if label == "0"));
    }

    #[test]
    fn tree_text_roundtrip() {
        let ex = set(
            &[("m", AttrKind::Categorical), ("x", AttrKind::Numeric)],
            &[
                (&[cat("wet"), Value::Num(1.0)], "1"),
                (&[cat("wet"), Value::Num(3.0)], "2"),
                (&[cat("dry"), Value::Num(2.0)], "0"),
                (&[cat("dry"), Value::Num(5.0)], "0"),
            ],
        );
        let t = induce_tree(&ex);
        let text = t.to_text().unwrap();
        assert_eq!(DecisionTree::from_text(&text).unwrap(), t);
    }

    #[test]
    fn bad_tree_text_reports_line() {
        let text = "num x 1.5\n  [<=] leaf a {a:1}\n  [>] bogus\n";
        assert!(matches!(DecisionTree::from_text(text), Err(InductError::Parse { line: 3, .. })));
    }

    fn cat_node(attr: &str, branches: &[(&str, Node)], default: &str) -> Node {
        Node::Categorical {
            attribute: attr.into(),
            branches: branches.iter().map(|(v, n)| (v.to_string(), n.clone())).collect(),
            default: default.into(),
        }
    }

    fn leaf(l: &str) -> Node {
        Node::Leaf { label: l.into(), counts: BTreeMap::new() }
    }

    fn oracle<'a>(answers: &'a [(&'a str, &'a str)]) -> impl FnMut(&str) -> OracleAnswer + 'a {
        move |q| {
            answers
                .iter()
                .find(|(k, _)| *k == q)
                .map(|(_, v)| OracleAnswer::Answer(cat(v)))
                .unwrap_or(OracleAnswer::Unavailable)
        }
    }

    fn sample_hierarchy() -> ModuleHierarchy {
        // root: q1 -> q2 -> child module -> (q4, q5); q3 on another branch
        let root = Module {
            name: "root".into(),
            tree: DecisionTree {
                root: cat_node(
                    "q1",
                    &[
                        (
                            "a",
                            cat_node(
                                "q2",
                                &[("a", cat_node("child", &[("hi", leaf("2")), ("lo", leaf("1"))], "0"))],
                                "0",
                            ),
                        ),
                        ("b", cat_node("q3", &[("a", leaf("1"))], "0")),
                    ],
                    "0",
                ),
            },
            critical: Some(CriticalFactor {
                attribute: "moisture".into(),
                unfavorable: ["dry".to_string()].into(),
                class: "0".into(),
            }),
        };
        let child = Module {
            name: "child".into(),
            tree: DecisionTree { root: cat_node("q4", &[("a", cat_node("q5", &[("a", leaf("hi"))], "lo"))], "lo") },
            critical: None,
        };
        ModuleHierarchy::new(vec![root, child], "root").unwrap()
    }

    #[test]
    fn short_circuit_after_one_question() {
        let h = sample_hierarchy();
        let out = interview(&h, oracle(&[("moisture", "dry")])).unwrap();
        assert_eq!(out.label, "0");
        assert_eq!(out.questions_asked, 1);
    }

    #[test]
    fn single_leaf_asks_nothing() {
        let h =
            ModuleHierarchy::new(vec![Module { name: "r".into(), tree: DecisionTree::leaf("1"), critical: None }], "r")
                .unwrap();
        let out = interview(&h, oracle(&[])).unwrap();
        assert_eq!((out.label.as_str(), out.questions_asked), ("1", 0));
    }

    #[test]
    fn lazy_path_counts_distinct_queries() {
        let h = sample_hierarchy();
        let answers = [("moisture", "moist"), ("q1", "a"), ("q2", "a"), ("q3", "a"), ("q4", "a"), ("q5", "a")];
        let out = interview(&h, oracle(&answers)).unwrap();
        assert_eq!(out.label, "2");
        // moisture, q1, q2 on the root path; q4, q5 inside `child`; q3 never reached
        assert_eq!(out.questions_asked, 5);
        assert!(out.questions_asked as usize <= h.all_questions().len());
    }

    #[test]
    fn missing_answer_on_path_is_an_error() {
        let h = sample_hierarchy();
        let err = interview(&h, oracle(&[("moisture", "moist"), ("q1", "a")])).unwrap_err();
        assert_eq!(err, InductError::UnansweredCritical("q2".into()));
    }

    #[test]
    fn cycles_are_rejected() {
        let a = Module { name: "a".into(), tree: DecisionTree { root: cat_node("b", &[], "0") }, critical: None };
        let b = Module { name: "b".into(), tree: DecisionTree { root: cat_node("a", &[], "0") }, critical: None };
        assert!(matches!(ModuleHierarchy::new(vec![a, b], "a"), Err(InductError::InvalidHierarchy(_))));
    }

    #[test]
    fn hierarchy_text_roundtrip() {
        let h = sample_hierarchy();
        let text = h.to_text().unwrap();
        assert_eq!(ModuleHierarchy::from_text(&text).unwrap(), h);
    }
}
