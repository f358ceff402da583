//! Binary decision trees with gain-ratio splits, and rule extraction from their leaves.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::io::csv_reader;

/// Gains below this are treated as zero.
const GAIN_EPS: f64 = 1e-12;
/// A subtree is collapsed unless it beats the leaf by more than this many estimated errors.
const PRUNE_SLACK: f64 = 0.1;

/// Thresholds reported for the reference trip-rule conditions, used only for comparison output.
pub const REFERENCE_THRESHOLDS: [(&str, f64); 4] = [
    ("delta_tc", 2.87),
    ("delta_ta", 76.0),
    ("v_w", 1.35),
    ("t_s", 57.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Boolean,
}

/// Feature matrix with binary labels. Boolean features are stored as 0.0 / 1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub kinds: Vec<FeatureKind>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(
        names: Vec<String>,
        kinds: Vec<FeatureKind>,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
    ) -> Result<Self> {
        let d = Dataset {
            names,
            kinds,
            rows,
            labels,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("dataset", m));
        if self.names.len() != self.kinds.len() {
            return bad("feature names and kinds differ in length".into());
        }
        if self.rows.len() != self.labels.len() {
            return bad(format!(
                "{} rows but {} labels",
                self.rows.len(),
                self.labels.len()
            ));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.names.len() {
                return bad(format!(
                    "row {i} has {} values, expected {}",
                    r.len(),
                    self.names.len()
                ));
            }
            if let Some(j) = r.iter().position(|v| !v.is_finite()) {
                return bad(format!(
                    "row {i}, column {}: non-finite value",
                    self.names[j]
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

/// Read a CSV dataset. Columns whose every value is `true`/`false` become boolean
/// features; `exclude` drops columns by name.
pub fn read_dataset_csv<R: Read>(r: R, label: &str, exclude: &[String]) -> Result<Dataset> {
    let mut rdr = csv_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let label_col = header.iter().position(|h| h == label).ok_or_else(|| {
        Error::invalid(
            "dataset",
            format!("label column '{label}' not found in header"),
        )
    })?;
    if let Some(x) = exclude.iter().find(|x| !header.contains(x)) {
        return Err(Error::invalid(
            "dataset",
            format!("excluded column '{x}' not found in header"),
        ));
    }
    let cols: Vec<usize> = (0..header.len())
        .filter(|&c| c != label_col && !exclude.contains(&header[c]))
        .collect();

    let mut raw: Vec<Vec<String>> = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = rec.get(label_col).unwrap_or("");
        let y = parse_bool(cell).ok_or_else(|| {
            Error::invalid(
                "dataset",
                format!("row {}: label '{cell}' is not true/false", i + 1),
            )
        })?;
        labels.push(y);
        raw.push(
            cols.iter()
                .map(|&c| rec.get(c).unwrap_or("").to_string())
                .collect(),
        );
    }

    let kinds: Vec<FeatureKind> = (0..cols.len())
        .map(|j| {
            let all_bool = !raw.is_empty()
                && raw
                    .iter()
                    .all(|r| matches!(r[j].to_ascii_lowercase().as_str(), "true" | "false"));
            if all_bool {
                FeatureKind::Boolean
            } else {
                FeatureKind::Numeric
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(raw.len());
    for (i, r) in raw.iter().enumerate() {
        let mut row = Vec::with_capacity(cols.len());
        for (j, s) in r.iter().enumerate() {
            let v = match kinds[j] {
                FeatureKind::Boolean => f64::from(u8::from(parse_bool(s) == Some(true))),
                FeatureKind::Numeric => s.parse::<f64>().map_err(|_| {
                    Error::invalid(
                        "dataset",
                        format!(
                            "row {}, column {}: '{s}' is not a number",
                            i + 1,
                            header[cols[j]]
                        ),
                    )
                })?,
            };
            row.push(v);
        }
        rows.push(row);
    }
    Dataset::new(
        cols.iter().map(|&c| header[c].clone()).collect(),
        kinds,
        rows,
        labels,
    )
}

/// Shannon entropy of a binary label multiset, bits.
pub fn entropy(labels: &[bool]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("entropy of an empty label set".into()));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    Ok(binary_entropy(pos, labels.len()))
}

fn binary_entropy(pos: usize, n: usize) -> f64 {
    if pos == 0 || pos == n {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    let q = 1.0 - p;
    -(p * p.log2() + q * q.log2())
}

/// A candidate split. Rows with `value <= threshold` go left; for boolean
/// features the threshold is 0.5, so `false` goes left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub name: String,
    pub threshold: f64,
    pub gain: f64,
    pub gain_ratio: f64,
    pub left: usize,
    pub right: usize,
}

/// True when `a` should be preferred over `b`.
fn better(a: &Split, b: &Split) -> bool {
    match a.gain_ratio.partial_cmp(&b.gain_ratio) {
        Some(Ordering::Greater) => return true,
        Some(Ordering::Less) => return false,
        _ => {}
    }
    match a.gain.partial_cmp(&b.gain) {
        Some(Ordering::Greater) => return true,
        Some(Ordering::Less) => return false,
        _ => {}
    }
    match a.name.cmp(&b.name) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.threshold < b.threshold,
    }
}

/// Best gain-ratio split of the rows `idx`, each side holding at least `min_leaf` rows.
///
/// Candidates are midpoints between consecutive distinct values with positive gain.
pub fn best_split(data: &Dataset, idx: &[usize], min_leaf: usize) -> Option<Split> {
    best_split_with(data, idx, min_leaf, false)
}

/// [`best_split`], optionally keeping only candidates whose gain reaches the mean
/// gain of all candidates before ranking by gain ratio (the C4.5 heuristic).
pub fn best_split_with(
    data: &Dataset,
    idx: &[usize],
    min_leaf: usize,
    mean_gain_filter: bool,
) -> Option<Split> {
    let min_leaf = min_leaf.max(1);
    let n = idx.len();
    if n < 2 * min_leaf {
        return None;
    }
    let total_pos = idx.iter().filter(|&&i| data.labels[i]).count();
    let parent = binary_entropy(total_pos, n);
    if parent == 0.0 {
        return None;
    }
    let mut candidates = Vec::new();
    let mut order: Vec<(f64, bool)> = Vec::with_capacity(n);
    for f in 0..data.names.len() {
        order.clear();
        order.extend(idx.iter().map(|&i| (data.rows[i][f], data.labels[i])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for k in 0..n - 1 {
            left_pos += usize::from(order[k].1);
            let (v, next) = (order[k].0, order[k + 1].0);
            if v == next {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let child = (nl as f64 * binary_entropy(left_pos, nl)
                + nr as f64 * binary_entropy(total_pos - left_pos, nr))
                / n as f64;
            let gain = parent - child;
            if gain <= GAIN_EPS {
                continue;
            }
            let split_info = binary_entropy(nl, n);
            let threshold = match data.kinds[f] {
                FeatureKind::Boolean => 0.5,
                FeatureKind::Numeric => 0.5 * (v + next),
            };
            candidates.push(Split {
                feature: f,
                name: data.names[f].clone(),
                threshold,
                gain,
                gain_ratio: gain / split_info,
                left: nl,
                right: nr,
            });
        }
    }
    if candidates.is_empty() {
        return None;
    }
    let mean_gain = candidates.iter().map(|c| c.gain).sum::<f64>() / candidates.len() as f64;
    let mut best: Option<Split> = None;
    for c in candidates {
        if mean_gain_filter && c.gain + GAIN_EPS < mean_gain {
            continue;
        }
        if best.as_ref().map_or(true, |b| better(&c, b)) {
            best = Some(c);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub min_leaf: usize,
    pub max_depth: usize,
    /// A node at least this pure becomes a leaf.
    pub purity_stop: f64,
    /// Splits with less information gain (bits) are not taken.
    pub min_gain: f64,
    /// Restrict candidates to those with at least the mean gain before ranking by gain ratio.
    pub mean_gain_filter: bool,
    /// Confidence level of the pessimistic error-based pruning; `None` disables pruning.
    pub prune_confidence: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            min_leaf: 200,
            max_depth: 8,
            purity_stop: 0.99,
            min_gain: 0.01,
            mean_gain_filter: false,
            prune_confidence: Some(0.25),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::invalid("train config", "min_leaf must be >= 1"));
        }
        if !(0.5..=1.0).contains(&self.purity_stop) {
            return Err(Error::invalid(
                "train config",
                "purity_stop must lie in [0.5, 1]",
            ));
        }
        if !(self.min_gain >= 0.0) {
            return Err(Error::invalid("train config", "min_gain must be >= 0"));
        }
        if let Some(cf) = self.prune_confidence {
            if !(cf > 0.0 && cf < 1.0) {
                return Err(Error::invalid(
                    "train config",
                    "prune_confidence must lie in (0, 1)",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        class: bool,
        /// Share of the leaf's rows in `class`.
        purity: f64,
        support: usize,
    },
    Split {
        feature: String,
        #[serde(skip)]
        index: usize,
        kind: FeatureKind,
        threshold: f64,
        gain_ratio: f64,
        support: usize,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn support(&self) -> usize {
        match self {
            TreeNode::Leaf { support, .. } | TreeNode::Split { support, .. } => *support,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaves() + right.leaves(),
        }
    }

    pub fn predict(&self, row: &[f64]) -> bool {
        match self {
            TreeNode::Leaf { class, .. } => *class,
            TreeNode::Split {
                index,
                threshold,
                left,
                right,
                ..
            } => {
                if row[*index] <= *threshold {
                    left.predict(row)
                } else {
                    right.predict(row)
                }
            }
        }
    }

    /// Re-resolve feature indices after deserialising against `names`.
    pub fn bind(&mut self, names: &[String]) -> Result<()> {
        if let TreeNode::Split {
            feature,
            index,
            left,
            right,
            ..
        } = self
        {
            *index = names.iter().position(|n| n == feature).ok_or_else(|| {
                Error::invalid("tree", format!("feature '{feature}' missing from dataset"))
            })?;
            left.bind(names)?;
            right.bind(names)?;
        }
        Ok(())
    }
}

fn leaf(data: &Dataset, idx: &[usize]) -> TreeNode {
    let pos = idx.iter().filter(|&&i| data.labels[i]).count();
    let n = idx.len();
    let class = 2 * pos >= n && n > 0;
    let purity = if n == 0 {
        0.0
    } else if class {
        pos as f64 / n as f64
    } else {
        (n - pos) as f64 / n as f64
    };
    TreeNode::Leaf {
        class,
        purity,
        support: n,
    }
}

/// Upper confidence limit on the number of misclassified rows of a leaf with
/// `errors` mistakes among `n` rows (exact binomial bound).
pub fn pessimistic_errors(errors: usize, n: usize, confidence: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    if errors >= n {
        return n as f64;
    }
    let upper = Beta::new((errors + 1) as f64, (n - errors) as f64)
        .map(|b| b.inverse_cdf(1.0 - confidence))
        .unwrap_or(1.0);
    n as f64 * upper
}

/// Grow a tree. Deterministic and independent of row order.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TreeNode> {
    cfg.validate()?;
    data.validate()?;
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(grow(data, cfg, &idx, 0).0)
}

/// Returns the subtree and its estimated error count.
fn grow(data: &Dataset, cfg: &TrainConfig, idx: &[usize], depth: usize) -> (TreeNode, f64) {
    let node = leaf(data, idx);
    let TreeNode::Leaf { purity, .. } = node else {
        unreachable!()
    };
    let errors = idx.len() - (purity * idx.len() as f64).round() as usize;
    let leaf_est = match cfg.prune_confidence {
        Some(cf) => pessimistic_errors(errors, idx.len(), cf),
        None => errors as f64,
    };
    if purity >= cfg.purity_stop || depth >= cfg.max_depth {
        return (node, leaf_est);
    }
    let Some(split) = best_split_with(data, idx, cfg.min_leaf, cfg.mean_gain_filter) else {
        return (node, leaf_est);
    };
    if split.gain < cfg.min_gain {
        return (node, leaf_est);
    }
    let (l, r): (Vec<usize>, Vec<usize>) = idx
        .iter()
        .partition(|&&i| data.rows[i][split.feature] <= split.threshold);
    let (left, l_est) = grow(data, cfg, &l, depth + 1);
    let (right, r_est) = grow(data, cfg, &r, depth + 1);
    let sub_est = l_est + r_est;
    if cfg.prune_confidence.is_some() && leaf_est <= sub_est + PRUNE_SLACK {
        return (node, leaf_est);
    }
    (
        TreeNode::Split {
            feature: split.name,
            index: split.feature,
            kind: data.kinds[split.feature],
            threshold: split.threshold,
            gain_ratio: split.gain_ratio,
            support: idx.len(),
            left: Box::new(left),
            right: Box::new(right),
        },
        sub_est,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Condition {
    /// `feature <= threshold`
    Le {
        feature: String,
        threshold: f64,
    },
    /// `feature > threshold`
    Gt {
        feature: String,
        threshold: f64,
    },
    Is {
        feature: String,
        value: bool,
    },
}

impl Condition {
    pub fn feature(&self) -> &str {
        match self {
            Condition::Le { feature, .. }
            | Condition::Gt { feature, .. }
            | Condition::Is { feature, .. } => feature,
        }
    }

    pub fn holds(&self, value: f64) -> bool {
        match self {
            Condition::Le { threshold, .. } => value <= *threshold,
            Condition::Gt { threshold, .. } => value > *threshold,
            Condition::Is { value: want, .. } => (value > 0.5) == *want,
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::Le { feature, threshold } => write!(f, "{feature} <= {threshold:.6}"),
            Condition::Gt { feature, threshold } => write!(f, "{feature} > {threshold:.6}"),
            Condition::Is { feature, value } => write!(f, "{feature} is {value}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub class: bool,
    pub purity: f64,
    pub support: usize,
}

impl Rule {
    pub fn matches(&self, data: &Dataset, row: usize) -> bool {
        self.conditions.iter().all(|c| {
            data.feature_index(c.feature())
                .is_some_and(|j| c.holds(data.rows[row][j]))
        })
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let body = if self.conditions.is_empty() {
            "always".to_string()
        } else {
            self.conditions
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        write!(
            f,
            "{body} => {} (purity {:.2}%, support {})",
            self.class,
            100.0 * self.purity,
            self.support
        )
    }
}

/// Merge repeated conditions on a feature into the tightest one.
fn simplify(path: &[Condition]) -> Vec<Condition> {
    let mut out: Vec<Condition> = Vec::new();
    for c in path {
        let existing = out.iter_mut().find(|o| {
            o.feature() == c.feature() && std::mem::discriminant(*o) == std::mem::discriminant(c)
        });
        match (existing, c) {
            (Some(Condition::Le { threshold: t, .. }), Condition::Le { threshold, .. }) => {
                *t = t.min(*threshold)
            }
            (Some(Condition::Gt { threshold: t, .. }), Condition::Gt { threshold, .. }) => {
                *t = t.max(*threshold)
            }
            (Some(_), Condition::Is { .. }) => {}
            _ => out.push(c.clone()),
        }
    }
    out
}

/// One rule per leaf at least `min_purity` pure, largest support first.
pub fn extract_rules(tree: &TreeNode, min_purity: f64) -> Vec<Rule> {
    let mut rules = Vec::new();
    collect(tree, &mut Vec::new(), min_purity, &mut rules);
    rules.sort_by(|a, b| b.support.cmp(&a.support));
    rules
}

fn collect(node: &TreeNode, path: &mut Vec<Condition>, min_purity: f64, out: &mut Vec<Rule>) {
    match node {
        TreeNode::Leaf {
            class,
            purity,
            support,
        } => {
            if *purity >= min_purity {
                out.push(Rule {
                    conditions: simplify(path),
                    class: *class,
                    purity: *purity,
                    support: *support,
                });
            }
        }
        TreeNode::Split {
            feature,
            kind,
            threshold,
            left,
            right,
            ..
        } => {
            let (l, r) = match kind {
                FeatureKind::Boolean => (
                    Condition::Is {
                        feature: feature.clone(),
                        value: false,
                    },
                    Condition::Is {
                        feature: feature.clone(),
                        value: true,
                    },
                ),
                FeatureKind::Numeric => (
                    Condition::Le {
                        feature: feature.clone(),
                        threshold: *threshold,
                    },
                    Condition::Gt {
                        feature: feature.clone(),
                        threshold: *threshold,
                    },
                ),
            };
            path.push(l);
            collect(left, path, min_purity, out);
            path.pop();
            path.push(r);
            collect(right, path, min_purity, out);
            path.pop();
        }
    }
}

pub fn accuracy(tree: &TreeNode, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .rows
        .iter()
        .zip(&data.labels)
        .filter(|(r, &y)| tree.predict(r) == y)
        .count();
    hits as f64 / data.len() as f64
}

/// Indented text rendering: each split as `if`/`else`, leaves numbered in visiting order.
pub fn render_tree(tree: &TreeNode) -> String {
    let mut s = String::new();
    let mut n = 0;
    render(tree, 0, &mut n, &mut s);
    s
}

fn render(node: &TreeNode, depth: usize, leaf_no: &mut usize, s: &mut String) {
    let pad = "    ".repeat(depth);
    match node {
        TreeNode::Leaf {
            class,
            purity,
            support,
        } => {
            *leaf_no += 1;
            let _ = writeln!(
                s,
                "{pad}leaf {leaf_no}: {class} ({:.1}% of {support})",
                100.0 * purity
            );
        }
        TreeNode::Split {
            feature,
            kind,
            threshold,
            left,
            right,
            ..
        } => {
            let (l, r) = match kind {
                FeatureKind::Boolean => {
                    (format!("{feature} is false"), format!("{feature} is true"))
                }
                FeatureKind::Numeric => (
                    format!("{feature} <= {threshold:.6}"),
                    format!("{feature} > {threshold:.6}"),
                ),
            };
            let _ = writeln!(s, "{pad}if {l}:");
            render(left, depth + 1, leaf_no, s);
            let _ = writeln!(s, "{pad}if {r}:");
            render(right, depth + 1, leaf_no, s);
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesDocument {
    pub schema: String,
    pub version: u32,
    pub label: String,
    pub features: Vec<String>,
    pub config: TrainConfig,
    pub min_purity: f64,
    pub training_accuracy: f64,
    pub tree: TreeNode,
    pub rules: Vec<Rule>,
}

impl RulesDocument {
    pub fn new(
        data: &Dataset,
        label: &str,
        config: TrainConfig,
        min_purity: f64,
        tree: TreeNode,
    ) -> Self {
        RulesDocument {
            schema: "linewatch-rules".into(),
            version: 1,
            label: label.into(),
            features: data.names.clone(),
            config,
            min_purity,
            training_accuracy: accuracy(&tree, data),
            rules: extract_rules(&tree, min_purity),
            tree,
        }
    }
}

/// Text listing mined thresholds next to the reference ones for the same features.
pub fn compare_with_reference(rules: &[Rule]) -> String {
    let mut s = String::from("feature      reference   mined\n");
    for (name, reference) in REFERENCE_THRESHOLDS {
        let mut mined: Vec<f64> = rules
            .iter()
            .flat_map(|r| r.conditions.iter())
            .filter_map(|c| match c {
                Condition::Le { feature, threshold } | Condition::Gt { feature, threshold }
                    if feature == name =>
                {
                    Some(*threshold)
                }
                _ => None,
            })
            .collect();
        mined.sort_by(f64::total_cmp);
        mined.dedup();
        let mined = if mined.is_empty() {
            "-".to_string()
        } else {
            mined
                .iter()
                .map(|t| format!("{t:.3}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(s, "{name:<12} {reference:>9.2}   {mined}");
    }
    s
}
