//! Apriori frequent-itemset mining and association rules over per-document
//! term sets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::TokenizedDocument;

#[derive(Debug, Error, PartialEq)]
pub enum RulesError {
    #[error("no transactions to mine")]
    NoTransactions,
    #[error("{name} must be in (0, 1], got {value}")]
    Threshold { name: &'static str, value: f64 },
    #[error("max_itemset_size must be at least 1")]
    ItemsetSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub doc_id: String,
    pub items: BTreeSet<String>,
}

impl Transaction {
    pub fn new<I, S>(doc_id: impl Into<String>, items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Transaction {
            doc_id: doc_id.into(),
            items: items.into_iter().map(Into::into).collect(),
        }
    }

    pub fn from_document(doc: &TokenizedDocument) -> Self {
        Transaction::new(doc.doc_id.clone(), doc.tokens.iter().cloned())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule {
    /// Sorted, non-empty.
    pub antecedent: Vec<String>,
    /// Sorted, non-empty, disjoint from the antecedent.
    pub consequent: Vec<String>,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
}

impl AssociationRule {
    /// `a,b => c<TAB>support<TAB>confidence<TAB>lift`, six decimals.
    pub fn export_line(&self) -> String {
        format!(
            "{} => {}\t{:.6}\t{:.6}\t{:.6}",
            self.antecedent.join(","),
            self.consequent.join(","),
            self.support,
            self.confidence,
            self.lift
        )
    }
}

impl fmt::Display for AssociationRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.export_line())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub min_support: f64,
    pub min_confidence: f64,
    pub max_itemset_size: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        MiningParams {
            min_support: 0.05,
            min_confidence: 0.6,
            max_itemset_size: 4,
        }
    }
}

impl MiningParams {
    pub fn validate(&self) -> Result<(), RulesError> {
        for (name, value) in [
            ("min_support", self.min_support),
            ("min_confidence", self.min_confidence),
        ] {
            if !(value > 0.0 && value <= 1.0) {
                return Err(RulesError::Threshold { name, value });
            }
        }
        if self.max_itemset_size == 0 {
            return Err(RulesError::ItemsetSize);
        }
        Ok(())
    }
}

/// Sorted item list.
pub type Itemset = Vec<String>;

/// Frequent itemsets with their support counts.
pub fn frequent_itemsets(
    transactions: &[Transaction],
    params: &MiningParams,
) -> Result<BTreeMap<Itemset, usize>, RulesError> {
    if transactions.is_empty() {
        return Err(RulesError::NoTransactions);
    }
    params.validate()?;
    let n = transactions.len() as f64;
    let frequent = |count: usize| count as f64 / n >= params.min_support;

    let mut singles: BTreeMap<Itemset, usize> = BTreeMap::new();
    for t in transactions {
        for item in &t.items {
            *singles.entry(vec![item.clone()]).or_insert(0) += 1;
        }
    }
    let mut level: BTreeMap<Itemset, usize> =
        singles.into_iter().filter(|(_, c)| frequent(*c)).collect();
    let mut all = level.clone();

    let mut size = 1;
    while !level.is_empty() && size < params.max_itemset_size {
        let candidates = join_and_prune(&level);
        let mut counts: BTreeMap<Itemset, usize> = candidates.into_iter().map(|c| (c, 0)).collect();
        for t in transactions {
            for (candidate, count) in counts.iter_mut() {
                if candidate.iter().all(|i| t.items.contains(i)) {
                    *count += 1;
                }
            }
        }
        level = counts.into_iter().filter(|(_, c)| frequent(*c)).collect();
        all.extend(level.iter().map(|(k, v)| (k.clone(), *v)));
        size += 1;
    }
    Ok(all)
}

/// Joins itemsets sharing all but their last item, then drops candidates
/// with an infrequent subset.
fn join_and_prune(level: &BTreeMap<Itemset, usize>) -> Vec<Itemset> {
    let sets: Vec<&Itemset> = level.keys().collect();
    let mut out = Vec::new();
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            let k = a.len();
            if a[..k - 1] != b[..k - 1] {
                break;
            }
            let mut candidate = (*a).clone();
            candidate.push(b[k - 1].clone());
            let closed = (0..candidate.len()).all(|skip| {
                let subset: Itemset = candidate
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != skip)
                    .map(|(_, s)| s.clone())
                    .collect();
                level.contains_key(&subset)
            });
            if closed {
                out.push(candidate);
            }
        }
    }
    out
}

/// Every split of `items` into two non-empty parts.
fn proper_subsets(items: &[String]) -> impl Iterator<Item = (Itemset, Itemset)> + '_ {
    let full = (1u32 << items.len()) - 1;
    (1..full).map(move |mask| {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (i, item) in items.iter().enumerate() {
            if mask & (1 << i) != 0 {
                left.push(item.clone());
            } else {
                right.push(item.clone());
            }
        }
        (left, right)
    })
}

pub fn compare_rules(a: &AssociationRule, b: &AssociationRule) -> std::cmp::Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(b.support.total_cmp(&a.support))
        .then_with(|| a.antecedent.cmp(&b.antecedent))
        .then_with(|| a.consequent.cmp(&b.consequent))
}

/// Rules from every frequent itemset of two or more items, sorted by
/// confidence then support (both descending), then antecedent and
/// consequent.
pub fn mine_rules(
    transactions: &[Transaction],
    params: &MiningParams,
) -> Result<Vec<AssociationRule>, RulesError> {
    let itemsets = frequent_itemsets(transactions, params)?;
    let n = transactions.len() as f64;
    let mut rules = Vec::new();
    for (items, count) in itemsets.iter().filter(|(k, _)| k.len() >= 2) {
        let support = *count as f64 / n;
        for (antecedent, consequent) in proper_subsets(items) {
            // Subsets of a frequent itemset are frequent, so both are present.
            let a_count = itemsets[&antecedent];
            let c_count = itemsets[&consequent];
            let confidence = *count as f64 / a_count as f64;
            if confidence < params.min_confidence {
                continue;
            }
            let lift = confidence / (c_count as f64 / n);
            rules.push(AssociationRule {
                antecedent,
                consequent,
                support,
                confidence,
                lift,
            });
        }
    }
    rules.sort_by(compare_rules);
    Ok(rules)
}

/// One expansion step: seeds plus the consequents of every rule whose
/// antecedent is contained in the seeds.
pub fn expand_terms(rules: &[AssociationRule], seeds: &BTreeSet<String>) -> BTreeSet<String> {
    let mut out = seeds.clone();
    for rule in rules {
        if rule.antecedent.iter().all(|t| seeds.contains(t)) {
            out.extend(rule.consequent.iter().cloned());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tx(id: &str, items: &[&str]) -> Transaction {
        Transaction::new(id, items.iter().copied())
    }

    fn params(s: f64, c: f64) -> MiningParams {
        MiningParams {
            min_support: s,
            min_confidence: c,
            max_itemset_size: 4,
        }
    }

    #[test]
    fn three_transactions() {
        let ts = [
            tx("1", &["A", "B"]),
            tx("2", &["A", "B"]),
            tx("3", &["A", "C"]),
        ];
        let sets = frequent_itemsets(&ts, &params(0.6, 0.9)).unwrap();
        let keys: Vec<String> = sets.keys().map(|k| k.join("")).collect();
        assert_eq!(keys, ["A", "AB", "B"]);
        assert_eq!(sets[&vec!["A".to_string()]], 3);
        let rules = mine_rules(&ts, &params(0.6, 0.9)).unwrap();
        assert_eq!(rules.len(), 1);
        let r = &rules[0];
        assert_eq!(
            (r.antecedent.as_slice(), r.consequent.as_slice()),
            (&["B".to_string()][..], &["A".to_string()][..])
        );
        assert_eq!(r.confidence, 1.0);
        assert_eq!(r.lift, 1.0);
        assert!((r.support - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.export_line(), "B => A\t0.666667\t1.000000\t1.000000");
    }

    #[test]
    fn full_support_without_shared_item() {
        let ts = [tx("1", &["A", "B"]), tx("2", &["C"])];
        assert!(mine_rules(&ts, &params(1.0, 0.5)).unwrap().is_empty());
    }

    #[test]
    fn single_transaction_has_no_rules() {
        assert!(mine_rules(&[tx("1", &["A"])], &params(0.1, 0.1))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn parameter_errors() {
        assert_eq!(
            mine_rules(&[], &params(0.5, 0.5)),
            Err(RulesError::NoTransactions)
        );
        let ts = [tx("1", &["A"])];
        assert!(matches!(
            mine_rules(&ts, &params(0.0, 0.5)),
            Err(RulesError::Threshold {
                name: "min_support",
                ..
            })
        ));
        assert!(matches!(
            mine_rules(&ts, &params(0.5, 1.5)),
            Err(RulesError::Threshold {
                name: "min_confidence",
                ..
            })
        ));
        let zero = MiningParams {
            max_itemset_size: 0,
            ..MiningParams::default()
        };
        assert_eq!(mine_rules(&ts, &zero), Err(RulesError::ItemsetSize));
    }

    #[test]
    fn itemset_size_cap() {
        let ts = [tx("1", &["A", "B", "C"]), tx("2", &["A", "B", "C"])];
        let capped = MiningParams {
            max_itemset_size: 2,
            ..params(0.5, 0.5)
        };
        let sets = frequent_itemsets(&ts, &capped).unwrap();
        assert!(sets.keys().all(|k| k.len() <= 2));
        assert_eq!(sets.len(), 6);
        let uncapped = frequent_itemsets(&ts, &params(0.5, 0.5)).unwrap();
        assert_eq!(uncapped.len(), 7);
    }

    fn rule(a: &[&str], c: &[&str]) -> AssociationRule {
        AssociationRule {
            antecedent: a.iter().map(|s| s.to_string()).collect(),
            consequent: c.iter().map(|s| s.to_string()).collect(),
            support: 0.5,
            confidence: 1.0,
            lift: 1.0,
        }
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn expansion() {
        let rules = [rule(&["signal"], &["light"])];
        assert_eq!(
            expand_terms(&rules, &set(&["signal"])),
            set(&["signal", "light"])
        );
        assert_eq!(expand_terms(&[], &set(&["signal"])), set(&["signal"]));
        assert_eq!(expand_terms(&rules, &set(&["light"])), set(&["light"]));
    }

    #[test]
    fn expansion_is_one_step() {
        let rules = [rule(&["a"], &["b"]), rule(&["b"], &["c"])];
        assert_eq!(expand_terms(&rules, &set(&["a"])), set(&["a", "b"]));
    }

    #[test]
    fn transactions_are_sets() {
        let doc = TokenizedDocument::new("d", vec!["x".into(), "x".into(), "y".into()]);
        assert_eq!(Transaction::from_document(&doc).items, set(&["x", "y"]));
    }
}
