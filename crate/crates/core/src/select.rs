//! Composing the synthetic training set from a candidate pool.
//!
//! The diversity measure is the number of unique n-grams (raw tokens, not
//! vocabulary-filtered) in the selected set. Greedy selection repeatedly adds
//! the candidate with the largest marginal gain; ties go to the smallest pool
//! index, and once every remaining gain is zero selection continues in index
//! order until `n` examples are chosen.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{ngram_set, Dataset, Example};
use crate::error::{Error, Result};
use crate::influence::{filter_detrimental, InfluenceRecord};
use crate::rng::seeded;

pub const DEFAULT_NGRAM_ORDER: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Diversity,
    #[default]
    Combo,
    /// Influence-sign filtering only.
    Influence,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Random => "random",
            Strategy::Diversity => "diversity",
            Strategy::Combo => "combo",
            Strategy::Influence => "influence",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "diversity" => Ok(Strategy::Diversity),
            "combo" => Ok(Strategy::Combo),
            "influence" => Ok(Strategy::Influence),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

impl Strategy {
    pub fn needs_influence(self) -> bool {
        matches!(self, Strategy::Combo | Strategy::Influence)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub strategy: Strategy,
    pub ngram_order: usize,
    pub chosen_ids: Vec<String>,
    /// New unique n-grams contributed by each pick, in selection order.
    pub marginal_gains: Vec<usize>,
    /// Unique n-grams covered by the whole selection.
    pub coverage: usize,
    /// Fewer candidates than requested were available after filtering.
    pub shortfall: bool,
}

impl SelectionResult {
    /// The chosen examples, in selection order.
    pub fn apply(&self, pool: &Dataset) -> Result<Dataset> {
        let by_id: HashMap<&str, &Example> = pool.iter().map(|e| (e.id.as_str(), e)).collect();
        let examples = self
            .chosen_ids
            .iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|e| (*e).clone())
                    .ok_or_else(|| Error::MissingRecord(id.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(examples, pool.num_classes(), pool.split())
    }
}

/// Each candidate's unique n-grams as dense ids.
struct NgramTable {
    grams: Vec<Vec<u32>>,
    num_grams: usize,
}

impl NgramTable {
    fn new(examples: &[Example], n: usize) -> Self {
        let mut ids: HashMap<String, u32> = HashMap::new();
        let grams = examples
            .iter()
            .map(|ex| {
                ngram_set(&ex.tokens, n)
                    .into_iter()
                    .map(|g| {
                        let next = ids.len() as u32;
                        *ids.entry(g).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        Self {
            grams,
            num_grams: ids.len(),
        }
    }

    /// Replays picks in order and returns per-pick gains and final coverage.
    fn replay(&self, order: &[usize]) -> (Vec<usize>, usize) {
        let mut covered = vec![false; self.num_grams];
        let mut coverage = 0;
        let gains = order
            .iter()
            .map(|&i| {
                let mut gain = 0;
                for &g in &self.grams[i] {
                    if !covered[g as usize] {
                        covered[g as usize] = true;
                        gain += 1;
                    }
                }
                coverage += gain;
                gain
            })
            .collect();
        (gains, coverage)
    }
}

fn check_n(n: usize, available: usize) -> Result<()> {
    if n > available {
        return Err(Error::NTooLarge {
            requested: n,
            available,
        });
    }
    Ok(())
}

fn check_order(ngram_order: usize) -> Result<()> {
    if ngram_order == 0 {
        return Err(Error::InvalidConfig("ngram_order must be at least 1".into()));
    }
    Ok(())
}

fn result_from_order(
    pool: &[Example],
    table: &NgramTable,
    order: &[usize],
    strategy: Strategy,
    ngram_order: usize,
) -> SelectionResult {
    let (marginal_gains, coverage) = table.replay(order);
    SelectionResult {
        strategy,
        ngram_order,
        chosen_ids: order.iter().map(|&i| pool[i].id.clone()).collect(),
        marginal_gains,
        coverage,
        shortfall: false,
    }
}

/// Uniform sample without replacement. Marginal gains are filled in afterwards
/// for reporting, using `ngram_order`.
pub fn random_select(pool: &Dataset, n: usize, seed: u64, ngram_order: usize) -> Result<SelectionResult> {
    check_n(n, pool.len())?;
    check_order(ngram_order)?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut seeded(seed));
    order.truncate(n);
    let table = NgramTable::new(pool.examples(), ngram_order);
    Ok(result_from_order(
        pool.examples(),
        &table,
        &order,
        Strategy::Random,
        ngram_order,
    ))
}

/// Pool indices in greedy unique-n-gram coverage order.
///
/// Gains are kept as counters: covering an n-gram decrements only the
/// candidates that contain it.
fn greedy_order(table: &NgramTable, n: usize) -> Vec<usize> {
    let len = table.grams.len();
    let mut holders: Vec<Vec<u32>> = vec![Vec::new(); table.num_grams];
    for (c, grams) in table.grams.iter().enumerate() {
        for &g in grams {
            holders[g as usize].push(c as u32);
        }
    }
    let mut gains: Vec<usize> = table.grams.iter().map(Vec::len).collect();
    let mut taken = vec![false; len];
    let mut covered = vec![false; table.num_grams];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for c in 0..len {
            if !taken[c] && best.is_none_or(|b| gains[c] > gains[b]) {
                best = Some(c);
            }
        }
        let Some(pick) = best else { break };
        taken[pick] = true;
        order.push(pick);
        for &g in &table.grams[pick] {
            if !covered[g as usize] {
                covered[g as usize] = true;
                for &holder in &holders[g as usize] {
                    gains[holder as usize] -= 1;
                }
            }
        }
    }
    order
}

/// Greedy maximization of unique n-gram coverage.
pub fn diversity_select(pool: &Dataset, n: usize, ngram_order: usize) -> Result<SelectionResult> {
    check_n(n, pool.len())?;
    check_order(ngram_order)?;
    let table = NgramTable::new(pool.examples(), ngram_order);
    let order = greedy_order(&table, n);
    Ok(result_from_order(
        pool.examples(),
        &table,
        &order,
        Strategy::Diversity,
        ngram_order,
    ))
}

/// Influence filtering followed by greedy diversity selection over the
/// survivors. Returns every survivor with `shortfall` set when fewer than `n`
/// remain.
pub fn combo_select(
    pool: &Dataset,
    records: &[InfluenceRecord],
    n: usize,
    ngram_order: usize,
) -> Result<SelectionResult> {
    let survivors = filter_detrimental(pool, records)?;
    let take = n.min(survivors.len());
    let mut result = diversity_select(&survivors, take, ngram_order)?;
    result.strategy = Strategy::Combo;
    result.shortfall = take < n;
    Ok(result)
}

/// Influence filtering alone: the first `n` non-detrimental candidates in
/// pool order.
pub fn influence_select(
    pool: &Dataset,
    records: &[InfluenceRecord],
    n: usize,
    ngram_order: usize,
) -> Result<SelectionResult> {
    check_order(ngram_order)?;
    let survivors = filter_detrimental(pool, records)?;
    let take = n.min(survivors.len());
    let order: Vec<usize> = (0..take).collect();
    let table = NgramTable::new(survivors.examples(), ngram_order);
    let mut result = result_from_order(survivors.examples(), &table, &order, Strategy::Influence, ngram_order);
    result.shortfall = take < n;
    Ok(result)
}

/// Dispatches on `strategy`. `records` is required for combo and influence.
pub fn select(
    strategy: Strategy,
    pool: &Dataset,
    records: Option<&[InfluenceRecord]>,
    n: usize,
    ngram_order: usize,
    seed: u64,
) -> Result<SelectionResult> {
    let need_records =
        || records.ok_or_else(|| Error::InvalidConfig(format!("strategy {strategy} needs an influence report")));
    match strategy {
        Strategy::Random => random_select(pool, n, seed, ngram_order),
        Strategy::Diversity => diversity_select(pool, n, ngram_order),
        Strategy::Combo => combo_select(pool, need_records()?, n, ngram_order),
        Strategy::Influence => influence_select(pool, need_records()?, n, ngram_order),
    }
}

/// Unique n-grams covered by a set of examples.
pub fn coverage<'a>(examples: impl IntoIterator<Item = &'a Example>, ngram_order: usize) -> usize {
    let mut all = std::collections::HashSet::new();
    for ex in examples {
        all.extend(ngram_set(&ex.tokens, ngram_order));
    }
    all.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::influence::Method;

    fn pool(docs: &[&[&str]]) -> Dataset {
        let examples = docs
            .iter()
            .enumerate()
            .map(|(i, d)| Example::new(format!("ex{i}"), d.iter().map(|s| s.to_string()).collect(), 0))
            .collect();
        Dataset::new(examples, 2, Split::Pool).unwrap()
    }

    fn rec(id: &str, influence: f64) -> InfluenceRecord {
        InfluenceRecord {
            example_id: id.into(),
            influence,
            method: Method::Cg,
            residual: 0.0,
            converged: true,
            detrimental: influence > 0.0,
        }
    }

    #[test]
    fn hand_traced_greedy() {
        let p = pool(&[&["a"], &["a", "b"], &["c"]]);
        let r = diversity_select(&p, 2, 1).unwrap();
        assert_eq!(r.chosen_ids, ["ex1", "ex2"]);
        assert_eq!(r.marginal_gains, [2, 1]);
        assert_eq!(r.coverage, 3);
        assert!(!r.shortfall);
    }

    #[test]
    fn identical_examples_tie_break_by_index() {
        let p = pool(&[&["a", "b"], &["a", "b"], &["b", "a"], &["a", "b"]]);
        let r = diversity_select(&p, 3, 1).unwrap();
        assert_eq!(r.chosen_ids, ["ex0", "ex1", "ex2"]);
        assert_eq!(r.marginal_gains, [2, 0, 0]);
    }

    #[test]
    fn n_bounds() {
        let p = pool(&[&["a"], &["b"]]);
        assert!(diversity_select(&p, 0, 1).unwrap().chosen_ids.is_empty());
        assert!(matches!(
            diversity_select(&p, 3, 1),
            Err(Error::NTooLarge {
                requested: 3,
                available: 2
            })
        ));
        assert!(matches!(random_select(&p, 3, 0, 1), Err(Error::NTooLarge { .. })));
    }

    #[test]
    fn random_select_contract() {
        let p = pool(&[&["a"], &["b"], &["c"], &["d"], &["a", "e"]]);
        assert!(random_select(&p, 0, 1, 1).unwrap().chosen_ids.is_empty());
        let all = random_select(&p, 5, 1, 1).unwrap();
        let mut ids = all.chosen_ids.clone();
        ids.sort();
        assert_eq!(ids, ["ex0", "ex1", "ex2", "ex3", "ex4"]);
        assert_eq!(all.coverage, 5);
        assert_eq!(all.marginal_gains.iter().sum::<usize>(), 5);
        assert_eq!(
            random_select(&p, 3, 42, 1).unwrap(),
            random_select(&p, 3, 42, 1).unwrap()
        );
    }

    #[test]
    fn combo_filters_then_diversifies() {
        let p = pool(&[&["a"], &["a", "b"], &["c"], &["d", "e", "f"]]);
        let records = [rec("ex0", -0.1), rec("ex1", -0.2), rec("ex2", -0.3), rec("ex3", 0.5)];
        let r = combo_select(&p, &records, 2, 1).unwrap();
        assert_eq!(r.chosen_ids, ["ex1", "ex2"]);
        assert_eq!(r.strategy, Strategy::Combo);

        let harmful: Vec<_> = (0..4).map(|i| rec(&format!("ex{i}"), 1.0)).collect();
        let r = combo_select(&p, &harmful, 2, 1).unwrap();
        assert!(r.chosen_ids.is_empty());
        assert!(r.shortfall);

        let helpful: Vec<_> = (0..4).map(|i| rec(&format!("ex{i}"), -1.0)).collect();
        let combo = combo_select(&p, &helpful, 3, 1).unwrap();
        let div = diversity_select(&p, 3, 1).unwrap();
        assert_eq!(combo.chosen_ids, div.chosen_ids);
        assert_eq!(combo.marginal_gains, div.marginal_gains);

        assert!(matches!(
            combo_select(&p, &records[..3], 2, 1),
            Err(Error::MissingRecord(_))
        ));
    }

    #[test]
    fn influence_select_takes_survivors_in_order() {
        let p = pool(&[&["a"], &["b"], &["c"]]);
        let records = [rec("ex0", 0.1), rec("ex1", 0.0), rec("ex2", -1.0)];
        let r = influence_select(&p, &records, 1, 1).unwrap();
        assert_eq!(r.chosen_ids, ["ex1"]);
        let r = influence_select(&p, &records, 5, 1).unwrap();
        assert_eq!(r.chosen_ids, ["ex1", "ex2"]);
        assert!(r.shortfall);
    }

    #[test]
    fn select_requires_records_for_filtering_strategies() {
        let p = pool(&[&["a"]]);
        assert!(select(Strategy::Combo, &p, None, 1, 1, 0).is_err());
        assert!(select(Strategy::Diversity, &p, None, 1, 1, 0).is_ok());
    }

    #[test]
    fn apply_returns_examples_in_selection_order() {
        let p = pool(&[&["a"], &["a", "b"], &["c"]]);
        let r = diversity_select(&p, 2, 1).unwrap();
        let chosen = r.apply(&p).unwrap();
        let ids: Vec<&str> = chosen.iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["ex1", "ex2"]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in [
            Strategy::Random,
            Strategy::Diversity,
            Strategy::Combo,
            Strategy::Influence,
        ] {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{s}\""));
        }
    }
}
