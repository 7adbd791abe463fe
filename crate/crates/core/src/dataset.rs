//! Rollout records aggregated per probe location.

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, InitState};
use crate::error::{invalid, Error, Result};

/// Outcome counts at one initialization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(rename = "coords")]
    pub state: InitState,
    pub trials: u64,
    pub successes: u64,
}

impl EvalRecord {
    pub fn new(state: InitState, trials: u64, successes: u64) -> Result<Self> {
        if successes > trials {
            return Err(invalid(
                "successes",
                format!("{successes} successes exceed {trials} trials"),
            ));
        }
        Ok(Self {
            state,
            trials,
            successes,
        })
    }

    /// Empirical success rate, `None` when no trials were run.
    pub fn rate(&self) -> Option<f64> {
        (self.trials > 0).then(|| self.successes as f64 / self.trials as f64)
    }
}

/// Ordered rollout records over one domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct EvalDataset {
    domain: Domain,
    records: Vec<EvalRecord>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    domain: Domain,
    records: Vec<EvalRecord>,
}

impl TryFrom<DatasetRepr> for EvalDataset {
    type Error = Error;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        let mut ds = EvalDataset::new(r.domain);
        for rec in r.records {
            ds.push(rec)?;
        }
        Ok(ds)
    }
}

impl From<EvalDataset> for DatasetRepr {
    fn from(d: EvalDataset) -> Self {
        DatasetRepr {
            domain: d.domain,
            records: d.records,
        }
    }
}

impl EvalDataset {
    pub fn new(domain: Domain) -> Self {
        Self {
            domain,
            records: Vec::new(),
        }
    }

    pub fn from_records(domain: Domain, records: Vec<EvalRecord>) -> Result<Self> {
        let mut ds = Self::new(domain);
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, record: EvalRecord) -> Result<()> {
        self.domain.check_dim(&record.state)?;
        if record.successes > record.trials {
            return Err(invalid("successes", "exceeds trials"));
        }
        if record.state.coords().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("record coordinates"));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn trials_total(&self) -> u64 {
        self.records.iter().map(|r| r.trials).sum()
    }

    pub fn successes_total(&self) -> u64 {
        self.records.iter().map(|r| r.successes).sum()
    }

    /// Locations with at least one success, one entry per successful rollout.
    pub fn success_points(&self) -> Vec<InitState> {
        self.records
            .iter()
            .flat_map(|r| std::iter::repeat_n(&r.state, r.successes as usize))
            .cloned()
            .collect()
    }

    /// Largest empirical rate among records with trials.
    pub fn best_rate(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(EvalRecord::rate)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))
    }
}

/// Pooled success rate over every record.
pub fn success_rate(ds: &EvalDataset) -> Result<f64> {
    let trials = ds.trials_total();
    if trials == 0 {
        return Err(Error::NoTrials);
    }
    Ok(ds.successes_total() as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(x: f64, n: u64, k: u64) -> EvalRecord {
        EvalRecord::new(InitState::new(vec![x]), n, k).unwrap()
    }

    fn ds(records: Vec<EvalRecord>) -> EvalDataset {
        EvalDataset::from_records(Domain::unit(1).unwrap(), records).unwrap()
    }

    #[test]
    fn pooled_rate() {
        assert_eq!(success_rate(&ds(vec![rec(0.1, 10, 10), rec(0.9, 10, 0)])).unwrap(), 0.5);
        assert_eq!(success_rate(&ds(vec![rec(0.3, 1000, 835)])).unwrap(), 0.835);
        assert_eq!(success_rate(&ds(vec![rec(0.3, 4, 4), rec(0.6, 7, 7)])).unwrap(), 1.0);
    }

    #[test]
    fn empty_has_no_trials() {
        assert_eq!(success_rate(&ds(vec![])), Err(Error::NoTrials));
        assert_eq!(success_rate(&ds(vec![rec(0.2, 0, 0)])), Err(Error::NoTrials));
    }

    #[test]
    fn rejects_inconsistent_records() {
        assert!(EvalRecord::new(InitState::new(vec![0.0]), 2, 3).is_err());
        let mut d = ds(vec![]);
        assert!(d
            .push(EvalRecord {
                state: InitState::new(vec![0.0, 1.0]),
                trials: 1,
                successes: 1
            })
            .is_err());
    }

    #[test]
    fn json_layout() {
        let d = ds(vec![rec(0.25, 3, 2)]);
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(
            s,
            r#"{"domain":{"lower":[0.0],"upper":[1.0]},"records":[{"coords":[0.25],"trials":3,"successes":2}]}"#
        );
        assert_eq!(serde_json::from_str::<EvalDataset>(&s).unwrap(), d);
        let bad = r#"{"domain":{"lower":[0.0],"upper":[1.0]},"records":[{"coords":[0.25],"trials":1,"successes":2}]}"#;
        assert!(serde_json::from_str::<EvalDataset>(bad).is_err());
    }

    #[test]
    fn success_points_expand_counts() {
        let d = ds(vec![rec(0.1, 3, 2), rec(0.5, 4, 0), rec(0.9, 1, 1)]);
        let pts = d.success_points();
        assert_eq!(pts.len(), 3);
        assert_eq!(pts[2].coords(), &[0.9]);
        assert_eq!(d.best_rate(), Some(1.0));
    }

    proptest! {
        #[test]
        fn rate_is_order_invariant(
            counts in prop::collection::vec((1u64..50, 0u64..50), 1..20),
            rot in 0usize..20,
        ) {
            let records: Vec<_> = counts
                .iter()
                .enumerate()
                .map(|(i, &(n, k))| rec(i as f64 / 20.0, n, k.min(n)))
                .collect();
            let mut rotated = records.clone();
            let len = rotated.len();
            rotated.rotate_left(rot % len);
            rotated.reverse();
            let a = success_rate(&ds(records)).unwrap();
            let b = success_rate(&ds(rotated)).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
