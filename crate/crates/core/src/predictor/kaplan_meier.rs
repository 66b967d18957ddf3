use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Product-limit estimate as a right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaplanMeier {
    /// Distinct event times, ascending.
    pub times: Vec<f64>,
    /// S just after each event time.
    pub survival: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
}

impl KaplanMeier {
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&e| e <= t) {
            0 => 1.0,
            i => self.survival[i - 1],
        }
    }

    /// Smallest event time with S ≤ 0.5, if the curve gets there.
    pub fn median(&self) -> Option<f64> {
        self.times.iter().zip(&self.survival).find(|(_, &s)| s <= 0.5).map(|(&t, _)| t)
    }
}

/// Kaplan–Meier estimator from `(duration, censored)` pairs. Records
/// censored at an event time are still at risk at that time.
pub fn kaplan_meier(observations: impl IntoIterator<Item = (f64, bool)>) -> Result<KaplanMeier> {
    let mut obs: Vec<(f64, bool)> = observations.into_iter().collect();
    if obs.is_empty() {
        return Err(Error::Empty("Kaplan-Meier needs at least one record".into()));
    }
    if obs.iter().any(|(t, _)| !t.is_finite()) {
        return Err(Error::Domain("durations must be finite".into()));
    }
    // events sort before censorings at the same time
    obs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut km = KaplanMeier {
        times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
    };
    let mut s = 1.0;
    let mut remaining = obs.len();
    let mut i = 0;
    while i < obs.len() {
        let t = obs[i].0;
        let mut j = i;
        let mut d = 0;
        while j < obs.len() && obs[j].0 == t {
            d += usize::from(!obs[j].1);
            j += 1;
        }
        if d > 0 {
            s *= 1.0 - d as f64 / remaining as f64;
            km.times.push(t);
            km.survival.push(s);
            km.at_risk.push(remaining);
            km.events.push(d);
        }
        remaining -= j - i;
        i = j;
    }
    Ok(km)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_computed_examples() {
        let km = kaplan_meier([(1.0, false), (2.0, false), (3.0, false)]).unwrap();
        assert_eq!(km.survival_at(0.5), 1.0);
        assert!((km.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival_at(2.0) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival_at(3.0), 0.0);

        let km = kaplan_meier([(1.0, false), (2.0, true), (3.0, false)]).unwrap();
        assert!((km.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival_at(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival_at(3.0), 0.0);

        let km = kaplan_meier([(1.0, true), (5.0, true)]).unwrap();
        assert_eq!(km.survival_at(100.0), 1.0);
        assert!(km.median().is_none());
        assert!(kaplan_meier(Vec::new()).is_err());
    }

    #[test]
    fn censoring_tied_with_event_stays_at_risk() {
        // one event among 4 at risk at t = 2; the tied censoring leaves afterwards
        let km = kaplan_meier([(2.0, true), (2.0, false), (3.0, false), (4.0, false)]).unwrap();
        assert_eq!(km.at_risk, vec![4, 2, 1]);
        assert!((km.survival_at(2.0) - 0.75).abs() < 1e-15);
        assert!((km.survival_at(3.0) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn uncensored_equals_empirical_survival() {
        let t = [5.0, 1.0, 3.0, 3.0, 8.0, 2.0];
        let km = kaplan_meier(t.iter().map(|&x| (x, false))).unwrap();
        for q in [0.5, 1.0, 2.5, 3.0, 7.9, 8.0] {
            let emp = t.iter().filter(|&&x| x > q).count() as f64 / t.len() as f64;
            assert!((km.survival_at(q) - emp).abs() < 1e-15);
        }
        assert_eq!(km.median(), Some(3.0));
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(obs in prop::collection::vec((0.1f64..100.0, any::<bool>()), 1..60)) {
            let km = kaplan_meier(obs).unwrap();
            let mut prev = 1.0;
            for &s in &km.survival {
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert!(s <= prev);
                prev = s;
            }
        }
    }
}
