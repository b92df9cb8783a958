use super::has_arm_data;
use crate::error::{Result, TsmError};
use crate::fit::{cox_fit_with, CoxOptions, FitResult, SurvDataset, Ties};
use crate::simulate::{arm_dataset, PatientRecord};

pub(crate) fn cox(data: &SurvDataset, ties: Ties) -> Result<FitResult> {
    cox_fit_with(data, &CoxOptions::with_ties(ties))
}

/// Cox on the randomized arm with observed follow-up.
pub fn itt(records: &[PatientRecord], ties: Ties) -> Result<FitResult> {
    has_arm_data(records)?;
    cox(&arm_dataset(records.iter().map(|r| (r, r.time, r.event)))?, ties)
}

/// Switchers censored at their crossover time.
pub fn cas(records: &[PatientRecord], ties: Ties) -> Result<FitResult> {
    has_arm_data(records)?;
    let rows = records.iter().map(|r| match r.cross_time {
        Some(u) if r.switched => (r, u, false),
        _ => (r, r.time, r.event),
    });
    cox(&arm_dataset(rows)?, ties)
}

/// Switchers removed from the analysis.
pub fn eas(records: &[PatientRecord], ties: Ties) -> Result<FitResult> {
    let kept: Vec<&PatientRecord> = records.iter().filter(|r| !r.switched).collect();
    let control_events = kept.iter().filter(|r| !r.is_treatment() && r.event).count();
    if control_events == 0 {
        return Err(TsmError::NoControlInformation);
    }
    if kept.iter().all(|r| !r.is_treatment()) {
        return Err(TsmError::InvalidData("both arms must be present".into()));
    }
    cox(&arm_dataset(kept.into_iter().map(|r| (r, r.time, r.event)))?, ties)
}

/// Counting-process rows with treatment as a time-dependent indicator that turns on
/// at the switch.
pub fn ttdv_dataset(records: &[PatientRecord]) -> Result<SurvDataset> {
    let mut data = SurvDataset::with_capacity(1, records.len() + records.len() / 4);
    for r in records {
        match (r.is_treatment(), r.cross_time) {
            (true, _) => data.push(0.0, r.time, r.event, &[1.0], 1.0)?,
            (false, Some(u)) if r.switched && u > 0.0 => {
                data.push(0.0, u, false, &[0.0], 1.0)?;
                data.push(u, r.time, r.event, &[1.0], 1.0)?;
            }
            (false, Some(_)) if r.switched => data.push(0.0, r.time, r.event, &[1.0], 1.0)?,
            (false, _) => data.push(0.0, r.time, r.event, &[0.0], 1.0)?,
        }
    }
    Ok(data)
}

pub fn ttdv(records: &[PatientRecord], ties: Ties) -> Result<FitResult> {
    has_arm_data(records)?;
    cox(&ttdv_dataset(records)?, ties)
}


#[cfg(test)]
mod tests {
    use super::fixtures::{rec, six};
    use super::*;
    use crate::fit::cox_loglik;

    fn no_switch(records: &[PatientRecord]) -> Vec<PatientRecord> {
        records
            .iter()
            .cloned()
            .map(|mut r| {
                r.switched = false;
                r
            })
            .collect()
    }

    #[test]
    fn no_switchers_collapse_to_itt() {
        let recs = no_switch(&six());
        let a = itt(&recs, Ties::Efron).unwrap();
        for f in [cas, eas, ttdv] {
            let b = f(&recs, Ties::Efron).unwrap();
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.se, b.se);
        }
    }

    #[test]
    fn cas_risk_set_ends_at_switch() {
        // After CAS the switcher (control, u = 1.5) leaves the risk set at 1.5, so the
        // event at 2.0 faces risk set {0, 1, 2, 5}: one control, three treated.
        let recs = six();
        let data = arm_dataset(recs.iter().map(|r| match r.cross_time {
            Some(u) if r.switched => (r, u, false),
            _ => (r, r.time, r.event),
        }))
        .unwrap();
        let b: f64 = 0.3;
        let e = b.exp();
        // events: t=1 (control) risk all 6: 3 treated + 3 control
        //         t=2 (treated) risk 3 treated + 1 control
        //         t=3.5 (control) risk 2 treated + 1 control
        //         t=5 (treated) risk 1 treated
        let hand = -(3.0 * e + 3.0).ln() + (b - (3.0 * e + 1.0).ln()) - (2.0 * e + 1.0).ln() + (b - e.ln());
        assert!((cox_loglik(&data, &[b], Ties::Efron) - hand).abs() < 1e-12);
        cas(&recs, Ties::Efron).unwrap();
    }

    #[test]
    fn ttdv_partial_likelihood_by_hand() {
        let recs = vec![
            rec(0, true, 2.0, true, None, false),
            rec(1, false, 3.0, true, Some(1.0), true),
            rec(2, false, 1.5, true, None, false),
        ];
        let data = ttdv_dataset(&recs).unwrap();
        assert_eq!(data.len(), 4);
        let b: f64 = -0.4;
        let e = b.exp();
        // t=1.5: switcher already on treatment; risk {T, switcher, control}
        // t=2:   risk {T, switcher}
        // t=3:   risk {switcher}
        let hand = -(2.0 * e + 1.0).ln() + (b - (2.0 * e).ln()) + (b - e.ln());
        assert!((cox_loglik(&data, &[b], Ties::Efron) - hand).abs() < 1e-12);
    }

    #[test]
    fn eas_without_control_events_fails() {
        let recs = vec![
            rec(0, true, 2.0, true, None, false),
            rec(1, false, 3.0, true, Some(1.0), true),
            rec(2, false, 1.5, false, None, false),
        ];
        assert!(matches!(eas(&recs, Ties::Efron), Err(TsmError::NoControlInformation)));
    }

    #[test]
    fn label_exchange_flips_sign() {
        let recs = six();
        let flipped: Vec<PatientRecord> = no_switch(&recs)
            .into_iter()
            .map(|mut r| {
                r.arm = if r.is_treatment() { crate::simulate::Arm::Control } else { crate::simulate::Arm::Treatment };
                r.cross_time = None;
                r.crossed = false;
                r
            })
            .collect();
        let a = itt(&recs, Ties::Efron).unwrap();
        let b = itt(&flipped, Ties::Efron).unwrap();
        assert!((a.beta[0] + b.beta[0]).abs() < 1e-9);
    }
}
