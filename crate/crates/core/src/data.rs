//! Observed recurrent-event data: one record of covariates, sorted event
//! times, and a censoring time per subject.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    /// Covariate vector; constant over time.
    pub x: Vec<f64>,
    /// Event times, nondecreasing, each in (0, censor_time].
    pub event_times: Vec<f64>,
    pub censor_time: f64,
}

impl Subject {
    pub fn new(id: impl Into<String>, x: Vec<f64>, mut event_times: Vec<f64>, censor_time: f64) -> Result<Self> {
        let id = id.into();
        if !censor_time.is_finite() || censor_time <= 0.0 {
            return Err(Error::InvalidData(format!(
                "subject {id}: censor time must be positive and finite, got {censor_time}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("subject {id}: non-finite covariate")));
        }
        event_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &t in &event_times {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidData(format!(
                    "subject {id}: event times must be strictly positive, got {t}"
                )));
            }
            if t > censor_time {
                return Err(Error::InvalidData(format!(
                    "subject {id}: event at {t} after censor time {censor_time}"
                )));
            }
        }
        Ok(Subject { id, x, event_times, censor_time })
    }

    pub fn n_events(&self) -> usize {
        self.event_times.len()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    subjects: Vec<Subject>,
    n_covariates: usize,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        if subjects.is_empty() {
            return Err(Error::InvalidData("dataset has no subjects".into()));
        }
        let n_covariates = subjects[0].x.len();
        if n_covariates == 0 {
            return Err(Error::InvalidData("subjects carry no covariates".into()));
        }
        for s in &subjects {
            if s.x.len() != n_covariates {
                return Err(Error::InvalidData(format!(
                    "subject {}: expected {n_covariates} covariates, got {}",
                    s.id,
                    s.x.len()
                )));
            }
        }
        Ok(Dataset { subjects, n_covariates })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.n_covariates
    }

    pub fn total_events(&self) -> usize {
        self.subjects.iter().map(|s| s.n_events()).sum()
    }

    /// All event times pooled across subjects, sorted ascending.
    pub fn pooled_event_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .subjects
            .iter()
            .flat_map(|s| s.event_times.iter().copied())
            .collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times
    }

    /// Largest observed time (event or censoring).
    pub fn max_time(&self) -> f64 {
        self.subjects
            .iter()
            .map(|s| s.censor_time)
            .fold(0.0, f64::max)
    }

    /// Largest per-subject event count; lower-bounded by 1 so that the
    /// mean-scale spline always has a non-degenerate domain.
    pub fn max_event_count(&self) -> usize {
        self.subjects.iter().map(|s| s.n_events()).max().unwrap_or(0).max(1)
    }

    /// Upper end of the mean-scale spline domain: the 95th percentile of
    /// the pooled event ranks. The raw maximum would hang basis functions
    /// on a region visited by a handful of subjects and leave their
    /// coefficients unidentified; excursions past this bound go through
    /// the basis's linear extension instead.
    pub fn mean_scale_upper(&self) -> f64 {
        let ranks = self.pooled_event_ranks();
        if ranks.is_empty() {
            return 1.0;
        }
        let h = (ranks.len() - 1) as f64 * 0.95;
        let lo = h.floor() as usize;
        let frac = h - lo as f64;
        let hi = (lo + 1).min(ranks.len() - 1);
        (ranks[lo] * (1.0 - frac) + ranks[hi] * frac).max(1.0)
    }

    /// Running event index (1, 2, ...) pooled over subjects. Under the
    /// working model the j-th event of a subject sits near mean level j,
    /// so these serve as quantile anchors for the mean-scale spline.
    pub fn pooled_event_ranks(&self) -> Vec<f64> {
        let mut ranks: Vec<f64> = self
            .subjects
            .iter()
            .flat_map(|s| (1..=s.n_events()).map(|j| j as f64))
            .collect();
        ranks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ranks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subject_validation() {
        assert!(Subject::new("a", vec![0.1], vec![0.5], 1.0).is_ok());
        assert!(Subject::new("a", vec![0.1], vec![1.5], 1.0).is_err());
        assert!(Subject::new("a", vec![0.1], vec![0.0], 1.0).is_err());
        assert!(Subject::new("a", vec![0.1], vec![], 0.0).is_err());
        assert!(Subject::new("a", vec![f64::NAN], vec![], 1.0).is_err());
    }

    #[test]
    fn dataset_checks_covariate_lengths() {
        let a = Subject::new("a", vec![0.1, 0.2], vec![], 1.0).unwrap();
        let b = Subject::new("b", vec![0.1], vec![], 1.0).unwrap();
        assert!(Dataset::new(vec![a.clone()]).is_ok());
        assert!(Dataset::new(vec![a, b]).is_err());
        assert!(Dataset::new(vec![]).is_err());
    }

    #[test]
    fn pooled_and_max_helpers() {
        let a = Subject::new("a", vec![0.0], vec![0.5, 0.2], 2.0).unwrap();
        let b = Subject::new("b", vec![0.0], vec![1.5], 3.0).unwrap();
        let d = Dataset::new(vec![a, b]).unwrap();
        assert_eq!(d.total_events(), 3);
        assert_eq!(d.pooled_event_times(), vec![0.2, 0.5, 1.5]);
        assert_eq!(d.max_time(), 3.0);
        assert_eq!(d.max_event_count(), 2);
        assert_eq!(d.pooled_event_ranks(), vec![1.0, 1.0, 2.0]);
    }
}
