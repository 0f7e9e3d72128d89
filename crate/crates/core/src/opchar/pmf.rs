use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrections::{Procedure, ThresholdSet};
use crate::error::{Error, Result};
use crate::mvn::{orthant_cells, qmc_normal_stream, CorrMatrix, NormalStream, QmcSettings};
use crate::outcome::ZLaw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PmfMethod {
    AnalyticBox,
    Qmc,
    Simulation,
}

/// Probability of every rejection outcome ψ ∈ {0,1}^K, indexed by the bit
/// mask of rejected hypotheses (bit k−1 for H_k).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPmf {
    pub k: usize,
    pub probs: Vec<f64>,
    pub method: PmfMethod,
    pub error_estimate: f64,
}

impl RejectionPmf {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.probs.iter().enumerate().map(|(m, &p)| (m as u32, p))
    }
}

const STREAM_CACHE_LIMIT: usize = 6;

/// Computes rejection pmfs for one fixed set of thresholds, caching the
/// centred quasi-random streams used by step-wise procedures so repeated
/// evaluations under the same correlation only shift a mean.
pub struct PmfEvaluator {
    thresholds: ThresholdSet,
    procedure: Procedure,
    settings: QmcSettings,
    streams: Mutex<HashMap<Vec<u64>, Arc<NormalStream>>>,
}

impl PmfEvaluator {
    pub fn new(thresholds: &ThresholdSet, settings: &QmcSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            thresholds: thresholds.clone(),
            procedure: Procedure::new(thresholds),
            settings: *settings,
            streams: Mutex::new(HashMap::new()),
        })
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn pmf(&self, law: &ZLaw) -> Result<RejectionPmf> {
        let k = self.thresholds.k();
        if law.mean.len() != k || law.corr.dim() != k {
            return Err(Error::Domain(format!(
                "law has dimension {}, thresholds have {k}",
                law.mean.len()
            )));
        }
        if self.thresholds.mcc.is_single_step() {
            let crit = self.thresholds.z_critical();
            let (probs, error) = orthant_cells(&crit, &law.mean, &law.corr, &self.settings)?;
            return Ok(RejectionPmf {
                k,
                probs,
                method: PmfMethod::AnalyticBox,
                error_estimate: error,
            });
        }
        let stream = self.stream(&law.corr)?;
        Ok(self.count(&stream, &law.mean))
    }

    fn stream(&self, corr: &CorrMatrix) -> Result<Arc<NormalStream>> {
        let key: Vec<u64> = corr.rows().iter().flatten().map(|v| v.to_bits()).collect();
        if let Some(s) = self.streams.lock().expect("stream cache poisoned").get(&key) {
            return Ok(Arc::clone(s));
        }
        let dim = corr.dim();
        let stream = Arc::new(qmc_normal_stream(dim, &self.settings, corr, &vec![0.0; dim])?);
        let mut cache = self.streams.lock().expect("stream cache poisoned");
        if cache.len() >= STREAM_CACHE_LIMIT {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&stream));
        Ok(stream)
    }

    fn count(&self, stream: &NormalStream, mean: &[f64]) -> RejectionPmf {
        let k = mean.len();
        let cells = 1usize << k;
        let per = stream.per_randomization() as f64;
        let freqs: Vec<Vec<f64>> = (0..stream.randomizations())
            .into_par_iter()
            .map(|r| {
                let mut counts = vec![0u64; cells];
                let mut z = [0.0; 8];
                for point in stream.block(r) {
                    for d in 0..k {
                        z[d] = point[d] + mean[d];
                    }
                    counts[self.procedure.reject_z_mask(&z[..k]) as usize] += 1;
                }
                counts.into_iter().map(|c| c as f64 / per).collect()
            })
            .collect();
        let r = freqs.len() as f64;
        let mut probs = vec![0.0; cells];
        let mut worst: f64 = 0.0;
        for cell in 0..cells {
            let mean = freqs.iter().map(|f| f[cell]).sum::<f64>() / r;
            probs[cell] = mean;
            if freqs.len() > 1 {
                let var = freqs.iter().map(|f| (f[cell] - mean).powi(2)).sum::<f64>() / (r - 1.0);
                worst = worst.max((var / r).sqrt());
            } else {
                worst = f64::INFINITY;
            }
        }
        RejectionPmf {
            k,
            probs,
            method: PmfMethod::Qmc,
            error_estimate: 3.0 * worst,
        }
    }
}

/// Rejection-outcome distribution of the procedure defined by `thresholds`
/// when the statistics follow `law`. Single-step corrections are integrated
/// cell by cell; step-wise corrections are evaluated on a quasi-random
/// stream of statistic vectors.
pub fn outcome_pmf(law: &ZLaw, thresholds: &ThresholdSet, settings: &QmcSettings) -> Result<RejectionPmf> {
    PmfEvaluator::new(thresholds, settings)?.pmf(law)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrections::{thresholds, Mcc};
    use crate::mvn::CorrMatrix;

    fn law(mean: Vec<f64>, rho: f64) -> ZLaw {
        let k = mean.len();
        ZLaw {
            info: vec![1.0; k],
            corr: CorrMatrix::exchangeable(k, rho).unwrap(),
            mean,
        }
    }

    #[test]
    fn k1_unadjusted_null_rejects_alpha() {
        let s = QmcSettings::default();
        let t = thresholds(Mcc::None, 0.05, 1, None, &s).unwrap();
        let pmf = outcome_pmf(&law(vec![0.0], 0.0), &t, &s).unwrap();
        assert!((pmf.probs[1] - 0.05).abs() < 1e-14);
        assert_eq!(pmf.method, PmfMethod::AnalyticBox);
    }

    #[test]
    fn normalised() {
        let s = QmcSettings::default();
        for mcc in Mcc::ALL {
            let corr = CorrMatrix::exchangeable(3, 0.5).unwrap();
            let t = thresholds(mcc, 0.1, 3, Some(&corr), &s).unwrap();
            let pmf = outcome_pmf(&law(vec![0.5, 1.0, 2.0], 0.5), &t, &s).unwrap();
            assert!((pmf.total() - 1.0).abs() < 1e-6, "{mcc:?}");
            assert!(pmf.probs.iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn analytic_and_qmc_agree_on_single_step() {
        let s = QmcSettings::default();
        let t = thresholds(Mcc::Bonferroni, 0.05, 3, None, &s).unwrap();
        let l = law(vec![0.3, 1.5, 2.5], 0.4);
        let analytic = outcome_pmf(&l, &t, &s).unwrap();
        let eval = PmfEvaluator::new(&t, &s).unwrap();
        let stream = eval.stream(&l.corr).unwrap();
        let qmc = eval.count(&stream, &l.mean);
        for (a, q) in analytic.probs.iter().zip(&qmc.probs) {
            assert!(
                (a - q).abs() <= analytic.error_estimate + qmc.error_estimate + 1e-6,
                "{a} vs {q} (err {} + {})",
                analytic.error_estimate,
                qmc.error_estimate
            );
        }
    }

    #[test]
    fn cached_streams_reproduce() {
        let s = QmcSettings::default();
        let t = thresholds(Mcc::HolmBonferroni, 0.05, 2, None, &s).unwrap();
        let eval = PmfEvaluator::new(&t, &s).unwrap();
        let a = eval.pmf(&law(vec![1.0, 2.0], 0.5)).unwrap();
        let b = eval.pmf(&law(vec![1.0, 2.0], 0.5)).unwrap();
        let c = outcome_pmf(&law(vec![1.0, 2.0], 0.5), &t, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }
}
