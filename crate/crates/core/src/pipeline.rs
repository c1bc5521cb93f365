//! Scenario → classification → prediction → simulation → verification.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::analysis::{self, critical_units, PredictOptions, Prediction, VerdictRecord, VerifyInput};
use crate::convexity::{check_a4, classify_regions, lower_convex_envelope, A4Report, Envelope, RegionDecomposition, Tolerances};
use crate::dynamics::{Simulator, Trajectory};
use crate::error::{Error, Result};
use crate::initial_data::{Discretization, InitialProfile};
use crate::protocol::Protocol;
use crate::scenario::Scenario;

pub struct Analysis {
    pub scenario: Scenario,
    pub profile: InitialProfile,
    pub envelope: Envelope,
    pub regions: RegionDecomposition,
    pub a4: A4Report,
    /// Err holds the refusal message when the prediction is refused.
    pub prediction: std::result::Result<Prediction, String>,
}

impl Analysis {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let protocol = Protocol::from_spec(&scenario.protocol)?;
        let profile = InitialProfile::new(scenario.initial_data(), protocol)?;
        let flux = profile.flux();
        let envelope = lower_convex_envelope(flux)?;
        let regions = classify_regions(flux, &envelope, Tolerances::for_flux(flux))?;
        let a4 = check_a4(flux, &regions);
        let opts = PredictOptions {
            core_fraction: scenario.tolerances.core_fraction,
            diameter_bound: None,
        };
        let prediction = analysis::predict(
            &regions,
            profile.quantile(),
            flux,
            &envelope,
            profile.protocol(),
            profile.diameter(),
            opts,
        )
        .map_err(|e| e.to_string());
        Ok(Analysis {
            scenario,
            profile,
            envelope,
            regions,
            a4,
            prediction,
        })
    }

    pub fn protocol(&self) -> &Protocol {
        self.profile.protocol()
    }

    /// Labels every grid must contain: region and L boundaries, K ends and
    /// the user's snaps.
    pub fn snap_labels(&self) -> Result<Vec<f64>> {
        let r = &self.regions;
        let mut s: Vec<f64> = self.scenario.run.snaps.clone();
        for &(lo, hi) in r.sigma_plus.iter().chain(&r.sigma_zero).chain(&r.sigma_minus) {
            s.extend([lo, hi]);
        }
        for (lo, hi) in critical_units(&self.envelope, r)? {
            s.extend([lo, hi]);
        }
        for &comp in &r.sigma_minus {
            let (a, b) = analysis::core_of(comp, self.scenario.tolerances.core_fraction);
            s.extend([a, b]);
        }
        s.retain(|&m| m > -0.5 && m < 0.5);
        s.sort_by(f64::total_cmp);
        s.dedup();
        Ok(s)
    }

    pub fn discretize(&self, n: usize) -> Result<Discretization> {
        let d = self.profile.discretize(n, &self.snap_labels()?)?;
        d.check_resolution(&self.regions.sigma_minus)?;
        Ok(d)
    }

    pub fn simulate(&self, n: usize) -> Result<Trajectory> {
        let d = self.discretize(n)?;
        let sim = Simulator::new(self.protocol().clone(), self.scenario.sim_options())?;
        sim.run(&d, self.scenario.run.horizon, &self.scenario.sample_times())
    }

    /// One trajectory per N, computed in parallel, returned in schedule order.
    pub fn simulate_all(&self, schedule: &[usize]) -> Result<Vec<Trajectory>> {
        schedule.par_iter().map(|&n| self.simulate(n)).collect()
    }

    /// `count` distinct increasing pairs drawn with a seeded generator from
    /// the labels shared by every trajectory.
    pub fn label_pairs(trajs: &[Trajectory], count: usize, seed: u64) -> Vec<(f64, f64)> {
        let Some(first) = trajs.first() else {
            return vec![];
        };
        let labels: Vec<f64> = first.theta[1..]
            .iter()
            .copied()
            .filter(|m| trajs.iter().all(|t| t.theta.binary_search_by(|x| x.total_cmp(m)).is_ok()))
            .collect();
        if labels.len() < 2 {
            return vec![];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let want = count.min(labels.len() * (labels.len() - 1) / 2);
        let mut pairs = vec![];
        for _ in 0..want * 4 {
            if pairs.len() == want {
                break;
            }
            let idx = sample(&mut rng, labels.len(), 2);
            let (a, b) = (idx.index(0).min(idx.index(1)), idx.index(0).max(idx.index(1)));
            let p = (labels[a], labels[b]);
            if !pairs.contains(&p) {
                pairs.push(p);
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        pairs
    }

    pub fn verify(&self, trajs: &[Trajectory], seed: u64) -> Result<Vec<VerdictRecord>> {
        let pred = self
            .prediction
            .as_ref()
            .map_err(|m| Error::InvalidInput(format!("prediction refused: {m}")))?;
        let pairs = Self::label_pairs(trajs, self.scenario.run.pairs, seed);
        let times = self.scenario.sample_times();
        let input = VerifyInput {
            prediction: pred,
            protocol: self.protocol(),
            x0: self.profile.quantile(),
            regions: &self.regions,
            envelope: &self.envelope,
            pairs: &pairs,
            sample_times: &times,
        };
        analysis::verify(&input, trajs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct W1Row {
    pub t: f64,
    pub n: usize,
    pub n2: usize,
    pub w1: f64,
}

/// W₁ between consecutive N at each time.
pub fn convergence_table(trajs: &[Trajectory], times: &[f64]) -> Result<Vec<W1Row>> {
    let mut rows = vec![];
    for &t in times {
        let qs = trajs
            .iter()
            .map(|tr| Ok(analysis::state_quantile(&tr.theta, &tr.state_at(t)?)))
            .collect::<Result<Vec<_>>>()?;
        for k in 1..trajs.len() {
            rows.push(W1Row {
                t,
                n: trajs[k - 1].len(),
                n2: trajs[k].len(),
                w1: analysis::wasserstein1(&qs[k - 1], &qs[k]),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_reach_their_branch() {
        for name in Scenario::bundled_names() {
            let sc = Scenario::bundled(name).unwrap();
            let want = sc.expected_branch().unwrap();
            let a = Analysis::new(sc).unwrap();
            assert!(a.a4.holds, "{name}");
            let pred = a.prediction.as_ref().unwrap();
            assert!(pred.branches().contains(&want), "{name}");
        }
    }
}
