use std::time::Duration;

use rayon::prelude::*;

use crate::clock::SimTime;

use super::dispatch::Dispatcher;
use super::politeness::{schedule_batch, Arbiter, PlannedProbe, PolitenessPolicy, Purpose};
use super::probe::Prober;
use super::{ProbeOutcome, ProberConfig, Target};

/// Gap left after the last grant of a stage before the next stage starts,
/// covering the longest possible exchange of the previous one.
const STAGE_SETTLE: Duration = Duration::from_secs(60);

/// A probing campaign: one arbiter, one simulated timeline, one outcome
/// log. Handshakes are granted sequentially and executed in parallel; the
/// results only depend on the grants, so runs are reproducible.
pub struct Campaign<'d> {
    prober: Prober<'d>,
    arbiter: Arbiter,
    now: SimTime,
    log: Vec<ProbeOutcome>,
}

impl<'d> Campaign<'d> {
    pub fn new(dispatcher: &'d dyn Dispatcher, config: ProberConfig, policy: PolitenessPolicy, start: SimTime) -> Self {
        Campaign {
            prober: Prober::new(dispatcher, config, policy.clone()),
            arbiter: Arbiter::new(policy),
            now: start,
            log: Vec::new(),
        }
    }

    pub fn prober(&self) -> &Prober<'d> {
        &self.prober
    }

    pub fn arbiter(&self) -> &Arbiter {
        &self.arbiter
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn log(&self) -> &[ProbeOutcome] {
        &self.log
    }

    fn settle(&mut self) {
        if let Some(t) = self.arbiter.latest_grant() {
            self.now = self.now.max(t + STAGE_SETTLE);
        }
    }

    /// Probes every target once, then retries (D)TLS on standard ports
    /// where the plaintext attempt failed. Outcomes come back in emission
    /// order and are appended to the log.
    pub fn probe_batch(&mut self, targets: &[Target], rng_seed: u64) -> Vec<ProbeOutcome> {
        let plan = schedule_batch(targets, &mut self.arbiter, self.now, rng_seed);
        let prober = &self.prober;
        let mut outcomes: Vec<ProbeOutcome> = plan.par_iter().map(|p| prober.probe(&p.target, p.at)).collect();

        let retries: Vec<(usize, SimTime)> = outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.wants_tls_fallback())
            .map(|(i, o)| {
                let at = self.arbiter.reserve(o.target.address, o.target.spec.port(), o.timestamp, Purpose::TlsFallback);
                (i, at)
            })
            .collect();
        let prober = &self.prober;
        let updated: Vec<ProbeOutcome> = retries
            .par_iter()
            .map(|&(i, at)| prober.tls_fallback(&outcomes[i], at))
            .collect();
        for ((i, _), o) in retries.into_iter().zip(updated) {
            outcomes[i] = o;
        }
        self.settle();
        self.log.extend(outcomes.iter().cloned());
        outcomes
    }

    /// The plan `probe_batch` would follow, computed on a scratch arbiter.
    pub fn dry_run(&self, targets: &[Target], rng_seed: u64) -> Vec<PlannedProbe> {
        let mut scratch = self.arbiter.clone();
        schedule_batch(targets, &mut scratch, self.now, rng_seed)
    }

    /// Extra handshakes (assessment, alias neighbours), each granted by the
    /// arbiter before `run` executes it. Results keep request order.
    pub fn followups<Q: Sync, R: Send>(
        &mut self,
        requests: &[Q],
        target_of: impl Fn(&Q) -> (Target, Purpose),
        run: impl Fn(&Prober<'d>, &Q, &Target, SimTime) -> R + Sync,
    ) -> Vec<(SimTime, R)> {
        let granted: Vec<(Target, SimTime)> = requests
            .iter()
            .map(|q| {
                let (t, purpose) = target_of(q);
                (t, self.arbiter.reserve(t.address, t.spec.port(), self.now, purpose))
            })
            .collect();
        let prober = &self.prober;
        let results: Vec<R> = requests
            .par_iter()
            .zip(granted.par_iter())
            .map(|(q, (t, at))| run(prober, q, t, *at))
            .collect();
        self.settle();
        granted.into_iter().map(|(_, at)| at).zip(results).collect()
    }
}
