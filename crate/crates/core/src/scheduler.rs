//! AoI bookkeeping, virtual queues and the per-slot drift-plus-penalty
//! decisions, plus the round-robin baseline.
//!
//! Per slot, each loop `i` carries three virtual queues:
//!
//! ```text
//! Qb'  = max(Qb - gamma_b, 0) + beta_next       (time-averaged AoI)
//! Qp'  = max(Qp - gamma_p, 0) + alpha * P       (time-averaged power)
//! Qs'  = max(Qs - max(m_bar, 0), 0) + alpha     (stability rate)
//! ```
//!
//! The arrival of the AoI queue is the post-decision age, so the coefficient
//! of `alpha_i` in the drift-plus-penalty bound is
//! `Qb * beta - Qp * P* - Qs`, which is the priority used for ordering.

use serde::{Deserialize, Serialize};

use crate::wireless::ChannelDraw;

/// Differences `trK - trV` at or below this are treated as singular.
pub const RATIO_EPS: f64 = 1e-9;
/// Stability ratio reported in the singular case.
pub const RATIO_CAP: f64 = 1e6;
/// Auxiliary AoI target for an empty queue.
pub const GAMMA_MAX: f64 = 1e6;
pub const DEFAULT_WARMUP_SLOTS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerKind {
    Proposed,
    RoundRobin,
}

impl SchedulerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SchedulerKind::Proposed => "proposed",
            SchedulerKind::RoundRobin => "round_robin",
        }
    }
}

impl std::str::FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(SchedulerKind::Proposed),
            "round_robin" => Ok(SchedulerKind::RoundRobin),
            other => Err(format!("unknown scheduler '{other}' (expected proposed or round_robin)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovParams {
    /// Drift-vs-penalty trade-off `V`.
    pub v_weight: f64,
    pub omega_beta: f64,
    pub omega_power: f64,
}

impl Default for LyapunovParams {
    fn default() -> Self {
        Self { v_weight: 100.0, omega_beta: 1.0, omega_power: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VirtualQueues {
    pub q_beta: f64,
    pub q_power: f64,
    pub q_stab: f64,
}

/// Running time-average of `max(m, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StabilityTracker {
    sum: f64,
    count: u64,
}

impl StabilityTracker {
    pub fn record(&mut self, m: f64) -> f64 {
        self.sum += m.max(0.0);
        self.count += 1;
        self.m_bar()
    }

    pub fn m_bar(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Per-loop state owned by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopRuntime {
    pub beta: u64,
    pub queues: VirtualQueues,
    pub stability: StabilityTracker,
}

impl Default for LoopRuntime {
    fn default() -> Self {
        Self { beta: 1, queues: VirtualQueues::default(), stability: StabilityTracker::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub alpha: Vec<bool>,
    /// Transmit power, zero for unscheduled loops.
    pub power: Vec<f64>,
    pub gamma_beta: Vec<f64>,
    pub gamma_power: Vec<f64>,
}

impl Decision {
    pub fn scheduled(&self) -> Option<usize> {
        self.alpha.iter().position(|a| *a)
    }
}

/// `beta' = 1 + (1 - xi) beta`
pub fn aoi_update(beta: u64, delivered: bool) -> u64 {
    if delivered {
        1
    } else {
        1 + beta
    }
}

/// `m = trK / (trK - trV)`, with `0` for a non-positive gap below `trV` and
/// [`RATIO_CAP`] when the gap is positive but at most [`RATIO_EPS`].
pub fn stability_ratio(tr_k: f64, tr_v: f64) -> f64 {
    let gap = tr_k - tr_v;
    if gap > RATIO_EPS {
        tr_k / gap
    } else if gap > 0.0 || (gap == 0.0 && tr_k > 0.0) {
        RATIO_CAP
    } else {
        0.0
    }
}

/// Stationary point of `V w_b log(1 + g) - Qb g`, floored at 1.
pub fn aux_beta_opt(q_beta: f64, params: &LyapunovParams) -> f64 {
    if q_beta <= 0.0 {
        return GAMMA_MAX;
    }
    ((params.v_weight * params.omega_beta - q_beta) / q_beta).max(1.0)
}

/// Stationary point of `V w_p log(1 + g) - Qp g`, clamped to `[0, P_max]`.
pub fn aux_power_opt(q_power: f64, params: &LyapunovParams, p_max: f64) -> f64 {
    if q_power <= 0.0 {
        return p_max;
    }
    ((params.v_weight * params.omega_power - q_power) / q_power).max(0.0).min(p_max)
}

/// Channel-inversion power that meets the SNR threshold with equality,
/// clamped to `P_max`.
pub fn power_opt(channel: &ChannelDraw, snr_th: f64, q_power: f64, p_max: f64) -> f64 {
    let gain = channel.norm_sq();
    if q_power < 0.0 || gain <= 0.0 {
        return p_max;
    }
    let n0 = channel.n0();
    let mut p = snr_th * n0 / gain;
    // round up so that the SNR gate sees at least the threshold
    while p * gain / n0 < snr_th {
        p = p.next_up();
    }
    p.min(p_max)
}

/// Coefficient of `alpha_i` in the drift-plus-penalty bound, negated.
pub fn priority_score(queues: &VirtualQueues, beta: u64, p_star: f64) -> f64 {
    queues.q_beta * beta as f64 - queues.q_power * p_star - queues.q_stab
}

/// One-hot (or empty) schedule from priority scores.
///
/// Loops are walked in descending score (ties to the lower index). The first
/// loop with a positive score whose averaged stability bound admits a full
/// slot wins. During warm-up, when nobody qualifies, the best positive-score
/// loop is scheduled regardless of its bound.
pub fn schedule_by_score(scores: &[f64], m_bars: &[f64], in_warmup: bool) -> Vec<bool> {
    assert_eq!(scores.len(), m_bars.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut alpha = vec![false; scores.len()];
    let chosen = order
        .iter()
        .copied()
        .find(|&i| scores[i] > 0.0 && m_bars[i].max(0.0) >= 1.0)
        .or_else(|| if in_warmup { order.iter().copied().find(|&i| scores[i] > 0.0) } else { None });
    if let Some(i) = chosen {
        alpha[i] = true;
    }
    alpha
}

pub fn schedule(queues: &[VirtualQueues], betas: &[u64], m_bars: &[f64], p_stars: &[f64], in_warmup: bool) -> Vec<bool> {
    assert!(queues.len() == betas.len() && betas.len() == p_stars.len());
    let scores: Vec<f64> = queues
        .iter()
        .zip(betas)
        .zip(p_stars)
        .map(|((q, b), p)| priority_score(q, *b, *p))
        .collect();
    schedule_by_score(&scores, m_bars, in_warmup)
}

pub fn round_robin(k: u64, m: usize) -> Vec<bool> {
    assert!(m >= 1);
    let mut alpha = vec![false; m];
    alpha[(k % m as u64) as usize] = true;
    alpha
}

pub fn queue_update_beta(q: f64, gamma: f64, beta: f64) -> f64 {
    (q - gamma).max(0.0) + beta
}

pub fn queue_update_power(q: f64, gamma: f64, p_hat: f64) -> f64 {
    (q - gamma).max(0.0) + p_hat
}

pub fn queue_update_stab(q: f64, m_bar: f64, alpha: bool) -> f64 {
    (q - m_bar.max(0.0)).max(0.0) + if alpha { 1.0 } else { 0.0 }
}

/// Full slot decision for the fleet.
pub fn decide(
    kind: SchedulerKind,
    k: u64,
    loops: &[LoopRuntime],
    p_stars: &[f64],
    params: &LyapunovParams,
    p_max: f64,
    warmup_slots: u64,
) -> Decision {
    let gamma_beta: Vec<f64> = loops.iter().map(|l| aux_beta_opt(l.queues.q_beta, params)).collect();
    let gamma_power: Vec<f64> = loops.iter().map(|l| aux_power_opt(l.queues.q_power, params, p_max)).collect();
    let alpha = match kind {
        SchedulerKind::RoundRobin => round_robin(k, loops.len()),
        SchedulerKind::Proposed => {
            let queues: Vec<VirtualQueues> = loops.iter().map(|l| l.queues).collect();
            let betas: Vec<u64> = loops.iter().map(|l| l.beta).collect();
            let m_bars: Vec<f64> = loops.iter().map(|l| l.stability.m_bar()).collect();
            schedule(&queues, &betas, &m_bars, p_stars, k < warmup_slots)
        }
    };
    let power = alpha.iter().zip(p_stars).map(|(a, p)| if *a { *p } else { 0.0 }).collect();
    Decision { alpha, power, gamma_beta, gamma_power }
}

/// Applies the end-of-slot AoI and queue recursions to one loop.
pub fn end_of_slot(rt: &mut LoopRuntime, delivered: bool, alpha: bool, power: f64, gamma_beta: f64, gamma_power: f64) {
    let beta_next = aoi_update(rt.beta, delivered);
    let q = &mut rt.queues;
    q.q_beta = queue_update_beta(q.q_beta, gamma_beta, beta_next as f64);
    q.q_power = queue_update_power(q.q_power, gamma_power, power);
    q.q_stab = queue_update_stab(q.q_stab, rt.stability.m_bar(), alpha);
    rt.beta = beta_next;
}

/// One loop's contribution to the drift-plus-penalty bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub queues: VirtualQueues,
    pub gamma_beta: f64,
    pub gamma_power: f64,
    pub beta_next: f64,
    pub p_hat: f64,
    pub m_bar: f64,
    pub alpha: bool,
}

/// Right-hand side of the drift-plus-penalty bound without its constant.
pub fn per_slot_objective(terms: &[ObjectiveTerms], params: &LyapunovParams) -> f64 {
    terms
        .iter()
        .map(|t| {
            let q = &t.queues;
            let a = if t.alpha { 1.0 } else { 0.0 };
            params.v_weight * params.omega_beta * t.gamma_beta.ln_1p() - q.q_beta * t.gamma_beta
                + params.v_weight * params.omega_power * t.gamma_power.ln_1p()
                - q.q_power * t.gamma_power
                + q.q_beta * t.beta_next
                + q.q_power * t.p_hat
                - q.q_stab * (t.m_bar.max(0.0) - a)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn params(v: f64) -> LyapunovParams {
        LyapunovParams { v_weight: v, omega_beta: 1.0, omega_power: 1.0 }
    }

    #[test]
    fn aoi_examples() {
        assert_eq!(aoi_update(3, false), 4);
        assert_eq!(aoi_update(7, true), 1);
        assert_eq!(aoi_update(1, true), 1);
    }

    #[test]
    fn stability_ratio_examples() {
        assert_eq!(stability_ratio(2.0, 1.0), 2.0);
        assert_eq!(stability_ratio(1.0, 2.0), 0.0);
        assert_eq!(stability_ratio(1.0, 1.0), RATIO_CAP);
        assert_eq!(stability_ratio(1.0, 1.0 - 1e-12), RATIO_CAP);
        assert_eq!(stability_ratio(0.0, 0.0), 0.0);
    }

    #[test]
    fn tracker_averages_clipped_ratio() {
        let mut t = StabilityTracker::default();
        assert_eq!(t.m_bar(), 0.0);
        t.record(3.0);
        t.record(-5.0);
        assert_eq!(t.m_bar(), 1.5);
    }

    #[test]
    fn aux_beta_examples() {
        assert_eq!(aux_beta_opt(2.0, &params(10.0)), 4.0);
        // derivative of V log(1 + g) - q g vanishes at the returned value
        assert!((10.0 / (1.0 + 4.0) - 2.0f64).abs() < 1e-15);
        assert_eq!(aux_beta_opt(5.0, &params(1.0)), 1.0);
        assert_eq!(aux_beta_opt(0.0, &params(1.0)), GAMMA_MAX);
    }

    #[test]
    fn aux_power_examples() {
        assert_eq!(aux_power_opt(5.0, &params(10.0), 10.0), 1.0);
        assert_eq!(aux_power_opt(1e9, &params(10.0), 10.0), 0.0);
        assert_eq!(aux_power_opt(1.0, &params(1e3), 10.0), 10.0);
        assert_eq!(aux_power_opt(0.0, &params(1.0), 7.0), 7.0);
    }

    #[test]
    fn power_opt_examples() {
        let h = ChannelDraw::new(DVector::from_row_slice(&[1.0, 1.0]), 0.5);
        assert_eq!(power_opt(&h, 4.0, 0.0, 10.0), 1.0);
        // needs 2 * P_max
        assert_eq!(power_opt(&h, 40.0, 0.0, 5.0), 5.0);
        assert!(!crate::wireless::success(crate::wireless::snr(5.0, &h), 40.0));
        assert!(power_opt(&h, 1e-12, 0.0, 10.0) < 1e-11);
        let dead = ChannelDraw::new(DVector::zeros(2), 1.0);
        assert_eq!(power_opt(&dead, 4.0, 0.0, 10.0), 10.0);
        assert_eq!(power_opt(&h, 4.0, -1.0, 10.0), 10.0);
    }

    #[test]
    fn power_opt_always_meets_threshold() {
        let n0s = [0.1, 0.3, 1.0, 7.0];
        for (i, n0) in n0s.iter().enumerate() {
            for j in 1..200 {
                let g = DVector::from_row_slice(&[0.01 * j as f64, 0.37 * i as f64, 0.123]);
                let h = ChannelDraw::new(g, *n0);
                let p = power_opt(&h, 4.0, 1.0, f64::INFINITY);
                assert!(crate::wireless::success(crate::wireless::snr(p, &h), 4.0));
            }
        }
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(schedule_by_score(&[5.0, 1.0], &[2.0, 2.0], false), vec![true, false]);
        assert_eq!(schedule_by_score(&[-1.0, -2.0], &[2.0, 2.0], false), vec![false, false]);
        assert_eq!(schedule_by_score(&[3.0], &[0.0], true), vec![true]);
        assert_eq!(schedule_by_score(&[3.0], &[0.0], false), vec![false]);
        // best score fails the bound, runner-up qualifies
        assert_eq!(schedule_by_score(&[5.0, 1.0], &[0.5, 1.0], false), vec![false, true]);
        // ties go to the lower index
        assert_eq!(schedule_by_score(&[2.0, 2.0], &[1.0, 1.0], false), vec![true, false]);
    }

    #[test]
    fn schedule_uses_priority_score() {
        let q = |b, p, s| VirtualQueues { q_beta: b, q_power: p, q_stab: s };
        let alpha = schedule(&[q(1.0, 0.0, 0.0), q(2.0, 1.0, 0.0)], &[3, 3], &[1.0, 1.0], &[1.0, 1.0], false);
        assert_eq!(alpha, vec![false, true]);
    }

    #[test]
    fn queue_examples() {
        assert_eq!(queue_update_beta(5.0, 2.0, 3.0), 6.0);
        assert_eq!(queue_update_beta(1.0, 5.0, 2.0), 2.0);
        assert_eq!(queue_update_beta(0.0, 0.0, 1.0), 1.0);
        assert_eq!(queue_update_power(5.0, 1.0, 0.5), 4.5);
        assert_eq!(queue_update_power(3.0, 1.0, 0.0), 2.0);
        assert_eq!(queue_update_power(0.0, 10.0, 0.0), 0.0);
        assert_eq!(queue_update_stab(2.0, 0.5, true), 2.5);
        assert_eq!(queue_update_stab(2.0, 5.0, false), 0.0);
        assert_eq!(queue_update_stab(0.0, 0.0, true), 1.0);
    }

    #[test]
    fn round_robin_examples() {
        assert_eq!(round_robin(0, 3), vec![true, false, false]);
        assert_eq!(round_robin(4, 3), vec![false, true, false]);
        let a = round_robin(29, 30);
        assert!(a[29] && a.iter().filter(|x| **x).count() == 1);
    }

    #[test]
    fn objective_zero_case() {
        let t = ObjectiveTerms {
            queues: VirtualQueues::default(),
            gamma_beta: 3.0,
            gamma_power: 1.0,
            beta_next: 4.0,
            p_hat: 0.0,
            m_bar: 2.0,
            alpha: false,
        };
        assert_eq!(per_slot_objective(&[t], &params(0.0)), 0.0);
    }

    #[test]
    fn objective_by_hand() {
        let t = ObjectiveTerms {
            queues: VirtualQueues { q_beta: 2.0, q_power: 3.0, q_stab: 0.5 },
            gamma_beta: 1.0,
            gamma_power: 0.5,
            beta_next: 4.0,
            p_hat: 2.0,
            m_bar: 1.5,
            alpha: true,
        };
        let v = 10.0;
        let expected = v * 2f64.ln() - 2.0 + v * 1.5f64.ln() - 1.5 + 8.0 + 6.0 - 0.25;
        assert!((per_slot_objective(&[t], &params(v)) - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_is_stationary_at_closed_forms() {
        let p = params(100.0);
        let queues = VirtualQueues { q_beta: 20.0, q_power: 30.0, q_stab: 1.0 };
        let gb = aux_beta_opt(queues.q_beta, &p);
        let gp = aux_power_opt(queues.q_power, &p, 10.0);
        assert!(gb > 1.0 && gp > 0.0 && gp < 10.0);
        let base = ObjectiveTerms { queues, gamma_beta: gb, gamma_power: gp, beta_next: 3.0, p_hat: 0.0, m_bar: 1.0, alpha: false };
        let j0 = per_slot_objective(&[base], &p);
        for d in [-0.01, 0.01] {
            for t in [
                ObjectiveTerms { gamma_beta: gb + d, ..base },
                ObjectiveTerms { gamma_power: gp + d, ..base },
            ] {
                let j = per_slot_objective(&[t], &p);
                assert!((j - j0).abs() <= 1e-3 * j0.abs(), "{j} vs {j0}");
            }
        }
    }

    #[test]
    fn end_of_slot_matches_recursions() {
        let mut rt = LoopRuntime::default();
        rt.queues = VirtualQueues { q_beta: 4.0, q_power: 2.0, q_stab: 1.0 };
        rt.beta = 3;
        rt.stability.record(0.25);
        end_of_slot(&mut rt, false, true, 1.5, 1.0, 0.5);
        assert_eq!(rt.beta, 4);
        assert_eq!(rt.queues, VirtualQueues { q_beta: 7.0, q_power: 3.0, q_stab: 1.75 });
        end_of_slot(&mut rt, true, true, 1.0, 100.0, 100.0);
        assert_eq!(rt.beta, 1);
        assert_eq!(rt.queues.q_beta, 1.0);
    }

    #[test]
    fn decide_round_robin_uses_inversion_power() {
        let loops = vec![LoopRuntime::default(); 3];
        let d = decide(SchedulerKind::RoundRobin, 4, &loops, &[1.0, 2.0, 3.0], &params(1.0), 10.0, 0);
        assert_eq!(d.alpha, vec![false, true, false]);
        assert_eq!(d.power, vec![0.0, 2.0, 0.0]);
        assert_eq!(d.scheduled(), Some(1));
    }
}
