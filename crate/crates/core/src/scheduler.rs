//! Source-precedence power allocation and the per-slot genetic-algorithm
//! scheduler for flexible loads and EV charging.

use crate::behavior::{slots_for_energy, LoadKind, LoadRequest};
use rand::Rng;
use serde::{Deserialize, Serialize};
use rustc_hash::FxHashSet;
use smallvec::{smallvec, SmallVec};

/// Where a cluster's demand is served from in one slot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSplit {
    pub nonflex_kw: f64,
    pub flex_kw: f64,
    pub pv_self_to_nonflex_kw: f64,
    pub pv_self_to_flex_kw: f64,
    pub pv_traded_to_nonflex_kw: f64,
    pub pv_traded_to_flex_kw: f64,
    pub grid_kw: f64,
}

impl PowerSplit {
    pub fn demand_kw(&self) -> f64 {
        self.nonflex_kw + self.flex_kw
    }

    pub fn pv_self_kw(&self) -> f64 {
        self.pv_self_to_nonflex_kw + self.pv_self_to_flex_kw
    }

    pub fn pv_traded_kw(&self) -> f64 {
        self.pv_traded_to_nonflex_kw + self.pv_traded_to_flex_kw
    }

    pub fn uses_pv(&self) -> bool {
        self.pv_self_kw() > 0.0
    }

    pub fn uses_grid(&self) -> bool {
        self.grid_kw > 0.0
    }
}

/// The grid share of a split reached the per-cluster limit.
#[derive(Clone, Copy, Debug, PartialEq, thiserror::Error)]
#[error("grid draw {:.3} kW reaches the {pw_max_kw} kW limit", split.grid_kw)]
pub struct InfeasibleSlot {
    pub split: PowerSplit,
    pub pw_max_kw: f64,
}

impl InfeasibleSlot {
    pub fn excess_kw(&self) -> f64 {
        self.split.grid_kw - self.pw_max_kw
    }
}

/// Serves non-flexible demand first from own PV, then flexible demand from
/// the remaining own PV, then whatever is left from traded PV (non-flexible
/// first) and finally from the grid. A load may be split across sources.
pub fn allocate_power(
    nonflex_kw: f64,
    flex_kw: f64,
    pv_self_kw: f64,
    pv_traded_kw: f64,
    pw_max_kw: f64,
) -> Result<PowerSplit, InfeasibleSlot> {
    let self_nonflex = nonflex_kw.min(pv_self_kw);
    let self_flex = flex_kw.min(pv_self_kw - self_nonflex);
    let nonflex_left = nonflex_kw - self_nonflex;
    let flex_left = flex_kw - self_flex;
    let traded_nonflex = nonflex_left.min(pv_traded_kw);
    let traded_flex = flex_left.min(pv_traded_kw - traded_nonflex);
    let split = PowerSplit {
        nonflex_kw,
        flex_kw,
        pv_self_to_nonflex_kw: self_nonflex,
        pv_self_to_flex_kw: self_flex,
        pv_traded_to_nonflex_kw: traded_nonflex,
        pv_traded_to_flex_kw: traded_flex,
        grid_kw: (nonflex_left - traded_nonflex) + (flex_left - traded_flex),
    };
    if split.grid_kw >= pw_max_kw {
        Err(InfeasibleSlot { split, pw_max_kw })
    } else {
        Ok(split)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    pub cost_usd: f64,
    pub grid_dependency_kw: f64,
    pub total_delay_slots: f64,
    /// How far the candidate's grid draw reaches past the limit, 0 if feasible.
    pub violation_kw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub w_cost: f64,
    pub w_grid: f64,
    pub w_delay: f64,
    /// Fitness penalty per kW of grid draw at or above the limit.
    pub penalty_per_kw: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 100,
            crossover_prob: 0.8,
            mutation_prob: 0.01,
            w_cost: 1.0,
            w_grid: 0.05,
            w_delay: 0.01,
            penalty_per_kw: 1000.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid GA parameter {0}")]
pub struct GaParamError(pub &'static str);

impl GaParams {
    pub fn validate(&self) -> Result<(), GaParamError> {
        if self.population < 2 {
            return Err(GaParamError("population"));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return Err(GaParamError("crossover_prob"));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(GaParamError("mutation_prob"));
        }
        for (w, name) in [(self.w_cost, "w_cost"), (self.w_grid, "w_grid"), (self.w_delay, "w_delay")] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(GaParamError(name));
            }
        }
        if !(self.penalty_per_kw >= 0.0) {
            return Err(GaParamError("penalty_per_kw"));
        }
        Ok(())
    }
}

/// One schedulable request as seen by the optimiser.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingGene {
    pub power_kw: f64,
    pub accumulated_delay_slots: u32,
    pub forced: bool,
}

/// Everything the fitness of one cluster's slot decision depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotContext {
    pub nonflex_kw: f64,
    pub genes: Vec<PendingGene>,
    /// Own PV left for local use after any delivery to other clusters.
    pub pv_self_kw: f64,
    /// PV received from other clusters this slot.
    pub pv_traded_kw: f64,
    /// Cleared trade: positive when buying, negative when selling.
    pub traded_signed_kw: f64,
    pub ec_usd_per_kwh: f64,
    pub smp_usd_per_kwh: f64,
    pub pw_max_kw: f64,
}

impl SlotContext {
    pub fn flex_kw(&self, genes: &[bool]) -> f64 {
        self.genes
            .iter()
            .zip(genes)
            .filter(|(_, on)| **on)
            .map(|(g, _)| g.power_kw)
            .sum()
    }

    pub fn allocate(&self, genes: &[bool]) -> Result<PowerSplit, InfeasibleSlot> {
        allocate_power(
            self.nonflex_kw,
            self.flex_kw(genes),
            self.pv_self_kw,
            self.pv_traded_kw,
            self.pw_max_kw,
        )
    }
}

/// Margin added to a violation so that a grid draw exactly at the limit is
/// still penalised.
const VIOLATION_MARGIN_KW: f64 = 1e-3;

pub fn evaluate_objectives(genes: &[bool], ctx: &SlotContext) -> ObjectiveVector {
    assert_eq!(genes.len(), ctx.genes.len(), "one gene per pending request");
    let (split, violation_kw) = match ctx.allocate(genes) {
        Ok(split) => (split, 0.0),
        Err(e) => (e.split, e.excess_kw() + VIOLATION_MARGIN_KW),
    };
    let cost_usd = (split.grid_kw * ctx.ec_usd_per_kwh + ctx.traded_signed_kw * ctx.smp_usd_per_kwh) / 6.0;
    let grid_dependency_kw = split.grid_kw - split.pv_self_kw() - split.pv_traded_kw();
    let total_delay_slots = ctx
        .genes
        .iter()
        .zip(genes)
        .filter(|(_, on)| !**on)
        .map(|(g, _)| (g.accumulated_delay_slots + 1) as f64)
        .sum();
    ObjectiveVector {
        cost_usd,
        grid_dependency_kw,
        total_delay_slots,
        violation_kw,
    }
}

/// Weighted-sum fitness; lower is better.
pub fn scalarize(obj: &ObjectiveVector, params: &GaParams) -> f64 {
    params.w_cost * obj.cost_usd
        + params.w_grid * obj.grid_dependency_kw
        + params.w_delay * obj.total_delay_slots
        + params.penalty_per_kw * obj.violation_kw
}

pub fn fitness(genes: &[bool], ctx: &SlotContext, params: &GaParams) -> f64 {
    scalarize(&evaluate_objectives(genes, ctx), params)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaOutcome {
    pub genes: Vec<bool>,
    pub fitness: f64,
    /// Best fitness found so far, after the initial population and after
    /// every generation.
    pub best_history: Vec<f64>,
}

/// Candidate packed 64 genes per word, inline up to 128 genes.
type Bits = SmallVec<[u64; 2]>;

/// Fitness evaluation on packed candidates, with per-gene sums hoisted.
struct PackedFitness<'a> {
    ctx: &'a SlotContext,
    params: &'a GaParams,
    forced: Bits,
    /// Mask of the valid bits of every word.
    valid: Bits,
    all_delay: f64,
}

impl<'a> PackedFitness<'a> {
    fn new(ctx: &'a SlotContext, params: &'a GaParams) -> Self {
        let n = ctx.genes.len();
        let words = n.div_ceil(64);
        let mut forced: Bits = smallvec![0u64; words];
        let mut valid: Bits = smallvec![0u64; words];
        for (i, g) in ctx.genes.iter().enumerate() {
            valid[i / 64] |= 1 << (i % 64);
            if g.forced {
                forced[i / 64] |= 1 << (i % 64);
            }
        }
        let all_delay = ctx.genes.iter().map(|g| (g.accumulated_delay_slots + 1) as f64).sum();
        Self {
            ctx,
            params,
            forced,
            valid,
            all_delay,
        }
    }

    fn fix(&self, bits: &mut Bits) {
        for (w, (f, v)) in bits.iter_mut().zip(self.forced.iter().zip(&self.valid)) {
            *w = (*w | f) & v;
        }
    }

    fn fitness(&self, bits: &Bits) -> f64 {
        let mut flex = 0.0;
        let mut running_delay = 0.0;
        for (wi, word) in bits.iter().enumerate() {
            let mut w = *word;
            while w != 0 {
                let g = &self.ctx.genes[wi * 64 + w.trailing_zeros() as usize];
                flex += g.power_kw;
                running_delay += (g.accumulated_delay_slots + 1) as f64;
                w &= w - 1;
            }
        }
        let c = self.ctx;
        let (split, violation_kw) = match allocate_power(c.nonflex_kw, flex, c.pv_self_kw, c.pv_traded_kw, c.pw_max_kw) {
            Ok(split) => (split, 0.0),
            Err(e) => (e.split, e.excess_kw() + VIOLATION_MARGIN_KW),
        };
        let obj = ObjectiveVector {
            cost_usd: (split.grid_kw * c.ec_usd_per_kwh + c.traded_signed_kw * c.smp_usd_per_kwh) / 6.0,
            grid_dependency_kw: split.grid_kw - split.pv_self_kw() - split.pv_traded_kw(),
            total_delay_slots: self.all_delay - running_delay,
            violation_kw,
        };
        scalarize(&obj, self.params)
    }

    fn unpack(&self, bits: &Bits) -> Vec<bool> {
        (0..self.ctx.genes.len()).map(|i| bits[i / 64] >> (i % 64) & 1 == 1).collect()
    }
}

/// Exact for up to 64 genes; a rare collision on longer candidates only
/// costs an unnecessary immigrant.
fn fingerprint(bits: &Bits) -> u64 {
    bits.iter().fold(0, |acc, w| acc.rotate_left(23).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ w)
}

fn tournament<'a, R: Rng + ?Sized>(pop: &'a [(Bits, f64)], rng: &mut R) -> &'a Bits {
    let a = &pop[rng.gen_range(0..pop.len())];
    let b = &pop[rng.gen_range(0..pop.len())];
    if b.1 < a.1 {
        &b.0
    } else {
        &a.0
    }
}

/// Flips each of the first `n` bits independently with probability `p`,
/// jumping between flips with geometric gaps.
fn mutate<R: Rng + ?Sized>(bits: &mut Bits, n: usize, p: f64, rng: &mut R) {
    if p <= 0.0 {
        return;
    }
    if p >= 1.0 {
        bits.iter_mut().for_each(|w| *w = !*w);
        return;
    }
    let log_q = (1.0 - p).ln();
    let mut i = 0usize;
    loop {
        let u: f64 = rng.gen();
        let gap = ((1.0 - u).ln() / log_q).floor();
        if gap >= (n - i) as f64 {
            return;
        }
        i += gap as usize;
        bits[i / 64] ^= 1 << (i % 64);
        i += 1;
    }
}

/// Generational GA with tournament-2 selection, uniform crossover, bit-flip
/// mutation and single elitism. Children that duplicate a member of the
/// next generation are replaced by random candidates. Forced genes are set
/// before every evaluation. Returns the best candidate ever evaluated.
pub fn ga_optimize<R: Rng + ?Sized>(ctx: &SlotContext, params: &GaParams, rng: &mut R) -> GaOutcome {
    let n = ctx.genes.len();
    if n == 0 {
        return GaOutcome {
            genes: Vec::new(),
            fitness: fitness(&[], ctx, params),
            best_history: Vec::new(),
        };
    }
    let eval = PackedFitness::new(ctx, params);
    let evaluate = |mut bits: Bits| {
        eval.fix(&mut bits);
        let f = eval.fitness(&bits);
        (bits, f)
    };
    let words = n.div_ceil(64);
    let mut pop: Vec<(Bits, f64)> = (0..params.population)
        .map(|_| evaluate((0..words).map(|_| rng.gen::<u64>()).collect()))
        .collect();
    let best_of = |pop: &[(Bits, f64)]| {
        pop.iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .cloned()
            .expect("non-empty population")
    };
    let mut best = best_of(&pop);
    let mut best_history = vec![best.1];
    let mut seen: FxHashSet<u64> = FxHashSet::with_capacity_and_hasher(2 * params.population, Default::default());

    for _ in 0..params.generations {
        let mut next = Vec::with_capacity(params.population);
        next.push(best_of(&pop));
        seen.clear();
        seen.insert(fingerprint(&next[0].0));
        while next.len() < params.population {
            let a = tournament(&pop, rng);
            let b = tournament(&pop, rng);
            let mut child: Bits = if rng.gen_bool(params.crossover_prob) {
                a.iter()
                    .zip(b)
                    .map(|(x, y)| {
                        let take_a: u64 = rng.gen();
                        (x & take_a) | (y & !take_a)
                    })
                    .collect()
            } else {
                a.clone()
            };
            mutate(&mut child, n, params.mutation_prob, rng);
            eval.fix(&mut child);
            if !seen.insert(fingerprint(&child)) {
                // Duplicates are replaced by random immigrants to keep the
                // population from collapsing onto one candidate.
                child = (0..words).map(|_| rng.gen::<u64>()).collect();
                eval.fix(&mut child);
                seen.insert(fingerprint(&child));
            }
            let f = eval.fitness(&child);
            next.push((child, f));
        }
        pop = next;
        let gen_best = best_of(&pop);
        if gen_best.1 < best.1 {
            best = gen_best;
        }
        best_history.push(best.1);
    }
    GaOutcome {
        genes: eval.unpack(&best.0),
        fitness: best.1,
        best_history,
    }
}

/// Defers non-forced running genes, largest power first, until the grid
/// draw is below the limit or nothing deferrable is left.
pub fn repair(genes: &mut [bool], ctx: &SlotContext) {
    let mut order: Vec<usize> = (0..genes.len()).filter(|i| genes[*i] && !ctx.genes[*i].forced).collect();
    order.sort_by(|a, b| ctx.genes[*b].power_kw.total_cmp(&ctx.genes[*a].power_kw).then(a.cmp(b)));
    for i in order {
        if ctx.allocate(genes).is_ok() {
            return;
        }
        genes[i] = false;
    }
}

/// Which pending requests must run this slot.
///
/// A flexible appliance is forced once its accumulated delay reaches
/// `d_max_slots`. EV sessions must complete within `d_max_slots` of
/// arrival; at most `ev_concurrency` sessions per cluster are planned to
/// charge at once, and a session is forced as soon as waiting any longer
/// would make that plan miss a deadline.
pub fn forced_flags(pending: &[LoadRequest], now_abs: usize, d_max_slots: u32, ev_concurrency: usize) -> Vec<bool> {
    let mut forced: Vec<bool> = pending
        .iter()
        .map(|r| r.kind == LoadKind::Flexible && r.accumulated_delay_slots >= d_max_slots)
        .collect();

    let evs: Vec<(usize, i64, i64)> = pending
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_ev())
        .map(|(i, r)| {
            let left = r.issued_slot.abs() as i64 + d_max_slots as i64 - now_abs as i64;
            (i, r.remaining_slots as i64, left)
        })
        .collect();
    for &(i, remaining, left) in &evs {
        if remaining >= left {
            forced[i] = true;
        }
    }
    // Add sessions by earliest deadline until the rest of the plan is feasible.
    let mut by_deadline: Vec<&(usize, i64, i64)> = evs.iter().collect();
    by_deadline.sort_by_key(|(i, _, left)| (*left, *i));
    loop {
        let plan: Vec<(i64, i64)> = evs
            .iter()
            .map(|&(i, remaining, left)| (remaining - forced[i] as i64, left - 1))
            .collect();
        if ev_plan_feasible(plan, ev_concurrency.max(1)) {
            break;
        }
        match by_deadline.iter().find(|(i, _, _)| !forced[*i]) {
            Some((i, _, _)) => forced[*i] = true,
            None => break,
        }
    }
    forced
}

/// Least-laxity simulation: can every `(remaining, slots_left)` job finish
/// with at most `capacity` jobs running per slot and one slot per job?
fn ev_plan_feasible(mut jobs: Vec<(i64, i64)>, capacity: usize) -> bool {
    jobs.retain(|j| j.0 > 0);
    while !jobs.is_empty() {
        if jobs.iter().any(|(r, left)| r > left) {
            return false;
        }
        jobs.sort_by_key(|(r, left)| left - r);
        for job in jobs.iter_mut().take(capacity) {
            job.0 -= 1;
        }
        for job in jobs.iter_mut() {
            job.1 -= 1;
        }
        jobs.retain(|j| j.0 > 0);
    }
    true
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdvanceOutcome {
    /// Requests still waiting for the scheduler (deferred ones and EVs
    /// that have charged but are not full yet).
    pub pending: Vec<LoadRequest>,
    /// Multi-slot appliances that started this slot and keep running.
    pub running: Vec<LoadRequest>,
    pub completed: Vec<LoadRequest>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("request for appliance {appliance_index} in house {house} was deferred past the {d_max} slot limit")]
pub struct DelayOverflow {
    pub appliance_index: u8,
    pub house: usize,
    pub d_max: u32,
}

/// Applies one slot's decisions: deferred requests gain a slot of delay,
/// running ones consume a slot of work.
pub fn advance_delays(pending: Vec<LoadRequest>, genes: &[bool], d_max_slots: u32) -> Result<AdvanceOutcome, DelayOverflow> {
    assert_eq!(pending.len(), genes.len(), "one gene per pending request");
    let mut out = AdvanceOutcome::default();
    for (mut req, run) in pending.into_iter().zip(genes) {
        if !run {
            req.accumulated_delay_slots += 1;
            if req.accumulated_delay_slots > d_max_slots {
                return Err(DelayOverflow {
                    appliance_index: req.appliance_index,
                    house: req.house,
                    d_max: d_max_slots,
                });
            }
            out.pending.push(req);
            continue;
        }
        run_one_slot(&mut req);
        if req.remaining_slots == 0 {
            out.completed.push(req);
        } else if req.is_ev() {
            out.pending.push(req);
        } else {
            out.running.push(req);
        }
    }
    Ok(out)
}

/// Consumes one slot of work from a request that ran this slot.
pub fn run_one_slot(req: &mut LoadRequest) {
    let drawn = req.slot_power_kw() / 6.0;
    req.remaining_energy_kwh = (req.remaining_energy_kwh - drawn).max(0.0);
    if req.is_ev() {
        req.remaining_slots = slots_for_energy(req.remaining_energy_kwh, req.power_kw);
    } else {
        req.remaining_slots = req.remaining_slots.saturating_sub(1);
    }
}
