//! Allocation decisions: regime classification, the retrieval-conditioned
//! heuristic (exact argmax over a 0.1-step simplex lattice), constraint
//! validation, and the stochastic ablation wrapper.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market::{MarketFeatures, RegimeLabel};
use crate::memory::{score_episodes, Episode};

/// Portfolio fraction assigned to each hedge sleeve plus cash. Field order
/// is the canonical (collar, straddle, delta_neutral, cash) ordering used
/// for serialization, lexicographic tie-breaks, and L1 distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SleeveWeights {
    pub collar: f64,
    pub straddle: f64,
    pub delta_neutral: f64,
    pub cash: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sleeve {
    Collar,
    Straddle,
    DeltaNeutral,
}

impl Sleeve {
    pub const ALL: [Sleeve; 3] = [Sleeve::Collar, Sleeve::Straddle, Sleeve::DeltaNeutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Sleeve::Collar => "collar",
            Sleeve::Straddle => "straddle",
            Sleeve::DeltaNeutral => "delta_neutral",
        }
    }
}

impl SleeveWeights {
    pub fn pure_cash() -> Self {
        Self { collar: 0.0, straddle: 0.0, delta_neutral: 0.0, cash: 1.0 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.collar, self.straddle, self.delta_neutral, self.cash]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self { collar: a[0], straddle: a[1], delta_neutral: a[2], cash: a[3] }
    }

    pub fn sleeve(&self, sleeve: Sleeve) -> f64 {
        match sleeve {
            Sleeve::Collar => self.collar,
            Sleeve::Straddle => self.straddle,
            Sleeve::DeltaNeutral => self.delta_neutral,
        }
    }

    pub fn sum(&self) -> f64 {
        self.collar + self.straddle + self.delta_neutral + self.cash
    }

    pub fn l1_distance(&self, other: &SleeveWeights) -> f64 {
        self.as_array()
            .iter()
            .zip(other.as_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.as_array().iter().all(|w| (0.0..=1.0 + tol).contains(w)) && (self.sum() - 1.0).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionSource {
    Heuristic,
    Llm,
    Override,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationDecision {
    pub weights: SleeveWeights,
    /// Fraction of portfolio value held in the equity basket, in [0, 1].
    pub equity_exposure: f64,
    pub source: DecisionSource,
    pub rationale: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConstraints {
    /// Fraction of portfolio value available as net option premium outlay
    /// per day across hedge sleeves.
    pub hedge_budget_fraction: f64,
    pub max_single_sleeve: f64,
    /// Max traded notional per symbol-day as a fraction of trailing
    /// 21-day average dollar volume.
    pub liquidity_cap: f64,
    pub max_equity_exposure: f64,
}

impl Default for DecisionConstraints {
    fn default() -> Self {
        Self {
            hedge_budget_fraction: 0.10,
            max_single_sleeve: 0.60,
            liquidity_cap: 0.10,
            max_equity_exposure: 1.0,
        }
    }
}

impl DecisionConstraints {
    pub fn validate(&self) -> crate::Result<()> {
        for (name, v) in [
            ("hedge_budget_fraction", self.hedge_budget_fraction),
            ("max_single_sleeve", self.max_single_sleeve),
            ("liquidity_cap", self.liquidity_cap),
            ("max_equity_exposure", self.max_equity_exposure),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(crate::Error::Config(format!("constraint {name} = {v} outside (0, 1]")));
            }
        }
        if self.max_single_sleeve < 1.0 / 3.0 {
            return Err(crate::Error::Config(format!(
                "max_single_sleeve {} below 1/3; three sleeves cannot sum to 1",
                self.max_single_sleeve
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// Annualized realized-vol level above which the regime is high_vol.
    pub vol_threshold: f64,
    /// Absolute log-trend per day above which the regime is trending.
    pub trend_threshold: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { vol_threshold: 0.25, trend_threshold: 0.001 }
    }
}

/// high_vol beats trending beats calm; thresholds are strict.
pub fn classify_regime(features: &MarketFeatures, thresholds: &RegimeThresholds) -> RegimeLabel {
    if features.realized_vol_21d > thresholds.vol_threshold {
        RegimeLabel::HighVol
    } else if features.trend_21d.abs() > thresholds.trend_threshold {
        RegimeLabel::Trending
    } else {
        RegimeLabel::Calm
    }
}

/// Fallback weights when retrieval returns nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimePriors {
    pub calm: SleeveWeights,
    pub trending: SleeveWeights,
    pub high_vol: SleeveWeights,
}

impl Default for RegimePriors {
    fn default() -> Self {
        Self {
            calm: SleeveWeights { collar: 0.1, straddle: 0.0, delta_neutral: 0.1, cash: 0.8 },
            trending: SleeveWeights { collar: 0.4, straddle: 0.0, delta_neutral: 0.1, cash: 0.5 },
            high_vol: SleeveWeights { collar: 0.2, straddle: 0.4, delta_neutral: 0.1, cash: 0.3 },
        }
    }
}

impl RegimePriors {
    pub fn for_regime(&self, regime: RegimeLabel) -> SleeveWeights {
        match regime {
            RegimeLabel::Calm => self.calm,
            RegimeLabel::Trending => self.trending,
            RegimeLabel::HighVol => self.high_vol,
        }
    }
}

/// Equity basket exposure per regime, before constraint clamping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeExposure {
    pub calm: f64,
    pub trending: f64,
    pub high_vol: f64,
}

impl Default for RegimeExposure {
    fn default() -> Self {
        Self { calm: 1.0, trending: 1.0, high_vol: 0.7 }
    }
}

impl RegimeExposure {
    pub fn for_regime(&self, regime: RegimeLabel) -> f64 {
        match regime {
            RegimeLabel::Calm => self.calm,
            RegimeLabel::Trending => self.trending,
            RegimeLabel::HighVol => self.high_vol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicConfig {
    pub thresholds: RegimeThresholds,
    pub priors: RegimePriors,
    pub exposure: RegimeExposure,
    /// When false, empty retrieval falls back to pure cash instead of the
    /// regime prior (the reduced-controller ablation cell).
    pub use_priors: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            thresholds: RegimeThresholds::default(),
            priors: RegimePriors::default(),
            exposure: RegimeExposure::default(),
            use_priors: true,
        }
    }
}

const GRID_STEPS: i32 = 10;

/// All weight vectors on the 0.1-step simplex lattice whose hedge sleeves
/// respect `max_single_sleeve`, in lexicographic (collar, straddle,
/// delta_neutral, cash) order. Cash is uncapped.
fn candidate_grid(constraints: &DecisionConstraints) -> Vec<SleeveWeights> {
    let cap = constraints.max_single_sleeve + 1e-12;
    let mut grid = Vec::new();
    for i in 0..=GRID_STEPS {
        for j in 0..=GRID_STEPS - i {
            for k in 0..=GRID_STEPS - i - j {
                let w = SleeveWeights {
                    collar: i as f64 / GRID_STEPS as f64,
                    straddle: j as f64 / GRID_STEPS as f64,
                    delta_neutral: k as f64 / GRID_STEPS as f64,
                    cash: (GRID_STEPS - i - j - k) as f64 / GRID_STEPS as f64,
                };
                if w.collar <= cap && w.straddle <= cap && w.delta_neutral <= cap {
                    grid.push(w);
                }
            }
        }
    }
    grid
}

/// Deterministic retrieval-conditioned allocation.
///
/// Scores every lattice candidate with [`score_episodes`] and returns the
/// argmax; equal scores keep the earlier (lexicographically smaller)
/// candidate. Empty retrieval short-circuits to the regime prior (or pure
/// cash when priors are disabled).
pub fn heuristic_allocate(
    regime: RegimeLabel,
    retrieved: &[(&Episode, f64)],
    previous: &AllocationDecision,
    constraints: &DecisionConstraints,
    lambda: f64,
    cfg: &HeuristicConfig,
) -> AllocationDecision {
    debug_assert!(
        retrieved.windows(2).all(|w| w[0].1 >= w[1].1),
        "retrieved episodes must be sorted by similarity descending"
    );
    let equity_exposure = cfg.exposure.for_regime(regime);
    if retrieved.is_empty() {
        let (weights, why) = if cfg.use_priors {
            (cfg.priors.for_regime(regime), format!("{regime} prior (no completed episodes)"))
        } else {
            (SleeveWeights::pure_cash(), "pure cash (no completed episodes, priors disabled)".into())
        };
        return AllocationDecision { weights, equity_exposure, source: DecisionSource::Heuristic, rationale: why };
    }
    let grid = candidate_grid(constraints);
    let mut best = grid[0];
    let mut best_score = f64::MIN;
    for candidate in &grid {
        let score = score_episodes(retrieved, candidate, &previous.weights, lambda);
        if score > best_score {
            best_score = score;
            best = *candidate;
        }
    }
    AllocationDecision {
        weights: best,
        equity_exposure,
        source: DecisionSource::Heuristic,
        rationale: format!(
            "grid argmax over {} candidates from {} retrieved episodes; regime {regime}",
            grid.len(),
            retrieved.len()
        ),
    }
}

const WEIGHT_TOL: f64 = 1e-9;

/// Forces a raw decision into the feasible set.
///
/// Negative weights clip to zero; an all-zero vector degenerates to pure
/// cash; weights renormalize to sum 1; hedge sleeves above
/// `max_single_sleeve` are clipped with the excess redistributed
/// proportionally over the unclipped weights (iterated; cash absorbs any
/// residue); equity exposure clamps to [0, max_equity_exposure]. Every
/// adjustment is appended to the rationale.
pub fn validate_decision(raw: AllocationDecision, constraints: &DecisionConstraints) -> AllocationDecision {
    let mut notes: Vec<String> = Vec::new();
    let mut w = raw.weights.as_array();

    if w.iter().any(|x| !x.is_finite()) {
        notes.push("non-finite weights replaced with pure cash".into());
        w = [0.0, 0.0, 0.0, 1.0];
    }
    if w.iter().any(|x| *x < 0.0) {
        notes.push("negative weights clipped to 0".into());
        for x in &mut w {
            *x = x.max(0.0);
        }
    }
    let sum: f64 = w.iter().sum();
    if sum == 0.0 {
        notes.push("degenerate all-zero weights; holding pure cash".into());
        w = [0.0, 0.0, 0.0, 1.0];
    } else if (sum - 1.0).abs() > WEIGHT_TOL {
        notes.push(format!("weights summed {sum:.6}; renormalized"));
        for x in &mut w {
            *x /= sum;
        }
    }

    // Sleeve-cap fixpoint: each pass pins offending sleeves at the cap and
    // spreads the excess over the still-unpinned weights pro rata. Cash is
    // never pinned, so the loop terminates with sum preserved.
    let cap = constraints.max_single_sleeve;
    let mut pinned = [false; 4];
    loop {
        let mut excess = 0.0;
        for idx in 0..3 {
            if !pinned[idx] && w[idx] > cap + WEIGHT_TOL {
                excess += w[idx] - cap;
                w[idx] = cap;
                pinned[idx] = true;
                notes.push(format!(
                    "{} clipped to sleeve cap {cap}",
                    [Sleeve::Collar, Sleeve::Straddle, Sleeve::DeltaNeutral][idx].as_str()
                ));
            }
        }
        if excess == 0.0 {
            break;
        }
        let free_mass: f64 = (0..4).filter(|i| !pinned[*i]).map(|i| w[i]).sum();
        if free_mass > 0.0 {
            for i in 0..4 {
                if !pinned[i] {
                    w[i] += excess * w[i] / free_mass;
                }
            }
        } else {
            // Everything else is zero: the residue goes to cash.
            w[3] += excess;
        }
    }
    // Kill accumulated float drift; cash takes the residue exactly.
    w[3] = (1.0 - w[0] - w[1] - w[2]).max(0.0);

    let mut exposure = raw.equity_exposure;
    if !exposure.is_finite() {
        notes.push("non-finite equity exposure replaced with 0".into());
        exposure = 0.0;
    }
    let clamped = exposure.clamp(0.0, constraints.max_equity_exposure);
    if clamped != exposure {
        notes.push(format!("equity exposure {exposure:.4} clamped to {clamped:.4}"));
        exposure = clamped;
    }

    let rationale = if notes.is_empty() {
        raw.rationale
    } else {
        format!("{}; validated: {}", raw.rationale, notes.join("; "))
    };
    AllocationDecision { weights: SleeveWeights::from_array(w), equity_exposure: exposure, source: raw.source, rationale }
}

/// Everything a decision producer may look at for one day.
pub struct DecisionContext<'a> {
    pub run_id: &'a str,
    pub date: NaiveDate,
    pub features: &'a MarketFeatures,
    pub regime: RegimeLabel,
    pub retrieved: &'a [(&'a Episode, f64)],
    pub previous: &'a AllocationDecision,
    pub constraints: &'a DecisionConstraints,
    /// Turnover-penalty strength for scoring.
    pub lambda: f64,
    pub temperature: f64,
}

pub trait DecisionProducer {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> AllocationDecision;
}

impl DecisionProducer for Box<dyn DecisionProducer + '_> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> AllocationDecision {
        (**self).decide(ctx)
    }
}

pub struct HeuristicProducer {
    pub cfg: HeuristicConfig,
}

impl DecisionProducer for HeuristicProducer {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> AllocationDecision {
        heuristic_allocate(ctx.regime, ctx.retrieved, ctx.previous, ctx.constraints, ctx.lambda, &self.cfg)
    }
}

/// Adds seeded Gaussian noise (stdev `0.1 * temperature`) to each weight
/// of the inner producer's decision. Temperature zero is an exact
/// pass-through that never touches the generator, so a wrapped producer at
/// zero temperature is bit-identical to the bare one.
pub struct StochasticWrap<P> {
    inner: P,
    temperature: f64,
    rng: ChaCha8Rng,
}

impl<P> StochasticWrap<P> {
    pub fn new(inner: P, temperature: f64, seed: u64) -> Self {
        Self { inner, temperature, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl<P: DecisionProducer> DecisionProducer for StochasticWrap<P> {
    fn decide(&mut self, ctx: &DecisionContext<'_>) -> AllocationDecision {
        let decision = self.inner.decide(ctx);
        if self.temperature == 0.0 {
            return decision;
        }
        let noise = Normal::new(0.0, 0.1 * self.temperature).expect("stdev is positive and finite");
        let mut w = decision.weights.as_array();
        for x in &mut w {
            *x += noise.sample(&mut self.rng);
        }
        AllocationDecision {
            weights: SleeveWeights::from_array(w),
            equity_exposure: decision.equity_exposure,
            source: decision.source,
            rationale: format!("{}; gaussian weight noise at temperature {}", decision.rationale, self.temperature),
        }
    }
}
