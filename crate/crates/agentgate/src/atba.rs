//! Adaptive timeout budgeting for sequential tool chains.
//!
//! A turn budget B, minus a planner reserve r·B, is split across the chain
//! in proportion to each tool's trailing-window p99 latency. During
//! execution, a tool finishing under its budget donates the surplus equally
//! to all remaining tools (the cascade); a tool consuming its full budget
//! fails the chain at that index (the deadline is exclusive: t < b passes).

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_RESERVE_FRAC: f64 = 0.10;
/// Cold-start prior for tools with no configured prior and no history.
pub const DEFAULT_PRIOR_MS: f64 = 250.0;

#[derive(Debug, Error, PartialEq)]
pub enum AtbaError {
    #[error("chain must contain at least one tool")]
    EmptyChain,
    #[error("latency observations must be positive, got {0}")]
    NonPositiveLatency(f64),
    #[error("invalid allocation params: {0}")]
    InvalidParams(String),
}

/// Trailing window of per-tool latency observations.
#[derive(Debug, Clone)]
pub struct LatencyHistory {
    windows: HashMap<String, VecDeque<f64>>,
    window_size: usize,
    priors: HashMap<String, f64>,
    default_prior_ms: f64,
}

impl LatencyHistory {
    pub fn new(window_size: usize) -> Self {
        Self {
            windows: HashMap::new(),
            window_size: window_size.max(1),
            priors: HashMap::new(),
            default_prior_ms: DEFAULT_PRIOR_MS,
        }
    }

    pub fn with_priors(mut self, priors: HashMap<String, f64>) -> Self {
        self.priors = priors;
        self
    }

    pub fn set_prior(&mut self, tool: &str, prior_ms: f64) {
        self.priors.insert(tool.to_string(), prior_ms);
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn observation_count(&self, tool: &str) -> usize {
        self.windows.get(tool).map_or(0, VecDeque::len)
    }

    /// Appends an observation, evicting the oldest when the window is full.
    pub fn record(&mut self, tool: &str, latency_ms: f64) -> Result<(), AtbaError> {
        if latency_ms <= 0.0 || latency_ms.is_nan() {
            return Err(AtbaError::NonPositiveLatency(latency_ms));
        }
        let window = self.windows.entry(tool.to_string()).or_default();
        if window.len() == self.window_size {
            window.pop_front();
        }
        window.push_back(latency_ms);
        Ok(())
    }

    /// Nearest-rank p99: sort ascending, take the element at rank
    /// ceil(0.99·n), 1-indexed. An empty window falls back to the tool's
    /// configured prior.
    pub fn p99(&self, tool: &str) -> f64 {
        match self.windows.get(tool) {
            Some(window) if !window.is_empty() => {
                let mut sorted: Vec<f64> = window.iter().copied().collect();
                sorted.sort_by(f64::total_cmp);
                let rank = (0.99 * sorted.len() as f64).ceil() as usize;
                sorted[rank.max(1) - 1]
            }
            _ => self.prior(tool),
        }
    }

    pub fn prior(&self, tool: &str) -> f64 {
        self.priors
            .get(tool)
            .copied()
            .unwrap_or(self.default_prior_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationParams {
    pub budget_ms: f64,
    pub reserve_frac: f64,
    pub window: usize,
}

impl AllocationParams {
    pub fn new(budget_ms: f64, reserve_frac: f64) -> Self {
        Self {
            budget_ms,
            reserve_frac,
            window: DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self) -> Result<(), AtbaError> {
        if self.budget_ms <= 0.0 || self.budget_ms.is_nan() {
            return Err(AtbaError::InvalidParams(format!(
                "budget must be positive, got {}",
                self.budget_ms
            )));
        }
        if !(0.0..1.0).contains(&self.reserve_frac) {
            return Err(AtbaError::InvalidParams(format!(
                "reserve fraction must be in [0, 1), got {}",
                self.reserve_frac
            )));
        }
        Ok(())
    }

    /// Budget available to tools after the planner reserve.
    pub fn available_ms(&self) -> f64 {
        self.budget_ms * (1.0 - self.reserve_frac)
    }
}

/// Budgets proportional to trailing p99 estimates, summing to B(1−r).
/// Degenerate p99 sums fall back to a uniform split.
pub fn allocate(
    chain: &[String],
    params: &AllocationParams,
    history: &LatencyHistory,
) -> Result<Vec<f64>, AtbaError> {
    params.validate()?;
    if chain.is_empty() {
        return Err(AtbaError::EmptyChain);
    }
    let available = params.available_ms();
    let p99s: Vec<f64> = chain.iter().map(|tool| history.p99(tool)).collect();
    let total: f64 = p99s.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Ok(vec![available / chain.len() as f64; chain.len()]);
    }
    Ok(p99s.iter().map(|p| p / total * available).collect())
}

/// Uniform baseline: B(1−r)/n per tool (reserve applied identically so the
/// comparison with proportional allocation is fair).
pub fn static_allocate(chain: &[String], params: &AllocationParams) -> Result<Vec<f64>, AtbaError> {
    params.validate()?;
    if chain.is_empty() {
        return Err(AtbaError::EmptyChain);
    }
    Ok(vec![params.available_ms() / chain.len() as f64; chain.len()])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainPlan {
    pub tools: Vec<String>,
    pub budgets: Vec<f64>,
}

impl ChainPlan {
    pub fn new(tools: Vec<String>, budgets: Vec<f64>) -> Self {
        assert_eq!(tools.len(), budgets.len(), "one budget per tool");
        Self { tools, budgets }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolTiming {
    pub tool: String,
    /// Budget in force when the tool ran (after any earlier cascades).
    pub budget_ms: f64,
    /// Time consumed: the observed latency, or the budget when cut off.
    pub elapsed_ms: f64,
    pub completed: bool,
    /// True when the recorded value is the budget, not the true latency.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChainOutcome {
    Completed,
    TimedOutAt {
        index: usize,
        budgets_at_failure: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainResult {
    pub outcome: ChainOutcome,
    pub timings: Vec<ToolTiming>,
    pub total_elapsed_ms: f64,
}

impl ChainResult {
    pub fn completed(&self) -> bool {
        self.outcome == ChainOutcome::Completed
    }
}

/// Runs the chain sequentially with surplus redistribution (see module
/// docs). The executor reports the latency each tool call would take; the
/// budget cuts it off at t ≥ b. Observations are recorded into `history`
/// when given (timed-out calls as the budget value; see `ToolTiming::censored`).
pub fn execute_chain<F>(
    plan: &ChainPlan,
    executor: F,
    history: Option<&mut LatencyHistory>,
) -> ChainResult
where
    F: FnMut(usize, &str, f64) -> f64,
{
    execute_chain_opts(plan, executor, history, true)
}

/// `execute_chain` with the cascade switchable off (the no-redistribution
/// arm of the benchmark).
pub fn execute_chain_opts<F>(
    plan: &ChainPlan,
    mut executor: F,
    mut history: Option<&mut LatencyHistory>,
    cascade: bool,
) -> ChainResult
where
    F: FnMut(usize, &str, f64) -> f64,
{
    let n = plan.tools.len();
    let mut budgets = plan.budgets.clone();
    let mut timings = Vec::with_capacity(n);
    let mut total_elapsed = 0.0;

    for i in 0..n {
        let tool = plan.tools[i].as_str();
        let budget = budgets[i];
        let latency = executor(i, tool, budget);

        if latency < budget {
            total_elapsed += latency;
            if let Some(h) = history.as_deref_mut() {
                let _ = h.record(tool, latency);
            }
            if cascade {
                let remaining = n - 1 - i;
                if remaining > 0 {
                    let share = (budget - latency) / remaining as f64;
                    for b in budgets.iter_mut().skip(i + 1) {
                        *b += share;
                    }
                }
            }
            timings.push(ToolTiming {
                tool: tool.to_string(),
                budget_ms: budget,
                elapsed_ms: latency,
                completed: true,
                censored: false,
            });
        } else {
            // Deadline hit: the tool consumed its whole budget and the
            // chain fails here.
            total_elapsed += budget;
            if let Some(h) = history.as_deref_mut() {
                let _ = h.record(tool, budget);
            }
            timings.push(ToolTiming {
                tool: tool.to_string(),
                budget_ms: budget,
                elapsed_ms: budget,
                completed: false,
                censored: true,
            });
            return ChainResult {
                outcome: ChainOutcome::TimedOutAt {
                    index: i,
                    budgets_at_failure: budgets,
                },
                timings,
                total_elapsed_ms: total_elapsed,
            };
        }
    }

    ChainResult {
        outcome: ChainOutcome::Completed,
        timings,
        total_elapsed_ms: total_elapsed,
    }
}
