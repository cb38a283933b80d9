//! The urn state machine: draw a ball proportionally to the composition,
//! sample the drawn arm's addition row from the rule, update `Y`, `N` and `a`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::rules::{AdditionRule, Response};

/// Steps between full re-summations of the running ball total.
pub const RESUM_INTERVAL: u64 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UrnError {
    #[error("urn is empty (total {0})")]
    EmptyUrn(f64),
    #[error("ball count of type {arm} would become {value}")]
    NegativeBallCount { arm: usize, value: f64 },
    #[error("rule added {value} balls of type {arm} without declaring withdrawal")]
    UndeclaredWithdrawal { arm: usize, value: f64 },
    #[error("initial composition must be nonnegative with positive total and {expected} entries")]
    InvalidInitial { expected: usize },
    #[error("checkpoints must be strictly increasing within [1, {horizon}]")]
    InvalidCheckpoints { horizon: u64 },
    #[error("horizon must be at least 1")]
    EmptyHorizon,
}

/// A replicate failure, tagged with the step at which it happened.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("step {step}: {source}")]
pub struct TrialError {
    pub step: u64,
    #[source]
    pub source: UrnError,
}

/// Deterministic pseudorandom stream keyed by `(seed, replicate)`.
///
/// Each replicate owns an independent ChaCha8 stream; its position advances
/// with the step index, so the draw sequence is fixed by the key alone.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    seed: u64,
    replicate: u64,
}

impl RandomStream {
    pub fn new(seed: u64, replicate: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        Self {
            rng,
            seed,
            replicate,
        }
    }

    pub fn key(&self) -> (u64, u64) {
        (self.seed, self.replicate)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// What a rule may condition on: the stage index and the per-arm draw and
/// success counts accumulated before it.
#[derive(Debug, Clone, Copy)]
pub struct History<'a> {
    /// 1-based index of the stage being sampled.
    pub step: u64,
    pub draws: &'a [u64],
    pub successes: &'a [u64],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UrnState {
    pub y: Vec<f64>,
    pub draws: Vec<u64>,
    pub total: f64,
    pub step: u64,
}

impl UrnState {
    pub fn new(y0: &[f64]) -> Result<Self, UrnError> {
        let total: f64 = y0.iter().sum();
        if y0.len() < 2 || y0.iter().any(|&y| !(y >= 0.0) || !y.is_finite()) || !(total > 0.0) {
            return Err(UrnError::InvalidInitial {
                expected: y0.len().max(2),
            });
        }
        Ok(Self {
            y: y0.to_vec(),
            draws: vec![0; y0.len()],
            total,
            step: 0,
        })
    }

    pub fn arms(&self) -> usize {
        self.y.len()
    }

    fn resum(&mut self) {
        self.total = self.y.iter().sum();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrawOutcome {
    pub arm: usize,
    pub arms: usize,
}

impl DrawOutcome {
    /// The unit indicator vector `X`.
    pub fn indicator(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.arms];
        x[self.arm] = 1.0;
        x
    }
}

/// Inverse-CDF walk over the composition: `P(arm = k) = Y_k / a`.
#[inline]
pub fn draw_ball(state: &UrnState, rng: &mut RandomStream) -> Result<DrawOutcome, UrnError> {
    if !(state.total > 0.0) {
        return Err(UrnError::EmptyUrn(state.total));
    }
    let target = rng.uniform() * state.total;
    let arms = state.y.len();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (k, &y) in state.y.iter().enumerate() {
        if y > 0.0 {
            acc += y;
            last_positive = k;
            if target < acc {
                return Ok(DrawOutcome { arm: k, arms });
            }
        }
    }
    // Rounding left `target` past the accumulated total.
    Ok(DrawOutcome {
        arm: last_positive,
        arms,
    })
}

/// `Y' = Y + D_row`, `N'_arm = N_arm + 1`, `a' = a + sum(D_row)`. The state is
/// left untouched when the update would make a ball count negative.
#[inline]
pub fn apply_addition(
    state: &mut UrnState,
    outcome: DrawOutcome,
    row: &[f64],
) -> Result<(), UrnError> {
    debug_assert_eq!(row.len(), state.y.len());
    for (k, (&y, &d)) in state.y.iter().zip(row).enumerate() {
        if d < 0.0 && y + d < 0.0 {
            return Err(UrnError::NegativeBallCount { arm: k, value: y + d });
        }
    }
    let mut added = 0.0;
    for (y, &d) in state.y.iter_mut().zip(row) {
        *y += d;
        added += d;
    }
    state.draws[outcome.arm] += 1;
    state.total += added;
    state.step += 1;
    if state.step % RESUM_INTERVAL == 0 {
        state.resum();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checkpoint {
    pub n: u64,
    pub y: Vec<f64>,
    pub draws: Vec<u64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub seed_key: (u64, u64),
}

impl Trajectory {
    pub fn at(&self, n: u64) -> Option<&Checkpoint> {
        self.checkpoints.iter().find(|c| c.n == n)
    }
}

pub fn validate_checkpoints(checkpoints: &[u64], horizon: u64) -> Result<(), UrnError> {
    let increasing = checkpoints.windows(2).all(|w| w[0] < w[1]);
    let in_range = checkpoints.iter().all(|&c| (1..=horizon).contains(&c));
    if increasing && in_range {
        Ok(())
    } else {
        Err(UrnError::InvalidCheckpoints { horizon })
    }
}

/// Runs `n` stages of draw, sample, update and records the requested checkpoints.
pub fn simulate_trial(
    rule: &dyn AdditionRule,
    y0: &[f64],
    n: u64,
    checkpoints: &[u64],
    rng: &mut RandomStream,
) -> Result<Trajectory, TrialError> {
    let at_start = |source| TrialError { step: 0, source };
    if n == 0 {
        return Err(at_start(UrnError::EmptyHorizon));
    }
    validate_checkpoints(checkpoints, n).map_err(at_start)?;
    let mut state = UrnState::new(y0).map_err(at_start)?;
    if state.arms() != rule.arms() {
        return Err(at_start(UrnError::InvalidInitial {
            expected: rule.arms(),
        }));
    }

    let k = state.arms();
    let withdrawal = rule.withdrawal_allowed();
    let mut successes = vec![0u64; k];
    let mut row = vec![0.0; k];
    let mut recorded = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().copied().peekable();

    for step in 1..=n {
        let fail = |source| TrialError { step, source };
        let outcome = draw_ball(&state, rng).map_err(fail)?;
        let history = History {
            step,
            draws: &state.draws,
            successes: &successes,
        };
        let response = rule.sample_row(outcome.arm, &history, rng, &mut row);
        if !withdrawal {
            if let Some((arm, &value)) = row.iter().enumerate().find(|(_, &d)| d < 0.0) {
                return Err(fail(UrnError::UndeclaredWithdrawal { arm, value }));
            }
        }
        apply_addition(&mut state, outcome, &row).map_err(fail)?;
        if response == Response::Success {
            successes[outcome.arm] += 1;
        }
        if next.peek() == Some(&step) {
            next.next();
            recorded.push(Checkpoint {
                n: step,
                y: state.y.clone(),
                draws: state.draws.clone(),
                total: state.y.iter().sum(),
            });
        }
    }

    Ok(Trajectory {
        checkpoints: recorded,
        seed_key: rng.key(),
    })
}
