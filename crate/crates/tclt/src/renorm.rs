//! Parameter conversion and the Ostrowski renormalization of a pair (α, β).

use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::Serialize;

use crate::qfield::{FieldError, Surd};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenormError {
    #[error("α must be irrational")]
    RationalAlpha,
    #[error("α must lie in (0, 1/2); replace α by 1−α")]
    AlphaRange,
    #[error("β must lie in (0, 1)")]
    BetaRange,
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum State {
    #[serde(rename = "G")]
    G,
    #[serde(rename = "B-")]
    BMinus,
    #[serde(rename = "B+")]
    BPlus,
}

impl State {
    pub const ALL: [State; 3] = [State::G, State::BMinus, State::BPlus];

    /// Successors allowed by the renormalization.
    ///
    /// After a `G` step β is non-positive, so `G` can never be followed by `B+`.
    pub fn successors(self) -> &'static [State] {
        match self {
            State::G => &[State::G, State::BMinus],
            State::BMinus => &[State::BPlus],
            State::BPlus => &[State::G, State::BMinus],
        }
    }

    pub fn admits(self, next: State) -> bool {
        self.successors().contains(&next)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            State::G => "G",
            State::BMinus => "B-",
            State::BPlus => "B+",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamPair {
    pub alpha: Surd,
    pub beta: Surd,
    pub alpha0: Surd,
    pub beta0: Surd,
}

impl ParamPair {
    /// The drift of the cocycle, `(β₀+1)/(α₀+1)`; equals the original β.
    pub fn drift(&self) -> Surd {
        (&self.beta0 + Surd::one()) / (&self.alpha0 + Surd::one())
    }

    /// T_{α₀} on `[−1, α₀)`.
    pub fn rotate(&self, x: &Surd) -> Surd {
        if x.signum() < 0 {
            x + &self.alpha0
        } else {
            x - &Surd::one()
        }
    }

    pub fn rotate_inv(&self, y: &Surd) -> Surd {
        if *y >= &self.alpha0 - &Surd::one() {
            y - &self.alpha0
        } else {
            y + &Surd::one()
        }
    }

    /// Length of the domain `[−1, α₀)`.
    pub fn domain_len(&self) -> Surd {
        &self.alpha0 + Surd::one()
    }
}

pub fn to_internal(alpha: &Surd, beta: &Surd) -> Result<ParamPair, RenormError> {
    if alpha.is_rational() {
        return Err(RenormError::RationalAlpha);
    }
    if !beta.compatible(alpha) {
        return Err(FieldError::MixedRadicand(alpha.d(), beta.d()).into());
    }
    let half = Surd::rational(1, 2)?;
    if alpha.signum() <= 0 || *alpha >= half {
        return Err(RenormError::AlphaRange);
    }
    if beta.signum() <= 0 || *beta >= Surd::one() {
        return Err(RenormError::BetaRange);
    }
    let alpha0 = alpha / &(Surd::one() - alpha);
    let beta0 = &(&Surd::one() + &alpha0) * beta - Surd::one();
    Ok(ParamPair {
        alpha: alpha.clone(),
        beta: beta.clone(),
        alpha0,
        beta0,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenormStep {
    pub n: usize,
    pub alpha_n: Surd,
    pub beta_n: Surd,
    pub a_n: u64,
    pub b_n: u64,
    pub state: State,
    pub alpha_prime_n: Surd,
    /// β_{n+1}
    pub beta_next: Surd,
    /// x⁽ⁿ⁾ = (−1)ⁿ α⁽ⁿ⁻¹⁾ x_n
    pub x_term: Surd,
    /// β⁽ⁿ⁾ = (−1)ⁿ α⁽ⁿ⁻¹⁾ β_n
    pub beta_marked: Surd,
    /// α⁽ⁿ⁾ = α₀ ⋯ α_n
    pub alpha_prod: Surd,
    /// α⁽ⁿ⁻¹⁾, with α⁽⁻¹⁾ = 1
    pub alpha_prod_prev: Surd,
}

fn small(v: BigInt) -> u64 {
    v.to_u64().expect("partial quotient fits in u64")
}

/// One renormalization step from (α_n, β_n) in isolation (level 0, unit scale).
pub fn renorm_step(alpha_n: &Surd, beta_n: &Surd) -> RenormStep {
    step_at(0, alpha_n, beta_n, &Surd::one())
}

fn step_at(n: usize, alpha_n: &Surd, beta_n: &Surd, prod_prev: &Surd) -> RenormStep {
    let one = Surd::one();
    let inv = alpha_n.recip().expect("α_n > 0");
    let a = inv.floor();
    let alpha_prime = &one - &(&Surd::int(a.clone()) * alpha_n);
    let (b, state, beta_next) = if *beta_n < -&alpha_prime {
        let t = &(&one + beta_n) / alpha_n;
        let f = t.floor();
        let frac = &t - &Surd::int(f.clone());
        (small(f) + 1, State::G, -frac)
    } else {
        let st = if beta_n.signum() < 0 { State::BMinus } else { State::BPlus };
        (0, st, -&(beta_n / alpha_n))
    };
    let x_n = if b >= 1 {
        &Surd::int(b as i64 - 1) * alpha_n - &one
    } else {
        Surd::zero()
    };
    let sign = if n.is_multiple_of(2) { one.clone() } else { -&one };
    let scale = &sign * prod_prev;
    RenormStep {
        n,
        alpha_n: alpha_n.clone(),
        beta_n: beta_n.clone(),
        a_n: small(a),
        b_n: b,
        state,
        alpha_prime_n: alpha_prime,
        beta_next,
        x_term: &scale * &x_n,
        beta_marked: &scale * beta_n,
        alpha_prod: prod_prev * alpha_n,
        alpha_prod_prev: prod_prev.clone(),
    }
}

#[derive(Clone, Debug)]
pub struct RenormOrbit {
    pub params: ParamPair,
    pub steps: Vec<RenormStep>,
    /// Level n at which β_n = 0 was reached.
    pub coboundary: Option<usize>,
    /// (pre-period, period) of the pair (α_n, β_n), when seen to repeat.
    pub cycle: Option<(usize, usize)>,
}

pub fn renorm_orbit(params: &ParamPair, depth: usize) -> RenormOrbit {
    let mut steps = Vec::with_capacity(depth);
    let mut seen: HashMap<(Surd, Surd), usize> = HashMap::new();
    let mut cycle = None;
    let mut coboundary = None;
    let mut alpha = params.alpha0.clone();
    let mut beta = params.beta0.clone();
    let mut prod = Surd::one();
    for n in 0..depth {
        if beta.is_zero() {
            coboundary = Some(n);
            break;
        }
        if cycle.is_none() {
            if let Some(&m) = seen.get(&(alpha.clone(), beta.clone())) {
                cycle = Some((m, n - m));
            } else {
                seen.insert((alpha.clone(), beta.clone()), n);
            }
        }
        let step = step_at(n, &alpha, &beta, &prod);
        alpha = &alpha.recip().expect("α_n > 0") - &Surd::int(step.a_n as i64);
        beta = step.beta_next.clone();
        prod = step.alpha_prod.clone();
        steps.push(step);
    }
    RenormOrbit {
        params: params.clone(),
        steps,
        coboundary,
        cycle,
    }
}

impl RenormOrbit {
    pub fn states(&self) -> Vec<State> {
        self.steps.iter().map(|s| s.state).collect()
    }

    pub fn depth(&self) -> usize {
        self.steps.len()
    }

    /// β⁽ⁿ⁾ for any n up to `depth` (level `depth` uses the final β).
    pub fn beta_marked(&self, n: usize) -> Surd {
        if n < self.steps.len() {
            return self.steps[n].beta_marked.clone();
        }
        assert_eq!(n, self.steps.len(), "level beyond the orbit");
        let last = self.steps.last().expect("non-empty orbit");
        let sign = if n.is_multiple_of(2) { Surd::one() } else { -Surd::one() };
        &(&sign * &last.alpha_prod) * &last.beta_next
    }
}

/// Σ_{k≤n} x⁽ᵏ⁾ and the remainder β₀ − Σ.
pub fn ostrowski_partial_sum(orbit: &RenormOrbit, n: usize) -> (Surd, Surd) {
    let sum: Surd = orbit.steps[..=n].iter().map(|s| &s.x_term).sum();
    let rem = &orbit.params.beta0 - &sum;
    (sum, rem)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DiophantineReport {
    pub a_max: u64,
    /// Longest run of consecutive (B−B+) blocks; `None` if unbounded along a cycle.
    pub m: Option<usize>,
    pub horizon: usize,
    pub exact: bool,
}

/// Longest run of consecutive `B−B+` pairs in a state word.
pub fn max_bm_bp_run(states: &[State]) -> usize {
    let mut best = 0;
    let mut i = 0;
    while i < states.len() {
        let mut run = 0;
        while i + 1 < states.len() && states[i] == State::BMinus && states[i + 1] == State::BPlus {
            run += 1;
            i += 2;
        }
        best = best.max(run);
        if run == 0 {
            i += 1;
        }
    }
    best
}

pub fn classify_diophantine(orbit: &RenormOrbit) -> DiophantineReport {
    let states = orbit.states();
    let a_max = orbit.steps.iter().map(|s| s.a_n).max().unwrap_or(0);
    match orbit.cycle {
        Some((pre, period)) => {
            let word: Vec<State> = (0..pre + 4 * period)
                .map(|i| if i < pre { states[i] } else { states[pre + (i - pre) % period] })
                .collect();
            // a G-free period alternates B−B+ forever
            let unbounded = !states[pre..pre + period].contains(&State::G);
            DiophantineReport {
                a_max,
                m: if unbounded { None } else { Some(max_bm_bp_run(&word)) },
                horizon: states.len(),
                exact: true,
            }
        }
        None => DiophantineReport {
            a_max,
            m: Some(max_bm_bp_run(&states)),
            horizon: states.len(),
            exact: false,
        },
    }
}

/// Continued-fraction digits a_0, a_1, … of α itself (α = 1/(a_0 + …)).
pub fn continued_fraction(alpha: &Surd, count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut x = alpha.clone();
    for _ in 0..count {
        if x.is_zero() {
            break;
        }
        let inv = x.recip().expect("non-zero");
        let a = inv.floor();
        x = &inv - &Surd::int(a.clone());
        out.push(small(a));
    }
    out
}
