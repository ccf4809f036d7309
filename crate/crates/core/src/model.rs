//! Domain types and the pairwise influence rules.
//!
//! Two kinds of agents share a two-dimensional attitude space. Non-HSI agents
//! follow a plain two-dimensional bounded-confidence rule: they move towards a
//! peer only when close on both dimensions. HSI agents (highly self-involved
//! in the main dimension) are attracted on both dimensions whenever they are
//! close on the main one, and push away on the secondary dimension when they
//! disagree on the main dimension but feel too close on the secondary one.
//!
//! Every function here is pure. The only randomness is the sign drawn on an
//! exact tie in the rejection rule, supplied by the caller.

use thiserror::Error;

use crate::scalar::Scalar;

/// Position of an agent on the two issue dimensions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Attitude<S> {
    pub main: S,
    pub secondary: S,
}

impl<S: Scalar> Attitude<S> {
    pub fn new(main: S, secondary: S) -> Self {
        Self { main, secondary }
    }

    pub fn get(&self, dimension: Dimension) -> S {
        match dimension {
            Dimension::Main => self.main,
            Dimension::Secondary => self.secondary,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.main.is_finite() && self.secondary.is_finite()
    }
}

impl<S> AsRef<Attitude<S>> for Attitude<S> {
    fn as_ref(&self) -> &Attitude<S> {
        self
    }
}

/// One of the two attitude dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Dimension {
    Main,
    Secondary,
}

impl Dimension {
    pub const ALL: [Dimension; 2] = [Dimension::Main, Dimension::Secondary];

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Main => "main",
            Dimension::Secondary => "secondary",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Involvement {
    /// Highly self-involved in the main dimension.
    Hsi,
    NonHsi,
}

impl Involvement {
    pub fn is_hsi(self) -> bool {
        matches!(self, Involvement::Hsi)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Involvement::Hsi => "hsi",
            Involvement::NonHsi => "non_hsi",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "hsi" => Some(Involvement::Hsi),
            "non_hsi" => Some(Involvement::NonHsi),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Agent<S> {
    pub attitude: Attitude<S>,
    pub involvement: Involvement,
}

impl<S> AsRef<Attitude<S>> for Agent<S> {
    fn as_ref(&self) -> &Attitude<S> {
        &self.attitude
    }
}

/// Full parameter set of one simulation run.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    pub n_agents: usize,
    /// Proportion of HSI agents.
    pub h: S,
    /// Closeness threshold on the main dimension.
    pub u_m: S,
    /// Closeness threshold on the secondary dimension.
    pub u_s: S,
    /// Influence intensity, shared by both dimensions.
    pub mu: S,
    /// Confine both coordinates to [-1, +1] after every update.
    pub bounded: bool,
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("n_agents must be at least 2 (got {0})")]
    TooFewAgents(usize),
    #[error("h must lie in [0, 1] (got {0})")]
    Proportion(f64),
    #[error("u_m must be a finite value > 0 (got {0})")]
    MainThreshold(f64),
    #[error("u_s must be a finite value > 0 (got {0})")]
    SecondaryThreshold(f64),
    #[error("mu must lie in (0, 0.5] (got {0})")]
    Intensity(f64),
}

impl<S: Scalar> ModelParams<S> {
    /// Parameters used by most experiments: 10 000 agents, 10% HSI agents,
    /// mu = 0.5, bounded space.
    pub fn with_thresholds(u_m: S, u_s: S) -> Self {
        Self {
            n_agents: 10_000,
            h: S::lit(0.1),
            u_m,
            u_s,
            mu: S::lit(0.5),
            bounded: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.n_agents < 2 {
            return Err(ParamError::TooFewAgents(self.n_agents));
        }
        let in_range = |v: S, lo: S, hi: S| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.h, S::zero(), S::one()) {
            return Err(ParamError::Proportion(self.h.as_f64()));
        }
        if !(self.u_m.is_finite() && self.u_m > S::zero()) {
            return Err(ParamError::MainThreshold(self.u_m.as_f64()));
        }
        if !(self.u_s.is_finite() && self.u_s > S::zero()) {
            return Err(ParamError::SecondaryThreshold(self.u_s.as_f64()));
        }
        if !(self.mu.is_finite() && self.mu > S::zero() && self.mu <= S::lit(0.5)) {
            return Err(ParamError::Intensity(self.mu.as_f64()));
        }
        Ok(())
    }

    /// Number of HSI agents, `round(h * N)`.
    pub fn hsi_count(&self) -> usize {
        let n = self.h.as_f64() * self.n_agents as f64;
        (n.round() as usize).min(self.n_agents)
    }
}

/// Direction drawn on an exact tie in the rejection rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value<S: Scalar>(self) -> S {
        match self {
            Sign::Minus => -S::one(),
            Sign::Plus => S::one(),
        }
    }
}

#[inline]
fn attract<S: Scalar>(own: Attitude<S>, peer: Attitude<S>, mu: S) -> Attitude<S> {
    Attitude {
        main: own.main + mu * (peer.main - own.main),
        secondary: own.secondary + mu * (peer.secondary - own.secondary),
    }
}

/// Influence of `peer` on a non-HSI agent holding `own`.
///
/// The agent moves towards the peer by a fraction `mu` of the gap on both
/// dimensions when it is within `u_m` on main and within `u_s` on secondary
/// (inclusive). Otherwise it is left unchanged.
#[inline]
pub fn influence_on_non_hsi<S: Scalar>(
    own: Attitude<S>,
    peer: Attitude<S>,
    params: &ModelParams<S>,
) -> Attitude<S> {
    let close_main = (own.main - peer.main).abs() <= params.u_m;
    let close_secondary = (own.secondary - peer.secondary).abs() <= params.u_s;
    if close_main && close_secondary {
        attract(own, peer, params.mu)
    } else {
        own
    }
}

/// Influence of `peer` on an HSI agent holding `own`.
///
/// `tie_break` is called only when the agents disagree on main, are close on
/// secondary, and share exactly the same secondary value.
#[inline]
pub fn influence_on_hsi<S: Scalar>(
    own: Attitude<S>,
    peer: Attitude<S>,
    params: &ModelParams<S>,
    tie_break: impl FnOnce() -> Sign,
) -> Attitude<S> {
    if (own.main - peer.main).abs() <= params.u_m {
        return attract(own, peer, params.mu);
    }
    let gap = peer.secondary - own.secondary;
    if gap.abs() > params.u_s {
        return own;
    }
    let (mu, u_s) = (params.mu, params.u_s);
    #[allow(clippy::float_cmp)]
    let secondary = if own.secondary - peer.secondary < S::zero() {
        own.secondary - mu * (u_s - gap)
    } else if peer.secondary != own.secondary {
        own.secondary + mu * (u_s + gap)
    } else {
        own.secondary + tie_break().value::<S>() * mu * u_s
    };
    Attitude {
        main: own.main,
        secondary,
    }
}

/// Dispatches to the influence rule matching the receiving agent's kind.
#[inline]
pub fn influence<S: Scalar>(
    receiver: Involvement,
    own: Attitude<S>,
    peer: Attitude<S>,
    params: &ModelParams<S>,
    tie_break: impl FnOnce() -> Sign,
) -> Attitude<S> {
    match receiver {
        Involvement::Hsi => influence_on_hsi(own, peer, params, tie_break),
        Involvement::NonHsi => influence_on_non_hsi(own, peer, params),
    }
}

/// Clips both coordinates to [-1, +1] in bounded mode; identity otherwise.
#[inline]
pub fn clamp<S: Scalar>(attitude: Attitude<S>, params: &ModelParams<S>) -> Attitude<S> {
    if !params.bounded {
        return attitude;
    }
    let one = S::one();
    Attitude {
        main: attitude.main.max(-one).min(one),
        secondary: attitude.secondary.max(-one).min(one),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params(u_m: f64, u_s: f64, mu: f64) -> ModelParams<f64> {
        ModelParams {
            n_agents: 2,
            h: 0.5,
            u_m,
            u_s,
            mu,
            bounded: true,
            seed: 0,
        }
    }

    fn at(main: f64, secondary: f64) -> Attitude<f64> {
        Attitude::new(main, secondary)
    }

    fn no_tie() -> Sign {
        panic!("tie-break must not be consumed")
    }

    fn assert_close(a: Attitude<f64>, b: Attitude<f64>) {
        assert!(
            (a.main - b.main).abs() < 1e-12 && (a.secondary - b.secondary).abs() < 1e-12,
            "{a:?} != {b:?}"
        );
    }

    #[test]
    fn non_hsi_attracts_when_close_on_both() {
        let p = params(0.5, 0.3, 0.5);
        assert_close(influence_on_non_hsi(at(0.0, 0.0), at(0.4, 0.2), &p), at(0.2, 0.1));
    }

    #[test]
    fn non_hsi_indifferent_on_partial_agreement() {
        let p = params(0.5, 0.3, 0.5);
        assert_eq!(influence_on_non_hsi(at(0.0, 0.0), at(0.6, 0.2), &p), at(0.0, 0.0));
        // far on secondary only
        assert_eq!(influence_on_non_hsi(at(0.0, 0.0), at(0.1, 0.5), &p), at(0.0, 0.0));
    }

    #[test]
    fn thresholds_are_inclusive() {
        let p = params(0.5, 0.25, 0.5);
        assert_close(influence_on_non_hsi(at(0.0, 0.0), at(0.5, 0.25), &p), at(0.25, 0.125));
        // exactly u_m apart on main: attraction, not rejection
        assert_close(influence_on_hsi(at(0.0, 0.0), at(0.5, 0.9), &p, no_tie), at(0.25, 0.45));
    }

    #[test]
    fn hsi_rejects_downwards_when_below_peer() {
        let p = params(0.5, 0.3, 0.5);
        assert_close(influence_on_hsi(at(0.0, 0.1), at(0.8, 0.2), &p, no_tie), at(0.0, 0.0));
    }

    #[test]
    fn hsi_rejects_upwards_when_above_peer() {
        let p = params(0.5, 0.3, 0.5);
        assert_close(influence_on_hsi(at(0.0, 0.3), at(0.8, 0.2), &p, no_tie), at(0.0, 0.4));
    }

    #[test]
    fn hsi_tie_uses_drawn_sign() {
        let p = params(0.5, 0.3, 0.5);
        let up = influence_on_hsi(at(0.0, 0.2), at(0.8, 0.2), &p, || Sign::Plus);
        let down = influence_on_hsi(at(0.0, 0.2), at(0.8, 0.2), &p, || Sign::Minus);
        assert_close(up, at(0.0, 0.35));
        assert_close(down, at(0.0, 0.05));
    }

    #[test]
    fn hsi_attracts_on_both_whatever_secondary_distance() {
        let p = params(0.5, 0.3, 0.5);
        assert_close(influence_on_hsi(at(0.0, 0.9), at(0.4, -0.9), &p, no_tie), at(0.2, 0.0));
    }

    #[test]
    fn hsi_unchanged_when_far_on_both() {
        let p = params(0.5, 0.3, 0.5);
        assert_eq!(influence_on_hsi(at(0.0, 0.9), at(0.8, -0.9), &p, no_tie), at(0.0, 0.9));
    }

    #[test]
    fn zero_distance_is_fixed_point() {
        let p = params(0.5, 0.3, 0.5);
        let x = at(0.37, -0.81);
        assert_eq!(influence_on_non_hsi(x, x, &p), x);
        assert_eq!(influence_on_hsi(x, x, &p, no_tie), x);
    }

    #[test]
    fn clamp_modes() {
        let mut p = params(0.5, 0.3, 0.5);
        assert_eq!(clamp(at(0.3, 1.15), &p), at(0.3, 1.0));
        assert_eq!(clamp(at(-1.4, 0.2), &p), at(-1.0, 0.2));
        p.bounded = false;
        assert_eq!(clamp(at(0.3, 1.15), &p), at(0.3, 1.15));
    }

    #[test]
    fn validation_rejects_out_of_range() {
        let ok = ModelParams::<f64>::with_thresholds(0.5, 0.5);
        assert!(ok.validate().is_ok());
        let mut p = ok.clone();
        p.n_agents = 1;
        assert_eq!(p.validate(), Err(ParamError::TooFewAgents(1)));
        let mut p = ok.clone();
        p.mu = 0.7;
        assert!(matches!(p.validate(), Err(ParamError::Intensity(_))));
        let mut p = ok.clone();
        p.mu = 0.0;
        assert!(matches!(p.validate(), Err(ParamError::Intensity(_))));
        let mut p = ok.clone();
        p.h = 1.01;
        assert!(matches!(p.validate(), Err(ParamError::Proportion(_))));
        let mut p = ok.clone();
        p.u_s = 0.0;
        assert!(matches!(p.validate(), Err(ParamError::SecondaryThreshold(_))));
        let mut p = ok;
        p.u_m = f64::NAN;
        assert!(matches!(p.validate(), Err(ParamError::MainThreshold(_))));
    }

    #[test]
    fn hsi_count_rounds() {
        let mut p = ModelParams::<f64>::with_thresholds(0.5, 0.5);
        p.n_agents = 10;
        assert_eq!(p.hsi_count(), 1);
        p.h = 0.0;
        assert_eq!(p.hsi_count(), 0);
        p.h = 1.0;
        assert_eq!(p.hsi_count(), 10);
        p.n_agents = 25;
        p.h = 0.1;
        assert_eq!(p.hsi_count(), 3);
    }

    #[test]
    fn works_in_single_precision() {
        let p = ModelParams::<f32> {
            n_agents: 2,
            h: 0.5,
            u_m: 0.5,
            u_s: 0.3,
            mu: 0.5,
            bounded: true,
            seed: 0,
        };
        let out = influence_on_hsi(Attitude::new(0.0_f32, 0.1), Attitude::new(0.8, 0.2), &p, || Sign::Plus);
        assert!((out.secondary - 0.0).abs() < 1e-6);
    }

    fn coord() -> impl Strategy<Value = f64> {
        -1.0f64..=1.0
    }

    proptest! {
        #[test]
        fn attraction_contracts_gap(
            (xm, xs, ym, ys) in (coord(), coord(), coord(), coord()),
            u_m in 0.01f64..2.0, u_s in 0.01f64..2.0, mu in 0.01f64..=0.5,
            hsi in any::<bool>(),
        ) {
            let p = params(u_m, u_s, mu);
            let (x, y) = (at(xm, xs), at(ym, ys));
            let attracted = if hsi {
                (xm - ym).abs() <= u_m
            } else {
                (xm - ym).abs() <= u_m && (xs - ys).abs() <= u_s
            };
            prop_assume!(attracted);
            let kind = if hsi { Involvement::Hsi } else { Involvement::NonHsi };
            let out = influence(kind, x, y, &p, no_tie);
            prop_assert!(((out.main - ym).abs() - (1.0 - mu) * (xm - ym).abs()).abs() < 1e-12);
            prop_assert!(((out.secondary - ys).abs() - (1.0 - mu) * (xs - ys).abs()).abs() < 1e-12);
        }

        #[test]
        fn rejection_bounds_and_direction(
            (xm, xs, ym) in (coord(), coord(), coord()),
            offset in -1.0f64..1.0,
            u_m in 0.01f64..1.0, u_s in 0.01f64..1.0, mu in 0.01f64..=0.5,
            plus in any::<bool>(),
        ) {
            let ys = xs + offset * u_s;
            prop_assume!((xm - ym).abs() > u_m);
            let p = params(u_m, u_s, mu);
            let sign = if plus { Sign::Plus } else { Sign::Minus };
            let out = influence_on_hsi(at(xm, xs), at(ym, ys), &p, || sign);
            prop_assert_eq!(out.main, xm);
            let shift = (out.secondary - xs).abs();
            if ys == xs {
                prop_assert!((shift - mu * u_s).abs() < 1e-12);
            } else {
                prop_assert!(shift <= mu * u_s + 1e-12);
                prop_assert!((out.secondary - ys).abs() + 1e-12 >= (xs - ys).abs());
            }
        }

        #[test]
        fn influence_is_deterministic(
            (xm, xs, ym, ys) in (coord(), coord(), coord(), coord()),
            u_m in 0.01f64..2.0, u_s in 0.01f64..2.0, mu in 0.01f64..=0.5,
        ) {
            let p = params(u_m, u_s, mu);
            let (x, y) = (at(xm, xs), at(ym, ys));
            prop_assert_eq!(influence_on_hsi(x, y, &p, || Sign::Plus), influence_on_hsi(x, y, &p, || Sign::Plus));
            prop_assert_eq!(influence_on_non_hsi(x, y, &p), influence_on_non_hsi(x, y, &p));
        }
    }
}
