//! Numerical integration of the membrane dynamics, used to cross-check the
//! closed-form solver.
//!
//! The state is `(V, I)` with `dV/dt = I` and `dI/dt = -I / tau_syn`; every
//! input spike adds its weight to `I`. Integration is classical RK4 with
//! steps clipped to land on input spike times, and the first step that ends
//! at or above threshold is refined by bisection.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spike::{NeuronParams, SpikeVector};

/// Integration step and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub dt: f64,
    pub t_max: f64,
}

impl OracleConfig {
    pub fn new(dt: f64, t_max: f64) -> Result<Self> {
        let cfg = Self { dt, t_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("oracle dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::Config(format!("oracle t_max must be positive, got {}", self.t_max)));
        }
        if self.dt * 10.0 > self.t_max {
            return Err(Error::Config("oracle dt must be much smaller than t_max".into()));
        }
        Ok(())
    }
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { dt: 1e-3, t_max: 10.0 }
    }
}

const BISECT_TOL: f64 = 1e-8;

#[derive(Clone, Copy)]
struct State {
    v: f64,
    i: f64,
}

fn rk4(s: State, h: f64, tau: f64) -> State {
    let f = |st: State| (st.i, -st.i / tau);
    let (k1v, k1i) = f(s);
    let (k2v, k2i) = f(State { v: s.v + 0.5 * h * k1v, i: s.i + 0.5 * h * k1i });
    let (k3v, k3i) = f(State { v: s.v + 0.5 * h * k2v, i: s.i + 0.5 * h * k2i });
    let (k4v, k4i) = f(State { v: s.v + h * k3v, i: s.i + h * k3i });
    State {
        v: s.v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
        i: s.i + h / 6.0 * (k1i + 2.0 * k2i + 2.0 * k3i + k4i),
    }
}

/// First threshold crossing of the integrated membrane potential within
/// `[0, t_max]`, or `None`.
pub fn oracle_integrate<T: Scalar>(
    inputs: &SpikeVector<T>,
    params: &NeuronParams<T>,
    cfg: &OracleConfig,
) -> Result<Option<T>> {
    cfg.validate()?;
    if inputs.channels() != params.weights.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} weights",
            inputs.channels(),
            params.weights.len()
        )));
    }
    let theta = params.threshold.to_f64_lossy();
    let tau = params.tau_syn.to_f64_lossy();

    let mut events: Vec<(f64, f64)> = inputs
        .spikes()
        .iter()
        .map(|&(c, t)| (t.to_f64_lossy(), params.weights[c].to_f64_lossy()))
        .collect();
    events.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut state = State { v: 0.0, i: 0.0 };
    let mut t = 0.0;
    let mut next = 0;
    loop {
        while next < events.len() && events[next].0 <= t {
            state.i += events[next].1;
            next += 1;
        }
        if t >= cfg.t_max {
            return Ok(None);
        }
        let mut h = cfg.dt.min(cfg.t_max - t);
        if next < events.len() {
            h = h.min(events[next].0 - t);
        }
        let after = rk4(state, h, tau);
        if after.v >= theta {
            let (mut lo, mut hi) = (0.0, h);
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                if rk4(state, mid, tau).v >= theta {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(T::lit(t + hi)));
        }
        state = after;
        t += h;
    }
}
