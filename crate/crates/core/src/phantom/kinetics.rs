use alloc::vec;
use alloc::vec::Vec;
use libm::{exp, sqrt};

use crate::error::{Error, Result};

/// Plasma input `s * [(a1 t - a2 - a3) e^{l1 t} + a2 e^{l2 t} + a3 e^{l3 t}]`,
/// `t` in minutes. The rates `l*` are negative.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct InputFunction {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub scale: f64,
}

impl Default for InputFunction {
    fn default() -> Self {
        InputFunction {
            a1: 851.1225,
            a2: 21.8798,
            a3: 20.8113,
            l1: -4.1339,
            l2: -0.1191,
            l3: -0.0104,
            scale: 0.003,
        }
    }
}

/// One term `c t^p e^{r t}`.
#[derive(Debug, Clone, Copy)]
struct ExpTerm {
    coef: f64,
    power: u8,
    rate: f64,
}

impl InputFunction {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a1, self.a2, self.a3, self.l1, self.l2, self.l3, self.scale];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input function"));
        }
        if self.l1 >= 0.0 || self.l2 >= 0.0 || self.l3 >= 0.0 {
            return Err(Error::invalid("input function", "exponential rates must be negative"));
        }
        if self.a1 < 0.0 || self.a2 < 0.0 || self.a3 < 0.0 || self.scale < 0.0 {
            return Err(Error::invalid("input function", "amplitudes must be nonnegative"));
        }
        Ok(())
    }

    fn terms(&self) -> [ExpTerm; 4] {
        let s = self.scale;
        [
            ExpTerm { coef: s * self.a1, power: 1, rate: self.l1 },
            ExpTerm { coef: -s * (self.a2 + self.a3), power: 0, rate: self.l1 },
            ExpTerm { coef: s * self.a2, power: 0, rate: self.l2 },
            ExpTerm { coef: s * self.a3, power: 0, rate: self.l3 },
        ]
    }
}

/// Plasma activity at `t` minutes; zero before injection.
pub fn plasma_input(t: f64, input: &InputFunction) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    input
        .terms()
        .iter()
        .map(|e| e.coef * if e.power == 1 { t } else { 1.0 } * exp(e.rate * t))
        .sum::<f64>()
        .max(0.0)
}

/// Rate constants (1/min) of the two-tissue compartment model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct KineticParams {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

impl KineticParams {
    pub fn new(k1: f64, k2: f64, k3: f64, k4: f64) -> Result<Self> {
        let p = KineticParams { k1, k2, k3, k4 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ks = [self.k1, self.k2, self.k3, self.k4];
        if ks.iter().any(|k| !k.is_finite()) {
            return Err(Error::NonFinite("rate constants"));
        }
        if ks.iter().any(|&k| k < 0.0) {
            return Err(Error::invalid("rate constants", "rates must be nonnegative"));
        }
        if self.k2 + self.k3 + self.k4 <= 0.0 {
            return Err(Error::invalid("rate constants", "k2 + k3 + k4 must be positive"));
        }
        Ok(())
    }

    pub fn with_k3(self, k3: f64) -> Self {
        KineticParams { k3, ..self }
    }

    /// Impulse response of `C_F + C_S` as terms `c t^p e^{-a t}` (rate stored negated).
    fn impulse_response(&self) -> Vec<ExpTerm> {
        let KineticParams { k1, k2, k3, k4 } = *self;
        let s = k2 + k3 + k4;
        let disc = (s * s - 4.0 * k2 * k4).max(0.0);
        let root = sqrt(disc);
        if root <= 1e-7 * s {
            let a = 0.5 * s;
            return vec![
                ExpTerm { coef: k1, power: 0, rate: -a },
                ExpTerm { coef: k1 * (k3 + k4 - a), power: 1, rate: -a },
            ];
        }
        let a1 = 0.5 * (s - root);
        let a2 = 0.5 * (s + root);
        vec![
            ExpTerm { coef: k1 * (k3 + k4 - a1) / (a2 - a1), power: 0, rate: -a1 },
            ExpTerm { coef: k1 * (a2 - k3 - k4) / (a2 - a1), power: 0, rate: -a2 },
        ]
    }
}

/// `e^{-a t} int_0^t s^r e^{(l + a) s} ds` for `r = 0, 1, 2`.
fn damped_moments(a: f64, l: f64, t: f64) -> [f64; 3] {
    let mu = l + a;
    let x = mu * t;
    let mut out = [0.0; 3];
    if x.abs() < 0.5 {
        let damp = exp(-a * t);
        for (r, o) in out.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            let mut tp = t;
            for _ in 0..r {
                tp *= t;
            }
            for n in 0..40 {
                if n > 0 {
                    term *= x / n as f64;
                }
                sum += term / (n + r + 1) as f64;
                if term.abs() < 1e-18 {
                    break;
                }
            }
            *o = damp * tp * sum;
        }
    } else {
        let el = exp(l * t);
        out[0] = (el - exp(-a * t)) / mu;
        out[1] = (t * el - out[0]) / mu;
        out[2] = (t * t * el - 2.0 * out[1]) / mu;
    }
    out
}

/// `int_0^t h(t - s) c(s) ds` for one response term and one input term.
fn convolve_terms(h: &ExpTerm, c: &ExpTerm, t: f64) -> f64 {
    let j = damped_moments(-h.rate, c.rate, t);
    let q = c.power as usize;
    let v = if h.power == 0 { j[q] } else { t * j[q] - j[q + 1] };
    h.coef * c.coef * v
}

/// Total tissue activity `C_F(t) + C_S(t)` at `t` minutes.
pub fn tissue_activity(params: &KineticParams, input: &InputFunction, t: f64) -> f64 {
    if t <= 0.0 || params.k1 == 0.0 {
        return 0.0;
    }
    let h = params.impulse_response();
    let mut total = 0.0;
    for ht in &h {
        for ct in input.terms().iter() {
            total += convolve_terms(ht, ct, t);
        }
    }
    total.max(0.0)
}

const QUAD_NODES: usize = 24;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = libm::cos(core::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Frame averages of `f` (a function of minutes) over `frames` given in seconds.
pub fn frame_average(frames: &[(f64, f64)], mut f: impl FnMut(f64) -> f64) -> Vec<f64> {
    let (x, w) = gauss_legendre(QUAD_NODES);
    frames
        .iter()
        .map(|&(start, end)| {
            let (a, b) = (start / 60.0, end / 60.0);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let s: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * f(mid + half * xi)).sum();
            0.5 * s
        })
        .collect()
}

/// Frame-averaged total tissue TAC of the two-tissue compartment model.
pub fn solve_2tcm(
    params: &KineticParams,
    input: &InputFunction,
    frames: &[(f64, f64)],
) -> Result<Vec<f64>> {
    params.validate()?;
    input.validate()?;
    if params.k1 == 0.0 {
        return Ok(vec![0.0; frames.len()]);
    }
    Ok(frame_average(frames, |t| tissue_activity(params, input, t)))
}

/// Frame-averaged plasma input.
pub fn input_tac(input: &InputFunction, frames: &[(f64, f64)]) -> Result<Vec<f64>> {
    input.validate()?;
    Ok(frame_average(frames, |t| plasma_input(t, input)))
}

/// Area under a frame-averaged TAC, in activity x minutes.
pub fn auc(tac: &[f64], frames: &[(f64, f64)]) -> f64 {
    tac.iter()
        .zip(frames)
        .map(|(v, (s, e))| v * (e - s) / 60.0)
        .sum()
}
