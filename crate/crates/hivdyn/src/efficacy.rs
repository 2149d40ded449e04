//! Time-varying drug efficacy.
//!
//! Each subject takes two drugs. Drug `d` contributes an inhibitory quotient
//! `IQ_d(t) = Cmin_d / IC50_d(t)` weighted by an adherence fraction
//! `A_d(t) in [0, 1]`, and the combined potency `S(t) = IQ_1 A_1 + IQ_2 A_2`
//! maps to efficacy through `gamma(t) = S / (phi + S)`, so `gamma` always
//! stays in `[0, 1)`.
//!
//! IC50 values may drift linearly from a baseline `i0` to `ir` at a failure
//! time `tr` (resistance emergence) and stay at `ir` afterwards. Adherence is
//! piecewise constant between clinic visits: the rate recorded at visit
//! `T_{k+1}` covers the half-open interval `(T_k, T_{k+1}]`, `t = 0` takes
//! the first interval's rate, and the final rate persists past the last
//! visit.

use crate::error::{Error, Result};

/// Median inhibitory concentration as a function of time since treatment
/// start. Without a failure time the value is the constant `i0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ic50Profile {
    i0: f64,
    ir: f64,
    tr: Option<f64>,
}

impl Ic50Profile {
    pub fn new(i0: f64, ir: f64, tr: Option<f64>) -> Result<Self> {
        if !(i0 > 0.0 && i0.is_finite()) {
            return Err(Error::Domain(format!("IC50 baseline must be positive, got {i0}")));
        }
        if !(ir > 0.0 && ir.is_finite()) {
            return Err(Error::Domain(format!("IC50 plateau must be positive, got {ir}")));
        }
        if let Some(tr) = tr {
            if !(tr > 0.0 && tr.is_finite()) {
                return Err(Error::Domain(format!("failure time must be positive, got {tr}")));
            }
        }
        Ok(Self { i0, ir, tr })
    }

    /// Constant profile, no resistance emergence.
    pub fn constant(i0: f64) -> Result<Self> {
        Self::new(i0, i0, None)
    }

    pub fn baseline(&self) -> f64 {
        self.i0
    }

    pub fn plateau(&self) -> f64 {
        self.ir
    }

    pub fn failure_time(&self) -> Option<f64> {
        self.tr
    }

    /// IC50 at time `t`: linear ramp from `i0` to `ir` over `[0, tr)`, then
    /// flat at `ir`; constant `i0` when no failure time is set.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.tr {
            None => self.i0,
            Some(tr) if t >= tr => self.ir,
            Some(tr) => self.i0 + (self.ir - self.i0) * t.max(0.0) / tr,
        }
    }
}

/// Piecewise-constant adherence between clinic visits.
///
/// `rates.len()` is either `visit_times.len() - 1` (one rate per recorded
/// interval) or `visit_times.len()` (a trailing rate for the open interval
/// past the last visit). Either way the last rate persists beyond the final
/// visit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdherenceProfile {
    visit_times: Vec<f64>,
    rates: Vec<f64>,
}

impl AdherenceProfile {
    pub fn new(visit_times: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        if visit_times.is_empty() || rates.is_empty() {
            return Err(Error::Domain("adherence profile needs at least one visit and one rate".into()));
        }
        if !visit_times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Domain("adherence visit times must be strictly increasing".into()));
        }
        if !visit_times.iter().all(|t| t.is_finite() && *t >= 0.0) {
            return Err(Error::Domain("adherence visit times must be finite and nonnegative".into()));
        }
        let n = visit_times.len();
        if rates.len() != n - 1 && rates.len() != n {
            return Err(Error::Domain(format!(
                "adherence rate count {} does not match {} visit times (expected {} or {})",
                rates.len(),
                n,
                n.saturating_sub(1),
                n
            )));
        }
        if !rates.iter().all(|r| r.is_finite() && (0.0..=1.0).contains(r)) {
            return Err(Error::Domain("adherence rates must lie in [0, 1]".into()));
        }
        Ok(Self { visit_times, rates })
    }

    /// Full adherence at all times.
    pub fn perfect() -> Self {
        Self { visit_times: vec![0.0], rates: vec![1.0] }
    }

    pub fn visit_times(&self) -> &[f64] {
        &self.visit_times
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Adherence fraction at time `t`. The rate indexed `k` covers
    /// `(T_k, T_{k+1}]`; times at or before the first visit use the first
    /// rate, times past the last covered interval use the last rate.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= self.visit_times[0] {
            return self.rates[0];
        }
        // Number of visit times strictly below t; t in (T_{idx-1}, T_idx].
        let idx = self.visit_times.partition_point(|v| *v < t);
        let k = idx - 1;
        *self.rates.get(k).unwrap_or_else(|| self.rates.last().unwrap())
    }
}

/// Trough concentration plus IC50 and adherence history for one drug.
#[derive(Debug, Clone, PartialEq)]
pub struct DrugInputs {
    pub cmin: f64,
    pub ic50: Ic50Profile,
    pub adherence: AdherenceProfile,
}

impl DrugInputs {
    pub fn new(cmin: f64, ic50: Ic50Profile, adherence: AdherenceProfile) -> Result<Self> {
        if !(cmin >= 0.0 && cmin.is_finite()) {
            return Err(Error::Domain(format!("trough concentration must be nonnegative, got {cmin}")));
        }
        Ok(Self { cmin, ic50, adherence })
    }

    /// Inhibitory quotient `Cmin / IC50(t)`.
    pub fn inhibitory_quotient(&self, t: f64) -> f64 {
        self.cmin / self.ic50.value_at(t)
    }
}

/// Everything needed to evaluate the efficacy of a two-drug regimen.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficacyInputs {
    pub drugs: [DrugInputs; 2],
}

impl EfficacyInputs {
    pub fn new(first: DrugInputs, second: DrugInputs) -> Self {
        Self { drugs: [first, second] }
    }

    /// Regimen with fixed troughs and IC50s and full adherence; `gamma` is
    /// then constant in time.
    pub fn constant(cmin1: f64, ic50_1: f64, cmin2: f64, ic50_2: f64) -> Result<Self> {
        Ok(Self::new(
            DrugInputs::new(cmin1, Ic50Profile::constant(ic50_1)?, AdherenceProfile::perfect())?,
            DrugInputs::new(cmin2, Ic50Profile::constant(ic50_2)?, AdherenceProfile::perfect())?,
        ))
    }

    /// Combined adherence-weighted potency `S(t)`.
    pub fn potency(&self, t: f64) -> f64 {
        self.drugs
            .iter()
            .map(|d| d.inhibitory_quotient(t) * d.adherence.value_at(t))
            .sum()
    }

    /// Efficacy `gamma(t) = S(t) / (phi + S(t))`, in `[0, 1)` for `phi > 0`.
    pub fn gamma(&self, phi: f64, t: f64) -> Result<f64> {
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Domain(format!("phi must be positive, got {phi}")));
        }
        let s = self.potency(t);
        Ok(s / (phi + s))
    }

    /// Times where the regimen inputs are not smooth: adherence interval
    /// endpoints and IC50 failure times. Sorted, deduplicated.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts: Vec<f64> = Vec::new();
        for d in &self.drugs {
            pts.extend_from_slice(d.adherence.visit_times());
            if let Some(tr) = d.ic50.failure_time() {
                pts.push(tr);
            }
        }
        pts.retain(|t| t.is_finite() && *t > 0.0);
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        pts
    }
}
