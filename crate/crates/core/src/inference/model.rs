//! Forward and lateral movement models: data layout, regularized log
//! posterior and its analytic gradient.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{LN_2, SQRT_2};
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::covariates::{Standardizer, TrainingRow, N_FORWARD, N_LATERAL};
use crate::error::{Error, Result};
use crate::spline::Basis;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const CHUNK_ROWS: usize = 2048;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Forward,
    Lateral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Priors {
    /// Scale of spline coefficients around the shared mean profile.
    pub spline_sd: f64,
    /// Scale of jockey and course/condition effects around zero.
    pub effect_sd: f64,
    pub psi_sd: f64,
    pub plm_sd: f64,
    /// Scale of the shared mean profile coefficients around zero.
    pub mu_sd: f64,
    /// Half-normal scale on the noise standard deviations.
    pub sigma_scale: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            spline_sd: 0.5,
            effect_sd: 0.1,
            psi_sd: 1.0,
            plm_sd: 1.0,
            mu_sd: 10.0,
            sigma_scale: 1.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("spline_sd", self.spline_sd),
            ("effect_sd", self.effect_sd),
            ("psi_sd", self.psi_sd),
            ("plm_sd", self.plm_sd),
            ("mu_sd", self.mu_sd),
            ("sigma_scale", self.sigma_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("prior scale {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Position of each parameter block in the flat parameter vector:
/// spline rows, mean profile, previous-lateral coefficient, jockey effects,
/// context effects, covariate coefficients, log noise scale.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub kind: ModelKind,
    pub n_horses: usize,
    pub spline_dim: usize,
    pub n_jockeys: usize,
    pub n_contexts: usize,
    pub n_covariates: usize,
}

impl Layout {
    pub fn spline(&self) -> Range<usize> {
        match self.kind {
            ModelKind::Forward => 0..self.n_horses * self.spline_dim,
            ModelKind::Lateral => 0..0,
        }
    }

    pub fn mu(&self) -> Range<usize> {
        let s = self.spline().end;
        match self.kind {
            ModelKind::Forward => s..s + self.spline_dim,
            ModelKind::Lateral => s..s,
        }
    }

    pub fn plm(&self) -> Range<usize> {
        let s = self.mu().end;
        match self.kind {
            ModelKind::Forward => s..s,
            ModelKind::Lateral => s..s + 1,
        }
    }

    pub fn jockey(&self) -> Range<usize> {
        let s = self.plm().end;
        s..s + self.n_jockeys
    }

    pub fn context(&self) -> Range<usize> {
        let s = self.jockey().end;
        s..s + self.n_contexts
    }

    pub fn psi(&self) -> Range<usize> {
        let s = self.context().end;
        s..s + self.n_covariates
    }

    pub fn log_sigma(&self) -> usize {
        self.psi().end
    }

    pub fn len(&self) -> usize {
        self.log_sigma() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The prior mode: spline rows at the mean profile (0), all effects 0,
    /// noise scale at the half-normal scale.
    pub fn prior_mode(&self, priors: &Priors) -> Vec<f64> {
        let mut theta = vec![0.0; self.len()];
        theta[self.log_sigma()] = priors.sigma_scale.ln();
        theta
    }

    /// Prior standard deviation per coordinate, used when curvature is
    /// unavailable.
    pub fn prior_scales(&self, priors: &Priors) -> Vec<f64> {
        let mut sd = vec![0.0; self.len()];
        sd[self.spline()].fill(priors.spline_sd);
        sd[self.mu()].fill(priors.mu_sd);
        sd[self.plm()].fill(priors.plm_sd);
        sd[self.jockey()].fill(priors.effect_sd);
        sd[self.context()].fill(priors.effect_sd);
        sd[self.psi()].fill(priors.psi_sd);
        sd[self.log_sigma()] = 1.0;
        sd
    }

    /// Human-readable name of every coordinate.
    pub fn names(&self, vocab: &Vocabulary, covariates: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        if self.kind == ModelKind::Forward {
            for h in &vocab.horses {
                for b in 0..self.spline_dim {
                    out.push(format!("spline[{h}][{b}]"));
                }
            }
            for b in 0..self.spline_dim {
                out.push(format!("mu[{b}]"));
            }
        } else {
            out.push("beta_plm".to_string());
        }
        out.extend(vocab.jockeys.iter().map(|j| format!("jockey[{j}]")));
        out.extend(vocab.contexts.iter().map(|c| format!("context[{c}]")));
        out.extend(covariates.iter().map(|c| format!("psi[{c}]")));
        out.push("log_sigma".to_string());
        out
    }
}

/// Sorted identifier sets; positions are the parameter indices.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub horses: Vec<String>,
    pub jockeys: Vec<String>,
    pub contexts: Vec<String>,
}

impl Vocabulary {
    pub fn from_rows(rows: &[TrainingRow]) -> Self {
        let mut horses = BTreeSet::new();
        let mut jockeys = BTreeSet::new();
        let mut contexts = BTreeSet::new();
        for r in rows {
            horses.insert(r.row.horse_id.as_str());
            jockeys.insert(r.row.jockey_id.as_str());
            contexts.insert(r.row.race_context.as_str());
        }
        let own = |s: BTreeSet<&str>| s.into_iter().map(str::to_string).collect();
        Self {
            horses: own(horses),
            jockeys: own(jockeys),
            contexts: own(contexts),
        }
    }

    pub fn horse_index(&self, id: &str) -> Option<usize> {
        self.horses.binary_search_by(|h| h.as_str().cmp(id)).ok()
    }

    pub fn jockey_index(&self, id: &str) -> Option<usize> {
        self.jockeys.binary_search_by(|h| h.as_str().cmp(id)).ok()
    }

    pub fn context_index(&self, id: &str) -> Option<usize> {
        self.contexts.binary_search_by(|h| h.as_str().cmp(id)).ok()
    }

    /// Number of distinct races each horse appears in.
    pub fn race_counts(&self, rows: &[TrainingRow]) -> Vec<usize> {
        let mut seen: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in rows {
            seen.entry(r.row.horse_id.as_str())
                .or_default()
                .insert(r.row.race_id.as_str());
        }
        self.horses
            .iter()
            .map(|h| seen.get(h.as_str()).map_or(0, BTreeSet::len))
            .collect()
    }
}

/// Column-oriented model inputs with covariates already standardized.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelData {
    pub layout: Layout,
    pub truncated: bool,
    pub horse: Vec<u32>,
    pub jockey: Vec<u32>,
    pub context: Vec<u32>,
    /// Basis width (degree + 1); `basis_values` holds that many per row.
    pub basis_width: usize,
    pub basis_start: Vec<u32>,
    pub basis_values: Vec<f64>,
    pub plm: Vec<f64>,
    /// Row-major `n x n_covariates`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ModelData {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row_x(&self, i: usize) -> &[f64] {
        let q = self.layout.n_covariates;
        &self.x[i * q..(i + 1) * q]
    }

    /// Builds forward-model data. Observations below zero are clamped to
    /// zero when `truncated` is set, since the likelihood has no mass there.
    pub fn forward(
        rows: &[TrainingRow],
        vocab: &Vocabulary,
        basis: &Basis,
        standardizer: &Standardizer,
        truncated: bool,
    ) -> Result<Self> {
        if standardizer.width() != N_FORWARD {
            return Err(Error::Domain("forward standardizer has the wrong width".into()));
        }
        let layout = Layout {
            kind: ModelKind::Forward,
            n_horses: vocab.horses.len(),
            spline_dim: basis.dimension(),
            n_jockeys: vocab.jockeys.len(),
            n_contexts: vocab.contexts.len(),
            n_covariates: N_FORWARD,
        };
        let width = basis.degree() + 1;
        let mut data = Self::empty(layout, truncated, width, rows.len());
        let mut buf = vec![0.0; width];
        for r in rows {
            let d = &r.row;
            data.push_ids(vocab, &d.horse_id, &d.jockey_id, &d.race_context)?;
            let start = basis.eval_into(d.cumulative_forward.max(0.0), &mut buf)?;
            data.basis_start.push(start as u32);
            data.basis_values.extend_from_slice(&buf);
            let mut x = d.forward_features();
            standardizer.apply_in_place(&mut x);
            data.x.extend_from_slice(&x);
            data.y.push(if truncated { r.d_forward.max(0.0) } else { r.d_forward });
        }
        Ok(data)
    }

    pub fn lateral(rows: &[TrainingRow], vocab: &Vocabulary, standardizer: &Standardizer) -> Result<Self> {
        if standardizer.width() != N_LATERAL {
            return Err(Error::Domain("lateral standardizer has the wrong width".into()));
        }
        let layout = Layout {
            kind: ModelKind::Lateral,
            n_horses: 0,
            spline_dim: 0,
            n_jockeys: vocab.jockeys.len(),
            n_contexts: vocab.contexts.len(),
            n_covariates: N_LATERAL,
        };
        let mut data = Self::empty(layout, false, 0, rows.len());
        for r in rows {
            let d = &r.row;
            data.push_ids(vocab, &d.horse_id, &d.jockey_id, &d.race_context)?;
            data.plm.push(d.prev_lat_movement);
            let mut x = d.lateral_features();
            standardizer.apply_in_place(&mut x);
            data.x.extend_from_slice(&x);
            data.y.push(r.d_lateral);
        }
        Ok(data)
    }

    fn empty(layout: Layout, truncated: bool, basis_width: usize, n: usize) -> Self {
        Self {
            truncated,
            horse: Vec::with_capacity(n),
            jockey: Vec::with_capacity(n),
            context: Vec::with_capacity(n),
            basis_width,
            basis_start: Vec::with_capacity(n),
            basis_values: Vec::with_capacity(n * basis_width),
            plm: Vec::new(),
            x: Vec::with_capacity(n * layout.n_covariates),
            y: Vec::with_capacity(n),
            layout,
        }
    }

    fn push_ids(&mut self, vocab: &Vocabulary, horse: &str, jockey: &str, context: &str) -> Result<()> {
        let missing = |what: &str, id: &str| Error::Domain(format!("{what} `{id}` is not in the vocabulary"));
        if self.layout.kind == ModelKind::Forward {
            self.horse
                .push(vocab.horse_index(horse).ok_or_else(|| missing("horse", horse))? as u32);
        }
        self.jockey
            .push(vocab.jockey_index(jockey).ok_or_else(|| missing("jockey", jockey))? as u32);
        self.context
            .push(vocab.context_index(context).ok_or_else(|| missing("context", context))? as u32);
        Ok(())
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.layout.len() {
            return Err(Error::Domain(format!(
                "parameter vector has length {}, layout needs {}",
                theta.len(),
                self.layout.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("parameter {i} is not finite")));
        }
        Ok(())
    }

    /// Linear predictor of row `i`.
    #[inline]
    fn mean(&self, theta: &[f64], i: usize) -> f64 {
        let l = &self.layout;
        let mut m = theta[l.jockey().start + self.jockey[i] as usize]
            + theta[l.context().start + self.context[i] as usize];
        match l.kind {
            ModelKind::Forward => {
                let row0 = self.horse[i] as usize * l.spline_dim + self.basis_start[i] as usize;
                let w = self.basis_width;
                for (b, v) in self.basis_values[i * w..(i + 1) * w].iter().enumerate() {
                    m += v * theta[row0 + b];
                }
            }
            ModelKind::Lateral => m += theta[l.plm().start] * self.plm[i],
        }
        let psi = &theta[l.psi()];
        for (x, p) in self.row_x(i).iter().zip(psi) {
            m += x * p;
        }
        m
    }

    /// Adds `coef * d(mean_i)/d(theta)` into `grad`.
    #[inline]
    fn scatter_mean_grad(&self, i: usize, coef: f64, grad: &mut [f64]) {
        let l = &self.layout;
        grad[l.jockey().start + self.jockey[i] as usize] += coef;
        grad[l.context().start + self.context[i] as usize] += coef;
        match l.kind {
            ModelKind::Forward => {
                let row0 = self.horse[i] as usize * l.spline_dim + self.basis_start[i] as usize;
                let w = self.basis_width;
                for (b, v) in self.basis_values[i * w..(i + 1) * w].iter().enumerate() {
                    grad[row0 + b] += coef * v;
                }
            }
            ModelKind::Lateral => grad[l.plm().start] += coef * self.plm[i],
        }
        let psi = l.psi();
        for (g, x) in grad[psi].iter_mut().zip(self.row_x(i)) {
            *g += coef * x;
        }
    }
}

impl ModelData {
    /// Gauss-Newton diagonal of the negative log posterior, with the noise
    /// scale set from the response spread. Used only to precondition the
    /// optimizer.
    pub fn curvature_diagonal(&self, priors: &Priors) -> Vec<f64> {
        let l = &self.layout;
        let n = self.n_rows() as f64;
        let mean = self.y.iter().sum::<f64>() / n.max(1.0);
        let var = self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(1.0);
        let w = 1.0 / var.max(1e-6);
        let mut d = vec![0.0; l.len()];
        for i in 0..self.n_rows() {
            d[l.jockey().start + self.jockey[i] as usize] += w;
            d[l.context().start + self.context[i] as usize] += w;
            match l.kind {
                ModelKind::Forward => {
                    let row0 = self.horse[i] as usize * l.spline_dim + self.basis_start[i] as usize;
                    let bw = self.basis_width;
                    for (b, v) in self.basis_values[i * bw..(i + 1) * bw].iter().enumerate() {
                        d[row0 + b] += w * v * v;
                    }
                }
                ModelKind::Lateral => d[l.plm().start] += w * self.plm[i] * self.plm[i],
            }
            for (di, x) in d[l.psi()].iter_mut().zip(self.row_x(i)) {
                *di += w * x * x;
            }
        }
        let prec = |sd: f64| 1.0 / (sd * sd);
        for i in l.spline() {
            d[i] += prec(priors.spline_sd);
        }
        for i in l.mu() {
            d[i] += l.n_horses as f64 * prec(priors.spline_sd) + prec(priors.mu_sd);
        }
        for i in l.plm() {
            d[i] += prec(priors.plm_sd);
        }
        for i in l.jockey().chain(l.context()) {
            d[i] += prec(priors.effect_sd);
        }
        for i in l.psi() {
            d[i] += prec(priors.psi_sd);
        }
        d[l.log_sigma()] = 2.0 * n + 2.0;
        d
    }
}

/// `ln Phi(z)` without underflow in the lower tail.
pub fn log_ndtr(z: f64) -> f64 {
    if z > 0.0 {
        (-0.5 * erfc(z / SQRT_2)).ln_1p()
    } else if z > -35.0 {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - HALF_LN_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `phi(z) / Phi(z)`.
pub fn inverse_mills(z: f64) -> f64 {
    if z > -35.0 {
        let phi = (-0.5 * z * z - HALF_LN_2PI).exp();
        phi / (0.5 * erfc(-z / SQRT_2))
    } else {
        let z2 = z * z;
        -z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2))
    }
}

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let r = (x - mean) / sd;
    -HALF_LN_2PI - sd.ln() - 0.5 * r * r
}

fn log_prior(theta: &[f64], l: &Layout, p: &Priors, grad: Option<&mut [f64]>) -> f64 {
    let mut lp = 0.0;
    let mut g_local = grad;
    let mut add = |i: usize, mean: f64, sd: f64, g: &mut Option<&mut [f64]>| {
        lp += normal_logpdf(theta[i], mean, sd);
        let d = -(theta[i] - mean) / (sd * sd);
        if let Some(g) = g.as_deref_mut() {
            g[i] += d;
        }
        d
    };
    if l.kind == ModelKind::Forward {
        let mu0 = l.mu().start;
        for h in 0..l.n_horses {
            for b in 0..l.spline_dim {
                let i = h * l.spline_dim + b;
                let d = add(i, theta[mu0 + b], p.spline_sd, &mut g_local);
                if let Some(g) = g_local.as_deref_mut() {
                    g[mu0 + b] -= d;
                }
            }
        }
        for i in l.mu() {
            add(i, 0.0, p.mu_sd, &mut g_local);
        }
    }
    for i in l.plm() {
        add(i, 0.0, p.plm_sd, &mut g_local);
    }
    for i in l.jockey().chain(l.context()) {
        add(i, 0.0, p.effect_sd, &mut g_local);
    }
    for i in l.psi() {
        add(i, 0.0, p.psi_sd, &mut g_local);
    }
    // half-normal on sigma, plus the log-Jacobian of sigma = exp(eta)
    let eta = theta[l.log_sigma()];
    let s2 = (2.0 * eta).exp() / (p.sigma_scale * p.sigma_scale);
    lp += LN_2 - HALF_LN_2PI - p.sigma_scale.ln() - 0.5 * s2 + eta;
    if let Some(g) = g_local {
        g[l.log_sigma()] += 1.0 - s2;
    }
    lp
}

fn chunk_loglik(data: &ModelData, theta: &[f64], rows: Range<usize>, grad: Option<&mut Vec<f64>>) -> f64 {
    let eta = theta[data.layout.log_sigma()];
    let sigma = eta.exp();
    let mut ll = 0.0;
    let mut d_eta = 0.0;
    let mut grad = grad;
    for i in rows {
        let m = data.mean(theta, i);
        let r = (data.y[i] - m) / sigma;
        let mut lli = -HALF_LN_2PI - eta - 0.5 * r * r;
        let mut d_mean = r / sigma;
        let mut d_eta_i = r * r - 1.0;
        if data.truncated {
            let z = m / sigma;
            lli -= log_ndtr(z);
            let lam = inverse_mills(z);
            d_mean -= lam / sigma;
            d_eta_i += lam * z;
        }
        ll += lli;
        if let Some(g) = grad.as_deref_mut() {
            data.scatter_mean_grad(i, d_mean, g);
            d_eta += d_eta_i;
        }
    }
    if let Some(g) = grad {
        g[data.layout.log_sigma()] += d_eta;
    }
    ll
}

fn chunks(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK_ROWS))
        .map(|c| c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n))
        .collect()
}

/// Log likelihood plus log prior. Row sums are reduced chunk by chunk in a
/// fixed order, so the value does not depend on the thread count.
pub fn log_posterior(theta: &[f64], data: &ModelData, priors: &Priors) -> Result<f64> {
    data.check(theta)?;
    let parts: Vec<f64> = chunks(data.n_rows())
        .into_par_iter()
        .map(|r| chunk_loglik(data, theta, r, None))
        .collect();
    let value = parts.iter().sum::<f64>() + log_prior(theta, &data.layout, priors, None);
    finite(value)
}

/// Gradient of [`log_posterior`] with respect to every coordinate (noise
/// scale on the log scale).
pub fn gradient(theta: &[f64], data: &ModelData, priors: &Priors) -> Result<Vec<f64>> {
    Ok(value_and_gradient(theta, data, priors)?.1)
}

pub fn value_and_gradient(theta: &[f64], data: &ModelData, priors: &Priors) -> Result<(f64, Vec<f64>)> {
    data.check(theta)?;
    let d = theta.len();
    let parts: Vec<(f64, Vec<f64>)> = chunks(data.n_rows())
        .into_par_iter()
        .map(|r| {
            let mut g = vec![0.0; d];
            let v = chunk_loglik(data, theta, r, Some(&mut g));
            (v, g)
        })
        .collect();
    let mut grad = vec![0.0; d];
    let mut value = 0.0;
    for (v, g) in parts {
        value += v;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    value += log_prior(theta, &data.layout, priors, Some(&mut grad));
    let value = finite(value)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Domain(format!("gradient coordinate {i} is not finite")));
    }
    Ok((value, grad))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain("log posterior is not finite".into()))
    }
}
