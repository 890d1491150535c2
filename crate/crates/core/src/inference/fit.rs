//! MAP fitting, Laplace curvature, posterior draws and the parameter file.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{value_and_gradient, Layout, ModelData, ModelKind, Priors, Vocabulary};
use super::optim::{minimize_preconditioned, OptimOptions};
use crate::covariates::{Standardizer, TrainingRow, FORWARD_FEATURES, LATERAL_FEATURES, N_FORWARD, N_LATERAL};
use crate::drafting::DragTable;
use crate::error::{Error, Result};
use crate::spline::{Basis, SplineSpec};

pub const PARAMS_VERSION: &str = "racesim-params/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub n_rows: usize,
    pub iterations: usize,
    pub converged: bool,
    pub grad_max_norm: f64,
    pub relative_change: f64,
    pub log_posterior: f64,
}

/// Inverse-covariance information of the Laplace approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Curvature {
    /// Packed row-major lower triangle of the Cholesky factor of the
    /// negative Hessian at the mode.
    Dense { lower: Vec<f64> },
    /// Independent standard deviations; zeros give a point mass.
    Diagonal { sd: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub layout: Layout,
    pub vocabulary: Vocabulary,
    /// Distinct races per horse, aligned with `vocabulary.horses`.
    pub horse_races: Vec<usize>,
    pub covariates: Vec<String>,
    pub standardizer: Standardizer,
    /// Mode, in layout order, with the noise scale on the log scale.
    pub theta: Vec<f64>,
    pub diagnostics: FitDiagnostics,
    pub curvature: Curvature,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: String,
    pub data_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedParams {
    pub version: String,
    pub spline: SplineSpec,
    pub priors: Priors,
    pub truncated: bool,
    pub drag: DragTable,
    pub forward: FittedModel,
    pub lateral: FittedModel,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub spline: SplineSpec,
    pub priors: Priors,
    pub truncated: bool,
    pub optim: OptimOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            spline: SplineSpec::default(),
            priors: Priors::default(),
            truncated: true,
            optim: OptimOptions::default(),
        }
    }
}

/// Quasi-Newton ascent on the log posterior from the prior mode.
pub fn fit_map(data: &ModelData, priors: &Priors, opts: &OptimOptions) -> Result<(Vec<f64>, FitDiagnostics)> {
    if data.n_rows() == 0 {
        return Err(Error::Input("cannot fit a model to zero rows".into()));
    }
    priors.validate()?;
    let objective = |t: &[f64]| -> Result<(f64, Vec<f64>)> {
        let (v, g) = value_and_gradient(t, data, priors)?;
        Ok((-v, g.into_iter().map(|x| -x).collect()))
    };
    let curvature = data.curvature_diagonal(priors);
    let res = minimize_preconditioned(objective, data.layout.prior_mode(priors), opts, Some(&curvature))?;
    if !res.converged {
        log::warn!(
            "{:?} model stopped after {} iterations without converging (gradient max-norm {:.3e})",
            data.layout.kind,
            res.iterations,
            res.grad_max_norm()
        );
    }
    let diag = FitDiagnostics {
        n_rows: data.n_rows(),
        iterations: res.iterations,
        converged: res.converged,
        grad_max_norm: res.grad_max_norm(),
        relative_change: res.relative_change,
        log_posterior: -res.value,
    };
    Ok((res.x, diag))
}

/// Negative Hessian of the log posterior by central differences of the
/// analytic gradient, symmetrized.
pub fn negative_hessian(theta: &[f64], data: &ModelData, priors: &Priors) -> Result<DMatrix<f64>> {
    let d = theta.len();
    let mut h = DMatrix::zeros(d, d);
    let mut t = theta.to_vec();
    for i in 0..d {
        let step = 1e-4 * theta[i].abs().max(1.0);
        t[i] = theta[i] + step;
        let gp = value_and_gradient(&t, data, priors)?.1;
        t[i] = theta[i] - step;
        let gm = value_and_gradient(&t, data, priors)?.1;
        t[i] = theta[i];
        for j in 0..d {
            h[(j, i)] = -(gp[j] - gm[j]) / (2.0 * step);
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Cholesky factor of the negative Hessian, or prior-scale standard
/// deviations when it is not positive definite.
pub fn laplace_curvature(theta: &[f64], data: &ModelData, priors: &Priors) -> Result<Curvature> {
    let h = negative_hessian(theta, data, priors)?;
    match h.cholesky() {
        Some(ch) => {
            let l = ch.l();
            let d = theta.len();
            let mut lower = Vec::with_capacity(d * (d + 1) / 2);
            for i in 0..d {
                for j in 0..=i {
                    lower.push(l[(i, j)]);
                }
            }
            Ok(Curvature::Dense { lower })
        }
        None => {
            log::warn!(
                "{:?} model curvature is not positive definite; drawing from prior scales",
                data.layout.kind
            );
            Ok(Curvature::Diagonal {
                sd: data.layout.prior_scales(priors),
            })
        }
    }
}

fn build_vocab_and_scalers(rows: &[TrainingRow]) -> (Vocabulary, Standardizer, Standardizer) {
    let vocab = Vocabulary::from_rows(rows);
    let feats: Vec<_> = rows.iter().map(|r| r.row.features()).collect();
    let fwd = Standardizer::fit(feats.iter().map(|f| &f[..N_FORWARD]), N_FORWARD);
    let lat = Standardizer::fit(feats.iter().map(|f| &f[..]), N_LATERAL);
    (vocab, fwd, lat)
}

fn fit_one(
    data: ModelData,
    vocab: &Vocabulary,
    horse_races: Vec<usize>,
    covariates: &[&str],
    standardizer: Standardizer,
    config: &FitConfig,
) -> Result<FittedModel> {
    let (theta, diagnostics) = fit_map(&data, &config.priors, &config.optim)?;
    let curvature = laplace_curvature(&theta, &data, &config.priors)?;
    let mut vocabulary = vocab.clone();
    if data.layout.kind == ModelKind::Lateral {
        vocabulary.horses.clear();
    }
    Ok(FittedModel {
        layout: data.layout.clone(),
        vocabulary,
        horse_races,
        covariates: covariates.iter().map(|s| s.to_string()).collect(),
        standardizer,
        theta,
        diagnostics,
        curvature,
    })
}

/// Fits the forward and lateral models independently (concurrently).
pub fn fit_params(rows: &[TrainingRow], config: &FitConfig, drag: &DragTable) -> Result<FittedParams> {
    if rows.is_empty() {
        return Err(Error::Input("no training rows".into()));
    }
    let basis = Basis::new(config.spline.clone())?;
    let (vocab, fwd_std, lat_std) = build_vocab_and_scalers(rows);
    let races = vocab.race_counts(rows);
    let fwd_data = ModelData::forward(rows, &vocab, &basis, &fwd_std, config.truncated)?;
    let lat_data = ModelData::lateral(rows, &vocab, &lat_std)?;
    let (forward, lateral) = rayon::join(
        || fit_one(fwd_data, &vocab, races.clone(), &FORWARD_FEATURES, fwd_std.clone(), config),
        || fit_one(lat_data, &vocab, Vec::new(), &LATERAL_FEATURES, lat_std.clone(), config),
    );
    Ok(FittedParams {
        version: PARAMS_VERSION.to_string(),
        spline: config.spline.clone(),
        priors: config.priors.clone(),
        truncated: config.truncated,
        drag: drag.clone(),
        forward: forward?,
        lateral: lateral?,
        provenance: Provenance::default(),
    })
}

impl FittedParams {
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_reader(reader)?;
        let found = value
            .get("version")
            .and_then(|v| v.as_str())
            .unwrap_or("<missing>")
            .to_string();
        if found != PARAMS_VERSION {
            return Err(Error::Version {
                found,
                expected: PARAMS_VERSION.to_string(),
            });
        }
        Ok(serde_json::from_value(value)?)
    }

    /// Parameter values at the mode.
    pub fn map_draw(&self) -> ParamDraw {
        ParamDraw {
            forward: ForwardDraw::unpack(&self.forward.layout, &self.forward.theta),
            lateral: LateralDraw::unpack(&self.lateral.layout, &self.lateral.theta),
        }
    }

    pub fn sampler(&self) -> Result<LaplaceSampler> {
        Ok(LaplaceSampler {
            forward: ModelSampler::new(&self.forward)?,
            lateral: ModelSampler::new(&self.lateral)?,
            forward_layout: self.forward.layout.clone(),
            lateral_layout: self.lateral.layout.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardDraw {
    /// `n_horses x spline_dim`, row-major.
    pub spline: Vec<f64>,
    pub mu: Vec<f64>,
    pub jockey: Vec<f64>,
    pub context: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: f64,
}

impl ForwardDraw {
    pub fn unpack(l: &Layout, theta: &[f64]) -> Self {
        Self {
            spline: theta[l.spline()].to_vec(),
            mu: theta[l.mu()].to_vec(),
            jockey: theta[l.jockey()].to_vec(),
            context: theta[l.context()].to_vec(),
            psi: theta[l.psi()].to_vec(),
            sigma: theta[l.log_sigma()].exp(),
        }
    }

    /// Spline coefficients of horse `h`, or the mean profile when unseen.
    pub fn coefficients(&self, h: Option<usize>) -> &[f64] {
        let b = self.mu.len();
        match h {
            Some(h) => &self.spline[h * b..(h + 1) * b],
            None => &self.mu,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LateralDraw {
    pub beta_plm: f64,
    pub jockey: Vec<f64>,
    pub context: Vec<f64>,
    pub psi: Vec<f64>,
    pub sigma: f64,
}

impl LateralDraw {
    pub fn unpack(l: &Layout, theta: &[f64]) -> Self {
        Self {
            beta_plm: theta[l.plm().start],
            jockey: theta[l.jockey()].to_vec(),
            context: theta[l.context()].to_vec(),
            psi: theta[l.psi()].to_vec(),
            sigma: theta[l.log_sigma()].exp(),
        }
    }
}

/// One joint set of forward and lateral parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDraw {
    pub forward: ForwardDraw,
    pub lateral: LateralDraw,
}

#[derive(Clone, Debug)]
enum ModelSampler {
    Dense { mode: Vec<f64>, lower: Vec<f64> },
    Diagonal { mode: Vec<f64>, sd: Vec<f64> },
}

impl ModelSampler {
    fn new(m: &FittedModel) -> Result<Self> {
        let d = m.theta.len();
        match &m.curvature {
            Curvature::Dense { lower } if lower.len() == d * (d + 1) / 2 => Ok(Self::Dense {
                mode: m.theta.clone(),
                lower: lower.clone(),
            }),
            Curvature::Diagonal { sd } if sd.len() == d => Ok(Self::Diagonal {
                mode: m.theta.clone(),
                sd: sd.clone(),
            }),
            _ => Err(Error::Simulation("curvature size does not match the parameter vector".into())),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Self::Diagonal { mode, sd } => mode
                .iter()
                .zip(sd)
                .map(|(m, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * z
                })
                .collect(),
            Self::Dense { mode, lower } => {
                // solve L^T v = z so that v has covariance (L L^T)^-1
                let d = mode.len();
                let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let at = |i: usize, j: usize| lower[i * (i + 1) / 2 + j];
                let mut v = vec![0.0; d];
                for i in (0..d).rev() {
                    let mut s = z[i];
                    for k in i + 1..d {
                        s -= at(k, i) * v[k];
                    }
                    v[i] = s / at(i, i);
                }
                mode.iter().zip(v).map(|(m, x)| m + x).collect()
            }
        }
    }
}

/// Draws parameter sets from the Gaussian approximation at the mode.
#[derive(Clone, Debug)]
pub struct LaplaceSampler {
    forward: ModelSampler,
    lateral: ModelSampler,
    forward_layout: Layout,
    lateral_layout: Layout,
}

impl LaplaceSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamDraw {
        let f = self.forward.sample(rng);
        let l = self.lateral.sample(rng);
        ParamDraw {
            forward: ForwardDraw::unpack(&self.forward_layout, &f),
            lateral: LateralDraw::unpack(&self.lateral_layout, &l),
        }
    }

    /// Raw forward-model parameter vector, for checks on the approximation.
    pub fn draw_forward_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.forward.sample(rng)
    }

    pub fn draw_lateral_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lateral.sample(rng)
    }
}

/// Known parameter values, turned into a parameter set with no posterior
/// spread. Covariate coefficients act on unstandardized covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct PointParams {
    pub spline: SplineSpec,
    /// Horse id, spline coefficients and race count.
    pub horses: Vec<(String, Vec<f64>, usize)>,
    pub mu: Vec<f64>,
    /// Jockey id with forward and lateral effects.
    pub jockeys: Vec<(String, f64, f64)>,
    /// Course/condition context with forward and lateral effects.
    pub contexts: Vec<(String, f64, f64)>,
    pub psi_forward: [f64; N_FORWARD],
    pub sigma_forward: f64,
    pub beta_plm: f64,
    pub psi_lateral: [f64; N_LATERAL],
    pub sigma_lateral: f64,
}

impl PointParams {
    pub fn into_fitted(self, drag: &DragTable) -> Result<FittedParams> {
        let dim = self.spline.dimension();
        if self.mu.len() != dim || self.horses.iter().any(|(_, c, _)| c.len() != dim) {
            return Err(Error::Spec(format!("spline coefficients must have length {dim}")));
        }
        let mut horses = self.horses;
        horses.sort_by(|a, b| a.0.cmp(&b.0));
        let mut jockeys = self.jockeys;
        jockeys.sort_by(|a, b| a.0.cmp(&b.0));
        let mut contexts = self.contexts;
        contexts.sort_by(|a, b| a.0.cmp(&b.0));
        let vocab = Vocabulary {
            horses: horses.iter().map(|h| h.0.clone()).collect(),
            jockeys: jockeys.iter().map(|j| j.0.clone()).collect(),
            contexts: contexts.iter().map(|c| c.0.clone()).collect(),
        };
        let diagnostics = FitDiagnostics {
            n_rows: 0,
            iterations: 0,
            converged: true,
            grad_max_norm: 0.0,
            relative_change: 0.0,
            log_posterior: 0.0,
        };
        let fl = Layout {
            kind: ModelKind::Forward,
            n_horses: horses.len(),
            spline_dim: dim,
            n_jockeys: jockeys.len(),
            n_contexts: contexts.len(),
            n_covariates: N_FORWARD,
        };
        let mut ft = Vec::with_capacity(fl.len());
        for (_, c, _) in &horses {
            ft.extend_from_slice(c);
        }
        ft.extend_from_slice(&self.mu);
        ft.extend(jockeys.iter().map(|j| j.1));
        ft.extend(contexts.iter().map(|c| c.1));
        ft.extend_from_slice(&self.psi_forward);
        ft.push(self.sigma_forward.ln());
        let ll = Layout {
            kind: ModelKind::Lateral,
            n_horses: 0,
            spline_dim: 0,
            n_jockeys: jockeys.len(),
            n_contexts: contexts.len(),
            n_covariates: N_LATERAL,
        };
        let mut lt = vec![self.beta_plm];
        lt.extend(jockeys.iter().map(|j| j.2));
        lt.extend(contexts.iter().map(|c| c.2));
        lt.extend_from_slice(&self.psi_lateral);
        lt.push(self.sigma_lateral.ln());
        let forward = FittedModel {
            curvature: Curvature::Diagonal { sd: vec![0.0; fl.len()] },
            layout: fl,
            vocabulary: vocab.clone(),
            horse_races: horses.iter().map(|h| h.2).collect(),
            covariates: FORWARD_FEATURES.iter().map(|s| s.to_string()).collect(),
            standardizer: Standardizer::identity(N_FORWARD),
            theta: ft,
            diagnostics: diagnostics.clone(),
        };
        let lateral = FittedModel {
            curvature: Curvature::Diagonal { sd: vec![0.0; ll.len()] },
            layout: ll,
            vocabulary: Vocabulary {
                horses: Vec::new(),
                ..vocab
            },
            horse_races: Vec::new(),
            covariates: LATERAL_FEATURES.iter().map(|s| s.to_string()).collect(),
            standardizer: Standardizer::identity(N_LATERAL),
            theta: lt,
            diagnostics,
        };
        Ok(FittedParams {
            version: PARAMS_VERSION.to_string(),
            spline: self.spline,
            priors: Priors::default(),
            truncated: true,
            drag: drag.clone(),
            forward,
            lateral,
            provenance: Provenance::default(),
        })
    }
}

/// `n` seeded draws.
pub fn laplace_draws(fitted: &FittedParams, n: usize, seed: u64) -> Result<Vec<ParamDraw>> {
    use rand::SeedableRng;
    let sampler = fitted.sampler()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JockeyRating {
    pub jockey_id: String,
    pub rating: f64,
}

/// Forward-model jockey effects at the mode, best first; ties by id.
pub fn jockey_ratings(fitted: &FittedParams) -> Vec<JockeyRating> {
    let m = &fitted.forward;
    let effects = &m.theta[m.layout.jockey()];
    let mut out: Vec<JockeyRating> = m
        .vocabulary
        .jockeys
        .iter()
        .zip(effects)
        .map(|(j, &r)| JockeyRating {
            jockey_id: j.clone(),
            rating: r,
        })
        .collect();
    out.sort_by(|a, b| b.rating.total_cmp(&a.rating).then_with(|| a.jockey_id.cmp(&b.jockey_id)));
    out
}

#[cfg(test)]
mod tests {
    use super::super::model::tests::{random_forward, random_lateral};
    use super::super::model::{gradient, log_posterior};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Single horse at a constant 4 m/frame over the whole distance, no
    /// covariates, one jockey and context.
    fn constant_speed_data(n: usize, seed: u64) -> ModelData {
        let basis = Basis::new(SplineSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout {
            kind: ModelKind::Forward,
            n_horses: 1,
            spline_dim: 9,
            n_jockeys: 1,
            n_contexts: 1,
            n_covariates: 0,
        };
        let mut data = ModelData {
            layout,
            truncated: true,
            horse: vec![],
            jockey: vec![],
            context: vec![],
            basis_width: 4,
            basis_start: vec![],
            basis_values: vec![],
            plm: vec![],
            x: vec![],
            y: vec![],
        };
        let mut buf = [0.0; 4];
        for i in 0..n {
            let j = (i % 400) as f64 * 4.0;
            data.horse.push(0);
            data.jockey.push(0);
            data.context.push(0);
            data.basis_start.push(basis.eval_into(j, &mut buf).unwrap() as u32);
            data.basis_values.extend_from_slice(&buf);
            let z: f64 = rng.sample(StandardNormal);
            data.y.push(4.0 + 0.25 * z);
        }
        data
    }

    #[test]
    fn constant_speed_recovered() {
        let data = constant_speed_data(4000, 5);
        let p = Priors::default();
        let (theta, diag) = fit_map(&data, &p, &OptimOptions::default()).unwrap();
        assert!(diag.converged, "{diag:?}");
        let basis = Basis::new(SplineSpec::default()).unwrap();
        let coef = &theta[data.layout.spline()];
        let effects = theta[data.layout.jockey().start] + theta[data.layout.context().start];
        for k in 0..=140 {
            let j = 100.0 + 10.0 * k as f64;
            let v = basis.profile(j, coef).unwrap() + effects;
            assert!((v - 4.0).abs() < 0.05, "j={j}: {v}");
        }
        assert!((theta[data.layout.log_sigma()].exp() - 0.25).abs() < 0.02);
    }

    #[test]
    fn fit_is_deterministic() {
        let data = random_forward(3, 300, true, 9);
        let p = Priors::default();
        let a = fit_map(&data, &p, &OptimOptions::default()).unwrap();
        let b = fit_map(&data, &p, &OptimOptions::default()).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn mode_is_stationary_and_sigma_is_a_maximum() {
        let data = random_lateral(400, 4);
        let p = Priors::default();
        let (theta, diag) = fit_map(&data, &p, &OptimOptions::default()).unwrap();
        assert!(diag.converged);
        let g = gradient(&theta, &data, &p).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-5));
        let best = log_posterior(&theta, &data, &p).unwrap();
        for delta in [-0.05, 0.05] {
            let mut t = theta.clone();
            t[data.layout.log_sigma()] += delta;
            assert!(log_posterior(&t, &data, &p).unwrap() < best);
        }
    }

    /// Lateral data with two jockeys whose true effects are +-0.2.
    fn two_jockey_data(effect_sd: f64) -> (ModelData, Priors) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let layout = Layout {
            kind: ModelKind::Lateral,
            n_horses: 0,
            spline_dim: 0,
            n_jockeys: 2,
            n_contexts: 1,
            n_covariates: 0,
        };
        let mut data = ModelData {
            layout,
            truncated: false,
            horse: vec![],
            jockey: vec![],
            context: vec![],
            basis_width: 0,
            basis_start: vec![],
            basis_values: vec![],
            plm: vec![],
            x: vec![],
            y: vec![],
        };
        for i in 0..200 {
            let j = (i % 2) as u32;
            let z: f64 = rng.sample(StandardNormal);
            data.jockey.push(j);
            data.context.push(0);
            data.plm.push(0.0);
            data.y.push(if j == 0 { 0.2 } else { -0.2 } + 0.1 * z);
        }
        let priors = Priors {
            effect_sd,
            ..Priors::default()
        };
        (data, priors)
    }

    #[test]
    fn jockey_effects_recovered_and_shrunk() {
        let (data, p) = two_jockey_data(0.1);
        let (theta, _) = fit_map(&data, &p, &OptimOptions::default()).unwrap();
        let j = &theta[data.layout.jockey()];
        assert!(j[0] > 0.0 && j[1] < 0.0);
        let (data2, p2) = two_jockey_data(0.01);
        let (theta2, _) = fit_map(&data2, &p2, &OptimOptions::default()).unwrap();
        let j2 = &theta2[data2.layout.jockey()];
        assert!(j2[0].abs() < j[0].abs() && j2[1].abs() < j[1].abs());
        // raw per-jockey mean exceeds the shrunk effect
        let raw: f64 = data.y.iter().step_by(2).sum::<f64>() / 100.0;
        assert!(j[0] + theta[data.layout.context().start] < raw);
    }

    #[test]
    fn spline_rows_shrink_to_shared_mean() {
        let data = random_forward(3, 200, false, 31);
        let spread = |sd: f64| {
            let p = Priors {
                spline_sd: sd,
                ..Priors::default()
            };
            let (t, _) = fit_map(&data, &p, &OptimOptions::default()).unwrap();
            let l = &data.layout;
            let mu = &t[l.mu()];
            t[l.spline()]
                .iter()
                .enumerate()
                .map(|(i, v)| (v - mu[i % 9]).abs())
                .fold(0.0, f64::max)
        };
        assert!(spread(0.01) < spread(0.5));
        assert!(spread(0.01) < 0.05);
    }

    #[test]
    fn lateral_model_explains_self_generated_data() {
        let mut data = random_lateral(2000, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut truth = vec![0.0; data.layout.len()];
        truth[data.layout.plm().start] = 0.9;
        for (k, i) in data.layout.psi().enumerate() {
            truth[i] = if k % 2 == 0 { 0.4 } else { -0.3 };
        }
        let sigma: f64 = 0.05;
        truth[data.layout.log_sigma()] = sigma.ln();
        let mut fitted_mean = Vec::new();
        for i in 0..data.n_rows() {
            let x = data.row_x(i);
            let m = truth[data.layout.plm().start] * data.plm[i]
                + x.iter().zip(&truth[data.layout.psi()]).map(|(a, b)| a * b).sum::<f64>();
            let z: f64 = rng.sample(StandardNormal);
            data.y[i] = m + sigma * z;
            fitted_mean.push(m);
        }
        let mean_y = data.y.iter().sum::<f64>() / data.n_rows() as f64;
        let total: f64 = data.y.iter().map(|y| (y - mean_y).powi(2)).sum();
        let resid: f64 = data.y.iter().zip(&fitted_mean).map(|(y, m)| (y - m).powi(2)).sum();
        assert!(resid / total < 0.01, "{}", resid / total);
    }

    fn small_fitted() -> FittedParams {
        let fwd = random_forward(2, 200, false, 41);
        let lat = random_lateral(200, 42);
        let p = Priors::default();
        let make = |data: &ModelData, names: &[&str]| {
            let (theta, diagnostics) = fit_map(data, &p, &OptimOptions::default()).unwrap();
            let curvature = laplace_curvature(&theta, data, &p).unwrap();
            FittedModel {
                layout: data.layout.clone(),
                vocabulary: Vocabulary {
                    horses: (0..data.layout.n_horses).map(|h| format!("H{h}")).collect(),
                    jockeys: (0..data.layout.n_jockeys).map(|h| format!("J{h}")).collect(),
                    contexts: (0..data.layout.n_contexts).map(|h| format!("C{h}")).collect(),
                },
                horse_races: vec![1; data.layout.n_horses],
                covariates: names.iter().map(|s| s.to_string()).collect(),
                standardizer: Standardizer::identity(names.len()),
                theta,
                diagnostics,
                curvature,
            }
        };
        FittedParams {
            version: PARAMS_VERSION.into(),
            spline: SplineSpec::default(),
            priors: p.clone(),
            truncated: false,
            drag: DragTable::default(),
            forward: make(&fwd, &FORWARD_FEATURES),
            lateral: make(&lat, &LATERAL_FEATURES),
            provenance: Provenance::default(),
        }
    }

    #[test]
    fn laplace_draws_centre_on_mode() {
        let fitted = small_fitted();
        assert!(matches!(fitted.lateral.curvature, Curvature::Dense { .. }));
        assert!(laplace_draws(&fitted, 0, 1).unwrap().is_empty());
        let sampler = fitted.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 10_000;
        let d = fitted.lateral.theta.len();
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sampler.draw_lateral_theta(&mut rng)).collect();
        for i in 0..d {
            let mean = draws.iter().map(|v| v[i]).sum::<f64>() / n as f64;
            let var = draws.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            let se = (var / n as f64).sqrt();
            assert!((mean - fitted.lateral.theta[i]).abs() < 3.0 * se, "coordinate {i}");
        }
        let a = laplace_draws(&fitted, 5, 9).unwrap();
        let b = laplace_draws(&fitted, 5, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplace_covariance_matches_inverse_hessian() {
        let fitted = small_fitted();
        let data = random_lateral(200, 42);
        let h = negative_hessian(&fitted.lateral.theta, &data, &fitted.priors).unwrap();
        let cov = h.try_inverse().unwrap();
        let sampler = fitted.sampler().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sampler.draw_lateral_theta(&mut rng)).collect();
        let i = fitted.lateral.layout.plm().start;
        let var = draws.iter().map(|v| (v[i] - fitted.lateral.theta[i]).powi(2)).sum::<f64>() / n as f64;
        assert!((var / cov[(i, i)] - 1.0).abs() < 0.05);
    }

    #[test]
    fn parameter_file_round_trip_and_version_check() {
        let fitted = small_fitted();
        let mut buf = Vec::new();
        fitted.to_writer(&mut buf).unwrap();
        let back = FittedParams::from_reader(buf.as_slice()).unwrap();
        assert_eq!(back, fitted);
        let mut value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        value["version"] = serde_json::Value::from("racesim-params/0");
        let bad = serde_json::to_vec(&value).unwrap();
        assert!(matches!(
            FittedParams::from_reader(bad.as_slice()),
            Err(Error::Version { .. })
        ));
    }

    #[test]
    fn ratings_sorted_with_alphabetical_ties() {
        let mut fitted = small_fitted();
        let l = fitted.forward.layout.clone();
        fitted.forward.theta[l.jockey()].copy_from_slice(&[0.1, 0.1]);
        fitted.forward.vocabulary.jockeys = vec!["b".into(), "a".into()];
        let r = jockey_ratings(&fitted);
        assert_eq!(r[0].jockey_id, "a");
        fitted.forward.theta[l.jockey()].copy_from_slice(&[-0.2, 0.2]);
        assert_eq!(jockey_ratings(&fitted)[0].jockey_id, "a");
    }
}
