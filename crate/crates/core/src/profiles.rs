//! Ward clustering of fitted horse speed profiles.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::FittedParams;
use crate::spline::Basis;

pub const MIN_RACES: usize = 5;
pub const DEFAULT_CLUSTERS: usize = 3;
pub const CURVE_STEP_M: f64 = 10.0;
pub const CURVE_END_M: f64 = 1650.0;
/// Window over which clusters are ordered for labelling.
pub const EARLY_RACE_END_M: f64 = 400.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileVector {
    pub horse_id: String,
    pub coefficients: Vec<f64>,
    pub race_count: usize,
}

impl ProfileVector {
    /// Per-horse spline rows at the fitted mode.
    pub fn from_fitted(params: &FittedParams) -> Vec<Self> {
        let f = &params.forward;
        let b = f.layout.spline_dim;
        let spline = &f.theta[f.layout.spline()];
        f.vocabulary
            .horses
            .iter()
            .zip(&f.horse_races)
            .enumerate()
            .map(|(h, (id, &races))| Self {
                horse_id: id.clone(),
                coefficients: spline[h * b..(h + 1) * b].to_vec(),
                race_count: races,
            })
            .collect()
    }
}

/// One agglomeration. Leaves are `0..n`; the cluster formed by merge `i`
/// has id `n + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    /// Eligible horses, sorted; leaf `i` is `horse_ids[i]`.
    pub horse_ids: Vec<String>,
    /// Cluster label in `1..=k` per leaf. Label 1 has the highest mean
    /// early-race profile.
    pub labels: Vec<usize>,
    pub merges: Vec<Merge>,
    pub k: usize,
}

impl Clustering {
    pub fn members(&self, label: usize) -> Vec<&str> {
        self.horse_ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == label)
            .map(|(h, _)| h.as_str())
            .collect()
    }

    pub fn label_of(&self, horse_id: &str) -> Option<usize> {
        let i = self.horse_ids.binary_search_by(|h| h.as_str().cmp(horse_id)).ok()?;
        Some(self.labels[i])
    }
}

/// Ward linkage through the Lance-Williams update on squared distances.
/// Heights are the usual Ward distances `sqrt(2 na nb / (na + nb)) |ca - cb|`.
/// Equal costs go to the pair with the smallest ids.
pub fn ward_linkage(points: &[Vec<f64>]) -> Vec<Merge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    // slots hold cluster ids; d2 is indexed by slot
    let mut ids: Vec<Option<usize>> = (0..n).map(Some).collect();
    let mut size = vec![1usize; n];
    let mut d2 = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let d: f64 = points[a].iter().zip(&points[b]).map(|(x, y)| (x - y).powi(2)).sum();
            d2[a][b] = d;
            d2[b][a] = d;
        }
    }
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, usize, usize, (usize, usize))> = None;
        for a in 0..n {
            let Some(ia) = ids[a] else { continue };
            for b in a + 1..n {
                let Some(ib) = ids[b] else { continue };
                let key = (ia.min(ib), ia.max(ib));
                let cost = d2[a][b];
                let better = match best {
                    None => true,
                    Some((c, _, _, k)) => cost < c || (cost == c && key < k),
                };
                if better {
                    best = Some((cost, a, b, key));
                }
            }
        }
        let (cost, a, b, (left, right)) = best.unwrap();
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for c in 0..n {
            if c == a || c == b || ids[c].is_none() {
                continue;
            }
            let nc = size[c] as f64;
            let d = ((na + nc) * d2[a][c] + (nb + nc) * d2[b][c] - nc * cost) / (na + nb + nc);
            d2[a][c] = d;
            d2[c][a] = d;
        }
        size[a] += size[b];
        ids[a] = Some(n + step);
        ids[b] = None;
        merges.push(Merge {
            left,
            right,
            height: cost.max(0.0).sqrt(),
            size: size[a],
        });
    }
    merges
}

/// Flat assignment into `k` groups from the first `n - k` merges, with
/// groups numbered by their smallest leaf.
pub fn cut_tree(n: usize, merges: &[Merge], k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, m) in merges.iter().take(n.saturating_sub(k)).enumerate() {
        parent[m.left] = n + i;
        parent[m.right] = n + i;
    }
    let mut group_of_root = std::collections::HashMap::new();
    (0..n)
        .map(|leaf| {
            let r = root(&mut parent, leaf);
            let next = group_of_root.len();
            *group_of_root.entry(r).or_insert(next)
        })
        .collect()
}

fn early_mean(basis: &Basis, coefficients: &[f64]) -> Result<f64> {
    let steps = (EARLY_RACE_END_M / CURVE_STEP_M).round() as usize;
    let mut total = 0.0;
    for s in 0..=steps {
        total += basis.profile(s as f64 * CURVE_STEP_M, coefficients)?;
    }
    Ok(total / (steps + 1) as f64)
}

/// Ward clustering of horses with at least `MIN_RACES` races, cut at `k`.
pub fn cluster_profiles(vectors: &[ProfileVector], k: usize, basis: &Basis) -> Result<Clustering> {
    let mut eligible: Vec<&ProfileVector> = vectors.iter().filter(|v| v.race_count >= MIN_RACES).collect();
    eligible.sort_by(|a, b| a.horse_id.cmp(&b.horse_id));
    if let Some(w) = eligible.windows(2).find(|w| w[0].horse_id == w[1].horse_id) {
        return Err(Error::Input(format!("duplicate horse `{}`", w[0].horse_id)));
    }
    if k == 0 || eligible.len() < k {
        return Err(Error::Input(format!(
            "{} horses have at least {MIN_RACES} races; cannot form {k} clusters",
            eligible.len()
        )));
    }
    for v in &eligible {
        if v.coefficients.len() != basis.dimension() || v.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::Input(format!(
                "profile of `{}` must have {} finite coefficients",
                v.horse_id,
                basis.dimension()
            )));
        }
    }
    let points: Vec<Vec<f64>> = eligible.iter().map(|v| v.coefficients.clone()).collect();
    let merges = ward_linkage(&points);
    let groups = cut_tree(points.len(), &merges, k);
    let mut sums = vec![(0.0, 0usize); k];
    for (g, v) in groups.iter().zip(&eligible) {
        sums[*g].0 += early_mean(basis, &v.coefficients)?;
        sums[*g].1 += 1;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ma = sums[a].0 / sums[a].1 as f64;
        let mb = sums[b].0 / sums[b].1 as f64;
        mb.total_cmp(&ma).then(a.cmp(&b))
    });
    let mut label_of_group = vec![0; k];
    for (rank, &g) in order.iter().enumerate() {
        label_of_group[g] = rank + 1;
    }
    Ok(Clustering {
        horse_ids: eligible.iter().map(|v| v.horse_id.clone()).collect(),
        labels: groups.iter().map(|&g| label_of_group[g]).collect(),
        merges,
        k,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub horse_id: String,
    pub j: f64,
    pub value: f64,
}

/// Profiles sampled every 10 m over [0, 1650].
pub fn profile_curves(vectors: &[ProfileVector], basis: &Basis) -> Result<Vec<CurvePoint>> {
    let steps = (CURVE_END_M / CURVE_STEP_M).round() as usize;
    let mut out = Vec::with_capacity(vectors.len() * (steps + 1));
    for v in vectors {
        for s in 0..=steps {
            let j = s as f64 * CURVE_STEP_M;
            out.push(CurvePoint {
                horse_id: v.horse_id.clone(),
                j,
                value: basis.profile(j, &v.coefficients)?,
            });
        }
    }
    Ok(out)
}

/// Tree rows `(node, left, right, height, size)` followed by one leaf row
/// per horse with its label.
pub fn write_dendrogram<W: Write>(clustering: &Clustering, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["node", "left", "right", "height", "size", "horse_id", "cluster"])?;
    let n = clustering.horse_ids.len();
    for (i, (h, l)) in clustering.horse_ids.iter().zip(&clustering.labels).enumerate() {
        w.write_record([i.to_string(), String::new(), String::new(), "0".into(), "1".into(), h.clone(), l.to_string()])?;
    }
    for (i, m) in clustering.merges.iter().enumerate() {
        w.write_record([
            (n + i).to_string(),
            m.left.to_string(),
            m.right.to_string(),
            m.height.to_string(),
            m.size.to_string(),
            String::new(),
            String::new(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curves<W: Write>(curves: &[CurvePoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for c in curves {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
