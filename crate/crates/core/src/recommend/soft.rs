//! Deterministic surrogate of the allocation pipeline used for optimization
//! and attribution.
//!
//! Instead of sampling residents into homes, every (resident, residence)
//! pair carries the IPF probability mass `p_{i,l}`. With the uniform seed
//! the IPF fixed point is the independence table `p_i · o_l / Σo`, which is
//! used here in closed form. The inequality is the weighted Generalized
//! Entropy of benefits under those masses, and group means are the
//! mass-weighted means of each resident type. Residential capacities stay
//! continuous (`area / area_per_resident`, unfloored) so the objective is
//! differentiable in residential changes.
//!
//! The objective adds `λ · φ`, where `φ` sums hinge penalties on each
//! constrained type's mean-benefit change `Δ`:
//! `-min(Δ + τ, 0)` for Increase, `max(Δ - τ, 0)` for Decrease and
//! `max(|Δ| - τ, 0)` for Fixed.
//!
//! [`SoftModel::gradient`] is a hand-written reverse pass through the same
//! chain; tests check it against central differences.

use serde::Serialize;

use super::constraints::{editable_blocks, share_weights, DeltaGrid, Direction, RecommendConstraints};
use crate::allocator::move_in_marginals;
use crate::benefit::Population;
use crate::error::{Error, Result};
use crate::geo::{compute_distances, decay};
use crate::inequality::{decompose_weighted, InequalityReport};
use crate::model::{CityDesign, FunctionType, PlanningConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftEval {
    pub objective: f64,
    pub inequality: f64,
    pub penalty: f64,
    pub mean_benefit: f64,
    /// Mass-weighted mean benefit per resident type, in population type order.
    pub group_means: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct SoftModel {
    pub blocks: Vec<String>,
    pub types: Vec<FunctionType>,
    pub group_ids: Vec<String>,
    alpha: f64,
    lambda: f64,
    tau: f64,
    directions: Vec<Direction>,
    /// Column of each amenity type in `types`.
    amenity_cols: Vec<usize>,
    residential_col: Option<usize>,
    n_res: usize,
    /// `kernel[a][k * n_res + l]`: accessibility gained at `l` per m² of amenity `a` added to block `k`.
    kernel: Vec<Vec<f64>>,
    /// `base_access[l * A + a]`.
    base_access: Vec<f64>,
    /// Equity-weighted preferences `ρ_g π_{i,a}`, row-major.
    pref: Vec<f64>,
    /// `ρ_g u_i^(0)`.
    offset: Vec<f64>,
    group_of: Vec<usize>,
    base_res_area: Vec<f64>,
    res_block: Vec<Option<usize>>,
    res_share: Vec<f64>,
    area_per_resident: f64,
    base_group_means: Vec<Option<f64>>,
}

struct Forward {
    benefit: Vec<f64>,
    mean_benefit_i: Vec<f64>,
    occupancy: Vec<f64>,
    capacity: f64,
    gamma: f64,
    p: Vec<f64>,
    mass: Vec<f64>,
    total_mass: f64,
    weighted_sum: f64,
    power_sum: f64,
    group_mass: Vec<f64>,
    group_sum: Vec<f64>,
    inequality: f64,
}

impl SoftModel {
    pub fn new(
        design: &CityDesign,
        population: &Population,
        config: &PlanningConfig,
        constraints: &RecommendConstraints,
    ) -> Result<Self> {
        config.validate()?;
        population.validate()?;
        constraints.validate()?;
        if population.residents.is_empty() {
            return Err(Error::InvalidInput(
                "soft objective needs a non-empty population".into(),
            ));
        }
        let blocks = editable_blocks(design);
        let types = config.function_types.clone();
        let amenity_cols: Vec<usize> = (0..types.len()).filter(|&c| !types[c].is_residential()).collect();
        let residential_col = types.iter().position(FunctionType::is_residential);

        let distances = compute_distances(design)?;
        let n_res = distances.residential.len();
        if n_res == 0 {
            return Err(Error::InvalidInput("soft objective needs residential buildings".into()));
        }
        let col_of = |id: &str| {
            distances
                .buildings
                .iter()
                .position(|b| b == id)
                .expect("building column")
        };

        let mut kernel = Vec::with_capacity(amenity_cols.len());
        let mut base_access = vec![0.0; n_res * amenity_cols.len()];
        for (a, &c) in amenity_cols.iter().enumerate() {
            let f = &types[c];
            let mut k_a = vec![0.0; blocks.len() * n_res];
            for (k, block) in blocks.iter().enumerate() {
                for (b, share) in share_weights(design, block, f) {
                    let col = col_of(&b);
                    for l in 0..n_res {
                        k_a[k * n_res + l] += share * decay(config, f, distances.get(l, col));
                    }
                }
            }
            for (col, id) in distances.buildings.iter().enumerate() {
                let v = design.buildings[id].floor_area(f);
                if v > 0.0 {
                    for l in 0..n_res {
                        base_access[l * amenity_cols.len() + a] += v * decay(config, f, distances.get(l, col));
                    }
                }
            }
            kernel.push(k_a);
        }

        let group_ids: Vec<String> = population.types.iter().map(|t| t.id.clone()).collect();
        let mut pref = Vec::with_capacity(population.residents.len() * amenity_cols.len());
        let mut offset = Vec::with_capacity(population.residents.len());
        let mut group_of = Vec::with_capacity(population.residents.len());
        for r in &population.residents {
            let w = config.equity_weight_of(&r.type_id);
            pref.extend(amenity_cols.iter().map(|&c| w * r.preference(&types[c])));
            offset.push(w * r.prior_utility);
            group_of.push(group_ids.iter().position(|g| *g == r.type_id).expect("validated type"));
        }

        let mut base_res_area = Vec::with_capacity(n_res);
        let mut res_block = Vec::with_capacity(n_res);
        let mut res_share = vec![0.0; n_res];
        for id in &distances.residential {
            let b = &design.buildings[id];
            base_res_area.push(b.residential_area());
            res_block.push(blocks.iter().position(|k| *k == b.block_id));
        }
        for (k, block) in blocks.iter().enumerate() {
            for (b, share) in share_weights(design, block, &FunctionType::RESIDENTIAL) {
                if let Some(l) = distances.residential.iter().position(|r| *r == b) {
                    debug_assert_eq!(res_block[l], Some(k));
                    res_share[l] = share;
                }
            }
        }

        let mut model = SoftModel {
            directions: group_ids.iter().map(|g| constraints.direction_of(g)).collect(),
            blocks,
            types,
            group_ids,
            alpha: config.alpha,
            lambda: constraints.lambda,
            tau: constraints.tau,
            amenity_cols,
            residential_col,
            n_res,
            kernel,
            base_access,
            pref,
            offset,
            group_of,
            base_res_area,
            res_block,
            res_share,
            area_per_resident: config.area_per_resident,
            base_group_means: Vec::new(),
        };
        let zero = model.zero();
        let base = model.forward(&zero)?;
        model.base_group_means = model.group_means(&base);
        Ok(model)
    }

    pub fn zero(&self) -> DeltaGrid {
        DeltaGrid::zeros(self.blocks.clone(), self.types.clone())
    }

    pub fn base_group_means(&self) -> &[Option<f64>] {
        &self.base_group_means
    }

    fn n_amenity(&self) -> usize {
        self.amenity_cols.len()
    }

    fn check_shape(&self, delta: &DeltaGrid) -> Result<()> {
        if delta.blocks != self.blocks || delta.types != self.types {
            return Err(Error::InvalidInput(
                "delta grid does not match the model's blocks × types".into(),
            ));
        }
        Ok(())
    }

    fn forward(&self, delta: &DeltaGrid) -> Result<Forward> {
        self.check_shape(delta)?;
        let (n, l_count, a_count) = (self.offset.len(), self.n_res, self.n_amenity());

        let mut access = self.base_access.clone();
        for (a, &c) in self.amenity_cols.iter().enumerate() {
            for k in 0..self.blocks.len() {
                let d = delta.get(k, c);
                if d != 0.0 {
                    let row = &self.kernel[a][k * l_count..(k + 1) * l_count];
                    for (l, w) in row.iter().enumerate() {
                        access[l * a_count + a] += d * w;
                    }
                }
            }
        }

        let mut benefit = vec![0.0; n * l_count];
        let mut mean_benefit_i = vec![0.0; n];
        for i in 0..n {
            let pref = &self.pref[i * a_count..(i + 1) * a_count];
            let mut acc_sum = 0.0;
            for l in 0..l_count {
                let acc = &access[l * a_count..(l + 1) * a_count];
                let b = pref.iter().zip(acc).map(|(p, a)| p * a).sum::<f64>() - self.offset[i];
                benefit[i * l_count + l] = b;
                acc_sum += b;
            }
            mean_benefit_i[i] = acc_sum / l_count as f64;
        }

        let occupancy: Vec<f64> = (0..l_count)
            .map(|l| {
                let extra = match (self.res_block[l], self.residential_col) {
                    (Some(k), Some(c)) => self.res_share[l] * delta.get(k, c),
                    _ => 0.0,
                };
                (self.base_res_area[l] + extra).max(0.0) / self.area_per_resident
            })
            .collect();
        let capacity: f64 = occupancy.iter().sum();
        if !(capacity > 0.0) {
            return Err(Error::InvalidInput(
                "soft objective needs positive residential capacity".into(),
            ));
        }
        let marginals = move_in_marginals(&mean_benefit_i, capacity)?;

        let mut mass = vec![0.0; n * l_count];
        let (mut total_mass, mut weighted_sum) = (0.0, 0.0);
        let mut group_mass = vec![0.0; self.group_ids.len()];
        let mut group_sum = vec![0.0; self.group_ids.len()];
        for i in 0..n {
            let p = marginals.p[i];
            if p == 0.0 {
                continue;
            }
            let g = self.group_of[i];
            for l in 0..l_count {
                let w = p * occupancy[l] / capacity;
                let b = benefit[i * l_count + l];
                mass[i * l_count + l] = w;
                total_mass += w;
                weighted_sum += w * b;
                group_mass[g] += w;
                group_sum[g] += w * b;
            }
        }
        if weighted_sum == 0.0 || !(total_mass > 0.0) {
            return Err(Error::Domain("expected mean benefit is zero".into()));
        }
        let mean = weighted_sum / total_mass;
        let fractional = self.alpha.fract() != 0.0;
        let mut power_sum = 0.0;
        for (w, b) in mass.iter().zip(&benefit) {
            if *w > 0.0 {
                if fractional && *b <= 0.0 {
                    return Err(Error::Domain(format!(
                        "non-positive benefit {b} with fractional alpha {}",
                        self.alpha
                    )));
                }
                power_sum += w * b.powf(self.alpha);
            }
        }
        let alpha = self.alpha;
        let inequality = (power_sum / (total_mass * mean.powf(alpha)) - 1.0) / (alpha * (alpha - 1.0));
        Ok(Forward {
            benefit,
            mean_benefit_i,
            occupancy,
            capacity,
            gamma: marginals.gamma,
            p: marginals.p,
            mass,
            total_mass,
            weighted_sum,
            power_sum,
            group_mass,
            group_sum,
            inequality,
        })
    }

    fn group_means(&self, fw: &Forward) -> Vec<Option<f64>> {
        fw.group_mass
            .iter()
            .zip(&fw.group_sum)
            .map(|(&m, &s)| (m > 0.0).then(|| s / m))
            .collect()
    }

    /// Penalty value and `∂φ/∂Δ_g` per group (before λ).
    fn penalty_terms(&self, means: &[Option<f64>]) -> (f64, Vec<f64>) {
        let mut total = 0.0;
        let mut slopes = vec![0.0; means.len()];
        for (g, dir) in self.directions.iter().enumerate() {
            let (Some(now), Some(base)) = (means[g], self.base_group_means[g]) else {
                continue;
            };
            let change = now - base;
            let tau = self.tau;
            match dir {
                Direction::Increase if change + tau < 0.0 => {
                    total += -(change + tau);
                    slopes[g] = -1.0;
                }
                Direction::Decrease if change - tau > 0.0 => {
                    total += change - tau;
                    slopes[g] = 1.0;
                }
                Direction::Fixed if change.abs() - tau > 0.0 => {
                    total += change.abs() - tau;
                    slopes[g] = change.signum();
                }
                _ => {}
            }
        }
        (total, slopes)
    }

    pub fn evaluate(&self, delta: &DeltaGrid) -> Result<SoftEval> {
        let fw = self.forward(delta)?;
        let group_means = self.group_means(&fw);
        let (penalty, _) = self.penalty_terms(&group_means);
        Ok(SoftEval {
            objective: fw.inequality + self.lambda * penalty,
            inequality: fw.inequality,
            penalty,
            mean_benefit: fw.weighted_sum / fw.total_mass,
            group_means,
        })
    }

    /// Soft inequality only (no penalty).
    pub fn inequality(&self, delta: &DeltaGrid) -> Result<f64> {
        Ok(self.forward(delta)?.inequality)
    }

    /// Between/within decomposition of the soft benefit distribution.
    pub fn report(&self, delta: &DeltaGrid) -> Result<InequalityReport> {
        let fw = self.forward(delta)?;
        let l_count = self.n_res;
        let labeled = (0..self.offset.len()).flat_map(|i| {
            let g = self.group_ids[self.group_of[i]].as_str();
            let fw = &fw;
            (0..l_count).filter_map(move |l| {
                let w = fw.mass[i * l_count + l];
                (w > 0.0).then(|| (g, fw.benefit[i * l_count + l], w))
            })
        });
        decompose_weighted(labeled, self.alpha)
    }

    /// `∂m/∂δ` for every cell, by a reverse pass through the forward chain.
    #[allow(clippy::needless_range_loop)]
    pub fn gradient(&self, delta: &DeltaGrid) -> Result<Vec<f64>> {
        let fw = self.forward(delta)?;
        let (n, l_count, a_count) = (self.offset.len(), self.n_res, self.n_amenity());
        let alpha = self.alpha;
        let norm = 1.0 / (alpha * (alpha - 1.0));
        let (w_tot, m_tot, s_tot) = (fw.total_mass, fw.weighted_sum, fw.power_sum);
        // GE = norm · (S W^{α-1} M^{-α} - 1); q = S W^{α-1} M^{-α}
        let q = s_tot * w_tot.powf(alpha - 1.0) / m_tot.powf(alpha);

        let means = self.group_means(&fw);
        let (_, slopes) = self.penalty_terms(&means);
        let hinge: Vec<f64> = slopes.iter().map(|s| self.lambda * s).collect();

        // adjoints of mass and benefit
        let mut g_mass = vec![0.0; n * l_count];
        let mut g_benefit = vec![0.0; n * l_count];
        for i in 0..n {
            if fw.p[i] == 0.0 {
                continue;
            }
            let g = self.group_of[i];
            let (h, w_g) = (hinge[g], fw.group_mass[g]);
            let mean_g = means[g].unwrap_or(0.0);
            for l in 0..l_count {
                let idx = i * l_count + l;
                let (w, b) = (fw.mass[idx], fw.benefit[idx]);
                let b_pow = b.powf(alpha);
                let mut gw = norm * q * (b_pow / s_tot + (alpha - 1.0) / w_tot - alpha * b / m_tot);
                let mut gb = norm * q * alpha * w * (b.powf(alpha - 1.0) / s_tot - 1.0 / m_tot);
                if h != 0.0 && w_g > 0.0 {
                    gw += h * (b - mean_g) / w_g;
                    gb += h * w / w_g;
                }
                g_mass[idx] = gw;
                g_benefit[idx] = gb;
            }
        }

        // mass_{il} = p_i o_l / C
        let cap = fw.capacity;
        let mut g_p = vec![0.0; n];
        let mut g_occ = vec![0.0; l_count];
        let mut g_cap = 0.0;
        for i in 0..n {
            if fw.p[i] == 0.0 {
                continue;
            }
            for l in 0..l_count {
                let idx = i * l_count + l;
                g_p[i] += g_mass[idx] * fw.occupancy[l] / cap;
                g_occ[l] += g_mass[idx] * fw.p[i] / cap;
                g_cap -= g_mass[idx] * fw.mass[idx] / cap;
            }
        }

        // p_i = tanh(γ b̄_i); γ implicit in Σ p_i = C
        let mut g_mean_i = vec![0.0; n];
        let mut g_gamma = 0.0;
        let mut denom = 0.0;
        for i in 0..n {
            if fw.mean_benefit_i[i] > 0.0 {
                let sech2 = 1.0 - fw.p[i] * fw.p[i];
                g_gamma += g_p[i] * sech2 * fw.mean_benefit_i[i];
                g_mean_i[i] += g_p[i] * sech2 * fw.gamma;
                denom += sech2 * fw.mean_benefit_i[i];
            }
        }
        if denom > 0.0 {
            g_cap += g_gamma / denom;
            for i in 0..n {
                if fw.mean_benefit_i[i] > 0.0 {
                    let sech2 = 1.0 - fw.p[i] * fw.p[i];
                    g_mean_i[i] -= g_gamma * fw.gamma * sech2 / denom;
                }
            }
        }
        for g in &mut g_occ {
            *g += g_cap;
        }

        // b̄_i = mean_l b_{il};  b_{il} = Σ_a pref_{ia} access_{la} - offset_i
        let mut g_access = vec![0.0; l_count * a_count];
        for i in 0..n {
            let pref = &self.pref[i * a_count..(i + 1) * a_count];
            for l in 0..l_count {
                let gb = g_benefit[i * l_count + l] + g_mean_i[i] / l_count as f64;
                if gb == 0.0 {
                    continue;
                }
                for (a, p) in pref.iter().enumerate() {
                    g_access[l * a_count + a] += gb * p;
                }
            }
        }

        let t = self.types.len();
        let mut grad = vec![0.0; self.blocks.len() * t];
        for (a, &c) in self.amenity_cols.iter().enumerate() {
            for k in 0..self.blocks.len() {
                let row = &self.kernel[a][k * l_count..(k + 1) * l_count];
                grad[k * t + c] = row.iter().enumerate().map(|(l, w)| w * g_access[l * a_count + a]).sum();
            }
        }
        if let Some(c) = self.residential_col {
            for l in 0..l_count {
                let Some(k) = self.res_block[l] else { continue };
                let area = self.base_res_area[l] + self.res_share[l] * delta.get(k, c);
                if area > 0.0 {
                    grad[k * t + c] += g_occ[l] * self.res_share[l] / self.area_per_resident;
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
impl SoftModel {
    pub(crate) fn penalty_for_test(&self, means: &[Option<f64>]) -> (f64, Vec<f64>) {
        self.penalty_terms(means)
    }
}
