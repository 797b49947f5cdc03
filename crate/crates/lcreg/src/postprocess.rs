//! Everything downstream of raw traces: label-switching correction with
//! baseline re-referencing, minimum-VI partition estimates and credible
//! balls, post-hoc item-probability estimates, inclusion probabilities,
//! HDIs, and the adjusted Rand index.
//!
//! Variation of information is computed in log base 2 throughout; comparison
//! logic (ball containment) is base-invariant but reported radii are not.

use crate::error::{Error, Result};
use crate::model::{CategoricalDataset, PriorConfig};
use crate::trace::{ChainTrace, ModelKind};
use nalgebra::DMatrix;
use serde::Serialize;
use std::collections::HashMap;

const LOG_FLOOR: f64 = 1e-300;

/// A relabelled chain plus the per-iteration permutations that produced it.
///
/// `permutations[t * G + slot]` holds the original class index stored in
/// `slot` after relabelling iteration t.
#[derive(Clone, Debug)]
pub struct RelabelledTrace {
    pub permutations: Vec<usize>,
    pub trace: ChainTrace,
    pub converged: bool,
    pub outer_iterations: usize,
}

/// Stephens' assignment relabelling: alternate between averaging the
/// permuted classification probabilities into a reference Q and solving a
/// per-iteration assignment problem on the KL cost against Q, until the
/// permutations stabilize (at most 100 outer iterations, then warn and keep
/// the best found). Class-indexed trace components are permuted and beta is
/// re-referenced to the baseline column.
pub fn stephens_relabel(trace: &ChainTrace) -> Result<RelabelledTrace> {
    let g_total = trace.n_classes;
    let n = trace.n_obs;
    let t_total = trace.n_kept;
    if trace.class_probs.len() != t_total * n * g_total {
        return Err(Error::Config(
            "trace lacks classification probabilities; recompute them first".into(),
        ));
    }
    let mut perms: Vec<usize> = (0..t_total).flat_map(|_| 0..g_total).collect();
    let mut converged = false;
    let mut outer = 0;
    let mut cost = vec![0.0; g_total * g_total];
    while outer < 100 {
        outer += 1;
        // Reference Q: average of permuted probability matrices.
        let mut q = vec![0.0; n * g_total];
        for t in 0..t_total {
            let p = trace.class_probs_at(t);
            let perm = &perms[t * g_total..(t + 1) * g_total];
            for i in 0..n {
                for (slot, &old) in perm.iter().enumerate() {
                    q[i * g_total + slot] += p[i * g_total + old];
                }
            }
        }
        let scale = 1.0 / t_total as f64;
        let log_q: Vec<f64> = q.iter().map(|v| (v * scale).max(LOG_FLOOR).ln()).collect();

        let mut changed = false;
        for t in 0..t_total {
            let p = trace.class_probs_at(t);
            // cost[slot][old] = sum_i p_i,old (ln p_i,old - ln q_i,slot)
            cost.fill(0.0);
            for i in 0..n {
                for old in 0..g_total {
                    let pio = p[i * g_total + old];
                    if pio > 0.0 {
                        let lp = pio.max(LOG_FLOOR).ln();
                        for slot in 0..g_total {
                            cost[slot * g_total + old] += pio * (lp - log_q[i * g_total + slot]);
                        }
                    }
                }
            }
            let assignment = min_cost_assignment(&cost, g_total);
            let current = &mut perms[t * g_total..(t + 1) * g_total];
            if current != assignment.as_slice() {
                current.copy_from_slice(&assignment);
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("relabelling did not stabilize after 100 outer iterations");
    }
    let relabelled = apply_permutations(trace, &perms)?;
    Ok(RelabelledTrace {
        permutations: perms,
        trace: relabelled,
        converged,
        outer_iterations: outer,
    })
}

/// Exact minimum-cost assignment over slots x originals (subset DP).
/// Ties resolve toward the lexicographically first assignment.
fn min_cost_assignment(cost: &[f64], g: usize) -> Vec<usize> {
    let full = 1usize << g;
    let mut dp = vec![f64::INFINITY; full];
    let mut parent = vec![usize::MAX; full];
    dp[0] = 0.0;
    for mask in 0..full {
        if dp[mask].is_infinite() {
            continue;
        }
        let slot = mask.count_ones() as usize;
        if slot == g {
            continue;
        }
        for old in 0..g {
            let bit = 1 << old;
            if mask & bit != 0 {
                continue;
            }
            let next = mask | bit;
            let cand = dp[mask] + cost[slot * g + old];
            if cand < dp[next] {
                dp[next] = cand;
                parent[next] = old;
            }
        }
    }
    let mut perm = vec![0usize; g];
    let mut mask = full - 1;
    while mask != 0 {
        let old = parent[mask];
        let slot = mask.count_ones() as usize - 1;
        perm[slot] = old;
        mask &= !(1 << old);
    }
    perm
}

/// Apply per-iteration class permutations to every class-indexed trace
/// component and re-reference beta to the baseline column.
pub fn apply_permutations(trace: &ChainTrace, perms: &[usize]) -> Result<ChainTrace> {
    let g_total = trace.n_classes;
    let n = trace.n_obs;
    if perms.len() != trace.n_kept * g_total {
        return Err(Error::Dimension(format!(
            "{} permutation entries for {} iterations x {} classes",
            perms.len(),
            trace.n_kept,
            g_total
        )));
    }
    let mut out = trace.clone();
    let coef = trace.coef_count();
    let total_levels: usize = trace.levels.iter().sum();
    for t in 0..trace.n_kept {
        let perm = &perms[t * g_total..(t + 1) * g_total];
        let mut inv = vec![0usize; g_total];
        for (slot, &old) in perm.iter().enumerate() {
            inv[old] = slot;
        }
        for i in 0..n {
            let old = trace.labels[t * n + i] as usize;
            out.labels[t * n + i] = inv[old] as u16;
        }
        if !trace.class_probs.is_empty() {
            for i in 0..n {
                for slot in 0..g_total {
                    out.class_probs[t * n * g_total + i * g_total + slot] =
                        trace.class_probs[t * n * g_total + i * g_total + perm[slot]];
                }
            }
        }
        if trace.model == ModelKind::Lcr {
            let base = t * coef * g_total;
            for r in 0..coef {
                for slot in 0..g_total {
                    out.beta[base + r * g_total + slot] =
                        trace.beta[base + r * g_total + perm[slot]];
                }
                // Re-reference: subtract the relabelled baseline column.
                let baseline = out.beta[base + r * g_total + g_total - 1];
                for slot in 0..g_total {
                    out.beta[base + r * g_total + slot] -= baseline;
                }
            }
        }
        if !trace.theta.is_empty() {
            let base = t * g_total * total_levels;
            for slot in 0..g_total {
                for v in 0..total_levels {
                    out.theta[base + slot * total_levels + v] =
                        trace.theta[base + perm[slot] * total_levels + v];
                }
            }
        }
    }
    Ok(out)
}

/// Shift a coefficient sample so the baseline column is exactly zero:
/// beta'_g = beta_g - beta_G. Mixing probabilities are unchanged.
pub fn rereference_beta(beta: &DMatrix<f64>) -> DMatrix<f64> {
    let g_total = beta.ncols();
    let baseline = beta.column(g_total - 1).clone_owned();
    let mut out = beta.clone();
    for g in 0..g_total {
        let col = beta.column(g) - &baseline;
        out.set_column(g, &col);
    }
    out
}

/// Partition point estimate with its posterior expected VI and (optionally
/// attached) credible ball.
#[derive(Clone, Debug, Serialize)]
pub struct PartitionEstimate {
    /// 0-based class assignment per observation.
    pub labels: Vec<usize>,
    /// Exact posterior expected VI of the estimate over the trace draws.
    pub expected_vi: f64,
    pub credible_ball: Option<CredibleBall>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CredibleBall {
    /// Smallest radius covering >= `level` of the trace draws under VI.
    pub radius: f64,
    pub level: f64,
    /// Within-ball draws at maximal VI distance.
    pub horizontal: Vec<Vec<usize>>,
    /// Within-ball draws with the fewest clusters, at maximal distance.
    pub vertical_upper: Vec<Vec<usize>>,
    /// Within-ball draws with the most clusters, at maximal distance.
    pub vertical_lower: Vec<Vec<usize>>,
}

/// Posterior similarity (co-clustering) matrix from a label trace.
pub fn similarity_matrix(labels: &[u16], n_kept: usize, n_obs: usize) -> Vec<f64> {
    let mut psm = vec![0.0; n_obs * n_obs];
    for t in 0..n_kept {
        let row = &labels[t * n_obs..(t + 1) * n_obs];
        for i in 0..n_obs {
            for j in (i + 1)..n_obs {
                if row[i] == row[j] {
                    psm[i * n_obs + j] += 1.0;
                }
            }
        }
    }
    let scale = 1.0 / n_kept as f64;
    for i in 0..n_obs {
        psm[i * n_obs + i] = 1.0;
        for j in (i + 1)..n_obs {
            let v = psm[i * n_obs + j] * scale;
            psm[i * n_obs + j] = v;
            psm[j * n_obs + i] = v;
        }
    }
    psm
}

/// Jensen lower bound of the posterior expected VI (up to a constant not
/// depending on the candidate): (1/n) sum_i [log2 n_i(c) - 2 log2 sum_{j in
/// cluster(i)} psm_ij].
pub fn vi_lower_bound(labels: &[usize], psm: &[f64], n_obs: usize) -> f64 {
    let mut clusters: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, &c) in labels.iter().enumerate() {
        clusters.entry(c).or_default().push(i);
    }
    let mut total = 0.0;
    for members in clusters.values() {
        let size = members.len() as f64;
        for &i in members {
            let mut r = 0.0;
            for &j in members {
                r += psm[i * n_obs + j];
            }
            total += size.log2() - 2.0 * r.max(LOG_FLOOR).log2();
        }
    }
    total / n_obs as f64
}

struct GreedyState<'a> {
    psm: &'a [f64],
    n_obs: usize,
    labels: Vec<usize>,
    members: Vec<Vec<usize>>, // cluster id -> member list (empty = free slot)
    rowsums: Vec<f64>,        // r_i = sum_{j in cluster(i)} psm_ij
}

impl<'a> GreedyState<'a> {
    fn new(labels: &[usize], psm: &'a [f64], n_obs: usize) -> Self {
        let max_c = labels.iter().copied().max().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); max_c];
        for (i, &c) in labels.iter().enumerate() {
            members[c].push(i);
        }
        let mut rowsums = vec![0.0; n_obs];
        for m in &members {
            for &i in m {
                rowsums[i] = m.iter().map(|&j| psm[i * n_obs + j]).sum();
            }
        }
        GreedyState {
            psm,
            n_obs,
            labels: labels.to_vec(),
            members,
            rowsums,
        }
    }

    fn objective(&self) -> f64 {
        let mut total = 0.0;
        for m in &self.members {
            let size = m.len() as f64;
            for &i in m {
                total += size.log2() - 2.0 * self.rowsums[i].max(LOG_FLOOR).log2();
            }
        }
        total / self.n_obs as f64
    }

    /// Objective change from moving observation i to cluster `target`
    /// (usize::MAX = fresh singleton).
    fn move_delta(&self, i: usize, target: usize) -> f64 {
        let source = self.labels[i];
        let a = &self.members[source];
        let size_a = a.len() as f64;
        let mut delta = 0.0;
        // Members left behind in the source cluster.
        for &j in a {
            if j == i {
                continue;
            }
            let p = self.psm[i * self.n_obs + j];
            delta += (size_a - 1.0).log2() - size_a.log2()
                - 2.0
                    * ((self.rowsums[j] - p).max(LOG_FLOOR).log2()
                        - self.rowsums[j].max(LOG_FLOOR).log2());
        }
        // The moved observation itself.
        let (size_b, r_new) = if target == usize::MAX {
            (0.0, self.psm[i * self.n_obs + i])
        } else {
            let b = &self.members[target];
            let r: f64 = b.iter().map(|&j| self.psm[i * self.n_obs + j]).sum();
            (b.len() as f64, r + self.psm[i * self.n_obs + i])
        };
        delta += (size_b + 1.0).log2() - 2.0 * r_new.max(LOG_FLOOR).log2()
            - (size_a.log2() - 2.0 * self.rowsums[i].max(LOG_FLOOR).log2());
        // Members of the target cluster.
        if target != usize::MAX {
            for &j in &self.members[target] {
                let p = self.psm[i * self.n_obs + j];
                delta += (size_b + 1.0).log2() - size_b.log2()
                    - 2.0
                        * ((self.rowsums[j] + p).max(LOG_FLOOR).log2()
                            - self.rowsums[j].max(LOG_FLOOR).log2());
            }
        }
        delta / self.n_obs as f64
    }

    /// Objective change from merging clusters a and b.
    fn merge_delta(&self, a: usize, b: usize) -> f64 {
        let ma = &self.members[a];
        let mb = &self.members[b];
        let new_size = (ma.len() + mb.len()) as f64;
        let mut delta = 0.0;
        for (own, other) in [(ma, mb), (mb, ma)] {
            let size = own.len() as f64;
            for &i in own.iter() {
                let cross: f64 = other.iter().map(|&j| self.psm[i * self.n_obs + j]).sum();
                delta += new_size.log2() - size.log2()
                    - 2.0
                        * ((self.rowsums[i] + cross).max(LOG_FLOOR).log2()
                            - self.rowsums[i].max(LOG_FLOOR).log2());
            }
        }
        delta / self.n_obs as f64
    }

    fn apply_move(&mut self, i: usize, target: usize) {
        let source = self.labels[i];
        let target = if target == usize::MAX {
            // Reuse an empty slot if available, otherwise extend.
            match self.members.iter().position(|m| m.is_empty()) {
                Some(slot) => slot,
                None => {
                    self.members.push(Vec::new());
                    self.members.len() - 1
                }
            }
        } else {
            target
        };
        self.members[source].retain(|&j| j != i);
        for &j in &self.members[source] {
            self.rowsums[j] -= self.psm[i * self.n_obs + j];
        }
        let mut r = self.psm[i * self.n_obs + i];
        for &j in &self.members[target] {
            self.rowsums[j] += self.psm[i * self.n_obs + j];
            r += self.psm[i * self.n_obs + j];
        }
        self.rowsums[i] = r;
        self.members[target].push(i);
        self.labels[i] = target;
    }

    fn apply_merge(&mut self, a: usize, b: usize) {
        let mb = std::mem::take(&mut self.members[b]);
        for &i in &mb {
            let cross: f64 = self.members[a]
                .iter()
                .map(|&j| self.psm[i * self.n_obs + j])
                .sum();
            self.rowsums[i] += cross;
            self.labels[i] = a;
        }
        for &j in &self.members[a] {
            let cross: f64 = mb.iter().map(|&i| self.psm[i * self.n_obs + j]).sum();
            self.rowsums[j] += cross;
        }
        self.members[a].extend(mb);
    }

    /// Steepest-descent pass over all single-observation moves and cluster
    /// merges; returns false when no strict improvement exists.
    fn improve(&mut self) -> bool {
        let eps = 1e-12;
        let mut best_delta = -eps;
        enum Step {
            Move(usize, usize),
            Merge(usize, usize),
        }
        let mut best: Option<Step> = None;
        let occupied: Vec<usize> = (0..self.members.len())
            .filter(|&c| !self.members[c].is_empty())
            .collect();
        for i in 0..self.n_obs {
            let current = self.labels[i];
            for &c in &occupied {
                if c != current {
                    let d = self.move_delta(i, c);
                    if d < best_delta {
                        best_delta = d;
                        best = Some(Step::Move(i, c));
                    }
                }
            }
            if self.members[current].len() > 1 {
                let d = self.move_delta(i, usize::MAX);
                if d < best_delta {
                    best_delta = d;
                    best = Some(Step::Move(i, usize::MAX));
                }
            }
        }
        for (ai, &a) in occupied.iter().enumerate() {
            for &b in &occupied[(ai + 1)..] {
                let d = self.merge_delta(a, b);
                if d < best_delta {
                    best_delta = d;
                    best = Some(Step::Merge(a, b));
                }
            }
        }
        match best {
            Some(Step::Move(i, c)) => {
                self.apply_move(i, c);
                true
            }
            Some(Step::Merge(a, b)) => {
                self.apply_merge(a, b);
                true
            }
            None => false,
        }
    }

    fn canonical_labels(&self) -> Vec<usize> {
        canonicalize(&self.labels)
    }
}

/// Relabel a partition to first-appearance order (canonical form).
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut next = 0;
    labels
        .iter()
        .map(|&c| {
            *map.entry(c).or_insert_with(|| {
                let v = next;
                next += 1;
                v
            })
        })
        .collect()
}

/// Greedy minimum-VI point estimate: start from the best stored draws under
/// the VI lower bound and descend over move/merge neighborhoods. Ties break
/// toward the first candidate encountered, so the result is deterministic.
pub fn minvi_point_estimate(
    labels: &[u16],
    n_kept: usize,
    n_obs: usize,
) -> Result<PartitionEstimate> {
    if n_kept < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: n_kept,
        });
    }
    let psm = similarity_matrix(labels, n_kept, n_obs);

    // Score every distinct draw; keep the best few as greedy starts.
    let mut seen: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut order: Vec<Vec<usize>> = Vec::new();
    for t in 0..n_kept {
        let draw: Vec<usize> = labels[t * n_obs..(t + 1) * n_obs]
            .iter()
            .map(|&z| z as usize)
            .collect();
        let canon = canonicalize(&draw);
        if !seen.contains_key(&canon) {
            let obj = vi_lower_bound(&canon, &psm, n_obs);
            seen.insert(canon.clone(), obj);
            order.push(canon);
        }
    }
    let mut starts: Vec<(f64, usize)> = order
        .iter()
        .enumerate()
        .map(|(idx, c)| (seen[c], idx))
        .collect();
    starts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_starts = starts.len().min(8);

    let mut best_labels: Option<Vec<usize>> = None;
    let mut best_obj = f64::INFINITY;
    for &(_, idx) in starts.iter().take(n_starts) {
        let mut state = GreedyState::new(&order[idx], &psm, n_obs);
        while state.improve() {}
        let obj = state.objective();
        if obj < best_obj - 1e-12 {
            best_obj = obj;
            best_labels = Some(state.canonical_labels());
        }
    }
    let estimate = best_labels.expect("at least one start");
    let expected_vi = expected_vi_over_draws(&estimate, labels, n_kept, n_obs);
    Ok(PartitionEstimate {
        labels: estimate,
        expected_vi,
        credible_ball: None,
    })
}

fn expected_vi_over_draws(estimate: &[usize], labels: &[u16], n_kept: usize, n_obs: usize) -> f64 {
    let mut total = 0.0;
    let mut draw = vec![0usize; n_obs];
    for t in 0..n_kept {
        for (d, &z) in draw.iter_mut().zip(&labels[t * n_obs..(t + 1) * n_obs]) {
            *d = z as usize;
        }
        total += variation_of_information(estimate, &draw);
    }
    total / n_kept as f64
}

/// VI credible ball around an estimate: the smallest radius covering at
/// least `level` of the trace draws, with horizontal and vertical bounds.
pub fn credible_ball(
    labels: &[u16],
    n_kept: usize,
    n_obs: usize,
    estimate: &[usize],
    level: f64,
) -> Result<CredibleBall> {
    if n_kept == 0 {
        return Err(Error::InsufficientSamples { need: 1, got: 0 });
    }
    if !(0.0 < level && level <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "credible level must lie in (0, 1], got {level}"
        )));
    }
    let draws: Vec<Vec<usize>> = (0..n_kept)
        .map(|t| {
            labels[t * n_obs..(t + 1) * n_obs]
                .iter()
                .map(|&z| z as usize)
                .collect()
        })
        .collect();
    let dists: Vec<f64> = draws
        .iter()
        .map(|d| variation_of_information(estimate, d))
        .collect();
    let mut sorted = dists.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let need = ((level * n_kept as f64).ceil() as usize).clamp(1, n_kept);
    let radius = sorted[need - 1];

    let in_ball: Vec<usize> = (0..n_kept)
        .filter(|&t| dists[t] <= radius + 1e-12)
        .collect();
    let max_dist = in_ball
        .iter()
        .map(|&t| dists[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let n_clusters = |labels: &[usize]| -> usize {
        let mut set: Vec<usize> = labels.to_vec();
        set.sort_unstable();
        set.dedup();
        set.len()
    };
    let collect_distinct = |ts: Vec<usize>| -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = Vec::new();
        for t in ts {
            let canon = canonicalize(&draws[t]);
            if !out.contains(&canon) {
                out.push(canon);
            }
        }
        out
    };
    let horizontal = collect_distinct(
        in_ball
            .iter()
            .copied()
            .filter(|&t| dists[t] >= max_dist - 1e-12)
            .collect(),
    );
    let min_k = in_ball.iter().map(|&t| n_clusters(&draws[t])).min().unwrap();
    let max_k = in_ball.iter().map(|&t| n_clusters(&draws[t])).max().unwrap();
    let bound_for = |k: usize| -> Vec<Vec<usize>> {
        let candidates: Vec<usize> = in_ball
            .iter()
            .copied()
            .filter(|&t| n_clusters(&draws[t]) == k)
            .collect();
        let far = candidates
            .iter()
            .map(|&t| dists[t])
            .fold(f64::NEG_INFINITY, f64::max);
        collect_distinct(
            candidates
                .into_iter()
                .filter(|&t| dists[t] >= far - 1e-12)
                .collect(),
        )
    };
    Ok(CredibleBall {
        radius,
        level,
        horizontal,
        vertical_upper: bound_for(min_k),
        vertical_lower: bound_for(max_k),
    })
}

/// Variation of information between two partitions, log base 2.
pub fn variation_of_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "partitions must align");
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let h = |counts: &HashMap<usize, f64>| -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.log2()
            })
            .sum()
    };
    let mut mutual = 0.0;
    for (&(x, y), &c) in &joint {
        let p = c / n;
        mutual += p * (p * n * n / (ca[&x] * cb[&y])).log2();
    }
    (h(&ca) + h(&cb) - 2.0 * mutual).max(0.0)
}

/// Post-hoc Dirichlet-posterior estimates of the item probabilities from a
/// (relabelled) trace: per-iteration mean (s_gjk + alpha)/(s_g + A_j), with
/// the across-iteration sd combined by the law of total variance.
pub struct PosthocTheta {
    pub n_classes: usize,
    pub levels: Vec<usize>,
    /// G x total_levels posterior means.
    pub mean: Vec<f64>,
    /// G x total_levels posterior standard deviations.
    pub sd: Vec<f64>,
}

pub fn posthoc_theta(
    trace: &ChainTrace,
    data: &CategoricalDataset,
    priors: &PriorConfig,
) -> Result<PosthocTheta> {
    let g_total = trace.n_classes;
    let total_levels = data.total_levels();
    let width = g_total * total_levels;
    let mut sum_mean = vec![0.0; width];
    let mut sum_mean_sq = vec![0.0; width];
    let mut sum_var = vec![0.0; width];
    for t in 0..trace.n_kept {
        let labels: Vec<usize> = trace.labels_at(t).iter().map(|&z| z as usize).collect();
        let counts = crate::model::compute_counts(data, &labels, g_total)?;
        for g in 0..g_total {
            let s_g = counts.class_count(g) as f64;
            for j in 0..data.n_items() {
                let alpha_j = &priors.item_concentration[j];
                let a_total: f64 = alpha_j.iter().sum();
                let denom = s_g + a_total;
                for (k, &a) in alpha_j.iter().enumerate() {
                    let idx = g * total_levels + data.offset(j) + k;
                    let m = (counts.class_item(data, g, j, k) as f64 + a) / denom;
                    let v = m * (1.0 - m) / (denom + 1.0);
                    sum_mean[idx] += m;
                    sum_mean_sq[idx] += m * m;
                    sum_var[idx] += v;
                }
            }
        }
    }
    let t_total = trace.n_kept as f64;
    let mut mean = vec![0.0; width];
    let mut sd = vec![0.0; width];
    for idx in 0..width {
        let m = sum_mean[idx] / t_total;
        let between = sum_mean_sq[idx] / t_total - m * m;
        let within = sum_var[idx] / t_total;
        mean[idx] = m;
        sd[idx] = (within + between.max(0.0)).sqrt();
    }
    Ok(PosthocTheta {
        n_classes: g_total,
        levels: data.levels().to_vec(),
        mean,
        sd,
    })
}

/// Fraction of kept iterations including each item and each predictor.
pub fn posterior_inclusion_probabilities(trace: &ChainTrace) -> (Vec<f64>, Vec<f64>) {
    let t_total = trace.n_kept.max(1) as f64;
    let mut items = vec![0.0; trace.n_items];
    for t in 0..trace.n_kept {
        for (j, &inc) in trace.item_included_at(t).iter().enumerate() {
            if inc {
                items[j] += 1.0;
            }
        }
    }
    for v in items.iter_mut() {
        *v /= t_total;
    }
    let mut preds = vec![0.0; trace.n_predictors];
    if trace.n_predictors > 0 && !trace.pred_included.is_empty() {
        for t in 0..trace.n_kept {
            for (l, &inc) in trace.pred_included_at(t).iter().enumerate() {
                if inc {
                    preds[l] += 1.0;
                }
            }
        }
        for v in preds.iter_mut() {
            *v /= t_total;
        }
    }
    (items, preds)
}

/// Shortest contiguous interval of the empirical distribution containing
/// ceil(mass * n) sorted samples. Needs at least 20 samples.
pub fn hdi(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.len() < 20 {
        return Err(Error::InsufficientSamples {
            need: 20,
            got: samples.len(),
        });
    }
    if !(0.0 < mass && mass <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "HDI mass must lie in (0, 1], got {mass}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let window = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let mut best = (sorted[0], sorted[window - 1]);
    let mut best_width = best.1 - best.0;
    for start in 1..=(n - window) {
        let width = sorted[start + window - 1] - sorted[start];
        if width < best_width {
            best_width = width;
            best = (sorted[start], sorted[start + window - 1]);
        }
    }
    Ok(best)
}

/// Adjusted Rand index from the pair-counting contingency formula.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "label vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut ca: HashMap<usize, f64> = HashMap::new();
    let mut cb: HashMap<usize, f64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0;
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_joint: f64 = joint.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = ca.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cb.values().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(n);
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        // Both partitions are single-cluster (or degenerate): agreement is
        // perfect by convention.
        return Ok(1.0);
    }
    Ok((sum_joint - expected) / (max_index - expected))
}

/// Per-class posterior fractions of observations: mean and sd across the
/// kept iterations (the pi_g summary).
pub fn class_proportions(trace: &ChainTrace) -> Vec<(f64, f64)> {
    let g_total = trace.n_classes;
    let n = trace.n_obs as f64;
    let mut sums = vec![0.0; g_total];
    let mut sums_sq = vec![0.0; g_total];
    for t in 0..trace.n_kept {
        let mut counts = vec![0.0; g_total];
        for &z in trace.labels_at(t) {
            counts[z as usize] += 1.0;
        }
        for g in 0..g_total {
            let p = counts[g] / n;
            sums[g] += p;
            sums_sq[g] += p * p;
        }
    }
    let t_total = trace.n_kept.max(1) as f64;
    (0..g_total)
        .map(|g| {
            let mean = sums[g] / t_total;
            let var = (sums_sq[g] / t_total - mean * mean).max(0.0);
            (mean, var.sqrt())
        })
        .collect()
}
