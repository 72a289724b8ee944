//! MAP inference for hinge-loss energies over the unit box, plus a
//! brute-force grid oracle for small instances.
//!
//! The solver is projected subgradient descent with step `step0 / sqrt(t)`
//! and best-iterate tracking. Because the energy is convex piecewise-linear,
//! the best iterate is refined afterwards by exact coordinate-wise line
//! minimization (the 1-D restriction is piecewise linear, so its minimum sits
//! on a breakpoint or a box edge). The refinement only ever improves the
//! objective and makes restarts agree to tight tolerances.

use thiserror::Error;

use crate::ground::{Entry, GroundPotential, PotentialSet};

#[derive(Debug, Error, PartialEq)]
pub enum InferError {
    #[error("interpretation has {got} entries, expected {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("brute force supports at most {max} free variables, got {got}")]
    DimensionTooLarge { got: usize, max: usize },
    #[error("resolution {0} outside (0, 0.5]")]
    BadResolution(f64),
    #[error("hard constraints are infeasible for variable {index}: [{lo}, {hi}]")]
    InfeasibleHardConstraint { index: usize, lo: f64, hi: f64 },
    #[error("hard constraint with {n_free} free literals is unsupported (only single-variable clamps)")]
    UnsupportedHardConstraint { n_free: usize },
}

/// A point in `[0,1]^n`: soft truth values for the free ground atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpretation {
    pub values: Vec<f64>,
}

impl Interpretation {
    pub fn constant(n: usize, v: f64) -> Self {
        Interpretation {
            values: vec![v; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub step0: f64,
    /// `None` starts from the box center, `Some(seed)` from a seeded uniform
    /// sample (used by restart tests).
    pub seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iters: 20_000,
            tol: 1e-7,
            step0: 1.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub objective: f64,
    /// Best-so-far objective per iteration; non-increasing.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Total energy: weighted sum of distances to satisfaction. Hard (infinite
/// weight) potentials contribute 0 when satisfied and +inf otherwise.
pub fn energy(ps: &PotentialSet, y: &Interpretation) -> Result<f64, InferError> {
    if y.values.len() != ps.n_free() {
        return Err(InferError::DimensionMismatch {
            got: y.values.len(),
            want: ps.n_free(),
        });
    }
    let mut total = 0.0;
    for p in &ps.potentials {
        let d = raw_distance(p, &y.values).max(0.0);
        if p.weight.is_infinite() {
            if d > 0.0 {
                return Ok(f64::INFINITY);
            }
        } else {
            total += p.weight * d;
        }
    }
    Ok(total)
}

#[inline]
fn raw_distance(p: &GroundPotential, y: &[f64]) -> f64 {
    let mut acc = 1.0;
    for e in &p.pos {
        acc -= match e {
            Entry::Obs(v) => *v,
            Entry::Free(i) => y[*i],
        };
    }
    for e in &p.neg {
        acc -= 1.0
            - match e {
                Entry::Obs(v) => *v,
                Entry::Free(i) => y[*i],
            };
    }
    acc
}

/// Per-variable box bounds tightened by single-variable hard constraints.
fn hard_bounds(ps: &PotentialSet) -> Result<(Vec<f64>, Vec<f64>), InferError> {
    let n = ps.n_free();
    let mut lo: Vec<f64> = vec![0.0; n];
    let mut hi: Vec<f64> = vec![1.0; n];
    for p in &ps.potentials {
        if !p.weight.is_infinite() {
            continue;
        }
        let frees = p
            .pos
            .iter()
            .chain(&p.neg)
            .filter(|e| matches!(e, Entry::Free(_)))
            .count();
        match frees {
            0 => {
                if raw_distance(p, &[]) > 1e-12 {
                    return Err(InferError::InfeasibleHardConstraint {
                        index: 0,
                        lo: 0.0,
                        hi: 0.0,
                    });
                }
            }
            1 => {
                // distance <= 0 must hold: solve for the single free slot
                let mut rest = 1.0;
                let mut idx = usize::MAX;
                let mut in_pos = true;
                for e in &p.pos {
                    match e {
                        Entry::Obs(v) => rest -= v,
                        Entry::Free(i) => {
                            idx = *i;
                            in_pos = true;
                        }
                    }
                }
                for e in &p.neg {
                    match e {
                        Entry::Obs(v) => rest -= 1.0 - v,
                        Entry::Free(i) => {
                            idx = *i;
                            in_pos = false;
                        }
                    }
                }
                if in_pos {
                    // rest - y <= 0  =>  y >= rest
                    lo[idx] = lo[idx].max(rest.clamp(0.0, 1.0));
                } else {
                    // rest - (1 - y) <= 0  =>  y <= 1 - rest
                    hi[idx] = hi[idx].min((1.0 - rest).clamp(0.0, 1.0));
                }
                if lo[idx] > hi[idx] + 1e-12 {
                    return Err(InferError::InfeasibleHardConstraint {
                        index: idx,
                        lo: lo[idx],
                        hi: hi[idx],
                    });
                }
            }
            n_free => return Err(InferError::UnsupportedHardConstraint { n_free }),
        }
    }
    Ok((lo, hi))
}

fn finite_energy_and_subgrad(ps: &PotentialSet, y: &[f64], g: &mut [f64]) -> f64 {
    g.iter_mut().for_each(|x| *x = 0.0);
    let mut total = 0.0;
    for p in &ps.potentials {
        if p.weight.is_infinite() {
            continue; // enforced via bounds
        }
        let d = raw_distance(p, y);
        if d > 0.0 {
            total += p.weight * d;
            for e in &p.pos {
                if let Entry::Free(i) = e {
                    g[*i] -= p.weight;
                }
            }
            for e in &p.neg {
                if let Entry::Free(i) = e {
                    g[*i] += p.weight;
                }
            }
        }
    }
    total
}

const PATIENCE: usize = 250;
const POLISH_PASSES: usize = 64;

/// Minimize the energy over the box. Returns the best iterate found.
pub fn solve_map(
    ps: &PotentialSet,
    config: &SolverConfig,
) -> Result<(Interpretation, SolveReport), InferError> {
    use rand::{Rng, SeedableRng};

    let n = ps.n_free();
    let (lo, hi) = hard_bounds(ps)?;

    let mut y: Vec<f64> = match config.seed {
        None => vec![0.5; n],
        Some(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()
        }
    };
    for i in 0..n {
        y[i] = y[i].clamp(lo[i], hi[i]);
    }

    let mut g = vec![0.0; n];
    let mut best_y = y.clone();
    let mut best = finite_energy_and_subgrad(ps, &y, &mut g);
    let mut trace = Vec::with_capacity(config.max_iters.min(4096));
    trace.push(best);

    let mut converged = false;
    let mut window_best = best;
    let mut iterations = 0;

    for t in 1..=config.max_iters {
        iterations = t;
        let obj = finite_energy_and_subgrad(ps, &y, &mut g);
        if obj < best {
            best = obj;
            best_y.copy_from_slice(&y);
        }
        trace.push(best);
        if t % PATIENCE == 0 {
            if window_best - best < config.tol {
                converged = true;
                break;
            }
            window_best = best;
        }
        let step = config.step0 / (t as f64).sqrt();
        for i in 0..n {
            y[i] = (y[i] - step * g[i]).clamp(lo[i], hi[i]);
        }
    }

    // Exact coordinate refinement of the best iterate.
    let polished = polish(ps, &mut best_y, &lo, &hi);
    if polished < best {
        best = polished;
        trace.push(best);
    }

    Ok((
        Interpretation { values: best_y },
        SolveReport {
            iterations,
            objective: best,
            trace,
            converged,
        },
    ))
}

/// Exact line minimization along a sparse direction. The restriction of the
/// energy to a line is convex piecewise linear, so evaluating every hinge
/// breakpoint plus the box limits finds the exact minimum on that line.
fn line_search(
    ps: &PotentialSet,
    touching: &[Vec<usize>],
    y: &mut [f64],
    dir: &[(usize, f64)],
    lo: &[f64],
    hi: &[f64],
) -> bool {
    // feasible t range from the box
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for &(k, dk) in dir {
        if dk > 0.0 {
            t_lo = t_lo.max((lo[k] - y[k]) / dk);
            t_hi = t_hi.min((hi[k] - y[k]) / dk);
        } else {
            t_lo = t_lo.max((hi[k] - y[k]) / dk);
            t_hi = t_hi.min((lo[k] - y[k]) / dk);
        }
    }
    if t_lo >= t_hi {
        return false;
    }

    // potentials touching any moved coordinate
    let mut pots: Vec<usize> = Vec::new();
    for &(k, _) in dir {
        pots.extend_from_slice(&touching[k]);
    }
    pots.sort_unstable();
    pots.dedup();
    if pots.is_empty() {
        return false;
    }

    let energy_at = |t: f64, y: &[f64]| -> f64 {
        let mut total = 0.0;
        for &pi in &pots {
            let p = &ps.potentials[pi];
            let mut acc = 1.0;
            for e in &p.pos {
                acc -= match e {
                    Entry::Obs(v) => *v,
                    Entry::Free(i) => {
                        let mut v = y[*i];
                        for &(k, dk) in dir {
                            if k == *i {
                                v += t * dk;
                            }
                        }
                        v
                    }
                };
            }
            for e in &p.neg {
                acc -= 1.0
                    - match e {
                        Entry::Obs(v) => *v,
                        Entry::Free(i) => {
                            let mut v = y[*i];
                            for &(k, dk) in dir {
                                if k == *i {
                                    v += t * dk;
                                }
                            }
                            v
                        }
                    };
            }
            if acc > 0.0 {
                total += p.weight * acc;
            }
        }
        total
    };

    // breakpoints: dist_p(t) = max(a_p - b_p t, 0) crosses at t = a_p / b_p
    let mut cands: Vec<f64> = vec![t_lo.max(-2.0), t_hi.min(2.0), 0.0];
    for &pi in &pots {
        let p = &ps.potentials[pi];
        let mut a = 1.0;
        let mut b = 0.0;
        for e in &p.pos {
            match e {
                Entry::Obs(v) => a -= v,
                Entry::Free(i) => {
                    a -= y[*i];
                    for &(k, dk) in dir {
                        if k == *i {
                            b += dk;
                        }
                    }
                }
            }
        }
        for e in &p.neg {
            match e {
                Entry::Obs(v) => a -= 1.0 - v,
                Entry::Free(i) => {
                    a -= 1.0 - y[*i];
                    for &(k, dk) in dir {
                        if k == *i {
                            b -= dk;
                        }
                    }
                }
            }
        }
        if b != 0.0 {
            let t = a / b;
            if t > t_lo && t < t_hi {
                cands.push(t);
            }
        }
    }

    let cur = energy_at(0.0, y);
    let mut best_t = 0.0;
    let mut best_e = cur;
    for &t in &cands {
        if !(t_lo..=t_hi).contains(&t) {
            continue;
        }
        let e = energy_at(t, y);
        if e < best_e - 1e-15 {
            best_e = e;
            best_t = t;
        }
    }
    if best_t != 0.0 {
        for &(k, dk) in dir {
            y[k] = (y[k] + best_t * dk).clamp(lo[k], hi[k]);
        }
        return true;
    }
    false
}

/// Exact descent along single coordinates plus the pair and triple
/// directions induced by clauses that couple several free variables
/// (single-coordinate descent stalls on those ridges), repeated until no
/// move improves the energy.
fn polish(ps: &PotentialSet, y: &mut [f64], lo: &[f64], hi: &[f64]) -> f64 {
    let n = y.len();
    let mut touching: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (pi, p) in ps.potentials.iter().enumerate() {
        if p.weight.is_infinite() {
            continue;
        }
        for e in p.pos.iter().chain(&p.neg) {
            if let Entry::Free(i) = e {
                if touching[*i].last() != Some(&pi) {
                    touching[*i].push(pi);
                }
            }
        }
    }
    for v in &mut touching {
        v.dedup();
    }

    // clause-induced multi-coordinate directions
    let mut seen: std::collections::BTreeSet<Vec<usize>> = std::collections::BTreeSet::new();
    let mut directions: Vec<Vec<(usize, f64)>> = Vec::new();
    for p in &ps.potentials {
        if p.weight.is_infinite() {
            continue;
        }
        let mut frees: Vec<usize> = p
            .pos
            .iter()
            .chain(&p.neg)
            .filter_map(|e| match e {
                Entry::Free(i) => Some(*i),
                Entry::Obs(_) => None,
            })
            .collect();
        frees.sort_unstable();
        frees.dedup();
        match frees.len() {
            0 | 1 => {}
            2 => {
                if seen.insert(frees.clone()) {
                    directions.push(vec![(frees[0], 1.0), (frees[1], -1.0)]);
                }
            }
            _ => {
                // pairs inside the clause, plus the sign patterns over the
                // first three variables
                for a in 0..frees.len() {
                    for b in (a + 1)..frees.len() {
                        let key = vec![frees[a], frees[b]];
                        if seen.insert(key) {
                            directions.push(vec![(frees[a], 1.0), (frees[b], -1.0)]);
                        }
                    }
                }
                if frees.len() == 3 {
                    let mut key = frees.clone();
                    key.push(usize::MAX);
                    if seen.insert(key) {
                        for signs in [[1.0, 1.0, 1.0], [1.0, 1.0, -1.0], [1.0, -1.0, 1.0], [1.0, -1.0, -1.0]]
                        {
                            directions.push(
                                frees.iter().zip(signs).map(|(&i, s)| (i, s)).collect(),
                            );
                        }
                    }
                }
            }
        }
    }

    let coord_energy = |k: usize, val: f64, y: &[f64], pots: &[usize]| -> f64 {
        let mut total = 0.0;
        for &pi in pots {
            let p = &ps.potentials[pi];
            let mut acc = 1.0;
            for e in &p.pos {
                acc -= match e {
                    Entry::Obs(v) => *v,
                    Entry::Free(i) if *i == k => val,
                    Entry::Free(i) => y[*i],
                };
            }
            for e in &p.neg {
                acc -= 1.0
                    - match e {
                        Entry::Obs(v) => *v,
                        Entry::Free(i) if *i == k => val,
                        Entry::Free(i) => y[*i],
                    };
            }
            if acc > 0.0 {
                total += p.weight * acc;
            }
        }
        total
    };

    let mut cands: Vec<f64> = Vec::new();
    for _ in 0..POLISH_PASSES {
        let mut improved = false;
        for k in 0..n {
            let pots = &touching[k];
            if pots.is_empty() {
                continue;
            }
            cands.clear();
            cands.push(lo[k]);
            cands.push(hi[k]);
            for &pi in pots {
                let p = &ps.potentials[pi];
                // dist(val) = (c - b) + (b - a) * val with a/b = pos/neg
                // occurrence counts of k; breakpoint where it crosses zero.
                let mut a = 0.0;
                let mut b = 0.0;
                let mut c = 1.0;
                for e in &p.pos {
                    match e {
                        Entry::Obs(v) => c -= v,
                        Entry::Free(i) if *i == k => a += 1.0,
                        Entry::Free(i) => c -= y[*i],
                    }
                }
                for e in &p.neg {
                    match e {
                        Entry::Obs(v) => c -= 1.0 - v,
                        Entry::Free(i) if *i == k => b += 1.0,
                        Entry::Free(i) => c -= 1.0 - y[*i],
                    }
                }
                let slope = b - a;
                if slope != 0.0 {
                    let bp = (b - c) / slope;
                    if bp > lo[k] && bp < hi[k] {
                        cands.push(bp);
                    }
                }
            }
            let cur = coord_energy(k, y[k], y, pots);
            let mut best_val = y[k];
            let mut best_e = cur;
            for &c in cands.iter() {
                let e = coord_energy(k, c, y, pots);
                if e < best_e - 1e-15 {
                    best_e = e;
                    best_val = c;
                }
            }
            if best_val != y[k] {
                y[k] = best_val;
                improved = true;
            }
        }
        for dir in &directions {
            if line_search(ps, &touching, y, dir, lo, hi) {
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }

    let mut g = vec![0.0; n];
    finite_energy_and_subgrad(ps, y, &mut g)
}

/// Exhaustive grid search over `{0, res, 2*res, ..., 1}^n`. The first grid
/// point scanned in row-major order (last variable fastest) wins ties.
pub fn brute_force_map(
    ps: &PotentialSet,
    resolution: f64,
) -> Result<(Interpretation, f64), InferError> {
    const MAX_DIM: usize = 4;
    let n = ps.n_free();
    if n > MAX_DIM {
        return Err(InferError::DimensionTooLarge { got: n, max: MAX_DIM });
    }
    if !(resolution > 0.0 && resolution <= 0.5) {
        return Err(InferError::BadResolution(resolution));
    }
    let mut grid: Vec<f64> = Vec::new();
    let mut v = 0.0;
    let mut k = 0u64;
    while v < 1.0 {
        grid.push(v);
        k += 1;
        v = k as f64 * resolution;
    }
    grid.push(1.0);

    if n == 0 {
        let y = Interpretation { values: vec![] };
        let e = energy(ps, &y)?;
        return Ok((y, e));
    }

    let m = grid.len();
    let mut idx = vec![0usize; n];
    let mut best_idx = idx.clone();
    let mut best = f64::INFINITY;
    let mut y = vec![grid[0]; n];
    loop {
        let mut total = 0.0;
        for p in &ps.potentials {
            let d = raw_distance(p, &y).max(0.0);
            if p.weight.is_infinite() {
                if d > 0.0 {
                    total = f64::INFINITY;
                    break;
                }
            } else {
                total += p.weight * d;
            }
        }
        if total < best {
            best = total;
            best_idx.copy_from_slice(&idx);
        }
        // advance odometer, last variable fastest
        let mut pos = n;
        loop {
            if pos == 0 {
                let values = best_idx.iter().map(|&i| grid[i]).collect();
                return Ok((Interpretation { values }, best));
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < m {
                y[pos] = grid[idx[pos]];
                break;
            }
            idx[pos] = 0;
            y[pos] = grid[0];
        }
    }
}

/// Random instances shared by unit and acceptance tests.
pub fn random_instance(
    rng: &mut impl rand::Rng,
    max_vars: usize,
    max_clauses: usize,
) -> PotentialSet {
    let n = rng.gen_range(1..=max_vars);
    let m = rng.gen_range(1..=max_clauses);
    let mut potentials = Vec::with_capacity(m);
    for _ in 0..m {
        let n_lits = rng.gen_range(1..=3);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for _ in 0..n_lits {
            let e = if rng.gen_bool(0.25) {
                Entry::Obs(rng.gen_range(0.0..=1.0))
            } else {
                Entry::Free(rng.gen_range(0..n))
            };
            if rng.gen_bool(0.5) {
                pos.push(e);
            } else {
                neg.push(e);
            }
        }
        potentials.push(GroundPotential {
            weight: rng.gen_range(0.0..=2.0),
            pos,
            neg,
        });
    }
    PotentialSet::anonymous(potentials, n)
}

pub fn sum_weights(ps: &PotentialSet) -> f64 {
    ps.potentials
        .iter()
        .filter(|p| !p.weight.is_infinite())
        .map(|p| p.weight)
        .sum()
}
