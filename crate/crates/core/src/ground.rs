//! Rule grounding: instantiate weighted clauses over constants and observed
//! evidence, producing hinge-loss potentials over a vector of free variables.
//!
//! Enumeration is driven by the positive closed-world body literals of each
//! rule (only evidence entries with nonzero value are joined), so the full
//! Cartesian product over constants is never materialized. Variables not
//! bound that way fall back to the evidence `domain` declarations. A ground
//! potential is dropped only when its distance to satisfaction is provably
//! zero for every assignment of the free variables.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::infer::Interpretation;
use crate::rule_lang::{EvidenceSet, GroundAtom, Program, Term};

#[derive(Debug, Error, PartialEq)]
pub enum GroundError {
    #[error("soft-logic input {0} outside [0,1]")]
    OutOfRange(f64),
    #[error("rule {rule}: variable `{var}` is not bound by any positive closed-world body literal and no domain constants are declared")]
    UnboundVariable { rule: usize, var: String },
    #[error("rule {rule}: predicate `{name}` is not declared")]
    UnknownPredicate { rule: usize, name: String },
    #[error("variable index {index} out of range ({n_free} free variables)")]
    IndexOutOfRange { index: usize, n_free: usize },
    #[error("interpretation has {got} entries, expected {want}")]
    DimensionMismatch { got: usize, want: usize },
}

fn check_unit(v: f64) -> Result<f64, GroundError> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(GroundError::OutOfRange(v))
    }
}

/// Lukasiewicz conjunction: max(0, a + b - 1).
pub fn soft_and(a: f64, b: f64) -> Result<f64, GroundError> {
    Ok((check_unit(a)? + check_unit(b)? - 1.0).max(0.0))
}

/// Lukasiewicz disjunction: min(1, a + b).
pub fn soft_or(a: f64, b: f64) -> Result<f64, GroundError> {
    Ok((check_unit(a)? + check_unit(b)?).min(1.0))
}

/// Lukasiewicz negation: 1 - a.
pub fn soft_not(a: f64) -> Result<f64, GroundError> {
    Ok(1.0 - check_unit(a)?)
}

/// One slot of a ground clause: either a free variable or an observed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entry {
    Free(usize),
    Obs(f64),
}

/// A grounded weighted clause. `pos` holds the un-negated literals, `neg`
/// the negated ones; the distance to satisfaction is
/// `max(1 - sum(pos) - sum(1 - neg), 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundPotential {
    pub weight: f64,
    pub pos: Vec<Entry>,
    pub neg: Vec<Entry>,
}

impl GroundPotential {
    /// Largest distance achievable over free assignments; used for pruning.
    fn max_distance(&self) -> f64 {
        let mut d = 1.0;
        for e in &self.pos {
            if let Entry::Obs(v) = e {
                d -= v;
            }
        }
        for e in &self.neg {
            match e {
                Entry::Obs(v) => d -= 1.0 - v,
                Entry::Free(_) => {} // a free negated literal can sit at 1
            }
        }
        d
    }
}

/// The grounded program: potentials plus the bidirectional map between free
/// ground atoms and variable indices.
#[derive(Debug, Clone, Default)]
pub struct PotentialSet {
    pub potentials: Vec<GroundPotential>,
    atoms: Vec<GroundAtom>,
    index: BTreeMap<GroundAtom, usize>,
}

impl PotentialSet {
    /// Build a set from raw parts; indices are validated against `n_free`
    /// and anonymous atom names `y0..` are synthesized.
    pub fn anonymous(potentials: Vec<GroundPotential>, n_free: usize) -> Self {
        let atoms: Vec<GroundAtom> = (0..n_free)
            .map(|i| GroundAtom::new(format!("y{i}"), &[]))
            .collect();
        let index = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), i))
            .collect();
        PotentialSet {
            potentials,
            atoms,
            index,
        }
    }

    pub fn n_free(&self) -> usize {
        self.atoms.len()
    }

    pub fn free_atoms(&self) -> &[GroundAtom] {
        &self.atoms
    }

    pub fn atom(&self, index: usize) -> &GroundAtom {
        &self.atoms[index]
    }

    pub fn index_of(&self, atom: &GroundAtom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    fn register(&mut self, atom: GroundAtom) -> usize {
        if let Some(&i) = self.index.get(&atom) {
            return i;
        }
        let i = self.atoms.len();
        self.atoms.push(atom.clone());
        self.index.insert(atom, i);
        i
    }

    /// Debug dump, one weighted clause per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for p in &self.potentials {
            let fmt_entry = |e: &Entry| match e {
                Entry::Free(i) => self.atoms[*i].to_string(),
                Entry::Obs(v) => format!("{v}"),
            };
            let pos: Vec<String> = p.pos.iter().map(fmt_entry).collect();
            let neg: Vec<String> = p.neg.iter().map(|e| format!("!{}", fmt_entry(e))).collect();
            let mut lits = pos;
            lits.extend(neg);
            out.push_str(&format!("{}: {}\n", p.weight, lits.join(" | ")));
        }
        out
    }
}

/// Distance to satisfaction of one ground clause under an interpretation.
pub fn distance_to_satisfaction(
    p: &GroundPotential,
    y: &Interpretation,
) -> Result<f64, GroundError> {
    let mut acc = 1.0;
    for e in &p.pos {
        acc -= entry_value(e, y)?;
    }
    for e in &p.neg {
        acc -= 1.0 - entry_value(e, y)?;
    }
    Ok(acc.max(0.0))
}

fn entry_value(e: &Entry, y: &Interpretation) -> Result<f64, GroundError> {
    match e {
        Entry::Obs(v) => Ok(*v),
        Entry::Free(i) => y
            .values
            .get(*i)
            .copied()
            .ok_or(GroundError::IndexOutOfRange {
                index: *i,
                n_free: y.values.len(),
            }),
    }
}

/// Ground every rule of `program` against `evidence`.
pub fn ground(program: &Program, evidence: &EvidenceSet) -> Result<PotentialSet, GroundError> {
    let closed: BTreeMap<&str, bool> = program
        .predicates
        .iter()
        .map(|p| (p.name.as_str(), p.closed_world))
        .collect();

    // Evidence grouped by predicate; only nonzero entries drive enumeration.
    let mut by_pred: BTreeMap<&str, Vec<(&[String], f64)>> = BTreeMap::new();
    for (atom, &v) in &evidence.entries {
        by_pred
            .entry(atom.predicate.as_str())
            .or_default()
            .push((&atom.args, v));
    }

    let domain_consts: Vec<String> = {
        let mut v: Vec<String> = evidence
            .domains
            .values()
            .flat_map(|c| c.iter().cloned())
            .collect();
        v.sort();
        v.dedup();
        v
    };

    let mut ps = PotentialSet::default();

    for (rule_idx, rule) in program.rules.iter().enumerate() {
        for lit in &rule.clause {
            if !closed.contains_key(lit.atom.predicate.as_str()) {
                return Err(GroundError::UnknownPredicate {
                    rule: rule_idx,
                    name: lit.atom.predicate.clone(),
                });
            }
        }

        // Binding literals: negated in the clause (positive in the body) over
        // closed-world predicates.
        let binders: Vec<usize> = (0..rule.clause.len())
            .filter(|&i| {
                let l = &rule.clause[i];
                l.negated && closed[l.atom.predicate.as_str()]
            })
            .collect();

        let mut vars: Vec<&str> = Vec::new();
        for lit in &rule.clause {
            for t in &lit.atom.args {
                if let Term::Var(v) = t {
                    if !vars.contains(&v.as_str()) {
                        vars.push(v);
                    }
                }
            }
        }
        let mut bound: Vec<&str> = Vec::new();
        for &bi in &binders {
            for t in &rule.clause[bi].atom.args {
                if let Term::Var(v) = t {
                    if !bound.contains(&v.as_str()) {
                        bound.push(v);
                    }
                }
            }
        }
        let unbound: Vec<&str> = vars.iter().filter(|v| !bound.contains(v)).copied().collect();
        if !unbound.is_empty() && domain_consts.is_empty() {
            return Err(GroundError::UnboundVariable {
                rule: rule_idx,
                var: unbound[0].to_string(),
            });
        }

        let mut subst: BTreeMap<&str, String> = BTreeMap::new();
        enumerate(
            rule,
            &binders,
            0,
            &unbound,
            &domain_consts,
            &by_pred,
            &closed,
            evidence,
            &mut subst,
            &mut ps,
        );
    }
    Ok(ps)
}

#[allow(clippy::too_many_arguments)]
fn enumerate<'r>(
    rule: &'r crate::rule_lang::Rule,
    binders: &[usize],
    depth: usize,
    unbound: &[&'r str],
    domain_consts: &[String],
    by_pred: &BTreeMap<&str, Vec<(&[String], f64)>>,
    closed: &BTreeMap<&str, bool>,
    evidence: &EvidenceSet,
    subst: &mut BTreeMap<&'r str, String>,
    ps: &mut PotentialSet,
) {
    if depth < binders.len() {
        let lit = &rule.clause[binders[depth]];
        let entries = match by_pred.get(lit.atom.predicate.as_str()) {
            Some(e) => e,
            None => return, // closed-world predicate with no evidence: empty join
        };
        'entry: for (args, v) in entries {
            if *v <= 0.0 {
                continue;
            }
            let mut added: Vec<&str> = Vec::new();
            for (t, c) in lit.atom.args.iter().zip(args.iter()) {
                match t {
                    Term::Const(k) => {
                        if k != c {
                            for a in added.drain(..) {
                                subst.remove(a);
                            }
                            continue 'entry;
                        }
                    }
                    Term::Var(name) => match subst.get(name.as_str()) {
                        Some(existing) => {
                            if existing != c {
                                for a in added.drain(..) {
                                    subst.remove(a);
                                }
                                continue 'entry;
                            }
                        }
                        None => {
                            subst.insert(name, c.clone());
                            added.push(name);
                        }
                    },
                }
            }
            enumerate(
                rule,
                binders,
                depth + 1,
                unbound,
                domain_consts,
                by_pred,
                closed,
                evidence,
                subst,
                ps,
            );
            for a in added {
                subst.remove(a);
            }
        }
        return;
    }

    // All binders matched; extend remaining variables from the domains.
    if let Some(&var) = unbound.iter().find(|v| !subst.contains_key(*v)) {
        for c in domain_consts {
            subst.insert(var, c.clone());
            enumerate(
                rule,
                binders,
                depth,
                unbound,
                domain_consts,
                by_pred,
                closed,
                evidence,
                subst,
                ps,
            );
        }
        subst.remove(var);
        return;
    }

    emit(rule, closed, evidence, subst, ps);
}

fn emit(
    rule: &crate::rule_lang::Rule,
    closed: &BTreeMap<&str, bool>,
    evidence: &EvidenceSet,
    subst: &BTreeMap<&str, String>,
    ps: &mut PotentialSet,
) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut free_atoms: Vec<(GroundAtom, bool)> = Vec::new();

    for lit in &rule.clause {
        let ga = GroundAtom {
            predicate: lit.atom.predicate.clone(),
            args: lit
                .atom
                .args
                .iter()
                .map(|t| match t {
                    Term::Const(c) => c.clone(),
                    Term::Var(v) => subst[v.as_str()].clone(),
                })
                .collect(),
        };
        let observed = match evidence.value(&ga) {
            Some(v) => Some(v),
            None if closed[lit.atom.predicate.as_str()] => Some(0.0),
            None => None,
        };
        match observed {
            Some(v) => {
                let e = Entry::Obs(v);
                if lit.negated {
                    neg.push(e);
                } else {
                    pos.push(e);
                }
            }
            None => free_atoms.push((ga, lit.negated)),
        }
    }

    // Pruning check before registering atoms: a potential whose hinge is
    // identically zero never constrains the optimum. Free positive literals
    // subtract at least 0 (at V=0) and free negated literals at least 0
    // (at V=1), so only the observed terms decide.
    let max_d = GroundPotential {
        weight: rule.weight,
        pos: pos.clone(),
        neg: neg.clone(),
    }
    .max_distance();
    if max_d <= 1e-12 {
        return;
    }

    for (ga, negated) in free_atoms {
        let idx = ps.register(ga);
        if negated {
            neg.push(Entry::Free(idx));
        } else {
            pos.push(Entry::Free(idx));
        }
    }
    ps.potentials.push(GroundPotential {
        weight: rule.weight,
        pos,
        neg,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rule_lang::{parse_evidence, parse_program};

    #[test]
    fn lukasiewicz_basics() {
        assert!((soft_and(0.7, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(soft_or(0.7, 0.5).unwrap(), 1.0);
        assert_eq!(soft_not(0.0).unwrap(), 1.0);
        assert!(soft_and(1.2, 0.5).is_err());
        assert!(soft_or(-0.1, 0.5).is_err());
        assert!(soft_not(2.0).is_err());
    }

    #[test]
    fn lukasiewicz_identities_on_grid() {
        for i in 0..=100 {
            let a = i as f64 / 100.0;
            assert!((soft_and(a, 1.0).unwrap() - a).abs() < 1e-15);
            assert!((soft_or(a, 0.0).unwrap() - a).abs() < 1e-15);
            assert!((soft_not(soft_not(a).unwrap()).unwrap() - a).abs() < 1e-15);
            for j in 0..=100 {
                let b = j as f64 / 100.0;
                let lhs = soft_not(soft_and(a, b).unwrap()).unwrap();
                let rhs = soft_or(1.0 - a, 1.0 - b).unwrap();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn distance_direct_substitution() {
        // clause (!a | b) with V(a)=0.9, V(b)=0.3
        let p = GroundPotential {
            weight: 1.0,
            pos: vec![Entry::Free(1)],
            neg: vec![Entry::Free(0)],
        };
        let y = Interpretation {
            values: vec![0.9, 0.3],
        };
        let d = distance_to_satisfaction(&p, &y).unwrap();
        assert!((d - 0.6).abs() < 1e-12);
    }

    #[test]
    fn distance_satisfied_clause_is_zero() {
        let p = GroundPotential {
            weight: 1.0,
            pos: vec![Entry::Free(0)],
            neg: vec![],
        };
        let y = Interpretation { values: vec![1.0] };
        assert_eq!(distance_to_satisfaction(&p, &y).unwrap(), 0.0);
    }

    #[test]
    fn distance_fully_observed() {
        // clause (!a) with a observed at 1.0 has distance 1 regardless of y
        let p = GroundPotential {
            weight: 1.0,
            pos: vec![],
            neg: vec![Entry::Obs(1.0)],
        };
        let y = Interpretation { values: vec![] };
        assert_eq!(distance_to_satisfaction(&p, &y).unwrap(), 1.0);
    }

    #[test]
    fn distance_index_out_of_range() {
        let p = GroundPotential {
            weight: 1.0,
            pos: vec![Entry::Free(3)],
            neg: vec![],
        };
        let y = Interpretation { values: vec![0.5] };
        assert!(matches!(
            distance_to_satisfaction(&p, &y),
            Err(GroundError::IndexOutOfRange { .. })
        ));
    }

    const MATCH_DECLS: &str = "\
predicate candidate/2 open.
predicate object/1 closed.
predicate mention/1 closed.
predicate attr_o/3 closed.
predicate attr_m/3 closed.
predicate consistent/5 closed.
";

    const MATCH_RULES: &str = "\
1.0: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).
1.0: candidate(M,O) <- object(O) & mention(M) & candidate(M1,O1) & consistent(R,O,O1,M,M1).
";

    fn fixture_evidence() -> String {
        // 2 mentions, 3 objects; attributes match on exactly (m1,o1), (m2,o2);
        // consistent(r, oi, oj, m1, m2) for all ordered pairs i != j.
        let mut ev = String::new();
        for o in ["o1", "o2", "o3"] {
            ev.push_str(&format!("object({o}) = 1.0\n"));
        }
        for m in ["m1", "m2"] {
            ev.push_str(&format!("mention({m}) = 1.0\n"));
        }
        ev.push_str("attr_o(o1,color,red) = 1.0\n");
        ev.push_str("attr_o(o2,color,blue) = 1.0\n");
        ev.push_str("attr_o(o3,color,green) = 1.0\n");
        ev.push_str("attr_m(m1,color,red) = 1.0\n");
        ev.push_str("attr_m(m2,color,blue) = 1.0\n");
        for a in ["o1", "o2", "o3"] {
            for b in ["o1", "o2", "o3"] {
                if a != b {
                    ev.push_str(&format!("consistent(r,{a},{b},m1,m2) = 1.0\n"));
                }
            }
        }
        ev
    }

    #[test]
    fn grounding_fixture_counts() {
        let program = parse_program(&format!("{MATCH_DECLS}{MATCH_RULES}")).unwrap();
        let evidence = parse_evidence(&fixture_evidence()).unwrap();
        let ps = ground(&program, &evidence).unwrap();

        // Exactly 2 attribute-match potentials survive from rule w1: the
        // matching (mention, object) pairs.
        let w1_potentials: Vec<_> = ps
            .potentials
            .iter()
            .filter(|p| p.pos.len() == 1 && p.neg.iter().all(|e| matches!(e, Entry::Obs(_))))
            .collect();
        assert_eq!(w1_potentials.len(), 2);

        // All 6 candidate pairs become free atoms via rule w2's groundings.
        assert_eq!(ps.n_free(), 6);
        for m in ["m1", "m2"] {
            for o in ["o1", "o2", "o3"] {
                assert!(
                    ps.index_of(&GroundAtom::new("candidate", &[m, o])).is_some(),
                    "missing candidate({m},{o})"
                );
            }
        }
    }

    #[test]
    fn observed_zero_body_literal_prunes() {
        let program = parse_program(
            "predicate p/1 closed.\npredicate q/1 open.\n1.0: q(X) <- p(X).\n",
        )
        .unwrap();
        // p(a) has value 0: the rule body is false, the potential is trivially
        // satisfied, and enumeration never visits it.
        let evidence = parse_evidence("p(a) = 0.0\n").unwrap();
        let ps = ground(&program, &evidence).unwrap();
        assert!(ps.potentials.is_empty());
        assert_eq!(ps.n_free(), 0);
    }

    #[test]
    fn empty_evidence_grounds_nothing() {
        let program = parse_program(
            "predicate p/1 closed.\npredicate q/1 open.\n1.0: q(X) <- p(X).\n",
        )
        .unwrap();
        let ps = ground(&program, &EvidenceSet::default()).unwrap();
        assert!(ps.potentials.is_empty());
    }

    #[test]
    fn observed_satisfied_head_prunes() {
        // head literal observed at 1.0 satisfies the clause outright
        let program = parse_program(
            "predicate p/1 closed.\npredicate q/1 closed.\n1.0: q(X) <- p(X).\n",
        )
        .unwrap();
        let evidence = parse_evidence("p(a) = 1.0\nq(a) = 1.0\n").unwrap();
        let ps = ground(&program, &evidence).unwrap();
        assert!(ps.potentials.is_empty());
    }

    #[test]
    fn unsafe_rule_is_rejected_without_domains() {
        let program = parse_program(
            "predicate p/1 closed.\npredicate q/1 open.\n1.0: q(X) <- q(X).\n",
        )
        .unwrap();
        let evidence = EvidenceSet::default();
        assert!(matches!(
            ground(&program, &evidence),
            Err(GroundError::UnboundVariable { .. })
        ));
    }

    #[test]
    fn domains_bind_free_variables() {
        let program = parse_program(
            "predicate p/1 closed.\npredicate q/1 open.\n1.0: q(X) <- !p(X).\n",
        )
        .unwrap();
        // X appears only in a negated closed-world body literal; the domain
        // declaration supplies the candidate constants.
        let evidence = parse_evidence("domain things: a, b\np(a) = 1.0\n").unwrap();
        let ps = ground(&program, &evidence).unwrap();
        // p(a)=1 prunes the X=a grounding; X=b survives with q(b) free.
        assert_eq!(ps.potentials.len(), 1);
        assert_eq!(ps.n_free(), 1);
        assert_eq!(ps.atom(0), &GroundAtom::new("q", &["b"]));
    }

    #[test]
    fn grounding_is_deterministic() {
        let program = parse_program(&format!("{MATCH_DECLS}{MATCH_RULES}")).unwrap();
        let evidence = parse_evidence(&fixture_evidence()).unwrap();
        let a = ground(&program, &evidence).unwrap();
        let b = ground(&program, &evidence).unwrap();
        assert_eq!(a.potentials, b.potentials);
        assert_eq!(a.free_atoms(), b.free_atoms());
        assert!(!a.dump().is_empty());
    }

    #[test]
    fn boolean_distance_matches_classical_satisfaction() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let n = rng.gen_range(1..=3);
            let n_lits = rng.gen_range(1..=4);
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for _ in 0..n_lits {
                let idx = rng.gen_range(0..n);
                if rng.gen_bool(0.5) {
                    pos.push(Entry::Free(idx));
                } else {
                    neg.push(Entry::Free(idx));
                }
            }
            let p = GroundPotential {
                weight: 1.0,
                pos,
                neg,
            };
            for bits in 0..(1u32 << n) {
                let y = Interpretation {
                    values: (0..n).map(|i| ((bits >> i) & 1) as f64).collect(),
                };
                let sat = p
                    .pos
                    .iter()
                    .any(|e| matches!(e, Entry::Free(i) if y.values[*i] == 1.0))
                    || p.neg
                        .iter()
                        .any(|e| matches!(e, Entry::Free(i) if y.values[*i] == 0.0));
                let d = distance_to_satisfaction(&p, &y).unwrap();
                if sat {
                    assert_eq!(d, 0.0);
                } else {
                    assert!(d > 0.0);
                }
            }
        }
    }

    #[test]
    fn distance_is_convex_in_y() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let n = rng.gen_range(1..=4);
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for _ in 0..rng.gen_range(1..=4) {
                let e = if rng.gen_bool(0.3) {
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
            if pos.is_empty() && neg.is_empty() {
                continue;
            }
            let p = GroundPotential {
                weight: 1.0,
                pos,
                neg,
            };
            let y1 = Interpretation {
                values: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
            };
            let y2 = Interpretation {
                values: (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect(),
            };
            let t: f64 = rng.gen_range(0.0..=1.0);
            let ymix = Interpretation {
                values: y1
                    .values
                    .iter()
                    .zip(&y2.values)
                    .map(|(a, b)| t * a + (1.0 - t) * b)
                    .collect(),
            };
            let d1 = distance_to_satisfaction(&p, &y1).unwrap();
            let d2 = distance_to_satisfaction(&p, &y2).unwrap();
            let dm = distance_to_satisfaction(&p, &ymix).unwrap();
            assert!(dm <= t * d1 + (1.0 - t) * d2 + 1e-12);
        }
    }
}
