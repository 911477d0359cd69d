//! Built-in toy corpus: twenty small H/C/N/O/F molecules with hydrogens
//! filled to the valence table and 3D coordinates from a seeded
//! spring-model relaxation.

use rand::Rng;

use crate::molgraph::{element_index, MoleculeGraph, AROMATIC};
use crate::rng;

/// Heavy-atom skeleton: (element, charge) list and bonds (i, j, order).
struct Skeleton {
    name: &'static str,
    atoms: &'static [(&'static str, i8)],
    bonds: &'static [(usize, usize, u8)],
}

const A: u8 = AROMATIC;

const SKELETONS: [Skeleton; 20] = [
    Skeleton { name: "methane", atoms: &[("C", 0)], bonds: &[] },
    Skeleton { name: "ammonia", atoms: &[("N", 0)], bonds: &[] },
    Skeleton { name: "water", atoms: &[("O", 0)], bonds: &[] },
    Skeleton { name: "hydrogen fluoride", atoms: &[("F", 0)], bonds: &[] },
    Skeleton { name: "ethane", atoms: &[("C", 0), ("C", 0)], bonds: &[(0, 1, 1)] },
    Skeleton { name: "ethylene", atoms: &[("C", 0), ("C", 0)], bonds: &[(0, 1, 2)] },
    Skeleton { name: "acetylene", atoms: &[("C", 0), ("C", 0)], bonds: &[(0, 1, 3)] },
    Skeleton { name: "methanol", atoms: &[("C", 0), ("O", 0)], bonds: &[(0, 1, 1)] },
    Skeleton { name: "methylamine", atoms: &[("C", 0), ("N", 0)], bonds: &[(0, 1, 1)] },
    Skeleton { name: "formaldehyde", atoms: &[("C", 0), ("O", 0)], bonds: &[(0, 1, 2)] },
    Skeleton { name: "ethanol", atoms: &[("C", 0), ("C", 0), ("O", 0)], bonds: &[(0, 1, 1), (1, 2, 1)] },
    Skeleton { name: "acetonitrile", atoms: &[("C", 0), ("C", 0), ("N", 0)], bonds: &[(0, 1, 1), (1, 2, 3)] },
    Skeleton { name: "fluoromethane", atoms: &[("C", 0), ("F", 0)], bonds: &[(0, 1, 1)] },
    Skeleton { name: "hydrogen cyanide", atoms: &[("C", 0), ("N", 0)], bonds: &[(0, 1, 3)] },
    Skeleton { name: "formic acid", atoms: &[("C", 0), ("O", 0), ("O", 0)], bonds: &[(0, 1, 2), (0, 2, 1)] },
    Skeleton { name: "propane", atoms: &[("C", 0), ("C", 0), ("C", 0)], bonds: &[(0, 1, 1), (1, 2, 1)] },
    Skeleton { name: "dimethyl ether", atoms: &[("C", 0), ("O", 0), ("C", 0)], bonds: &[(0, 1, 1), (1, 2, 1)] },
    Skeleton { name: "acetaldehyde", atoms: &[("C", 0), ("C", 0), ("O", 0)], bonds: &[(0, 1, 1), (1, 2, 2)] },
    Skeleton { name: "methylammonium", atoms: &[("C", 0), ("N", 1)], bonds: &[(0, 1, 1)] },
    Skeleton {
        name: "benzene",
        atoms: &[("C", 0), ("C", 0), ("C", 0), ("C", 0), ("C", 0), ("C", 0)],
        bonds: &[(0, 1, A), (1, 2, A), (2, 3, A), (3, 4, A), (4, 5, A), (5, 0, A)],
    },
];

pub const CORPUS_SEED: u64 = 20;

/// Names of the corpus molecules, in corpus order.
pub fn names() -> Vec<&'static str> {
    SKELETONS.iter().map(|s| s.name).collect()
}

fn target_valence(el: &str, q: i8) -> f64 {
    match (el, q) {
        ("C", 0) => 4.0,
        ("N", 0) => 3.0,
        ("N", 1) => 4.0,
        ("O", 0) => 2.0,
        ("O", -1) => 1.0,
        _ => 1.0,
    }
}

fn order_value(b: u8) -> f64 {
    if b == AROMATIC {
        1.5
    } else {
        b as f64
    }
}

fn covalent_radius(t: u8) -> f64 {
    [0.31, 0.76, 0.71, 0.66, 0.57][t as usize]
}

fn bond_length(a: u8, b: u8, order: u8) -> f64 {
    let shrink = match order {
        2 => 0.87,
        3 => 0.78,
        AROMATIC => 0.92,
        _ => 1.0,
    };
    (covalent_radius(a) + covalent_radius(b)) * shrink
}

/// Spring-model energy terms for a bond graph.
struct ForceField {
    pairs: Vec<(usize, usize, f64, f64)>, // (i, j, rest length, stiffness)
    repel: Vec<(usize, usize)>,
}

const REPULSION_RANGE: f64 = 2.2;

impl ForceField {
    fn new(types: &[u8], bonds: &[u8]) -> Self {
        let n = types.len();
        let b = |i: usize, j: usize| bonds[i * n + j];
        let mut pairs = Vec::new();
        let mut linked = vec![false; n * n];
        for i in 0..n {
            for j in i + 1..n {
                if b(i, j) > 0 {
                    pairs.push((i, j, bond_length(types[i], types[j], b(i, j)), 10.0));
                    linked[i * n + j] = true;
                }
            }
        }
        for c in 0..n {
            let nbrs: Vec<usize> = (0..n).filter(|&k| b(c, k) > 0).collect();
            let orders: Vec<u8> = nbrs.iter().map(|&k| b(c, k)).collect();
            let angle = if orders.contains(&3) || orders.iter().filter(|&&o| o == 2).count() >= 2 {
                180.0f64
            } else if orders.contains(&2) || orders.contains(&AROMATIC) {
                120.0
            } else {
                109.47
            }
            .to_radians();
            for x in 0..nbrs.len() {
                for y in x + 1..nbrs.len() {
                    let (i, j) = (nbrs[x].min(nbrs[y]), nbrs[x].max(nbrs[y]));
                    let (ri, rj) = (
                        bond_length(types[c], types[i], b(c, i)),
                        bond_length(types[c], types[j], b(c, j)),
                    );
                    let d = (ri * ri + rj * rj - 2.0 * ri * rj * angle.cos()).sqrt();
                    pairs.push((i, j, d, 5.0));
                    linked[i * n + j] = true;
                }
            }
        }
        let repel = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| !linked[i * n + j]).collect();
        Self { pairs, repel }
    }

    fn energy_grad(&self, x: &[[f64; 3]], grad: &mut [[f64; 3]]) -> f64 {
        grad.iter_mut().for_each(|g| *g = [0.0; 3]);
        let mut e = 0.0;
        let mut term = |i: usize, j: usize, f: &dyn Fn(f64) -> (f64, f64)| {
            let d = [x[i][0] - x[j][0], x[i][1] - x[j][1], x[i][2] - x[j][2]];
            let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt().max(1e-9);
            let (v, dv) = f(r);
            e += v;
            for k in 0..3 {
                let g = dv * d[k] / r;
                grad[i][k] += g;
                grad[j][k] -= g;
            }
        };
        for &(i, j, r0, k) in &self.pairs {
            term(i, j, &|r| (k * (r - r0).powi(2), 2.0 * k * (r - r0)));
        }
        for &(i, j) in &self.repel {
            term(i, j, &|r| {
                if r < REPULSION_RANGE {
                    ((REPULSION_RANGE - r).powi(2), -2.0 * (REPULSION_RANGE - r))
                } else {
                    (0.0, 0.0)
                }
            });
        }
        e
    }
}

/// Relaxes the spring model from `restarts` seeded random starts and returns
/// the lowest-energy conformer.
pub fn embed(types: &[u8], bonds: &[u8], seed: u64, restarts: usize) -> Vec<[f64; 3]> {
    let n = types.len();
    let ff = ForceField::new(types, bonds);
    let mut best: Option<(f64, Vec<[f64; 3]>)> = None;
    for r in 0..restarts.max(1) {
        let mut g = rng::stream(seed, &[r as u64]);
        let mut x: Vec<[f64; 3]> = (0..n).map(|_| [0.0; 3].map(|_: f64| 1.5 * rng::normal(&mut g))).collect();
        let mut grad = vec![[0.0; 3]; n];
        let mut step = 0.02;
        let mut e = ff.energy_grad(&x, &mut grad);
        for _ in 0..3000 {
            let trial: Vec<[f64; 3]> =
                x.iter().zip(&grad).map(|(p, d)| [p[0] - step * d[0], p[1] - step * d[1], p[2] - step * d[2]]).collect();
            let mut tg = vec![[0.0; 3]; n];
            let te = ff.energy_grad(&trial, &mut tg);
            if te <= e {
                x = trial;
                grad = tg;
                e = te;
                step *= 1.1;
            } else {
                step *= 0.5;
            }
            if step < 1e-12 {
                break;
            }
        }
        if best.as_ref().is_none_or(|(be, _)| e < *be) {
            best = Some((e, x));
        }
    }
    best.expect("at least one restart").1
}

fn build(s: &Skeleton, seed: u64) -> MoleculeGraph {
    let heavy = s.atoms.len();
    let mut types: Vec<u8> = s.atoms.iter().map(|(el, _)| element_index(el).expect("vocabulary element")).collect();
    let mut charges: Vec<i8> = s.atoms.iter().map(|a| a.1).collect();
    let mut used = vec![0.0; heavy];
    for &(i, j, o) in s.bonds {
        used[i] += order_value(o);
        used[j] += order_value(o);
    }
    let mut h_of = Vec::new();
    for (i, (el, q)) in s.atoms.iter().enumerate() {
        let missing = (target_valence(el, *q) - used[i]).round() as usize;
        for _ in 0..missing {
            h_of.push(i);
        }
    }
    let n = heavy + h_of.len();
    types.extend(std::iter::repeat_n(0u8, h_of.len()));
    charges.extend(std::iter::repeat_n(0i8, h_of.len()));
    let mut bonds = vec![0u8; n * n];
    for &(i, j, o) in s.bonds {
        bonds[i * n + j] = o;
        bonds[j * n + i] = o;
    }
    for (k, &p) in h_of.iter().enumerate() {
        let h = heavy + k;
        bonds[p * n + h] = 1;
        bonds[h * n + p] = 1;
    }
    let positions = embed(&types, &bonds, seed, 4);
    MoleculeGraph::new(types, charges, bonds, positions).expect("toy molecules are valid")
}

/// The twenty-molecule corpus, deterministic for a fixed build.
pub fn corpus() -> Vec<MoleculeGraph> {
    SKELETONS.iter().enumerate().map(|(i, s)| build(s, rng::stream(CORPUS_SEED, &[i as u64]).random())).collect()
}

/// Corpus molecule by name.
pub fn molecule(name: &str) -> Option<MoleculeGraph> {
    SKELETONS.iter().position(|s| s.name == name).map(|i| corpus().swap_remove(i))
}

/// Geometric variants of one molecule: an isotropic scale in [0.8, 1.2]
/// times the reference conformer, plus 0.05 Å jitter.
pub fn conformer_variants(g: &MoleculeGraph, count: usize, seed: u64) -> Vec<MoleculeGraph> {
    (0..count)
        .map(|k| {
            let mut r = rng::stream(seed, &[k as u64]);
            let scale = 0.8 + 0.4 * r.random::<f64>();
            let pos = g.positions().iter().map(|p| p.map(|v| scale * v + 0.05 * rng::normal(&mut r))).collect();
            g.with_positions(pos).expect("finite positions")
        })
        .collect()
}

/// Probe set of `per_molecule` variants per corpus molecule, labelled by
/// radius of gyration.
pub fn probe_set(per_molecule: usize, seed: u64) -> (Vec<MoleculeGraph>, Vec<f64>) {
    let graphs: Vec<MoleculeGraph> = corpus()
        .iter()
        .enumerate()
        .flat_map(|(i, g)| conformer_variants(g, per_molecule, rng::stream(seed, &[i as u64]).random()))
        .collect();
    let labels = graphs.iter().map(|g| g.radius_of_gyration()).collect();
    (graphs, labels)
}
