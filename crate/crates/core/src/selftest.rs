//! Quick property battery behind `mjae selftest`: decomposition identity,
//! finite-difference gradient checks, symmetry contracts and schedule identities.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor, Var};
use crate::evalsuite::{symmetry_report, SymmetryProbe};
use crate::loss::verify_decomposition;
use crate::network::{ModelConfig, ScoreNetwork};
use crate::schedule::{ComponentSchedules, NoiseSchedule};
use crate::{rng, toy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> SelfCheck {
    SelfCheck { name: name.to_string(), pass, detail }
}

fn random(shape: &[usize], r: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rng::normals(r, n)).expect("shape matches")
}

/// Worst relative error between the tape gradient of `Σ w ⊙ f(x)` and
/// central differences, over all input entries.
pub fn gradient_error(inputs: &[Tensor], build: &dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>, seed: u64) -> f64 {
    let eval = |xs: &[Tensor], grad: bool| -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = build(&tape, &vars);
        let w = random(&out.shape(), &mut rng::stream(seed, &[]));
        let f = out.mul(tape.constant(w)).expect("same shape").sum();
        let v = f.item();
        if !grad {
            return (v, Vec::new());
        }
        let g = tape.backward(f).expect("scalar loss");
        (v, vars.iter().map(|x| g.wrt(*x)).collect())
    };
    let (_, grads) = eval(inputs, true);
    let h = 1e-5;
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (a, x) in inputs.iter().enumerate() {
        for c in 0..x.numel() {
            let at = |d: f64| {
                let mut xs = inputs.to_vec();
                xs[a].data_mut()[c] += d;
                eval(&xs, false).0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let g = grads[a].data()[c];
            num = num.max((g - fd).abs());
            den = den.max(g.abs()).max(fd.abs());
        }
    }
    num / den.max(1e-12)
}

type Op = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>;

fn ops() -> Vec<(&'static str, usize, Op)> {
    vec![
        ("add", 2, Box::new(|_, v| v[0].add(v[1]).unwrap())),
        ("mul", 2, Box::new(|_, v| v[0].mul(v[1]).unwrap())),
        ("div", 2, Box::new(|_, v| v[0].div(v[1].square().add_broadcast(v[1].tape().scalar(0.5)).unwrap()).unwrap())),
        ("matmul", 2, Box::new(|_, v| v[0].matmul(v[1].transpose().unwrap()).unwrap())),
        ("concat", 2, Box::new(|t, v| t.concat(&[v[0], v[1]], 0).unwrap())),
        ("slice", 1, Box::new(|_, v| v[0].slice(1, 1, 3).unwrap())),
        ("sum_axis", 1, Box::new(|_, v| v[0].sum_axis(0).unwrap())),
        ("softmax", 1, Box::new(|_, v| v[0].softmax())),
        ("log_softmax", 1, Box::new(|_, v| v[0].log_softmax())),
        ("silu", 1, Box::new(|_, v| v[0].silu())),
        ("tanh", 1, Box::new(|_, v| v[0].tanh())),
        ("exp", 1, Box::new(|_, v| v[0].exp())),
        ("sqrt∘square", 1, Box::new(|_, v| v[0].square().add_broadcast(v[0].tape().scalar(1.0)).unwrap().sqrt())),
    ]
}

fn gradient_checks(seed: u64) -> SelfCheck {
    let mut worst = ("", 0.0f64);
    for (k, (name, arity, op)) in ops().iter().enumerate() {
        for probe in 0..10u64 {
            let mut r = rng::stream(seed, &[k as u64, probe]);
            let inputs: Vec<Tensor> = (0..*arity).map(|_| random(&[3, 4], &mut r)).collect();
            let e = gradient_error(&inputs, op.as_ref(), seed ^ probe);
            if e > worst.1 {
                worst = (name, e);
            }
        }
    }
    check("gradients", worst.1 < 1e-6, format!("{} ops, worst relative error {:.2e} ({})", ops().len(), worst.1, worst.0))
}

fn decomposition(seed: u64) -> SelfCheck {
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let theta = random(&[5, 5], &mut rng::stream(seed, &[k])).map(|v| 2.0 * v);
        worst = worst.max(verify_decomposition(&theta).unwrap_or(f64::INFINITY));
    }
    check("decomposition", worst < 1e-10, format!("100 tables, max residual {worst:.2e}"))
}

fn symmetry(seed: u64) -> SelfCheck {
    let net = match ScoreNetwork::new(ModelConfig::small(), ComponentSchedules::default(), seed) {
        Ok(n) => n,
        Err(e) => return check("symmetry", false, e.to_string()),
    };
    let probes: Vec<_> = ["water", "methanol", "ethanol"].iter().filter_map(|n| toy::molecule(n)).collect();
    let probe = SymmetryProbe { rotations: 5, permutations: 5, reflections: 2, t: 0.3, seed };
    match symmetry_report(&net, &probes, &probe) {
        Ok(r) => check(
            "symmetry",
            r.rotation < 1e-4 && r.invariance() < 1e-5 && r.permutation < 1e-6 && r.reflection < 1e-4,
            format!(
                "rotation {:.1e}, invariance {:.1e}, permutation {:.1e}, reflection {:.1e}",
                r.rotation,
                r.invariance(),
                r.permutation,
                r.reflection
            ),
        ),
        Err(e) => check("symmetry", false, e.to_string()),
    }
}

/// VP: α²+β² = 1. Both kinds: d ln α/dt = f and dβ²/dt = 2fβ² + g².
fn schedules() -> SelfCheck {
    let vp = NoiseSchedule::default();
    let identity = (0..1000)
        .map(|k| {
            let (a, b) = vp.alpha_beta(k as f64 / 999.0).expect("t in range");
            (a * a + b * b - 1.0).abs()
        })
        .fold(0.0, f64::max);
    let mut sde: f64 = 0.0;
    let h = 1e-6;
    for s in [vp, NoiseSchedule::Ve { sigma_min: 0.01, sigma_max: 50.0 }] {
        for k in 1..20 {
            let t = k as f64 / 20.0;
            let (a0, b0) = s.alpha_beta(t - h).expect("t in range");
            let (a1, b1) = s.alpha_beta(t + h).expect("t in range");
            let (_, b) = s.alpha_beta(t).expect("t in range");
            let (f, g) = s.drift_diffusion(t).expect("t in range");
            let dlna = (a1.ln() - a0.ln()) / (2.0 * h);
            let dvar = (b1 * b1 - b0 * b0) / (2.0 * h);
            let want = 2.0 * f * b * b + g * g;
            sde = sde.max((dlna - f).abs() / (1.0 + f.abs())).max((dvar - want).abs() / (1.0 + want.abs()));
        }
    }
    check(
        "schedules",
        identity < 1e-12 && sde < 1e-6,
        format!("|α²+β²−1| {identity:.1e}, SDE coefficient mismatch {sde:.1e}"),
    )
}

/// Runs every check; the battery is deterministic for a given seed.
pub fn run(seed: u64) -> Vec<SelfCheck> {
    vec![decomposition(seed), gradient_checks(seed), symmetry(seed), schedules()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes() {
        for c in run(0) {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn gradient_error_flags_a_wrong_gradient() {
        // x ⊙ stop_grad(x): the tape sees x, differences see 2x
        let x = Tensor::vector(vec![0.5, -1.0]);
        let e = gradient_error(&[x], &|t, v| v[0].mul(t.constant(v[0].value())).unwrap(), 3);
        assert!(e > 1e-3, "{e}");
    }
}
