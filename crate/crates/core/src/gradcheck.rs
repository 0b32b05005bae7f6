//! Central finite-difference check of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::toy_train::{
    balanced_ce, dino_loss, total_loss, ClassWeights, LossConfig, ToyModel, ViewPair,
};

pub const STEP: f64 = 1e-5;
/// Denominator floor for the relative error, so components that are exactly
/// zero compare on absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradCheckReport {
    pub configs: usize,
    pub dino: f64,
    pub balanced_ce: f64,
    pub total: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `analytic` and central differences of
/// `loss` over every parameter of `at`.
pub fn max_rel_error<F>(at: &ToyModel, analytic: &ToyModel, mut loss: F) -> Result<f64>
where
    F: FnMut(&ToyModel) -> Result<f64>,
{
    let mut worst: f64 = 0.0;
    let grads: Vec<f64> = analytic.params().copied().collect();
    let mut probe = at.clone();
    for (i, &g) in grads.iter().enumerate() {
        let orig = *probe.params().nth(i).unwrap();
        *probe.params_mut().nth(i).unwrap() = orig + STEP;
        let up = loss(&probe)?;
        *probe.params_mut().nth(i).unwrap() = orig - STEP;
        let down = loss(&probe)?;
        *probe.params_mut().nth(i).unwrap() = orig;
        worst = worst.max(relative_error(g, (up - down) / (2.0 * STEP)));
    }
    Ok(worst)
}

/// One random problem instance.
pub struct Problem {
    pub student: ToyModel,
    pub teacher: ToyModel,
    pub batch: Vec<ViewPair>,
    pub weights: ClassWeights,
    pub cfg: LossConfig,
}

pub fn random_problem<R: Rng>(rng: &mut R) -> Problem {
    let d_in = rng.random_range(2..=6);
    let proj_dim = rng.random_range(2..=5);
    let classes = rng.random_range(2..=4);
    let b = rng.random_range(1..=4);
    let student = ToyModel::random(d_in, proj_dim, classes, 0.5, rng);
    let teacher = ToyModel::random(d_in, proj_dim, classes, 0.5, rng);
    let batch = (0..b)
        .map(|_| {
            let x: Vec<f64> = (0..d_in).map(|_| StandardNormal.sample(rng)).collect();
            let xs = x
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(rng);
                    v + 0.1 * z
                })
                .collect();
            ViewPair {
                x_teacher: x,
                x_student: xs,
                label: Some(rng.random_range(0..classes)),
            }
        })
        .collect();
    let counts: Vec<usize> = (0..classes).map(|_| rng.random_range(1..50)).collect();
    Problem {
        student,
        teacher,
        batch,
        weights: ClassWeights::from_counts(&counts).expect("counts are positive"),
        cfg: LossConfig {
            lambda_dino: rng.random_range(0.1..2.0),
            lambda_sup: rng.random_range(0.1..2.0),
            tau_teacher: rng.random_range(0.04..0.5),
            tau_student: rng.random_range(0.1..1.0),
        },
    }
}

pub fn grad_check(configs: usize, seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport {
        configs,
        ..Default::default()
    };
    for _ in 0..configs {
        let p = random_problem(&mut rng);
        let d = dino_loss(&p.student, &p.teacher, &p.batch, &p.cfg)?;
        report.dino = report.dino.max(max_rel_error(&p.student, &d.grad, |m| {
            Ok(dino_loss(m, &p.teacher, &p.batch, &p.cfg)?.loss)
        })?);
        let c = balanced_ce(&p.student, &p.batch, &p.weights)?;
        report.balanced_ce = report
            .balanced_ce
            .max(max_rel_error(&p.student, &c.grad, |m| {
                Ok(balanced_ce(m, &p.batch, &p.weights)?.loss)
            })?);
        let t = total_loss(&p.student, &p.teacher, &p.batch, &p.weights, &p.cfg)?;
        report.total = report.total.max(max_rel_error(&p.student, &t.grad, |m| {
            Ok(total_loss(m, &p.teacher, &p.batch, &p.weights, &p.cfg)?.total)
        })?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_pass_on_a_few_configs() {
        let r = grad_check(5, 1).unwrap();
        assert!(r.dino < 1e-4, "{r:?}");
        assert!(r.balanced_ce < 1e-4, "{r:?}");
        assert!(r.total < 1e-4, "{r:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_problem(&mut rng);
        let mut c = balanced_ce(&p.student, &p.batch, &p.weights).unwrap();
        c.grad.scale(1.1);
        let err = max_rel_error(&p.student, &c.grad, |m| {
            Ok(balanced_ce(m, &p.batch, &p.weights)?.loss)
        })
        .unwrap();
        assert!(err > 0.05);
    }
}
