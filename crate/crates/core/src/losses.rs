//! Multi-level collaborative distillation.
//!
//! Each student `m` is trained on
//!
//! ```text
//! L^m = L_baseline + L_CE + L_KD + λ·L_GWMKD
//! ```
//!
//! where the CE term runs over `B ∪ h_m(B)`, the KD term aligns the student
//! with its peer on the clean batch and across the two augmented views, and
//! the GWMKD term aligns it with the global workspace model on `B ∪ h_m(B)`.
//! Every KL is `D(student ‖ teacher)` on tempered probabilities; the teacher
//! side (peer or workspace) is a constant and receives no gradient.
//!
//! All functions here take raw logits and apply the seen-class mask
//! themselves.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{masked_logits, SeenClasses};
use crate::scalar::Scalar;
use crate::tensor::{log_softmax_temp, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    #[default]
    Er,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda: f64,
    pub enable_kd: bool,
    pub enable_fuse: bool,
    pub enable_gwmkd: bool,
    pub baseline: Baseline,
    /// Multiply KD terms by τ².
    pub kd_tau_squared: bool,
    /// Average every term over its rows instead of summing.
    pub mean_reduce: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 4.0,
            lambda: 0.1,
            enable_kd: true,
            enable_fuse: true,
            enable_gwmkd: true,
            baseline: Baseline::Er,
            kd_tau_squared: false,
            mean_reduce: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config("loss.tau", format!("must be > 0, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config(
                "loss.lambda",
                format!("must be >= 0, got {}", self.lambda),
            ));
        }
        Ok(())
    }

    /// The distillation stack is on when any of its modules is. With all
    /// three off the student is trained by the baseline loss alone.
    pub fn method_active(&self) -> bool {
        self.enable_kd || self.enable_fuse || self.enable_gwmkd
    }

    fn reduction(&self) -> Reduction {
        if self.mean_reduce {
            Reduction::Mean
        } else {
            Reduction::Sum
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    fn factor<T: Scalar>(self, rows: usize) -> T {
        match self {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::lit(rows.max(1) as f64),
        }
    }
}

/// A scalar loss and its gradient with respect to the (raw) logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub loss: T,
    pub dlogits: Matrix<T>,
}

/// Per-student loss values; disabled terms are exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub baseline: f64,
    pub ce: f64,
    pub kd: f64,
    pub gwmkd: f64,
    pub total: f64,
}

/// Cross-entropy `−Σ log softmax(z)_y` over the seen classes, gradient
/// `softmax − onehot` per row.
pub fn ce_loss<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    seen: &SeenClasses,
    reduction: Reduction,
) -> Result<LossGrad<T>> {
    if labels.len() != logits.rows() {
        return Err(Error::dim("ce_loss", logits.rows(), labels.len()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| !seen.contains(y)) {
        return Err(Error::Data(format!(
            "label {y} at row {i} is not among the seen classes"
        )));
    }
    let masked = masked_logits(logits, seen)?;
    let logp = log_softmax_temp(&masked, T::one())?;
    let scale = reduction.factor::<T>(labels.len());
    let mut loss = T::zero();
    let mut grad = logp.map(|v| v.exp());
    for (r, &y) in labels.iter().enumerate() {
        loss = loss - logp.get(r, y);
        grad.set(r, y, grad.get(r, y) - T::one());
    }
    Ok(LossGrad {
        loss: loss * scale,
        dlogits: grad.scale(scale),
    })
}

/// `Σ_rows Σ_c p_c (ln p_c − ln q_c)` for probability rows, with `0·ln 0 = 0`.
pub fn kl_div<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> Result<T> {
    if p.shape() != q.shape() {
        return Err(Error::dim(
            "kl_div",
            format!("{:?}", p.shape()),
            format!("{:?}", q.shape()),
        ));
    }
    let tol = T::lit(1e-9);
    for (name, m) in [("p", p), ("q", q)] {
        for (r, row) in m.row_iter().enumerate() {
            let s: T = row.iter().copied().sum();
            if row.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) || (s - T::one()).abs() > tol {
                return Err(Error::Data(format!(
                    "row {r} of {name} is not on the probability simplex (sum {s})"
                )));
            }
        }
    }
    let mut total = T::zero();
    for (pr, qr) in p.row_iter().zip(q.row_iter()) {
        for (&pc, &qc) in pr.iter().zip(qr) {
            if pc > T::zero() {
                total = total + pc * (pc.ln() - qc.ln());
            }
        }
    }
    Ok(total)
}

/// `Σ_rows D(p_student ‖ p_teacher)` at temperature `tau`, both sides masked
/// to the seen classes. The gradient goes to the student logits only:
///
/// ```text
/// ∂/∂z_k = (1/τ) · p_k · [ (ln p_k − ln q_k) − D_row ]
/// ```
pub fn kl_from_logits<T: Scalar>(
    student: &Matrix<T>,
    teacher: &Matrix<T>,
    seen: &SeenClasses,
    tau: T,
    reduction: Reduction,
    tau_squared: bool,
) -> Result<LossGrad<T>> {
    if student.shape() != teacher.shape() {
        return Err(Error::dim(
            "kl_from_logits",
            format!("{:?}", student.shape()),
            format!("{:?}", teacher.shape()),
        ));
    }
    let logp = log_softmax_temp(&masked_logits(student, seen)?, tau)?;
    let logq = log_softmax_temp(&masked_logits(teacher, seen)?, tau)?;
    let mut scale = reduction.factor::<T>(student.rows());
    if tau_squared {
        scale = scale * tau * tau;
    }
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(student.rows(), student.cols());
    for r in 0..student.rows() {
        let (lp, lq) = (logp.row(r), logq.row(r));
        let mut row_kl = T::zero();
        for c in 0..lp.len() {
            if seen.contains(c) {
                row_kl = row_kl + lp[c].exp() * (lp[c] - lq[c]);
            }
        }
        loss = loss + row_kl;
        let g = grad.row_mut(r);
        for c in 0..lp.len() {
            if seen.contains(c) {
                g[c] = lp[c].exp() * ((lp[c] - lq[c]) - row_kl) / tau * scale;
            }
        }
    }
    Ok(LossGrad {
        loss: loss * scale,
        dlogits: grad,
    })
}

/// Logits of one model on the clean batch `B` and on its own augmented view.
#[derive(Debug, Clone, Copy)]
pub struct ViewLogits<'a, T> {
    pub clean: &'a Matrix<T>,
    pub augmented: &'a Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdGrad<T> {
    pub loss: T,
    pub d_clean: Matrix<T>,
    pub d_augmented: Matrix<T>,
}

/// Student-to-student distillation for the student owning `own`:
/// `D(p(B) ‖ p_peer(B)) + D(p(h_own(B)) ‖ p_peer(h_peer(B)))`, summed over `B`.
pub fn kd_students<T: Scalar>(
    own: ViewLogits<'_, T>,
    peer: ViewLogits<'_, T>,
    seen: &SeenClasses,
    tau: T,
    reduction: Reduction,
    tau_squared: bool,
) -> Result<KdGrad<T>> {
    let rows = own.clean.rows();
    if own.augmented.rows() != rows || peer.clean.rows() != rows || peer.augmented.rows() != rows {
        return Err(Error::Contract(format!(
            "kd_students needs one row per sample in every view: own {}+{}, peer {}+{}",
            rows,
            own.augmented.rows(),
            peer.clean.rows(),
            peer.augmented.rows()
        )));
    }
    let clean = kl_from_logits(own.clean, peer.clean, seen, tau, reduction, tau_squared)?;
    let cross = kl_from_logits(own.augmented, peer.augmented, seen, tau, reduction, tau_squared)?;
    Ok(KdGrad {
        loss: clean.loss + cross.loss,
        d_clean: clean.dlogits,
        d_augmented: cross.dlogits,
    })
}

/// Workspace-to-student distillation over `B ∪ h_m(B)`; the workspace logits
/// must come from a forward pass on the same stacked inputs.
pub fn kd_gwm<T: Scalar>(
    student: &Matrix<T>,
    gwm: &Matrix<T>,
    seen: &SeenClasses,
    tau: T,
    reduction: Reduction,
    tau_squared: bool,
) -> Result<LossGrad<T>> {
    kl_from_logits(student, gwm, seen, tau, reduction, tau_squared)
}

/// The baseline loss of experience replay: plain CE on the ER-augmented
/// combined batch.
pub fn er_baseline_loss<T: Scalar>(
    logits: &Matrix<T>,
    labels: &[usize],
    seen: &SeenClasses,
    reduction: Reduction,
) -> Result<LossGrad<T>> {
    ce_loss(logits, labels, seen, reduction)
}

/// Raw loss values before the ablation flags and λ are applied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub baseline: f64,
    pub ce: f64,
    pub kd: f64,
    pub gwmkd: f64,
}

/// `total = baseline + ce + kd + λ·gwmkd`, zeroing what the flags switch off.
pub fn mcd_total(cfg: &LossConfig, c: LossComponents) -> LossBreakdown {
    let ce = if cfg.method_active() { c.ce } else { 0.0 };
    let kd = if cfg.enable_kd { c.kd } else { 0.0 };
    let gwmkd = if cfg.enable_gwmkd { c.gwmkd } else { 0.0 };
    LossBreakdown {
        baseline: c.baseline,
        ce,
        kd,
        gwmkd,
        total: c.baseline + ce + kd + cfg.lambda * gwmkd,
    }
}

/// Everything one student's objective needs, all as raw logits on the
/// combined batch `B` (memory samples included).
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a, T> {
    /// Student logits on the ER-augmented view of `B`.
    pub baseline_view: &'a Matrix<T>,
    /// Student logits on `B` and `h_m(B)`; required when the method is active.
    pub own: Option<ViewLogits<'a, T>>,
    /// Peer logits on `B` and `h_peer(B)`; required when KD is enabled.
    pub peer: Option<ViewLogits<'a, T>>,
    /// Workspace logits on `B` and `h_m(B)`; required when GWMKD is enabled.
    pub gwm: Option<ViewLogits<'a, T>>,
    pub labels: &'a [usize],
    pub seen: &'a SeenClasses,
}

/// Gradients matching the blocks of [`ObjectiveInputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGrads<T> {
    pub baseline_view: Matrix<T>,
    /// `(d_clean, d_augmented)`, present when the method is active.
    pub own: Option<(Matrix<T>, Matrix<T>)>,
}

fn missing(what: &str) -> Error {
    Error::Contract(format!("objective input `{what}` is required by the loss config"))
}

/// Full per-student objective and its gradient with respect to the student's
/// logits. Teacher logits are constants.
pub fn student_objective<T: Scalar>(
    cfg: &LossConfig,
    inputs: ObjectiveInputs<'_, T>,
) -> Result<(LossBreakdown, ObjectiveGrads<T>)> {
    let red = cfg.reduction();
    let tau = T::lit(cfg.tau);
    let seen = inputs.seen;
    let labels = inputs.labels;

    let base = er_baseline_loss(inputs.baseline_view, labels, seen, red)?;
    let mut comps = LossComponents {
        baseline: base.loss.as_f64(),
        ..Default::default()
    };

    let own_grads = if cfg.method_active() {
        let own = inputs.own.ok_or_else(|| missing("own"))?;
        let n = own.clean.rows();
        let stacked = Matrix::vstack(&[own.clean, own.augmented])?;
        let mut stacked_labels = Vec::with_capacity(2 * n);
        stacked_labels.extend_from_slice(labels);
        stacked_labels.extend_from_slice(labels);
        let ce = ce_loss(&stacked, &stacked_labels, seen, red)?;
        comps.ce = ce.loss.as_f64();
        let mut d = ce.dlogits;

        if cfg.enable_kd {
            let peer = inputs.peer.ok_or_else(|| missing("peer"))?;
            let kd = kd_students(own, peer, seen, tau, red, cfg.kd_tau_squared)?;
            comps.kd = kd.loss.as_f64();
            d.add_assign(&Matrix::vstack(&[&kd.d_clean, &kd.d_augmented])?)?;
        }
        if cfg.enable_gwmkd {
            let gwm = inputs.gwm.ok_or_else(|| missing("gwm"))?;
            let gwm_stacked = Matrix::vstack(&[gwm.clean, gwm.augmented])?;
            let g = kd_gwm(&stacked, &gwm_stacked, seen, tau, red, cfg.kd_tau_squared)?;
            comps.gwmkd = g.loss.as_f64();
            d.axpy(T::lit(cfg.lambda), &g.dlogits)?;
        }
        Some((d.slice_rows(0, n)?, d.slice_rows(n, 2 * n)?))
    } else {
        None
    };

    Ok((
        mcd_total(cfg, comps),
        ObjectiveGrads {
            baseline_view: base.dlogits,
            own: own_grads,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax_temp;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_logits(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap()
    }

    fn fd_check(f: impl Fn(&Matrix<f64>) -> f64, at: &Matrix<f64>, grad: &Matrix<f64>) {
        let h = 1e-5;
        for i in 0..at.len() {
            let mut p = at.clone();
            p.as_mut_slice()[i] += h;
            let mut m = at.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            let g = grad.as_slice()[i];
            assert!(
                (fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()) + 1e-6,
                "entry {i}: fd {fd} vs analytic {g}"
            );
        }
    }

    #[test]
    fn ce_uniform_logits() {
        let seen = SeenClasses::new(5, [0, 2, 3]).unwrap();
        let z = Matrix::<f64>::zeros(4, 5);
        let out = ce_loss(&z, &[0, 2, 3, 0], &seen, Reduction::Sum).unwrap();
        assert!((out.loss - 4.0 * 3f64.ln()).abs() < 1e-12);
        // masked columns carry no gradient
        assert!((0..4).all(|r| out.dlogits.get(r, 1) == 0.0 && out.dlogits.get(r, 4) == 0.0));
    }

    #[test]
    fn ce_large_margin_goes_to_zero() {
        let seen = SeenClasses::all(3).unwrap();
        let z = Matrix::from_rows(&[[50.0, 0.0, 0.0]]).unwrap();
        let out = ce_loss(&z, &[0], &seen, Reduction::Sum).unwrap();
        assert!(out.loss < 1e-20);
    }

    #[test]
    fn ce_matches_direct_formula() {
        let seen = SeenClasses::all(3).unwrap();
        let z = rand_logits(4, 3, 1);
        let labels = [2, 0, 1, 1];
        let out = ce_loss(&z, &labels, &seen, Reduction::Sum).unwrap();
        let direct: f64 = (0..4)
            .map(|r| {
                let denom: f64 = z.row(r).iter().map(|v| v.exp()).sum();
                -(z.get(r, labels[r]).exp() / denom).ln()
            })
            .sum();
        assert!((out.loss - direct).abs() < 1e-12);
        fd_check(
            |m| ce_loss(m, &labels, &seen, Reduction::Sum).unwrap().loss,
            &z,
            &out.dlogits,
        );
    }

    #[test]
    fn ce_masked_equals_sliced() {
        let z = rand_logits(3, 4, 2);
        let seen = SeenClasses::new(4, [0, 2]).unwrap();
        let labels = [2, 0, 2];
        let masked = ce_loss(&z, &labels, &seen, Reduction::Sum).unwrap().loss;
        let sliced = Matrix::from_rows(
            &(0..3).map(|r| [z.get(r, 0), z.get(r, 2)]).collect::<Vec<_>>(),
        )
        .unwrap();
        let sliced_labels = [1, 0, 1];
        let all = SeenClasses::all(2).unwrap();
        let direct = ce_loss(&sliced, &sliced_labels, &all, Reduction::Sum).unwrap().loss;
        assert!((masked - direct).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_unseen_label() {
        let seen = SeenClasses::new(3, [0, 1]).unwrap();
        let err = ce_loss(&Matrix::<f64>::zeros(1, 3), &[2], &seen, Reduction::Sum);
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn ce_mean_reduction_scales() {
        let seen = SeenClasses::all(3).unwrap();
        let z = rand_logits(4, 3, 3);
        let labels = [0, 1, 2, 0];
        let s = ce_loss(&z, &labels, &seen, Reduction::Sum).unwrap();
        let m = ce_loss(&z, &labels, &seen, Reduction::Mean).unwrap();
        assert!((s.loss / 4.0 - m.loss).abs() < 1e-14);
    }

    #[test]
    fn kl_examples() {
        let p = Matrix::from_rows(&[[0.2, 0.8]]).unwrap();
        assert_eq!(kl_div(&p, &p).unwrap(), 0.0);

        let p = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let q = Matrix::from_rows(&[[0.5, 0.5]]).unwrap();
        assert!((kl_div(&p, &q).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let bad = Matrix::from_rows(&[[0.5, 0.6]]).unwrap();
        assert!(matches!(kl_div(&bad, &q), Err(Error::Data(_))));
    }

    #[test]
    fn kl_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mut rows_p = Vec::new();
            let mut rows_q = Vec::new();
            for _ in 0..3 {
                let a: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                let b: Vec<f64> = (0..4).map(|_| rng.random_range(0.01..1.0)).collect();
                let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
                rows_p.push(a.iter().map(|v| v / sa).collect::<Vec<_>>());
                rows_q.push(b.iter().map(|v| v / sb).collect::<Vec<_>>());
            }
            let p = Matrix::from_rows(&rows_p).unwrap();
            let q = Matrix::from_rows(&rows_q).unwrap();
            let direct: f64 = rows_p
                .iter()
                .zip(&rows_q)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * (x / y).ln()))
                .sum();
            assert!((kl_div(&p, &q).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_from_logits_agrees_with_probability_form() {
        let seen = SeenClasses::new(4, [0, 1, 3]).unwrap();
        let s = rand_logits(3, 4, 5);
        let t = rand_logits(3, 4, 6);
        let out = kl_from_logits(&s, &t, &seen, 2.0, Reduction::Sum, false).unwrap();
        let p = softmax_temp(&masked_logits(&s, &seen).unwrap(), 2.0).unwrap();
        let q = softmax_temp(&masked_logits(&t, &seen).unwrap(), 2.0).unwrap();
        assert!((out.loss - kl_div(&p, &q).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn kd_students_identical_is_zero() {
        let seen = SeenClasses::all(3).unwrap();
        let z = rand_logits(4, 3, 7);
        let v = ViewLogits { clean: &z, augmented: &z };
        let out = kd_students(v, v, &seen, 4.0, Reduction::Sum, false).unwrap();
        assert!(out.loss.abs() < 1e-14);
        assert!(out.d_clean.as_slice().iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn kd_students_gradient_and_stop_gradient() {
        let seen = SeenClasses::all(2).unwrap();
        let own_c = rand_logits(3, 2, 8);
        let own_a = rand_logits(3, 2, 9);
        let peer_c = rand_logits(3, 2, 10);
        let peer_a = rand_logits(3, 2, 11);
        let run = |oc: &Matrix<f64>, oa: &Matrix<f64>, pc: &Matrix<f64>| {
            kd_students(
                ViewLogits { clean: oc, augmented: oa },
                ViewLogits { clean: pc, augmented: &peer_a },
                &seen,
                4.0,
                Reduction::Sum,
                false,
            )
            .unwrap()
        };
        let out = run(&own_c, &own_a, &peer_c);
        fd_check(|m| run(m, &own_a, &peer_c).loss, &own_c, &out.d_clean);
        fd_check(|m| run(&own_c, m, &peer_c).loss, &own_a, &out.d_augmented);

        // moving the peer changes the loss but the result only ever carries
        // gradients shaped like the student's own views
        let moved = peer_c.map(|v| v + 0.7 * v.signum());
        let out2 = run(&own_c, &own_a, &moved);
        assert!((out2.loss - out.loss).abs() > 1e-6);
        assert_eq!(out2.d_clean.shape(), own_c.shape());
    }

    #[test]
    fn kd_students_view_count_mismatch() {
        let seen = SeenClasses::all(2).unwrap();
        let a = rand_logits(3, 2, 1);
        let b = rand_logits(2, 2, 2);
        let err = kd_students(
            ViewLogits { clean: &a, augmented: &a },
            ViewLogits { clean: &a, augmented: &b },
            &seen,
            1.0,
            Reduction::Sum,
            false,
        );
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn kd_gwm_zero_when_equal_and_gradient_checks() {
        let seen = SeenClasses::new(4, [1, 2, 3]).unwrap();
        let s = rand_logits(4, 4, 12);
        assert!(kd_gwm(&s, &s, &seen, 4.0, Reduction::Sum, false).unwrap().loss.abs() < 1e-14);
        let g = rand_logits(4, 4, 13);
        let out = kd_gwm(&s, &g, &seen, 4.0, Reduction::Sum, false).unwrap();
        fd_check(
            |m| kd_gwm(m, &g, &seen, 4.0, Reduction::Sum, false).unwrap().loss,
            &s,
            &out.dlogits,
        );
        let sq = kd_gwm(&s, &g, &seen, 4.0, Reduction::Sum, true).unwrap();
        assert!((sq.loss - 16.0 * out.loss).abs() < 1e-12);
    }

    #[test]
    fn huge_temperature_kills_kd() {
        let seen = SeenClasses::all(5).unwrap();
        let s = rand_logits(4, 5, 14).scale(5.0);
        let t = rand_logits(4, 5, 15).scale(5.0);
        let out = kl_from_logits(&s, &t, &seen, 1e6, Reduction::Sum, false).unwrap();
        assert!(out.loss.abs() < 1e-6);
    }

    #[test]
    fn mcd_composition() {
        let comps = LossComponents {
            baseline: 4.0,
            ce: 1.0,
            kd: 2.0,
            gwmkd: 3.0,
        };
        let cfg = LossConfig {
            lambda: 0.5,
            ..LossConfig::default()
        };
        assert!((mcd_total(&cfg, comps).total - 8.5).abs() < 1e-15);

        let off = LossConfig {
            enable_kd: false,
            enable_fuse: false,
            enable_gwmkd: false,
            ..cfg.clone()
        };
        let b = mcd_total(&off, comps);
        assert_eq!(b.total, 4.0);
        assert_eq!((b.ce, b.kd, b.gwmkd), (0.0, 0.0, 0.0));

        let lambda0 = LossConfig {
            lambda: 0.0,
            ..cfg.clone()
        };
        let no_gwmkd = LossConfig {
            enable_gwmkd: false,
            ..cfg
        };
        assert_eq!(mcd_total(&lambda0, comps).total, mcd_total(&no_gwmkd, comps).total);
    }

    #[test]
    fn lambda_scales_gwmkd_contribution_exactly() {
        let seen = SeenClasses::all(3).unwrap();
        let labels = [0, 1, 2];
        let (bv, oc, oa, pc, pa, gc, ga) = (
            rand_logits(3, 3, 20),
            rand_logits(3, 3, 21),
            rand_logits(3, 3, 22),
            rand_logits(3, 3, 23),
            rand_logits(3, 3, 24),
            rand_logits(3, 3, 25),
            rand_logits(3, 3, 26),
        );
        let inputs = ObjectiveInputs {
            baseline_view: &bv,
            own: Some(ViewLogits { clean: &oc, augmented: &oa }),
            peer: Some(ViewLogits { clean: &pc, augmented: &pa }),
            gwm: Some(ViewLogits { clean: &gc, augmented: &ga }),
            labels: &labels,
            seen: &seen,
        };
        let with = |lambda| {
            let cfg = LossConfig {
                lambda,
                ..LossConfig::default()
            };
            student_objective(&cfg, inputs).unwrap().0
        };
        let (a, b) = (with(0.0), with(2.5));
        assert!((b.total - a.total - 2.5 * b.gwmkd).abs() < 1e-10);
        let direct = kd_gwm(
            &Matrix::vstack(&[&oc, &oa]).unwrap(),
            &Matrix::vstack(&[&gc, &ga]).unwrap(),
            &seen,
            4.0,
            Reduction::Sum,
            false,
        )
        .unwrap();
        assert!((b.gwmkd - direct.loss).abs() < 1e-12);
    }

    #[test]
    fn objective_requires_views_when_active() {
        let seen = SeenClasses::all(2).unwrap();
        let bv = rand_logits(2, 2, 1);
        let inputs = ObjectiveInputs {
            baseline_view: &bv,
            own: None,
            peer: None,
            gwm: None,
            labels: &[0, 1],
            seen: &seen,
        };
        assert!(student_objective(&LossConfig::default(), inputs).is_err());
        let off = LossConfig {
            enable_kd: false,
            enable_fuse: false,
            enable_gwmkd: false,
            ..LossConfig::default()
        };
        let (b, g) = student_objective(&off, inputs).unwrap();
        assert_eq!(b.total, b.baseline);
        assert!(g.own.is_none());
    }

    #[test]
    fn config_validation() {
        let bad = LossConfig {
            tau: 0.0,
            ..LossConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config { field, .. }) if field == "loss.tau"));
        let bad = LossConfig {
            lambda: -1.0,
            ..LossConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(seed in 0u64..10_000, tau in 0.1f64..20.0) {
            let seen = SeenClasses::all(4).unwrap();
            let s = rand_logits(3, 4, seed).scale(4.0);
            let t = rand_logits(3, 4, seed + 1).scale(4.0);
            let out = kl_from_logits(&s, &t, &seen, tau, Reduction::Sum, false).unwrap();
            prop_assert!(out.loss >= -1e-12);
        }
    }
}
