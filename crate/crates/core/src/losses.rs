//! Pose regression loss with learnable balance factors and the
//! window-level loss with relative-pose (geometric) constraints.
//!
//! `h(P, P̂) = |p - p̂|₁·e^(-β) + β + |w - ŵ|₁·e^(-γ) + γ`, where `w` is the
//! log-quaternion. A window of `N` frames contributes `N` global terms and
//! `N - 1` terms on the relative transforms between consecutive frames.

use serde::{Deserialize, Serialize};

use crate::dual::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::pose::{exp_generic, log_generic, relative_generic, LogPose, Pose};

/// Learnable log-scale weights for the translation (`beta`) and rotation
/// (`gamma`) residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBalance {
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossBalance {
    fn default() -> Self {
        Self { beta: 0.0, gamma: -3.0 }
    }
}

impl LossBalance {
    pub fn new(beta: f64, gamma: f64) -> Self {
        Self { beta, gamma }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.gamma.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    /// Include the relative-pose terms.
    pub geometric_constraints: bool,
    /// Learn a separate balance pair for the relative terms.
    pub separate_relative_balance: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            geometric_constraints: true,
            separate_relative_balance: false,
        }
    }
}

/// Loss components of one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowLoss {
    pub global: f64,
    pub relative: f64,
    pub total: f64,
    pub global_terms: usize,
    pub relative_terms: usize,
}

/// Window loss plus its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowLossGrad {
    pub loss: WindowLoss,
    /// `d total / d prediction` per frame: translation, then log-rotation.
    pub d_preds: Vec<[f64; 6]>,
    /// `d total / d (beta, gamma)` for the global balance pair.
    pub d_global_balance: [f64; 2],
    /// Same for the relative pair; zero when the pair is shared.
    pub d_relative_balance: [f64; 2],
}

fn h_generic<S: Scalar>(pred: &[S; 6], gt: &[S; 6], beta: S, gamma: S) -> S {
    let mut tp = S::zero();
    let mut tr = S::zero();
    for k in 0..3 {
        tp += (pred[k] - gt[k]).abs();
        tr += (pred[k + 3] - gt[k + 3]).abs();
    }
    tp * (-beta).exp() + beta + tr * (-gamma).exp() + gamma
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite {what}")))
    }
}

pub fn vanilla_loss_h(pred: &LogPose, gt: &LogPose, bal: &LossBalance) -> Result<f64> {
    check_finite(&pred.to_array(), "prediction")?;
    check_finite(&gt.to_array(), "ground truth")?;
    check_finite(&[bal.beta, bal.gamma], "balance factor")?;
    Ok(h_generic(&pred.to_array(), &gt.to_array(), bal.beta, bal.gamma))
}

/// Relative transform between consecutive log-poses, re-encoded as a log-pose.
fn relative_log<S: Scalar>(a: &[S; 6], b: &[S; 6]) -> [S; 6] {
    let pa = ([a[0], a[1], a[2]], exp_generic([a[3], a[4], a[5]]));
    let pb = ([b[0], b[1], b[2]], exp_generic([b[3], b[4], b[5]]));
    let (t, q) = relative_generic(pa, pb);
    let w = log_generic(q);
    [t[0], t[1], t[2], w[0], w[1], w[2]]
}

fn window_loss_generic<S: Scalar>(
    preds: &[[S; 6]],
    gts: &[[S; 6]],
    global: (S, S),
    relative: (S, S),
    gc: bool,
) -> (S, S) {
    let mut lg = S::zero();
    for (p, g) in preds.iter().zip(gts) {
        lg += h_generic(p, g, global.0, global.1);
    }
    let mut lr = S::zero();
    if gc {
        for i in 0..preds.len().saturating_sub(1) {
            let q = relative_log(&preds[i], &preds[i + 1]);
            let q_gt = relative_log(&gts[i], &gts[i + 1]);
            lr += h_generic(&q, &q_gt, relative.0, relative.1);
        }
    }
    (lg, lr)
}

fn prepare(preds: &[LogPose], gt: &[Pose]) -> Result<Vec<[f64; 6]>> {
    if preds.len() != gt.len() {
        return Err(Error::domain(format!(
            "{} predictions for a window of {} frames",
            preds.len(),
            gt.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::domain("empty window"));
    }
    for p in preds {
        check_finite(&p.to_array(), "prediction")?;
    }
    gt.iter().map(|p| Ok(p.to_log()?.to_array())).collect()
}

fn resolve(settings: &LossSettings, global: &LossBalance, relative: Option<&LossBalance>) -> LossBalance {
    match (settings.separate_relative_balance, relative) {
        (true, Some(r)) => *r,
        _ => *global,
    }
}

/// Window loss with one shared balance pair.
pub fn sequence_loss(preds: &[LogPose], gt: &[Pose], bal: &LossBalance, settings: &LossSettings) -> Result<WindowLoss> {
    sequence_loss_with(preds, gt, bal, None, settings)
}

/// Window loss; `relative` is used only with `separate_relative_balance`.
pub fn sequence_loss_with(
    preds: &[LogPose],
    gt: &[Pose],
    global: &LossBalance,
    relative: Option<&LossBalance>,
    settings: &LossSettings,
) -> Result<WindowLoss> {
    let gts = prepare(preds, gt)?;
    let p: Vec<[f64; 6]> = preds.iter().map(LogPose::to_array).collect();
    let rel = resolve(settings, global, relative);
    let (lg, lr) = window_loss_generic(
        &p,
        &gts,
        (global.beta, global.gamma),
        (rel.beta, rel.gamma),
        settings.geometric_constraints,
    );
    Ok(WindowLoss {
        global: lg,
        relative: lr,
        total: lg + lr,
        global_terms: p.len(),
        relative_terms: if settings.geometric_constraints { p.len() - 1 } else { 0 },
    })
}

/// Window loss and its exact gradients, by forward-mode differentiation.
pub fn sequence_loss_grad(
    preds: &[LogPose],
    gt: &[Pose],
    global: &LossBalance,
    relative: Option<&LossBalance>,
    settings: &LossSettings,
) -> Result<WindowLossGrad> {
    let loss = sequence_loss_with(preds, gt, global, relative, settings)?;
    let gts: Vec<[Dual; 6]> = prepare(preds, gt)?
        .iter()
        .map(|g| g.map(Dual::cst))
        .collect();
    let base: Vec<[f64; 6]> = preds.iter().map(LogPose::to_array).collect();
    let rel = resolve(settings, global, relative);
    let separate = settings.separate_relative_balance && relative.is_some();
    let n_in = base.len() * 6 + 4;
    let mut grad = vec![0.0; n_in];
    for (k, g) in grad.iter_mut().enumerate() {
        let seed = |idx: usize, v: f64| if idx == k { Dual::var(v) } else { Dual::cst(v) };
        let p: Vec<[Dual; 6]> = base
            .iter()
            .enumerate()
            .map(|(f, a)| std::array::from_fn(|c| seed(f * 6 + c, a[c])))
            .collect();
        let o = base.len() * 6;
        let gb = (seed(o, global.beta), seed(o + 1, global.gamma));
        let rb = if separate {
            (seed(o + 2, rel.beta), seed(o + 3, rel.gamma))
        } else {
            gb
        };
        if !separate && k >= o + 2 {
            continue;
        }
        let (lg, lr) = window_loss_generic(&p, &gts, gb, rb, settings.geometric_constraints);
        *g = (lg + lr).eps;
    }
    let o = base.len() * 6;
    Ok(WindowLossGrad {
        loss,
        d_preds: (0..base.len()).map(|f| std::array::from_fn(|c| grad[f * 6 + c])).collect(),
        d_global_balance: [grad[o], grad[o + 1]],
        d_relative_balance: [grad[o + 2], grad[o + 3]],
    })
}
