//! Pose refinement: coarse docking over all seven degrees of freedom with a
//! bounded rotation increment, followed by fine anchoring on translation
//! and scale only with penetration and drift penalties switched on.

mod losses;
mod pose;
mod scene;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::align::Phase1Result;
use crate::error::{Error, Result};
use crate::geometry::{BinaryMask, CameraView, PointCloud, Sim3Transform, TriangleMesh, Vec3};
use crate::scalar::Real;
use crate::spatial::KdTree;

pub use losses::{
    chamfer_loss, corner_loss, mask_loss, mask_value, reg_terms, sdf_penetration_loss, LossValue, MaskFdSteps,
    RegTerms, SdfLoss,
};
pub use pose::{PoseGrad, PoseParams};
pub use scene::{SceneSurface, MIN_NORMAL_NEIGHBORS, NORMAL_NEIGHBORS};

/// Step halvings tried before an iteration gives up.
const MAX_HALVINGS: usize = 30;
/// Steps never grow beyond this multiple of their initial value.
const MAX_STEP_GROWTH: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub lambda_geo: f64,
    pub lambda_mask: f64,
    pub lambda_sdf: f64,
    /// Weights of the rotation, translation and log-scale drift penalties.
    pub reg_weights: [f64; 3],
    pub rotation_cone_deg: f64,
    pub coarse_iters: usize,
    pub fine_iters: usize,
    /// Initial rotation step in radians.
    pub step_rot: f64,
    /// Initial translation step as a fraction of the target's bbox diagonal.
    pub step_trans: f64,
    pub step_log_scale: f64,
    /// Finite-difference step for gradient checks.
    pub fd_epsilon: f64,
    /// Finite-difference steps for the mask term; translation is relative
    /// to the target's bbox diagonal.
    pub mask_fd: MaskFdSteps,
    pub sample_count: usize,
    pub normal_neighbors: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            lambda_geo: 1.0,
            lambda_mask: 0.5,
            lambda_sdf: 10.0,
            reg_weights: [1.0, 1.0, 1.0],
            rotation_cone_deg: 10.0,
            coarse_iters: 200,
            fine_iters: 200,
            step_rot: 0.02,
            step_trans: 0.01,
            step_log_scale: 0.01,
            fd_epsilon: 1e-5,
            mask_fd: MaskFdSteps { rot: 0.01, trans: 0.01, log_scale: 0.01 },
            sample_count: 1024,
            normal_neighbors: NORMAL_NEIGHBORS,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_geo, self.lambda_mask, self.lambda_sdf].into_iter().chain(self.reg_weights);
        for w in weights {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidArgument(format!("loss weight {w} must be finite and >= 0")));
            }
        }
        if !(0.0..=180.0).contains(&self.rotation_cone_deg) {
            return Err(Error::InvalidArgument(format!(
                "rotation_cone_deg {} outside [0, 180]",
                self.rotation_cone_deg
            )));
        }
        let steps = [
            self.step_rot,
            self.step_trans,
            self.step_log_scale,
            self.fd_epsilon,
            self.mask_fd.rot,
            self.mask_fd.trans,
            self.mask_fd.log_scale,
        ];
        if steps.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::InvalidArgument("step sizes must be finite and positive".into()));
        }
        if self.sample_count == 0 {
            return Err(Error::InvalidArgument("sample_count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Coarse,
    Fine,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        }
    }

    /// Which of the seven parameters move in this stage.
    pub fn active(self) -> [bool; 7] {
        match self {
            Stage::Coarse => [true; 7],
            Stage::Fine => [false, false, false, true, true, true, true],
        }
    }
}

/// Unweighted loss terms. Terms gated off in a stage are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_cd: f64,
    pub l_corner: f64,
    pub l_mask: f64,
    pub l_sdf: f64,
    pub r_q: f64,
    pub r_t: f64,
    pub r_s: f64,
}

impl LossTerms {
    /// Each term multiplied by its weight, in field order.
    pub fn weighted(&self, cfg: &RefineConfig) -> [f64; 7] {
        [
            cfg.lambda_geo * self.l_cd,
            cfg.lambda_geo * self.l_corner,
            cfg.lambda_mask * self.l_mask,
            cfg.lambda_sdf * self.l_sdf,
            cfg.reg_weights[0] * self.r_q,
            cfg.reg_weights[1] * self.r_t,
            cfg.reg_weights[2] * self.r_s,
        ]
    }

    pub fn is_finite(&self) -> bool {
        [self.l_cd, self.l_corner, self.l_mask, self.l_sdf, self.r_q, self.r_t, self.r_s].iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub stage: Stage,
    pub total: f64,
    #[serde(flatten)]
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineTrace {
    pub records: Vec<TraceRecord>,
}

impl RefineTrace {
    pub const CSV_HEADER: &'static str = "iteration,stage,total,l_cd,l_corner,l_mask,l_sdf,r_q,r_t,r_s";

    pub fn stage(&self, stage: Stage) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let t = &r.terms;
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.iteration,
                r.stage.as_str(),
                r.total,
                t.l_cd,
                t.l_corner,
                t.l_mask,
                t.l_sdf,
                t.r_q,
                t.r_t,
                t.r_s
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation<T> {
    pub total: T,
    pub terms: LossTerms,
    pub grad: PoseGrad<T>,
    pub unsigned_fallbacks: usize,
}

/// Everything the objective needs, precomputed once per refinement.
pub struct Objective<'a, T> {
    mesh: &'a TriangleMesh<T>,
    samples: Vec<Vec3<T>>,
    target_tree: KdTree<T>,
    target_corners: [Vec3<T>; 8],
    scene: Option<&'a SceneSurface<T>>,
    views: &'a [(CameraView<T>, BinaryMask)],
    cfg: RefineConfig,
    extent: T,
}

impl<'a, T: Real> Objective<'a, T> {
    /// `target` drives the geometric terms, `scene` the penetration term
    /// (skipped when `None`) and `views` the mask term (skipped when empty).
    pub fn new(
        mesh: &'a TriangleMesh<T>,
        target: &PointCloud<T>,
        scene: Option<&'a SceneSurface<T>>,
        views: &'a [(CameraView<T>, BinaryMask)],
        cfg: &RefineConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        target.require_non_empty("target cloud")?;
        if mesh.faces().is_empty() {
            return Err(Error::Empty("mesh has no faces"));
        }
        let samples = mesh.sample_surface(cfg.sample_count, cfg.seed).points().to_vec();
        let (lo, hi) = target.aabb().expect("non-empty");
        let extent = (hi - lo).norm().max(T::epsilon());
        Ok(Self {
            mesh,
            samples,
            target_tree: KdTree::build(target.points()),
            target_corners: target.aabb_corners()?,
            scene,
            views,
            cfg: cfg.clone(),
            extent,
        })
    }

    pub fn config(&self) -> &RefineConfig {
        &self.cfg
    }

    /// Scale used for relative translation steps.
    pub fn extent(&self) -> T {
        self.extent
    }

    fn mask_steps(&self) -> MaskFdSteps {
        MaskFdSteps { trans: self.cfg.mask_fd.trans * self.extent.as_f64(), ..self.cfg.mask_fd }
    }

    /// Stage objective at `pose`. `anchor` is required in the fine stage.
    /// The gradient is only filled in when `with_grad` is set.
    pub fn evaluate(
        &self,
        pose: &PoseParams<T>,
        stage: Stage,
        anchor: Option<&PoseParams<T>>,
        with_grad: bool,
    ) -> Result<Evaluation<T>> {
        let cfg = &self.cfg;
        let w = |x: f64| T::lit(x);
        let mut terms = LossTerms::default();
        let mut total = T::zero();
        let mut grad = PoseGrad::zero();
        let mut fallbacks = 0;

        let cd = losses::chamfer_with_tree(&self.samples, &self.target_tree, pose);
        let corner = losses::corner_with_target(self.mesh.vertices(), &self.target_corners, pose);
        terms.l_cd = cd.value.as_f64();
        terms.l_corner = corner.value.as_f64();
        total += w(cfg.lambda_geo) * (cd.value + corner.value);
        grad = grad + (cd.grad + corner.grad) * w(cfg.lambda_geo);

        if !self.views.is_empty() {
            let mask = if with_grad && cfg.lambda_mask > 0.0 {
                mask_loss(self.mesh, pose, self.views, &self.mask_steps(), stage.active())?
            } else {
                LossValue { value: mask_value(self.mesh, pose, self.views)?, grad: PoseGrad::zero() }
            };
            terms.l_mask = mask.value.as_f64();
            total += w(cfg.lambda_mask) * mask.value;
            grad = grad + mask.grad * w(cfg.lambda_mask);
        }

        if stage == Stage::Fine {
            if let Some(scene) = self.scene {
                let sdf = losses::sdf_on_samples(&self.samples, scene, pose);
                terms.l_sdf = sdf.loss.value.as_f64();
                fallbacks = sdf.unsigned_fallbacks;
                total += w(cfg.lambda_sdf) * sdf.loss.value;
                grad = grad + sdf.loss.grad * w(cfg.lambda_sdf);
            }
            let anchor = anchor.ok_or_else(|| Error::InvalidArgument("fine stage needs an anchor pose".into()))?;
            let reg = reg_terms(pose, anchor);
            terms.r_q = reg.rot.value.as_f64();
            terms.r_t = reg.trans.value.as_f64();
            terms.r_s = reg.scale.value.as_f64();
            let [wq, wt, ws] = cfg.reg_weights.map(w);
            total += wq * reg.rot.value + wt * reg.trans.value + ws * reg.scale.value;
            grad = grad + reg.rot.grad * wq + reg.trans.grad * wt + reg.scale.grad * ws;
        }

        let active = stage.active();
        let mut g = grad.to_array();
        for (gi, a) in g.iter_mut().zip(active) {
            if !a {
                *gi = T::zero();
            }
        }
        Ok(Evaluation { total, terms, grad: PoseGrad::from_array(g), unsigned_fallbacks: fallbacks })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome<T> {
    pub transform: Sim3Transform<T>,
    pub params: PoseParams<T>,
    /// Pose at the end of the coarse stage, which the fine stage starts from.
    pub coarse: PoseParams<T>,
    pub trace: RefineTrace,
    /// Set when optimization stopped on a non-finite loss; the transform is
    /// then the last pose with a finite loss.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Copy)]
struct Steps {
    rot: f64,
    trans: f64,
    log_scale: f64,
}

impl Steps {
    fn scaled(self, f: f64) -> Self {
        Self { rot: self.rot * f, trans: self.trans * f, log_scale: self.log_scale * f }
    }

    fn capped(self, cap: Self) -> Self {
        Self {
            rot: self.rot.min(cap.rot),
            trans: self.trans.min(cap.trans),
            log_scale: self.log_scale.min(cap.log_scale),
        }
    }
}

fn unit_block<T: Real>(v: Vec3<T>) -> Vec3<T> {
    let n = v.norm();
    if n > T::zero() {
        v / n
    } else {
        Vec3::zero()
    }
}

/// One normalized per-block descent step; the rotation increment is then
/// projected back into the cone around the locked rotation.
fn descend<T: Real>(pose: &PoseParams<T>, g: &PoseGrad<T>, steps: Steps, cone: T) -> PoseParams<T> {
    let ls = if g.log_scale > T::zero() {
        -T::one()
    } else if g.log_scale < T::zero() {
        T::one()
    } else {
        T::zero()
    };
    let delta = PoseGrad {
        rot: -unit_block(g.rot) * T::lit(steps.rot),
        t: -unit_block(g.t) * T::lit(steps.trans),
        log_scale: ls * T::lit(steps.log_scale),
    };
    let mut next = pose.stepped(&delta);
    let n = next.rot.norm();
    // A frozen rotation is left bit-for-bit alone, even at the cone's edge.
    if n > cone && delta.rot.norm() > T::zero() {
        next.rot = next.rot * (cone / n);
    }
    next
}

struct Runner<'o, 'a, T> {
    objective: &'o Objective<'a, T>,
    trace: RefineTrace,
    iteration: usize,
}

impl<T: Real> Runner<'_, '_, T> {
    fn record(&mut self, stage: Stage, e: &Evaluation<T>) {
        self.trace.records.push(TraceRecord {
            iteration: self.iteration,
            stage,
            total: e.total.as_f64(),
            terms: e.terms,
        });
    }

    /// Runs one stage; returns the final pose or the abort reason with the
    /// last finite pose.
    fn stage(
        &mut self,
        mut pose: PoseParams<T>,
        stage: Stage,
        iters: usize,
        anchor: Option<&PoseParams<T>>,
    ) -> Result<(PoseParams<T>, Option<String>)> {
        let cfg = self.objective.config();
        let init = Steps {
            rot: cfg.step_rot,
            trans: cfg.step_trans * self.objective.extent().as_f64(),
            log_scale: cfg.step_log_scale,
        };
        let cap = init.scaled(MAX_STEP_GROWTH);
        let cone = T::lit(cfg.rotation_cone_deg.to_radians());
        let mut steps = init;

        let mut cur = self.objective.evaluate(&pose, stage, anchor, iters > 0)?;
        if !cur.total.is_finite() || !cur.terms.is_finite() {
            return Ok((pose, Some(format!("non-finite {} loss at stage entry", stage.as_str()))));
        }
        if cur.unsigned_fallbacks > 0 {
            log::warn!("{} samples fell back to unsigned clearance", cur.unsigned_fallbacks);
        }
        self.record(stage, &cur);
        for _ in 0..iters {
            let mut accepted = false;
            for _ in 0..MAX_HALVINGS {
                let cand = descend(&pose, &cur.grad, steps, cone);
                if cand == pose {
                    break;
                }
                let e = self.objective.evaluate(&cand, stage, anchor, false)?;
                if !e.total.is_finite() || !e.terms.is_finite() || !cand.is_finite() {
                    return Ok((
                        pose,
                        Some(format!("non-finite {} loss at iteration {}", stage.as_str(), self.iteration + 1)),
                    ));
                }
                if e.total < cur.total {
                    pose = cand;
                    steps = steps.scaled(1.25).capped(cap);
                    accepted = true;
                    break;
                }
                steps = steps.scaled(0.5);
            }
            if !accepted {
                break;
            }
            self.iteration += 1;
            cur = self.objective.evaluate(&pose, stage, anchor, true)?;
            self.record(stage, &cur);
        }
        Ok((pose, None))
    }
}

/// Two-stage refinement starting from `init`'s transform.
pub fn refine<T: Real>(
    mesh: &TriangleMesh<T>,
    target: &PointCloud<T>,
    scene: Option<&SceneSurface<T>>,
    views: &[(CameraView<T>, BinaryMask)],
    init: &Phase1Result<T>,
    cfg: &RefineConfig,
) -> Result<RefineOutcome<T>> {
    refine_from(mesh, target, scene, views, &init.transform, cfg)
}

/// [`refine`] from an arbitrary starting transform.
pub fn refine_from<T: Real>(
    mesh: &TriangleMesh<T>,
    target: &PointCloud<T>,
    scene: Option<&SceneSurface<T>>,
    views: &[(CameraView<T>, BinaryMask)],
    init: &Sim3Transform<T>,
    cfg: &RefineConfig,
) -> Result<RefineOutcome<T>> {
    let objective = Objective::new(mesh, target, scene, views, cfg)?;
    let mut runner = Runner { objective: &objective, trace: RefineTrace::default(), iteration: 0 };
    let start = PoseParams::from_sim3(init);

    let (coarse, aborted) = runner.stage(start, Stage::Coarse, cfg.coarse_iters, None)?;
    let finish = |params: PoseParams<T>, trace, aborted| RefineOutcome {
        transform: params.to_sim3(),
        params,
        coarse,
        trace,
        aborted,
    };
    if aborted.is_some() {
        return Ok(finish(coarse, runner.trace, aborted));
    }
    if cfg.fine_iters == 0 {
        return Ok(finish(coarse, runner.trace, None));
    }
    let (fine, aborted) = runner.stage(coarse, Stage::Fine, cfg.fine_iters, Some(&coarse))?;
    Ok(finish(fine, runner.trace, aborted))
}
