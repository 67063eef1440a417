//! Pipeline variants on a synthetic scene: no alignment, initial
//! alignment only, refinement only, and both stages.

use serde::{Deserialize, Serialize};

use crate::align::{align_phase1, initial_guess, IcpConfig, OrientationCandidate, Phase1Result};
use crate::error::Result;
use crate::geometry::Sim3Transform;
use crate::metrics::iou_2d;
use crate::refine::{refine, refine_from, RefineConfig, RefineOutcome, SceneSurface};
use crate::scene::{SyntheticScene, OPTIMIZATION_VIEWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// The asset's own frame, untouched.
    None,
    Phase1Only,
    /// Refinement from a bounding-box placement with the canonical
    /// orientation.
    Phase2Only,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::None, Variant::Phase1Only, Variant::Phase2Only, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Phase1Only => "phase1_only",
            Self::Phase2Only => "phase2_only",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub icp: IcpConfig,
    pub refine: RefineConfig,
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub variant: Variant,
    pub transform: Sim3Transform<f64>,
    /// Mean silhouette IoU over the whole camera ring.
    pub iou_2d: f64,
    pub phase1: Option<Phase1Result<f64>>,
    pub refine: Option<RefineOutcome<f64>>,
}

pub fn run_variant(scene: &SyntheticScene, variant: Variant, cfg: &AblationConfig) -> Result<VariantOutcome> {
    let views = scene.view_pairs(&OPTIMIZATION_VIEWS);
    let surface =
        || SceneSurface::estimate(&scene.scene_points(), &scene.camera_centers(), cfg.refine.normal_neighbors);
    let (transform, phase1, refined) = match variant {
        Variant::None => (Sim3Transform::identity(), None, None),
        Variant::Phase1Only | Variant::Full => {
            let p1 = align_phase1(
                &scene.asset,
                &scene.monocular_target(),
                &views,
                Some(scene.reference_camera()),
                &cfg.icp,
            )?;
            if variant == Variant::Full {
                let surf = surface()?;
                let out = refine(&scene.asset, &scene.sparse_target(), Some(&surf), &views, &p1, &cfg.refine)?;
                (out.transform, Some(p1), Some(out))
            } else {
                (p1.transform, Some(p1), None)
            }
        }
        Variant::Phase2Only => {
            let target = scene.sparse_target();
            let init = initial_guess(&scene.asset, &OrientationCandidate::identity(), &target)?;
            let surf = surface()?;
            let out = refine_from(&scene.asset, &target, Some(&surf), &views, &init, &cfg.refine)?;
            (out.transform, None, Some(out))
        }
    };
    let iou = iou_2d(&scene.asset, &transform, &scene.all_view_pairs())?;
    Ok(VariantOutcome { variant, transform, iou_2d: iou, phase1, refine: refined })
}
