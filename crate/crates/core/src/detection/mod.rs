//! Box geometry, assignment, losses, suppression and AP evaluation.

mod ap;
mod boxes;
mod loss;
mod matching;
mod nms;

pub use ap::{ap50, ApReport, AP_IOU};
pub use boxes::{giou, iou, BBox, Detection, Label, Prediction};
pub use loss::{
    bbox_loss, bce_soft, focal_loss, graph_bce_sum, graph_box_terms, graph_focal_sum,
    match_cost, match_predictions, set_detection_loss, LossWeights, PredVars, PROB_CLAMP,
};
pub use matching::{hungarian_match, MatchResult};
pub use nms::nms;

pub const NMS_IOU: f64 = 0.5;
