//! The shaped grasping reward: a weighted sum of six terms.
//!
//! | term          | meaning                                            | default weight |
//! |---------------|----------------------------------------------------|----------------|
//! | `r_distTips`  | `exp(-sum of hand-point to nearest key point)`     | 1              |
//! | `r_vector`    | mean alignment of hand normals with the object     | 1              |
//! | `r_contact`   | inner contact patches touching the object          | 2              |
//! | `r_topology`  | fraction of observed key points inside the hull    | 10             |
//! | `p_collision` | outer finger links touching the object             | -1             |
//! | `p_objVel`    | object translational speed                         | -2             |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactReport, ObjectState};
use crate::error::invalid;
use crate::geometry::{nearest_key_point_distance, HandKeyPoints, HullSlab, ObservedCloud};
use crate::{Result, Vec3};

/// Default weights `(w1..w6)`.
pub const DEFAULT_WEIGHTS: [f64; 6] = [1.0, 1.0, 2.0, 10.0, -1.0, -2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RewardTerm {
    DistTips,
    Vector,
    Contact,
    Topology,
    Collision,
    ObjVel,
}

impl RewardTerm {
    pub const ALL: [RewardTerm; 6] = [
        RewardTerm::DistTips,
        RewardTerm::Vector,
        RewardTerm::Contact,
        RewardTerm::Topology,
        RewardTerm::Collision,
        RewardTerm::ObjVel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardTerm::DistTips => "r_distTips",
            RewardTerm::Vector => "r_vector",
            RewardTerm::Contact => "r_contact",
            RewardTerm::Topology => "r_topology",
            RewardTerm::Collision => "p_collision",
            RewardTerm::ObjVel => "p_objVel",
        }
    }
}

impl fmt::Display for RewardTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardTerm {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        // Accept the names with or without their `r_` / `p_` prefix.
        let norm = |n: &str| {
            let n = n.to_ascii_lowercase();
            let n = n.strip_prefix("r_").or_else(|| n.strip_prefix("p_")).unwrap_or(&n).to_string();
            n.replace(['_', '-'], "")
        };
        let key = norm(s);
        RewardTerm::ALL
            .into_iter()
            .find(|t| norm(t.name()) == key)
            .ok_or_else(|| invalid(format!("unknown reward term `{s}`")))
    }
}

/// Term weights plus an enable mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub weights: [f64; 6],
    pub enabled: [bool; 6],
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { weights: DEFAULT_WEIGHTS, enabled: [true; 6] }
    }
}

impl RewardWeights {
    pub fn without(mut self, term: RewardTerm) -> Self {
        self.enabled[term.index()] = false;
        self
    }

    /// Only `term` enabled.
    pub fn only(term: RewardTerm) -> Self {
        let mut w = Self::default();
        w.enabled = [false; 6];
        w.enabled[term.index()] = true;
        w
    }

    pub fn scaled(mut self, alpha: f64) -> Self {
        for w in &mut self.weights {
            *w *= alpha;
        }
        self
    }

    pub fn effective(&self, term: RewardTerm) -> f64 {
        if self.enabled[term.index()] {
            self.weights[term.index()]
        } else {
            0.0
        }
    }
}

/// The six raw term values and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub dist_tips: f64,
    pub vector: f64,
    pub contact: f64,
    pub topology: f64,
    pub collision: f64,
    pub obj_vel: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn from_terms(weights: &RewardWeights, terms: [f64; 6]) -> Self {
        let total = RewardTerm::ALL
            .iter()
            .filter(|t| weights.enabled[t.index()])
            .map(|t| weights.weights[t.index()] * terms[t.index()])
            .sum();
        Self {
            dist_tips: terms[0],
            vector: terms[1],
            contact: terms[2],
            topology: terms[3],
            collision: terms[4],
            obj_vel: terms[5],
            total,
        }
    }

    pub fn terms(&self) -> [f64; 6] {
        [self.dist_tips, self.vector, self.contact, self.topology, self.collision, self.obj_vel]
    }
}

/// `exp(-sum_i min_j |X_i - Y_j|)` over the four hand key points.
pub fn r_dist_tips(hand: &HandKeyPoints, cloud: &ObservedCloud) -> Result<f64> {
    let mut sum = 0.0;
    for p in &hand.positions {
        sum += nearest_key_point_distance(*p, cloud)?;
    }
    Ok((-sum).exp())
}

/// Mean of `U_i . N_i` where `U_i` is the unit vector from hand point `i` to
/// the estimated object centre. A hand point within 1e-9 m of the centre
/// contributes 0.
pub fn r_vector(hand: &HandKeyPoints, estimated_center: Vec3) -> f64 {
    hand.positions
        .iter()
        .zip(&hand.normals)
        .map(|(x, n)| {
            let u = estimated_center - x;
            let d = u.norm();
            if d <= 1e-9 {
                0.0
            } else {
                u.dot(n) / d
            }
        })
        .sum::<f64>()
        / 4.0
}

/// Fraction of the observed key points enclosed by the hand hull slab.
pub fn r_topology(slab: &HullSlab, cloud: &ObservedCloud) -> f64 {
    if cloud.is_empty() || slab.hull.degenerate {
        return 0.0;
    }
    slab.count_enclosed(&cloud.points) as f64 / cloud.len() as f64
}

/// `(r_contact, p_collision) = (n_con, n_c)`.
pub fn contact_terms(report: &ContactReport) -> (f64, f64) {
    (report.n_con as f64, report.n_c as f64)
}

/// Translational speed of the object.
pub fn p_obj_vel(obj: &ObjectState) -> f64 {
    obj.velocity.vx.hypot(obj.velocity.vy)
}

/// Evaluate all six terms and the weighted total.
pub fn total_reward(
    weights: &RewardWeights,
    hand: &HandKeyPoints,
    cloud: &ObservedCloud,
    slab: &HullSlab,
    report: &ContactReport,
    obj: &ObjectState,
) -> Result<RewardBreakdown> {
    let (contact, collision) = contact_terms(report);
    let terms = [
        r_dist_tips(hand, cloud)?,
        r_vector(hand, cloud.estimated_center),
        contact,
        r_topology(slab, cloud),
        collision,
        p_obj_vel(obj),
    ];
    Ok(RewardBreakdown::from_terms(weights, terms))
}
