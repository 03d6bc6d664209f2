//! Target objects, contact, grasp evaluation and placement.
//!
//! Space is one reach axis: the hand starts at 0, the object sits at
//! `object_x`, and the target zone is an interval further along the axis.

use serde::{Deserialize, Serialize};

use crate::hand::{GraspTable, GraspType, HandModel, HandState};
use crate::Error;

/// Close must be held this long after contact before the object counts as
/// held.
pub const SQUEEZE_HOLD_MS: f64 = 100.0;
/// Slack on aperture comparisons, in cm.
pub const APERTURE_EPS_CM: f64 = 1e-9;

/// Source dimensions of an object, in cm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Cylinder { height: f64, diameter: f64 },
    Sphere { diameter: f64 },
    Cuboid { length: f64, width: f64, height: f64 },
    /// Door-knob style handle grasped around its bar.
    Handle { width: f64, height: f64, diameter: f64 },
}

impl Shape {
    /// Dimension the fingers close across.
    pub fn grip_size(&self) -> f64 {
        match *self {
            Shape::Cylinder { diameter, .. } => diameter,
            Shape::Sphere { diameter } => diameter,
            Shape::Cuboid {
                length,
                width,
                height,
            } => length.min(width).min(height),
            Shape::Handle { diameter, .. } => diameter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u32,
    pub name: String,
    pub optimal: GraspType,
    pub grip_size_cm: f64,
    pub dims: Shape,
    /// Appearances per block.
    #[serde(default = "one")]
    pub repeats_per_block: u32,
}

fn one() -> u32 {
    1
}

impl ObjectSpec {
    pub fn new(id: u32, name: &str, optimal: GraspType, dims: Shape) -> Self {
        Self {
            id,
            name: name.to_owned(),
            optimal,
            grip_size_cm: dims.grip_size(),
            dims,
            repeats_per_block: 1,
        }
    }

    fn repeated(mut self, n: u32) -> Self {
        self.repeats_per_block = n;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Catalog {
    pub objects: Vec<ObjectSpec>,
}

impl Catalog {
    /// The 21 household objects of the reach-and-grasp protocol.
    pub fn builtin() -> Self {
        use GraspType::*;
        let cyl = |height, diameter| Shape::Cylinder { height, diameter };
        let sph = |diameter| Shape::Sphere { diameter };
        let cub = |length, width, height| Shape::Cuboid {
            length,
            width,
            height,
        };
        let objects = vec![
            ObjectSpec::new(1, "Powder bottle", Cylindrical, cyl(15.0, 6.3)),
            ObjectSpec::new(2, "Plastic bottle 1", Cylindrical, cyl(18.0, 5.2)),
            ObjectSpec::new(3, "Plastic bottle 2", Cylindrical, cyl(17.8, 5.8)),
            ObjectSpec::new(4, "Sauce bottle", Cylindrical, cyl(13.5, 6.0)),
            ObjectSpec::new(5, "Toy ball 1", Spherical, sph(6.3)),
            ObjectSpec::new(6, "Toy ball 2", Spherical, sph(6.3)),
            ObjectSpec::new(7, "Toy ball 3", Spherical, sph(6.3)),
            ObjectSpec::new(8, "Toy ball 4", Spherical, sph(6.3)),
            ObjectSpec::new(9, "Toy brick", Tripod, cub(5.9, 2.8, 1.4)),
            ObjectSpec::new(10, "Plug", Tripod, cub(3.7, 3.2, 2.0)),
            ObjectSpec::new(11, "Medicine pack box", Tripod, cub(5.5, 3.3, 3.3)),
            ObjectSpec::new(12, "Small yarn ball", Tripod, sph(4.4)),
            ObjectSpec::new(13, "Small wooden cube", Pinch, cub(1.8, 1.8, 1.8)),
            ObjectSpec::new(14, "Mini eraser", Pinch, cub(2.8, 1.7, 0.9)),
            ObjectSpec::new(15, "Mini padlock", Pinch, cub(5.0, 3.0, 1.9)),
            ObjectSpec::new(16, "Bead", Pinch, sph(1.5)),
            ObjectSpec::new(17, "Transdermal patch", Lateral, cub(13.0, 11.0, 0.05)),
            ObjectSpec::new(18, "Plastic card", Lateral, cub(8.5, 5.3, 0.1)),
            ObjectSpec::new(19, "Tea bag", Lateral, cub(10.0, 4.7, 0.1)),
            ObjectSpec::new(20, "Ruler", Lateral, cub(16.0, 4.0, 0.2)),
            ObjectSpec::new(
                21,
                "Plastic handle",
                Hook,
                Shape::Handle {
                    width: 9.5,
                    height: 12.5,
                    diameter: 3.0,
                },
            )
            .repeated(4),
        ];
        Self { objects }
    }

    pub fn get(&self, id: u32) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn trials_per_block(&self) -> usize {
        self.objects.iter().map(|o| o.repeats_per_block as usize).sum()
    }

    pub fn count_for(&self, grasp: GraspType) -> usize {
        self.objects.iter().filter(|o| o.optimal == grasp).count()
    }

    pub fn validate(&self, table: &GraspTable) -> Result<(), Error> {
        if self.objects.is_empty() {
            return Err(Error::Config("catalog is empty".into()));
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.objects.len() {
            return Err(Error::Config("catalog ids must be unique".into()));
        }
        for o in &self.objects {
            let ap = table.get(o.optimal).open_aperture_cm;
            if o.grip_size_cm.is_nan() || o.grip_size_cm <= 0.0 {
                return Err(Error::Config(format!("object {} has non-positive grip size", o.id)));
            }
            if o.grip_size_cm >= ap {
                return Err(Error::Config(format!(
                    "object {} ({}) grip {} cm does not fit the {} aperture {} cm",
                    o.id, o.name, o.grip_size_cm, o.optimal, ap
                )));
            }
            if o.repeats_per_block == 0 {
                return Err(Error::Config(format!("object {} never appears", o.id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, table: &GraspTable) -> Result<Self, Error> {
        let catalog: Catalog = serde_json::from_str(text)?;
        catalog.validate(table)?;
        Ok(catalog)
    }
}

/// Which grasp types hold which objects, indexed `[used][optimal]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityMatrix {
    pub succeeds: [[bool; 6]; 6],
}

impl Default for CompatibilityMatrix {
    fn default() -> Self {
        let mut succeeds = [[false; 6]; 6];
        for (i, row) in succeeds.iter_mut().enumerate() {
            row[i] = true;
        }
        let (t, p) = (GraspType::Tripod.index() as usize, GraspType::Pinch.index() as usize);
        succeeds[t][p] = true;
        succeeds[p][t] = true;
        Self { succeeds }
    }
}

impl CompatibilityMatrix {
    pub fn succeeds(&self, used: GraspType, optimal: GraspType) -> bool {
        used == optimal || self.succeeds[used.index() as usize][optimal.index() as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraspOutcome {
    NoContact,
    Held { used: GraspType, optimal: bool },
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReleaseOutcome {
    Placed,
    DroppedOutside { timeout: bool },
}

/// Positions along the reach axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Workspace {
    pub object_x: f64,
    /// Max distance from the object at which fingers can close on it.
    pub grasp_tolerance: f64,
    /// Max distance at which the hand counts as being at the object.
    pub vicinity: f64,
    pub zone_min: f64,
    pub zone_max: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            object_x: 1.0,
            grasp_tolerance: 0.05,
            vicinity: 0.2,
            zone_min: 1.9,
            zone_max: 2.1,
        }
    }
}

impl Workspace {
    pub fn graspable(&self, x: f64) -> bool {
        (x - self.object_x).abs() <= self.grasp_tolerance
    }

    pub fn near_object(&self, x: f64) -> bool {
        (x - self.object_x).abs() <= self.vicinity
    }

    pub fn in_zone(&self, x: f64) -> bool {
        self.zone_min <= x && x <= self.zone_max
    }

    pub fn zone_center(&self) -> f64 {
        0.5 * (self.zone_min + self.zone_max)
    }
}

/// True once the finger gap has closed down to the object.
pub fn contact_check(model: &HandModel, hand: &HandState, obj: &ObjectSpec) -> bool {
    model.aperture(hand) <= obj.grip_size_cm + APERTURE_EPS_CM
}

/// Path value at which the fingers meet the object surface.
pub fn surface_s(model: &HandModel, hand: &HandState, obj: &ObjectSpec) -> f64 {
    let ap = model.table.get(hand.active).open_aperture_cm;
    (1.0 - obj.grip_size_cm / ap).clamp(0.0, 1.0)
}

/// Outcome of a grasp once the squeeze ends, after `squeeze_ms` of
/// uninterrupted Close following contact.
pub fn grasp_evaluate(
    hand: &HandState,
    obj: &ObjectSpec,
    squeeze_ms: f64,
    matrix: &CompatibilityMatrix,
) -> GraspOutcome {
    if !hand.contact {
        return GraspOutcome::NoContact;
    }
    if squeeze_ms >= SQUEEZE_HOLD_MS && matrix.succeeds(hand.active, obj.optimal) {
        GraspOutcome::Held {
            used: hand.active,
            optimal: hand.active == obj.optimal,
        }
    } else {
        GraspOutcome::Dropped
    }
}

/// Checks a held object; `None` while the fingers still grip it.
pub fn release_check(
    model: &HandModel,
    hand: &HandState,
    obj: &ObjectSpec,
    arm_x: f64,
    ws: &Workspace,
) -> Option<ReleaseOutcome> {
    if model.aperture(hand) <= obj.grip_size_cm + APERTURE_EPS_CM {
        return None;
    }
    Some(if ws.in_zone(arm_x) {
        ReleaseOutcome::Placed
    } else {
        ReleaseOutcome::DroppedOutside { timeout: false }
    })
}
