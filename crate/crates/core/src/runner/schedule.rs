//! Block scheduling: every object its configured number of times, shuffled so
//! that no two consecutive trials share an optimal grasp type.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hand::GraspType;
use crate::world::Catalog;
use crate::Error;

const MAX_ATTEMPTS: usize = 1_000_000;

/// Ordered object ids for one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub objects: Vec<u32>,
}

impl TrialPlan {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn grasp_sequence(&self, catalog: &Catalog) -> Vec<GraspType> {
        self.objects
            .iter()
            .map(|id| catalog.get(*id).expect("plan drawn from catalog").optimal)
            .collect()
    }
}

fn block_multiset(catalog: &Catalog) -> Vec<(u32, GraspType)> {
    catalog
        .objects
        .iter()
        .flat_map(|o| std::iter::repeat_n((o.id, o.optimal), o.repeats_per_block as usize))
        .collect()
}

/// A multiset can be arranged without equal neighbours iff no type fills
/// more than half the slots (rounded up).
fn check_feasible(items: &[(u32, GraspType)], avoid_first: Option<GraspType>) -> Result<(), Error> {
    let n = items.len();
    for g in GraspType::ALL {
        let count = items.iter().filter(|(_, t)| *t == g).count();
        let mut limit = n.div_ceil(2);
        if avoid_first == Some(g) {
            limit = n / 2;
        }
        if count > limit {
            return Err(Error::Schedule(format!(
                "{count} of {n} trials need {g}; consecutive trials cannot all differ"
            )));
        }
    }
    Ok(())
}

/// Rejection-samples a uniformly random valid plan. `avoid_first` keeps the
/// first trial off the previous block's last grasp type.
pub fn schedule_block_with<R: Rng + ?Sized>(
    catalog: &Catalog,
    rng: &mut R,
    avoid_first: Option<GraspType>,
) -> Result<TrialPlan, Error> {
    let mut items = block_multiset(catalog);
    if items.is_empty() {
        return Err(Error::Schedule("catalog has no trials".into()));
    }
    check_feasible(&items, avoid_first)?;
    for _ in 0..MAX_ATTEMPTS {
        items.shuffle(rng);
        let ok_first = avoid_first.is_none_or(|g| items[0].1 != g);
        if ok_first && items.windows(2).all(|w| w[0].1 != w[1].1) {
            return Ok(TrialPlan {
                objects: items.iter().map(|(id, _)| *id).collect(),
            });
        }
    }
    Err(Error::Schedule("no valid ordering found".into()))
}

/// One block, deterministic per seed.
pub fn schedule_block(catalog: &Catalog, seed: u64) -> Result<TrialPlan, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    schedule_block_with(catalog, &mut rng, None)
}

/// Consecutive blocks; the constraint also holds across block boundaries.
pub fn schedule_session(catalog: &Catalog, blocks: usize, seed: u64) -> Result<Vec<TrialPlan>, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<TrialPlan> = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let avoid = out
            .last()
            .and_then(|p| p.objects.last())
            .and_then(|id| catalog.get(*id))
            .map(|o| o.optimal);
        out.push(schedule_block_with(catalog, &mut rng, avoid)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{ObjectSpec, Shape};

    #[test]
    fn default_block_has_24_trials_and_four_hooks() {
        let cat = Catalog::builtin();
        let plan = schedule_block(&cat, 1).unwrap();
        assert_eq!(plan.len(), 24);
        assert_eq!(plan.objects.iter().filter(|&&id| id == 21).count(), 4);
        for o in cat.objects.iter().filter(|o| o.id != 21) {
            assert_eq!(plan.objects.iter().filter(|&&id| id == o.id).count(), 1);
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let cat = Catalog::builtin();
        assert_eq!(schedule_block(&cat, 99).unwrap(), schedule_block(&cat, 99).unwrap());
        assert_ne!(schedule_block(&cat, 99).unwrap(), schedule_block(&cat, 100).unwrap());
    }

    #[test]
    fn no_adjacent_equal_types() {
        let cat = Catalog::builtin();
        for seed in 0..500 {
            let seq = schedule_block(&cat, seed).unwrap().grasp_sequence(&cat);
            for w in seq.windows(2) {
                assert_ne!(w[0], w[1], "seed {seed}");
            }
        }
    }

    #[test]
    fn session_constraint_spans_blocks() {
        let cat = Catalog::builtin();
        let blocks = schedule_session(&cat, 20, 3).unwrap();
        let seq: Vec<GraspType> = blocks.iter().flat_map(|b| b.grasp_sequence(&cat)).collect();
        assert_eq!(seq.len(), 480);
        assert!(seq.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn unsatisfiable_catalog_errors() {
        let one_type = Catalog {
            objects: (1..=3)
                .map(|i| ObjectSpec::new(i, "ball", GraspType::Spherical, Shape::Sphere { diameter: 5.0 }))
                .collect(),
        };
        assert!(matches!(schedule_block(&one_type, 0), Err(Error::Schedule(_))));
        assert!(schedule_block(&Catalog { objects: vec![] }, 0).is_err());
    }
}
