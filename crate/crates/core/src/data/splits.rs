use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoRecord;
use crate::error::{Error, Result};

pub const FOLDS: usize = 3;
/// Share of trainval frames held out in each fold.
pub const FOLD_TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameRef {
    pub video: String,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<FrameRef>,
    pub test: Vec<FrameRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub trainval: Vec<String>,
    pub test: Vec<String>,
    pub folds: Vec<Fold>,
}

/// Video-level 50:50 split balanced on object counts, then three random
/// frame-level folds inside trainval.
///
/// Videos are shuffled with the seed, stably ordered by descending object
/// count and each assigned to the side with fewer objects so far, as long as
/// that side still has room for half the videos.
pub fn make_splits(records: &[VideoRecord], seed: u64) -> Result<SplitPlan> {
    if records.len() < 2 {
        return Err(Error::invalid("splitting needs at least two videos"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| std::cmp::Reverse(records[i].object_count()));

    let cap_trainval = records.len().div_ceil(2);
    let cap_test = records.len() / 2;
    let (mut trainval, mut test) = (Vec::new(), Vec::new());
    let (mut load_tv, mut load_te) = (0usize, 0usize);
    for i in order {
        let n = records[i].object_count();
        let to_trainval = if trainval.len() == cap_trainval {
            false
        } else if test.len() == cap_test {
            true
        } else {
            load_tv <= load_te
        };
        if to_trainval {
            trainval.push(i);
            load_tv += n;
        } else {
            test.push(i);
            load_te += n;
        }
    }

    let frames: Vec<FrameRef> = trainval
        .iter()
        .flat_map(|&i| {
            let r = &records[i];
            (0..r.frame_count).map(move |frame| FrameRef { video: r.id.clone(), frame })
        })
        .collect();
    let n_test = (frames.len() as f64 * FOLD_TEST_FRACTION).round() as usize;
    let folds = (0..FOLDS)
        .map(|_| {
            let mut shuffled = frames.clone();
            shuffled.shuffle(&mut rng);
            let mut test = shuffled.split_off(shuffled.len() - n_test);
            shuffled.sort();
            test.sort();
            Fold { train: shuffled, test }
        })
        .collect();

    let ids = |v: &[usize]| v.iter().map(|&i| records[i].id.clone()).collect();
    Ok(SplitPlan { seed, trainval: ids(&trainval), test: ids(&test), folds })
}

impl SplitPlan {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plan serialize")
    }
}
