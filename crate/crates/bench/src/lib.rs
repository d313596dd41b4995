//! Fixtures shared by the benchmarks.

use flowcfg::neural::Architecture;
use flowcfg::numerics::gaussian_sample;
use flowcfg::{MlpModel, OracleModel, Rng, TaskSpec, Vector};

pub fn oracle() -> OracleModel {
    OracleModel::new(TaskSpec::default()).expect("default task is valid")
}

/// Untrained network on the default task; evaluation cost does not depend on
/// the weights.
pub fn network(seed: u64) -> MlpModel {
    MlpModel::init(Architecture::for_task(&TaskSpec::default()), &mut Rng::new(seed))
}

pub fn states(n: usize, seed: u64) -> Vec<Vector> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| gaussian_sample(&mut rng, 2).expect("positive dim")).collect()
}
