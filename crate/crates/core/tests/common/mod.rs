#![allow(dead_code)]

use dsmpc::disturbance::{CovarianceSpec, DisturbanceModel, DisturbanceSpec, MeanProfile};
use dsmpc::error_sim::TubeController;
use dsmpc::harness::benchmark::box_halfspaces;
use dsmpc::mpc::{AgentCost, CostSpec, MpcProblem};
use dsmpc::network::{gersgorin_stable, ConstraintSet, NetworkModel, SubsystemModel};
use dsmpc::tightening::TighteningTable;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct InstanceOptions {
    pub agents: usize,
    pub coupling_probability: f64,
    pub max_coupling: f64,
    pub tube_gain: f64,
    pub state_bound: f64,
    pub input_bound: f64,
    pub probability: f64,
    pub noise_std: f64,
    pub rho: f64,
    /// Constant disturbance mean.
    pub mean: f64,
    pub q: (f64, f64),
    pub r: (f64, f64),
    pub mpc_samples: usize,
    pub x0: (f64, f64),
}

impl Default for InstanceOptions {
    fn default() -> Self {
        Self {
            agents: 3,
            coupling_probability: 0.6,
            max_coupling: 0.08,
            tube_gain: -0.5,
            state_bound: 5.0,
            input_bound: 1.0,
            probability: 0.9,
            noise_std: 0.2,
            rho: 0.5,
            mean: 0.0,
            q: (1.0, 1.0),
            r: (1.0, 1.0),
            mpc_samples: 5,
            x0: (-1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub model: NetworkModel,
    pub constraints: ConstraintSet,
    pub cost: CostSpec,
    pub tube: TubeController,
    pub disturbance: DisturbanceModel,
    pub x0: DVector<f64>,
}

impl Instance {
    pub fn problem<'a>(&'a self, table: &'a TighteningTable, horizon: usize) -> MpcProblem<'a> {
        MpcProblem {
            model: &self.model,
            constraints: &self.constraints,
            tightening: table,
            cost: &self.cost,
            tube: &self.tube,
            disturbance: &self.disturbance,
            horizon,
        }
    }
}

/// Random scalar network whose tube closed loop passes the Geršgorin test.
pub fn random_instance(rng: &mut ChaCha8Rng, opts: &InstanceOptions) -> Instance {
    let m = opts.agents;
    loop {
        let mut subs: Vec<SubsystemModel> = (0..m)
            .map(|i| {
                SubsystemModel::scalar(1.0, 1.0)
                    .with_coupling(i, DMatrix::from_element(1, 1, rng.random_range(0.95..1.05)))
            })
            .collect();
        for (i, sub) in subs.iter_mut().enumerate() {
            for j in 0..m {
                if i != j && rng.random::<f64>() < opts.coupling_probability {
                    let a = rng.random_range(0.002..opts.max_coupling);
                    sub.coupling.insert(j, DMatrix::from_element(1, 1, a));
                }
            }
        }
        let model = NetworkModel::new(subs).unwrap();
        let tube = TubeController::diagonal(&model, opts.tube_gain).unwrap();
        let (a, b, _) = model.dense_dynamics();
        if !gersgorin_stable(&(&a + &b * tube.dense_gain(&model))).unwrap() {
            continue;
        }
        let constraints = ConstraintSet::new(
            &model,
            (0..m)
                .flat_map(|i| box_halfspaces(i, opts.state_bound, opts.input_bound, opts.probability))
                .collect(),
        )
        .unwrap();
        let agents = (0..m)
            .map(|_| {
                let mut c = AgentCost::scalar(rng.random_range(opts.q.0..=opts.q.1), rng.random_range(opts.r.0..=opts.r.1));
                c.p = c.q.clone();
                c
            })
            .collect();
        let cost = CostSpec {
            agents,
            time_weights: None,
            mpc_samples: opts.mpc_samples,
        };
        let spec = DisturbanceSpec::Ar1Gaussian {
            rho: opts.rho,
            mean: if opts.mean == 0.0 {
                MeanProfile::Zero
            } else {
                MeanProfile::Constant { value: opts.mean }
            },
            covariance: CovarianceSpec::Isotropic { std: opts.noise_std },
        };
        let disturbance = DisturbanceModel::new(spec, &model).unwrap();
        let x0 = DVector::from_iterator(m, (0..m).map(|_| rng.random_range(opts.x0.0..=opts.x0.1)));
        return Instance {
            model,
            constraints,
            cost,
            tube,
            disturbance,
            x0,
        };
    }
}
