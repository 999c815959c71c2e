//! Fixtures shared by the benchmarks.

use faceage_core::synth::{synthetic_collection, SyntheticSpec, ToyPerson};
use faceage_core::{AdapterNetwork, AdapterShape, AgeYears, AgedPhotoCollection, BackendBundle, LatentCode, Trainer, TrainingConfig};

pub struct Fixture {
    pub bundle: BackendBundle,
    pub collection: AgedPhotoCollection,
}

impl Fixture {
    pub fn new() -> Self {
        let bundle = BackendBundle::toy(0);
        let collection = synthetic_collection(&bundle, &ToyPerson::new(0), &SyntheticSpec::default())
            .expect("synthetic collection");
        Self { bundle, collection }
    }

    /// Adapter with non-zero output layers, so every path does real work.
    pub fn adapter(&self, shape: AdapterShape) -> AdapterNetwork {
        let mut net = AdapterNetwork::new(shape, 1);
        net.perturb_output_layers(2, 0.1);
        net
    }

    pub fn code(&self, age: f64) -> LatentCode {
        self.bundle
            .encode(self.collection.image(0), AgeYears::new(age).expect("age"))
            .expect("encode")
    }

    pub fn trainer(&self, shape: AdapterShape) -> Trainer {
        let config = TrainingConfig {
            adapter: shape,
            ..TrainingConfig::default()
        };
        Trainer::new(self.bundle.clone(), self.collection.clone(), config).expect("trainer")
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new()
    }
}
