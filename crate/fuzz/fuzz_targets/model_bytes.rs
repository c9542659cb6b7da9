#![no_main]

use libfuzzer_sys::fuzz_target;
use thingsyntax::encoder::GmmModel;
use thingsyntax::grammar::BinBoundaries;
use thingsyntax::io::{from_model_bytes, to_model_bytes};
use thingsyntax::retrieval::{PriorModel, SceneProfile};

fn roundtrip<T: thingsyntax::io::ModelFile + PartialEq + std::fmt::Debug>(data: &[u8]) {
    if let Ok(m) = from_model_bytes::<T>(data) {
        let bytes = to_model_bytes(&m).unwrap();
        assert_eq!(from_model_bytes::<T>(&bytes).unwrap(), m);
    }
}

fuzz_target!(|data: &[u8]| {
    roundtrip::<BinBoundaries>(data);
    roundtrip::<PriorModel>(data);
    roundtrip::<GmmModel>(data);
    roundtrip::<SceneProfile>(data);
});
