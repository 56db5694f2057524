#![no_main]

use amem::MixtureModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(model) = MixtureModel::read_json(text) {
        let again = MixtureModel::read_json(&model.to_json()).expect("re-reading serialized model");
        assert_eq!(again.len(), model.len());
        assert_eq!(again.dim(), model.dim());
    }
});
