#![no_main]

use libfuzzer_sys::fuzz_target;
use repgan::nets::GanModel;
use repgan::tensor::Array;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = GanModel::from_json_str(text) else { return };
    // A model that loads must be internally consistent enough to run.
    let n = model.latent_dim();
    if n <= 64 && model.generator.params().map(|p| p.len()).sum::<usize>() < 1 << 20 {
        let z = Array::vector(vec![0.25; n]);
        if let Ok(x) = model.generator_forward(&z) {
            let _ = model.raw_scores(&x);
        }
    }
    let back = GanModel::from_json_str(&model.to_json().expect("serializable")).expect("round trip");
    assert_eq!(back, model);
});
