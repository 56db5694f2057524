#![no_main]

use amem::WeightedDataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(set) = WeightedDataset::read_csv(data) else {
        return;
    };
    // anything accepted must survive a write/read cycle unchanged
    let mut buf = Vec::new();
    set.write_csv(&mut buf).expect("writing to memory");
    let again = WeightedDataset::read_csv(buf.as_slice()).expect("re-reading written dataset");
    assert_eq!(again.flat_points(), set.flat_points());
    assert_eq!(again.len(), set.len());
});
