#![no_main]

use amem::FitTrace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(trace) = FitTrace::read_csv(data) else {
        return;
    };
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).expect("writing to memory");
    let again = FitTrace::read_csv(buf.as_slice()).expect("re-reading written trace");
    assert_eq!(again.records.len(), trace.records.len());
    for (a, b) in again.records.iter().zip(&trace.records) {
        assert!(a.objective.to_bits() == b.objective.to_bits() || (a.objective.is_nan() && b.objective.is_nan()));
    }
});
