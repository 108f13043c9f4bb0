#![cfg_attr(fuzzing, no_main)]

use nonholomech::io::TrajectoryTable;

fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = TrajectoryTable::parse_csv(text) {
        let again = TrajectoryTable::parse_csv(&table.to_csv()).expect("emitted table parses");
        assert_eq!(again.columns(), table.columns());
        assert_eq!(again.rows().len(), table.rows().len());
        for (a, b) in again.rows().iter().zip(table.rows()) {
            let bits = |r: &[f64]| r.iter().map(|v| if v.is_nan() { u64::MAX } else { v.to_bits() }).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    nonholomech_fuzz::replay("trajectory_csv", check);
}
