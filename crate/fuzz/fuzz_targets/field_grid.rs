#![cfg_attr(fuzzing, no_main)]

use nonholomech::io::{format_field_grid, parse_field_grid};

fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(grid) = parse_field_grid(text) {
        let again = parse_field_grid(&format_field_grid(&grid)).expect("formatted grid parses");
        assert_eq!(again.spec(), grid.spec());
        for (a, b) in again.values().iter().zip(grid.values()) {
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    nonholomech_fuzz::replay("field_grid", check);
}
