#![cfg_attr(fuzzing, no_main)]

use nonholomech_cli::RunConfig;

fn check(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.validate();
        // the canonical echo must parse back to the same configuration
        let again = RunConfig::parse(&cfg.to_toml()).expect("echo parses");
        assert_eq!(again.to_toml(), cfg.to_toml());
    }
}

#[cfg(fuzzing)]
libfuzzer_sys::fuzz_target!(|data: &[u8]| check(data));

#[cfg(not(fuzzing))]
fn main() {
    nonholomech_fuzz::replay("config", check);
}
