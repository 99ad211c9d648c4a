#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cp) = dnc::train::Checkpoint::parse(text) {
        let json = cp.to_json().unwrap();
        let again = dnc::train::Checkpoint::parse(&json).unwrap();
        assert_eq!(again.to_json().unwrap(), json);
    }
});
