#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = dnc::io::read_labels_from(data) {
        let mut buf = Vec::new();
        dnc::io::write_labels_to(&records, &mut buf).unwrap();
        assert_eq!(dnc::io::read_labels_from(buf.as_slice()).unwrap(), records);
    }
});
