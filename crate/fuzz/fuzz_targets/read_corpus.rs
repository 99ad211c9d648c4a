#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(meetings) = dnc::io::read_corpus_from(data) {
        let mut buf = Vec::new();
        dnc::io::write_corpus_to(&meetings, &mut buf).unwrap();
        assert_eq!(dnc::io::read_corpus_from(buf.as_slice()).unwrap(), meetings);
    }
});
