#![no_main]
use libfuzzer_sys::fuzz_target;
use multisite_resp::cube_io::{decode_cube, encode_cube, CubeHeader};

fuzz_target!(|data: &[u8]| {
    let _ = CubeHeader::decode(data);
    if let Ok(cube) = decode_cube(data) {
        let bytes = encode_cube(&cube).expect("decoded cube re-encodes");
        assert_eq!(bytes.as_slice(), data);
    }
});
