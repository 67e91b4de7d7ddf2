mod common;

use std::io::Cursor;

use common::{fixture, fuzz_decode, golden_requests, golden_responses};
use ebp_core::error::ErrorCode;
use ebp_core::wire::{decode_request, decode_response, encode_request, encode_response, Response};

#[test]
fn every_verb_has_a_request_fixture() {
    let verbs: std::collections::BTreeSet<&str> = golden_requests().iter().map(|(_, r)| r.verb()).collect();
    assert_eq!(verbs.len(), 6);
}

#[test]
fn requests_encode_byte_exact() {
    for (name, req) in golden_requests() {
        let want = fixture(&format!("wire/requests/{name}.bin"));
        assert_eq!(encode_request(&req), want, "{name}");
    }
}

#[test]
fn requests_decode_to_their_values() {
    for (name, req) in golden_requests() {
        let bytes = fixture(&format!("wire/requests/{name}.bin"));
        let mut cur = Cursor::new(&bytes[..]);
        assert_eq!(decode_request(&mut cur).unwrap(), Some(req), "{name}");
        assert_eq!(cur.position() as usize, bytes.len(), "{name} left bytes behind");
    }
}

#[test]
fn concatenated_frames_decode_in_order() {
    let reqs = golden_requests();
    let mut stream = Vec::new();
    for (name, _) in &reqs {
        stream.extend(fixture(&format!("wire/requests/{name}.bin")));
    }
    let mut cur = Cursor::new(&stream[..]);
    for (name, req) in reqs {
        assert_eq!(decode_request(&mut cur).unwrap(), Some(req), "{name}");
    }
    assert_eq!(decode_request(&mut cur).unwrap(), None);
}

#[test]
fn responses_round_trip_byte_exact() {
    for (name, shape, resp) in golden_responses() {
        let bytes = fixture(&format!("wire/responses/{name}.bin"));
        assert_eq!(encode_response(&resp), bytes, "{name}");
        assert_eq!(decode_response(&mut Cursor::new(&bytes[..]), shape).unwrap(), resp, "{name}");
    }
}

#[test]
fn every_error_code_has_a_fixture() {
    for code in ErrorCode::ALL {
        let bytes = fixture(&format!("wire/responses/err_{}.bin", code.as_str()));
        assert!(bytes.starts_with(format!("ERR {} ", code.as_str()).as_bytes()));
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
    }
}

#[test]
fn range_error_matches_the_documented_line() {
    let bytes = fixture("wire/responses/err_E_RANGE.bin");
    assert_eq!(bytes, b"ERR E_RANGE offset+length exceeds size_limit\n");
    let Response::Err(e) = decode_response(&mut Cursor::new(&bytes[..]), ebp_core::wire::ResponseShape::Data).unwrap() else {
        panic!("expected an error");
    };
    assert_eq!(e.code, ErrorCode::Range);
}

#[test]
fn fuzzed_frames_never_panic() {
    let t = fuzz_decode(50_000, 11);
    assert_eq!(t.panics, 0, "{t:?}");
    assert!(t.decoded > 0 && t.rejected > 0, "{t:?}");
}
