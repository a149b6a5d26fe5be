#![no_main]

use libfuzzer_sys::fuzz_target;
use taskcal::backend::parse_completion_response;

// Layout: prompt, NUL, candidate, NUL, response body.
fuzz_target!(|data: &[u8]| {
    let mut parts = data.splitn(3, |&b| b == 0);
    let (Some(prompt), Some(candidate), Some(body)) = (parts.next(), parts.next(), parts.next()) else { return };
    let (Ok(prompt), Ok(candidate)) = (std::str::from_utf8(prompt), std::str::from_utf8(candidate)) else { return };
    if let Ok(score) = parse_completion_response(body, prompt, candidate) {
        assert!(score.logprob.is_finite());
        assert!(score.token_count >= 1);
    }
});
