//! Fast paths against brute-force recomputation on small random instances.

use onset_core::checks;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn onset_response_matches_oracle(seed in any::<u64>()) {
        prop_assert_eq!(checks::response_matches(seed), Ok(()));
    }

    #[test]
    fn cascade_histogram_matches_oracle(seed in any::<u64>()) {
        prop_assert_eq!(checks::cascade_matches(seed), Ok(()));
    }

    #[test]
    fn score_frame_matches_oracle(seed in any::<u64>()) {
        prop_assert_eq!(checks::score_frame_matches(seed), Ok(()));
    }

    #[test]
    fn average_precision_matches_oracle(seed in any::<u64>()) {
        prop_assert_eq!(checks::ap_matches(seed), Ok(()));
    }
}

/// A plateau in a response series whose windows have equal word proportions
/// at different lengths (2/10 and 3/15) must stay exactly flat.
#[test]
fn equal_proportions_keep_plateaus_flat() {
    assert_eq!(checks::score_frame_matches(12147786084188089624), Ok(()));
}
