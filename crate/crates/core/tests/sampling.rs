//! Frame sampling of the labeled sequences.

use laneforge::data::{sample_frames, sliding_windows, Subset, SEQ, TABLE_I};

/// (labeled frame, stride, frames) for the training subset, transcribed by hand.
const TRAIN: [(usize, usize, [usize; 5]); 6] = [
    (13, 3, [1, 4, 7, 10, 13]),
    (13, 2, [5, 7, 9, 11, 13]),
    (13, 1, [9, 10, 11, 12, 13]),
    (20, 3, [8, 11, 14, 17, 20]),
    (20, 2, [12, 14, 16, 18, 20]),
    (20, 1, [16, 17, 18, 19, 20]),
];

const TEST_NORMAL: [(usize, usize, [usize; 5]); 2] = [(13, 1, [9, 10, 11, 12, 13]), (20, 1, [16, 17, 18, 19, 20])];

#[test]
fn listed_tuples_are_reproduced() {
    for (labeled, stride, frames) in TRAIN.iter().chain(&TEST_NORMAL) {
        assert_eq!(sample_frames(20, *labeled, *stride).unwrap(), *frames);
    }
    let train: Vec<_> = TABLE_I.iter().filter(|r| r.0 == Subset::Train).map(|r| (r.1, r.2, r.3)).collect();
    let test: Vec<_> = TABLE_I.iter().filter(|r| r.0 == Subset::TestNormal).map(|r| (r.1, r.2, r.3)).collect();
    assert_eq!(train, TRAIN);
    assert_eq!(test, TEST_NORMAL);
}

#[test]
fn sliding_windows_cover_the_segment() {
    let w = sliding_windows(8);
    assert_eq!(w, vec![[1, 2, 3, 4, 5], [2, 3, 4, 5, 6], [3, 4, 5, 6, 7], [4, 5, 6, 7, 8]]);
    assert!(sliding_windows(SEQ - 1).is_empty());
    assert_eq!(sliding_windows(SEQ), vec![[1, 2, 3, 4, 5]]);
}

#[test]
fn impossible_requests_fail() {
    assert!(sample_frames(20, 12, 3).is_err());
    assert!(sample_frames(20, 21, 1).is_err());
    assert!(sample_frames(20, 13, 0).is_err());
}
