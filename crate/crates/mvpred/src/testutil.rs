//! Shared helpers for unit tests.

use crate::dataset::{PopularityTargets, VideoRecord};

pub fn rec(id: &str, author: &str, playable: bool) -> VideoRecord {
    VideoRecord {
        video_id: id.to_string(),
        author_id: author.to_string(),
        playable,
        visual: Some(vec![1.0, 0.0, 0.0, 0.0]),
        acoustic: Some(vec![0.0, 1.0, 0.0, 0.0]),
        textual: Some(vec![0.0, 0.0, 1.0, 0.0]),
        targets: Some(PopularityTargets {
            hearts: 1,
            shares: 2,
            comments: 3,
            plays: 4,
        }),
    }
}
