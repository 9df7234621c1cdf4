//! Query descriptors on the wire: base64 blobs of little-endian `f32` with
//! their dimensions declared alongside.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wayfinder_core::descriptors::LocalFeature;
use wayfinder_core::localization::Query;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorBlob {
    pub dim: usize,
    pub data: String,
}

/// `count` keypoints: `keypoints` holds `2 * count` values (u, v pairs) and
/// `descriptors` holds `count * dim`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalsBlob {
    pub count: usize,
    pub dim: usize,
    pub keypoints: String,
    pub descriptors: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryPayload {
    pub global: VectorBlob,
    pub locals: LocalsBlob,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PayloadError {
    #[error("{field}: invalid base64")]
    Base64 { field: &'static str },
    #[error("{field}: expected {expected} bytes, got {got}")]
    Length { field: &'static str, expected: usize, got: usize },
    #[error("{field}: dimension {got}, map uses {expected}")]
    Dimension { field: &'static str, expected: usize, got: usize },
    #[error("{field}: value {index} is not finite")]
    NonFinite { field: &'static str, index: usize },
    #[error("{field}: declared size overflows")]
    Overflow { field: &'static str },
}

fn floats(field: &'static str, text: &str, count: usize) -> Result<Vec<f32>, PayloadError> {
    let expected = count.checked_mul(4).ok_or(PayloadError::Overflow { field })?;
    // Oversized text is rejected before anything is allocated for it.
    let max_text = expected.div_ceil(3).checked_mul(4).ok_or(PayloadError::Overflow { field })?;
    if text.len() > max_text {
        return Err(PayloadError::Length {
            field,
            expected,
            got: text.len() / 4 * 3,
        });
    }
    let bytes = STANDARD.decode(text).map_err(|_| PayloadError::Base64 { field })?;
    if bytes.len() != expected {
        return Err(PayloadError::Length {
            field,
            expected,
            got: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(PayloadError::NonFinite { field, index });
    }
    Ok(values)
}

fn blob(values: impl IntoIterator<Item = f32>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    STANDARD.encode(bytes)
}

/// Decodes a payload for a map with the given descriptor dimensions.
pub fn decode_query(payload: &QueryPayload, global_dim: usize, local_dim: usize) -> Result<Query, PayloadError> {
    if payload.global.dim != global_dim {
        return Err(PayloadError::Dimension {
            field: "global",
            expected: global_dim,
            got: payload.global.dim,
        });
    }
    let locals = &payload.locals;
    // An empty feature list has nothing to check the dimension against.
    if locals.dim != local_dim && locals.count > 0 {
        return Err(PayloadError::Dimension {
            field: "locals",
            expected: local_dim,
            got: locals.dim,
        });
    }
    let global = floats("global.data", &payload.global.data, global_dim)?;
    let kp_count = locals
        .count
        .checked_mul(2)
        .ok_or(PayloadError::Overflow { field: "locals.keypoints" })?;
    let kp = floats("locals.keypoints", &locals.keypoints, kp_count)?;
    let desc_count = locals
        .count
        .checked_mul(local_dim)
        .ok_or(PayloadError::Overflow { field: "locals.descriptors" })?;
    let desc = floats("locals.descriptors", &locals.descriptors, desc_count)?;
    let features = (0..locals.count)
        .map(|i| LocalFeature {
            keypoint: [kp[2 * i], kp[2 * i + 1]],
            descriptor: desc[i * local_dim..(i + 1) * local_dim].to_vec(),
            landmark_id: None,
        })
        .collect();
    Ok(Query { global, locals: features })
}

/// Encodes a query; local descriptors must share one dimension.
pub fn encode_query(query: &Query) -> QueryPayload {
    let dim = query.locals.first().map_or(0, |f| f.descriptor.len());
    QueryPayload {
        global: VectorBlob {
            dim: query.global.len(),
            data: blob(query.global.iter().copied()),
        },
        locals: LocalsBlob {
            count: query.locals.len(),
            dim,
            keypoints: blob(query.locals.iter().flat_map(|f| f.keypoint)),
            descriptors: blob(query.locals.iter().flat_map(|f| f.descriptor.iter().copied())),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn query(n: usize, ld: usize) -> Query {
        Query {
            global: vec![0.5, -1.25, 3.0],
            locals: (0..n)
                .map(|i| LocalFeature {
                    keypoint: [i as f32, 2.0 * i as f32 + 0.5],
                    descriptor: (0..ld).map(|j| (i * ld + j) as f32 * 0.1).collect(),
                    landmark_id: None,
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip() {
        let q = query(4, 5);
        assert_eq!(decode_query(&encode_query(&q), 3, 5).unwrap(), q);
    }

    #[test]
    fn known_bytes() {
        // 1.0f32 is 00 00 80 3f little-endian.
        let p = QueryPayload {
            global: VectorBlob { dim: 1, data: "AACAPw==".into() },
            locals: LocalsBlob { count: 0, dim: 2, keypoints: String::new(), descriptors: String::new() },
        };
        let q = decode_query(&p, 1, 2).unwrap();
        assert_eq!(q.global, vec![1.0]);
        assert!(q.locals.is_empty());
    }

    #[test]
    fn rejects_bad_payloads() {
        let good = encode_query(&query(2, 3));
        assert!(matches!(decode_query(&good, 4, 3), Err(PayloadError::Dimension { field: "global", .. })));
        assert!(matches!(decode_query(&good, 3, 2), Err(PayloadError::Dimension { field: "locals", .. })));
        let mut p = good.clone();
        p.global.data = "!!!!".into();
        assert!(matches!(decode_query(&p, 3, 3), Err(PayloadError::Base64 { .. })));
        let mut p = good.clone();
        p.locals.count = 3;
        assert!(matches!(decode_query(&p, 3, 3), Err(PayloadError::Length { .. })));
        let mut p = good.clone();
        p.global.data = blob([1.0, f32::NAN, 0.0]);
        assert_eq!(
            decode_query(&p, 3, 3),
            Err(PayloadError::NonFinite { field: "global.data", index: 1 })
        );
        let mut p = good;
        p.locals.count = usize::MAX;
        assert!(matches!(decode_query(&p, 3, 3), Err(PayloadError::Overflow { .. })));
    }

    proptest! {
        #[test]
        fn arbitrary_finite_queries_roundtrip(
            global in prop::collection::vec(-1e6f32..1e6, 1..40),
            n in 0usize..6,
            ld in 1usize..6,
            seed in any::<u32>(),
        ) {
            let q = Query {
                global: global.clone(),
                locals: (0..n)
                    .map(|i| LocalFeature {
                        keypoint: [(seed % 97) as f32 + i as f32, 1.5],
                        descriptor: (0..ld).map(|j| ((seed as usize + i * ld + j) % 13) as f32 - 6.0).collect(),
                        landmark_id: None,
                    })
                    .collect(),
            };
            prop_assert_eq!(decode_query(&encode_query(&q), global.len(), ld).unwrap(), q);
        }
    }
}
