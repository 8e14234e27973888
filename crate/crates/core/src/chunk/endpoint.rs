use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{format_rle, parse_rle, BinaryMask, MaskError};

/// Path of the segment-query route on an HTTP endpoint.
pub const SEGMENT_QUERY_PATH: &str = "/v1/segment-query";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentQueryRequest {
    pub image_id: String,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: String,
    pub width: u32,
    pub height: u32,
}

impl WireMask {
    pub fn from_mask(mask: &BinaryMask) -> Self {
        Self {
            rle: format_rle(&mask.rle_encode()),
            width: mask.width(),
            height: mask.height(),
        }
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        BinaryMask::rle_decode(&parse_rle(&self.rle)?, self.width, self.height)
    }
}

/// Model reply: response text plus one mask per `<SEG>` occurrence, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentQueryResponse {
    pub text: String,
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EndpointError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("endpoint rejected the request: {0}")]
    Rejected(String),
}

/// Anything that can answer a segmentation query for an image.
pub trait ModelEndpoint: Send + Sync {
    fn submit(&self, image_id: &str, query: &str) -> Result<SegmentQueryResponse, EndpointError>;
}

impl<T: ModelEndpoint + ?Sized> ModelEndpoint for &T {
    fn submit(&self, image_id: &str, query: &str) -> Result<SegmentQueryResponse, EndpointError> {
        (**self).submit(image_id, query)
    }
}

impl<T: ModelEndpoint + ?Sized> ModelEndpoint for Box<T> {
    fn submit(&self, image_id: &str, query: &str) -> Result<SegmentQueryResponse, EndpointError> {
        (**self).submit(image_id, query)
    }
}

/// JSON-over-HTTP endpoint speaking `POST /v1/segment-query`.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpEndpoint {
    /// `base` may be a server root or the full route URL.
    pub fn new(base: &str, timeout: Duration) -> Result<Self, EndpointError> {
        let base = base.trim_end_matches('/');
        let url = if base.ends_with(SEGMENT_QUERY_PATH) {
            base.to_string()
        } else {
            format!("{base}{SEGMENT_QUERY_PATH}")
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        Ok(Self { client, url })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ModelEndpoint for HttpEndpoint {
    fn submit(&self, image_id: &str, query: &str) -> Result<SegmentQueryResponse, EndpointError> {
        let body = SegmentQueryRequest {
            image_id: image_id.to_string(),
            query: query.to_string(),
        };
        let resp = self
            .client
            .post(&self.url)
            .json(&body)
            .send()
            .map_err(|e| EndpointError::Transport(e.to_string()))?;
        let status = resp.status();
        if status != reqwest::StatusCode::OK {
            let body = resp.text().unwrap_or_default();
            return Err(EndpointError::Status {
                status: status.as_u16(),
                body,
            });
        }
        resp.json::<SegmentQueryResponse>()
            .map_err(|e| EndpointError::Transport(format!("undecodable response body: {e}")))
    }
}
