//! Grayscale image sequences as temporal hypergraphs.
//!
//! Frames are PGM files (binary P5 or ASCII P2). A node grid is laid over
//! each frame with a configurable spacing; a node survives when its pixel
//! block is bright enough, and surviving grid neighbors (horizontal,
//! vertical, and the diagonal that matches the mesh triangulation) are
//! connected. Lifting those graphs per frame gives a hypergraph sequence
//! analyzed with the same property set as solver runs.

use crate::extract::{hypergraph_from_graph, Hypergraph, Node, SpatialGraph};
use crate::hyper::hypergraph_properties;
use crate::temporal::PropertyTrace;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported magic number {0:?}; expected P2 or P5")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("payload truncated: expected {expected} values, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("pixel value {value} exceeds declared maximum {max_val}")]
    ValueOutOfRange { value: u32, max_val: u16 },
    #[error("threshold {threshold} outside intensity range [0, {max_val}]")]
    ThresholdOutOfRange { threshold: f64, max_val: u16 },
    #[error("downsample factor must be at least 1")]
    ZeroDownsample,
    #[error("manifest lists no frames")]
    EmptyManifest,
    #[error("frame {index} ({path}): {source}")]
    FrameFailed {
        index: usize,
        path: String,
        #[source]
        source: Box<ImageError>,
    },
    #[error("frame {index} is {got_w}x{got_h}, expected {want_w}x{want_h} like frame 0")]
    DimensionMismatch {
        index: usize,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Row-major grayscale image with intensities in [0, max_val].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub max_val: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, max_val: u16, pixels: Vec<u16>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count must match dimensions");
        Self {
            width,
            height,
            max_val,
            pixels,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }
}

/// Ordered frame list; the capture interval is carried as metadata only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageSequenceManifest {
    pub frames: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capture_interval_seconds: Option<f64>,
}

/// PGM header tokens: whitespace-separated, `#` comments run to end of line.
struct TokenReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&'a [u8]> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<u32, ImageError> {
        let token = self
            .token()
            .ok_or_else(|| ImageError::MalformedHeader(format!("missing {what}")))?;
        let text = std::str::from_utf8(token)
            .map_err(|_| ImageError::MalformedHeader(format!("non-ASCII {what}")))?;
        text.parse()
            .map_err(|_| ImageError::MalformedHeader(format!("invalid {what}: {text:?}")))
    }
}

/// Decode a PGM image (binary P5 or ASCII P2), skipping header comments.
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut reader = TokenReader::new(bytes);
    let magic = reader
        .token()
        .ok_or_else(|| ImageError::MalformedHeader("empty input".into()))?;
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(ImageError::BadMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let width = reader.number("width")? as usize;
    let height = reader.number("height")? as usize;
    let max_val_raw = reader.number("maxval")?;
    if max_val_raw == 0 || max_val_raw > 65535 {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {max_val_raw} outside [1, 65535]"
        )));
    }
    let max_val = max_val_raw as u16;
    let expected = width * height;

    let pixels = if binary {
        // exactly one whitespace byte separates the header from the payload
        let payload_start = reader.pos + 1;
        let payload = bytes.get(payload_start..).unwrap_or(&[]);
        if max_val < 256 {
            if payload.len() < expected {
                return Err(ImageError::Truncated {
                    expected,
                    got: payload.len(),
                });
            }
            payload[..expected].iter().map(|&b| b as u16).collect()
        } else {
            if payload.len() < 2 * expected {
                return Err(ImageError::Truncated {
                    expected,
                    got: payload.len() / 2,
                });
            }
            payload[..2 * expected]
                .chunks_exact(2)
                .map(|pair| u16::from_be_bytes([pair[0], pair[1]]))
                .collect()
        }
    } else {
        let mut values = Vec::with_capacity(expected);
        for _ in 0..expected {
            match reader.token() {
                Some(token) => {
                    let text = std::str::from_utf8(token).map_err(|_| {
                        ImageError::MalformedHeader("non-ASCII pixel value".into())
                    })?;
                    let value: u32 = text.parse().map_err(|_| {
                        ImageError::MalformedHeader(format!("invalid pixel value {text:?}"))
                    })?;
                    values.push(value);
                }
                None => {
                    return Err(ImageError::Truncated {
                        expected,
                        got: values.len(),
                    })
                }
            }
        }
        values.iter().map(|&v| v as u16).collect::<Vec<u16>>()
    };

    for &value in &pixels {
        if value as u32 > max_val as u32 {
            return Err(ImageError::ValueOutOfRange {
                value: value as u32,
                max_val,
            });
        }
    }
    Ok(GrayImage::new(width, height, max_val, pixels))
}

/// Encode as binary P5 (one byte per pixel when maxval < 256, two otherwise).
pub fn encode_p5(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n{}\n", img.width, img.height, img.max_val).unwrap();
    if img.max_val < 256 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for &p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

/// Encode as ASCII P2, one image row per line.
pub fn encode_p2(img: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    write!(out, "P2\n{} {}\n{}\n", img.width, img.height, img.max_val).unwrap();
    for row in img.pixels.chunks(img.width.max(1)) {
        let line: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    out
}

/// Intensity-threshold graph: node grid with `downsample`-pixel spacing,
/// a node kept iff its block's mean intensity reaches the threshold, edges
/// between kept horizontal/vertical/diagonal grid neighbors.
///
/// Node positions are scaled to \[0,1\]² with the y axis flipped so image row
/// zero sits at the top; the connected diagonal then runs bottom-left to
/// top-right in position space, matching the mesh convention, so grid cells
/// can close into the same two half-cell triangles.
///
/// The boolean flag is raised when the threshold filtered out every node
/// (an empty graph is returned rather than an error).
pub fn graph_from_image(
    img: &GrayImage,
    intensity_threshold: f64,
    downsample: usize,
) -> Result<(SpatialGraph, bool), ImageError> {
    if downsample == 0 {
        return Err(ImageError::ZeroDownsample);
    }
    if intensity_threshold < 0.0 || intensity_threshold > img.max_val as f64 {
        return Err(ImageError::ThresholdOutOfRange {
            threshold: intensity_threshold,
            max_val: img.max_val,
        });
    }
    let d = downsample;
    let grid_w = img.width.div_ceil(d);
    let grid_h = img.height.div_ceil(d);

    let block_mean = |gx: usize, gy: usize| -> f64 {
        let x_end = ((gx + 1) * d).min(img.width);
        let y_end = ((gy + 1) * d).min(img.height);
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in gy * d..y_end {
            for x in gx * d..x_end {
                sum += img.pixel(x, y) as f64;
                count += 1;
            }
        }
        sum / count as f64
    };

    let mut kept = vec![false; grid_w * grid_h];
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            kept[gy * grid_w + gx] = block_mean(gx, gy) >= intensity_threshold;
        }
    }

    let x_span = (grid_w - 1).max(1) as f64;
    let y_span = (grid_h - 1).max(1) as f64;
    let mut nodes = Vec::new();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            if kept[gy * grid_w + gx] {
                nodes.push(Node {
                    id: gy * grid_w + gx,
                    x: gx as f64 / x_span,
                    y: (grid_h - 1 - gy) as f64 / y_span,
                });
            }
        }
    }
    let warn_empty = nodes.is_empty();

    let mut edges = Vec::new();
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            let id = gy * grid_w + gx;
            if !kept[id] {
                continue;
            }
            // horizontal, vertical, and the anti-diagonal in image
            // coordinates (bottom-left to top-right once y is flipped)
            if gx + 1 < grid_w && kept[id + 1] {
                edges.push([id, id + 1]);
            }
            if gy + 1 < grid_h && kept[id + grid_w] {
                edges.push([id, id + grid_w]);
            }
            if gx + 1 < grid_w && gy >= 1 && kept[id - grid_w + 1] {
                edges.push([id, id - grid_w + 1]);
            }
        }
    }
    let graph = SpatialGraph::new(nodes, edges).expect("grid construction yields a valid graph");
    Ok((graph, warn_empty))
}

/// Analysis parameters for an image sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageAnalysisConfig {
    pub intensity_threshold: f64,
    pub downsample: usize,
    pub s_values: Vec<usize>,
    /// Window width of the moving average used for consolidation detection.
    pub moving_average_window: usize,
    /// Continue past undecodable frames, reporting them, instead of failing.
    pub permissive: bool,
}

impl Default for ImageAnalysisConfig {
    fn default() -> Self {
        Self {
            intensity_threshold: 128.0,
            downsample: 4,
            s_values: vec![1, 2],
            moving_average_window: 3,
            permissive: false,
        }
    }
}

/// Per-frame outputs of a sequence analysis.
#[derive(Debug)]
pub struct SequenceAnalysis {
    pub traces: Vec<PropertyTrace>,
    /// Hypergraph per analyzed frame, paired with its frame index.
    pub hypergraphs: Vec<(usize, Hypergraph)>,
    /// Frames that failed to decode, with their errors (permissive mode).
    pub frame_errors: Vec<(usize, ImageError)>,
    /// Inclusive frame range of the consolidation phase, when one exists.
    pub consolidation: Option<(usize, usize)>,
}

fn load_frame(path: &Path) -> Result<GrayImage, ImageError> {
    let bytes = std::fs::read(path)?;
    load_pgm(&bytes)
}

/// Decode every frame, build its hypergraph, and evaluate the per-frame
/// property set (covered area, hyperedge and triangle counts, s-degrees and
/// s-closenesses). Frame index is the time axis.
pub fn analyze_image_sequence(
    manifest: &ImageSequenceManifest,
    config: &ImageAnalysisConfig,
) -> Result<SequenceAnalysis, ImageError> {
    if manifest.frames.is_empty() {
        return Err(ImageError::EmptyManifest);
    }
    let frame_error = |index: usize, source: ImageError| ImageError::FrameFailed {
        index,
        path: manifest.frames[index].display().to_string(),
        source: Box::new(source),
    };

    let mut images: Vec<(usize, GrayImage)> = Vec::with_capacity(manifest.frames.len());
    let mut frame_errors = Vec::new();
    for (index, path) in manifest.frames.iter().enumerate() {
        match load_frame(path) {
            Ok(img) => images.push((index, img)),
            Err(e) if config.permissive => frame_errors.push((index, frame_error(index, e))),
            Err(e) => return Err(frame_error(index, e)),
        }
    }
    if let Some((_, first)) = images.first() {
        let (want_w, want_h) = (first.width, first.height);
        for (index, img) in &images {
            if img.width != want_w || img.height != want_h {
                return Err(ImageError::DimensionMismatch {
                    index: *index,
                    got_w: img.width,
                    got_h: img.height,
                    want_w,
                    want_h,
                });
            }
        }
    }

    struct FrameMetrics {
        index: usize,
        hypergraph: Hypergraph,
        covered_area: f64,
        hyperedges: f64,
        triangles: f64,
        per_s: Vec<(usize, f64, f64)>,
    }

    let metrics: Vec<FrameMetrics> = images
        .par_iter()
        .map(|(index, img)| {
            let (graph, _warned) =
                graph_from_image(img, config.intensity_threshold, config.downsample)
                    .map_err(|e| frame_error(*index, e))?;
            let h = hypergraph_from_graph(&graph);
            let base = hypergraph_properties(&h, 1);
            let per_s = config
                .s_values
                .iter()
                .map(|&s| {
                    let props = hypergraph_properties(&h, s);
                    (s, props.avg_s_degree, props.avg_s_closeness)
                })
                .collect();
            Ok(FrameMetrics {
                index: *index,
                hypergraph: h,
                covered_area: base.covered_area,
                hyperedges: base.hyperedge_count as f64,
                triangles: base.triangle_count as f64,
                per_s,
            })
        })
        .collect::<Result<_, ImageError>>()?;

    let series = |extractor: &dyn Fn(&FrameMetrics) -> f64| -> Vec<(usize, f64)> {
        metrics.iter().map(|m| (m.index, extractor(m))).collect()
    };
    let mk_trace = |name: &str, s: Option<usize>, values: Vec<(usize, f64)>| {
        PropertyTrace::new(name, s, None, values).expect("at least one frame decoded")
    };

    let mut traces = vec![
        mk_trace("covered_area", None, series(&|m| m.covered_area)),
        mk_trace("hyperedges", None, series(&|m| m.hyperedges)),
        mk_trace("triangles", None, series(&|m| m.triangles)),
    ];
    for (k, &s) in config.s_values.iter().enumerate() {
        traces.push(mk_trace("s_degree", Some(s), series(&|m| m.per_s[k].1)));
        traces.push(mk_trace("s_closeness", Some(s), series(&|m| m.per_s[k].2)));
    }

    let area_values: Vec<f64> = metrics.iter().map(|m| m.covered_area).collect();
    let consolidation_range =
        consolidation_window(&area_values, config.moving_average_window).map(|(a, b)| {
            (metrics[a].index, metrics[b].index)
        });

    Ok(SequenceAnalysis {
        traces,
        hypergraphs: metrics.into_iter().map(|m| (m.index, m.hypergraph)).collect(),
        frame_errors,
        consolidation: consolidation_range,
    })
}

/// Longest suffix over which the trailing moving average of the covered area
/// is non-increasing; `None` when even the last pair of averages rises.
/// Returned as inclusive positional indices into `values`.
pub fn consolidation_window(values: &[f64], window: usize) -> Option<(usize, usize)> {
    if values.len() < 2 {
        return None;
    }
    let w = window.max(1);
    let averaged: Vec<f64> = (0..values.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(w);
            let slice = &values[start..=i];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect();
    let mut start = values.len() - 1;
    while start > 0 && averaged[start] <= averaged[start - 1] {
        start -= 1;
    }
    (start < values.len() - 1).then_some((start, values.len() - 1))
}
