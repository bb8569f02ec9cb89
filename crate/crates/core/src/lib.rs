//! Branched optimal transport on the unit square, analyzed as temporal
//! hypergraphs.
//!
//! The pipeline: a forcing (source and sinks) on a triangulated \[0,1\]²
//! drives the transport dynamics ([`dmk`]); each time step's conductivity
//! field is thresholded into a spatial graph and lifted to a hypergraph of
//! edges and triangles ([`extract`]); hypergraph analytics ([`hyper`]) feed
//! time-indexed property traces and convergence markers ([`temporal`]).
//! [`synth`] generates seeded problem ensembles and [`image`] applies the
//! same extraction-and-analysis stack to grayscale image sequences.

pub mod dmk;
pub mod extract;
pub mod hyper;
pub mod image;
pub mod linalg;
pub mod mesh;
pub mod synth;
pub mod temporal;
