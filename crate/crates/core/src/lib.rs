//! Builds observation contexts by unifying an objective reference context
//! (geospatial place entities) with subjective personal contexts (diary
//! answers and GPS traces), then answers enquiries over the result.

pub mod demo;
pub mod enquiry;
pub mod geo;
pub mod graph;
pub mod io;
pub mod personal;
pub mod reference;
pub mod synth;
pub mod teleontology;
pub mod time;
pub mod unify;
