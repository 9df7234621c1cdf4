pub mod descriptor_io;
pub mod descriptors;
pub mod geometry;
pub mod localization;
pub mod synthetic;
pub mod map;
pub mod navigation;
pub mod evaluation;
pub mod simulation;
