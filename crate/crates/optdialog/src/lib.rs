//! File formats, backends and batch evaluation around `optdialog-core`.

pub mod app;
pub mod config;
pub mod detections;
pub mod evaluation;
pub mod http;
pub mod image_input;
pub mod manifest;
pub mod mock_script;
pub mod pool;
pub mod stub;
pub mod template_dir;
