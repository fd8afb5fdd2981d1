//! File formats: the `CSA1` tensor container, its JSON sidecar, and JSON
//! run reports.

pub mod json;
pub mod report;
pub mod tensor;

pub use report::{write_json_atomic, InputDigest, Report};
pub use tensor::{
    decode_tensor, encode_tensor, file_crc32, read_sidecar, read_tensor, sidecar_path, write_bytes_atomic,
    write_tensor, Dtype, FormatError, SidecarMeta, Tensor, FORMAT_VERSION, MAGIC, SIDECAR_SCHEMA_VERSION,
};
