//! File formats and the synthetic stream generator.

pub mod codebook_file;
pub mod index_file;
pub mod stream;
pub mod synth;

pub use codebook_file::{load_codebook, read_container, save_codebook, write_container, CodebookBody, CodebookFile};
pub use index_file::{load_index, save_index};
pub use stream::{load_stream, read_truth, save_stream, write_record, write_truth, StreamReader};
pub use synth::{generate_stream, SyntheticStream, SyntheticStreamSpec};
