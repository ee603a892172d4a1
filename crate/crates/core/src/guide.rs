//! Binds the mdbook chapters to the crate so their Rust snippets run as
//! doc-tests; `cargo test --doc` keeps the book in sync with the code.
#![allow(unused)]

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!(concat!("../../../book/src/", $path))]
        mod $name {}
    };
}

chapter!(ch_tensors_and_randomness, "tensors-and-randomness.md");
chapter!(ch_models_and_gradients, "models-and-gradients.md");
chapter!(ch_private_training, "private-training.md");
chapter!(ch_privacy_accounting, "privacy-accounting.md");
chapter!(ch_federated_averaging, "federated-averaging.md");
chapter!(ch_auditing_disparity, "auditing-disparity.md");
