use crate::env::{NUM_CHANNELS, OBS_SIDE};
use crate::tensor::{Activation, LayerSpec, Network};

pub const X_DIM: usize = 32;
pub const Y_DIM: usize = 16;
pub const H_DIM: usize = 512;
pub const S_HAT_DIM: usize = X_DIM + H_DIM;

const FEATURES: usize = 16;
const INNER: usize = OBS_SIDE - 2;
const FLAT: usize = INNER * INNER * FEATURES;

pub fn encoder_x() -> Network {
    Network::new(
        "ex",
        vec![
            LayerSpec::conv(OBS_SIDE, OBS_SIDE, NUM_CHANNELS, FEATURES, Activation::Relu),
            LayerSpec::dense(FLAT, 32, Activation::Relu),
            LayerSpec::dense(32, X_DIM, Activation::Linear),
        ],
    )
    .expect("valid encoder")
}

pub fn decoder_x() -> Network {
    Network::new(
        "dx",
        vec![
            LayerSpec::dense(X_DIM, 32, Activation::Relu),
            LayerSpec::dense(32, FLAT, Activation::Relu),
            LayerSpec::transposed_conv(INNER, INNER, FEATURES, NUM_CHANNELS, Activation::Softmax),
        ],
    )
    .expect("valid decoder")
}

pub fn encoder_y() -> Network {
    Network::new(
        "ey",
        vec![
            LayerSpec::dense(X_DIM, 512, Activation::Relu),
            LayerSpec::dense(512, 128, Activation::Relu),
            LayerSpec::dense(128, Y_DIM, Activation::Linear),
        ],
    )
    .expect("valid encoder")
}

/// `classes` output channels per pixel; channel `k` stands for observation
/// channel `k`.
pub fn decoder_y(classes: usize) -> Network {
    Network::new(
        "dy",
        vec![
            LayerSpec::dense(Y_DIM, 128, Activation::Relu),
            LayerSpec::dense(128, FLAT, Activation::Relu),
            LayerSpec::transposed_conv(INNER, INNER, FEATURES, classes, Activation::Softmax),
        ],
    )
    .expect("valid decoder")
}
