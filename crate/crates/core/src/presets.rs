//! Design spaces shipped with the crate, one per experimental target.

use crate::design_space::DesignSpace;
use crate::error::{Error, Result};

const PRESETS: &[(&str, &str)] = &[
    ("restricted-mnist", include_str!("../presets/restricted-mnist.toml")),
    ("mnist-mlp", include_str!("../presets/mnist-mlp.toml")),
    ("mnist-cnn", include_str!("../presets/mnist-cnn.toml")),
    ("cifar10-cnn", include_str!("../presets/cifar10-cnn.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load(name: &str) -> Result<DesignSpace> {
    let text = source(name).ok_or_else(|| {
        Error::validation(format!(
            "unknown preset `{name}` (available: {})",
            names().collect::<Vec<_>>().join(", ")
        ))
    })?;
    DesignSpace::from_toml_str(text)
}

pub fn restricted_mnist() -> DesignSpace {
    load("restricted-mnist").expect("bundled preset parses")
}
