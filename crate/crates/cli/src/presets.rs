//! Bundled figure configs.

macro_rules! preset {
    ($name:literal) => {
        ($name, include_str!(concat!("../presets/", $name, ".toml")))
    };
}

/// Name and config text of every bundled preset.
pub const PRESETS: [(&str, &str); 10] = [
    preset!("fig1b"),
    preset!("fig1d"),
    preset!("fig2a"),
    preset!("fig2b"),
    preset!("fig2c"),
    preset!("fig3b"),
    preset!("fig3c"),
    preset!("fig3d"),
    preset!("fig3e"),
    preset!("fig4"),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}
