//! Bundled scenarios. Their text is fixed at build time; golden hashes in
//! the tests catch accidental edits.

const PRESETS: &[(&str, &str)] = &[
    ("gain", include_str!("../../presets/gain.toml")),
    ("boost", include_str!("../../presets/boost.toml")),
    ("buck", include_str!("../../presets/buck.toml")),
    ("fig6a", include_str!("../../presets/fig6a.toml")),
    ("fig6b", include_str!("../../presets/fig6b.toml")),
    ("fig7a", include_str!("../../presets/fig7a.toml")),
    ("fig7b", include_str!("../../presets/fig7b.toml")),
    ("fig8a", include_str!("../../presets/fig8a.toml")),
    ("fig8b", include_str!("../../presets/fig8b.toml")),
    ("fig9a", include_str!("../../presets/fig9a.toml")),
    ("fig9b", include_str!("../../presets/fig9b.toml")),
    ("fig10", include_str!("../../presets/fig10.toml")),
    ("fig11", include_str!("../../presets/fig11.toml")),
    ("nearunity", include_str!("../../presets/nearunity.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn get(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

/// Name and one-line description of every preset.
pub fn catalog() -> Vec<(&'static str, String)> {
    PRESETS
        .iter()
        .map(|(name, text)| {
            let desc = text
                .parse::<toml::Table>()
                .ok()
                .and_then(|t| t.get("description")?.as_str().map(str::to_string))
                .unwrap_or_default();
            (*name, desc)
        })
        .collect()
}
