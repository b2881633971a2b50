//! Small passing repositories the corpus mutates.

pub struct Template {
    pub name: &'static str,
    pub files: &'static [(&'static str, &'static str)],
}

macro_rules! template {
    ($name:literal, [$($path:literal),* $(,)?]) => {
        Template {
            name: $name,
            files: &[$(($path, include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/templates/", $name, "/", $path)))),*],
        }
    };
}

pub const TEMPLATES: &[Template] = &[
    template!("inventory", [
        "inventory/__init__.py",
        "inventory/pricing.py",
        "inventory/report.py",
        "inventory/store.py",
        "main.py",
        "requirements.txt",
        "tests/__init__.py",
        "tests/test_inventory.py",
    ]),
    template!("textstats", [
        "main.py",
        "requirements.txt",
        "tests/__init__.py",
        "tests/test_textstats.py",
        "textstats/__init__.py",
        "textstats/counter.py",
        "textstats/summary.py",
        "textstats/tokenize.py",
    ]),
    template!("weather", [
        "main.py",
        "requirements.txt",
        "tests/__init__.py",
        "tests/test_weather.py",
        "weather/__init__.py",
        "weather/client.py",
        "weather/convert.py",
        "weather/forecast.py",
    ]),
];

pub fn template(name: &str) -> Option<&'static Template> {
    TEMPLATES.iter().find(|t| t.name == name)
}

pub fn template_names() -> Vec<&'static str> {
    TEMPLATES.iter().map(|t| t.name).collect()
}
