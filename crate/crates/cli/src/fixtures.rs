//! Bundled configurations with the paper's parameters.

pub const FIXTURES: &[(&str, &str)] = &[
    ("paper-rappi.json", include_str!("../fixtures/paper-rappi.json")),
    ("paper-rappi-square.json", include_str!("../fixtures/paper-rappi-square.json")),
    ("paper-2ppe.json", include_str!("../fixtures/paper-2ppe.json")),
    ("depth-sweep.json", include_str!("../fixtures/depth-sweep.json")),
    ("storage-sweep.json", include_str!("../fixtures/storage-sweep.json")),
    ("multimode-temporal.json", include_str!("../fixtures/multimode-temporal.json")),
    ("multimode-spectral.json", include_str!("../fixtures/multimode-spectral.json")),
    ("ram-schedule.json", include_str!("../fixtures/ram-schedule.json")),
    ("ram-requests.csv", include_str!("../fixtures/ram-requests.csv")),
    ("crosstalk.json", include_str!("../fixtures/crosstalk.json")),
    ("fit-published.json", include_str!("../fixtures/fit-published.json")),
    ("published-memory-curve.csv", include_str!("../fixtures/published-memory-curve.csv")),
    ("invalid-timing.json", include_str!("../fixtures/invalid-timing.json")),
    ("revival-failure.json", include_str!("../fixtures/revival-failure.json")),
];
