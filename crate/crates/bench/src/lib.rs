//! Fixtures shared by the benchmarks.

use pretrend_core::{simulate, PanelDataset, SimConfig, SimKind};

/// Default-sized panel of `kind` (100 units, 21 periods).
pub fn panel(kind: SimKind) -> PanelDataset {
    simulate::gen(&SimConfig::defaults(kind)).expect("default config is valid")
}

/// Panel with `n_per_group` units per arm and periods `-t_half..=t_half`.
pub fn scaled_panel(kind: SimKind, n_per_group: usize, t_half: i64) -> PanelDataset {
    let mut cfg = SimConfig::defaults(kind);
    cfg.n_per_group = n_per_group;
    cfg.t_min = -t_half;
    cfg.t_max = t_half;
    simulate::gen(&cfg).expect("scaled config is valid")
}
