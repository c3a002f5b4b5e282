//! Protocol runners driven by a JSON configuration. Each run ends in a
//! `Report` that is written as JSON plus CSV tables.

mod config;
mod protocols;
mod report;

pub use config::{
    CatModel, CouplingConfig, DeviceConfig, DrivesConfig, ExpansionConfig, GridConfig, Protocol, Rates, RatesConfig,
    ScenarioConfig, SweepConfig,
};
pub use protocols::{
    cat_dynamics, convergence_gate, ground_product, rotate_oscillator, run, CatSeries, CatSetup,
    RunOptions, AMPLITUDE_WINDOW, DEFAULT_SAMPLE_STEP, DETECTION_WINDOW, GATE_EXTRA_LEVELS, GATE_THRESHOLD,
};
pub use report::{format_value, GateRecord, GateRun, Report, Table};
