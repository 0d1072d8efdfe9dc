//! Synthetic stand-in for the quarterly US macro panel, 1992Q1 to 2019Q4.
//!
//! The series are simulated, not observed. They share the column layout and
//! rough magnitudes of the public data (real GDP in billions, government
//! spending, TED spread in percent, a commodity price index, unemployment in
//! percent), with two recessions placed at 2001 and 2008-09. Spending growth
//! leans against the cycle, and next-quarter output growth moves with the
//! spending class.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{MacroTable, Quarter};
use crate::treatment::class_of;

/// Seed of the bundled file.
pub const FIXTURE_SEED: u64 = 1992;
pub const FIRST_QUARTER: (i32, u8) = (1992, 1);
pub const QUARTERS: usize = 112;
/// File name of the bundled table under the crate's `data/` directory.
pub const FIXTURE_FILE: &str = "us_macro_1992_2019_synthetic.csv";

/// Trend quarterly growth of log output.
const TREND: f64 = 0.0062;
/// Mean and spread of quarterly log spending growth.
const SPEND_MEAN: f64 = 0.005;
const SPEND_SD: f64 = 0.009;
/// Next-quarter output effect of each spending class.
const CLASS_EFFECT: [f64; 4] = [-0.0028, -0.0006, 0.0004, 0.0007];
/// Government share of output; spending growth enters output growth with it.
const GOV_SHARE: f64 = 0.17;

fn recession_shock(q: Quarter) -> f64 {
    match (q.year(), q.quarter()) {
        (2001, 1..=3) => -0.004,
        (2008, 3) => -0.008,
        (2008, 4) => -0.02,
        (2009, 1) => -0.014,
        (2009, 2) => -0.004,
        _ => 0.0,
    }
}

fn funding_stress(q: Quarter) -> f64 {
    match (q.year(), q.quarter()) {
        (2007, 3) => 1.4,
        (2007, 4) => 1.5,
        (2008, 1) => 1.0,
        (2008, 2) => 0.9,
        (2008, 3) => 1.6,
        (2008, 4) => 2.2,
        (2009, 1) => 0.8,
        _ => 0.0,
    }
}

/// Simulates the table for a given seed.
pub fn synthetic_macro_table(seed: u64) -> MacroTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let start = Quarter::new(FIRST_QUARTER.0, FIRST_QUARTER.1).expect("valid quarter");
    let dates: Vec<Quarter> = (0..QUARTERS as i64).map(|i| start.offset(i)).collect();

    let mut log_y = vec![9.18];
    let mut log_g = vec![7.88];
    let mut unemp = vec![7.4];
    let mut log_comm = vec![4.6];
    let mut ted = vec![0.45];
    let mut cycle = 0.0;
    let mut last_growth = TREND;
    let mut carried_effect = 0.0;

    for &q in &dates[1..] {
        let du_prev = unemp[unemp.len() - 1] - unemp[unemp.len().saturating_sub(2)];
        // spending leans against last quarter's slack
        let g = SPEND_MEAN - 0.25 * (last_growth - TREND) + 0.004 * du_prev + SPEND_SD * unit.sample(&mut rng);
        cycle = 0.4 * cycle + 0.004 * unit.sample(&mut rng) + recession_shock(q);
        let growth = TREND + carried_effect + GOV_SHARE * (g - SPEND_MEAN) + cycle;
        carried_effect = CLASS_EFFECT[class_of(g, SPEND_SD) - 1];

        let u_prev = unemp[unemp.len() - 1];
        let du = -40.0 * (growth - TREND) + 0.08 * unit.sample(&mut rng) - 0.02 * (u_prev - 5.5);
        let comm = 0.004 + 1.5 * (growth - TREND) + 0.045 * unit.sample(&mut rng);
        let stress = funding_stress(q);
        let persistence = if stress == 0.0 { 0.6 } else { 0.0 };
        let spread = (0.3 + persistence * (ted[ted.len() - 1] - 0.3) + stress + 0.06 * unit.sample(&mut rng)).max(0.08);

        log_y.push(log_y[log_y.len() - 1] + growth);
        log_g.push(log_g[log_g.len() - 1] + g);
        unemp.push((u_prev + du).clamp(3.4, 10.5));
        log_comm.push(log_comm[log_comm.len() - 1] + comm);
        ted.push(spread);
        last_growth = growth;
    }

    let round = |v: f64, digits: i32| {
        let f = 10f64.powi(digits);
        (v * f).round() / f
    };
    let mut columns = IndexMap::new();
    columns.insert("rgdp".to_string(), log_y.iter().map(|v| round(v.exp(), 3)).collect());
    columns.insert("gov_spend".to_string(), log_g.iter().map(|v| round(v.exp(), 3)).collect());
    columns.insert("ted".to_string(), ted.iter().map(|v| round(*v, 2)).collect());
    columns.insert("commodity".to_string(), log_comm.iter().map(|v| round(v.exp(), 2)).collect());
    columns.insert("unemp".to_string(), unemp.iter().map(|v| round(*v, 1)).collect());
    MacroTable::new(dates, columns).expect("simulated table is well formed")
}

/// The bundled table as CSV text.
pub fn fixture_csv() -> String {
    let mut out = Vec::new();
    synthetic_macro_table(FIXTURE_SEED)
        .write_csv(&mut out, "date")
        .expect("in-memory write");
    String::from_utf8(out).expect("utf-8")
}
