use std::path::Path;

use proptest::prelude::*;

use evodiff::config::{load_config, parse_config, read_growth_table, write_config};
use evodiff::grid::{Grid, StateField};
use evodiff::io::{diagnostics_header, export_plotdata, read_snapshot, write_snapshot, PlotData};
use evodiff::solver::run;

const BASE: &str = r#"
schema = 1

[growth]
kind = "static"
horizon = 1.0

[model]
builtin = "reversible-reaction"
kf = 1.0
kr = 1.0
d = [1.0, 1.0, 1.0]

[grid]
extents = [1.0, 1.0]
nodes = [9, 9]

[initial]
values = ["1", "1", "1"]

[time]
t_end = 0.1

[diagnostics]
every = 10
"#;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn snapshot_reads_back_bit_exactly(
        nx in 3usize..7,
        ny in 3usize..7,
        m in 1usize..4,
        t in 0.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let grid = Grid::new(&[1.0, 2.0], &[nx, ny]).unwrap();
        let mut state = seed;
        let components = (0..m)
            .map(|_| {
                (0..grid.len())
                    .map(|_| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        f64::from_bits(state >> 2) // finite, spans many magnitudes
                    })
                    .collect()
            })
            .collect();
        let field = StateField::new(t, components);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        write_snapshot(&path, &grid, &field).unwrap();
        let (header, back) = read_snapshot(&path).unwrap();
        prop_assert_eq!(header.counts, vec![nx, ny]);
        prop_assert_eq!(header.m, m);
        prop_assert_eq!(back.t.to_bits(), t.to_bits());
        for (a, b) in field.components.iter().zip(&back.components) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn config_survives_a_file_round_trip(
        t_end in 0.01f64..1.0,
        d in prop::collection::vec(0.01f64..5.0, 3),
        nodes in prop::collection::vec(3usize..40, 2),
        safety in 0.1f64..1.0,
    ) {
        let mut cfg = parse_config(BASE, Path::new(".")).unwrap();
        cfg.time.t_end = t_end;
        cfg.model.d = d;
        cfg.grid.nodes = nodes;
        cfg.time.safety = safety;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        write_config(&cfg, &path).unwrap();
        let mut back = load_config(&path).unwrap();
        back.base_dir = cfg.base_dir.clone();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn equilibrium_slices_are_flat_and_export_is_deterministic() {
    let cfg = parse_config(BASE, Path::new(".")).unwrap();
    let (run_cfg, init) = cfg.build().unwrap();
    let traj = run(&run_cfg, init).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for what in [PlotData::Diagnostics, PlotData::Slices, PlotData::Final] {
        let fa = export_plotdata(&traj, &run_cfg.grid, what, a.path()).unwrap();
        let fb = export_plotdata(&traj, &run_cfg.grid, what, b.path()).unwrap();
        for (x, y) in fa.iter().zip(&fb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
    }

    // kf·u1·u2 = kr·u3 holds for the uniform data, so every profile stays at 1
    let mut rdr = csv::Reader::from_path(a.path().join("slices.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let u_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with('u'))
        .map(|(i, _)| i)
        .collect();
    assert_eq!(u_cols.len(), 3);
    for rec in rdr.records() {
        let rec = rec.unwrap();
        for &c in &u_cols {
            let v: f64 = rec[c].parse().unwrap();
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    let mut rdr = csv::Reader::from_path(a.path().join("diagnostics.csv")).unwrap();
    let got: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(got, diagnostics_header(3));
}

#[test]
fn growth_table_loads_and_rejects_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("g.csv");
    std::fs::write(&good, "t, lambda1, lambda2\n0, 1, 1\n0.5, 1.2, 1.1\n1.0, 1.5, 1.3\n").unwrap();
    read_growth_table(&good).unwrap();

    let bad = dir.path().join("b.csv");
    std::fs::write(&bad, "t,lambda1\n0,1\n0.5,oops\n").unwrap();
    let msg = read_growth_table(&bad).unwrap_err().to_string();
    assert!(msg.contains("row 3"), "{msg}");

    let unanchored = dir.path().join("s.csv");
    std::fs::write(&unanchored, "t,lambda1\n0,1.1\n0.5,1.2\n").unwrap();
    assert!(read_growth_table(&unanchored).is_err());
}

#[test]
fn table_growth_config_resolves_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("law.csv"), "t,lambda1,lambda2\n0,1,1\n1,1.5,1.5\n").unwrap();
    let text = BASE.replace(
        "kind = \"static\"",
        "kind = \"table\"\ntable = \"law.csv\"",
    );
    let path = dir.path().join("c.toml");
    std::fs::write(&path, text).unwrap();
    let cfg = load_config(&path).unwrap();
    let law = cfg.build_law().unwrap();
    let scales = law.scales(0.5).unwrap();
    assert_eq!(scales.len(), 2);
    assert!(scales.iter().all(|l| *l > 1.0 && *l < 1.5), "{scales:?}");
}
