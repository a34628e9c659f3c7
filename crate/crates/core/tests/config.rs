use robust_stop::harness::{ExperimentConfig, LipschitzK, TableConfig};

fn base() -> serde_json::Value {
    serde_json::from_str(
        &std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../configs/bermudan_call_x100.json"
        ))
        .unwrap(),
    )
    .unwrap()
}

fn parse(v: &serde_json::Value) -> robust_stop::Result<ExperimentConfig> {
    ExperimentConfig::from_json(&v.to_string())
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let text = std::fs::read_to_string(&path).unwrap();
        if name.starts_with("table_") {
            TableConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        } else if name.starts_with("tree_") {
            robust_stop::oracle::TreeSpec::from_json(&text)
                .unwrap()
                .build::<robust_stop::Exact>()
                .unwrap();
        } else {
            ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}

#[test]
fn invalid_values_are_config_errors() {
    let cases: Vec<(&str, Box<dyn Fn(&mut serde_json::Value)>)> = vec![
        ("unknown field", Box::new(|v| v["sede"] = 1.into())),
        ("too few paths", Box::new(|v| v["samples"]["n2"] = 1.into())),
        ("zero rights", Box::new(|v| v["rights"] = 0.into())),
        (
            "nonpositive strike",
            Box::new(|v| v["payoff"]["strike"] = 0.into()),
        ),
        (
            "negative sigma",
            Box::new(|v| v["model"]["assets"][0]["sigma"] = (-0.1).into()),
        ),
        (
            "two basis kinds",
            Box::new(|v| v["basis"]["even"] = 5.into()),
        ),
        (
            "negative radius",
            Box::new(|v| v["driver"] = serde_json::json!({"kind": "ball", "delta1": -0.1})),
        ),
    ];
    for (name, edit) in cases {
        let mut v = base();
        edit(&mut v);
        let err = parse(&v).expect_err(name);
        assert!(err.is_config(), "{name}: {err}");
    }
}

#[test]
fn non_monotone_dates_are_rejected() {
    let mut v = base();
    v["grid"] = serde_json::json!({"dates": [0.0, 1.0, 0.5], "steps_per_interval": 2});
    assert!(parse(&v).unwrap_err().is_config());
}

#[test]
fn scaling_keeps_minimums() {
    let c = parse(&base()).unwrap().scaled(1e-9).unwrap();
    assert_eq!(c.samples.n1, 2);
    assert_eq!(c.grid.steps_per_interval, 1);
    assert!(parse(&base()).unwrap().scaled(0.0).is_err());
}

#[test]
fn lipschitz_factor_parses() {
    assert_eq!(LipschitzK::parse("2.5").unwrap(), LipschitzK::Value(2.5));
    assert!(LipschitzK::parse("theory").is_ok());
    assert!(LipschitzK::parse("huge").is_err());
}
