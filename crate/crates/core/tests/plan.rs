use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use udfwh::expr::{col, lit, Expr};
use udfwh::plan::{build_plan, render_sql, Catalog, DataFrameOp, Plan, ProjectItem};
use udfwh::udf::{eval_scalar_udf, eval_udaf, eval_udtf, EvaluatorRegistry, UdfKind, UdfMode, UdfSpec};
use udfwh::{Batch, Field, Schema, Value, ValueKind};

fn catalog() -> Catalog {
    Catalog::new()
        .with_table("t", Schema::of(&[("x", ValueKind::Int), ("y", ValueKind::Int)]))
        .with_table("u", Schema::of(&[("x", ValueKind::Int), ("y", ValueKind::Int)]))
}

fn predicates() -> Vec<Expr> {
    let mut out = Vec::new();
    for c in ["x", "y"] {
        for v in [0i64, 1] {
            out.push(col(c).eq(lit(v)));
            out.push(col(c).lt(lit(v)));
            out.push(col(c).gt(lit(v)));
        }
    }
    out.push(col("x").add(lit(1)).gt(col("y")));
    out
}

fn steps() -> Vec<DataFrameOp> {
    let mut out: Vec<DataFrameOp> = predicates().into_iter().map(DataFrameOp::Filter).collect();
    for items in [vec!["x"], vec!["y"], vec!["x", "y"], vec!["y", "x"]] {
        out.push(DataFrameOp::Project(items.into_iter().map(ProjectItem::from).collect()));
    }
    out.push(DataFrameOp::Project(vec![ProjectItem::aliased(
        col("x").mul(lit(2)),
        "z",
    )]));
    out.push(DataFrameOp::ApplyUdf {
        udf: UdfSpec::scalar("add1", vec![ValueKind::Int], ValueKind::Int),
        args: vec![col("x")],
    });
    out.push(DataFrameOp::ApplyUdf {
        udf: UdfSpec::scalar("add1", vec![ValueKind::Int], ValueKind::Int),
        args: vec![col("y")],
    });
    out.push(DataFrameOp::Aggregate {
        udf: UdfSpec::registered(
            "sum",
            UdfKind::Aggregate,
            UdfMode::Row,
            vec![ValueKind::Int],
            vec![Field::new("s", ValueKind::Int)],
        ),
        group_by: vec!["x".into()],
        args: vec![col("y")],
    });
    out
}

/// Every valid pipeline of a scan followed by up to two steps.
fn small_plans() -> Vec<Plan> {
    let c = catalog();
    let mut plans = Vec::new();
    for table in ["t", "u"] {
        let scan = DataFrameOp::Scan(table.into());
        plans.extend(build_plan(&c, std::slice::from_ref(&scan)));
        for a in steps() {
            plans.extend(build_plan(&c, &[scan.clone(), a.clone()]));
            for b in steps() {
                plans.extend(build_plan(&c, &[scan.clone(), a.clone(), b]));
            }
        }
    }
    plans
}

#[test]
fn render_sql_is_injective_over_small_plans() {
    let plans = small_plans();
    assert!(plans.len() > 300, "only {} plans built", plans.len());
    let mut seen: BTreeMap<String, &Plan> = BTreeMap::new();
    for p in &plans {
        let sql = render_sql(p);
        if let Some(prev) = seen.insert(sql.clone(), p) {
            assert_eq!(prev, p, "two different plans render to {sql}");
        }
    }
}

#[test]
fn build_plan_is_deterministic() {
    let c = catalog();
    let ops = [
        DataFrameOp::Scan("t".into()),
        DataFrameOp::Filter(col("x").gt(lit(1))),
        DataFrameOp::Project(vec!["y".into()]),
    ];
    assert_eq!(build_plan(&c, &ops), build_plan(&c, &ops));
    assert_eq!(
        render_sql(&build_plan(&c, &ops).unwrap()),
        render_sql(&build_plan(&c, &ops).unwrap())
    );
}

fn int_batch(values: &[Option<i64>]) -> Batch {
    let col: Vec<Value> = values.iter().map(|v| v.map_or(Value::Null, Value::Int)).collect();
    Batch::new(Schema::of(&[("x", ValueKind::Int)]), vec![col]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn row_and_vectorized_agree(values in prop::collection::vec(prop::option::of(-1_000_000i64..1_000_000), 0..64)) {
        let reg = EvaluatorRegistry::with_builtins();
        let input = int_batch(&values);
        for name in ["identity", "add1"] {
            let spec = UdfSpec::scalar(name, vec![ValueKind::Int], ValueKind::Int);
            let row = eval_scalar_udf(&reg, &spec, &input).unwrap();
            let vec = eval_scalar_udf(&reg, &spec.clone().vectorized(), &input).unwrap();
            prop_assert_eq!(row, vec);
        }
    }

    #[test]
    fn udtf_keeps_emission_order(counts in prop::collection::vec(0i64..4, 0..20)) {
        let reg = EvaluatorRegistry::with_builtins();
        let input = Batch::from_rows(
            Schema::of(&[("v", ValueKind::Text), ("n", ValueKind::Int)]),
            counts.iter().enumerate().map(|(i, &n)| vec![Value::Text(format!("r{i}")), Value::Int(n)]).collect(),
        ).unwrap();
        let spec = UdfSpec::registered(
            "repeat", UdfKind::Table, UdfMode::Row,
            vec![ValueKind::Text, ValueKind::Int], vec![Field::new("v", ValueKind::Text)],
        );
        let out = eval_udtf(&reg, &spec, &input).unwrap();
        let expected: Vec<Value> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(Value::Text(format!("r{i}")), n as usize))
            .collect();
        prop_assert_eq!(out.column("v").unwrap(), expected.as_slice());
    }

    #[test]
    fn udaf_one_row_per_group(rows in prop::collection::vec((0i64..5, -100i64..100), 0..50)) {
        let reg = EvaluatorRegistry::with_builtins();
        let input = Batch::from_rows(
            Schema::of(&[("g", ValueKind::Int), ("v", ValueKind::Int)]),
            rows.iter().map(|&(g, v)| vec![Value::Int(g), Value::Int(v)]).collect(),
        ).unwrap();
        let spec = UdfSpec::registered(
            "sum", UdfKind::Aggregate, UdfMode::Row,
            vec![ValueKind::Int], vec![Field::new("s", ValueKind::Int)],
        );
        let out = eval_udaf(&reg, &spec, &input, &["g"]).unwrap();
        let groups: BTreeSet<i64> = rows.iter().map(|r| r.0).collect();
        prop_assert_eq!(out.row_count(), groups.len());
        for (i, g) in groups.iter().enumerate() {
            let want: i64 = rows.iter().filter(|r| r.0 == *g).map(|r| r.1).sum();
            prop_assert_eq!(out.row(i), vec![Value::Int(*g), Value::Int(want)]);
        }
    }
}
