//! DataFrame-style plan builder, SQL rendering, and an in-process reference
//! executor.
//!
//! Rendering grammar: `SELECT <projlist> FROM <source>[ WHERE (<pred>)]`.
//! A filter directly over a scan is folded into the `WHERE` clause of the
//! operator above it; any other child renders as a parenthesized subquery.
//! Table functions render as a lateral `, TABLE(f(args))` source and
//! aggregates append ` GROUP BY <cols>` (`GROUP BY ()` when ungrouped).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::batch::{is_identifier, Batch, BatchError, Field, Schema};
use crate::expr::Expr;
use crate::udf::{eval_scalar_udf, eval_udaf, eval_udtf, EvaluatorRegistry, UdfError, UdfKind, UdfSpec};
use crate::value::{Value, ValueKind};

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("empty pipeline")]
    EmptyPipeline,
    #[error("a pipeline has exactly one scan, and it comes first")]
    ScanNotFirst,
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid projection: {0}")]
    InvalidProjection(String),
    #[error(transparent)]
    Schema(#[from] BatchError),
    #[error(transparent)]
    Udf(#[from] UdfError),
}

#[derive(Debug, Error, PartialEq)]
pub enum ExecError {
    #[error("no data for table `{0}`")]
    MissingTable(String),
    #[error("expression failed: {0}")]
    Expr(String),
    #[error(transparent)]
    Udf(#[from] UdfError),
    #[error(transparent)]
    Batch(#[from] BatchError),
}

/// Table name to schema.
#[derive(Debug, Clone, Default)]
pub struct Catalog {
    tables: BTreeMap<String, Schema>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_table(mut self, name: &str, schema: Schema) -> Self {
        self.tables.insert(name.to_string(), schema);
        self
    }

    pub fn schema(&self, table: &str) -> Option<&Schema> {
        self.tables.get(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectItem {
    pub expr: Expr,
    pub alias: Option<String>,
}

impl ProjectItem {
    pub fn column(name: &str) -> Self {
        Self {
            expr: Expr::Column(name.to_string()),
            alias: None,
        }
    }

    pub fn aliased(expr: Expr, alias: &str) -> Self {
        Self {
            expr,
            alias: Some(alias.to_string()),
        }
    }

    fn output_name(&self) -> Result<String, PlanError> {
        match (&self.alias, &self.expr) {
            (Some(a), _) if is_identifier(a) => Ok(a.clone()),
            (Some(a), _) => Err(PlanError::InvalidProjection(format!("invalid alias `{a}`"))),
            (None, Expr::Column(c)) => Ok(c.clone()),
            (None, e) => Err(PlanError::InvalidProjection(format!("`{e}` needs an alias"))),
        }
    }

    fn to_sql(&self) -> String {
        match &self.alias {
            Some(a) => format!("{} AS {a}", self.expr.to_sql()),
            None => self.expr.to_sql(),
        }
    }
}

impl From<&str> for ProjectItem {
    fn from(name: &str) -> Self {
        ProjectItem::column(name)
    }
}

/// One step of a DataFrame-style pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum DataFrameOp {
    Scan(String),
    Filter(Expr),
    Project(Vec<ProjectItem>),
    ApplyUdf {
        udf: UdfSpec,
        args: Vec<Expr>,
    },
    ApplyUdtf {
        udf: UdfSpec,
        args: Vec<Expr>,
    },
    Aggregate {
        udf: UdfSpec,
        group_by: Vec<String>,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanNode {
    Scan {
        table: String,
    },
    Filter {
        predicate: Expr,
        input: Box<Plan>,
    },
    Project {
        items: Vec<ProjectItem>,
        input: Box<Plan>,
    },
    UdfApply {
        udf: UdfSpec,
        args: Vec<Expr>,
        input: Box<Plan>,
    },
    UdtfApply {
        udf: UdfSpec,
        args: Vec<Expr>,
        input: Box<Plan>,
    },
    UdafAggregate {
        udf: UdfSpec,
        group_by: Vec<String>,
        args: Vec<Expr>,
        input: Box<Plan>,
    },
}

/// A validated operator tree with its output schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    node: PlanNode,
    schema: Schema,
}

impl Plan {
    pub fn node(&self) -> &PlanNode {
        &self.node
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn input(&self) -> Option<&Plan> {
        match &self.node {
            PlanNode::Scan { .. } => None,
            PlanNode::Filter { input, .. }
            | PlanNode::Project { input, .. }
            | PlanNode::UdfApply { input, .. }
            | PlanNode::UdtfApply { input, .. }
            | PlanNode::UdafAggregate { input, .. } => Some(input),
        }
    }

    /// Number of operators in the tree.
    pub fn depth(&self) -> usize {
        1 + self.input().map_or(0, Plan::depth)
    }

    /// Every UDF referenced by the plan, leaf first.
    pub fn udfs(&self) -> Vec<&UdfSpec> {
        let mut out = self.input().map_or_else(Vec::new, Plan::udfs);
        match &self.node {
            PlanNode::UdfApply { udf, .. } | PlanNode::UdtfApply { udf, .. } | PlanNode::UdafAggregate { udf, .. } => {
                out.push(udf)
            }
            _ => {}
        }
        out
    }
}

fn check_udf_args(udf: &UdfSpec, args: &[Expr], schema: &Schema, expected: UdfKind) -> Result<(), PlanError> {
    udf.validate()?;
    if udf.kind != expected {
        return Err(UdfError::WrongKind {
            name: udf.name.clone(),
            expected,
            actual: udf.kind,
        }
        .into());
    }
    if args.len() != udf.args.len() {
        return Err(PlanError::TypeMismatch(format!(
            "`{}` takes {} arguments, got {}",
            udf.name,
            udf.args.len(),
            args.len()
        )));
    }
    for (i, (arg, want)) in args.iter().zip(&udf.args).enumerate() {
        match arg.kind_in(schema)? {
            Some(k) if k != *want => {
                return Err(PlanError::TypeMismatch(format!(
                    "argument {i} of `{}` is {k}, expected {want}",
                    udf.name
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Validates a pipeline and propagates schemas bottom-up.
pub fn build_plan(catalog: &Catalog, ops: &[DataFrameOp]) -> Result<Plan, PlanError> {
    let (first, rest) = ops.split_first().ok_or(PlanError::EmptyPipeline)?;
    let DataFrameOp::Scan(table) = first else {
        return Err(PlanError::ScanNotFirst);
    };
    let schema = catalog
        .schema(table)
        .ok_or_else(|| PlanError::UnknownTable(table.clone()))?
        .clone();
    let mut plan = Plan {
        node: PlanNode::Scan { table: table.clone() },
        schema,
    };
    for op in rest {
        plan = apply_op(plan, op)?;
    }
    Ok(plan)
}

fn apply_op(child: Plan, op: &DataFrameOp) -> Result<Plan, PlanError> {
    let input_schema = child.schema.clone();
    let (node, schema) = match op {
        DataFrameOp::Scan(_) => return Err(PlanError::ScanNotFirst),
        DataFrameOp::Filter(predicate) => {
            match predicate.kind_in(&input_schema)? {
                Some(ValueKind::Bool) | None => {}
                Some(k) => return Err(PlanError::TypeMismatch(format!("filter predicate has kind {k}"))),
            }
            (
                PlanNode::Filter {
                    predicate: predicate.clone(),
                    input: Box::new(child),
                },
                input_schema,
            )
        }
        DataFrameOp::Project(items) => {
            if items.is_empty() {
                return Err(PlanError::InvalidProjection("empty projection list".into()));
            }
            let mut fields = Vec::with_capacity(items.len());
            for item in items {
                // Untyped (all-null) expressions project as int columns.
                let kind = item.expr.kind_in(&input_schema)?.unwrap_or(ValueKind::Int);
                fields.push(Field::new(item.output_name()?, kind));
            }
            (
                PlanNode::Project {
                    items: items.clone(),
                    input: Box::new(child),
                },
                Schema::new(fields)?,
            )
        }
        DataFrameOp::ApplyUdf { udf, args } => {
            check_udf_args(udf, args, &input_schema, UdfKind::Scalar)?;
            let schema = udf.return_schema();
            (
                PlanNode::UdfApply {
                    udf: udf.clone(),
                    args: args.clone(),
                    input: Box::new(child),
                },
                schema,
            )
        }
        DataFrameOp::ApplyUdtf { udf, args } => {
            check_udf_args(udf, args, &input_schema, UdfKind::Table)?;
            let schema = udf.return_schema();
            (
                PlanNode::UdtfApply {
                    udf: udf.clone(),
                    args: args.clone(),
                    input: Box::new(child),
                },
                schema,
            )
        }
        DataFrameOp::Aggregate { udf, group_by, args } => {
            check_udf_args(udf, args, &input_schema, UdfKind::Aggregate)?;
            let mut fields = Vec::with_capacity(group_by.len() + 1);
            for g in group_by {
                let f = input_schema
                    .field(g)
                    .ok_or_else(|| PlanError::UnknownColumn(g.clone()))?;
                fields.push(f.clone());
            }
            fields.push(udf.returns[0].clone());
            (
                PlanNode::UdafAggregate {
                    udf: udf.clone(),
                    group_by: group_by.clone(),
                    args: args.clone(),
                    input: Box::new(child),
                },
                Schema::new(fields)?,
            )
        }
    };
    Ok(Plan { node, schema })
}

fn call_sql(udf: &UdfSpec, args: &[Expr]) -> String {
    let args: Vec<String> = args.iter().map(Expr::to_sql).collect();
    format!("{}({})", udf.name, args.join(", "))
}

/// `FROM` source and optional folded predicate for an operator's input.
fn source_sql(input: &Plan) -> (String, Option<String>) {
    match &input.node {
        PlanNode::Scan { table } => (table.clone(), None),
        PlanNode::Filter { predicate, input } => match &input.node {
            PlanNode::Scan { table } => (table.clone(), Some(predicate.to_sql())),
            _ => (format!("({})", render_sql(input)), Some(predicate.to_sql())),
        },
        _ => (format!("({})", render_sql(input)), None),
    }
}

fn select(projlist: &str, from: &str, pred: Option<String>) -> String {
    match pred {
        Some(p) => format!("SELECT {projlist} FROM {from} WHERE ({p})"),
        None => format!("SELECT {projlist} FROM {from}"),
    }
}

/// Deterministic SQL text for a plan.
pub fn render_sql(plan: &Plan) -> String {
    match &plan.node {
        PlanNode::Scan { table } => select("*", table, None),
        PlanNode::Filter { .. } => {
            let (from, pred) = source_sql(plan);
            select("*", &from, pred)
        }
        PlanNode::Project { items, input } => {
            let list: Vec<String> = items.iter().map(ProjectItem::to_sql).collect();
            let (from, pred) = source_sql(input);
            select(&list.join(", "), &from, pred)
        }
        PlanNode::UdfApply { udf, args, input } => {
            let (from, pred) = source_sql(input);
            select(&call_sql(udf, args), &from, pred)
        }
        PlanNode::UdtfApply { udf, args, input } => {
            let cols: Vec<&str> = udf.returns.iter().map(|f| f.name.as_str()).collect();
            let (from, pred) = source_sql(input);
            let from = format!("{from}, TABLE({})", call_sql(udf, args));
            select(&cols.join(", "), &from, pred)
        }
        PlanNode::UdafAggregate {
            udf,
            group_by,
            args,
            input,
        } => {
            let mut list: Vec<String> = group_by.clone();
            list.push(call_sql(udf, args));
            let (from, pred) = source_sql(input);
            let group = if group_by.is_empty() {
                "()".to_string()
            } else {
                group_by.join(", ")
            };
            format!("{} GROUP BY {group}", select(&list.join(", "), &from, pred))
        }
    }
}

/// Evaluates a plan over in-memory tables with the reference evaluators.
pub fn execute(
    plan: &Plan,
    tables: &BTreeMap<String, Batch>,
    registry: &EvaluatorRegistry,
) -> Result<Batch, ExecError> {
    match &plan.node {
        PlanNode::Scan { table } => tables
            .get(table)
            .cloned()
            .ok_or_else(|| ExecError::MissingTable(table.clone())),
        PlanNode::Filter { predicate, input } => {
            let batch = execute(input, tables, registry)?;
            let mask: Vec<bool> = predicate
                .eval_batch(&batch)
                .map_err(ExecError::Expr)?
                .iter()
                .map(|v| v.as_bool() == Some(true))
                .collect();
            Ok(batch.filter(&mask))
        }
        PlanNode::Project { items, input } => {
            let batch = execute(input, tables, registry)?;
            let cols = items
                .iter()
                .map(|i| i.expr.eval_batch(&batch))
                .collect::<Result<Vec<_>, _>>()
                .map_err(ExecError::Expr)?;
            Ok(Batch::new(plan.schema.clone(), cols)?)
        }
        PlanNode::UdfApply { udf, args, input } => {
            let batch = execute(input, tables, registry)?;
            let arg_batch = args_batch(udf, args, &[], &batch)?;
            Ok(eval_scalar_udf(registry, udf, &arg_batch)?)
        }
        PlanNode::UdtfApply { udf, args, input } => {
            let batch = execute(input, tables, registry)?;
            let arg_batch = args_batch(udf, args, &[], &batch)?;
            Ok(eval_udtf(registry, udf, &arg_batch)?)
        }
        PlanNode::UdafAggregate {
            udf,
            group_by,
            args,
            input,
        } => {
            let batch = execute(input, tables, registry)?;
            let arg_batch = args_batch(udf, args, group_by, &batch)?;
            let groups: Vec<&str> = group_by.iter().map(String::as_str).collect();
            let out = eval_udaf(registry, udf, &arg_batch, &groups)?;
            // Rename the result column to the declared return field.
            Ok(Batch::new(plan.schema.clone(), out.into_columns())?)
        }
    }
}

/// Group columns followed by evaluated arguments, named `__argN`.
fn args_batch(udf: &UdfSpec, args: &[Expr], group_by: &[String], batch: &Batch) -> Result<Batch, ExecError> {
    let mut fields = Vec::new();
    let mut cols = Vec::new();
    for g in group_by {
        let f = batch.schema().field(g).expect("validated group column").clone();
        cols.push(batch.column(g).expect("validated group column").to_vec());
        fields.push(f);
    }
    for (i, (arg, kind)) in args.iter().zip(&udf.args).enumerate() {
        cols.push(arg.eval_batch(batch).map_err(ExecError::Expr)?);
        fields.push(Field::new(format!("__arg{i}"), *kind));
    }
    let schema = Schema::new(fields)?;
    if cols.is_empty() {
        return Ok(Batch::empty(schema));
    }
    Ok(Batch::new(schema, cols)?)
}

/// Row values as a map, handy for assertions.
pub fn row_map(batch: &Batch, row: usize) -> BTreeMap<String, Value> {
    batch
        .schema()
        .fields()
        .iter()
        .zip(batch.row(row))
        .map(|(f, v)| (f.name.clone(), v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{col, lit};
    use crate::udf::UdfMode;
    use crate::value::ValueKind::*;

    fn catalog() -> Catalog {
        Catalog::new()
            .with_table("t", Schema::of(&[("x", Int)]))
            .with_table("u", Schema::of(&[("g", Text), ("x", Int), ("y", Float)]))
    }

    #[test]
    fn bare_scan() {
        let plan = build_plan(&catalog(), &[DataFrameOp::Scan("t".into())]).unwrap();
        assert_eq!(plan.schema(), &Schema::of(&[("x", Int)]));
        assert_eq!(render_sql(&plan), "SELECT * FROM t");
    }

    #[test]
    fn filter_then_project() {
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("t".into()),
                DataFrameOp::Filter(col("x").gt(lit(1))),
                DataFrameOp::Project(vec!["x".into()]),
            ],
        )
        .unwrap();
        assert_eq!(plan.depth(), 3);
        assert_eq!(plan.schema(), &Schema::of(&[("x", Int)]));
        assert_eq!(render_sql(&plan), "SELECT x FROM t WHERE (x > 1)");
    }

    #[test]
    fn udf_call() {
        let f = UdfSpec::scalar("f", vec![Int], Int);
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("t".into()),
                DataFrameOp::ApplyUdf {
                    udf: f,
                    args: vec![col("x")],
                },
            ],
        )
        .unwrap();
        assert_eq!(render_sql(&plan), "SELECT f(x) FROM t");
        assert_eq!(plan.schema(), &Schema::of(&[("f", Int)]));
    }

    #[test]
    fn unknown_column_and_pipeline_shape_errors() {
        let err = build_plan(
            &catalog(),
            &[DataFrameOp::Scan("t".into()), DataFrameOp::Project(vec!["y".into()])],
        );
        assert_eq!(err, Err(PlanError::UnknownColumn("y".into())));
        assert_eq!(build_plan(&catalog(), &[]), Err(PlanError::EmptyPipeline));
        assert_eq!(
            build_plan(&catalog(), &[DataFrameOp::Filter(col("x").gt(lit(1)))]),
            Err(PlanError::ScanNotFirst)
        );
        assert_eq!(
            build_plan(
                &catalog(),
                &[DataFrameOp::Scan("t".into()), DataFrameOp::Scan("t".into())]
            ),
            Err(PlanError::ScanNotFirst)
        );
        assert_eq!(
            build_plan(&catalog(), &[DataFrameOp::Scan("zz".into())]),
            Err(PlanError::UnknownTable("zz".into()))
        );
    }

    #[test]
    fn type_checks() {
        let err = build_plan(
            &catalog(),
            &[DataFrameOp::Scan("t".into()), DataFrameOp::Filter(col("x").add(lit(1)))],
        );
        assert!(matches!(err, Err(PlanError::TypeMismatch(_))));
        let f = UdfSpec::scalar("f", vec![Text], Int);
        let err = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("t".into()),
                DataFrameOp::ApplyUdf {
                    udf: f,
                    args: vec![col("x")],
                },
            ],
        );
        assert!(matches!(err, Err(PlanError::TypeMismatch(_))));
        let err = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("t".into()),
                DataFrameOp::Project(vec![ProjectItem {
                    expr: col("x").add(lit(1)),
                    alias: None,
                }]),
            ],
        );
        assert!(matches!(err, Err(PlanError::InvalidProjection(_))));
    }

    #[test]
    fn nested_and_table_and_aggregate_rendering() {
        let repeat = UdfSpec::registered(
            "repeat",
            UdfKind::Table,
            UdfMode::Row,
            vec![Text, Int],
            vec![Field::new("v", Text)],
        );
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("u".into()),
                DataFrameOp::Filter(col("y").lt(lit(2.5))),
                DataFrameOp::ApplyUdtf {
                    udf: repeat,
                    args: vec![col("g"), col("x")],
                },
            ],
        )
        .unwrap();
        assert_eq!(
            render_sql(&plan),
            "SELECT v FROM u, TABLE(repeat(g, x)) WHERE (y < 2.5)"
        );

        let sum = UdfSpec::registered(
            "sum",
            UdfKind::Aggregate,
            UdfMode::Row,
            vec![Int],
            vec![Field::new("total", Int)],
        );
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("u".into()),
                DataFrameOp::Project(vec!["g".into(), ProjectItem::aliased(col("x").mul(lit(2)), "x2")]),
                DataFrameOp::Filter(col("x2").gt_eq(lit(4))),
                DataFrameOp::Aggregate {
                    udf: sum,
                    group_by: vec!["g".into()],
                    args: vec![col("x2")],
                },
            ],
        )
        .unwrap();
        assert_eq!(
            render_sql(&plan),
            "SELECT g, sum(x2) FROM (SELECT g, x * 2 AS x2 FROM u) WHERE (x2 >= 4) GROUP BY g"
        );
        assert_eq!(plan.schema(), &Schema::of(&[("g", Text), ("total", Int)]));
    }

    #[test]
    fn execute_reference_pipeline() {
        let tables: BTreeMap<String, Batch> = [(
            "u".to_string(),
            Batch::from_rows(
                Schema::of(&[("g", Text), ("x", Int), ("y", Float)]),
                vec![
                    vec!["a".into(), 1.into(), 0.5.into()],
                    vec!["b".into(), 5.into(), 1.5.into()],
                    vec!["a".into(), 3.into(), 9.0.into()],
                    vec!["a".into(), 4.into(), 1.0.into()],
                ],
            )
            .unwrap(),
        )]
        .into();
        let reg = EvaluatorRegistry::with_builtins();
        let sum = UdfSpec::registered(
            "sum",
            UdfKind::Aggregate,
            UdfMode::Row,
            vec![Int],
            vec![Field::new("total", Int)],
        );
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("u".into()),
                DataFrameOp::Filter(col("y").lt(lit(2.0))),
                DataFrameOp::Aggregate {
                    udf: sum,
                    group_by: vec!["g".into()],
                    args: vec![col("x")],
                },
            ],
        )
        .unwrap();
        let out = execute(&plan, &tables, &reg).unwrap();
        assert_eq!(out.row_count(), 2);
        assert_eq!(row_map(&out, 0)["total"], Value::Int(5));
        assert_eq!(row_map(&out, 1)["total"], Value::Int(5));

        let add1 = UdfSpec::scalar("add1", vec![Int], Int).vectorized();
        let plan = build_plan(
            &catalog(),
            &[
                DataFrameOp::Scan("u".into()),
                DataFrameOp::ApplyUdf {
                    udf: add1,
                    args: vec![col("x")],
                },
            ],
        )
        .unwrap();
        let out = execute(&plan, &tables, &reg).unwrap();
        assert_eq!(
            out.column("add1").unwrap(),
            &[Value::Int(2), Value::Int(6), Value::Int(4), Value::Int(5)]
        );
    }
}
