//! UDF descriptors and the in-process reference evaluators for scalar,
//! table and aggregate functions.
//!
//! Evaluators are looked up by name in an [`EvaluatorRegistry`] that is
//! filled before execution starts and only read afterwards.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::batch::{is_identifier, Batch, Field, Schema};
use crate::packages::PackageRequest;
use crate::sandbox::Intent;
use crate::value::{Value, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UdfKind {
    Scalar,
    Table,
    Aggregate,
}

impl fmt::Display for UdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UdfKind::Scalar => "scalar",
            UdfKind::Table => "table",
            UdfKind::Aggregate => "aggregate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UdfMode {
    #[default]
    Row,
    Vectorized,
}

/// Simulation hint: peak memory of one execution as a function of input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum MemProfile {
    Constant {
        peak_bytes: u64,
    },
    Linear {
        base_bytes: u64,
        per_row_bytes: u64,
    },
    /// Stationary peak drawn uniformly from `mean ± jitter` each run.
    Jitter {
        mean_bytes: u64,
        jitter_bytes: u64,
    },
}

impl Default for MemProfile {
    fn default() -> Self {
        MemProfile::Constant { peak_bytes: 64 << 20 }
    }
}

impl MemProfile {
    pub fn peak_bytes<R: Rng + ?Sized>(&self, input_rows: u64, rng: &mut R) -> u64 {
        match *self {
            MemProfile::Constant { peak_bytes } => peak_bytes,
            MemProfile::Linear {
                base_bytes,
                per_row_bytes,
            } => base_bytes.saturating_add(per_row_bytes.saturating_mul(input_rows)),
            MemProfile::Jitter {
                mean_bytes,
                jitter_bytes,
            } => {
                let lo = mean_bytes.saturating_sub(jitter_bytes);
                let hi = mean_bytes.saturating_add(jitter_bytes);
                rng.gen_range(lo..=hi)
            }
        }
    }

    /// Largest value `peak_bytes` can return for the given input size.
    pub fn upper_bound(&self, input_rows: u64) -> u64 {
        match *self {
            MemProfile::Constant { peak_bytes } => peak_bytes,
            MemProfile::Linear {
                base_bytes,
                per_row_bytes,
            } => base_bytes.saturating_add(per_row_bytes.saturating_mul(input_rows)),
            MemProfile::Jitter {
                mean_bytes,
                jitter_bytes,
            } => mean_bytes.saturating_add(jitter_bytes),
        }
    }
}

/// Where the function body lives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdfBody {
    /// Name of an evaluator in the registry.
    Registered(String),
    /// Source text shipped to an external guest interpreter.
    GuestCode(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdfSpec {
    pub name: String,
    pub kind: UdfKind,
    #[serde(default)]
    pub mode: UdfMode,
    /// Argument kinds, in call order.
    pub args: Vec<ValueKind>,
    /// Output columns. Scalar and aggregate functions return exactly one.
    pub returns: Vec<Field>,
    #[serde(default)]
    pub packages: Vec<PackageRequest>,
    #[serde(default)]
    pub per_row_cost_ms: f64,
    #[serde(default)]
    pub mem_profile: MemProfile,
    pub body: UdfBody,
    #[serde(default)]
    pub intents: Vec<Intent>,
}

impl UdfSpec {
    /// A registered in-process function with default simulation hints.
    pub fn registered(name: &str, kind: UdfKind, mode: UdfMode, args: Vec<ValueKind>, returns: Vec<Field>) -> Self {
        Self {
            name: name.to_string(),
            kind,
            mode,
            args,
            returns,
            packages: Vec::new(),
            per_row_cost_ms: 0.0,
            mem_profile: MemProfile::default(),
            body: UdfBody::Registered(name.to_string()),
            intents: Vec::new(),
        }
    }

    pub fn scalar(name: &str, args: Vec<ValueKind>, returns: ValueKind) -> Self {
        Self::registered(
            name,
            UdfKind::Scalar,
            UdfMode::Row,
            args,
            vec![Field::new(name, returns)],
        )
    }

    pub fn vectorized(mut self) -> Self {
        self.mode = UdfMode::Vectorized;
        self
    }

    pub fn validate(&self) -> Result<(), UdfError> {
        if !is_identifier(&self.name) {
            return Err(UdfError::InvalidSpec(format!("invalid name `{}`", self.name)));
        }
        if !(self.per_row_cost_ms >= 0.0 && self.per_row_cost_ms.is_finite()) {
            return Err(UdfError::InvalidSpec(format!(
                "per_row_cost_ms must be a finite value >= 0, got {}",
                self.per_row_cost_ms
            )));
        }
        match self.kind {
            UdfKind::Scalar | UdfKind::Aggregate if self.returns.len() != 1 => Err(UdfError::InvalidSpec(format!(
                "{} function `{}` must return exactly one column",
                self.kind, self.name
            ))),
            UdfKind::Table if self.returns.is_empty() => Err(UdfError::InvalidSpec(format!(
                "table function `{}` must return at least one column",
                self.name
            ))),
            _ => Schema::new(self.returns.clone())
                .map(|_| ())
                .map_err(|e| UdfError::InvalidSpec(e.to_string())),
        }
    }

    pub fn return_schema(&self) -> Schema {
        Schema::new(self.returns.clone()).expect("validated return schema")
    }
}

/// Location of a user-code failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultLocation {
    Row(usize),
    Batch(u64),
}

impl fmt::Display for FaultLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultLocation::Row(i) => write!(f, "row {i}"),
            FaultLocation::Batch(s) => write!(f, "batch {s}"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum UdfError {
    #[error("invalid UDF spec: {0}")]
    InvalidSpec(String),
    #[error("no evaluator registered for `{0}`")]
    UnknownEvaluator(String),
    #[error("`{name}` is a {actual} function, expected {expected}")]
    WrongKind {
        name: String,
        expected: UdfKind,
        actual: UdfKind,
    },
    #[error("argument mismatch for `{name}`: {detail}")]
    ArgumentMismatch { name: String, detail: String },
    #[error("`{0}` has a guest-code body and cannot run in-process")]
    GuestBody(String),
    #[error("evaluator `{udf}` failed at {at}: {message}")]
    EvaluatorFault {
        udf: String,
        at: FaultLocation,
        message: String,
    },
}

pub trait ScalarUdf: Send + Sync {
    fn call_row(&self, args: &[Value]) -> Result<Value, String>;

    /// Whole-batch entry point; `args` holds one slice per argument column.
    fn call_batch(&self, args: &[&[Value]], rows: usize) -> Result<Vec<Value>, String> {
        (0..rows)
            .map(|i| {
                let row: Vec<Value> = args.iter().map(|c| c[i].clone()).collect();
                self.call_row(&row)
            })
            .collect()
    }
}

pub trait TableUdf: Send + Sync {
    /// Rows emitted for one input row.
    fn call_row(&self, args: &[Value]) -> Result<Vec<Vec<Value>>, String>;
}

pub trait AggregateUdf: Send + Sync {
    fn initial(&self) -> Value;
    fn accumulate(&self, state: &mut Value, args: &[Value]) -> Result<(), String>;
    fn finish(&self, state: Value) -> Result<Value, String>;
}

type RowFn = dyn Fn(&[Value]) -> Result<Value, String> + Send + Sync;
type BatchFn = dyn Fn(&[&[Value]], usize) -> Result<Vec<Value>, String> + Send + Sync;

/// Scalar evaluator built from closures. Without a batch closure the
/// vectorized path falls back to per-row calls.
pub struct FnScalar {
    row: Box<RowFn>,
    batch: Option<Box<BatchFn>>,
}

impl FnScalar {
    pub fn new(row: impl Fn(&[Value]) -> Result<Value, String> + Send + Sync + 'static) -> Self {
        Self {
            row: Box::new(row),
            batch: None,
        }
    }

    pub fn with_batch(
        mut self,
        batch: impl Fn(&[&[Value]], usize) -> Result<Vec<Value>, String> + Send + Sync + 'static,
    ) -> Self {
        self.batch = Some(Box::new(batch));
        self
    }
}

impl ScalarUdf for FnScalar {
    fn call_row(&self, args: &[Value]) -> Result<Value, String> {
        (self.row)(args)
    }

    fn call_batch(&self, args: &[&[Value]], rows: usize) -> Result<Vec<Value>, String> {
        match &self.batch {
            Some(f) => f(args, rows),
            None => (0..rows)
                .map(|i| {
                    let row: Vec<Value> = args.iter().map(|c| c[i].clone()).collect();
                    (self.row)(&row)
                })
                .collect(),
        }
    }
}

type TableFn = dyn Fn(&[Value]) -> Result<Vec<Vec<Value>>, String> + Send + Sync;

pub struct FnTable(Box<TableFn>);

impl FnTable {
    pub fn new(f: impl Fn(&[Value]) -> Result<Vec<Vec<Value>>, String> + Send + Sync + 'static) -> Self {
        Self(Box::new(f))
    }
}

impl TableUdf for FnTable {
    fn call_row(&self, args: &[Value]) -> Result<Vec<Vec<Value>>, String> {
        (self.0)(args)
    }
}

#[derive(Clone)]
pub enum Evaluator {
    Scalar(Arc<dyn ScalarUdf>),
    Table(Arc<dyn TableUdf>),
    Aggregate(Arc<dyn AggregateUdf>),
}

impl Evaluator {
    pub fn kind(&self) -> UdfKind {
        match self {
            Evaluator::Scalar(_) => UdfKind::Scalar,
            Evaluator::Table(_) => UdfKind::Table,
            Evaluator::Aggregate(_) => UdfKind::Aggregate,
        }
    }
}

#[derive(Clone, Default)]
pub struct EvaluatorRegistry {
    evaluators: HashMap<String, Evaluator>,
}

impl EvaluatorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, evaluator: Evaluator) -> &mut Self {
        self.evaluators.insert(name.to_string(), evaluator);
        self
    }

    pub fn register_scalar(&mut self, name: &str, f: impl ScalarUdf + 'static) -> &mut Self {
        self.register(name, Evaluator::Scalar(Arc::new(f)))
    }

    pub fn register_table(&mut self, name: &str, f: impl TableUdf + 'static) -> &mut Self {
        self.register(name, Evaluator::Table(Arc::new(f)))
    }

    pub fn register_aggregate(&mut self, name: &str, f: impl AggregateUdf + 'static) -> &mut Self {
        self.register(name, Evaluator::Aggregate(Arc::new(f)))
    }

    pub fn get(&self, name: &str) -> Option<&Evaluator> {
        self.evaluators.get(name)
    }

    /// `identity`, `add1`, `repeat`, `sum` and `count`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::new();
        reg.register_scalar(
            "identity",
            FnScalar::new(|a| Ok(a[0].clone())).with_batch(|a, _| Ok(a[0].to_vec())),
        );
        reg.register_scalar(
            "add1",
            FnScalar::new(|a| add_one(&a[0])).with_batch(|a, _| a[0].iter().map(add_one).collect()),
        );
        reg.register_table("repeat", FnTable::new(repeat_rows));
        reg.register_aggregate("sum", SumAggregate);
        reg.register_aggregate("count", CountAggregate);
        reg
    }

    fn resolve(&self, spec: &UdfSpec, expected: UdfKind) -> Result<&Evaluator, UdfError> {
        spec.validate()?;
        if spec.kind != expected {
            return Err(UdfError::WrongKind {
                name: spec.name.clone(),
                expected,
                actual: spec.kind,
            });
        }
        let body = match &spec.body {
            UdfBody::Registered(b) => b,
            UdfBody::GuestCode(_) => return Err(UdfError::GuestBody(spec.name.clone())),
        };
        let ev = self.get(body).ok_or_else(|| UdfError::UnknownEvaluator(body.clone()))?;
        if ev.kind() != expected {
            return Err(UdfError::WrongKind {
                name: body.clone(),
                expected,
                actual: ev.kind(),
            });
        }
        Ok(ev)
    }
}

fn add_one(v: &Value) -> Result<Value, String> {
    match v {
        Value::Null => Ok(Value::Null),
        Value::Int(i) => i
            .checked_add(1)
            .map(Value::Int)
            .ok_or_else(|| "integer overflow".to_string()),
        Value::Float(f) => Ok(Value::Float(f + 1.0)),
        other => Err(format!("add1 expects a number, got {other}")),
    }
}

/// `repeat(v, n)` emits `(v)` n times.
fn repeat_rows(args: &[Value]) -> Result<Vec<Vec<Value>>, String> {
    let n = match args.get(1) {
        Some(Value::Int(n)) if *n >= 0 => *n as usize,
        Some(Value::Null) => 0,
        other => return Err(format!("repeat count must be a non-negative integer, got {other:?}")),
    };
    Ok(vec![vec![args[0].clone()]; n])
}

pub struct SumAggregate;

impl AggregateUdf for SumAggregate {
    fn initial(&self) -> Value {
        Value::Null
    }

    fn accumulate(&self, state: &mut Value, args: &[Value]) -> Result<(), String> {
        let v = &args[0];
        *state = match (&*state, v) {
            (_, Value::Null) => return Ok(()),
            (Value::Null, v) => v.clone(),
            (s, v) => crate::expr::apply_binary(crate::expr::BinaryOp::Add, s, v)?,
        };
        Ok(())
    }

    fn finish(&self, state: Value) -> Result<Value, String> {
        Ok(state)
    }
}

pub struct CountAggregate;

impl AggregateUdf for CountAggregate {
    fn initial(&self) -> Value {
        Value::Int(0)
    }

    fn accumulate(&self, state: &mut Value, args: &[Value]) -> Result<(), String> {
        if args.iter().all(|a| !a.is_null()) {
            if let Value::Int(n) = state {
                *n += 1;
            }
        }
        Ok(())
    }

    fn finish(&self, state: Value) -> Result<Value, String> {
        Ok(state)
    }
}

fn check_args(spec: &UdfSpec, schema: &Schema) -> Result<(), UdfError> {
    let kinds = schema.kinds();
    if kinds != spec.args {
        return Err(UdfError::ArgumentMismatch {
            name: spec.name.clone(),
            detail: format!("expected {:?}, got {:?}", spec.args, kinds),
        });
    }
    Ok(())
}

fn check_output(spec: &UdfSpec, at: FaultLocation, field: &Field, v: &Value) -> Result<(), UdfError> {
    if v.conforms_to(field.kind) {
        Ok(())
    } else {
        Err(UdfError::EvaluatorFault {
            udf: spec.name.clone(),
            at,
            message: format!("returned {v} for column `{}` of kind {}", field.name, field.kind),
        })
    }
}

/// Applies a scalar UDF to an argument batch (one column per argument).
pub fn eval_scalar_udf(registry: &EvaluatorRegistry, spec: &UdfSpec, batch: &Batch) -> Result<Batch, UdfError> {
    eval_scalar_udf_seq(registry, spec, batch, 0)
}

/// As [`eval_scalar_udf`], tagging vectorized faults with `batch_seq`.
pub fn eval_scalar_udf_seq(
    registry: &EvaluatorRegistry,
    spec: &UdfSpec,
    batch: &Batch,
    batch_seq: u64,
) -> Result<Batch, UdfError> {
    let Evaluator::Scalar(f) = registry.resolve(spec, UdfKind::Scalar)? else {
        unreachable!("resolve checked the kind")
    };
    check_args(spec, batch.schema())?;
    let field = &spec.returns[0];
    let out = match spec.mode {
        UdfMode::Row => {
            let mut out = Vec::with_capacity(batch.row_count());
            for (i, row) in batch.rows().enumerate() {
                let at = FaultLocation::Row(i);
                let v = f.call_row(&row).map_err(|message| UdfError::EvaluatorFault {
                    udf: spec.name.clone(),
                    at,
                    message,
                })?;
                check_output(spec, at, field, &v)?;
                out.push(v);
            }
            out
        }
        UdfMode::Vectorized => {
            let at = FaultLocation::Batch(batch_seq);
            let cols: Vec<&[Value]> = batch.columns().iter().map(Vec::as_slice).collect();
            let out = f
                .call_batch(&cols, batch.row_count())
                .map_err(|message| UdfError::EvaluatorFault {
                    udf: spec.name.clone(),
                    at,
                    message,
                })?;
            if out.len() != batch.row_count() {
                return Err(UdfError::EvaluatorFault {
                    udf: spec.name.clone(),
                    at,
                    message: format!("returned {} values for {} rows", out.len(), batch.row_count()),
                });
            }
            for v in &out {
                check_output(spec, at, field, v)?;
            }
            out
        }
    };
    Ok(Batch::new(spec.return_schema(), vec![out]).expect("outputs checked against return kind"))
}

/// Applies a table UDF; output rows are each input row's emissions,
/// concatenated in input order.
pub fn eval_udtf(registry: &EvaluatorRegistry, spec: &UdfSpec, batch: &Batch) -> Result<Batch, UdfError> {
    let Evaluator::Table(f) = registry.resolve(spec, UdfKind::Table)? else {
        unreachable!("resolve checked the kind")
    };
    check_args(spec, batch.schema())?;
    let width = spec.returns.len();
    let mut columns: Vec<Vec<Value>> = vec![Vec::new(); width];
    for (i, row) in batch.rows().enumerate() {
        let at = FaultLocation::Row(i);
        let emitted = f.call_row(&row).map_err(|message| UdfError::EvaluatorFault {
            udf: spec.name.clone(),
            at,
            message,
        })?;
        for out_row in emitted {
            if out_row.len() != width {
                return Err(UdfError::EvaluatorFault {
                    udf: spec.name.clone(),
                    at,
                    message: format!("emitted a row of width {}, expected {width}", out_row.len()),
                });
            }
            for ((col, v), field) in columns.iter_mut().zip(out_row).zip(&spec.returns) {
                check_output(spec, at, field, &v)?;
                col.push(v);
            }
        }
    }
    Ok(Batch::new(spec.return_schema(), columns).expect("outputs checked against return kinds"))
}

/// Aggregates `batch` per distinct key of `group_cols`. The UDF's arguments
/// are the remaining columns in schema order. Output has one row per group,
/// sorted by group key: the group columns followed by the result column.
pub fn eval_udaf(
    registry: &EvaluatorRegistry,
    spec: &UdfSpec,
    batch: &Batch,
    group_cols: &[&str],
) -> Result<Batch, UdfError> {
    let Evaluator::Aggregate(f) = registry.resolve(spec, UdfKind::Aggregate)? else {
        unreachable!("resolve checked the kind")
    };
    let schema = batch.schema();
    let mut group_idx = Vec::with_capacity(group_cols.len());
    for g in group_cols {
        let i = schema.index_of(g).ok_or_else(|| UdfError::ArgumentMismatch {
            name: spec.name.clone(),
            detail: format!("unknown group column `{g}`"),
        })?;
        group_idx.push(i);
    }
    let arg_idx: Vec<usize> = (0..schema.len()).filter(|i| !group_idx.contains(i)).collect();
    let arg_kinds: Vec<ValueKind> = arg_idx.iter().map(|&i| schema.fields()[i].kind).collect();
    if arg_kinds != spec.args {
        return Err(UdfError::ArgumentMismatch {
            name: spec.name.clone(),
            detail: format!("expected {:?}, got {:?}", spec.args, arg_kinds),
        });
    }

    let mut groups: BTreeMap<Vec<Value>, Value> = BTreeMap::new();
    for (row, values) in batch.rows().enumerate() {
        let key: Vec<Value> = group_idx.iter().map(|&i| values[i].clone()).collect();
        let args: Vec<Value> = arg_idx.iter().map(|&i| values[i].clone()).collect();
        let state = groups.entry(key).or_insert_with(|| f.initial());
        f.accumulate(state, &args).map_err(|message| UdfError::EvaluatorFault {
            udf: spec.name.clone(),
            at: FaultLocation::Row(row),
            message,
        })?;
    }

    let mut fields: Vec<Field> = group_idx.iter().map(|&i| schema.fields()[i].clone()).collect();
    let result_field = spec.returns[0].clone();
    fields.push(result_field.clone());
    let out_schema = Schema::new(fields).map_err(|e| UdfError::ArgumentMismatch {
        name: spec.name.clone(),
        detail: e.to_string(),
    })?;
    let mut out_cols: Vec<Vec<Value>> = vec![Vec::with_capacity(groups.len()); group_idx.len() + 1];
    for (g, (key, state)) in groups.into_iter().enumerate() {
        let at = FaultLocation::Row(g);
        let v = f.finish(state).map_err(|message| UdfError::EvaluatorFault {
            udf: spec.name.clone(),
            at,
            message,
        })?;
        check_output(spec, at, &result_field, &v)?;
        for (col, k) in out_cols.iter_mut().zip(key) {
            col.push(k);
        }
        out_cols.last_mut().expect("result column").push(v);
    }
    Ok(Batch::new(out_schema, out_cols).expect("group keys come from typed columns"))
}
