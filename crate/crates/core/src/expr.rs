//! Column references, literals, comparisons and arithmetic.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::batch::{Batch, Schema};
use crate::plan::PlanError;
use crate::value::{Value, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Eq,
    NotEq,
    Lt,
    LtEq,
    Gt,
    GtEq,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 10] = [
        BinaryOp::Eq,
        BinaryOp::NotEq,
        BinaryOp::Lt,
        BinaryOp::LtEq,
        BinaryOp::Gt,
        BinaryOp::GtEq,
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Eq => "=",
            BinaryOp::NotEq => "<>",
            BinaryOp::Lt => "<",
            BinaryOp::LtEq => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::GtEq => ">=",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        !self.is_arithmetic()
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Column(String),
    Literal(Value),
    Binary {
        op: BinaryOp,
        left: Box<Expr>,
        right: Box<Expr>,
    },
}

pub fn col(name: &str) -> Expr {
    Expr::Column(name.to_string())
}

pub fn lit(value: impl Into<Value>) -> Expr {
    Expr::Literal(value.into())
}

impl Expr {
    pub fn binary(self, op: BinaryOp, right: Expr) -> Expr {
        Expr::Binary {
            op,
            left: Box::new(self),
            right: Box::new(right),
        }
    }

    pub fn eq(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Eq, r)
    }
    pub fn not_eq(self, r: Expr) -> Expr {
        self.binary(BinaryOp::NotEq, r)
    }
    pub fn lt(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Lt, r)
    }
    pub fn lt_eq(self, r: Expr) -> Expr {
        self.binary(BinaryOp::LtEq, r)
    }
    pub fn gt(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Gt, r)
    }
    pub fn gt_eq(self, r: Expr) -> Expr {
        self.binary(BinaryOp::GtEq, r)
    }
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Add, r)
    }
    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Sub, r)
    }
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Mul, r)
    }
    #[allow(clippy::should_implement_trait)]
    pub fn div(self, r: Expr) -> Expr {
        self.binary(BinaryOp::Div, r)
    }

    /// Result kind against an input schema. Literal nulls type as `None`
    /// and are accepted anywhere.
    pub fn kind_in(&self, schema: &Schema) -> Result<Option<ValueKind>, PlanError> {
        match self {
            Expr::Column(name) => schema
                .field(name)
                .map(|f| Some(f.kind))
                .ok_or_else(|| PlanError::UnknownColumn(name.clone())),
            Expr::Literal(v) => Ok(v.kind()),
            Expr::Binary { op, left, right } => {
                let l = left.kind_in(schema)?;
                let r = right.kind_in(schema)?;
                if op.is_comparison() {
                    let comparable = match (l, r) {
                        (Some(a), Some(b)) => a == b || (is_numeric(a) && is_numeric(b)),
                        _ => true,
                    };
                    if !comparable {
                        return Err(self.type_error(l, r));
                    }
                    Ok(Some(ValueKind::Bool))
                } else {
                    if !l.is_none_or(is_numeric) || !r.is_none_or(is_numeric) {
                        return Err(self.type_error(l, r));
                    }
                    Ok(match (l, r) {
                        (None, None) => None,
                        (Some(ValueKind::Float), _) | (_, Some(ValueKind::Float)) => Some(ValueKind::Float),
                        _ => Some(ValueKind::Int),
                    })
                }
            }
        }
    }

    fn type_error(&self, l: Option<ValueKind>, r: Option<ValueKind>) -> PlanError {
        PlanError::TypeMismatch(format!(
            "cannot apply `{}` to {} and {}",
            match self {
                Expr::Binary { op, .. } => op.symbol(),
                _ => "?",
            },
            l.map_or("null".to_string(), |k| k.to_string()),
            r.map_or("null".to_string(), |k| k.to_string())
        ))
    }

    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Column(c) => out.push(c),
            Expr::Literal(_) => {}
            Expr::Binary { left, right, .. } => {
                left.collect_columns(out);
                right.collect_columns(out);
            }
        }
    }

    /// Renders the expression. Nested binary operands are parenthesized so
    /// distinct trees never render to the same text.
    pub fn to_sql(&self) -> String {
        match self {
            Expr::Column(c) => c.clone(),
            Expr::Literal(v) => v.to_sql(),
            Expr::Binary { op, left, right } => {
                format!("{} {} {}", left.operand_sql(), op.symbol(), right.operand_sql())
            }
        }
    }

    fn operand_sql(&self) -> String {
        match self {
            Expr::Binary { .. } => format!("({})", self.to_sql()),
            _ => self.to_sql(),
        }
    }

    /// Evaluates against one row of `schema`.
    pub fn eval_row(&self, schema: &Schema, row: &[Value]) -> Result<Value, String> {
        match self {
            Expr::Column(c) => schema
                .index_of(c)
                .map(|i| row[i].clone())
                .ok_or_else(|| format!("unknown column `{c}`")),
            Expr::Literal(v) => Ok(v.clone()),
            Expr::Binary { op, left, right } => {
                let l = left.eval_row(schema, row)?;
                let r = right.eval_row(schema, row)?;
                apply_binary(*op, &l, &r)
            }
        }
    }

    /// Evaluates over every row of a batch.
    pub fn eval_batch(&self, batch: &Batch) -> Result<Vec<Value>, String> {
        match self {
            Expr::Column(c) => batch
                .column(c)
                .map(<[Value]>::to_vec)
                .ok_or_else(|| format!("unknown column `{c}`")),
            Expr::Literal(v) => Ok(vec![v.clone(); batch.row_count()]),
            Expr::Binary { op, left, right } => {
                let l = left.eval_batch(batch)?;
                let r = right.eval_batch(batch)?;
                l.iter().zip(&r).map(|(a, b)| apply_binary(*op, a, b)).collect()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_sql())
    }
}

fn is_numeric(k: ValueKind) -> bool {
    matches!(k, ValueKind::Int | ValueKind::Float)
}

/// Null-propagating binary operation.
pub fn apply_binary(op: BinaryOp, l: &Value, r: &Value) -> Result<Value, String> {
    if l.is_null() || r.is_null() {
        return Ok(Value::Null);
    }
    if op.is_arithmetic() {
        return match (l, r) {
            (Value::Int(a), Value::Int(b)) => {
                let out = match op {
                    BinaryOp::Add => a.checked_add(*b),
                    BinaryOp::Sub => a.checked_sub(*b),
                    BinaryOp::Mul => a.checked_mul(*b),
                    BinaryOp::Div => {
                        if *b == 0 {
                            return Err("division by zero".to_string());
                        }
                        a.checked_div(*b)
                    }
                    _ => unreachable!(),
                };
                out.map(Value::Int).ok_or_else(|| "integer overflow".to_string())
            }
            _ => {
                let (a, b) = match (l.as_f64(), r.as_f64()) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(format!("non-numeric operands {l} {} {r}", op.symbol())),
                };
                Ok(Value::Float(match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => a / b,
                    _ => unreachable!(),
                }))
            }
        };
    }
    let ord = match (l.as_f64(), r.as_f64()) {
        (Some(a), Some(b)) if l.kind() != r.kind() => a.total_cmp(&b),
        _ => l.cmp(r),
    };
    use std::cmp::Ordering::*;
    let out = match op {
        BinaryOp::Eq => ord == Equal,
        BinaryOp::NotEq => ord != Equal,
        BinaryOp::Lt => ord == Less,
        BinaryOp::LtEq => ord != Greater,
        BinaryOp::Gt => ord == Greater,
        BinaryOp::GtEq => ord != Less,
        _ => unreachable!(),
    };
    Ok(Value::Bool(out))
}
