use std::fmt;

use serde::{Deserialize, Serialize};

use crate::logicsim::{Dtype, VectorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }
}

/// Integer expression over parameters and loop variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "expr", rename_all = "snake_case")]
pub enum Expr {
    Int { value: i64 },
    Var { name: String },
    Neg { arg: Box<Expr> },
    Bin { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Min { args: Vec<Expr> },
    Max { args: Vec<Expr> },
}

impl Expr {
    pub fn int(value: i64) -> Self {
        Expr::Int { value }
    }

    pub fn var(name: &str) -> Self {
        Expr::Var {
            name: name.to_string(),
        }
    }

    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Expr::Int { .. } => {}
            Expr::Var { name } => out.push(name.clone()),
            Expr::Neg { arg } => arg.vars(out),
            Expr::Bin { lhs, rhs, .. } => {
                lhs.vars(out);
                rhs.vars(out);
            }
            Expr::Min { args } | Expr::Max { args } => args.iter().for_each(|a| a.vars(out)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int { value } => write!(f, "{value}"),
            Expr::Var { name } => write!(f, "{name}"),
            Expr::Neg { arg } => write!(f, "-{arg}"),
            Expr::Bin { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
            Expr::Min { args } | Expr::Max { args } => {
                let name = if matches!(self, Expr::Min { .. }) { "min" } else { "max" };
                let parts: Vec<_> = args.iter().map(|a| a.to_string()).collect();
                write!(f, "{name}({})", parts.join(", "))
            }
        }
    }
}

/// One dimension of a slice; `None` bounds default to the full extent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    pub lo: Option<Expr>,
    pub hi: Option<Expr>,
}

/// A whole buffer or a rectangular slice of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileRef {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slices: Option<Vec<Slice>>,
    pub pos: Pos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Row,
    Col,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveArg {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    pub values: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stmt", rename_all = "snake_case")]
pub enum StmtKind {
    Tensor {
        name: String,
        shape: Vec<Expr>,
        dtype: Dtype,
        #[serde(skip_serializing_if = "Option::is_none")]
        stride: Option<Vec<Expr>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        layout: Option<Layout>,
    },
    Alloc {
        name: String,
        shape: Vec<Expr>,
        dtype: Dtype,
    },
    Copy {
        src: TileRef,
        dst: TileRef,
    },
    Gemm {
        a: TileRef,
        b: TileRef,
        out: TileRef,
        accumulate: bool,
    },
    Vector {
        op: VectorKind,
        operands: Vec<TileRef>,
        out: TileRef,
    },
    Send {
        src_core: Expr,
        dst_core: Expr,
        data: TileRef,
    },
    Recv {
        src_core: Expr,
        dst_core: Expr,
        data: TileRef,
    },
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        step: Expr,
        body: Vec<Stmt>,
    },
    /// `core_array`, `split_gemm` or `split_attention`.
    Directive {
        name: String,
        args: Vec<DirectiveArg>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stmt {
    pub pos: Pos,
    #[serde(flatten)]
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelProgram {
    pub name: String,
    pub params: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub core_id_param: Option<String>,
    pub body: Vec<Stmt>,
}

impl KernelProgram {
    /// Every statement in program order, descending into loops.
    pub fn walk(&self) -> Vec<&Stmt> {
        fn go<'a>(body: &'a [Stmt], out: &mut Vec<&'a Stmt>) {
            for s in body {
                out.push(s);
                if let StmtKind::For { body, .. } = &s.kind {
                    go(body, out);
                }
            }
        }
        let mut out = Vec::new();
        go(&self.body, &mut out);
        out
    }

    /// Stable, pretty-printed JSON form of the AST.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("AST serializes")
    }
}
