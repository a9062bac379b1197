//! Line- and indentation-based parser for `.kl` kernel sources.
//!
//! ```text
//! kernel NAME(P1, P2, ...) [core ID]:
//!     X = tensor((d0, d1), fp16[, stride=(s0, s1)][, layout=row|col])
//!     x = alloc((d0, d1), fp16)
//!     for v in range([lo,] hi[, step]):
//!         copy(X[lo:hi, :], x)
//!         out = gemm(a, b)          # `+=` accumulates
//!         out = exp(x)              # reduce_max reduce_sum add sub mul div exp
//!         send(src, dst, x)
//!         recv(src, dst, x)
//!     core_array(2, 4)
//!     split_gemm(m=(), k=(0,), n=(1,))
//! ```

use thiserror::Error;

use super::ast::*;
use crate::logicsim::{Dtype, VectorKind};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: u32,
    pub col: u32,
    pub message: String,
}

fn perr(pos: Pos, message: impl Into<String>) -> ParseError {
    ParseError {
        line: pos.line,
        col: pos.col,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: Pos,
}

const SYMBOLS: [&str; 15] = [
    "+=", "(", ")", "[", "]", ",", ":", "=", "+", "-", "*", "/", "%", ".", "^",
];

fn lex(line: &str, lineno: u32) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = line.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos {
            line: lineno,
            col: i as u32 + 1,
        };
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                i += 1;
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let value = text
                .parse()
                .map_err(|_| perr(pos, format!("integer `{text}` out of range")))?;
            out.push(Token {
                tok: Tok::Int(value),
                pos,
            });
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                pos,
            });
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            let Some(sym) = SYMBOLS.iter().find(|s| rest.starts_with(**s)) else {
                return Err(perr(pos, format!("unexpected character `{c}`")));
            };
            i += sym.len();
            out.push(Token {
                tok: Tok::Sym(sym),
                pos,
            });
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    toks: &'a [Token],
    i: usize,
    eol: Pos,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.i).map_or(self.eol, |t| t.pos)
    }

    fn next(&mut self) -> Option<&'a Token> {
        let t = self.toks.get(self.i);
        self.i += 1;
        t
    }

    fn at_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.at_sym(s) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(perr(self.pos(), format!("expected `{s}`")))
        }
    }

    fn ident(&mut self) -> Result<(String, Pos), ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s), ..
            }) => Ok((s.clone(), pos)),
            _ => Err(perr(pos, "expected identifier")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        let pos = self.pos();
        match self.next() {
            Some(Token {
                tok: Tok::Ident(s), ..
            }) if s == kw => Ok(()),
            _ => Err(perr(pos, format!("expected `{kw}`"))),
        }
    }

    fn end(&self) -> Result<(), ParseError> {
        match self.toks.get(self.i) {
            None => Ok(()),
            Some(t) => Err(perr(t.pos, "unexpected trailing tokens")),
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym("+") {
                BinOp::Add
            } else if self.eat_sym("-") {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat_sym("*") {
                BinOp::Mul
            } else if self.eat_sym("/") {
                BinOp::Div
            } else if self.eat_sym("%") {
                BinOp::Mod
            } else {
                return Ok(lhs);
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            };
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_sym("-") {
            return Ok(Expr::Neg {
                arg: Box::new(self.unary()?),
            });
        }
        let pos = self.pos();
        match self.next().map(|t| &t.tok) {
            Some(Tok::Int(v)) => Ok(Expr::int(*v)),
            Some(Tok::Ident(name)) if (name == "min" || name == "max") && self.at_sym("(") => {
                self.expect_sym("(")?;
                let args = self.expr_list(")")?;
                if args.len() < 2 {
                    return Err(perr(pos, format!("{name} takes at least 2 arguments")));
                }
                Ok(if name == "min" {
                    Expr::Min { args }
                } else {
                    Expr::Max { args }
                })
            }
            Some(Tok::Ident(name)) => Ok(Expr::var(name)),
            Some(Tok::Sym("(")) => {
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            _ => Err(perr(pos, "expected expression")),
        }
    }

    /// Comma-separated expressions up to `close` (consumed). Allows a
    /// trailing comma.
    fn expr_list(&mut self, close: &str) -> Result<Vec<Expr>, ParseError> {
        let mut out = Vec::new();
        while !self.eat_sym(close) {
            out.push(self.expr()?);
            if !self.eat_sym(",") {
                self.expect_sym(close)?;
                break;
            }
        }
        Ok(out)
    }

    fn tuple(&mut self) -> Result<Vec<Expr>, ParseError> {
        self.expect_sym("(")?;
        self.expr_list(")")
    }

    fn tile_ref(&mut self) -> Result<TileRef, ParseError> {
        let (name, pos) = self.ident()?;
        if !self.eat_sym("[") {
            return Ok(TileRef {
                name,
                slices: None,
                pos,
            });
        }
        let mut slices = Vec::new();
        loop {
            let start = self.pos();
            let lo = if self.at_sym(":") { None } else { Some(self.expr()?) };
            if !self.eat_sym(":") {
                return Err(perr(start, "malformed slice: expected `lo:hi`"));
            }
            let hi = if self.at_sym(",") || self.at_sym("]") {
                None
            } else {
                Some(self.expr()?)
            };
            slices.push(Slice { lo, hi });
            if self.eat_sym("]") {
                break;
            }
            if !self.eat_sym(",") {
                return Err(perr(self.pos(), "malformed slice: expected `,` or `]`"));
            }
        }
        Ok(TileRef {
            name,
            slices: Some(slices),
            pos,
        })
    }

    fn ref_list(&mut self) -> Result<Vec<TileRef>, ParseError> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        while !self.eat_sym(")") {
            out.push(self.tile_ref()?);
            if !self.eat_sym(",") {
                self.expect_sym(")")?;
                break;
            }
        }
        Ok(out)
    }
}

fn dtype_of(name: &str, pos: Pos) -> Result<Dtype, ParseError> {
    Dtype::parse(name).ok_or_else(|| perr(pos, format!("unknown dtype `{name}`")))
}

fn arity(pos: Pos, prim: &str, got: usize, want: usize) -> Result<(), ParseError> {
    if got == want {
        Ok(())
    } else {
        Err(perr(
            pos,
            format!("{prim} expects {want} operand(s), got {got}"),
        ))
    }
}

const DIRECTIVES: [&str; 3] = ["core_array", "split_gemm", "split_attention"];

fn declaration(c: &mut Cursor, name: String, prim: &str, pos: Pos) -> Result<StmtKind, ParseError> {
    c.expect_sym("(")?;
    let shape = c.tuple()?;
    if shape.is_empty() {
        return Err(perr(pos, "shape needs at least one dimension"));
    }
    c.expect_sym(",")?;
    let (dt, dpos) = c.ident()?;
    let dtype = dtype_of(&dt, dpos)?;
    let mut stride = None;
    let mut layout = None;
    while c.eat_sym(",") {
        let (key, kpos) = c.ident()?;
        c.expect_sym("=")?;
        match (prim, key.as_str()) {
            ("tensor", "stride") => stride = Some(c.tuple()?),
            ("tensor", "layout") => {
                let (v, vpos) = c.ident()?;
                layout = Some(match v.as_str() {
                    "row" => Layout::Row,
                    "col" => Layout::Col,
                    _ => return Err(perr(vpos, "layout must be `row` or `col`")),
                });
            }
            _ => return Err(perr(kpos, format!("unknown {prim} option `{key}`"))),
        }
    }
    c.expect_sym(")")?;
    Ok(if prim == "tensor" {
        StmtKind::Tensor {
            name,
            shape,
            dtype,
            stride,
            layout,
        }
    } else {
        StmtKind::Alloc { name, shape, dtype }
    })
}

fn statement(toks: &[Token], lineno: u32, eol: u32) -> Result<Stmt, ParseError> {
    let mut c = Cursor {
        toks,
        i: 0,
        eol: Pos { line: lineno, col: eol },
    };
    let pos = c.pos();
    let (head, hpos) = c.ident()?;

    // Assignment forms: declarations and producing primitives.
    if c.at_sym("=") || c.at_sym("+=") || c.at_sym("[") {
        c.i = 0;
        let target = c.tile_ref()?;
        let accumulate = if c.eat_sym("+=") {
            true
        } else {
            c.expect_sym("=")?;
            false
        };
        let (prim, ppos) = c.ident()?;
        let kind = match prim.as_str() {
            "tensor" | "alloc" => {
                if target.slices.is_some() || accumulate {
                    return Err(perr(ppos, format!("{prim} must be assigned to a plain name")));
                }
                declaration(&mut c, target.name, &prim, ppos)?
            }
            "gemm" => {
                let ops = c.ref_list()?;
                arity(ppos, "gemm", ops.len(), 2)?;
                let mut it = ops.into_iter();
                StmtKind::Gemm {
                    a: it.next().unwrap(),
                    b: it.next().unwrap(),
                    out: target,
                    accumulate,
                }
            }
            other => {
                let op: VectorKind = other
                    .parse()
                    .map_err(|_| perr(ppos, format!("unknown primitive `{other}`")))?;
                if accumulate {
                    return Err(perr(ppos, "`+=` is only valid with gemm"));
                }
                let ops = c.ref_list()?;
                let want = match op {
                    VectorKind::ReduceMax | VectorKind::ReduceSum | VectorKind::Exp => 1,
                    _ => 2,
                };
                arity(ppos, other, ops.len(), want)?;
                StmtKind::Vector {
                    op,
                    operands: ops,
                    out: target,
                }
            }
        };
        c.end()?;
        return Ok(Stmt { pos, kind });
    }

    let kind = match head.as_str() {
        "copy" => {
            let ops = c.ref_list()?;
            arity(hpos, "copy", ops.len(), 2)?;
            let mut it = ops.into_iter();
            StmtKind::Copy {
                src: it.next().unwrap(),
                dst: it.next().unwrap(),
            }
        }
        "send" | "recv" => {
            c.expect_sym("(")?;
            let src_core = c.expr()?;
            c.expect_sym(",")?;
            let dst_core = c.expr()?;
            c.expect_sym(",")?;
            let data = c.tile_ref()?;
            c.expect_sym(")")?;
            if head == "send" {
                StmtKind::Send {
                    src_core,
                    dst_core,
                    data,
                }
            } else {
                StmtKind::Recv {
                    src_core,
                    dst_core,
                    data,
                }
            }
        }
        d if DIRECTIVES.contains(&d) => {
            c.expect_sym("(")?;
            let mut args = Vec::new();
            while !c.eat_sym(")") {
                let key = match (c.toks.get(c.i), c.toks.get(c.i + 1)) {
                    (
                        Some(Token {
                            tok: Tok::Ident(k), ..
                        }),
                        Some(Token {
                            tok: Tok::Sym("="), ..
                        }),
                    ) => {
                        c.i += 2;
                        Some(k.clone())
                    }
                    _ => None,
                };
                let values = if c.at_sym("(") { c.tuple()? } else { vec![c.expr()?] };
                args.push(DirectiveArg { key, values });
                if !c.eat_sym(",") {
                    c.expect_sym(")")?;
                    break;
                }
            }
            StmtKind::Directive {
                name: head.clone(),
                args,
            }
        }
        "tensor" | "alloc" | "gemm" => {
            return Err(perr(hpos, format!("{head} result must be assigned: `x = {head}(...)`")));
        }
        other if other.parse::<VectorKind>().is_ok() => {
            return Err(perr(hpos, format!("{other} result must be assigned: `out = {other}(...)`")));
        }
        other => return Err(perr(hpos, format!("unknown primitive `{other}`"))),
    };
    c.end()?;
    Ok(Stmt { pos, kind })
}

struct Line {
    no: u32,
    indent: usize,
    toks: Vec<Token>,
    len: u32,
}

fn header(line: &Line) -> Result<(String, Vec<String>, Option<String>), ParseError> {
    let mut c = Cursor {
        toks: &line.toks,
        i: 0,
        eol: Pos {
            line: line.no,
            col: line.len,
        },
    };
    c.keyword("kernel")?;
    let (name, _) = c.ident()?;
    c.expect_sym("(")?;
    let mut params = Vec::new();
    while !c.eat_sym(")") {
        params.push(c.ident()?.0);
        if !c.eat_sym(",") {
            c.expect_sym(")")?;
            break;
        }
    }
    let core = if matches!(c.peek(), Some(Tok::Ident(s)) if s == "core") {
        c.i += 1;
        Some(c.ident()?.0)
    } else {
        None
    };
    c.expect_sym(":")?;
    c.end()?;
    Ok((name, params, core))
}

fn for_header(line: &Line) -> Result<(String, Expr, Expr, Expr), ParseError> {
    let mut c = Cursor {
        toks: &line.toks,
        i: 0,
        eol: Pos {
            line: line.no,
            col: line.len,
        },
    };
    c.keyword("for")?;
    let (var, _) = c.ident()?;
    c.keyword("in")?;
    let rpos = c.pos();
    c.keyword("range")?;
    let args = c.tuple()?;
    c.expect_sym(":")?;
    c.end()?;
    let mut it = args.into_iter();
    Ok(match (it.next(), it.next(), it.next(), it.next()) {
        (Some(hi), None, None, None) => (var, Expr::int(0), hi, Expr::int(1)),
        (Some(lo), Some(hi), None, None) => (var, lo, hi, Expr::int(1)),
        (Some(lo), Some(hi), Some(step), None) => (var, lo, hi, step),
        _ => return Err(perr(rpos, "range takes 1 to 3 arguments")),
    })
}

fn block(lines: &[Line], i: &mut usize, indent: usize) -> Result<Vec<Stmt>, ParseError> {
    let mut out = Vec::new();
    while *i < lines.len() {
        let line = &lines[*i];
        if line.indent < indent {
            break;
        }
        let pos = line.toks[0].pos;
        if line.indent > indent {
            return Err(perr(pos, "unexpected indentation"));
        }
        *i += 1;
        if matches!(&line.toks[0].tok, Tok::Ident(s) if s == "for") {
            let (var, lo, hi, step) = for_header(line)?;
            let inner = lines.get(*i).map(|l| l.indent).unwrap_or(0);
            if inner <= indent {
                return Err(perr(pos, "loop body must be indented"));
            }
            let body = block(lines, i, inner)?;
            out.push(Stmt {
                pos,
                kind: StmtKind::For {
                    var,
                    lo,
                    hi,
                    step,
                    body,
                },
            });
        } else {
            out.push(statement(&line.toks, line.no, line.len)?);
        }
    }
    Ok(out)
}

/// Parses one kernel.
pub fn parse_kernel(text: &str) -> Result<KernelProgram, ParseError> {
    let mut lines = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let no = n as u32 + 1;
        if let Some(col) = raw.find('\t') {
            if raw[..col].trim().is_empty() {
                return Err(perr(
                    Pos {
                        line: no,
                        col: col as u32 + 1,
                    },
                    "indent with spaces, not tabs",
                ));
            }
        }
        let toks = lex(raw, no)?;
        if toks.is_empty() {
            continue;
        }
        lines.push(Line {
            no,
            indent: raw.len() - raw.trim_start().len(),
            toks,
            len: raw.chars().count() as u32 + 1,
        });
    }
    let Some(first) = lines.first() else {
        return Err(perr(Pos { line: 1, col: 1 }, "expected `kernel` header"));
    };
    if first.indent != 0 {
        return Err(perr(first.toks[0].pos, "kernel header must not be indented"));
    }
    let (name, params, core_id_param) = header(first)?;
    let mut i = 1;
    let body = match lines.get(1) {
        Some(l) if l.indent > 0 => block(&lines, &mut i, l.indent)?,
        _ => Vec::new(),
    };
    if let Some(extra) = lines.get(i) {
        return Err(perr(extra.toks[0].pos, "only one kernel per file"));
    }
    Ok(KernelProgram {
        name,
        params,
        core_id_param,
        body,
    })
}
