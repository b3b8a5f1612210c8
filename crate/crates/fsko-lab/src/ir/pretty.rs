//! Canonical pretty-printer. `parse(pretty(parse(text)))` equals
//! `parse(text)`, and pretty is idempotent on its own output.

use super::{Builtin, Corpus, Expr, Stmt};

pub fn pretty_print(corpus: &Corpus) -> String {
    let mut out = String::new();
    for m in &corpus.macros {
        out.push_str(&format!("macro {} = {}\n", m.name, m.value));
    }
    if !corpus.macros.is_empty() {
        out.push('\n');
    }
    for r in &corpus.records {
        out.push_str(&format!("record {} {{\n", r.name));
        for (name, ty) in &r.fields {
            out.push_str(&format!("  {name}: {ty}\n"));
        }
        out.push_str("}\n\n");
    }
    for f in &corpus.functions {
        if f.entry {
            match &f.pair_tag {
                Some(tag) => out.push_str(&format!("entry \"{tag}\" ")),
                None => out.push_str("entry "),
            }
        }
        out.push_str(&format!("fn {}(", f.name));
        for (i, (name, ty)) in f.params.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(&format!("{name}: {ty}"));
        }
        out.push(')');
        if let Some(rt) = &f.ret {
            out.push_str(&format!(" -> {rt}"));
        }
        out.push_str(" {\n");
        print_block(&mut out, &f.body, 1);
        out.push_str("}\n\n");
    }
    for reg in &corpus.registrations {
        out.push_str(&format!(
            "register {}.{} = {}\n",
            reg.record, reg.field, reg.func
        ));
    }
    out
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn print_block(out: &mut String, stmts: &[Stmt], depth: usize) {
    for s in stmts {
        indent(out, depth);
        match s {
            Stmt::Assign(l, e) => out.push_str(&format!("{l} = {}\n", expr_str(e))),
            Stmt::Alloc { dst, record, cache } => {
                out.push_str(&format!("{dst} = alloc {record} in \"{cache}\"\n"))
            }
            Stmt::Free(l) => out.push_str(&format!("free {l}\n")),
            Stmt::If { cond, then_blk, else_blk } => {
                out.push_str(&format!("if {} {{\n", expr_str(cond)));
                print_block(out, then_blk, depth + 1);
                indent(out, depth);
                if else_blk.is_empty() {
                    out.push_str("}\n");
                } else {
                    out.push_str("} else {\n");
                    print_block(out, else_blk, depth + 1);
                    indent(out, depth);
                    out.push_str("}\n");
                }
            }
            Stmt::Call { func, args } => {
                out.push_str(&format!("call {func}({})\n", args_str(args)))
            }
            Stmt::ICall { target, args } => {
                out.push_str(&format!("icall {target}({})\n", args_str(args)))
            }
            Stmt::Return(None) => out.push_str("return\n"),
            Stmt::Return(Some(e)) => out.push_str(&format!("return {}\n", expr_str(e))),
            Stmt::Builtin(b) => match b {
                Builtin::CopyToUser(e) => out.push_str(&format!("copy_to_user({})\n", expr_str(e))),
                Builtin::CopyFromUser(l) => out.push_str(&format!("copy_from_user({l})\n")),
                Builtin::PageRead(e, l) => {
                    out.push_str(&format!("page_read({}, {l})\n", expr_str(e)))
                }
                Builtin::PageWrite(e1, e2) => {
                    out.push_str(&format!("page_write({}, {})\n", expr_str(e1), expr_str(e2)))
                }
                Builtin::DiskRead(e, l) => {
                    out.push_str(&format!("disk_read({}, {l})\n", expr_str(e)))
                }
                Builtin::DiskWrite(e1, e2) => {
                    out.push_str(&format!("disk_write({}, {})\n", expr_str(e1), expr_str(e2)))
                }
            },
        }
    }
}

fn args_str(args: &[Expr]) -> String {
    args.iter().map(expr_str).collect::<Vec<_>>().join(", ")
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(op, ..) => match op {
            super::BinOp::Or => 1,
            super::BinOp::Xor => 2,
            super::BinOp::And => 3,
            super::BinOp::Eq | super::BinOp::Ne => 4,
            super::BinOp::Lt => 5,
            super::BinOp::Shl | super::BinOp::Shr => 6,
            super::BinOp::Add | super::BinOp::Sub => 7,
            super::BinOp::Mul => 8,
        },
        _ => 10,
    }
}

fn expr_str(e: &Expr) -> String {
    match e {
        Expr::Lval(l) => l.to_string(),
        Expr::Int(v) => v.to_string(),
        Expr::Macro(m) => m.clone(),
        Expr::Not(inner) => {
            if prec(inner) < 10 {
                format!("~({})", expr_str(inner))
            } else {
                format!("~{}", expr_str(inner))
            }
        }
        Expr::Bin(op, a, b) => {
            let p = prec(e);
            let left = if prec(a) < p {
                format!("({})", expr_str(a))
            } else {
                expr_str(a)
            };
            // operators are left-associative: parenthesize equal-precedence
            // right children
            let right = if prec(b) <= p {
                format!("({})", expr_str(b))
            } else {
                expr_str(b)
            };
            format!("{left} {} {right}", op.symbol())
        }
    }
}
