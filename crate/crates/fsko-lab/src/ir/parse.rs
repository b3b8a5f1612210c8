//! Recursive-descent parser. Keywords are contextual: the lexer only knows
//! identifiers, and the parser matches their spelling.

use super::lex::{lex, Spanned, Tok};
use super::{Builtin, BinOp, Expr, FnRegistration, FuncDef, IrError, IrResult, Lval, MacroDef, RecordDef, Stmt, Ty};

/// Raw parse result before name resolution. `Expr::Lval` nodes with a bare
/// base may still be macro references; validation rewrites them.
#[derive(Debug, Default)]
pub struct RawItems {
    pub macros: Vec<MacroDef>,
    pub records: Vec<RecordDef>,
    pub functions: Vec<FuncDef>,
    pub registrations: Vec<FnRegistration>,
}

pub fn parse(text: &str) -> IrResult<RawItems> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    p.corpus()
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, msg: impl Into<String>) -> IrError {
        let s = &self.toks[self.pos];
        IrError::Syntax {
            line: s.line,
            col: s.col,
            msg: msg.into(),
        }
    }

    fn expect(&mut self, t: &Tok, what: &str) -> IrResult<()> {
        if self.peek() == t {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self, what: &str) -> IrResult<String> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn int(&mut self, what: &str) -> IrResult<u64> {
        match self.peek() {
            Tok::Int(v) => {
                let v = *v;
                self.bump();
                Ok(v)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn corpus(&mut self) -> IrResult<RawItems> {
        let mut items = RawItems::default();
        loop {
            match self.peek().clone() {
                Tok::Eof => break,
                Tok::Ident(kw) => match kw.as_str() {
                    "macro" => {
                        self.bump();
                        let name = self.ident("macro name")?;
                        self.expect(&Tok::Assign, "`=`")?;
                        let value = self.int("macro value")?;
                        items.macros.push(MacroDef { name, value });
                    }
                    "record" => {
                        self.bump();
                        let name = self.ident("record name")?;
                        self.expect(&Tok::LBrace, "`{`")?;
                        let mut fields = Vec::new();
                        while self.peek() != &Tok::RBrace {
                            let fname = self.ident("field name")?;
                            self.expect(&Tok::Colon, "`:`")?;
                            let ty = self.ty()?;
                            fields.push((fname, ty));
                        }
                        self.bump(); // }
                        items.records.push(RecordDef { name, fields });
                    }
                    "entry" | "fn" => {
                        items.functions.push(self.fndef()?);
                    }
                    "register" => {
                        self.bump();
                        let record = self.ident("record name")?;
                        self.expect(&Tok::Dot, "`.`")?;
                        let field = self.ident("field name")?;
                        self.expect(&Tok::Assign, "`=`")?;
                        let func = self.ident("function name")?;
                        items.registrations.push(FnRegistration { record, field, func });
                    }
                    other => return Err(self.err(format!("unexpected item `{other}`"))),
                },
                _ => return Err(self.err("expected item")),
            }
        }
        Ok(items)
    }

    fn ty(&mut self) -> IrResult<Ty> {
        let name = self.ident("type")?;
        Ok(match name.as_str() {
            "u8" => Ty::U8,
            "u16" => Ty::U16,
            "u32" => Ty::U32,
            "u64" => Ty::U64,
            "i32" => Ty::I32,
            "sector" => Ty::Sector,
            "data" => Ty::Data,
            "pageref" => Ty::PageRef,
            "ref" => {
                self.expect(&Tok::Lt, "`<`")?;
                let r = self.ident("record name")?;
                self.expect(&Tok::Gt, "`>`")?;
                Ty::ObjRef(r)
            }
            "pagearr" => {
                self.expect(&Tok::LBracket, "`[`")?;
                let n = self.int("array length")?;
                self.expect(&Tok::RBracket, "`]`")?;
                if n == 0 || n > u32::MAX as u64 {
                    return Err(self.err("pagearr length must be >= 1"));
                }
                Ty::PageArr(n as u32)
            }
            "fnref" => {
                self.expect(&Tok::LParen, "`(`")?;
                let mut tys = Vec::new();
                if self.peek() != &Tok::RParen {
                    loop {
                        tys.push(self.ty()?);
                        if self.peek() == &Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(&Tok::RParen, "`)`")?;
                Ty::FnRef(tys)
            }
            other => {
                return Err(self.err(format!("unknown type `{other}`")));
            }
        })
    }

    fn fndef(&mut self) -> IrResult<FuncDef> {
        let mut entry = false;
        let mut pair_tag = None;
        if self.is_kw("entry") {
            entry = true;
            self.bump();
            if let Tok::Str(s) = self.peek() {
                pair_tag = Some(s.clone());
                self.bump();
            }
        }
        if !self.is_kw("fn") {
            return Err(self.err("expected `fn`"));
        }
        self.bump();
        let name = self.ident("function name")?;
        self.expect(&Tok::LParen, "`(`")?;
        let mut params = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                let pname = self.ident("parameter name")?;
                self.expect(&Tok::Colon, "`:`")?;
                let ty = self.ty()?;
                params.push((pname, ty));
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        let ret = if self.peek() == &Tok::Arrow {
            self.bump();
            Some(self.ty()?)
        } else {
            None
        };
        let body = self.block()?;
        Ok(FuncDef {
            name,
            params,
            ret,
            body,
            entry,
            pair_tag,
        })
    }

    fn block(&mut self) -> IrResult<Vec<Stmt>> {
        self.expect(&Tok::LBrace, "`{`")?;
        let mut stmts = Vec::new();
        while self.peek() != &Tok::RBrace {
            if self.peek() == &Tok::Eof {
                return Err(self.err("unterminated block"));
            }
            stmts.push(self.stmt()?);
        }
        self.bump(); // }
        Ok(stmts)
    }

    fn stmt(&mut self) -> IrResult<Stmt> {
        let kw = match self.peek() {
            Tok::Ident(s) => s.clone(),
            _ => return Err(self.err("expected statement")),
        };
        match kw.as_str() {
            "free" => {
                self.bump();
                let l = self.lval()?;
                Ok(Stmt::Free(l))
            }
            "if" => {
                self.bump();
                let cond = self.expr()?;
                let then_blk = self.block()?;
                let else_blk = if self.is_kw("else") {
                    self.bump();
                    self.block()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::If { cond, then_blk, else_blk })
            }
            "call" => {
                self.bump();
                let func = self.ident("function name")?;
                let args = self.args()?;
                Ok(Stmt::Call { func, args })
            }
            "icall" => {
                self.bump();
                let target = self.lval()?;
                let args = self.args()?;
                Ok(Stmt::ICall { target, args })
            }
            "return" => {
                self.bump();
                // A bare `return` directly followed by an assignment to an
                // lvalue belongs to the *next* statement; scan past the
                // dotted name to disambiguate. Otherwise parse greedily.
                let has_expr = match self.peek() {
                    Tok::Int(_) | Tok::Tilde | Tok::LParen => true,
                    Tok::Ident(s) => {
                        if Self::is_stmt_kw(s) {
                            false
                        } else {
                            let mut j = 1;
                            while self.peek_at(j) == &Tok::Dot {
                                if !matches!(self.peek_at(j + 1), Tok::Ident(_)) {
                                    break;
                                }
                                j += 2;
                            }
                            self.peek_at(j) != &Tok::Assign
                        }
                    }
                    _ => false,
                };
                if has_expr {
                    Ok(Stmt::Return(Some(self.expr()?)))
                } else {
                    Ok(Stmt::Return(None))
                }
            }
            "copy_to_user" => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Stmt::Builtin(Builtin::CopyToUser(e)))
            }
            "copy_from_user" => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let l = self.lval()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Stmt::Builtin(Builtin::CopyFromUser(l)))
            }
            "page_read" | "disk_read" => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let e = self.expr()?;
                self.expect(&Tok::Comma, "`,`")?;
                let l = self.lval()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Stmt::Builtin(if kw == "page_read" {
                    Builtin::PageRead(e, l)
                } else {
                    Builtin::DiskRead(e, l)
                }))
            }
            "page_write" | "disk_write" => {
                self.bump();
                self.expect(&Tok::LParen, "`(`")?;
                let e1 = self.expr()?;
                self.expect(&Tok::Comma, "`,`")?;
                let e2 = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(Stmt::Builtin(if kw == "page_write" {
                    Builtin::PageWrite(e1, e2)
                } else {
                    Builtin::DiskWrite(e1, e2)
                }))
            }
            _ => {
                // assignment or alloc
                let l = self.lval()?;
                self.expect(&Tok::Assign, "`=`")?;
                if self.is_kw("alloc") {
                    self.bump();
                    let record = self.ident("record name")?;
                    if !self.is_kw("in") {
                        return Err(self.err("expected `in`"));
                    }
                    self.bump();
                    let cache = match self.peek() {
                        Tok::Str(s) => {
                            let s = s.clone();
                            self.bump();
                            s
                        }
                        _ => return Err(self.err("expected cache name string")),
                    };
                    Ok(Stmt::Alloc { dst: l, record, cache })
                } else {
                    let e = self.expr()?;
                    Ok(Stmt::Assign(l, e))
                }
            }
        }
    }

    fn is_stmt_kw(s: &str) -> bool {
        matches!(
            s,
            "free"
                | "if"
                | "else"
                | "call"
                | "icall"
                | "return"
                | "copy_to_user"
                | "copy_from_user"
                | "page_read"
                | "page_write"
                | "disk_read"
                | "disk_write"
                | "alloc"
        )
    }

    fn args(&mut self) -> IrResult<Vec<Expr>> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != &Tok::RParen {
            loop {
                args.push(self.expr()?);
                if self.peek() == &Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(args)
    }

    fn lval(&mut self) -> IrResult<Lval> {
        let base = self.ident("lvalue")?;
        let mut fields = Vec::new();
        while self.peek() == &Tok::Dot {
            self.bump();
            fields.push(self.ident("field name")?);
        }
        Ok(Lval { base, fields })
    }

    // Precedence climbing, lowest first: | ^ & (== !=) < (<< >>) (+ -) * ~
    fn expr(&mut self) -> IrResult<Expr> {
        self.expr_bp(0)
    }

    fn expr_bp(&mut self, min_bp: u8) -> IrResult<Expr> {
        let mut lhs = self.expr_atom()?;
        loop {
            let (op, bp) = match self.peek() {
                Tok::Pipe => (BinOp::Or, 1),
                Tok::Caret => (BinOp::Xor, 2),
                Tok::Amp => (BinOp::And, 3),
                Tok::EqEq => (BinOp::Eq, 4),
                Tok::NotEq => (BinOp::Ne, 4),
                Tok::Lt => (BinOp::Lt, 5),
                Tok::Shl => (BinOp::Shl, 6),
                Tok::Shr => (BinOp::Shr, 6),
                Tok::Plus => (BinOp::Add, 7),
                Tok::Minus => (BinOp::Sub, 7),
                Tok::Star => (BinOp::Mul, 8),
                _ => break,
            };
            if bp < min_bp {
                break;
            }
            self.bump();
            let rhs = self.expr_bp(bp + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn expr_atom(&mut self) -> IrResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Tilde => {
                self.bump();
                let e = self.expr_atom()?;
                Ok(Expr::Not(Box::new(e)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let l = self.lval()?;
                Ok(Expr::Lval(l))
            }
            _ => Err(self.err("expected expression")),
        }
    }
}
