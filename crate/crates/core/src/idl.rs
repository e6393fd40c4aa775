//! Interface definitions: `Message` and `Service` declarations, their field
//! layouts, and Rust stub generation.
//!
//! ```text
//! Message GetRequest {
//!   int32 timestamp;
//!   char[32] key;
//! }
//! Service KeyValueStore {
//!   rpc get(GetRequest) returns(GetResponse);
//! }
//! ```
//!
//! A service's function ids are its rpc declaration indices, so reordering
//! rpcs renumbers them while reordering messages does not.

use std::borrow::Cow;
use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::wire::{FieldDesc, FieldType};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdlError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: undefined message `{name}`")]
    UndefinedMessage { name: String, line: usize, col: usize },
    #[error("{line}:{col}: duplicate name `{name}`")]
    DuplicateName { name: String, line: usize, col: usize },
    #[error("{line}:{col}: unsupported type `{ty}`")]
    UnsupportedType { ty: String, line: usize, col: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub ty: FieldType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageSpec {
    pub name: String,
    pub fields: Vec<FieldSpec>,
}

impl MessageSpec {
    pub fn descriptors(&self) -> Vec<FieldDesc> {
        self.fields
            .iter()
            .map(|f| FieldDesc {
                name: Cow::Owned(f.name.clone()),
                ty: f.ty,
            })
            .collect()
    }

    pub fn wire_len(&self) -> usize {
        self.fields.iter().map(|f| f.ty.width()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcSpec {
    pub name: String,
    pub request: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDef {
    pub name: String,
    pub rpcs: Vec<RpcSpec>,
}

impl ServiceDef {
    pub fn function_id(&self, rpc: &str) -> Option<u8> {
        self.rpcs.iter().position(|r| r.name == rpc).map(|i| i as u8)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ServiceSpec {
    pub messages: Vec<MessageSpec>,
    pub services: Vec<ServiceDef>,
}

impl ServiceSpec {
    pub fn message(&self, name: &str) -> Option<&MessageSpec> {
        self.messages.iter().find(|m| m.name == name)
    }

    pub fn service(&self, name: &str) -> Option<&ServiceDef> {
        self.services.iter().find(|s| s.name == name)
    }
}

/// Field layout of `message`, ready for [`crate::wire::encode_args`].
pub fn field_descriptors(spec: &ServiceSpec, message: &str) -> Result<Vec<FieldDesc>, IdlError> {
    spec.message(message)
        .map(MessageSpec::descriptors)
        .ok_or_else(|| IdlError::UndefinedMessage {
            name: message.to_string(),
            line: 0,
            col: 0,
        })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(u64),
    Sym(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, IdlError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: start_line,
                col: start_col,
            });
        } else if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            col += i - start;
            let s: String = chars[start..i].iter().collect();
            let n = s.parse().map_err(|_| IdlError::Syntax {
                line: start_line,
                col: start_col,
                msg: format!("number `{s}` too large"),
            })?;
            out.push(Token {
                tok: Tok::Num(n),
                line: start_line,
                col: start_col,
            });
        } else if "{}()[];".contains(c) {
            i += 1;
            col += 1;
            out.push(Token {
                tok: Tok::Sym(c),
                line: start_line,
                col: start_col,
            });
        } else {
            return Err(IdlError::Syntax {
                line,
                col,
                msg: format!("unexpected character `{c}`"),
            });
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn err(t: &Token, msg: impl Into<String>) -> IdlError {
        IdlError::Syntax {
            line: t.line,
            col: t.col,
            msg: msg.into(),
        }
    }

    fn describe(t: &Tok) -> String {
        match t {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Num(n) => format!("`{n}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::Eof => "end of input".into(),
        }
    }

    fn sym(&mut self, c: char) -> Result<(), IdlError> {
        let t = self.next();
        if t.tok == Tok::Sym(c) {
            Ok(())
        } else {
            Err(Self::err(&t, format!("expected `{c}`, found {}", Self::describe(&t.tok))))
        }
    }

    fn ident(&mut self) -> Result<(String, Token), IdlError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(Self::err(&t, format!("expected a name, found {}", Self::describe(other)))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), IdlError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(()),
            other => Err(Self::err(&t, format!("expected `{kw}`, found {}", Self::describe(other)))),
        }
    }

    fn field_type(&mut self) -> Result<FieldType, IdlError> {
        let (name, t) = self.ident()?;
        match name.as_str() {
            "int32" => Ok(FieldType::Int32),
            "int64" => Ok(FieldType::Int64),
            "char" => {
                self.sym('[')?;
                let nt = self.next();
                let Tok::Num(n) = nt.tok else {
                    return Err(Self::err(&nt, "expected array length"));
                };
                self.sym(']')?;
                if n == 0 || n > u16::MAX as u64 {
                    return Err(IdlError::UnsupportedType {
                        ty: format!("char[{n}]"),
                        line: t.line,
                        col: t.col,
                    });
                }
                Ok(FieldType::Char(n as usize))
            }
            _ => Err(IdlError::UnsupportedType {
                ty: name,
                line: t.line,
                col: t.col,
            }),
        }
    }
}

struct Pending {
    name: String,
    line: usize,
    col: usize,
}

/// Parse IDL text. Empty input yields an empty spec.
pub fn parse_idl(text: &str) -> Result<ServiceSpec, IdlError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let mut spec = ServiceSpec::default();
    let mut top_names = HashSet::new();
    let mut refs: Vec<Pending> = Vec::new();
    let dup = |name: &str, t: &Token| IdlError::DuplicateName {
        name: name.to_string(),
        line: t.line,
        col: t.col,
    };
    loop {
        let t = p.next();
        let kw = match &t.tok {
            Tok::Eof => break,
            Tok::Ident(s) => s.clone(),
            other => return Err(Parser::err(&t, format!("expected `Message` or `Service`, found {}", Parser::describe(other)))),
        };
        match kw.as_str() {
            "Message" => {
                let (name, nt) = p.ident()?;
                if !top_names.insert(name.clone()) {
                    return Err(dup(&name, &nt));
                }
                p.sym('{')?;
                let mut fields = Vec::new();
                let mut seen = HashSet::new();
                while p.peek().tok != Tok::Sym('}') {
                    let ty = p.field_type()?;
                    let (fname, ft) = p.ident()?;
                    if !seen.insert(fname.clone()) {
                        return Err(dup(&fname, &ft));
                    }
                    p.sym(';')?;
                    fields.push(FieldSpec { name: fname, ty });
                }
                p.sym('}')?;
                spec.messages.push(MessageSpec { name, fields });
            }
            "Service" => {
                let (name, nt) = p.ident()?;
                if !top_names.insert(name.clone()) {
                    return Err(dup(&name, &nt));
                }
                p.sym('{')?;
                let mut rpcs = Vec::new();
                let mut seen = HashSet::new();
                while p.peek().tok != Tok::Sym('}') {
                    p.keyword("rpc")?;
                    let (rname, rt) = p.ident()?;
                    if !seen.insert(rname.clone()) {
                        return Err(dup(&rname, &rt));
                    }
                    p.sym('(')?;
                    let (req, qt) = p.ident()?;
                    p.sym(')')?;
                    p.keyword("returns")?;
                    p.sym('(')?;
                    let (resp, st) = p.ident()?;
                    p.sym(')')?;
                    p.sym(';')?;
                    refs.push(Pending { name: req.clone(), line: qt.line, col: qt.col });
                    refs.push(Pending { name: resp.clone(), line: st.line, col: st.col });
                    rpcs.push(RpcSpec {
                        name: rname,
                        request: req,
                        response: resp,
                    });
                }
                p.sym('}')?;
                if rpcs.len() > u8::MAX as usize + 1 {
                    return Err(Parser::err(&nt, "more than 256 rpcs in one service"));
                }
                spec.services.push(ServiceDef { name, rpcs });
            }
            other => {
                return Err(Parser::err(&t, format!("expected `Message` or `Service`, found `{other}`")));
            }
        }
    }
    for r in refs {
        if spec.message(&r.name).is_none() {
            return Err(IdlError::UndefinedMessage {
                name: r.name,
                line: r.line,
                col: r.col,
            });
        }
    }
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenOptions {
    /// Shown in the generated header.
    pub source_name: String,
    /// Output file name without extension.
    pub file_stem: String,
    /// Path of the runtime crate as seen from the generated code.
    pub runtime: String,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            source_name: "input.dgr".into(),
            file_stem: "stubs".into(),
            runtime: "nicrpc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFile {
    pub path: String,
    pub contents: String,
}

const RUST_KEYWORDS: &[&str] = &[
    "as", "async", "await", "break", "const", "continue", "crate", "dyn", "else", "enum", "extern",
    "false", "fn", "for", "if", "impl", "in", "let", "loop", "match", "mod", "move", "mut", "pub",
    "ref", "return", "self", "static", "struct", "super", "trait", "true", "type", "unsafe", "use",
    "where", "while", "yield",
];

fn snake(name: &str) -> String {
    let mut out = String::new();
    for (i, c) in name.chars().enumerate() {
        if c.is_ascii_uppercase() {
            if i > 0 && !out.ends_with('_') {
                out.push('_');
            }
            out.push(c.to_ascii_lowercase());
        } else {
            out.push(c);
        }
    }
    out
}

fn ident(name: &str) -> String {
    if RUST_KEYWORDS.contains(&name) {
        format!("r#{name}")
    } else {
        name.to_string()
    }
}

fn rust_type(ty: FieldType) -> String {
    match ty {
        FieldType::Int32 => "i32".into(),
        FieldType::Int64 => "i64".into(),
        FieldType::Char(n) => format!("[u8; {n}]"),
    }
}

fn field_type_expr(ty: FieldType) -> String {
    match ty {
        FieldType::Int32 => "FieldType::Int32".into(),
        FieldType::Int64 => "FieldType::Int64".into(),
        FieldType::Char(n) => format!("FieldType::Char({n})"),
    }
}

fn gen_message(out: &mut String, m: &MessageSpec) {
    let _ = writeln!(out, "#[derive(Debug, Clone, PartialEq, Eq)]");
    let _ = writeln!(out, "pub struct {} {{", m.name);
    for f in &m.fields {
        let _ = writeln!(out, "    pub {}: {},", ident(&f.name), rust_type(f.ty));
    }
    let _ = writeln!(out, "}}\n");

    let _ = writeln!(out, "impl Default for {} {{", m.name);
    let _ = writeln!(out, "    fn default() -> Self {{");
    let _ = writeln!(out, "        {} {{", m.name);
    for f in &m.fields {
        let zero = match f.ty {
            FieldType::Char(n) => format!("[0; {n}]"),
            _ => "0".into(),
        };
        let _ = writeln!(out, "            {}: {zero},", ident(&f.name));
    }
    let _ = writeln!(out, "        }}\n    }}\n}}\n");

    let _ = writeln!(out, "impl {} {{", m.name);
    let _ = writeln!(out, "    pub const FIELDS: &'static [FieldDesc] = &[");
    for f in &m.fields {
        let _ = writeln!(
            out,
            "        FieldDesc::new({:?}, {}),",
            f.name,
            field_type_expr(f.ty)
        );
    }
    let _ = writeln!(out, "    ];");
    let _ = writeln!(out, "    pub const WIRE_LEN: usize = {};\n", m.wire_len());

    let _ = writeln!(out, "    pub fn encode(&self) -> Vec<u8> {{");
    if m.fields.is_empty() {
        let _ = writeln!(out, "        // messages carry at least one byte");
        let _ = writeln!(out, "        vec![0]");
    } else {
        let _ = writeln!(out, "        let values = [");
        for f in &m.fields {
            let v = match f.ty {
                FieldType::Int32 => format!("FieldValue::Int32(self.{})", ident(&f.name)),
                FieldType::Int64 => format!("FieldValue::Int64(self.{})", ident(&f.name)),
                FieldType::Char(_) => format!("FieldValue::Chars(self.{}.to_vec())", ident(&f.name)),
            };
            let _ = writeln!(out, "            {v},");
        }
        let _ = writeln!(out, "        ];");
        let _ = writeln!(
            out,
            "        encode_args(Self::FIELDS, &values).expect(\"values match the layout\")"
        );
    }
    let _ = writeln!(out, "    }}\n");

    let _ = writeln!(out, "    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {{");
    if m.fields.is_empty() {
        let _ = writeln!(out, "        let _ = bytes;");
        let _ = writeln!(out, "        Ok(Self::default())");
    } else {
        let _ = writeln!(out, "        let mut values = decode_args(Self::FIELDS, bytes)?.into_iter();");
        let _ = writeln!(out, "        let mut msg = Self::default();");
        for f in &m.fields {
            let name = ident(&f.name);
            let arm = match f.ty {
                FieldType::Int32 => format!("Some(FieldValue::Int32(v)) => msg.{name} = v,"),
                FieldType::Int64 => format!("Some(FieldValue::Int64(v)) => msg.{name} = v,"),
                FieldType::Char(_) => format!("Some(FieldValue::Chars(v)) => msg.{name}[..v.len()].copy_from_slice(&v),"),
            };
            let _ = writeln!(out, "        match values.next() {{");
            let _ = writeln!(out, "            {arm}");
            let _ = writeln!(
                out,
                "            _ => return Err(WireError::TypeMismatch {{ field: {:?}.into() }}),",
                f.name
            );
            let _ = writeln!(out, "        }}");
        }
        let _ = writeln!(out, "        Ok(msg)");
    }
    let _ = writeln!(out, "    }}\n}}\n");
}

fn gen_service(out: &mut String, s: &ServiceDef, runtime: &str) {
    let client = format!("{}Client", s.name);
    let handler = format!("{}Handler", s.name);
    let service = format!("{}Service", s.name);

    let _ = writeln!(out, "/// Function ids of `{}`.", s.name);
    let _ = writeln!(out, "pub mod {}_ids {{", snake(&s.name));
    for (i, r) in s.rpcs.iter().enumerate() {
        let _ = writeln!(out, "    pub const {}: u8 = {i};", snake(&r.name).to_ascii_uppercase());
    }
    let _ = writeln!(out, "}}\n");

    let _ = writeln!(out, "pub struct {client}<'a> {{");
    let _ = writeln!(out, "    client: &'a mut {runtime}::rpc::RpcClient,");
    let _ = writeln!(out, "    connection_id: u32,");
    let _ = writeln!(out, "}}\n");
    let _ = writeln!(out, "impl<'a> {client}<'a> {{");
    let _ = writeln!(
        out,
        "    pub fn new(client: &'a mut {runtime}::rpc::RpcClient, connection_id: u32) -> Self {{"
    );
    let _ = writeln!(out, "        {client} {{ client, connection_id }}");
    let _ = writeln!(out, "    }}");
    for (i, r) in s.rpcs.iter().enumerate() {
        let m = ident(&snake(&r.name));
        let am = snake(&r.name);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "    pub fn {m}(&mut self, req: &{}) -> Result<{}, {runtime}::rpc::RpcError> {{",
            r.request, r.response
        );
        let _ = writeln!(
            out,
            "        let bytes = self.client.call_sync(self.connection_id, {i}, &req.encode())?;"
        );
        let _ = writeln!(out, "        Ok({}::decode(&bytes)?)", r.response);
        let _ = writeln!(out, "    }}\n");
        let _ = writeln!(out, "    /// Returns the rpc id; decode the completion with `{}::decode`.", r.response);
        let _ = writeln!(
            out,
            "    pub fn {am}_async(&mut self, req: &{}) -> Result<u32, {runtime}::rpc::RpcError> {{",
            r.request
        );
        let _ = writeln!(
            out,
            "        self.client.call_async(self.connection_id, {i}, &req.encode())"
        );
        let _ = writeln!(out, "    }}");
    }
    let _ = writeln!(out, "}}\n");

    let _ = writeln!(out, "pub trait {handler}: Send {{");
    for r in &s.rpcs {
        let _ = writeln!(
            out,
            "    fn {}(&mut self, req: {}) -> {};",
            ident(&snake(&r.name)),
            r.request,
            r.response
        );
    }
    let _ = writeln!(out, "}}\n");

    let _ = writeln!(out, "/// Adapts a [`{handler}`] to the server runtime.");
    let _ = writeln!(out, "pub struct {service}<H>(pub H);\n");
    let _ = writeln!(out, "impl<H: {handler}> {runtime}::rpc::Service for {service}<H> {{");
    let _ = writeln!(
        out,
        "    fn handle(&mut self, req: &{runtime}::wire::RpcMessage) -> Option<Vec<u8>> {{"
    );
    let _ = writeln!(out, "        match req.function_id {{");
    for (i, r) in s.rpcs.iter().enumerate() {
        let _ = writeln!(out, "            {i} => {{");
        let _ = writeln!(out, "                let r = {}::decode(&req.payload).ok()?;", r.request);
        let _ = writeln!(out, "                Some(self.0.{}(r).encode())", ident(&snake(&r.name)));
        let _ = writeln!(out, "            }}");
    }
    let _ = writeln!(out, "            _ => None,");
    let _ = writeln!(out, "        }}\n    }}\n}}\n");
}

/// Emit Rust source for every message and service. Output depends only on
/// `spec` and `opts`.
pub fn generate_stubs(spec: &ServiceSpec, opts: &GenOptions) -> Vec<GeneratedFile> {
    let rt = &opts.runtime;
    let mut out = String::new();
    let _ = writeln!(out, "// Generated from {}. Do not edit.\n", opts.source_name);
    let _ = writeln!(out, "#[allow(unused_imports)]");
    let _ = writeln!(
        out,
        "use {rt}::wire::{{decode_args, encode_args, FieldDesc, FieldType, FieldValue, WireError}};\n"
    );
    for m in &spec.messages {
        gen_message(&mut out, m);
    }
    for s in &spec.services {
        gen_service(&mut out, s, rt);
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    vec![GeneratedFile {
        path: format!("{}.rs", opts.file_stem),
        contents: out,
    }]
}
