//! Lexical abstraction of source text.
//!
//! The C-like lexer drops comments and literal contents, folds every
//! identifier into one class, keeps each keyword and punctuator distinct and
//! maps numeric literals to one class. It is total: unterminated comments or
//! literals simply run to end of input.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

const KEYWORDS: &[&str] = &[
    "alignas", "alignof", "and", "and_eq", "asm", "auto", "bitand", "bitor", "bool", "break",
    "case", "catch", "char", "char16_t", "char32_t", "char8_t", "class", "co_await", "co_return",
    "co_yield", "compl", "concept", "const", "const_cast", "consteval", "constexpr", "constinit",
    "continue", "decltype", "default", "delete", "do", "double", "dynamic_cast", "else", "enum",
    "explicit", "export", "extern", "false", "float", "for", "friend", "goto", "if", "inline",
    "int", "long", "mutable", "namespace", "new", "noexcept", "not", "not_eq", "nullptr",
    "operator", "or", "or_eq", "private", "protected", "public", "register", "reinterpret_cast",
    "requires", "restrict", "return", "short", "signed", "sizeof", "static", "static_assert",
    "static_cast", "struct", "switch", "template", "this", "thread_local", "throw", "true", "try",
    "typedef", "typeid", "typename", "union", "unsigned", "using", "virtual", "void", "volatile",
    "wchar_t", "while", "xor", "xor_eq", "_Alignas", "_Alignof", "_Atomic", "_Bool", "_Complex",
    "_Generic", "_Imaginary", "_Noreturn", "_Static_assert", "_Thread_local",
];

/// Punctuators, longest first so the lexer can munch greedily.
const PUNCTS: &[(&str, &str)] = &[
    ("...", "ELLIPSIS"),
    ("<<=", "OP_shl_assign"),
    (">>=", "OP_shr_assign"),
    ("->*", "OP_arrow_star"),
    ("<=>", "OP_spaceship"),
    ("->", "OP_arrow"),
    ("++", "OP_inc"),
    ("--", "OP_dec"),
    ("<<", "OP_shl"),
    (">>", "OP_shr"),
    ("<=", "OP_le"),
    (">=", "OP_ge"),
    ("==", "OP_eq"),
    ("!=", "OP_ne"),
    ("&&", "OP_and"),
    ("||", "OP_or"),
    ("+=", "OP_add_assign"),
    ("-=", "OP_sub_assign"),
    ("*=", "OP_mul_assign"),
    ("/=", "OP_div_assign"),
    ("%=", "OP_mod_assign"),
    ("&=", "OP_and_assign"),
    ("|=", "OP_or_assign"),
    ("^=", "OP_xor_assign"),
    ("::", "SCOPE"),
    ("##", "PASTE"),
    (".*", "OP_dot_star"),
    ("+", "OP_add"),
    ("-", "OP_sub"),
    ("*", "OP_mul"),
    ("/", "OP_div"),
    ("%", "OP_mod"),
    ("=", "OP_assign"),
    ("<", "OP_lt"),
    (">", "OP_gt"),
    ("!", "OP_not"),
    ("~", "OP_bitnot"),
    ("&", "OP_bitand"),
    ("|", "OP_bitor"),
    ("^", "OP_xor"),
    ("?", "QUESTION"),
    (":", "COLON"),
    (";", "SEMI"),
    (",", "COMMA"),
    (".", "DOT"),
    ("(", "LPAREN"),
    (")", "RPAREN"),
    ("[", "LBRACKET"),
    ("]", "RBRACKET"),
    ("{", "LBRACE"),
    ("}", "RBRACE"),
    ("#", "HASH"),
    ("@", "AT"),
    ("\\", "BACKSLASH"),
    ("$", "DOLLAR"),
    ("`", "BACKTICK"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TokenClass {
    Keyword(u8),
    Ident,
    Num,
    Str,
    Char,
    Punct(u8),
    /// Whitespace-delimited word of the plain dialect (hash of its text).
    Word(u64),
    /// Any other character.
    Other(u32),
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenClass::Keyword(i) => write!(f, "KW_{}", KEYWORDS[*i as usize]),
            TokenClass::Ident => f.write_str("IDENT"),
            TokenClass::Num => f.write_str("NUM"),
            TokenClass::Str => f.write_str("STR"),
            TokenClass::Char => f.write_str("CHAR"),
            TokenClass::Punct(i) => f.write_str(PUNCTS[*i as usize].1),
            TokenClass::Word(h) => write!(f, "WORD_{h:016x}"),
            TokenClass::Other(c) => write!(f, "OTHER_{c:x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Dialect {
    #[default]
    CLike,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenOrigin {
    pub path: String,
    pub commit: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStream {
    pub origin: Option<TokenOrigin>,
    pub tokens: Vec<TokenClass>,
    /// 1-based source line of each token.
    pub line_map: Vec<u32>,
}

impl TokenStream {
    pub fn from_tokens(tokens: Vec<TokenClass>) -> Self {
        let line_map = vec![1; tokens.len()];
        TokenStream {
            origin: None,
            tokens,
            line_map,
        }
    }

    pub fn with_origin(mut self, path: impl Into<String>, commit: Option<String>) -> Self {
        self.origin = Some(TokenOrigin {
            path: path.into(),
            commit,
        });
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(source: &str, dialect: Dialect) -> TokenStream {
    match dialect {
        Dialect::CLike => lex_c(source),
        Dialect::Plain => lex_plain(source),
    }
}

fn lex_plain(source: &str) -> TokenStream {
    let mut out = TokenStream::default();
    for (n, line) in source.lines().enumerate() {
        for word in line.split_whitespace() {
            let mut h = DefaultHasher::new();
            word.hash(&mut h);
            out.tokens.push(TokenClass::Word(h.finish()));
            out.line_map.push(n as u32 + 1);
        }
    }
    out
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}

struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    out: TokenStream,
    _src: &'a str,
}

impl Lexer<'_> {
    fn peek(&self, off: usize) -> Option<char> {
        self.chars.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
        }
        Some(c)
    }

    fn emit(&mut self, t: TokenClass, line: u32) {
        self.out.tokens.push(t);
        self.out.line_map.push(line);
    }

    fn skip_quoted(&mut self, quote: char) {
        // opening quote already consumed
        while let Some(c) = self.bump() {
            if c == '\\' {
                self.bump();
            } else if c == quote || c == '\n' {
                break;
            }
        }
    }

    fn skip_raw_string(&mut self) {
        // at the opening quote of R"delim( ... )delim"
        self.bump();
        let mut delim = String::new();
        while let Some(c) = self.peek(0) {
            if c == '(' || c == '\n' || delim.len() > 16 {
                break;
            }
            delim.push(c);
            self.bump();
        }
        self.bump();
        let close: Vec<char> = format!("){delim}\"").chars().collect();
        while self.pos < self.chars.len() {
            if self.chars[self.pos..].starts_with(&close) {
                for _ in 0..close.len() {
                    self.bump();
                }
                return;
            }
            self.bump();
        }
    }

    fn punct_at(&self) -> Option<usize> {
        PUNCTS.iter().position(|(p, _)| {
            let mut it = p.chars();
            let mut off = 0;
            it.all(|pc| {
                let ok = self.peek(off) == Some(pc);
                off += 1;
                ok
            })
        })
    }
}

fn lex_c(source: &str) -> TokenStream {
    let mut lx = Lexer {
        chars: source.chars().collect(),
        pos: 0,
        line: 1,
        out: TokenStream::default(),
        _src: source,
    };
    while let Some(c) = lx.peek(0) {
        let line = lx.line;
        if c.is_whitespace() {
            lx.bump();
        } else if c == '/' && lx.peek(1) == Some('/') {
            while let Some(c) = lx.peek(0) {
                if c == '\n' {
                    break;
                }
                lx.bump();
            }
        } else if c == '/' && lx.peek(1) == Some('*') {
            lx.bump();
            lx.bump();
            while lx.peek(0).is_some() {
                if lx.peek(0) == Some('*') && lx.peek(1) == Some('/') {
                    lx.bump();
                    lx.bump();
                    break;
                }
                lx.bump();
            }
        } else if c == '"' {
            lx.bump();
            lx.skip_quoted('"');
            lx.emit(TokenClass::Str, line);
        } else if c == '\'' {
            lx.bump();
            lx.skip_quoted('\'');
            lx.emit(TokenClass::Char, line);
        } else if c.is_ascii_digit() || (c == '.' && lx.peek(1).is_some_and(|d| d.is_ascii_digit())) {
            let mut prev = '\0';
            while let Some(d) = lx.peek(0) {
                let exp_sign = (d == '+' || d == '-') && matches!(prev, 'e' | 'E' | 'p' | 'P');
                if d.is_ascii_alphanumeric() || d == '.' || d == '_' || d == '\'' || exp_sign {
                    prev = d;
                    lx.bump();
                } else {
                    break;
                }
            }
            lx.emit(TokenClass::Num, line);
        } else if is_ident_start(c) {
            let start = lx.pos;
            while lx.peek(0).is_some_and(is_ident_continue) {
                lx.bump();
            }
            let word: String = lx.chars[start..lx.pos].iter().collect();
            match (word.as_str(), lx.peek(0)) {
                ("R" | "LR" | "uR" | "UR" | "u8R", Some('"')) => {
                    lx.skip_raw_string();
                    lx.emit(TokenClass::Str, line);
                }
                ("L" | "u" | "U" | "u8", Some('"')) => {
                    lx.bump();
                    lx.skip_quoted('"');
                    lx.emit(TokenClass::Str, line);
                }
                ("L" | "u" | "U" | "u8", Some('\'')) => {
                    lx.bump();
                    lx.skip_quoted('\'');
                    lx.emit(TokenClass::Char, line);
                }
                _ => match KEYWORDS.iter().position(|k| *k == word) {
                    Some(i) => lx.emit(TokenClass::Keyword(i as u8), line),
                    None => lx.emit(TokenClass::Ident, line),
                },
            }
        } else if let Some(i) = lx.punct_at() {
            for _ in 0..PUNCTS[i].0.len() {
                lx.bump();
            }
            lx.emit(TokenClass::Punct(i as u8), line);
        } else {
            lx.bump();
            lx.emit(TokenClass::Other(c as u32), line);
        }
    }
    lx.out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(src: &str) -> Vec<String> {
        tokenize(src, Dialect::CLike)
            .tokens
            .iter()
            .map(|t| t.to_string())
            .collect()
    }

    #[test]
    fn declaration_with_comment() {
        assert_eq!(
            names("int x = 1; // note"),
            vec!["KW_int", "IDENT", "OP_assign", "NUM", "SEMI"]
        );
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("", Dialect::CLike).is_empty());
        assert!(tokenize("  \n\t", Dialect::Plain).is_empty());
    }

    #[test]
    fn literals_and_block_comments() {
        assert_eq!(
            names("s = \"a // b\"; /* int */ c = 'x'; f(1.5e-3f, 0x1F);"),
            vec![
                "IDENT", "OP_assign", "STR", "SEMI", "IDENT", "OP_assign", "CHAR", "SEMI", "IDENT",
                "LPAREN", "NUM", "COMMA", "NUM", "RPAREN", "SEMI"
            ]
        );
    }

    #[test]
    fn maximal_munch_operators() {
        assert_eq!(names("a<<=b->c"), vec!["IDENT", "OP_shl_assign", "IDENT", "OP_arrow", "IDENT"]);
        assert_eq!(names("x...y"), vec!["IDENT", "ELLIPSIS", "IDENT"]);
    }

    #[test]
    fn raw_and_prefixed_strings() {
        assert_eq!(names("R\"x(a\")\" b)x\"; L\"w\""), vec!["STR", "SEMI", "STR"]);
    }

    #[test]
    fn unterminated_constructs_are_total() {
        assert_eq!(names("a /* never closed"), vec!["IDENT"]);
        assert_eq!(names("\"open"), vec!["STR"]);
    }

    #[test]
    fn line_map_tracks_lines() {
        let ts = tokenize("int a;\n/* x\n y */\nreturn a;", Dialect::CLike);
        assert_eq!(ts.line_map, vec![1, 1, 1, 4, 4, 4]);
    }

    #[test]
    fn identifier_rename_invariance() {
        let a = tokenize("int bitcoin_main(int argc) { return argc + 1; }", Dialect::CLike);
        let b = tokenize("int acoin_main(int n) { return n + 1; }", Dialect::CLike);
        assert_eq!(a.tokens, b.tokens);
    }

    #[test]
    fn plain_dialect_keeps_words_distinct() {
        let ts = tokenize("alpha beta alpha", Dialect::Plain);
        assert_eq!(ts.tokens[0], ts.tokens[2]);
        assert_ne!(ts.tokens[0], ts.tokens[1]);
    }
}
