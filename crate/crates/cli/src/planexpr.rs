//! Parser for the composition-plan expression language used in config files:
//!
//! ```text
//! seq(planner,
//!     module(recommender, seq(query_parser, branch(text: text_classifier,
//!                                                  image: image_classifier))),
//!     module(searcher, tiered(quota = 100, high ~ poisson(110), low ~ deterministic(40))),
//!     branch(0.5: a, 0.5: b),
//!     par(x, y))
//! ```
//!
//! Bare identifiers become `Plan::Ref` nodes; topology validation resolves
//! them to stations or named sub-plans and rejects anything unknown.

use ebf_core::component::YieldModel;
use ebf_core::topology::{Plan, Tier};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("plan syntax error at line {line}: {msg}")]
pub struct PlanParseError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_plan(input: &str) -> Result<Plan, PlanParseError> {
    let mut parser = Parser::new(input);
    let plan = parser.expr()?;
    parser.skip_ws();
    if parser.pos < parser.src.len() {
        return Err(parser.error("trailing input after plan expression"));
    }
    Ok(plan)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Parser {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn error(&self, msg: impl Into<String>) -> PlanParseError {
        let line = 1 + self.src[..self.pos.min(self.src.len())]
            .iter()
            .filter(|&&b| b == b'\n')
            .count();
        PlanParseError {
            line,
            msg: msg.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, byte: u8) -> Result<(), PlanParseError> {
        if self.peek() == Some(byte) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!(
                "expected '{}', found {}",
                byte as char,
                self.describe_here()
            )))
        }
    }

    fn describe_here(&self) -> String {
        match self.src.get(self.pos) {
            Some(&b) => format!("'{}'", b as char),
            None => "end of input".to_string(),
        }
    }

    fn ident(&mut self) -> Result<String, PlanParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(format!(
                "expected an identifier, found {}",
                self.describe_here()
            )));
        }
        Ok(std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_string())
    }

    fn number(&mut self) -> Result<f64, PlanParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.error(format!("expected a number, found {}", self.describe_here())));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .parse()
            .map_err(|e| self.error(format!("bad number: {e}")))
    }

    fn peek_is_number(&mut self) -> bool {
        matches!(self.peek(), Some(b) if b.is_ascii_digit() || b == b'.')
    }

    fn expr(&mut self) -> Result<Plan, PlanParseError> {
        let name = self.ident()?;
        if self.peek() != Some(b'(') {
            return Ok(Plan::Ref(name));
        }
        match name.as_str() {
            "seq" => Ok(Plan::Seq(self.expr_list()?)),
            "par" => Ok(Plan::Par(self.expr_list()?)),
            "branch" => self.branch(),
            "tiered" => self.tiered(),
            "module" => self.module(),
            other => Err(self.error(format!(
                "unknown combinator '{other}' (expected seq, par, branch, tiered, or module)"
            ))),
        }
    }

    fn expr_list(&mut self) -> Result<Vec<Plan>, PlanParseError> {
        self.eat(b'(')?;
        let mut children = Vec::new();
        loop {
            children.push(self.expr()?);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(children);
                }
                _ => {
                    return Err(self.error(format!(
                        "expected ',' or ')', found {}",
                        self.describe_here()
                    )));
                }
            }
        }
    }

    fn branch(&mut self) -> Result<Plan, PlanParseError> {
        self.eat(b'(')?;
        let mut class_arms: Vec<(String, Plan)> = Vec::new();
        let mut weighted: Vec<(f64, Plan)> = Vec::new();
        loop {
            if self.peek_is_number() {
                let weight = self.number()?;
                self.eat(b':')?;
                weighted.push((weight, self.expr()?));
            } else {
                let label = self.ident()?;
                self.eat(b':')?;
                class_arms.push((label, self.expr()?));
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    return Err(self.error(format!(
                        "expected ',' or ')', found {}",
                        self.describe_here()
                    )));
                }
            }
        }
        match (class_arms.is_empty(), weighted.is_empty()) {
            (false, true) => {
                let mut text = None;
                let mut image = None;
                for (label, plan) in class_arms {
                    match label.as_str() {
                        "text" if text.is_none() => text = Some(plan),
                        "image" if image.is_none() => image = Some(plan),
                        other => {
                            return Err(self.error(format!(
                                "class branch arms must be 'text' and 'image' exactly once, found '{other}'"
                            )));
                        }
                    }
                }
                match (text, image) {
                    (Some(text), Some(image)) => Ok(Plan::BranchClass {
                        text: Box::new(text),
                        image: Box::new(image),
                    }),
                    _ => Err(self.error("class branch needs both a 'text' and an 'image' arm")),
                }
            }
            (true, false) => Ok(Plan::BranchWeighted(weighted)),
            _ => Err(self.error("branch arms must be all class-labeled or all weighted")),
        }
    }

    fn tiered(&mut self) -> Result<Plan, PlanParseError> {
        self.eat(b'(')?;
        let key = self.ident()?;
        if key != "quota" {
            return Err(self.error("tiered must start with 'quota = <n>'"));
        }
        self.eat(b'=')?;
        let quota = self.number()? as u64;
        let mut tiers = Vec::new();
        loop {
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    return Err(self.error(format!(
                        "expected ',' or ')', found {}",
                        self.describe_here()
                    )));
                }
            }
            let station = self.ident()?;
            self.eat(b'~')?;
            tiers.push(Tier {
                station,
                yields: self.yield_model()?,
            });
        }
        Ok(Plan::Tiered { quota, tiers })
    }

    fn yield_model(&mut self) -> Result<YieldModel, PlanParseError> {
        let name = self.ident()?;
        self.eat(b'(')?;
        let model = match name.as_str() {
            "deterministic" => YieldModel::Deterministic(self.number()? as u64),
            "poisson" => YieldModel::Poisson(self.number()?),
            "uniform" => {
                let lo = self.number()? as u64;
                self.eat(b',')?;
                let hi = self.number()? as u64;
                YieldModel::UniformInt { lo, hi }
            }
            other => {
                return Err(self.error(format!(
                    "unknown yield model '{other}' (expected deterministic, poisson, or uniform)"
                )));
            }
        };
        self.eat(b')')?;
        Ok(model)
    }

    fn module(&mut self) -> Result<Plan, PlanParseError> {
        self.eat(b'(')?;
        let label = self.ident()?;
        self.eat(b',')?;
        let inner = self.expr()?;
        self.eat(b')')?;
        Ok(Plan::Module {
            label,
            inner: Box::new(inner),
        })
    }
}
