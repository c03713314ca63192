use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{Scalar, Tape, Tensor, Var};

/// Which optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Backbone weights; frozen once pretraining ends.
    Base,
    /// Test-time-training branch parameters.
    Ttt,
    /// Memory cross-attention and the action encoder.
    Adapter,
}

impl ParamGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Base => "base",
            ParamGroup::Ttt => "ttt",
            ParamGroup::Adapter => "adapter",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S: Scalar> {
    pub value: Tensor<S>,
    pub group: ParamGroup,
    pub frozen: bool,
}

/// Named parameters of a world model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<S: Scalar> {
    entries: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        ParameterSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<S>, group: ParamGroup) {
        self.entries.insert(
            name.into(),
            Param {
                value,
                group,
                frozen: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<S>> {
        Ok(&self.get(name)?.value)
    }

    /// Replaces a tensor, keeping its group and frozen flag. The shape must match.
    pub fn set(&mut self, name: &str, value: Tensor<S>) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "parameter assignment",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param<S>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn freeze_group(&mut self, group: ParamGroup) {
        for p in self.entries.values_mut().filter(|p| p.group == group) {
            p.frozen = true;
        }
    }

    /// Scalar count of all parameters in `group`.
    pub fn count(&self, group: ParamGroup) -> usize {
        self.entries
            .values()
            .filter(|p| p.group == group)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn total(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    /// Binds every parameter on `tape`; non-frozen ones are tracked when
    /// `track` is set.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, track: bool) -> Bound<'t, S> {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| {
                let v = if track && !p.frozen {
                    tape.param(name, p.value.clone(), true)
                } else {
                    tape.constant(p.value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound to one tape.
pub struct Bound<'t, S: Scalar> {
    vars: BTreeMap<String, Var<'t, S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    pub fn get(&self, name: &str) -> Result<Var<'t, S>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
    }

    /// Overrides one binding, e.g. to differentiate with respect to it.
    pub fn replace(&mut self, name: &str, v: Var<'t, S>) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(slot) => {
                *slot = v;
                Ok(())
            }
            None => Err(Error::contract(format!("missing parameter {name:?}"))),
        }
    }
}
