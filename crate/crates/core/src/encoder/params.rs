use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Embedding,
    Weight,
    Bias,
    Gain,
    HeadWeight,
    HeadBias,
    LoraA,
    LoraB,
    AdapterWeight,
    AdapterBias,
}

impl ParamRole {
    /// Roles are encoded in parameter names so checkpoints need not store them.
    pub fn of(name: &str) -> ParamRole {
        let head = name.starts_with("head.");
        let adapter = name.contains(".adapter_");
        match name.rsplit('.').next().unwrap_or("") {
            "lora_a" => ParamRole::LoraA,
            "lora_b" => ParamRole::LoraB,
            "gain" => ParamRole::Gain,
            "tokens" => ParamRole::Embedding,
            "bias" if head => ParamRole::HeadBias,
            "bias" if adapter => ParamRole::AdapterBias,
            "bias" => ParamRole::Bias,
            _ if head => ParamRole::HeadWeight,
            _ if adapter => ParamRole::AdapterWeight,
            _ => ParamRole::Weight,
        }
    }

    pub fn is_head(self) -> bool {
        matches!(self, ParamRole::HeadWeight | ParamRole::HeadBias)
    }

    pub fn is_lora(self) -> bool {
        matches!(self, ParamRole::LoraA | ParamRole::LoraB)
    }

    pub fn is_adapter(self) -> bool {
        matches!(self, ParamRole::AdapterWeight | ParamRole::AdapterBias)
    }

    /// Part of the pretrained network (encoder body or head).
    pub fn is_base(self) -> bool {
        !self.is_lora() && !self.is_adapter()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub frozen: bool,
    pub role: ParamRole,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let role = ParamRole::of(&name);
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param {
            name,
            tensor,
            frozen: false,
            role,
        });
        Ok(self.params.len() - 1)
    }

    pub fn remove_where(&mut self, pred: impl Fn(&Param) -> bool) {
        self.params.retain(|p| !pred(p));
        self.index = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.position(name).map(|i| &mut self.params[i])
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn as_slice(&self) -> &[Param] {
        &self.params
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| !p.frozen).map(|p| p.tensor.numel()).sum()
    }

    pub fn set_frozen(&mut self, frozen: impl Fn(&Param) -> bool) {
        for p in &mut self.params {
            p.frozen = frozen(p);
        }
    }
}
