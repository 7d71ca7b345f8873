use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use candle_core::{DType, Device, Shape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

struct Inner {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
}

/// Named, seeded trainable parameters.
///
/// Handles are cheap to clone; [`ParamStore::pp`] returns a view that prefixes names.
/// Creating an existing name returns the existing variable, which is how checkpoint
/// loading and weight sharing work.
#[derive(Clone)]
pub struct ParamStore {
    inner: Rc<RefCell<Inner>>,
    prefix: String,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            inner: Rc::new(RefCell::new(Inner {
                vars: BTreeMap::new(),
                rng: ChaCha8Rng::seed_from_u64(seed),
                dtype,
            })),
            prefix: String::new(),
        }
    }

    pub fn pp(&self, name: impl AsRef<str>) -> Self {
        Self {
            inner: self.inner.clone(),
            prefix: self.full_name(name.as_ref()),
        }
    }

    pub fn dtype(&self) -> DType {
        self.inner.borrow().dtype
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    fn get_or_init(&self, name: &str, shape: Shape, init: impl FnOnce(&mut ChaCha8Rng, usize) -> Vec<f64>) -> Result<Tensor> {
        let full = self.full_name(name);
        let mut inner = self.inner.borrow_mut();
        if let Some(v) = inner.vars.get(&full) {
            if v.shape() != &shape {
                return Err(Error::Shape(format!("parameter {full}: have {:?}, requested {shape:?}", v.shape())));
            }
            return Ok(v.as_tensor().clone());
        }
        let data = init(&mut inner.rng, shape.elem_count());
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(inner.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        inner.vars.insert(full, var);
        Ok(out)
    }

    pub fn normal(&self, name: &str, shape: impl Into<Shape>, std: f64) -> Result<Tensor> {
        self.get_or_init(name, shape.into(), |rng, n| {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect::<Vec<f64>>()
        })
    }

    pub fn constant(&self, name: &str, shape: impl Into<Shape>, value: f64) -> Result<Tensor> {
        self.get_or_init(name, shape.into(), |_, n| vec![value; n])
    }

    pub fn zeros(&self, name: &str, shape: impl Into<Shape>) -> Result<Tensor> {
        self.constant(name, shape, 0.)
    }

    /// All variables in name order.
    pub fn vars(&self) -> Vec<(String, Var)> {
        self.inner.borrow().vars.iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.inner.borrow().vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites parameter values by name; every stored parameter must be present.
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        let inner = self.inner.borrow();
        for (name, var) in inner.vars.iter() {
            let value = values.get(name).ok_or_else(|| Error::MissingKey(name.clone()))?;
            if value.shape() != var.shape() {
                return Err(Error::Shape(format!(
                    "parameter {name}: checkpoint {:?} vs model {:?}",
                    value.shape(),
                    var.shape()
                )));
            }
            var.set(&value.to_dtype(inner.dtype)?)?;
        }
        Ok(())
    }
}
