use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore};
use crate::rng::{rng, stream};

pub(crate) const TABLE_STD: f64 = 0.1;
pub(crate) const ID_TABLE: &str = "iel.id_table";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_types: usize,
    pub num_relations: usize,
    pub num_gcn_layers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ParamIds {
    pub w_in: usize,
    pub b_in: usize,
    pub impute: usize,
    pub id_table: usize,
    pub type_table: usize,
    pub gal: [usize; 3],
    pub type_qkv: Vec<[usize; 3]>,
    pub rel_p: Vec<usize>,
    pub rel_att: Vec<usize>,
    pub rel_msg: Vec<usize>,
    pub beta_t: usize,
    pub gcn: Vec<usize>,
}

/// All learnable tensors, addressed through a [`ParamStore`] by stable names.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub(crate) ids: ParamIds,
    dims: ModelDims,
}

fn glorot(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| r.random_range(-a..=a)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

pub(crate) fn normal_rows(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let n = Normal::new(0.0, TABLE_STD).expect("valid std");
    let data = (0..rows * cols).map(|_| n.sample(r)).collect();
    Matrix::from_vec(rows, cols, data).expect("finite init")
}

fn names(dims: &ModelDims) -> Vec<String> {
    let mut v: Vec<String> = ["input.weight", "input.bias", "input.impute", ID_TABLE, "iel.type_table", "gal.wq", "gal.wk", "gal.wv"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for t in 0..dims.num_types {
        for m in ["wq", "wk", "wv"] {
            v.push(format!("eal.type{t}.{m}"));
        }
    }
    for r in 0..dims.num_relations {
        for m in ["p", "att", "msg"] {
            v.push(format!("eal.rel{r}.{m}"));
        }
    }
    v.push("eal.beta".into());
    for l in 0..dims.num_gcn_layers {
        v.push(format!("gcn.layer{l}"));
    }
    v
}

impl ModelParams {
    /// Fresh parameters: weights uniform in ±√(6/(fan_in+fan_out)), tables
    /// normal(0, 0.1), imputation token and bias zero, p_r = 1, β_t = 0.5.
    pub fn init(config: &ModelConfig, dims: ModelDims, id_rows: usize) -> Result<ModelParams> {
        config.validate()?;
        if dims.hidden_dim != config.hidden_dim {
            return Err(Error::Config("hidden_dim disagrees with model dims".into()));
        }
        let d = dims.hidden_dim;
        let mut r = rng(config.rng_seed, stream::INIT);
        let mut store = ParamStore::new();
        for name in names(&dims) {
            let value = match name.as_str() {
                "input.weight" => glorot(&mut r, dims.input_dim, d),
                "input.bias" => Matrix::zeros(1, d),
                "input.impute" => Matrix::zeros(1, dims.input_dim),
                ID_TABLE => normal_rows(&mut r, id_rows, d),
                "iel.type_table" => normal_rows(&mut r, dims.num_types, d),
                "eal.beta" => Matrix::filled(dims.num_types, 1, 0.5),
                n if n.ends_with(".p") => Matrix::scalar(1.0),
                _ => glorot(&mut r, d, d),
            };
            store.add(&name, value);
        }
        Self::from_store(store)
    }

    /// Rebuilds the id map from a store whose tensors carry the standard names.
    pub fn from_store(store: ParamStore) -> Result<ModelParams> {
        let missing = |n: &str| Error::Snapshot(format!("missing tensor {n}"));
        let get = |n: &str| store.id(n).ok_or_else(|| missing(n));
        let w_in = get("input.weight")?;
        let type_table = get("iel.type_table")?;
        let count = |prefix: &str, suffix: &str| (0..).take_while(|i| store.id(&format!("{prefix}{i}{suffix}")).is_some()).count();
        let dims = ModelDims {
            input_dim: store.get(w_in).value.rows(),
            hidden_dim: store.get(w_in).value.cols(),
            num_types: store.get(type_table).value.rows(),
            num_relations: count("eal.rel", ".p"),
            num_gcn_layers: count("gcn.layer", ""),
        };
        let ids = ParamIds {
            w_in,
            b_in: get("input.bias")?,
            impute: get("input.impute")?,
            id_table: get(ID_TABLE)?,
            type_table,
            gal: [get("gal.wq")?, get("gal.wk")?, get("gal.wv")?],
            type_qkv: (0..dims.num_types)
                .map(|t| Ok([get(&format!("eal.type{t}.wq"))?, get(&format!("eal.type{t}.wk"))?, get(&format!("eal.type{t}.wv"))?]))
                .collect::<Result<_>>()?,
            rel_p: (0..dims.num_relations).map(|r| get(&format!("eal.rel{r}.p"))).collect::<Result<_>>()?,
            rel_att: (0..dims.num_relations).map(|r| get(&format!("eal.rel{r}.att"))).collect::<Result<_>>()?,
            rel_msg: (0..dims.num_relations).map(|r| get(&format!("eal.rel{r}.msg"))).collect::<Result<_>>()?,
            beta_t: get("eal.beta")?,
            gcn: (0..dims.num_gcn_layers).map(|l| get(&format!("gcn.layer{l}"))).collect::<Result<_>>()?,
        };
        let p = ModelParams { store, ids, dims };
        p.check_shapes()?;
        Ok(p)
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.dims.hidden_dim;
        let expect = |id: usize, shape: (usize, usize)| {
            let t = self.store.get(id);
            if t.value.shape() != shape {
                return Err(Error::Snapshot(format!("tensor {} has shape {:?}, expected {:?}", t.name, t.value.shape(), shape)));
            }
            if !t.value.is_finite() {
                return Err(Error::NonFinite("model parameters"));
            }
            Ok(())
        };
        let i = &self.ids;
        expect(i.b_in, (1, d))?;
        expect(i.impute, (1, self.dims.input_dim))?;
        expect(i.type_table, (self.dims.num_types, d))?;
        expect(i.beta_t, (self.dims.num_types, 1))?;
        if self.store.get(i.id_table).value.cols() != d {
            return Err(Error::Snapshot("id table width differs from hidden_dim".into()));
        }
        for &id in i.gal.iter().chain(i.type_qkv.iter().flatten()).chain(&i.rel_att).chain(&i.rel_msg).chain(&i.gcn) {
            expect(id, (d, d))?;
        }
        for &id in &i.rel_p {
            expect(id, (1, 1))?;
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn id_table(&self) -> &Matrix {
        &self.store.get(self.ids.id_table).value
    }

    pub fn id_table_mut(&mut self) -> &mut Matrix {
        &mut self.store.get_mut(self.ids.id_table).value
    }

    pub fn id_table_index(&self) -> usize {
        self.ids.id_table
    }

    pub fn type_table(&self) -> &Matrix {
        &self.store.get(self.ids.type_table).value
    }

    /// Grows the identity table to at least `rows` rows with normal(0, 0.1)
    /// entries drawn from `(seed, old row count)`.
    pub fn ensure_id_rows(&mut self, rows: usize, seed: u64) {
        let have = self.id_table().rows();
        if rows <= have {
            return;
        }
        let mut r = rng(seed, stream::GROW.wrapping_add(have as u64));
        let extra = normal_rows(&mut r, rows - have, self.dims.hidden_dim);
        self.store.grow_rows(self.ids.id_table, &extra);
    }

    pub fn beta(&self, node_type: usize) -> f64 {
        self.store.get(self.ids.beta_t).value[(node_type, 0)]
    }
}
