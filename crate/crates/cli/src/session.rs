//! Single-scene erase session: the erased set, its undo history and a cache of
//! composited results keyed by erased set.
//!
//! Every image is recomputed from the untouched original for a given erased
//! set, so the state is fully described by `(bundle, erased, config)`.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use eraser_core::pipeline::{erase, PipelineConfig, Selection, Timings};
use eraser_core::raster::encode_png_rgb;
use eraser_core::scene::SceneBundle;
use eraser_core::Error;
use image::RgbImage;

/// A rendered state of the scene.
#[derive(Debug)]
pub struct Rendered {
    pub image: RgbImage,
    pub png: Vec<u8>,
    /// `None` for the original image, which involves no computation.
    pub timings: Option<Timings>,
}

impl Rendered {
    fn new(image: RgbImage, timings: Option<Timings>) -> Self {
        let png = encode_png_rgb(&image);
        Self { image, png, timings }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Erase(Vec<String>),
    Restore(Vec<String>),
    Undo,
}

/// What a mutation resolves to before any computation happens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub target: Vec<String>,
    /// Undo pops the history instead of pushing onto it.
    pub pops: bool,
}

pub struct Session {
    pub session_id: String,
    bundle: Arc<SceneBundle>,
    config: PipelineConfig,
    erased: Vec<String>,
    history: Vec<Vec<String>>,
    cache: HashMap<u64, Arc<Rendered>>,
    /// Bumped on every state change; used to version image URLs.
    revision: u64,
}

pub fn set_key(erased: &[String]) -> u64 {
    let mut sorted: Vec<&String> = erased.iter().collect();
    sorted.sort();
    let mut h = DefaultHasher::new();
    sorted.hash(&mut h);
    h.finish()
}

impl Session {
    pub fn new(bundle: SceneBundle, config: PipelineConfig) -> eraser_core::Result<Self> {
        config.validate()?;
        let original = Arc::new(Rendered::new(bundle.image.clone(), None));
        let session_id = format!("{:016x}", set_key(&bundle.instance_ids()) ^ bundle.image.len() as u64);
        Ok(Self {
            session_id,
            bundle: Arc::new(bundle),
            config,
            erased: Vec::new(),
            history: vec![Vec::new()],
            cache: HashMap::from([(set_key(&[]), original)]),
            revision: 0,
        })
    }

    pub fn bundle(&self) -> &Arc<SceneBundle> {
        &self.bundle
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn erased(&self) -> &[String] {
        &self.erased
    }

    pub fn history(&self) -> &[Vec<String>] {
        &self.history
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn original(&self) -> Arc<Rendered> {
        self.cache[&set_key(&[])].clone()
    }

    pub fn current(&self) -> Arc<Rendered> {
        self.cache
            .get(&set_key(&self.erased))
            .cloned()
            .expect("current erased set is always cached")
    }

    pub fn cached(&self, erased: &[String]) -> Option<Arc<Rendered>> {
        self.cache.get(&set_key(erased)).cloned()
    }

    /// Instance ids in bundle order, restricted to `wanted`.
    fn canonical(&self, wanted: impl Fn(&str) -> bool) -> Vec<String> {
        self.bundle
            .instances
            .iter()
            .filter(|i| wanted(&i.id))
            .map(|i| i.id.clone())
            .collect()
    }

    fn check_ids(&self, ids: &[String]) -> Result<(), Error> {
        match ids.iter().find(|id| self.bundle.instance(id).is_none()) {
            Some(id) => Err(Error::UnknownInstance {
                id: id.clone(),
                valid: self.bundle.instance_ids(),
            }),
            None => Ok(()),
        }
    }

    /// Validate a mutation and work out the erased set it leads to.
    pub fn plan(&self, mutation: &Mutation) -> Result<Plan, Error> {
        match mutation {
            Mutation::Erase(ids) => {
                self.check_ids(ids)?;
                let target = self.canonical(|id| self.erased.iter().any(|e| e == id) || ids.iter().any(|i| i == id));
                Ok(Plan { target, pops: false })
            }
            Mutation::Restore(ids) => {
                self.check_ids(ids)?;
                let target = self.canonical(|id| self.erased.iter().any(|e| e == id) && !ids.iter().any(|i| i == id));
                Ok(Plan { target, pops: false })
            }
            Mutation::Undo => match self.history.len() {
                0 | 1 => Err(Error::InvalidRequest("nothing to undo".into())),
                n => Ok(Plan { target: self.history[n - 2].clone(), pops: true }),
            },
        }
    }

    /// The heavy part; touches no session state so it can run unlocked.
    pub fn compute(bundle: &SceneBundle, config: &PipelineConfig, erased: &[String]) -> eraser_core::Result<Rendered> {
        if erased.is_empty() {
            return Ok(Rendered::new(bundle.image.clone(), None));
        }
        let result = erase(bundle, &Selection::Ids(erased.to_vec()), config)?;
        Ok(Rendered::new(result.final_image, Some(result.timings)))
    }

    /// Make `plan.target` current, caching `rendered` when given.
    pub fn commit(&mut self, plan: Plan, rendered: Option<Arc<Rendered>>) {
        let key = set_key(&plan.target);
        if let Some(r) = rendered {
            self.cache.insert(key, r);
        }
        assert!(self.cache.contains_key(&key), "committed erased set must be rendered");
        if plan.pops {
            self.history.pop();
        } else if self.history.last() != Some(&plan.target) {
            self.history.push(plan.target.clone());
        }
        self.erased = plan.target;
        self.revision += 1;
    }

    /// Plan, compute if needed and commit in one step. Returns the rendered
    /// state and whether it came from the cache.
    pub fn apply(&mut self, mutation: &Mutation) -> eraser_core::Result<(Arc<Rendered>, bool)> {
        let plan = self.plan(mutation)?;
        let (rendered, cached) = match self.cached(&plan.target) {
            Some(r) => (r, true),
            None => (Arc::new(Self::compute(&self.bundle, &self.config, &plan.target)?), false),
        };
        self.commit(plan, Some(rendered.clone()));
        Ok((rendered, cached))
    }
}
