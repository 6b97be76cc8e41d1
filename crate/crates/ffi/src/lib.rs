//! C interface to `neighbor-xai`.
//!
//! Every object crosses the boundary as an opaque pointer created by an
//! `nx_*_new`/`load`/`train` function and released with the matching
//! `nx_*_free`. Every fallible call returns an [`NxStatus`]; on failure
//! [`nx_last_error`] holds a message for the calling thread until the next
//! failing call. Panics never unwind into C: they surface as
//! `NX_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use neighbor_xai::error::{Error, ExplainError};
use neighbor_xai::explain::{self, ExplainSettings, Explanation, Method, PgExplainerConfig};
use neighbor_xai::graph::{self, Graph, Split};
use neighbor_xai::metrics::{self, AllDeleted, MetricKind};
use neighbor_xai::model::{self, Arch, ModelConfig, TrainedModel};
use neighbor_xai::report;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NxStatus {
    Ok = 0,
    /// a required pointer argument was null
    NullArgument = 1,
    /// bad name, index, UTF-8 or configuration
    InvalidArgument = 2,
    /// unreadable or malformed file
    Io = 3,
    /// model and data or explanations do not fit together
    Mismatch = 4,
    /// divergence or non-finite loss
    Numerical = 5,
    /// output buffer too small; the required length was written
    BufferTooSmall = 6,
    Panic = 7,
}

/// Architecture selector for [`nx_model_train`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NxArch {
    Gcn = 0,
    Gatv2 = 1,
}

/// Loaded dataset.
pub struct NxGraph(Graph);

/// Trained classifier.
pub struct NxModel(TrainedModel);

/// Explanations of the test-split nodes produced by one method.
pub struct NxExplanations(Vec<Explanation>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(NxStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        use neighbor_xai::error::{GraphError, MetricError, ModelError};
        let status = if e.is_numerical() {
            NxStatus::Numerical
        } else {
            match &e {
                Error::Graph(
                    GraphError::Io { .. }
                    | GraphError::MissingFile { .. }
                    | GraphError::Parse { .. },
                )
                | Error::Model(ModelError::Checkpoint { .. })
                | Error::Explain(ExplainError::Artifact { .. })
                | Error::Io { .. } => NxStatus::Io,
                Error::Metric(MetricError::ExplanationMismatch { .. })
                | Error::Explain(ExplainError::EmbeddingMismatch { .. })
                | Error::Model(ModelError::Shape(_) | ModelError::Graph(_)) => NxStatus::Mismatch,
                _ => NxStatus::InvalidArgument,
            }
        };
        Failure(status, e.to_string())
    }
}

macro_rules! from_lib_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        }
    )*};
}
from_lib_error!(
    neighbor_xai::error::GraphError,
    neighbor_xai::error::ModelError,
    neighbor_xai::error::ExplainError,
    neighbor_xai::error::MetricError
);

fn invalid(message: impl Into<String>) -> Failure {
    Failure(NxStatus::InvalidArgument, message.into())
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NxStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {what}"));
            NxStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(NxStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(NxStatus::NullArgument, format!("{name} is null")))
}

unsafe fn string<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(NxStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory in the interchange format.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_graph_load(path: *const c_char, out: *mut *mut NxGraph) -> NxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = PathBuf::from(string(path, "path")?);
        graph::verify_checksums(&path)?;
        *out = boxed(NxGraph(graph::load_graph(&path)?));
        Ok(())
    })
}

/// # Safety
/// `graph` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn nx_graph_free(graph: *mut NxGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Number of nodes, or 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nx_graph_num_nodes(graph: *const NxGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.0.num_nodes())
}

/// Trains a classifier with the library defaults for `arch`. The graph's
/// self-loops are set to `self_loops` before training.
///
/// # Safety
/// `graph` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_model_train(
    graph: *const NxGraph,
    arch: NxArch,
    self_loops: bool,
    epochs: usize,
    seed: u64,
    out: *mut *mut NxModel,
) -> NxStatus {
    guard(|| {
        let g = deref(graph, "graph")?;
        let out = out_ptr(out, "out")?;
        let arch = match arch {
            NxArch::Gcn => Arch::Gcn,
            NxArch::Gatv2 => Arch::GatV2,
        };
        let config = ModelConfig {
            self_loops,
            epochs,
            seed,
            ..ModelConfig::for_arch(arch)
        };
        let m = model::train(&g.0.set_self_loops(self_loops), &config)?;
        *out = boxed(NxModel(m));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_model_load(path: *const c_char, out: *mut *mut NxModel) -> NxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(NxModel(model::load_checkpoint(string(path, "path")?)?));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nx_model_save(model: *const NxModel, path: *const c_char) -> NxStatus {
    guard(|| {
        let m = deref(model, "model")?;
        model::save_checkpoint(&m.0, string(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn nx_model_free(model: *mut NxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn model_graph(m: &NxModel, g: &NxGraph) -> Result<Graph, Failure> {
    let g = g.0.set_self_loops(m.0.config.self_loops);
    m.0.check_graph(&g)?;
    Ok(g)
}

/// Explains every test-split node with `method` (`saliency`, `smoothgrad`,
/// `deconvnet`, `guided`, `gnnexplainer` or `pgexplainer`). For
/// `pgexplainer` the edge-mask network is first trained on the training
/// split. `jobs` is the worker count, 0 for one per core.
///
/// # Safety
/// `model` and `graph` must be live handles, `method` a NUL-terminated
/// string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_explain(
    model: *const NxModel,
    graph: *const NxGraph,
    method: *const c_char,
    seed: u64,
    jobs: usize,
    out: *mut *mut NxExplanations,
) -> NxStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let g = model_graph(m, deref(graph, "graph")?)?;
        let method: Method = string(method, "method")?.parse()?;
        let out = out_ptr(out, "out")?;
        let mut settings = ExplainSettings::for_graph(&g, seed);
        if method == Method::PgExplainer {
            let cfg = PgExplainerConfig {
                seed,
                ..PgExplainerConfig::default()
            };
            settings.pg = Some(explain::pgexplainer_train(
                &m.0,
                &g,
                &g.nodes_in(Split::Train),
                &cfg,
            )?);
        }
        let exps =
            explain::explain_nodes(method, &m.0, &g, &g.nodes_in(Split::Test), &settings, jobs)?;
        *out = boxed(NxExplanations(exps));
        Ok(())
    })
}

/// Number of explained nodes, or 0 for a null handle.
///
/// # Safety
/// `explanations` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nx_explanations_len(explanations: *const NxExplanations) -> usize {
    explanations.as_ref().map_or(0, |e| e.0.len())
}

/// Copies record `index`: its target node into `target` and its neighbors
/// with their importance scores, ascending by id, into `ids`/`scores`.
/// `len` receives the neighbor count. If `capacity` is smaller than that,
/// nothing is copied and `NX_STATUS_BUFFER_TOO_SMALL` is returned, so a
/// first call with capacity 0 queries the size.
///
/// # Safety
/// `explanations` must be a live handle, `target` and `len` valid
/// pointers, and `ids`/`scores` valid for `capacity` elements (may be null
/// when `capacity` is 0).
#[no_mangle]
pub unsafe extern "C" fn nx_explanations_get(
    explanations: *const NxExplanations,
    index: usize,
    target: *mut usize,
    ids: *mut usize,
    scores: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> NxStatus {
    guard(|| {
        let exps = deref(explanations, "explanations")?;
        let e = exps.0.get(index).ok_or_else(|| {
            invalid(format!(
                "index {index} out of range for {} explanations",
                exps.0.len()
            ))
        })?;
        *out_ptr(target, "target")? = e.target;
        *out_ptr(len, "len")? = e.importance.len();
        if capacity < e.importance.len() {
            return Err(Failure(
                NxStatus::BufferTooSmall,
                format!(
                    "need room for {} neighbors, got {capacity}",
                    e.importance.len()
                ),
            ));
        }
        if e.importance.is_empty() {
            return Ok(());
        }
        if ids.is_null() || scores.is_null() {
            return Err(Failure(
                NxStatus::NullArgument,
                "ids or scores is null".into(),
            ));
        }
        for (k, (&id, &s)) in e.importance.iter().enumerate() {
            *ids.add(k) = id;
            *scores.add(k) = s;
        }
        Ok(())
    })
}

/// Writes the explanations as JSON lines.
///
/// # Safety
/// `explanations` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nx_explanations_save(
    explanations: *const NxExplanations,
    path: *const c_char,
) -> NxStatus {
    guard(|| {
        let exps = deref(explanations, "explanations")?;
        let path = PathBuf::from(string(path, "path")?);
        let io = |source| Error::Io {
            path: path.clone(),
            source,
        };
        let mut file = std::fs::File::create(&path).map_err(io)?;
        explain::write_jsonl(&mut file, &exps.0).map_err(io)?;
        Ok(())
    })
}

/// # Safety
/// `explanations` must come from this library and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn nx_explanations_free(explanations: *mut NxExplanations) {
    if !explanations.is_null() {
        drop(Box::from_raw(explanations));
    }
}

/// AUC of `metric` (`loyalty`, `inverse_loyalty`, `loyalty_probabilities`
/// or `inverse_loyalty_probabilities`) on the default 0..100 grid.
///
/// # Safety
/// Handles must be live, `metric` a NUL-terminated string and `auc` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_metric_auc(
    model: *const NxModel,
    graph: *const NxGraph,
    explanations: *const NxExplanations,
    metric: *const c_char,
    jobs: usize,
    auc: *mut f64,
) -> NxStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let g = model_graph(m, deref(graph, "graph")?)?;
        let exps = deref(explanations, "explanations")?;
        let name = string(metric, "metric")?;
        let (kind, direction) =
            MetricKind::parse(name).ok_or_else(|| invalid(format!("unknown metric {name:?}")))?;
        let auc = out_ptr(auc, "auc")?;
        let options = metrics::EvalOptions {
            jobs,
            ..metrics::EvalOptions::default()
        };
        let (l, p) = metrics::curves(&m.0, &g, &exps.0, direction, &options)?;
        let curve = if kind == MetricKind::Loyalty { l } else { p };
        *auc = metrics::auc(&curve)?;
        Ok(())
    })
}

/// Loyalty after deleting, per explained node, every neighbor with nonzero
/// importance (`all_neighbors` false) or the whole receptive field
/// (`all_neighbors` true).
///
/// # Safety
/// Handles must be live and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nx_all_deleted(
    model: *const NxModel,
    graph: *const NxGraph,
    explanations: *const NxExplanations,
    all_neighbors: bool,
    value: *mut f64,
) -> NxStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let g = model_graph(m, deref(graph, "graph")?)?;
        let exps = deref(explanations, "explanations")?;
        let value = out_ptr(value, "value")?;
        let targets: Vec<usize> = exps.0.iter().map(|e| e.target).collect();
        let mode = if all_neighbors {
            AllDeleted::AllNeighbors(&targets)
        } else {
            AllDeleted::NonzeroImportance(&exps.0)
        };
        *value = metrics::all_deleted_loyalty(&m.0, &g, mode)?;
        Ok(())
    })
}

/// Trains a GCN on the built-in zero-gradient gadget and reports, for the
/// leaf neighbor, the largest feature gradient and the change of the
/// predicted logit when the leaf is deleted.
///
/// # Safety
/// `gradient` and `delta_logit` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn nx_gadget(
    self_loops: bool,
    seed: u64,
    gradient: *mut f64,
    delta_logit: *mut f64,
) -> NxStatus {
    guard(|| {
        let gradient = out_ptr(gradient, "gradient")?;
        let delta_logit = out_ptr(delta_logit, "delta_logit")?;
        let r = report::gadget_report(self_loops, 100, seed)?;
        let leaf = r.leaf_row();
        *gradient = leaf.gradient;
        *delta_logit = leaf.delta_logit;
        Ok(())
    })
}
