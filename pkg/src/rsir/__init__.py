"""Content-based image retrieval over pre-extracted CNN feature tensors."""

from .aggregation import (
    AggregationSpec,
    GlobalDescriptor,
    Method,
    aggregate,
    concat_multiscale,
    encode_bow,
    encode_ifk,
    encode_vlad,
    load_descriptor,
    multipatch_pool,
    pool_crow,
    pool_hybrid,
    pool_max,
    pool_mean,
    pool_spoc,
    save_descriptor,
)
from .clustering import Codebook, GmmModel, gmm_fit, gmm_posteriors, kmeans_assign, kmeans_fit
from .errors import ConfigError, DataError
from .evaluation import EvalReport, average_precision, evaluate_run, nmrr
from .numeric import Metric, PcaModel, apply_pca, distance, distances_to, fit_pca, l2_normalize
from .retrieval import (
    DescriptorIndex,
    RankedList,
    build_index,
    load_index,
    query_rank,
    save_index,
    spec_fingerprint,
)
from .tensor_store import (
    DatasetManifest,
    FeatureTensor,
    load_manifest,
    load_model,
    read_tensor,
    save_model,
    write_tensor,
)

__version__ = "0.1.0"
