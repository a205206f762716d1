"""Global image descriptors from binary local features."""

from .clustering import Vocabulary, assign, assign_many, kmajority, kmeans, kmedoids, train_vocabulary
from .config import PipelineConfig
from .descriptors import PackedDescriptorSet, hamming, hamming_matrix, pack_bits, unpack_bits
from .encoders import (
    GlobalVector,
    encode_bow,
    encode_fv_bmm,
    encode_fv_bmm_stats,
    encode_fv_gmm,
    encode_fv_gmm_stats,
    encode_vlad,
    fv_dim,
)
from .errors import NumericDegeneracyError, ParseError
from .mixtures import BernoulliMixture, GaussianMixture, bmm_fit_em, gmm_fit_em
from .postproc import PcaModel, l2_normalize, pca_apply, pca_train, power_law, standard_pipeline
from .retrieval import (
    GroundTruth,
    RetrievalRun,
    average_precision,
    direct_match_similarity,
    evaluate_run,
    fused_distance,
    mean_average_precision,
    rank,
)

__version__ = "0.1.0"
