"""Riemannian sparse coding and CNN classification for PolSAR covariance images."""

from .coding import (
    Dictionary,
    EncodingProblem,
    SrsrConfig,
    full_gradient,
    ista_step,
    objective,
    reconstruction,
    residual_gradient,
    soft_threshold,
    solve_ista,
    spg_init,
)
from .data import (
    GridLayout,
    SceneSpec,
    VoronoiLayout,
    default_prototypes,
    generate_wishart_scene,
    load_covariance,
    load_labels,
    pauli_rgb,
    save_covariance,
    save_labels,
    save_ppm,
)
from .dictlearn import (
    DictBatch,
    DictLearnConfig,
    dict_euclidean_grad,
    dict_objective,
    dict_riemannian_grad,
    dict_update,
    line_search,
    retraction,
    vector_transport,
)
from .hpd import (
    airm_distance,
    airm_inner,
    expm,
    herm_eig,
    invsqrtm,
    logm,
    spectral_fn,
    sqrtm,
    validate_hpd,
)
from .metrics import MetricsReport, confusion, report
from .network import (
    SrsrNet,
    forward,
    init_network,
    project_to_pixels,
    raw_pixel_features,
)
from .superpixels import (
    SegmenterConfig,
    Superpixel,
    ingest_labels,
    mean_covariance,
    segment,
)

__version__ = "0.1.0"
