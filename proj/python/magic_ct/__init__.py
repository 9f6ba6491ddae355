"""Low-dose CT reconstruction with unrolled spatial + graph networks."""

from ._magic import (
    ConfigError,
    DivergenceError,
    InputError,
    InternalError,
    IoError,
    MagicError,
    Network,
    ParseError,
    Projector,
    ScanGeometry,
    assemble_patches,
    dose_photons,
    extract_patches,
    fbp,
    knn_graph,
    load_config,
    load_raw,
    normalized_laplacian,
    parse_config,
    phantom,
    psnr,
    save_raw,
    set_num_threads,
    simulate_lowdose,
    ssim,
)

__all__ = [name for name in dir() if not name.startswith("_")]
