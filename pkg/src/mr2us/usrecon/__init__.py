from .matching import (
    available_matchers,
    corner_ncc_matcher,
    get_matcher,
    harris_corners,
    match_features,
    register_matcher,
)
from .clustering import consensus_filter, dbscan
from .stitch import StitchState, stitch_next, stitch_sweep, transfer_positions
from .assemble import assemble_sparse_volume
from .inpaint import dip_inpaint, inpaint_volume, interp_inpaint

__all__ = [
    "available_matchers",
    "corner_ncc_matcher",
    "harris_corners",
    "get_matcher",
    "match_features",
    "register_matcher",
    "consensus_filter",
    "dbscan",
    "StitchState",
    "stitch_next",
    "stitch_sweep",
    "transfer_positions",
    "assemble_sparse_volume",
    "inpaint_volume",
    "interp_inpaint",
    "dip_inpaint",
]
