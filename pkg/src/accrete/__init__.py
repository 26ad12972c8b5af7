"""Accretive-growth simulator: level-set growth coupled to quasistatic elasticity."""

from .geometry import (
    Annulus,
    Ball,
    Box,
    CellMask,
    Difference,
    DomainClassParams,
    Grid,
    Shape,
    Union,
    dilate_mask,
    hausdorff_distance,
    rasterize,
    sublevel_mask,
)
from .eikonal import (
    AttachmentField,
    GrowthLaw,
    SpeedField,
    check_gradient_bounds,
    evaluate_speed,
    solve_eikonal,
)

__version__ = "0.1.0"
