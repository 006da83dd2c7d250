"""Connected components and boundary extraction on binary grids (6-connectivity)."""

import numpy as np
from scipy import ndimage

FACE_CONNECTIVITY = ndimage.generate_binary_structure(3, 1)


def count_components(mask: np.ndarray) -> int:
    _, n_components = ndimage.label(mask.astype(bool), structure=FACE_CONNECTIVITY)
    return int(n_components)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 6-connected foreground component.

    Equal-sized components resolve to the one labelled first in scan order.
    An empty mask stays empty.
    """
    labels, n_components = ndimage.label(mask.astype(bool), structure=FACE_CONNECTIVITY)
    if n_components <= 1:
        return (labels > 0).astype(np.uint8)
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.uint8)


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background 6-neighbour; the volume edge counts as background."""
    foreground = mask.astype(bool)
    interior = ndimage.binary_erosion(foreground, structure=FACE_CONNECTIVITY, border_value=0)
    return foreground & ~interior
