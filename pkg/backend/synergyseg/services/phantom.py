"""Synthetic liver-like phantoms with ground-truth masks."""

import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from synergyseg.errors import DegenerateGrid, TooFewCases
from synergyseg.models import (
    CaseEntry,
    DatasetManifest,
    LabelMask,
    PhantomSpec,
    Provenance,
    Shape3,
    Volume,
)
from synergyseg.services.morphology import largest_component
from synergyseg.services.volume_io import make_split, save_case, save_manifest

logger = logging.getLogger(__name__)

MIN_GRID_EXTENT = 8
# nodularity amplitude at severity 1, as a fraction of the mean radius
MAX_NODULARITY = 0.15
MANIFEST_NAME = "manifest.json"


def generate_phantom(spec: PhantomSpec) -> tuple[Volume, LabelMask]:
    """Ellipsoidal organ with a sinusoidally perturbed boundary plus Gaussian noise.

    The boundary radius (in ellipsoid-normalised coordinates) is
    ``1 + 0.15 * severity * cos(n_az * azimuth + a) * cos(n_pol * polar + b)``;
    the azimuthal factor has zero mean, so severity changes the surface far
    more than the enclosed volume. Every random draw happens in a fixed order,
    so phantoms that differ only in severity share their geometry.
    """
    if len(spec.grid_shape) != 3 or min(spec.grid_shape) < MIN_GRID_EXTENT:
        raise DegenerateGrid(
            f"grid {spec.grid_shape} too small: every axis needs >= {MIN_GRID_EXTENT} voxels"
        )

    rng = np.random.default_rng(spec.seed)
    shape = np.asarray(spec.grid_shape, dtype=np.float64)
    center = (shape - 1.0) / 2.0 + rng.uniform(-0.05, 0.05, size=3) * shape
    semi_axes = shape * rng.uniform(0.26, 0.34, size=3)
    n_azimuth = int(rng.integers(3, 7))
    n_polar = int(rng.integers(2, 6))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=2)

    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in spec.grid_shape), indexing="ij")
    u, v, w = ((g - c) / a for g, c, a in zip(grids, center, semi_axes))
    rho = np.sqrt(u**2 + v**2 + w**2)
    polar = np.arccos(np.clip(w / np.maximum(rho, 1e-12), -1.0, 1.0))
    azimuth = np.arctan2(v, u)

    amplitude = MAX_NODULARITY * spec.severity
    radius = 1.0 + amplitude * np.cos(n_azimuth * azimuth + phases[0]) * np.cos(
        n_polar * polar + phases[1]
    )
    foreground = ndimage.binary_fill_holes(rho <= radius)
    mask = largest_component(foreground)

    noise = rng.normal(0.0, spec.noise_sigma, size=spec.grid_shape) if spec.noise_sigma > 0 else 0.0
    intensities = (mask.astype(np.float64) + noise).astype(np.float32)

    volume = Volume(data=intensities, spacing=(1.0, 1.0, 1.0), modality_tag=spec.modality_tag)
    label = LabelMask(data=mask, spacing=(1.0, 1.0, 1.0))
    logger.debug(
        f"Phantom seed={spec.seed} grid={spec.grid_shape} severity={spec.severity} "
        f"foreground={label.foreground_voxels / mask.size:.3f}"
    )
    return volume, label


def generate_corpus(
    n: int,
    spec_template: PhantomSpec,
    seed: int,
    out_dir: Union[str, Path],
    grid_shapes: Optional[Sequence[Shape3]] = None,
    provenance: Optional[Provenance] = None,
) -> DatasetManifest:
    """Write ``n`` RAW3D phantom cases plus an 80:10:10 manifest to ``out_dir``.

    With several ``grid_shapes`` the cases cycle through them in order.
    """
    if n < 3:
        raise TooFewCases(f"a corpus needs at least 3 cases, got {n}")

    out_dir = Path(out_dir)
    case_seeds = np.random.SeedSequence(seed).generate_state(n)
    grids = list(grid_shapes) if grid_shapes else [spec_template.grid_shape]

    cases = []
    for i in range(n):
        case_id = f"case_{i:03d}"
        spec = spec_template.model_copy(
            update={"seed": int(case_seeds[i]), "grid_shape": tuple(grids[i % len(grids)])}
        )
        volume, mask = generate_phantom(spec)
        image_name = f"{case_id}_image.raw3d"
        mask_name = f"{case_id}_mask.raw3d"
        save_case(volume, out_dir / image_name, mask, out_dir / mask_name)
        cases.append(
            CaseEntry(
                id=case_id,
                volume=image_name,
                mask=mask_name,
                modality=spec_template.modality_tag or None,
            )
        )

    manifest = DatasetManifest(
        cases=cases,
        split=make_split([case.id for case in cases], seed=seed),
        seed=seed,
        provenance=provenance,
    )
    save_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info(f"Wrote {n} phantom cases to {out_dir}")
    return manifest
