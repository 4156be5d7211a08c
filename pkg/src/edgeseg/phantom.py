"""Synthetic ellipsoid phantoms with analytically known masks.

A phantom is an axis-aligned ellipsoid of foreground intensity on a
background, plus optional Gaussian noise. Voxel ``p`` (integer coordinates,
i.e. voxel centres) is foreground iff ``sum(((p - c) / r) ** 2) <= 1``.
"""

from dataclasses import dataclass

import numpy as np

from edgeseg.errors import ContractError
from edgeseg.volume import Volume, VolumeKind

PHANTOM_SPACING = (0.625, 0.625, 1.5)


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int]
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    foreground_intensity: float = 1.0
    background_intensity: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        """Raise :class:`ContractError` unless the ellipsoid has positive radii and fits the grid."""
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ContractError(f"phantom shape must be three sizes >= 1, got {self.shape}")
        if not all(r > 0 for r in self.radii):
            raise ContractError(f"radii must be strictly positive, got {self.radii}")
        if self.noise_sigma < 0:
            raise ContractError("noise_sigma must be >= 0")
        for axis, (n, c, r) in enumerate(zip(self.shape, self.center, self.radii)):
            if c - r < 0 or c + r > n - 1:
                raise ContractError(f"ellipsoid exceeds the volume along axis {axis}: {c} +/- {r} not in [0, {n - 1}]")


def standard_phantom_spec(seed: int = 0, noise_sigma: float = 0.1) -> PhantomSpec:
    """The phantom used by the desk-scale experiments and the self-test.

    Large enough to hold a full 96x96x32 training crop around the ellipsoid.
    """
    return PhantomSpec(
        shape=(112, 112, 40),
        center=(56.0, 56.0, 20.0),
        radii=(24.0, 20.0, 10.0),
        foreground_intensity=1.0,
        background_intensity=0.0,
        noise_sigma=noise_sigma,
        seed=seed,
    )


def ellipsoid_mask(shape: tuple[int, int, int], center, radii) -> np.ndarray:
    """Evaluate the ellipsoid inequality at every voxel centre; returns uint8 0/1."""
    grids = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in shape), indexing="ij")
    total = sum(((g - c) / r) ** 2 for g, c, r in zip(grids, center, radii))
    return (total <= 1.0).astype(np.uint8)


def make_ellipsoid_phantom(spec: PhantomSpec) -> tuple[Volume, Volume]:
    """Build an image/mask pair from ``spec``.

    Noise comes from a Philox counter-based generator keyed by ``spec.seed``,
    so the same spec always yields a bit-identical image.

    :param spec: Phantom description.
    :type spec: PhantomSpec
    :returns: ``(image, mask)`` with spacing 0.625 x 0.625 x 1.5 mm.
    :rtype: tuple[Volume, Volume]
    :raises ContractError: If the ellipsoid does not fit inside the shape.
    """
    spec.validate()
    mask = ellipsoid_mask(spec.shape, spec.center, spec.radii)
    image = spec.background_intensity + (spec.foreground_intensity - spec.background_intensity) * mask.astype(
        np.float64
    )
    if spec.noise_sigma > 0:
        # One draw over the whole grid in C order; voxel noise depends on that order.
        rng = np.random.Generator(np.random.Philox(key=spec.seed))
        image = image + rng.normal(0.0, spec.noise_sigma, size=spec.shape)
    return (
        Volume(image.astype(np.float32), spacing=PHANTOM_SPACING, kind=VolumeKind.IMAGE),
        Volume(mask, spacing=PHANTOM_SPACING, kind=VolumeKind.LABEL),
    )
