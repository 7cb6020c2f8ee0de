"""Synthetic volume pairs with analytically known correspondences.

Desk-scale stand-in for clinical follow-up data: each pair renders one
continuous "anatomy" field twice, once directly (source) and once moved by
a known smooth world transform (target), so the true correspondence of any
source point p is simply ``transform.forward(p)``. Anatomy is a sum of an
intensity ramp, low-frequency texture, and compact ellipsoidal blobs;
queries sit on blob centers and carry the blob radius as finding size.

The transform composes a per-axis scaling about the volume center, a
translation, and a low-frequency sinusoidal warp. Targets are rendered by
numerically inverting the forward map per voxel (fixed-point iteration,
converges to sub-micrometre residual for the gentle warps used here), so
rendered intensities and the analytic truth stay consistent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .harness import AnnotationPair, write_manifest
from .volume import Volume, WorldPoint, write_volume


@dataclass(frozen=True)
class PhantomSpec:
    """Knobs for phantom content, size, and transform magnitudes."""

    dims: tuple[int, int, int] = (96, 96, 64)
    spacing: tuple[float, float, float] = (1.2, 1.2, 1.5)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    n_blobs: int = 12
    blob_radius_mm: tuple[float, float] = (5.0, 16.0)
    blob_amplitude: tuple[float, float] = (250.0, 900.0)
    base_intensity: float = 120.0
    ramp_per_mm: float = 0.8
    body_amplitude: float = 320.0
    texture_amplitude: tuple[float, ...] = (70.0, 50.0, 35.0, 22.0)
    texture_wavelength_mm: tuple[float, ...] = (64.0, 30.0, 14.0, 7.0)
    waves_per_octave: int = 5
    noise_sigma: float = 3.0
    translation_max_mm: float = 40.0
    scale_jitter: float = 0.03
    warp_amplitude_mm: float = 4.0
    warp_wavelength_mm: float = 180.0
    margin_mm: float = 20.0
    modality: str = "CT"

    @property
    def extent_mm(self) -> tuple[float, float, float]:
        return tuple((n - 1) * s for n, s in zip(self.dims, self.spacing))


@dataclass(frozen=True)
class SmoothTransform:
    """Invertible world map: scaling about a center + translation + warp."""

    translation: tuple[float, float, float]
    scale: tuple[float, float, float]
    center: tuple[float, float, float]
    warp_amp: tuple[float, float, float]
    warp_freq: tuple[tuple[float, float, float], ...]  # rad/mm, one row per axis
    warp_phase: tuple[float, float, float]

    @classmethod
    def identity(cls) -> "SmoothTransform":
        return cls(
            translation=(0.0, 0.0, 0.0),
            scale=(1.0, 1.0, 1.0),
            center=(0.0, 0.0, 0.0),
            warp_amp=(0.0, 0.0, 0.0),
            warp_freq=((0.0, 0.0, 0.0),) * 3,
            warp_phase=(0.0, 0.0, 0.0),
        )

    @classmethod
    def pure_translation(cls, t: tuple[float, float, float]) -> "SmoothTransform":
        return replace(cls.identity(), translation=tuple(float(v) for v in t))

    def forward(self, pts: np.ndarray) -> np.ndarray:
        """Map source-frame points (N, 3) to the target frame."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        c = np.asarray(self.center)
        out = c + (pts - c) * np.asarray(self.scale) + np.asarray(self.translation)
        amp = np.asarray(self.warp_amp)
        if np.any(amp != 0.0):
            phase = pts @ np.asarray(self.warp_freq).T + np.asarray(self.warp_phase)
            out = out + amp * np.sin(phase)
        return out

    def forward_point(self, p: WorldPoint) -> WorldPoint:
        return WorldPoint(*self.forward(np.asarray(p))[0])

    def inverse(self, pts: np.ndarray, tol: float = 1e-7, max_iter: int = 40) -> np.ndarray:
        """Fixed-point inverse; valid while the warp stays gentle.

        Warm-started at the exact inverse of the affine part, so only the
        (few-mm) warp residual remains to iterate away.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        c = np.asarray(self.center)
        p = c + (pts - np.asarray(self.translation) - c) / np.asarray(self.scale)
        for _ in range(max_iter):
            residual = self.forward(p) - pts
            p -= residual
            if float(np.max(np.abs(residual))) < tol:
                break
        return p


@dataclass(frozen=True)
class AnatomyField:
    """Continuous scalar field sampled by both volumes of a pair.

    Texture is a bank of random plane waves spanning several octaves, so
    the field has smooth, spatially unique detail at every scale the
    hierarchical search visits: small offsets stay highly correlated while
    distant regions decorrelate.
    """

    base: float
    ramp: tuple[float, float, float]
    wave_freq: np.ndarray  # (W, 3) rad/mm
    wave_phase: np.ndarray  # (W,)
    wave_amp: np.ndarray  # (W,)
    blob_centers: np.ndarray  # (B, 3) mm
    blob_radii: np.ndarray  # (B, 3) mm, per-axis (ellipsoids)
    blob_amps: np.ndarray  # (B,)

    def sample(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        v = self.base + pts @ np.asarray(self.ramp)
        if len(self.wave_amp):
            # float32 is plenty for texture content and halves the sin cost
            waves = np.sin(
                pts.astype(np.float32) @ self.wave_freq.T.astype(np.float32)
                + self.wave_phase.astype(np.float32)
            )
            v = v + (waves @ self.wave_amp.astype(np.float32)).astype(np.float64)
        for c, r, a in zip(self.blob_centers, self.blob_radii, self.blob_amps):
            # compact support: evaluate only inside the blob's bounding box
            near = np.flatnonzero(
                (np.abs(pts[:, 0] - c[0]) < r[0])
                & (np.abs(pts[:, 1] - c[1]) < r[1])
                & (np.abs(pts[:, 2] - c[2]) < r[2])
            )
            if near.size == 0:
                continue
            r2 = (((pts[near] - c) / r) ** 2).sum(axis=1)
            bump = 1.0 - r2
            np.clip(bump, 0.0, None, out=bump)
            v[near] += a * bump * bump  # C1-smooth profile
        return v


def _margins(spec: PhantomSpec) -> np.ndarray:
    # fixed margin, but never more than 35% of an axis (tiny test volumes)
    return np.minimum(spec.margin_mm, 0.35 * np.asarray(spec.extent_mm))


def _voxel_world_points(spec: PhantomSpec) -> np.ndarray:
    axes = [
        o + np.arange(n, dtype=np.float64) * s
        for o, n, s in zip(spec.origin, spec.dims, spec.spacing)
    ]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)


def _random_anatomy(
    rng: np.random.Generator, spec: PhantomSpec
) -> tuple[AnatomyField, WorldPoint, float]:
    """Draw one anatomy; returns (field, query point, finding radius)."""
    ext = np.asarray(spec.extent_mm)
    margin = _margins(spec)
    lo = np.asarray(spec.origin) + margin
    hi = np.asarray(spec.origin) + ext - margin

    # The first (query-hosting) blob is drawn from the central region so
    # sizeable translations keep its counterpart inside the target.
    central_lo = lo + 0.18 * (hi - lo)
    central_hi = hi - 0.18 * (hi - lo)
    centers = [rng.uniform(central_lo, central_hi)]
    attempts = 0
    while len(centers) < spec.n_blobs and attempts < 400:
        c = rng.uniform(lo, hi)
        if all(np.linalg.norm(c - p) >= 16.0 for p in centers):
            centers.append(c)
        attempts += 1
    centers = np.asarray(centers)

    r_lo, r_hi = spec.blob_radius_mm
    radii = rng.uniform(r_lo, r_hi, size=(len(centers), 1)) * rng.uniform(
        0.75, 1.25, size=(len(centers), 3)
    )
    a_lo, a_hi = spec.blob_amplitude
    amps = rng.uniform(a_lo, a_hi, size=len(centers)) * rng.choice(
        [-1.0, 1.0], size=len(centers), p=[0.3, 0.7]
    )
    # The first blob hosts the query: keep it bright and mid-sized so the
    # finding is unambiguous.
    amps[0] = rng.uniform(max(500.0, a_lo), a_hi)
    radii[0] = rng.uniform(6.0, 13.0) * rng.uniform(0.85, 1.15, size=3)

    # Body envelope: one big soft ellipsoid gives the strong in/out edge
    # contrast the coarse levels key on.
    body_center = np.asarray(spec.origin) + ext / 2.0
    body = np.concatenate(
        [
            [body_center + rng.uniform(-4.0, 4.0, size=3)],
            centers,
        ]
    )
    radii = np.concatenate([[ext * 0.42], radii])
    amps = np.concatenate([[spec.body_amplitude], amps])

    # Plane-wave texture bank: a few waves per octave, random directions.
    freqs, phases, wamps = [], [], []
    for wavelength, amp in zip(spec.texture_wavelength_mm, spec.texture_amplitude):
        for _ in range(spec.waves_per_octave):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            k = 2.0 * math.pi / (wavelength * rng.uniform(0.8, 1.25))
            freqs.append(k * direction)
            phases.append(rng.uniform(0, 2 * math.pi))
            wamps.append(amp * rng.uniform(0.7, 1.3))

    ramp_dir = rng.normal(size=3)
    ramp_dir /= np.linalg.norm(ramp_dir)
    field = AnatomyField(
        base=spec.base_intensity,
        ramp=tuple(spec.ramp_per_mm * ramp_dir),
        wave_freq=np.asarray(freqs),
        wave_phase=np.asarray(phases),
        wave_amp=np.asarray(wamps),
        blob_centers=body,
        blob_radii=radii,
        blob_amps=amps,
    )
    # blob index 0 is the body envelope; index 1 hosts the query
    query = WorldPoint(*centers[0])
    return field, query, float(np.mean(radii[1]))


def _random_transform(
    rng: np.random.Generator, spec: PhantomSpec, shrink: float = 1.0
) -> SmoothTransform:
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0.25, 1.0) * spec.translation_max_mm * shrink
    scale = rng.uniform(1 - spec.scale_jitter, 1 + spec.scale_jitter, size=3)
    center = np.asarray(spec.origin) + np.asarray(spec.extent_mm) / 2.0
    k = 2.0 * math.pi / spec.warp_wavelength_mm
    freq = rng.normal(size=(3, 3))
    freq = k * freq / np.linalg.norm(freq, axis=1, keepdims=True)
    amp = rng.uniform(0.3, 1.0, size=3) * spec.warp_amplitude_mm * shrink
    return SmoothTransform(
        translation=tuple(t),
        scale=tuple(scale),
        center=tuple(center),
        warp_amp=tuple(amp),
        warp_freq=tuple(tuple(row) for row in freq),
        warp_phase=tuple(rng.uniform(0, 2 * math.pi, size=3)),
    )


def _mr_remap(values: np.ndarray) -> np.ndarray:
    """Strictly increasing intensity remap emulating a contrast change."""
    lo = float(values.min())
    return 40.0 + 12.0 * np.sqrt(values - lo + 1.0)


def build_phantom_pair(
    rng: np.random.Generator,
    spec: PhantomSpec,
    transform: SmoothTransform | None = None,
) -> tuple[Volume, Volume, SmoothTransform, WorldPoint, float]:
    """Render one (source, target) pair; returns query point and radius.

    The query is a blob center chosen so that its true correspondence
    stays ``margin_mm`` inside the target; the transform is re-drawn (with
    shrinking magnitude) until that holds.
    """
    anatomy, query, radius = _random_anatomy(rng, spec)

    margin = _margins(spec)
    lo = np.asarray(spec.origin) + margin
    hi = np.asarray(spec.origin) + np.asarray(spec.extent_mm) - margin
    if transform is None:
        for attempt in range(60):
            shrink = 1.0 if attempt < 20 else (0.7 if attempt < 40 else 0.45)
            transform = _random_transform(rng, spec, shrink)
            truth = transform.forward(np.asarray(query))[0]
            if np.all(truth >= lo) and np.all(truth <= hi):
                break
        else:
            transform = SmoothTransform.identity()

    pts = _voxel_world_points(spec)
    nz, ny, nx = spec.dims[2], spec.dims[1], spec.dims[0]
    src_values = anatomy.sample(pts)
    tgt_values = anatomy.sample(transform.inverse(pts))
    if spec.modality == "MR":
        tgt_values = _mr_remap(tgt_values)

    if spec.noise_sigma > 0:
        src_values = src_values + rng.normal(0, spec.noise_sigma, src_values.shape)
        tgt_values = tgt_values + rng.normal(0, spec.noise_sigma, tgt_values.shape)

    def as_volume(values: np.ndarray) -> Volume:
        return Volume(
            dims=spec.dims,
            spacing=spec.spacing,
            origin=spec.origin,
            data=values.reshape(nz, ny, nx).astype(np.float32),
            modality=spec.modality if spec.modality in ("CT", "MR") else "OTHER",
        )

    return as_volume(src_values), as_volume(tgt_values), transform, query, radius


def generate_phantom_suite(
    out_dir,
    seed: int,
    n_pairs: int,
    spec: PhantomSpec = PhantomSpec(),
    both_directions: bool = False,
    mr_fraction: float = 0.0,
) -> list[AnnotationPair]:
    """Write a seeded suite of phantom pairs plus its annotation manifest.

    Volumes land in ``out_dir`` as int16 ``.mha`` files and the manifest as
    ``manifest.jsonl`` with paths relative to it. ``mr_fraction`` of the
    pairs are rendered with an MR-style monotone contrast change on the
    target, giving a mixed-modality suite for metric ablations. Output is
    byte-identical for identical arguments.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs: list[AnnotationPair] = []
    for idx in range(n_pairs):
        rng = np.random.default_rng([seed, idx])
        pair_spec = spec
        if mr_fraction > 0 and rng.random() < mr_fraction:
            pair_spec = replace(spec, modality="MR")
        source, target, transform, query, radius = build_phantom_pair(rng, pair_spec)

        src_name = f"pair{idx:03d}_src.mha"
        tgt_name = f"pair{idx:03d}_tgt.mha"
        write_volume(source, out_dir / src_name, dtype="int16")
        write_volume(target, out_dir / tgt_name, dtype="int16")

        truth = transform.forward_point(query)
        radius = float(min(max(radius, 2.0), 20.0))
        pairs.append(
            AnnotationPair(
                pair_id=f"p{idx:03d}",
                cohort=f"{pair_spec.modality.lower()}-fwd",
                source_path=src_name,
                target_path=tgt_name,
                query=query,
                truth=truth,
                radius_mm=radius,
            )
        )
        if both_directions:
            pairs.append(
                AnnotationPair(
                    pair_id=f"p{idx:03d}r",
                    cohort=f"{pair_spec.modality.lower()}-rev",
                    source_path=tgt_name,
                    target_path=src_name,
                    query=truth,
                    truth=query,
                    radius_mm=radius,
                )
            )

    # manifest keeps portable relative names; returned pairs resolve them
    write_manifest(pairs, out_dir / "manifest.jsonl")
    return [
        replace(
            p,
            source_path=str(out_dir / p.source_path),
            target_path=str(out_dir / p.target_path),
        )
        for p in pairs
    ]
