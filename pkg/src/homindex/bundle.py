"""Desk-scale KO invariants of sampled bundles over parameter loops.

A subbundle of the trivial bundle over a sampled loop is stored as one
orthonormal frame per sample (`SampledBundle`).  Over a loop the
invariants this module tracks are the rank and the first
Stiefel-Whitney bit w1, detected as the determinant sign of the
monodromy of a frame transported once around the loop; formal
differences of two bundles are recorded as `KOClassDesk` values
(virtual rank, parity of the two w1 bits).  Higher characteristic
classes and base spaces other than loops are out of scope.

For a parametrized linear field with exponential splittings on both
half-lines, the stable spaces im P+(lam, n) over the loop assemble into
a bundle, as do the unstable spaces ker P-(lam, n); the index class of
the associated difference operator is the formal difference
[im P+] - [im P-], where im P- is the rank-nullity complement of the
unstable bundle inside the trivial bundle.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dichotomy import HORIZON, build_projector_family
from .errors import (
    HomindexError,
    InputError,
    NumericError,
    SamplingError,
    WindowTooShortError,
)
from .field import DiscreteVectorField, ParameterLoop, SampledBundle

__all__ = [
    "PROJECTOR_TOL",
    "TRANSPORT_TOL",
    "KOClassDesk",
    "bundle_from_projectors",
    "first_sw_class",
    "stable_unstable_bundles",
    "index_bundle_pair",
    "index_bundle_class",
    "bundle_csv_rows",
]

#: idempotency tolerance for projector inputs
PROJECTOR_TOL = 1e-8
#: a transport overlap with a singular value at or below this is singular
TRANSPORT_TOL = 1e-8


@dataclass(frozen=True)
class KOClassDesk:
    """Formal difference of two sampled bundles, reduced to desk scale.

    Over a loop, a virtual bundle [E] - [F] is pinned down by the rank
    difference and by the orientability parity w1(E) + w1(F) mod 2; the
    reduced real K-group of the circle is exactly one bit.  `provenance`
    names the two constituents so reports stay auditable.
    """

    virtual_rank: int
    delta_w1: int
    provenance: tuple[str, str]

    def __post_init__(self):
        if self.delta_w1 not in (0, 1):
            raise InputError(f"delta_w1 must be the bit 0 or 1, got {self.delta_w1}")
        if not isinstance(self.virtual_rank, (int, np.integer)):
            raise InputError(f"virtual_rank must be an integer, got {self.virtual_rank!r}")
        object.__setattr__(self, "virtual_rank", int(self.virtual_rank))
        object.__setattr__(self, "delta_w1", int(self.delta_w1))

    @classmethod
    def of_pair(cls, top: SampledBundle, bottom: SampledBundle) -> "KOClassDesk":
        """Class of [top] - [bottom]; a pair (E, E) gives the zero element."""
        return cls(
            virtual_rank=top.rank - bottom.rank,
            delta_w1=(first_sw_class(top) + first_sw_class(bottom)) % 2,
            provenance=(top.name, bottom.name),
        )


def bundle_from_projectors(
    loop: ParameterLoop,
    projectors,
    part: str,
    name: str | None = None,
) -> SampledBundle:
    """Image or kernel subbundle of a sampled family of idempotents.

    Each matrix must be idempotent to 1e-8 but may be oblique; one SVD
    per sample reads off both parts, and the rank count at cutoff 1/2 is
    unambiguous because the nonzero singular values of an idempotent are
    at least 1.  A rank jump between consecutive samples means the
    family cannot restrict a continuous projector-valued map, so there
    is no bundle at this sampling.
    """
    if part not in ("image", "kernel"):
        raise InputError(f"part must be 'image' or 'kernel', got {part!r}")
    mats = [np.asarray(p, dtype=float) for p in projectors]
    if len(mats) != len(loop):
        raise InputError(
            f"expected one projector per loop sample ({len(loop)}), got {len(mats)}"
        )
    d = mats[0].shape[0] if mats[0].ndim == 2 else 0
    ranks = []
    images = []
    kernels = []
    for i, p in enumerate(mats):
        if p.ndim != 2 or p.shape != (d, d):
            raise InputError(f"projector {i} is not square of matching size: shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise InputError(f"projector {i} has non-finite entries")
        if abs(p @ p - p).max() > PROJECTOR_TOL:
            raise InputError(f"matrix {i} is not idempotent to {PROJECTOR_TOL:.0e}")
        u, sv, vt = np.linalg.svd(p)
        r = int((sv > 0.5).sum())
        ranks.append(r)
        images.append(u[:, :r])
        kernels.append(vt[r:].T)
    for i in range(len(mats) - 1):
        if ranks[i] != ranks[i + 1]:
            raise SamplingError(
                f"projector rank jumps from {ranks[i]} to {ranks[i + 1]} between "
                f"loop samples {i} and {i + 1}: not a bundle at this sampling"
            )
    frames = images if part == "image" else kernels
    rank = ranks[0] if part == "image" else d - ranks[0]
    label = name if name is not None else f"{part}-part"
    return SampledBundle(loop=loop, rank=rank, frames=np.stack(frames), name=label)


def first_sw_class(bundle: SampledBundle) -> int:
    """First Stiefel-Whitney bit of a sampled bundle.

    Transport the frame at sample 0 once around the loop: project onto
    the next fibre and re-orthonormalise by QR with positive diagonal,
    which keeps the orientation of the projected frame.  The transport
    returns to the starting fibre and the bundle is orientable exactly
    when the monodromy determinant is positive, so
    w1 = (1 - sign det)/2.  The determinant sign does not depend on the
    starting sample or on how each fibre's frame is gauged, because
    those choices conjugate the monodromy by orthogonal maps.
    """
    if bundle.rank == 0:
        return 0  # the zero bundle is trivially orientable
    n = len(bundle.loop)
    u = np.array(bundle.fibre(0), dtype=float)
    for i in range(1, n + 1):
        j = i % n
        f = bundle.fibre(j)
        overlap = f.T @ u
        if np.linalg.svd(overlap, compute_uv=False).min() <= TRANSPORT_TOL:
            raise SamplingError(
                f"frame transport from fibre {i - 1} to fibre {j} is singular "
                "(a principal angle reaches pi/2); the loop sampling is too "
                "coarse to carry monodromy"
            )
        q, r = np.linalg.qr(f @ overlap)
        u = q * np.sign(np.diag(r))
    det = float(np.linalg.det(bundle.fibre(0).T @ u))
    if abs(abs(det) - 1.0) > 1e-6:
        raise NumericError(
            f"monodromy determinant drifted off the unit circle: |det| = {abs(det):.3e}"
        )
    return int(round((1.0 - np.sign(det)) / 2.0))


def _with_sample_context(exc: HomindexError, i: int) -> HomindexError:
    """Same error, message prefixed with the loop sample that failed."""
    msg = f"parameter sample {i}: {exc}"
    if isinstance(exc, WindowTooShortError):
        return WindowTooShortError(msg, required=exc.required)
    return type(exc)(msg)


def _loop_anchor_projectors(
    field: DiscreteVectorField,
    anchor_plus: int,
    anchor_minus: int,
    horizon: int,
    threads: int,
):
    """Certified half-line projectors at the anchors, one pair per sample."""
    if field.loop is None:
        raise InputError("stable/unstable bundles need a field with a parameter loop")
    if threads < 1:
        raise InputError(f"threads must be at least 1, got {threads}")

    def one(i: int):
        try:
            fam_plus = build_projector_family(
                field, i, "plus", anchor_plus, length=2, horizon=horizon
            )
            fam_minus = build_projector_family(
                field, i, "minus", anchor_minus, length=2, horizon=horizon
            )
        except HomindexError as exc:
            raise _with_sample_context(exc, i) from exc
        return fam_plus.projector(anchor_plus), fam_minus.projector(anchor_minus)

    indices = range(len(field.loop))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(one, indices))
    else:
        pairs = [one(i) for i in indices]
    return [p for p, _ in pairs], [m for _, m in pairs]


def stable_unstable_bundles(
    field: DiscreteVectorField,
    anchor_plus: int,
    anchor_minus: int,
    horizon: int = HORIZON,
    threads: int = 1,
) -> tuple[SampledBundle, SampledBundle]:
    """Stable and unstable bundles of a parametrized field over its loop.

    For each loop sample the half-line splittings are certified and the
    fibres are the forward-decaying set im P+(lam, anchor_plus) and the
    backward-decaying set ker P-(lam, anchor_minus).  Any per-sample
    certification failure propagates with the failing sample named.
    Fibre computations may run on several threads; the assembly order
    is fixed, so results do not depend on `threads`.
    """
    plus, minus = _loop_anchor_projectors(
        field, anchor_plus, anchor_minus, horizon, threads
    )
    stable = bundle_from_projectors(
        field.loop, plus, part="image", name=f"im P+ at n={anchor_plus}"
    )
    unstable = bundle_from_projectors(
        field.loop, minus, part="kernel", name=f"ker P- at n={anchor_minus}"
    )
    return stable, unstable


def index_bundle_pair(
    field: DiscreteVectorField,
    anchor_plus: int,
    anchor_minus: int,
    horizon: int = HORIZON,
    threads: int = 1,
) -> tuple[SampledBundle, SampledBundle]:
    """The (im P+, im P-) pair whose formal difference is the index class."""
    plus, minus = _loop_anchor_projectors(
        field, anchor_plus, anchor_minus, horizon, threads
    )
    top = bundle_from_projectors(
        field.loop, plus, part="image", name=f"im P+ at n={anchor_plus}"
    )
    bottom = bundle_from_projectors(
        field.loop, minus, part="image", name=f"im P- at n={anchor_minus}"
    )
    return top, bottom


def index_bundle_class(
    field: DiscreteVectorField,
    anchor_plus: int,
    anchor_minus: int,
    horizon: int = HORIZON,
    threads: int = 1,
) -> KOClassDesk:
    """KO class [im P+] - [im P-] of the field's difference operator.

    The minus-side constituent is the image bundle at anchor_minus; the
    unstable bundle ker P- is its rank-nullity complement inside the
    trivial bundle and carries the same w1 bit, but the class is
    computed from the image bundle directly.
    """
    top, bottom = index_bundle_pair(field, anchor_plus, anchor_minus, horizon, threads)
    return KOClassDesk.of_pair(top, bottom)


def bundle_csv_rows(bundle: SampledBundle):
    """Header and rows serialising a bundle for external plotting.

    Columns: sample index, the loop's parameter coordinates, then the
    frame entries in row-major order (frame_<row>_<column>).
    """
    coords = bundle.loop.samples.shape[1]
    header = ["sample"] + [f"param_{c}" for c in range(coords)]
    for a in range(bundle.dim):
        for b in range(bundle.rank):
            header.append(f"frame_{a}_{b}")
    rows = []
    for i in range(len(bundle.loop)):
        row = [i]
        row.extend(float(x) for x in bundle.loop.samples[i])
        row.extend(float(x) for x in bundle.fibre(i).ravel())
        rows.append(row)
    return header, rows
