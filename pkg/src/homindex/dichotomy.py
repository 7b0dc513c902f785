"""Exponential splittings, dichotomy certification and dichotomy spectra.

Rates of long matrix products are accumulated with sequential QR
factorizations, never by forming the product itself, so horizons of a
few hundred steps are safe even when singular values spread over
hundreds of decades.  The per-column averages of log |R_jj| over the
second half of the run estimate the exponential rates; the associated
orthonormal columns, grouped by rate, span the splitting subspaces.

Scaling the field by 1/gamma shifts every rate by -log(gamma) and
leaves the singular directions unchanged, so one pair of runs serves
the whole gamma grid of a dichotomy spectrum scan.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matrixcore
from .errors import (
    CertificationError,
    DomainError,
    IndeterminateError,
    InputError,
    NoDichotomyError,
    NumericError,
    WindowTooShortError,
)
from .field import DiscreteVectorField

__all__ = [
    "HORIZON",
    "Splitting",
    "ProjectorFamily",
    "EDWitness",
    "SpectrumResult",
    "estimate_splitting",
    "build_projector_family",
    "verify_ed",
    "dichotomy_spectrum",
    "shift_operator_projector",
]

#: default one-sided horizon for rate estimation
HORIZON = 100

#: regularity floor for kernel transition matrices
SIGMA_REG = 1e-6

#: invariance tolerance for certified projector families
TAU_INV = 1e-7

#: idempotency tolerance for certified projector families
TAU_PROJ = 1e-8

#: consecutive-rate gaps below log(GAP_RATIO)/horizon are unresolved
GAP_RATIO = 1e3

#: a rate this close to the cut line means no dichotomy at that scaling
ZERO_MARGIN = 2e-3

#: smallest singular value for stable/unstable frames counted transversal
TRANSVERSALITY_TOL = 1e-6

#: relative precision of spectrum interval endpoints
REFINE_REL = 1e-3


def _check_window(field: DiscreteVectorField, lo: int, hi: int) -> None:
    if field.window[0] > lo or field.window[1] < hi:
        raise WindowTooShortError(
            f"field window {field.window} does not cover the needed times [{lo}, {hi}]",
            required=hi - lo + 1,
        )


def _qr_step(b: np.ndarray):
    q, r = np.linalg.qr(b)
    s = np.sign(np.diag(r))
    s = np.where(s == 0.0, 1.0, s)
    return q * s, np.log(np.maximum(np.abs(np.diag(r)), 1e-300))


_GENERIC_SEEDS: dict[int, np.ndarray] = {}


def _generic_seed(d: int) -> np.ndarray:
    """Fixed generic orthogonal start for QR accumulations.

    Seeding with the identity can lock a column onto a subdominant axis
    when a stretch of exactly axis-aligned factors is followed by a
    mixing transient, leaving the final columns on no mode at all; a
    generic (but deterministic) start always sorts the columns by rate.
    """
    if d not in _GENERIC_SEEDS:
        rng = np.random.default_rng(776_000 + d)
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        _GENERIC_SEEDS[d] = q * np.sign(np.diag(r))
    return _GENERIC_SEEDS[d]


def _qr_frame(b: np.ndarray) -> np.ndarray:
    if b.shape[1] == 0:
        return b
    q, r = np.linalg.qr(b)
    d = np.abs(np.diag(r))
    if d.min() < 1e-250:
        raise NumericError("a marched frame lost rank; the splitting is not regular here")
    s = np.sign(np.diag(r))
    return q * np.where(s == 0.0, 1.0, s)


def _preimage_frame(a: np.ndarray, frame: np.ndarray) -> np.ndarray:
    """Orthonormal frame of the preimage {x : a x in span(frame)}.

    Works for singular `a` as well; the preimage must keep the frame's
    column count (a regular splitting), otherwise the march is refused.
    """
    d, r = a.shape[0], frame.shape[1]
    if r == 0:
        return np.zeros((d, 0))
    if r == d:
        return np.eye(d)
    resid = (np.eye(d) - frame @ frame.T) @ a
    u, s, vt = np.linalg.svd(resid)
    cutoff = max(s[0], 1.0) * 1e-11
    rank = int((s > cutoff).sum())
    if d - rank != r:
        raise NumericError(
            f"preimage of a marched image frame has dimension {d - rank}, expected {r}; "
            "the splitting is not regular here"
        )
    return vt[rank:].T


def _source_run(field: DiscreteVectorField, lam: int, anchor: int, horizon: int):
    """Directions at `anchor` sorted by forward stretch over [anchor, anchor+horizon).

    Runs the QR accumulation on the transposed factors in decreasing
    time order; the final orthogonal columns approximate the right
    singular directions of the forward propagator, with per-column rate
    estimates.
    """
    _check_window(field, anchor, anchor + horizon - 1)
    q = _generic_seed(field.dim)
    logs = np.empty((horizon, field.dim))
    for idx, m in enumerate(range(anchor + horizon - 1, anchor - 1, -1)):
        q, logs[idx] = _qr_step(field.matrix(lam, m).T @ q)
    return q, logs[horizon // 2 :].mean(axis=0)


def _image_run(field: DiscreteVectorField, lam: int, anchor: int, horizon: int):
    """Directions at `anchor` sorted by backward reach over [anchor-horizon, anchor)."""
    _check_window(field, anchor - horizon, anchor - 1)
    q = _generic_seed(field.dim)
    logs = np.empty((horizon, field.dim))
    for idx, m in enumerate(range(anchor - horizon, anchor)):
        q, logs[idx] = _qr_step(field.matrix(lam, m) @ q)
    return q, logs[horizon // 2 :].mean(axis=0)


def _classify_rates(rates, cut, horizon, zero_margin, gap_ratio):
    """One-sided verdict: 'ed' with the below-cut mask, 'no_ed', or 'indeterminate'."""
    dist = float(np.abs(rates - cut).min())
    if dist < zero_margin:
        return "no_ed", None
    below = rates < cut
    if below.any() and (~below).any():
        gap = float(rates[~below].min() - rates[below].max())
        if gap < np.log(gap_ratio) / horizon:
            return "indeterminate", None
    return "ed", below


@dataclass(frozen=True)
class Splitting:
    """Estimated splitting at one anchor time.

    `image` spans the canonical half-line subspace (forward decaying on
    the plus side, the orthogonal complement of the backward decaying
    directions on the minus side), `kernel` its complement; both are
    orthonormal.  `rates` are the sampled exponential rate estimates,
    sorted descending; `gap` is the rate gap across zero.
    """

    side: str
    anchor: int
    image: np.ndarray
    kernel: np.ndarray
    rates: np.ndarray
    gap: float

    @property
    def rank(self) -> int:
        return self.image.shape[1]


def estimate_splitting(
    field: DiscreteVectorField,
    lam: int,
    side: str,
    anchor: int,
    horizon: int = HORIZON,
    zero_margin: float = ZERO_MARGIN,
    gap_ratio: float = GAP_RATIO,
) -> Splitting:
    """Detect the exponential splitting at an anchor time on one half-line.

    Parameters
    ----------
    side : str
        "plus" looks forward over [anchor, anchor+horizon), "minus"
        backward over [anchor-horizon, anchor).
    horizon : int
        Rate-estimation horizon (at least 8).

    Raises
    ------
    NoDichotomyError
        Some direction neither decays nor grows at the margin.
    IndeterminateError
        The consecutive-rate gap across zero is below
        log(gap_ratio)/horizon, so the horizon cannot separate the
        groups.
    """
    if side not in ("plus", "minus"):
        raise InputError(f"side must be 'plus' or 'minus', got {side!r}")
    if horizon < 8:
        raise InputError("rate estimation needs a horizon of at least 8 steps")
    if side == "plus":
        q, col_rates = _source_run(field, lam, anchor, horizon)
    else:
        q, col_rates = _image_run(field, lam, anchor, horizon)
    status, below = _classify_rates(col_rates, 0.0, horizon, zero_margin, gap_ratio)
    if status == "no_ed":
        raise NoDichotomyError(
            f"no dichotomy detected at anchor {anchor} on the {side} side: a sampled "
            f"rate sits within {zero_margin:.1e} of zero"
        )
    if status == "indeterminate":
        raise IndeterminateError(
            f"horizon {horizon} too short to separate the rate groups at anchor {anchor} "
            f"({side} side)"
        )
    # plus side: below-cut columns decay forward (canonical image seed);
    # minus side: above-cut columns are reached with backward decay
    # (canonical kernel seed) and the rest seeds the image
    image, kernel = q[:, below], q[:, ~below]
    if below.any() and (~below).any():
        gap = float(col_rates[~below].min() - col_rates[below].max())
    else:
        gap = 2.0 * float(np.abs(col_rates).min())
    return Splitting(
        side=side,
        anchor=anchor,
        image=image,
        kernel=kernel,
        rates=np.sort(col_rates)[::-1],
        gap=gap,
    )


@dataclass(frozen=True)
class ProjectorFamily:
    """Invariant projector family over a window of consecutive times.

    `projectors[i]` acts at time `times[i]`; `image_frames[i]` and
    `kernel_frames[i]` hold orthonormal bases of its image and kernel,
    and the step matrices satisfy
    ``A(times[i]) @ image_frames[i] = image_frames[i+1] @ image_steps[i]``
    (same for the kernel).  `bound` is the largest operator norm of a
    projector in the family.
    """

    side: str
    anchor: int
    times: np.ndarray
    projectors: np.ndarray
    rank: int
    image_frames: np.ndarray
    kernel_frames: np.ndarray
    image_steps: np.ndarray
    kernel_steps: np.ndarray
    bound: float

    def __post_init__(self):
        p = self.projectors
        if p.ndim != 3 or p.shape[1] != p.shape[2] or p.shape[0] != len(self.times):
            raise InputError("projector stack and times disagree")
        worst = max(abs(pi @ pi - pi).max() for pi in p)
        if worst > TAU_PROJ * (1.0 + self.bound) ** 2:
            raise NumericError(f"family fails idempotency ({worst:.3e})")

    @property
    def dim(self) -> int:
        return self.projectors.shape[1]

    def index_of(self, n: int) -> int:
        i = int(n) - int(self.times[0])
        if not (0 <= i < len(self.times)):
            raise InputError(f"time {n} outside the family window [{self.times[0]}, {self.times[-1]}]")
        return i

    def projector(self, n: int) -> np.ndarray:
        return self.projectors[self.index_of(n)]


def _assemble_family(
    field: DiscreteVectorField,
    lam: int,
    times: np.ndarray,
    im: np.ndarray,
    ker: np.ndarray,
    side: str,
    anchor: int,
    tau_proj: float,
    tau_inv: float,
    sigma_reg: float,
) -> ProjectorFamily:
    steps = len(times) - 1
    d = field.dim
    r = im.shape[2]
    projectors = np.empty((steps + 1, d, d))
    bound = 0.0
    for i in range(steps + 1):
        m = np.hstack([im[i], ker[i]])
        smin = np.linalg.svd(m, compute_uv=False).min()
        if smin < 1e-8:
            raise NumericError(
                f"image and kernel frames almost intersect at time {times[i]} "
                f"(smallest singular value {smin:.2e})"
            )
        projectors[i] = np.hstack([im[i], np.zeros((d, d - r))]) @ np.linalg.inv(m)
        bound = max(bound, float(np.linalg.norm(projectors[i], 2)))
    im_steps = np.empty((steps, r, r))
    ker_steps = np.empty((steps, d - r, d - r))

    def _max0(x):
        return float(abs(x).max()) if x.size else 0.0

    a_scale = 1.0
    for i in range(steps):
        a = field.matrix(lam, int(times[i]))
        a_scale = max(a_scale, float(abs(a).max()))
        im_steps[i] = im[i + 1].T @ (a @ im[i])
        ker_steps[i] = ker[i + 1].T @ (a @ ker[i])
        resid = float(abs(a @ projectors[i] - projectors[i + 1] @ a).max())
        if resid > tau_inv * (1.0 + a_scale) * (1.0 + bound):
            raise CertificationError(
                f"invariance residual {resid:.3e} at time {times[i]} exceeds {tau_inv:.1e}"
            )
        if d - r > 0:
            smin = float(np.linalg.svd(ker_steps[i], compute_uv=False).min())
            if smin < sigma_reg:
                raise CertificationError(
                    f"kernel transition at time {times[i]} is not regular "
                    f"(smallest singular value {smin:.3e} < {sigma_reg:.1e})"
                )
        worst = max(
            _max0(a @ im[i] - im[i + 1] @ im_steps[i]),
            _max0(a @ ker[i] - ker[i + 1] @ ker_steps[i]),
        )
        if worst > tau_inv * (1.0 + a_scale):
            raise CertificationError(
                f"frame transport residual {worst:.3e} at time {times[i]} exceeds {tau_inv:.1e}"
            )
    worst_idem = max(float(abs(p @ p - p).max()) for p in projectors)
    if worst_idem > tau_proj * (1.0 + bound) ** 2:
        raise CertificationError(f"idempotency residual {worst_idem:.3e} exceeds {tau_proj:.1e}")
    return ProjectorFamily(
        side=side,
        anchor=anchor,
        times=np.asarray(times, dtype=int),
        projectors=projectors,
        rank=r,
        image_frames=im,
        kernel_frames=ker,
        image_steps=im_steps,
        kernel_steps=ker_steps,
        bound=bound,
    )


def build_projector_family(
    field: DiscreteVectorField,
    lam: int,
    side: str,
    anchor: int,
    length: int | None = None,
    horizon: int = HORIZON,
    tau_proj: float = TAU_PROJ,
    tau_inv: float = TAU_INV,
    sigma_reg: float = SIGMA_REG,
    zero_margin: float = ZERO_MARGIN,
    gap_ratio: float = GAP_RATIO,
) -> ProjectorFamily:
    """Certified invariant projector family on a half-line window.

    One QR sweep over `length + horizon` steps classifies the rates and
    yields splitting estimates at both window ends.  Each subspace is
    then transported in the direction that attracts it, so rounding
    errors contract instead of compounding: the forward-decaying image
    is seeded at the far end of the window and marched backward through
    step preimages, while the complement (the free choice, fixed
    orthogonal at the seed time) is marched forward by the field.
    Idempotency, invariance, regularity and rank constancy are
    validated before returning.
    """
    if side not in ("plus", "minus"):
        raise InputError(f"side must be 'plus' or 'minus', got {side!r}")
    if horizon < 8:
        raise InputError("rate estimation needs a horizon of at least 8 steps")
    length = int(length) if length is not None else horizon
    if length < 2:
        raise InputError("family window must contain at least 2 steps")
    d = field.dim
    run = length + horizon
    if side == "plus":
        times = np.arange(anchor, anchor + length + 1)
        _check_window(field, anchor, anchor + run - 1)
    else:
        times = np.arange(anchor - length, anchor + 1)
        _check_window(field, anchor - run, anchor - 1)

    # one sweep; the snapshot after `horizon` factors estimates the
    # splitting at the far window end, the final state at the anchor
    q = _generic_seed(d)
    logs = np.empty((run, d))
    far = None
    if side == "plus":
        sweep = range(anchor + run - 1, anchor - 1, -1)
    else:
        sweep = range(anchor - run, anchor)
    for idx, m in enumerate(sweep):
        a = field.matrix(lam, m)
        q, logs[idx] = _qr_step(a.T @ q if side == "plus" else a @ q)
        if idx == horizon - 1:
            far = q.copy()
    rates = logs[run // 2 :].mean(axis=0)
    status, below = _classify_rates(rates, 0.0, run, zero_margin, gap_ratio)
    if status == "no_ed":
        raise NoDichotomyError(
            f"no dichotomy detected at anchor {anchor} on the {side} side: a sampled "
            f"rate sits within {zero_margin:.1e} of zero"
        )
    if status == "indeterminate":
        raise IndeterminateError(
            f"run of {run} steps is too short to separate the rate groups at anchor "
            f"{anchor} ({side} side)"
        )

    r = int(below.sum())
    im = np.empty((length + 1, d, r))
    ker = np.empty((length + 1, d, d - r))
    if side == "plus":
        # canonical image: seeded at the far end, marched backward;
        # free complement: fixed orthogonal at the anchor, marched forward
        im[length] = far[:, below]
        for i in range(length - 1, -1, -1):
            im[i] = _preimage_frame(field.matrix(lam, int(times[i])), im[i + 1])
        ker[0] = q[:, ~below]
        for i in range(length):
            ker[i + 1] = _qr_frame(field.matrix(lam, int(times[i])) @ ker[i])
    else:
        # canonical kernel: seeded at the far (past) end, marched forward;
        # free complement: fixed orthogonal at the anchor, marched backward
        ker[0] = far[:, ~below]
        for i in range(length):
            ker[i + 1] = _qr_frame(field.matrix(lam, int(times[i])) @ ker[i])
        im[length] = q[:, below]
        for i in range(length - 1, -1, -1):
            im[i] = _preimage_frame(field.matrix(lam, int(times[i])), im[i + 1])
    return _assemble_family(field, lam, times, im, ker, side, anchor, tau_proj, tau_inv, sigma_reg)


@dataclass(frozen=True)
class EDWitness:
    """Certified dichotomy constants attached to a projector family.

    The family's image contracts like ``k_const * alpha**delta`` and its
    kernel expands at least like ``alpha**(-delta) / k_const`` on every
    checked pair, with `slack` allowed on the fitted constants.
    """

    family: ProjectorFamily
    k_const: float
    alpha: float
    checked_pairs: int
    slack: float

    @property
    def side(self) -> str:
        return self.family.side

    @property
    def anchor(self) -> int:
        return self.family.anchor

    @property
    def rank(self) -> int:
        return self.family.rank

    def green_bound(self, projector_bound: float | None = None) -> float:
        """Sup-norm bound for half-line Green solutions per unit forcing."""
        bound = self.family.bound if projector_bound is None else projector_bound
        return self.k_const * (1.0 + self.alpha) / (1.0 - self.alpha) * (1.0 + bound)


def _fit_line(points):
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points], dtype=float)
    if len(points) == 1:
        return y[0] / x[0], 0.0
    slope, intercept = np.polyfit(x, y, 1)
    return float(slope), float(intercept)


def verify_ed(
    field: DiscreteVectorField,
    lam: int,
    family: ProjectorFamily,
    slack: float = 0.05,
    max_anchors: int = 12,
    inverse_probes: int = 4,
) -> EDWitness:
    """Fit and validate dichotomy constants (K, alpha) on a projector family.

    Image and kernel transition chains are sampled over anchor times and
    dyadic step counts; log extreme singular values are fitted by least
    squares, alpha is the worse of the decay and reciprocal growth
    rates, and K is then the smallest constant covering every sampled
    pair.  The backward (inverse) form is validated on least-norm
    preimages of kernel vectors.  Raises NoDichotomyError when the
    fitted alpha reaches 1.
    """
    steps = len(family.times) - 1
    if steps < 4:
        raise InputError("family window too short to fit dichotomy constants")
    d = family.dim
    r = family.rank
    anchors = sorted(set(np.linspace(0, steps - 1, min(max_anchors, steps), dtype=int)))
    deltas = set()
    delta = 1
    while delta <= steps:
        deltas.add(delta)
        delta *= 2
    deltas.add(steps)

    stable_pts = []
    unstable_pts = []
    for a in anchors:
        chain_im = np.eye(r)
        chain_ker = np.eye(d - r)
        for delta in range(1, steps - a + 1):
            chain_im = family.image_steps[a + delta - 1] @ chain_im
            chain_ker = family.kernel_steps[a + delta - 1] @ chain_ker
            if delta in deltas:
                if r > 0:
                    smax = float(np.linalg.svd(chain_im, compute_uv=False).max())
                    stable_pts.append((delta, np.log(max(smax, 1e-300)), a))
                if d - r > 0:
                    smin = float(np.linalg.svd(chain_ker, compute_uv=False).min())
                    unstable_pts.append((delta, np.log(max(smin, 1e-300)), a))

    log_alpha_parts = []
    if stable_pts:
        slope_s, icept_s = _fit_line([(p[0], p[1]) for p in stable_pts])
        log_alpha_parts.append(slope_s)
    if unstable_pts:
        slope_u, icept_u = _fit_line([(p[0], p[1]) for p in unstable_pts])
        log_alpha_parts.append(-slope_u)
    if not log_alpha_parts:
        raise InputError("family has neither image nor kernel directions")
    log_alpha = max(log_alpha_parts)
    if log_alpha >= 0.0:
        worst = None
        if stable_pts and log_alpha_parts[0] == log_alpha:
            worst = max(stable_pts, key=lambda p: p[1] / p[0])
        else:
            worst = min(unstable_pts, key=lambda p: p[1] / p[0])
        raise NoDichotomyError(
            f"fitted rate alpha = {np.exp(log_alpha):.6f} >= 1; offending orbit at "
            f"family offset {worst[2]}, {worst[0]} steps"
        )
    alpha = float(np.exp(log_alpha))

    log_k = 0.0
    for delta, y, _ in stable_pts:
        log_k = max(log_k, y - delta * log_alpha)
    for delta, y, _ in unstable_pts:
        log_k = max(log_k, -y - delta * log_alpha)
    k_const = float(np.exp(log_k))

    # validate every sampled pair against the final constants with slack
    budget = np.log1p(slack)
    for delta, y, a in stable_pts:
        if y > np.log(k_const) + delta * log_alpha + budget:
            raise CertificationError(f"decay bound violated at offset {a}, {delta} steps")
    for delta, y, a in unstable_pts:
        if y < -np.log(k_const) - delta * log_alpha - budget:
            raise CertificationError(f"growth bound violated at offset {a}, {delta} steps")

    # backward form: least-norm preimages of kernel vectors decay like alpha**delta
    checked = len(stable_pts) + len(unstable_pts)
    if d - r > 0 and inverse_probes > 0:
        probe_deltas = sorted(deltas)[:inverse_probes]
        chain_im = np.eye(r)
        chain_ker = np.eye(d - r)
        for delta in range(1, steps + 1):
            chain_im = family.image_steps[delta - 1] @ chain_im
            chain_ker = family.kernel_steps[delta - 1] @ chain_ker
            if delta in probe_deltas and abs(chain_ker).max() < 1e100:
                basis_hi = np.hstack([family.image_frames[delta], family.kernel_frames[delta]])
                basis_lo = np.hstack([family.image_frames[0], family.kernel_frames[0]])
                blocks = np.zeros((d, d))
                blocks[:r, :r] = chain_im
                blocks[r:, r:] = chain_ker
                phi = basis_hi @ blocks @ np.linalg.inv(basis_lo)
                for j in range(d - r):
                    y_vec = family.kernel_frames[delta][:, j]
                    z, res, _, _ = np.linalg.lstsq(phi, y_vec, rcond=None)
                    if abs(phi @ z - y_vec).max() > 1e-8:
                        raise CertificationError(
                            f"kernel vector at step {delta} is not reachable; "
                            "the family is not regular"
                        )
                    if np.linalg.norm(z) > (1.0 + slack) * k_const * alpha**delta:
                        raise CertificationError(
                            f"backward decay of least-norm preimages fails at {delta} steps"
                        )
                    checked += 1

    return EDWitness(
        family=family,
        k_const=k_const,
        alpha=alpha,
        checked_pairs=checked,
        slack=slack,
    )


@dataclass(frozen=True)
class SpectrumResult:
    """Dichotomy spectrum scan result.

    `intervals` are sorted disjoint closed intervals covering the
    scaling factors gamma where no dichotomy was detected (including
    rank-change points); endpoints are bisection brackets of relative
    width <= REFINE_REL.  `verdicts` holds the per-gridpoint verdict
    strings ("ed:<stable rank>", "no_ed", "indeterminate").
    """

    intervals: tuple
    grid: np.ndarray
    verdicts: tuple
    n_probes: int

    def contains(self, gamma: float) -> bool:
        return any(lo <= gamma <= hi for lo, hi in self.intervals)

    @property
    def admits_ed(self) -> bool:
        """Whether the unscaled field admits a dichotomy (1 outside the spectrum)."""
        return not self.contains(1.0)

    def distance_to_one(self) -> float:
        if not self.intervals:
            return float("inf")
        d = min(max(lo - 1.0, 1.0 - hi, 0.0) for lo, hi in self.intervals)
        return float(d)


def dichotomy_spectrum(
    field: DiscreteVectorField,
    lam: int = 0,
    gamma_min: float = 0.05,
    gamma_max: float = 20.0,
    grid: int = 64,
    horizon: int = HORIZON,
    zero_margin: float = ZERO_MARGIN,
    gap_ratio: float = GAP_RATIO,
    trans_tol: float = TRANSVERSALITY_TOL,
    refine_rel: float = REFINE_REL,
) -> SpectrumResult:
    """Scan the dichotomy spectrum of a field over a geometric gamma grid.

    For each gamma the field scaled by 1/gamma is tested for a
    dichotomy over the window [-horizon, horizon]: rate groups must
    split cleanly on both half-lines, the stable-plus and
    unstable-minus ranks must sum to the dimension, and the two frames
    must be transversal at time 0.  Failing gammas are covered by
    closed intervals whose endpoints are refined by geometric bisection
    to relative precision `refine_rel`; a rank change between two
    passing gammas contributes the (degenerate) bracket around the
    crossing.
    """
    if not (0.0 < gamma_min < gamma_max):
        raise InputError("need 0 < gamma_min < gamma_max")
    if grid < 16:
        raise InputError("gamma grid needs at least 16 points")
    d = field.dim
    qp, rates_p = _source_run(field, lam, 0, horizon)
    qm, rates_m = _image_run(field, lam, 0, horizon)
    log_thr = np.log(gap_ratio) / horizon

    def classify(gamma: float) -> str:
        lg = np.log(gamma)
        dist = min(np.abs(rates_p - lg).min(), np.abs(rates_m - lg).min())
        if dist < zero_margin:
            return "no_ed"
        for rates in (rates_p, rates_m):
            below = rates < lg
            if below.any() and (~below).any():
                if rates[~below].min() - rates[below].max() < log_thr:
                    return "indeterminate"
        s_mask = rates_p < lg
        u_mask = rates_m > lg
        s, u = int(s_mask.sum()), int(u_mask.sum())
        if s + u != d:
            return "no_ed"
        if s > 0 and u > 0:
            m = np.hstack([qp[:, s_mask], qm[:, u_mask]])
            if np.linalg.svd(m, compute_uv=False).min() < trans_tol:
                return "no_ed"
        return f"ed:{s}"

    probes: dict[float, str] = {}

    def probe(g: float) -> str:
        if g not in probes:
            probes[g] = classify(g)
        return probes[g]

    grid_gammas = np.geomspace(gamma_min, gamma_max, grid)
    for g in grid_gammas:
        probe(float(g))
    stack = [
        (float(grid_gammas[i]), float(grid_gammas[i + 1]))
        for i in range(grid - 1)
        if probe(float(grid_gammas[i])) != probe(float(grid_gammas[i + 1]))
    ]
    while stack:
        lo, hi = stack.pop()
        if probe(lo) == probe(hi) or hi / lo - 1.0 <= refine_rel:
            continue
        mid = float(np.sqrt(lo * hi))
        probe(mid)
        stack.append((lo, mid))
        stack.append((mid, hi))

    def failing(c: str) -> bool:
        return not c.startswith("ed")

    gs = sorted(probes)
    intervals = []
    run = None
    for g in gs:
        if failing(probes[g]):
            run = [g, g] if run is None else [run[0], g]
        elif run is not None:
            intervals.append(tuple(run))
            run = None
    if run is not None:
        intervals.append(tuple(run))
    for i in range(len(gs) - 1):
        ca, cb = probes[gs[i]], probes[gs[i + 1]]
        if not failing(ca) and not failing(cb) and ca != cb:
            intervals.append((gs[i], gs[i + 1]))

    intervals.sort()
    merged = []
    for lo, hi in intervals:
        if merged and lo <= merged[-1][1] * (1.0 + 2.0 * refine_rel):
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])

    return SpectrumResult(
        intervals=tuple((lo, hi) for lo, hi in merged),
        grid=grid_gammas,
        verdicts=tuple(probes[float(g)] for g in grid_gammas),
        n_probes=len(probes),
    )


def _family_from_projectors(
    field: DiscreteVectorField,
    lam: int,
    times: np.ndarray,
    projectors: np.ndarray,
    side: str,
    anchor: int,
    tau_proj: float = TAU_PROJ,
    tau_inv: float = TAU_INV,
    sigma_reg: float = SIGMA_REG,
) -> ProjectorFamily:
    d = field.dim
    traces = np.array([float(np.trace(p)) for p in projectors])
    rank = int(round(traces[0]))
    if np.abs(traces - rank).max() > 1e-2:
        raise CertificationError(
            "projector ranks are not constant on the window: traces span "
            f"[{traces.min():.4f}, {traces.max():.4f}]"
        )
    im = np.empty((len(times), d, rank))
    ker = np.empty((len(times), d, d - rank))
    eye = np.eye(d)
    for i, p in enumerate(projectors):
        u, s, _ = np.linalg.svd(p)
        if rank > 0 and s[rank - 1] < 0.5:
            raise NumericError(f"projector at time {times[i]} has an unclear image rank")
        if rank < d and s[rank] > 0.5:
            raise NumericError(f"projector at time {times[i]} has an unclear image rank")
        im[i] = u[:, :rank]
        u2, s2, _ = np.linalg.svd(eye - p)
        ker[i] = u2[:, : d - rank]
    return _assemble_family(field, lam, times, im, ker, side, anchor, tau_proj, tau_inv, sigma_reg)


def shift_operator_projector(
    field: DiscreteVectorField,
    lam: int = 0,
    n_times: int = 64,
    nodes: int = 64,
    margin: float = matrixcore.DEFAULT_MARGIN,
) -> ProjectorFamily:
    """Dichotomy projectors from the weighted-shift operator route.

    The field is closed periodically over a centered window of `n_times`
    times; the weighted right shift then becomes an (n d) x (n d)
    matrix whose unit-circle spectral projector, read off block by
    block on the lattice basis, yields the dichotomy projectors.  A
    boundary layer of n_times/8 on each side is discarded.  Requires
    the closed operator to be hyperbolic; an eigenvalue near the unit
    circle (which may be a truncation artifact, or a genuine failure of
    the whole-line dichotomy) raises IndeterminateError with advice to
    enlarge the window.
    """
    if n_times < 16:
        raise InputError("the shift route needs at least 16 window times")
    d = field.dim
    lo = -(n_times // 2)
    times = np.arange(lo, lo + n_times)
    _check_window(field, int(times[0]), int(times[-1]))
    big = np.zeros((n_times * d, n_times * d))
    for i in range(n_times):
        j = (i - 1) % n_times
        big[i * d : (i + 1) * d, j * d : (j + 1) * d] = field.matrix(lam, int(times[j]))
    try:
        split = matrixcore.spectral_projector_contour(big, nodes=nodes, margin=margin)
    except (DomainError, IndeterminateError) as exc:
        raise IndeterminateError(
            "periodic closure of the weighted shift has an eigenvalue within the "
            f"margin of the unit circle ({exc}); this can be a truncation artifact "
            "- increase n_times, or check that the field admits a dichotomy on "
            "the whole line"
        ) from exc
    discard = n_times // 8
    keep = np.arange(discard, n_times - discard)
    projs = np.stack(
        [split.stable_projector[i * d : (i + 1) * d, i * d : (i + 1) * d] for i in keep]
    )
    return _family_from_projectors(
        field, lam, times[keep], projs, side="full", anchor=int(times[keep][0])
    )
