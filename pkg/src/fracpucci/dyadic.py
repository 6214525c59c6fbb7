"""Dyadic cubes of ``Q_1``, the Calderon-Zygmund stopping-time family and a lemma checker.

Sets are boolean bitmaps at generation ``max_gen`` resolution: one entry
per finest dyadic cube, so a generation-``m`` cube is a block of
``2^(max_gen - m)`` entries per axis.  Measures are entry counts times
``2^(-n max_gen)``.
"""
from __future__ import annotations

import base64
from dataclasses import dataclass

import numpy as np

from .errors import DensityHypothesisFail, NotNested


@dataclass(frozen=True, order=True)
class DyadicCube:
    generation: int
    index: tuple

    def __post_init__(self):
        if self.generation < 0:
            raise ValueError("generation must be nonnegative")
        k = 1 << self.generation
        if any(not 0 <= int(i) < k for i in self.index):
            raise ValueError(f"index {self.index} out of range for generation {self.generation}")
        object.__setattr__(self, "index", tuple(int(i) for i in self.index))

    @property
    def n(self) -> int:
        return len(self.index)

    @property
    def side(self) -> float:
        return 2.0 ** (-self.generation)

    @property
    def lower(self) -> np.ndarray:
        """Lower corner in ``Q_1 = [-1/2, 1/2)^n``."""
        return -0.5 + self.side * np.array(self.index, dtype=float)

    def predecessor(self) -> "DyadicCube":
        if self.generation == 0:
            raise ValueError("Q_1 has no predecessor")
        return DyadicCube(self.generation - 1, tuple(i >> 1 for i in self.index))

    def children(self) -> list:
        out = []
        for bits in np.ndindex(*(2,) * self.n):
            out.append(DyadicCube(self.generation + 1, tuple(2 * i + b for i, b in zip(self.index, bits))))
        return out

    def slices(self, max_gen: int) -> tuple:
        s = 1 << (max_gen - self.generation)
        return tuple(slice(i * s, (i + 1) * s) for i in self.index)


def _check_bitmap(A: np.ndarray, max_gen: int) -> np.ndarray:
    A = np.asarray(A, dtype=bool)
    if any(s != (1 << max_gen) for s in A.shape):
        raise ValueError(f"bitmap must have side 2^{max_gen}, got shape {A.shape}")
    return A


def block_counts(A: np.ndarray, generation: int, max_gen: int) -> np.ndarray:
    """Number of set entries of ``A`` inside every generation-``generation`` cube."""
    s = 1 << (max_gen - generation)
    k = 1 << generation
    n = A.ndim
    shape = []
    for _ in range(n):
        shape += [k, s]
    axes = tuple(range(1, 2 * n, 2))
    return A.reshape(shape).sum(axis=axes)


def _upsample(mask: np.ndarray, factor: int) -> np.ndarray:
    """Repeat every entry ``factor`` times along each axis."""
    for ax in range(mask.ndim):
        mask = np.repeat(mask, factor, axis=ax)
    return mask


def densities(A: np.ndarray, max_gen: int) -> list:
    """``|A cap Q| / |Q|`` for every cube, per generation 0..max_gen."""
    A = _check_bitmap(A, max_gen)
    out = []
    for m in range(max_gen + 1):
        cells = (1 << (max_gen - m)) ** A.ndim
        out.append(block_counts(A, m, max_gen) / cells)
    return out


def measure(A: np.ndarray, max_gen: int) -> float:
    return float(np.count_nonzero(A)) / float((1 << max_gen) ** np.ndim(A))


def dyadic_decompose(A, delta: float, max_gen: int) -> list:
    """Maximal dyadic cubes with density ``> delta`` (every ancestor has density ``<= delta``).

    Raises
    ------
    DensityHypothesisFail
        If ``|A| > delta``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    A = _check_bitmap(A, max_gen)
    dens = densities(A, max_gen)
    if dens[0].item() > delta:
        raise DensityHypothesisFail(f"|A| = {dens[0].item()} exceeds delta = {delta}")
    out = []
    blocked = np.zeros((1,) * A.ndim, dtype=bool)  # an ancestor was already selected
    for m in range(1, max_gen + 1):
        blocked = _upsample(blocked, 2)
        pick = (dens[m] > delta) & ~blocked
        for idx in np.argwhere(pick):
            out.append(DyadicCube(m, tuple(idx)))
        blocked = blocked | pick
    return out


def union_bitmap(cubes, n: int, max_gen: int) -> np.ndarray:
    out = np.zeros((1 << max_gen,) * n, dtype=bool)
    for c in cubes:
        out[c.slices(max_gen)] = True
    return out


@dataclass
class CZReport:
    hypothesis_a: bool
    hypothesis_b: bool
    conclusion: bool | None  # None when a hypothesis fails
    measure_A: float
    measure_B: float
    delta: float
    witness: DyadicCube | None = None

    @property
    def counterexample(self) -> bool:
        return self.hypothesis_a and self.hypothesis_b and self.conclusion is False


def cz_verify(A, B, delta: float, max_gen: int) -> CZReport:
    """Check hypotheses (a) ``|A| <= delta`` and (b) dense cubes have predecessors in ``B``.

    The conclusion ``|A| <= delta |B|`` is evaluated only when both hold.
    """
    A = _check_bitmap(A, max_gen)
    B = _check_bitmap(B, max_gen)
    if np.any(A & ~B):
        raise NotNested("A is not contained in B")
    mA, mB = measure(A, max_gen), measure(B, max_gen)
    hyp_a = mA <= delta
    dens = densities(A, max_gen)
    witness = None
    hyp_b = True
    for m in range(1, max_gen + 1):
        # predecessor contained in B <=> B full on the parent block
        full_parent = block_counts(B, m - 1, max_gen) == (1 << (max_gen - m + 1)) ** A.ndim
        bad = np.argwhere((dens[m] > delta) & ~_upsample(full_parent, 2))
        if bad.size:
            hyp_b = False
            witness = DyadicCube(m, tuple(bad[0]))
            break
    if not hyp_a and witness is None:
        witness = DyadicCube(0, (0,) * A.ndim)
    conclusion = (mA <= delta * mB * (1 + 1e-12)) if (hyp_a and hyp_b) else None
    return CZReport(hyp_a, hyp_b, conclusion, mA, mB, delta, witness)


def to_bitmap_text(A: np.ndarray) -> str:
    """Packed-bit base64 serialization with a shape header."""
    A = np.asarray(A, dtype=bool)
    head = "x".join(str(s) for s in A.shape)
    return head + ":" + base64.b64encode(np.packbits(A.ravel())).decode("ascii")


def from_bitmap_text(text: str) -> np.ndarray:
    head, data = text.split(":", 1)
    shape = tuple(int(s) for s in head.split("x"))
    bits = np.unpackbits(np.frombuffer(base64.b64decode(data), dtype=np.uint8))
    return bits[: int(np.prod(shape))].astype(bool).reshape(shape)


def lattice_to_bitmap(domain, mask: np.ndarray, max_gen: int) -> np.ndarray:
    """Restrict a lattice mask on ``Q_1`` to generation ``max_gen`` cells (cell-centre sampling)."""
    k = 1 << max_gen
    centers = -0.5 + (np.arange(k) + 0.5) / k
    idx = [np.array([domain.index_of([c] + [0] * (domain.n - 1))[0] for c in centers])] * domain.n
    return np.asarray(mask)[np.ix_(*idx)]


def random_instance(rng: np.random.Generator, n: int, max_gen: int, delta: float,
                    max_tries: int = 1000):
    """Random ``(A, B)`` satisfying (a) and (b), by rejection sampling.

    ``A`` is a random union of dyadic cubes of random generations thinned to
    ``|A| <= delta``; ``B`` contains ``A`` plus the predecessor of every
    dense cube plus random extra cells.
    """
    side = 1 << max_gen
    for _ in range(max_tries):
        A = np.zeros((side,) * n, dtype=bool)
        count = int(rng.integers(1, 8))
        for _ in range(count):
            m = int(rng.integers(1, max_gen + 1))
            idx = tuple(int(i) for i in rng.integers(0, 1 << m, size=n))
            c = DyadicCube(m, idx)
            A[c.slices(max_gen)] = True
        A &= rng.random(A.shape) < rng.uniform(0.3, 1.0)
        if measure(A, max_gen) > delta:
            continue
        B = A.copy()
        dens = densities(A, max_gen)
        for m in range(1, max_gen + 1):
            dense = dens[m] > delta
            if dense.any():
                # parents of dense cubes, as a generation-(m-1) mask
                parents = block_counts(dense, m - 1, m) > 0
                B |= _upsample(parents, 1 << (max_gen - m + 1))
        B |= rng.random(B.shape) < rng.uniform(0.0, 0.2)
        return A, B
    raise RuntimeError("rejection sampling did not produce an instance")
