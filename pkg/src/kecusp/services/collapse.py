"""Collapse of Hilbert-modular cusp cross-sections.

A level set {y₁y₂ = e^ĉ} carries the flat torus ℝ²/M with metric
dx₁²/y₁² + y₁²e^{−2ĉ}dx₂², where M = ℤα₁ + ℤα₂ is embedded as
{(α, α′)}. Its diameter is the covering radius of the scaled lattice.
"""

import csv
import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SINGULAR_THRESHOLD = 1e-12
ENUMERATION_FACTOR = 3.0
COEFF_RANGE = 5
CERTIFY_SAMPLES = 64


class LatticeError(ValueError):
    pass


def _is_squarefree(d: int) -> bool:
    if d < 1:
        return False
    return all(d % (p * p) for p in range(2, math.isqrt(d) + 1))


@dataclass(frozen=True, eq=False)
class QuadraticLattice:
    d: Optional[int]
    basis: Optional[Tuple[Tuple[Fraction, Fraction], ...]]
    embedded_basis: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.basis is not None:
            if self.d is None or not _is_squarefree(int(self.d)):
                raise LatticeError(f"d must be a squarefree positive integer, got {self.d}")
            basis = tuple((Fraction(p), Fraction(q)) for p, q in self.basis)
            if len(basis) != 2:
                raise LatticeError("a rank 2 lattice needs exactly two generators")
            root = math.sqrt(self.d)
            embedded = np.array([[float(p) + float(q) * root, float(p) - float(q) * root] for p, q in basis])
            object.__setattr__(self, "basis", basis)
        else:
            embedded = np.asarray(self.embedded_basis, dtype=float)
            if embedded.shape != (2, 2):
                raise LatticeError(f"embedded basis must be 2x2, got {embedded.shape}")
        _check_nonsingular(embedded, "embedded basis")
        embedded = embedded.copy()
        embedded.setflags(write=False)
        object.__setattr__(self, "embedded_basis", embedded)

    @classmethod
    def from_embedded(cls, matrix) -> "QuadraticLattice":
        """A lattice given directly by its rows, with no quadratic field attached."""
        return cls(None, None, np.asarray(matrix, dtype=float))

    def transformed(self, U) -> "QuadraticLattice":
        """Same lattice, basis changed by the unimodular integer matrix U."""
        U = np.asarray(U)
        if U.shape != (2, 2) or not np.all(U == np.round(U)) or abs(round(np.linalg.det(U))) != 1:
            raise LatticeError(f"basis change must be unimodular, got {U.tolist()}")
        if self.basis is None:
            return QuadraticLattice.from_embedded(U @ self.embedded_basis)
        new_basis = tuple(
            (
                int(U[i, 0]) * self.basis[0][0] + int(U[i, 1]) * self.basis[1][0],
                int(U[i, 0]) * self.basis[0][1] + int(U[i, 1]) * self.basis[1][1],
            )
            for i in range(2)
        )
        return QuadraticLattice(self.d, new_basis)

    def dilated(self, scale: float) -> "QuadraticLattice":
        return QuadraticLattice.from_embedded(scale * self.embedded_basis)


@dataclass
class CollapseProfile:
    c_hat: List[float]
    covering_radii: List[float]
    monotone: bool
    halved: Optional[bool]
    scalings: List[np.ndarray]


def _check_nonsingular(B: np.ndarray, what: str) -> None:
    scale = np.linalg.norm(B[0]) * np.linalg.norm(B[1])
    if scale == 0 or abs(np.linalg.det(B)) <= SINGULAR_THRESHOLD * scale:
        raise LatticeError(f"{what} is numerically singular (rows are collinear)")


def gauss_reduce(B: np.ndarray) -> np.ndarray:
    """Gauss-reduced basis (u, v): |u| ≤ |v| and |u·v| ≤ |u|²/2."""
    u, v = np.array(B[0], dtype=float), np.array(B[1], dtype=float)
    if u @ u > v @ v:
        u, v = v, u
    max_it = 10000  # in practice this is not exceeded
    for _ in range(max_it):
        x = round((u @ v) / (u @ u))
        v = v - x * u
        if v @ v >= u @ u:
            return np.array([u, v])
        u, v = v, u
    raise LatticeError(f"Gauss reduction did not finish after {max_it} iterations")


def scaling_matrix(c_hat: float, y1: float = 1.0) -> np.ndarray:
    return np.diag([1.0 / y1, y1 * math.exp(-c_hat)])


def _enumerate(reduced: np.ndarray) -> np.ndarray:
    coeffs = np.array(
        [c for c in itertools.product(range(-COEFF_RANGE, COEFF_RANGE + 1), repeat=2) if c != (0, 0)]
    )
    vectors = coeffs @ reduced
    # relevant vectors of a reduced basis have norm at most |u| + |v|
    bound = ENUMERATION_FACTOR * np.linalg.norm(reduced[1])
    return vectors[np.linalg.norm(vectors, axis=1) <= bound]


def voronoi_vertices(reduced: np.ndarray) -> np.ndarray:
    """Vertices of the Voronoi cell at the origin, from pairs of bisector lines."""
    vectors = _enumerate(reduced)
    half = 0.5 * np.einsum("ij,ij->i", vectors, vectors)
    tol = 1e-12 * float(half.max())
    vertices = []
    for i, j in itertools.combinations(range(len(vectors)), 2):
        A = np.array([vectors[i], vectors[j]])
        if abs(np.linalg.det(A)) <= 1e-12 * np.linalg.norm(A[0]) * np.linalg.norm(A[1]):
            continue
        x = np.linalg.solve(A, [half[i], half[j]])
        if not np.all(vectors @ x <= half + tol):
            continue
        # vertices shared by more than two bisectors (rectangular cells) show up repeatedly
        scale = math.sqrt(float(half.max()))
        if all(np.linalg.norm(x - y) > 1e-9 * scale for y in vertices):
            vertices.append(x)
    return np.array(vertices)


def sampled_covering_radius(
    basis: np.ndarray, samples: int = CERTIFY_SAMPLES, zoom_levels: int = 0
) -> Tuple[float, float]:
    """Grid search over the fundamental parallelogram, optionally zoomed at the best sample.

    Returns (lower bound, spacing bound): the true covering radius lies in
    [lower, lower + spacing].
    """
    reduced = gauss_reduce(basis)
    near = np.array(list(itertools.product(range(-1, 3), repeat=2))) @ reduced

    def hole_depth(points):
        diff = points[:, None, :] - near[None, :, :]
        return np.min(np.linalg.norm(diff, axis=2), axis=1)

    grid = (np.arange(samples) + 0.5) / samples
    coeffs = np.array(list(itertools.product(grid, repeat=2)))
    points = coeffs @ reduced
    depths = hole_depth(points)
    best = int(np.argmax(depths))
    center, lower = points[best], float(depths[best])
    spacing = (np.linalg.norm(reduced[0]) + np.linalg.norm(reduced[1])) / samples
    step = spacing

    for _ in range(zoom_levels):
        offsets = np.linspace(-step, step, samples)
        local = center + np.array(list(itertools.product(offsets, repeat=2)))
        depths = hole_depth(local)
        best = int(np.argmax(depths))
        if depths[best] > lower:
            center, lower = local[best], float(depths[best])
        step = 2.0 * step / (samples - 1)
    # the distance to the lattice is 1-Lipschitz, so the coarse grid bounds the error
    return lower, spacing


def covering_radius(lattice: QuadraticLattice, c_hat: float, y1: float = 1.0) -> float:
    if c_hat < 0:
        raise LatticeError(f"c_hat must be nonnegative, got {c_hat}")
    if y1 <= 0:
        raise LatticeError(f"y1 must be positive, got {y1}")
    scaled = lattice.embedded_basis @ scaling_matrix(c_hat, y1)
    _check_nonsingular(scaled, f"scaled lattice at c_hat={c_hat}")
    reduced = gauss_reduce(scaled)
    vertices = voronoi_vertices(reduced)
    radius = float(np.max(np.linalg.norm(vertices, axis=1)))

    lower, spacing = sampled_covering_radius(reduced)
    if not (lower <= radius + 1e-9 and radius <= lower + spacing + 1e-9):
        raise LatticeError(
            f"covering radius {radius:.12g} failed certification against sampling "
            f"[{lower:.12g}, {lower + spacing:.12g}]"
        )
    logger.debug(f"[collapse] c_hat={c_hat:g}: covering radius {radius:.12g}")
    return radius


def collapse_profile(
    lattice: QuadraticLattice, c_hats: Sequence[float], y1: float = 1.0
) -> CollapseProfile:
    c_hats = [float(c) for c in c_hats]
    if not c_hats:
        raise LatticeError("c_hat list is empty")
    if any(b <= a for a, b in zip(c_hats, c_hats[1:])):
        raise LatticeError(f"c_hat list must be increasing, got {c_hats}")
    radii = [covering_radius(lattice, c, y1) for c in c_hats]
    monotone = all(b <= a for a, b in zip(radii, radii[1:]))
    halved = None
    if c_hats[-1] >= c_hats[0] + 8:
        halved = radii[-1] < radii[0] / 2
        if not halved:
            logger.warning(
                f"[collapse] Covering radius only fell from {radii[0]:.6g} to {radii[-1]:.6g}"
            )
    logger.info(
        f"[collapse] Profile over {len(c_hats)} levels: "
        f"{radii[0]:.6g} -> {radii[-1]:.6g}, monotone={monotone}"
    )
    return CollapseProfile(c_hats, radii, monotone, halved, [scaling_matrix(c, y1) for c in c_hats])


def cylinder_limit_gram() -> np.ndarray:
    """Limit metric 2dŷ₁² − 2dŷ₁dĉ + dĉ² in the (ŷ₁, ĉ) coordinates."""
    return np.array([[2.0, -1.0], [-1.0, 1.0]])


def level_set_gram(y1: float, c_hat: float) -> np.ndarray:
    """The metric Σ(dx_i² + dy_i²)/y_i² in coordinates (x₁, x₂, ŷ₁ = log y₁, ĉ = log y₁y₂)."""
    gram = np.zeros((4, 4))
    gram[0, 0] = 1.0 / y1**2
    gram[1, 1] = y1**2 * math.exp(-2.0 * c_hat)
    gram[2:, 2:] = cylinder_limit_gram()
    return gram


def profile_to_csv(profile: CollapseProfile, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["c_hat", "covering_radius"])
        for c, r in zip(profile.c_hat, profile.covering_radii):
            writer.writerow([repr(c), repr(r)])
    logger.info(f"[collapse] Wrote collapse profile to {path}")
