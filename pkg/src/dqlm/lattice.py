"""Lattice layouts, bit-basis conventions and sparse spin operators.

Basis conventions, pinned once and used everywhere:

* every lattice degree of freedom is one spin-1/2 "slot" holding one bit;
* basis index = sum_k bit_k * 2**k, slot 0 is the least significant bit;
* bit 1 means spin up (occupied site, flux-up link), index 0 is all-down;
* s^z eigenvalues are +1/2 (up) and -1/2 (down);
* operators are scipy CSR matrices in this basis, wrapped together with a
  basis tag so that mixing operators from different spaces fails loudly.

Slot assignment per layout kind:

* ``chain-obc``  : site n -> 2(n-1) for n=1..L, link (n,n+1) -> 2n-1 for
  n=1..L-1; total 2L-1 spins (sites and links interleave).
* ``chain-pbc``  : same, plus the boundary link (L,1) at slot 2L-1;
  total 2L spins.
* ``hierarchical``: top spins sigma_n at slots 0..L-1, middle spins tau_m
  (m = link (m,m+1), m=1..L-1) at slots L..2L-2, bottom spins s_j
  (j=2..L-1) at slots 2L-1..3L-4; total 3L-3 spins.
* ``square-2d``  : sites (x,y) row-major (x fastest) at slots
  0..Lx*Ly-1, then horizontal links (x+1/2,y) for x=1..Lx-1, then vertical
  links (x,y+1/2) for y=1..Ly-1; total 3*Lx*Ly - Lx - Ly spins.

Coordinates are 1-based, matching the analytic formulas they feed.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

LAYOUT_KINDS = ("chain-obc", "chain-pbc", "hierarchical", "square-2d")


class LayoutError(ValueError):
    """Raised for an unknown layout kind or an unbuildable size."""


class BasisMismatchError(ValueError):
    """Raised when operators tagged with different bases are combined."""


@dataclass(frozen=True)
class LatticeLayout:
    """Geometry plus the slot map for one lattice kind.

    Parameters
    ----------
    kind : str
        One of `LAYOUT_KINDS`.
    L : int
        Chain length, hierarchical length, or Lx for ``square-2d``.
    Ly : int or None
        Second dimension, ``square-2d`` only.
    """

    kind: str
    L: int
    Ly: int = 0

    def __post_init__(self):
        if self.kind not in LAYOUT_KINDS:
            raise LayoutError(f"unknown layout kind {self.kind!r}")
        if self.kind == "chain-obc" and self.L < 2:
            raise LayoutError("chain-obc needs L >= 2")
        if self.kind == "chain-pbc" and self.L < 3:
            raise LayoutError("chain-pbc needs L >= 3")
        if self.kind == "hierarchical" and self.L < 3:
            raise LayoutError("hierarchical needs L >= 3 (bottom layer empty otherwise)")
        if self.kind == "square-2d" and (self.L < 2 or self.Ly < 2):
            raise LayoutError("square-2d needs Lx >= 2 and Ly >= 2")
        if self.kind != "square-2d" and self.Ly:
            raise LayoutError(f"Ly only applies to square-2d, got Ly={self.Ly}")

    @property
    def total_spins(self):
        if self.kind == "chain-obc":
            return 2 * self.L - 1
        if self.kind == "chain-pbc":
            return 2 * self.L
        if self.kind == "hierarchical":
            return 3 * self.L - 3
        return 3 * self.L * self.Ly - self.L - self.Ly

    @property
    def nstates(self):
        return 1 << self.total_spins

    @property
    def basis_tag(self):
        return f"spins:{self.total_spins}"

    # -- chain slots -------------------------------------------------
    def site_slot(self, n):
        """Slot of site n (1-based), chain layouts."""
        self._need("chain-obc", "chain-pbc")
        if not 1 <= n <= self.L:
            raise LayoutError(f"site {n} outside 1..{self.L}")
        return 2 * (n - 1)

    def link_slot(self, n):
        """Slot of link (n, n+1); n = L means the boundary link (L, 1)."""
        self._need("chain-obc", "chain-pbc")
        nlinks = self.L - 1 if self.kind == "chain-obc" else self.L
        if not 1 <= n <= nlinks:
            raise LayoutError(f"link {n} outside 1..{nlinks}")
        return 2 * n - 1

    @property
    def n_links(self):
        self._need("chain-obc", "chain-pbc")
        return self.L - 1 if self.kind == "chain-obc" else self.L

    # -- hierarchical slots ------------------------------------------
    def top_slot(self, n):
        """Slot of top-layer spin sigma_n, n=1..L."""
        self._need("hierarchical")
        if not 1 <= n <= self.L:
            raise LayoutError(f"top spin {n} outside 1..{self.L}")
        return n - 1

    def mid_slot(self, m):
        """Slot of middle-layer spin tau on link (m, m+1), m=1..L-1."""
        self._need("hierarchical")
        if not 1 <= m <= self.L - 1:
            raise LayoutError(f"mid spin {m} outside 1..{self.L - 1}")
        return self.L + m - 1

    def bot_slot(self, j):
        """Slot of bottom-layer spin s_j, j=2..L-1."""
        self._need("hierarchical")
        if not 2 <= j <= self.L - 1:
            raise LayoutError(f"bot spin {j} outside 2..{self.L - 1}")
        return 2 * self.L - 1 + (j - 2)

    # -- square-2d slots ---------------------------------------------
    def site_slot_2d(self, x, y):
        """Slot of site (x, y), x=1..Lx, y=1..Ly."""
        self._need("square-2d")
        self._check_xy(x, y, self.L, self.Ly)
        return (y - 1) * self.L + (x - 1)

    def hlink_slot(self, x, y):
        """Slot of horizontal link (x+1/2, y), x=1..Lx-1."""
        self._need("square-2d")
        self._check_xy(x, y, self.L - 1, self.Ly)
        return self.L * self.Ly + (y - 1) * (self.L - 1) + (x - 1)

    def vlink_slot(self, x, y):
        """Slot of vertical link (x, y+1/2), y=1..Ly-1."""
        self._need("square-2d")
        self._check_xy(x, y, self.L, self.Ly - 1)
        return self.L * self.Ly + (self.L - 1) * self.Ly + (y - 1) * self.L + (x - 1)

    # -- generic labels ----------------------------------------------
    def slot_labels(self):
        """Human-readable label per slot, index-aligned with the slot map."""
        lab = [None] * self.total_spins
        if self.kind in ("chain-obc", "chain-pbc"):
            for n in range(1, self.L + 1):
                lab[self.site_slot(n)] = f"site:{n}"
            for m in range(1, self.n_links + 1):
                other = m + 1 if m < self.L else 1
                lab[self.link_slot(m)] = f"link:{m}-{other}"
        elif self.kind == "hierarchical":
            for n in range(1, self.L + 1):
                lab[self.top_slot(n)] = f"top:{n}"
            for m in range(1, self.L):
                lab[self.mid_slot(m)] = f"mid:{m}-{m + 1}"
            for j in range(2, self.L):
                lab[self.bot_slot(j)] = f"bot:{j}"
        else:
            for y in range(1, self.Ly + 1):
                for x in range(1, self.L + 1):
                    lab[self.site_slot_2d(x, y)] = f"site:{x},{y}"
            for y in range(1, self.Ly + 1):
                for x in range(1, self.L):
                    lab[self.hlink_slot(x, y)] = f"hlink:{x}+,{y}"
            for y in range(1, self.Ly):
                for x in range(1, self.L + 1):
                    lab[self.vlink_slot(x, y)] = f"vlink:{x},{y}+"
        return lab

    def _need(self, *kinds):
        if self.kind not in kinds:
            raise LayoutError(f"slot map not defined for {self.kind!r}")

    @staticmethod
    def _check_xy(x, y, xmax, ymax):
        if not (1 <= x <= xmax and 1 <= y <= ymax):
            raise LayoutError(f"coordinate ({x},{y}) outside 1..{xmax} x 1..{ymax}")


def build_layout(kind, L, Ly=0):
    """Validated `LatticeLayout` factory."""
    return LatticeLayout(kind, L, Ly)


def state_bit(state, slot):
    """Bit of `state` at `slot` (works on scalars and arrays)."""
    return (state >> slot) & 1


def format_state(layout, state):
    """Render a basis state as label=bit pairs, slot order."""
    bits = [(state >> k) & 1 for k in range(layout.total_spins)]
    return " ".join(f"{lab}={'1' if b else '0'}"
                    for lab, b in zip(layout.slot_labels(), bits))


class SparseOperator:
    """A scipy CSR matrix carrying the tag of the basis it acts on.

    Kept canonical: sorted indices, duplicates summed, stored zeros pruned.
    Treat instances as immutable; operations return new objects.
    """

    __slots__ = ("matrix", "basis")

    def __init__(self, matrix, basis):
        m = sp.csr_matrix(matrix, dtype=np.complex128)
        m.sum_duplicates()
        m.sort_indices()
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1]:
            raise BasisMismatchError(f"operator must be square, got {m.shape}")
        self.matrix = m
        self.basis = basis

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def nnz(self):
        return self.matrix.nnz

    def toarray(self):
        return self.matrix.toarray()

    def diagonal(self):
        return self.matrix.diagonal()

    def apply(self, vec):
        return self.matrix @ vec

    def adjoint(self):
        return SparseOperator(self.matrix.conjugate().transpose(), self.basis)

    def scale(self, c):
        return SparseOperator(self.matrix * c, self.basis)

    def frobenius_norm(self):
        return float(np.linalg.norm(self.matrix.data)) if self.matrix.nnz else 0.0

    def is_hermitian(self, tol=1e-12):
        d = self.matrix - self.matrix.conjugate().transpose()
        return (np.abs(d.data).max() if d.nnz else 0.0) <= tol

    def _check(self, other):
        if not isinstance(other, SparseOperator):
            raise TypeError(f"expected SparseOperator, got {type(other).__name__}")
        if other.basis != self.basis or other.dim != self.dim:
            raise BasisMismatchError(
                f"basis mismatch: {self.basis!r} (dim {self.dim}) vs "
                f"{other.basis!r} (dim {other.dim})")

    def __add__(self, other):
        self._check(other)
        return SparseOperator(self.matrix + other.matrix, self.basis)

    def __sub__(self, other):
        self._check(other)
        return SparseOperator(self.matrix - other.matrix, self.basis)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1.0)

    def __matmul__(self, other):
        self._check(other)
        return SparseOperator(self.matrix @ other.matrix, self.basis)

    def __repr__(self):
        return f"SparseOperator(dim={self.dim}, nnz={self.nnz}, basis={self.basis!r})"


def commutator(a, b):
    """[a, b] with basis checking."""
    return (a @ b) - (b @ a)


def identity_operator(total_spins):
    n = 1 << total_spins
    return SparseOperator(sp.identity(n, dtype=np.complex128, format="csr"),
                          f"spins:{total_spins}")


def diagonal_operator(total_spins, values):
    """Diagonal operator from a length-2**total_spins value array."""
    n = 1 << total_spins
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != (n,):
        raise BasisMismatchError(f"need {n} diagonal values, got {values.shape}")
    return SparseOperator(sp.diags(values, format="csr"), f"spins:{total_spins}")


def single_spin_operator(total_spins, slot, which):
    """s^+, s^- or s^z acting on one slot of a 2**total_spins space.

    Parameters
    ----------
    total_spins : int
    slot : int
        Bit position, 0-based.
    which : str
        "+", "-" or "z".
    """
    if not 0 <= slot < total_spins:
        raise LayoutError(f"slot {slot} outside 0..{total_spins - 1}")
    n = 1 << total_spins
    idx = np.arange(n, dtype=np.int64)
    bit = (idx >> slot) & 1
    tag = f"spins:{total_spins}"
    if which == "z":
        return SparseOperator(sp.diags(bit - 0.5, format="csr"), tag)
    if which == "+":
        cols = idx[bit == 0]
        rows = cols | (1 << slot)
    elif which == "-":
        cols = idx[bit == 1]
        rows = cols & ~(1 << slot)
    else:
        raise LayoutError(f"unknown spin operator {which!r}")
    data = np.ones(cols.size, dtype=np.complex128)
    return SparseOperator(sp.csr_matrix((data, (rows, cols)), shape=(n, n)), tag)


def transition_operator(total_spins, plus_slots, minus_slots, amplitude=1.0):
    """amplitude * prod s^+_(plus_slots) * prod s^-_(minus_slots).

    All slots must be distinct; built in one pass instead of multiplying
    single-spin factors. The h.c. partner is `.adjoint()`.
    """
    slots = tuple(plus_slots) + tuple(minus_slots)
    if len(set(slots)) != len(slots):
        raise LayoutError(f"repeated slot in transition {plus_slots}/{minus_slots}")
    n = 1 << total_spins
    idx = np.arange(n, dtype=np.int64)
    keep = np.ones(n, dtype=bool)
    flip = 0
    for s in plus_slots:
        keep &= ((idx >> s) & 1) == 0
        flip |= 1 << s
    for s in minus_slots:
        keep &= ((idx >> s) & 1) == 1
        flip |= 1 << s
    cols = idx[keep]
    rows = cols ^ flip
    data = np.full(cols.size, amplitude, dtype=np.complex128)
    return SparseOperator(sp.csr_matrix((data, (rows, cols)), shape=(n, n)),
                          f"spins:{total_spins}")
