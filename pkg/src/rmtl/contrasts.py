"""Hypothesis matrices for RMTL contrasts and their split into local blocks.

Columns are ordered group-major: column ``i * M + (m - 1)`` refers to the
RMTL of cause ``m`` in group ``i`` (0-based group index).
"""

from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContrastError, DomainError
from .numerics import numeric_rank

MODES = ("all_events", "per_event", "selected_events")


@dataclass
class ContrastSpec:
    """Hypothesis matrix ``H``, offset ``c`` and a row partition into blocks.

    ``block_starts`` lists the first row of every block; blocks are
    contiguous and cover all rows.
    """

    H: np.ndarray
    c: np.ndarray = None
    block_starts: list = None
    labels: list = None
    name: str = "custom"
    mode: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        r = self.H.shape[0]
        self.c = np.zeros(r) if self.c is None else np.asarray(self.c, dtype=float).reshape(-1)
        if self.block_starts is None:
            self.block_starts = [0]
        self.block_starts = [int(s) for s in self.block_starts]
        if self.labels is None:
            self.labels = [f"H{ell + 1}" for ell in range(len(self.block_starts))]
        self.labels = [str(x) for x in self.labels]

    @property
    def r(self):
        return self.H.shape[0]

    @property
    def L(self):
        return len(self.block_starts)

    def block_slices(self):
        ends = self.block_starts[1:] + [self.r]
        return [slice(s, e) for s, e in zip(self.block_starts, ends)]

    def blocks(self):
        """List of ``(H_l, c_l)`` pairs."""
        return [(self.H[s], self.c[s]) for s in self.block_slices()]

    def with_offset(self, c):
        return ContrastSpec(self.H, c, list(self.block_starts), list(self.labels),
                            self.name, self.mode, dict(self.meta))

    def to_dict(self):
        return {
            "name": self.name,
            "mode": self.mode,
            "H": self.H.tolist(),
            "c": self.c.tolist(),
            "blocks": [
                {"label": lab, "rows": [s.start, s.stop]}
                for lab, s in zip(self.labels, self.block_slices())
            ],
        }


def find_violations(spec, k, M, tol=1e-12):
    """Return a list of human-readable invariant violations (empty if valid)."""
    problems = []
    H = spec.H
    if H.ndim != 2 or H.shape[1] != k * M:
        return [f"H has shape {H.shape}, expected (r, {k * M}) for k={k}, M={M}"]
    if spec.c.shape != (H.shape[0],):
        problems.append(f"c has length {spec.c.size}, expected {H.shape[0]}")
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(spec.c)):
        problems.append("H and c must be finite")
        return problems
    if not np.any(H):
        problems.append("H is the zero matrix")
    for m in range(M):
        ones = np.kron(np.ones(k), np.eye(M)[m])
        resid = H @ ones
        bad = np.flatnonzero(np.abs(resid) > tol * max(1.0, np.abs(H).max()))
        for row in bad:
            problems.append(
                f"row {row} violates the contrast property for cause {m + 1} "
                f"(H(1_k x e_{m + 1}) = {resid[row]:.3g})"
            )
    starts = spec.block_starts
    if not starts or starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])) \
            or starts[-1] >= H.shape[0]:
        problems.append(f"block_starts {starts} do not partition rows 0..{H.shape[0] - 1}")
    else:
        if len(spec.labels) != len(starts):
            problems.append(f"{len(spec.labels)} labels for {len(starts)} blocks")
        for ell, sl in enumerate(spec.block_slices()):
            Hl = H[sl]
            if numeric_rank(Hl @ Hl.T) == 0:
                problems.append(f"block {ell} (rows {sl.start}..{sl.stop - 1}) has rank 0")
    return problems


def validate(spec, k, M):
    """Raise :class:`ContrastError` listing every violated invariant."""
    problems = find_violations(spec, k, M)
    if problems:
        raise ContrastError(problems)
    return spec


def dunnett(k):
    """Many-to-one contrasts ``[-1_{k-1}, I_{k-1}]`` against group 1."""
    if k < 2:
        raise DomainError("Dunnett contrasts need k >= 2")
    return np.hstack([-np.ones((k - 1, 1)), np.eye(k - 1)])


def dunnett_labels(k):
    return [f"{j}-1" for j in range(2, k + 1)]


def tukey(k):
    """All-pairs contrasts; row for the pair ``i < j`` has -1 at ``i``, +1 at ``j``."""
    if k < 2:
        raise DomainError("Tukey contrasts need k >= 2")
    rows = []
    for i in range(k):
        for j in range(i + 1, k):
            row = np.zeros(k)
            row[i], row[j] = -1.0, 1.0
            rows.append(row)
    return np.array(rows)


def tukey_labels(k):
    return [f"{j + 1}-{i + 1}" for i in range(k) for j in range(i + 1, k)]


def factorial_2x2():
    """Main effects A, B and interaction AB for groups (A1B1, A1B2, A2B1, A2B2)."""
    return {
        "A": np.array([1.0, 1.0, -1.0, -1.0]),
        "B": np.array([1.0, -1.0, 1.0, -1.0]),
        "AB": np.array([1.0, -1.0, -1.0, 1.0]),
    }


def expand(group_matrix, M, mode="all_events", causes=None, row_labels=None, c=None,
           name="custom"):
    """Lift a contrast matrix over groups to the ``k * M`` RMTL vector.

    ``all_events`` makes one block ``h_l (x) I_M`` per row ``h_l``;
    ``per_event`` makes a one-row block ``h_l (x) e_m^T`` per row and cause;
    ``selected_events`` does the same restricted to ``causes`` (1-based).
    """
    h = np.atleast_2d(np.asarray(group_matrix, dtype=float))
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}")
    if row_labels is None:
        row_labels = [f"h{ell + 1}" for ell in range(h.shape[0])]
    if mode == "all_events":
        H = np.kron(h, np.eye(M))
        starts = [ell * M for ell in range(h.shape[0])]
        labels = list(row_labels)
    else:
        if mode == "per_event":
            causes = list(range(1, M + 1))
        else:
            causes = sorted({int(m) for m in (causes or [])})
            if not causes:
                raise DomainError("selected_events needs a nonempty cause selection")
            if causes[0] < 1 or causes[-1] > M:
                raise DomainError(f"selected causes must lie in 1..{M}")
        E = np.eye(M)[[m - 1 for m in causes]]
        rows, labels = [], []
        for ell, hl in enumerate(h):
            for m, e in zip(causes, E):
                rows.append(np.kron(hl, e))
                labels.append(f"{row_labels[ell]}:cause{m}")
        H = np.array(rows)
        starts = list(range(len(rows)))
    return ContrastSpec(H, c, starts, labels, name=name, mode=mode,
                        meta={"causes": causes} if mode != "all_events" else {})


def builtin(name, k, M, mode="all_events", causes=None):
    """Named contrast family (``dunnett``, ``tukey`` or ``2x2``) expanded and validated."""
    if name == "dunnett":
        h, labels = dunnett(k), dunnett_labels(k)
    elif name == "tukey":
        h, labels = tukey(k), tukey_labels(k)
    elif name == "2x2":
        if k != 4:
            raise DomainError(f"the 2x2 design needs k = 4 groups, got {k}")
        rows = factorial_2x2()
        h, labels = np.array(list(rows.values())), list(rows)
    else:
        raise DomainError(f"unknown contrast family {name!r}")
    spec = expand(h, M, mode=mode, causes=causes, row_labels=labels, name=name)
    return validate(spec, k, M)
