"""Per-sample probability store with momentum updates."""
import struct

import numpy as np

_MAGIC = b"CRLCBANK"
_HEADER = struct.Struct("<8sQQd")


class MemoryBank:
    """N x C matrix of cluster-assignment probabilities.

    Rows start uniform and move toward fresh predictions with
    ``row <- alpha * row + (1 - alpha) * q_new``. Negatives are drawn
    uniformly with replacement from rows other than the anchor's own.
    """

    def __init__(self, N: int, C: int, alpha: float = 0.5, seed: int = 0):
        if N < 1 or C < 2:
            raise ValueError(f"memory bank needs N >= 1 and C >= 2, got N={N}, C={C}")
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"momentum must lie in [0, 1], got {alpha}")
        self.N, self.C, self.alpha, self.seed = int(N), int(C), float(alpha), seed
        self.rows = np.full((self.N, self.C), 1.0 / self.C)
        self.rng = np.random.default_rng(seed)

    def update(self, n, q_new):
        """Momentum update of row(s) ``n``; ``n`` may be an index array."""
        idx = np.asarray(n)
        if np.any(idx < 0) or np.any(idx >= self.N):
            raise IndexError(f"bank row index out of range [0, {self.N})")
        self.rows[idx] = self.alpha * self.rows[idx] + (1.0 - self.alpha) * np.asarray(q_new)

    def sample_negatives(self, M: int, exclude: int):
        """Draw ``M - 1`` rows, never ``exclude``. Returns ``(indices, rows)``."""
        idx = self.sample_indices(M - 1, np.array([exclude]))[0]
        return idx, self.rows[idx]

    def sample_indices(self, k: int, exclude):
        """``k`` uniform draws per entry of ``exclude``, skipping that entry.

        A draw ``j`` from ``[0, N - 1)`` maps to ``j + (j >= exclude)``.
        """
        exclude = np.asarray(exclude, dtype=np.int64)
        if self.N < 2:
            raise ValueError("cannot sample negatives from a single-row bank")
        if k < 0:
            raise ValueError("number of negatives must be nonnegative")
        if np.any(exclude < 0) or np.any(exclude >= self.N):
            raise IndexError("excluded index out of range")
        j = self.rng.integers(0, self.N - 1, size=(len(exclude), k))
        return j + (j >= exclude[:, None])

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, self.N, self.C, self.alpha))
            fh.write(np.ascontiguousarray(self.rows, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, seed: int = 0) -> "MemoryBank":
        with open(path, "rb") as fh:
            raw = fh.read()
        magic, N, C, alpha = _HEADER.unpack_from(raw)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a memory bank checkpoint")
        bank = cls(N, C, alpha, seed)
        body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
        if body.size != N * C:
            raise ValueError(f"{path}: truncated memory bank checkpoint")
        bank.rows = body.reshape(N, C).astype(np.float64)
        return bank


def bank_init(N: int, C: int, alpha: float = 0.5, seed: int = 0) -> MemoryBank:
    return MemoryBank(N, C, alpha, seed)


def bank_update(bank: MemoryBank, n: int, q_new) -> None:
    bank.update(n, q_new)


def bank_sample_negatives(bank: MemoryBank, M: int, exclude: int):
    return bank.sample_negatives(M, exclude)
