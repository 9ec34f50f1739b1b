"""Counter-based random streams.

Every Monte Carlo path owns a Philox generator keyed by the run seed with the
path index in the high counter word, so a path's draws depend only on
(seed, path index) and never on how paths are batched across workers.
"""
from typing import Sequence

import numpy as np

# Each path's counter block starts at path_id * 2**192; no realistic run wraps it.
_STREAM_WORD = 3


def path_generator(seed: int, path_id: int, substream: int = 0) -> np.random.Generator:
    counter = np.zeros(4, dtype=np.uint64)
    counter[_STREAM_WORD] = np.uint64(path_id)
    counter[_STREAM_WORD - 1] = np.uint64(substream)
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0x5EEB_D1FF], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


class PathNoise:
    """Hands out per-path normal/uniform blocks for a batch of path ids.

    Draws are made chunk by chunk from each path's own stream, so the values
    a path sees at step n are identical whatever the batch composition.
    """

    def __init__(
        self,
        seed: int,
        path_ids: Sequence[int],
        chunk: int = 512,
        substream: int = 0,
        with_uniforms: bool = True,
    ):
        self.path_ids = np.asarray(path_ids, dtype=np.int64)
        self.generators = [path_generator(seed, int(i), substream) for i in self.path_ids]
        self.chunk = int(chunk)
        self.with_uniforms = with_uniforms
        self._normals: np.ndarray | None = None
        self._uniforms: np.ndarray | None = None
        self._cursor = self.chunk

    def _refill(self) -> None:
        n = len(self.generators)
        normals = np.empty((n, self.chunk))
        uniforms = np.empty((n, self.chunk)) if self.with_uniforms else None
        for row, gen in enumerate(self.generators):
            normals[row] = gen.standard_normal(self.chunk)
            if uniforms is not None:
                uniforms[row] = gen.random(self.chunk)
        self._normals, self._uniforms = normals, uniforms
        self._cursor = 0

    def next(self) -> tuple[np.ndarray, np.ndarray | None]:
        """One standard normal and (optionally) one uniform per path for the next step."""
        if self._cursor >= self.chunk:
            self._refill()
        column = self._cursor
        self._cursor += 1
        uniforms = None if self._uniforms is None else self._uniforms[:, column]
        return self._normals[:, column], uniforms

    def select(self, mask: np.ndarray) -> None:
        """Keep only the paths where ``mask`` is True; their streams continue unchanged."""
        mask = np.asarray(mask, dtype=bool)
        self.path_ids = self.path_ids[mask]
        self.generators = [g for g, keep in zip(self.generators, mask) if keep]
        if self._normals is not None:
            self._normals = self._normals[mask]
        if self._uniforms is not None:
            self._uniforms = self._uniforms[mask]


def initial_uniforms(seed: int, path_ids: Sequence[int], substream: int = 1) -> np.ndarray:
    """One uniform per path from a stream separate from the step noise."""
    return np.array([path_generator(seed, int(i), substream).random() for i in path_ids])


def path_blocks(n_paths: int, block_size: int) -> list[np.ndarray]:
    """Fixed partition of path ids; it never depends on the worker count."""
    ids = np.arange(n_paths, dtype=np.int64)
    return [ids[i:i + block_size] for i in range(0, n_paths, block_size)]
