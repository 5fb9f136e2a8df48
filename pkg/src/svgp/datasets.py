"""Synthetic data generators."""

from __future__ import annotations

import numpy as np
import torch

from .gauss import DTYPE, cholesky
from .kernels import RBF

# 5x7 uppercase glyphs, '#' = dark pixel
FONT_5X7 = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "B": ("####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "I": (".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"),
    "O": (".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "Q": (".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "V": ("#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."),
    "X": ("#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
}
GLYPH_W, GLYPH_H = 5, 7


def lit_pixels(text: str) -> list[tuple[int, int]]:
    """(column, row) of every dark pixel, glyphs laid out with one blank column between them."""
    pixels = []
    for i, ch in enumerate(text.upper()):
        if ch == " ":
            continue
        if ch not in FONT_5X7:
            raise ValueError(f"no glyph for character {ch!r}")
        for r, line in enumerate(FONT_5X7[ch]):
            for c, px in enumerate(line):
                if px == "#":
                    pixels.append((i * (GLYPH_W + 1) + c, r))
    return pixels


def letters(text: str = "DGP", scale: int = 1, noise: float = 0.0, seed: int = 0):
    """Points at the dark pixels of ``text``, mapped into the unit square.

    Each pixel contributes ``scale**2`` points at its sub-pixel centers;
    ``noise`` adds isotropic Gaussian jitter in normalized units.
    """
    if scale < 1 or noise < 0:
        raise ValueError("scale must be >= 1 and noise >= 0")
    text = text.upper()
    width = len(text) * (GLYPH_W + 1) - 1
    sub = (np.arange(scale) + 0.5) / scale
    xs, ys = [], []
    for c, r in lit_pixels(text):
        for dx in sub:
            for dy in sub:
                xs.append((c + dx) / width)
                ys.append(1.0 - (r + dy) / GLYPH_H)
    X = np.array(xs)[:, None]
    y = np.array(ys)[:, None]
    if noise:
        rng = np.random.default_rng(seed)
        X = X + noise * rng.standard_normal(X.shape)
        y = y + noise * rng.standard_normal(y.shape)
    return X, y


def steps(n: int = 200, n_steps: int = 4, noise: float = 0.05, low: float = -1.0, high: float = 1.0, seed: int = 0):
    """Piecewise-constant signal alternating between 0 and 1 on equal-width pieces."""
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(low, high, n))
    piece = np.minimum(((x - low) / (high - low) * n_steps).astype(int), n_steps - 1)
    y = (piece % 2).astype(float) + noise * rng.standard_normal(n)
    return x[:, None], y[:, None]


def mixture(n: int = 500, gap: float = 2.0, noise: float = 0.1, low: float = -3.0, high: float = 3.0, seed: int = 0):
    """Two smooth branches sin(x) +/- gap/2; each point picks a branch with probability 1/2."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, n)
    branch = rng.integers(0, 2, n)
    y = np.sin(x) + np.where(branch == 1, 0.5 * gap, -0.5 * gap) + noise * rng.standard_normal(n)
    return x[:, None], y[:, None]


def prior_draws(grid, depth: int = 1, n_draws: int = 1, variance: float = 1.0, lengthscale: float = 0.7,
                seed: int = 0) -> np.ndarray:
    """Joint samples of a zero-mean RBF deep GP prior at ``grid``; shape (n_draws, len(grid)).

    Layer l+1 is evaluated at the sampled outputs of layer l.
    """
    if depth < 1 or n_draws < 1:
        raise ValueError("depth and n_draws must be positive")
    grid = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
    rng = np.random.default_rng([seed, depth])
    kernel = RBF(1, variance, lengthscale)
    G = grid.shape[0]
    with torch.no_grad():
        F = torch.as_tensor(grid, dtype=DTYPE).expand(n_draws, G, 1)
        for _ in range(depth):
            L = cholesky(kernel.K(F)).lower
            eps = torch.as_tensor(rng.standard_normal((n_draws, G, 1)), dtype=DTYPE)
            F = L @ eps
    return F[..., 0].numpy()


GENERATORS = {"steps": steps, "mixture": mixture, "letters": letters}
