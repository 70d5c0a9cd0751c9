"""Shared fixtures: synthetic images, datasets, and CLI plumbing."""
import os
import subprocess
import sys

import numpy as np
import pytest

from stegnet.data import GrayImage, Pair, PairedDataset, embed_simulate


def blur5(a):
    """5x5 edge-clamped mean filter (test-side smoothing helper)."""
    p = np.pad(a, 2, mode="edge")
    out = np.zeros(a.shape, dtype=np.float64)
    for dy in range(5):
        for dx in range(5):
            out += p[dy : dy + a.shape[0], dx : dx + a.shape[1]]
    return out / 25.0


def textured_cover(rng, size=64):
    """Locally smooth, globally varied synthetic cover: a coarse random
    grid upsampled and blurred, then quantized to u8."""
    coarse = rng.uniform(30.0, 225.0, size=(size // 8 + 1, size // 8 + 1))
    up = np.kron(coarse, np.ones((8, 8)))[:size, :size]
    return GrayImage.from_array(np.clip(np.rint(blur5(blur5(up))), 0, 255).astype(np.uint8))


def noisy_stego(cover, rng, amplitude=30):
    """Cover plus strong uniform pixel noise (a deliberately easy class)."""
    noise = rng.integers(-amplitude, amplitude + 1, size=(cover.height, cover.width))
    arr = np.clip(cover.as_array().astype(np.int16) + noise, 0, 255).astype(np.uint8)
    return GrayImage.from_array(arr)


def embedded_split(rng, count, split, payload, seed0, size=64):
    """A PairedDataset of textured covers with simulated +-1 stegos."""
    pairs = []
    for i in range(count):
        cover = textured_cover(rng, size)
        stego = embed_simulate(cover, payload, seed0 + i)
        pairs.append(Pair(cover, stego, f"{split}{i}"))
    return PairedDataset(pairs=pairs, split=split)


def noisy_split(rng, count, split, size=64, amplitude=30, id_prefix=None):
    """A PairedDataset of textured covers with noise-burst stegos."""
    pairs = []
    for i in range(count):
        cover = textured_cover(rng, size)
        stego = noisy_stego(cover, rng, amplitude)
        pairs.append(Pair(cover, stego, f"{id_prefix or split}{i}"))
    return PairedDataset(pairs=pairs, split=split)


def run_cli(*args, timeout=600):
    """Run the CLI in a fresh interpreter; returns CompletedProcess."""
    cmd = [sys.executable, "-c", "from stegnet.cli import main; main()", *map(str, args)]
    return subprocess.run(cmd, capture_output=True, text=True, timeout=timeout,
                          env=dict(os.environ))


@pytest.fixture(scope="session")
def small_rng():
    return np.random.Generator(np.random.PCG64(1234))
