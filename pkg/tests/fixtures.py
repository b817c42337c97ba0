"""Deterministic image fixtures shared by tests and the golden recorder."""

import torch


def checkerboard(size=32, square=4, channels=3):
    idx = torch.arange(size)
    board = ((idx[:, None] // square + idx[None, :] // square) % 2).float() * 2 - 1
    return board.expand(channels, size, size).clone()


def ramp(size=32, channels=3):
    row = torch.linspace(-1, 1, size)
    return row.expand(channels, size, size).clone()


def edge_fixture(size=16):
    """Dark left half, bright right half, plus a bright square in the dark half."""
    img = torch.full((3, size, size), -1.0)
    img[:, :, size // 2 :] = 1.0
    img[:, 2:6, 2:6] = 0.5
    img[1] *= 0.5
    return img
