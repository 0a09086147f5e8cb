"""Recurrent set encoders and the initialization modulator.

Two gated-recurrent autoencoders summarize the raw and the enriched
prototype sets into fixed-size task vectors and supply reconstruction
penalties; the modulator turns the concatenated task vectors into a
per-parameter transform of the shared initialization.

The recurrent cell is the standard update/reset/candidate form,
``h' = (1 - u) h + u c``; prototypes are consumed in ascending index order
from a zero state, and decoding is free-running (first input zero, then the
previous reconstruction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ConfigError

MODULATION_MODES = ("sigmoid", "tanh", "film")


@dataclass
class GruCell:
    """Gate parameters; decoders additionally carry an output head."""

    Wu: Var  # (d_in, d_h)
    Uu: Var  # (d_h, d_h)
    bu: Var  # (1, d_h)
    Wr: Var
    Ur: Var
    br: Var
    Wc: Var
    Uc: Var
    bc: Var
    Wo: Var | None = None  # (d_h, d_out), decoders only
    bo: Var | None = None  # (1, d_out)


@dataclass
class Modulator:
    W: Var   # (2 d_h, P)
    b: Var   # (1, P)
    mode: str = "sigmoid"
    W2: Var | None = None  # shift head, film only
    b2: Var | None = None


def gru_step(cell: GruCell, h: Var, x: Var) -> Var:
    """One recurrent update; convex gate mixing keeps h in (-1, 1)."""
    u = ad.sigmoid(ad.add(ad.add(ad.matmul(x, cell.Wu), ad.matmul(h, cell.Uu)), cell.bu))
    r = ad.sigmoid(ad.add(ad.add(ad.matmul(x, cell.Wr), ad.matmul(h, cell.Ur)), cell.br))
    c = ad.tanh(ad.add(ad.add(ad.matmul(x, cell.Wc), ad.matmul(ad.mul(r, h), cell.Uc)), cell.bc))
    # (1-u) h + u c, written as h + u (c - h)
    return ad.add(h, ad.mul(u, ad.sub(c, h)))


def encode_aggregate(encoder: GruCell, decoder: GruCell, prototypes: Var) -> tuple[Var, Var]:
    """Summarize a (K, d) prototype set.

    Returns (repr, recon_loss): repr is the mean of the K encoder states,
    recon_loss the squared Frobenius norm between the set and the K
    free-running decoder outputs.
    """
    tape = prototypes.tape
    k, d = prototypes.shape
    d_h = encoder.Uu.shape[0]

    h = tape.constant(np.zeros((1, d_h)))
    states = []
    for i in range(k):
        h = gru_step(encoder, h, ad.slice_rows(prototypes, i, i + 1))
        states.append(h)
    pooled = states[0] if k == 1 else ad.col_mean(ad.concat_rows(*states))

    hd = h
    x = tape.constant(np.zeros((1, d)))
    outs = []
    for _ in range(k):
        hd = gru_step(decoder, hd, x)
        x = ad.add(ad.matmul(hd, decoder.Wo), decoder.bo)
        outs.append(x)
    recon = outs[0] if k == 1 else ad.concat_rows(*outs)
    loss = ad.sq_frobenius(ad.sub(prototypes, recon))
    return pooled, loss


def modulate(mod: Modulator, q: Var, t: Var, theta0_flat: Var) -> tuple[Var, Var]:
    """Task-condition the flat initialization vector.

    The conditioning input is t then q, concatenated in that order.
    Returns (theta0i_flat, gate); for film the "gate" is the scale head.
    """
    if mod.mode not in MODULATION_MODES:
        raise ConfigError(f"unknown modulation mode '{mod.mode}'")
    z = ad.concat_cols(t, q)
    lin = ad.add(ad.matmul(z, mod.W), mod.b)
    if mod.mode == "sigmoid":
        gate = ad.sigmoid(lin)
        return ad.mul(gate, theta0_flat), gate
    if mod.mode == "tanh":
        gate = ad.tanh(lin)
        return ad.mul(gate, theta0_flat), gate
    shift = ad.add(ad.matmul(z, mod.W2), mod.b2)
    return ad.add(ad.mul(lin, theta0_flat), shift), lin
