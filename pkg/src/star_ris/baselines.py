"""Reference schemes built on the penalty solver with extra amplitude structure."""

from __future__ import annotations

import numpy as np

from .model import ChannelSet, ContractViolation, ProblemSpec, Protocol, conventional_pattern
from .penalty import PenaltyOptions, solve_penalty


def solve_conventional_ris(spec: ProblemSpec, channels: ChannelSet, options: PenaltyOptions = PenaltyOptions(),
                           rng: np.random.Generator | None = None):
    """Adjacent reflect-only and transmit-only surfaces, each with half the elements.

    Amplitudes are frozen to ``[1..1 0..0]`` (T) and ``[0..0 1..1]`` (R); only
    phases and beamformers are optimised.
    """
    if spec.M % 2:
        raise ContractViolation("the conventional-RIS baseline needs an even M")
    spec = spec.with_protocol(Protocol.CONV_RIS)
    return solve_penalty(spec, channels, options, rng=rng, fixed_beta=conventional_pattern(spec.M))


def solve_ues(spec: ProblemSpec, channels: ChannelSet, options: PenaltyOptions = PenaltyOptions(),
              rng: np.random.Generator | None = None):
    """Energy splitting with one amplitude split shared by all elements."""
    return solve_penalty(spec.with_protocol(Protocol.UES), channels, options, rng=rng)
