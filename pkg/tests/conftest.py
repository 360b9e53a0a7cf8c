import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from mflab.coefficients import porous_media_coefficients
from mflab.controls import ControlMember
from mflab.particles import SimConfig
from mflab.spaces import Constants, Field, SpaceConfig


def make_constants(q: float, T: float = 0.25, lam: float = 30.0) -> Constants:
    return Constants(
        T=T,
        lam=lam,
        alpha=q,
        gamma=q / (q - 1.0),
        beta=4.0,
        eta=2.5,
        rho=1.5 if q < 2.5 else 2.0,
    )


def make_space(q: float = 3.0, J: int = 32, T: float = 0.25, lam: float = 30.0) -> SpaceConfig:
    return SpaceConfig(J=J, domain_length=1.0, q=q, constants=make_constants(q, T, lam))


def make_cs(space, sigma0: float = 0.25, tau: float = 2.0, interaction: bool = True):
    return porous_media_coefficients(
        space,
        sigma0=sigma0,
        tau=tau,
        bump_width=0.125,
        action_coords=[-1.0, 0.0, 1.0],
        interaction=interaction,
    )


def sine_state(space, amplitude: float = 0.6, mode: int = 1) -> Field:
    u = space.grid
    return Field(space, amplitude * np.sin(mode * np.pi * u / space.domain_length))


@pytest.fixture
def space():
    return make_space()


@pytest.fixture
def cs(space):
    return make_cs(space)


@pytest.fixture
def x0(space):
    return sine_state(space)


@pytest.fixture
def dirac_up():
    return ControlMember(name="push_up", kind="dirac", action=2)


@pytest.fixture
def sim_cfg():
    # M sized for explicit stability at J = 32, q = 3, amplitudes below one
    return SimConfig(
        n_particles=16, M_steps=2048, rng_seed=42, noise_modes=4, save_every=512
    )
