"""Acceptance suite: one test per criterion, each printing PASS/FAIL.

These are the exit criteria of the package, run against the shipped default
configuration (tolerances pinned here, not calibrated at test time).  The
experiment machinery used is exactly what the CLI runs; nothing is mocked.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines.
"""

import itertools
import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import make_cs, make_space
from mflab.cli import EXIT_OK, main as cli_main
from mflab.config import load_config
from mflab.coefficients import EmpiricalFieldMeasure
from mflab.controls import ControlMember
from mflab.experiments import (
    run_chaos,
    run_condition_check,
    run_hausdorff,
    run_heat_oracle,
    run_martingale,
    run_moments,
    run_value,
)
from mflab.measures import (
    LawSet,
    OuterLaw,
    exact_ot,
    hausdorff,
    wasserstein_fields,
    wasserstein_outer,
    wasserstein_paths,
)
from mflab.particles import SimConfig, simulate_particles
from mflab.rng import generator, master_key
from mflab.spaces import signed_power

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


def report(number: int, name: str, passed: bool, detail: str = "") -> None:
    flag = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:2d} {name}: {flag}"
    if detail:
        line += f"  ({detail})"
    print(line)


@pytest.fixture(scope="module")
def rc():
    return load_config(CONFIG_DIR / "default.yaml")


def test_01_heat_equation_oracle(rc, tmp_path):
    start = time.time()
    outcome = run_heat_oracle(rc, {}, tmp_path, "heat")
    elapsed = time.time() - start
    spatial = outcome.metrics["spatial_orders"]
    temporal = outcome.metrics["temporal_orders"]
    passed = (
        all(o >= 1.8 for o in spatial)
        and all(o >= 0.9 for o in temporal)
        and elapsed < 10.0
    )
    report(1, "heat-equation oracle", passed,
           f"spatial {['%.2f' % o for o in spatial]}, temporal "
           f"{['%.2f' % o for o in temporal]}, {elapsed:.1f}s")
    assert passed


def test_02_condition_checkers(rc, tmp_path):
    start = time.time()
    outcome = run_condition_check(rc, {"samples": 10000, "adversarial": True}, tmp_path, "cond")
    elapsed = time.time() - start
    passed = outcome.passed and elapsed < 30.0
    report(2, "condition checkers (q in {2,3,4} + adversarial)", passed,
           f"adversarial violations {outcome.metrics['adversarial_violations']}, "
           f"{elapsed:.1f}s")
    assert passed


def test_03_scalar_monotonicity():
    violations = 0
    for q in (2.0, 3.0, 4.0, 7.0):
        gen = generator(master_key(int(10 * q), "acc-mono"))
        t = 5.0 * gen.standard_normal(100_000)
        s = 5.0 * gen.standard_normal(100_000)
        lhs = (signed_power(t, q - 1.0) - signed_power(s, q - 1.0)) * (t - s)
        violations += int(np.sum(lhs < 0.0))
    passed = violations == 0
    report(3, "scalar monotonicity identity", passed, f"{violations} violations")
    assert passed


def _tiny_ensemble(space, cs, member, n, seed):
    cfg = SimConfig(n_particles=n, M_steps=128, rng_seed=seed, noise_modes=2, save_every=32)
    from conftest import sine_state

    return simulate_particles(cs, member, cfg, sine_state(space, 0.3),
                              key=master_key(seed, "acc4"))


def test_04_transport_exactness_and_metric_axioms():
    space = make_space(q=3.0, J=8)
    cs = make_cs(space, sigma0=0.2)
    member = ControlMember(name="up", kind="dirac", action=2)
    gen = generator(master_key(4, "acc-ot"))

    # (a) solver equals brute force on 100 instances with <= 6 atoms
    max_delta = 0.0
    for trial in range(100):
        n = 2 + trial % 5
        cost = gen.random((n, n))
        got = exact_ot(cost)
        brute = min(
            sum(cost[i, p[i]] for i in range(n)) / n
            for p in itertools.permutations(range(n))
        )
        max_delta = max(max_delta, abs(got - brute))
    exactness = max_delta <= 1e-10

    # (b) metric axioms at the three nesting levels, 100 triples each
    slack = 1e-9
    axioms = True
    for seed in range(100):
        triple = [
            EmpiricalFieldMeasure(space, 0.5 * generator(master_key(seed, "f", i)).standard_normal((1 + (seed + i) % 4, space.J)))
            for i in range(3)
        ]
        d = [
            wasserstein_fields(triple[i], triple[j], 2.0, "H")
            for i, j in ((0, 1), (1, 2), (0, 2))
        ]
        sym = abs(d[0] - wasserstein_fields(triple[1], triple[0], 2.0, "H"))
        ident = wasserstein_fields(triple[0], triple[0], 2.0, "H")
        if d[2] > d[0] + d[1] + slack or sym > slack or ident > slack:
            axioms = False

    ens = [
        _tiny_ensemble(space, cs, member, 2 + (seed % 2), 200 + seed) for seed in range(9)
    ]
    for seed in range(100):
        a, b, c = (ens[(seed + k) % 9] for k in (0, 3, 6))
        dab = wasserstein_paths(a, b, 2.0)
        dbc = wasserstein_paths(b, c, 2.0)
        dac = wasserstein_paths(a, c, 2.0)
        if (
            dac > dab + dbc + slack
            or abs(dab - wasserstein_paths(b, a, 2.0)) > slack
            or wasserstein_paths(a, a, 2.0) > slack
        ):
            axioms = False
            break

    outer = [
        OuterLaw((ens[i], ens[(i + 1) % 9]), np.array([0.5, 0.5])) for i in range(9)
    ]
    for seed in range(100):
        p, q, r = (outer[(seed + k) % 9] for k in (0, 3, 6))
        dpq = wasserstein_outer(p, q, 2.0)
        dqr = wasserstein_outer(q, r, 2.0)
        dpr = wasserstein_outer(p, r, 2.0)
        if (
            dpr > dpq + dqr + slack
            or abs(dpq - wasserstein_outer(q, p, 2.0)) > slack
            or wasserstein_outer(p, p, 2.0) > slack
        ):
            axioms = False
            break

    # Hausdorff axioms on law sets built from the same pool
    sets = [LawSet((outer[i], outer[(i + 2) % 9])) for i in range(9)]
    for seed in range(30):
        A, B, C = (sets[(seed + k) % 9] for k in (0, 3, 6))
        hab = hausdorff(A, B, 2.0)
        hbc = hausdorff(B, C, 2.0)
        hac = hausdorff(A, C, 2.0)
        if hac > hab + hbc + slack or hausdorff(A, A, 2.0) > slack:
            axioms = False
            break

    passed = exactness and axioms
    report(4, "transport exactness + metric axioms", passed,
           f"max brute-force delta {max_delta:.1e}")
    assert passed


def test_05_propagation_of_chaos(rc, tmp_path):
    start = time.time()
    opts = dict(rc.experiments[3])
    assert opts.pop("kind") == "chaos"
    opts.pop("name")
    outcome = run_chaos(rc, opts, tmp_path, "chaos")
    elapsed = time.time() - start
    ratio = outcome.metrics["ratio_last_first"]
    passed = outcome.passed and elapsed < 300.0
    report(5, "propagation of chaos", passed,
           f"d(512)/d(8) = {ratio:.3f}, rate {outcome.metrics['fitted_rate']:.2f}, "
           f"{elapsed:.0f}s")
    assert passed


def test_06_value_function_convergence(rc, tmp_path):
    start = time.time()
    opts = dict(rc.experiments[4])
    assert opts.pop("kind") == "value"
    opts.pop("name")
    outcome = run_value(rc, opts, tmp_path, "value")
    elapsed = time.time() - start
    passed = outcome.passed and elapsed < 600.0
    report(6, "value-function convergence", passed,
           f"argmax {outcome.metrics['limit_argmax']}, {elapsed:.0f}s")
    assert passed


def test_07_hausdorff_convergence(rc, tmp_path):
    opts = dict(rc.experiments[5])
    assert opts.pop("kind") == "hausdorff"
    opts.pop("name")
    outcome = run_hausdorff(rc, opts, tmp_path, "hausdorff")
    report(7, "Hausdorff set convergence + continuity", outcome.passed,
           f"MC tolerance {outcome.metrics['tolerance']:.2e}")
    assert outcome.passed


def test_08_martingale_residual_panel(rc, tmp_path):
    opts = dict(rc.experiments[6])
    assert opts.pop("kind") == "martingale"
    opts.pop("name")
    outcome = run_martingale(rc, opts, tmp_path, "martingale")
    ratios = outcome.metrics["refinement_ratios"]
    report(8, "martingale residual panel", outcome.passed,
           f"min refinement ratio {min(ratios):.2f}" if ratios else "no ratios")
    assert outcome.passed


def test_09_moment_audit(rc, tmp_path):
    outcome = run_moments(rc, {"p_list": [1, 2], "n_particles": 256}, tmp_path, "moments")
    report(9, "moment and admissibility-ceiling audit", outcome.passed,
           f"log10 J(emp) {outcome.metrics['j_empirical_log10']:.2f} <= "
           f"log10 ceiling {outcome.metrics['j_bound_log10']:.2f}")
    assert outcome.passed


def test_10_replay_determinism(tmp_path):
    raw = yaml.safe_load((CONFIG_DIR / "quick.yaml").read_text())
    raw["output_dir"] = str(tmp_path / "out")
    config_path = tmp_path / "quick.yaml"
    config_path.write_text(yaml.safe_dump(raw))

    max_threads = os.cpu_count() or 4
    digests = {}
    for threads in (1, 4, max_threads):
        outdir = tmp_path / f"run-t{threads}"
        code = cli_main(["run", str(config_path), "--output-dir", str(outdir),
                         "--threads", str(threads)])
        assert code == EXIT_OK
        manifest = json.loads((outdir / "manifest.json").read_text())
        digests[threads] = manifest["outputs"]
    identical = digests[1] == digests[4] == digests[max_threads] and digests[1]

    replay_code = cli_main(["replay", str(tmp_path / "run-t1" / "manifest.json"),
                            "--threads", str(max_threads)])
    passed = identical and replay_code == EXIT_OK
    report(10, "byte-identical replay across thread counts", passed,
           f"threads (1, 4, {max_threads}), {len(digests[1])} outputs")
    assert passed
