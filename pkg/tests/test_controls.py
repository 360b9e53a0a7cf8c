import numpy as np
import pytest

from conftest import make_space
from mflab.coefficients import ActionSpace
from mflab.controls import (
    ControlFamily,
    ControlMember,
    RelaxedControlPath,
    family_from_config,
    sample_action_kernel,
    vague_distance,
    w1_rows,
)
from mflab.rng import generator, master_key
from mflab.spaces import ConfigurationError


@pytest.fixture
def actions():
    return ActionSpace(np.array([0.0, 1.0]))


def dirac_path(actions, action, times):
    M = len(times) - 1
    probs = np.zeros((M, actions.K))
    probs[:, action] = 1.0
    return RelaxedControlPath(actions, times, probs)


def random_path_probs(actions, key, times):
    gen = generator(key)
    probs = gen.dirichlet(np.ones(actions.K), size=len(times) - 1)
    return RelaxedControlPath(actions, times, probs)


class TestRelaxedControlPath:
    def test_rows_must_be_probabilities(self, actions):
        times = np.linspace(0, 1, 4)
        with pytest.raises(ConfigurationError):
            RelaxedControlPath(actions, times, np.full((3, 2), 0.4))

    def test_sample_action_kernel_returns_row(self, actions):
        times = np.linspace(0, 1, 5)
        rc = dirac_path(actions, 1, times)
        assert np.array_equal(sample_action_kernel(rc, 2), np.array([0.0, 1.0]))

    def test_out_of_range_cell(self, actions):
        rc = dirac_path(actions, 0, np.linspace(0, 1, 3))
        with pytest.raises(IndexError):
            sample_action_kernel(rc, 2)


class TestVagueDistance:
    def test_identity(self, actions):
        times = np.linspace(0, 1, 6)
        rc = random_path_probs(actions, master_key(0, "vd"), times)
        assert vague_distance(rc, rc) == 0.0

    def test_dirac_vs_dirac_is_T_times_distance(self):
        actions = ActionSpace(np.array([-1.0, 0.0, 2.0]))
        T = 0.7
        times = np.linspace(0, T, 8)
        a = dirac_path(actions, 0, times)
        b = dirac_path(actions, 2, times)
        assert abs(vague_distance(a, b) - T * 3.0) < 1e-12

    def test_uniform_vs_dirac_on_binary_actions(self, actions):
        # per-cell W1 = 1/2; integrated over [0, T] gives T/2
        T = 1.0
        times = np.linspace(0, T, 11)
        M = len(times) - 1
        uniform = RelaxedControlPath(actions, times, np.full((M, 2), 0.5))
        dirac = dirac_path(actions, 0, times)
        assert abs(vague_distance(uniform, dirac) - T / 2.0) < 1e-12

    def test_w1_matches_two_point_enumeration(self, actions):
        # brute force over the single transport degree of freedom
        gen = generator(master_key(5, "bf"))
        for _ in range(200):
            a = gen.dirichlet(np.ones(2))
            b = gen.dirichlet(np.ones(2))
            got = w1_rows(actions, a[None, :], b[None, :])[0]
            # move the surplus of action 0: |a0 - b0| * |x1 - x0|
            assert abs(got - abs(a[0] - b[0])) < 1e-12

    def test_metric_axioms_seeded_triples(self, actions):
        times = np.linspace(0, 0.5, 7)
        for seed in range(1000):
            a = random_path_probs(actions, master_key(seed, "tri", 0), times)
            b = random_path_probs(actions, master_key(seed, "tri", 1), times)
            c = random_path_probs(actions, master_key(seed, "tri", 2), times)
            dab = vague_distance(a, b)
            assert abs(dab - vague_distance(b, a)) < 1e-12
            assert vague_distance(a, c) <= dab + vague_distance(b, c) + 1e-12

    def test_grid_mismatch_rejected(self, actions):
        a = dirac_path(actions, 0, np.linspace(0, 1, 4))
        b = dirac_path(actions, 0, np.linspace(0, 1, 5))
        with pytest.raises(ConfigurationError):
            vague_distance(a, b)


class TestControlMembers:
    def test_dirac_rows(self, actions):
        space = make_space(J=8)
        m = ControlMember(name="d", kind="dirac", action=1)
        rows = m.rows(actions, 0, 0.0, np.zeros((4, 8)), space)
        assert rows.shape == (4, 2)
        assert np.array_equal(rows[:, 1], np.ones(4))

    def test_uniform_rows(self, actions):
        space = make_space(J=8)
        m = ControlMember(name="u", kind="uniform")
        rows = m.rows(actions, 0, 0.0, np.zeros((3, 8)), space)
        assert np.allclose(rows, 0.5)

    def test_feedback_sign_follows_state_mean(self, actions):
        space = make_space(J=8)
        m = ControlMember(name="fb", kind="feedback_sign", pos_action=1, neg_action=0)
        states = np.stack([np.ones(8), -np.ones(8)])
        rows = m.rows(actions, 0, 0.0, states, space)
        assert rows[0, 1] == 1.0 and rows[1, 0] == 1.0

    def test_fixed_matrix_rows(self, actions):
        space = make_space(J=8)
        mat = np.array([[1.0, 0.0], [0.25, 0.75]])
        m = ControlMember(name="fx", kind="fixed", matrix=mat)
        rows = m.rows(actions, 1, 0.0, np.zeros((2, 8)), space)
        assert np.allclose(rows, mat[1])
        with pytest.raises(ConfigurationError):
            m.rows(actions, 2, 0.0, np.zeros((2, 8)), space)

    def test_member_validation(self):
        with pytest.raises(ConfigurationError):
            ControlMember(name="bad", kind="dirac")
        with pytest.raises(ConfigurationError):
            ControlMember(name="bad", kind="warp")

    def test_family_lookup_and_uniqueness(self):
        fam = family_from_config(
            [{"name": "a", "kind": "uniform"}, {"name": "b", "kind": "dirac", "action": 0}]
        )
        assert fam.member("b").kind == "dirac"
        with pytest.raises(KeyError):
            fam.member("c")
        with pytest.raises(ConfigurationError):
            ControlFamily((fam.member("a"), fam.member("a")))


class TestSpecExamples:
    def test_uniform_row_with_four_actions(self):
        space = make_space(J=8)
        acts4 = ActionSpace(np.array([-1.0, -0.5, 0.5, 1.0]))
        m = ControlMember(name="u", kind="uniform")
        rows = m.rows(acts4, 0, 0.0, np.zeros((2, 8)), space)
        assert np.allclose(rows, 0.25)
