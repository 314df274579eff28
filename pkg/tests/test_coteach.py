import numpy as np
import pytest

from lipbayes.coteach import (
    CoteachState,
    adaptive_forget_rate,
    coteach_step,
    coteach_train,
    kept_indices,
    scheduled_keep_rate,
)
from lipbayes.header import AdamW, BayesHeader, TrainConfig, elbo_loss_and_grads
from lipbayes.noiselab import make_blobs
from lipbayes.numkit import RngStream


def make_pair(seed=0, d=4, C=3, same=False):
    f = BayesHeader.create(d, C, RngStream(seed, purpose="f"), hidden_dim=4)
    g = f.clone() if same else BayesHeader.create(d, C, RngStream(seed + 1, purpose="g"), hidden_dim=4)
    return f, g


class TestAdaptiveForgetRate:
    def test_paper_constants_exact(self):
        n = 10
        agree = np.zeros(n, dtype=int)
        assert adaptive_forget_rate(agree, agree) == pytest.approx(0.1, abs=0)
        half = np.array([0, 1] * 5)
        assert adaptive_forget_rate(agree, half) == pytest.approx(0.2, abs=1e-15)
        assert adaptive_forget_rate(agree, np.ones(n, dtype=int)) == pytest.approx(0.3, abs=1e-15)

    def test_bounds_and_inactive_clip(self):
        # with the default constants the maximum is r0 + alpha = 0.3, so
        # the 0.5 ceiling never binds
        gen = np.random.default_rng(0)
        for _ in range(50):
            a = gen.integers(0, 3, 20)
            b = gen.integers(0, 3, 20)
            rate = adaptive_forget_rate(a, b)
            assert 0.1 <= rate <= 0.3

    def test_identical_predictions_zero_disagreement(self):
        preds = np.arange(12) % 4
        assert adaptive_forget_rate(preds, preds.copy()) == 0.1

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            adaptive_forget_rate(np.array([]), np.array([]))


class TestScheduledKeepRate:
    def test_starts_at_one(self):
        assert scheduled_keep_rate(0, tau=0.3, t_k=10) == 1.0

    def test_linear_ramp_midpoint(self):
        assert scheduled_keep_rate(5, tau=0.2, t_k=10) == pytest.approx(0.9)

    def test_saturates_at_one_minus_tau(self):
        for t in (10, 11, 100):
            assert scheduled_keep_rate(t, tau=0.2, t_k=10) == pytest.approx(0.8)


class TestKeptIndices:
    def test_counts(self):
        losses = np.linspace(0, 1, 10)
        ids = np.arange(10)
        assert len(kept_indices(losses, ids, 0.3)) == 7
        assert len(kept_indices(losses, ids, 0.99)) == 1  # floor hits minimum

    def test_permutation_invariance_with_id_ties(self):
        losses = np.array([0.5, 0.1, 0.5, 0.9, 0.1])
        ids = np.array([10, 11, 12, 13, 14])
        kept = kept_indices(losses, ids, 0.4)
        perm = np.array([3, 0, 4, 1, 2])
        kept_perm = kept_indices(losses[perm], ids[perm], 0.4)
        assert set(ids[kept]) == set(ids[perm][kept_perm])


class TestCoteachStep:
    def test_zero_forget_reduces_to_independent_steps(self):
        ds = make_blobs(40, 4, 3, spread=0.5, separation=4.0, stream=RngStream(5, purpose="b"))
        config = TrainConfig(epochs=1, batch_size=40, seed=0)
        f1, g1 = make_pair(seed=1)
        state = CoteachState(header_f=f1, header_g=g1, r0=0.0, alpha=0.0)
        stream = RngStream(9, purpose="step")
        coteach_step(
            state, ds.features, ds.labels, ds.ids,
            stream.child("f"), stream.child("g"), config,
        )

        f2, g2 = make_pair(seed=1)
        for header, tag in ((f2, "f"), (g2, "g")):
            # replay the selection forward so the u_buffers see the same
            # sequence of refinements as inside the co-teaching step
            header.forward_sample(ds.features, stream.child(tag).child("select"))
            opt = AdamW(header.parameters(), config)
            _, grads = elbo_loss_and_grads(
                header, ds.features, ds.labels, stream.child(tag).child("update")
            )
            opt.step(grads)
            np.clip(header.layer1.rho, -20, 10, out=header.layer1.rho)
            np.clip(header.layer2.rho, -20, 10, out=header.layer2.rho)
        for a, b in ((f1, f2), (g1, g2)):
            for k, v in a.parameters().items():
                np.testing.assert_array_equal(v, b.parameters()[k])

    def test_identical_peers_and_streams_stay_identical(self):
        ds = make_blobs(60, 4, 3, spread=1.0, separation=3.0, stream=RngStream(6, purpose="b"))
        f, g = make_pair(seed=2, same=True)
        state = CoteachState(header_f=f, header_g=g)
        config = TrainConfig(epochs=1, batch_size=30, seed=0)
        stream = RngStream(10, purpose="steps")
        for t in range(5):
            s = stream.child("t", step=t)
            coteach_step(state, ds.features[:30], ds.labels[:30], ds.ids[:30], s, s, config)
        for k, v in state.header_f.parameters().items():
            np.testing.assert_array_equal(v, state.header_g.parameters()[k])

    def test_kept_count_with_forget_rate(self):
        ds = make_blobs(10, 4, 2, spread=1.0, separation=3.0, stream=RngStream(7, purpose="b"))
        f, g = make_pair(seed=3, C=2)
        state = CoteachState(header_f=f, header_g=g, mode="scheduled", tau=0.3, t_k=1)
        state.epoch = 5  # schedule saturated: forget = 0.3
        config = TrainConfig(epochs=1, batch_size=10, seed=0)
        info = coteach_step(
            state, ds.features, ds.labels, ds.ids,
            RngStream(11, purpose="f"), RngStream(11, purpose="g"), config,
        )
        assert info["forget_rate"] == pytest.approx(0.3)
        assert len(info["kept_f"]) == 7
        assert len(info["kept_g"]) == 7

    def test_train_loop_runs_and_records(self):
        ds = make_blobs(120, 4, 3, spread=0.5, separation=4.0, stream=RngStream(8, purpose="b"))
        f, g = make_pair(seed=4)
        state = CoteachState(header_f=f, header_g=g)
        state, history = coteach_train(
            state, ds.features, ds.labels, TrainConfig(epochs=3, batch_size=40, seed=1)
        )
        assert len(history) == 3
        assert all(0.1 <= h["forget_rate"] <= 0.3 for h in history)

    def test_invalid_mode_rejected(self):
        f, g = make_pair(seed=5)
        with pytest.raises(ValueError):
            CoteachState(header_f=f, header_g=g, mode="sometimes")
