import numpy as np
import pytest

from sgae import tensor as T
from sgae.decoder import Decoder, Hypothesis, decode_beam, decode_greedy, decode_sample, sequence_log_prob
from sgae.graph import EOS_ID
from sgae.layers import LSTMCell
from sgae.tensor import SeededRng, Tensor, finite_diff_check

import oracles


def make(seed=0, V=7, d=4, d_z=None, M=3, att=5):
    r = SeededRng(seed)
    dec = Decoder(r, V, d=d, d_z=d_z, att_dim=att)
    Z = Tensor(r.normal((M, dec.d_z)))
    return dec, Z


def arrays(dec):
    return {n: p.data for n, p in dec.parameters().items()}


class TestStep:
    def test_widths(self):
        dec, _ = make(d=4, d_z=8)
        assert dec.lstm1.weight.shape == (16, 4 + 8 + 4 + 4)
        assert dec.lstm2.weight.shape == (16, 4 + 8 + 4)
        assert dec.W_z.shape == (5, 8) and dec.W_h.shape == (5, 4)

    def test_matches_numpy_oracle(self):
        dec, Z = make(seed=3)
        state = dec.initial_state()
        ostate = tuple(np.zeros(4) for _ in range(4))
        prev = 0
        for tok in (4, 2, 6):
            P, state, beta = dec.step(prev, Z, state)
            P2, ostate, beta2 = oracles.decoder_step(arrays(dec), prev, Z.data, ostate)
            np.testing.assert_allclose(P.data, P2, atol=1e-12)
            np.testing.assert_allclose(beta.data, beta2, atol=1e-12)
            prev = tok

    def test_single_row(self):
        dec, Z = make(M=1)
        P, _, beta = dec.step(0, Z, dec.initial_state())
        np.testing.assert_array_equal(beta.data, [1.0])
        assert abs(P.data.sum() - 1) <= 1e-12

    def test_identical_rows_uniform(self):
        dec, Z = make(M=4)
        same = Tensor(np.tile(Z.data[0], (4, 1)))
        _, _, beta = dec.step(0, same, dec.initial_state())
        np.testing.assert_allclose(beta.data, np.full(4, 0.25), atol=1e-15)

    def test_permutation(self):
        dec, Z = make(M=5, seed=2)
        perm = [3, 0, 4, 1, 2]
        P, _, beta = dec.step(0, Z, dec.initial_state())
        P2, _, beta2 = dec.step(0, Tensor(Z.data[perm]), dec.initial_state())
        np.testing.assert_allclose(beta2.data, beta.data[perm], atol=1e-14)
        np.testing.assert_allclose(P2.data, P.data, atol=1e-14)
        assert decode_greedy(dec, Z, 6).tokens == decode_greedy(dec, Tensor(Z.data[perm]), 6).tokens

    def test_errors(self):
        dec, Z = make()
        with pytest.raises(IndexError):
            dec.step(7, Z, dec.initial_state())
        with pytest.raises(T.DimensionError):
            dec.step(0, Tensor(np.ones((2, 3))), dec.initial_state())
        with pytest.raises(T.DimensionError):
            dec.step(0, Tensor(np.ones((0, 4))), dec.initial_state())

    def test_lstm_zero_weights(self):
        cell = LSTMCell(SeededRng(0), 3, 2)
        cell.weight.data[...] = 0
        cell.bias.data[...] = 0
        h, c = Tensor(np.zeros(2)), Tensor(np.zeros(2))
        for _ in range(3):
            h, c = cell(Tensor(np.ones(3)), h, c)
            assert not h.data.any()

    def test_forget_bias(self):
        cell = LSTMCell(SeededRng(0), 3, 2)
        np.testing.assert_array_equal(cell.bias.data, [0, 0, 1, 1, 0, 0, 0, 0])


class TestGradients:
    def test_every_group(self):
        dec, Z = make(seed=4)
        with T.Tape() as tape:
            lp = dec.teacher_forced_log_probs(Z, (4, EOS_ID))
            loss = -T.sum_all(T.gather_rows(lp, [4, EOS_ID]))
        tape.backward(loss)
        for name, p in dec.parameters().items():
            assert p.grad is not None and np.abs(p.grad).sum() > 0, name

    def test_finite_differences(self):
        dec, Z = make(seed=6, V=5, d=3, att=3, M=2)
        f = lambda _: -T.sum_all(T.gather_rows(dec.teacher_forced_log_probs(Z, (2, 4, EOS_ID)), [2, 4, EOS_ID]))  # noqa: E731,E501
        for name, p in dec.parameters().items():
            assert finite_diff_check(f, p) <= 1e-4, name
        assert finite_diff_check(f, Z) <= 1e-4

    def test_teacher_forcing_matches_sequence_log_prob(self):
        dec, Z = make(seed=1)
        seq = (4, 5, EOS_ID)
        lp = dec.teacher_forced_log_probs(Z, seq).data
        assert sum(lp[i, t] for i, t in enumerate(seq)) == pytest.approx(sequence_log_prob(dec, Z, seq), abs=1e-12)
        assert sequence_log_prob(dec, Z, seq) == pytest.approx(oracles.sequence_logp(arrays(dec), Z.data, seq, 4),
                                                               abs=1e-12)


class TestGreedyBeam:
    def test_width_one_is_greedy(self):
        for seed in range(5):
            dec, Z = make(seed=seed)
            g = decode_greedy(dec, Z, 8)
            b = decode_beam(dec, Z, width=1, max_len=8)[0]
            assert (b.tokens, b.finished) == (g.tokens, g.finished)
            assert b.log_prob == pytest.approx(g.log_prob, abs=1e-12)

    def test_max_len_one(self):
        dec, Z = make()
        assert len(decode_greedy(dec, Z, 1).with_eos) == 1
        with pytest.raises(ValueError):
            decode_greedy(dec, Z, 0)

    def test_greedy_logprob_consistent(self):
        dec, Z = make(seed=9)
        g = decode_greedy(dec, Z, 6)
        assert g.log_prob == pytest.approx(sequence_log_prob(dec, Z, g.with_eos), abs=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_exhaustive(self, seed):
        dec, Z = make(seed=seed, V=3, d=3, att=3)
        best_lp, best = oracles.best_sequence(arrays(dec), Z.data, 3, 3, 3)
        top = decode_beam(dec, Z, width=27, max_len=3)[0]
        assert top.with_eos == best
        assert top.log_prob == pytest.approx(best_lp, abs=1e-10)

    def test_beam_dominates_greedy(self):
        for seed in range(10):
            dec, Z = make(seed=seed)
            assert decode_beam(dec, Z, 5, 6)[0].log_prob >= decode_greedy(dec, Z, 6).log_prob - 1e-12

    def test_sorted_and_scored(self):
        dec, Z = make(seed=3)
        beams = decode_beam(dec, Z, 4, 5)
        assert [b.log_prob for b in beams] == sorted((b.log_prob for b in beams), reverse=True)
        for b in beams:
            assert b.log_prob == pytest.approx(sequence_log_prob(dec, Z, b.with_eos), abs=1e-10)

    def test_length_normalize_flag(self):
        dec, Z = make(seed=3)
        beams = decode_beam(dec, Z, 4, 5, length_normalize=True)
        norm = [b.log_prob / len(b.with_eos) for b in beams]
        assert norm == sorted(norm, reverse=True)

    def test_width_validation(self):
        dec, Z = make()
        with pytest.raises(ValueError):
            decode_beam(dec, Z, width=0)

    def test_hypothesis_with_eos(self):
        assert Hypothesis(0.0, (4, 5), True).with_eos == (4, 5, EOS_ID)
        assert Hypothesis(0.0, (4, 5), False).with_eos == (4, 5)


class TestSample:
    def test_fixed_seed(self):
        dec, Z = make(seed=2)
        a = decode_sample(dec, Z, SeededRng(5), 6)
        b = decode_sample(dec, Z, SeededRng(5), 6)
        assert a == b

    def test_saturated_equals_greedy(self):
        dec, Z = make(seed=2)
        dec.W_p.data *= 0
        dec.b_p.data[...] = -1e3
        dec.b_p.data[EOS_ID] = 0.0
        dec.b_p.data[5] = 1e3
        hyp, steps = decode_sample(dec, Z, SeededRng(0), 4)
        assert hyp.tokens == decode_greedy(dec, Z, 4).tokens == (5, 5, 5, 5)
        assert steps == [0.0] * 4

    def test_step_logprobs_sum(self):
        dec, Z = make(seed=8)
        hyp, steps = decode_sample(dec, Z, SeededRng(1), 6)
        assert hyp.log_prob == pytest.approx(sum(steps))
        assert hyp.log_prob == pytest.approx(sequence_log_prob(dec, Z, hyp.with_eos), abs=1e-12)

    def test_first_token_is_choice_on_p1(self):
        dec, Z = make(seed=4, V=5)
        P1, _, _ = dec.step(0, Z, dec.initial_state())
        a, b = SeededRng(9), SeededRng(9)
        for _ in range(300):
            hyp, _ = decode_sample(dec, Z, a, 1)
            assert hyp.with_eos[0] == b.choice(np.exp(np.log(P1.data)))

    def test_first_step_frequencies(self):
        dec, Z = make(seed=4, V=5)
        P1 = dec.step(0, Z, dec.initial_state())[0].data
        rng = SeededRng(123)
        n = 100_000
        counts = np.bincount([rng.choice(P1) for _ in range(n)], minlength=5)
        sd = np.sqrt(n * P1 * (1 - P1))
        assert (np.abs(counts - n * P1) <= 3 * sd + 1e-9).all()
