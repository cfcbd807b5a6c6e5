"""Bidirectional loss semantics and the optimization loop."""

import numpy as np
import pytest

from bidimt import autodiff as ad
from bidimt import model as M
from bidimt.data import SentencePair, build_batch, make_batches, reverse_pair
from bidimt.errors import NumericError
from bidimt.training import (TrainConfig, bidirectional_loss, load_train_state,
                             train, validate)
from bidimt.vocab import EOS, L2R, R2L, SOS_L2R, SOS_R2L


def tiny_cfg(dropout=0.0):
    return M.ModelConfig(num_encoder_layers=1, num_decoder_layers=1, d_model=16,
                         num_heads=2, d_ff=32, dropout=dropout, max_positions=20)


def tiny_params(seed=0, vocab=10, dropout=0.0):
    cfg = tiny_cfg(dropout)
    return M.Parameters.init(cfg, vocab, vocab, np.random.default_rng(seed)), cfg


def small_corpus(n=12, seed=0, vocab=10):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        ln = int(rng.integers(1, 6))
        toks = rng.integers(5, vocab, ln).tolist()
        out.append(SentencePair(src=toks, tgt=list(toks) + [EOS]))
    return out


class TestBidirectionalLoss:
    def test_equals_per_pair_sequence_logprobs(self):
        """Mixed-batch loss == sum of both directions' NLLs / token count."""
        params, cfg = tiny_params()
        pairs = [
            SentencePair(src=[5, 6, 7], tgt=[7, 5, EOS]),
            SentencePair(src=[8, 9], tgt=[9, 8, 6, EOS]),
        ]
        rows = []
        for p in pairs:
            rows.extend([p, reverse_pair(p)])
        batch = build_batch(rows)
        loss, stats = bidirectional_loss(params, batch, cfg, label_smoothing=0.0)
        expected = 0.0
        tokens = 0
        for p in pairs:
            for direction in (L2R, R2L):
                total, per_token = M.sequence_logprob(params, p.src, p.tgt,
                                                      direction, cfg)
                expected += -total
                tokens += len(per_token)
        assert loss.item() == pytest.approx(expected / tokens, abs=1e-5)
        assert stats.total_tokens == tokens
        assert stats.nll_l2r + stats.nll_r2l == pytest.approx(expected, rel=1e-5)

    def test_row_duplication_preserves_mean(self):
        params, cfg = tiny_params()
        p = SentencePair(src=[5, 6], tgt=[6, 5, EOS])
        single = build_batch([p, reverse_pair(p)])
        double = build_batch([p, reverse_pair(p), p, reverse_pair(p)])
        a, _ = bidirectional_loss(params, single, cfg)
        b, _ = bidirectional_loss(params, double, cfg)
        assert a.item() == pytest.approx(b.item(), abs=1e-5)

    def test_uniform_model_scores_log_vocab(self):
        params, cfg = tiny_params(vocab=10)
        for p in params.named.values():
            p.data[:] = 0.0
        batch = build_batch([SentencePair(src=[5, 6], tgt=[7, EOS])])
        loss, _ = bidirectional_loss(params, batch, cfg, label_smoothing=0.0)
        assert loss.item() == pytest.approx(np.log(10.0), abs=1e-4)

    def test_single_direction_batch_accepted_but_flagged(self):
        params, cfg = tiny_params()
        batch = build_batch([SentencePair(src=[5], tgt=[5, EOS])])
        _, stats = bidirectional_loss(params, batch, cfg)
        assert stats.single_direction
        assert stats.tokens_r2l == 0

    def test_row_permutation_invariance(self):
        params, cfg = tiny_params()
        pairs = small_corpus(4, seed=3)
        rows = []
        for p in pairs:
            rows.extend([p, reverse_pair(p)])
        a, _ = bidirectional_loss(params, build_batch(rows), cfg)
        b, _ = bidirectional_loss(params, build_batch(rows[::-1]), cfg)
        assert a.item() == pytest.approx(b.item(), abs=1e-5)

    def test_components_are_nonnegative_and_partition(self):
        params, cfg = tiny_params()
        p = SentencePair(src=[5, 6, 7], tgt=[8, 9, EOS])
        batch = build_batch([p, reverse_pair(p)])
        loss, stats = bidirectional_loss(params, batch, cfg, label_smoothing=0.1)
        assert stats.nll_l2r >= 0 and stats.nll_r2l >= 0
        total = stats.nll_l2r + stats.nll_r2l
        assert loss.item() == pytest.approx(total / stats.total_tokens, rel=1e-5)


class TestGradientFlow:
    def test_both_start_token_embeddings_receive_gradient(self):
        params, cfg = tiny_params()
        p = SentencePair(src=[5, 6], tgt=[7, 8, EOS])
        batch = build_batch([p, reverse_pair(p)])
        loss, _ = bidirectional_loss(params, batch, cfg, label_smoothing=0.0)
        ad.backward(loss)
        grad = params["tgt_embed"].grad
        assert np.abs(grad[SOS_L2R]).sum() > 0
        assert np.abs(grad[SOS_R2L]).sum() > 0

    def test_l2r_only_batch_leaves_r2l_start_untouched(self):
        # untied output head: the R2L start row is then input-only, so an
        # L2R-only batch must not touch it (with tying, every row gets
        # output-projection gradient, which is correct but uninformative)
        cfg = M.ModelConfig(num_encoder_layers=1, num_decoder_layers=1,
                            d_model=16, num_heads=2, d_ff=32, dropout=0.0,
                            max_positions=20, tied_embeddings=False)
        params = M.Parameters.init(cfg, 10, 10, np.random.default_rng(0))
        batch = build_batch([SentencePair(src=[5, 6], tgt=[7, EOS])])
        loss, _ = bidirectional_loss(params, batch, cfg)
        ad.backward(loss)
        grad = params["tgt_embed"].grad
        assert np.abs(grad[SOS_L2R]).sum() > 0
        assert np.abs(grad[SOS_R2L]).sum() == 0


class TestTrainLoop:
    def test_loss_decreases_on_tiny_copy_corpus(self):
        params, cfg = tiny_params(seed=1)
        corpus = small_corpus(16, seed=1)
        tcfg = TrainConfig(max_steps=30, warmup=10, token_budget=64,
                           checkpoint_interval=1000, log_interval=1, seed=3,
                           label_smoothing=0.0)
        _, report = train(params, corpus, tcfg, cfg)
        first = report.steps[0]["loss"]
        assert report.final_step == 30
        assert report.final_loss < first

    def test_initial_loss_near_log_vocab(self):
        params, cfg = tiny_params(seed=2, vocab=10)
        corpus = small_corpus(8, seed=2)
        tcfg = TrainConfig(max_steps=1, warmup=10, token_budget=64,
                           log_interval=1, seed=4)
        _, report = train(params, corpus, tcfg, cfg)
        assert report.steps[0]["loss"] == pytest.approx(np.log(10.0), rel=0.10)

    def test_same_seed_bitwise_identical_params(self):
        corpus = small_corpus(10, seed=5)
        runs = []
        for _ in range(2):
            params, cfg = tiny_params(seed=7)
            tcfg = TrainConfig(max_steps=12, warmup=10, token_budget=64, seed=11)
            train(params, corpus, tcfg, cfg)
            runs.append({n: p.data.copy() for n, p in params.named.items()})
        for name in runs[0]:
            assert (runs[0][name] == runs[1][name]).all(), name

    def test_abort_on_nonfinite_loss_names_step(self):
        params, cfg = tiny_params(seed=8)
        # guaranteed float32 overflow inside the first attention matmul
        params["enc.0.self.wq"].data[:] = 3e38
        corpus = small_corpus(6, seed=8)
        tcfg = TrainConfig(max_steps=5, warmup=10, token_budget=64, seed=1)
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="step 0"):
            train(params, corpus, tcfg, cfg)

    def test_interrupt_resume_matches_uninterrupted(self, tmp_path):
        corpus = small_corpus(14, seed=9)

        def fresh():
            return tiny_params(seed=10)

        # uninterrupted: 8 steps
        params_a, cfg = fresh()
        tcfg_a = TrainConfig(max_steps=8, warmup=10, token_budget=64, seed=13,
                             checkpoint_interval=100)
        _, report_a = train(params_a, corpus, tcfg_a, cfg)

        # interrupted at 4, resumed to 8
        run_dir = str(tmp_path / "run")
        params_b, cfg = fresh()
        tcfg_b = TrainConfig(max_steps=4, warmup=10, token_budget=64, seed=13,
                             checkpoint_interval=4)
        train(params_b, corpus, tcfg_b, cfg, run_dir=run_dir)
        resumed, state, meta = load_train_state(run_dir)
        tcfg_c = TrainConfig(max_steps=8, warmup=10, token_budget=64, seed=13,
                             checkpoint_interval=100)
        _, report_c = train(resumed, corpus, tcfg_c, cfg,
                            resume_state=state, start_epoch=meta["epoch"],
                            start_batch=meta["batch_index"])
        assert report_c.final_step == 8
        assert report_c.final_loss == pytest.approx(report_a.final_loss, abs=1e-4)
        for name in params_a.named:
            np.testing.assert_allclose(params_a[name].data, resumed[name].data,
                                       atol=1e-6)

    def test_eval_hook_can_stop_early(self):
        params, cfg = tiny_params(seed=11)
        corpus = small_corpus(10, seed=11)
        tcfg = TrainConfig(max_steps=50, warmup=10, token_budget=64, seed=2,
                           checkpoint_interval=5)
        _, report = train(params, corpus, tcfg, cfg,
                          eval_hook=lambda step, p: step >= 10)
        assert report.final_step == 10

    def test_unidirectional_training_mode(self):
        params, cfg = tiny_params(seed=12)
        corpus = small_corpus(8, seed=12)
        tcfg = TrainConfig(max_steps=5, warmup=10, token_budget=64, seed=3,
                           directions=(L2R,))
        _, report = train(params, corpus, tcfg, cfg)
        assert report.single_direction_batches == 5


class TestValidate:
    def test_dev_loss_matches_direct_average(self):
        params, cfg = tiny_params(seed=13)
        corpus = small_corpus(6, seed=13)
        out = validate(params, corpus, cfg)
        total, tokens = 0.0, 0
        for p in corpus:
            for direction in (L2R, R2L):
                t, per = M.sequence_logprob(params, p.src, p.tgt, direction, cfg)
                total += -t
                tokens += len(per)
        assert out["loss"] == pytest.approx(total / tokens, abs=1e-5)

    def test_self_references_score_bleu_100(self):
        from bidimt.evaluation import bleu
        from bidimt.inference import DecodeConfig, translate_corpus

        params, cfg = tiny_params(seed=14)
        corpus = small_corpus(4, seed=14)
        dcfg = DecodeConfig(beam=1, alpha=0.0, max_len=8)
        results = translate_corpus(params, [p.src for p in corpus], dcfg, cfg,
                                   mode=L2R)
        hyps = [list(r.hypothesis.tokens) for r in results]
        nonempty = [(h, h) for h in hyps if h]
        if nonempty:
            score = bleu([h for h, _ in nonempty], [r for _, r in nonempty])
            assert score.bleu == pytest.approx(100.0)
