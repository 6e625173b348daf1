"""Feature formulas against brute-force oracles, mask semantics, lexicon math,
storage round trips, and the synthetic generator's contracts."""

import numpy as np
import pytest

from cogbert.errors import FeatureLookupError, ValidationError
from cogbert.features import (
    EEGLexicon,
    FeatureDb,
    N_EEG_VECTORS,
    SentenceMeasurement,
    SynthConfig,
    WordEEG,
    WordFixation,
    build_lexicon,
    cognitive_mask,
    eeg_token_raw,
    eye_token_raw,
    lexicon_sentence_eeg,
    load_measurements,
    save_measurements,
    scale_eeg_tokens,
    scale_eye_tokens,
    sentence_eeg,
    synth_generate,
)
from cogbert.tokenizer import MASK_KEEP, MASK_SUPPRESS, build_vocab, encode


def make_eeg(C=4, fill=1.0, rng=None):
    if rng is None:
        return WordEEG(np.full((N_EEG_VECTORS, C), fill))
    return WordEEG(rng.normal(size=(N_EEG_VECTORS, C)))


class TestEyeTokens:
    def test_unfixated_word_scores_zero(self):
        assert eye_token_raw(WordFixation(n_fixations=0)) == 0.0

    def test_hand_evaluation(self):
        fix = WordFixation(n_fixations=2, ffd=120, trt=300, gd=180, gpt=320)
        assert eye_token_raw(fix) == 1840.0

    def test_single_fixation_uniform_durations(self):
        fix = WordFixation(n_fixations=1, ffd=100, trt=100, gd=100, gpt=100)
        assert eye_token_raw(fix) == 400.0

    def test_sfd_does_not_enter_the_formula(self):
        with_sfd = WordFixation(n_fixations=1, ffd=10, trt=10, gd=10, gpt=10, sfd=500)
        without = WordFixation(n_fixations=1, ffd=10, trt=10, gd=10, gpt=10, sfd=0)
        assert eye_token_raw(with_sfd) == eye_token_raw(without)

    def test_negative_duration_rejected(self):
        with pytest.raises(ValidationError):
            WordFixation(n_fixations=1, ffd=-5)

    def test_unfixated_with_durations_rejected(self):
        with pytest.raises(ValidationError):
            WordFixation(n_fixations=0, trt=10)


class TestScaleEyeTokens:
    def test_hand_example(self):
        assert scale_eye_tokens([0, 400, 1840]).tolist() == [0, 22, 100]

    def test_all_zero_sentence(self):
        assert scale_eye_tokens([0.0, 0.0, 0.0]).tolist() == [0, 0, 0]

    def test_single_fixated_word_hits_max(self):
        assert scale_eye_tokens([5.0]).tolist() == [100]

    def test_negative_raw_rejected(self):
        with pytest.raises(ValidationError):
            scale_eye_tokens([-1.0, 2.0])

    def test_oracle_on_random_sentences(self):
        rng = np.random.default_rng(17)
        for _ in range(300):
            raw = rng.uniform(0, 1000, size=rng.integers(1, 12)) * rng.integers(0, 2, size=1)
            got = scale_eye_tokens(raw)
            peak = max(raw)
            expected = [0 if peak == 0 else int(np.floor(100 * v / peak + 0.5)) for v in raw]
            assert got.tolist() == expected
            assert ((got >= 0) & (got <= 100)).all()
            if peak > 0:
                assert got[np.argmax(raw)] == 100


class TestEEGTokens:
    def test_all_zero_vectors(self):
        assert eeg_token_raw(make_eeg(fill=0.0)) == 0.0

    def test_hand_arithmetic(self):
        # Four distinct vectors repeated to the full 32: column mean [2, 4] -> 3.
        block = np.array([[1.0, 3.0], [2.0, 4.0], [3.0, 5.0], [2.0, 4.0]])
        eeg = WordEEG(np.tile(block, (8, 1)))
        assert eeg_token_raw(eeg) == 3.0

    def test_unfixated_word(self):
        assert eeg_token_raw(None) == 0.0

    def test_inconsistent_vector_lengths_rejected(self):
        ragged = [[1.0, 2.0]] * (N_EEG_VECTORS - 1) + [[1.0]]
        with pytest.raises(ValidationError):
            WordEEG(ragged)

    def test_oracle_on_random_words(self):
        rng = np.random.default_rng(23)
        for _ in range(200):
            channels = rng.normal(size=(N_EEG_VECTORS, 7))
            expected = float(np.mean([np.mean(col) for col in channels.T]))
            assert eeg_token_raw(WordEEG(channels)) == pytest.approx(expected, abs=1e-12)


class TestScaleEEGTokens:
    def test_min_max_example(self):
        assert scale_eeg_tokens([0.0, 3.0, 6.0]).tolist() == [0, 50, 100]

    def test_all_equal_nonzero_maps_to_max(self):
        assert scale_eeg_tokens([5.0, 5.0]).tolist() == [100, 100]

    def test_single_zero(self):
        assert scale_eeg_tokens([0.0]).tolist() == [0]

    def test_unfixated_words_stay_zero_after_shift(self):
        raw = np.array([-2.0, 0.0, 0.0, 2.0])
        fixated = np.array([True, False, False, True])
        got = scale_eeg_tokens(raw, fixated)
        assert got[1] == got[2] == 0
        assert got[0] == 0 and got[3] == 100  # shifted to [0, 4]

    def test_oracle_on_random_corpora(self):
        rng = np.random.default_rng(29)
        for _ in range(300):
            n = int(rng.integers(1, 40))
            fixated = rng.random(n) < 0.7
            raw = np.where(fixated, rng.normal(2.0, 1.5, n), 0.0)
            got = scale_eeg_tokens(raw, fixated)
            vals = raw[fixated]
            if vals.size:
                shifted = vals - min(vals.min(), 0.0)
                hi = shifted.max()
                expected = np.zeros(n, dtype=int)
                if hi > 0:
                    expected[fixated] = np.floor(100 * shifted / hi + 0.5).astype(int)
                assert got.tolist() == expected.tolist()
            assert (got[~fixated] == 0).all()
            assert ((got >= 0) & (got <= 100)).all()


class TestSentenceEEG:
    def test_equal_vectors_pass_through(self):
        v = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(sentence_eeg(np.tile(v, (8, 1))), v)

    def test_two_value_average(self):
        bands = np.array([[0.0, 2.0]] * 4 + [[2.0, 4.0]] * 4)
        np.testing.assert_array_equal(sentence_eeg(bands), [1.0, 3.0])

    def test_zeros(self):
        np.testing.assert_array_equal(sentence_eeg(np.zeros((8, 5))), np.zeros(5))

    def test_wrong_band_count_rejected(self):
        with pytest.raises(ValidationError):
            sentence_eeg(np.zeros((7, 5)))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(31)
        bands = rng.normal(size=(8, 6))
        shuffled = bands[rng.permutation(8)]
        np.testing.assert_allclose(sentence_eeg(bands), sentence_eeg(shuffled), atol=1e-12)


class TestCognitiveMask:
    def setup_method(self):
        self.vocab = build_vocab(["he won the nobel prize"])

    def test_paper_layout(self):
        layout = encode(["he", "won", "the", "nobel", "prize"], self.vocab, max_len=9)
        mask = cognitive_mask([0, 2, 1, 3, 2], layout)
        expected = [MASK_KEEP, MASK_SUPPRESS, MASK_KEEP, MASK_SUPPRESS,
                    MASK_KEEP, MASK_KEEP, MASK_KEEP, MASK_SUPPRESS, MASK_SUPPRESS]
        assert mask.tolist() == expected

    def test_zero_fixations_suppressed(self):
        layout = encode(["he"], self.vocab, max_len=4)
        assert cognitive_mask([0], layout)[1] == MASK_SUPPRESS

    def test_single_fixation_suppressed(self):
        layout = encode(["he"], self.vocab, max_len=4)
        assert cognitive_mask([1], layout)[1] == MASK_SUPPRESS

    def test_all_multiply_fixated_equals_base_mask(self):
        rng = np.random.default_rng(37)
        words = ["he", "won", "the", "nobel", "prize"]
        for _ in range(50):
            n = int(rng.integers(1, 6))
            layout = encode(words[:n], self.vocab, max_len=8)
            mask = cognitive_mask(rng.integers(2, 9, size=n), layout)
            np.testing.assert_array_equal(mask, layout.base_mask)

    def test_misalignment_rejected(self):
        layout = encode(["he", "won"], self.vocab, max_len=6)
        with pytest.raises(ValidationError):
            cognitive_mask([2], layout)


def toy_measurement(sid, words, fixations, rng, C=4, label=0):
    word_eeg = [make_eeg(C=C, rng=rng) if f.n_fixations else None for f in fixations]
    return SentenceMeasurement(
        sentence_id=sid,
        words=words,
        label=label,
        fixations=fixations,
        word_eeg=word_eeg,
        sentence_bands=rng.normal(size=(8, C)),
    )


class TestLexicon:
    def test_two_occurrence_mean(self):
        rng = np.random.default_rng(41)
        m1 = toy_measurement("a", ["word"], [WordFixation(2, 1, 1, 1, 1)], rng)
        m2 = toy_measurement("b", ["word"], [WordFixation(3, 2, 2, 2, 2)], rng)
        m1.word_eeg[0] = WordEEG(np.tile([[1.0, 3.0]], (N_EEG_VECTORS, 1)))
        m2.word_eeg[0] = WordEEG(np.tile([[3.0, 5.0]], (N_EEG_VECTORS, 1)))
        lex = build_lexicon([m1, m2])
        np.testing.assert_allclose(lex.vectors["word"], [2.0, 4.0])
        assert lex.counts["word"] == 2

    def test_single_occurrence_is_its_own_vector(self):
        rng = np.random.default_rng(43)
        m = toy_measurement("a", ["once"], [WordFixation(2, 1, 1, 1, 1)], rng)
        lex = build_lexicon([m])
        np.testing.assert_allclose(lex.vectors["once"], m.word_eeg[0].occurrence_vector())

    def test_unfixated_everywhere_word_excluded(self):
        rng = np.random.default_rng(47)
        m = toy_measurement("a", ["ghost", "real"],
                            [WordFixation(0), WordFixation(2, 1, 1, 1, 1)], rng)
        lex = build_lexicon([m])
        assert "ghost" not in lex
        assert "real" in lex

    def test_matches_collect_then_average_oracle(self):
        rng = np.random.default_rng(53)
        measurements = []
        for i in range(30):
            n = int(rng.integers(1, 8))
            words = [f"w{int(rng.integers(10))}" for _ in range(n)]
            fixations = [
                WordFixation(int(rng.integers(0, 4)) or 0) for _ in range(n)
            ]
            fixations = [
                WordFixation(f.n_fixations, 1, 1, 1, 1) if f.n_fixations else f
                for f in fixations
            ]
            measurements.append(toy_measurement(f"s{i}", words, fixations, rng))
        lex = build_lexicon(measurements)

        collected: dict[str, list[np.ndarray]] = {}
        for m in measurements:
            for w, e in zip(m.words, m.word_eeg):
                if e is not None:
                    collected.setdefault(w, []).append(e.channels.mean(axis=0))
        assert set(lex.vectors) == set(collected)
        for w, vecs in collected.items():
            np.testing.assert_allclose(lex.vectors[w], np.mean(vecs, axis=0), atol=1e-12)
            assert lex.counts[w] == len(vecs)

    def test_sentence_average_and_coverage(self):
        lex = EEGLexicon(
            vectors={"a": np.array([0.0, 2.0]), "b": np.array([2.0, 4.0])},
            counts={"a": 1, "b": 1},
        )
        vec, coverage = lexicon_sentence_eeg(["a", "b"], lex, 2)
        np.testing.assert_array_equal(vec, [1.0, 3.0])
        assert coverage == 1.0

        vec, coverage = lexicon_sentence_eeg(["zzz"], lex, 2)
        np.testing.assert_array_equal(vec, [0.0, 0.0])
        assert coverage == 0.0

        vec, coverage = lexicon_sentence_eeg(["a", "zzz"], lex, 2)
        np.testing.assert_array_equal(vec, [0.0, 2.0])
        assert coverage == 0.5

    def test_word_order_invariance(self):
        rng = np.random.default_rng(59)
        lex = EEGLexicon(
            vectors={f"w{i}": rng.normal(size=3) for i in range(6)},
            counts={f"w{i}": 1 for i in range(6)},
        )
        words = ["w0", "w3", "w5", "w1"]
        a, _ = lexicon_sentence_eeg(words, lex, 3)
        b, _ = lexicon_sentence_eeg(list(reversed(words)), lex, 3)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_jsonl_round_trip(self, tmp_path):
        rng = np.random.default_rng(61)
        lex = EEGLexicon(
            vectors={"x": rng.normal(size=4), "y": rng.normal(size=4)},
            counts={"x": 3, "y": 1},
        )
        path = tmp_path / "lexicon.jsonl"
        lex.save_jsonl(path)
        loaded = EEGLexicon.load_jsonl(path)
        assert loaded.counts == lex.counts
        for w in lex.vectors:
            np.testing.assert_array_equal(loaded.vectors[w], lex.vectors[w])


class TestDeriveRecords:
    def test_token_zeroing_follows_fixations(self):
        _, db, _ = synth_generate(SynthConfig(n_sentences=40), seed=3)
        for sid in db.ids():
            rec = db.get(sid)
            unfixated = rec.n_fixations == 0
            assert (rec.eye_tokens[unfixated] == 0).all()
            assert (rec.eeg_tokens[unfixated] == 0).all()

    def test_per_sentence_eye_max_is_100(self):
        _, db, _ = synth_generate(SynthConfig(n_sentences=40), seed=3)
        for sid in db.ids():
            rec = db.get(sid)
            if (rec.n_fixations > 0).any():
                assert rec.eye_tokens.max() == 100

    def test_tokens_within_range(self):
        _, db, _ = synth_generate(SynthConfig(n_sentences=40), seed=3)
        for sid in db.ids():
            rec = db.get(sid)
            assert ((rec.eye_tokens >= 0) & (rec.eye_tokens <= 100)).all()
            assert ((rec.eeg_tokens >= 0) & (rec.eeg_tokens <= 100)).all()


class TestFeatureDb:
    def test_exact_lookup_and_batch_order(self):
        _, db, _ = synth_generate(SynthConfig(n_sentences=16), seed=5)
        ids = db.ids()
        shuffled = [ids[3], ids[0], ids[7]]
        records = db.lookup_batch(shuffled)
        assert [r.sentence_id for r in records] == shuffled

    def test_missing_id_names_the_sentence(self):
        _, db, _ = synth_generate(SynthConfig(n_sentences=16), seed=5)
        with pytest.raises(FeatureLookupError, match="nope"):
            db.get("nope")

    def test_jsonl_round_trip_exact(self, tmp_path):
        _, db, _ = synth_generate(SynthConfig(n_sentences=16), seed=5)
        path = tmp_path / "features.jsonl"
        db.save_jsonl(path)
        loaded = FeatureDb.load_jsonl(path)
        assert loaded.ids() == db.ids()
        for sid in db.ids():
            a, b = db.get(sid), loaded.get(sid)
            assert a.tokens == b.tokens and a.label == b.label
            np.testing.assert_array_equal(a.n_fixations, b.n_fixations)
            np.testing.assert_array_equal(a.eye_tokens, b.eye_tokens)
            np.testing.assert_array_equal(a.eeg_tokens, b.eeg_tokens)
            np.testing.assert_array_equal(a.sentence_eeg, b.sentence_eeg)


class TestSynthGenerate:
    def test_byte_identical_reruns(self, tmp_path):
        cfg = SynthConfig(n_sentences=24)
        for name in ("one", "two"):
            meas, db, _ = synth_generate(cfg, seed=9)
            save_measurements(meas, tmp_path / f"{name}.corpus")
            db.save_jsonl(tmp_path / f"{name}.features")
        assert (tmp_path / "one.corpus").read_bytes() == (tmp_path / "two.corpus").read_bytes()
        assert (tmp_path / "one.features").read_bytes() == (tmp_path / "two.features").read_bytes()

    def test_keywords_fixated_more_than_fillers(self):
        cfg = SynthConfig(n_sentences=200)
        meas, _, _ = synth_generate(cfg, seed=13)
        kw_fix, filler_fix = [], []
        n_words = 0
        for m in meas:
            for w, f in zip(m.words, m.fixations):
                n_words += 1
                (kw_fix if w.startswith("kw") else filler_fix).append(f.n_fixations)
        assert n_words >= 1000
        assert np.mean(kw_fix) > np.mean(filler_fix)

    def test_every_sentence_contains_own_class_keyword(self):
        for distractors in (0, 2):
            cfg = SynthConfig(n_sentences=80, distractors=distractors, max_keywords=2)
            meas, _, labels = synth_generate(cfg, seed=15)
            for m, label in zip(meas, labels):
                own = set(cfg.keywords(label))
                assert own & set(m.words)

    def test_distractors_are_unfixated_wrong_class_keywords(self):
        cfg = SynthConfig(n_sentences=80, distractors=2, max_keywords=2)
        meas, _, _ = synth_generate(cfg, seed=15)
        saw_distractor = False
        for m in meas:
            own = set(cfg.keywords(m.label))
            for w, f in zip(m.words, m.fixations):
                if w.startswith("kw") and w not in own:
                    saw_distractor = True
                    assert f.n_fixations == 0
                if w in own:
                    assert f.n_fixations >= 2
        assert saw_distractor

    def test_invalid_config_rejected(self):
        with pytest.raises(ValidationError):
            SynthConfig(n_classes=1)
        with pytest.raises(ValidationError):
            SynthConfig(min_words=2, max_keywords=3)

    def test_measurement_round_trip(self, tmp_path):
        meas, _, _ = synth_generate(SynthConfig(n_sentences=8), seed=21)
        path = tmp_path / "corpus.jsonl"
        save_measurements(meas, path)
        loaded = load_measurements(path)
        assert len(loaded) == len(meas)
        for a, b in zip(meas, loaded):
            assert a.words == b.words and a.label == b.label
            assert [f.n_fixations for f in a.fixations] == [f.n_fixations for f in b.fixations]
            np.testing.assert_array_equal(a.sentence_bands, b.sentence_bands)
            for ea, eb in zip(a.word_eeg, b.word_eeg):
                if ea is None:
                    assert eb is None
                else:
                    np.testing.assert_array_equal(ea.channels, eb.channels)
