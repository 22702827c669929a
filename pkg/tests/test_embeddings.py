import numpy as np
import pytest

from tripletgen import audio, embeddings
from tripletgen.embeddings import (
    EmbeddingStats,
    MockClassifier,
    MockEmbedder,
    caption_tone_scene,
    clap_dir,
    clap_out,
    clap_sim,
    collect_stats,
    frechet_distance,
    inception_score,
    kl_divergence,
)
from tripletgen.errors import IncompatibilityError, UndefinedInputError


class FixedEmbedder(embeddings.Embedder):
    """Test double returning pre-registered vectors."""

    def __init__(self, audio_vectors, text_vectors, dimension=3):
        self.dimension = dimension
        self._audio = audio_vectors
        self._text = text_vectors

    def embed_audio(self, clip):
        return np.asarray(self._audio[id(clip)], dtype=np.float64)

    def embed_text(self, caption):
        return np.asarray(self._text[caption], dtype=np.float64)


def _fixed(clip_vec_pairs, text_vectors):
    return FixedEmbedder({id(c): v for c, v in clip_vec_pairs}, text_vectors)


class TestCosineTerms:
    def setup_method(self):
        self.clip_a = audio.sine(200, 0.1, 8000)
        self.clip_b = audio.sine(300, 0.1, 8000)

    def test_clap_out_identical(self):
        emb = _fixed([(self.clip_a, [1, 0, 0])], {"cap": [1, 0, 0]})
        assert clap_out(self.clip_a, "cap", emb) == 1.0

    def test_clap_out_orthogonal_and_opposite(self):
        emb = _fixed([(self.clip_a, [1, 0, 0])], {"orth": [0, 1, 0], "anti": [-1, 0, 0]})
        assert clap_out(self.clip_a, "orth", emb) == 0.0
        assert clap_out(self.clip_a, "anti", emb) == -1.0

    def test_clap_dir_aligned(self):
        emb = _fixed(
            [(self.clip_a, [0, 0, 0]), (self.clip_b, [2, 0, 0])],
            {"in": [1, 1, 0], "out": [2, 1, 0]},
        )
        assert clap_dir(self.clip_a, self.clip_b, "in", "out", emb) == 1.0

    def test_clap_dir_opposed(self):
        emb = _fixed(
            [(self.clip_a, [1, 0, 0]), (self.clip_b, [0, 0, 0])],
            {"in": [1, 1, 0], "out": [2, 1, 0]},
        )
        assert clap_dir(self.clip_a, self.clip_b, "in", "out", emb) == -1.0

    def test_clap_dir_zero_delta_convention(self):
        emb = _fixed(
            [(self.clip_a, [1, 0, 0])],
            {"in": [1, 1, 0], "out": [0, 1, 1]},
        )
        assert clap_dir(self.clip_a, self.clip_a, "in", "out", emb) == 0.0

    def test_clap_sim_known_vectors(self):
        emb = _fixed([(self.clip_a, [3, 4, 0]), (self.clip_b, [4, 3, 0])], {})
        assert clap_sim(self.clip_a, self.clip_b, emb) == pytest.approx(24 / 25)

    def test_clap_sim_symmetric_and_self(self):
        emb = MockEmbedder()
        assert clap_sim(self.clip_a, self.clip_a, emb) == pytest.approx(1.0)
        assert clap_sim(self.clip_a, self.clip_b, emb) == pytest.approx(
            clap_sim(self.clip_b, self.clip_a, emb)
        )


class TestMockEmbedder:
    def test_deterministic(self):
        emb = MockEmbedder()
        clip = audio.sine(440, 0.25, 8000)
        v1, v2 = emb.embed_audio(clip), emb.embed_audio(clip)
        assert np.array_equal(v1, v2)
        assert np.array_equal(emb.embed_text("birds chirp"), emb.embed_text("birds chirp"))

    def test_text_matches_rendered_scene(self):
        emb = MockEmbedder()
        scene = caption_tone_scene("rain on a tin roof")
        sim = embeddings._cosine(emb.embed_audio(scene), emb.embed_text("rain on a tin roof"))
        assert sim == pytest.approx(1.0)

    def test_distinct_captions_distinct_embeddings(self):
        emb = MockEmbedder()
        v1 = emb.embed_text("a dog barks")
        v2 = emb.embed_text("a violin plays")
        assert embeddings._cosine(v1, v2) < 0.999

    def test_unit_norm(self):
        emb = MockEmbedder()
        v = emb.embed_audio(audio.sine(440, 0.25, 8000))
        assert np.linalg.norm(v) == pytest.approx(1.0)


class TestMockClassifier:
    def test_valid_distribution(self):
        clf = MockClassifier(n_classes=10)
        probs = clf.class_probabilities(audio.sine(440, 0.25, 8000))
        assert probs.shape == (10,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.all(probs >= 0)

    def test_silence_gives_uniform(self):
        clf = MockClassifier(n_classes=4)
        probs = clf.class_probabilities(audio.silence(0.25, 8000))
        assert np.allclose(probs, 0.25)


class TestFrechet:
    def test_identical_stats_zero(self):
        rng = np.random.default_rng(0)
        cov = np.eye(4) * 0.5
        stats = EmbeddingStats(rng.standard_normal(4), cov, 10)
        assert frechet_distance(stats, stats) == pytest.approx(0.0, abs=1e-8)

    def test_1d_mean_shift(self):
        a = EmbeddingStats(np.array([0.0]), np.array([[1.0]]), 10)
        b = EmbeddingStats(np.array([1.0]), np.array([[1.0]]), 10)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_1d_variance_change(self):
        a = EmbeddingStats(np.array([0.0]), np.array([[1.0]]), 10)
        b = EmbeddingStats(np.array([0.0]), np.array([[4.0]]), 10)
        assert frechet_distance(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_and_nonnegativity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            m = rng.standard_normal((8, 3))
            n = rng.standard_normal((9, 3))
            a = EmbeddingStats(m.mean(0), np.cov(m, rowvar=False), len(m))
            b = EmbeddingStats(n.mean(0), np.cov(n, rowvar=False), len(n))
            d_ab = frechet_distance(a, b)
            d_ba = frechet_distance(b, a)
            assert abs(d_ab - d_ba) < 1e-8
            assert d_ab >= -1e-8

    def test_dimension_mismatch(self):
        a = EmbeddingStats(np.zeros(2), np.eye(2), 5)
        b = EmbeddingStats(np.zeros(3), np.eye(3), 5)
        with pytest.raises(IncompatibilityError):
            frechet_distance(a, b)


class TestKl:
    def test_identical_zero(self):
        assert kl_divergence([([0.3, 0.7], [0.3, 0.7])]) == pytest.approx(0.0, abs=1e-9)

    def test_onehot_vs_uniform(self):
        value = kl_divergence([([1.0, 0.0], [0.5, 0.5])])
        assert value == pytest.approx(np.log(2), abs=1e-6)

    def test_nonnegative_over_random_pairs(self):
        rng = np.random.default_rng(3)
        pairs = []
        for _ in range(1000):
            p = rng.dirichlet(np.ones(6))
            q = rng.dirichlet(np.ones(6))
            pairs.append((p, q))
        for p, q in pairs:
            assert kl_divergence([(p, q)]) >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(IncompatibilityError):
            kl_divergence([([0.5, 0.5], [0.3, 0.3, 0.4])])


class TestInceptionScore:
    def test_identical_vectors(self):
        assert inception_score([[0.2, 0.8]] * 5) == pytest.approx(1.0, abs=1e-9)

    def test_onehot_coverage(self):
        for n in (2, 4, 8):
            probs = np.eye(n)
            assert inception_score(list(probs)) == pytest.approx(n, abs=1e-6)

    def test_never_below_one(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            probs = rng.dirichlet(np.ones(5), size=6)
            assert inception_score(list(probs)) >= 1.0 - 1e-9

    def test_too_few(self):
        with pytest.raises(UndefinedInputError):
            inception_score([[1.0, 0.0]])


class TestCollectStats:
    def test_duplicates_zero_covariance(self):
        emb = MockEmbedder()
        clip = audio.sine(440, 0.25, 8000)
        stats = collect_stats([clip, clip, clip], emb)
        assert np.allclose(stats.covariance, 0.0, atol=1e-12)

    def test_order_invariant(self):
        emb = MockEmbedder()
        clips = [audio.sine(f, 0.25, 8000) for f in (220, 440, 880)]
        s1 = collect_stats(clips, emb)
        s2 = collect_stats(clips[::-1], emb)
        assert np.allclose(s1.mean, s2.mean)
        assert np.allclose(s1.covariance, s2.covariance)

    def test_matches_hand_computed(self):
        clips = [audio.sine(f, 0.1, 8000) for f in (200, 300, 400)]
        vectors = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
        emb = _fixed(list(zip(clips, vectors)), {})
        emb.dimension = 2
        stats = collect_stats(clips, emb)
        assert np.allclose(stats.mean, [2 / 3, 2 / 3])
        expected_cov = np.cov(np.stack(vectors), rowvar=False, ddof=1)
        assert np.allclose(stats.covariance, expected_cov)
        assert stats.count == 3

    def test_single_clip_rejected(self):
        with pytest.raises(UndefinedInputError):
            collect_stats([audio.sine(440, 0.1, 8000)], MockEmbedder())
