import numpy as np
import pytest

from tripletgen.elo import DEFAULT_INITIAL_RATING, EloStudy, MosRating, expected_score
from tripletgen.errors import ConflictError, NotFoundError


def build_study(n_contenders=2, n_samples=3, **kwargs):
    study = EloStudy("s1", "weights shootout", **kwargs)
    names = [f"c{i}" for i in range(n_contenders)]
    for name in names:
        study.add_contender(name, label=f"weights-{name}")
    for i in range(n_samples):
        study.add_sample(
            f"sample{i}",
            input_ref=f"in{i}.wav",
            instruction=f"instruction {i}",
            outputs={name: f"{name}-{i}.wav" for name in names},
        )
    return study


class TestScheduling:
    def test_two_fresh_contenders_paired(self):
        study = build_study()
        comparison = study.schedule_pair()
        assert {comparison.contender_a, comparison.contender_b} == {"c0", "c1"}

    def test_fewest_games_pair_first(self):
        study = build_study(n_contenders=3, n_samples=10)
        first = study.schedule_pair()
        study.submit_verdict(first.id, "a")
        for _ in range(4):
            comparison = study.schedule_pair()
            study.submit_verdict(comparison.id, "a")
        games = {c.id: c.games for c in study.contenders.values()}
        assert max(games.values()) - min(games.values()) <= 2

    def test_zero_game_pair_preferred(self):
        study = build_study(n_contenders=3, n_samples=5)
        c = study.schedule_pair()  # first pair by id: (c0, c1)
        study.submit_verdict(c.id, "a")
        study.submit_verdict(study.schedule_pair().id, "a")
        study.submit_verdict(study.schedule_pair().id, "a")
        # after three verdicts every pair has played once
        games = {cid: cont.games for cid, cont in study.contenders.items()}
        assert games == {"c0": 2, "c1": 2, "c2": 2}

    def test_never_serves_same_sample_pair_twice(self):
        study = build_study(n_contenders=2, n_samples=3)
        served = set()
        while (comparison := study.schedule_pair()) is not None:
            key = (comparison.sample_id, frozenset((comparison.contender_a, comparison.contender_b)))
            assert key not in served
            served.add(key)
            study.submit_verdict(comparison.id, "tie")
        assert len(served) == 3

    def test_exhaustion_returns_none(self):
        study = build_study(n_contenders=2, n_samples=1)
        study.submit_verdict(study.schedule_pair().id, "a")
        assert study.schedule_pair() is None


class TestVerdicts:
    def test_canonical_update(self):
        study = build_study()
        comparison = study.schedule_pair()
        ratings = study.submit_verdict(comparison.id, "a")
        assert ratings[comparison.contender_a] == pytest.approx(1016.0)
        assert ratings[comparison.contender_b] == pytest.approx(984.0)

    def test_tie_between_equals_no_change(self):
        study = build_study()
        comparison = study.schedule_pair()
        ratings = study.submit_verdict(comparison.id, "tie")
        assert ratings[comparison.contender_a] == pytest.approx(DEFAULT_INITIAL_RATING)
        assert ratings[comparison.contender_b] == pytest.approx(DEFAULT_INITIAL_RATING)

    def test_zero_sum_conserved(self):
        rng = np.random.default_rng(0)
        study = build_study(n_contenders=4, n_samples=50)
        total = sum(c.rating for c in study.contenders.values())
        while (comparison := study.schedule_pair()) is not None:
            study.submit_verdict(comparison.id, rng.choice(["a", "b", "tie"]))
            now = sum(c.rating for c in study.contenders.values())
            assert now == pytest.approx(total, abs=1e-9)

    def test_duplicate_verdict_conflict(self):
        study = build_study()
        comparison = study.schedule_pair()
        study.submit_verdict(comparison.id, "a")
        with pytest.raises(ConflictError):
            study.submit_verdict(comparison.id, "b")

    def test_unknown_comparison(self):
        study = build_study()
        with pytest.raises(NotFoundError):
            study.submit_verdict("nope", "a")

    def test_ties_can_be_disabled(self):
        study = build_study(allow_ties=False)
        comparison = study.schedule_pair()
        with pytest.raises(ValueError):
            study.submit_verdict(comparison.id, "tie")

    def test_expected_score_logistic(self):
        assert expected_score(1000, 1000) == pytest.approx(0.5)
        assert expected_score(1400, 1000) == pytest.approx(1 / (1 + 10 ** (-1)))


class TestRanking:
    def test_fresh_study_ordered_by_id(self):
        study = build_study(n_contenders=3)
        assert [c.id for c in study.ranking()] == ["c0", "c1", "c2"]

    def test_winner_ranks_first(self):
        study = build_study(n_samples=2)
        c1 = study.schedule_pair()
        winner = c1.contender_a
        study.submit_verdict(c1.id, "a")
        c2 = study.schedule_pair()
        study.submit_verdict(c2.id, "a" if c2.contender_a == winner else "b")
        assert study.ranking()[0].id == winner

    def test_ranking_is_permutation(self):
        study = build_study(n_contenders=5)
        assert sorted(c.id for c in study.ranking()) == sorted(study.contenders)


class TestReplay:
    def test_thousand_verdict_log_replays_exactly(self):
        rng = np.random.default_rng(7)
        study = EloStudy("big", "replay")
        for i in range(4):
            study.add_contender(f"c{i}")
        for i in range(500):
            study.add_sample(f"s{i}", f"in{i}.wav", "instr",
                             {f"c{j}": f"c{j}-{i}.wav" for j in range(4)})
        count = 0
        while count < 1000 and (comparison := study.schedule_pair()) is not None:
            study.submit_verdict(comparison.id, rng.choice(["a", "b", "tie"]))
            count += 1
        assert count == 1000
        replayed = EloStudy.replay(
            [{"event": "create", "id": "big", "name": "replay"}] + study.log
        )
        for cid, contender in study.contenders.items():
            assert replayed.contenders[cid].rating == pytest.approx(contender.rating, abs=1e-12)
            assert replayed.contenders[cid].games == contender.games

    def test_log_roundtrip_via_file(self, tmp_path):
        study = build_study(n_samples=4)
        for _ in range(4):
            comparison = study.schedule_pair()
            study.submit_verdict(comparison.id, "a")
        path = tmp_path / "study.jsonl"
        study.save_log(path)
        loaded = EloStudy.load_log(path)
        assert {c.id: c.rating for c in loaded.ranking()} == {
            c.id: c.rating for c in study.ranking()
        }


class TestMos:
    def test_single_rating(self):
        study = build_study()
        study.submit_mos(MosRating("clip.wav", 3, 4, 5))
        agg = study.aggregate_mos()
        assert agg["quality"] == {"mean": 3.0, "std": 0.0, "count": 1}
        assert agg["relevance"]["mean"] == 4.0
        assert agg["faithfulness"]["mean"] == 5.0

    def test_population_std(self):
        study = build_study()
        study.submit_mos(MosRating("a.wav", 2, 3, 3))
        study.submit_mos(MosRating("b.wav", 4, 3, 3))
        agg = study.aggregate_mos()
        assert agg["quality"]["mean"] == pytest.approx(3.0)
        assert agg["quality"]["std"] == pytest.approx(1.0)

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            MosRating("x.wav", 6, 3, 3)
        with pytest.raises(ValueError):
            MosRating("x.wav", 0, 3, 3)
        with pytest.raises(ValueError):
            MosRating("x.wav", 3, 3, "5")
