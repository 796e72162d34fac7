import numpy as np
import pytest
from django.test import SimpleTestCase
from scipy import stats

from apps.continual.logic.buffers import INITIAL_SCORE
from apps.continual.logic.buffers import DiversityBuffer
from apps.continual.logic.buffers import ReservoirBuffer
from apps.continual.logic.buffers import composition
from apps.continual.logic.buffers import direction_variance
from apps.continual.logic.buffers import diversity_score
from apps.continual.logic.buffers import mean_pairwise_cosine
from apps.continual.logic.buffers import sample_joint
from apps.continual.tests.factories import make_entry
from apps.continual.tests.factories import make_sample


def _rng(seed=0):
    return np.random.default_rng(seed)


class ReservoirBufferTests(SimpleTestCase):
    def test_fills_in_arrival_order(self):
        buf = ReservoirBuffer(3, _rng())
        slots = [buf.offer(make_entry(i)).slot for i in range(3)]
        self.assertEqual(slots, [0, 1, 2])
        self.assertEqual([e.insertion_index for e in buf.entries], [0, 1, 2])

    def test_size_never_exceeds_capacity(self):
        buf = ReservoirBuffer(5, _rng())
        for i in range(200):
            buf.offer(make_entry(i))
            self.assertLessEqual(len(buf), 5)
        self.assertEqual(buf.seen_count, 200)

    def test_zero_capacity_stores_nothing_and_leaves_rng_alone(self):
        rng = _rng(3)
        before = rng.bit_generator.state
        buf = ReservoirBuffer(0, rng)
        for i in range(10):
            self.assertFalse(buf.offer(make_entry(i)).admitted)
        self.assertEqual(len(buf), 0)
        self.assertEqual(buf.sample(4, rng), [])
        self.assertEqual(rng.bit_generator.state, before)

    def test_inclusion_is_uniform_over_the_stream(self):
        capacity, n, trials = 10, 100, 1000
        counts = np.zeros(n)
        rng = _rng(11)
        entries = [make_entry(i) for i in range(n)]
        for _ in range(trials):
            buf = ReservoirBuffer(capacity, rng)
            for entry in entries:
                buf.offer(entry)
            for entry in buf.entries:
                counts[entry.insertion_index] += 1
        expected = np.full(n, trials * capacity / n)
        self.assertGreater(stats.chisquare(counts, expected).pvalue, 1e-3)

    def test_sample_is_without_replacement(self):
        buf = ReservoirBuffer(6, _rng())
        for i in range(6):
            buf.offer(make_entry(i))
        drawn = buf.sample(4, _rng(1))
        self.assertEqual(len({e.insertion_index for e in drawn}), 4)
        self.assertEqual(len(buf.sample(50, _rng(1))), 6)

    def test_state_round_trip_continues_identically(self):
        buf = ReservoirBuffer(4, _rng(5))
        for i in range(20):
            buf.offer(make_entry(i))
        clone = ReservoirBuffer(4, _rng(99))
        clone.load_state_dict(buf.state_dict())
        for i in range(20, 60):
            self.assertEqual(buf.offer(make_entry(i)), clone.offer(make_entry(i)))
        self.assertEqual(
            [e.insertion_index for e in buf.entries],
            [e.insertion_index for e in clone.entries],
        )


class DiversityScoreTests(SimpleTestCase):
    def test_score_is_best_cosine_plus_one(self):
        g = np.array([1.0, 0.0])
        self.assertAlmostEqual(diversity_score(g, [g]), 2.0)
        self.assertAlmostEqual(diversity_score(g, [np.array([0.0, 3.0])]), 1.0)
        self.assertAlmostEqual(diversity_score(g, [-g]), 0.0)
        self.assertAlmostEqual(diversity_score(g, [-g, np.array([0.0, 1.0])]), 1.0)

    def test_degenerate_inputs_fall_back_to_initial_score(self):
        g = np.array([1.0, 2.0])
        self.assertEqual(diversity_score(np.zeros(2), [g]), INITIAL_SCORE)
        self.assertEqual(diversity_score(g, []), INITIAL_SCORE)
        self.assertEqual(diversity_score(g, [np.zeros(2)]), INITIAL_SCORE)

    def test_zero_norm_references_are_skipped(self):
        g = np.array([0.0, 1.0])
        self.assertAlmostEqual(diversity_score(g, [np.zeros(2), np.array([0.0, -1.0])]), 0.0)


def _grad_table(mapping):
    """grad_fn that looks gradients up by sample identity."""

    def grad_fn(samples):
        return np.stack([mapping[id(s)] for s in samples])

    return grad_fn


class DiversityBufferTests(SimpleTestCase):
    def test_first_entry_gets_initial_score(self):
        buf = DiversityBuffer(3, 4, _rng())
        admission = buf.offer(make_entry(0), grad_fn=lambda samples: self.fail("no gradients needed"))
        self.assertTrue(admission.admitted)
        self.assertEqual(buf.entries[0].score_q, INITIAL_SCORE)

    def test_fill_phase_scores_against_residents(self):
        a, b = make_sample(task=0), make_sample(task=1)
        grads = _grad_table({id(a): np.array([1.0, 0.0]), id(b): np.array([1.0, 0.0])})
        buf = DiversityBuffer(3, 4, _rng())
        buf.offer(make_entry(0, sample=a), grads)
        buf.offer(make_entry(1, sample=b), grads)
        np.testing.assert_allclose(buf.scores, [INITIAL_SCORE, 2.0])

    def test_similar_newcomer_is_rejected_once_full(self):
        buf = DiversityBuffer(2, 4, _rng())
        buf.offer_scored(make_entry(0), 0.5)
        buf.offer_scored(make_entry(1), 0.5)
        state = buf.rng.bit_generator.state
        admission = buf.offer_scored(make_entry(2), 1.0)
        self.assertFalse(admission.admitted)
        self.assertEqual([e.insertion_index for e in buf.entries], [0, 1])
        self.assertEqual(buf.rng.bit_generator.state, state)

    def test_victims_are_drawn_in_proportion_to_their_scores(self):
        scores = np.array([0.2, 0.3, 0.5])
        buf = DiversityBuffer(3, 4, _rng(21))
        for i, q in enumerate(scores):
            buf.offer_scored(make_entry(i), q)
        residents = list(buf.entries)
        trials = 3000
        counts = np.zeros(3)
        for t in range(trials):
            # q_new = 0 always replaces the drawn victim
            admission = buf.offer_scored(make_entry(100 + t), 0.0)
            self.assertTrue(admission.admitted)
            counts[admission.slot] += 1
            buf.entries = list(residents)
        self.assertGreater(stats.chisquare(counts, scores * trials).pvalue, 1e-3)

    def test_replacement_probability_is_q_old_over_q_old_plus_q_new(self):
        buf = DiversityBuffer(1, 4, _rng(8))
        buf.offer_scored(make_entry(0), 0.6)
        residents = list(buf.entries)
        trials = 3000
        admitted = 0
        for t in range(trials):
            admitted += buf.offer_scored(make_entry(1 + t), 0.2).admitted
            buf.entries = list(residents)
        result = stats.binomtest(admitted, trials, 0.6 / (0.6 + 0.2))
        self.assertGreater(result.pvalue, 1e-3)

    def test_two_entry_replacement_frequencies(self):
        buf = DiversityBuffer(2, 4, _rng(13))
        buf.offer_scored(make_entry(0), 1.9)
        buf.offer_scored(make_entry(1), 0.1)
        residents = list(buf.entries)
        trials = 20_000
        first_chosen = first_replaced = 0
        for t in range(trials):
            admission = buf.offer_scored(make_entry(2 + t), 0.05)
            if admission.candidate == 0:
                first_chosen += 1
                first_replaced += admission.admitted
            buf.entries = list(residents)
        self.assertAlmostEqual(first_chosen / trials, 0.95, delta=0.01)
        self.assertAlmostEqual(first_replaced / first_chosen, 1.9 / 1.95, delta=0.01)

    def test_zero_capacity_never_scores(self):
        rng = _rng(4)
        before = rng.bit_generator.state
        buf = DiversityBuffer(0, 4, rng)
        admission = buf.offer(make_entry(0), grad_fn=lambda samples: self.fail("no gradients needed"))
        self.assertFalse(admission.admitted)
        self.assertEqual(rng.bit_generator.state, before)


class IntrospectionTests(SimpleTestCase):
    def test_joint_sample_tolerates_missing_buffers(self):
        self.assertEqual(sample_joint(None, None, 4, 4, _rng()), ([], []))

    def test_joint_sample_draws_from_each_buffer(self):
        res = ReservoirBuffer(5, _rng(1))
        div = DiversityBuffer(5, 2, _rng(2))
        for i in range(5):
            res.offer(make_entry(i, task=0))
            div.offer_scored(make_entry(10 + i, task=1), 0.5)
        from_res, from_div = sample_joint(res, div, 3, 2, _rng(3))
        self.assertEqual(composition(from_res), {0: 3})
        self.assertEqual(composition(from_div), {1: 2})

    def test_composition_counts_hidden_tasks(self):
        entries = [make_entry(i, task=t) for i, t in enumerate([2, 0, 2, 1, 2])]
        self.assertEqual(composition(entries), {0: 1, 1: 1, 2: 3})
        self.assertEqual(list(composition(entries)), [0, 1, 2])

    def test_pairwise_cosine(self):
        self.assertAlmostEqual(mean_pairwise_cosine(np.array([[1.0, 0.0], [0.0, 2.0]])), 0.0)
        self.assertAlmostEqual(mean_pairwise_cosine(np.array([[1.0, 0.0], [3.0, 0.0]])), 1.0)
        self.assertTrue(np.isnan(mean_pairwise_cosine(np.array([[1.0, 0.0]]))))

    def test_direction_variance(self):
        self.assertAlmostEqual(direction_variance(np.array([[1.0, 1.0], [2.0, 2.0]])), 0.0)
        self.assertAlmostEqual(direction_variance(np.array([[1.0, 0.0], [-1.0, 0.0]])), 1.0)


class DiversityPreferenceTests(SimpleTestCase):
    """
    90 near-copies of one gradient and 10 mutually orthogonal ones, capacity 10.

    A full buffer turns away any newcomer whose best cosine against the
    sampled residents is not negative, so a gradient orthogonal to all of
    them scores exactly 1 and never gets in. The ten distinct directions are
    therefore built to lean away from the repeated one (cosine −1/√11 each);
    only then are they admissible at all, and the test measures whether the
    buffer prefers them once they are.
    """

    dim = 11

    def _stream(self, seed):
        rng = _rng(seed)
        shared = -np.ones(self.dim) / np.sqrt(self.dim)
        grads = [shared + rng.normal(scale=0.01, size=self.dim) for _ in range(90)]
        grads += list(np.eye(self.dim)[:10])
        order = rng.permutation(len(grads))
        samples = [make_sample() for _ in order]
        return samples, {id(s): grads[i] for s, i in zip(samples, order)}

    def _stored_cosine(self, buf, table):
        return mean_pairwise_cosine(np.stack([table[id(e.sample)] for e in buf.entries]))

    def _full_of(self, direction):
        residents = [make_sample() for _ in range(10)]
        table = {id(s): direction for s in residents}
        buf = DiversityBuffer(10, 4, _rng(5))
        for i, sample in enumerate(residents):
            buf.offer_scored(make_entry(i, sample=sample), 2.0)
        return buf, table

    def test_orthogonal_newcomer_to_a_full_buffer_is_turned_away(self):
        buf, table = self._full_of(np.eye(self.dim)[10])
        newcomer = make_sample()
        table[id(newcomer)] = np.eye(self.dim)[0]
        admission = buf.offer(make_entry(10, sample=newcomer), _grad_table(table))
        self.assertFalse(admission.admitted)
        self.assertIsNone(admission.candidate)
        self.assertEqual(admission.score, 1.0)

    def test_newcomer_leaning_away_is_considered(self):
        buf, table = self._full_of(-np.ones(self.dim) / np.sqrt(self.dim))
        newcomer = make_sample()
        table[id(newcomer)] = np.eye(self.dim)[0]
        admission = buf.offer(make_entry(10, sample=newcomer), _grad_table(table))
        self.assertIsNotNone(admission.candidate)
        self.assertAlmostEqual(admission.score, 1.0 - 1.0 / np.sqrt(self.dim), places=12)

    def test_diversity_buffer_keeps_more_spread_than_reservoir(self):
        wins = 0
        for seed in range(20):
            samples, table = self._stream(seed)
            grad_fn = _grad_table(table)
            res = ReservoirBuffer(10, _rng(100 + seed))
            div = DiversityBuffer(10, 4, _rng(200 + seed))
            for i, sample in enumerate(samples):
                res.offer(make_entry(i, sample=sample))
                div.offer(make_entry(i, sample=sample), grad_fn)
            wins += self._stored_cosine(div, table) < self._stored_cosine(res, table)
        self.assertGreaterEqual(wins, 16)
        self.assertLess(stats.binomtest(wins, 20, 0.5, alternative="greater").pvalue, 0.05)


class SmallReservoirOracleTests(SimpleTestCase):
    def test_two_of_four_items_are_each_kept_half_the_time(self):
        rng = _rng(17)
        entries = [make_entry(i) for i in range(4)]
        trials = 100_000
        counts = np.zeros(4)
        for _ in range(trials):
            buf = ReservoirBuffer(2, rng)
            for entry in entries:
                buf.offer(entry)
            for entry in buf.entries:
                counts[entry.insertion_index] += 1
        np.testing.assert_allclose(counts / trials, 0.5, atol=0.01)


@pytest.mark.slow
class FullSizeMonteCarloTests(SimpleTestCase):
    def test_reservoir_inclusion_at_capacity_50_of_1000(self):
        capacity, n, trials = 50, 1000, 50_000
        rng = _rng(23)
        entries = [make_entry(i) for i in range(n)]
        counts = np.zeros(n)
        for _ in range(trials):
            buf = ReservoirBuffer(capacity, rng)
            for entry in entries:
                buf.offer(entry)
            for entry in buf.entries:
                counts[entry.insertion_index] += 1
        p = capacity / n
        standard_error = np.sqrt(p * (1.0 - p) / trials)
        self.assertLessEqual(np.abs(counts / trials - p).max(), 4.0 * standard_error)
        self.assertGreater(stats.chisquare(counts, np.full(n, trials * p)).pvalue, 1e-3)

    def test_two_entry_replacement_frequencies_at_100k_trials(self):
        buf = DiversityBuffer(2, 4, _rng(29))
        buf.offer_scored(make_entry(0), 1.9)
        buf.offer_scored(make_entry(1), 0.1)
        residents = list(buf.entries)
        trials = 100_000
        first_chosen = first_replaced = 0
        for t in range(trials):
            admission = buf.offer_scored(make_entry(2 + t), 0.05)
            if admission.candidate == 0:
                first_chosen += 1
                first_replaced += admission.admitted
            buf.entries = list(residents)
        self.assertAlmostEqual(first_chosen / trials, 0.95, delta=0.01)
        self.assertAlmostEqual(first_replaced / first_chosen, 1.9 / 1.95, delta=0.01)
