import numpy as np
from django.test import SimpleTestCase

from apps.continual.exceptions import InputError
from apps.continual.exceptions import InternalError
from apps.continual.logic.config import cl_cfg
from apps.continual.logic.model import GoalPredictor
from apps.continual.logic.schemas import BufferBudget
from apps.continual.logic.schemas import HyperParams
from apps.continual.logic.stream import TaskStream
from apps.continual.logic.stream import stream_batches
from apps.continual.logic.trainer import StepRecord
from apps.continual.logic.trainer import build_learner
from apps.continual.logic.trainer import ema_update
from apps.continual.logic.trainer import project_gradient
from apps.continual.logic.trainer import select_teachers
from apps.continual.tests.factories import make_entry
from apps.continual.tests.factories import make_sample
from apps.continual.tests.factories import small_hyper
from apps.continual.tests.factories import small_predictor
from apps.continual.tests.factories import small_tasks
from utilities.enums import ModelRoleEnum
from utilities.enums import TrainerKindEnum


class EmaUpdateTests(SimpleTestCase):
    def test_decay_one_is_a_fixed_point(self):
        target = np.array([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(ema_update(target, np.zeros(3), 1.0), target)

    def test_decay_zero_copies_the_source(self):
        source = np.array([4.0, 5.0])
        np.testing.assert_array_equal(ema_update(np.zeros(2), source, 0.0), source)

    def test_interpolates(self):
        np.testing.assert_allclose(ema_update(np.array([1.0]), np.array([3.0]), 0.75), [1.5])

    def test_repeated_updates_follow_the_geometric_closed_form(self):
        rng = np.random.default_rng(0)
        start, source = rng.normal(size=5), rng.normal(size=5)
        theta = start.copy()
        for _ in range(1000):
            theta = ema_update(theta, source, 0.99)
        expected = 0.99**1000 * start + (1 - 0.99**1000) * source
        np.testing.assert_allclose(theta, expected, rtol=0, atol=1e-12)

    def test_rejects_bad_input(self):
        with self.assertRaises(InternalError):
            ema_update(np.zeros(2), np.zeros(3), 0.5)
        with self.assertRaises(InternalError):
            ema_update(np.zeros(2), np.zeros(2), 1.5)


class ProjectGradientTests(SimpleTestCase):
    def test_compatible_gradient_is_returned_untouched(self):
        g = np.array([1.0, 1.0])
        out, fired = project_gradient(g, np.array([1.0, 0.0]))
        self.assertIs(out, g)
        self.assertFalse(fired)

    def test_conflicting_gradient_is_projected_onto_the_constraint(self):
        g_ref = np.array([1.0, 0.0])
        out, fired = project_gradient(np.array([-2.0, 1.0]), g_ref)
        self.assertTrue(fired)
        np.testing.assert_allclose(out, [0.0, 1.0])
        self.assertAlmostEqual(float(out @ g_ref), 0.0, places=12)

    def test_random_pairs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            g, g_ref = rng.normal(size=6), rng.normal(size=6)
            out, fired = project_gradient(g, g_ref)
            if fired:
                self.assertAlmostEqual(float(out @ g_ref), 0.0, delta=1e-9)
            else:
                self.assertIs(out, g)

    def test_zero_reference_never_fires(self):
        g = np.array([-1.0, 0.0])
        out, fired = project_gradient(g, np.zeros(2))
        self.assertFalse(fired)
        self.assertIs(out, g)


class LearnerFixtureMixin:
    def setUp(self):
        self.predictor = small_predictor()
        self.model = GoalPredictor(self.predictor)
        self.stream = TaskStream(small_tasks(n_tasks=2, n_train=16, n_test=4), seed=0, predictor=self.predictor)
        self.batches = list(stream_batches(self.stream, 4))


class SelectTeachersTests(LearnerFixtureMixin, SimpleTestCase):
    def test_ties_go_to_the_slow_model(self):
        theta = self.model.init_params(np.random.default_rng(0))
        teachers, used_fast = select_teachers(self.model, self.batches[0], theta, theta.copy())
        self.assertFalse(used_fast.any())
        np.testing.assert_allclose(teachers, self.model.probabilities(theta, self.batches[0]))

    def test_picks_the_lower_loss_model_per_sample(self):
        rng = np.random.default_rng(1)
        theta_f = self.model.init_params(rng)
        theta_s = self.model.init_params(rng)
        samples = self.batches[0]
        _, loss_f = self.model.sample_losses(theta_f, samples)
        _, loss_s = self.model.sample_losses(theta_s, samples)
        _, used_fast = select_teachers(self.model, samples, theta_f, theta_s)
        np.testing.assert_array_equal(used_fast, loss_f < loss_s)


class LearnerTests(LearnerFixtureMixin, SimpleTestCase):
    def test_every_kind_starts_from_the_same_weights(self):
        budget = BufferBudget(total=20, score_batch=4)
        starts = [build_learner(kind, self.model, small_hyper(), budget, seed=3).theta_w for kind in TrainerKindEnum]
        for theta in starts[1:]:
            np.testing.assert_array_equal(theta, starts[0])

    def test_budget_split_per_kind(self):
        budget = BufferBudget(total=20, reservoir_share=0.5, score_batch=4)
        sizes = {
            kind: {name: buf.capacity for name, buf in build_learner(kind, self.model, small_hyper(), budget).buffers().items()}
            for kind in TrainerKindEnum
        }
        self.assertEqual(sizes[TrainerKindEnum.VANILLA], {})
        self.assertEqual(sizes[TrainerKindEnum.DER], {"reservoir": 20})
        self.assertEqual(sizes[TrainerKindEnum.AGEM], {"reservoir": 20})
        self.assertEqual(sizes[TrainerKindEnum.GSS], {"diversity": 20})
        self.assertEqual(sizes[TrainerKindEnum.DUAL_LS], {"reservoir": 10, "diversity": 10})

    def test_one_gradient_step_per_batch(self):
        learner = build_learner(TrainerKindEnum.DUAL_LS, self.model, small_hyper(), BufferBudget(total=8, score_batch=2))
        for n, batch in enumerate(self.batches, start=1):
            record = learner.step(batch)
            self.assertEqual(record.step, n)
        self.assertEqual(learner.step_count, len(self.batches))
        self.assertEqual(learner.seen_samples, 32)

    def test_processed_samples_count_stream_and_replay(self):
        learner = build_learner(TrainerKindEnum.DER, self.model, small_hyper(), BufferBudget(total=8))
        first = learner.step(self.batches[0])
        self.assertEqual(first.replay_drawn, 0)
        self.assertEqual(first.processed_samples, 4)
        second = learner.step(self.batches[1])
        self.assertEqual(second.replay_drawn, 4)
        self.assertEqual(second.processed_samples, 12)

    def test_empty_batch_is_rejected(self):
        learner = build_learner(TrainerKindEnum.VANILLA, self.model, small_hyper())
        with self.assertRaises(InputError):
            learner.step([])

    def test_der_stores_the_pre_update_prediction(self):
        learner = build_learner(TrainerKindEnum.DER, self.model, small_hyper(), BufferBudget(total=8))
        before = learner.theta_w.copy()
        learner.step(self.batches[0])
        expected = self.model.probabilities(before, self.batches[0])
        for entry, probs in zip(learner.reservoir.entries, expected):
            np.testing.assert_allclose(entry.teacher_heatmap.values.reshape(-1), probs)

    def test_dual_ls_without_replay_weights_or_ema_matches_vanilla(self):
        hyper = small_hyper(
            alpha_reservoir=0.0,
            beta_reservoir=0.0,
            alpha_diversity=0.0,
            beta_diversity=0.0,
            fast_update_prob=0.0,
            slow_update_prob=0.0,
        )
        dual = build_learner(TrainerKindEnum.DUAL_LS, self.model, hyper, BufferBudget(total=8, score_batch=2), seed=5)
        vanilla = build_learner(TrainerKindEnum.VANILLA, self.model, hyper, seed=5)
        start = dual.theta_w.copy()
        for batch in self.batches:
            dual.step(batch)
            vanilla.step(batch)
        np.testing.assert_array_equal(dual.theta_w, vanilla.theta_w)
        np.testing.assert_array_equal(dual.theta_f, start)
        np.testing.assert_array_equal(dual.theta_s, start)

    def test_der_without_replay_weights_matches_vanilla(self):
        hyper = small_hyper(alpha_reservoir=0.0, beta_reservoir=0.0)
        der = build_learner(TrainerKindEnum.DER, self.model, hyper, BufferBudget(total=8), seed=5)
        vanilla = build_learner(TrainerKindEnum.VANILLA, self.model, hyper, seed=5)
        for batch in self.batches:
            der.step(batch)
            vanilla.step(batch)
        np.testing.assert_array_equal(der.theta_w, vanilla.theta_w)

    def test_dual_ls_trace_accounts_for_every_teacher(self):
        learner = build_learner(TrainerKindEnum.DUAL_LS, self.model, small_hyper(), BufferBudget(total=8, score_batch=2))
        for batch in self.batches:
            record = learner.step(batch)
            self.assertEqual(record.fast_teachers + record.slow_teachers, record.replay_drawn)
            self.assertEqual(sum(record.draw_composition.values()), record.replay_drawn)
            self.assertLessEqual(record.reservoir_size, 4)
            self.assertLessEqual(record.diversity_size, 4)

    def test_evaluation_roles(self):
        learner = build_learner(TrainerKindEnum.DUAL_LS, self.model, small_hyper(), BufferBudget(total=8, score_batch=2))
        learner.step(self.batches[0])
        self.assertIs(learner.evaluation_params(ModelRoleEnum.SLOW), learner.theta_s)
        self.assertIs(learner.evaluation_params(ModelRoleEnum.FAST), learner.theta_f)
        self.assertIs(learner.evaluation_params("working"), learner.theta_w)
        vanilla = build_learner(TrainerKindEnum.VANILLA, self.model, small_hyper())
        self.assertIs(vanilla.evaluation_params(ModelRoleEnum.SLOW), vanilla.theta_w)

    def test_agem_fills_its_reservoir_and_reports_projection(self):
        learner = build_learner(TrainerKindEnum.AGEM, self.model, small_hyper(), BufferBudget(total=8))
        records = [learner.step(batch) for batch in self.batches]
        self.assertEqual(len(learner.reservoir), 8)
        self.assertFalse(records[0].projected)
        self.assertTrue(all(isinstance(r.projected, bool) for r in records))

    def test_state_round_trip_continues_identically(self):
        budget = BufferBudget(total=8, score_batch=2)
        learner = build_learner(TrainerKindEnum.DUAL_LS, self.model, small_hyper(), budget, seed=2)
        for batch in self.batches[:3]:
            learner.step(batch)
        clone = build_learner(TrainerKindEnum.DUAL_LS, self.model, small_hyper(), budget, seed=99)
        clone.load_state_dict(learner.state_dict())
        for batch in self.batches[3:]:
            learner.step(batch)
            clone.step(batch)
        for role, theta in learner.params().items():
            np.testing.assert_array_equal(theta, clone.params()[role])


class EmaDefaultsTests(SimpleTestCase):
    def test_slow_model_consolidates_within_a_default_task(self):
        h = HyperParams()
        steps_per_task = cl_cfg("SYNTHETIC_TRAIN") / h.stream_batch
        fast_window = 1.0 / ((1.0 - h.fast_decay) * h.fast_update_prob)
        slow_window = 1.0 / ((1.0 - h.slow_decay) * h.slow_update_prob)
        self.assertLess(fast_window, slow_window)
        self.assertLessEqual(slow_window, steps_per_task)
        # Expected share of the initial weights left in θ_S after the default stream.
        total_steps = steps_per_task * cl_cfg("SYNTHETIC_TASKS")
        leftover = (1.0 - h.slow_update_prob * (1.0 - h.slow_decay)) ** total_steps
        self.assertLess(leftover, 1e-3)


class EmaTraceTests(SimpleTestCase):
    def test_recorded_triggers_rebuild_fast_and_slow_exactly(self):
        predictor = small_predictor()
        model = GoalPredictor(predictor)
        stream = TaskStream(small_tasks(n_tasks=3, n_train=40, n_test=4), seed=1, predictor=predictor)
        hyper = small_hyper(fast_update_prob=0.5, slow_update_prob=0.5, fast_decay=0.8, slow_decay=0.95)
        learner = build_learner(TrainerKindEnum.DUAL_LS, model, hyper, BufferBudget(total=8, score_batch=2), seed=4)
        theta_f = learner.theta_w.copy()
        theta_s = learner.theta_w.copy()
        trace = []
        for batch in stream_batches(stream, 4):
            record = learner.step(batch)
            trace.append((learner.theta_w.copy(), record.fast_updated, record.slow_updated))

        self.assertTrue(any(fast for _, fast, _ in trace))
        self.assertTrue(any(slow for _, _, slow in trace))
        self.assertFalse(all(fast for _, fast, _ in trace))
        for theta_w, fast, slow in trace:
            if fast:
                theta_f = ema_update(theta_f, theta_w, hyper.fast_decay)
            if slow:
                theta_s = ema_update(theta_s, theta_w, hyper.slow_decay)
        np.testing.assert_array_equal(theta_f, learner.theta_f)
        np.testing.assert_array_equal(theta_s, learner.theta_s)


class ReductionTests(SimpleTestCase):
    def test_bufferless_dual_ls_and_weightless_der_follow_vanilla_for_200_steps(self):
        predictor = small_predictor()
        model = GoalPredictor(predictor)
        stream = TaskStream(small_tasks(n_tasks=4, n_train=200, n_test=4), seed=0, predictor=predictor)
        batches = list(stream_batches(stream, 4))
        self.assertEqual(len(batches), 200)

        dual = build_learner(
            TrainerKindEnum.DUAL_LS,
            model,
            small_hyper(fast_update_prob=0.0, slow_update_prob=0.0),
            BufferBudget(total=0),
            seed=6,
        )
        der = build_learner(
            TrainerKindEnum.DER,
            model,
            small_hyper(alpha_reservoir=0.0, beta_reservoir=0.0),
            BufferBudget(total=8),
            seed=6,
        )
        vanilla = build_learner(TrainerKindEnum.VANILLA, model, small_hyper(), seed=6)
        start = vanilla.theta_w.copy()
        for batch in batches:
            dual.step(batch)
            der.step(batch)
            vanilla.step(batch)
            np.testing.assert_array_equal(dual.theta_w, vanilla.theta_w)
            np.testing.assert_array_equal(der.theta_w, vanilla.theta_w)
        np.testing.assert_array_equal(dual.theta_f, start)
        np.testing.assert_array_equal(dual.theta_s, start)
        self.assertEqual(len(der.reservoir), 8)


class GSSLearnerTests(LearnerFixtureMixin, SimpleTestCase):
    def test_first_step_with_an_empty_buffer_is_the_vanilla_step(self):
        budget = BufferBudget(total=8, score_batch=2)
        gss = build_learner(TrainerKindEnum.GSS, self.model, small_hyper(), budget, seed=3)
        vanilla = build_learner(TrainerKindEnum.VANILLA, self.model, small_hyper(), seed=3)
        record = gss.step(self.batches[0])
        vanilla.step(self.batches[0])
        self.assertEqual(record.replay_drawn, 0)
        np.testing.assert_array_equal(gss.theta_w, vanilla.theta_w)
        self.assertEqual(len(gss.diversity), 4)

    def test_zero_replay_weight_trains_like_vanilla_while_the_buffer_fills(self):
        hyper = small_hyper(beta_diversity=0.0)
        gss = build_learner(TrainerKindEnum.GSS, self.model, hyper, BufferBudget(total=8, score_batch=2), seed=3)
        vanilla = build_learner(TrainerKindEnum.VANILLA, self.model, hyper, seed=3)
        drawn = 0
        for batch in self.batches:
            drawn += gss.step(batch).replay_drawn
            vanilla.step(batch)
            np.testing.assert_array_equal(gss.theta_w, vanilla.theta_w)
        self.assertEqual(len(gss.diversity), 8)
        self.assertEqual(gss.diversity.seen_count, 32)
        self.assertGreater(drawn, 0)

    def test_replaying_the_batch_itself_scales_the_gradient(self):
        beta = 0.5
        hyper = small_hyper(beta_diversity=beta, replay_diversity=4)
        gss = build_learner(TrainerKindEnum.GSS, self.model, hyper, BufferBudget(total=4, score_batch=2), seed=3)
        batch = self.batches[0]
        for index, sample in enumerate(batch, start=1):
            gss.diversity.offer_scored(make_entry(index, sample=sample), 0.5)
        before = gss.theta_w.copy()

        record = gss.step(batch)

        self.assertEqual(record.replay_drawn, 4)
        expected = before - hyper.lr * (1.0 + beta) * self.model.grad(before, batch)
        np.testing.assert_allclose(gss.theta_w, expected, rtol=1e-10, atol=1e-13)


class AGEMProjectionTests(SimpleTestCase):
    def _conflicting_pair(self, model):
        stream_sample = make_sample(goal=(8.0, 0.0))
        for seed in range(5):
            theta = build_learner(TrainerKindEnum.AGEM, model, small_hyper(), BufferBudget(total=1), seed=seed).theta_w
            g = model.grad(theta, [stream_sample])
            for goal in ((-8.0, 0.0), (0.0, 8.0), (0.0, -8.0), (-8.0, 8.0), (-8.0, -8.0)):
                memory = make_sample(goal=goal)
                g_ref = model.grad(theta, [memory])
                if g @ g_ref < 0:
                    return seed, stream_sample, memory
        self.fail("no conflicting pair among the candidate goals")

    def test_conflicting_replay_is_projected_onto_the_constraint(self):
        model = GoalPredictor(small_predictor())
        seed, stream_sample, memory = self._conflicting_pair(model)
        hyper = small_hyper()
        learner = build_learner(TrainerKindEnum.AGEM, model, hyper, BufferBudget(total=1), seed=seed)
        learner.reservoir.offer(make_entry(0, sample=memory))
        before = learner.theta_w.copy()
        g = model.grad(before, [stream_sample])
        g_ref = model.grad(before, [memory])

        record = learner.step([stream_sample])

        self.assertTrue(record.projected)
        self.assertEqual(record.replay_drawn, 1)
        g_tilde = (before - learner.theta_w) / hyper.lr
        expected = g - (g @ g_ref) / (g_ref @ g_ref) * g_ref
        np.testing.assert_allclose(g_tilde, expected, rtol=1e-6, atol=1e-10)
        scale = np.linalg.norm(g) * np.linalg.norm(g_ref)
        self.assertAlmostEqual(float(g_tilde @ g_ref) / scale, 0.0, delta=1e-9)

    def test_aligned_replay_leaves_the_gradient_alone(self):
        model = GoalPredictor(small_predictor())
        sample = make_sample(goal=(8.0, 0.0))
        hyper = small_hyper()
        learner = build_learner(TrainerKindEnum.AGEM, model, hyper, BufferBudget(total=1), seed=0)
        learner.reservoir.offer(make_entry(0, sample=sample))
        before = learner.theta_w.copy()

        record = learner.step([sample])

        self.assertFalse(record.projected)
        np.testing.assert_array_equal(learner.theta_w, before - hyper.lr * model.grad(before, [sample]))


class StepRecordTests(SimpleTestCase):
    def test_draw_composition_is_flattened_for_csv(self):
        record = StepRecord(step=3, stream_loss=1.0, draw_composition={1: 3, 0: 2})
        self.assertEqual(record.as_row()["draw_composition"], "0:2;1:3")
