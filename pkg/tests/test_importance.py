import numpy as np
import pytest

from tampkit.importance import (
    FeatureSpec,
    GnnModel,
    SegmentationError,
    batch_samples,
    build_dataset,
    encode_sample,
    label_important,
    load_model,
    oracle_predict,
    predict,
    save_model,
    scores_by_object,
    segment_demos,
    train,
    transition_profiles,
)
from tampkit.scene import Demonstration, Pose, WorldState, atom


@pytest.fixture(scope="module")
def spec(block6_task):
    return FeatureSpec.for_domain(block6_task.domain, block6_task.world)


class TestSegmentation:
    def test_block6_six_segments_per_demo(self, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        segs = segment_demos(block6_demos[:20], subgoals)
        by_demo = {}
        for s in segs:
            by_demo.setdefault(s.demo_id, []).append(s)
        for demo_id, demo_segs in by_demo.items():
            assert 1 <= len(demo_segs) <= len(subgoals)
        # most demos traverse all six transitions
        full = sum(1 for v in by_demo.values() if len(v) == 6)
        assert full >= 15

    def test_segments_cover_each_demo(self, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        segs = segment_demos(block6_demos, subgoals)
        by_demo = {}
        for s in segs:
            by_demo.setdefault(s.demo_id, []).append(s)
        for demo in block6_demos:
            demo_segs = sorted(by_demo[demo.id], key=lambda s: s.start)
            # contiguous, non-overlapping, ending at the final step
            for a, b in zip(demo_segs, demo_segs[1:]):
                assert a.end == b.start
            assert sum(len(s) for s in demo_segs) == demo_segs[-1].end - demo_segs[0].start
            assert demo_segs[-1].end == len(demo.steps) - 1

    def test_initially_satisfied_subgoal_dropped(self, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        demo = block6_demos[0]
        # prepend the first subgoal itself: a demo starting at subgoal 1
        start = next(i for i, st in enumerate(demo.steps) if st.holds(subgoals[0]))
        shifted = Demonstration(0, demo.steps[start:])
        segs = segment_demos([shifted], subgoals)
        assert all(s.to_subgoal != 0 for s in segs)

    def test_unsatisfiable_subgoal_names_demo(self, block6_demos):
        bogus = [frozenset({atom("onblock", "a", "a")})]
        with pytest.raises(SegmentationError) as err:
            segment_demos(block6_demos[:3], bogus)
        assert err.value.demo_id == 0
        assert err.value.subgoal_index == 0


class TestLabels:
    def test_unstack_labels_both_blocks(self, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        segs = segment_demos(block6_demos, subgoals)
        seg = next(s for s in segs if s.to_subgoal == 0 and len(s) >= 2)
        labels = label_important(seg)
        first = next(a.args[0] for a in subgoals[0] if a.predicate == "ontable")
        assert first in labels
        assert "table" in labels or "arm" in labels  # the base context changes too

    def test_empty_segment_labels_nothing(self, block6_demos):
        demo = block6_demos[0]
        from tampkit.importance import Segment

        seg = Segment(0, 0, 0, -1, 0, (demo.steps[0],))
        assert label_important(seg) == frozenset()

    def test_move_and_return_still_important(self, block6_task):
        domain = block6_task.domain
        objects = {"a": "block", "table": "table", "arm": "arm"}
        poses = {"a": Pose(0.1, 0.0, 0.025), "table": Pose(0, 0, 0), "arm": Pose(0, -0.45, 0.3)}
        base = [atom("ontable", "a", "table"), atom("clear", "a"), atom("handempty", "arm")]
        s0 = WorldState.from_atoms(objects, base, poses, {"table", "arm"})
        held = WorldState.from_atoms(
            objects, [atom("inhand", "a")], {**poses, "a": Pose(0.1, 0.0, 0.125)}, {"table", "arm"}
        )
        from tampkit.importance import Segment

        seg = Segment(0, 0, 2, -1, 0, (s0, held, s0))
        assert "a" in label_important(seg)


class TestNetwork:
    def test_gradient_check_every_tensor(self, spec, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        ds = build_dataset(block6_demos[:5], subgoals, spec)
        model = GnnModel.init(spec, seed=3)
        g = batch_samples(ds[:4])
        _, grads = model.loss_and_grads(g)
        eps = 1e-5
        worst = 0.0
        rng = np.random.default_rng(0)
        for name, P in model.params.items():
            flat_idx = rng.choice(P.size, size=min(12, P.size), replace=False)
            for fi in flat_idx:
                ix = np.unravel_index(fi, P.shape)
                orig = P[ix]
                P[ix] = orig + eps
                lp, _ = model.loss_and_grads(g)
                P[ix] = orig - eps
                lm, _ = model.loss_and_grads(g)
                P[ix] = orig
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(grads[name][ix]), 1e-6)
                worst = max(worst, abs(fd - grads[name][ix]) / denom)
        assert worst < 1e-4

    def test_single_sample_memorization(self, spec, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        ds = build_dataset(block6_demos[:1], subgoals, spec)[:1]
        model, losses = train(ds, spec, seed=0, epochs=2500)
        assert losses[-1] < 1e-3

    def test_scores_bounded(self, spec, block6_demos, block6_artifacts):
        model = block6_artifacts.model
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        state = block6_demos[0].steps[0]
        scores = scores_by_object(model, state, subgoals[0])
        assert all(0.0 < s < 1.0 for s in scores.values())

    def test_permutation_equivariance(self, spec, block6_demos, block6_artifacts):
        model = block6_artifacts.model
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        state = block6_demos[3].steps[0]
        # renaming node order must permute scores identically: encode with
        # shuffled node insertion by relabeling objects consistently
        scores = scores_by_object(model, state, subgoals[1])
        g = encode_sample(state, subgoals[1], model.spec)
        perm = np.random.default_rng(1).permutation(len(g.nodes))
        import dataclasses

        g2 = dataclasses.replace(
            g,
            nodes=tuple(g.nodes[i] for i in perm),
            x=g.x[perm],
            src=np.array([int(np.where(perm == s)[0][0]) for s in g.src], dtype=np.int64),
            dst=np.array([int(np.where(perm == d)[0][0]) for d in g.dst], dtype=np.int64),
        )
        s2 = model.scores(g2)
        for name, sc in zip(g2.nodes, s2):
            assert abs(scores[name] - float(sc)) < 1e-9

    def test_monotone_threshold(self, block6_demos, block6_artifacts):
        model = block6_artifacts.model
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        state = block6_demos[5].steps[0]
        atoms = state.atoms()
        named_unsat = {
            a for g in subgoals for a in [g] if False
        }
        lo = predict(model, state, subgoals[0], 0.5)
        hi = predict(model, state, subgoals[0], 0.9)
        unsat = set()
        for a in subgoals[0]:
            if a not in atoms:
                unsat.update(a.args)
        assert (hi - unsat) <= (lo - unsat)

    def test_gamma_bounds(self, block6_demos, block6_artifacts):
        with pytest.raises(ValueError):
            predict(block6_artifacts.model, block6_demos[0].steps[0],
                    block6_artifacts.subgoals.sequence.subgoals[0], 1.0)

    def test_feature_layout_mismatch_raises(self, block6_artifacts, block6_demos):
        with pytest.raises(ValueError, match="feature layout"):
            predict(
                block6_artifacts.model,
                block6_demos[0].steps[0],
                frozenset({atom("washedx", "a")}),
                0.8,
            )

    def test_model_roundtrip(self, tmp_path, block6_artifacts, block6_demos):
        model = block6_artifacts.model
        path = tmp_path / "model.json"
        save_model(model, str(path))
        loaded = load_model(str(path))
        state = block6_demos[0].steps[0]
        sub = block6_artifacts.subgoals.sequence.subgoals[0]
        assert scores_by_object(model, state, sub) == scores_by_object(loaded, state, sub)

    def test_named_unsatisfied_objects_always_predicted(self, block6_artifacts, block6_demos):
        model = block6_artifacts.model
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        state = block6_demos[0].steps[0]
        out = predict(model, state, subgoals[-1], 0.8)
        for a in subgoals[-1]:
            if a not in state.atoms():
                assert set(a.args) <= set(out)


class TestDatasetIO:
    def test_jsonl_roundtrip(self, tmp_path, spec, block6_demos, block6_artifacts):
        from tampkit.importance import load_dataset, save_dataset

        subgoals = block6_artifacts.subgoals.sequence.subgoals
        ds = build_dataset(block6_demos[:3], subgoals, spec)
        path = tmp_path / "dataset.jsonl"
        save_dataset(ds, str(path))
        loaded = load_dataset(str(path))
        assert len(loaded) == len(ds)
        for a, b in zip(ds, loaded):
            assert a.nodes == b.nodes
            assert np.array_equal(a.x, b.x)
            assert np.array_equal(a.e, b.e)
            assert np.array_equal(a.labels, b.labels)


class TestOraclePredict:
    def test_satisfied_subgoal_is_empty(self, block6_task, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        final = block6_demos[0].steps[-1]
        assert oracle_predict(final, subgoals[-1], block6_task.objects, block6_task.domain) == frozenset()

    def test_teardown_touches_dismantled_stack(self, block6_task, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        state = block6_demos[0].steps[0]
        touched = oracle_predict(state, subgoals[0], block6_task.objects, block6_task.domain)
        first = next(a.args[0] for a in subgoals[0] if a.predicate == "ontable")
        if not state.holds(subgoals[0]):
            assert first in touched

    def test_agreement_with_labels(self, block6_task, block6_demos, block6_artifacts):
        subgoals = block6_artifacts.subgoals.sequence.subgoals
        segs = segment_demos(block6_demos[:25], subgoals)
        agree = total = 0
        for seg in segs:
            labels = label_important(seg) & block6_task.movables
            pred = oracle_predict(
                seg.states[0], subgoals[seg.to_subgoal], block6_task.objects, block6_task.domain
            ) & block6_task.movables
            total += 1
            if labels == pred:
                agree += 1
        assert agree / total >= 0.95


class TestProfiles:
    def test_blocks_isolation_is_table(self, block6_demos, block6_artifacts, block6_task):
        profiles = transition_profiles(
            block6_demos, block6_artifacts.subgoals.sequence.subgoals, block6_task.world
        )
        for p in profiles:
            for obj, pred in p["support_kind"].items():
                assert pred in ("ontable", "onblock")

    def test_cook_boxes_end_opened(self, cook4_artifacts):
        profiles = cook4_artifacts.subgoals.profiles
        box_states = [
            preds
            for p in profiles
            for obj, preds in p["unary_state"].items()
            if obj.startswith("box")
        ]
        assert box_states and all("opened" in preds for preds in box_states)
