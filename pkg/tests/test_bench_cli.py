import csv
import io
import json
import os

import numpy as np
import pytest

from tampkit.bench import METHODS, run_bench, write_outputs
from tampkit.cli import main
from tampkit.pddl import problem_to_text
from tampkit.scene import Atom
from tampkit.tasks import TASK_NAMES, gen_instance, make_task


class TestInstances:
    def test_same_seed_identical(self):
        for name in TASK_NAMES:
            p1, _ = gen_instance(name, 7)
            p2, _ = gen_instance(name, 7)
            assert p1.init == p2.init and p1.goal == p2.goal

    def test_block_counts(self):
        for name, blocks in (("block4", 4), ("block6", 6), ("block8", 8)):
            task = make_task(name)
            assert len(task.movables) == blocks
            assert len(task.objects) == blocks + 2  # plus table and arm

    def test_cook_objects(self):
        task = make_task("cook4")
        assert len(task.movables) == 4
        boxes = [o for o, t in task.objects.items() if t == "box"]
        assert len(boxes) == 4
        assert {"sink", "board", "pot", "table", "arm"} <= set(task.objects)

    def test_cook_every_ingredient_boxed(self):
        task = make_task("cook4")
        opened_counts = washed = cut = 0
        for seed in range(300):
            problem, _ = gen_instance(task, seed)
            atoms = problem.init.atoms()
            for ing in task.movables:
                homes = [a for a in atoms if a.predicate == "inbox" and a.args[0] == ing]
                assert len(homes) == 1
            washed += sum(1 for a in atoms if a.predicate == "washed")
            cut += sum(1 for a in atoms if a.predicate == "cut")
            opened_counts += sum(1 for a in atoms if a.predicate == "opened")
        # statuses are coin flips per ingredient / box
        assert 0.35 < washed / (300 * 4) < 0.65
        assert 0.35 < cut / (300 * 4) < 0.65
        assert 0.35 < opened_counts / (300 * 4) < 0.65

    def test_block_initial_states_vary(self):
        task = make_task("block6")
        inits = {tuple(sorted(map(str, gen_instance(task, s)[0].init.atoms()))) for s in range(30)}
        assert len(inits) > 20

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            make_task("block99")


class TestBench:
    def test_trial_and_table_shapes(self, block4_artifacts):
        table, results = run_bench(
            ["block4"], list(METHODS), trials=3, artifacts_cache={"block4": block4_artifacts}
        )
        assert len(results) == 3 * len(METHODS)
        metrics = {(r.method, r.metric) for r in table.rows}
        for m in METHODS:
            for metric in ("horizon", "objects", "time"):
                assert (m, metric) in metrics
        csv_text = table.to_csv()
        rows = list(csv.DictReader(io.StringIO(csv_text)))
        assert set(rows[0]) == {"task", "method", "metric", "mean", "std", "trials", "success_rate"}

    def test_single_trial_zero_std(self, block4_artifacts):
        table, _ = run_bench(["block4"], ["monolithic"], trials=1,
                             artifacts_cache={"block4": block4_artifacts})
        for row in table.rows:
            if not np.isnan(row.std):
                assert row.std == 0.0

    def test_decomposed_methods_share_horizon_columns(self, block4_artifacts):
        table, results = run_bench(["block4"], ["subproblems", "parallel"], trials=4,
                                   artifacts_cache={"block4": block4_artifacts})
        by = {}
        for t in results:
            by.setdefault((t.method, t.seed), t)
        for (method, seed), t in by.items():
            if method == "subproblems":
                twin = by.get(("parallel", seed))
                assert twin is not None and twin.horizons == t.horizons
                assert twin.object_counts == t.object_counts

    def test_markdown_layout(self, block4_artifacts):
        table, _ = run_bench(["block4"], ["monolithic", "parallel"], trials=2,
                             artifacts_cache={"block4": block4_artifacts})
        md = table.to_markdown()
        assert "### Planning horizon" in md and "### Planning time [s]" in md
        assert "| block4 |" in md

    def test_outputs_written(self, tmp_path, block4_artifacts):
        table, results = run_bench(["block4"], ["parallel"], trials=2,
                                   artifacts_cache={"block4": block4_artifacts})
        paths = write_outputs(table, results, str(tmp_path / "out"))
        for p in paths.values():
            assert os.path.exists(p)

    def test_reproducible_csv(self, block4_artifacts):
        t1, _ = run_bench(["block4"], ["parallel"], trials=3,
                          artifacts_cache={"block4": block4_artifacts})
        t2, _ = run_bench(["block4"], ["parallel"], trials=3,
                          artifacts_cache={"block4": block4_artifacts})
        strip = lambda text: [
            ",".join(v for i, v in enumerate(line.split(",")) if i not in (3, 4)) if "time" in line else line
            for line in text.splitlines()
        ]
        assert strip(t1.to_csv()) == strip(t2.to_csv())


class TestCli:
    def test_unknown_flag_usage_exit(self):
        assert main(["plan", "--task", "block4", "--wat"]) == 64

    def test_unknown_subcommand_usage_exit(self):
        assert main(["frobnicate"]) == 64

    def test_full_recipe_on_block4(self, tmp_path, block4_artifacts):
        d = str(tmp_path)
        assert main(["gen-demos", "--task", "block4", "--n", "30", "--seed", "0",
                     "--out", f"{d}/demos.jsonl"]) == 0
        assert main(["mine", "--task", "block4", "--demos", f"{d}/demos.jsonl",
                     "--min-support", "0.9", "--out", f"{d}/subgoals.json"]) == 0
        assert main(["train", "--task", "block4", "--demos", f"{d}/demos.jsonl",
                     "--subgoals", f"{d}/subgoals.json", "--seed", "0",
                     "--epochs", "300", "--out", f"{d}/model.json"]) == 0
        assert main(["decompose", "--task", "block4", "--instance-seed", "9",
                     "--subgoals", f"{d}/subgoals.json", "--model", f"{d}/model.json",
                     "--gamma", "0.8", "--seed", "5", "--out", f"{d}/sps.json"]) == 0
        code = main(["plan", "--task", "block4", "--instance-seed", "9", "--mode", "parallel",
                     "--gamma", "0.8", "--seed", "5", "--subgoals", f"{d}/subgoals.json",
                     "--model", f"{d}/model.json", "--out", f"{d}/plan.json"])
        assert code == 0
        assert main(["validate", "--task", "block4", "--instance-seed", "9",
                     "--plan", f"{d}/plan.json"]) == 0
        sps = json.load(open(f"{d}/sps.json"))
        assert [sp["index"] for sp in sps] == list(range(1, len(sps) + 1))
        # the dump replays standalone, whole and per index
        assert main(["plan", "--task", "block4", "--subproblem", f"{d}/sps.json",
                     "--seed", "5", "--out", f"{d}/replay.json"]) == 0
        assert main(["plan", "--task", "block4", "--subproblem", f"{d}/sps.json",
                     "--index", "2", "--seed", "5"]) == 0
        replay = json.load(open(f"{d}/replay.json"))
        assert len(replay["subplans"]) == len(sps)

    def test_plan_from_problem_file(self, tmp_path, block4_artifacts):
        task = block4_artifacts.task
        problem, _ = gen_instance(task, 12)
        path = tmp_path / "p.pddl"
        path.write_text(problem_to_text(problem))
        code = main(["plan", "--task", "block4", "--problem", str(path),
                     "--mode", "monolithic", "--seed", "3", "--out", str(tmp_path / "plan.json")])
        assert code == 0
        assert main(["validate", "--task", "block4", "--problem", str(path),
                     "--plan", str(tmp_path / "plan.json")]) == 0

    def test_unsolvable_subproblem_replay_exits_3(self, tmp_path, block4_artifacts):
        d = str(tmp_path)
        assert main(["gen-demos", "--task", "block4", "--n", "20", "--seed", "0",
                     "--out", f"{d}/demos.jsonl"]) == 0
        assert main(["mine", "--task", "block4", "--demos", f"{d}/demos.jsonl",
                     "--out", f"{d}/subgoals.json"]) == 0
        assert main(["train", "--task", "block4", "--demos", f"{d}/demos.jsonl",
                     "--subgoals", f"{d}/subgoals.json", "--epochs", "200",
                     "--out", f"{d}/model.json"]) == 0
        assert main(["decompose", "--task", "block4", "--instance-seed", "3",
                     "--subgoals", f"{d}/subgoals.json", "--model", f"{d}/model.json",
                     "--out", f"{d}/sps.json"]) == 0
        sps = json.load(open(f"{d}/sps.json"))
        obj = sps[0]["important"][0] if sps[0]["important"] else "a"
        sps[0]["goal"].append(["inhand", obj])
        sps[0]["goal"].append(["clear", obj])  # contradictory: held and clear
        json.dump(sps, open(f"{d}/sps.json", "w"))
        assert main(["plan", "--task", "block4", "--subproblem", f"{d}/sps.json",
                     "--index", "1", "--seed", "5"]) == 3

    def test_min_support_validation_error(self, tmp_path):
        (tmp_path / "demos.jsonl").write_text("")
        assert main(["mine", "--task", "block4", "--demos", str(tmp_path / "demos.jsonl"),
                     "--min-support", "1.5", "--out", str(tmp_path / "x.json")]) == 64

    def test_bench_cli_surface(self, tmp_path):
        code = main(["bench", "--tasks", "block4", "--methods", "monolithic,parallel",
                     "--trials", "2", "--out-dir", str(tmp_path / "bench"), "--json"])
        assert code == 0
        csv_rows = list(csv.DictReader(open(tmp_path / "bench" / "bench.csv")))
        methods = {r["method"] for r in csv_rows}
        assert methods == {"monolithic", "parallel"}

    def test_config_file_overridden_by_flags(self, tmp_path, block4_artifacts, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"task": "block6", "n": 5}))
        out = tmp_path / "demos.jsonl"
        assert main(["gen-demos", "--config", str(cfg), "--task", "block4",
                     "--out", str(out), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["demos"] == 5  # n came from config
        first = json.loads(out.read_text().splitlines()[0])
        objs = set(first["steps"][0]["poses"])
        assert len([o for o in objs if len(o) == 1]) == 4  # task from flag

    def test_cli_recipe_reproduces_block6_golden_subgoals(self, tmp_path):
        from test_acceptance import expected_block6_subgoals
        from tampkit.scene import Atom

        d = str(tmp_path)
        assert main(["gen-demos", "--task", "block6", "--n", "100", "--seed", "0",
                     "--out", f"{d}/demos.jsonl"]) == 0
        assert main(["mine", "--task", "block6", "--demos", f"{d}/demos.jsonl",
                     "--min-support", "0.9", "--out", f"{d}/subgoals.json"]) == 0
        data = json.load(open(f"{d}/subgoals.json"))
        mined = [frozenset(Atom(a[0], tuple(a[1:])) for a in g) for g in data["subgoals"]]
        assert mined == expected_block6_subgoals()

    def test_json_output_mode(self, tmp_path, capsys):
        problem_path = tmp_path / "demos.jsonl"
        assert main(["gen-demos", "--task", "block4", "--n", "2", "--seed", "1",
                     "--out", str(problem_path), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out.strip())
        assert payload["demos"] == 2
