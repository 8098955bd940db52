"""Shared fixtures.  Expensive offline artifacts (demonstration corpora,
mined subgoals, trained models) are cached on disk under tests/_cache so
repeated runs do not regenerate them; delete the directory to rebuild.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from tampkit.importance import FeatureSpec, build_dataset, load_model, save_model, train, transition_profiles
from tampkit.mining import (
    SubgoalArtifact,
    build_database,
    load_subgoals,
    prefixspan,
    save_subgoals,
    select_target_sequence,
)
from tampkit.bench import TaskArtifacts
from tampkit.scene import load_demos, save_demos
from tampkit.solver import generate_demos, register_domain
from tampkit.tasks import make_task

CACHE = Path(__file__).parent / "_cache"


def cached_demos(task_name: str, n: int, seed: int):
    task = make_task(task_name)
    register_domain(task.domain)
    CACHE.mkdir(exist_ok=True)
    path = CACHE / f"demos_{task_name}_{n}_{seed}.jsonl"
    if path.exists():
        return load_demos(str(path), task.domain.predicate_kinds)
    demos = generate_demos(task, n, seed)
    save_demos(demos, str(path))
    return demos


def cached_artifacts(task_name: str, n: int = 100, demo_seed: int = 0, train_seed: int = 0) -> TaskArtifacts:
    task = make_task(task_name)
    register_domain(task.domain)
    CACHE.mkdir(exist_ok=True)
    sub_path = CACHE / f"subgoals_{task_name}_{n}_{demo_seed}.json"
    model_path = CACHE / f"model_{task_name}_{n}_{demo_seed}_{train_seed}.json"
    if sub_path.exists() and model_path.exists():
        return TaskArtifacts(task, load_subgoals(str(sub_path)), load_model(str(model_path)))
    demos = cached_demos(task_name, n, demo_seed)
    db = build_database(demos, task.domain)
    sequence = select_target_sequence(prefixspan(db, 0.9), task.goal, db.table)
    profiles = transition_profiles(demos, sequence.subgoals, task.world)
    artifact = SubgoalArtifact(sequence, 0.9, tuple(profiles))
    save_subgoals(artifact, str(sub_path))
    fspec = FeatureSpec.for_domain(task.domain, task.world)
    model, _ = train(build_dataset(demos, sequence.subgoals, fspec), fspec, seed=train_seed)
    save_model(model, str(model_path))
    return TaskArtifacts(task, artifact, model)


@pytest.fixture(scope="session")
def block6_task():
    task = make_task("block6")
    register_domain(task.domain)
    return task

@pytest.fixture(scope="session")
def block6_demos():
    return cached_demos("block6", 100, 0)


@pytest.fixture(scope="session")
def block6_eval_demos():
    return cached_demos("block6", 100, 5)


@pytest.fixture(scope="session")
def block6_artifacts():
    return cached_artifacts("block6")


@pytest.fixture(scope="session")
def block4_artifacts():
    return cached_artifacts("block4")


@pytest.fixture(scope="session")
def cook4_artifacts():
    return cached_artifacts("cook4")
