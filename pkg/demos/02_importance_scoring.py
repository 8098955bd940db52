"""Train the object-importance scorer and inspect its per-object scores.

Labels come straight from the demonstrations: an object is important for
a subgoal transition iff any of its atoms or its pose changes inside the
segment. The network then scores fresh scenes object by object.
"""

from tampkit import make_task
from tampkit.importance import (
    FeatureSpec,
    build_dataset,
    predict,
    scores_by_object,
    train,
)
from tampkit.mining import build_database, prefixspan, select_target_sequence
from tampkit.solver import generate_demos
from tampkit.tasks import gen_instance

task = make_task("block4")
demos = generate_demos(task, n=40, seed=0)
db = build_database(demos, task.domain)
subgoals = select_target_sequence(prefixspan(db, 0.9), task.goal, db.table).subgoals

spec = FeatureSpec.for_domain(task.domain, task.world)
dataset = build_dataset(demos, subgoals, spec)
model, losses = train(dataset, spec, seed=0, epochs=600)
print(f"trained on {len(dataset)} transitions, loss {losses[0]:.3f} -> {losses[-1]:.4f}")

problem, _ = gen_instance(task, seed=123)
print("\nfresh scene:")
for a in sorted(problem.init.atoms()):
    if a.is_fluent:
        print("  ", a)

first = subgoals[0]
print("\nfirst subgoal:", " ".join(sorted(str(a) for a in first)))
scores = scores_by_object(model, problem.init, first)
for obj in sorted(scores, key=scores.get, reverse=True):
    print(f"  score({obj}) = {scores[obj]:.3f}")
important = predict(model, problem.init, first, gamma=0.8)
print("predicted important set at gamma=0.8:", sorted(important))
