"""Mine a subgoal sequence from solved demonstrations.

Generates a small corpus of block-stacking solutions, encodes every
stable scene as a set of subgraph items, and mines the most informative
frequent sequence. Expect the classic bottom-up tower ladder.
"""

from tampkit import make_task
from tampkit.mining import build_database, prefixspan, select_target_sequence
from tampkit.solver import generate_demos

task = make_task("block4")
demos = generate_demos(task, n=40, seed=0)
print(f"solved {len(demos)} randomized instances, "
      f"mean plan length {sum(len(d) - 1 for d in demos) / len(demos):.1f}")

db = build_database(demos, task.domain)
print(f"sequence database: {len(db)} sequences over {len(db.table)} distinct subgraph items")

patterns = prefixspan(db, min_support=0.9)
print(f"{len(patterns)} frequent sequential patterns at min-support 0.9")

selected = select_target_sequence(patterns, task.goal, db.table)
print(f"\nselected subgoal chain (Z={len(selected)}, support {selected.support}/{len(db)}):")
for z, subgoal in enumerate(selected.subgoals, start=1):
    print(f"  subgoal {z}: " + " ".join(sorted(str(a) for a in subgoal)))
