# Run the whole seven-task workflow on a small mission, then replay its trace
# on simulated clusters of 1 to 8 nodes and print the resource table.
# python demos/03_workflow_scaling.py [workdir]

import sys
import tempfile
from pathlib import Path

from magcal.engine import ClusterSpec, Manifest, TASKS, execute
from magcal.engine.accounting import comparison_rows, format_table
from magcal.evaluate import evaluate
from magcal.neuralnet import TrainConfig
from magcal.synthgen import MissionConfig, generate_month


def main(root: Path) -> None:
    # %% inputs
    cfg = MissionConfig(n_months=4, samples_per_day=240, seed=7)
    for i in range(cfg.n_months):
        generate_month(i, cfg).write(root / "raw")
    manifest = Manifest(months=cfg.months, seed=cfg.seed, train=TrainConfig(hidden=(32, 16), epochs=8, finetune_epochs=4))

    # %% one real run; task bodies go to a process pool
    local = execute(manifest, root)
    local.save(root / "reports" / "local.json")

    # %% replay the recorded durations on a virtual clock
    replays = {n: execute(manifest, root, ClusterSpec(n_nodes=n), mode="replay", trace=local) for n in (1, 2, 4, 8)}
    print(f"{'task':22s}" + "".join(f"{n:>9d}n" for n in replays))
    for t in TASKS:
        print(f"{t:22s}" + "".join(f"{r.task_summary(t)['makespan_s']:10.2f}" for r in replays.values()))

    # %% resource table, 1 node against 8 nodes
    header, rows = comparison_rows([replays[1], replays[8]], ["1 node", "8 nodes"])
    print(format_table(header, rows))

    # %% how well did calibration work?
    m = evaluate(root, cfg.months)
    for band, s in m["bands"].items():
        print(f"{band:8s} pre {s['rms_pre']:7.2f} nT   post {s['rms_post']:6.2f} nT")


if __name__ == "__main__":  # the worker pool re-imports this file
    if len(sys.argv) > 1:
        main(Path(sys.argv[1]))
    else:
        with tempfile.TemporaryDirectory() as d:
            main(Path(d))
