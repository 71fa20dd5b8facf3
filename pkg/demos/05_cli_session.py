"""The command-line surface, driven end to end in a scratch directory.

Mirrors a shell session:

    difex generate --config bench.cfg --out data/
    difex train data/ --target 0 --out run/
    difex eval data/ --checkpoint run/student.ckpt --target 0
    difex motivate data/ --out views.csv
"""

import json
import os
import tempfile

from difex.cli import main

BENCH = """\
domains = 3
classes = 3
per_class = 10
length = 16
channels = 2
noise = 0.05
seed = 4
"""

TRAIN = """\
epochs = 6
batch_size = 12
hidden = 24
feature_dim = 12
"""


def run(argv):
    print(f"$ difex {' '.join(argv)}")
    code = main(argv)
    print(f"  -> exit {code}\n")
    assert code == 0


with tempfile.TemporaryDirectory() as root:
    bench_cfg = os.path.join(root, "bench.cfg")
    train_cfg = os.path.join(root, "train.cfg")
    open(bench_cfg, "w").write(BENCH)
    open(train_cfg, "w").write(TRAIN)
    data = os.path.join(root, "data")
    run_dir = os.path.join(root, "run")

    run(["generate", "--config", bench_cfg, "--out", data])
    run(["train", data, "--config", train_cfg, "--target", "0",
         "--out", run_dir])
    run(["eval", data, "--checkpoint", os.path.join(run_dir, "student.ckpt"),
         "--target", "0"])
    views = os.path.join(root, "views.csv")
    run(["motivate", data, "--out", views])

    print("artifacts in the run directory:")
    for name in sorted(os.listdir(run_dir)):
        size = os.path.getsize(os.path.join(run_dir, name))
        print(f"  {name}  ({size} bytes)")

    manifest = json.load(open(os.path.join(run_dir, "manifest.json")))
    print(f"\nmanifest says: mode={manifest['config']['mode']} "
          f"target={manifest['target']} "
          f"target_accuracy={manifest['target_accuracy']:.3f}")
    print(f"views.csv header: {open(views).readline().strip()[:72]}...")
print("\n(the `ablate` subcommand runs the full target x mode x seed grid;")
print(" see the README for its summary tables)")
