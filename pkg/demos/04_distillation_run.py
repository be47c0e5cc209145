"""Train a teacher, distill a student, and compare their predictions.

The teacher uses the default settings (about a minute on one core; with
much less data or fewer epochs it stays stuck at chance). The student is
shrunk to two layers and four epochs. Pass ``--full`` for the default
configuration the acceptance suite uses.

Run: python demos/04_distillation_run.py [--full] [out_dir]
"""

import sys
import time
from pathlib import Path

from deepfake_vit.config import ExperimentConfig, from_text
from deepfake_vit.harness import run_compare, run_evaluate, run_train_student, run_train_teacher

REDUCED = """
student.epochs = 4
model.layers = 2
"""

args = [a for a in sys.argv[1:] if a != "--full"]
cfg = ExperimentConfig() if "--full" in sys.argv else from_text(REDUCED)
out = Path(args[0] if args else "demo_output/run")

t = time.perf_counter()
teacher = run_train_teacher(cfg, out)
print(f"teacher: best epoch {teacher.result.best_epoch}, val loss {teacher.result.best_val:.4f} "
      f"({time.perf_counter() - t:.0f}s)")

t = time.perf_counter()
student = run_train_student(cfg, out, teacher.checkpoint)
print(f"student: best epoch {student.result.best_epoch}, val loss {student.result.best_val:.4f} "
      f"({time.perf_counter() - t:.0f}s)")

print("\nepoch  val L_fake  val L_real  val L_train")
for row in student.result.rows:
    print(f"{row['epoch']:>5}  {row['val_L_fake']:>10.4f}  {row['val_L_real']:>10.4f}  {row['val_L_train']:>11.4f}")

print()
reports = {}
for name, ckpt, head in [("teacher", teacher.checkpoint, "distill"), ("class head", student.checkpoint, "class"),
                         ("distill head", student.checkpoint, "distill")]:
    ev = run_evaluate(ckpt, out / "eval", head=head)
    r = ev.report
    reports[name] = ev.paths["json"]
    print(f"{name:<13} AUC {r.auc:.4f}  log loss {r.log_loss:.4f}  f1 {r.f1:5.1f}  "
          f"TP {r.tp:>3} FP {r.fp:>3} TN {r.tn:>3} FN {r.fn:>3}")

paths = run_compare(reports["teacher"], reports["distill head"], out / "compare")
print("\nstudent vs teacher:")
print(paths["table"].read_text())
