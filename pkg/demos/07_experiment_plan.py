"""A repeated-run plan: the age comparison of five algorithm variants."""
# %%
import sys
from pathlib import Path

from fairfrs import ExperimentPlan, make_synthetic, run_plan

here = Path(__file__).resolve().parent
plan = ExperimentPlan.load(here / "plans" / "age_variants.toml")
data = Path(plan.dataset["path"])
if not data.is_absolute():
    plan.dataset["path"] = str(here.parent / data)
plan.output_dir = sys.argv[1] if len(sys.argv) > 1 else str(here.parent / "runs" / "age_variants")

# fall back to a synthetic set (and fewer repetitions) without MovieLens
ds = None
if not (Path(plan.dataset["path"]) / "u.data").exists():
    ds, plan.repetitions = make_synthetic(n=300, m=200), 2

summary = run_plan(plan, dataset=ds)
for name, entry in summary["runs"].items():
    f = entry["final"]
    print(f"{name:10s} rmse {f['rmse']['mean']:.4f}  |ldap| {f['ldap_abs']['mean']:.4f}")
print("written to", plan.output_dir)
