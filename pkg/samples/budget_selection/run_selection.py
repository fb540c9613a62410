import context

from pathlib import Path

from yolo_ar.errors import InfeasibleBudgetError
from yolo_ar.profiler import SweepTable, fit_pixel_scaling
from yolo_ar.selector import Budget, Metric, justify, pareto_frontier

if __name__ == "__main__":

    table = SweepTable.from_tsv(Path(context.table_file).read_text())

    print("-frontier (mAP50_95)-")
    for r in pareto_frontier(table, Metric.MAP50_95):
        print(f"{r.variant_name}@{r.input_size}\t{r.mean_total_ms:.0f} ms\t{r.map50_95:.3f}")

    for variant in ("yolov8n", "yolov8s"):
        fit = fit_pixel_scaling(r for r in table.rows if r.variant_name == variant)
        print(
            f"-{variant}: {fit.slope_ms_per_pixel * 1000:.3f} ms per 1000 pixels, "
            f"R2 {fit.r_squared:.3f}-"
        )

    for limit in [50] + context.budgets_ms:
        try:
            s = justify(table, Budget(limit))
        except InfeasibleBudgetError as e:
            print(f"{limit} ms: {e.message}")
            continue
        print(
            f"{limit} ms: {s.chosen.variant_name}@{s.chosen.input_size} "
            f"({s.feasible_count} feasible)"
        )
