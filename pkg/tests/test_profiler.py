import logging
import threading

import numpy as np
import pytest
from pydantic import ValidationError

from yolo_ar.clock import VirtualClock, WallClock
from yolo_ar.decode import DecodeConfig
from yolo_ar.engine import MockSpec, load_mock, load_model
from yolo_ar.errors import (
    ConfigurationError,
    DataError,
    InsufficientDataError,
    ProfilingError,
    SessionBusyError,
)
from yolo_ar.pipeline import DetectionPipeline, Stage
from yolo_ar.profiler import (
    LatencyReport,
    ModelSource,
    SweepRow,
    SweepTable,
    TimingProtocol,
    compare_tiled,
    fit_pixel_scaling,
    sweep,
    time_pipeline,
)

STAGE_DELAYS = {"preprocess": 2.0, "postprocess": 4.0}


def _pipeline(spec, size=64, **kwargs):
    _, session = load_mock(spec, size, **kwargs)
    return DetectionPipeline(session)


def test_stage_breakdown_on_virtual_clock(random_frame):
    clock = VirtualClock()
    spec = MockSpec(fixed_delay_ms=90.0, stage_delays_ms=STAGE_DELAYS, clock=clock)
    report = time_pipeline(_pipeline(spec), random_frame(), TimingProtocol(clock=clock))
    assert [s.stage for s in report.stages] == ["preprocess", "inference", "postprocess", "total"]
    assert report.stage(Stage.PREPROCESS).mean_ms == 2.0
    assert report.stage(Stage.INFERENCE).mean_ms == 90.0
    assert report.stage("postprocess").mean_ms == 4.0
    assert report.total.mean_ms == 96.0
    assert report.total.std_ms == 0.0
    assert report.total.samples == 100
    assert report.protocol.clock == "virtual"
    assert report.stage(Stage.MERGE) is None


def test_stage_breakdown_on_wall_clock(random_frame):
    spec = MockSpec(fixed_delay_ms=90.0, stage_delays_ms=STAGE_DELAYS)
    protocol = TimingProtocol(warmup_iterations=2, repetitions=5)
    report = time_pipeline(_pipeline(spec), random_frame(), protocol)
    assert report.stage(Stage.PREPROCESS).mean_ms == pytest.approx(2.0, abs=1.0)
    assert report.stage(Stage.INFERENCE).mean_ms == pytest.approx(90.0, abs=1.0)
    assert report.stage(Stage.POSTPROCESS).mean_ms == pytest.approx(4.0, abs=1.0)


def test_warm_up_runs_are_not_recorded(random_frame):
    clock = VirtualClock()
    pipeline = _pipeline(MockSpec(clock=clock))
    report = time_pipeline(pipeline, random_frame(), TimingProtocol(clock=clock))
    assert pipeline.session.backend.calls == 110
    assert all(s.samples == 100 for s in report.stages)


def test_zero_delay_mock_is_fast(random_frame):
    protocol = TimingProtocol(warmup_iterations=2, repetitions=20)
    report = time_pipeline(_pipeline(MockSpec()), random_frame(), protocol)
    assert report.total.mean_ms < 5.0


def test_raw_samples_and_stage_sums(random_frame):
    protocol = TimingProtocol(warmup_iterations=1, repetitions=10, clock=WallClock(), keep_raw=True)
    spec = MockSpec(fixed_delay_ms=1.0)
    report = time_pipeline(_pipeline(spec), random_frame(), protocol)
    raw = report.raw_samples_ms
    assert len(raw["total"]) == 10
    assert report.total.std_ms == pytest.approx(float(np.std(raw["total"])))
    assert report.total.mean_ms == pytest.approx(float(np.mean(raw["total"])))
    for i in range(10):
        parts = raw["preprocess"][i] + raw["inference"][i] + raw["postprocess"][i]
        assert parts <= raw["total"][i] + 1e-9
    assert "raw_samples_ms" in report.model_dump()
    assert time_pipeline(_pipeline(spec), random_frame(), TimingProtocol(1, 2)).raw_samples_ms is None


def test_report_tsv(random_frame):
    clock = VirtualClock()
    spec = MockSpec(fixed_delay_ms=90.0, stage_delays_ms=STAGE_DELAYS, clock=clock)
    report = time_pipeline(_pipeline(spec, variant_name="yolov8n"), random_frame(), TimingProtocol(2, 5, clock))
    lines = report.to_tsv().splitlines()
    assert lines[0] == "variant\tsize\tbackend\tbatch\tstage\tmean_ms\tstd_ms\tsamples"
    assert lines[-1] == "yolov8n\t64\tmock\t1\ttotal\t96.000\t0.000\t5"


def test_protocol_validation():
    with pytest.raises(ConfigurationError):
        TimingProtocol(repetitions=1)
    with pytest.raises(ConfigurationError):
        TimingProtocol(warmup_iterations=-1)


def test_report_needs_total_entry():
    with pytest.raises(ValidationError):
        LatencyReport(
            config={"variant_name": "m", "input_size": 64, "backend": "mock"},
            stages=[{"stage": "inference", "mean_ms": 1.0, "std_ms": 0.0, "samples": 2}],
            protocol={"warmup_iterations": 0, "repetitions": 2, "clock": "wall"},
        )


class _FailAfter:
    """Mock rule that raises once ``limit`` calls have gone through."""

    def __init__(self, limit):
        self.limit = limit
        self.count = 0

    def __call__(self, values):
        self.count += 1
        if self.count > self.limit:
            raise RuntimeError("accelerator reset")
        return np.zeros((84, 10), dtype=np.float32)


def test_failure_during_warm_up(random_frame):
    pipeline = _pipeline(MockSpec(rule=_FailAfter(0)))
    with pytest.raises(ProfilingError) as e:
        time_pipeline(pipeline, random_frame(), TimingProtocol(5, 10))
    assert e.value.stage == "warm-up"
    assert e.value.completed == 0


def test_failure_during_timed_runs(random_frame):
    pipeline = _pipeline(MockSpec(rule=_FailAfter(12)))
    with pytest.raises(ProfilingError) as e:
        time_pipeline(pipeline, random_frame(), TimingProtocol(10, 10))
    assert e.value.stage == "inference"
    assert e.value.completed == 2
    assert "accelerator reset" in str(e.value)


def test_busy_session_is_refused(random_frame):
    pipeline = _pipeline(MockSpec())
    held, release = threading.Event(), threading.Event()

    def hold():
        with pipeline.session.exclusive():
            held.set()
            release.wait(5)

    worker = threading.Thread(target=hold)
    worker.start()
    held.wait(5)
    try:
        with pytest.raises(SessionBusyError):
            time_pipeline(pipeline, random_frame(), TimingProtocol(0, 2))
    finally:
        release.set()
        worker.join()


def _sources(clock, names=("yolov8n", "yolov8s"), per_pixel_ms=0.001):
    def opener(name, factor):
        spec = MockSpec(per_pixel_ms=per_pixel_ms * factor, clock=clock)
        return lambda n: load_mock(spec, n, variant_name=name, parameter_count=1000 * factor)[1]

    return [ModelSource(name, opener(name, i + 1)) for i, name in enumerate(names)]


def test_sweep_rows_follow_pixel_count(random_frame):
    clock = VirtualClock()
    table = sweep(_sources(clock), [160, 224], TimingProtocol(2, 5, clock), random_frame())
    assert [(r.variant_name, r.input_size) for r in table.rows] == [
        ("yolov8n", 160),
        ("yolov8n", 224),
        ("yolov8s", 160),
        ("yolov8s", 224),
    ]
    n160, n224, s160, _ = table.rows
    assert n224.mean_total_ms / n160.mean_total_ms == pytest.approx(1.96)
    assert s160.mean_total_ms == pytest.approx(2 * n160.mean_total_ms)
    assert n160.parameter_count == 1000
    assert table.failures == []


def test_sweep_records_failing_cells(random_frame):
    clock = VirtualClock()
    table = sweep(_sources(clock, ("yolov8n",)), [160, 320], TimingProtocol(1, 2, clock), random_frame(320, 240))
    assert [r.input_size for r in table.rows] == [160]
    (failure,) = table.failures
    assert failure.input_size == 320
    assert "320x320" in failure.reason


def test_sweep_with_scorer(random_frame):
    class Score:
        map50, map50_95 = 0.5, 0.3

    clock = VirtualClock()
    table = sweep(
        _sources(clock, ("yolov8n",)),
        [64],
        TimingProtocol(0, 2, clock),
        random_frame(),
        DecodeConfig(),
        scorer=lambda pipeline: Score(),
    )
    assert (table.rows[0].map50, table.rows[0].map50_95) == (0.5, 0.3)


def test_sweep_is_reproducible_on_virtual_clock(random_frame):
    def run():
        clock = VirtualClock()
        return sweep(_sources(clock), [96, 160], TimingProtocol(2, 5, clock), random_frame()).to_tsv()

    assert run() == run()


def test_fit_exact_line():
    rows = [
        SweepRow(variant_name="m", input_size=n, mean_total_ms=2.0 + 0.001 * n * n, std_ms=0.0)
        for n in (96, 160, 224, 320)
    ]
    fit = fit_pixel_scaling(rows)
    assert fit.slope_ms_per_pixel == pytest.approx(0.001)
    assert fit.intercept_ms == pytest.approx(2.0, abs=1e-6)
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.points == 4


def test_fit_on_nano_rows(budget_table):
    fit = fit_pixel_scaling(r for r in budget_table.rows if r.variant_name == "yolov8n")
    assert fit.slope_ms_per_pixel > 0
    assert fit.r_squared > 0.98


def test_fit_needs_three_sizes():
    rows = [
        SweepRow(variant_name=v, input_size=n, mean_total_ms=1.0 * n, std_ms=0.0)
        for v in ("a", "b")
        for n in (160, 224)
    ]
    with pytest.raises(InsufficientDataError) as e:
        fit_pixel_scaling(rows)
    assert e.value.points == 2


def test_fit_recovers_mock_pixel_cost(random_frame):
    spec = MockSpec(fixed_delay_ms=5.0, per_pixel_ms=0.0005)
    protocol = TimingProtocol(warmup_iterations=1, repetitions=5)
    reports = [
        time_pipeline(_pipeline(spec, n), random_frame(320, 320), protocol)
        for n in (96, 128, 160, 224, 320)
    ]
    fit = fit_pixel_scaling(reports)
    assert fit.r_squared >= 0.999
    assert fit.slope_ms_per_pixel == pytest.approx(0.0005, rel=0.05)


def test_tiled_batch_against_square_input():
    clock = VirtualClock()
    spec = MockSpec(per_pixel_ms=0.001, clock=clock)
    result = compare_tiled(lambda n: load_mock(spec, n)[1], (320, 160), 160, TimingProtocol(1, 3, clock))
    assert result.tiled.config.batch == 2
    assert result.tiled.config.tiling == "320x160/160"
    assert result.single.config.input_size == 320
    assert result.ratio == pytest.approx(0.5)


def test_tiled_single_tile_matches_plain_run():
    clock = VirtualClock()
    spec = MockSpec(per_pixel_ms=0.001, clock=clock)
    result = compare_tiled(lambda n: load_mock(spec, n)[1], (160, 160), 160, TimingProtocol(1, 3, clock))
    assert result.ratio == pytest.approx(1.0)


def test_sweep_table_tsv(budget_table):
    text = budget_table.to_tsv()
    assert text.splitlines()[0] == "variant\tsize\tmean_total_ms\tstd_ms\tmap50\tmap50_95\tparameters"
    assert SweepTable.from_tsv(text) == budget_table
    bare = SweepTable(rows=[SweepRow(variant_name="m", input_size=64, mean_total_ms=1.5, std_ms=0.25)])
    assert SweepTable.from_tsv(bare.to_tsv()) == bare


@pytest.mark.parametrize(
    "text",
    [
        "",
        "variant\tsize\n",
        "variant\tsize\tmean_total_ms\tstd_ms\tmap50\tmap50_95\tparameters\nm\t64\t1.0\n",
        "variant\tsize\tmean_total_ms\tstd_ms\tmap50\tmap50_95\tparameters\nm\tbig\t1.0\t0\t\t\t\n",
    ],
)
def test_sweep_table_rejects_bad_tsv(text):
    with pytest.raises(DataError):
        SweepTable.from_tsv(text)


def test_sweep_table_unique_cells():
    row = SweepRow(variant_name="m", input_size=64, mean_total_ms=1.0, std_ms=0.0)
    with pytest.raises(ValidationError):
        SweepTable(rows=[row, row])


def test_fit_on_reference_backend(tiny_model, random_frame):
    path = tiny_model(n=None)
    protocol = TimingProtocol(warmup_iterations=2, repetitions=5)
    reports = [
        time_pipeline(DetectionPipeline(load_model(path, input_size=n)[1]), random_frame(320, 320), protocol)
        for n in (96, 128, 160, 224, 320)
    ]
    fit = fit_pixel_scaling(reports)
    # machine dependent, so only reported
    logging.getLogger(__name__).info("reference backend fit: R2 %.3f", fit.r_squared)
    assert fit.points == 5
    assert -1e-9 <= fit.r_squared <= 1.0 + 1e-9
