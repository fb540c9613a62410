"""Command-line surface.

Every command resolves a ``RunConfig`` (flags > ``--config`` file > defaults)
and embeds it in the report it writes, so a report can be fed back with
``--config`` to reproduce the run.
"""

import asyncio
import logging
import re
from pathlib import Path

import click
import numpy as np
from click.core import ParameterSource
from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from yolo_ar import __version__
from yolo_ar.clock import Clock
from yolo_ar.codec import (
    COCO80_TO_91,
    TOOL_NAME,
    Report,
    image_id_of,
    read_report,
    record_of_detection,
    write_records,
    write_report,
)
from yolo_ar.config import DEFAULT_SIZE, RunConfig, resolve
from yolo_ar.engine import BackendKind, InferenceSession, MockSpec, load_mock, load_model
from yolo_ar.errors import ConfigurationError, DataError, YoloArError
from yolo_ar.evalmap import (
    EvalConfig,
    evaluate,
    load_annotations,
    load_detections,
    recall_curve,
)
from yolo_ar.frame import ImageFrame, StreamSpec, read_image, synthetic_stream
from yolo_ar.geometry import parse_policy
from yolo_ar.pipeline import Anchoring, DetectionPipeline
from yolo_ar.preprocess import Layout
from yolo_ar.profiler import ModelSource, SweepTable, compare_tiled, sweep, time_pipeline
from yolo_ar.selector import Budget, Metric, justify
from yolo_ar.sidecar import read_sidecar
from yolo_ar.tiler import plan_tiles
from yolo_ar_utils.model_cache import URL_ENV, ModelCache

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".npy"}
BACKENDS = {
    "reference": BackendKind.REFERENCE_CPU,
    "accelerated": BackendKind.ACCELERATED,
}


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except YoloArError as e:
            raise click.ClickException(e.message) from e


def _options(*decorators):
    def apply(f):
        for d in reversed(decorators):
            f = d(f)
        return f

    return apply


model_options = _options(
    click.option(
        "--model",
        multiple=True,
        help="ONNX file, may contain {size}. With --backend mock: a variant name.",
    ),
    click.option("--variant-name", help="Name reported for the model."),
    click.option("--backend", type=click.Choice(["reference", "accelerated", "mock"])),
    click.option("--size", type=int, help="Network input side n (default: the model's own, 160 for the mock)."),
    click.option("--layout", type=click.Choice(["auto", "nchw", "nhwc"])),
    click.option("--categories", type=int, help="Category count C."),
    click.option("--max-opset", type=int, help="Warn when the model opset exceeds this."),
)

mock_options = _options(
    click.option("--mock-delay-ms", type=float, help="Mock delay per inference."),
    click.option("--mock-pixel-ms", type=float, help="Mock delay per processed pixel."),
    click.option("--mock-stage-ms", multiple=True, metavar="STAGE=MS"),
    click.option(
        "--mock-output",
        type=click.Path(exists=True, dir_okay=False),
        help=".npy raw output returned by the mock.",
    ),
)

decode_options = _options(
    click.option("--conf", type=float, help="Confidence threshold (default 0.25)."),
    click.option("--iou", type=float, help="NMS IoU threshold (default 0.45)."),
    click.option("--max-detections", type=int),
    click.option("--class-agnostic", is_flag=True, help="Suppress across categories."),
    click.option(
        "--coco-ids",
        "coco_category_ids",
        is_flag=True,
        help="Map 80 contiguous classes to COCO category ids.",
    ),
)

tile_options = _options(
    click.option("--tile", type=int, help="Square tile side; enables tiled batching."),
    click.option("--overlap", type=int),
    click.option("--region", metavar="WxH", help="Centred region to tile."),
)

timing_options = _options(
    click.option("--warmup", type=int, help="Untimed runs (default 10)."),
    click.option("--reps", type=int, help="Timed runs (default 100)."),
    click.option("--raw", is_flag=True, help="Keep per-iteration samples."),
    click.option("--clock", type=click.Choice(["auto", "wall", "virtual"])),
    click.option("--environment", help="Free-text note stored in the report."),
)

input_options = _options(
    click.option("--image", multiple=True, type=click.Path(exists=True, dir_okay=False)),
    click.option("--images", type=click.Path(exists=True, file_okay=False)),
    click.option("--frame-size", metavar="WxH", help="Synthetic frame size."),
    click.option("--seed", type=int),
)

output_option = click.option("--output", type=click.Path(dir_okay=False))
table_option = click.option("--table", type=click.Path(dir_okay=False))


def _config(ctx: click.Context) -> RunConfig:
    flags = {
        name: value
        for name, value in ctx.params.items()
        if ctx.get_parameter_source(name) is ParameterSource.COMMANDLINE
    }
    cfg = resolve(ctx.obj, flags)
    logger.debug("%s config: %s", ctx.info_name, cfg.model_dump_json(exclude_defaults=True))
    return cfg


def _require(cfg: RunConfig, *names: str, exist: bool = False) -> None:
    for name in names:
        value = getattr(cfg, name)
        if value is None:
            raise ConfigurationError(f"--{name.replace('_', '-')} is required")
        if exist and not Path(value).exists():
            raise ConfigurationError(f"{value} does not exist")


def _write(cfg: RunConfig, command: str, result) -> None:
    if cfg.output is None:
        return
    if isinstance(result, BaseModel):
        result = result.model_dump(mode="json")
    write_report(
        cfg.output,
        Report(command=command, config=cfg.model_dump(mode="json"), result=result),
    )


def _explicit_size(cfg: RunConfig) -> int | None:
    if cfg.tile is not None:
        return cfg.tile
    return cfg.size


def _variant_of(path: str) -> str:
    stem = Path(path).stem
    return re.sub(r"[-_.]?\{size\}", "", stem) or stem


def _mock_spec(cfg: RunConfig, clock: Clock) -> MockSpec:
    canned = None
    if cfg.mock_output:
        canned = np.load(cfg.mock_output).astype(np.float32)
        if canned.ndim == 2:
            canned = canned[np.newaxis]
    return MockSpec(
        fixed_delay_ms=cfg.mock_delay_ms,
        per_pixel_ms=cfg.mock_pixel_ms,
        stage_delays_ms=dict(cfg.mock_stage_ms),
        canned_output=canned,
        category_count=cfg.categories or 80,
        clock=clock,
    )


def _sources(cfg: RunConfig, clock: Clock) -> list[ModelSource]:
    layout = cfg.resolved_layout()
    if cfg.backend == "mock":
        spec = _mock_spec(cfg, clock)
        names = cfg.model or [cfg.variant_name or "mock"]

        def open_mock(n: int | None, name: str) -> InferenceSession:
            return load_mock(spec, n or DEFAULT_SIZE, layout or Layout.CHANNELS_FIRST, name)[1]

        return [ModelSource(name, lambda n, name=name: open_mock(n, name)) for name in names]

    if not cfg.model:
        raise ConfigurationError("--model is required")
    kind = BACKENDS[cfg.backend]
    sources = []
    for path in cfg.model:
        name = cfg.variant_name if cfg.variant_name and len(cfg.model) == 1 else _variant_of(path)

        def open_model(n: int | None, path: str = path, name: str = name) -> InferenceSession:
            if "{size}" in path:
                if n is None:
                    raise ConfigurationError(f"{path} needs --size")
                path = path.format(size=n)
            return load_model(
                path, kind, name, n, layout, cfg.categories, cfg.max_opset
            )[1]

        sources.append(ModelSource(name, open_model))
    return sources


def _image_paths(cfg: RunConfig) -> list[Path]:
    paths = [Path(p) for p in cfg.image]
    if cfg.images:
        directory = Path(cfg.images)
        if not directory.is_dir():
            raise ConfigurationError(f"{directory} is not a directory")
        paths += sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not paths:
        raise ConfigurationError("no input images, use --image or --images")
    for p in paths:
        if not p.exists():
            raise ConfigurationError(f"{p} does not exist")
    return paths


def _bench_frame(cfg: RunConfig) -> ImageFrame:
    if cfg.image:
        return read_image(cfg.image[0])
    w, h = cfg.frame_size
    frame, _ = next(synthetic_stream(StreamSpec(w, h, 30.0, 1, cfg.seed or 0)))
    return frame


def _category_ids(cfg: RunConfig, session: InferenceSession) -> list[int] | None:
    if not cfg.coco_category_ids:
        return None
    if session.descriptor.category_count != len(COCO80_TO_91):
        raise ConfigurationError(
            f"--coco-ids needs an 80-class model, got {session.descriptor.category_count}"
        )
    return COCO80_TO_91


def _tile_plan(cfg: RunConfig, frame: ImageFrame):
    if cfg.tile is None:
        return None
    w, h = cfg.region or (frame.width, frame.height)
    return plan_tiles(w, h, cfg.tile, cfg.overlap)


@click.group(cls=_Cli)
@click.version_option(__version__, prog_name=TOOL_NAME)
@click.option(
    "--config",
    "config_file",
    type=click.Path(exists=True, dir_okay=False),
    help="JSON config (or a previous report) supplying defaults.",
)
@click.option("--verbose", "-v", is_flag=True)
@click.pass_context
def cli(ctx, config_file, verbose):
    """On-device style YOLO detection pipeline and its benchmarks."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = config_file


@cli.command()
@model_options
@mock_options
@decode_options
@tile_options
@input_options
@click.option("--sidecar", type=click.Path(exists=True, dir_okay=False))
@click.option("--policy", help="ray | depth:<m> | plane:<file>")
@output_option
@click.pass_context
def detect(ctx, **_):
    """Detect objects in images and write COCO-results records."""
    cfg = _config(ctx)
    _require(cfg, "output")
    paths = _image_paths(cfg)
    anchoring, timestamp = None, 0
    if cfg.sidecar:
        sidecar = read_sidecar(cfg.sidecar)
        anchoring = Anchoring(sidecar.intrinsics, sidecar.poses, parse_policy(cfg.policy))
        timestamp = sidecar.frame_timestamp

    session = _sources(cfg, cfg.make_clock())[0].open(_explicit_size(cfg))
    category_ids = _category_ids(cfg, session)
    records = []
    for i, path in enumerate(paths):
        frame = read_image(path, i, timestamp)
        pipeline = DetectionPipeline(
            session, cfg.decode_config(), _tile_plan(cfg, frame), anchoring
        )
        result = pipeline.run(frame)
        anchors = result.anchors or [None] * len(result.detections)
        image_id = image_id_of(path)
        records += [
            record_of_detection(d, image_id, a, category_ids)
            for d, a in zip(result.detections, anchors)
        ]

    write_records(cfg.output, records)
    manifest = Path(cfg.output).with_suffix(".run.json")
    write_report(
        manifest,
        Report(
            command="detect",
            config=cfg.model_dump(mode="json"),
            result={"images": len(paths), "detections": len(records), "output": cfg.output},
        ),
    )
    click.echo(f"{len(records)} detections in {len(paths)} images -> {cfg.output}")


@cli.command()
@model_options
@mock_options
@decode_options
@tile_options
@timing_options
@input_options
@output_option
@table_option
@click.pass_context
def bench(ctx, **_):
    """Time the pipeline stage by stage after a warm-up."""
    cfg = _config(ctx)
    clock = cfg.make_clock()
    session = _sources(cfg, clock)[0].open(_explicit_size(cfg))
    frame = _bench_frame(cfg)
    pipeline = DetectionPipeline(session, cfg.decode_config(), _tile_plan(cfg, frame))
    report = time_pipeline(pipeline, frame, cfg.timing_protocol(clock), cfg.environment)
    click.echo(report.to_tsv(), nl=False)
    if cfg.table:
        Path(cfg.table).write_text(report.to_tsv())
    _write(cfg, "bench", report)


def _scorer(cfg: RunConfig):
    gts = load_annotations(cfg.annotations, cfg.group_attribute)
    frames = [(image_id_of(p), read_image(p, i)) for i, p in enumerate(_image_paths(cfg))]
    eval_config = EvalConfig(max_detections_per_image=cfg.max_detections)

    def score(pipeline: DetectionPipeline):
        category_ids = _category_ids(cfg, pipeline.session)
        records = [
            record_of_detection(d, image_id, None, category_ids)
            for image_id, frame in frames
            for d in pipeline.run(frame).detections
        ]
        return evaluate(records, gts, eval_config)

    return score


@cli.command(name="sweep")
@model_options
@mock_options
@decode_options
@timing_options
@input_options
@click.option("--sizes", help="Comma-separated input sides (default 160,224,320).")
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False))
@click.option("--group-attribute")
@output_option
@table_option
@click.pass_context
def sweep_command(ctx, **_):
    """Time every model at every input size; score mAP when annotations are given."""
    cfg = _config(ctx)
    clock = cfg.make_clock()
    scorer = _scorer(cfg) if cfg.annotations else None
    table = sweep(
        _sources(cfg, clock),
        cfg.sizes,
        cfg.timing_protocol(clock),
        _bench_frame(cfg),
        cfg.decode_config(),
        scorer,
        cfg.environment,
    )
    click.echo(table.to_tsv(), nl=False)
    for f in table.failures:
        click.echo(f"failed {f.variant_name}@{f.input_size}: {f.reason}", err=True)
    if cfg.table:
        Path(cfg.table).write_text(table.to_tsv())
    _write(cfg, "sweep", table)


@cli.command(name="tile-bench")
@model_options
@mock_options
@decode_options
@tile_options
@timing_options
@input_options
@output_option
@click.pass_context
def tile_bench(ctx, **_):
    """Compare a batch of tiles against one input of the region's longer side."""
    cfg = _config(ctx)
    clock = cfg.make_clock()
    tile = cfg.tile or cfg.size or DEFAULT_SIZE
    region = cfg.region or (2 * tile, tile)
    source = _sources(cfg, clock)[0]
    comparison = compare_tiled(
        source.open,
        region,
        tile,
        cfg.timing_protocol(clock),
        cfg.overlap,
        read_image(cfg.image[0]) if cfg.image else None,
        cfg.decode_config(),
        cfg.environment,
    )
    click.echo(comparison.tiled.to_tsv(), nl=False)
    click.echo(comparison.single.to_tsv(), nl=False)
    click.echo(f"ratio\t{comparison.ratio:.4f}")
    _write(cfg, "tile-bench", comparison)


def _read_table(path: str) -> SweepTable:
    p = Path(path)
    if p.suffix == ".json":
        try:
            return SweepTable.model_validate(read_report(p).result)
        except ValidationError as e:
            raise DataError(f"{p} does not hold a sweep table: {e.errors()[0]['msg']}") from e
    return SweepTable.from_tsv(p.read_text())


@cli.command()
@click.option("--table", type=click.Path(exists=True, dir_okay=False), help=".tsv or sweep report")
@click.option("--budget-ms", type=float)
@click.option("--metric", type=click.Choice([m.value for m in Metric]))
@output_option
@click.pass_context
def select(ctx, **_):
    """Pick the most accurate configuration within a latency budget."""
    cfg = _config(ctx)
    _require(cfg, "table", exist=True)
    _require(cfg, "budget_ms")
    metric = Metric(cfg.metric)
    selection = justify(_read_table(cfg.table), Budget(cfg.budget_ms, metric))
    r = selection.chosen
    click.echo(
        f"{r.variant_name}\t{r.input_size}\t{r.mean_total_ms:.3f} ms\t"
        f"{metric.value}={metric.of(r):.4f}\t"
        f"({selection.feasible_count} feasible, {len(selection.frontier)} on frontier)"
    )
    _write(cfg, "select", selection)


@cli.command(name="eval")
@click.option("--detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False))
@click.option("--max-detections", type=int)
@output_option
@click.pass_context
def eval_command(ctx, **_):
    """COCO-style mAP@50 and mAP@50-95."""
    cfg = _config(ctx)
    _require(cfg, "detections", "annotations", exist=True)
    result = evaluate(
        load_detections(cfg.detections),
        load_annotations(cfg.annotations, cfg.group_attribute),
        EvalConfig(max_detections_per_image=cfg.max_detections),
    )
    click.echo(f"mAP50\t{result.map50:.4f}\nmAP50_95\t{result.map50_95:.4f}")
    _write(cfg, "eval", result)


@cli.command()
@click.option("--detections", type=click.Path(exists=True, dir_okay=False))
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False))
@click.option("--group-attribute", help="Annotation attribute holding the group tag.")
@click.option("--match-iou", type=float, help="IoU for a proper detection (default 0.5).")
@click.option("--score-thresholds", help="Comma-separated confidence thresholds.")
@output_option
@click.pass_context
def recall(ctx, **_):
    """Recall per tagged group at each confidence threshold."""
    cfg = _config(ctx)
    _require(cfg, "detections", "annotations", exist=True)
    curves = recall_curve(
        load_detections(cfg.detections),
        load_annotations(cfg.annotations, cfg.group_attribute),
        cfg.match_iou,
        cfg.score_thresholds,
    )
    click.echo("group\t" + "\t".join(f"{t:g}" for t in cfg.score_thresholds))
    for tag, values in curves.items():
        click.echo(tag + "\t" + "\t".join(f"{v:.4f}" for v in values))
    _write(
        cfg,
        "recall",
        {
            "iou_threshold": cfg.match_iou,
            "score_thresholds": cfg.score_thresholds,
            "recall": curves,
        },
    )


@cli.command()
@click.option("--url", envvar=URL_ENV, help=f"Model URL (or ${URL_ENV}).")
@click.option("--cache-dir", type=click.Path(file_okay=False))
def fetch(url, cache_dir):
    """Download a pretrained model into the local cache."""
    if not url:
        raise ConfigurationError(f"no model URL, pass --url or set {URL_ENV}")
    cache = ModelCache(cache_dir)
    if not asyncio.run(cache.retrieve_model_from(url)):
        raise click.ClickException(f"could not fetch {url}")
    click.echo(str(cache.models[-1].path))


def main():
    load_dotenv()
    cli()


if __name__ == "__main__":
    main()
